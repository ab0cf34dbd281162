// Command-line front end: train / eval-miscls / eval-ood / report-merge.
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.

#include <cstdio>
#include <exception>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sdc/commands.hpp"

namespace {

/// Stages CLI values as strings and replays only the options the user passed
/// on top of (defaults -> config file), reusing the config-file key parser so
/// flag and file values are validated identically.
struct ConfigCli {
    std::string config_path;
    std::vector<std::unique_ptr<std::string>> slots;
    std::vector<std::unique_ptr<bool>> flag_slots;
    std::vector<std::pair<CLI::Option*, std::function<void(sdc::ExperimentConfig&)>>> bound;

    void add_value(CLI::App* cmd, const std::string& flag, const std::string& key,
                   const std::string& help) {
        slots.push_back(std::make_unique<std::string>());
        std::string* slot = slots.back().get();
        CLI::Option* opt = cmd->add_option(flag, *slot, help);
        bound.emplace_back(opt, [slot, key](sdc::ExperimentConfig& cfg) {
            sdc::config_apply(cfg, key, *slot);
        });
    }

    void add_toggle(CLI::App* cmd, const std::string& flag, const std::string& key,
                    const std::string& help) {
        flag_slots.push_back(std::make_unique<bool>(true));
        bool* slot = flag_slots.back().get();
        CLI::Option* opt = cmd->add_flag(flag, *slot, help);
        bound.emplace_back(opt, [slot, key](sdc::ExperimentConfig& cfg) {
            sdc::config_apply(cfg, key, *slot ? "true" : "false");
        });
    }

    void attach(CLI::App* cmd, bool with_training) {
        cmd->add_option("--config", config_path, "key=value config file (flags override it)");
        add_value(cmd, "--train-images", "train_images", "training images (IDX)");
        add_value(cmd, "--train-labels", "train_labels", "training labels (IDX)");
        add_value(cmd, "--test-images", "test_images", "test images (IDX)");
        add_value(cmd, "--test-labels", "test_labels", "test labels (IDX)");
        add_value(cmd, "--ood-images", "ood_images", "OOD images (IDX, unlabeled)");
        add_value(cmd, "--checkpoint", "checkpoint_in", "checkpoint to evaluate");
        add_value(cmd, "--checkpoint-out", "checkpoint_out", "checkpoint output path");
        add_value(cmd, "--log-out", "log_out", "training log CSV path");
        add_value(cmd, "--scores-out", "scores_out", "per-sample score CSV path");
        add_value(cmd, "--report-out", "report_out", "detection report CSV path");
        add_value(cmd, "--rho", "rho", "sub-network count; drop rate is 1/rho (default 10)");
        add_value(cmd, "--epochs", "epochs", "training epochs (default 40)");
        add_value(cmd, "--batch-size", "batch_size", "batch size (default 256)");
        add_value(cmd, "--learning-rate", "learning_rate", "Adam learning rate (default 7.5e-4)");
        add_value(cmd, "--seed", "seed", "base seed; repeats use seed+0..R-1");
        add_value(cmd, "--repeats", "repeats", "train+eval cycles R (default 5)");
        add_value(cmd, "--mode", "mode", "sdc | baseline | mc");
        add_value(cmd, "--mc-samples", "mc_samples", "Monte-Carlo passes in mc mode");
        add_value(cmd, "--train-limit", "train_limit", "cap on training samples (0 = all)");
        add_value(cmd, "--test-limit", "test_limit", "cap on test/OOD samples (0 = all)");
        add_value(cmd, "--num-classes", "num_classes", "class count (default 10)");
        add_toggle(cmd, "--train-scale,!--no-train-scale", "train_scale",
                   "scale kept weights by 1/p during training");
        add_toggle(cmd, "--test-scale,!--no-test-scale", "test_scale",
                   "scale masked weights by rho/(rho-1) at test time");
        add_toggle(cmd, "--eq8-postprocess,!--no-eq8-postprocess", "eq8_postprocess",
                   "sparsity post-processing of alpha on the D.Ent path");
        add_value(cmd, "--eq8-denominator", "eq8_denominator", "classcount | positivecount");
        add_value(cmd, "--entropy-mode", "entropy_mode",
                  "mean (entropy of mean) | samples (mean of entropies)");
        (void)with_training;
    }

    sdc::ExperimentConfig resolve() const {
        sdc::ExperimentConfig cfg;
        if (!config_path.empty()) sdc::config_load_file(cfg, config_path);
        for (const auto& [opt, apply] : bound)
            if (opt->count() > 0) apply(cfg);
        return cfg;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Structured DropConnect uncertainty experiments"};
    app.require_subcommand(1);

    ConfigCli train_cli, miscls_cli, ood_cli;
    CLI::App* train = app.add_subcommand("train", "train LeNet5 and write a checkpoint");
    train_cli.attach(train, true);
    CLI::App* miscls =
        app.add_subcommand("eval-miscls", "misclassification detection (Max.P / Ent. / D.Ent.)");
    miscls_cli.attach(miscls, true);
    CLI::App* ood = app.add_subcommand("eval-ood", "out-of-distribution detection");
    ood_cli.attach(ood, true);

    CLI::App* merge = app.add_subcommand("report-merge", "merge detection report CSVs");
    std::vector<std::string> merge_inputs;
    std::string merge_out = "merged_report.csv";
    merge->add_option("inputs", merge_inputs, "report CSV files")->required();
    merge->add_option("--out", merge_out, "merged report path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (train->parsed()) {
            sdc::cmd_train(train_cli.resolve());
        } else if (miscls->parsed()) {
            sdc::cmd_eval_miscls(miscls_cli.resolve());
        } else if (ood->parsed()) {
            sdc::cmd_eval_ood(ood_cli.resolve());
        } else if (merge->parsed()) {
            sdc::cmd_report_merge(merge_inputs, merge_out);
        }
    } catch (const sdc::config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const sdc::data_error& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }
    return 0;
}
