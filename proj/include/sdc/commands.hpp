#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sdc/experiment.hpp"

namespace sdc {

namespace detail {

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot open output file: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw data_error("write failed: " + path);
}

/// scores.csv -> scores.run3.csv (run index inserted before the extension).
inline std::string run_scoped_path(const std::string& path, int run) {
    const auto dot = path.rfind('.');
    const auto slash = path.rfind('/');
    if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
        return path + ".run" + std::to_string(run);
    return path.substr(0, dot) + ".run" + std::to_string(run) + path.substr(dot);
}

inline std::string scores_csv(const std::vector<ScoredSample>& samples) {
    std::string out = scores_csv_header() + "\n";
    for (const auto& s : samples) out += to_csv_row(s) + "\n";
    return out;
}

inline std::string report_csv(const DetectionReport& report) {
    std::string out = report_csv_header() + "\n";
    for (const auto& row : to_csv_rows(report)) out += row + "\n";
    return out;
}

inline void print_report(const DetectionReport& r) {
    auto line = [&](const char* name, const MetricSummary& m) {
        if (m.defined)
            std::printf("%-6s AUROC %6.2f%% +- %.2f (runs=%d)\n", name, 100.0 * m.mean,
                        100.0 * m.stddev, r.runs);
        else
            std::printf("%-6s AUROC undefined\n", name);
    };
    std::printf("task=%s samples=%lld positives=%lld negatives=%lld seed=%llu\n", r.task.c_str(),
                static_cast<long long>(r.samples), static_cast<long long>(r.positives),
                static_cast<long long>(r.negatives), static_cast<unsigned long long>(r.seed));
    line("max_p", r.max_p);
    line("ent", r.ent);
    line("d_ent", r.d_ent);
}

inline ImageDataset load_train_set(const ExperimentConfig& cfg) {
    if (cfg.train_images.empty() || cfg.train_labels.empty())
        throw config_error("train_images and train_labels are required");
    return dataset_head(
        load_dataset(cfg.train_images, cfg.train_labels, SplitTag::Train, cfg.num_classes),
        cfg.train_limit);
}

inline ImageDataset load_test_set(const ExperimentConfig& cfg) {
    if (cfg.test_images.empty() || cfg.test_labels.empty())
        throw config_error("test_images and test_labels are required");
    return dataset_head(
        load_dataset(cfg.test_images, cfg.test_labels, SplitTag::Test, cfg.num_classes),
        cfg.test_limit);
}

inline ImageDataset load_ood_set(const ExperimentConfig& cfg) {
    if (cfg.ood_images.empty()) throw config_error("ood_images is required");
    ImageDataset ood = load_dataset(cfg.ood_images, std::nullopt, SplitTag::Ood, cfg.num_classes);
    return dataset_head(ood, cfg.test_limit);
}

inline TrainedModel load_model_from_checkpoint(const ExperimentConfig& cfg) {
    TrainedModel model;
    model.specs = lenet5_specs(cfg.num_classes);
    auto [state, masks] = load_checkpoint(cfg.checkpoint_in, model.specs);
    model.state = std::move(state);
    model.state.training_mode = false;
    if (masks) {
        model.masks = std::move(*masks);
        if (cfg.mode == RunMode::Sdc && model.masks.rho != cfg.rho)
            throw config_error("checkpoint mask set has rho " + std::to_string(model.masks.rho) +
                               " but the config asks for rho " + std::to_string(cfg.rho));
    } else if (cfg.mode == RunMode::Sdc) {
        throw data_error("checkpoint " + cfg.checkpoint_in +
                         " carries no mask set; cannot evaluate in sdc mode");
    }
    return model;
}

}  // namespace detail

/// Train one model with the config's base seed; write the checkpoint (with a
/// freshly built structured MaskSet) and the training log.
inline void cmd_train(const ExperimentConfig& cfg) {
    config_validate(cfg);
    const ImageDataset train = detail::load_train_set(cfg);
    const TrainedModel model = train_model(cfg, cfg.seed, train);
    save_checkpoint(cfg.checkpoint_out, model.specs, model.state, &model.masks);
    std::string log = config_echo(cfg);
    for (const auto& line : model.log_lines) log += line + "\n";
    detail::write_text_file(cfg.log_out, log);
    std::printf("trained %d epochs; checkpoint=%s log=%s\n", cfg.epochs,
                cfg.checkpoint_out.c_str(), cfg.log_out.c_str());
}

/// R train+eval cycles with seeds seed+0..R-1; per-run artifacts use
/// run-scoped score paths when R > 1.
struct EvalOutcome {
    DetectionReport report;  // aggregated over runs
    std::vector<DetectionReport> run_reports;
    std::vector<double> run_accuracy;  // misclassification runs only
};

namespace detail {

template <typename RunFn>
inline EvalOutcome run_protocol(const ExperimentConfig& cfg, RunFn&& run_one) {
    EvalOutcome out;
    if (!cfg.checkpoint_in.empty()) {
        const TrainedModel model = load_model_from_checkpoint(cfg);
        out.run_reports.push_back(run_one(model, cfg.seed, 0));
    } else {
        const ImageDataset train = load_train_set(cfg);
        for (int r = 0; r < cfg.repeats; ++r) {
            const std::uint64_t run_seed = cfg.seed + static_cast<std::uint64_t>(r);
            const TrainedModel model = train_model(cfg, run_seed, train);
            out.run_reports.push_back(run_one(model, run_seed, r));
        }
    }
    out.report = aggregate_reports(out.run_reports);
    return out;
}

}  // namespace detail

inline EvalOutcome cmd_eval_miscls(const ExperimentConfig& cfg) {
    config_validate(cfg);
    const ImageDataset test = detail::load_test_set(cfg);
    const bool single = !cfg.checkpoint_in.empty() || cfg.repeats == 1;
    EvalOutcome out = detail::run_protocol(
        cfg, [&](const TrainedModel& model, std::uint64_t run_seed, int run) {
            MisclassificationResult res = misclassification_detection(cfg, model, test, run_seed);
            const std::string path =
                single ? cfg.scores_out : detail::run_scoped_path(cfg.scores_out, run);
            detail::write_text_file(path, detail::scores_csv(res.samples));
            return res.report;
        });
    // accuracy per run falls out of the positive counts
    for (const auto& r : out.run_reports)
        out.run_accuracy.push_back(1.0 - static_cast<double>(r.positives) /
                                             static_cast<double>(r.samples));
    detail::write_text_file(cfg.report_out, detail::report_csv(out.report));
    detail::print_report(out.report);
    return out;
}

inline EvalOutcome cmd_eval_ood(const ExperimentConfig& cfg) {
    config_validate(cfg);
    const ImageDataset test = detail::load_test_set(cfg);
    const ImageDataset ood = detail::load_ood_set(cfg);
    const bool single = !cfg.checkpoint_in.empty() || cfg.repeats == 1;
    EvalOutcome out = detail::run_protocol(
        cfg, [&](const TrainedModel& model, std::uint64_t run_seed, int run) {
            OodResult res = ood_detection(cfg, model, test, ood, run_seed);
            const std::string path =
                single ? cfg.scores_out : detail::run_scoped_path(cfg.scores_out, run);
            detail::write_text_file(path, detail::scores_csv(res.samples));
            return res.report;
        });
    detail::write_text_file(cfg.report_out, detail::report_csv(out.report));
    detail::print_report(out.report);
    return out;
}

/// Merge report CSVs into one aggregated report per (task, metric).
/// Exact when the inputs are single-run reports; already-aggregated inputs
/// merge through pooled mean and variance.
inline void cmd_report_merge(const std::vector<std::string>& inputs, const std::string& output) {
    if (inputs.empty()) throw config_error("report-merge: no input reports");
    struct Entry {
        long long runs;
        double mean;
        double stddev;
    };
    struct Group {
        std::vector<Entry> entries;
        long long runs = 0;
        bool undefined = false;
        std::uint64_t seed = 0;
        bool seen = false;
    };
    std::map<std::pair<std::string, std::string>, Group> groups;
    std::vector<std::pair<std::string, std::string>> order;
    for (const auto& path : inputs) {
        std::ifstream in(path);
        if (!in) throw data_error("cannot open report: " + path);
        std::string line;
        if (!std::getline(in, line) || line != report_csv_header())
            throw data_error("not a report CSV (bad header): " + path);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::stringstream ss(line);
            std::string task, metric, mean_s, std_s, runs_s, seed_s;
            if (!std::getline(ss, task, ',') || !std::getline(ss, metric, ',') ||
                !std::getline(ss, mean_s, ',') || !std::getline(ss, std_s, ',') ||
                !std::getline(ss, runs_s, ',') || !std::getline(ss, seed_s))
                throw data_error("malformed report row in " + path + ": " + line);
            const auto key = std::make_pair(task, metric);
            auto it = groups.find(key);
            if (it == groups.end()) {
                it = groups.emplace(key, Group{}).first;
                order.push_back(key);
            }
            Group& g = it->second;
            const long long n = detail::int_from_string(runs_s, "runs");
            if (n < 1) throw data_error("report row with runs < 1 in " + path);
            if (mean_s == "nan" || std_s == "nan") {
                g.undefined = true;
            } else {
                g.entries.push_back({n, detail::double_from_string(mean_s, "auroc_mean"),
                                     detail::double_from_string(std_s, "auroc_std")});
            }
            g.runs += n;
            if (!g.seen) {
                g.seed = static_cast<std::uint64_t>(detail::int_from_string(seed_s, "seed"));
                g.seen = true;
            }
        }
    }
    std::string out = report_csv_header() + "\n";
    for (const auto& key : order) {
        const Group& g = groups.at(key);
        out += key.first + "," + key.second + ",";
        if (g.undefined) {
            out += "nan,nan";
        } else {
            bool all_single = true;
            for (const auto& e : g.entries)
                if (e.runs != 1) all_single = false;
            if (all_single) {
                // two-pass mean/std over the per-run values: matches the
                // in-process aggregation exactly
                std::vector<std::optional<double>> values;
                for (const auto& e : g.entries) values.emplace_back(e.mean);
                const MetricSummary s = detail::summarize(values);
                out += format_double(s.mean) + "," + format_double(s.stddev);
            } else {
                const double n = static_cast<double>(g.runs);
                double weighted = 0.0, ss = 0.0;
                for (const auto& e : g.entries) {
                    weighted += static_cast<double>(e.runs) * e.mean;
                    ss += static_cast<double>(e.runs - 1) * e.stddev * e.stddev +
                          static_cast<double>(e.runs) * e.mean * e.mean;
                }
                const double mean = weighted / n;
                const double var =
                    g.runs > 1 ? std::max(0.0, (ss - n * mean * mean) / (n - 1.0)) : 0.0;
                out += format_double(mean) + "," + format_double(std::sqrt(var));
            }
        }
        out += "," + std::to_string(g.runs) + "," + std::to_string(g.seed) + "\n";
    }
    detail::write_text_file(output, out);
    std::printf("merged %zu reports into %s\n", inputs.size(), output.c_str());
}

}  // namespace sdc
