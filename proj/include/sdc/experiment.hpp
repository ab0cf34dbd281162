#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sdc/data.hpp"
#include "sdc/dirichlet.hpp"
#include "sdc/errors.hpp"
#include "sdc/masks.hpp"
#include "sdc/metrics.hpp"
#include "sdc/nn.hpp"
#include "sdc/rng.hpp"
#include "sdc/tensor.hpp"

namespace sdc {

enum class RunMode { Sdc, Baseline, Mc };

/// Everything a reproducible experiment run needs. Defaults follow the MNIST
/// protocol: 40 epochs, batch 256, lr 7.5e-4, rho 10, 5 repeats.
struct ExperimentConfig {
    std::string train_images, train_labels;
    std::string test_images, test_labels;
    std::string ood_images;
    std::string checkpoint_in;
    std::string checkpoint_out = "checkpoint.sdc";
    std::string log_out = "train_log.csv";
    std::string scores_out = "scores.csv";
    std::string report_out = "report.csv";
    int rho = 10;
    int epochs = 40;
    int batch_size = 256;
    double learning_rate = 7.5e-4;
    std::uint64_t seed = 1;
    int repeats = 5;
    RunMode mode = RunMode::Sdc;
    int mc_samples = 10;
    bool train_scale = true;
    bool test_scale = true;
    bool eq8_postprocess = true;
    Eq8Denominator eq8_denominator = Eq8Denominator::ClassCount;
    EntropyMode entropy_mode = EntropyMode::MeanDistribution;
    int train_limit = 0;  // 0 = full set
    int test_limit = 0;
    int num_classes = 10;

    ScoreOptions score_options() const {
        return {eq8_postprocess, eq8_denominator, entropy_mode};
    }
};

namespace detail {

inline std::string mode_to_string(RunMode m) {
    switch (m) {
        case RunMode::Sdc: return "sdc";
        case RunMode::Baseline: return "baseline";
        case RunMode::Mc: return "mc";
    }
    return "sdc";
}

inline RunMode mode_from_string(const std::string& s) {
    if (s == "sdc") return RunMode::Sdc;
    if (s == "baseline") return RunMode::Baseline;
    if (s == "mc") return RunMode::Mc;
    throw config_error("unknown mode '" + s + "' (expected sdc|baseline|mc)");
}

inline bool bool_from_string(const std::string& s, const std::string& key) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw config_error("key '" + key + "': expected true|false, got '" + s + "'");
}

inline long long int_from_string(const std::string& s, const std::string& key) {
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(s, &used);
    } catch (const std::exception&) {
        throw config_error("key '" + key + "': expected an integer, got '" + s + "'");
    }
    if (used != s.size())
        throw config_error("key '" + key + "': expected an integer, got '" + s + "'");
    return v;
}

inline double double_from_string(const std::string& s, const std::string& key) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw config_error("key '" + key + "': expected a number, got '" + s + "'");
    }
    if (used != s.size())
        throw config_error("key '" + key + "': expected a number, got '" + s + "'");
    return v;
}

}  // namespace detail

/// Apply one key=value setting (config-file line or flag override).
inline void config_apply(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    using detail::bool_from_string;
    using detail::double_from_string;
    using detail::int_from_string;
    if (key == "train_images") cfg.train_images = value;
    else if (key == "train_labels") cfg.train_labels = value;
    else if (key == "test_images") cfg.test_images = value;
    else if (key == "test_labels") cfg.test_labels = value;
    else if (key == "ood_images") cfg.ood_images = value;
    else if (key == "checkpoint_in") cfg.checkpoint_in = value;
    else if (key == "checkpoint_out") cfg.checkpoint_out = value;
    else if (key == "log_out") cfg.log_out = value;
    else if (key == "scores_out") cfg.scores_out = value;
    else if (key == "report_out") cfg.report_out = value;
    else if (key == "rho") cfg.rho = static_cast<int>(int_from_string(value, key));
    else if (key == "epochs") cfg.epochs = static_cast<int>(int_from_string(value, key));
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(int_from_string(value, key));
    else if (key == "learning_rate") cfg.learning_rate = double_from_string(value, key);
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(int_from_string(value, key));
    else if (key == "repeats") cfg.repeats = static_cast<int>(int_from_string(value, key));
    else if (key == "mode") cfg.mode = detail::mode_from_string(value);
    else if (key == "mc_samples") cfg.mc_samples = static_cast<int>(int_from_string(value, key));
    else if (key == "train_scale") cfg.train_scale = bool_from_string(value, key);
    else if (key == "test_scale") cfg.test_scale = bool_from_string(value, key);
    else if (key == "eq8_postprocess") cfg.eq8_postprocess = bool_from_string(value, key);
    else if (key == "eq8_denominator") {
        if (value == "classcount") cfg.eq8_denominator = Eq8Denominator::ClassCount;
        else if (value == "positivecount") cfg.eq8_denominator = Eq8Denominator::PositiveCount;
        else throw config_error("key 'eq8_denominator': expected classcount|positivecount");
    } else if (key == "entropy_mode") {
        if (value == "mean") cfg.entropy_mode = EntropyMode::MeanDistribution;
        else if (value == "samples") cfg.entropy_mode = EntropyMode::MeanOfEntropies;
        else throw config_error("key 'entropy_mode': expected mean|samples");
    }
    else if (key == "train_limit") cfg.train_limit = static_cast<int>(int_from_string(value, key));
    else if (key == "test_limit") cfg.test_limit = static_cast<int>(int_from_string(value, key));
    else if (key == "num_classes") cfg.num_classes = static_cast<int>(int_from_string(value, key));
    else throw config_error("unknown config key '" + key + "'");
}

/// Flat key=value config file; '#' starts a comment, blank lines ignored.
inline void config_load_file(ExperimentConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error(path + ":" + std::to_string(lineno) + ": expected key=value");
        config_apply(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

/// The resolved configuration as sorted key=value pairs; echoed at the top of
/// every training log so a run can be reproduced from its artifacts.
inline std::vector<std::pair<std::string, std::string>> config_key_values(
    const ExperimentConfig& cfg) {
    std::vector<std::pair<std::string, std::string>> kv;
    kv.emplace_back("batch_size", std::to_string(cfg.batch_size));
    kv.emplace_back("checkpoint_in", cfg.checkpoint_in);
    kv.emplace_back("checkpoint_out", cfg.checkpoint_out);
    kv.emplace_back("entropy_mode",
                    cfg.entropy_mode == EntropyMode::MeanDistribution ? "mean" : "samples");
    kv.emplace_back("epochs", std::to_string(cfg.epochs));
    kv.emplace_back("eq8_denominator", cfg.eq8_denominator == Eq8Denominator::ClassCount
                                           ? "classcount"
                                           : "positivecount");
    kv.emplace_back("eq8_postprocess", cfg.eq8_postprocess ? "true" : "false");
    kv.emplace_back("learning_rate", format_double(cfg.learning_rate));
    kv.emplace_back("log_out", cfg.log_out);
    kv.emplace_back("mc_samples", std::to_string(cfg.mc_samples));
    kv.emplace_back("mode", detail::mode_to_string(cfg.mode));
    kv.emplace_back("num_classes", std::to_string(cfg.num_classes));
    kv.emplace_back("ood_images", cfg.ood_images);
    kv.emplace_back("repeats", std::to_string(cfg.repeats));
    kv.emplace_back("report_out", cfg.report_out);
    kv.emplace_back("rho", std::to_string(cfg.rho));
    kv.emplace_back("scores_out", cfg.scores_out);
    kv.emplace_back("seed", std::to_string(cfg.seed));
    kv.emplace_back("test_images", cfg.test_images);
    kv.emplace_back("test_labels", cfg.test_labels);
    kv.emplace_back("test_limit", std::to_string(cfg.test_limit));
    kv.emplace_back("test_scale", cfg.test_scale ? "true" : "false");
    kv.emplace_back("train_images", cfg.train_images);
    kv.emplace_back("train_labels", cfg.train_labels);
    kv.emplace_back("train_limit", std::to_string(cfg.train_limit));
    kv.emplace_back("train_scale", cfg.train_scale ? "true" : "false");
    return kv;
}

inline std::string config_echo(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& [k, v] : config_key_values(cfg)) out += "# " + k + "=" + v + "\n";
    return out;
}

inline void config_validate(const ExperimentConfig& cfg) {
    if (cfg.rho < 2) throw config_error("rho must be >= 2");
    if (cfg.epochs < 1) throw config_error("epochs must be >= 1");
    if (cfg.batch_size < 1) throw config_error("batch_size must be >= 1");
    if (!(cfg.learning_rate > 0.0)) throw config_error("learning_rate must be positive");
    if (cfg.repeats < 1) throw config_error("repeats must be >= 1");
    if (cfg.mc_samples < 2) throw config_error("mc_samples must be >= 2");
    if (cfg.num_classes < 2) throw config_error("num_classes must be >= 2");
    if (cfg.train_limit < 0 || cfg.test_limit < 0) throw config_error("limits must be >= 0");
}

// --------------------------------------------------------------------------
// Training
// --------------------------------------------------------------------------

struct TrainedModel {
    std::vector<LayerSpec> specs;
    ModelState state;
    MaskSet masks;
    std::vector<std::string> log_lines;  // "epoch,loss,accuracy"
};

/// Train LeNet5 with per-batch Bernoulli DropConnect on the fc layers
/// (keep probability 1 - 1/rho, inverted scaling), then freeze the model and
/// build the structured mask set for test-time splitting. All randomness is
/// drawn from named streams of `run_seed`; two calls with equal arguments
/// produce bit-identical models, logs, and masks.
inline TrainedModel train_model(const ExperimentConfig& cfg, std::uint64_t run_seed,
                                const ImageDataset& train, bool verbose = true) {
    if (!train.labeled()) throw data_error("training dataset has no labels");
    TrainedModel out;
    auto built = build_lenet5(cfg.num_classes, run_seed);
    out.specs = std::move(built.first);
    out.state = std::move(built.second);
    out.state.training_mode = true;

    auto params = out.state.parameters();
    AdamState adam(params, cfg.learning_rate);
    RngStream mask_rng(run_seed, "trainmask");
    RngStream shuffle_rng(run_seed, "shuffle");
    const TrainMaskConfig mask_cfg(cfg.rho);
    const double keep = mask_cfg.keep_prob();
    const double train_scale = cfg.train_scale ? 1.0 / keep : 1.0;

    const int n = train.size();
    std::vector<int> indices(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) indices[static_cast<std::size_t>(i)] = i;

    out.log_lines.push_back("epoch,loss,accuracy");
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(indices);
        double loss_sum = 0.0;
        std::int64_t hits = 0;
        for (int begin = 0; begin < n; begin += cfg.batch_size) {
            const int count = std::min(cfg.batch_size, n - begin);
            auto [x, y] = gather_batch(train, indices, static_cast<std::size_t>(begin),
                                       static_cast<std::size_t>(count));
            MaskOverlay overlay;
            for (std::size_t i = 0; i < out.specs.size(); ++i) {
                if (!out.specs[i].dropconnect_enabled) continue;
                overlay.push_back({static_cast<int>(i),
                                   sample_train_mask(out.specs[i].fan_in, out.specs[i].fan_out,
                                                     keep, mask_rng),
                                   train_scale});
            }
            GradTape tape;
            Tensor logits = forward_logits(out.specs, out.state, x, &tape, &overlay);
            Tensor loss = cross_entropy(logits, y, &tape);
            if (!std::isfinite(loss.item()))
                throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                         std::to_string(epoch));
            for (int i = 0; i < count; ++i)
                if (argmax_row(logits, i) == y[static_cast<std::size_t>(i)]) ++hits;
            loss_sum += loss.item() * count;
            out.state.zero_grads();
            tape.backward(loss);
            adam_step(adam, params);
        }
        const double mean_loss = loss_sum / n;
        const double acc = static_cast<double>(hits) / n;
        out.log_lines.push_back(std::to_string(epoch) + "," + format_double(mean_loss) + "," +
                                format_double(acc));
        if (verbose)
            std::fprintf(stderr, "[train seed=%llu] epoch %d/%d loss=%.4f acc=%.4f\n",
                         static_cast<unsigned long long>(run_seed), epoch, cfg.epochs, mean_loss,
                         acc);
    }
    out.state.training_mode = false;
    out.masks = build_mask_set(out.specs, cfg.rho, run_seed);
    return out;
}

// --------------------------------------------------------------------------
// Scoring and detection harnesses
// --------------------------------------------------------------------------

/// Score every input of a dataset under the configured mode. `as_ood` marks
/// the rows unlabeled (OOD role); `id_offset` keeps ids unique when two sets
/// share one scores file. `positive` is left false for the harness to assign.
inline std::vector<ScoredSample> score_dataset(const ExperimentConfig& cfg,
                                               const TrainedModel& model, const ImageDataset& ds,
                                               std::uint64_t run_seed, bool as_ood,
                                               std::int64_t id_offset) {
    const int n = ds.size();
    if (n == 0) throw data_error("cannot score an empty dataset");
    const int k = cfg.num_classes;
    const ScoreOptions opt = cfg.score_options();
    std::vector<ScoredSample> out(static_cast<std::size_t>(n));

    auto emit = [&](int i, const Scores& s) {
        ScoredSample& row = out[static_cast<std::size_t>(i)];
        row.id = id_offset + i;
        row.predicted = s.predicted;
        if (ds.labeled() && !as_ood) row.label = ds.labels[static_cast<std::size_t>(i)];
        row.max_p = s.max_p;
        row.ent = s.ent;
        row.d_ent = s.d_ent;
        row.positive = false;
    };

    if (cfg.mode == RunMode::Baseline) {
        for (int begin = 0; begin < n; begin += cfg.batch_size) {
            const int count = std::min(cfg.batch_size, n - begin);
            std::vector<int> idx(static_cast<std::size_t>(count));
            for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = begin + i;
            auto [x, ignored] = gather_batch(ds, idx, 0, idx.size());
            Tensor probs = softmax_rows(forward_logits(model.specs, model.state, x));
            for (int i = 0; i < count; ++i) {
                const double* row = probs.values().data() + static_cast<std::size_t>(i) * k;
                emit(begin + i, score_single(std::vector<double>(row, row + k)));
            }
        }
        return out;
    }

    const int passes = cfg.mode == RunMode::Sdc ? cfg.rho : cfg.mc_samples;
    // outputs[sample][pass] is one probability vector
    std::vector<std::vector<std::vector<double>>> outputs(
        static_cast<std::size_t>(n),
        std::vector<std::vector<double>>(static_cast<std::size_t>(passes)));

    auto stash = [&](const Tensor& probs, int begin, int count, int pass) {
        for (int i = 0; i < count; ++i) {
            const double* row = probs.values().data() + static_cast<std::size_t>(i) * k;
            outputs[static_cast<std::size_t>(begin + i)][static_cast<std::size_t>(pass)] =
                std::vector<double>(row, row + k);
        }
    };

    if (cfg.mode == RunMode::Sdc) {
        for (int m = 0; m < passes; ++m) {
            for (int begin = 0; begin < n; begin += cfg.batch_size) {
                const int count = std::min(cfg.batch_size, n - begin);
                std::vector<int> idx(static_cast<std::size_t>(count));
                for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = begin + i;
                auto [x, ignored] = gather_batch(ds, idx, 0, idx.size());
                stash(subnetwork_forward(model.specs, model.state, model.masks, m, x,
                                         cfg.test_scale),
                      begin, count, m);
            }
        }
    } else {  // RunMode::Mc
        RngStream mc_rng(run_seed, "mc");
        const double keep = TrainMaskConfig(cfg.rho).keep_prob();
        for (int begin = 0; begin < n; begin += cfg.batch_size) {
            const int count = std::min(cfg.batch_size, n - begin);
            std::vector<int> idx(static_cast<std::size_t>(count));
            for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = begin + i;
            auto [x, ignored] = gather_batch(ds, idx, 0, idx.size());
            auto samples = mc_sample_forward(model.specs, model.state, keep, cfg.mc_samples,
                                             mc_rng, x, cfg.test_scale);
            for (int s = 0; s < passes; ++s) stash(samples[static_cast<std::size_t>(s)], begin,
                                                   count, s);
        }
    }

    for (int i = 0; i < n; ++i)
        emit(i, score_sample(outputs[static_cast<std::size_t>(i)], opt));
    return out;
}

struct MisclassificationResult {
    DetectionReport report;
    std::vector<ScoredSample> samples;
    double accuracy = 0.0;
};

/// Misclassified test inputs are the positives.
inline MisclassificationResult misclassification_detection(const ExperimentConfig& cfg,
                                                           const TrainedModel& model,
                                                           const ImageDataset& test,
                                                           std::uint64_t run_seed) {
    if (!test.labeled()) throw data_error("misclassification detection needs a labeled test set");
    MisclassificationResult res;
    res.samples = score_dataset(cfg, model, test, run_seed, false, 0);
    std::int64_t wrong = 0;
    for (auto& s : res.samples) {
        s.positive = s.predicted != *s.label;
        if (s.positive) ++wrong;
    }
    res.accuracy = 1.0 - static_cast<double>(wrong) / static_cast<double>(res.samples.size());
    res.report = make_report("misclassification", run_seed, res.samples);
    return res;
}

struct OodResult {
    DetectionReport report;
    std::vector<ScoredSample> samples;  // in-distribution rows first, then OOD rows
};

/// OOD inputs are the positives, in-distribution test inputs the negatives.
inline OodResult ood_detection(const ExperimentConfig& cfg, const TrainedModel& model,
                               const ImageDataset& test, const ImageDataset& ood,
                               std::uint64_t run_seed) {
    OodResult res;
    res.samples = score_dataset(cfg, model, test, run_seed, false, 0);
    auto ood_rows = score_dataset(cfg, model, ood, run_seed, true, test.size());
    for (auto& s : ood_rows) s.positive = true;
    res.samples.insert(res.samples.end(), ood_rows.begin(), ood_rows.end());
    res.report = make_report("ood", run_seed, res.samples);
    return res;
}

}  // namespace sdc
