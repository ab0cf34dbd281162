#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sdc/dirichlet.hpp"

namespace sdc {

/// Shortest round-trip decimal form of a double; keeps CSV artifacts
/// byte-stable across runs.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

enum class EntropyMode { MeanDistribution, MeanOfEntropies };

struct ScoreOptions {
    bool eq8_postprocess = true;
    Eq8Denominator eq8_denominator = Eq8Denominator::ClassCount;
    EntropyMode entropy_mode = EntropyMode::MeanDistribution;
};

/// Per-input uncertainty scores. max_p and ent come from the ensemble mean
/// probability vector; d_ent from the Dirichlet fitted to the raw outputs.
/// d_ent is absent in single-forward (baseline) scoring.
struct Scores {
    int predicted = -1;
    double max_p = 0.0;
    double ent = 0.0;
    std::optional<double> d_ent;
};

/// Score one input from the outputs of the rho sub-networks (or S Monte-Carlo
/// passes). Order of the outputs does not matter.
inline Scores score_sample(const std::vector<std::vector<double>>& outputs,
                           const ScoreOptions& opt = {}) {
    auto set = ProbabilitySampleSet::from(outputs);
    const std::size_t k = set.k();
    std::vector<double> mean(k, 0.0);
    for (const auto& s : set.samples)
        for (std::size_t i = 0; i < k; ++i) mean[i] += s[i];
    for (auto& m : mean) m /= static_cast<double>(set.n());

    Scores out;
    out.predicted = 0;
    for (std::size_t i = 1; i < k; ++i)
        if (mean[i] > mean[static_cast<std::size_t>(out.predicted)])
            out.predicted = static_cast<int>(i);
    out.max_p = mean[static_cast<std::size_t>(out.predicted)];
    if (opt.entropy_mode == EntropyMode::MeanDistribution) {
        out.ent = categorical_entropy(mean);
    } else {
        double h = 0.0;
        for (const auto& s : set.samples) h += categorical_entropy(s);
        out.ent = h / static_cast<double>(set.n());
    }
    DirichletParams params = match_moments(set);
    if (opt.eq8_postprocess) params = postprocess_alpha(params, opt.eq8_denominator);
    out.d_ent = dirichlet_entropy(params);
    return out;
}

/// Single deterministic forward: scores from one probability vector.
inline Scores score_single(const std::vector<double>& probs) {
    Scores out;
    out.predicted = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
        if (probs[i] > probs[static_cast<std::size_t>(out.predicted)])
            out.predicted = static_cast<int>(i);
    out.max_p = probs[static_cast<std::size_t>(out.predicted)];
    out.ent = categorical_entropy(probs);
    out.d_ent = std::nullopt;
    return out;
}

/// Mann-Whitney AUROC with midrank tie handling:
/// (#{pos > neg} + 0.5 #{pos = neg}) / (|pos| |neg|).
inline double auroc(const std::vector<double>& positives, const std::vector<double>& negatives) {
    if (positives.empty() || negatives.empty())
        throw std::invalid_argument("auroc: both score lists must be non-empty");
    struct Entry {
        double score;
        bool positive;
    };
    std::vector<Entry> all;
    all.reserve(positives.size() + negatives.size());
    for (double s : positives) {
        if (std::isnan(s)) throw std::invalid_argument("auroc: NaN score");
        all.push_back({s, true});
    }
    for (double s : negatives) {
        if (std::isnan(s)) throw std::invalid_argument("auroc: NaN score");
        all.push_back({s, false});
    }
    std::sort(all.begin(), all.end(),
              [](const Entry& a, const Entry& b) { return a.score < b.score; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        std::size_t pos_in_tie = 0;
        while (j < all.size() && all[j].score == all[i].score) {
            if (all[j].positive) ++pos_in_tie;
            ++j;
        }
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        rank_sum_pos += midrank * static_cast<double>(pos_in_tie);
        i = j;
    }
    const double p = static_cast<double>(positives.size());
    const double n = static_cast<double>(negatives.size());
    return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n);
}

/// One scored input in a detection task. `label` is absent for OOD inputs;
/// `positive` is assigned by the harness, never by the scorer.
struct ScoredSample {
    std::int64_t id = 0;
    int predicted = -1;
    std::optional<int> label;
    double max_p = 0.0;
    double ent = 0.0;
    std::optional<double> d_ent;
    bool positive = false;
};

/// AUROC summary of one metric over one or more runs. `defined` is false when
/// a run had an empty positive or negative class (the sentinel the spec
/// requires instead of 0 or 1).
struct MetricSummary {
    bool defined = false;
    double mean = 0.0;
    double stddev = 0.0;
};

struct DetectionReport {
    std::string task;  // "misclassification" | "ood"
    int runs = 0;
    std::uint64_t seed = 0;
    std::int64_t samples = 0;
    std::int64_t positives = 0;
    std::int64_t negatives = 0;
    MetricSummary max_p, ent, d_ent;
    // per-run AUROCs (empty optional where a run was undefined)
    std::vector<std::optional<double>> run_max_p, run_ent, run_d_ent;
};

namespace detail {

/// Uncertainty orientation: higher = more likely positive. Max.P flips sign
/// via 1 - max_p; the entropies are used as-is.
inline void split_scores(const std::vector<ScoredSample>& samples, int which,
                         std::vector<double>& pos, std::vector<double>& neg) {
    pos.clear();
    neg.clear();
    for (const auto& s : samples) {
        double u = 0.0;
        if (which == 0)
            u = 1.0 - s.max_p;
        else if (which == 1)
            u = s.ent;
        else {
            if (!s.d_ent) {  // metric absent for this run mode
                pos.clear();
                neg.clear();
                return;
            }
            u = *s.d_ent;
        }
        (s.positive ? pos : neg).push_back(u);
    }
}

inline std::optional<double> metric_auroc(const std::vector<ScoredSample>& samples, int which) {
    std::vector<double> pos, neg;
    split_scores(samples, which, pos, neg);
    if (pos.empty() || neg.empty()) return std::nullopt;
    return auroc(pos, neg);
}

inline MetricSummary summarize(const std::vector<std::optional<double>>& values) {
    MetricSummary s;
    std::vector<double> v;
    for (const auto& x : values)
        if (x) v.push_back(*x);
    if (v.empty() || v.size() != values.size()) return s;  // undefined if any run undefined
    s.defined = true;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    s.mean = mean;
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return s;
}

}  // namespace detail

/// Build a single-run report from scored samples whose `positive` flags are
/// already assigned.
inline DetectionReport make_report(std::string task, std::uint64_t seed,
                                   const std::vector<ScoredSample>& samples) {
    if (samples.empty()) throw std::invalid_argument("make_report: no scored samples");
    DetectionReport r;
    r.task = std::move(task);
    r.runs = 1;
    r.seed = seed;
    r.samples = static_cast<std::int64_t>(samples.size());
    for (const auto& s : samples) (s.positive ? r.positives : r.negatives) += 1;
    r.run_max_p.push_back(detail::metric_auroc(samples, 0));
    r.run_ent.push_back(detail::metric_auroc(samples, 1));
    r.run_d_ent.push_back(detail::metric_auroc(samples, 2));
    r.max_p = detail::summarize(r.run_max_p);
    r.ent = detail::summarize(r.run_ent);
    r.d_ent = detail::summarize(r.run_d_ent);
    return r;
}

/// Aggregate several runs of the same task: mean and sample standard
/// deviation per metric. A single run reports stddev 0.
inline DetectionReport aggregate_reports(const std::vector<DetectionReport>& runs) {
    if (runs.empty()) throw std::invalid_argument("aggregate_reports: no runs");
    DetectionReport out = runs.front();
    out.runs = 0;
    out.run_max_p.clear();
    out.run_ent.clear();
    out.run_d_ent.clear();
    for (const auto& r : runs) {
        out.runs += r.runs;
        out.run_max_p.insert(out.run_max_p.end(), r.run_max_p.begin(), r.run_max_p.end());
        out.run_ent.insert(out.run_ent.end(), r.run_ent.begin(), r.run_ent.end());
        out.run_d_ent.insert(out.run_d_ent.end(), r.run_d_ent.begin(), r.run_d_ent.end());
    }
    out.max_p = detail::summarize(out.run_max_p);
    out.ent = detail::summarize(out.run_ent);
    out.d_ent = detail::summarize(out.run_d_ent);
    return out;
}

// --------------------------------------------------------------------------
// CSV artifacts
// --------------------------------------------------------------------------

inline std::string scores_csv_header() { return "id,pred,label,max_p,ent,d_ent,positive"; }

inline std::string to_csv_row(const ScoredSample& s) {
    std::string row = std::to_string(s.id) + "," + std::to_string(s.predicted) + ",";
    if (s.label) row += std::to_string(*s.label);
    row += "," + format_double(s.max_p) + "," + format_double(s.ent) + ",";
    if (s.d_ent) row += format_double(*s.d_ent);
    row += ",";
    row += s.positive ? "1" : "0";
    return row;
}

inline std::string report_csv_header() { return "task,metric,auroc_mean,auroc_std,runs,seed"; }

inline std::vector<std::string> to_csv_rows(const DetectionReport& r) {
    auto row = [&](const char* metric, const MetricSummary& m) {
        std::string line = r.task;
        line += ",";
        line += metric;
        line += ",";
        line += m.defined ? format_double(m.mean) : "nan";
        line += ",";
        line += m.defined ? format_double(m.stddev) : "nan";
        line += "," + std::to_string(r.runs) + "," + std::to_string(r.seed);
        return line;
    };
    return {row("max_p", r.max_p), row("ent", r.ent), row("d_ent", r.d_ent)};
}

}  // namespace sdc
