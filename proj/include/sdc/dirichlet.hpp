#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sdc/special.hpp"

namespace sdc {

/// Sentinel returned for uncertainty scores of degenerate Dirichlet
/// estimates: a collapsed ensemble ranks as maximally uncertain.
inline constexpr double kMaxUncertainty = std::numeric_limits<double>::infinity();

/// A group of N probability vectors of common length K, e.g. the outputs of
/// the rho sub-networks for one input.
struct ProbabilitySampleSet {
    std::vector<std::vector<double>> samples;

    static ProbabilitySampleSet from(std::vector<std::vector<double>> samples) {
        if (samples.size() < 2)
            throw std::invalid_argument("ProbabilitySampleSet: need at least 2 samples");
        const std::size_t k = samples.front().size();
        if (k < 2) throw std::invalid_argument("ProbabilitySampleSet: need at least 2 classes");
        for (const auto& s : samples) {
            if (s.size() != k)
                throw std::invalid_argument("ProbabilitySampleSet: ragged sample lengths");
            double total = 0.0;
            for (double v : s) {
                if (v < 0.0 || v > 1.0)
                    throw std::invalid_argument("ProbabilitySampleSet: entry outside [0,1]");
                total += v;
            }
            if (std::abs(total - 1.0) > 1e-9)
                throw std::invalid_argument("ProbabilitySampleSet: sample does not sum to 1");
        }
        ProbabilitySampleSet set;
        set.samples = std::move(samples);
        return set;
    }

    std::size_t n() const { return samples.size(); }
    std::size_t k() const { return samples.front().size(); }
};

/// Dirichlet concentration vector. `degenerate` marks estimates that fell
/// back to clamps (zero variance, non-positive moments) or an Eq-8 style
/// post-processing fallback; downstream entropy scoring maps those to the
/// maximal-uncertainty sentinel.
struct DirichletParams {
    std::vector<double> alpha;
    double alpha0 = 0.0;
    int k = 0;
    bool degenerate = false;
};

inline DirichletParams make_dirichlet(std::vector<double> alpha, bool degenerate = false) {
    DirichletParams p;
    p.k = static_cast<int>(alpha.size());
    p.alpha0 = 0.0;
    for (double a : alpha) p.alpha0 += a;
    p.alpha = std::move(alpha);
    p.degenerate = degenerate;
    return p;
}

/// ln p(mu | alpha) = ln G(a0) - sum ln G(ai) + sum (ai - 1) ln mu_i.
/// mu must be interior to the simplex wherever the exponent is non-zero;
/// a boundary coordinate with alpha_i != 1 raises a domain error.
inline double log_pdf(const DirichletParams& params, const std::vector<double>& mu) {
    if (params.degenerate) throw std::domain_error("log_pdf: degenerate parameters");
    if (static_cast<int>(mu.size()) != params.k)
        throw std::invalid_argument("log_pdf: dimension mismatch");
    double out = lgamma_pos(params.alpha0);
    for (int i = 0; i < params.k; ++i) {
        const double a = params.alpha[i];
        if (!(a > 0.0)) throw std::domain_error("log_pdf: alpha must be positive");
        out -= lgamma_pos(a);
        if (mu[i] <= 0.0) {
            if (a == 1.0) continue;  // (a-1) ln mu = 0 regardless
            throw std::domain_error("log_pdf: boundary mu with alpha != 1");
        }
        out += (a - 1.0) * std::log(mu[i]);
    }
    return out;
}

/// Moment-matching estimate from per-dimension means and unbiased variances:
/// alpha_i = m_i (m_i (1 - m_i) / v_i - 1). Variances are clamped below at
/// 1e-12; any dimension with m(1-m)/v <= 1 is clamped to 1e-6 and flags the
/// estimate degenerate.
inline DirichletParams dirichlet_from_moments(const std::vector<double>& means,
                                              const std::vector<double>& variances) {
    if (means.size() != variances.size() || means.size() < 2)
        throw std::invalid_argument("dirichlet_from_moments: need matching mean/variance vectors");
    std::vector<double> alpha(means.size());
    bool degenerate = false;
    for (std::size_t i = 0; i < means.size(); ++i) {
        const double m = means[i];
        const double v = std::max(variances[i], 1e-12);
        const double ratio = m * (1.0 - m) / v;
        if (ratio <= 1.0) {
            alpha[i] = 1e-6;
            degenerate = true;
        } else {
            alpha[i] = m * (ratio - 1.0);
        }
    }
    return make_dirichlet(std::move(alpha), degenerate);
}

/// Fit by matching sample mean and unbiased sample variance per dimension.
inline DirichletParams match_moments(const ProbabilitySampleSet& set) {
    const std::size_t n = set.n(), k = set.k();
    std::vector<double> mean(k, 0.0), var(k, 0.0);
    for (const auto& s : set.samples)
        for (std::size_t i = 0; i < k; ++i) mean[i] += s[i];
    for (auto& m : mean) m /= static_cast<double>(n);
    for (const auto& s : set.samples)
        for (std::size_t i = 0; i < k; ++i) {
            const double d = s[i] - mean[i];
            var[i] += d * d;
        }
    for (auto& v : var) v /= static_cast<double>(n - 1);
    return dirichlet_from_moments(mean, var);
}

/// Mean and variance vectors of a Dirichlet:
/// E[mu_i] = ai/a0, Var[mu_i] = ai (a0 - ai) / (a0^2 (a0 + 1)).
inline std::pair<std::vector<double>, std::vector<double>> moments_of(
    const DirichletParams& params) {
    if (params.degenerate) throw std::domain_error("moments_of: degenerate parameters");
    std::vector<double> mean(params.alpha.size()), var(params.alpha.size());
    const double a0 = params.alpha0;
    for (std::size_t i = 0; i < params.alpha.size(); ++i) {
        const double a = params.alpha[i];
        if (!(a > 0.0)) throw std::domain_error("moments_of: alpha must be positive");
        mean[i] = a / a0;
        var[i] = a * (a0 - a) / (a0 * a0 * (a0 + 1.0));
    }
    return {std::move(mean), std::move(var)};
}

/// Which K the sparsity post-processing divides by: the class count (the
/// literal formula) or the number of dimensions with alpha > 1.
enum class Eq8Denominator { ClassCount, PositiveCount };

/// Sparsity post-processing of a moment-matched alpha: dimensions with
/// alpha_i > 1 map to (alpha_i - 1) / (sum_{j: alpha_j > 1} alpha_j - K),
/// the rest to 0. When no dimension exceeds 1 or the denominator is not
/// positive, the input is returned unchanged with the degenerate flag set
/// as a warning marker.
inline DirichletParams postprocess_alpha(const DirichletParams& params,
                                         Eq8Denominator mode = Eq8Denominator::ClassCount) {
    if (params.degenerate) return params;
    double above_sum = 0.0;
    int above_count = 0;
    for (double a : params.alpha)
        if (a > 1.0) {
            above_sum += a;
            ++above_count;
        }
    const double denom =
        above_sum - (mode == Eq8Denominator::ClassCount ? params.k : above_count);
    if (above_count == 0 || denom <= 0.0) {
        DirichletParams out = params;
        out.degenerate = true;
        return out;
    }
    std::vector<double> alpha(params.alpha.size());
    for (std::size_t i = 0; i < alpha.size(); ++i)
        alpha[i] = params.alpha[i] > 1.0 ? (params.alpha[i] - 1.0) / denom : 0.0;
    return make_dirichlet(std::move(alpha), false);
}

/// Differential entropy of a Dirichlet:
/// h = sum ln G(aj) - ln G(a0) + (a0 - K) psi(a0) - sum (aj - 1) psi(aj).
///
/// Degenerate parameters return the +inf maximal-uncertainty sentinel. Zero
/// entries (produced by the sparsity post-processing) are treated as excluded
/// dimensions: the entropy is that of the Dirichlet restricted to the
/// positive support, the limiting face distribution. Fewer than two positive
/// dimensions means the distribution has collapsed to a vertex, which scores
/// -inf (no spread at all).
inline double dirichlet_entropy(const DirichletParams& params) {
    if (params.degenerate) return kMaxUncertainty;
    std::vector<double> support;
    support.reserve(params.alpha.size());
    for (double a : params.alpha) {
        if (a < 0.0) throw std::domain_error("dirichlet_entropy: negative alpha");
        if (a > 0.0) support.push_back(a);
    }
    if (support.size() < 2) return -kMaxUncertainty;
    double a0 = 0.0;
    for (double a : support) a0 += a;
    const double k = static_cast<double>(support.size());
    double h = -lgamma_pos(a0) + (a0 - k) * digamma(a0);
    for (double a : support) h += lgamma_pos(a) - (a - 1.0) * digamma(a);
    return h;
}

/// Shannon entropy of a discrete distribution, natural log, 0 ln 0 := 0.
inline double categorical_entropy(const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p) {
        if (v < 0.0) throw std::domain_error("categorical_entropy: negative probability");
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

}  // namespace sdc
