// Acceptance suite: prints one pass/fail line per criterion and exits
// non-zero if any criterion fails.
//
// Default mode trains the reduced protocol (1 run, 10 epochs) for the
// dataset-level criteria. `--full` (gated behind SDC_ACCEPTANCE_FULL=1, a
// multi-hour CPU run) trains the full protocol: 5 repeats, 40 epochs, and
// checks the reported AUROC bands.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "../testutil.hpp"
#include "sdc/commands.hpp"
#include "sdc/experiment.hpp"

using namespace sdc;

namespace {

int failures = 0;

void report(int criterion, const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %d: %s — %s\n", pass ? "PASS" : "FAIL", criterion, name.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

std::string pct(const MetricSummary& m) {
    char buf[64];
    if (!m.defined) return "undefined";
    std::snprintf(buf, sizeof(buf), "%.2f+-%.2f", 100.0 * m.mean, 100.0 * m.stddev);
    return buf;
}

std::string ood_images_path() {
    if (const char* p = std::getenv("SDC_OOD_IMAGES")) return p;
    return testutil::source_dir() + "/data/fashion-mnist/t10k-images-idx3-ubyte";
}

ExperimentConfig mnist_config(const std::string& scratch) {
    ExperimentConfig cfg;
    cfg.train_images = testutil::mnist_dir() + "/train-images-idx3-ubyte";
    cfg.train_labels = testutil::mnist_dir() + "/train-labels-idx1-ubyte";
    cfg.test_images = testutil::mnist_dir() + "/t10k-images-idx3-ubyte";
    cfg.test_labels = testutil::mnist_dir() + "/t10k-labels-idx1-ubyte";
    cfg.ood_images = ood_images_path();
    cfg.checkpoint_out = scratch + "/model.sdc";
    cfg.log_out = scratch + "/train_log.csv";
    cfg.scores_out = scratch + "/scores.csv";
    cfg.report_out = scratch + "/report.csv";
    return cfg;
}

// ---------------------------------------------------------------------------
// Criteria 1-3: trained-protocol checks (reduced by default, full with --full)
// ---------------------------------------------------------------------------

void criteria_protocol(bool full) {
    const std::string scratch = testutil::scratch_dir("acceptance_protocol");
    if (!testutil::mnist_available()) {
        report(1, "misclassification detection", false,
               "MNIST IDX files not found under " + testutil::mnist_dir() +
                   " (set SDC_MNIST_DIR)");
        report(2, "OOD detection", false, "blocked on the same missing dataset");
        report(3, "classification sanity", false, "blocked on the same missing dataset");
        return;
    }

    ExperimentConfig cfg = mnist_config(scratch);
    const ImageDataset train =
        load_dataset(cfg.train_images, cfg.train_labels, SplitTag::Train);
    const ImageDataset test = load_dataset(cfg.test_images, cfg.test_labels, SplitTag::Test);

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<DetectionReport> run_reports;
    std::vector<double> accuracies;
    TrainedModel first_model;
    cfg.epochs = full ? 40 : 10;
    cfg.repeats = full ? 5 : 1;
    for (int r = 0; r < cfg.repeats; ++r) {
        const std::uint64_t run_seed = cfg.seed + static_cast<std::uint64_t>(r);
        TrainedModel model = train_model(cfg, run_seed, train);
        MisclassificationResult res = misclassification_detection(cfg, model, test, run_seed);
        std::printf("  run %d: acc=%.4f max_p=%s ent=%s d_ent=%s\n", r, res.accuracy,
                    pct(res.report.max_p).c_str(), pct(res.report.ent).c_str(),
                    pct(res.report.d_ent).c_str());
        std::fflush(stdout);
        run_reports.push_back(res.report);
        accuracies.push_back(res.accuracy);
        if (r == 0) first_model = std::move(model);
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                               .count();
    const DetectionReport agg = aggregate_reports(run_reports);

    if (full) {
        // Table-1 MNIST row: Max.P 97.75, Ent. 97.74 within +-1.5 points;
        // D.Ent. 94.84 within +-3.0 (widened for the alpha post-processing
        // ambiguity).
        const bool ok = agg.max_p.defined && agg.ent.defined && agg.d_ent.defined &&
                        std::abs(100.0 * agg.max_p.mean - 97.75) <= 1.5 &&
                        std::abs(100.0 * agg.ent.mean - 97.74) <= 1.5 &&
                        std::abs(100.0 * agg.d_ent.mean - 94.84) <= 3.0;
        report(1, "misclassification detection (full protocol, R=5, 40 epochs)", ok,
               "max_p=" + pct(agg.max_p) + " (target 97.75+-1.5), ent=" + pct(agg.ent) +
                   " (target 97.74+-1.5), d_ent=" + pct(agg.d_ent) + " (target 94.84+-3.0)");
    } else {
        const bool ok = agg.max_p.defined && 100.0 * agg.max_p.mean >= 95.0;
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "max_p=%s (threshold 95), ent=%s, d_ent=%s, %.0f s elapsed (budget ~30 min)",
                      pct(agg.max_p).c_str(), pct(agg.ent).c_str(), pct(agg.d_ent).c_str(),
                      elapsed);
        report(1, "misclassification detection (smoke: R=1, 10 epochs)", ok && elapsed < 2700.0,
               buf);
    }

    // criterion 3: conventional LeNet5 test accuracy
    double min_acc = 1.0;
    for (double a : accuracies) min_acc = std::min(min_acc, a);
    char acc_buf[96];
    std::snprintf(acc_buf, sizeof(acc_buf), "min test accuracy over %zu run(s) = %.4f (>= 0.98)",
                  accuracies.size(), min_acc);
    report(3, "classification sanity", min_acc >= 0.98, acc_buf);

    // criterion 2: substitute OOD set, then the degenerate pairing
    if (!std::filesystem::exists(cfg.ood_images)) {
        report(2, "OOD detection", false,
               "substitute OOD set not found at " + cfg.ood_images + " (set SDC_OOD_IMAGES)");
        return;
    }
    const ImageDataset ood = load_dataset(cfg.ood_images, std::nullopt, SplitTag::Ood);
    OodResult ood_res = ood_detection(cfg, first_model, test, ood, cfg.seed);
    const bool ood_ok = ood_res.report.ent.defined && ood_res.report.ent.mean >= 0.90;

    // uniform-noise images must be trivially detectable
    {
        RngStream noise_rng(cfg.seed, "noise");
        IdxArray noise;
        noise.dims = {10000, 28, 28};
        noise.data.resize(10000u * 784u);
        for (auto& b : noise.data) b = static_cast<std::uint8_t>(noise_rng.below(256));
        write_idx(scratch + "/noise.idx", noise);
    }
    const ImageDataset noise = load_dataset(scratch + "/noise.idx", std::nullopt, SplitTag::Ood);
    OodResult noise_res = ood_detection(cfg, first_model, test, noise, cfg.seed);
    const bool noise_ok = noise_res.report.ent.defined && noise_res.report.ent.mean > 0.90;

    OodResult degenerate = ood_detection(cfg, first_model, test, test, cfg.seed);
    auto near_half = [](const MetricSummary& m) {
        return m.defined && m.mean >= 0.47 && m.mean <= 0.53;
    };
    const bool deg_ok = near_half(degenerate.report.max_p) && near_half(degenerate.report.ent) &&
                        near_half(degenerate.report.d_ent);
    report(2, "OOD detection", ood_ok && noise_ok && deg_ok,
           "substitute set: ent=" + pct(ood_res.report.ent) +
               " (>= 90), max_p=" + pct(ood_res.report.max_p) + ", d_ent=" +
               pct(ood_res.report.d_ent) + "; uniform noise: ent=" + pct(noise_res.report.ent) +
               " (> 90); degenerate pairing: max_p=" + pct(degenerate.report.max_p) + " ent=" +
               pct(degenerate.report.ent) + " d_ent=" + pct(degenerate.report.d_ent) +
               " (each in [47,53])");
}

// ---------------------------------------------------------------------------
// Criterion 4: moment-matching recovery
// ---------------------------------------------------------------------------

void criterion_moment_recovery() {
    const std::vector<std::vector<double>> cases{{2, 5, 3}, {0.5, 0.5}, {10, 1, 1}};
    bool ok = true;
    std::string detail;
    for (const auto& truth : cases) {
        RngStream rng(2024, "acceptance-dirichlet");
        std::vector<std::vector<double>> samples;
        samples.reserve(100000);
        for (int i = 0; i < 100000; ++i)
            samples.push_back(testutil::sample_dirichlet(truth, rng));
        DirichletParams fit = match_moments(ProbabilitySampleSet::from(std::move(samples)));
        double worst = 0.0;
        for (std::size_t i = 0; i < truth.size(); ++i)
            worst = std::max(worst, std::abs(fit.alpha[i] - truth[i]) / truth[i]);
        ok = ok && !fit.degenerate && worst <= 0.05;

        auto [mean, var] = moments_of(make_dirichlet(truth));
        DirichletParams back = dirichlet_from_moments(mean, var);
        double rt = 0.0;
        for (std::size_t i = 0; i < truth.size(); ++i)
            rt = std::max(rt, std::abs(back.alpha[i] - truth[i]) / truth[i]);
        ok = ok && rt <= 1e-9;
        char buf[96];
        std::snprintf(buf, sizeof(buf), " alpha[0]=%.3g: mc_rel=%.3g rt_rel=%.3g;", truth[0],
                      worst, rt);
        detail += buf;
    }
    report(4, "moment-matching recovery (N=1e5, 5% rel; exact round trip 1e-9)", ok, detail);
}

// ---------------------------------------------------------------------------
// Criterion 5: mask partition suite
// ---------------------------------------------------------------------------

void criterion_mask_partition() {
    const std::pair<int, int> fc_shapes[] = {{400, 120}, {120, 84}, {84, 10}};
    bool ok = true;
    double worst_mean_err = 0.0;
    for (const auto& [rows, cols] : fc_shapes) {
        for (int rho : {2, 3, 7, 10}) {
            RngStream rng(31, "acceptance-split");
            LayerMasks lm = build_structured_masks(rows, cols, rho, rng);
            const std::int64_t n = static_cast<std::int64_t>(rows) * cols;
            std::vector<int> hits(static_cast<std::size_t>(n), 0);
            for (int m = 0; m < rho; ++m) {
                const auto count =
                    static_cast<std::int64_t>(lm.zero_positions[static_cast<std::size_t>(m)].size());
                if (count != n / rho && count != (n + rho - 1) / rho) ok = false;
                for (std::uint64_t z : lm.zero_positions[static_cast<std::size_t>(m)])
                    ++hits[static_cast<std::size_t>(z)];
            }
            for (int h : hits)
                if (h != 1) ok = false;  // disjoint and covering, exhaustively

            RngStream wrng(32, "acceptance-w");
            Tensor w = testutil::random_tensor({rows, cols}, wrng, -2.0, 2.0);
            std::vector<double> mean(w.values().size(), 0.0);
            const double scale = static_cast<double>(rho) / (rho - 1);
            for (const auto& mask : lm.masks) {
                Tensor masked = apply_mask(w, mask, scale);
                for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += masked.values()[i];
            }
            for (std::size_t i = 0; i < mean.size(); ++i) {
                const double err = std::abs(mean[i] / rho - w.values()[i]);
                worst_mean_err = std::max(worst_mean_err, err);
                if (err > 1e-12) ok = false;
            }
        }
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf),
                  "all fc shapes x rho in {2,3,7,10}; worst ensemble-mean error %.2e (<= 1e-12)",
                  worst_mean_err);
    report(5, "structured mask partition suite", ok, buf);
}

// ---------------------------------------------------------------------------
// Criterion 6: gradient checks
// ---------------------------------------------------------------------------

void criterion_gradients() {
    bool ok = true;
    std::string detail;
    auto check = [&](const char* name, double worst, double tol) {
        char buf[80];
        std::snprintf(buf, sizeof(buf), " %s=%.2e(<=%g);", name, worst, tol);
        detail += buf;
        if (worst > tol) ok = false;
    };

    {
        RngStream rng(61, "acc-matmul");
        Tensor a = testutil::random_tensor({5, 8}, rng, -1, 1, true);
        Tensor b = testutil::random_tensor({8, 4}, rng, -1, 1, true);
        Tensor bias = testutil::random_tensor({4}, rng, -1, 1, true);
        check("fc", testutil::gradcheck_max_rel_err(
                        [&](GradTape* tape) {
                            return sum(add_row_bias(matmul(a, b, tape), bias, tape), tape);
                        },
                        {a, b, bias}, 100, 62),
              1e-4);
    }
    {
        RngStream rng(63, "acc-conv");
        Tensor in = testutil::random_tensor({2, 3, 8, 8}, rng, -1, 1, true);
        Tensor k = testutil::random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5, true);
        check("conv", testutil::gradcheck_max_rel_err(
                          [&](GradTape* tape) { return sum(conv2d(in, k, 1, 1, tape), tape); },
                          {in, k}, 100, 64),
              1e-4);
    }
    {
        RngStream rng(65, "acc-pointwise");
        Tensor x = testutil::random_tensor({6, 10}, rng, -1, 1, true);
        Tensor w = testutil::random_tensor({6, 10}, rng);
        check("relu", testutil::gradcheck_max_rel_err(
                          [&](GradTape* tape) { return sum(mul(relu(x, tape), w, tape), tape); },
                          {x}, 100, 66),
              1e-5);
        check("log_softmax",
              testutil::gradcheck_max_rel_err(
                  [&](GradTape* tape) {
                      return sum(mul(log_softmax_rows(x, tape), w, tape), tape);
                  },
                  {x}, 100, 67),
              1e-5);
        Tensor p = testutil::random_tensor({2, 2, 6, 6}, rng, -1, 1, true);
        Tensor pw = testutil::random_tensor({2, 2, 3, 3}, rng);
        check("maxpool",
              testutil::gradcheck_max_rel_err(
                  [&](GradTape* tape) { return sum(mul(maxpool2(p, tape), pw, tape), tape); },
                  {p}, 100, 68),
              1e-5);
    }
    {
        auto [specs, state] = build_lenet5(10, 69);
        RngStream rng(70, "acc-e2e");
        Tensor x = testutil::random_tensor({2, 1, 28, 28}, rng, 0.0, 1.0);
        const std::vector<int> labels{2, 8};
        std::vector<Tensor> params;
        for (Tensor* p : state.parameters()) params.push_back(*p);
        check("lenet5",
              testutil::gradcheck_max_rel_err(
                  [&](GradTape* tape) {
                      return cross_entropy(forward_logits(specs, state, x, tape), labels, tape);
                  },
                  params, 100, 71),
              1e-4);
    }
    report(6, "finite-difference gradient checks (100 coords each)", ok, detail);
}

// ---------------------------------------------------------------------------
// Criterion 7: AUROC oracle
// ---------------------------------------------------------------------------

void criterion_auroc_oracle() {
    bool ok = true;
    double worst = 0.0;
    RngStream rng(71, "acc-auroc");
    for (int trial = 0; trial < 1000; ++trial) {
        const int np = 1 + static_cast<int>(rng.below(50));
        const int nn = 1 + static_cast<int>(rng.below(50));
        std::vector<double> pos, neg;
        for (int i = 0; i < np; ++i) pos.push_back(static_cast<double>(rng.below(10)) / 5.0);
        for (int i = 0; i < nn; ++i) neg.push_back(static_cast<double>(rng.below(10)) / 5.0);
        const double err = std::abs(auroc(pos, neg) - testutil::brute_force_auroc(pos, neg));
        worst = std::max(worst, err);
        if (err > 1e-12) ok = false;
    }
    double worst_mono = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> pos, neg;
        for (int i = 0; i < 25; ++i) pos.push_back(rng.uniform());
        for (int i = 0; i < 20; ++i) neg.push_back(rng.uniform());
        const double base = auroc(pos, neg);
        for (auto f : {+[](double x) { return 3.0 * x + 1.0; },
                       +[](double x) { return x + x * x * x; },
                       +[](double x) { return std::exp(x); }}) {
            std::vector<double> tp, tn;
            for (double v : pos) tp.push_back(f(v));
            for (double v : neg) tn.push_back(f(v));
            const double err = std::abs(auroc(tp, tn) - base);
            worst_mono = std::max(worst_mono, err);
            if (err > 1e-12) ok = false;
        }
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf),
                  "1000 tied instances: worst |fast-brute|=%.2e; monotone invariance: %.2e",
                  worst, worst_mono);
    report(7, "AUROC equals brute-force pairwise count", ok, buf);
}

// ---------------------------------------------------------------------------
// Criterion 8: Dirichlet entropy against Monte-Carlo integration
// ---------------------------------------------------------------------------

void criterion_entropy_oracle() {
    bool ok = true;
    std::string detail;
    const std::vector<std::vector<double>> cases{{2, 2}, {1, 1, 1}, {3, 7, 5}};
    for (const auto& alpha : cases) {
        DirichletParams p = make_dirichlet(alpha);
        RngStream rng(81, "acc-entropy");
        const int n = 1000000;
        double sum = 0.0, sq = 0.0;
        for (int i = 0; i < n; ++i) {
            const double lp = log_pdf(p, testutil::sample_dirichlet(alpha, rng));
            sum += lp;
            sq += lp * lp;
        }
        const double mc = -sum / n;
        // identical draws (uniform Dirichlet) can round the variance negative
        const double var = std::max(0.0, (sq / n - (sum / n) * (sum / n)) * n / (n - 1.0));
        const double se = std::sqrt(var / n);
        const double h = dirichlet_entropy(p);
        const double err = std::abs(h - mc);
        if (err > std::max(3.0 * se, 1e-9)) ok = false;
        char buf[96];
        std::snprintf(buf, sizeof(buf), " K=%zu: |h-mc|=%.2e (3se=%.2e);", alpha.size(), err,
                      3.0 * se);
        detail += buf;
    }
    const double h11 = dirichlet_entropy(make_dirichlet({1.0, 1.0}));
    if (std::abs(h11) > 1e-10) ok = false;
    detail += " Dir(1,1)=" + format_double(h11) + " (|.|<=1e-10)";
    report(8, "Dirichlet entropy vs Monte-Carlo -E[log pdf] (1e6 draws, 3 s.e.)", ok, detail);
}

// ---------------------------------------------------------------------------
// Criterion 9: byte-level determinism of artifacts
// ---------------------------------------------------------------------------

void criterion_determinism() {
    if (!testutil::mnist_available()) {
        report(9, "byte-identical artifacts", false,
               "MNIST IDX files not found under " + testutil::mnist_dir());
        return;
    }
    const std::string scratch = testutil::scratch_dir("acceptance_det");
    ExperimentConfig cfg = mnist_config(scratch);
    cfg.epochs = 1;
    cfg.train_limit = 2048;
    cfg.test_limit = 1000;
    cfg.repeats = 1;

    auto run_once = [&] {
        cmd_train(cfg);
        ExperimentConfig eval_cfg = cfg;
        eval_cfg.checkpoint_in = cfg.checkpoint_out;
        cmd_eval_miscls(eval_cfg);
        return std::make_tuple(testutil::read_file(cfg.log_out),
                               testutil::read_file(cfg.checkpoint_out),
                               testutil::read_file(cfg.scores_out),
                               testutil::read_file(cfg.report_out));
    };
    const auto first = run_once();
    const auto second = run_once();
    const bool ok = first == second;
    report(9, "byte-identical artifacts across reruns", ok,
           ok ? "training log, checkpoint, score CSV and report CSV all match"
              : "artifact bytes differ between identical invocations");
}

}  // namespace

int main(int argc, char** argv) {
    bool full = false;
    for (int i = 1; i < argc; ++i)
        if (std::strcmp(argv[i], "--full") == 0) full = true;
    if (full && std::getenv("SDC_ACCEPTANCE_FULL") == nullptr) {
        std::printf("ACCEPTANCE-FULL SKIPPED: set SDC_ACCEPTANCE_FULL=1 to run the full "
                    "protocol (R=5, 40 epochs; multi-hour CPU run)\n");
        return 0;
    }

    std::printf("== SDC acceptance suite (%s protocol) ==\n", full ? "full" : "reduced");
    criteria_protocol(full);
    criterion_moment_recovery();
    criterion_mask_partition();
    criterion_gradients();
    criterion_auroc_oracle();
    criterion_entropy_oracle();
    criterion_determinism();

    if (failures == 0)
        std::printf("== all criteria passed ==\n");
    else
        std::printf("== %d criterion(s) FAILED ==\n", failures);
    return failures == 0 ? 0 : 1;
}
