#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sdc {

using Shape = std::vector<int>;

namespace detail {

inline std::string shape_to_string(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::int64_t checked_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) {
        if (d <= 0)
            throw std::invalid_argument("tensor dims must be positive, got " + shape_to_string(s));
        n *= d;
    }
    return n;
}

}  // namespace detail

struct TensorData {
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until first needed; always values.size() once allocated
};

/// Dense row-major double tensor. Copies share storage (shared_ptr handle);
/// ops allocate fresh outputs, so a tensor's values are never mutated once
/// an op has produced them. The gradient buffer lives next to the values
/// and is populated by GradTape::backward.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false) {
        const auto n = detail::checked_numel(shape);
        if (static_cast<std::int64_t>(values.size()) != n)
            throw std::invalid_argument("tensor value count " + std::to_string(values.size()) +
                                        " does not match shape " + detail::shape_to_string(shape));
        d_ = std::make_shared<TensorData>();
        d_->shape = std::move(shape);
        d_->values = std::move(values);
        d_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = detail::checked_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0),
                      requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        const auto n = detail::checked_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value),
                      requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return Tensor({1}, {value}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(d_); }

    const Shape& shape() const { return data().shape; }
    int rank() const { return static_cast<int>(data().shape.size()); }
    int dim(int i) const { return data().shape.at(static_cast<std::size_t>(i)); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data().values.size()); }

    std::vector<double>& values() { return data().values; }
    const std::vector<double>& values() const { return data().values; }

    double item() const {
        if (numel() != 1) throw std::invalid_argument("Tensor::item: tensor is not scalar");
        return data().values[0];
    }

    double& at(int i, int j) {
        check_rank2(i, j);
        return data().values[static_cast<std::size_t>(i) * dim(1) + j];
    }
    double at(int i, int j) const {
        check_rank2(i, j);
        return data().values[static_cast<std::size_t>(i) * dim(1) + j];
    }

    bool requires_grad() const { return defined() && d_->requires_grad; }
    Tensor& set_requires_grad(bool flag) {
        data().requires_grad = flag;
        return *this;
    }

    bool has_grad() const { return defined() && !d_->grad.empty(); }

    const std::vector<double>& grad() const {
        if (!has_grad()) throw std::logic_error("Tensor::grad: no gradient has been populated");
        return d_->grad;
    }

    /// Grad buffer, allocated (zero-filled) on first access.
    std::vector<double>& grad_mut() {
        auto& d = data();
        if (d.grad.empty()) d.grad.assign(d.values.size(), 0.0);
        return d.grad;
    }

    void zero_grad() {
        auto& d = data();
        d.grad.assign(d.values.size(), 0.0);
    }

    bool shares_storage(const Tensor& other) const { return d_ == other.d_; }

    bool all_finite() const {
        for (double v : data().values)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    TensorData& data() {
        if (!d_) throw std::logic_error("use of undefined tensor");
        return *d_;
    }
    const TensorData& data() const {
        if (!d_) throw std::logic_error("use of undefined tensor");
        return *d_;
    }
    void check_rank2(int i, int j) const {
        if (rank() != 2) throw std::invalid_argument("Tensor::at(i,j) requires a rank-2 tensor");
        if (i < 0 || i >= dim(0) || j < 0 || j >= dim(1))
            throw std::out_of_range("Tensor::at: index out of range");
    }

    std::shared_ptr<TensorData> d_;
};

/// Records every differentiable op in execution order; backward() replays the
/// records in reverse, which is a valid reverse topological order of the
/// computation, accumulating into each requires_grad tensor exactly once per
/// use. A tape can run backward once; reset() clears it for reuse.
class GradTape {
public:
    using BackwardFn = std::function<void()>;

    void record(BackwardFn fn) {
        if (done_)
            throw std::logic_error("GradTape: recording after backward; call reset() first");
        records_.push_back(std::move(fn));
    }

    void backward(const Tensor& loss) {
        if (done_) throw std::logic_error("GradTape::backward called twice without reset");
        if (!loss.defined() || loss.numel() != 1)
            throw std::invalid_argument("GradTape::backward expects a scalar loss");
        if (!loss.requires_grad())
            throw std::invalid_argument("GradTape::backward: loss is not connected to the tape");
        Tensor l = loss;
        l.zero_grad();
        l.grad_mut()[0] = 1.0;
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
        done_ = true;
    }

    void reset() {
        records_.clear();
        done_ = false;
    }

    std::size_t num_records() const { return records_.size(); }
    bool completed() const { return done_; }

private:
    std::vector<BackwardFn> records_;
    bool done_ = false;
};

namespace detail {

inline bool want_tape(GradTape* tape, std::initializer_list<const Tensor*> inputs) {
    if (!tape) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

// C[M x N] (+)= A[M x K] * B[K x N]
inline void gemm_nn(int M, int N, int K, const double* A, const double* B, double* C,
                    bool accumulate) {
    if (!accumulate) std::fill(C, C + static_cast<std::size_t>(M) * N, 0.0);
    for (int i = 0; i < M; ++i) {
        double* crow = C + static_cast<std::size_t>(i) * N;
        const double* arow = A + static_cast<std::size_t>(i) * K;
        for (int l = 0; l < K; ++l) {
            const double a = arow[l];
            const double* brow = B + static_cast<std::size_t>(l) * N;
            for (int j = 0; j < N; ++j) crow[j] += a * brow[j];
        }
    }
}

// C[M x N] (+)= A[M x K] * B^T, with B stored [N x K]
inline void gemm_nt(int M, int N, int K, const double* A, const double* B, double* C,
                    bool accumulate) {
    for (int i = 0; i < M; ++i) {
        const double* arow = A + static_cast<std::size_t>(i) * K;
        double* crow = C + static_cast<std::size_t>(i) * N;
        for (int j = 0; j < N; ++j) {
            const double* brow = B + static_cast<std::size_t>(j) * K;
            double acc = 0.0;
            for (int l = 0; l < K; ++l) acc += arow[l] * brow[l];
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
    }
}

// C[M x N] (+)= A^T * B, with A stored [K x M], B stored [K x N]
inline void gemm_tn(int M, int N, int K, const double* A, const double* B, double* C,
                    bool accumulate) {
    if (!accumulate) std::fill(C, C + static_cast<std::size_t>(M) * N, 0.0);
    for (int l = 0; l < K; ++l) {
        const double* arow = A + static_cast<std::size_t>(l) * M;
        const double* brow = B + static_cast<std::size_t>(l) * N;
        for (int i = 0; i < M; ++i) {
            const double a = arow[i];
            double* crow = C + static_cast<std::size_t>(i) * N;
            for (int j = 0; j < N; ++j) crow[j] += a * brow[j];
        }
    }
}

// img: one sample [C x H x W]; col: [C*kh*kw x OH*OW], row-major.
inline void im2col(const double* img, int C, int H, int W, int kh, int kw, int stride, int pad,
                   int OH, int OW, double* col) {
    int row = 0;
    for (int c = 0; c < C; ++c) {
        const double* chan = img + static_cast<std::size_t>(c) * H * W;
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j, ++row) {
                double* dst = col + static_cast<std::size_t>(row) * OH * OW;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride + i - pad;
                    double* drow = dst + static_cast<std::size_t>(oh) * OW;
                    if (ih < 0 || ih >= H) {
                        std::fill(drow, drow + OW, 0.0);
                        continue;
                    }
                    const double* srow = chan + static_cast<std::size_t>(ih) * W;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride + j - pad;
                        drow[ow] = (iw >= 0 && iw < W) ? srow[iw] : 0.0;
                    }
                }
            }
        }
    }
}

// Scatter-add of a column matrix back onto one sample's [C x H x W] grid.
inline void col2im_add(const double* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                       int OH, int OW, double* img) {
    int row = 0;
    for (int c = 0; c < C; ++c) {
        double* chan = img + static_cast<std::size_t>(c) * H * W;
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j, ++row) {
                const double* src = col + static_cast<std::size_t>(row) * OH * OW;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride + i - pad;
                    if (ih < 0 || ih >= H) continue;
                    double* drow = chan + static_cast<std::size_t>(ih) * W;
                    const double* srow = src + static_cast<std::size_t>(oh) * OW;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride + j - pad;
                        if (iw >= 0 && iw < W) drow[iw] += srow[ow];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Differentiable ops. Each takes an optional tape; when the tape is given and
// any input requires grad, the output requires grad and a backward record is
// appended. Without a tape the op is a pure forward computation.
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b, GradTape* tape = nullptr) {
    if (a.rank() != 2 || b.rank() != 2)
        throw std::invalid_argument("matmul: both operands must be rank-2");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw std::invalid_argument("matmul: inner dimensions disagree: " +
                                    detail::shape_to_string(a.shape()) + " vs " +
                                    detail::shape_to_string(b.shape()));
    Tensor out = Tensor::zeros({m, n});
    detail::gemm_nn(m, n, k, a.values().data(), b.values().data(), out.values().data(), false);
    if (detail::want_tape(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc, m, n, k]() mutable {
            if (!oc.has_grad()) return;
            const double* g = oc.grad().data();
            if (ac.requires_grad())  // dA = dC * B^T
                detail::gemm_nt(m, k, n, g, bc.values().data(), ac.grad_mut().data(), true);
            if (bc.requires_grad())  // dB = A^T * dC
                detail::gemm_tn(k, n, m, ac.values().data(), g, bc.grad_mut().data(), true);
        });
    }
    return out;
}

/// 2D cross-correlation (no kernel flip): input [N x C x H x W] with kernel
/// [F x C x kh x kw]. Output extent (H + 2*pad - kh)/stride + 1 must be a
/// positive integer.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding,
                     GradTape* tape = nullptr) {
    if (input.rank() != 4 || kernel.rank() != 4)
        throw std::invalid_argument("conv2d: input and kernel must be rank-4");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int F = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kernel.dim(1) != C)
        throw std::invalid_argument("conv2d: kernel channels " + std::to_string(kernel.dim(1)) +
                                    " do not match input channels " + std::to_string(C));
    auto out_extent = [](int in, int pad, int k, int s, const char* axis) {
        const int span = in + 2 * pad - k;
        if (span < 0 || span % s != 0)
            throw std::invalid_argument(std::string("conv2d: non-integer output size along ") +
                                        axis);
        return span / s + 1;
    };
    const int OH = out_extent(H, padding, kh, stride, "height");
    const int OW = out_extent(W, padding, kw, stride, "width");
    const int ckk = C * kh * kw, ohw = OH * OW;

    Tensor out = Tensor::zeros({N, F, OH, OW});
    const bool taped = detail::want_tape(tape, {&input, &kernel});
    std::shared_ptr<std::vector<double>> col_cache;
    std::vector<double> scratch;
    if (taped)
        col_cache = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N) * ckk * ohw);
    else
        scratch.resize(static_cast<std::size_t>(ckk) * ohw);

    for (int n = 0; n < N; ++n) {
        double* col =
            taped ? col_cache->data() + static_cast<std::size_t>(n) * ckk * ohw : scratch.data();
        detail::im2col(input.values().data() + static_cast<std::size_t>(n) * C * H * W, C, H, W,
                       kh, kw, stride, padding, OH, OW, col);
        detail::gemm_nn(F, ohw, ckk, kernel.values().data(), col,
                        out.values().data() + static_cast<std::size_t>(n) * F * ohw, false);
    }

    if (taped) {
        out.set_requires_grad(true);
        Tensor ic = input, kc = kernel, oc = out;
        tape->record([ic, kc, oc, col_cache, N, C, H, W, F, kh, kw, stride, padding, OH, OW, ckk,
                      ohw]() mutable {
            if (!oc.has_grad()) return;
            const double* g = oc.grad().data();
            if (kc.requires_grad()) {
                double* kg = kc.grad_mut().data();
                for (int n = 0; n < N; ++n)
                    detail::gemm_nt(F, ckk, ohw, g + static_cast<std::size_t>(n) * F * ohw,
                                    col_cache->data() + static_cast<std::size_t>(n) * ckk * ohw,
                                    kg, true);
            }
            if (ic.requires_grad()) {
                double* ig = ic.grad_mut().data();
                std::vector<double> dcol(static_cast<std::size_t>(ckk) * ohw);
                for (int n = 0; n < N; ++n) {
                    detail::gemm_tn(ckk, ohw, F, kc.values().data(),
                                    g + static_cast<std::size_t>(n) * F * ohw, dcol.data(), false);
                    detail::col2im_add(dcol.data(), C, H, W, kh, kw, stride, padding, OH, OW,
                                       ig + static_cast<std::size_t>(n) * C * H * W);
                }
            }
        });
    }
    return out;
}

/// 2x2 max pooling with stride 2. Gradient flows only to the argmax position;
/// ties resolve to the first position in row-major window order.
inline Tensor maxpool2(const Tensor& input, GradTape* tape = nullptr) {
    if (input.rank() != 4) throw std::invalid_argument("maxpool2: input must be rank-4");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("maxpool2: spatial dims must be even, got " +
                                    detail::shape_to_string(input.shape()));
    const int OH = H / 2, OW = W / 2;
    Tensor out = Tensor::zeros({N, C, OH, OW});
    const bool taped = detail::want_tape(tape, {&input});
    auto argmax = taped ? std::make_shared<std::vector<std::int64_t>>(
                              static_cast<std::size_t>(out.numel()))
                        : nullptr;

    const double* src = input.values().data();
    double* dst = out.values().data();
    std::size_t o = 0;
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const std::size_t plane = (static_cast<std::size_t>(n) * C + c) * H * W;
            for (int oh = 0; oh < OH; ++oh) {
                for (int ow = 0; ow < OW; ++ow, ++o) {
                    const std::size_t base = plane + static_cast<std::size_t>(2 * oh) * W + 2 * ow;
                    const std::size_t offs[4] = {base, base + 1, base + W, base + W + 1};
                    std::size_t best = offs[0];
                    double bv = src[offs[0]];
                    for (int t = 1; t < 4; ++t)
                        if (src[offs[t]] > bv) {  // strict: first max wins
                            bv = src[offs[t]];
                            best = offs[t];
                        }
                    dst[o] = bv;
                    if (taped) (*argmax)[o] = static_cast<std::int64_t>(best);
                }
            }
        }
    }

    if (taped) {
        out.set_requires_grad(true);
        Tensor ic = input, oc = out;
        tape->record([ic, oc, argmax]() mutable {
            if (!oc.has_grad() || !ic.requires_grad()) return;
            const auto& g = oc.grad();
            auto& ig = ic.grad_mut();
            for (std::size_t i = 0; i < g.size(); ++i)
                ig[static_cast<std::size_t>((*argmax)[i])] += g[i];
        });
    }
    return out;
}

inline Tensor relu(const Tensor& input, GradTape* tape = nullptr) {
    Tensor out = Tensor::zeros(input.shape());
    const auto& x = input.values();
    auto& y = out.values();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    if (detail::want_tape(tape, {&input})) {
        out.set_requires_grad(true);
        Tensor ic = input, oc = out;
        tape->record([ic, oc]() mutable {
            if (!oc.has_grad() || !ic.requires_grad()) return;
            const auto& g = oc.grad();
            const auto& x = ic.values();
            auto& ig = ic.grad_mut();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (x[i] > 0.0) ig[i] += g[i];
        });
    }
    return out;
}

/// Row softmax with max subtraction; forward-only (used on inference paths).
inline Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw std::invalid_argument("softmax_rows: input must be rank-2");
    const int n = logits.dim(0), k = logits.dim(1);
    Tensor out = Tensor::zeros({n, k});
    const double* x = logits.values().data();
    double* y = out.values().data();
    for (int i = 0; i < n; ++i) {
        const double* row = x + static_cast<std::size_t>(i) * k;
        double* orow = y + static_cast<std::size_t>(i) * k;
        const double m = *std::max_element(row, row + k);
        double total = 0.0;
        for (int j = 0; j < k; ++j) {
            orow[j] = std::exp(row[j] - m);
            total += orow[j];
        }
        for (int j = 0; j < k; ++j) orow[j] /= total;
    }
    return out;
}

inline Tensor log_softmax_rows(const Tensor& logits, GradTape* tape = nullptr) {
    if (logits.rank() != 2) throw std::invalid_argument("log_softmax_rows: input must be rank-2");
    const int n = logits.dim(0), k = logits.dim(1);
    Tensor out = Tensor::zeros({n, k});
    const double* x = logits.values().data();
    double* y = out.values().data();
    for (int i = 0; i < n; ++i) {
        const double* row = x + static_cast<std::size_t>(i) * k;
        double* orow = y + static_cast<std::size_t>(i) * k;
        const double m = *std::max_element(row, row + k);
        double total = 0.0;
        for (int j = 0; j < k; ++j) total += std::exp(row[j] - m);
        const double lse = m + std::log(total);
        for (int j = 0; j < k; ++j) orow[j] = row[j] - lse;
    }
    if (detail::want_tape(tape, {&logits})) {
        out.set_requires_grad(true);
        Tensor ic = logits, oc = out;
        tape->record([ic, oc, n, k]() mutable {
            if (!oc.has_grad() || !ic.requires_grad()) return;
            const double* g = oc.grad().data();
            const double* y = oc.values().data();
            double* ig = ic.grad_mut().data();
            for (int i = 0; i < n; ++i) {
                const std::size_t off = static_cast<std::size_t>(i) * k;
                double gsum = 0.0;
                for (int j = 0; j < k; ++j) gsum += g[off + j];
                for (int j = 0; j < k; ++j) ig[off + j] += g[off + j] - std::exp(y[off + j]) * gsum;
            }
        });
    }
    return out;
}

inline Tensor reshape(const Tensor& input, Shape new_shape, GradTape* tape = nullptr) {
    const auto n = detail::checked_numel(new_shape);
    if (n != input.numel())
        throw std::invalid_argument("reshape: element count changes from " +
                                    std::to_string(input.numel()) + " to " + std::to_string(n));
    Tensor out(std::move(new_shape), input.values());
    if (detail::want_tape(tape, {&input})) {
        out.set_requires_grad(true);
        Tensor ic = input, oc = out;
        tape->record([ic, oc]() mutable {
            if (!oc.has_grad() || !ic.requires_grad()) return;
            const auto& g = oc.grad();
            auto& ig = ic.grad_mut();
            for (std::size_t i = 0; i < g.size(); ++i) ig[i] += g[i];
        });
    }
    return out;
}

/// Collapse all trailing dims: [N x ...] -> [N x rest].
inline Tensor flatten_rows(const Tensor& input, GradTape* tape = nullptr) {
    if (input.rank() < 2) throw std::invalid_argument("flatten_rows: input must have rank >= 2");
    const int n = input.dim(0);
    return reshape(input, {n, static_cast<int>(input.numel() / n)}, tape);
}

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_to_string(a.shape()) + " vs " +
                                    shape_to_string(b.shape()));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b, GradTape* tape = nullptr) {
    detail::check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    if (detail::want_tape(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            if (ac.requires_grad()) {
                auto& ig = ac.grad_mut();
                for (std::size_t i = 0; i < g.size(); ++i) ig[i] += g[i];
            }
            if (bc.requires_grad()) {
                auto& ig = bc.grad_mut();
                for (std::size_t i = 0; i < g.size(); ++i) ig[i] += g[i];
            }
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b, GradTape* tape = nullptr) {
    detail::check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    if (detail::want_tape(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            if (ac.requires_grad()) {
                auto& ig = ac.grad_mut();
                const auto& other = bc.values();
                for (std::size_t i = 0; i < g.size(); ++i) ig[i] += g[i] * other[i];
            }
            if (bc.requires_grad()) {
                auto& ig = bc.grad_mut();
                const auto& other = ac.values();
                for (std::size_t i = 0; i < g.size(); ++i) ig[i] += g[i] * other[i];
            }
        });
    }
    return out;
}

/// x [N x K] + bias [K], broadcast over rows.
inline Tensor add_row_bias(const Tensor& x, const Tensor& bias, GradTape* tape = nullptr) {
    if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1))
        throw std::invalid_argument("add_row_bias: need x [NxK] and bias [K]");
    const int n = x.dim(0), k = x.dim(1);
    Tensor out = Tensor::zeros({n, k});
    const auto& xv = x.values();
    const auto& bv = bias.values();
    auto& ov = out.values();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j)
            ov[static_cast<std::size_t>(i) * k + j] = xv[static_cast<std::size_t>(i) * k + j] + bv[j];
    if (detail::want_tape(tape, {&x, &bias})) {
        out.set_requires_grad(true);
        Tensor xc = x, bc = bias, oc = out;
        tape->record([xc, bc, oc, n, k]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            if (xc.requires_grad()) {
                auto& ig = xc.grad_mut();
                for (std::size_t i = 0; i < g.size(); ++i) ig[i] += g[i];
            }
            if (bc.requires_grad()) {
                auto& ig = bc.grad_mut();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < k; ++j) ig[j] += g[static_cast<std::size_t>(i) * k + j];
            }
        });
    }
    return out;
}

/// x [N x C x H x W] + bias [C], broadcast over batch and spatial dims.
inline Tensor add_channel_bias(const Tensor& x, const Tensor& bias, GradTape* tape = nullptr) {
    if (x.rank() != 4 || bias.rank() != 1 || bias.dim(0) != x.dim(1))
        throw std::invalid_argument("add_channel_bias: need x [NxCxHxW] and bias [C]");
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.values();
    const auto& bv = bias.values();
    auto& ov = out.values();
    std::size_t o = 0;
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
            const double b = bv[static_cast<std::size_t>(ch)];
            for (std::size_t s = 0; s < hw; ++s, ++o) ov[o] = xv[o] + b;
        }
    if (detail::want_tape(tape, {&x, &bias})) {
        out.set_requires_grad(true);
        Tensor xc = x, bc = bias, oc = out;
        tape->record([xc, bc, oc, n, c, hw]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            if (xc.requires_grad()) {
                auto& ig = xc.grad_mut();
                for (std::size_t i = 0; i < g.size(); ++i) ig[i] += g[i];
            }
            if (bc.requires_grad()) {
                auto& ig = bc.grad_mut();
                std::size_t o = 0;
                for (int i = 0; i < n; ++i)
                    for (int ch = 0; ch < c; ++ch) {
                        double acc = 0.0;
                        for (std::size_t s = 0; s < hw; ++s, ++o) acc += g[o];
                        ig[static_cast<std::size_t>(ch)] += acc;
                    }
            }
        });
    }
    return out;
}

inline Tensor sum(const Tensor& input, GradTape* tape = nullptr) {
    double total = 0.0;
    for (double v : input.values()) total += v;
    Tensor out = Tensor::scalar(total);
    if (detail::want_tape(tape, {&input})) {
        out.set_requires_grad(true);
        Tensor ic = input, oc = out;
        tape->record([ic, oc]() mutable {
            if (!oc.has_grad() || !ic.requires_grad()) return;
            const double g = oc.grad()[0];
            auto& ig = ic.grad_mut();
            for (auto& v : ig) v += g;
        });
    }
    return out;
}

/// Mean negative log-likelihood of the true labels under row log-probabilities.
inline Tensor nll_mean(const Tensor& log_probs, const std::vector<int>& labels,
                       GradTape* tape = nullptr) {
    if (log_probs.rank() != 2) throw std::invalid_argument("nll_mean: log_probs must be rank-2");
    const int n = log_probs.dim(0), k = log_probs.dim(1);
    if (static_cast<int>(labels.size()) != n)
        throw std::invalid_argument("nll_mean: label count does not match batch size");
    for (int y : labels)
        if (y < 0 || y >= k)
            throw std::out_of_range("nll_mean: label " + std::to_string(y) +
                                    " outside [0, " + std::to_string(k) + ")");
    double total = 0.0;
    const auto& lp = log_probs.values();
    for (int i = 0; i < n; ++i) total -= lp[static_cast<std::size_t>(i) * k + labels[i]];
    Tensor out = Tensor::scalar(total / n);
    if (detail::want_tape(tape, {&log_probs})) {
        out.set_requires_grad(true);
        Tensor ic = log_probs, oc = out;
        auto labels_copy = std::make_shared<std::vector<int>>(labels);
        tape->record([ic, oc, labels_copy, n, k]() mutable {
            if (!oc.has_grad() || !ic.requires_grad()) return;
            const double g = oc.grad()[0];
            auto& ig = ic.grad_mut();
            for (int i = 0; i < n; ++i)
                ig[static_cast<std::size_t>(i) * k + (*labels_copy)[i]] -= g / n;
        });
    }
    return out;
}

}  // namespace sdc
