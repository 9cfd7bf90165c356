// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense tensor engine with reverse-mode autodiff on a linear tape.
// Double precision throughout; shapes are explicit and there is no implicit
// broadcasting beyond tensor-scalar ops.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "xmodal/error.hpp"

namespace xmodal {

using BoolVec = std::vector<std::uint8_t>;  // 1 = real/unmasked, 0 = padding/masked

namespace detail {

struct TensorImpl {
    std::vector<int> shape;
    std::vector<double> v;
    bool requires_grad = false;
    std::vector<double> g;  // lazily allocated, same length as v

    std::vector<double>& grad() {
        if (g.size() != v.size()) g.assign(v.size(), 0.0);
        return g;
    }
};

inline std::size_t numel_of(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

}  // namespace detail

class Tensor {
public:
    Tensor() : p_(std::make_shared<detail::TensorImpl>()) {}

    Tensor(std::vector<int> shape, std::vector<double> values, bool requires_grad = false)
        : p_(std::make_shared<detail::TensorImpl>()) {
        for (int d : shape) {
            if (d <= 0) throw ShapeError("tensor dims must be positive, got " + detail::shape_str(shape));
        }
        if (detail::numel_of(shape) != values.size()) {
            throw ShapeError("shape " + detail::shape_str(shape) + " does not match value count " +
                             std::to_string(values.size()));
        }
        p_->shape = std::move(shape);
        p_->v = std::move(values);
        p_->requires_grad = requires_grad;
    }

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        std::size_t n = detail::numel_of(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false) {
        std::size_t n = detail::numel_of(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return Tensor({1}, {value}, requires_grad);
    }

    const std::vector<int>& shape() const { return p_->shape; }
    int rank() const { return static_cast<int>(p_->shape.size()); }
    int dim(int i) const { return p_->shape[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return p_->v.size(); }

    const std::vector<double>& values() const { return p_->v; }
    std::vector<double>& values_mut() { return p_->v; }
    double value_at(std::size_t i) const { return p_->v[i]; }
    double item() const {
        if (size() != 1) throw UsageError("item() requires a scalar tensor, got " + shape_str());
        return p_->v[0];
    }

    bool requires_grad() const { return p_->requires_grad; }
    void set_requires_grad(bool rg) { p_->requires_grad = rg; }

    bool has_grad() const { return p_->g.size() == p_->v.size(); }
    std::vector<double>& grad() { return p_->grad(); }
    const std::vector<double>& grad() const { return p_->grad(); }
    void zero_grad() { p_->g.assign(p_->v.size(), 0.0); }

    std::string shape_str() const { return detail::shape_str(p_->shape); }

    std::shared_ptr<detail::TensorImpl> impl() const { return p_; }

    // Identity of the underlying storage; two handles may share one impl.
    bool same_storage(const Tensor& other) const { return p_ == other.p_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> p) : p_(std::move(p)) {}
    std::shared_ptr<detail::TensorImpl> p_;
};

// Linear tape of recorded operations; nodes run in reverse on backward.
class Tape {
public:
    void record(std::function<void()> backward_rule) { nodes_.push_back(std::move(backward_rule)); }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // Runs every recorded rule once, newest first.
    void replay_reverse() {
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    static Tape*& current() {
        thread_local Tape* cur = nullptr;
        return cur;
    }

private:
    std::vector<std::function<void()>> nodes_;
};

// RAII activation of a tape on the current thread.
class TapeScope {
public:
    explicit TapeScope(Tape& t) : prev_(Tape::current()) { Tape::current() = &t; }
    ~TapeScope() { Tape::current() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

namespace detail {

inline void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) throw NumericError(std::string("non-finite value produced by ") + op);
    }
}

inline Tensor make_result(std::vector<int> shape, std::vector<double> values, bool requires_grad,
                          const char* op) {
    check_finite(values, op);
    return Tensor(std::move(shape), std::move(values), requires_grad);
}

inline bool tracing(bool requires_grad) { return requires_grad && Tape::current() != nullptr; }

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("matmul requires rank-2 tensors, got " + a.shape_str() + " and " + b.shape_str());
    }
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw ShapeError("matmul inner dimensions differ: " + a.shape_str() + " vs " + b.shape_str());
    }
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double aip = av[static_cast<std::size_t>(i) * k + p];
            if (aip == 0.0) continue;
            const double* brow = &bv[static_cast<std::size_t>(p) * n];
            double* orow = &out[static_cast<std::size_t>(i) * n];
            for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    bool rg = a.requires_grad() || b.requires_grad();
    Tensor result = detail::make_result({m, n}, std::move(out), rg, "matmul");
    if (detail::tracing(rg)) {
        auto ai = a.impl(), bi = b.impl(), oi = result.impl();
        Tape::current()->record([ai, bi, oi, m, k, n] {
            const auto& go = oi->grad();
            if (ai->requires_grad) {
                auto& ga = ai->grad();
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (int j = 0; j < n; ++j)
                            s += go[static_cast<std::size_t>(i) * n + j] * bi->v[static_cast<std::size_t>(p) * n + j];
                        ga[static_cast<std::size_t>(i) * k + p] += s;
                    }
            }
            if (bi->requires_grad) {
                auto& gb = bi->grad();
                for (int p = 0; p < k; ++p)
                    for (int j = 0; j < n; ++j) {
                        double s = 0.0;
                        for (int i = 0; i < m; ++i)
                            s += ai->v[static_cast<std::size_t>(i) * k + p] * go[static_cast<std::size_t>(i) * n + j];
                        gb[static_cast<std::size_t>(p) * n + j] += s;
                    }
            }
        });
    }
    return result;
}

// ---------------------------------------------------------------------------
// elementwise binary ops (equal shapes; scalar variants below)

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + " requires equal shapes, got " + a.shape_str() + " and " +
                         b.shape_str());
    }
}

template <typename Fwd, typename Bwd>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
    check_same_shape(a, b, name);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.values()[i], b.values()[i]);
    bool rg = a.requires_grad() || b.requires_grad();
    Tensor result = make_result(a.shape(), std::move(out), rg, name);
    if (tracing(rg)) {
        auto ai = a.impl(), bi = b.impl(), oi = result.impl();
        Tape::current()->record([ai, bi, oi, bwd] {
            const auto& go = oi->grad();
            for (std::size_t i = 0; i < go.size(); ++i) {
                auto [da, db] = bwd(ai->v[i], bi->v[i], oi->v[i]);
                if (ai->requires_grad) ai->grad()[i] += da * go[i];
                if (bi->requires_grad) bi->grad()[i] += db * go[i];
            }
        });
    }
    return result;
}

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd, Bwd bwd) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.values()[i]);
    Tensor result = make_result(a.shape(), std::move(out), a.requires_grad(), name);
    if (tracing(a.requires_grad())) {
        auto ai = a.impl(), oi = result.impl();
        Tape::current()->record([ai, oi, bwd] {
            const auto& go = oi->grad();
            auto& ga = ai->grad();
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += bwd(ai->v[i], oi->v[i]) * go[i];
        });
    }
    return result;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op(a, b, "add", [](double x, double y) { return x + y; },
                             [](double, double, double) { return std::pair<double, double>{1.0, 1.0}; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op(a, b, "sub", [](double x, double y) { return x - y; },
                             [](double, double, double) { return std::pair<double, double>{1.0, -1.0}; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op(a, b, "mul", [](double x, double y) { return x * y; },
                             [](double x, double y, double) { return std::pair<double, double>{y, x}; });
}

inline Tensor tanh(const Tensor& a) {
    return detail::unary_op(a, "tanh", [](double x) { return std::tanh(x); },
                            [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_op(a, "sigmoid",
                            [](double x) {
                                // split on sign for stability
                                if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
                                double e = std::exp(x);
                                return e / (1.0 + e);
                            },
                            [](double, double y) { return y * (1.0 - y); });
}

inline Tensor relu(const Tensor& a) {
    return detail::unary_op(a, "relu", [](double x) { return x > 0 ? x : 0.0; },
                            [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Tensor exp(const Tensor& a) {
    return detail::unary_op(a, "exp", [](double x) { return std::exp(x); },
                            [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
    for (double x : a.values()) {
        if (x <= 0.0) throw DomainError("log of non-positive value " + std::to_string(x));
    }
    return detail::unary_op(a, "log", [](double x) { return std::log(x); },
                            [](double x, double) { return 1.0 / x; });
}

inline Tensor scale(const Tensor& a, double c) {
    if (!std::isfinite(c)) throw NumericError("scale by non-finite constant");
    return detail::unary_op(a, "scale", [c](double x) { return c * x; },
                            [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& a, double c) {
    if (!std::isfinite(c)) throw NumericError("add of non-finite constant");
    return detail::unary_op(a, "add_scalar", [c](double x) { return x + c; },
                            [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// softmax / log_softmax with optional mask, along one axis of a rank-1 or
// rank-2 tensor. Masked entries get exactly 0 probability (-inf never enters
// the arithmetic; masked lanes are simply skipped).

namespace detail {

struct SliceIter {
    int slices, len, stride, step;  // element (s, j) lives at s*stride + j*step
};

// For rank-1: one slice over the whole vector. For rank-2 (r x c):
//   axis=1 -> r slices of length c, consecutive;
//   axis=0 -> c slices of length r, strided by c.
inline SliceIter slice_layout(const Tensor& a, int axis) {
    if (a.rank() == 1) {
        if (axis != 0 && axis != -1) throw UsageError("softmax axis out of range for rank-1 tensor");
        return {1, a.dim(0), 0, 1};
    }
    if (a.rank() == 2) {
        if (axis == -1) axis = 1;
        if (axis == 1) return {a.dim(0), a.dim(1), a.dim(1), 1};
        if (axis == 0) return {a.dim(1), a.dim(0), 1, a.dim(1)};
        throw UsageError("softmax axis out of range for rank-2 tensor");
    }
    throw UsageError("softmax supports rank-1 and rank-2 tensors, got " + a.shape_str());
}

inline void check_mask(const Tensor& a, const BoolVec* mask) {
    if (mask && mask->size() != a.size()) {
        throw ShapeError("mask length " + std::to_string(mask->size()) + " does not match tensor " +
                         a.shape_str());
    }
}

}  // namespace detail

inline Tensor softmax(const Tensor& a, int axis = -1, const BoolVec* mask = nullptr) {
    detail::check_mask(a, mask);
    auto lay = detail::slice_layout(a, axis);
    const auto& av = a.values();
    std::vector<double> out(a.size(), 0.0);
    for (int s = 0; s < lay.slices; ++s) {
        double mx = -std::numeric_limits<double>::infinity();
        int kept = 0;
        for (int j = 0; j < lay.len; ++j) {
            std::size_t idx = static_cast<std::size_t>(s) * lay.stride + static_cast<std::size_t>(j) * lay.step;
            if (mask && !(*mask)[idx]) continue;
            mx = std::max(mx, av[idx]);
            ++kept;
        }
        if (kept == 0) throw DegenerateInputError("softmax slice is fully masked");
        double denom = 0.0;
        for (int j = 0; j < lay.len; ++j) {
            std::size_t idx = static_cast<std::size_t>(s) * lay.stride + static_cast<std::size_t>(j) * lay.step;
            if (mask && !(*mask)[idx]) continue;
            double e = std::exp(av[idx] - mx);
            out[idx] = e;
            denom += e;
        }
        for (int j = 0; j < lay.len; ++j) {
            std::size_t idx = static_cast<std::size_t>(s) * lay.stride + static_cast<std::size_t>(j) * lay.step;
            if (mask && !(*mask)[idx]) continue;
            out[idx] /= denom;
        }
    }
    Tensor result = detail::make_result(a.shape(), std::move(out), a.requires_grad(), "softmax");
    if (detail::tracing(a.requires_grad())) {
        auto ai = a.impl(), oi = result.impl();
        BoolVec m = mask ? *mask : BoolVec();
        Tape::current()->record([ai, oi, lay, m] {
            const auto& go = oi->grad();
            auto& ga = ai->grad();
            for (int s = 0; s < lay.slices; ++s) {
                double dot = 0.0;
                for (int j = 0; j < lay.len; ++j) {
                    std::size_t idx =
                        static_cast<std::size_t>(s) * lay.stride + static_cast<std::size_t>(j) * lay.step;
                    if (!m.empty() && !m[idx]) continue;
                    dot += go[idx] * oi->v[idx];
                }
                for (int j = 0; j < lay.len; ++j) {
                    std::size_t idx =
                        static_cast<std::size_t>(s) * lay.stride + static_cast<std::size_t>(j) * lay.step;
                    if (!m.empty() && !m[idx]) continue;
                    ga[idx] += oi->v[idx] * (go[idx] - dot);
                }
            }
        });
    }
    return result;
}

inline Tensor log_softmax(const Tensor& a, int axis = -1, const BoolVec* mask = nullptr) {
    detail::check_mask(a, mask);
    auto lay = detail::slice_layout(a, axis);
    const auto& av = a.values();
    // Masked entries hold 0 in the output; callers must never read them.
    std::vector<double> out(a.size(), 0.0);
    for (int s = 0; s < lay.slices; ++s) {
        double mx = -std::numeric_limits<double>::infinity();
        int kept = 0;
        for (int j = 0; j < lay.len; ++j) {
            std::size_t idx = static_cast<std::size_t>(s) * lay.stride + static_cast<std::size_t>(j) * lay.step;
            if (mask && !(*mask)[idx]) continue;
            mx = std::max(mx, av[idx]);
            ++kept;
        }
        if (kept == 0) throw DegenerateInputError("log_softmax slice is fully masked");
        double denom = 0.0;
        for (int j = 0; j < lay.len; ++j) {
            std::size_t idx = static_cast<std::size_t>(s) * lay.stride + static_cast<std::size_t>(j) * lay.step;
            if (mask && !(*mask)[idx]) continue;
            denom += std::exp(av[idx] - mx);
        }
        double lse = mx + std::log(denom);
        for (int j = 0; j < lay.len; ++j) {
            std::size_t idx = static_cast<std::size_t>(s) * lay.stride + static_cast<std::size_t>(j) * lay.step;
            if (mask && !(*mask)[idx]) continue;
            out[idx] = av[idx] - lse;
        }
    }
    Tensor result = detail::make_result(a.shape(), std::move(out), a.requires_grad(), "log_softmax");
    if (detail::tracing(a.requires_grad())) {
        auto ai = a.impl(), oi = result.impl();
        BoolVec m = mask ? *mask : BoolVec();
        Tape::current()->record([ai, oi, lay, m] {
            const auto& go = oi->grad();
            auto& ga = ai->grad();
            for (int s = 0; s < lay.slices; ++s) {
                double gsum = 0.0;
                for (int j = 0; j < lay.len; ++j) {
                    std::size_t idx =
                        static_cast<std::size_t>(s) * lay.stride + static_cast<std::size_t>(j) * lay.step;
                    if (!m.empty() && !m[idx]) continue;
                    gsum += go[idx];
                }
                for (int j = 0; j < lay.len; ++j) {
                    std::size_t idx =
                        static_cast<std::size_t>(s) * lay.stride + static_cast<std::size_t>(j) * lay.step;
                    if (!m.empty() && !m[idx]) continue;
                    ga[idx] += go[idx] - std::exp(oi->v[idx]) * gsum;
                }
            }
        });
    }
    return result;
}

// ---------------------------------------------------------------------------
// layer_norm over the last axis (population variance), then affine.

inline Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
    if (eps <= 0) throw UsageError("layer_norm eps must be positive");
    if (a.rank() != 1 && a.rank() != 2) {
        throw ShapeError("layer_norm supports rank-1 and rank-2 tensors, got " + a.shape_str());
    }
    const int d = a.dim(a.rank() - 1);
    const int rows = a.rank() == 2 ? a.dim(0) : 1;
    if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d) {
        throw ShapeError("layer_norm gain/bias must have shape [" + std::to_string(d) + "], got " +
                         gain.shape_str() + " and " + bias.shape_str());
    }
    const auto& av = a.values();
    std::vector<double> out(a.size());
    std::vector<double> mu(rows), inv_sd(rows);
    for (int r = 0; r < rows; ++r) {
        const double* x = &av[static_cast<std::size_t>(r) * d];
        double m = 0.0;
        for (int j = 0; j < d; ++j) m += x[j];
        m /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (x[j] - m) * (x[j] - m);
        var /= d;
        mu[r] = m;
        inv_sd[r] = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < d; ++j) {
            out[static_cast<std::size_t>(r) * d + j] =
                gain.values()[j] * ((x[j] - m) * inv_sd[r]) + bias.values()[j];
        }
    }
    bool rg = a.requires_grad() || gain.requires_grad() || bias.requires_grad();
    Tensor result = detail::make_result(a.shape(), std::move(out), rg, "layer_norm");
    if (detail::tracing(rg)) {
        auto ai = a.impl(), gi = gain.impl(), bi = bias.impl(), oi = result.impl();
        Tape::current()->record([ai, gi, bi, oi, rows, d, mu, inv_sd] {
            const auto& go = oi->grad();
            for (int r = 0; r < rows; ++r) {
                const double* x = &ai->v[static_cast<std::size_t>(r) * d];
                const double* g = &go[static_cast<std::size_t>(r) * d];
                if (bi->requires_grad) {
                    auto& gb = bi->grad();
                    for (int j = 0; j < d; ++j) gb[j] += g[j];
                }
                if (gi->requires_grad) {
                    auto& gg = gi->grad();
                    for (int j = 0; j < d; ++j) gg[j] += g[j] * ((x[j] - mu[r]) * inv_sd[r]);
                }
                if (ai->requires_grad) {
                    auto& ga = ai->grad();
                    // dx = (w*g - mean(w*g) - xhat * mean(w*g*xhat)) * inv_sd
                    double mean_wg = 0.0, mean_wgx = 0.0;
                    for (int j = 0; j < d; ++j) {
                        double wg = gi->v[j] * g[j];
                        double xhat = (x[j] - mu[r]) * inv_sd[r];
                        mean_wg += wg;
                        mean_wgx += wg * xhat;
                    }
                    mean_wg /= d;
                    mean_wgx /= d;
                    for (int j = 0; j < d; ++j) {
                        double wg = gi->v[j] * g[j];
                        double xhat = (x[j] - mu[r]) * inv_sd[r];
                        ga[static_cast<std::size_t>(r) * d + j] += (wg - mean_wg - xhat * mean_wgx) * inv_sd[r];
                    }
                }
            }
        });
    }
    return result;
}

// ---------------------------------------------------------------------------
// embedding_lookup: row gather from any rank-2 tensor; backward scatters.

inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw ShapeError("embedding_lookup requires a rank-2 table, got " + table.shape_str());
    const int rows = table.dim(0), d = table.dim(1);
    for (int id : ids) {
        if (id < 0 || id >= rows) {
            throw IndexError("embedding id " + std::to_string(id) + " out of range [0, " +
                             std::to_string(rows) + ")");
        }
    }
    if (ids.empty()) throw UsageError("embedding_lookup requires at least one id");
    std::vector<double> out(ids.size() * static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const double* src = &table.values()[static_cast<std::size_t>(ids[i]) * d];
        std::copy(src, src + d, &out[i * d]);
    }
    Tensor result = detail::make_result({static_cast<int>(ids.size()), d}, std::move(out),
                                        table.requires_grad(), "embedding_lookup");
    if (detail::tracing(table.requires_grad())) {
        auto ti = table.impl(), oi = result.impl();
        std::vector<int> idcopy = ids;
        Tape::current()->record([ti, oi, idcopy, d] {
            const auto& go = oi->grad();
            auto& gt = ti->grad();
            for (std::size_t i = 0; i < idcopy.size(); ++i) {
                double* dst = &gt[static_cast<std::size_t>(idcopy[i]) * d];
                const double* src = &go[i * static_cast<std::size_t>(d)];
                for (int j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return result;
}

// ---------------------------------------------------------------------------
// shape plumbing: reshape, transpose, concat, row slicing, reductions.

inline Tensor reshape(const Tensor& a, std::vector<int> new_shape) {
    if (detail::numel_of(new_shape) != a.size()) {
        throw ShapeError("reshape to " + detail::shape_str(new_shape) + " changes element count of " +
                         a.shape_str());
    }
    Tensor result(new_shape, a.values(), a.requires_grad());
    if (detail::tracing(a.requires_grad())) {
        auto ai = a.impl(), oi = result.impl();
        Tape::current()->record([ai, oi] {
            const auto& go = oi->grad();
            auto& ga = ai->grad();
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        });
    }
    return result;
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose requires a rank-2 tensor, got " + a.shape_str());
    const int r = a.dim(0), c = a.dim(1);
    std::vector<double> out(a.size());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j) * r + i] = a.values()[static_cast<std::size_t>(i) * c + j];
    Tensor result = detail::make_result({c, r}, std::move(out), a.requires_grad(), "transpose");
    if (detail::tracing(a.requires_grad())) {
        auto ai = a.impl(), oi = result.impl();
        Tape::current()->record([ai, oi, r, c] {
            const auto& go = oi->grad();
            auto& ga = ai->grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    ga[static_cast<std::size_t>(i) * c + j] += go[static_cast<std::size_t>(j) * r + i];
        });
    }
    return result;
}

// Concatenate along axis 0 (rows, rank-1/2) or axis 1 (columns, rank 1 or 2 vectors side by side).
inline Tensor concat(const Tensor& a, const Tensor& b, int axis = 0) {
    if (a.rank() != b.rank()) {
        throw ShapeError("concat requires equal ranks, got " + a.shape_str() + " and " + b.shape_str());
    }
    std::vector<int> shape;
    if (a.rank() == 1) {
        if (axis != 0) throw UsageError("concat axis out of range for rank-1 tensors");
        shape = {a.dim(0) + b.dim(0)};
    } else if (a.rank() == 2) {
        if (axis == 0) {
            if (a.dim(1) != b.dim(1)) {
                throw ShapeError("concat rows requires equal widths, got " + a.shape_str() + " and " +
                                 b.shape_str());
            }
            shape = {a.dim(0) + b.dim(0), a.dim(1)};
        } else if (axis == 1) {
            if (a.dim(0) != b.dim(0)) {
                throw ShapeError("concat cols requires equal heights, got " + a.shape_str() + " and " +
                                 b.shape_str());
            }
            shape = {a.dim(0), a.dim(1) + b.dim(1)};
        } else {
            throw UsageError("concat axis out of range for rank-2 tensors");
        }
    } else {
        throw ShapeError("concat supports rank-1 and rank-2 tensors");
    }
    std::vector<double> out;
    out.reserve(a.size() + b.size());
    if (a.rank() == 1 || axis == 0) {
        out.insert(out.end(), a.values().begin(), a.values().end());
        out.insert(out.end(), b.values().begin(), b.values().end());
    } else {
        const int rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
        out.resize(a.size() + b.size());
        for (int i = 0; i < rows; ++i) {
            std::copy(&a.values()[static_cast<std::size_t>(i) * ca], &a.values()[static_cast<std::size_t>(i) * ca] + ca,
                      &out[static_cast<std::size_t>(i) * (ca + cb)]);
            std::copy(&b.values()[static_cast<std::size_t>(i) * cb], &b.values()[static_cast<std::size_t>(i) * cb] + cb,
                      &out[static_cast<std::size_t>(i) * (ca + cb) + ca]);
        }
    }
    bool rg = a.requires_grad() || b.requires_grad();
    Tensor result = detail::make_result(std::move(shape), std::move(out), rg, "concat");
    if (detail::tracing(rg)) {
        auto ai = a.impl(), bi = b.impl(), oi = result.impl();
        bool cols = (a.rank() == 2 && axis == 1);
        int rows = a.rank() == 2 ? a.dim(0) : 1;
        int ca = a.rank() == 2 && axis == 1 ? a.dim(1) : 0;
        int cb = b.rank() == 2 && axis == 1 ? b.dim(1) : 0;
        std::size_t na = a.size();
        Tape::current()->record([ai, bi, oi, cols, rows, ca, cb, na] {
            const auto& go = oi->grad();
            if (!cols) {
                if (ai->requires_grad) {
                    auto& ga = ai->grad();
                    for (std::size_t i = 0; i < na; ++i) ga[i] += go[i];
                }
                if (bi->requires_grad) {
                    auto& gb = bi->grad();
                    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[na + i];
                }
            } else {
                for (int i = 0; i < rows; ++i) {
                    if (ai->requires_grad) {
                        auto& ga = ai->grad();
                        for (int j = 0; j < ca; ++j)
                            ga[static_cast<std::size_t>(i) * ca + j] += go[static_cast<std::size_t>(i) * (ca + cb) + j];
                    }
                    if (bi->requires_grad) {
                        auto& gb = bi->grad();
                        for (int j = 0; j < cb; ++j)
                            gb[static_cast<std::size_t>(i) * cb + j] +=
                                go[static_cast<std::size_t>(i) * (ca + cb) + ca + j];
                    }
                }
            }
        });
    }
    return result;
}

// Column range [start, start+len) of a rank-2 tensor.
inline Tensor slice_cols(const Tensor& a, int start, int len) {
    if (a.rank() != 2) throw ShapeError("slice_cols requires a rank-2 tensor, got " + a.shape_str());
    if (start < 0 || len <= 0 || start + len > a.dim(1)) {
        throw IndexError("slice_cols [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") out of range for " + a.shape_str());
    }
    const int rows = a.dim(0), c = a.dim(1);
    std::vector<double> out(static_cast<std::size_t>(rows) * len);
    for (int i = 0; i < rows; ++i)
        std::copy(&a.values()[static_cast<std::size_t>(i) * c + start],
                  &a.values()[static_cast<std::size_t>(i) * c + start] + len,
                  &out[static_cast<std::size_t>(i) * len]);
    Tensor result = detail::make_result({rows, len}, std::move(out), a.requires_grad(), "slice_cols");
    if (detail::tracing(a.requires_grad())) {
        auto ai = a.impl(), oi = result.impl();
        Tape::current()->record([ai, oi, rows, c, start, len] {
            const auto& go = oi->grad();
            auto& ga = ai->grad();
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < len; ++j)
                    ga[static_cast<std::size_t>(i) * c + start + j] += go[static_cast<std::size_t>(i) * len + j];
        });
    }
    return result;
}

// Single row of a rank-2 tensor as a rank-1 vector.
inline Tensor row(const Tensor& a, int i) {
    if (a.rank() != 2) throw ShapeError("row requires a rank-2 tensor, got " + a.shape_str());
    if (i < 0 || i >= a.dim(0)) throw IndexError("row index " + std::to_string(i) + " out of range");
    Tensor r = embedding_lookup(a, {i});
    return reshape(r, {a.dim(1)});
}

inline Tensor sum(const Tensor& a) {
    double s = std::accumulate(a.values().begin(), a.values().end(), 0.0);
    Tensor result = detail::make_result({1}, {s}, a.requires_grad(), "sum");
    if (detail::tracing(a.requires_grad())) {
        auto ai = a.impl(), oi = result.impl();
        Tape::current()->record([ai, oi] {
            const double g = oi->grad()[0];
            auto& ga = ai->grad();
            for (double& x : ga) x += g;
        });
    }
    return result;
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

// m (N x d) plus bias vector b (d) added to every row.
inline Tensor add_row_bias(const Tensor& m, const Tensor& b) {
    if (m.rank() != 2 || b.rank() != 1 || m.dim(1) != b.dim(0)) {
        throw ShapeError("add_row_bias requires (NxD, D), got " + m.shape_str() + " and " + b.shape_str());
    }
    const int rows = m.dim(0), d = m.dim(1);
    std::vector<double> out(m.size());
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < d; ++j)
            out[static_cast<std::size_t>(i) * d + j] = m.values()[static_cast<std::size_t>(i) * d + j] + b.values()[j];
    bool rg = m.requires_grad() || b.requires_grad();
    Tensor result = detail::make_result(m.shape(), std::move(out), rg, "add_row_bias");
    if (detail::tracing(rg)) {
        auto mi = m.impl(), bi = b.impl(), oi = result.impl();
        Tape::current()->record([mi, bi, oi, rows, d] {
            const auto& go = oi->grad();
            if (mi->requires_grad) {
                auto& gm = mi->grad();
                for (std::size_t i = 0; i < go.size(); ++i) gm[i] += go[i];
            }
            if (bi->requires_grad) {
                auto& gb = bi->grad();
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < d; ++j) gb[j] += go[static_cast<std::size_t>(i) * d + j];
            }
        });
    }
    return result;
}

// Dropout with an explicit keep mask drawn by the caller; identity when rate==0.
inline Tensor dropout(const Tensor& a, double rate, const BoolVec& keep) {
    if (rate < 0.0 || rate >= 1.0) throw UsageError("dropout rate must be in [0, 1)");
    if (rate == 0.0) return a;
    if (keep.size() != a.size()) throw ShapeError("dropout mask length mismatch");
    const double inv_keep = 1.0 / (1.0 - rate);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep[i] ? a.values()[i] * inv_keep : 0.0;
    Tensor result = detail::make_result(a.shape(), std::move(out), a.requires_grad(), "dropout");
    if (detail::tracing(a.requires_grad())) {
        auto ai = a.impl(), oi = result.impl();
        BoolVec k = keep;
        Tape::current()->record([ai, oi, k, inv_keep] {
            const auto& go = oi->grad();
            auto& ga = ai->grad();
            for (std::size_t i = 0; i < go.size(); ++i)
                if (k[i]) ga[i] += go[i] * inv_keep;
        });
    }
    return result;
}

// ---------------------------------------------------------------------------
// backward + gradient checking

inline void backward(const Tensor& loss, Tape& tape) {
    if (loss.size() != 1) {
        throw UsageError("backward requires a scalar loss, got " + loss.shape_str());
    }
    loss.impl()->grad()[0] += 1.0;
    tape.replay_reverse();
    tape.clear();
}

inline void zero_grads(const std::vector<Tensor>& params) {
    for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
}

// Max over all parameter entries of |analytic - central difference| relative error.
inline double gradient_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                             double eps) {
    if (eps <= 0) throw UsageError("gradient_check eps must be positive");
    zero_grads(params);
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = f();
        backward(loss, tape);
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const Tensor& p : params) analytic.push_back(p.grad());

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double orig = p.values()[i];
            p.values_mut()[i] = orig + eps;
            const double up = f().item();
            p.values_mut()[i] = orig - eps;
            const double down = f().item();
            p.values_mut()[i] = orig;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw NumericError("gradient_check: non-finite loss during finite differencing");
            }
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[pi][i];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
        }
    }
    return max_rel;
}

}  // namespace xmodal
