#include "ei/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <numeric>

namespace ei {

namespace debug {
namespace {
std::atomic<bool> g_fault{false};
}
void set_backward_fault(bool on) { g_fault.store(on, std::memory_order_relaxed); }
bool backward_fault() { return g_fault.load(std::memory_order_relaxed); }
}  // namespace debug

namespace {

void quantize_inplace(std::vector<double>& v) {
    if (precision() == Precision::f32) {
        for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
    }
}

std::vector<double>& out_values(Tensor& t) { return t.node()->values; }

template <typename F>
void maybe_record(const char* op, std::initializer_list<const Tensor*> ins, Tensor& out, F&& fn) {
    if (!recording(ins)) return;
    out.set_requires_grad(true);
    std::vector<std::uint64_t> ids;
    ids.reserve(ins.size());
    for (const Tensor* t : ins) {
        if (t && t->defined()) ids.push_back(t->id());
    }
    Tape::current()->record(op, std::move(ids), out.id(), std::forward<F>(fn));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shapes disagree: " + a.shape_str() + " vs " + b.shape_str());
    }
}

void require_rank(const char* op, const Tensor& t, std::int64_t rank) {
    if (t.ndim() != rank) {
        throw ShapeError(std::string(op) + ": expected rank-" + std::to_string(rank) + " tensor, got " +
                         t.shape_str());
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    Tensor out = Tensor::zeros(a.shape());
    auto& ov = out_values(out);
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    quantize_inplace(ov);
    maybe_record("add", {&a, &b}, out, [a = a, b = b, out]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        if (a.requires_grad()) {
            auto da = a.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        }
        if (b.requires_grad()) {
            auto db = b.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
        }
    });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    Tensor out = Tensor::zeros(a.shape());
    auto& ov = out_values(out);
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    quantize_inplace(ov);
    maybe_record("sub", {&a, &b}, out, [a = a, b = b, out]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        if (a.requires_grad()) {
            auto da = a.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        }
        if (b.requires_grad()) {
            auto db = b.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
        }
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    Tensor out = Tensor::zeros(a.shape());
    auto& ov = out_values(out);
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    quantize_inplace(ov);
    maybe_record("mul", {&a, &b}, out, [a = a, b = b, out]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        auto av = a.values(), bv = b.values();
        if (a.requires_grad()) {
            auto da = a.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
        }
        if (b.requires_grad()) {
            auto db = b.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
        }
    });
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    auto& ov = out_values(out);
    auto av = a.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
    quantize_inplace(ov);
    maybe_record("scale", {&a}, out, [a = a, out, c]() mutable {
        if (!out.has_grad() || !a.requires_grad()) return;
        auto g = out.grad();
        auto da = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * c;
    });
    return out;
}

namespace {

// out[n x q] += x[n x p] @ w[p x q]
void matmul_acc(const double* x, const double* w, double* out, std::int64_t n, std::int64_t p,
                std::int64_t q) {
    for (std::int64_t i = 0; i < n; ++i) {
        const double* xi = x + i * p;
        double* oi = out + i * q;
        for (std::int64_t k = 0; k < p; ++k) {
            const double xv = xi[k];
            const double* wk = w + k * q;
            for (std::int64_t j = 0; j < q; ++j) oi[j] += xv * wk[j];
        }
    }
}

// out[n x q] += x[n x p] @ w[q x p]^T
void matmul_t_acc(const double* x, const double* w, double* out, std::int64_t n, std::int64_t p,
                  std::int64_t q) {
    for (std::int64_t i = 0; i < n; ++i) {
        const double* xi = x + i * p;
        double* oi = out + i * q;
        for (std::int64_t j = 0; j < q; ++j) {
            const double* wj = w + j * p;
            double acc = 0.0;
            for (std::int64_t k = 0; k < p; ++k) acc += xi[k] * wj[k];
            oi[j] += acc;
        }
    }
}

// dw[p x q] += x[n x p]^T @ g[n x q]
void matmul_at_acc(const double* x, const double* g, double* dw, std::int64_t n, std::int64_t p,
                   std::int64_t q) {
    for (std::int64_t i = 0; i < n; ++i) {
        const double* xi = x + i * p;
        const double* gi = g + i * q;
        for (std::int64_t k = 0; k < p; ++k) {
            const double xv = xi[k];
            double* dwk = dw + k * q;
            for (std::int64_t j = 0; j < q; ++j) dwk[j] += xv * gi[j];
        }
    }
}

}  // namespace

Tensor affine(const Tensor& x, const Tensor& w, const Tensor* b) {
    require_rank("affine", x, 2);
    require_rank("affine", w, 2);
    const std::int64_t n = x.dim(0), p = x.dim(1), q = w.dim(1);
    if (w.dim(0) != p) {
        throw ShapeError("affine: inner dimensions disagree: " + x.shape_str() + " vs " + w.shape_str());
    }
    if (b) {
        require_rank("affine", *b, 1);
        if (b->dim(0) != q) {
            throw ShapeError("affine: bias length disagrees: " + w.shape_str() + " vs " + b->shape_str());
        }
    }
    Tensor out = Tensor::zeros({n, q});
    auto& ov = out_values(out);
    matmul_acc(x.values().data(), w.values().data(), ov.data(), n, p, q);
    if (b) {
        auto bv = b->values();
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t j = 0; j < q; ++j) ov[i * q + j] += bv[j];
        }
    }
    quantize_inplace(ov);
    Tensor bias = b ? *b : Tensor();
    maybe_record("affine", {&x, &w, b}, out, [x = x, w = w, bias, out, n, p, q]() mutable {
        if (!out.has_grad()) return;
        const double* g = out.grad().data();
        if (x.requires_grad()) {
            // dx = g @ w^T
            matmul_t_acc(g, w.values().data(), x.grad_buffer().data(), n, q, p);
        }
        if (w.requires_grad()) {
            matmul_at_acc(x.values().data(), g, w.grad_buffer().data(), n, p, q);
        }
        if (bias.defined() && bias.requires_grad()) {
            auto db = bias.grad_buffer();
            for (std::int64_t i = 0; i < n; ++i) {
                for (std::int64_t j = 0; j < q; ++j) db[j] += g[i * q + j];
            }
        }
    });
    return out;
}

Tensor linear_t(const Tensor& x, const Tensor& w, const Tensor* b) {
    require_rank("linear_t", x, 2);
    require_rank("linear_t", w, 2);
    const std::int64_t n = x.dim(0), p = x.dim(1), q = w.dim(0);
    if (w.dim(1) != p) {
        throw ShapeError("linear_t: inner dimensions disagree: " + x.shape_str() + " vs " + w.shape_str());
    }
    if (b) {
        require_rank("linear_t", *b, 1);
        if (b->dim(0) != q) {
            throw ShapeError("linear_t: bias length disagrees: " + w.shape_str() + " vs " + b->shape_str());
        }
    }
    Tensor out = Tensor::zeros({n, q});
    auto& ov = out_values(out);
    matmul_t_acc(x.values().data(), w.values().data(), ov.data(), n, p, q);
    if (b) {
        auto bv = b->values();
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t j = 0; j < q; ++j) ov[i * q + j] += bv[j];
        }
    }
    quantize_inplace(ov);
    Tensor bias = b ? *b : Tensor();
    maybe_record("linear_t", {&x, &w, b}, out, [x = x, w = w, bias, out, n, p, q]() mutable {
        if (!out.has_grad()) return;
        const double* g = out.grad().data();
        if (x.requires_grad()) {
            // dx = g @ w
            matmul_acc(g, w.values().data(), x.grad_buffer().data(), n, q, p);
        }
        if (w.requires_grad()) {
            // dw = g^T @ x
            matmul_at_acc(g, x.values().data(), w.grad_buffer().data(), n, q, p);
        }
        if (bias.defined() && bias.requires_grad()) {
            auto db = bias.grad_buffer();
            for (std::int64_t i = 0; i < n; ++i) {
                for (std::int64_t j = 0; j < q; ++j) db[j] += g[i * q + j];
            }
        }
    });
    return out;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    require_rank("bmm", a, 3);
    require_rank("bmm", b, 3);
    const std::int64_t bs = a.dim(0), n = a.dim(1), p = a.dim(2), q = b.dim(2);
    if (b.dim(0) != bs || b.dim(1) != p) {
        throw ShapeError("bmm: shapes disagree: " + a.shape_str() + " vs " + b.shape_str());
    }
    Tensor out = Tensor::zeros({bs, n, q});
    auto& ov = out_values(out);
    for (std::int64_t s = 0; s < bs; ++s) {
        matmul_acc(a.values().data() + s * n * p, b.values().data() + s * p * q, ov.data() + s * n * q,
                   n, p, q);
    }
    quantize_inplace(ov);
    maybe_record("bmm", {&a, &b}, out, [a = a, b = b, out, bs, n, p, q]() mutable {
        if (!out.has_grad()) return;
        const double* g = out.grad().data();
        for (std::int64_t s = 0; s < bs; ++s) {
            const double* gs = g + s * n * q;
            if (a.requires_grad()) {
                matmul_t_acc(gs, b.values().data() + s * p * q, a.grad_buffer().data() + s * n * p, n, q, p);
            }
            if (b.requires_grad()) {
                matmul_at_acc(a.values().data() + s * n * p, gs, b.grad_buffer().data() + s * p * q, n, p, q);
            }
        }
    });
    return out;
}

Tensor bmm_t(const Tensor& a, const Tensor& b) {
    require_rank("bmm_t", a, 3);
    require_rank("bmm_t", b, 3);
    const std::int64_t bs = a.dim(0), n = a.dim(1), p = a.dim(2), q = b.dim(1);
    if (b.dim(0) != bs || b.dim(2) != p) {
        throw ShapeError("bmm_t: shapes disagree: " + a.shape_str() + " vs " + b.shape_str());
    }
    Tensor out = Tensor::zeros({bs, n, q});
    auto& ov = out_values(out);
    for (std::int64_t s = 0; s < bs; ++s) {
        matmul_t_acc(a.values().data() + s * n * p, b.values().data() + s * q * p, ov.data() + s * n * q,
                     n, p, q);
    }
    quantize_inplace(ov);
    maybe_record("bmm_t", {&a, &b}, out, [a = a, b = b, out, bs, n, p, q]() mutable {
        if (!out.has_grad()) return;
        const double* g = out.grad().data();
        for (std::int64_t s = 0; s < bs; ++s) {
            const double* gs = g + s * n * q;
            if (a.requires_grad()) {
                // da = g @ b
                matmul_acc(gs, b.values().data() + s * q * p, a.grad_buffer().data() + s * n * p, n, q, p);
            }
            if (b.requires_grad()) {
                // db = g^T @ a
                matmul_at_acc(gs, a.values().data() + s * n * p, b.grad_buffer().data() + s * q * p, n, q, p);
            }
        }
    });
    return out;
}

namespace {

std::vector<std::int64_t> permuted_shape(const std::vector<std::int64_t>& shape,
                                         const std::vector<int>& perm) {
    std::vector<std::int64_t> out(shape.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out[i] = shape[static_cast<std::size_t>(perm[i])];
    return out;
}

void apply_permute(const double* in, double* out, const std::vector<std::int64_t>& in_shape,
                   const std::vector<int>& perm, bool inverse) {
    const std::size_t rank = in_shape.size();
    std::vector<std::int64_t> in_strides(rank, 1);
    for (std::size_t i = rank - 1; i > 0; --i) in_strides[i - 1] = in_strides[i] * in_shape[i];
    auto out_shape = permuted_shape(in_shape, perm);
    std::vector<std::int64_t> idx(rank, 0);
    const std::int64_t total = shape_numel(in_shape);
    for (std::int64_t flat = 0; flat < total; ++flat) {
        // idx iterates output coordinates row-major.
        std::int64_t in_flat = 0;
        for (std::size_t i = 0; i < rank; ++i) in_flat += idx[i] * in_strides[static_cast<std::size_t>(perm[i])];
        if (inverse) {
            out[in_flat] += in[flat];
        } else {
            out[flat] = in[in_flat];
        }
        for (std::size_t i = rank; i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
    if (x.ndim() != 2 && x.ndim() != 3) {
        throw ShapeError("permute: supports rank 2 or 3, got " + x.shape_str());
    }
    if (static_cast<std::int64_t>(perm.size()) != x.ndim()) {
        throw ShapeError("permute: permutation length " + std::to_string(perm.size()) +
                         " does not match rank of " + x.shape_str());
    }
    std::vector<bool> seen(perm.size(), false);
    for (int p : perm) {
        if (p < 0 || p >= static_cast<int>(perm.size()) || seen[static_cast<std::size_t>(p)]) {
            throw ShapeError("permute: invalid permutation for " + x.shape_str());
        }
        seen[static_cast<std::size_t>(p)] = true;
    }
    Tensor out = Tensor::zeros(permuted_shape(x.shape(), perm));
    apply_permute(x.values().data(), out_values(out).data(), x.shape(), perm, false);
    maybe_record("permute", {&x}, out, [x = x, out, perm]() mutable {
        if (!out.has_grad() || !x.requires_grad()) return;
        apply_permute(out.grad().data(), x.grad_buffer().data(), x.shape(), perm, true);
    });
    return out;
}

Tensor reshape(const Tensor& x, std::vector<std::int64_t> shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: element count mismatch: " + x.shape_str() + " vs " +
                         shape_to_string(shape));
    }
    Tensor out = Tensor::zeros(shape);
    auto& ov = out_values(out);
    auto xv = x.values();
    std::copy(xv.begin(), xv.end(), ov.begin());
    maybe_record("reshape", {&x}, out, [x = x, out]() mutable {
        if (!out.has_grad() || !x.requires_grad()) return;
        auto g = out.grad();
        auto dx = x.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    });
    return out;
}

Tensor slice_rows(const Tensor& x, std::int64_t r0, std::int64_t r1) {
    require_rank("slice_rows", x, 2);
    const std::int64_t n = x.dim(0), m = x.dim(1);
    if (r0 < 0 || r1 > n || r0 >= r1) {
        throw ShapeError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") invalid for " + x.shape_str());
    }
    Tensor out = Tensor::zeros({r1 - r0, m});
    auto& ov = out_values(out);
    auto xv = x.values();
    std::copy(xv.begin() + r0 * m, xv.begin() + r1 * m, ov.begin());
    maybe_record("slice_rows", {&x}, out, [x = x, out, r0, m]() mutable {
        if (!out.has_grad() || !x.requires_grad()) return;
        auto g = out.grad();
        auto dx = x.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) dx[static_cast<std::size_t>(r0 * m) + i] += g[i];
    });
    return out;
}

Tensor slice_cols(const Tensor& x, std::int64_t c0, std::int64_t c1) {
    require_rank("slice_cols", x, 2);
    const std::int64_t n = x.dim(0), m = x.dim(1);
    if (c0 < 0 || c1 > m || c0 >= c1) {
        throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") invalid for " + x.shape_str());
    }
    const std::int64_t w = c1 - c0;
    Tensor out = Tensor::zeros({n, w});
    auto& ov = out_values(out);
    auto xv = x.values();
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy(xv.begin() + i * m + c0, xv.begin() + i * m + c1, ov.begin() + i * w);
    }
    maybe_record("slice_cols", {&x}, out, [x = x, out, c0, m, w, n]() mutable {
        if (!out.has_grad() || !x.requires_grad()) return;
        auto g = out.grad();
        auto dx = x.grad_buffer();
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t j = 0; j < w; ++j) dx[i * m + c0 + j] += g[i * w + j];
        }
    });
    return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::int64_t m = parts[0].dim(1);
    std::int64_t rows = 0;
    for (const Tensor& p : parts) {
        require_rank("concat_rows", p, 2);
        if (p.dim(1) != m) {
            throw ShapeError("concat_rows: column mismatch: " + parts[0].shape_str() + " vs " +
                             p.shape_str());
        }
        rows += p.dim(0);
    }
    Tensor out = Tensor::zeros({rows, m});
    auto& ov = out_values(out);
    std::int64_t offset = 0;
    for (const Tensor& p : parts) {
        auto pv = p.values();
        std::copy(pv.begin(), pv.end(), ov.begin() + offset);
        offset += p.numel();
    }
    bool rec = false;
    for (const Tensor& p : parts) {
        if (recording({&p})) rec = true;
    }
    if (rec) {
        out.set_requires_grad(true);
        std::vector<Tensor> held(parts.begin(), parts.end());
        std::vector<std::uint64_t> ids;
        for (const Tensor& p : held) ids.push_back(p.id());
        Tape::current()->record("concat_rows", std::move(ids), out.id(), [held, out]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            std::size_t offset = 0;
            for (Tensor& p : held) {
                const std::size_t len = static_cast<std::size_t>(p.numel());
                if (p.requires_grad()) {
                    auto dp = p.grad_buffer();
                    for (std::size_t i = 0; i < len; ++i) dp[i] += g[offset + i];
                }
                offset += len;
            }
        });
    }
    return out;
}

Tensor row_scale(const Tensor& x, const Tensor& s) {
    require_rank("row_scale", x, 2);
    require_rank("row_scale", s, 1);
    const std::int64_t n = x.dim(0), m = x.dim(1);
    if (s.dim(0) != n) {
        throw ShapeError("row_scale: shapes disagree: " + x.shape_str() + " vs " + s.shape_str());
    }
    Tensor out = Tensor::zeros({n, m});
    auto& ov = out_values(out);
    auto xv = x.values();
    auto sv = s.values();
    for (std::int64_t i = 0; i < n; ++i) {
        const double si = sv[i];
        for (std::int64_t j = 0; j < m; ++j) ov[i * m + j] = xv[i * m + j] * si;
    }
    quantize_inplace(ov);
    maybe_record("row_scale", {&x, &s}, out, [x = x, s = s, out, n, m]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        auto xv = x.values();
        auto sv = s.values();
        if (x.requires_grad()) {
            auto dx = x.grad_buffer();
            for (std::int64_t i = 0; i < n; ++i) {
                for (std::int64_t j = 0; j < m; ++j) dx[i * m + j] += g[i * m + j] * sv[i];
            }
        }
        if (s.requires_grad()) {
            auto ds = s.grad_buffer();
            for (std::int64_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (std::int64_t j = 0; j < m; ++j) acc += g[i * m + j] * xv[i * m + j];
                ds[i] += acc;
            }
        }
    });
    return out;
}

Tensor softmax(const Tensor& x, std::int64_t axis) {
    const std::int64_t rank = x.ndim();
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) {
        throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + x.shape_str());
    }
    const std::int64_t k = x.dim(axis);
    std::int64_t outer = 1, inner = 1;
    for (std::int64_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::int64_t i = axis + 1; i < rank; ++i) inner *= x.dim(i);

    Tensor out = Tensor::zeros(x.shape());
    auto& ov = out_values(out);
    auto xv = x.values();
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * k * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::int64_t j = 0; j < k; ++j) {
                const double v = xv[base + j * inner];
                if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
                mx = std::max(mx, v);
            }
            double sum = 0.0;
            for (std::int64_t j = 0; j < k; ++j) {
                const double e = std::exp(xv[base + j * inner] - mx);
                ov[base + j * inner] = e;
                sum += e;
            }
            const double inv = 1.0 / sum;
            for (std::int64_t j = 0; j < k; ++j) ov[base + j * inner] *= inv;
        }
    }
    quantize_inplace(ov);
    maybe_record("softmax", {&x}, out, [x = x, out, outer, inner, k]() mutable {
        if (!out.has_grad() || !x.requires_grad()) return;
        auto g = out.grad();
        auto yv = out.values();
        auto dx = x.grad_buffer();
        for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t in = 0; in < inner; ++in) {
                const std::int64_t base = o * k * inner + in;
                double dot = 0.0;
                for (std::int64_t j = 0; j < k; ++j) dot += g[base + j * inner] * yv[base + j * inner];
                for (std::int64_t j = 0; j < k; ++j) {
                    dx[base + j * inner] += yv[base + j * inner] * (g[base + j * inner] - dot);
                }
            }
        }
    });
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank("layer_norm", x, 2);
    require_rank("layer_norm", gamma, 1);
    require_rank("layer_norm", beta, 1);
    const std::int64_t n = x.dim(0), d = x.dim(1);
    if (gamma.dim(0) != d || beta.dim(0) != d) {
        throw ShapeError("layer_norm: scale/shift length disagrees: " + x.shape_str() + " vs " +
                         gamma.shape_str() + "/" + beta.shape_str());
    }
    Tensor out = Tensor::zeros({n, d});
    auto& ov = out_values(out);
    auto xv = x.values();
    auto gv = gamma.values(), bv = beta.values();
    std::vector<double> xhat(static_cast<std::size_t>(n * d));
    std::vector<double> invstd(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mean += xv[i * d + j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double c = xv[i * d + j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        invstd[static_cast<std::size_t>(i)] = is;
        for (std::int64_t j = 0; j < d; ++j) {
            const double xh = (xv[i * d + j] - mean) * is;
            xhat[static_cast<std::size_t>(i * d + j)] = xh;
            ov[i * d + j] = gv[j] * xh + bv[j];
        }
    }
    quantize_inplace(ov);
    maybe_record("layer_norm", {&x, &gamma, &beta}, out,
                 [x = x, gamma = gamma, beta = beta, out, n, d, xhat = std::move(xhat), invstd = std::move(invstd)]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        auto gv = gamma.values();
        if (gamma.requires_grad()) {
            auto dg = gamma.grad_buffer();
            for (std::int64_t i = 0; i < n; ++i) {
                for (std::int64_t j = 0; j < d; ++j) {
                    dg[j] += g[i * d + j] * xhat[static_cast<std::size_t>(i * d + j)];
                }
            }
        }
        if (beta.requires_grad()) {
            auto db = beta.grad_buffer();
            for (std::int64_t i = 0; i < n; ++i) {
                for (std::int64_t j = 0; j < d; ++j) db[j] += g[i * d + j];
            }
        }
        if (x.requires_grad()) {
            auto dx = x.grad_buffer();
            for (std::int64_t i = 0; i < n; ++i) {
                double mean_gh = 0.0, mean_ghx = 0.0;
                for (std::int64_t j = 0; j < d; ++j) {
                    const double gh = g[i * d + j] * gv[j];
                    mean_gh += gh;
                    mean_ghx += gh * xhat[static_cast<std::size_t>(i * d + j)];
                }
                mean_gh /= static_cast<double>(d);
                mean_ghx /= static_cast<double>(d);
                const double is = invstd[static_cast<std::size_t>(i)];
                for (std::int64_t j = 0; j < d; ++j) {
                    const double gh = g[i * d + j] * gv[j];
                    dx[i * d + j] +=
                        is * (gh - mean_gh - xhat[static_cast<std::size_t>(i * d + j)] * mean_ghx);
                }
            }
        }
    });
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    auto& ov = out_values(out);
    auto xv = x.values();
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    for (std::size_t i = 0; i < ov.size(); ++i) {
        ov[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * inv_sqrt2));
    }
    quantize_inplace(ov);
    maybe_record("gelu", {&x}, out, [x = x, out]() mutable {
        if (!out.has_grad() || !x.requires_grad()) return;
        auto g = out.grad();
        auto xv = x.values();
        auto dx = x.grad_buffer();
        constexpr double inv_sqrt2 = 0.7071067811865475244;
        constexpr double inv_sqrt2pi = 0.3989422804014326779;
        const double fault = debug::backward_fault() ? 1.01 : 1.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = xv[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            dx[i] += fault * g[i] * (cdf + v * pdf);
        }
    });
    return out;
}

Tensor mean_pool(const Tensor& x) {
    require_rank("mean_pool", x, 2);
    const std::int64_t n = x.dim(0), m = x.dim(1);
    Tensor out = Tensor::zeros({m});
    auto& ov = out_values(out);
    auto xv = x.values();
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < m; ++j) ov[j] += xv[i * m + j];
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (std::int64_t j = 0; j < m; ++j) ov[j] *= inv;
    quantize_inplace(ov);
    maybe_record("mean_pool", {&x}, out, [x = x, out, n, m, inv]() mutable {
        if (!out.has_grad() || !x.requires_grad()) return;
        auto g = out.grad();
        auto dx = x.grad_buffer();
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t j = 0; j < m; ++j) dx[i * m + j] += g[j] * inv;
        }
    });
    return out;
}

Tensor sum_all(const Tensor& x) {
    Tensor out = Tensor::zeros({1});
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    out_values(out)[0] = quantize(acc);
    maybe_record("sum_all", {&x}, out, [x = x, out]() mutable {
        if (!out.has_grad() || !x.requires_grad()) return;
        const double g = out.grad()[0];
        auto dx = x.grad_buffer();
        for (auto& v : dx) v += g;
    });
    return out;
}

Tensor mean_all(const Tensor& x) {
    Tensor out = Tensor::zeros({1});
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    const double inv = 1.0 / static_cast<double>(x.numel());
    out_values(out)[0] = quantize(acc * inv);
    maybe_record("mean_all", {&x}, out, [x = x, out, inv]() mutable {
        if (!out.has_grad() || !x.requires_grad()) return;
        const double g = out.grad()[0] * inv;
        auto dx = x.grad_buffer();
        for (auto& v : dx) v += g;
    });
    return out;
}

Tensor cross_entropy(std::span<const double> y, const Tensor& logits, LabelMode mode) {
    require_rank("cross_entropy", logits, 1);
    const std::int64_t c = logits.dim(0);
    if (static_cast<std::int64_t>(y.size()) != c) {
        throw ShapeError("cross_entropy: label length " + std::to_string(y.size()) +
                         " vs logits " + logits.shape_str());
    }
    if (c < 2) throw ShapeError("cross_entropy: needs at least 2 classes, got " + logits.shape_str());
    double hot = 0.0;
    for (double v : y) {
        if (v != 0.0 && v != 1.0) {
            throw ShapeError("cross_entropy: labels must be 0/1 encoded");
        }
        hot += v;
    }
    if (mode == LabelMode::multiclass && hot != 1.0) {
        throw ShapeError("cross_entropy: multiclass label must be one-hot");
    }

    auto zv = logits.values();
    Tensor out = Tensor::zeros({1});
    std::vector<double> label(y.begin(), y.end());
    if (mode == LabelMode::multiclass) {
        double mx = -std::numeric_limits<double>::infinity();
        for (double z : zv) mx = std::max(mx, z);
        double sum = 0.0;
        for (double z : zv) sum += std::exp(z - mx);
        const double lse = mx + std::log(sum);
        double dot = 0.0;
        for (std::int64_t j = 0; j < c; ++j) dot += label[static_cast<std::size_t>(j)] * zv[j];
        out_values(out)[0] = quantize(lse - dot);
        maybe_record("cross_entropy", {&logits}, out, [logits = logits, out, label, lse]() mutable {
            if (!out.has_grad() || !logits.requires_grad()) return;
            const double g = out.grad()[0];
            auto zv = logits.values();
            auto dz = logits.grad_buffer();
            for (std::size_t j = 0; j < label.size(); ++j) {
                const double p = std::exp(zv[j] - lse);
                dz[j] += g * (p - label[j]);
            }
        });
    } else {
        double acc = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
            const double z = zv[j];
            acc += std::max(z, 0.0) - label[static_cast<std::size_t>(j)] * z + std::log1p(std::exp(-std::abs(z)));
        }
        out_values(out)[0] = quantize(acc / static_cast<double>(c));
        maybe_record("cross_entropy", {&logits}, out, [logits = logits, out, label, c]() mutable {
            if (!out.has_grad() || !logits.requires_grad()) return;
            const double g = out.grad()[0] / static_cast<double>(c);
            auto zv = logits.values();
            auto dz = logits.grad_buffer();
            for (std::size_t j = 0; j < label.size(); ++j) {
                const double sig = 1.0 / (1.0 + std::exp(-zv[j]));
                dz[j] += g * (sig - label[j]);
            }
        });
    }
    return out;
}

}  // namespace ei
