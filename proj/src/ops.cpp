#include "dualvit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dualvit/parallel.hpp"

namespace dualvit {

namespace {

thread_local MacTally* t_tally = nullptr;

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<NodePtr<T>> parents,
                      std::function<void(detail::Node<T>&)> backward_fn, const char* op) {
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    if (debug_checks_enabled()) {
        for (T v : node->data) {
            if (!std::isfinite(v)) throw NumericError(std::string(op) + ": produced a non-finite value");
        }
    }
    const bool tracked = grad_enabled() && std::any_of(parents.begin(), parents.end(),
                                                       [](const NodePtr<T>& p) { return p->requires_grad; });
    if (tracked) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>(std::move(node));
}

std::size_t prod(const Shape& s, std::size_t begin, std::size_t end) {
    std::size_t n = 1;
    for (std::size_t i = begin; i < end; ++i) n *= s[i];
    return n;
}

// c[rows x cols] += a * b, with a(i, p) = a[i*a_row + p*a_col] and
// b(p, j) = b[p*b_row + j*b_col]. Summation order per output is fixed.
template <typename T>
void gemm(std::size_t rows, std::size_t cols, std::size_t inner, const T* a, std::size_t a_row,
          std::size_t a_col, const T* b, std::size_t b_row, std::size_t b_col, T* c) {
    parallel_for(rows, std::size_t{1} << 18, inner * cols, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            T* crow = c + i * cols;
            for (std::size_t p = 0; p < inner; ++p) {
                const T av = a[i * a_row + p * a_col];
                const T* brow = b + p * b_row;
                if (b_col == 1) {
                    for (std::size_t j = 0; j < cols; ++j) crow[j] += av * brow[j];
                } else {
                    for (std::size_t j = 0; j < cols; ++j) crow[j] += av * brow[j * b_col];
                }
            }
        }
    });
}

// c[rows x cols] += a[rows x inner] * b[cols x inner]^T, both row-major.
template <typename T>
void gemm_nt(std::size_t rows, std::size_t cols, std::size_t inner, const T* a, const T* b, T* c) {
    parallel_for(rows, std::size_t{1} << 18, inner * cols, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const T* arow = a + i * inner;
            for (std::size_t j = 0; j < cols; ++j) {
                const T* brow = b + j * inner;
                T acc = T(0);
                for (std::size_t p = 0; p < inner; ++p) acc += arow[p] * brow[p];
                c[i * cols + j] += acc;
            }
        }
    });
}

void check_axis(const Shape& s, std::size_t axis, const char* op) {
    if (axis >= s.size()) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                             shape_str(s));
    }
}

}  // namespace

MacTally::MacTally() : outer_(t_tally) { t_tally = this; }
MacTally::~MacTally() { t_tally = outer_; }

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    auto mismatch = [&] {
        return DimensionError("matmul: incompatible shapes " + shape_str(as) + " and " + shape_str(bs));
    };
    if (as.size() < 2 || bs.size() < 2) throw mismatch();
    const bool shared_b = bs.size() == 2;
    if (!shared_b && (bs.size() != as.size() || !std::equal(as.begin(), as.end() - 2, bs.begin()))) {
        throw mismatch();
    }
    const std::size_t rows = as[as.size() - 2];
    const std::size_t inner = as.back();
    const std::size_t cols = bs.back();
    if (bs[bs.size() - 2] != inner) throw mismatch();
    const std::size_t batch = prod(as, 0, as.size() - 2);

    Shape out_shape(as.begin(), as.end() - 1);
    out_shape.push_back(cols);
    std::vector<T> out(batch * rows * cols, T(0));
    const std::size_t b_step = shared_b ? 0 : inner * cols;
    for (std::size_t n = 0; n < batch; ++n) {
        gemm(rows, cols, inner, a.data().data() + n * rows * inner, inner, 1, b.data().data() + n * b_step, cols,
             std::size_t{1}, out.data() + n * rows * cols);
    }
    if (t_tally) t_tally->add(static_cast<std::uint64_t>(batch) * rows * inner * cols);

    auto fn = [batch, rows, inner, cols, b_step](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const T* g = self.grad.data();
        for (std::size_t n = 0; n < batch; ++n) {
            const T* gn = g + n * rows * cols;
            if (pa.requires_grad) {
                gemm_nt(rows, inner, cols, gn, pb.data.data() + n * b_step, pa.grad_buffer().data() + n * rows * inner);
            }
            if (pb.requires_grad) {
                gemm(inner, cols, rows, pa.data.data() + n * rows * inner, std::size_t{1}, inner, gn, cols,
                     std::size_t{1}, pb.grad_buffer().data() + n * b_step);
            }
        }
    };
    return make_result<T>(std::move(out_shape), std::move(out), {a.node(), b.node()}, fn, "matmul");
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    const bool suffix = bs.size() <= as.size() && std::equal(bs.begin(), bs.end(), as.end() - bs.size());
    if (!suffix) {
        throw DimensionError("add: shape " + shape_str(bs) + " does not broadcast onto " + shape_str(as));
    }
    const std::size_t inner = b.numel();
    const std::size_t outer = a.numel() / inner;
    std::vector<T> out(a.data().begin(), a.data().end());
    const T* bd = b.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < inner; ++j) out[o * inner + j] += bd[j];
    }
    auto fn = [outer, inner](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& g = self.grad;
        if (pa.requires_grad) {
            auto ga = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (pb.requires_grad) {
            auto gb = pb.grad_buffer();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t j = 0; j < inner; ++j) gb[j] += g[o * inner + j];
            }
        }
    };
    return make_result<T>(as, std::move(out), {a.node(), b.node()}, fn, "add");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mul: shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto fn = [](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& g = self.grad;
        if (pa.requires_grad) {
            auto ga = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb.data[i];
        }
        if (pb.requires_grad) {
            auto gb = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa.data[i];
        }
    };
    return make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, fn, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    std::vector<T> out(a.data().begin(), a.data().end());
    for (T& v : out) v *= factor;
    auto fn = [factor](detail::Node<T>& self) {
        auto ga = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * self.grad[i];
    };
    return make_result<T>(a.shape(), std::move(out), {a.node()}, fn, "scale");
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& a) {
    if (a.ndim() == 0) throw DimensionError("softmax_lastdim: tensor has no last dimension");
    const std::size_t width = a.shape().back();
    const std::size_t rows = a.numel() / width;
    std::vector<T> out(a.numel());
    const T* x = a.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x + r * width;
        T* yr = out.data() + r * width;
        const T peak = *std::max_element(xr, xr + width);
        T total = T(0);
        for (std::size_t j = 0; j < width; ++j) {
            yr[j] = std::exp(xr[j] - peak);
            total += yr[j];
        }
        for (std::size_t j = 0; j < width; ++j) yr[j] /= total;
    }
    auto fn = [rows, width](detail::Node<T>& self) {
        auto gx = self.parents[0]->grad_buffer();
        const T* y = self.data.data();
        const T* g = self.grad.data();
        for (std::size_t r = 0; r < rows; ++r) {
            T dot = T(0);
            for (std::size_t j = 0; j < width; ++j) dot += g[r * width + j] * y[r * width + j];
            for (std::size_t j = 0; j < width; ++j) {
                gx[r * width + j] += y[r * width + j] * (g[r * width + j] - dot);
            }
        }
    };
    return make_result<T>(a.shape(), std::move(out), {a.node()}, fn, "softmax_lastdim");
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    if (a.ndim() == 0) throw DimensionError("layernorm: tensor has no channel dimension");
    if (!(eps > T(0))) throw ContractError("layernorm: eps must be positive");
    const std::size_t d = a.shape().back();
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
        throw DimensionError("layernorm: gamma " + shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()) +
                             " do not match channel dim " + std::to_string(d));
    }
    const std::size_t rows = a.numel() / d;
    std::vector<T> out(a.numel());
    std::vector<T> xhat(a.numel());
    std::vector<T> rstd(rows);
    const T* x = a.data().data();
    const T* g = gamma.data().data();
    const T* bt = beta.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x + r * d;
        T mu = T(0);
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<T>(d);
        T var = T(0);
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<T>(d);
        rstd[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (xr[j] - mu) * rstd[r];
            out[r * d + j] = g[j] * xhat[r * d + j] + bt[j];
        }
    }
    auto fn = [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const T* dy = self.grad.data();
        if (pg.requires_grad) {
            auto gg = pg.grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) gg[j] += dy[r * d + j] * xhat[r * d + j];
        }
        if (pb.requires_grad) {
            auto gb = pb.grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) gb[j] += dy[r * d + j];
        }
        if (px.requires_grad) {
            auto gx = px.grad_buffer();
            const T* gamma_v = pg.data.data();
            const T inv_d = T(1) / static_cast<T>(d);
            for (std::size_t r = 0; r < rows; ++r) {
                T mean_dxhat = T(0);
                T mean_dxhat_xhat = T(0);
                for (std::size_t j = 0; j < d; ++j) {
                    const T dxh = dy[r * d + j] * gamma_v[j];
                    mean_dxhat += dxh;
                    mean_dxhat_xhat += dxh * xhat[r * d + j];
                }
                mean_dxhat *= inv_d;
                mean_dxhat_xhat *= inv_d;
                for (std::size_t j = 0; j < d; ++j) {
                    const T dxh = dy[r * d + j] * gamma_v[j];
                    gx[r * d + j] += rstd[r] * (dxh - mean_dxhat - xhat[r * d + j] * mean_dxhat_xhat);
                }
            }
        }
    };
    return make_result<T>(a.shape(), std::move(out), {a.node(), gamma.node(), beta.node()}, fn, "layernorm");
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    constexpr T kAlpha = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T kCubic = T(0.044715);
    std::vector<T> out(a.numel());
    const T* x = a.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = x[i];
        out[i] = T(0.5) * v * (T(1) + std::tanh(kAlpha * (v + kCubic * v * v * v)));
    }
    auto fn = [](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto gx = px.grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const T v = px.data[i];
            const T t = std::tanh(kAlpha * (v + kCubic * v * v * v));
            const T dt = (T(1) - t * t) * kAlpha * (T(1) + T(3) * kCubic * v * v);
            gx[i] += self.grad[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
        }
    };
    return make_result<T>(a.shape(), std::move(out), {a.node()}, fn, "gelu");
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const Shape& first = parts.front().shape();
    check_axis(first, axis, "concat");
    std::vector<std::size_t> extents;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
        if (!ok) {
            throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(first) +
                                 " along axis " + std::to_string(axis));
        }
        extents.push_back(s[axis]);
    }
    const std::size_t outer = prod(first, 0, axis);
    const std::size_t inner = prod(first, axis + 1, first.size());
    const std::size_t total = std::accumulate(extents.begin(), extents.end(), std::size_t{0});
    Shape out_shape = first;
    out_shape[axis] = total;
    std::vector<T> out(outer * total * inner);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const std::size_t block = extents[k] * inner;
        const T* src = parts[k].data().data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy(src + o * block, src + (o + 1) * block, out.data() + o * total * inner + offset);
        }
        offset += block;
    }
    std::vector<NodePtr<T>> parents;
    for (const auto& p : parts) parents.push_back(p.node());
    auto fn = [outer, inner, total, extents](detail::Node<T>& self) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < extents.size(); ++k) {
            const std::size_t block = extents[k] * inner;
            auto& pk = *self.parents[k];
            if (pk.requires_grad) {
                auto gk = pk.grad_buffer();
                for (std::size_t o = 0; o < outer; ++o) {
                    const T* src = self.grad.data() + o * total * inner + offset;
                    for (std::size_t i = 0; i < block; ++i) gk[o * block + i] += src[i];
                }
            }
            offset += block;
        }
    };
    return make_result<T>(std::move(out_shape), std::move(out), std::move(parents), fn, "concat");
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length) {
    const Shape& s = a.shape();
    check_axis(s, axis, "slice");
    if (length == 0 || start + length > s[axis]) {
        throw DimensionError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                             ") out of bounds for axis " + std::to_string(axis) + " of " + shape_str(s));
    }
    const std::size_t outer = prod(s, 0, axis);
    const std::size_t inner = prod(s, axis + 1, s.size());
    const std::size_t full = s[axis];
    Shape out_shape = s;
    out_shape[axis] = length;
    std::vector<T> out(outer * length * inner);
    const T* src = a.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy(src + (o * full + start) * inner, src + (o * full + start + length) * inner,
                  out.data() + o * length * inner);
    }
    auto fn = [outer, inner, full, start, length](detail::Node<T>& self) {
        auto ga = self.parents[0]->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
            const T* g = self.grad.data() + o * length * inner;
            T* dst = ga.data() + (o * full + start) * inner;
            for (std::size_t i = 0; i < length * inner; ++i) dst[i] += g[i];
        }
    };
    return make_result<T>(std::move(out_shape), std::move(out), {a.node()}, fn, "slice");
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& a, std::size_t axis, std::span<const std::size_t> sizes) {
    check_axis(a.shape(), axis, "split");
    const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    if (total != a.shape()[axis]) {
        throw DimensionError("split: sizes sum to " + std::to_string(total) + " but axis " + std::to_string(axis) +
                             " of " + shape_str(a.shape()) + " has " + std::to_string(a.shape()[axis]));
    }
    std::vector<Tensor<T>> parts;
    std::size_t start = 0;
    for (std::size_t n : sizes) {
        parts.push_back(slice(a, axis, start, n));
        start += n;
    }
    return parts;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::size_t axis) {
    const Shape& s = a.shape();
    check_axis(s, axis, "mean");
    const std::size_t outer = prod(s, 0, axis);
    const std::size_t count = s[axis];
    const std::size_t inner = prod(s, axis + 1, s.size());
    Shape out_shape = s;
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    std::vector<T> out(outer * inner, T(0));
    const T* x = a.data().data();
    const T inv = T(1) / static_cast<T>(count);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t c = 0; c < count; ++c) {
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * count + c) * inner + i];
        }
        for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] *= inv;
    }
    auto fn = [outer, count, inner, inv](detail::Node<T>& self) {
        auto ga = self.parents[0]->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t c = 0; c < count; ++c)
                for (std::size_t i = 0; i < inner; ++i) ga[(o * count + c) * inner + i] += inv * self.grad[o * inner + i];
    };
    return make_result<T>(std::move(out_shape), std::move(out), {a.node()}, fn, "mean");
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T total = T(0);
    for (T v : a.data()) total += v;
    auto fn = [](detail::Node<T>& self) {
        auto ga = self.parents[0]->grad_buffer();
        for (T& v : ga) v += self.grad[0];
    };
    return make_result<T>(Shape{}, std::vector<T>{total}, {a.node()}, fn, "sum");
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    std::vector<T> out(a.data().begin(), a.data().end());
    auto fn = [](detail::Node<T>& self) {
        auto ga = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    };
    return make_result<T>(std::move(shape), std::move(out), {a.node()}, fn, "reshape");
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, std::span<const std::size_t> order) {
    const Shape& s = a.shape();
    const std::size_t nd = s.size();
    std::vector<bool> used(nd, false);
    bool ok = order.size() == nd;
    for (std::size_t i = 0; ok && i < nd; ++i) {
        ok = order[i] < nd && !used[order[i]];
        if (ok) used[order[i]] = true;
    }
    if (!ok) throw DimensionError("permute: invalid axis order for " + shape_str(s));

    std::vector<std::size_t> in_strides(nd, 1);
    for (std::size_t i = nd; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
    Shape out_shape(nd);
    std::vector<std::size_t> step(nd);  // input stride walked by each output axis
    for (std::size_t i = 0; i < nd; ++i) {
        out_shape[i] = s[order[i]];
        step[i] = in_strides[order[i]];
    }
    // offsets[k] = input offset of the k-th output element
    std::vector<std::size_t> offsets(a.numel());
    std::vector<std::size_t> idx(nd, 0);
    std::size_t off = 0;
    for (std::size_t k = 0; k < offsets.size(); ++k) {
        offsets[k] = off;
        for (std::size_t ax = nd; ax-- > 0;) {
            ++idx[ax];
            off += step[ax];
            if (idx[ax] < out_shape[ax]) break;
            off -= step[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    std::vector<T> out(a.numel());
    const T* x = a.data().data();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = x[offsets[k]];
    auto fn = [offsets = std::move(offsets)](detail::Node<T>& self) {
        auto ga = self.parents[0]->grad_buffer();
        for (std::size_t k = 0; k < offsets.size(); ++k) ga[offsets[k]] += self.grad[k];
    };
    return make_result<T>(std::move(out_shape), std::move(out), {a.node()}, fn, "permute");
}

template <typename T>
Tensor<T> expand_leading(const Tensor<T>& a, std::size_t count) {
    if (count == 0) throw DimensionError("expand_leading: count must be positive");
    Shape out_shape{count};
    out_shape.insert(out_shape.end(), a.shape().begin(), a.shape().end());
    const std::size_t n = a.numel();
    std::vector<T> out(count * n);
    for (std::size_t c = 0; c < count; ++c) std::copy(a.data().begin(), a.data().end(), out.begin() + c * n);
    auto fn = [count, n](detail::Node<T>& self) {
        auto ga = self.parents[0]->grad_buffer();
        for (std::size_t c = 0; c < count; ++c)
            for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[c * n + i];
    };
    return make_result<T>(std::move(out_shape), std::move(out), {a.node()}, fn, "expand_leading");
}

template <typename T>
Tensor<T> cross_entropy_with_logits(const Tensor<T>& logits, std::span<const int> labels) {
    if (logits.ndim() != 2) {
        throw DimensionError("cross_entropy_with_logits: logits must be [batch x classes], got " +
                             shape_str(logits.shape()));
    }
    const std::size_t batch = logits.dim(0);
    const std::size_t classes = logits.dim(1);
    if (labels.size() != batch) {
        throw DimensionError("cross_entropy_with_logits: " + std::to_string(labels.size()) + " labels for batch of " +
                             std::to_string(batch));
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw InputError("cross_entropy_with_logits: label " + std::to_string(y) + " outside [0, " +
                             std::to_string(classes) + ")");
        }
    }
    std::vector<T> probs(batch * classes);
    T loss = T(0);
    const T* z = logits.data().data();
    for (std::size_t b = 0; b < batch; ++b) {
        const T* zr = z + b * classes;
        const T peak = *std::max_element(zr, zr + classes);
        T total = T(0);
        for (std::size_t c = 0; c < classes; ++c) {
            probs[b * classes + c] = std::exp(zr[c] - peak);
            total += probs[b * classes + c];
        }
        for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] /= total;
        loss += std::log(total) + peak - zr[labels[b]];
    }
    loss /= static_cast<T>(batch);
    std::vector<int> targets(labels.begin(), labels.end());
    auto fn = [batch, classes, probs = std::move(probs), targets = std::move(targets)](detail::Node<T>& self) {
        auto gz = self.parents[0]->grad_buffer();
        const T g = self.grad[0] / static_cast<T>(batch);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t c = 0; c < classes; ++c) {
                const T onehot = static_cast<std::size_t>(targets[b]) == c ? T(1) : T(0);
                gz[b * classes + c] += g * (probs[b * classes + c] - onehot);
            }
        }
    };
    return make_result<T>(Shape{}, std::vector<T>{loss}, {logits.node()}, fn, "cross_entropy_with_logits");
}

#define DUALVIT_INSTANTIATE_OPS(T)                                                                       \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                         \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                         \
    template Tensor<T> scale(const Tensor<T>&, T);                                                      \
    template Tensor<T> softmax_lastdim(const Tensor<T>&);                                               \
    template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);              \
    template Tensor<T> gelu(const Tensor<T>&);                                                          \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                              \
    template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                  \
    template std::vector<Tensor<T>> split(const Tensor<T>&, std::size_t, std::span<const std::size_t>); \
    template Tensor<T> mean(const Tensor<T>&, std::size_t);                                             \
    template Tensor<T> sum(const Tensor<T>&);                                                           \
    template Tensor<T> mean_all(const Tensor<T>&);                                                      \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                                \
    template Tensor<T> permute(const Tensor<T>&, std::span<const std::size_t>);                         \
    template Tensor<T> expand_leading(const Tensor<T>&, std::size_t);                                   \
    template Tensor<T> cross_entropy_with_logits(const Tensor<T>&, std::span<const int>);

DUALVIT_INSTANTIATE_OPS(float)
DUALVIT_INSTANTIATE_OPS(double)

#undef DUALVIT_INSTANTIATE_OPS

}  // namespace dualvit
