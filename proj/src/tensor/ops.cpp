// Copyright (c) 2026 The mvdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "mvdit/tensor/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <string>

namespace mvdit::ad {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;
template <typename T>
using SMapR = Eigen::Map<MatR<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CSMapR = Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>>;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
std::vector<T>& grad_of(Node<T>& node) {
    if (node.grad.empty()) {
        node.grad.assign(node.value.size(), T(0));
    }
    return node.grad;
}

// Builds the output node and records it on the graph when any parent needs grad.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value, std::vector<NodePtr<T>> parents,
                      std::function<void(Node<T>&)> backward_fn) {
    check_finite<T>(op, value);
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    node->is_leaf = false;
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& p : parents) {
            needs = needs || p->requires_grad;
        }
    }
    if (needs) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>(std::move(node));
}

[[noreturn]] void shape_fail(const char* op, const std::string& expected, const std::string& actual) {
    throw ShapeError(op, expected, actual);
}

void require_same(const char* op, const Shape& a, const Shape& b) {
    if (a != b) {
        shape_fail(op, "matching shapes " + to_string(a), to_string(b));
    }
}

template <typename T>
struct RowLayout {
    std::int64_t groups;
    std::int64_t rows_per_group;
    std::int64_t width;
};

template <typename T>
RowLayout<T> row_layout(const char* op, const Tensor<T>& x, const Tensor<T>& rows) {
    if (x.rank() == 0 || rows.rank() == 0 || rows.rank() > 2) {
        shape_fail(op, "x [..., D] and rows [G, D] or [D]", to_string(x.shape()) + " / " + to_string(rows.shape()));
    }
    const auto width = x.shape().back();
    if (rows.shape().back() != width) {
        shape_fail(op, "rows with last dim " + std::to_string(width), to_string(rows.shape()));
    }
    const auto groups = rows.numel() / width;
    if (x.numel() % (groups * width) != 0) {
        shape_fail(op, "x divisible into " + std::to_string(groups) + " groups", to_string(x.shape()));
    }
    return {groups, x.numel() / (groups * width), width};
}

// Copies (or accumulates) src laid out with `shape` into dst laid out with
// shape permuted by `perm`.
template <typename T>
void permute_into(const T* src, const Shape& shape, const std::vector<std::size_t>& perm, T* dst, bool accumulate) {
    const std::size_t rank = shape.size();
    if (rank == 0) {
        dst[0] = accumulate ? dst[0] + src[0] : src[0];
        return;
    }
    std::vector<std::int64_t> in_strides(rank, 1);
    for (std::size_t i = rank; i-- > 1;) {
        in_strides[i - 1] = in_strides[i] * shape[i];
    }
    Shape out_shape(rank);
    std::vector<std::int64_t> out_src_strides(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        out_shape[i] = shape[perm[i]];
        out_src_strides[i] = in_strides[perm[i]];
    }
    const std::int64_t total = numel(shape);
    if (total == 0) {
        return;
    }
    // Innermost output axis: copy runs of it at once when it stays contiguous.
    const std::int64_t inner = out_shape[rank - 1];
    const bool contiguous_inner = out_src_strides[rank - 1] == 1;
    const std::int64_t inner_stride = out_src_strides[rank - 1];
    std::vector<std::int64_t> index(rank, 0);
    std::int64_t src_offset = 0;
    for (std::int64_t out = 0; out < total; out += inner) {
        if (contiguous_inner) {
            if (accumulate) {
                for (std::int64_t j = 0; j < inner; ++j) dst[out + j] += src[src_offset + j];
            } else {
                std::memcpy(dst + out, src + src_offset, static_cast<std::size_t>(inner) * sizeof(T));
            }
        } else {
            for (std::int64_t j = 0; j < inner; ++j) {
                if (accumulate) {
                    dst[out + j] += src[src_offset + j * inner_stride];
                } else {
                    dst[out + j] = src[src_offset + j * inner_stride];
                }
            }
        }
        // Advance odometer over all but the last axis.
        for (std::size_t axis = rank - 1; axis-- > 0;) {
            ++index[axis];
            src_offset += out_src_strides[axis];
            if (index[axis] < out_shape[axis]) {
                break;
            }
            src_offset -= out_src_strides[axis] * out_shape[axis];
            index[axis] = 0;
        }
    }
}

// Transcendental kernels and reductions run on fixed-size aligned chunks so
// every element takes the same vector path regardless of buffer alignment;
// results are then bitwise reproducible across allocations.
constexpr std::int64_t kChunk = 64;
template <typename T>
using Chunk = Eigen::Array<T, kChunk, 1>;

template <typename T>
void load_chunk(Chunk<T>& buf, const T* src, std::int64_t m) {
    std::copy(src, src + m, buf.data());
    if (m < kChunk) std::fill(buf.data() + m, buf.data() + kChunk, T(0));
}

// Lane j accumulates elements j, j + 64, ...; lanes are then reduced in a
// fixed order.
template <typename T>
struct LaneSum {
    alignas(64) T lanes[kChunk] = {};
    void add(const T* x, std::int64_t m) {
        for (std::int64_t j = 0; j < m; ++j) lanes[j] += x[j];
    }
    T total() const { return Eigen::Map<const Chunk<T>, Eigen::Aligned64>(lanes).sum(); }
};

template <typename T>
T chunked_sum(const T* x, std::int64_t n) {
    LaneSum<T> acc;
    for (std::int64_t i = 0; i < n; i += kChunk) acc.add(x + i, std::min(kChunk, n - i));
    return acc.total();
}

template <typename T>
T chunked_dot(const T* x, const T* y, std::int64_t n) {
    alignas(64) T lanes[kChunk] = {};
    for (std::int64_t i = 0; i < n; i += kChunk) {
        const auto m = std::min(kChunk, n - i);
        for (std::int64_t j = 0; j < m; ++j) lanes[j] += x[i + j] * y[i + j];
    }
    return Eigen::Map<const Chunk<T>, Eigen::Aligned64>(lanes).sum();
}

constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC = 0.044715;

template <typename T>
void gelu_values(const T* x, T* out, std::int64_t n) {
    Chunk<T> xs, ys;
    for (std::int64_t i = 0; i < n; i += kChunk) {
        const auto m = std::min(kChunk, n - i);
        load_chunk(xs, x + i, m);
        ys = T(0.5) * xs * (T(1) + (T(kGeluK) * (xs + T(kGeluC) * xs.cube())).tanh());
        std::copy(ys.data(), ys.data() + m, out + i);
    }
}

// g += gelu'(x) * dy
template <typename T>
void gelu_backward(const T* x, const T* dy, T* g, std::int64_t n) {
    Chunk<T> xs, ds, th, ys;
    for (std::int64_t i = 0; i < n; i += kChunk) {
        const auto m = std::min(kChunk, n - i);
        load_chunk(xs, x + i, m);
        load_chunk(ds, dy + i, m);
        th = (T(kGeluK) * (xs + T(kGeluC) * xs.cube())).tanh();
        ys = ds * (T(0.5) * (T(1) + th) + T(0.5) * xs * (T(1) - th.square()) * T(kGeluK) *
                                              (T(1) + T(3 * kGeluC) * xs.square()));
        for (std::int64_t j = 0; j < m; ++j) g[i + j] += ys[j];
    }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    constexpr const char* op = "matmul";
    if (a.rank() < 2 || b.rank() < 2) {
        shape_fail(op, "rank >= 2 operands", to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    const auto m = a.shape()[a.rank() - 2];
    const auto k = a.shape().back();
    if (b.shape()[b.rank() - 2] != k) {
        shape_fail(op, "inner dims to agree (" + std::to_string(k) + ")", to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    const auto n = b.shape().back();
    const bool batched = b.rank() > 2;
    std::int64_t batch = a.numel() / (m * k);
    if (batched) {
        if (b.rank() != a.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
            shape_fail(op, "matching batch dims", to_string(a.shape()) + " x " + to_string(b.shape()));
        }
    }
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(n);
    std::vector<T> out(static_cast<std::size_t>(batch * m * n));
    if (batched) {
        for (std::int64_t i = 0; i < batch; ++i) {
            MapR<T>(out.data() + i * m * n, m, n).noalias() =
                CMapR<T>(a.data().data() + i * m * k, m, k) * CMapR<T>(b.data().data() + i * k * n, k, n);
        }
    } else {
        // Fold the batch into rows.
        MapR<T>(out.data(), batch * m, n).noalias() =
            CMapR<T>(a.data().data(), batch * m, k) * CMapR<T>(b.data().data(), k, n);
    }
    return make_result<T>(op, out_shape, std::move(out), {a.node_ptr(), b.node_ptr()},
                          [batch, m, k, n, batched](Node<T>& self) {
                              Node<T>& na = *self.parents[0];
                              Node<T>& nb = *self.parents[1];
                              const T* g = self.grad.data();
                              if (batched) {
                                  for (std::int64_t i = 0; i < batch; ++i) {
                                      CMapR<T> gi(g + i * m * n, m, n);
                                      if (na.requires_grad) {
                                          MapR<T>(grad_of(na).data() + i * m * k, m, k).noalias() +=
                                              gi * CMapR<T>(nb.value.data() + i * k * n, k, n).transpose();
                                      }
                                      if (nb.requires_grad) {
                                          MapR<T>(grad_of(nb).data() + i * k * n, k, n).noalias() +=
                                              CMapR<T>(na.value.data() + i * m * k, m, k).transpose() * gi;
                                      }
                                  }
                                  return;
                              }
                              CMapR<T> gm(g, batch * m, n);
                              if (na.requires_grad) {
                                  MapR<T>(grad_of(na).data(), batch * m, k).noalias() +=
                                      gm * CMapR<T>(nb.value.data(), k, n).transpose();
                              }
                              if (nb.requires_grad) {
                                  MapR<T>(grad_of(nb).data(), k, n).noalias() +=
                                      CMapR<T>(na.value.data(), batch * m, k).transpose() * gm;
                              }
                          });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same("add", a.shape(), b.shape());
    std::vector<T> out(a.values());
    const auto bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return make_result<T>("add", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](Node<T>& self) {
        for (int p = 0; p < 2; ++p) {
            Node<T>& np = *self.parents[p];
            if (!np.requires_grad) continue;
            auto& g = grad_of(np);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same("sub", a.shape(), b.shape());
    std::vector<T> out(a.values());
    const auto bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return make_result<T>("sub", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](Node<T>& self) {
        if (self.parents[0]->requires_grad) {
            auto& g = grad_of(*self.parents[0]);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
            auto& g = grad_of(*self.parents[1]);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same("mul", a.shape(), b.shape());
    std::vector<T> out(a.values());
    const auto bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return make_result<T>("mul", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](Node<T>& self) {
        Node<T>& na = *self.parents[0];
        Node<T>& nb = *self.parents[1];
        if (na.requires_grad) {
            auto& g = grad_of(na);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.value[i];
        }
        if (nb.requires_grad) {
            auto& g = grad_of(nb);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.value[i];
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    std::vector<T> out(a.values());
    for (auto& v : out) v *= factor;
    return make_result<T>("scale", a.shape(), std::move(out), {a.node_ptr()}, [factor](Node<T>& self) {
        auto& g = grad_of(*self.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
    });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
    std::vector<T> out(a.values());
    for (auto& v : out) v = std::abs(v);
    return make_result<T>("abs", a.shape(), std::move(out), {a.node_ptr()}, [](Node<T>& self) {
        Node<T>& na = *self.parents[0];
        auto& g = grad_of(na);
        // Subgradient +1 at the kink.
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += (na.value[i] >= T(0) ? T(1) : T(-1)) * self.grad[i];
    });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    std::vector<T> out(a.values().size());
    gelu_values(a.values().data(), out.data(), static_cast<std::int64_t>(out.size()));
    return make_result<T>("gelu", a.shape(), std::move(out), {a.node_ptr()}, [](Node<T>& self) {
        Node<T>& na = *self.parents[0];
        auto& g = grad_of(na);
        gelu_backward(na.value.data(), self.grad.data(), g.data(), static_cast<std::int64_t>(g.size()));
    });
}

template <typename T>
Tensor<T> add_rows(const Tensor<T>& x, const Tensor<T>& rows) {
    const auto lay = row_layout("add_rows", x, rows);
    std::vector<T> out(x.values());
    const T* r = rows.data().data();
    for (std::int64_t g = 0; g < lay.groups; ++g) {
        for (std::int64_t l = 0; l < lay.rows_per_group; ++l) {
            T* o = out.data() + (g * lay.rows_per_group + l) * lay.width;
            for (std::int64_t d = 0; d < lay.width; ++d) o[d] += r[g * lay.width + d];
        }
    }
    return make_result<T>("add_rows", x.shape(), std::move(out), {x.node_ptr(), rows.node_ptr()}, [lay](Node<T>& self) {
        Node<T>& nx = *self.parents[0];
        Node<T>& nr = *self.parents[1];
        if (nx.requires_grad) {
            auto& g = grad_of(nx);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (nr.requires_grad) {
            auto& gr = grad_of(nr);
            for (std::int64_t g = 0; g < lay.groups; ++g) {
                for (std::int64_t l = 0; l < lay.rows_per_group; ++l) {
                    const T* go = self.grad.data() + (g * lay.rows_per_group + l) * lay.width;
                    for (std::int64_t d = 0; d < lay.width; ++d) gr[g * lay.width + d] += go[d];
                }
            }
        }
    });
}

template <typename T>
Tensor<T> mul_rows(const Tensor<T>& x, const Tensor<T>& rows) {
    const auto lay = row_layout("mul_rows", x, rows);
    std::vector<T> out(x.values());
    const T* r = rows.data().data();
    for (std::int64_t g = 0; g < lay.groups; ++g) {
        for (std::int64_t l = 0; l < lay.rows_per_group; ++l) {
            T* o = out.data() + (g * lay.rows_per_group + l) * lay.width;
            for (std::int64_t d = 0; d < lay.width; ++d) o[d] *= r[g * lay.width + d];
        }
    }
    return make_result<T>("mul_rows", x.shape(), std::move(out), {x.node_ptr(), rows.node_ptr()}, [lay](Node<T>& self) {
        Node<T>& nx = *self.parents[0];
        Node<T>& nr = *self.parents[1];
        for (std::int64_t g = 0; g < lay.groups; ++g) {
            for (std::int64_t l = 0; l < lay.rows_per_group; ++l) {
                const std::int64_t base = (g * lay.rows_per_group + l) * lay.width;
                const T* go = self.grad.data() + base;
                if (nx.requires_grad) {
                    T* gx = grad_of(nx).data() + base;
                    for (std::int64_t d = 0; d < lay.width; ++d) gx[d] += go[d] * nr.value[g * lay.width + d];
                }
                if (nr.requires_grad) {
                    T* gr = grad_of(nr).data() + g * lay.width;
                    for (std::int64_t d = 0; d < lay.width; ++d) gr[d] += go[d] * nx.value[base + d];
                }
            }
        }
    });
}

template <typename T>
Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& shift, const Tensor<T>& scale_rows) {
    require_same("modulate", shift.shape(), scale_rows.shape());
    const auto lay = row_layout("modulate", x, shift);
    std::vector<T> out(x.values());
    const T* sh = shift.data().data();
    const T* sc = scale_rows.data().data();
    for (std::int64_t g = 0; g < lay.groups; ++g) {
        const T* shg = sh + g * lay.width;
        const T* scg = sc + g * lay.width;
        for (std::int64_t l = 0; l < lay.rows_per_group; ++l) {
            T* o = out.data() + (g * lay.rows_per_group + l) * lay.width;
            for (std::int64_t d = 0; d < lay.width; ++d) o[d] = o[d] * (T(1) + scg[d]) + shg[d];
        }
    }
    return make_result<T>(
        "modulate", x.shape(), std::move(out), {x.node_ptr(), shift.node_ptr(), scale_rows.node_ptr()},
        [lay](Node<T>& self) {
            Node<T>& nx = *self.parents[0];
            Node<T>& nsh = *self.parents[1];
            Node<T>& nsc = *self.parents[2];
            for (std::int64_t g = 0; g < lay.groups; ++g) {
                const T* scg = nsc.value.data() + g * lay.width;
                for (std::int64_t l = 0; l < lay.rows_per_group; ++l) {
                    const std::int64_t base = (g * lay.rows_per_group + l) * lay.width;
                    const T* go = self.grad.data() + base;
                    if (nx.requires_grad) {
                        T* gx = grad_of(nx).data() + base;
                        for (std::int64_t d = 0; d < lay.width; ++d) gx[d] += go[d] * (T(1) + scg[d]);
                    }
                    if (nsh.requires_grad) {
                        T* gs = grad_of(nsh).data() + g * lay.width;
                        for (std::int64_t d = 0; d < lay.width; ++d) gs[d] += go[d];
                    }
                    if (nsc.requires_grad) {
                        T* gc = grad_of(nsc).data() + g * lay.width;
                        const T* xv = nx.value.data() + base;
                        for (std::int64_t d = 0; d < lay.width; ++d) gc[d] += go[d] * xv[d];
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> add_gated(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& gate) {
    require_same("add_gated", x.shape(), y.shape());
    const auto lay = row_layout("add_gated", y, gate);
    std::vector<T> out(x.values());
    const T* yv = y.data().data();
    const T* gv = gate.data().data();
    for (std::int64_t g = 0; g < lay.groups; ++g) {
        for (std::int64_t l = 0; l < lay.rows_per_group; ++l) {
            const std::int64_t base = (g * lay.rows_per_group + l) * lay.width;
            for (std::int64_t d = 0; d < lay.width; ++d) out[base + d] += gv[g * lay.width + d] * yv[base + d];
        }
    }
    return make_result<T>(
        "add_gated", x.shape(), std::move(out), {x.node_ptr(), y.node_ptr(), gate.node_ptr()}, [lay](Node<T>& self) {
            Node<T>& nx = *self.parents[0];
            Node<T>& ny = *self.parents[1];
            Node<T>& ng = *self.parents[2];
            if (nx.requires_grad) {
                auto& g = grad_of(nx);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
            for (std::int64_t g = 0; g < lay.groups; ++g) {
                const T* gg = ng.value.data() + g * lay.width;
                for (std::int64_t l = 0; l < lay.rows_per_group; ++l) {
                    const std::int64_t base = (g * lay.rows_per_group + l) * lay.width;
                    const T* go = self.grad.data() + base;
                    if (ny.requires_grad) {
                        T* gy = grad_of(ny).data() + base;
                        for (std::int64_t d = 0; d < lay.width; ++d) gy[d] += go[d] * gg[d];
                    }
                    if (ng.requires_grad) {
                        T* ggr = grad_of(ng).data() + g * lay.width;
                        const T* yv2 = ny.value.data() + base;
                        for (std::int64_t d = 0; d < lay.width; ++d) ggr[d] += go[d] * yv2[d];
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> add_axis_embedding(const Tensor<T>& x, const Tensor<T>& table, std::size_t axis) {
    constexpr const char* op = "add_axis_embedding";
    if (x.rank() < 2 || axis + 1 >= x.rank()) {
        shape_fail(op, "axis before the last dim", to_string(x.shape()) + " axis " + std::to_string(axis));
    }
    const auto width = x.shape().back();
    const auto extent = x.shape()[axis];
    if (table.shape() != Shape{extent, width}) {
        shape_fail(op, to_string(Shape{extent, width}), to_string(table.shape()));
    }
    std::int64_t inner = 1;  // rows between consecutive indices along axis
    for (std::size_t i = axis + 1; i + 1 < x.rank(); ++i) inner *= x.shape()[i];
    const std::int64_t rows = x.numel() / width;
    std::vector<T> out(x.values());
    const T* tv = table.data().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* e = tv + ((r / inner) % extent) * width;
        T* o = out.data() + r * width;
        for (std::int64_t d = 0; d < width; ++d) o[d] += e[d];
    }
    return make_result<T>(op, x.shape(), std::move(out), {x.node_ptr(), table.node_ptr()},
                          [rows, inner, extent, width](Node<T>& self) {
                              Node<T>& nx = *self.parents[0];
                              Node<T>& nt = *self.parents[1];
                              if (nx.requires_grad) {
                                  auto& g = grad_of(nx);
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                              }
                              if (nt.requires_grad) {
                                  auto& gt = grad_of(nt);
                                  for (std::int64_t r = 0; r < rows; ++r) {
                                      T* e = gt.data() + ((r / inner) % extent) * width;
                                      const T* go = self.grad.data() + r * width;
                                      for (std::int64_t d = 0; d < width; ++d) e[d] += go[d];
                                  }
                              }
                          });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (numel(shape) != a.numel()) {
        shape_fail("reshape", std::to_string(a.numel()) + " elements", to_string(shape));
    }
    return make_result<T>("reshape", std::move(shape), a.values(), {a.node_ptr()}, [](Node<T>& self) {
        auto& g = grad_of(*self.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm) {
    const std::size_t rank = a.rank();
    std::vector<bool> used(rank, false);
    bool valid = perm.size() == rank;
    for (std::size_t i = 0; valid && i < rank; ++i) {
        valid = perm[i] < rank && !used[perm[i]];
        if (valid) used[perm[i]] = true;
    }
    if (!valid) {
        shape_fail("permute", "a permutation of " + std::to_string(rank) + " axes",
                   std::to_string(perm.size()) + " entries");
    }
    Shape out_shape(rank);
    std::vector<std::size_t> inverse(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        out_shape[i] = a.shape()[perm[i]];
        inverse[perm[i]] = i;
    }
    std::vector<T> out(a.values().size());
    permute_into(a.data().data(), a.shape(), perm, out.data(), false);
    return make_result<T>("permute", out_shape, std::move(out), {a.node_ptr()},
                          [out_shape, inverse](Node<T>& self) {
                              auto& g = grad_of(*self.parents[0]);
                              permute_into(self.grad.data(), out_shape, inverse, g.data(), true);
                          });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    constexpr const char* op = "concat";
    if (parts.empty()) {
        shape_fail(op, "at least one operand", "none");
    }
    const Shape& ref = parts[0].shape();
    if (axis >= ref.size()) {
        shape_fail(op, "axis < rank " + std::to_string(ref.size()), std::to_string(axis));
    }
    Shape out_shape = ref;
    out_shape[axis] = 0;
    std::vector<std::int64_t> extents;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != ref.size()) shape_fail(op, to_string(ref) + "-compatible", to_string(s));
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != axis && s[i] != ref[i]) shape_fail(op, to_string(ref) + "-compatible", to_string(s));
        }
        extents.push_back(s[axis]);
        out_shape[axis] += s[axis];
    }
    std::int64_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
    for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
    const std::int64_t out_row = out_shape[axis] * inner;
    std::vector<T> out(static_cast<std::size_t>(numel(out_shape)));
    std::int64_t offset = 0;
    std::vector<NodePtr<T>> parents;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const std::int64_t chunk = extents[p] * inner;
        const T* src = parts[p].data().data();
        for (std::int64_t o = 0; o < outer; ++o) {
            std::copy_n(src + o * chunk, chunk, out.data() + o * out_row + offset);
        }
        offset += chunk;
        parents.push_back(parts[p].node_ptr());
    }
    return make_result<T>(op, out_shape, std::move(out), std::move(parents),
                          [extents, outer, inner, out_row](Node<T>& self) {
                              std::int64_t off = 0;
                              for (std::size_t p = 0; p < self.parents.size(); ++p) {
                                  const std::int64_t chunk = extents[p] * inner;
                                  Node<T>& np = *self.parents[p];
                                  if (np.requires_grad) {
                                      auto& g = grad_of(np);
                                      for (std::int64_t o = 0; o < outer; ++o) {
                                          const T* src = self.grad.data() + o * out_row + off;
                                          T* dst = g.data() + o * chunk;
                                          for (std::int64_t j = 0; j < chunk; ++j) dst[j] += src[j];
                                      }
                                  }
                                  off += chunk;
                              }
                          });
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& a, std::size_t axis, const std::vector<std::int64_t>& sizes) {
    constexpr const char* op = "split";
    if (axis >= a.rank()) {
        shape_fail(op, "axis < rank " + std::to_string(a.rank()), std::to_string(axis));
    }
    const std::int64_t total = std::accumulate(sizes.begin(), sizes.end(), std::int64_t{0});
    if (total != a.shape()[axis]) {
        shape_fail(op, "sizes summing to " + std::to_string(a.shape()[axis]), std::to_string(total));
    }
    std::int64_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape()[i];
    const std::int64_t in_row = a.shape()[axis] * inner;
    std::vector<Tensor<T>> result;
    std::int64_t offset = 0;
    for (auto size : sizes) {
        Shape s = a.shape();
        s[axis] = size;
        const std::int64_t chunk = size * inner;
        std::vector<T> out(static_cast<std::size_t>(outer * chunk));
        for (std::int64_t o = 0; o < outer; ++o) {
            std::copy_n(a.data().data() + o * in_row + offset, chunk, out.data() + o * chunk);
        }
        result.push_back(make_result<T>(op, s, std::move(out), {a.node_ptr()},
                                        [outer, chunk, in_row, offset](Node<T>& self) {
                                            auto& g = grad_of(*self.parents[0]);
                                            for (std::int64_t o = 0; o < outer; ++o) {
                                                T* dst = g.data() + o * in_row + offset;
                                                const T* src = self.grad.data() + o * chunk;
                                                for (std::int64_t j = 0; j < chunk; ++j) dst[j] += src[j];
                                            }
                                        }));
        offset += chunk;
    }
    return result;
}

template <typename T>
Tensor<T> tile_leading(const Tensor<T>& a, std::int64_t count) {
    if (count < 1) {
        shape_fail("tile_leading", "count >= 1", std::to_string(count));
    }
    Shape s{count};
    s.insert(s.end(), a.shape().begin(), a.shape().end());
    std::vector<T> out;
    out.reserve(static_cast<std::size_t>(count * a.numel()));
    for (std::int64_t c = 0; c < count; ++c) out.insert(out.end(), a.values().begin(), a.values().end());
    return make_result<T>("tile_leading", s, std::move(out), {a.node_ptr()}, [count](Node<T>& self) {
        auto& g = grad_of(*self.parents[0]);
        const std::size_t n = g.size();
        for (std::int64_t c = 0; c < count; ++c) {
            const T* src = self.grad.data() + c * n;
            for (std::size_t j = 0; j < n; ++j) g[j] += src[j];
        }
    });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<std::int64_t>& ids) {
    constexpr const char* op = "gather_rows";
    if (table.rank() != 2) {
        shape_fail(op, "table [N, D]", to_string(table.shape()));
    }
    const auto n = table.shape()[0];
    const auto width = table.shape()[1];
    std::vector<T> out(ids.size() * static_cast<std::size_t>(width));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= n) {
            shape_fail(op, "ids in [0, " + std::to_string(n) + ")", std::to_string(ids[i]));
        }
        std::copy_n(table.data().data() + ids[i] * width, width, out.data() + i * width);
    }
    return make_result<T>(op, {static_cast<std::int64_t>(ids.size()), width}, std::move(out), {table.node_ptr()},
                          [ids, width](Node<T>& self) {
                              auto& g = grad_of(*self.parents[0]);
                              for (std::size_t i = 0; i < ids.size(); ++i) {
                                  T* dst = g.data() + ids[i] * width;
                                  const T* src = self.grad.data() + i * width;
                                  for (std::int64_t d = 0; d < width; ++d) dst[d] += src[d];
                              }
                          });
}

namespace {

template <typename T>
void softmax_row(T* row, std::int64_t n) {
    if (n == 0) return;
    const T mx = *std::max_element(row, row + n);
    Chunk<T> buf;
    LaneSum<T> acc;
    for (std::int64_t i = 0; i < n; i += kChunk) {
        const auto m = std::min(kChunk, n - i);
        load_chunk(buf, row + i, m);
        buf = (buf - mx).exp();
        std::copy(buf.data(), buf.data() + m, row + i);
        acc.add(buf.data(), m);
    }
    const T inv = T(1) / acc.total();
    for (std::int64_t j = 0; j < n; ++j) row[j] *= inv;
}

// dx = y * (dy - sum(dy * y)), accumulated into dx.
template <typename T>
void softmax_row_backward(const T* y, const T* dy, T* dx, std::int64_t n) {
    const T dot = chunked_dot(y, dy, n);
    for (std::int64_t j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
}

}  // namespace

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& a) {
    if (a.rank() == 0) {
        shape_fail("softmax_lastdim", "rank >= 1", to_string(a.shape()));
    }
    const auto width = a.shape().back();
    const auto rows = width ? a.numel() / width : 0;
    std::vector<T> out(a.values());
    for (std::int64_t r = 0; r < rows; ++r) softmax_row(out.data() + r * width, width);
    auto result = make_result<T>("softmax_lastdim", a.shape(), std::move(out), {a.node_ptr()}, nullptr);
    if (result.requires_grad()) {
        result.node()->backward_fn = [rows, width](Node<T>& self) {
            auto& g = grad_of(*self.parents[0]);
            for (std::int64_t r = 0; r < rows; ++r) {
                softmax_row_backward(self.value.data() + r * width, self.grad.data() + r * width,
                                     g.data() + r * width, width);
            }
        };
    }
    return result;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, T eps) {
    if (a.rank() == 0 || a.shape().back() == 0) {
        shape_fail("layer_norm", "non-empty last dim", to_string(a.shape()));
    }
    const auto width = a.shape().back();
    const auto rows = a.numel() / width;
    std::vector<T> out(a.values());
    std::vector<T> inv_std(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        T* x = out.data() + r * width;
        T mu = T(0);
        for (std::int64_t d = 0; d < width; ++d) mu += x[d];
        mu /= T(width);
        T var = T(0);
        for (std::int64_t d = 0; d < width; ++d) var += (x[d] - mu) * (x[d] - mu);
        var /= T(width);
        const T inv = T(1) / std::sqrt(var + eps);
        inv_std[r] = inv;
        for (std::int64_t d = 0; d < width; ++d) x[d] = (x[d] - mu) * inv;
    }
    auto result = make_result<T>("layer_norm", a.shape(), std::move(out), {a.node_ptr()}, nullptr);
    if (result.requires_grad()) {
        result.node()->backward_fn = [rows, width, inv_std = std::move(inv_std)](Node<T>& self) {
            auto& g = grad_of(*self.parents[0]);
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* y = self.value.data() + r * width;
                const T* dy = self.grad.data() + r * width;
                T sum_dy = T(0), sum_dy_y = T(0);
                for (std::int64_t d = 0; d < width; ++d) {
                    sum_dy += dy[d];
                    sum_dy_y += dy[d] * y[d];
                }
                const T inv_n = T(1) / T(width);
                T* dx = g.data() + r * width;
                for (std::int64_t d = 0; d < width; ++d) {
                    dx[d] += inv_std[r] * (dy[d] - inv_n * sum_dy - y[d] * inv_n * sum_dy_y);
                }
            }
        };
    }
    return result;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    constexpr const char* op = "linear";
    if (x.rank() < 1 || weight.rank() != 2 || x.shape().back() != weight.shape()[0]) {
        shape_fail(op, "x [..., in] with weight [in, out]", to_string(x.shape()) + " / " + to_string(weight.shape()));
    }
    const auto in = weight.shape()[0];
    const auto out_dim = weight.shape()[1];
    const bool has_bias = bias.defined();
    if (has_bias && bias.shape() != Shape{out_dim}) {
        shape_fail(op, "bias " + to_string(Shape{out_dim}), to_string(bias.shape()));
    }
    const auto rows = x.numel() / in;
    Shape out_shape = x.shape();
    out_shape.back() = out_dim;
    std::vector<T> out(static_cast<std::size_t>(rows * out_dim));
    MapR<T> y(out.data(), rows, out_dim);
    y.noalias() = CMapR<T>(x.data().data(), rows, in) * CMapR<T>(weight.data().data(), in, out_dim);
    if (has_bias) {
        y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), out_dim);
    }
    std::vector<NodePtr<T>> parents{x.node_ptr(), weight.node_ptr()};
    if (has_bias) parents.push_back(bias.node_ptr());
    return make_result<T>(op, out_shape, std::move(out), std::move(parents), [rows, in, out_dim](Node<T>& self) {
        Node<T>& nx = *self.parents[0];
        Node<T>& nw = *self.parents[1];
        CMapR<T> gy(self.grad.data(), rows, out_dim);
        if (nx.requires_grad) {
            MapR<T>(grad_of(nx).data(), rows, in).noalias() += gy * CMapR<T>(nw.value.data(), in, out_dim).transpose();
        }
        if (nw.requires_grad) {
            MapR<T>(grad_of(nw).data(), in, out_dim).noalias() += CMapR<T>(nx.value.data(), rows, in).transpose() * gy;
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            T* gb = grad_of(*self.parents[2]).data();
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* row = self.grad.data() + r * out_dim;
                for (std::int64_t c = 0; c < out_dim; ++c) gb[c] += row[c];
            }
        }
    });
}

template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               const AttentionOptions& options, std::span<const std::type_identity_t<T>> key_mask) {
    constexpr const char* op = "scaled_dot_attention";
    if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
        shape_fail(op, "rank-3 q/k/v", to_string(q.shape()) + " " + to_string(k.shape()) + " " + to_string(v.shape()));
    }
    const auto batch = q.shape()[0];
    const auto lq = q.shape()[1];
    const auto lk = k.shape()[1];
    const auto heads = options.heads;
    if (heads < 1 || k.shape()[0] != batch || v.shape()[0] != batch || v.shape()[1] != lk ||
        k.shape()[2] != q.shape()[2] || q.shape()[2] % heads != 0 || v.shape()[2] % heads != 0) {
        shape_fail(op, "q [B, Lq, H*dk], k [B, Lk, H*dk], v [B, Lk, H*dv] with H=" + std::to_string(heads),
                   to_string(q.shape()) + " " + to_string(k.shape()) + " " + to_string(v.shape()));
    }
    if (!key_mask.empty() && static_cast<std::int64_t>(key_mask.size()) != batch * lk) {
        shape_fail(op, "key mask of " + std::to_string(batch * lk) + " entries", std::to_string(key_mask.size()));
    }
    const auto qk_width = q.shape()[2];
    const auto v_width = v.shape()[2];
    const auto dk = qk_width / heads;
    const auto dv = v_width / heads;
    const T logit_scale = static_cast<T>(options.logit_scale.value_or(1.0 / std::sqrt(static_cast<double>(dk))));
    const bool record = grad_enabled() && (q.requires_grad() || k.requires_grad() || v.requires_grad());

    std::vector<T> out(static_cast<std::size_t>(batch * lq * v_width));
    std::vector<T> probs(record ? static_cast<std::size_t>(batch * heads * lq * lk) : 0);
    std::vector<T> scratch(record ? 0 : static_cast<std::size_t>(lq * lk));
    std::vector<T> mask(key_mask.begin(), key_mask.end());
    for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t h = 0; h < heads; ++h) {
            T* p = record ? probs.data() + ((b * heads + h) * lq) * lk : scratch.data();
            MapR<T> pm(p, lq, lk);
            CSMapR<T> qm(q.data().data() + b * lq * qk_width + h * dk, lq, dk, Eigen::OuterStride<>(qk_width));
            CSMapR<T> km(k.data().data() + b * lk * qk_width + h * dk, lk, dk, Eigen::OuterStride<>(qk_width));
            CSMapR<T> vm(v.data().data() + b * lk * v_width + h * dv, lk, dv, Eigen::OuterStride<>(v_width));
            pm.noalias() = logit_scale * (qm * km.transpose());
            if (!mask.empty()) {
                pm.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(mask.data() + b * lk, lk);
            }
            for (std::int64_t r = 0; r < lq; ++r) softmax_row(p + r * lk, lk);
            SMapR<T>(out.data() + b * lq * v_width + h * dv, lq, dv, Eigen::OuterStride<>(v_width)).noalias() = pm * vm;
        }
    }
    auto result = make_result<T>(op, Shape{batch, lq, v_width}, std::move(out),
                                 {q.node_ptr(), k.node_ptr(), v.node_ptr()}, nullptr);
    if (result.requires_grad()) {
        result.node()->backward_fn = [=, probs = std::move(probs)](Node<T>& self) {
            Node<T>& nq = *self.parents[0];
            Node<T>& nk = *self.parents[1];
            Node<T>& nv = *self.parents[2];
            MatR<T> dp(lq, lk);
            for (std::int64_t b = 0; b < batch; ++b) {
                for (std::int64_t h = 0; h < heads; ++h) {
                    CMapR<T> pm(probs.data() + ((b * heads + h) * lq) * lk, lq, lk);
                    CSMapR<T> go(self.grad.data() + b * lq * v_width + h * dv, lq, dv, Eigen::OuterStride<>(v_width));
                    CSMapR<T> qm(nq.value.data() + b * lq * qk_width + h * dk, lq, dk, Eigen::OuterStride<>(qk_width));
                    CSMapR<T> km(nk.value.data() + b * lk * qk_width + h * dk, lk, dk, Eigen::OuterStride<>(qk_width));
                    CSMapR<T> vm(nv.value.data() + b * lk * v_width + h * dv, lk, dv, Eigen::OuterStride<>(v_width));
                    if (nv.requires_grad) {
                        SMapR<T>(grad_of(nv).data() + b * lk * v_width + h * dv, lk, dv, Eigen::OuterStride<>(v_width))
                            .noalias() += pm.transpose() * go;
                    }
                    if (!nq.requires_grad && !nk.requires_grad) continue;
                    dp.noalias() = go * vm.transpose();
                    // dS = P * (dP - rowsum(dP * P)), scaled once for Q/K.
                    for (std::int64_t r = 0; r < lq; ++r) {
                        const T dot = chunked_dot(dp.data() + r * lk, pm.data() + r * lk, lk);
                        dp.row(r) = (pm.row(r).array() * (dp.row(r).array() - dot)) * logit_scale;
                    }
                    if (nq.requires_grad) {
                        SMapR<T>(grad_of(nq).data() + b * lq * qk_width + h * dk, lq, dk, Eigen::OuterStride<>(qk_width))
                            .noalias() += dp * km;
                    }
                    if (nk.requires_grad) {
                        SMapR<T>(grad_of(nk).data() + b * lk * qk_width + h * dk, lk, dk, Eigen::OuterStride<>(qk_width))
                            .noalias() += dp.transpose() * qm;
                    }
                }
            }
        };
    }
    return result;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    if (a.numel() == 0) {
        shape_fail("mean", "non-empty tensor", to_string(a.shape()));
    }
    T sum = T(0);
    for (T v : a.data()) sum += v;
    const T n = T(a.numel());
    return make_result<T>("mean", Shape{}, {sum / n}, {a.node_ptr()}, [n](Node<T>& self) {
        auto& g = grad_of(*self.parents[0]);
        const T d = self.grad[0] / n;
        for (auto& x : g) x += d;
    });
}

template <typename T>
Tensor<T> sum_sq(const Tensor<T>& a) {
    T sum = T(0);
    for (T v : a.data()) sum += v * v;
    return make_result<T>("sum_sq", Shape{}, {sum}, {a.node_ptr()}, [](Node<T>& self) {
        Node<T>& na = *self.parents[0];
        auto& g = grad_of(na);
        const T d = T(2) * self.grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * na.value[i];
    });
}

#define MVDIT_INSTANTIATE_OPS(T)                                                                              \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                            \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                               \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                               \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                               \
    template Tensor<T> scale(const Tensor<T>&, T);                                                            \
    template Tensor<T> abs(const Tensor<T>&);                                                                 \
    template Tensor<T> gelu(const Tensor<T>&);                                                                \
    template Tensor<T> add_rows(const Tensor<T>&, const Tensor<T>&);                                          \
    template Tensor<T> mul_rows(const Tensor<T>&, const Tensor<T>&);                                          \
    template Tensor<T> modulate(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> add_gated(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                       \
    template Tensor<T> add_axis_embedding(const Tensor<T>&, const Tensor<T>&, std::size_t);                   \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                                      \
    template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                            \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                                    \
    template std::vector<Tensor<T>> split(const Tensor<T>&, std::size_t, const std::vector<std::int64_t>&);   \
    template Tensor<T> tile_leading(const Tensor<T>&, std::int64_t);                                          \
    template Tensor<T> gather_rows(const Tensor<T>&, const std::vector<std::int64_t>&);                       \
    template Tensor<T> softmax_lastdim(const Tensor<T>&);                                                     \
    template Tensor<T> layer_norm(const Tensor<T>&, T);                                                       \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                          \
    template Tensor<T> scaled_dot_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                            const AttentionOptions&, std::span<const T>);                    \
    template Tensor<T> mean(const Tensor<T>&);                                                                \
    template Tensor<T> sum_sq(const Tensor<T>&);

MVDIT_INSTANTIATE_OPS(float)
MVDIT_INSTANTIATE_OPS(double)

#undef MVDIT_INSTANTIATE_OPS

}  // namespace mvdit::ad
