#pragma once

#include <optional>

#include "diffgen/autodiff.hpp"
#include "diffgen/kernels.hpp"

namespace diffgen {

using kernels::Conv2dSpec;

// Differentiable primitives. Forward values are computed eagerly through the
// kernels; each op installs the matching adjoint.

template <typename S>
VarT<S> conv2d(const VarT<S>& x, const VarT<S>& w, const VarT<S>& b, Conv2dSpec spec) {
    TensorT<S> y = kernels::conv2d_forward<S>(x->value, w->value, b ? &b->value : nullptr, spec);
    std::vector<VarT<S>> parents = b ? std::vector<VarT<S>>{x, w, b} : std::vector<VarT<S>>{x, w};
    return make_op<S>(std::move(y), std::move(parents), [x, w, b, spec](NodeT<S>& n) {
        kernels::conv2d_backward<S>(x->value, w->value, spec, n.grad, x->requires_grad ? &x->ensure_grad() : nullptr,
                                    w->requires_grad ? &w->ensure_grad() : nullptr,
                                    (b && b->requires_grad) ? &b->ensure_grad() : nullptr);
    });
}

template <typename S>
VarT<S> upsample_nearest(const VarT<S>& x, int factor) {
    return make_op<S>(kernels::upsample_nearest_forward<S>(x->value, factor), {x}, [x, factor](NodeT<S>& n) {
        if (x->requires_grad) kernels::upsample_nearest_backward<S>(n.grad, factor, x->ensure_grad());
    });
}

template <typename S>
VarT<S> maxpool2d(const VarT<S>& x, int kernel, int stride, int pad = 0) {
    auto argmax = std::make_shared<std::vector<std::int32_t>>();
    TensorT<S> y = kernels::maxpool2d_forward<S>(x->value, kernel, stride, pad, *argmax);
    return make_op<S>(std::move(y), {x}, [x, argmax](NodeT<S>& n) {
        if (x->requires_grad) kernels::maxpool2d_backward<S>(n.grad, *argmax, x->ensure_grad());
    });
}

template <typename S>
VarT<S> global_avg_pool(const VarT<S>& x) {
    return make_op<S>(kernels::global_avg_pool_forward<S>(x->value), {x}, [x](NodeT<S>& n) {
        if (x->requires_grad) kernels::global_avg_pool_backward<S>(n.grad, x->ensure_grad());
    });
}

template <typename S>
VarT<S> linear(const VarT<S>& x, const VarT<S>& w, const VarT<S>& b) {
    TensorT<S> y = kernels::linear_forward<S>(x->value, w->value, b ? &b->value : nullptr);
    std::vector<VarT<S>> parents = b ? std::vector<VarT<S>>{x, w, b} : std::vector<VarT<S>>{x, w};
    return make_op<S>(std::move(y), std::move(parents), [x, w, b](NodeT<S>& n) {
        kernels::linear_backward<S>(x->value, w->value, n.grad, x->requires_grad ? &x->ensure_grad() : nullptr,
                                    w->requires_grad ? &w->ensure_grad() : nullptr,
                                    (b && b->requires_grad) ? &b->ensure_grad() : nullptr);
    });
}

template <typename S>
VarT<S> group_norm(const VarT<S>& x, const VarT<S>& gamma, const VarT<S>& beta, int groups, S eps = S(1e-5)) {
    auto cache = std::make_shared<kernels::GroupNormCache<S>>();
    TensorT<S> y = kernels::group_norm_forward<S>(x->value, gamma->value, beta->value, groups, eps, *cache);
    return make_op<S>(std::move(y), {x, gamma, beta}, [x, gamma, beta, groups, cache](NodeT<S>& n) {
        kernels::group_norm_backward<S>(x->value, gamma->value, groups, *cache, n.grad,
                                        x->requires_grad ? &x->ensure_grad() : nullptr,
                                        gamma->requires_grad ? &gamma->ensure_grad() : nullptr,
                                        beta->requires_grad ? &beta->ensure_grad() : nullptr);
    });
}

template <typename S>
VarT<S> relu(const VarT<S>& x) {
    TensorT<S> y(x->value.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = x->value[i] > S(0) ? x->value[i] : S(0);
    return make_op<S>(std::move(y), {x}, [x](NodeT<S>& n) {
        if (!x->requires_grad) return;
        auto& dx = x->ensure_grad();
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            if (x->value[i] > S(0)) dx[i] += n.grad[i];
    });
}

template <typename S>
VarT<S> silu(const VarT<S>& x) {
    TensorT<S> y(x->value.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = x->value[i] * kernels::sigmoid(x->value[i]);
    return make_op<S>(std::move(y), {x}, [x](NodeT<S>& n) {
        if (!x->requires_grad) return;
        auto& dx = x->ensure_grad();
        for (std::size_t i = 0; i < n.grad.numel(); ++i) {
            const S s = kernels::sigmoid(x->value[i]);
            dx[i] += n.grad[i] * s * (S(1) + x->value[i] * (S(1) - s));
        }
    });
}

template <typename S>
VarT<S> softmax(const VarT<S>& x) {
    auto p = std::make_shared<TensorT<S>>(kernels::softmax_rows<S>(x->value));
    return make_op<S>(TensorT<S>(*p), {x}, [x, p](NodeT<S>& n) {
        if (x->requires_grad) kernels::softmax_rows_backward<S>(*p, n.grad, x->ensure_grad());
    });
}

template <typename S>
VarT<S> add(const VarT<S>& a, const VarT<S>& b) {
    if (!a->value.same_shape(b->value)) throw std::invalid_argument("add: shape mismatch");
    TensorT<S> y(a->value.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a->value[i] + b->value[i];
    return make_op<S>(std::move(y), {a, b}, [a, b](NodeT<S>& n) {
        if (a->requires_grad) {
            auto& da = a->ensure_grad();
            for (std::size_t i = 0; i < n.grad.numel(); ++i) da[i] += n.grad[i];
        }
        if (b->requires_grad) {
            auto& db = b->ensure_grad();
            for (std::size_t i = 0; i < n.grad.numel(); ++i) db[i] += n.grad[i];
        }
    });
}

template <typename S>
VarT<S> mul(const VarT<S>& a, const VarT<S>& b) {
    if (!a->value.same_shape(b->value)) throw std::invalid_argument("mul: shape mismatch");
    TensorT<S> y(a->value.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a->value[i] * b->value[i];
    return make_op<S>(std::move(y), {a, b}, [a, b](NodeT<S>& n) {
        if (a->requires_grad) {
            auto& da = a->ensure_grad();
            for (std::size_t i = 0; i < n.grad.numel(); ++i) da[i] += n.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            auto& db = b->ensure_grad();
            for (std::size_t i = 0; i < n.grad.numel(); ++i) db[i] += n.grad[i] * a->value[i];
        }
    });
}

template <typename S>
VarT<S> scale(const VarT<S>& x, S c) {
    TensorT<S> y(x->value.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = x->value[i] * c;
    return make_op<S>(std::move(y), {x}, [x, c](NodeT<S>& n) {
        if (!x->requires_grad) return;
        auto& dx = x->ensure_grad();
        for (std::size_t i = 0; i < n.grad.numel(); ++i) dx[i] += n.grad[i] * c;
    });
}

/// x (B,C,H,W) + v (B,C) broadcast over the spatial extent. Carries the
/// timestep embedding into the convolutional blocks.
template <typename S>
VarT<S> add_channel_bias(const VarT<S>& x, const VarT<S>& v) {
    const int B = x->value.extent(0), C = x->value.extent(1), H = x->value.extent(2), W = x->value.extent(3);
    if (v->value.ndim() != 2 || v->value.extent(0) != B || v->value.extent(1) != C)
        throw std::invalid_argument("add_channel_bias: bias must be (batch, channels)");
    const int hw = H * W;
    TensorT<S> y(x->value.shape());
    for (int bc = 0; bc < B * C; ++bc) {
        const S bias = v->value[static_cast<std::size_t>(bc)];
        const S* xs = x->value.data() + static_cast<std::size_t>(bc) * hw;
        S* ys = y.data() + static_cast<std::size_t>(bc) * hw;
        for (int i = 0; i < hw; ++i) ys[i] = xs[i] + bias;
    }
    return make_op<S>(std::move(y), {x, v}, [x, v, hw](NodeT<S>& n) {
        const std::size_t bc_total = v->value.numel();
        if (x->requires_grad) {
            auto& dx = x->ensure_grad();
            for (std::size_t i = 0; i < n.grad.numel(); ++i) dx[i] += n.grad[i];
        }
        if (v->requires_grad) {
            auto& dv = v->ensure_grad();
            for (std::size_t bc = 0; bc < bc_total; ++bc) {
                const S* g = n.grad.data() + bc * hw;
                S s = 0;
                for (int i = 0; i < hw; ++i) s += g[i];
                dv[bc] += s;
            }
        }
    });
}

template <typename S>
VarT<S> concat_channels(const std::vector<VarT<S>>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_channels: empty input list");
    const int B = xs[0]->value.extent(0), H = xs[0]->value.extent(2), W = xs[0]->value.extent(3);
    int C = 0;
    for (const auto& x : xs) {
        if (x->value.ndim() != 4 || x->value.extent(0) != B || x->value.extent(2) != H || x->value.extent(3) != W)
            throw std::invalid_argument("concat_channels: incompatible shapes");
        C += x->value.extent(1);
    }
    const int hw = H * W;
    TensorT<S> y({B, C, H, W});
    for (int b = 0; b < B; ++b) {
        S* dst = y.data() + static_cast<std::size_t>(b) * C * hw;
        for (const auto& x : xs) {
            const int Ci = x->value.extent(1);
            const S* src = x->value.data() + static_cast<std::size_t>(b) * Ci * hw;
            std::copy(src, src + static_cast<std::size_t>(Ci) * hw, dst);
            dst += static_cast<std::size_t>(Ci) * hw;
        }
    }
    return make_op<S>(std::move(y), xs, [xs, B, C, hw](NodeT<S>& n) {
        for (int b = 0; b < B; ++b) {
            const S* src = n.grad.data() + static_cast<std::size_t>(b) * C * hw;
            for (const auto& x : xs) {
                const int Ci = x->value.extent(1);
                if (x->requires_grad) {
                    S* dst = x->ensure_grad().data() + static_cast<std::size_t>(b) * Ci * hw;
                    for (std::size_t i = 0; i < static_cast<std::size_t>(Ci) * hw; ++i) dst[i] += src[i];
                }
                src += static_cast<std::size_t>(Ci) * hw;
            }
        }
    });
}

template <typename S>
VarT<S> reshape(const VarT<S>& x, Shape shape) {
    TensorT<S> y = x->value.reshaped(shape);
    return make_op<S>(std::move(y), {x}, [x](NodeT<S>& n) {
        if (!x->requires_grad) return;
        auto& dx = x->ensure_grad();
        for (std::size_t i = 0; i < n.grad.numel(); ++i) dx[i] += n.grad[i];
    });
}

/// Row lookup into an embedding table (num_entries, dim) -> (batch, dim).
template <typename S>
VarT<S> embedding_lookup(const VarT<S>& table, const std::vector<int>& ids) {
    const int num = table->value.extent(0), dim = table->value.extent(1);
    TensorT<S> y({static_cast<int>(ids.size()), dim});
    for (std::size_t b = 0; b < ids.size(); ++b) {
        if (ids[b] < 0 || ids[b] >= num) throw std::out_of_range("embedding_lookup: id out of range");
        std::copy(table->value.data() + static_cast<std::size_t>(ids[b]) * dim,
                  table->value.data() + static_cast<std::size_t>(ids[b] + 1) * dim, y.data() + b * dim);
    }
    return make_op<S>(std::move(y), {table}, [table, ids, dim](NodeT<S>& n) {
        if (!table->requires_grad) return;
        auto& dt = table->ensure_grad();
        for (std::size_t b = 0; b < ids.size(); ++b) {
            const S* g = n.grad.data() + b * dim;
            S* row = dt.data() + static_cast<std::size_t>(ids[b]) * dim;
            for (int i = 0; i < dim; ++i) row[i] += g[i];
        }
    });
}

// ----------------------------------------------------------------- losses

/// Mean of (a-b)^2 over all elements -> scalar.
template <typename S>
VarT<S> mse_mean(const VarT<S>& a, const VarT<S>& b) {
    if (!a->value.same_shape(b->value)) throw std::invalid_argument("mse_mean: shape mismatch");
    const std::size_t n = a->value.numel();
    S acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const S d = a->value[i] - b->value[i];
        acc += d * d;
    }
    TensorT<S> y = TensorT<S>::scalar(acc / static_cast<S>(n));
    return make_op<S>(std::move(y), {a, b}, [a, b, n](NodeT<S>& node) {
        const S g = node.grad[0] * S(2) / static_cast<S>(n);
        if (a->requires_grad) {
            auto& da = a->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) da[i] += g * (a->value[i] - b->value[i]);
        }
        if (b->requires_grad) {
            auto& db = b->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) db[i] += g * (b->value[i] - a->value[i]);
        }
    });
}

/// Mean negative log softmax probability of the true class. Log-sum-exp
/// shifted; the adjoint is (softmax - onehot) / n.
template <typename S>
VarT<S> cross_entropy(const VarT<S>& logits, const std::vector<int>& labels) {
    const int B = logits->value.extent(0), C = logits->value.extent(1);
    if (static_cast<int>(labels.size()) != B) throw std::invalid_argument("cross_entropy: label count != batch");
    for (int l : labels)
        if (l < 0 || l >= C) throw std::out_of_range("cross_entropy: label out of range [0," + std::to_string(C) + ")");
    auto probs = std::make_shared<TensorT<S>>(kernels::softmax_rows<S>(logits->value));
    S loss = 0;
    for (int b = 0; b < B; ++b) {
        const S* xr = logits->value.data() + static_cast<std::size_t>(b) * C;
        S mx = xr[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, xr[c]);
        S lse = 0;
        for (int c = 0; c < C; ++c) lse += std::exp(xr[c] - mx);
        loss += (std::log(lse) + mx) - xr[labels[static_cast<std::size_t>(b)]];
    }
    TensorT<S> y = TensorT<S>::scalar(loss / static_cast<S>(B));
    return make_op<S>(std::move(y), {logits}, [logits, probs, labels, B, C](NodeT<S>& node) {
        if (!logits->requires_grad) return;
        auto& dx = logits->ensure_grad();
        const S g = node.grad[0] / static_cast<S>(B);
        for (int b = 0; b < B; ++b) {
            const S* pr = probs->data() + static_cast<std::size_t>(b) * C;
            S* dr = dx.data() + static_cast<std::size_t>(b) * C;
            for (int c = 0; c < C; ++c) dr[c] += g * pr[c];
            dr[labels[static_cast<std::size_t>(b)]] -= g;
        }
    });
}

}  // namespace diffgen
