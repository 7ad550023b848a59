#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "diffgen/parallel.hpp"
#include "diffgen/tensor.hpp"

// Raw dense kernels behind the autodiff ops. All loops accumulate in a
// fixed order (k ascending per output element, sample index ascending for
// cross-batch reductions) so results are bit-identical across thread counts.

namespace diffgen::kernels {

// ---------------------------------------------------------------- gemm

/// C(M,N) += A(M,K) * B(K,N), row-major. Set accumulate=false to overwrite.
template <typename S>
void gemm_nn(int M, int N, int K, const S* A, const S* B, S* C, bool accumulate) {
    for (int m = 0; m < M; ++m) {
        S* c = C + static_cast<std::size_t>(m) * N;
        if (!accumulate) std::fill(c, c + N, S(0));
        const S* a = A + static_cast<std::size_t>(m) * K;
        for (int k = 0; k < K; ++k) {
            const S av = a[k];
            if (av == S(0)) continue;
            const S* b = B + static_cast<std::size_t>(k) * N;
            for (int n = 0; n < N; ++n) c[n] += av * b[n];
        }
    }
}

/// C(M,N) += A(K,M)^T * B(K,N).
template <typename S>
void gemm_tn(int M, int N, int K, const S* A, const S* B, S* C, bool accumulate) {
    if (!accumulate) std::fill(C, C + static_cast<std::size_t>(M) * N, S(0));
    for (int k = 0; k < K; ++k) {
        const S* a = A + static_cast<std::size_t>(k) * M;
        const S* b = B + static_cast<std::size_t>(k) * N;
        for (int m = 0; m < M; ++m) {
            const S av = a[m];
            if (av == S(0)) continue;
            S* c = C + static_cast<std::size_t>(m) * N;
            for (int n = 0; n < N; ++n) c[n] += av * b[n];
        }
    }
}

/// C(M,K) += A(M,N) * B(K,N)^T. Dot-product form with four explicit
/// accumulators; the combination order is fixed by this code.
template <typename S>
void gemm_nt(int M, int K, int N, const S* A, const S* B, S* C, bool accumulate) {
    for (int m = 0; m < M; ++m) {
        const S* a = A + static_cast<std::size_t>(m) * N;
        S* c = C + static_cast<std::size_t>(m) * K;
        for (int k = 0; k < K; ++k) {
            const S* b = B + static_cast<std::size_t>(k) * N;
            S s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            int n = 0;
            for (; n + 4 <= N; n += 4) {
                s0 += a[n] * b[n];
                s1 += a[n + 1] * b[n + 1];
                s2 += a[n + 2] * b[n + 2];
                s3 += a[n + 3] * b[n + 3];
            }
            S s = (s0 + s1) + (s2 + s3);
            for (; n < N; ++n) s += a[n] * b[n];
            if (accumulate)
                c[k] += s;
            else
                c[k] = s;
        }
    }
}

// ---------------------------------------------------------------- conv2d

struct Conv2dSpec {
    int stride = 1;
    int pad = 0;
    int groups = 1;
};

inline int conv_out_extent(int in, int kernel, int stride, int pad) {
    int span = in + 2 * pad - kernel;
    if (span < 0) throw std::invalid_argument("conv2d: kernel larger than padded input");
    return span / stride + 1;
}

/// Scatter one sample into the (Cin*kh*kw, Ho*Wo) column matrix.
template <typename S>
void im2col(const S* x, int Cin, int H, int W, int kh, int kw, int stride, int pad, int Ho, int Wo, S* col) {
    const int N = Ho * Wo;
    for (int c = 0; c < Cin; ++c) {
        const S* xc = x + static_cast<std::size_t>(c) * H * W;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                S* row = col + (static_cast<std::size_t>(c) * kh * kw + ki * kw + kj) * N;
                for (int ho = 0; ho < Ho; ++ho) {
                    const int hi = ho * stride - pad + ki;
                    S* out = row + static_cast<std::size_t>(ho) * Wo;
                    if (hi < 0 || hi >= H) {
                        std::fill(out, out + Wo, S(0));
                        continue;
                    }
                    const S* xr = xc + static_cast<std::size_t>(hi) * W;
                    for (int wo = 0; wo < Wo; ++wo) {
                        const int wi = wo * stride - pad + kj;
                        out[wo] = (wi >= 0 && wi < W) ? xr[wi] : S(0);
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: accumulate column-matrix gradients back into the image.
template <typename S>
void col2im(const S* col, int Cin, int H, int W, int kh, int kw, int stride, int pad, int Ho, int Wo, S* dx) {
    const int N = Ho * Wo;
    for (int c = 0; c < Cin; ++c) {
        S* xc = dx + static_cast<std::size_t>(c) * H * W;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const S* row = col + (static_cast<std::size_t>(c) * kh * kw + ki * kw + kj) * N;
                for (int ho = 0; ho < Ho; ++ho) {
                    const int hi = ho * stride - pad + ki;
                    if (hi < 0 || hi >= H) continue;
                    const S* in = row + static_cast<std::size_t>(ho) * Wo;
                    S* xr = xc + static_cast<std::size_t>(hi) * W;
                    for (int wo = 0; wo < Wo; ++wo) {
                        const int wi = wo * stride - pad + kj;
                        if (wi >= 0 && wi < W) xr[wi] += in[wo];
                    }
                }
            }
        }
    }
}

/// x (B,Cin,H,W), w (Cout,Cin/groups,kh,kw), bias (Cout) optional -> y (B,Cout,Ho,Wo).
template <typename S>
TensorT<S> conv2d_forward(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>* bias, const Conv2dSpec& sp) {
    if (x.ndim() != 4 || w.ndim() != 4) throw std::invalid_argument("conv2d: expects 4-d input and weight");
    const int B = x.extent(0), Cin = x.extent(1), H = x.extent(2), W = x.extent(3);
    const int Cout = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    const int g = sp.groups;
    if (g < 1 || Cin % g != 0 || Cout % g != 0) throw std::invalid_argument("conv2d: invalid group count");
    if (w.extent(1) != Cin / g)
        throw std::invalid_argument("conv2d: weight shape " + shape_str(w.shape()) + " does not match input channels " +
                                    std::to_string(Cin) + " with groups " + std::to_string(g));
    if (bias && (bias->ndim() != 1 || bias->extent(0) != Cout)) throw std::invalid_argument("conv2d: bad bias shape");
    const int Ho = conv_out_extent(H, kh, sp.stride, sp.pad);
    const int Wo = conv_out_extent(W, kw, sp.stride, sp.pad);
    const int N = Ho * Wo;
    const int Cg = Cin / g, Mg = Cout / g, Kg = Cg * kh * kw;

    TensorT<S> y({B, Cout, Ho, Wo});
    parallel_for(B, [&](std::int64_t b) {
        std::vector<S> col(static_cast<std::size_t>(Cin) * kh * kw * N);
        im2col(x.data() + static_cast<std::size_t>(b) * Cin * H * W, Cin, H, W, kh, kw, sp.stride, sp.pad, Ho, Wo,
               col.data());
        S* yb = y.data() + static_cast<std::size_t>(b) * Cout * N;
        for (int gi = 0; gi < g; ++gi) {
            gemm_nn(Mg, N, Kg, w.data() + static_cast<std::size_t>(gi) * Mg * Kg,
                    col.data() + static_cast<std::size_t>(gi) * Kg * N, yb + static_cast<std::size_t>(gi) * Mg * N,
                    false);
        }
        if (bias) {
            for (int c = 0; c < Cout; ++c) {
                const S bv = (*bias)[static_cast<std::size_t>(c)];
                S* row = yb + static_cast<std::size_t>(c) * N;
                for (int n = 0; n < N; ++n) row[n] += bv;
            }
        }
    });
    return y;
}

/// Gradients of conv2d. Any of dx/dw/db may be null to skip.
template <typename S>
void conv2d_backward(const TensorT<S>& x, const TensorT<S>& w, const Conv2dSpec& sp, const TensorT<S>& dy,
                     TensorT<S>* dx, TensorT<S>* dw, TensorT<S>* db) {
    const int B = x.extent(0), Cin = x.extent(1), H = x.extent(2), W = x.extent(3);
    const int Cout = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    const int g = sp.groups;
    const int Ho = dy.extent(2), Wo = dy.extent(3);
    const int N = Ho * Wo;
    const int Cg = Cin / g, Mg = Cout / g, Kg = Cg * kh * kw;
    const std::size_t wsize = w.numel();

    // Per-sample partials for the cross-batch reductions, summed in sample
    // order afterwards.
    std::vector<S> dw_part, db_part;
    if (dw) dw_part.assign(static_cast<std::size_t>(B) * wsize, S(0));
    if (db) db_part.assign(static_cast<std::size_t>(B) * Cout, S(0));

    parallel_for(B, [&](std::int64_t b) {
        std::vector<S> col(static_cast<std::size_t>(Cin) * kh * kw * N);
        im2col(x.data() + static_cast<std::size_t>(b) * Cin * H * W, Cin, H, W, kh, kw, sp.stride, sp.pad, Ho, Wo,
               col.data());
        const S* dyb = dy.data() + static_cast<std::size_t>(b) * Cout * N;
        if (dw) {
            S* dwb = dw_part.data() + static_cast<std::size_t>(b) * wsize;
            for (int gi = 0; gi < g; ++gi)
                gemm_nt(Mg, Kg, N, dyb + static_cast<std::size_t>(gi) * Mg * N,
                        col.data() + static_cast<std::size_t>(gi) * Kg * N,
                        dwb + static_cast<std::size_t>(gi) * Mg * Kg, false);
        }
        if (db) {
            S* dbb = db_part.data() + static_cast<std::size_t>(b) * Cout;
            for (int c = 0; c < Cout; ++c) {
                const S* row = dyb + static_cast<std::size_t>(c) * N;
                S s = 0;
                for (int n = 0; n < N; ++n) s += row[n];
                dbb[c] = s;
            }
        }
        if (dx) {
            std::vector<S> dcol(static_cast<std::size_t>(Cin) * kh * kw * N);
            for (int gi = 0; gi < g; ++gi)
                gemm_tn(Kg, N, Mg, w.data() + static_cast<std::size_t>(gi) * Mg * Kg,
                        dyb + static_cast<std::size_t>(gi) * Mg * N, dcol.data() + static_cast<std::size_t>(gi) * Kg * N,
                        false);
            col2im(dcol.data(), Cin, H, W, kh, kw, sp.stride, sp.pad, Ho, Wo,
                   dx->data() + static_cast<std::size_t>(b) * Cin * H * W);
        }
    });

    if (dw) {
        for (int b = 0; b < B; ++b) {
            const S* src = dw_part.data() + static_cast<std::size_t>(b) * wsize;
            for (std::size_t i = 0; i < wsize; ++i) (*dw)[i] += src[i];
        }
    }
    if (db) {
        for (int b = 0; b < B; ++b) {
            const S* src = db_part.data() + static_cast<std::size_t>(b) * Cout;
            for (int c = 0; c < Cout; ++c) (*db)[static_cast<std::size_t>(c)] += src[c];
        }
    }
}

// ------------------------------------------------------------ upsample

template <typename S>
TensorT<S> upsample_nearest_forward(const TensorT<S>& x, int factor) {
    const int B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    TensorT<S> y({B, C, H * factor, W * factor});
    const int Ho = H * factor, Wo = W * factor;
    parallel_for(static_cast<std::int64_t>(B) * C, [&](std::int64_t bc) {
        const S* xc = x.data() + static_cast<std::size_t>(bc) * H * W;
        S* yc = y.data() + static_cast<std::size_t>(bc) * Ho * Wo;
        for (int i = 0; i < Ho; ++i) {
            const S* xr = xc + static_cast<std::size_t>(i / factor) * W;
            S* yr = yc + static_cast<std::size_t>(i) * Wo;
            for (int j = 0; j < Wo; ++j) yr[j] = xr[j / factor];
        }
    });
    return y;
}

template <typename S>
void upsample_nearest_backward(const TensorT<S>& dy, int factor, TensorT<S>& dx) {
    const int B = dx.extent(0), C = dx.extent(1), H = dx.extent(2), W = dx.extent(3);
    const int Ho = H * factor, Wo = W * factor;
    parallel_for(static_cast<std::int64_t>(B) * C, [&](std::int64_t bc) {
        const S* dyc = dy.data() + static_cast<std::size_t>(bc) * Ho * Wo;
        S* dxc = dx.data() + static_cast<std::size_t>(bc) * H * W;
        for (int i = 0; i < Ho; ++i) {
            const S* dyr = dyc + static_cast<std::size_t>(i) * Wo;
            S* dxr = dxc + static_cast<std::size_t>(i / factor) * W;
            for (int j = 0; j < Wo; ++j) dxr[j / factor] += dyr[j];
        }
    });
}

// ------------------------------------------------------------- pooling

/// 2-D max pool; records the argmax flat offset per output element
/// (first occurrence in scan order) for the adjoint. Padded positions are
/// treated as -inf and never win.
template <typename S>
TensorT<S> maxpool2d_forward(const TensorT<S>& x, int kernel, int stride, int pad, std::vector<std::int32_t>& argmax) {
    const int B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    const int Ho = conv_out_extent(H, kernel, stride, pad);
    const int Wo = conv_out_extent(W, kernel, stride, pad);
    TensorT<S> y({B, C, Ho, Wo});
    argmax.assign(y.numel(), 0);
    parallel_for(static_cast<std::int64_t>(B) * C, [&](std::int64_t bc) {
        const S* xc = x.data() + static_cast<std::size_t>(bc) * H * W;
        S* yc = y.data() + static_cast<std::size_t>(bc) * Ho * Wo;
        std::int32_t* am = argmax.data() + static_cast<std::size_t>(bc) * Ho * Wo;
        for (int ho = 0; ho < Ho; ++ho) {
            for (int wo = 0; wo < Wo; ++wo) {
                S best = -std::numeric_limits<S>::infinity();
                std::int32_t besti = -1;
                for (int ki = 0; ki < kernel; ++ki) {
                    const int hi = ho * stride - pad + ki;
                    if (hi < 0 || hi >= H) continue;
                    for (int kj = 0; kj < kernel; ++kj) {
                        const int wi = wo * stride - pad + kj;
                        if (wi < 0 || wi >= W) continue;
                        const S v = xc[static_cast<std::size_t>(hi) * W + wi];
                        if (v > best) {
                            best = v;
                            besti = static_cast<std::int32_t>(hi * W + wi);
                        }
                    }
                }
                yc[static_cast<std::size_t>(ho) * Wo + wo] = best;
                am[static_cast<std::size_t>(ho) * Wo + wo] = besti;
            }
        }
    });
    return y;
}

template <typename S>
void maxpool2d_backward(const TensorT<S>& dy, const std::vector<std::int32_t>& argmax, TensorT<S>& dx) {
    const int B = dx.extent(0), C = dx.extent(1), H = dx.extent(2), W = dx.extent(3);
    const int n_out = static_cast<int>(dy.numel() / (static_cast<std::size_t>(B) * C));
    parallel_for(static_cast<std::int64_t>(B) * C, [&](std::int64_t bc) {
        const S* dyc = dy.data() + static_cast<std::size_t>(bc) * n_out;
        const std::int32_t* am = argmax.data() + static_cast<std::size_t>(bc) * n_out;
        S* dxc = dx.data() + static_cast<std::size_t>(bc) * H * W;
        for (int i = 0; i < n_out; ++i)
            if (am[i] >= 0) dxc[am[i]] += dyc[i];
    });
}

/// (B,C,H,W) -> (B,C) spatial mean.
template <typename S>
TensorT<S> global_avg_pool_forward(const TensorT<S>& x) {
    const int B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    const int n = H * W;
    TensorT<S> y({B, C});
    parallel_for(static_cast<std::int64_t>(B) * C, [&](std::int64_t bc) {
        const S* xc = x.data() + static_cast<std::size_t>(bc) * n;
        S s = 0;
        for (int i = 0; i < n; ++i) s += xc[i];
        y[static_cast<std::size_t>(bc)] = s / static_cast<S>(n);
    });
    return y;
}

template <typename S>
void global_avg_pool_backward(const TensorT<S>& dy, TensorT<S>& dx) {
    const int B = dx.extent(0), C = dx.extent(1), H = dx.extent(2), W = dx.extent(3);
    const int n = H * W;
    parallel_for(static_cast<std::int64_t>(B) * C, [&](std::int64_t bc) {
        const S g = dy[static_cast<std::size_t>(bc)] / static_cast<S>(n);
        S* dxc = dx.data() + static_cast<std::size_t>(bc) * n;
        for (int i = 0; i < n; ++i) dxc[i] += g;
    });
}

// -------------------------------------------------------------- linear

/// y(B,out) = x(B,in) * w(out,in)^T + bias.
template <typename S>
TensorT<S> linear_forward(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>* bias) {
    const int B = x.extent(0), in = x.extent(1), out = w.extent(0);
    if (w.extent(1) != in) throw std::invalid_argument("linear: weight/input mismatch");
    TensorT<S> y({B, out});
    gemm_nt(B, out, in, x.data(), w.data(), y.data(), false);
    if (bias) {
        for (int b = 0; b < B; ++b)
            for (int o = 0; o < out; ++o) y[static_cast<std::size_t>(b) * out + o] += (*bias)[static_cast<std::size_t>(o)];
    }
    return y;
}

template <typename S>
void linear_backward(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& dy, TensorT<S>* dx, TensorT<S>* dw,
                     TensorT<S>* db) {
    const int B = x.extent(0), in = x.extent(1), out = w.extent(0);
    if (dx) gemm_nn(B, in, out, dy.data(), w.data(), dx->data(), true);
    if (dw) gemm_tn(out, in, B, dy.data(), x.data(), dw->data(), true);
    if (db) {
        for (int b = 0; b < B; ++b)
            for (int o = 0; o < out; ++o) (*db)[static_cast<std::size_t>(o)] += dy[static_cast<std::size_t>(b) * out + o];
    }
}

// ----------------------------------------------------------- group norm

template <typename S>
struct GroupNormCache {
    TensorT<S> mean;  // (B, groups)
    TensorT<S> rstd;  // (B, groups)
};

/// Per-sample group normalization with affine scale/shift, eps inside sqrt.
template <typename S>
TensorT<S> group_norm_forward(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta, int groups, S eps,
                              GroupNormCache<S>& cache) {
    const int B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    if (groups < 1 || C % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
    const int Cg = C / groups;
    const std::size_t m = static_cast<std::size_t>(Cg) * H * W;
    TensorT<S> y(x.shape());
    cache.mean = TensorT<S>({B, groups});
    cache.rstd = TensorT<S>({B, groups});
    parallel_for(static_cast<std::int64_t>(B) * groups, [&](std::int64_t bg) {
        const S* xg = x.data() + static_cast<std::size_t>(bg) * m;
        S* yg = y.data() + static_cast<std::size_t>(bg) * m;
        S mean = 0;
        for (std::size_t i = 0; i < m; ++i) mean += xg[i];
        mean /= static_cast<S>(m);
        S var = 0;
        for (std::size_t i = 0; i < m; ++i) {
            const S d = xg[i] - mean;
            var += d * d;
        }
        var /= static_cast<S>(m);
        const S rstd = S(1) / std::sqrt(var + eps);
        cache.mean[static_cast<std::size_t>(bg)] = mean;
        cache.rstd[static_cast<std::size_t>(bg)] = rstd;
        const int g = static_cast<int>(bg) % groups;
        for (int c = 0; c < Cg; ++c) {
            const S gm = gamma[static_cast<std::size_t>(g * Cg + c)];
            const S bt = beta[static_cast<std::size_t>(g * Cg + c)];
            const S* xc = xg + static_cast<std::size_t>(c) * H * W;
            S* yc = yg + static_cast<std::size_t>(c) * H * W;
            for (int i = 0; i < H * W; ++i) yc[i] = (xc[i] - mean) * rstd * gm + bt;
        }
    });
    return y;
}

template <typename S>
void group_norm_backward(const TensorT<S>& x, const TensorT<S>& gamma, int groups, const GroupNormCache<S>& cache,
                         const TensorT<S>& dy, TensorT<S>* dx, TensorT<S>* dgamma, TensorT<S>* dbeta) {
    const int B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    const int Cg = C / groups;
    const std::size_t m = static_cast<std::size_t>(Cg) * H * W;
    const int hw = H * W;

    std::vector<S> dgamma_part, dbeta_part;
    if (dgamma) dgamma_part.assign(static_cast<std::size_t>(B) * C, S(0));
    if (dbeta) dbeta_part.assign(static_cast<std::size_t>(B) * C, S(0));

    parallel_for(static_cast<std::int64_t>(B) * groups, [&](std::int64_t bg) {
        const int b = static_cast<int>(bg) / groups;
        const int g = static_cast<int>(bg) % groups;
        const S* xg = x.data() + static_cast<std::size_t>(bg) * m;
        const S* dyg = dy.data() + static_cast<std::size_t>(bg) * m;
        const S mean = cache.mean[static_cast<std::size_t>(bg)];
        const S rstd = cache.rstd[static_cast<std::size_t>(bg)];

        // dxhat = dy * gamma; reductions over the group
        S sum_dxhat = 0, sum_dxhat_xhat = 0;
        for (int c = 0; c < Cg; ++c) {
            const S gm = gamma[static_cast<std::size_t>(g * Cg + c)];
            const S* xc = xg + static_cast<std::size_t>(c) * hw;
            const S* dyc = dyg + static_cast<std::size_t>(c) * hw;
            for (int i = 0; i < hw; ++i) {
                const S xhat = (xc[i] - mean) * rstd;
                const S dxhat = dyc[i] * gm;
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
            }
        }
        const S inv_m = S(1) / static_cast<S>(m);
        for (int c = 0; c < Cg; ++c) {
            const S gm = gamma[static_cast<std::size_t>(g * Cg + c)];
            const S* xc = xg + static_cast<std::size_t>(c) * hw;
            const S* dyc = dyg + static_cast<std::size_t>(c) * hw;
            S dg = 0, dbt = 0;
            if (dx) {
                S* dxc = dx->data() + static_cast<std::size_t>(bg) * m + static_cast<std::size_t>(c) * hw;
                for (int i = 0; i < hw; ++i) {
                    const S xhat = (xc[i] - mean) * rstd;
                    const S dxhat = dyc[i] * gm;
                    dxc[i] += rstd * (dxhat - inv_m * sum_dxhat - xhat * inv_m * sum_dxhat_xhat);
                    dg += dyc[i] * xhat;
                    dbt += dyc[i];
                }
            } else {
                for (int i = 0; i < hw; ++i) {
                    const S xhat = (xc[i] - mean) * rstd;
                    dg += dyc[i] * xhat;
                    dbt += dyc[i];
                }
            }
            if (dgamma) dgamma_part[static_cast<std::size_t>(b) * C + g * Cg + c] = dg;
            if (dbeta) dbeta_part[static_cast<std::size_t>(b) * C + g * Cg + c] = dbt;
        }
    });

    if (dgamma) {
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                (*dgamma)[static_cast<std::size_t>(c)] += dgamma_part[static_cast<std::size_t>(b) * C + c];
    }
    if (dbeta) {
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                (*dbeta)[static_cast<std::size_t>(c)] += dbeta_part[static_cast<std::size_t>(b) * C + c];
    }
}

// ------------------------------------------------------------- softmax

/// Row-wise softmax over the last dimension of a 2-d tensor, with the
/// usual max-shift so confident logits cannot overflow.
template <typename S>
TensorT<S> softmax_rows(const TensorT<S>& x) {
    const int B = x.extent(0), C = x.extent(1);
    TensorT<S> y(x.shape());
    parallel_for(B, [&](std::int64_t b) {
        const S* xr = x.data() + static_cast<std::size_t>(b) * C;
        S* yr = y.data() + static_cast<std::size_t>(b) * C;
        S mx = xr[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, xr[c]);
        S sum = 0;
        for (int c = 0; c < C; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            sum += yr[c];
        }
        const S inv = S(1) / sum;
        for (int c = 0; c < C; ++c) yr[c] *= inv;
    });
    return y;
}

/// dx = p * (dy - sum(dy * p)) per row.
template <typename S>
void softmax_rows_backward(const TensorT<S>& p, const TensorT<S>& dy, TensorT<S>& dx) {
    const int B = p.extent(0), C = p.extent(1);
    parallel_for(B, [&](std::int64_t b) {
        const S* pr = p.data() + static_cast<std::size_t>(b) * C;
        const S* dyr = dy.data() + static_cast<std::size_t>(b) * C;
        S* dxr = dx.data() + static_cast<std::size_t>(b) * C;
        S dot = 0;
        for (int c = 0; c < C; ++c) dot += dyr[c] * pr[c];
        for (int c = 0; c < C; ++c) dxr[c] += pr[c] * (dyr[c] - dot);
    });
}

// -------------------------------------------------------- elementwise

template <typename S>
S sigmoid(S x) {
    return x >= S(0) ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
}

}  // namespace diffgen::kernels
