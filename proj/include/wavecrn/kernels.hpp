#pragma once

// Data-parallel compute kernels. Every kernel parallelizes over independent
// output elements only and reduces each output in a fixed order, so results
// are bitwise identical for any thread count. Serial counterparts used as
// test oracles live in src/reference/ and must not be included from here.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "wavecrn/common.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace wavecrn::kernels {

using std::int64_t;

template <typename T>
inline T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

#if defined(__GNUC__) || defined(__clang__)
#define WAVECRN_VEC_KERNELS 1

namespace detail {

template <typename T>
struct vtraits {
    typedef T vec __attribute__((vector_size(64), aligned(4), may_alias));
    static constexpr int lanes = 64 / int(sizeof(T));
};

template <typename T>
using vec_t = typename vtraits<T>::vec;

template <typename T>
inline vec_t<T> vload(const T* p) {
    return *reinterpret_cast<const vec_t<T>*>(p);
}

template <typename T>
inline void vstore(T* p, vec_t<T> v) {
    *reinterpret_cast<vec_t<T>*>(p) = v;
}

// 4 x (2 vectors) register tile: tmp = A[i0..i0+3][k0..k0+kc) * packed B panel.
// noinline keeps the register allocation of the accumulators intact.
template <typename T>
__attribute__((noinline)) void micro_tile(const T* __restrict a0, const T* __restrict a1,
                                          const T* __restrict a2, const T* __restrict a3,
                                          const T* __restrict pack, int64_t kc, T* __restrict tmp) {
    using V = vec_t<T>;
    constexpr int L = vtraits<T>::lanes;
    V c00{}, c01{}, c10{}, c11{}, c20{}, c21{}, c30{}, c31{};
    for (int64_t p = 0; p < kc; ++p) {
        V b0 = vload(pack);
        V b1 = vload(pack + L);
        pack += 2 * L;
        V av;
        av = V{} + a0[p];
        c00 += av * b0;
        c01 += av * b1;
        av = V{} + a1[p];
        c10 += av * b0;
        c11 += av * b1;
        av = V{} + a2[p];
        c20 += av * b0;
        c21 += av * b1;
        av = V{} + a3[p];
        c30 += av * b0;
        c31 += av * b1;
    }
    vstore(tmp + 0 * L, c00);
    vstore(tmp + 1 * L, c01);
    vstore(tmp + 2 * L, c10);
    vstore(tmp + 3 * L, c11);
    vstore(tmp + 4 * L, c20);
    vstore(tmp + 5 * L, c21);
    vstore(tmp + 6 * L, c30);
    vstore(tmp + 7 * L, c31);
}

}  // namespace detail
#endif  // WAVECRN_VEC_KERNELS

// C[m x n] = (or +=) A[m x k] * B[k x n], all row-major. Accumulation over k
// runs strictly ascending inside 512-wide k-blocks, blocks combined ascending;
// this order never depends on the thread count (threads split rows only).
template <typename T>
void gemm_nn(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n, bool accumulate = false) {
    matmul_calls().fetch_add(1, std::memory_order_relaxed);
    if (!accumulate) std::fill(C, C + m * n, T(0));
#ifdef WAVECRN_VEC_KERNELS
    using V = detail::vec_t<T>;
    (void)sizeof(V);
    constexpr int64_t L = detail::vtraits<T>::lanes;
    constexpr int64_t MR = 4, NR = 2 * L, KC = 512;
    const int nthreads = max_threads();
    std::vector<T> packbuf(static_cast<size_t>(KC) * NR);
    T* pack = packbuf.data();
    for (int64_t k0 = 0; k0 < k; k0 += KC) {
        const int64_t kc = std::min(KC, k - k0);
        for (int64_t j0 = 0; j0 < n; j0 += NR) {
            const int64_t nr = std::min(NR, n - j0);
            for (int64_t p = 0; p < kc; ++p) {
                const T* src = B + (k0 + p) * n + j0;
                T* dst = pack + p * NR;
                int64_t j = 0;
                for (; j < nr; ++j) dst[j] = src[j];
                for (; j < NR; ++j) dst[j] = T(0);
            }
            const int64_t mfull = m - m % MR;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nthreads) if (nthreads > 1 && mfull > 4 * MR)
#endif
            for (int64_t i0 = 0; i0 < mfull; i0 += MR) {
                alignas(64) T tmp[MR * NR];
                const T* a = A + i0 * k + k0;
                detail::micro_tile(a, a + k, a + 2 * k, a + 3 * k, pack, kc, tmp);
                for (int64_t ii = 0; ii < MR; ++ii) {
                    T* c = C + (i0 + ii) * n + j0;
                    const T* t = tmp + ii * NR;
                    for (int64_t jj = 0; jj < nr; ++jj) c[jj] += t[jj];
                }
            }
            for (int64_t i = mfull; i < m; ++i) {
                const T* a0 = A + i * k + k0;
                T* c = C + i * n + j0;
                for (int64_t p = 0; p < kc; ++p) {
                    const T av = a0[p];
                    const T* bp = pack + p * NR;
                    for (int64_t jj = 0; jj < nr; ++jj) c[jj] += av * bp[jj];
                }
            }
        }
    }
#else
    const int nthreads = max_threads();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nthreads) if (nthreads > 1 && m > 8)
#endif
    for (int64_t i = 0; i < m; ++i) {
        const T* a = A + i * k;
        T* c = C + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const T av = a[p];
            const T* b = B + p * n;
            for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
#endif
}

// C[k x n] (+)= A^T * B with A stored [m x k], B stored [m x n].
// Blocked over rows of A/B; each block is transposed once and handed to
// gemm_nn, keeping the ascending-row reduction order.
template <typename T>
void gemm_tn(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n, bool accumulate = false) {
    if (!accumulate) std::fill(C, C + k * n, T(0));
    constexpr int64_t IB = 128;
    std::vector<T> at(static_cast<size_t>(k) * IB);
    for (int64_t i0 = 0; i0 < m; i0 += IB) {
        const int64_t ib = std::min(IB, m - i0);
        for (int64_t p = 0; p < k; ++p)
            for (int64_t ii = 0; ii < ib; ++ii) at[p * ib + ii] = A[(i0 + ii) * k + p];
        gemm_nn(at.data(), B + i0 * n, C, k, ib, n, true);
    }
}

// C[m x n] (+)= A * B^T with B stored [n x k]; B is transposed once up front.
template <typename T>
void gemm_nt(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n, bool accumulate = false) {
    std::vector<T> bt(static_cast<size_t>(k) * n);
    for (int64_t j = 0; j < n; ++j)
        for (int64_t p = 0; p < k; ++p) bt[p * n + j] = B[j * k + p];
    gemm_nn(A, bt.data(), C, m, k, n, accumulate);
}

// ---------------------------------------------------------------------------
// 1D convolution family. x[N x Cin x L], w[Cout x Cin x K], y[N x Cout x T],
// T = (L + 2P - K)/S + 1. Zero padding is virtual (bounds check).

template <typename T>
void conv1d_fwd(const T* x, const T* w, const T* b, T* y, int64_t N, int64_t Cin, int64_t L,
                int64_t Cout, int64_t K, int64_t S, int64_t P, int64_t Tout) {
    const int nthreads = max_threads();
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) num_threads(nthreads) if (nthreads > 1)
#endif
    for (int64_t n = 0; n < N; ++n)
        for (int64_t co = 0; co < Cout; ++co) {
            T* yrow = y + (n * Cout + co) * Tout;
            for (int64_t t = 0; t < Tout; ++t) {
                T acc = b ? b[co] : T(0);
                const int64_t base = t * S - P;
                for (int64_t ci = 0; ci < Cin; ++ci) {
                    const T* xrow = x + (n * Cin + ci) * L;
                    const T* wrow = w + (co * Cin + ci) * K;
                    const int64_t klo = std::max<int64_t>(0, -base);
                    const int64_t khi = std::min<int64_t>(K, L - base);
                    for (int64_t kk = klo; kk < khi; ++kk) acc += wrow[kk] * xrow[base + kk];
                }
                yrow[t] = acc;
            }
        }
}

template <typename T>
void conv1d_grad_w(const T* x, const T* gy, T* gw, T* gb, int64_t N, int64_t Cin, int64_t L,
                   int64_t Cout, int64_t K, int64_t S, int64_t P, int64_t Tout) {
    const int nthreads = max_threads();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nthreads) if (nthreads > 1)
#endif
    for (int64_t co = 0; co < Cout; ++co) {
        for (int64_t ci = 0; ci < Cin; ++ci)
            for (int64_t kk = 0; kk < K; ++kk) {
                T acc = T(0);
                for (int64_t n = 0; n < N; ++n) {
                    const T* xrow = x + (n * Cin + ci) * L;
                    const T* grow = gy + (n * Cout + co) * Tout;
                    for (int64_t t = 0; t < Tout; ++t) {
                        const int64_t xi = t * S - P + kk;
                        if (xi >= 0 && xi < L) acc += grow[t] * xrow[xi];
                    }
                }
                gw[(co * Cin + ci) * K + kk] = acc;
            }
        T acc = T(0);
        for (int64_t n = 0; n < N; ++n) {
            const T* grow = gy + (n * Cout + co) * Tout;
            for (int64_t t = 0; t < Tout; ++t) acc += grow[t];
        }
        gb[co] = acc;
    }
}

template <typename T>
void conv1d_grad_x(const T* gy, const T* w, T* gx, int64_t N, int64_t Cin, int64_t L, int64_t Cout,
                   int64_t K, int64_t S, int64_t P, int64_t Tout) {
    const int nthreads = max_threads();
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) num_threads(nthreads) if (nthreads > 1)
#endif
    for (int64_t n = 0; n < N; ++n)
        for (int64_t ci = 0; ci < Cin; ++ci) {
            T* gxrow = gx + (n * Cin + ci) * L;
            for (int64_t l = 0; l < L; ++l) {
                T acc = T(0);
                for (int64_t co = 0; co < Cout; ++co) {
                    const T* grow = gy + (n * Cout + co) * Tout;
                    const T* wrow = w + (co * Cin + ci) * K;
                    for (int64_t kk = 0; kk < K; ++kk) {
                        const int64_t num = l + P - kk;
                        if (num < 0 || num % S) continue;
                        const int64_t t = num / S;
                        if (t < Tout) acc += grow[t] * wrow[kk];
                    }
                }
                gxrow[l] = acc;
            }
        }
}

// Transposed convolution. f[N x Cin x T], w[Cin x Cout x K], y[N x Cout x Lout],
// Lout = (T - 1)*S - 2P + K. Gather form: contributions with t*S + k - P == l.

template <typename T>
void convt1d_fwd(const T* f, const T* w, const T* b, T* y, int64_t N, int64_t Cin, int64_t Tin,
                 int64_t Cout, int64_t K, int64_t S, int64_t P, int64_t Lout) {
    const int nthreads = max_threads();
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) num_threads(nthreads) if (nthreads > 1)
#endif
    for (int64_t n = 0; n < N; ++n)
        for (int64_t co = 0; co < Cout; ++co) {
            T* yrow = y + (n * Cout + co) * Lout;
            for (int64_t l = 0; l < Lout; ++l) {
                T acc = b ? b[co] : T(0);
                for (int64_t ci = 0; ci < Cin; ++ci) {
                    const T* frow = f + (n * Cin + ci) * Tin;
                    const T* wrow = w + (ci * Cout + co) * K;
                    for (int64_t kk = 0; kk < K; ++kk) {
                        const int64_t num = l + P - kk;
                        if (num < 0 || num % S) continue;
                        const int64_t t = num / S;
                        if (t < Tin) acc += frow[t] * wrow[kk];
                    }
                }
                yrow[l] = acc;
            }
        }
}

template <typename T>
void convt1d_grad_w(const T* f, const T* gy, T* gw, T* gb, int64_t N, int64_t Cin, int64_t Tin,
                    int64_t Cout, int64_t K, int64_t S, int64_t P, int64_t Lout) {
    const int nthreads = max_threads();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nthreads) if (nthreads > 1)
#endif
    for (int64_t ci = 0; ci < Cin; ++ci)
        for (int64_t co = 0; co < Cout; ++co)
            for (int64_t kk = 0; kk < K; ++kk) {
                T acc = T(0);
                for (int64_t n = 0; n < N; ++n) {
                    const T* frow = f + (n * Cin + ci) * Tin;
                    const T* grow = gy + (n * Cout + co) * Lout;
                    for (int64_t t = 0; t < Tin; ++t) {
                        const int64_t l = t * S + kk - P;
                        if (l >= 0 && l < Lout) acc += frow[t] * grow[l];
                    }
                }
                gw[(ci * Cout + co) * K + kk] = acc;
            }
    for (int64_t co = 0; co < Cout; ++co) {
        T acc = T(0);
        for (int64_t n = 0; n < N; ++n) {
            const T* grow = gy + (n * Cout + co) * Lout;
            for (int64_t l = 0; l < Lout; ++l) acc += grow[l];
        }
        gb[co] = acc;
    }
}

template <typename T>
void convt1d_grad_f(const T* gy, const T* w, T* gf, int64_t N, int64_t Cin, int64_t Tin,
                    int64_t Cout, int64_t K, int64_t S, int64_t P, int64_t Lout) {
    const int nthreads = max_threads();
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) num_threads(nthreads) if (nthreads > 1)
#endif
    for (int64_t n = 0; n < N; ++n)
        for (int64_t ci = 0; ci < Cin; ++ci) {
            T* gfrow = gf + (n * Cin + ci) * Tin;
            for (int64_t t = 0; t < Tin; ++t) {
                T acc = T(0);
                for (int64_t co = 0; co < Cout; ++co) {
                    const T* grow = gy + (n * Cout + co) * Lout;
                    const T* wrow = w + (ci * Cout + co) * K;
                    for (int64_t kk = 0; kk < K; ++kk) {
                        const int64_t l = t * S + kk - P;
                        if (l >= 0 && l < Lout) acc += grow[l] * wrow[kk];
                    }
                }
                gfrow[t] = acc;
            }
        }
}

// ---------------------------------------------------------------------------
// SRU elementwise scan. Gate pre-activations U[N x T x 3D] come from one gemm
// done by the caller; the scan itself is matmul-free. Gate order in U is
// [candidate | forget | reset]. The highway input is addressed through a row
// stride so a slice of the layer input can be used without copying.
//
//   f_t = sigmoid(u_f + v_f*c_{t-1} + b_f)
//   c_t = f_t*c_{t-1} + (1 - f_t)*u_c
//   r_t = sigmoid(u_r + v_r*c_{t-1} + b_r)
//   h_t = r_t*c_t + (1 - r_t)*hw_t

template <typename T>
void sru_scan_fwd(const T* U, const T* hw, int64_t hw_stride, const T* c0, const T* vf,
                  const T* vr, const T* bf, const T* br, bool reverse, int64_t N, int64_t Tn,
                  int64_t D, T* h, T* c_seq, T* f_seq, T* r_seq, T* cT) {
    const int nthreads = max_threads();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nthreads) if (nthreads > 1)
#endif
    for (int64_t n = 0; n < N; ++n) {
        std::vector<T> c(c0 + n * D, c0 + (n + 1) * D);
        for (int64_t s = 0; s < Tn; ++s) {
            const int64_t t = reverse ? Tn - 1 - s : s;
            const T* u = U + (n * Tn + t) * 3 * D;
            const T* hx = hw + (n * Tn + t) * hw_stride;
            T* hrow = h + (n * Tn + t) * D;
            T* crow = c_seq + (n * Tn + t) * D;
            T* frow = f_seq + (n * Tn + t) * D;
            T* rrow = r_seq + (n * Tn + t) * D;
            for (int64_t d = 0; d < D; ++d) {
                const T cprev = c[d];
                const T ft = sigmoid(u[D + d] + vf[d] * cprev + bf[d]);
                const T ct = ft * cprev + (T(1) - ft) * u[d];
                const T rt = sigmoid(u[2 * D + d] + vr[d] * cprev + br[d]);
                c[d] = ct;
                crow[d] = ct;
                frow[d] = ft;
                rrow[d] = rt;
                hrow[d] = rt * ct + (T(1) - rt) * hx[d];
            }
        }
        std::copy(c.begin(), c.end(), cT + n * D);
    }
}

// Reverse-time scan of the exact gradients. grad_hw accumulates (+=) through
// the same stride mechanism used by the forward highway. Per-parameter
// reductions are summed over n in ascending order after the parallel part.
template <typename T>
void sru_scan_bwd(const T* U, const T* hw, int64_t hw_stride, const T* c0, const T* vf,
                  const T* vr, const T* c_seq, const T* f_seq, const T* r_seq, const T* gh,
                  const T* gcT, bool reverse, int64_t N, int64_t Tn, int64_t D, T* gU, T* ghw,
                  T* gc0, T* gvf, T* gvr, T* gbf, T* gbr) {
    std::vector<T> pvf(static_cast<size_t>(N) * D, T(0)), pvr(static_cast<size_t>(N) * D, T(0));
    std::vector<T> pbf(static_cast<size_t>(N) * D, T(0)), pbr(static_cast<size_t>(N) * D, T(0));
    const int nthreads = max_threads();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nthreads) if (nthreads > 1)
#endif
    for (int64_t n = 0; n < N; ++n) {
        std::vector<T> gc(D, T(0));
        if (gcT) std::copy(gcT + n * D, gcT + (n + 1) * D, gc.begin());
        T* avf = pvf.data() + n * D;
        T* avr = pvr.data() + n * D;
        T* abf = pbf.data() + n * D;
        T* abr = pbr.data() + n * D;
        for (int64_t s = Tn - 1; s >= 0; --s) {
            const int64_t t = reverse ? Tn - 1 - s : s;
            const int64_t tprev = reverse ? t + 1 : t - 1;
            const T* u = U + (n * Tn + t) * 3 * D;
            const T* hx = hw + (n * Tn + t) * hw_stride;
            const T* crow = c_seq + (n * Tn + t) * D;
            const T* frow = f_seq + (n * Tn + t) * D;
            const T* rrow = r_seq + (n * Tn + t) * D;
            const T* cprev = (s == 0) ? c0 + n * D : c_seq + (n * Tn + tprev) * D;
            const T* ghrow = gh + (n * Tn + t) * D;
            T* gurow = gU + (n * Tn + t) * 3 * D;
            T* ghx = ghw + (n * Tn + t) * hw_stride;
            for (int64_t d = 0; d < D; ++d) {
                const T ft = frow[d], rt = rrow[d], ct = crow[d], cp = cprev[d];
                const T g = ghrow[d];
                // h = r*c + (1-r)*hw
                const T gr = g * (ct - hx[d]);
                const T gzr = gr * rt * (T(1) - rt);
                ghx[d] += g * (T(1) - rt);
                T gct = gc[d] + g * rt;
                // c = f*cprev + (1-f)*u_c
                const T gf = gct * (cp - u[d]);
                const T gzf = gf * ft * (T(1) - ft);
                gurow[d] = gct * (T(1) - ft);
                gurow[D + d] = gzf;
                gurow[2 * D + d] = gzr;
                avf[d] += gzf * cp;
                avr[d] += gzr * cp;
                abf[d] += gzf;
                abr[d] += gzr;
                gc[d] = gct * ft + gzf * vf[d] + gzr * vr[d];
            }
        }
        std::copy(gc.begin(), gc.end(), gc0 + n * D);
    }
    for (int64_t d = 0; d < D; ++d) {
        T svf = T(0), svr = T(0), sbf = T(0), sbr = T(0);
        for (int64_t n = 0; n < N; ++n) {
            svf += pvf[n * D + d];
            svr += pvr[n * D + d];
            sbf += pbf[n * D + d];
            sbr += pbr[n * D + d];
        }
        gvf[d] += svf;
        gvr[d] += svr;
        gbf[d] += sbf;
        gbr[d] += sbr;
    }
}

// ---------------------------------------------------------------------------
// LSTM pointwise step, gate order [i | f | g | o]:
//   c_t = f*c_{t-1} + i*g,  h_t = o*tanh(c_t)
// z[N x 4D] holds the pre-activations for one step.

template <typename T>
void lstm_pointwise_fwd(const T* z, const T* cprev, int64_t N, int64_t D, T* c, T* h, T* gates) {
    const int nthreads = max_threads();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nthreads) if (nthreads > 1)
#endif
    for (int64_t n = 0; n < N; ++n) {
        const T* zr = z + n * 4 * D;
        const T* cp = cprev + n * D;
        T* cr = c + n * D;
        T* hr = h + n * D;
        T* gr = gates + n * 4 * D;
        for (int64_t d = 0; d < D; ++d) {
            const T ig = sigmoid(zr[d]);
            const T fg = sigmoid(zr[D + d]);
            const T gg = std::tanh(zr[2 * D + d]);
            const T og = sigmoid(zr[3 * D + d]);
            const T ct = fg * cp[d] + ig * gg;
            cr[d] = ct;
            hr[d] = og * std::tanh(ct);
            gr[d] = ig;
            gr[D + d] = fg;
            gr[2 * D + d] = gg;
            gr[3 * D + d] = og;
        }
    }
}

// Gradients of one step. gh/gc carry incoming dL/dh_t and dL/dc_t (from the
// future); gz receives pre-activation grads, gc is rewritten to dL/dc_{t-1}.
template <typename T>
void lstm_pointwise_bwd(const T* gates, const T* c, const T* cprev, const T* gh, T* gc, T* gz,
                        int64_t N, int64_t D) {
    const int nthreads = max_threads();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nthreads) if (nthreads > 1)
#endif
    for (int64_t n = 0; n < N; ++n) {
        const T* gr = gates + n * 4 * D;
        const T* cr = c + n * D;
        const T* cp = cprev + n * D;
        const T* ghr = gh + n * D;
        T* gcr = gc + n * D;
        T* gzr = gz + n * 4 * D;
        for (int64_t d = 0; d < D; ++d) {
            const T ig = gr[d], fg = gr[D + d], gg = gr[2 * D + d], og = gr[3 * D + d];
            const T tc = std::tanh(cr[d]);
            const T go = ghr[d] * tc;
            const T gct = ghr[d] * og * (T(1) - tc * tc) + gcr[d];
            const T gi = gct * gg;
            const T gf = gct * cp[d];
            const T gg_ = gct * ig;
            gzr[d] = gi * ig * (T(1) - ig);
            gzr[D + d] = gf * fg * (T(1) - fg);
            gzr[2 * D + d] = gg_ * (T(1) - gg * gg);
            gzr[3 * D + d] = go * og * (T(1) - og);
            gcr[d] = gct * fg;
        }
    }
}

// N x A x B -> N x B x A transpose (feature map <-> sequence layout).
template <typename T>
void transpose_12(const T* x, T* y, int64_t N, int64_t A, int64_t B) {
    const int nthreads = max_threads();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nthreads) if (nthreads > 1)
#endif
    for (int64_t n = 0; n < N; ++n) {
        const T* xs = x + n * A * B;
        T* ys = y + n * A * B;
        for (int64_t a = 0; a < A; ++a)
            for (int64_t b = 0; b < B; ++b) ys[b * A + a] = xs[a * B + b];
    }
}

}  // namespace wavecrn::kernels
