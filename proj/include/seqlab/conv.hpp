#pragma once

#include "seqlab/ops.hpp"

namespace seqlab {

/// Depthwise causal dilated convolution. x is [B, C, L]; w is [C, K] with one
/// kernel row per channel, or [1, K] for a single kernel shared across all
/// channels. Taps reaching past the left edge contribute zero.
template <class T>
Var<T> conv1d_dilated(Tape<T>& tp, Var<T> x, Var<T> w, std::int64_t dilation,
                      bool causal_left_pad = true) {
    require(dilation >= 1, "conv1d_dilated: dilation must be positive");
    require(causal_left_pad, "conv1d_dilated: only causal padding is supported");
    const auto& xv = tp.val(x);
    const auto& wv = tp.val(w);
    require(xv.ndim() == 3, "conv1d_dilated: x must be [B, C, L]");
    require(wv.ndim() == 2, "conv1d_dilated: w must be [C, K] or [1, K]");
    const std::int64_t b = xv.dim(0), c = xv.dim(1), l = xv.dim(2);
    const std::int64_t cw = wv.dim(0), k = wv.dim(1);
    require(cw == c || cw == 1, "conv1d_dilated: kernel channel count mismatch");
    require(k >= 1, "conv1d_dilated: K must be >= 1");

    Tensor<T> out({b, c, l});
    for (std::int64_t bi = 0; bi < b; ++bi) {
        for (std::int64_t ci = 0; ci < c; ++ci) {
            const T* xr = xv.data.data() + (bi * c + ci) * l;
            const T* wr = wv.data.data() + (cw == 1 ? 0 : ci) * k;
            T* yr = out.data.data() + (bi * c + ci) * l;
            // tap-outer inside cache-sized time tiles: every pass is a
            // contiguous, vectorizable axpy, the output tile stays in L1
            // across all taps, and per output the taps still accumulate in
            // ascending order
            constexpr std::int64_t tile = 4096;
            for (std::int64_t a = 0; a < l; a += tile) {
                const std::int64_t b = std::min(a + tile, l);
                const T w0 = wr[0];
                for (std::int64_t t = a; t < b; ++t) yr[t] = w0 * xr[t];
                for (std::int64_t ki = 1; ki < k; ++ki) {
                    const std::int64_t off = ki * dilation;
                    if (off >= b) break;
                    const T wk = wr[ki];
                    const T* xs = xr - off;
                    for (std::int64_t t = std::max(a, off); t < b; ++t)
                        yr[t] += wk * xs[t];
                }
            }
        }
    }
    return tp.record(std::move(out), {x.id, w.id}, "conv1d_dilated",
                     [x, w, b, c, l, cw, k, dilation](Var<T> o) {
        return [x, w, b, c, l, cw, k, dilation, o](Tape<T>& t) {
            const auto& g = t.grad(o);
            const auto& xv = t.val(x);
            const auto& wv = t.val(w);
            const bool gx_needed = t.needs_grad(x);
            const bool gw_needed = t.needs_grad(w);
            for (std::int64_t bi = 0; bi < b; ++bi) {
                for (std::int64_t ci = 0; ci < c; ++ci) {
                    const T* gr = g.data.data() + (bi * c + ci) * l;
                    const T* xr = xv.data.data() + (bi * c + ci) * l;
                    const T* wr = wv.data.data() + (cw == 1 ? 0 : ci) * k;
                    if (gx_needed) {
                        T* gxr = t.grad(x).data.data() + (bi * c + ci) * l;
                        for (std::int64_t ki = 0; ki < k; ++ki) {
                            const std::int64_t off = ki * dilation;
                            if (off >= l) break;
                            const T wk = wr[ki];
                            const T* gs = gr + off;
                            for (std::int64_t tt = 0; tt < l - off; ++tt)
                                gxr[tt] += wk * gs[tt];
                        }
                    }
                    if (gw_needed) {
                        T* gwr = t.grad(w).data.data() + (cw == 1 ? 0 : ci) * k;
                        for (std::int64_t ki = 0; ki < k; ++ki) {
                            T acc = T(0);
                            for (std::int64_t tt = ki * dilation; tt < l; ++tt)
                                acc += xr[tt - ki * dilation] * gr[tt];
                            gwr[ki] += acc;
                        }
                    }
                }
            }
        };
    });
}

}  // namespace seqlab
