//! Raw kernels over channel-major `[c][h][w]` buffers.

use super::Real;

/// 3×3 convolution, stride 1, zero "same" padding.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3x3<F: Real>(
    input: &[F],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[F],
    bias: &[F],
    cout: usize,
    out: &mut [F],
) {
    let plane = h * w;
    for o in 0..cout {
        let out_o = &mut out[o * plane..(o + 1) * plane];
        out_o.fill(bias[o]);
        for i in 0..cin {
            let inp = &input[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                let (y_lo, y_hi) = valid_range(ky, h);
                for kx in 0..3 {
                    let (x_lo, x_hi) = valid_range(kx, w);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let wt = weights[((o * cin + i) * 3 + ky) * 3 + kx];
                    for y in y_lo..y_hi {
                        let src_row = (y + ky - 1) * w;
                        let dst = &mut out_o[y * w + x_lo..y * w + x_hi];
                        let src = &inp[src_row + x_lo + kx - 1..src_row + x_hi + kx - 1];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = *d + wt * s;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight and bias gradients of [`conv3x3`] and, if requested,
/// the gradient with respect to its input.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3x3_backward<F: Real>(
    input: &[F],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[F],
    cout: usize,
    dout: &[F],
    gw: &mut [F],
    gb: &mut [F],
    mut din: Option<&mut [F]>,
) {
    let plane = h * w;
    for o in 0..cout {
        let dout_o = &dout[o * plane..(o + 1) * plane];
        gb[o] = gb[o] + dout_o.iter().copied().sum::<F>();
        for i in 0..cin {
            let inp = &input[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                let (y_lo, y_hi) = valid_range(ky, h);
                for kx in 0..3 {
                    let (x_lo, x_hi) = valid_range(kx, w);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let k = ((o * cin + i) * 3 + ky) * 3 + kx;
                    let wt = weights[k];
                    let mut acc = F::zero();
                    for y in y_lo..y_hi {
                        let src_row = (y + ky - 1) * w;
                        let d = &dout_o[y * w + x_lo..y * w + x_hi];
                        let s = &inp[src_row + x_lo + kx - 1..src_row + x_hi + kx - 1];
                        for (&dv, &sv) in d.iter().zip(s) {
                            acc = acc + dv * sv;
                        }
                        if let Some(din) = din.as_deref_mut() {
                            let di = &mut din[i * plane + src_row + x_lo + kx - 1..i * plane + src_row + x_hi + kx - 1];
                            for (g, &dv) in di.iter_mut().zip(d) {
                                *g = *g + wt * dv;
                            }
                        }
                    }
                    gw[k] = gw[k] + acc;
                }
            }
        }
    }
}

/// Output rows (or columns) `lo..hi` whose kernel tap `k` reads inside the input.
fn valid_range(k: usize, n: usize) -> (usize, usize) {
    let lo = usize::from(k == 0);
    let hi = if k == 2 { n.saturating_sub(1) } else { n };
    (lo, hi)
}

pub(crate) fn pooled(n: usize) -> usize {
    n.div_ceil(2)
}

/// 2×2 max-pooling, stride 2, partial windows at odd edges. Records the
/// flat input index of each window's (first) maximum.
pub(crate) fn maxpool2<F: Real>(
    input: &[F],
    c: usize,
    h: usize,
    w: usize,
    out: &mut [F],
    argmax: &mut [usize],
) {
    let (ho, wo) = (pooled(h), pooled(w));
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best_idx = ch * h * w + 2 * oy * w + 2 * ox;
                let mut best = input[best_idx];
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for x in 2 * ox..(2 * ox + 2).min(w) {
                        let idx = ch * h * w + y * w + x;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = ch * ho * wo + oy * wo + ox;
                out[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
}

/// Routes each pooled gradient to the input position that won the max.
pub(crate) fn maxpool2_backward<F: Real>(dout: &[F], argmax: &[usize], din: &mut [F]) {
    for (&g, &idx) in dout.iter().zip(argmax) {
        din[idx] = din[idx] + g;
    }
}
