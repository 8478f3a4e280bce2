//! Inner loops for the grouped 1-D convolution.
//!
//! Batch elements are processed in parallel; weight and bias gradients are
//! computed per element and summed in batch order, so results do not depend
//! on the number of worker threads.

use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub groups: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_len: usize,
    pub out_len: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    /// "Same"-style zero padding: output length is `ceil(in_len / stride)`.
    pub fn same(
        batch: usize,
        in_channels: usize,
        out_channels: usize,
        groups: usize,
        kernel: usize,
        stride: usize,
        in_len: usize,
    ) -> Self {
        let out_len = in_len.div_ceil(stride);
        let pad_total = ((out_len.saturating_sub(1)) * stride + kernel).saturating_sub(in_len);
        Self {
            batch,
            in_channels,
            out_channels,
            groups,
            kernel,
            stride,
            in_len,
            out_len,
            pad_left: pad_total / 2,
        }
    }

    fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    /// Output positions `t` for which input index `t*stride + k - pad_left`
    /// lies inside the signal.
    #[inline]
    fn valid_range(&self, k: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let offset = k as isize - self.pad_left as isize;
        // smallest t with t*s + offset >= 0
        let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
        // largest t with t*s + offset <= in_len - 1
        let last = self.in_len as isize - 1 - offset;
        let hi = if last < 0 { 0 } else { (last / s + 1).min(self.out_len as isize) };
        (lo as usize, (hi as usize).max(lo as usize))
    }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Outputs accumulated in registers by the forward interior loop.
const LANES: usize = 8;

/// Output range `[a, b)` over which every tap reads inside the signal.
fn interior(taps: &[Tap], out_len: usize) -> (usize, usize) {
    let a = taps.iter().map(|t| t.lo).max().unwrap_or(0).min(out_len);
    let b = taps.iter().map(|t| t.hi).min().unwrap_or(out_len).max(a);
    (a, b)
}

/// Where tap `k` reads from: output range `[lo, hi)` maps to phase `phase`
/// of the input starting at phase index `lo + shift`.
#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    phase: usize,
    shift: isize,
}

impl ConvGeometry {
    /// Samples per stride phase.
    fn phase_len(&self) -> usize {
        self.in_len.div_ceil(self.stride)
    }

    fn taps(&self) -> Vec<Tap> {
        let s = self.stride as isize;
        (0..self.kernel)
            .map(|k| {
                let (lo, hi) = self.valid_range(k);
                let off = k as isize - self.pad_left as isize;
                Tap { lo, hi, phase: off.rem_euclid(s) as usize, shift: off.div_euclid(s) }
            })
            .collect()
    }
}

/// Rearranges each channel row of `x` (`channels x in_len`) into stride
/// phases: `out[(c * stride + p) * plen + j] = x[c][j * stride + p]`, so a
/// strided tap becomes a contiguous slice.
fn split_phases(geo: &ConvGeometry, x: &[f64]) -> Vec<f64> {
    let (s, plen, n) = (geo.stride, geo.phase_len(), geo.in_len);
    let mut out = vec![0.0; geo.in_channels * s * plen];
    for (c, row) in x.chunks(n).enumerate() {
        for (i, &v) in row.iter().enumerate() {
            out[(c * s + i % s) * plen + i / s] = v;
        }
    }
    out
}

#[inline]
fn clip(tap: &Tap, t0: usize, t1: usize) -> Option<(usize, usize, usize)> {
    let lo = tap.lo.max(t0);
    let hi = tap.hi.min(t1);
    (lo < hi).then(|| (lo, hi, (lo as isize + tap.shift) as usize))
}

pub fn conv1d_forward(
    geo: &ConvGeometry,
    input: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let ConvGeometry { in_channels, out_channels, kernel, stride, in_len, out_len, .. } = *geo;
    let ipg = geo.in_per_group();
    let opg = geo.out_per_group();
    let taps = geo.taps();
    let plen = geo.phase_len();
    let mut out = vec![0.0; geo.batch * out_channels * out_len];
    out.par_chunks_mut(out_channels * out_len)
        .zip(input.par_chunks(in_channels * in_len))
        .for_each(|(y, x)| {
            let split;
            let xp: &[f64] = if stride == 1 {
                x
            } else {
                split = split_phases(geo, x);
                &split
            };
            let (a, b) = interior(&taps, out_len);
            for oc in 0..out_channels {
                let yrow = &mut y[oc * out_len..(oc + 1) * out_len];
                if let Some(bias) = bias {
                    yrow.fill(bias[oc]);
                }
                let g = oc / opg;
                let wrows = &weight[oc * ipg * kernel..(oc + 1) * ipg * kernel];
                // Edges: taps that fall off the signal are skipped one by one.
                for (t0, t1) in [(0, a), (b, out_len)] {
                    for icg in 0..ipg {
                        let ic = g * ipg + icg;
                        for (tap, &w) in taps.iter().zip(&wrows[icg * kernel..(icg + 1) * kernel]) {
                            if let Some((lo, hi, j)) = clip(tap, t0, t1) {
                                let xrow = &xp[(ic * stride + tap.phase) * plen..];
                                axpy(w, &xrow[j..j + (hi - lo)], &mut yrow[lo..hi]);
                            }
                        }
                    }
                }
                // Interior: every tap is valid; accumulate LANES outputs in
                // registers across all taps and input channels.
                let rows: Vec<(usize, isize)> = (0..ipg)
                    .flat_map(|icg| {
                        let ic = g * ipg + icg;
                        taps.iter().map(move |tap| ((ic * stride + tap.phase) * plen, tap.shift))
                    })
                    .collect();
                let mut t = a;
                while t + LANES <= b {
                    let mut acc = [0.0; LANES];
                    for (&(row, shift), &w) in rows.iter().zip(wrows) {
                        let start = row + (t as isize + shift) as usize;
                        let xs = &xp[start..start + LANES];
                        for i in 0..LANES {
                            acc[i] += w * xs[i];
                        }
                    }
                    for i in 0..LANES {
                        yrow[t + i] += acc[i];
                    }
                    t += LANES;
                }
                for t in t..b {
                    let mut acc = 0.0;
                    for (&(row, shift), &w) in rows.iter().zip(wrows) {
                        acc += w * xp[row + (t as isize + shift) as usize];
                    }
                    yrow[t] += acc;
                }
            }
        });
    out
}

pub struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn conv1d_backward(
    geo: &ConvGeometry,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    need_input_grad: bool,
) -> ConvGrads {
    let ConvGeometry { in_channels, out_channels, in_len, out_len, .. } = *geo;
    let wlen = weight.len();
    let per_item = |x: &[f64], gy: &[f64], gx: Option<&mut [f64]>| -> (Vec<f64>, Vec<f64>) {
        let mut gw = vec![0.0; wlen];
        let gb = (0..out_channels).map(|oc| gy[oc * out_len..(oc + 1) * out_len].iter().sum()).collect();
        weight_grad_item(geo, x, gy, &mut gw);
        if let Some(gx) = gx {
            if geo.stride == 1 {
                input_grad_item(geo, weight, gy, gx);
            } else {
                input_grad_strided(geo, weight, gy, gx);
            }
        }
        (gw, gb)
    };

    let x_chunks = input.par_chunks(in_channels * in_len);
    let gy_chunks = grad_out.par_chunks(out_channels * out_len);
    let (partials, grad_input): (Vec<(Vec<f64>, Vec<f64>)>, Option<Vec<f64>>) = if need_input_grad {
        let mut gx = vec![0.0; input.len()];
        let partials = gx
            .par_chunks_mut(in_channels * in_len)
            .zip(x_chunks.zip(gy_chunks))
            .map(|(gx, (x, gy))| per_item(x, gy, Some(gx)))
            .collect();
        (partials, Some(gx))
    } else {
        let partials = x_chunks.zip(gy_chunks).map(|(x, gy)| per_item(x, gy, None)).collect();
        (partials, None)
    };

    let mut weight_grad = vec![0.0; wlen];
    let mut bias_grad = vec![0.0; out_channels];
    for (gw, gb) in &partials {
        for (a, b) in weight_grad.iter_mut().zip(gw) {
            *a += b;
        }
        for (a, b) in bias_grad.iter_mut().zip(gb) {
            *a += b;
        }
    }
    ConvGrads { input: grad_input, weight: weight_grad, bias: bias_grad }
}

/// `gw[oc, icg, k] += sum_t gy[oc][t] * x[ic][t * stride + k - pad]`.
///
/// Where every tap is in range, one output sample updates a window of
/// `WINDOW` consecutive taps at once, reading `x` contiguously.
fn weight_grad_item(geo: &ConvGeometry, x: &[f64], gy: &[f64], gw: &mut [f64]) {
    const WINDOW: usize = 16;
    let ConvGeometry { kernel, stride, in_len, out_len, pad_left, .. } = *geo;
    let (ipg, opg) = (geo.in_per_group(), geo.out_per_group());
    let taps = geo.taps();
    let (a, b) = interior(&taps, out_len);
    for oc in 0..geo.out_channels {
        let gyrow = &gy[oc * out_len..(oc + 1) * out_len];
        let g = oc / opg;
        for icg in 0..ipg {
            let ic = g * ipg + icg;
            let xrow = &x[ic * in_len..(ic + 1) * in_len];
            let w = &mut gw[(oc * ipg + icg) * kernel..(oc * ipg + icg + 1) * kernel];
            // Edges, one tap at a time.
            for (k, tap) in taps.iter().enumerate() {
                for (t0, t1) in [(0, a), (b, out_len)] {
                    let (lo, hi) = (tap.lo.max(t0), tap.hi.min(t1));
                    for t in lo..hi {
                        w[k] += gyrow[t] * xrow[t * stride + k - pad_left];
                    }
                }
            }
            if a >= b {
                continue;
            }
            let mut kb = 0;
            while kb + WINDOW <= kernel {
                let mut acc = [0.0; WINDOW];
                for t in a..b {
                    let gv = gyrow[t];
                    let start = t * stride + kb - pad_left;
                    let xs = &xrow[start..start + WINDOW];
                    for i in 0..WINDOW {
                        acc[i] += gv * xs[i];
                    }
                }
                for i in 0..WINDOW {
                    w[kb + i] += acc[i];
                }
                kb += WINDOW;
            }
            for k in kb..kernel {
                // a * stride + k >= pad_left holds inside the interior.
                let start = a * stride + k - pad_left;
                if stride == 1 {
                    w[k] += dot(&gyrow[a..b], &xrow[start..start + (b - a)]);
                } else {
                    w[k] += (a..b).map(|t| gyrow[t] * xrow[start + (t - a) * stride]).sum::<f64>();
                }
            }
        }
    }
}

/// Stride-1 input gradient as a correlation of `gy` with the flipped
/// kernel: `gx[ic][s] = sum_{oc, k} w[oc, icg, k] * gy[oc][s + pad - k]`.
fn input_grad_item(geo: &ConvGeometry, weight: &[f64], gy: &[f64], gx: &mut [f64]) {
    let ConvGeometry { kernel, in_len, out_len, pad_left, .. } = *geo;
    debug_assert_eq!(geo.stride, 1);
    let (ipg, opg) = (geo.in_per_group(), geo.out_per_group());
    // gy index for position s and tap k is s + pad - k, valid on
    // [k - pad, out_len + k - pad); all taps are valid on [lo, hi).
    let lo = (kernel - 1).saturating_sub(pad_left).min(in_len);
    let hi = (out_len + pad_left).saturating_sub(kernel - 1).min(in_len).max(lo);
    for ic in 0..geo.in_channels {
        let g = ic / ipg;
        let icg = ic % ipg;
        let rows: Vec<(usize, f64)> = (g * opg..(g + 1) * opg)
            .flat_map(|oc| (0..kernel).map(move |k| (oc, k)))
            .map(|(oc, k)| (oc * out_len + kernel - 1 - k, weight[(oc * ipg + icg) * kernel + k]))
            .collect();
        let gxrow = &mut gx[ic * in_len..(ic + 1) * in_len];
        // Row entries point at gy[oc][s + pad - k] shifted by kernel - 1 so
        // the offset stays non-negative: index = base + s + pad - (kernel - 1).
        let shift = |s: usize| s + pad_left - (kernel - 1);
        let mut s = lo;
        while s + LANES <= hi {
            let mut acc = [0.0; LANES];
            let off = shift(s);
            for &(base, w) in &rows {
                let ys = &gy[base + off..base + off + LANES];
                for i in 0..LANES {
                    acc[i] += w * ys[i];
                }
            }
            for i in 0..LANES {
                gxrow[s + i] += acc[i];
            }
            s += LANES;
        }
        for s in s..hi {
            let off = shift(s);
            gxrow[s] += rows.iter().map(|&(base, w)| w * gy[base + off]).sum::<f64>();
        }
        for s in (0..lo).chain(hi..in_len) {
            let mut acc = 0.0;
            for oc in g * opg..(g + 1) * opg {
                for k in 0..kernel {
                    let t = s as isize + pad_left as isize - k as isize;
                    if t >= 0 && (t as usize) < out_len {
                        acc += weight[(oc * ipg + icg) * kernel + k] * gy[oc * out_len + t as usize];
                    }
                }
            }
            gxrow[s] += acc;
        }
    }
}

/// Scatter form of the input gradient, used for strided convolutions.
fn input_grad_strided(geo: &ConvGeometry, weight: &[f64], gy: &[f64], gx: &mut [f64]) {
    let ConvGeometry { kernel, stride, in_len, out_len, pad_left, .. } = *geo;
    let (ipg, opg) = (geo.in_per_group(), geo.out_per_group());
    let taps = geo.taps();
    for oc in 0..geo.out_channels {
        let g = oc / opg;
        for icg in 0..ipg {
            let ic = g * ipg + icg;
            for (k, tap) in taps.iter().enumerate() {
                let w = weight[(oc * ipg + icg) * kernel + k];
                for t in tap.lo..tap.hi {
                    gx[ic * in_len + t * stride + k - pad_left] += w * gy[oc * out_len + t];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct evaluation of the convolution sum with explicit padding checks.
    fn naive(geo: &ConvGeometry, x: &[f64], w: &[f64]) -> Vec<f64> {
        let ipg = geo.in_channels / geo.groups;
        let opg = geo.out_channels / geo.groups;
        let mut y = vec![0.0; geo.batch * geo.out_channels * geo.out_len];
        for b in 0..geo.batch {
            for oc in 0..geo.out_channels {
                for t in 0..geo.out_len {
                    let mut acc = 0.0;
                    for icg in 0..ipg {
                        let ic = (oc / opg) * ipg + icg;
                        for k in 0..geo.kernel {
                            let pos = (t * geo.stride + k) as isize - geo.pad_left as isize;
                            if pos >= 0 && (pos as usize) < geo.in_len {
                                acc += w[(oc * ipg + icg) * geo.kernel + k]
                                    * x[(b * geo.in_channels + ic) * geo.in_len + pos as usize];
                            }
                        }
                    }
                    y[(b * geo.out_channels + oc) * geo.out_len + t] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn matches_naive_sum() {
        for &(cin, cout, groups, k, s, l) in
            &[(1, 3, 1, 16, 2, 37), (4, 4, 2, 5, 1, 11), (6, 3, 3, 1, 1, 9), (2, 2, 1, 16, 1, 8), (2, 2, 1, 16, 2, 1500), (3, 3, 1, 4, 3, 50)]
        {
            let geo = ConvGeometry::same(2, cin, cout, groups, k, s, l);
            let x: Vec<f64> = (0..2 * cin * l).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
            let w: Vec<f64> =
                (0..cout * (cin / groups) * k).map(|i| ((i * 13 % 7) as f64) * 0.1 - 0.3).collect();
            let fast = conv1d_forward(&geo, &x, &w, None);
            let slow = naive(&geo, &x, &w);
            assert_eq!(fast.len(), slow.len());
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    /// Backward pass checked against the adjoint identity
    /// `<conv(x + dx, w + dw), gy> - <conv(x, w), gy> = <gx, dx> + <gw, dw>`,
    /// which is exact because the convolution is bilinear.
    #[test]
    fn backward_is_the_adjoint() {
        for &(cin, cout, groups, k, s, l) in
            &[(1, 3, 1, 16, 2, 1100), (4, 4, 2, 5, 1, 11), (6, 3, 3, 1, 1, 9), (2, 4, 2, 16, 3, 40)]
        {
            let geo = ConvGeometry::same(2, cin, cout, groups, k, s, l);
            let f = |i: usize, m: usize| ((i * m % 17) as f64) * 0.125 - 1.0;
            let x: Vec<f64> = (0..2 * cin * l).map(|i| f(i, 37)).collect();
            let dx: Vec<f64> = (0..x.len()).map(|i| f(i, 5)).collect();
            let wlen = cout * (cin / groups) * k;
            let w: Vec<f64> = (0..wlen).map(|i| f(i, 13)).collect();
            let gy: Vec<f64> = (0..2 * cout * geo.out_len).map(|i| f(i, 29)).collect();
            let g = conv1d_backward(&geo, &x, &w, &gy, true);
            let gx = g.input.unwrap();
            let inner = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
            let lhs = inner(&naive(&geo, &dx, &w), &gy);
            assert!((lhs - inner(&gx, &dx)).abs() < 1e-9 * lhs.abs().max(1.0));
            for idx in [0, wlen / 2, wlen - 1] {
                let mut e = vec![0.0; wlen];
                e[idx] = 1.0;
                let lhs = inner(&naive(&geo, &x, &e), &gy);
                assert!((lhs - g.weight[idx]).abs() < 1e-9 * lhs.abs().max(1.0));
            }
            let sums: Vec<f64> = (0..cout).map(|oc| (0..2).map(|b| gy[(b * cout + oc) * geo.out_len..][..geo.out_len].iter().sum::<f64>()).sum()).collect();
            for (a, b) in sums.iter().zip(&g.bias) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn same_padding_lengths() {
        assert_eq!(ConvGeometry::same(1, 1, 1, 1, 16, 2, 5000).out_len, 2500);
        assert_eq!(ConvGeometry::same(1, 1, 1, 1, 16, 2, 2501).out_len, 1251);
        assert_eq!(ConvGeometry::same(1, 1, 1, 1, 16, 1, 100).pad_left, 7);
    }
}
