//! Building blocks of the encoder/generator: 3x3 convolutions (im2col +
//! GEMM), 2x average pooling, 2x bilinear upsampling and the pointwise
//! nonlinearities. Every op comes with an explicit backward pass.
//!
//! Tensors are channels-first `(C, H, W)`. Backward passes recompute the
//! im2col buffer from the cached layer input instead of keeping it alive;
//! the buffer is 9x the input size, so this trades a little time for a lot
//! of memory.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Standard-normal draw via Box-Muller, so initialization does not depend
/// on any distribution crate's sampling internals.
pub fn randn(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Kaiming-normal standard deviation for a leaky-rectifier fan-in.
pub fn kaiming_std(fan_in: usize, negative_slope: f64) -> f64 {
    (2.0 / ((1.0 + negative_slope * negative_slope) * fan_in as f64)).sqrt()
}

/// A 3x3 convolution with padding 1 and a configurable stride.
///
/// The weight matrix is stored flattened as `(c_out, c_in * 9)` so forward
/// and backward are single GEMMs against the im2col buffer. The same struct
/// doubles as the gradient/moment container for the optimizer.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn kaiming(c_in: usize, c_out: usize, stride: usize, slope: f64, rng: &mut impl Rng) -> Self {
        let std = kaiming_std(c_in * 9, slope);
        let weight =
            Array2::from_shape_fn((c_out, c_in * 9), |_| T::from_f64(randn(rng) * std));
        Conv2d { weight, bias: Array1::zeros(c_out), c_in, c_out, stride }
    }

    pub fn zeros_like(&self) -> Self {
        Conv2d {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
            c_in: self.c_in,
            c_out: self.c_out,
            stride: self.stride,
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    pub fn forward(&self, x: &Array3<T>) -> Result<Array3<T>> {
        let (c, h, w) = x.dim();
        if c != self.c_in {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {c}",
                self.c_in
            )));
        }
        let (ho, wo) = self.out_dims(h, w);
        let cols = im2col(x, self.stride, ho, wo);
        let mut out = self.weight.dot(&cols);
        for (mut row, &b) in out.rows_mut().into_iter().zip(self.bias.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        Ok(out.into_shape_with_order((self.c_out, ho, wo)).expect("conv output reshape"))
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the layer input.
    pub fn backward(&self, x: &Array3<T>, g_out: &Array3<T>, grad: &mut Conv2d<T>) -> Array3<T> {
        let (_, h, w) = x.dim();
        let (co, ho, wo) = g_out.dim();
        debug_assert_eq!(co, self.c_out);
        let g_mat = g_out
            .view()
            .into_shape_with_order((co, ho * wo))
            .expect("conv grad reshape");
        let cols = im2col(x, self.stride, ho, wo);
        grad.weight += &g_mat.dot(&cols.t());
        grad.bias += &g_mat.sum_axis(Axis(1));
        let g_cols = self.weight.t().dot(&g_mat);
        col2im(&g_cols, self.c_in, h, w, self.stride, ho, wo)
    }
}

/// Unfold 3x3/pad-1 patches into a `(c_in * 9, ho * wo)` matrix.
fn im2col<T: Scalar>(x: &Array3<T>, stride: usize, ho: usize, wo: usize) -> Array2<T> {
    let (c_in, h, w) = x.dim();
    let mut cols = Array2::<T>::zeros((c_in * 9, ho * wo));
    let x_slice = x.as_slice().expect("standard layout");
    let cols_slice = cols.as_slice_mut().expect("standard layout");
    for c in 0..c_in {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (c * 9 + ky * 3 + kx) * (ho * wo);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = (c * h + iy as usize) * w;
                    let dst_row = row + oy * wo;
                    if stride == 1 {
                        // Contiguous run: ix = ox + kx - 1 for the valid ox range.
                        let ox0 = 1usize.saturating_sub(kx);
                        let ox1 = (w + 1 - kx).min(wo);
                        if ox0 < ox1 {
                            let ix0 = ox0 + kx - 1;
                            cols_slice[dst_row + ox0..dst_row + ox1]
                                .copy_from_slice(&x_slice[src_row + ix0..src_row + ix0 + ox1 - ox0]);
                        }
                    } else {
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                cols_slice[dst_row + ox] = x_slice[src_row + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Fold a column-gradient matrix back onto the input grid (adjoint of
/// [`im2col`]).
fn col2im<T: Scalar>(
    g_cols: &Array2<T>,
    c_in: usize,
    h: usize,
    w: usize,
    stride: usize,
    ho: usize,
    wo: usize,
) -> Array3<T> {
    let mut gx = Array3::<T>::zeros((c_in, h, w));
    let gx_slice = gx.as_slice_mut().expect("standard layout");
    let g_slice = g_cols.as_slice().expect("standard layout");
    for c in 0..c_in {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (c * 9 + ky * 3 + kx) * (ho * wo);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = (c * h + iy as usize) * w;
                    let src_row = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            gx_slice[dst_row + ix as usize] += g_slice[src_row + ox];
                        }
                    }
                }
            }
        }
    }
    gx
}

pub fn leaky_relu<T: Scalar>(x: &Array3<T>, slope: f64) -> Array3<T> {
    let s = T::from_f64(slope);
    x.mapv(|v| if v > T::zero() { v } else { v * s })
}

/// Backward through the leaky rectifier. The mask is recovered from the
/// activation output (positive output iff positive input, since slope > 0).
pub fn leaky_relu_backward<T: Scalar>(y: &Array3<T>, g: &Array3<T>, slope: f64) -> Array3<T> {
    let s = T::from_f64(slope);
    let mut out = g.clone();
    out.zip_mut_with(y, |gv, &yv| {
        if yv <= T::zero() {
            *gv = *gv * s;
        }
    });
    out
}

pub fn sigmoid<T: Scalar>(x: &Array3<T>) -> Array3<T> {
    x.mapv(|v| T::one() / (T::one() + (-v).exp()))
}

pub fn sigmoid_backward<T: Scalar>(y: &Array3<T>, g: &Array3<T>) -> Array3<T> {
    let mut out = g.clone();
    out.zip_mut_with(y, |gv, &yv| *gv = *gv * yv * (T::one() - yv));
    out
}

/// 2x2 average pooling with stride 2. Requires even spatial dims.
pub fn avg_pool2<T: Scalar>(x: &Array3<T>) -> Result<Array3<T>> {
    let (c, h, w) = x.dim();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("avg_pool2 needs even dims, got {h}x{w}")));
    }
    let q = T::from_f64(0.25);
    let mut out = Array3::<T>::zeros((c, h / 2, w / 2));
    for ci in 0..c {
        for y in 0..h / 2 {
            for x2 in 0..w / 2 {
                out[[ci, y, x2]] = (x[[ci, 2 * y, 2 * x2]]
                    + x[[ci, 2 * y, 2 * x2 + 1]]
                    + x[[ci, 2 * y + 1, 2 * x2]]
                    + x[[ci, 2 * y + 1, 2 * x2 + 1]])
                    * q;
            }
        }
    }
    Ok(out)
}

pub fn avg_pool2_backward<T: Scalar>(g: &Array3<T>) -> Array3<T> {
    let (c, h, w) = g.dim();
    let q = T::from_f64(0.25);
    let mut out = Array3::<T>::zeros((c, h * 2, w * 2));
    for ci in 0..c {
        for y in 0..h {
            for x2 in 0..w {
                let v = g[[ci, y, x2]] * q;
                out[[ci, 2 * y, 2 * x2]] = v;
                out[[ci, 2 * y, 2 * x2 + 1]] = v;
                out[[ci, 2 * y + 1, 2 * x2]] = v;
                out[[ci, 2 * y + 1, 2 * x2 + 1]] = v;
            }
        }
    }
    out
}

/// Per-axis source taps for 2x bilinear upsampling with half-pixel centres:
/// output `2i` reads `0.25 * in[i-1] + 0.75 * in[i]`, output `2i + 1` reads
/// `0.75 * in[i] + 0.25 * in[i+1]`, clamped at the borders.
fn bilinear_taps(n_in: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n_in)
        .map(|o| {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            let i0 = src.floor();
            let frac = src - i0;
            let a = (i0 as isize).clamp(0, n_in as isize - 1) as usize;
            let b = (i0 as isize + 1).clamp(0, n_in as isize - 1) as usize;
            (a, b, frac)
        })
        .collect()
}

pub fn upsample_bilinear2<T: Scalar>(x: &Array3<T>) -> Array3<T> {
    let (c, h, w) = x.dim();
    let ty = bilinear_taps(h);
    let tx = bilinear_taps(w);
    let mut out = Array3::<T>::zeros((c, 2 * h, 2 * w));
    for ci in 0..c {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let w00 = T::from_f64((1.0 - fy) * (1.0 - fx));
                let w01 = T::from_f64((1.0 - fy) * fx);
                let w10 = T::from_f64(fy * (1.0 - fx));
                let w11 = T::from_f64(fy * fx);
                out[[ci, oy, ox]] = x[[ci, y0, x0]] * w00
                    + x[[ci, y0, x1]] * w01
                    + x[[ci, y1, x0]] * w10
                    + x[[ci, y1, x1]] * w11;
            }
        }
    }
    out
}

pub fn upsample_bilinear2_backward<T: Scalar>(g: &Array3<T>) -> Array3<T> {
    let (c, h2, w2) = g.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let ty = bilinear_taps(h);
    let tx = bilinear_taps(w);
    let mut out = Array3::<T>::zeros((c, h, w));
    for ci in 0..c {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let gv = g[[ci, oy, ox]];
                out[[ci, y0, x0]] += gv * T::from_f64((1.0 - fy) * (1.0 - fx));
                out[[ci, y0, x1]] += gv * T::from_f64((1.0 - fy) * fx);
                out[[ci, y1, x0]] += gv * T::from_f64(fy * (1.0 - fx));
                out[[ci, y1, x1]] += gv * T::from_f64(fy * fx);
            }
        }
    }
    out
}

/// Stack `a`'s channels above `b`'s.
pub fn concat_channels<T: Scalar>(a: &Array3<T>, b: &Array3<T>) -> Result<Array3<T>> {
    let (ca, ha, wa) = a.dim();
    let (cb, hb, wb) = b.dim();
    if (ha, wa) != (hb, wb) {
        return Err(Error::shape(format!(
            "concat of {ha}x{wa} with {hb}x{wb} feature maps"
        )));
    }
    let mut out = Array3::<T>::zeros((ca + cb, ha, wa));
    out.slice_mut(ndarray::s![..ca, .., ..]).assign(a);
    out.slice_mut(ndarray::s![ca.., .., ..]).assign(b);
    Ok(out)
}

/// Split a concat gradient back into the two channel groups.
pub fn split_channels<T: Scalar>(g: &Array3<T>, c_a: usize) -> (Array3<T>, Array3<T>) {
    (
        g.slice(ndarray::s![..c_a, .., ..]).to_owned(),
        g.slice(ndarray::s![c_a.., .., ..]).to_owned(),
    )
}

/// Per-channel spatial mean: `(C, H, W) -> (C,)`.
pub fn global_avg_pool<T: Scalar>(x: &Array3<T>) -> Array1<T> {
    let (c, h, w) = x.dim();
    let inv = T::from_f64(1.0 / (h * w) as f64);
    Array1::from_iter(
        x.axis_iter(Axis(0)).map(|plane| plane.iter().copied().sum::<T>() * inv),
    )
}

/// Spread a per-channel gradient uniformly over the spatial grid,
/// accumulating into `gx`.
pub fn global_avg_pool_backward_into<T: Scalar>(g: &Array1<T>, gx: &mut Array3<T>) {
    let (c, h, w) = gx.dim();
    let inv = T::from_f64(1.0 / (h * w) as f64);
    for ci in 0..c {
        let gv = g[ci] * inv;
        gx.index_axis_mut(Axis(0), ci).mapv_inplace(|v| v + gv);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    fn random3(c: usize, h: usize, w: usize, seed: u64) -> Array3<f64> {
        let mut rng = stream_rng(seed, 77);
        Array3::from_shape_fn((c, h, w), |_| rng.random_range(-1.0..1.0))
    }

    /// Scalar-loop 3x3 convolution used as the im2col oracle.
    fn conv_oracle(conv: &Conv2d<f64>, x: &Array3<f64>) -> Array3<f64> {
        let (c_in, h, w) = x.dim();
        let (ho, wo) = conv.out_dims(h, w);
        let mut out = Array3::<f64>::zeros((conv.c_out, ho, wo));
        for co in 0..conv.c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = conv.bias[co];
                    for ci in 0..c_in {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * conv.stride + ky) as isize - 1;
                                let ix = (ox * conv.stride + kx) as isize - 1;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    acc += conv.weight[[co, ci * 9 + ky * 3 + kx]]
                                        * x[[ci, iy as usize, ix as usize]];
                                }
                            }
                        }
                    }
                    out[[co, oy, ox]] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_scalar_oracle() {
        for stride in [1usize, 2] {
            let mut rng = stream_rng(5, 1);
            let conv = Conv2d::<f64>::kaiming(3, 4, stride, 0.1, &mut rng);
            let x = random3(3, 7, 6, 2);
            let got = conv.forward(&x).unwrap();
            let want = conv_oracle(&conv, &x);
            for (g, w) in got.iter().zip(want.iter()) {
                assert!((g - w).abs() < 1e-12, "stride {stride}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for stride in [1usize, 2] {
            let mut rng = stream_rng(9, 3);
            let conv = Conv2d::<f64>::kaiming(2, 3, stride, 0.1, &mut rng);
            let x = random3(2, 5, 5, 4);
            // loss = 0.5 * sum(out^2)
            let out = conv.forward(&x).unwrap();
            let mut grad = conv.zeros_like();
            let gx = conv.backward(&x, &out, &mut grad);

            let loss = |c: &Conv2d<f64>, x: &Array3<f64>| -> f64 {
                c.forward(x).unwrap().iter().map(|v| 0.5 * v * v).sum()
            };
            let h = 1e-5;
            // weights (sampled)
            for idx in [(0usize, 0usize), (1, 5), (2, 17)] {
                let mut cp = conv.clone();
                cp.weight[idx] += h;
                let fp = loss(&cp, &x);
                cp.weight[idx] -= 2.0 * h;
                let fm = loss(&cp, &x);
                let num = (fp - fm) / (2.0 * h);
                assert!(rel_err(num, grad.weight[idx]) < 1e-5, "w{idx:?} stride {stride}");
            }
            // bias
            for b in 0..3 {
                let mut cp = conv.clone();
                cp.bias[b] += h;
                let fp = loss(&cp, &x);
                cp.bias[b] -= 2.0 * h;
                let fm = loss(&cp, &x);
                let num = (fp - fm) / (2.0 * h);
                assert!(rel_err(num, grad.bias[b]) < 1e-5, "b{b} stride {stride}");
            }
            // input (sampled)
            for idx in [(0usize, 0usize, 0usize), (1, 2, 3), (0, 4, 4)] {
                let mut xp = x.clone();
                xp[idx] += h;
                let fp = loss(&conv, &xp);
                xp[idx] -= 2.0 * h;
                let fm = loss(&conv, &xp);
                let num = (fp - fm) / (2.0 * h);
                assert!(rel_err(num, gx[idx]) < 1e-5, "x{idx:?} stride {stride}");
            }
        }
    }

    #[test]
    fn pool_and_upsample_are_adjoint_consistent() {
        // <pool(x), y> == <x, pool_backward(y)> and likewise for upsampling;
        // this pins the backward passes as exact transposes.
        let x = random3(2, 6, 6, 10);
        let y = random3(2, 3, 3, 11);
        let fwd: f64 = avg_pool2(&x).unwrap().iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let adj: f64 = x.iter().zip(avg_pool2_backward(&y).iter()).map(|(a, b)| a * b).sum();
        assert!((fwd - adj).abs() < 1e-12);

        let u = random3(2, 3, 4, 12);
        let gu = random3(2, 6, 8, 13);
        let fwd: f64 =
            upsample_bilinear2(&u).iter().zip(gu.iter()).map(|(a, b)| a * b).sum();
        let adj: f64 =
            u.iter().zip(upsample_bilinear2_backward(&gu).iter()).map(|(a, b)| a * b).sum();
        assert!((fwd - adj).abs() < 1e-12);
    }

    #[test]
    fn upsample_preserves_constants() {
        let x = Array3::<f64>::from_elem((1, 4, 4), 0.7);
        let up = upsample_bilinear2(&x);
        assert_eq!(up.dim(), (1, 8, 8));
        for &v in up.iter() {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn activations_backward_match_finite_differences() {
        let x = random3(1, 4, 4, 20);
        let h = 1e-6;
        for idx in [(0usize, 1usize, 2usize), (0, 3, 3)] {
            let loss_lr = |x: &Array3<f64>| -> f64 {
                leaky_relu(x, 0.1).iter().map(|v| 0.5 * v * v).sum()
            };
            let y = leaky_relu(&x, 0.1);
            let g = leaky_relu_backward(&y, &y, 0.1);
            let mut xp = x.clone();
            xp[idx] += h;
            let fp = loss_lr(&xp);
            xp[idx] -= 2.0 * h;
            let fm = loss_lr(&xp);
            assert!(rel_err((fp - fm) / (2.0 * h), g[idx]) < 1e-4);

            let loss_sg =
                |x: &Array3<f64>| -> f64 { sigmoid(x).iter().map(|v| 0.5 * v * v).sum() };
            let y = sigmoid(&x);
            let g = sigmoid_backward(&y, &y);
            let mut xp = x.clone();
            xp[idx] += h;
            let fp = loss_sg(&xp);
            xp[idx] -= 2.0 * h;
            let fm = loss_sg(&xp);
            assert!(rel_err((fp - fm) / (2.0 * h), g[idx]) < 1e-4);
        }
    }

    #[test]
    fn concat_split_round_trip() {
        let a = random3(2, 3, 3, 30);
        let b = random3(3, 3, 3, 31);
        let cat = concat_channels(&a, &b).unwrap();
        assert_eq!(cat.dim(), (5, 3, 3));
        let (ga, gb) = split_channels(&cat, 2);
        assert_eq!(ga, a);
        assert_eq!(gb, b);
    }

    #[test]
    fn gap_is_channel_mean() {
        let mut x = Array3::<f64>::zeros((2, 2, 2));
        x[[0, 0, 0]] = 1.0;
        x[[1, 1, 1]] = 4.0;
        let g = global_avg_pool(&x);
        assert!((g[0] - 0.25).abs() < 1e-12);
        assert!((g[1] - 1.0).abs() < 1e-12);
    }
}
