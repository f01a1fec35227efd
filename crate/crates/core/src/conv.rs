//! Spatiotemporal convolution primitives.
//!
//! Feature tensors are (channels, frames, height, width). Kernels hold their
//! weights as (out_channels, in_channels, k_t, k_h, k_w) and convolve as
//! cross-correlations (no kernel flip). `deconv3` is the exact transpose of
//! `conv3` for matched geometry, which is what the adjointness tests pin down.

use crate::error::{CoreError, Result};
use crate::real::Real;
use ndarray::{Array1, Array4, Array5};

/// A convolution (or transposed-convolution) kernel with bias and geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<T: Real> {
    /// (out_channels, in_channels, k_t, k_h, k_w)
    pub weights: Array5<T>,
    /// one bias per output channel
    pub bias: Array1<T>,
    /// stride per (t, h, w) axis
    pub stride: [usize; 3],
    /// zero padding per (t, h, w) axis
    pub padding: [usize; 3],
}

impl<T: Real> ConvKernel<T> {
    pub fn new(
        weights: Array5<T>,
        bias: Array1<T>,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        if bias.len() != weights.dim().0 {
            return Err(CoreError::Contract(format!(
                "bias length {} does not match {} output channels",
                bias.len(),
                weights.dim().0
            )));
        }
        if stride.iter().any(|&s| s == 0) {
            return Err(CoreError::Contract("kernel stride must be positive".into()));
        }
        Ok(Self {
            weights,
            bias,
            stride,
            padding,
        })
    }

    /// Zero-weight, zero-bias kernel of the given geometry.
    pub fn zeros(
        out_c: usize,
        in_c: usize,
        k: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Self {
        Self {
            weights: Array5::zeros((out_c, in_c, k[0], k[1], k[2])),
            bias: Array1::zeros(out_c),
            stride,
            padding,
        }
    }

    /// Stride-1 channel-diagonal impulse kernel scaled by `gain`: output
    /// channel i copies `gain * input channel i`. Kernel extents must be odd.
    pub fn impulse(channels: usize, k: [usize; 3], gain: T) -> Self {
        let mut kernel = Self::zeros(
            channels,
            channels,
            k,
            [1, 1, 1],
            [k[0] / 2, k[1] / 2, k[2] / 2],
        );
        for c in 0..channels {
            kernel.weights[[c, c, k[0] / 2, k[1] / 2, k[2] / 2]] = gain;
        }
        kernel
    }

    pub fn out_channels(&self) -> usize {
        self.weights.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.weights.dim().1
    }

    pub fn kernel_dims(&self) -> [usize; 3] {
        let d = self.weights.dim();
        [d.2, d.3, d.4]
    }

    /// Output shape of `conv3` on the given input:
    /// `out = (in + 2*pad - k) / stride + 1` per axis.
    pub fn conv_out_shape(&self, in_shape: [usize; 4]) -> Result<[usize; 4]> {
        if in_shape[0] != self.in_channels() {
            return Err(CoreError::Contract(format!(
                "conv3 input has {} channels, kernel expects {}",
                in_shape[0],
                self.in_channels()
            )));
        }
        let k = self.kernel_dims();
        let mut out = [self.out_channels(), 0, 0, 0];
        for a in 0..3 {
            let padded = in_shape[a + 1] + 2 * self.padding[a];
            if padded < k[a] {
                return Err(CoreError::Contract(format!(
                    "conv3 axis {a}: padded extent {padded} smaller than kernel {}",
                    k[a]
                )));
            }
            out[a + 1] = (padded - k[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    /// Output shape of `deconv3` on the given input:
    /// `out = (in - 1) * stride - 2*pad + k` per axis.
    pub fn deconv_out_shape(&self, in_shape: [usize; 4]) -> Result<[usize; 4]> {
        if in_shape[0] != self.in_channels() {
            return Err(CoreError::Contract(format!(
                "deconv3 input has {} channels, kernel expects {}",
                in_shape[0],
                self.in_channels()
            )));
        }
        let k = self.kernel_dims();
        let mut out = [self.out_channels(), 0, 0, 0];
        for a in 0..3 {
            let grown = (in_shape[a + 1] - 1) * self.stride[a] + k[a];
            if grown < 2 * self.padding[a] {
                return Err(CoreError::Contract(format!(
                    "deconv3 axis {a}: padding {} exceeds grown extent {grown}",
                    self.padding[a]
                )));
            }
            out[a + 1] = grown - 2 * self.padding[a];
        }
        Ok(out)
    }
}

#[inline(always)]
fn idx4(shape: &[usize; 4], c: usize, t: usize, h: usize, w: usize) -> usize {
    ((c * shape[1] + t) * shape[2] + h) * shape[3] + w
}

fn dims4<T: Real>(x: &Array4<T>) -> [usize; 4] {
    let d = x.dim();
    [d.0, d.1, d.2, d.3]
}

/// Cross-correlation of `x` with `k` plus bias. Accumulates in f64.
pub fn conv3<T: Real>(x: &Array4<T>, k: &ConvKernel<T>) -> Result<Array4<T>> {
    let in_shape = dims4(x);
    let out_shape = k.conv_out_shape(in_shape)?;
    let kd = k.kernel_dims();
    let xs = x.as_slice().expect("owned tensors are standard layout");
    let ws = k.weights.as_slice().expect("owned tensors are standard layout");
    let [st, sh, sw] = k.stride;
    let [pt, ph, pw] = k.padding;
    let in_c = in_shape[0];

    let mut out = Array4::<T>::zeros((out_shape[0], out_shape[1], out_shape[2], out_shape[3]));
    {
        let os = out.as_slice_mut().expect("freshly allocated");
        for oc in 0..out_shape[0] {
            let b = k.bias[oc].acc();
            for ot in 0..out_shape[1] {
                for oh in 0..out_shape[2] {
                    for ow in 0..out_shape[3] {
                        let mut acc = b;
                        for ic in 0..in_c {
                            for kt in 0..kd[0] {
                                let it = (ot * st + kt).wrapping_sub(pt);
                                if it >= in_shape[1] {
                                    continue;
                                }
                                for kh in 0..kd[1] {
                                    let ih = (oh * sh + kh).wrapping_sub(ph);
                                    if ih >= in_shape[2] {
                                        continue;
                                    }
                                    let wbase =
                                        (((oc * in_c + ic) * kd[0] + kt) * kd[1] + kh) * kd[2];
                                    let xbase = idx4(&in_shape, ic, it, ih, 0);
                                    for kw in 0..kd[2] {
                                        let iw = (ow * sw + kw).wrapping_sub(pw);
                                        if iw >= in_shape[3] {
                                            continue;
                                        }
                                        acc += ws[wbase + kw].acc() * xs[xbase + iw].acc();
                                    }
                                }
                            }
                        }
                        os[idx4(&out_shape, oc, ot, oh, ow)] = T::from_acc(acc);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of `conv3` with respect to its input.
pub fn conv3_backward_input<T: Real>(
    grad_out: &Array4<T>,
    k: &ConvKernel<T>,
    in_shape: [usize; 4],
) -> Array4<T> {
    let out_shape = dims4(grad_out);
    let kd = k.kernel_dims();
    let gs = grad_out.as_slice().expect("standard layout");
    let ws = k.weights.as_slice().expect("standard layout");
    let [st, sh, sw] = k.stride;
    let [pt, ph, pw] = k.padding;
    let in_c = in_shape[0];

    let mut acc = vec![0.0f64; in_shape.iter().product()];
    for oc in 0..out_shape[0] {
        for ot in 0..out_shape[1] {
            for oh in 0..out_shape[2] {
                for ow in 0..out_shape[3] {
                    let g = gs[idx4(&out_shape, oc, ot, oh, ow)].acc();
                    if g == 0.0 {
                        continue;
                    }
                    for ic in 0..in_c {
                        for kt in 0..kd[0] {
                            let it = (ot * st + kt).wrapping_sub(pt);
                            if it >= in_shape[1] {
                                continue;
                            }
                            for kh in 0..kd[1] {
                                let ih = (oh * sh + kh).wrapping_sub(ph);
                                if ih >= in_shape[2] {
                                    continue;
                                }
                                let wbase =
                                    (((oc * in_c + ic) * kd[0] + kt) * kd[1] + kh) * kd[2];
                                let xbase = idx4(&in_shape, ic, it, ih, 0);
                                for kw in 0..kd[2] {
                                    let iw = (ow * sw + kw).wrapping_sub(pw);
                                    if iw >= in_shape[3] {
                                        continue;
                                    }
                                    acc[xbase + iw] += ws[wbase + kw].acc() * g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Array4::from_shape_vec(
        (in_shape[0], in_shape[1], in_shape[2], in_shape[3]),
        acc.into_iter().map(T::from_acc).collect(),
    )
    .expect("shape matches buffer")
}

/// Gradients of `conv3` with respect to kernel weights and bias.
pub fn conv3_backward_kernel<T: Real>(
    x: &Array4<T>,
    grad_out: &Array4<T>,
    k: &ConvKernel<T>,
) -> (Array5<T>, Array1<T>) {
    let in_shape = dims4(x);
    let out_shape = dims4(grad_out);
    let kd = k.kernel_dims();
    let xs = x.as_slice().expect("standard layout");
    let gs = grad_out.as_slice().expect("standard layout");
    let [st, sh, sw] = k.stride;
    let [pt, ph, pw] = k.padding;
    let in_c = in_shape[0];

    let mut wacc = vec![0.0f64; out_shape[0] * in_c * kd[0] * kd[1] * kd[2]];
    let mut bacc = vec![0.0f64; out_shape[0]];
    for oc in 0..out_shape[0] {
        for ot in 0..out_shape[1] {
            for oh in 0..out_shape[2] {
                for ow in 0..out_shape[3] {
                    let g = gs[idx4(&out_shape, oc, ot, oh, ow)].acc();
                    bacc[oc] += g;
                    if g == 0.0 {
                        continue;
                    }
                    for ic in 0..in_c {
                        for kt in 0..kd[0] {
                            let it = (ot * st + kt).wrapping_sub(pt);
                            if it >= in_shape[1] {
                                continue;
                            }
                            for kh in 0..kd[1] {
                                let ih = (oh * sh + kh).wrapping_sub(ph);
                                if ih >= in_shape[2] {
                                    continue;
                                }
                                let wbase =
                                    (((oc * in_c + ic) * kd[0] + kt) * kd[1] + kh) * kd[2];
                                let xbase = idx4(&in_shape, ic, it, ih, 0);
                                for kw in 0..kd[2] {
                                    let iw = (ow * sw + kw).wrapping_sub(pw);
                                    if iw >= in_shape[3] {
                                        continue;
                                    }
                                    wacc[wbase + kw] += xs[xbase + iw].acc() * g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let grad_w = Array5::from_shape_vec(
        (out_shape[0], in_c, kd[0], kd[1], kd[2]),
        wacc.into_iter().map(T::from_acc).collect(),
    )
    .expect("shape matches buffer");
    let grad_b = Array1::from_iter(bacc.into_iter().map(T::from_acc));
    (grad_w, grad_b)
}

/// Transposed convolution (the adjoint of `conv3` for matched geometry,
/// plus bias): input positions scatter into the output at
/// `out = in * stride - pad + k`.
pub fn deconv3<T: Real>(x: &Array4<T>, k: &ConvKernel<T>) -> Result<Array4<T>> {
    let in_shape = dims4(x);
    let out_shape = k.deconv_out_shape(in_shape)?;
    let kd = k.kernel_dims();
    let xs = x.as_slice().expect("standard layout");
    let ws = k.weights.as_slice().expect("standard layout");
    let [st, sh, sw] = k.stride;
    let [pt, ph, pw] = k.padding;
    let out_c = out_shape[0];
    let in_c = in_shape[0];

    let mut acc = vec![0.0f64; out_shape.iter().product()];
    for ic in 0..in_c {
        for it in 0..in_shape[1] {
            for ih in 0..in_shape[2] {
                for iw in 0..in_shape[3] {
                    let xv = xs[idx4(&in_shape, ic, it, ih, iw)].acc();
                    if xv == 0.0 {
                        continue;
                    }
                    for oc in 0..out_c {
                        for kt in 0..kd[0] {
                            let ot = (it * st + kt).wrapping_sub(pt);
                            if ot >= out_shape[1] {
                                continue;
                            }
                            for kh in 0..kd[1] {
                                let oh = (ih * sh + kh).wrapping_sub(ph);
                                if oh >= out_shape[2] {
                                    continue;
                                }
                                let wbase =
                                    (((oc * in_c + ic) * kd[0] + kt) * kd[1] + kh) * kd[2];
                                let obase = idx4(&out_shape, oc, ot, oh, 0);
                                for kw in 0..kd[2] {
                                    let ow = (iw * sw + kw).wrapping_sub(pw);
                                    if ow >= out_shape[3] {
                                        continue;
                                    }
                                    acc[obase + ow] += ws[wbase + kw].acc() * xv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    for oc in 0..out_c {
        let b = k.bias[oc].acc();
        if b != 0.0 {
            let span = out_shape[1] * out_shape[2] * out_shape[3];
            for e in &mut acc[oc * span..(oc + 1) * span] {
                *e += b;
            }
        }
    }
    Ok(Array4::from_shape_vec(
        (out_shape[0], out_shape[1], out_shape[2], out_shape[3]),
        acc.into_iter().map(T::from_acc).collect(),
    )
    .expect("shape matches buffer"))
}

/// Gradient of `deconv3` with respect to its input (a gather with the same
/// kernel orientation).
pub fn deconv3_backward_input<T: Real>(
    grad_out: &Array4<T>,
    k: &ConvKernel<T>,
    in_shape: [usize; 4],
) -> Array4<T> {
    let out_shape = dims4(grad_out);
    let kd = k.kernel_dims();
    let gs = grad_out.as_slice().expect("standard layout");
    let ws = k.weights.as_slice().expect("standard layout");
    let [st, sh, sw] = k.stride;
    let [pt, ph, pw] = k.padding;
    let out_c = out_shape[0];
    let in_c = in_shape[0];

    let mut out = Array4::<T>::zeros((in_shape[0], in_shape[1], in_shape[2], in_shape[3]));
    {
        let os = out.as_slice_mut().expect("freshly allocated");
        for ic in 0..in_c {
            for it in 0..in_shape[1] {
                for ih in 0..in_shape[2] {
                    for iw in 0..in_shape[3] {
                        let mut acc = 0.0f64;
                        for oc in 0..out_c {
                            for kt in 0..kd[0] {
                                let ot = (it * st + kt).wrapping_sub(pt);
                                if ot >= out_shape[1] {
                                    continue;
                                }
                                for kh in 0..kd[1] {
                                    let oh = (ih * sh + kh).wrapping_sub(ph);
                                    if oh >= out_shape[2] {
                                        continue;
                                    }
                                    let wbase =
                                        (((oc * in_c + ic) * kd[0] + kt) * kd[1] + kh) * kd[2];
                                    let obase = idx4(&out_shape, oc, ot, oh, 0);
                                    for kw in 0..kd[2] {
                                        let ow = (iw * sw + kw).wrapping_sub(pw);
                                        if ow >= out_shape[3] {
                                            continue;
                                        }
                                        acc += ws[wbase + kw].acc() * gs[obase + ow].acc();
                                    }
                                }
                            }
                        }
                        os[idx4(&in_shape, ic, it, ih, iw)] = T::from_acc(acc);
                    }
                }
            }
        }
    }
    out
}

/// Gradients of `deconv3` with respect to kernel weights and bias.
pub fn deconv3_backward_kernel<T: Real>(
    x: &Array4<T>,
    grad_out: &Array4<T>,
    k: &ConvKernel<T>,
) -> (Array5<T>, Array1<T>) {
    let in_shape = dims4(x);
    let out_shape = dims4(grad_out);
    let kd = k.kernel_dims();
    let xs = x.as_slice().expect("standard layout");
    let gs = grad_out.as_slice().expect("standard layout");
    let [st, sh, sw] = k.stride;
    let [pt, ph, pw] = k.padding;
    let out_c = out_shape[0];
    let in_c = in_shape[0];

    let mut wacc = vec![0.0f64; out_c * in_c * kd[0] * kd[1] * kd[2]];
    let mut bacc = vec![0.0f64; out_c];
    for ic in 0..in_c {
        for it in 0..in_shape[1] {
            for ih in 0..in_shape[2] {
                for iw in 0..in_shape[3] {
                    let xv = xs[idx4(&in_shape, ic, it, ih, iw)].acc();
                    if xv == 0.0 {
                        continue;
                    }
                    for oc in 0..out_c {
                        for kt in 0..kd[0] {
                            let ot = (it * st + kt).wrapping_sub(pt);
                            if ot >= out_shape[1] {
                                continue;
                            }
                            for kh in 0..kd[1] {
                                let oh = (ih * sh + kh).wrapping_sub(ph);
                                if oh >= out_shape[2] {
                                    continue;
                                }
                                let wbase =
                                    (((oc * in_c + ic) * kd[0] + kt) * kd[1] + kh) * kd[2];
                                let obase = idx4(&out_shape, oc, ot, oh, 0);
                                for kw in 0..kd[2] {
                                    let ow = (iw * sw + kw).wrapping_sub(pw);
                                    if ow >= out_shape[3] {
                                        continue;
                                    }
                                    wacc[wbase + kw] += gs[obase + ow].acc() * xv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    for oc in 0..out_c {
        let mut b = 0.0f64;
        let span = out_shape[1] * out_shape[2] * out_shape[3];
        for e in &gs[oc * span..(oc + 1) * span] {
            b += e.acc();
        }
        bacc[oc] = b;
    }
    let grad_w = Array5::from_shape_vec(
        (out_c, in_c, kd[0], kd[1], kd[2]),
        wacc.into_iter().map(T::from_acc).collect(),
    )
    .expect("shape matches buffer");
    let grad_b = Array1::from_iter(bacc.into_iter().map(T::from_acc));
    (grad_w, grad_b)
}

/// Non-overlapping spatial mean pooling; channel and temporal axes untouched.
pub fn avg_pool<T: Real>(x: &Array4<T>, factor: usize) -> Result<Array4<T>> {
    if factor == 0 {
        return Err(CoreError::Contract("pooling factor must be positive".into()));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let (c, t, h, w) = x.dim();
    if h % factor != 0 || w % factor != 0 {
        return Err(CoreError::Contract(format!(
            "spatial extent {h}x{w} not divisible by pooling factor {factor}"
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = Array4::<T>::zeros((c, t, oh, ow));
    for ci in 0..c {
        for ti in 0..t {
            for y in 0..oh {
                for xw in 0..ow {
                    let mut acc = 0.0f64;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += x[[ci, ti, y * factor + dy, xw * factor + dx]].acc();
                        }
                    }
                    out[[ci, ti, y, xw]] = T::from_acc(acc * inv);
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of `avg_pool`: spreads each output gradient uniformly over its block.
pub fn avg_pool_backward<T: Real>(grad_out: &Array4<T>, factor: usize) -> Array4<T> {
    if factor == 1 {
        return grad_out.clone();
    }
    let (c, t, oh, ow) = grad_out.dim();
    let inv = T::from_acc(1.0 / (factor * factor) as f64);
    let mut grad = Array4::<T>::zeros((c, t, oh * factor, ow * factor));
    for ci in 0..c {
        for ti in 0..t {
            for y in 0..oh {
                for xw in 0..ow {
                    let g = grad_out[[ci, ti, y, xw]] * inv;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            grad[[ci, ti, y * factor + dy, xw * factor + dx]] = g;
                        }
                    }
                }
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random4(rng: &mut ChaCha8Rng, d: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_fn(d, |_| rng.gen_range(-1.0..1.0))
    }

    fn random_kernel(
        rng: &mut ChaCha8Rng,
        oc: usize,
        ic: usize,
        k: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> ConvKernel<f64> {
        let weights =
            Array5::from_shape_fn((oc, ic, k[0], k[1], k[2]), |_| rng.gen_range(-1.0..1.0));
        let bias = Array1::from_shape_fn(oc, |_| rng.gen_range(-1.0..1.0));
        ConvKernel::new(weights, bias, stride, padding).unwrap()
    }

    /// Direct six-nested-loop cross-correlation used as an oracle; written
    /// independently of the production index arithmetic.
    fn conv3_naive(x: &Array4<f64>, k: &ConvKernel<f64>) -> Array4<f64> {
        let (ic_n, t, h, w) = x.dim();
        let (oc_n, _, kt, kh, kw) = k.weights.dim();
        let [st, sh, sw] = k.stride;
        let [pt, ph, pw] = k.padding;
        let ot_n = (t + 2 * pt - kt) / st + 1;
        let oh_n = (h + 2 * ph - kh) / sh + 1;
        let ow_n = (w + 2 * pw - kw) / sw + 1;
        let mut out = Array4::<f64>::zeros((oc_n, ot_n, oh_n, ow_n));
        for oc in 0..oc_n {
            for ot in 0..ot_n {
                for oh in 0..oh_n {
                    for ow in 0..ow_n {
                        let mut acc = k.bias[oc];
                        for ic in 0..ic_n {
                            for a in 0..kt {
                                for b in 0..kh {
                                    for c in 0..kw {
                                        let ti = ot as isize * st as isize + a as isize
                                            - pt as isize;
                                        let hi = oh as isize * sh as isize + b as isize
                                            - ph as isize;
                                        let wi = ow as isize * sw as isize + c as isize
                                            - pw as isize;
                                        if ti >= 0
                                            && (ti as usize) < t
                                            && hi >= 0
                                            && (hi as usize) < h
                                            && wi >= 0
                                            && (wi as usize) < w
                                        {
                                            acc += k.weights[[oc, ic, a, b, c]]
                                                * x[[ic, ti as usize, hi as usize, wi as usize]];
                                        }
                                    }
                                }
                            }
                        }
                        out[[oc, ot, oh, ow]] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn impulse_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random4(&mut rng, (2, 3, 5, 4));
        let k = ConvKernel::impulse(2, [3, 3, 3], 1.0);
        let y = conv3(&x, &k).unwrap();
        let err = (&y - &x).mapv(f64::abs).iter().fold(0.0f64, |a, &v| a.max(v));
        assert!(err < 1e-15);
    }

    #[test]
    fn zero_kernel_zero_bias_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random4(&mut rng, (1, 2, 4, 4));
        let k = ConvKernel::<f64>::zeros(1, 1, [1, 3, 3], [1, 1, 1], [0, 1, 1]);
        let y = conv3(&x, &k).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv3_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random4(&mut rng, (1, 4, 4, 4));
        let k = random_kernel(&mut rng, 1, 1, [3, 3, 3], [1, 1, 1], [1, 1, 1]);
        let fast = conv3(&x, &k).unwrap();
        let slow = conv3_naive(&x, &k);
        let err = (&fast - &slow).mapv(f64::abs).iter().fold(0.0f64, |a, &v| a.max(v));
        assert!(err < 1e-12, "max err {err}");

        // strided multi-channel case
        let x = random4(&mut rng, (3, 5, 6, 7));
        let k = random_kernel(&mut rng, 2, 3, [1, 3, 3], [1, 2, 2], [0, 1, 1]);
        let fast = conv3(&x, &k).unwrap();
        let slow = conv3_naive(&x, &k);
        let err = (&fast - &slow).mapv(f64::abs).iter().fold(0.0f64, |a, &v| a.max(v));
        assert!(err < 1e-12, "max err {err}");
    }

    #[test]
    fn conv3_rejects_channel_mismatch() {
        let x = Array4::<f64>::zeros((2, 2, 4, 4));
        let k = ConvKernel::<f64>::zeros(1, 3, [1, 3, 3], [1, 1, 1], [0, 1, 1]);
        assert!(matches!(conv3(&x, &k), Err(CoreError::Contract(_))));
    }

    #[test]
    fn conv3_is_linear_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random4(&mut rng, (2, 3, 4, 4));
        let b = random4(&mut rng, (2, 3, 4, 4));
        let mut k = random_kernel(&mut rng, 2, 2, [3, 3, 3], [1, 1, 1], [1, 1, 1]);
        k.bias.fill(0.0);
        let lhs = conv3(&(2.0 * &a + 3.0 * &b), &k).unwrap();
        let rhs = 2.0 * conv3(&a, &k).unwrap() + 3.0 * conv3(&b, &k).unwrap();
        let err = (&lhs - &rhs).mapv(f64::abs).iter().fold(0.0f64, |x, &v| x.max(v));
        assert!(err < 1e-10);
    }

    #[test]
    fn deconv3_stride2_doubles_spatial_extent() {
        let x = Array4::<f64>::zeros((1, 2, 5, 7));
        let k = ConvKernel::<f64>::zeros(1, 1, [1, 6, 6], [1, 2, 2], [0, 2, 2]);
        let shape = k.deconv_out_shape([1, 2, 5, 7]).unwrap();
        assert_eq!(shape, [1, 2, 10, 14]);
    }

    #[test]
    fn deconv3_zero_input_broadcasts_bias() {
        let x = Array4::<f64>::zeros((1, 1, 3, 3));
        let mut k = ConvKernel::<f64>::zeros(2, 1, [1, 6, 6], [1, 2, 2], [0, 2, 2]);
        k.bias[0] = 0.25;
        k.bias[1] = -1.5;
        let y = deconv3(&x, &k).unwrap();
        for ((c, _, _, _), v) in y.indexed_iter() {
            assert_eq!(*v, k.bias[c]);
        }
    }

    #[test]
    fn conv_deconv_adjointness() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for &(stride, pad, ks) in &[([1, 2, 2], [0, 2, 2], [1, 6, 6]), ([1, 1, 1], [1, 1, 1], [3, 3, 3])]
        {
            let mut k = random_kernel(&mut rng, 2, 3, ks, stride, pad);
            k.bias.fill(0.0);
            let x = random4(&mut rng, (3, 3, 8, 8));
            let y_shape = k.conv_out_shape([3, 3, 8, 8]).unwrap();
            let y = random4(
                &mut rng,
                (y_shape[0], y_shape[1], y_shape[2], y_shape[3]),
            );
            let cx = conv3(&x, &k).unwrap();
            // matched kernel: same weights with in/out channel axes swapped
            let wt = k
                .weights
                .view()
                .permuted_axes([1, 0, 2, 3, 4])
                .as_standard_layout()
                .to_owned();
            let kt = ConvKernel::new(wt, Array1::zeros(3), stride, pad).unwrap();
            let dy = deconv3(&y, &kt).unwrap();
            let lhs: f64 = (&cx * &y).sum();
            let rhs: f64 = (&x * &dy).sum();
            assert!(
                (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1.0),
                "adjointness broken: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = random4(&mut rng, (2, 2, 4, 4));
        let k = random_kernel(&mut rng, 2, 2, [1, 3, 3], [1, 1, 1], [0, 1, 1]);
        let probe_shape = k.conv_out_shape([2, 2, 4, 4]).unwrap();
        let probe = random4(
            &mut rng,
            (probe_shape[0], probe_shape[1], probe_shape[2], probe_shape[3]),
        );
        let loss = |x: &Array4<f64>, k: &ConvKernel<f64>| (&conv3(x, k).unwrap() * &probe).sum();

        let gx = conv3_backward_input(&probe, &k, [2, 2, 4, 4]);
        let (gw, gb) = conv3_backward_kernel(&x, &probe, &k);

        let h = 1e-6;
        for idx in [(0, 0, 1, 2), (1, 1, 3, 0)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xn = x.clone();
            xn[idx] -= h;
            let fd = (loss(&xp, &k) - loss(&xn, &k)) / (2.0 * h);
            assert!((gx[idx] - fd).abs() < 1e-8);
        }
        for idx in [(0, 0, 0, 1, 1), (1, 1, 0, 2, 0)] {
            let mut kp = k.clone();
            kp.weights[idx] += h;
            let mut kn = k.clone();
            kn.weights[idx] -= h;
            let fd = (loss(&x, &kp) - loss(&x, &kn)) / (2.0 * h);
            assert!((gw[idx] - fd).abs() < 1e-8);
        }
        for oc in 0..2 {
            let mut kp = k.clone();
            kp.bias[oc] += h;
            let mut kn = k.clone();
            kn.bias[oc] -= h;
            let fd = (loss(&x, &kp) - loss(&x, &kn)) / (2.0 * h);
            assert!((gb[oc] - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn deconv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = random4(&mut rng, (2, 1, 3, 3));
        let k = random_kernel(&mut rng, 2, 2, [1, 6, 6], [1, 2, 2], [0, 2, 2]);
        let out_shape = k.deconv_out_shape([2, 1, 3, 3]).unwrap();
        let probe = random4(
            &mut rng,
            (out_shape[0], out_shape[1], out_shape[2], out_shape[3]),
        );
        let loss =
            |x: &Array4<f64>, k: &ConvKernel<f64>| (&deconv3(x, k).unwrap() * &probe).sum();

        let gx = deconv3_backward_input(&probe, &k, [2, 1, 3, 3]);
        let (gw, gb) = deconv3_backward_kernel(&x, &probe, &k);

        let h = 1e-6;
        for idx in [(0, 0, 1, 1), (1, 0, 2, 0)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xn = x.clone();
            xn[idx] -= h;
            let fd = (loss(&xp, &k) - loss(&xn, &k)) / (2.0 * h);
            assert!((gx[idx] - fd).abs() < 1e-8);
        }
        for idx in [(0, 1, 0, 3, 2), (1, 0, 0, 5, 5)] {
            let mut kp = k.clone();
            kp.weights[idx] += h;
            let mut kn = k.clone();
            kn.weights[idx] -= h;
            let fd = (loss(&x, &kp) - loss(&x, &kn)) / (2.0 * h);
            assert!((gw[idx] - fd).abs() < 1e-8);
        }
        for oc in 0..2 {
            let mut kp = k.clone();
            kp.bias[oc] += h;
            let mut kn = k.clone();
            kn.bias[oc] -= h;
            let fd = (loss(&x, &kp) - loss(&x, &kn)) / (2.0 * h);
            assert!((gb[oc] - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn avg_pool_examples() {
        let c = Array4::<f64>::from_elem((1, 2, 4, 4), 3.5);
        let p = avg_pool(&c, 2).unwrap();
        assert_eq!(p.dim(), (1, 2, 2, 2));
        assert!(p.iter().all(|&v| (v - 3.5).abs() < 1e-15));

        let mut x = Array4::<f64>::zeros((1, 1, 2, 2));
        x[[0, 0, 0, 0]] = 1.0;
        x[[0, 0, 0, 1]] = 3.0;
        x[[0, 0, 1, 0]] = 5.0;
        x[[0, 0, 1, 1]] = 7.0;
        let p = avg_pool(&x, 2).unwrap();
        assert_eq!(p[[0, 0, 0, 0]], 4.0);
    }

    #[test]
    fn avg_pool_energy_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = random4(&mut rng, (2, 3, 8, 8));
        let p = avg_pool(&x, 2).unwrap();
        let max_in = x.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let max_out = p.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        assert!(max_out <= max_in + 1e-15);
    }

    #[test]
    fn avg_pool_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let x = random4(&mut rng, (1, 2, 4, 4));
        let probe = random4(&mut rng, (1, 2, 2, 2));
        let g = avg_pool_backward(&probe, 2);
        let h = 1e-6;
        let mut xp = x.clone();
        xp[[0, 1, 2, 3]] += h;
        let mut xn = x.clone();
        xn[[0, 1, 2, 3]] -= h;
        let fd = ((&avg_pool(&xp, 2).unwrap() * &probe).sum()
            - (&avg_pool(&xn, 2).unwrap() * &probe).sum())
            / (2.0 * h);
        assert!((g[[0, 1, 2, 3]] - fd).abs() < 1e-9);
    }
}
