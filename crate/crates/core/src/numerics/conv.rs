//! Grouped 2-D cross-correlation with hand-written backward pass.
//!
//! Inputs are zero-padded into a scratch buffer first so every kernel tap is
//! evaluated for every output pixel; the optional [`OpCounter`] therefore
//! records exactly `n * c_o * (c_i / g) * k^2 * oh * ow` multiply-accumulates.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Geometry of one convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub groups: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Dense 1x1 convolution.
    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: 1,
            stride: 1,
            groups: 1,
            padding: 0,
        }
    }

    /// Depthwise `k x k` convolution with "same" padding.
    pub fn depthwise(channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels: channels,
            out_channels: channels,
            kernel,
            stride: 1,
            groups: channels,
            padding: kernel / 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            groups,
            ..
        } = *self;
        if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 || groups == 0 {
            return Err(Error::InvalidConfig(format!("degenerate conv spec {self:?}")));
        }
        if in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::Divisibility(format!(
                "channels ({in_channels} -> {out_channels}) not divisible by groups {groups}"
            )));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel,
            self.kernel,
        )
    }

    /// Weights plus biases.
    pub fn param_count(&self) -> u64 {
        (self.weight_shape().numel() + self.out_channels) as u64
    }

    pub fn output_extent(&self, extent: usize) -> Option<usize> {
        let padded = extent + 2 * self.padding;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    /// Multiply-accumulates per output pixel (all output channels).
    pub fn macs_per_output_pixel(&self) -> u64 {
        (self.out_channels * (self.in_channels / self.groups) * self.kernel * self.kernel) as u64
    }
}

/// Tally of arithmetic actually executed by the convolution kernels.
#[derive(Debug, Default)]
pub struct OpCounter {
    macs: AtomicU64,
    bias_adds: AtomicU64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn macs(&self) -> u64 {
        self.macs.load(Ordering::Relaxed)
    }

    pub fn bias_adds(&self) -> u64 {
        self.bias_adds.load(Ordering::Relaxed)
    }

    /// `2 * macs + bias_adds`.
    pub fn flops(&self) -> u64 {
        2 * self.macs() + self.bias_adds()
    }

    fn add_macs(&self, v: u64) {
        self.macs.fetch_add(v, Ordering::Relaxed);
    }

    fn add_bias(&self, v: u64) {
        self.bias_adds.fetch_add(v, Ordering::Relaxed);
    }
}

struct Geometry {
    shape: Shape,
    oh: usize,
    ow: usize,
    hp: usize,
    wp: usize,
    cin_g: usize,
    cout_g: usize,
}

fn geometry<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&[T]>, spec: &ConvSpec) -> Result<Geometry> {
    spec.validate()?;
    let shape = input.shape();
    if shape.c != spec.in_channels {
        return Err(Error::shape(format!(
            "conv2d: input has {} channels, spec expects {}",
            shape.c, spec.in_channels
        )));
    }
    if weight.shape() != spec.weight_shape() {
        return Err(Error::shape(format!(
            "conv2d: weight shape {} expected {}",
            weight.shape(),
            spec.weight_shape()
        )));
    }
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return Err(Error::shape(format!(
                "conv2d: bias length {} expected {}",
                b.len(),
                spec.out_channels
            )));
        }
    }
    let (oh, ow) = match (spec.output_extent(shape.h), spec.output_extent(shape.w)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::shape(format!(
                "conv2d: input {}x{} with padding {} smaller than kernel {}",
                shape.h, shape.w, spec.padding, spec.kernel
            )))
        }
    };
    Ok(Geometry {
        shape,
        oh,
        ow,
        hp: shape.h + 2 * spec.padding,
        wp: shape.w + 2 * spec.padding,
        cin_g: spec.in_channels / spec.groups,
        cout_g: spec.out_channels / spec.groups,
    })
}

fn padded<T: Scalar>(input: &Tensor<T>, pad: usize) -> Vec<T> {
    let s = input.shape();
    if pad == 0 {
        return input.data().to_vec();
    }
    let (hp, wp) = (s.h + 2 * pad, s.w + 2 * pad);
    let mut out = vec![T::zero(); s.n * s.c * hp * wp];
    for nc in 0..s.n * s.c {
        for y in 0..s.h {
            let src = (nc * s.h + y) * s.w;
            let dst = (nc * hp + y + pad) * wp + pad;
            out[dst..dst + s.w].copy_from_slice(&input.data()[src..src + s.w]);
        }
    }
    out
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

const TILE: usize = 128;

/// Dense 1x1 convolution of one batch item: `out[co] = bias[co] + sum_ci
/// w[co, ci] * x[ci]`, four output channels per pass over the input.
fn pointwise<T: Scalar>(out: &mut [T], w: &[T], x: &[T], bias: &[T], cin: usize, pix: usize) {
    let cout = bias.len();
    let mut acc = [[T::zero(); TILE]; 4];
    for p0 in (0..pix).step_by(TILE) {
        let len = TILE.min(pix - p0);
        for co0 in (0..cout).step_by(4) {
            let nb = 4.min(cout - co0);
            for j in 0..nb {
                acc[j][..len].fill(bias[co0 + j]);
            }
            for ci in 0..cin {
                let xs = &x[ci * pix + p0..][..len];
                if nb == 4 {
                    let wv: [T; 4] = std::array::from_fn(|j| w[(co0 + j) * cin + ci]);
                    let [a0, a1, a2, a3] = &mut acc;
                    for ((((&xv, r0), r1), r2), r3) in xs
                        .iter()
                        .zip(&mut a0[..len])
                        .zip(&mut a1[..len])
                        .zip(&mut a2[..len])
                        .zip(&mut a3[..len])
                    {
                        *r0 += wv[0] * xv;
                        *r1 += wv[1] * xv;
                        *r2 += wv[2] * xv;
                        *r3 += wv[3] * xv;
                    }
                } else {
                    for j in 0..nb {
                        axpy(&mut acc[j][..len], w[(co0 + j) * cin + ci], xs);
                    }
                }
            }
            for j in 0..nb {
                out[(co0 + j) * pix + p0..][..len].copy_from_slice(&acc[j][..len]);
            }
        }
    }
}

pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    conv2d_counted(input, weight, bias, spec, None)
}

/// [`conv2d`] that also tallies executed arithmetic into `counter`.
pub fn conv2d_counted<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
    counter: Option<&OpCounter>,
) -> Result<Tensor<T>> {
    let g = geometry(input, weight, bias, spec)?;
    let has_bias = bias.is_some();
    let (k, s) = (spec.kernel, spec.stride);
    let src = padded(input, spec.padding);
    let w = weight.data();
    let out_shape = Shape::new(g.shape.n, spec.out_channels, g.oh, g.ow);
    let opix = g.oh * g.ow;
    let in_plane = g.hp * g.wp;
    let mut out = vec![T::zero(); out_shape.numel()];
    let flat = k == 1 && s == 1 && spec.padding == 0;
    let zeros = vec![T::zero(); spec.out_channels];
    let bias = bias.unwrap_or(&zeros);

    if flat && spec.groups == 1 {
        for n in 0..g.shape.n {
            pointwise(
                &mut out[n * spec.out_channels * opix..][..spec.out_channels * opix],
                w,
                &src[n * spec.in_channels * in_plane..][..spec.in_channels * in_plane],
                bias,
                spec.in_channels,
                opix,
            );
        }
    } else if s == 1 {
        // Accumulate at the padded row pitch so each tap is one contiguous
        // axpy; the k - 1 wrap-around columns per row are discarded.
        let span = (g.oh - 1) * g.wp + g.ow;
        let mut wide = vec![T::zero(); span];
        for n in 0..g.shape.n {
            for co in 0..spec.out_channels {
                let grp = co / g.cout_g;
                wide.fill(bias[co]);
                for cig in 0..g.cin_g {
                    let ci = grp * g.cin_g + cig;
                    let plane = &src[(n * spec.in_channels + ci) * in_plane..][..in_plane];
                    let wbase = (co * g.cin_g + cig) * k * k;
                    for ky in 0..k {
                        for kx in 0..k {
                            axpy(&mut wide, w[wbase + ky * k + kx], &plane[ky * g.wp + kx..][..span]);
                        }
                    }
                }
                let dst = &mut out[(n * spec.out_channels + co) * opix..][..opix];
                for (oy, row) in dst.chunks_exact_mut(g.ow).enumerate() {
                    row.copy_from_slice(&wide[oy * g.wp..][..g.ow]);
                }
            }
        }
    } else {
        for n in 0..g.shape.n {
            for co in 0..spec.out_channels {
                let grp = co / g.cout_g;
                let dst = &mut out[(n * spec.out_channels + co) * opix..][..opix];
                dst.fill(bias[co]);
                for cig in 0..g.cin_g {
                    let ci = grp * g.cin_g + cig;
                    let plane = &src[(n * spec.in_channels + ci) * in_plane..][..in_plane];
                    let wbase = (co * g.cin_g + cig) * k * k;
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = w[wbase + ky * k + kx];
                            for oy in 0..g.oh {
                                let row = &mut dst[oy * g.ow..][..g.ow];
                                let base = (oy * s + ky) * g.wp + kx;
                                for (ox, r) in row.iter_mut().enumerate() {
                                    *r += wv * plane[base + ox * s];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    if let Some(c) = counter {
        c.add_macs(g.shape.n as u64 * spec.macs_per_output_pixel() * opix as u64);
        if has_bias {
            c.add_bias(out_shape.numel() as u64);
        }
    }
    Tensor::from_raw(out_shape, out).finite("conv2d")
}

/// Gradients of the convolution with respect to its input, weight and bias.
#[derive(Clone, Debug)]
pub struct ConvGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    let g = geometry(input, weight, None, spec)?;
    let expected = Shape::new(g.shape.n, spec.out_channels, g.oh, g.ow);
    if grad_out.shape() != expected {
        return Err(Error::shape(format!(
            "conv2d_backward: grad_out {} expected {expected}",
            grad_out.shape()
        )));
    }
    let (k, s, pad) = (spec.kernel, spec.stride, spec.padding);
    let src = padded(input, pad);
    let w = weight.data();
    let go = grad_out.data();
    let opix = g.oh * g.ow;
    let in_plane = g.hp * g.wp;
    let mut gin = vec![T::zero(); g.shape.n * spec.in_channels * in_plane];
    let mut gw = vec![T::zero(); w.len()];
    let mut gb = vec![T::zero(); spec.out_channels];
    let flat = k == 1 && s == 1 && pad == 0;

    if flat && spec.groups == 1 {
        // input gradient is the pointwise conv of grad_out with the transposed weight
        let (ci_n, co_n) = (spec.in_channels, spec.out_channels);
        let wt: Vec<T> = (0..ci_n * co_n).map(|i| w[(i % co_n) * ci_n + i / co_n]).collect();
        let zeros = vec![T::zero(); ci_n];
        for n in 0..g.shape.n {
            let gslab = &go[n * co_n * opix..][..co_n * opix];
            let xslab = &src[n * ci_n * in_plane..][..ci_n * in_plane];
            pointwise(
                &mut gin[n * ci_n * in_plane..][..ci_n * in_plane],
                &wt,
                gslab,
                &zeros,
                co_n,
                opix,
            );
            for (co, gplane) in gslab.chunks_exact(opix).enumerate() {
                gb[co] += gplane.iter().fold(T::zero(), |a, &v| a + v);
                for (ci, plane) in xslab.chunks_exact(in_plane).enumerate() {
                    gw[co * ci_n + ci] += dot(gplane, plane);
                }
            }
        }
    } else if s == 1 {
        let span = (g.oh - 1) * g.wp + g.ow;
        let mut wide = vec![T::zero(); span];
        for n in 0..g.shape.n {
            for co in 0..spec.out_channels {
                let grp = co / g.cout_g;
                let gplane = &go[(n * spec.out_channels + co) * opix..][..opix];
                gb[co] += gplane.iter().fold(T::zero(), |a, &v| a + v);
                for (oy, row) in gplane.chunks_exact(g.ow).enumerate() {
                    wide[oy * g.wp..][..g.ow].copy_from_slice(row);
                }
                for cig in 0..g.cin_g {
                    let ci = grp * g.cin_g + cig;
                    let off = (n * spec.in_channels + ci) * in_plane;
                    let plane = &src[off..off + in_plane];
                    let gplane_in = &mut gin[off..off + in_plane];
                    let wbase = (co * g.cin_g + cig) * k * k;
                    for ky in 0..k {
                        for kx in 0..k {
                            let wi = wbase + ky * k + kx;
                            let base = ky * g.wp + kx;
                            gw[wi] += dot(&wide, &plane[base..base + span]);
                            axpy(&mut gplane_in[base..base + span], w[wi], &wide);
                        }
                    }
                }
            }
        }
    } else {
        for n in 0..g.shape.n {
            for co in 0..spec.out_channels {
                let grp = co / g.cout_g;
                let gplane = &go[(n * spec.out_channels + co) * opix..][..opix];
                gb[co] += gplane.iter().fold(T::zero(), |a, &v| a + v);
                for cig in 0..g.cin_g {
                    let ci = grp * g.cin_g + cig;
                    let off = (n * spec.in_channels + ci) * in_plane;
                    let plane = &src[off..off + in_plane];
                    let gplane_in = &mut gin[off..off + in_plane];
                    let wbase = (co * g.cin_g + cig) * k * k;
                    for ky in 0..k {
                        for kx in 0..k {
                            let wi = wbase + ky * k + kx;
                            let wv = w[wi];
                            let mut acc = T::zero();
                            for oy in 0..g.oh {
                                let grow = &gplane[oy * g.ow..][..g.ow];
                                let base = (oy * s + ky) * g.wp + kx;
                                for (ox, &gv) in grow.iter().enumerate() {
                                    acc += gv * plane[base + ox * s];
                                    gplane_in[base + ox * s] += wv * gv;
                                }
                            }
                            gw[wi] += acc;
                        }
                    }
                }
            }
        }
    }

    let in_shape = g.shape;
    let grad_input = if pad == 0 {
        Tensor::from_raw(in_shape, gin)
    } else {
        let mut out = Vec::with_capacity(in_shape.numel());
        for nc in 0..in_shape.n * in_shape.c {
            for y in 0..in_shape.h {
                let start = (nc * g.hp + y + pad) * g.wp + pad;
                out.extend_from_slice(&gin[start..start + in_shape.w]);
            }
        }
        Tensor::from_raw(in_shape, out)
    };
    if !gb.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { op: "conv2d_backward" });
    }
    Ok(ConvGrads {
        input: grad_input.finite("conv2d_backward")?,
        weight: Tensor::from_raw(weight.shape(), gw).finite("conv2d_backward")?,
        bias: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::finite_difference_grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct six-loop cross-correlation with bounds checks instead of a
    /// padded buffer.
    fn reference(input: &Tensor<f64>, weight: &Tensor<f64>, bias: &[f64], spec: &ConvSpec) -> Tensor<f64> {
        let s = input.shape();
        let oh = (s.h + 2 * spec.padding - spec.kernel) / spec.stride + 1;
        let ow = (s.w + 2 * spec.padding - spec.kernel) / spec.stride + 1;
        let cin_g = spec.in_channels / spec.groups;
        let cout_g = spec.out_channels / spec.groups;
        Tensor::from_fn(Shape::new(s.n, spec.out_channels, oh, ow), |n, co, oy, ox| {
            let grp = co / cout_g;
            let mut acc = bias[co];
            for cig in 0..cin_g {
                for ky in 0..spec.kernel {
                    for kx in 0..spec.kernel {
                        let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                        let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                        if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                            continue;
                        }
                        acc += weight.get(co, cig, ky, kx) * input.get(n, grp * cin_g + cig, iy as usize, ix as usize);
                    }
                }
            }
            acc
        })
        .unwrap()
    }

    #[test]
    fn identity_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::random_uniform(Shape::new(2, 3, 4, 5), -1.0, 1.0, &mut rng);
        let spec = ConvSpec::pointwise(3, 3);
        let w = Tensor::from_fn(spec.weight_shape(), |o, i, _, _| if o == i { 1.0 } else { 0.0 }).unwrap();
        let y = conv2d(&x, &w, Some(&[0.0; 3]), &spec).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn depthwise_constant_field() {
        let v = 0.75;
        let x = Tensor::<f64>::full(Shape::new(1, 4, 6, 6), v);
        let spec = ConvSpec::depthwise(4, 3);
        let w = Tensor::full(spec.weight_shape(), 1.0);
        let y = conv2d(&x, &w, None, &spec).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 4, 6, 6));
        for c in 0..4 {
            for yy in 1..5 {
                for xx in 1..5 {
                    assert_eq!(y.get(0, c, yy, xx), 9.0 * v);
                }
            }
        }
        // corner sees 4 taps
        assert_eq!(y.get(0, 0, 0, 0), 4.0 * v);
    }

    #[test]
    fn matches_nested_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = ConvSpec {
            in_channels: 8,
            out_channels: 12,
            kernel: 3,
            stride: 2,
            groups: 1,
            padding: 1,
        };
        let x = Tensor::<f64>::random_uniform(Shape::new(4, 8, 16, 16), -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::random_uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
        let b: Vec<f64> = (0..12).map(|i| i as f64 * 0.1 - 0.5).collect();
        let y = conv2d(&x, &w, Some(&b), &spec).unwrap();
        let r = reference(&x, &w, &b, &spec);
        assert_eq!(y.shape(), Shape::new(4, 12, 8, 8));
        for (a, e) in y.data().iter().zip(r.data()) {
            assert!((a - e).abs() <= 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn grouped_strided_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for spec in [
            ConvSpec {
                in_channels: 6,
                out_channels: 4,
                kernel: 2,
                stride: 2,
                groups: 2,
                padding: 0,
            },
            ConvSpec {
                in_channels: 4,
                out_channels: 4,
                kernel: 3,
                stride: 1,
                groups: 4,
                padding: 1,
            },
            ConvSpec {
                in_channels: 3,
                out_channels: 5,
                kernel: 3,
                stride: 3,
                groups: 1,
                padding: 0,
            },
        ] {
            let x = Tensor::<f64>::random_uniform(Shape::new(2, spec.in_channels, 9, 6), -1.0, 1.0, &mut rng);
            let w = Tensor::<f64>::random_uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
            let b = vec![0.25; spec.out_channels];
            let y = conv2d(&x, &w, Some(&b), &spec).unwrap();
            let r = reference(&x, &w, &b, &spec);
            assert_eq!(y.shape(), r.shape());
            for (a, e) in y.data().iter().zip(r.data()) {
                assert!((a - e).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 3, 4, 4));
        let spec = ConvSpec::pointwise(4, 2);
        let w = Tensor::zeros(spec.weight_shape());
        assert!(matches!(conv2d(&x, &w, None, &spec), Err(Error::Shape(_))));
        let bad = ConvSpec {
            in_channels: 3,
            out_channels: 4,
            kernel: 1,
            stride: 1,
            groups: 2,
            padding: 0,
        };
        assert!(matches!(bad.validate(), Err(Error::Divisibility(_))));
        let big = ConvSpec {
            in_channels: 3,
            out_channels: 1,
            kernel: 7,
            stride: 1,
            groups: 1,
            padding: 1,
        };
        let w = Tensor::zeros(big.weight_shape());
        assert!(conv2d(&x, &w, None, &big).is_err());
    }

    #[test]
    fn backward_zero_grad_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ConvSpec {
            in_channels: 2,
            out_channels: 2,
            kernel: 3,
            stride: 1,
            groups: 1,
            padding: 1,
        };
        let x = Tensor::<f64>::random_uniform(Shape::new(1, 2, 4, 4), -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::random_uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
        let g = conv2d_backward(&Tensor::zeros(Shape::new(1, 2, 4, 4)), &x, &w, &spec).unwrap();
        assert_eq!(g.input.max_abs(), 0.0);
        assert_eq!(g.weight.max_abs(), 0.0);
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_scalar_chain_rule() {
        let spec = ConvSpec::pointwise(1, 1);
        let s = Shape::new(1, 1, 1, 1);
        let (w0, x0, g0) = (1.5, -2.0, 0.5);
        let g = conv2d_backward(
            &Tensor::new(s, vec![g0]).unwrap(),
            &Tensor::new(s, vec![x0]).unwrap(),
            &Tensor::new(s, vec![w0]).unwrap(),
            &spec,
        )
        .unwrap();
        assert_eq!(g.weight.data(), &[g0 * x0]);
        assert_eq!(g.input.data(), &[g0 * w0]);
        assert_eq!(g.bias, vec![g0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = ConvSpec {
            in_channels: 4,
            out_channels: 4,
            kernel: 3,
            stride: 1,
            groups: 2,
            padding: 1,
        };
        let x = Tensor::<f64>::random_uniform(Shape::new(2, 4, 6, 6), -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::random_uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
        let go = Tensor::<f64>::random_uniform(Shape::new(2, 4, 6, 6), -1.0, 1.0, &mut rng);
        let grads = conv2d_backward(&go, &x, &w, &spec).unwrap();

        let fx = finite_difference_grad(|t| conv2d(t, &w, None, &spec)?.dot(&go), &x, 1e-5).unwrap();
        let fw = finite_difference_grad(|t| conv2d(&x, t, None, &spec)?.dot(&go), &w, 1e-5).unwrap();
        for (a, b) in [(&grads.input, &fx), (&grads.weight, &fw)] {
            for (p, q) in a.data().iter().zip(b.data()) {
                let rel = (p - q).abs() / p.abs().max(q.abs()).max(1e-8);
                assert!(rel < 1e-6, "{p} vs {q}");
            }
        }
    }

    #[test]
    fn counter_matches_nominal_taps() {
        let spec = ConvSpec::depthwise(4, 3);
        let x = Tensor::<f64>::zeros(Shape::new(2, 4, 5, 7));
        let w = Tensor::zeros(spec.weight_shape());
        let counter = OpCounter::new();
        conv2d_counted(&x, &w, Some(&[0.0; 4]), &spec, Some(&counter)).unwrap();
        assert_eq!(counter.macs(), 2 * 4 * 9 * 35);
        assert_eq!(counter.bias_adds(), 2 * 4 * 35);
    }
}
