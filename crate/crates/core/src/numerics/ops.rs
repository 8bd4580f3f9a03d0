use super::tensor::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Default LayerNorm epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Depth-to-space: `out[n, c, h*r + i, w*r + j] = in[n, c*r^2 + i*r + j, h, w]`.
pub fn pixel_shuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if r == 0 || !s.c.is_multiple_of(r * r) {
        return Err(Error::Divisibility(format!(
            "pixel_shuffle: {} channels not divisible by r^2 = {}",
            s.c,
            r * r
        )));
    }
    let out_shape = Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r);
    let mut out = vec![T::zero(); s.numel()];
    let src = input.data();
    for n in 0..s.n {
        for c in 0..out_shape.c {
            for i in 0..r {
                for j in 0..r {
                    let ci = c * r * r + i * r + j;
                    for y in 0..s.h {
                        let srow = ((n * s.c + ci) * s.h + y) * s.w;
                        let drow = ((n * out_shape.c + c) * out_shape.h + y * r + i) * out_shape.w + j;
                        for x in 0..s.w {
                            out[drow + x * r] = src[srow + x];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_raw(out_shape, out))
}

/// Space-to-depth; exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(Error::Divisibility(format!(
            "pixel_unshuffle: {}x{} not divisible by {r}",
            s.h, s.w
        )));
    }
    let out_shape = Shape::new(s.n, s.c * r * r, s.h / r, s.w / r);
    let mut out = vec![T::zero(); s.numel()];
    let src = input.data();
    for n in 0..s.n {
        for c in 0..s.c {
            for i in 0..r {
                for j in 0..r {
                    let co = c * r * r + i * r + j;
                    for y in 0..out_shape.h {
                        let drow = ((n * out_shape.c + co) * out_shape.h + y) * out_shape.w;
                        let srow = ((n * s.c + c) * s.h + y * r + i) * s.w + j;
                        for x in 0..out_shape.w {
                            out[drow + x] = src[srow + x * r];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_raw(out_shape, out))
}

fn check_affine<T: Scalar>(input: &Tensor<T>, gamma: &[T], beta: &[T]) -> Result<()> {
    let c = input.shape().c;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(format!(
            "layer_norm: gamma/beta lengths {}/{} vs {c} channels",
            gamma.len(),
            beta.len()
        )));
    }
    Ok(())
}

/// Per-pixel normalization across channels followed by a per-channel affine map.
pub fn layer_norm_channels<T: Scalar>(input: &Tensor<T>, gamma: &[T], beta: &[T], eps: T) -> Result<Tensor<T>> {
    check_affine(input, gamma, beta)?;
    let s = input.shape();
    let (p, c) = (s.plane(), s.c);
    let cf = T::of(c as f64);
    let src = input.data();
    let mut out = vec![T::zero(); s.numel()];
    let mut mean = vec![T::zero(); p];
    let mut var = vec![T::zero(); p];
    for n in 0..s.n {
        let base = n * c * p;
        mean.fill(T::zero());
        var.fill(T::zero());
        for ch in 0..c {
            for (m, &v) in mean.iter_mut().zip(&src[base + ch * p..][..p]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= cf);
        for ch in 0..c {
            for ((q, &m), &v) in var.iter_mut().zip(&mean).zip(&src[base + ch * p..][..p]) {
                *q += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|q| *q = (*q / cf + eps).sqrt().recip());
        for ch in 0..c {
            let (g, b) = (gamma[ch], beta[ch]);
            let dst = &mut out[base + ch * p..][..p];
            for (i, o) in dst.iter_mut().enumerate() {
                *o = (src[base + ch * p + i] - mean[i]) * var[i] * g + b;
            }
        }
    }
    Tensor::from_raw(s, out).finite("layer_norm_channels")
}

#[derive(Clone, Debug)]
pub struct LayerNormGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub fn layer_norm_channels_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    gamma: &[T],
    eps: T,
) -> Result<LayerNormGrads<T>> {
    input.same_shape(grad_out, "layer_norm_channels_backward")?;
    let s = input.shape();
    if gamma.len() != s.c {
        return Err(Error::shape("layer_norm_channels_backward: gamma length"));
    }
    let (p, c) = (s.plane(), s.c);
    let cf = T::of(c as f64);
    let (src, go) = (input.data(), grad_out.data());
    let mut gin = vec![T::zero(); s.numel()];
    let mut gg = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    // per-pixel statistics accumulated one channel plane at a time
    let mut mean = vec![T::zero(); p];
    let mut inv = vec![T::zero(); p];
    let mut m1 = vec![T::zero(); p];
    let mut m2 = vec![T::zero(); p];
    for n in 0..s.n {
        let ranges: Vec<_> = (0..c).map(|ch| (n * c + ch) * p..(n * c + ch + 1) * p).collect();
        mean.fill(T::zero());
        inv.fill(T::zero());
        m1.fill(T::zero());
        m2.fill(T::zero());
        for r in &ranges {
            for (m, &x) in mean.iter_mut().zip(&src[r.clone()]) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= cf);
        for r in &ranges {
            for ((v, &m), &x) in inv.iter_mut().zip(&mean).zip(&src[r.clone()]) {
                *v += (x - m).powi(2);
            }
        }
        inv.iter_mut().for_each(|v| *v = (*v / cf + eps).sqrt().recip());
        for (ch, r) in ranges.iter().enumerate() {
            let (x, dy) = (&src[r.clone()], &go[r.clone()]);
            for i in 0..p {
                let xhat = (x[i] - mean[i]) * inv[i];
                let dxhat = dy[i] * gamma[ch];
                gg[ch] += dy[i] * xhat;
                gbeta[ch] += dy[i];
                m1[i] += dxhat;
                m2[i] += dxhat * xhat;
            }
        }
        for (ch, r) in ranges.iter().enumerate() {
            let (x, dy) = (&src[r.clone()], &go[r.clone()]);
            for (i, g) in gin[r.clone()].iter_mut().enumerate() {
                let xhat = (x[i] - mean[i]) * inv[i];
                *g = inv[i] * (dy[i] * gamma[ch] - m1[i] / cf - xhat * (m2[i] / cf));
            }
        }
    }
    if !gg.iter().chain(&gbeta).all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            op: "layer_norm_channels_backward",
        });
    }
    Ok(LayerNormGrads {
        input: Tensor::from_raw(s, gin).finite("layer_norm_channels_backward")?,
        gamma: gg,
        beta: gbeta,
    })
}

/// Split channels into halves `(a, b)` and return `a * b`.
pub fn simple_gate<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if !s.c.is_multiple_of(2) {
        return Err(Error::Divisibility(format!("simple_gate: odd channel count {}", s.c)));
    }
    let half = s.c / 2;
    let per = half * s.plane();
    let src = input.data();
    let mut out = Vec::with_capacity(s.numel() / 2);
    for n in 0..s.n {
        let base = n * s.c * s.plane();
        let (a, b) = src[base..base + 2 * per].split_at(per);
        out.extend(a.iter().zip(b).map(|(&x, &y)| x * y));
    }
    Tensor::from_raw(Shape { c: half, ..s }, out).finite("simple_gate")
}

pub fn simple_gate_backward<T: Scalar>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if !s.c.is_multiple_of(2) || grad_out.shape() != (Shape { c: s.c / 2, ..s }) {
        return Err(Error::shape(format!(
            "simple_gate_backward: grad {} for input {}",
            grad_out.shape(),
            s
        )));
    }
    let per = s.c / 2 * s.plane();
    let (src, go) = (input.data(), grad_out.data());
    let mut gin = vec![T::zero(); s.numel()];
    for n in 0..s.n {
        let base = n * 2 * per;
        let g = &go[n * per..][..per];
        for i in 0..per {
            gin[base + i] = g[i] * src[base + per + i];
            gin[base + per + i] = g[i] * src[base + i];
        }
    }
    Tensor::from_raw(s, gin).finite("simple_gate_backward")
}

/// Spatial mean per (batch, channel), shape `(n, c, 1, 1)`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    let inv = T::of(1.0 / s.plane() as f64);
    let data = (0..s.n * s.c)
        .map(|i| {
            input.data()[i * s.plane()..][..s.plane()]
                .iter()
                .fold(T::zero(), |a, &v| a + v)
                * inv
        })
        .collect();
    Tensor::from_raw(Shape::new(s.n, s.c, 1, 1), data).finite("global_avg_pool")
}

pub fn global_avg_pool_backward<T: Scalar>(grad_out: &Tensor<T>, input_shape: Shape) -> Result<Tensor<T>> {
    if grad_out.shape() != Shape::new(input_shape.n, input_shape.c, 1, 1) {
        return Err(Error::shape("global_avg_pool_backward: grad shape"));
    }
    let inv = T::of(1.0 / input_shape.plane() as f64);
    let mut out = Vec::with_capacity(input_shape.numel());
    for &g in grad_out.data() {
        out.extend(std::iter::repeat_n(g * inv, input_shape.plane()));
    }
    Ok(Tensor::from_raw(input_shape, out))
}

/// Multiply every plane `(n, c)` of `input` by `scale[n, c, 0, 0]`.
pub fn channel_scale<T: Scalar>(input: &Tensor<T>, scale: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if scale.shape() != Shape::new(s.n, s.c, 1, 1) {
        return Err(Error::shape(format!(
            "channel_scale: scale {} for {}",
            scale.shape(),
            s
        )));
    }
    let p = s.plane();
    let data = input
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v * scale.data()[i / p])
        .collect();
    Tensor::from_raw(s, data).finite("channel_scale")
}

/// Returns `(grad_input, grad_scale)`.
pub fn channel_scale_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    scale: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    input.same_shape(grad_out, "channel_scale_backward")?;
    let gin = channel_scale(grad_out, scale)?;
    let p = input.shape().plane();
    let gs = (0..scale.len())
        .map(|i| {
            let a = &grad_out.data()[i * p..][..p];
            let b = &input.data()[i * p..][..p];
            a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
        })
        .collect();
    Ok((
        gin,
        Tensor::from_raw(scale.shape(), gs).finite("channel_scale_backward")?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::finite_difference_grad;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) {
        for (p, q) in a.data().iter().zip(b.data()) {
            let rel = (p - q).abs() / p.abs().max(q.abs()).max(1e-8);
            assert!(rel < tol, "{p} vs {q}");
        }
    }

    #[test]
    fn shuffle_hand_enumerated() {
        let x = Tensor::new(Shape::new(1, 4, 2, 2), (0..16).map(f64::from).collect()).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 4, 4));
        let expected = [0., 4., 1., 5., 8., 12., 9., 13., 2., 6., 3., 7., 10., 14., 11., 15.];
        assert_eq!(y.data(), &expected);
    }

    #[test]
    fn shuffle_ratio_one_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f64>::random_uniform(Shape::new(2, 3, 4, 5), 0.0, 1.0, &mut rng);
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
        assert_eq!(pixel_unshuffle(&x, 1).unwrap(), x);
    }

    #[test]
    fn unshuffle_separates_bayer_phases() {
        // RGGB mosaic with values encoding (phase, block): 10 * phase + block
        let x = Tensor::<f64>::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, x| {
            ((y % 2) * 2 + x % 2) as f64 * 10.0 + ((y / 2) * 2 + x / 2) as f64
        })
        .unwrap();
        let p = pixel_unshuffle(&x, 2).unwrap();
        assert_eq!(p.shape(), Shape::new(1, 4, 2, 2));
        for phase in 0..4 {
            for by in 0..2 {
                for bx in 0..2 {
                    let direct = x.get(0, 0, by * 2 + phase / 2, bx * 2 + phase % 2);
                    assert_eq!(p.get(0, phase, by, bx), direct);
                    assert_eq!(direct, phase as f64 * 10.0 + (by * 2 + bx) as f64);
                }
            }
        }
    }

    #[test]
    fn divisibility_errors() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 3, 4, 4));
        assert!(matches!(pixel_shuffle(&x, 2), Err(Error::Divisibility(_))));
        let y = Tensor::<f64>::zeros(Shape::new(1, 1, 3, 4));
        assert!(matches!(pixel_unshuffle(&y, 2), Err(Error::Divisibility(_))));
        assert!(matches!(simple_gate(&x), Err(Error::Divisibility(_))));
    }

    proptest! {
        #[test]
        fn shuffle_roundtrip(n in 1usize..3, c in 1usize..3, h in 1usize..4, w in 1usize..4, r in 1usize..4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::<f64>::random_uniform(Shape::new(n, c * r * r, h, w), -1.0, 1.0, &mut rng);
            let up = pixel_shuffle(&x, r).unwrap();
            prop_assert_eq!(&pixel_unshuffle(&up, r).unwrap(), &x);
            let mut a = x.data().to_vec();
            let mut b = up.data().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
            let big = Tensor::<f64>::random_uniform(Shape::new(n, c, h * r, w * r), -1.0, 1.0, &mut rng);
            prop_assert_eq!(&pixel_shuffle(&pixel_unshuffle(&big, r).unwrap(), r).unwrap(), &big);
        }
    }

    #[test]
    fn layer_norm_constant_input_is_zero() {
        let x = Tensor::<f64>::full(Shape::new(1, 5, 3, 3), 2.5);
        let y = layer_norm_channels(&x, &[1.0; 5], &[0.0; 5], LAYER_NORM_EPS).unwrap();
        assert_eq!(y.max_abs(), 0.0);
    }

    #[test]
    fn layer_norm_two_channels() {
        let (a, b) = (0.9, 0.2);
        let eps = LAYER_NORM_EPS;
        let x = Tensor::new(Shape::new(1, 2, 1, 1), vec![a, b]).unwrap();
        let y = layer_norm_channels(&x, &[1.0; 2], &[0.0; 2], eps).unwrap();
        let half = (a - b) / 2.0;
        let s = half.abs() / (half * half + eps).sqrt();
        assert!((y.data()[0] - s).abs() < 1e-15);
        assert!((y.data()[1] + s).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f64>::random_uniform(Shape::new(2, 6, 3, 4), -3.0, 3.0, &mut rng);
        let y = layer_norm_channels(&x, &[1.0; 6], &[0.0; 6], LAYER_NORM_EPS).unwrap();
        for n in 0..2 {
            for py in 0..3 {
                for px in 0..4 {
                    let v: Vec<f64> = (0..6).map(|c| y.get(n, c, py, px)).collect();
                    let mean = v.iter().sum::<f64>() / 6.0;
                    let var = v.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 6.0;
                    let xv: Vec<f64> = (0..6).map(|c| x.get(n, c, py, px)).collect();
                    let xm = xv.iter().sum::<f64>() / 6.0;
                    let xvar = xv.iter().map(|t| (t - xm).powi(2)).sum::<f64>() / 6.0;
                    assert!(mean.abs() < 1e-10);
                    assert!((var - xvar / (xvar + LAYER_NORM_EPS)).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn layer_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = Shape::new(2, 4, 3, 3);
        let x = Tensor::<f64>::random_uniform(s, -1.0, 1.0, &mut rng);
        let go = Tensor::<f64>::random_uniform(s, -1.0, 1.0, &mut rng);
        let gamma = vec![0.5, 1.5, -0.7, 1.1];
        let beta = vec![0.1, -0.2, 0.3, 0.0];
        let g = layer_norm_channels_backward(&go, &x, &gamma, LAYER_NORM_EPS).unwrap();
        let fx = finite_difference_grad(
            |t| layer_norm_channels(t, &gamma, &beta, LAYER_NORM_EPS)?.dot(&go),
            &x,
            1e-5,
        )
        .unwrap();
        rel_close(&g.input, &fx, 1e-6);
        let gt = Tensor::new(Shape::new(1, 4, 1, 1), gamma.clone()).unwrap();
        let fg = finite_difference_grad(
            |t| layer_norm_channels(&x, t.data(), &beta, LAYER_NORM_EPS)?.dot(&go),
            &gt,
            1e-5,
        )
        .unwrap();
        rel_close(&Tensor::new(gt.shape(), g.gamma).unwrap(), &fg, 1e-6);
    }

    #[test]
    fn simple_gate_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::<f64>::random_uniform(Shape::new(2, 3, 4, 4), -1.0, 1.0, &mut rng);
        let ones = Tensor::full(x.shape(), 1.0);
        let zeros = Tensor::zeros(x.shape());
        let y = simple_gate(&Tensor::concat_channels(&[&x, &ones]).unwrap()).unwrap();
        assert_eq!(y, x);
        assert_eq!(y.shape().c, 3);
        let z = simple_gate(&Tensor::concat_channels(&[&x, &zeros]).unwrap()).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn simple_gate_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f64>::random_uniform(Shape::new(2, 6, 3, 3), -1.0, 1.0, &mut rng);
        let go = Tensor::<f64>::random_uniform(Shape::new(2, 3, 3, 3), -1.0, 1.0, &mut rng);
        let g = simple_gate_backward(&go, &x).unwrap();
        let f = finite_difference_grad(|t| simple_gate(t)?.dot(&go), &x, 1e-5).unwrap();
        rel_close(&g, &f, 1e-6);
    }

    #[test]
    fn attention_primitives_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Tensor::<f64>::random_uniform(Shape::new(2, 3, 4, 4), -1.0, 1.0, &mut rng);
        let sc = Tensor::<f64>::random_uniform(Shape::new(2, 3, 1, 1), -1.0, 1.0, &mut rng);
        let go = Tensor::<f64>::random_uniform(x.shape(), -1.0, 1.0, &mut rng);
        let (gx, gs) = channel_scale_backward(&go, &x, &sc).unwrap();
        rel_close(
            &gx,
            &finite_difference_grad(|t| channel_scale(t, &sc)?.dot(&go), &x, 1e-5).unwrap(),
            1e-6,
        );
        rel_close(
            &gs,
            &finite_difference_grad(|t| channel_scale(&x, t)?.dot(&go), &sc, 1e-5).unwrap(),
            1e-6,
        );
        let gp = Tensor::<f64>::random_uniform(Shape::new(2, 3, 1, 1), -1.0, 1.0, &mut rng);
        let g = global_avg_pool_backward(&gp, x.shape()).unwrap();
        rel_close(
            &g,
            &finite_difference_grad(|t| global_avg_pool(t)?.dot(&gp), &x, 1e-5).unwrap(),
            1e-6,
        );
    }
}
