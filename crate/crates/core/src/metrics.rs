//! Image quality metrics and the PSNR training loss.
//!
//! Float pipelines use a peak of 1.0. PSNR is computed over every pixel with
//! no border crop. SSIM uses an 11x11 Gaussian window (sigma 1.5) over valid
//! positions only, `C1 = (0.01 peak)^2`, `C2 = (0.03 peak)^2`, averaged per
//! channel and then over channels and batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// PSNR reported when the two images are identical. Equal to the PSNR of a
/// unit-peak pair whose MSE sits at the loss floor, so a perfect prediction
/// scores exactly `-PSNR_CAP_DB` under [`psnr_loss`].
pub const PSNR_CAP_DB: f64 = 120.0;

/// Additive MSE floor inside [`psnr_loss`].
pub const LOSS_MSE_FLOOR: f64 = 1e-12;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
    pub peak: f64,
}

fn check_pair<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{op}: {} vs {}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    check_pair(a, b, "mse")?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum();
    Ok(s / a.len() as f64)
}

/// PSNR for a given MSE, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
}

pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if peak.is_nan() || peak <= 0.0 {
        return Err(Error::InvalidConfig(format!("peak must be positive, got {peak}")));
    }
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

/// Mean of per-image PSNRs over the batch axis.
pub fn mean_psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    check_pair(a, b, "mean_psnr")?;
    let n = a.shape().n;
    let mut total = 0.0;
    for i in 0..n {
        total += psnr(&a.batch_item(i)?, &b.batch_item(i)?, peak)?;
    }
    Ok(total / n as f64)
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut horiz = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            horiz[y * ow + x] = k.iter().enumerate().map(|(i, &kv)| kv * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, &kv)| kv * horiz[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, peak: f64, k: &[f64]) -> f64 {
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<f64>>();
    let mu_a = filter_valid(a, h, w, k);
    let mu_b = filter_valid(b, h, w, k);
    let aa = filter_valid(&prod(a, a), h, w, k);
    let bb = filter_valid(&prod(b, b), h, w, k);
    let ab = filter_valid(&prod(a, b), h, w, k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        // symmetric in (a, b) term by term
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    total / mu_a.len() as f64
}

pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    check_pair(a, b, "ssim")?;
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            s.h, s.w
        )));
    }
    if a.data() == b.data() {
        return Ok(1.0);
    }
    let k = gaussian_window();
    let mut total = 0.0;
    for n in 0..s.n {
        for c in 0..s.c {
            let pa: Vec<f64> = a.plane(n, c).iter().map(|v| v.as_f64()).collect();
            let pb: Vec<f64> = b.plane(n, c).iter().map(|v| v.as_f64()).collect();
            total += ssim_plane(&pa, &pb, s.h, s.w, peak, &k);
        }
    }
    Ok(total / (s.n * s.c) as f64)
}

pub fn report<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<MetricReport> {
    let mse = mse(a, b)?;
    Ok(MetricReport {
        psnr: psnr_from_mse(mse, peak),
        ssim: ssim(a, b, peak)?,
        mse,
        peak,
    })
}

/// Negative PSNR (peak 1), averaged over batch items:
/// `mean_i 10 log10(mse_i + 1e-12)`.
pub fn psnr_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    Ok(psnr_loss_with_grad(pred, target)?.0)
}

/// Loss and its gradient with respect to `pred`.
pub fn psnr_loss_with_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    check_pair(pred, target, "psnr_loss")?;
    let s = pred.shape();
    let per = s.c * s.plane();
    let (p, t) = (pred.data(), target.data());
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..s.n {
        let range = i * per..(i + 1) * per;
        let m = p[range.clone()]
            .iter()
            .zip(&t[range.clone()])
            .map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2))
            .sum::<f64>()
            / per as f64;
        let floored = m + LOSS_MSE_FLOOR;
        loss += 10.0 * floored.log10();
        // d/dpred of 10 log10(m) / n = 10 / (n ln10 m) * 2 (x - y) / per
        let coef = 20.0 / (std::f64::consts::LN_10 * floored * per as f64 * s.n as f64);
        grad.extend(
            p[range.clone()]
                .iter()
                .zip(&t[range])
                .map(|(&x, &y)| T::of(coef * (x.as_f64() - y.as_f64()))),
        );
    }
    let loss = loss / s.n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite { op: "psnr_loss" });
    }
    Ok((loss, Tensor::new(s, grad)?))
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss_with_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    let m = mse(pred, target)?;
    let coef = T::of(2.0 / pred.len() as f64);
    let grad = pred.zip_map(target, |x, y| coef * (x - y))?;
    Ok((m, grad))
}

/// Round to `levels - 1` uniform steps in `[0, 1]`, e.g. 255 for 8-bit.
pub fn quantize<T: Scalar>(t: &Tensor<T>, levels: u32) -> Result<Tensor<T>> {
    let q = T::of((levels - 1) as f64);
    t.map(|v| (v.max(T::zero()).min(T::one()) * q).round() / q)
}

/// Shift both images by `(dy, dx)` with wrap-around; used to check metric
/// translation invariance.
pub fn roll<T: Scalar>(t: &Tensor<T>, dy: usize, dx: usize) -> Result<Tensor<T>> {
    let s = t.shape();
    Tensor::from_fn(s, |n, c, y, x| {
        t.get(n, c, (y + s.h - dy % s.h) % s.h, (x + s.w - dx % s.w) % s.w)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_grad, Shape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_img(seed: u64, shape: Shape) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::random_uniform(shape, 0.0, 1.0, &mut rng)
    }

    #[test]
    fn psnr_fixtures() {
        let a = rand_img(1, Shape::new(1, 3, 8, 8));
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        // mse = peak^2 when every pixel differs by peak
        let z = Tensor::zeros(a.shape());
        let o = Tensor::full(a.shape(), 1.0);
        assert_eq!(psnr(&z, &o, 1.0).unwrap(), 0.0);
        let off = Tensor::full(a.shape(), 0.01);
        assert!((psnr(&z, &off, 1.0).unwrap() - 40.0).abs() < 1e-9);
        assert_eq!(psnr_from_mse(1e-4, 1.0), 40.0);
        assert!(psnr(&z, &Tensor::zeros(Shape::new(1, 3, 8, 7)), 1.0).is_err());
    }

    #[test]
    fn psnr_strictly_decreasing_in_mse() {
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let m = 1e-10 * 1.7f64.powi(k);
            let p = psnr_from_mse(m, 1.0);
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = rand_img(2, Shape::new(2, 3, 16, 20));
        let b = rand_img(3, a.shape());
        assert_eq!(ssim(&a, &a, 1.0).unwrap(), 1.0);
        let (ab, ba) = (ssim(&a, &b, 1.0).unwrap(), ssim(&b, &a, 1.0).unwrap());
        assert!((ab - ba).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&ab));
        assert!(ssim(
            &Tensor::<f64>::zeros(Shape::new(1, 1, 10, 12)),
            &Tensor::zeros(Shape::new(1, 1, 10, 12)),
            1.0
        )
        .is_err());
    }

    #[test]
    fn ssim_of_inverted_checkerboard() {
        let a = Tensor::<f64>::from_fn(Shape::new(1, 1, 24, 24), |_, _, y, x| {
            if (y / 3 + x / 3) % 2 == 0 {
                0.95
            } else {
                0.05
            }
        })
        .unwrap();
        let inv = a.map(|v| 1.0 - v).unwrap();
        let s = ssim(&a, &inv, 1.0).unwrap();
        // reference value from scikit-image structural_similarity
        assert!(s < 0.5);
        assert!((s - (-0.987_730_042_168_896_4)).abs() < 1e-9, "{s}");
    }

    #[test]
    fn metrics_translation_invariant() {
        let a = rand_img(4, Shape::new(1, 2, 16, 16));
        let b = rand_img(5, a.shape());
        let (ra, rb) = (roll(&a, 3, 5).unwrap(), roll(&b, 3, 5).unwrap());
        assert!((psnr(&a, &b, 1.0).unwrap() - psnr(&ra, &rb, 1.0).unwrap()).abs() < 1e-12);
        assert_eq!(ssim(&ra, &ra, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn psnr_loss_fixtures() {
        let a = rand_img(6, Shape::new(2, 3, 8, 8));
        assert!((psnr_loss(&a, &a).unwrap() + PSNR_CAP_DB).abs() < 1e-9);
        let b = a.map(|v| v + 0.1).unwrap();
        let c = a.map(|v| v + 0.05).unwrap();
        assert!(psnr_loss(&c, &a).unwrap() < psnr_loss(&b, &a).unwrap());
    }

    #[test]
    fn psnr_loss_gradient() {
        let p = rand_img(7, Shape::new(1, 3, 8, 8));
        let t = rand_img(8, p.shape());
        let (_, g) = psnr_loss_with_grad(&p, &t).unwrap();
        let f = finite_difference_grad(|x| psnr_loss(x, &t), &p, 1e-6).unwrap();
        assert!(crate::numerics::max_relative_error(g.data(), f.data()) < 1e-6);
        let (_, gm) = mse_loss_with_grad(&p, &t).unwrap();
        let fm = finite_difference_grad(|x| mse(x, &t), &p, 1e-6).unwrap();
        assert!(crate::numerics::max_relative_error(gm.data(), fm.data()) < 1e-6);
    }

    #[test]
    fn quantization_policy_bounds() {
        // smooth fixture with a ~30 dB prediction
        let gt = Tensor::<f64>::from_fn(Shape::new(1, 3, 32, 32), |_, c, y, x| {
            0.5 + 0.3 * ((x as f64 * 0.2 + c as f64).sin() * (y as f64 * 0.15).cos())
        })
        .unwrap();
        let pred = gt
            .zip_map(&rand_img(9, gt.shape()), |g, r| (g + 0.1 * (r - 0.5)).clamp(0.0, 1.0))
            .unwrap();
        let (qg, qp) = (quantize(&gt, 256).unwrap(), quantize(&pred, 256).unwrap());
        let dp = (psnr(&pred, &gt, 1.0).unwrap() - psnr(&qp, &qg, 1.0).unwrap()).abs();
        let ds = (ssim(&pred, &gt, 1.0).unwrap() - ssim(&qp, &qg, 1.0).unwrap()).abs();
        assert!(dp <= 0.1, "{dp}");
        assert!(ds <= 0.005, "{ds}");
    }
}
