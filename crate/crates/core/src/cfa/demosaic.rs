use super::{CfaLabel, MosaicImage};
use crate::error::{Error, Result};
use crate::numerics::{Shape, Tensor};

/// Tent weights `1 - |t| / r` for `|t| < r`.
fn tent(radius: usize) -> Vec<f64> {
    let r = radius as f64;
    (0..2 * radius - 1)
        .map(|i| 1.0 - (i as f64 - (r - 1.0)).abs() / r)
        .collect()
}

/// Zero-extended separable correlation with a symmetric kernel.
fn separable(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let half = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - half;
                if (0..w as isize).contains(&xx) {
                    acc += kv * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - half;
                if (0..h as isize).contains(&yy) {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Normalized-convolution bilinear demosaic.
///
/// Each channel is interpolated from its own samples with a separable tent
/// of radius `max(2, ceil(period / 2))`. Pixels with no sample in that
/// support (possible near borders of the expanded patterns) retry with the
/// radius doubled. Sampled positions are returned unchanged; event pixels
/// count as missing for every channel.
pub fn bilinear_demosaic(m: &MosaicImage) -> Result<Tensor<f64>> {
    let s = m.shape();
    let (ph, pw) = m.pattern.period();
    let base = ph.max(pw).div_ceil(2).max(2);
    let mut out = Vec::with_capacity(s.n * 3 * s.h * s.w);
    for c in 0..3 {
        if m.pattern.count(CfaLabel::ALL[c]) == 0 {
            return Err(Error::Pattern(format!(
                "channel {} is never sampled by `{}`",
                CfaLabel::ALL[c],
                m.pattern.name()
            )));
        }
    }
    for n in 0..s.n {
        let raw = m.raw.plane(n, 0);
        for c in 0..3 {
            let mask: Vec<f64> = (0..s.h * s.w)
                .map(|i| {
                    if m.pattern.label_at(i / s.w, i % s.w, m.phase).channel() == Some(c) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            let masked: Vec<f64> = raw.iter().zip(&mask).map(|(v, m)| v * m).collect();
            let mut plane: Vec<Option<f64>> = (0..s.h * s.w).map(|i| (mask[i] == 1.0).then_some(raw[i])).collect();
            let mut radius = base;
            while plane.iter().any(Option::is_none) {
                if radius > 2 * s.h.max(s.w) {
                    return Err(Error::Pattern(format!(
                        "channel {} has no samples in this image",
                        CfaLabel::ALL[c]
                    )));
                }
                let k = tent(radius);
                let num = separable(&masked, s.h, s.w, &k);
                let den = separable(&mask, s.h, s.w, &k);
                for (i, v) in plane.iter_mut().enumerate() {
                    if v.is_none() && den[i] > 0.0 {
                        *v = Some(num[i] / den[i]);
                    }
                }
                radius *= 2;
            }
            out.extend(plane.into_iter().map(|v| v.expect("filled")));
        }
    }
    Tensor::new(Shape::new(s.n, 3, s.h, s.w), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfa::{mosaic, CfaPattern};
    use crate::metrics::psnr;

    /// Smooth colour bars with a soft diagonal edge and fine sinusoids.
    pub(crate) fn test_card(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
            let (fy, fx) = (y as f64 / h as f64, x as f64 / w as f64);
            let bar = [0.8, 0.5, 0.2][c] * (1.0 - fx) + [0.1, 0.4, 0.9][c] * fx;
            let edge = 1.0 / (1.0 + (-(fx - fy) * 30.0).exp());
            let ripple = 0.1 * ((x as f64 * 0.7 + c as f64).sin() * (y as f64 * 0.4).cos());
            (0.6 * bar + 0.3 * edge + ripple).clamp(0.0, 1.0)
        })
        .unwrap()
    }

    #[test]
    fn tent_weights() {
        assert_eq!(tent(2), vec![0.5, 1.0, 0.5]);
        let t3 = tent(3);
        assert_eq!(t3.len(), 5);
        assert!((t3[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_is_exact_for_every_builtin() {
        for name in crate::cfa::BUILTIN_NAMES {
            let rgb = Tensor::from_fn(Shape::new(1, 3, 12, 12), |_, c, _, _| [0.2, 0.5, 0.7][c]).unwrap();
            let m = mosaic(&rgb, &CfaPattern::builtin(name).unwrap(), (0, 0)).unwrap();
            let out = bilinear_demosaic(&m).unwrap();
            for (a, b) in out.data().iter().zip(rgb.data()) {
                assert!((a - b).abs() < 1e-12, "{name}");
            }
        }
    }

    #[test]
    fn ramp_exact_away_from_border() {
        let rgb = Tensor::from_fn(Shape::new(1, 3, 12, 14), |_, c, _, x| 0.05 * x as f64 + 0.01 * c as f64).unwrap();
        for phase in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let m = mosaic(&rgb, &CfaPattern::bayer(), phase).unwrap();
            let out = bilinear_demosaic(&m).unwrap();
            for c in 0..3 {
                for y in 2..10 {
                    for x in 2..12 {
                        assert!((out.get(0, c, y, x) - rgb.get(0, c, y, x)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn samples_are_kept() {
        let rgb = test_card(16, 16);
        for name in crate::cfa::BUILTIN_NAMES {
            let m = mosaic(&rgb, &CfaPattern::builtin(name).unwrap(), (1, 0)).unwrap();
            let out = bilinear_demosaic(&m).unwrap();
            for y in 0..16 {
                for x in 0..16 {
                    if let Some(c) = m.pattern.label_at(y, x, m.phase).channel() {
                        assert_eq!(out.get(0, c, y, x), m.raw.get(0, 0, y, x));
                    }
                }
            }
        }
    }

    #[test]
    fn test_card_regression() {
        let rgb = test_card(48, 48);
        let got: Vec<f64> = ["bayer", "quad", "nona", "hybridevs"]
            .iter()
            .map(|n| {
                let m = mosaic(&rgb, &CfaPattern::builtin(n).unwrap(), (0, 0)).unwrap();
                psnr(&bilinear_demosaic(&m).unwrap(), &rgb, 1.0).unwrap()
            })
            .collect();
        // independent scipy normalized-convolution evaluation
        let frozen = [
            40.483_191_805_457_835,
            30.643_073_394_896_074,
            28.647_577_228_198_458,
            30.540_363_834_429_783,
        ];
        for (g, f) in got.iter().zip(frozen) {
            assert!((g - f).abs() < 1e-9, "{got:?}");
        }
    }

    #[test]
    fn unsampled_channel_is_an_error() {
        use CfaLabel::*;
        let p = CfaPattern::new("rg", vec![vec![R, G]], true).unwrap();
        let m = mosaic(&Tensor::full(Shape::new(1, 3, 2, 4), 0.5), &p, (0, 0)).unwrap();
        assert!(matches!(bilinear_demosaic(&m), Err(Error::Pattern(_))));
    }
}
