use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{CfaLabel, MosaicImage};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseMeta {
    pub gain: f64,
    pub read_sigma: f64,
    pub seed: u64,
}

/// Poisson-Gaussian strengths labelled by nominal ISO.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoisePreset {
    None,
    Iso400,
    Iso800,
    Iso1600,
    Iso3200,
}

impl NoisePreset {
    /// `(gain, read_sigma)`.
    pub fn params(self) -> (f64, f64) {
        match self {
            NoisePreset::None => (0.0, 0.0),
            NoisePreset::Iso400 => (0.002, 0.002),
            NoisePreset::Iso800 => (0.004, 0.004),
            NoisePreset::Iso1600 => (0.008, 0.008),
            NoisePreset::Iso3200 => (0.016, 0.016),
        }
    }
}

impl FromStr for NoisePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoisePreset::None),
            "iso400" => Ok(NoisePreset::Iso400),
            "iso800" => Ok(NoisePreset::Iso800),
            "iso1600" => Ok(NoisePreset::Iso1600),
            "iso3200" => Ok(NoisePreset::Iso3200),
            other => Err(Error::InvalidConfig(format!(
                "unknown noise preset `{other}` (none, iso400, iso800, iso1600, iso3200)"
            ))),
        }
    }
}

impl fmt::Display for NoisePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NoisePreset::None => "none",
            NoisePreset::Iso400 => "iso400",
            NoisePreset::Iso800 => "iso800",
            NoisePreset::Iso1600 => "iso1600",
            NoisePreset::Iso3200 => "iso3200",
        };
        f.write_str(s)
    }
}

/// `v -> clamp(Poisson(v / gain) * gain + N(0, read_sigma), 0, 1)` on every
/// non-event pixel. Draws follow raster order of a ChaCha8 stream seeded
/// with `seed`.
pub fn add_noise(m: &MosaicImage, gain: f64, read_sigma: f64, seed: u64) -> Result<MosaicImage> {
    if !(gain >= 0.0 && gain.is_finite()) || !(read_sigma >= 0.0 && read_sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "noise parameters must be finite and non-negative, got gain {gain}, read sigma {read_sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let read = Normal::new(0.0, read_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let s = m.shape();
    let mut data = m.raw.data().to_vec();
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                if m.pattern.label_at(y, x, m.phase) == CfaLabel::Event {
                    continue;
                }
                let i = m.raw.offset(n, 0, y, x);
                let v = data[i];
                let shot = if gain > 0.0 && v > 0.0 {
                    let p = Poisson::new(v / gain).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                    p.sample(&mut rng) * gain
                } else {
                    v
                };
                let noisy = if read_sigma > 0.0 {
                    shot + read.sample(&mut rng)
                } else {
                    shot
                };
                data[i] = noisy.clamp(0.0, 1.0);
            }
        }
    }
    Ok(MosaicImage {
        raw: Tensor::new(s, data)?,
        pattern: m.pattern.clone(),
        phase: m.phase,
        noise: Some(NoiseMeta { gain, read_sigma, seed }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfa::{mosaic, CfaPattern};
    use crate::numerics::Shape;

    fn flat(v: f64, pattern: CfaPattern, h: usize, w: usize) -> MosaicImage {
        mosaic(&Tensor::full(Shape::new(1, 3, h, w), v), &pattern, (0, 0)).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let m = flat(0.4, CfaPattern::bayer(), 4, 4);
        assert_eq!(add_noise(&m, 0.0, 0.0, 3).unwrap().raw, m.raw);
    }

    #[test]
    fn seeded_and_event_preserving() {
        let m = flat(0.7, CfaPattern::hybridevs(), 8, 8);
        let a = add_noise(&m, 0.016, 0.016, 11).unwrap();
        assert_eq!(a, add_noise(&m, 0.016, 0.016, 11).unwrap());
        assert_ne!(a.raw, add_noise(&m, 0.016, 0.016, 12).unwrap().raw);
        assert_eq!(a.raw.get(0, 0, 0, 2), 0.0);
        assert_eq!(a.raw.get(0, 0, 5, 7), 0.0);
        assert!(a.raw.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn unbiased_at_mid_gray() {
        let m = flat(0.5, CfaPattern::bayer(), 100, 100);
        let (gain, sigma) = NoisePreset::Iso1600.params();
        let noisy = add_noise(&m, gain, sigma, 5).unwrap();
        let n = noisy.raw.len() as f64;
        let mean = noisy.raw.sum() / n;
        let se = (0.5 * gain + sigma * sigma).sqrt() / n.sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn variance_grows_with_read_sigma() {
        let m = flat(0.5, CfaPattern::bayer(), 40, 40);
        let var = |sigma: f64| {
            let r = add_noise(&m, 0.002, sigma, 9).unwrap().raw;
            let mean = r.sum() / r.len() as f64;
            r.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r.len() as f64
        };
        let vs: Vec<f64> = [0.0, 0.01, 0.02, 0.04].into_iter().map(var).collect();
        assert!(vs.windows(2).all(|w| w[0] < w[1]), "{vs:?}");
    }

    #[test]
    fn presets_parse_and_increase() {
        let names = ["iso400", "iso800", "iso1600", "iso3200"];
        let gains: Vec<f64> = names
            .iter()
            .map(|s| s.parse::<NoisePreset>().unwrap().params().0)
            .collect();
        assert!(gains.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(NoisePreset::Iso800.to_string(), "iso800");
        assert!("iso100".parse::<NoisePreset>().is_err());
        assert!(add_noise(&flat(0.5, CfaPattern::bayer(), 2, 2), -1.0, 0.0, 0).is_err());
    }
}
