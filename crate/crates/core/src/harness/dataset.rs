use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cfa::{add_noise, mosaic, CfaPattern, MosaicImage, NoisePreset};
use crate::error::{Error, Result};
use crate::numerics::{Shape, Tensor};

pub const MIN_PATCH: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub seed: u64,
    pub count: usize,
    pub patch: usize,
    /// Built-in pattern name or path to a pattern file.
    pub pattern: String,
    pub noise: NoisePreset,
    pub append_cfa: bool,
}

impl DatasetSpec {
    pub fn new(seed: u64, count: usize, patch: usize, pattern: &str) -> Self {
        DatasetSpec {
            seed,
            count,
            patch,
            pattern: pattern.into(),
            noise: NoisePreset::None,
            append_cfa: false,
        }
    }

    /// Input channels a network needs for this data.
    pub fn c_in(&self) -> usize {
        if self.append_cfa {
            5
        } else {
            1
        }
    }
}

/// One procedural training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ToySample {
    /// `(1, c_in, p, p)` network input.
    pub input: Tensor<f64>,
    /// `(1, 3, p, p)` ground truth in `[0, 1]`.
    pub target: Tensor<f64>,
    /// The (possibly noisy) mosaic the input was built from.
    pub mosaic: MosaicImage,
}

/// Smooth colour gradient, two to five luminance edges with slight tints, and
/// band-limited sinusoidal texture.
pub fn procedural_rgb(rng: &mut impl Rng, patch: usize) -> Result<Tensor<f64>> {
    let p = patch as f64;
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.75));
    let slope: [(f64, f64); 3] = std::array::from_fn(|_| (rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)));

    struct Edge {
        nx: f64,
        ny: f64,
        offset: f64,
        sharpness: f64,
        step: [f64; 3],
    }
    let edges: Vec<Edge> = (0..rng.random_range(2..=5))
        .map(|_| {
            let theta = rng.random_range(0.0..2.0 * PI);
            let lum = rng.random_range(-0.35..0.35);
            Edge {
                nx: theta.cos(),
                ny: theta.sin(),
                offset: rng.random_range(-0.3..0.3) * p,
                sharpness: rng.random_range(1.0..8.0),
                step: std::array::from_fn(|_| lum * rng.random_range(0.8..1.2)),
            }
        })
        .collect();

    struct Wave {
        fx: f64,
        fy: f64,
        phase: f64,
        amp: [f64; 3],
    }
    let waves: Vec<Wave> = (0..4)
        .map(|_| {
            let freq = rng.random_range(0.1..1.2);
            let theta = rng.random_range(0.0..PI);
            let a = rng.random_range(0.0..0.1);
            Wave {
                fx: freq * theta.cos(),
                fy: freq * theta.sin(),
                phase: rng.random_range(0.0..2.0 * PI),
                amp: std::array::from_fn(|_| a * rng.random_range(0.7..1.3)),
            }
        })
        .collect();

    Tensor::from_fn(Shape::new(1, 3, patch, patch), |_, c, y, x| {
        let (xf, yf) = (x as f64 - p / 2.0, y as f64 - p / 2.0);
        let mut v = base[c] + (slope[c].0 * xf + slope[c].1 * yf) / p;
        for e in &edges {
            let t = (e.nx * xf + e.ny * yf - e.offset) * e.sharpness;
            v += e.step[c] / (1.0 + (-t).exp());
        }
        for w in &waves {
            v += w.amp[c] * (w.fx * x as f64 + w.fy * y as f64 + w.phase).sin();
        }
        v.clamp(0.0, 1.0)
    })
}

/// Deterministic per `(seed, index)`: sample `i` draws from ChaCha8 stream `i`
/// of `seed`, so any prefix of a larger dataset is bit-identical.
pub fn make_toy_dataset(spec: &DatasetSpec) -> Result<Vec<ToySample>> {
    if spec.patch < MIN_PATCH {
        return Err(Error::InvalidConfig(format!(
            "patch must be at least {MIN_PATCH}, got {}",
            spec.patch
        )));
    }
    let pattern = CfaPattern::resolve(&spec.pattern)?;
    let (gain, read_sigma) = spec.noise.params();
    (0..spec.count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let target = procedural_rgb(&mut rng, spec.patch)?;
            let mut m = mosaic(&target, &pattern, (0, 0))?;
            if spec.noise != NoisePreset::None {
                m = add_noise(&m, gain, read_sigma, rng.random())?;
            }
            Ok(ToySample {
                input: m.network_input(spec.append_cfa)?,
                target,
                mosaic: m,
            })
        })
        .collect()
}
