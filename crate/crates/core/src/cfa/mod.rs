//! Colour filter array simulation.
//!
//! A [`CfaPattern`] is a periodic tile of [`CfaLabel`]s. Pixel `(y, x)` of a
//! mosaic with phase `(pr, pc)` carries the label of tile cell
//! `((y + pr) mod ph, (x + pc) mod pw)`.

mod demosaic;
pub mod io;
mod noise;
mod pad;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Shape, Tensor};

pub use demosaic::bilinear_demosaic;
pub use noise::{add_noise, NoiseMeta, NoisePreset};
pub use pad::{pad_to_multiple, CropRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CfaLabel {
    R,
    G,
    B,
    #[serde(alias = "E")]
    Event,
}

impl CfaLabel {
    pub const ALL: [CfaLabel; 4] = [CfaLabel::R, CfaLabel::G, CfaLabel::B, CfaLabel::Event];

    /// RGB channel sampled by this cell, `None` for event pixels.
    pub fn channel(self) -> Option<usize> {
        match self {
            CfaLabel::R => Some(0),
            CfaLabel::G => Some(1),
            CfaLabel::B => Some(2),
            CfaLabel::Event => None,
        }
    }

    /// Index of this label's one-hot plane in [`cfa_channels`].
    pub fn plane(self) -> usize {
        self.channel().unwrap_or(3)
    }
}

/// Tile origin offset `(row, col)`.
pub type Phase = (usize, usize);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PatternFile", into = "PatternFile")]
pub struct CfaPattern {
    name: String,
    cells: Vec<Vec<CfaLabel>>,
    degenerate: bool,
}

/// On-disk JSON form of a pattern.
#[derive(Serialize, Deserialize)]
struct PatternFile {
    name: String,
    period: [usize; 2],
    rows: Vec<Vec<CfaLabel>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    degenerate: bool,
}

impl TryFrom<PatternFile> for CfaPattern {
    type Error = Error;

    fn try_from(f: PatternFile) -> Result<Self> {
        if f.rows.len() != f.period[0] || f.rows.iter().any(|r| r.len() != f.period[1]) {
            return Err(Error::Pattern(format!(
                "rows do not match declared period {}x{}",
                f.period[0], f.period[1]
            )));
        }
        CfaPattern::new(f.name, f.rows, f.degenerate)
    }
}

impl From<CfaPattern> for PatternFile {
    fn from(p: CfaPattern) -> Self {
        PatternFile {
            period: [p.cells.len(), p.cells[0].len()],
            name: p.name,
            rows: p.cells,
            degenerate: p.degenerate,
        }
    }
}

/// Default event cells of [`CfaPattern::hybridevs`]: the diagonal of the
/// top-right green quad.
pub const HYBRIDEVS_DEFAULT_EVENTS: [(usize, usize); 2] = [(0, 2), (1, 3)];

pub const BUILTIN_NAMES: [&str; 4] = ["bayer", "quad", "nona", "hybridevs"];

impl CfaPattern {
    /// Validates a rectangular tile. Unless `degenerate`, each of R, G and B
    /// must appear at least once.
    pub fn new(name: impl Into<String>, cells: Vec<Vec<CfaLabel>>, degenerate: bool) -> Result<Self> {
        let name = name.into();
        let pw = cells.first().map_or(0, Vec::len);
        if cells.is_empty() || pw == 0 || cells.iter().any(|r| r.len() != pw) {
            return Err(Error::Pattern(format!(
                "pattern `{name}` must be a non-empty rectangle"
            )));
        }
        let p = CfaPattern {
            name,
            cells,
            degenerate,
        };
        if !degenerate {
            for label in [CfaLabel::R, CfaLabel::G, CfaLabel::B] {
                if p.count(label) == 0 {
                    return Err(Error::Pattern(format!("pattern `{}` never samples {label}", p.name)));
                }
            }
        }
        Ok(p)
    }

    pub fn bayer() -> Self {
        use CfaLabel::*;
        CfaPattern::new("bayer", vec![vec![R, G], vec![G, B]], false).expect("valid built-in")
    }

    /// Bayer tile with every cell expanded to a `k x k` block.
    pub fn expanded_bayer(name: &str, k: usize) -> Self {
        let bayer = CfaPattern::bayer();
        let cells = (0..2 * k)
            .map(|y| (0..2 * k).map(|x| bayer.cells[y / k][x / k]).collect())
            .collect();
        CfaPattern::new(name, cells, false).expect("valid built-in")
    }

    pub fn quad() -> Self {
        CfaPattern::expanded_bayer("quad", 2)
    }

    pub fn nona() -> Self {
        CfaPattern::expanded_bayer("nona", 3)
    }

    /// Quad-Bayer with event pixels at [`HYBRIDEVS_DEFAULT_EVENTS`].
    pub fn hybridevs() -> Self {
        CfaPattern::hybridevs_with_events(&HYBRIDEVS_DEFAULT_EVENTS).expect("valid built-in")
    }

    pub fn hybridevs_with_events(events: &[(usize, usize)]) -> Result<Self> {
        let mut cells = CfaPattern::quad().cells;
        for &(r, c) in events {
            if r >= 4 || c >= 4 {
                return Err(Error::Pattern(format!("event cell ({r}, {c}) outside the 4x4 tile")));
            }
            cells[r][c] = CfaLabel::Event;
        }
        CfaPattern::new("hybridevs", cells, false)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "bayer" => Ok(CfaPattern::bayer()),
            "quad" => Ok(CfaPattern::quad()),
            "nona" => Ok(CfaPattern::nona()),
            "hybridevs" => Ok(CfaPattern::hybridevs()),
            other => Err(Error::Pattern(format!(
                "unknown pattern `{other}` (built-ins: {})",
                BUILTIN_NAMES.join(", ")
            ))),
        }
    }

    /// A built-in name, or otherwise a path to a JSON pattern file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if BUILTIN_NAMES.contains(&name_or_path) {
            return CfaPattern::builtin(name_or_path);
        }
        let path = Path::new(name_or_path);
        if path.exists() {
            return CfaPattern::load(path);
        }
        CfaPattern::builtin(name_or_path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn period(&self) -> (usize, usize) {
        (self.cells.len(), self.cells[0].len())
    }

    pub fn cells(&self) -> &[Vec<CfaLabel>] {
        &self.cells
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn label_at(&self, y: usize, x: usize, phase: Phase) -> CfaLabel {
        let (ph, pw) = self.period();
        self.cells[(y + phase.0) % ph][(x + phase.1) % pw]
    }

    pub fn count(&self, label: CfaLabel) -> usize {
        self.cells.iter().flatten().filter(|&&l| l == label).count()
    }

    pub fn density(&self, label: CfaLabel) -> f64 {
        let (ph, pw) = self.period();
        self.count(label) as f64 / (ph * pw) as f64
    }

    pub fn has_events(&self) -> bool {
        self.count(CfaLabel::Event) > 0
    }

    /// Sample every `k`-th cell starting at `offset` in both axes.
    pub fn subsample(&self, k: usize, offset: usize) -> Vec<Vec<CfaLabel>> {
        self.cells
            .iter()
            .skip(offset)
            .step_by(k)
            .map(|r| r.iter().skip(offset).step_by(k).copied().collect())
            .collect()
    }
}

impl fmt::Display for CfaLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CfaLabel::R => "R",
            CfaLabel::G => "G",
            CfaLabel::B => "B",
            CfaLabel::Event => "Event",
        };
        f.write_str(s)
    }
}

impl FromStr for CfaPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CfaPattern::resolve(s)
    }
}

/// Single-channel raw capture plus the metadata needed to interpret it.
#[derive(Clone, Debug, PartialEq)]
pub struct MosaicImage {
    /// `(n, 1, h, w)` values in `[0, 1]`, exactly zero at event pixels.
    pub raw: Tensor<f64>,
    pub pattern: CfaPattern,
    pub phase: Phase,
    pub noise: Option<NoiseMeta>,
}

impl MosaicImage {
    pub fn new(raw: Tensor<f64>, pattern: CfaPattern, phase: Phase) -> Result<Self> {
        if raw.shape().c != 1 {
            return Err(Error::shape(format!(
                "raw mosaic must have one channel, got {}",
                raw.shape()
            )));
        }
        if raw.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig("raw values must lie in [0, 1]".into()));
        }
        let s = raw.shape();
        for n in 0..s.n {
            for y in 0..s.h {
                for x in 0..s.w {
                    if pattern.label_at(y, x, phase) == CfaLabel::Event && raw.get(n, 0, y, x) != 0.0 {
                        return Err(Error::InvalidConfig(format!("event pixel ({y}, {x}) is not zero")));
                    }
                }
            }
        }
        Ok(MosaicImage {
            raw,
            pattern,
            phase,
            noise: None,
        })
    }

    pub fn shape(&self) -> Shape {
        self.raw.shape()
    }

    /// Raw plane followed by the four one-hot pattern planes, `(n, 5, h, w)`.
    pub fn with_cfa_planes(&self) -> Result<Tensor<f64>> {
        let s = self.shape();
        let planes = cfa_channels(&self.pattern, self.phase, s.h, s.w);
        let items: Vec<Tensor<f64>> = (0..s.n)
            .map(|i| Tensor::concat_channels(&[&self.raw.batch_item(i)?, &planes]))
            .collect::<Result<_>>()?;
        Tensor::stack(&items.iter().collect::<Vec<_>>())
    }

    /// Network input: the raw plane alone or with appended pattern planes.
    pub fn network_input(&self, append_cfa: bool) -> Result<Tensor<f64>> {
        if append_cfa {
            self.with_cfa_planes()
        } else {
            Ok(self.raw.clone())
        }
    }
}

/// Sample `rgb` `(n, 3, h, w)` through `pattern`. Values must lie in `[0, 1]`.
pub fn mosaic(rgb: &Tensor<f64>, pattern: &CfaPattern, phase: Phase) -> Result<MosaicImage> {
    let s = rgb.shape();
    if s.c != 3 {
        return Err(Error::shape(format!("mosaic expects 3 channels, got {s}")));
    }
    if rgb.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidConfig("rgb values must lie in [0, 1]".into()));
    }
    let raw = Tensor::from_fn(Shape::new(s.n, 1, s.h, s.w), |n, _, y, x| {
        pattern
            .label_at(y, x, phase)
            .channel()
            .map_or(0.0, |c| rgb.get(n, c, y, x))
    })?;
    Ok(MosaicImage {
        raw,
        pattern: pattern.clone(),
        phase,
        noise: None,
    })
}

/// One-hot `(1, 4, h, w)` planes for R, G, B and Event.
pub fn cfa_channels(pattern: &CfaPattern, phase: Phase, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn(Shape::new(1, 4, h, w), |_, c, y, x| {
        if pattern.label_at(y, x, phase).plane() == c {
            1.0
        } else {
            0.0
        }
    })
    .expect("one-hot planes are finite")
}
