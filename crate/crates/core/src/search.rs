//! Exact solver for the entropy-maximization program
//!
//! ```text
//! max_{d, w, B}  H(d, w, B)
//! s.t.           B / w <= rho
//!                d_min <= d <= d_max
//!                FLOPs(d, w, B) at the reference resolution <= budget
//! ```
//!
//! over a grid where `w` and `B` are multiples of a step. The grid is small
//! enough that exhaustive enumeration is both exact and fast.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::archmodel::{self, ArchConfig, EntropySummary, FlopsReport};
use crate::error::{Error, Result};

/// Depth-to-width bound `B / w <= rho`, held as an exact rational.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rho(Ratio<u64>);

impl Rho {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 || num == 0 {
            return Err(Error::InvalidConstraints(format!(
                "rho must be a positive ratio, got {num}/{den}"
            )));
        }
        Ok(Rho(Ratio::new(num, den)))
    }

    /// Nearest rational with a denominator of 10^6.
    pub fn from_f64(v: f64) -> Result<Self> {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidConstraints(format!("rho must be positive, got {v}")));
        }
        Rho::new((v * 1e6).round() as u64, 1_000_000)
    }

    pub fn as_f64(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    /// `blocks / width <= rho`, in integers.
    pub fn admits(&self, blocks: usize, width: usize) -> bool {
        blocks as u128 * *self.0.denom() as u128 <= *self.0.numer() as u128 * width as u128
    }
}

impl FromStr for Rho {
    type Err = Error;

    /// Exact decimal parse: `"1.2"` becomes `6/5`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConstraints(format!("cannot parse rho `{s}`"));
        let s = s.trim();
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty() && frac.is_empty() || frac.len() > 12 {
            return Err(bad());
        }
        let digits = |t: &str| t.is_empty() || t.bytes().all(|b| b.is_ascii_digit());
        if !digits(int) || !digits(frac) {
            return Err(bad());
        }
        let den = 10u64.pow(frac.len() as u32);
        let int_v: u64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        let frac_v: u64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| bad())?
        };
        Rho::new(int_v * den + frac_v, den)
    }
}

impl fmt::Display for Rho {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_f64())
    }
}

impl Serialize for Rho {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Rho {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Rho::from_f64(v).map_err(serde::de::Error::custom)
    }
}

/// Feasible region of the program.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConstraints {
    /// Budget in FLOPs at `ref_h x ref_w`.
    pub flops_budget: u64,
    pub ref_h: usize,
    pub ref_w: usize,
    pub rho: Rho,
    pub d_min: usize,
    pub d_max: usize,
    /// Step for `w` and `B`.
    pub grid: usize,
    pub w_min: usize,
    pub w_max: usize,
    pub b_min: usize,
    pub b_max: usize,
    pub c_in: usize,
    pub c_out: usize,
    /// Number of best candidates kept in [`SearchResult::frontier`].
    pub frontier_size: usize,
}

impl SearchConstraints {
    /// Defaults: 256x256 reference, `1 <= d <= 4`, grid 4, `w in [8, 512]`,
    /// `B in [4, 512]`.
    pub fn new(budget_gflops: f64, rho: Rho) -> Self {
        SearchConstraints {
            flops_budget: gflops_to_flops(budget_gflops),
            ref_h: 256,
            ref_w: 256,
            rho,
            d_min: 1,
            d_max: 4,
            grid: 4,
            w_min: 8,
            w_max: 512,
            b_min: 4,
            b_max: 512,
            c_in: archmodel::DEFAULT_C_IN,
            c_out: archmodel::DEFAULT_C_OUT,
            frontier_size: 10,
        }
    }

    pub fn with_budget_gflops(mut self, budget_gflops: f64) -> Self {
        self.flops_budget = gflops_to_flops(budget_gflops);
        self
    }

    pub fn with_d_range(mut self, d_min: usize, d_max: usize) -> Self {
        self.d_min = d_min;
        self.d_max = d_max;
        self
    }

    pub fn budget_gflops(&self) -> f64 {
        self.flops_budget as f64 / 1e9
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConstraints(m.to_string()));
        if self.flops_budget == 0 {
            return bad("budget must be positive");
        }
        if self.d_min == 0 || self.d_min > self.d_max {
            return bad("need 1 <= d_min <= d_max");
        }
        if self.grid == 0 {
            return bad("grid step must be >= 1");
        }
        if self.w_min < 4 || self.w_min > self.w_max || self.b_min > self.b_max {
            return bad("need 4 <= w_min <= w_max and b_min <= b_max");
        }
        if self.ref_h == 0 || self.ref_w == 0 || self.c_in == 0 || self.c_out == 0 {
            return bad("reference resolution and channel counts must be positive");
        }
        Ok(())
    }

    fn config(&self, d: usize, w: usize, b: usize) -> ArchConfig {
        ArchConfig::new(d, w, b).with_channels(self.c_in, self.c_out)
    }

    fn grid_values(&self, lo: usize, hi: usize) -> impl Iterator<Item = usize> {
        let start = lo.div_ceil(self.grid) * self.grid;
        (start..=hi).step_by(self.grid)
    }
}

pub fn gflops_to_flops(gflops: f64) -> u64 {
    (gflops * 1e9).round().max(0.0) as u64
}

/// One feasible grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub config: ArchConfig,
    pub entropy: EntropySummary,
    pub flops: FlopsReport,
}

/// Total order used to pick the optimum: higher entropy, then lower FLOPs,
/// lower `d`, lower `B`, lower `w`. `Less` means "better".
pub fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.entropy
        .entropy
        .total_cmp(&a.entropy.entropy)
        .then(a.flops.flops.cmp(&b.flops.flops))
        .then(a.config.downsample.cmp(&b.config.downsample))
        .then(a.config.blocks.cmp(&b.config.blocks))
        .then(a.config.width.cmp(&b.config.width))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchStatus {
    Optimal,
    Infeasible,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub status: SearchStatus,
    pub best: Option<Candidate>,
    pub feasible_count: usize,
    /// Best candidates in rank order, `best` first.
    pub frontier: Vec<Candidate>,
    pub constraints: SearchConstraints,
}

impl SearchResult {
    /// The optimum, or [`Error::Infeasible`].
    pub fn optimum(&self) -> Result<&Candidate> {
        self.best.as_ref().ok_or_else(|| {
            Error::Infeasible(format!(
                "no grid point satisfies budget {} GFLOPs, rho {}, d in [{}, {}]",
                self.constraints.budget_gflops(),
                self.constraints.rho,
                self.constraints.d_min,
                self.constraints.d_max
            ))
        })
    }
}

fn enumerate_slice(c: &SearchConstraints, d: usize) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    for w in c.grid_values(c.w_min, c.w_max) {
        for b in c.grid_values(c.b_min, c.b_max) {
            // both bounds are monotone in B
            if !c.rho.admits(b, w) {
                break;
            }
            let config = c.config(d, w, b);
            if config.validate().is_err() {
                continue;
            }
            let flops = archmodel::flops(&config, c.ref_h, c.ref_w)?;
            if flops.flops > c.flops_budget {
                break;
            }
            let entropy = archmodel::entropy_modified_summary(&config)?;
            out.push(Candidate { config, entropy, flops });
        }
    }
    Ok(out)
}

/// Every grid point satisfying the constraints, ordered by `(d, w, B)`.
pub fn enumerate_feasible(constraints: &SearchConstraints) -> Result<Vec<Candidate>> {
    enumerate_feasible_threaded(constraints, 1)
}

/// [`enumerate_feasible`] with `d`-slices spread over up to `threads` workers.
/// The output does not depend on the thread count.
pub fn enumerate_feasible_threaded(constraints: &SearchConstraints, threads: usize) -> Result<Vec<Candidate>> {
    constraints.validate()?;
    let ds: Vec<usize> = (constraints.d_min..=constraints.d_max).collect();
    let threads = threads.max(1).min(ds.len());
    if threads == 1 {
        let mut all = Vec::new();
        for &d in &ds {
            all.extend(enumerate_slice(constraints, d)?);
        }
        return Ok(all);
    }
    let slices: Vec<Result<Vec<Candidate>>> = std::thread::scope(|s| {
        let chunks: Vec<&[usize]> = ds.chunks(ds.len().div_ceil(threads)).collect();
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|chunk| {
                s.spawn(move || {
                    let mut v = Vec::new();
                    for &d in chunk {
                        v.extend(enumerate_slice(constraints, d)?);
                    }
                    Ok(v)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("search worker panicked"))
            .collect()
    });
    let mut all = Vec::new();
    for s in slices {
        all.extend(s?);
    }
    Ok(all)
}

pub fn solve(constraints: &SearchConstraints) -> Result<SearchResult> {
    solve_threaded(constraints, 1)
}

pub fn solve_threaded(constraints: &SearchConstraints, threads: usize) -> Result<SearchResult> {
    let mut feasible = enumerate_feasible_threaded(constraints, threads)?;
    let feasible_count = feasible.len();
    feasible.sort_by(rank);
    feasible.truncate(constraints.frontier_size.max(1));
    let best = feasible.first().cloned();
    Ok(SearchResult {
        status: if best.is_some() {
            SearchStatus::Optimal
        } else {
            SearchStatus::Infeasible
        },
        best,
        feasible_count,
        frontier: feasible,
        constraints: constraints.clone(),
    })
}

/// [`solve`] with the downsampling bound lifted to at least 8.
pub fn unconstrained_d_probe(constraints: &SearchConstraints) -> Result<SearchResult> {
    let mut relaxed = constraints.clone();
    relaxed.d_max = relaxed.d_max.max(8);
    solve(&relaxed)
}

/// One solved cell of a budget x rho sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget_gflops: f64,
    pub rho: Rho,
    pub d_min: usize,
    pub d_max: usize,
    pub status: SearchStatus,
    pub d: Option<usize>,
    pub w: Option<usize>,
    #[serde(rename = "B")]
    pub blocks: Option<usize>,
    pub entropy: Option<f64>,
    pub flops: Option<u64>,
    pub feasible_count: usize,
}

impl SweepRow {
    pub fn from_result(budget_gflops: f64, r: &SearchResult) -> Self {
        let best = r.best.as_ref();
        SweepRow {
            budget_gflops,
            rho: r.constraints.rho,
            d_min: r.constraints.d_min,
            d_max: r.constraints.d_max,
            status: r.status,
            d: best.map(|c| c.config.downsample),
            w: best.map(|c| c.config.width),
            blocks: best.map(|c| c.config.blocks),
            entropy: best.map(|c| c.entropy.entropy),
            flops: best.map(|c| c.flops.flops),
            feasible_count: r.feasible_count,
        }
    }

    pub fn triple(&self) -> Option<(usize, usize, usize)> {
        Some((self.d?, self.w?, self.blocks?))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

/// Solve every `(budget, rho)` cell, budgets outermost.
pub fn sweep(budgets_gflops: &[f64], rhos: &[Rho], base: &SearchConstraints, threads: usize) -> Result<SweepTable> {
    if budgets_gflops.is_empty() || rhos.is_empty() {
        return Err(Error::InvalidConstraints(
            "sweep needs at least one budget and one rho".into(),
        ));
    }
    let mut rows = Vec::with_capacity(budgets_gflops.len() * rhos.len());
    for &budget in budgets_gflops {
        for &rho in rhos {
            let c = SearchConstraints { rho, ..base.clone() }.with_budget_gflops(budget);
            rows.push(SweepRow::from_result(budget, &solve_threaded(&c, threads)?));
        }
    }
    Ok(SweepTable { rows })
}
