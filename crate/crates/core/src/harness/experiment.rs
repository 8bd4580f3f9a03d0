use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::dataset::{make_toy_dataset, DatasetSpec, ToySample};
use crate::archmodel::{flops, params, ArchConfig};
use crate::cfa::{bilinear_demosaic, NoisePreset};
use crate::error::{Error, Result};
use crate::metrics::{mean_psnr, psnr};
use crate::network::{train_adam, Network, TrainConfig};
use crate::numerics::{Precision, Scalar, Tensor};

/// Largest relative FLOP difference allowed between the two arms.
pub const FLOP_MATCH_TOLERANCE: f64 = 0.05;

/// A controlled two-architecture comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub pattern: String,
    pub noise: NoisePreset,
    pub patch: usize,
    pub dataset_seed: u64,
    pub train_count: usize,
    pub val_count: usize,
    pub append_cfa: bool,
    pub arm_a: ArchConfig,
    pub arm_b: ArchConfig,
    pub label_a: String,
    pub label_b: String,
    pub with_sca: bool,
    /// Seeds parameter initialisation of both arms.
    pub init_seed: u64,
    pub train: TrainConfig,
    pub precision: Precision,
}

impl ExperimentSpec {
    /// The toy demosaicing comparison: `d = 1` against `d = 2` on clean
    /// Bayer data with CFA planes appended to the input.
    pub fn default_comparison() -> Self {
        ExperimentSpec {
            pattern: "bayer".into(),
            noise: NoisePreset::None,
            patch: 48,
            dataset_seed: 0,
            train_count: 64,
            val_count: 16,
            append_cfa: true,
            arm_a: ArchConfig::new(1, 12, 3).with_channels(5, 3),
            arm_b: ArchConfig::new(2, 16, 7).with_channels(5, 3),
            label_a: "d1".into(),
            label_b: "d2".into(),
            with_sca: false,
            init_seed: 0,
            train: TrainConfig::default(),
            precision: Precision::Standard,
        }
    }

    pub fn dataset(&self, val: bool) -> DatasetSpec {
        // validation draws from a disjoint stream family of the same seed
        let (seed, count) = if val {
            (self.dataset_seed ^ 0x005e_ed0f_7a11, self.val_count)
        } else {
            (self.dataset_seed, self.train_count)
        };
        DatasetSpec {
            seed,
            count,
            patch: self.patch,
            pattern: self.pattern.clone(),
            noise: self.noise,
            append_cfa: self.append_cfa,
        }
    }

    /// Relative FLOP gap `|a - b| / max(a, b)` at the patch resolution.
    pub fn flop_gap(&self) -> Result<f64> {
        let a = flops(&self.arm_a, self.patch, self.patch)?.flops as f64;
        let b = flops(&self.arm_b, self.patch, self.patch)?.flops as f64;
        Ok((a - b).abs() / a.max(b))
    }

    pub fn validate(&self) -> Result<()> {
        let c_in = if self.append_cfa { 5 } else { 1 };
        for arm in [&self.arm_a, &self.arm_b] {
            arm.validate()?;
            if arm.c_in != c_in || arm.c_out != 3 {
                return Err(Error::InvalidConfig(format!(
                    "arm {arm} has {} -> {} channels, data needs {c_in} -> 3",
                    arm.c_in, arm.c_out
                )));
            }
        }
        if self.train_count == 0 || self.val_count == 0 {
            return Err(Error::InvalidConfig(
                "train and validation sets must be non-empty".into(),
            ));
        }
        let gap = self.flop_gap()?;
        if gap > FLOP_MATCH_TOLERANCE {
            return Err(Error::InvalidConfig(format!(
                "arms differ by {:.1}% in FLOPs at {}x{} (limit {:.0}%)",
                gap * 100.0,
                self.patch,
                self.patch,
                FLOP_MATCH_TOLERANCE * 100.0
            )));
        }
        Ok(())
    }

    /// The same experiment with the two arms exchanged.
    pub fn swapped(&self) -> Self {
        ExperimentSpec {
            arm_a: self.arm_b,
            arm_b: self.arm_a,
            label_a: self.label_b.clone(),
            label_b: self.label_a.clone(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmRecord {
    pub label: String,
    pub config: ArchConfig,
    pub gflops: f64,
    pub params: u64,
    pub init_val_psnr: Option<f64>,
    pub final_train_psnr: Option<f64>,
    pub final_val_psnr: Option<f64>,
    pub losses: Vec<(usize, f64)>,
    /// Set when training stopped early, e.g. on divergence.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub spec: ExperimentSpec,
    pub arm_a: ArmRecord,
    pub arm_b: ArmRecord,
    pub baseline_train_psnr: f64,
    pub baseline_val_psnr: f64,
    /// `arm_b - arm_a` final validation PSNR; reported, never asserted.
    pub gap_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
}

impl RunRecord {
    pub fn arms(&self) -> [&ArmRecord; 2] {
        [&self.arm_a, &self.arm_b]
    }
}

/// Mean PSNR of the bilinear baseline over a dataset.
pub fn baseline_psnr(samples: &[ToySample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total += psnr(&bilinear_demosaic(&s.mosaic)?, &s.target, 1.0)?;
    }
    Ok(total / samples.len() as f64)
}

/// Mean PSNR of `net` over a dataset, predictions clamped to `[0, 1]`.
pub fn network_psnr<T: Scalar>(net: &Network<T>, samples: &[ToySample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let pred = net
            .infer(&s.input.cast::<T>())?
            .cast::<f64>()
            .map(|v| v.clamp(0.0, 1.0))?;
        total += mean_psnr(&pred, &s.target, 1.0)?;
    }
    Ok(total / samples.len() as f64)
}

fn pairs<T: Scalar>(samples: &[ToySample]) -> Vec<(Tensor<T>, Tensor<T>)> {
    samples.iter().map(|s| (s.input.cast(), s.target.cast())).collect()
}

fn run_arm<T: Scalar>(
    label: &str,
    config: &ArchConfig,
    spec: &ExperimentSpec,
    train: &[ToySample],
    val: &[ToySample],
) -> Result<ArmRecord> {
    let mut record = ArmRecord {
        label: label.into(),
        config: *config,
        gflops: flops(config, spec.patch, spec.patch)?.gflops(),
        params: params(config)?,
        init_val_psnr: None,
        final_train_psnr: None,
        final_val_psnr: None,
        losses: Vec::new(),
        error: None,
    };
    let mut net = Network::<T>::build(config, spec.init_seed, spec.with_sca)?;
    record.init_val_psnr = Some(network_psnr(&net, val)?);
    match train_adam(&mut net, &pairs::<T>(train), &spec.train) {
        Ok(log) => record.losses = log.losses,
        Err(e @ Error::Diverged { .. }) => {
            record.error = Some(e.to_string());
            return Ok(record);
        }
        Err(e) => return Err(e),
    }
    record.final_train_psnr = Some(network_psnr(&net, train)?);
    record.final_val_psnr = Some(network_psnr(&net, val)?);
    Ok(record)
}

/// Train both arms on identical data, data order and initialisation seed,
/// then evaluate on a held-out set. With `parallel` the arms run on two
/// threads; results do not depend on it.
pub fn run_comparison(spec: &ExperimentSpec, parallel: bool, record_timing: bool) -> Result<RunRecord> {
    spec.validate()?;
    let start = Instant::now();
    let train = make_toy_dataset(&spec.dataset(false))?;
    let val = make_toy_dataset(&spec.dataset(true))?;
    let arm = |label: &str, config: &ArchConfig| match spec.precision {
        Precision::Standard => run_arm::<f32>(label, config, spec, &train, &val),
        Precision::High => run_arm::<f64>(label, config, spec, &train, &val),
    };
    let (arm_a, arm_b) = if parallel {
        std::thread::scope(|s| {
            let b = s.spawn(|| arm(&spec.label_b, &spec.arm_b));
            let a = arm(&spec.label_a, &spec.arm_a);
            (a, b.join().expect("comparison arm panicked"))
        })
    } else {
        (arm(&spec.label_a, &spec.arm_a), arm(&spec.label_b, &spec.arm_b))
    };
    let (arm_a, arm_b) = (arm_a?, arm_b?);
    let gap_db = match (arm_a.final_val_psnr, arm_b.final_val_psnr) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };
    Ok(RunRecord {
        spec: spec.clone(),
        baseline_train_psnr: baseline_psnr(&train)?,
        baseline_val_psnr: baseline_psnr(&val)?,
        arm_a,
        arm_b,
        gap_db,
        wall_clock_secs: record_timing.then(|| start.elapsed().as_secs_f64()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentSpec {
        ExperimentSpec {
            patch: 16,
            train_count: 4,
            val_count: 2,
            train: TrainConfig {
                steps: 4,
                batch_size: 2,
                log_every: 2,
                ..TrainConfig::default()
            },
            ..ExperimentSpec::default_comparison()
        }
    }

    #[test]
    fn default_arms_are_flop_matched() {
        let spec = ExperimentSpec::default_comparison();
        spec.validate().unwrap();
        assert!(spec.flop_gap().unwrap() <= FLOP_MATCH_TOLERANCE);
    }

    #[test]
    fn unmatched_arms_are_rejected() {
        let spec = ExperimentSpec {
            arm_b: ArchConfig::new(2, 32, 4).with_channels(5, 3),
            ..tiny()
        };
        assert!(matches!(spec.validate(), Err(Error::InvalidConfig(_))));
        let spec = ExperimentSpec {
            arm_a: ArchConfig::new(1, 8, 2),
            ..tiny()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn zero_lr_reports_initial_psnr() {
        let mut spec = tiny();
        spec.train.lr = 0.0;
        let r = run_comparison(&spec, false, false).unwrap();
        for arm in r.arms() {
            assert!(arm.error.is_none());
            assert_eq!(arm.init_val_psnr, arm.final_val_psnr);
        }
    }

    #[test]
    fn swapping_labels_permutes_the_record() {
        let spec = tiny();
        let r = run_comparison(&spec, true, false).unwrap();
        let s = run_comparison(&spec.swapped(), false, false).unwrap();
        assert_eq!(r.arm_a, s.arm_b);
        assert_eq!(r.arm_b, s.arm_a);
        assert_eq!(r.baseline_val_psnr, s.baseline_val_psnr);
        assert_eq!(r.gap_db.map(|g| -g), s.gap_db);
        assert!(r.wall_clock_secs.is_none());
    }
}
