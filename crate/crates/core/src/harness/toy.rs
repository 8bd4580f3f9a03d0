use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::dataset::{make_toy_dataset, DatasetSpec, ToySample};
use super::experiment::{baseline_psnr, network_psnr};
use crate::archmodel::{flops, params, ArchConfig};
use crate::error::{Error, Result};
use crate::network::{save_checkpoint, train_adam, Network, TrainConfig};
use crate::numerics::{Precision, Scalar};

/// Single-network training on procedural data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyTrainSpec {
    pub dataset: DatasetSpec,
    pub arch: ArchConfig,
    pub with_sca: bool,
    pub init_seed: u64,
    pub train: TrainConfig,
    pub precision: Precision,
}

impl Default for ToyTrainSpec {
    /// The overfit check: `(2, 16, 2)` on eight 48x48 Bayer patches,
    /// 2000 Adam steps at `1e-3`.
    fn default() -> Self {
        ToyTrainSpec {
            dataset: DatasetSpec::new(0, 8, 48, "bayer"),
            arch: ArchConfig::new(2, 16, 2).with_channels(1, 3),
            with_sca: false,
            init_seed: 0,
            train: TrainConfig {
                steps: 2000,
                ..TrainConfig::default()
            },
            precision: Precision::Standard,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyTrainRecord {
    pub spec: ToyTrainSpec,
    pub params: u64,
    pub gflops: f64,
    pub init_train_psnr: f64,
    pub final_train_psnr: f64,
    pub baseline_train_psnr: f64,
    pub losses: Vec<(usize, f64)>,
    pub final_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
}

/// Initial PSNR, final PSNR, loss log, final loss.
type RunOutcome = (f64, f64, Vec<(usize, f64)>, f64);

fn run<T: Scalar>(spec: &ToyTrainSpec, data: &[ToySample], checkpoint: Option<&Path>) -> Result<RunOutcome> {
    let mut net = Network::<T>::build(&spec.arch, spec.init_seed, spec.with_sca)?;
    let init = network_psnr(&net, data)?;
    let pairs: Vec<_> = data
        .iter()
        .map(|s| (s.input.cast::<T>(), s.target.cast::<T>()))
        .collect();
    let log = train_adam(&mut net, &pairs, &spec.train)?;
    if let Some(dir) = checkpoint {
        save_checkpoint(&net, spec.init_seed, spec.train.steps, dir)?;
    }
    Ok((init, network_psnr(&net, data)?, log.losses, log.final_loss))
}

/// Trains one network and reports PSNR on its own training set. With
/// `checkpoint`, the trained weights are saved there.
pub fn run_toy_training(spec: &ToyTrainSpec, checkpoint: Option<&Path>, record_timing: bool) -> Result<ToyTrainRecord> {
    spec.arch.validate()?;
    if spec.arch.c_in != spec.dataset.c_in() || spec.arch.c_out != 3 {
        return Err(Error::InvalidConfig(format!(
            "arch {} has {} -> {} channels, data needs {} -> 3",
            spec.arch,
            spec.arch.c_in,
            spec.arch.c_out,
            spec.dataset.c_in()
        )));
    }
    let start = Instant::now();
    let data = make_toy_dataset(&spec.dataset)?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let (init, fin, losses, final_loss) = match spec.precision {
        Precision::Standard => run::<f32>(spec, &data, checkpoint)?,
        Precision::High => run::<f64>(spec, &data, checkpoint)?,
    };
    Ok(ToyTrainRecord {
        spec: spec.clone(),
        params: params(&spec.arch)?,
        gflops: flops(&spec.arch, spec.dataset.patch, spec.dataset.patch)?.gflops(),
        init_train_psnr: init,
        final_train_psnr: fin,
        baseline_train_psnr: baseline_psnr(&data)?,
        losses,
        final_loss,
        wall_clock_secs: record_timing.then(|| start.elapsed().as_secs_f64()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::load_checkpoint_with_manifest;

    fn small() -> ToyTrainSpec {
        ToyTrainSpec {
            dataset: DatasetSpec::new(1, 2, 16, "bayer"),
            train: TrainConfig {
                steps: 30,
                batch_size: 2,
                log_every: 10,
                ..TrainConfig::default()
            },
            ..ToyTrainSpec::default()
        }
    }

    #[test]
    fn trains_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_toy_training(&small(), Some(dir.path()), false).unwrap();
        assert!(r.final_train_psnr > r.init_train_psnr);
        assert!(r.losses.iter().all(|(_, l)| l.is_finite()));
        let (net, manifest) = load_checkpoint_with_manifest::<f32>(dir.path()).unwrap();
        assert_eq!(manifest.steps, 30);
        assert_eq!(net.config(), &small().arch);
        assert_eq!(r, run_toy_training(&small(), None, false).unwrap());
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut spec = small();
        spec.dataset.append_cfa = true;
        assert!(matches!(
            run_toy_training(&spec, None, false),
            Err(Error::InvalidConfig(_))
        ));
    }
}
