use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use jd3net::archmodel::{entropy_deepmad, entropy_modified, flops, param_count};
use jd3net::cfa::io::{load_image, save_image};
use jd3net::cfa::{add_noise, bilinear_demosaic, mosaic, CfaPattern, MosaicImage, NoisePreset};
use jd3net::harness::{
    gradcheck_suite, reference_sweep, report_table, run_comparison, run_toy_training, write_report, ExperimentSpec,
    ReportInput, RunRecord, ToyTrainSpec,
};
use jd3net::metrics;
use jd3net::network::{load_checkpoint, TrainConfig};
use jd3net::numerics::{io as tensor_io, Precision, Scalar, Tensor};
use jd3net::search::{solve_threaded, sweep, Rho, SearchConstraints, SweepTable};
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::{Failure, UsageError};

pub fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Search(a) => search(g, a),
        Command::Sweep(a) => sweep_cmd(g, a),
        Command::Flops(a) => flops_cmd(g, a),
        Command::Entropy(a) => entropy_cmd(g, a),
        Command::Mosaic(a) => mosaic_cmd(g, a),
        Command::Demosaic(a) => demosaic_cmd(g, a),
        Command::Gradcheck(a) => gradcheck(g, a),
        Command::TrainToy(a) => train_toy(g, a),
        Command::Compare(a) => compare(g, a),
        Command::Eval(a) => eval(g, a),
        Command::Report(a) => report(g, a),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Pretty JSON to `--out`, or stdout.
fn emit<T: Serialize>(g: &GlobalArgs, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match &g.out {
        Some(p) => write_file(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn require_out(g: &GlobalArgs) -> Result<&Path> {
    match &g.out {
        Some(p) => Ok(p),
        None => Err(UsageError("this subcommand needs --out".into()).into()),
    }
}

/// `<out><suffix>`, e.g. `raw.pfm.input.tensor`.
fn companion(out: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(out.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn constraints(c: &ConstraintArgs, budget_gflops: f64, rho: Rho) -> SearchConstraints {
    SearchConstraints {
        ref_h: c.ref_height_px,
        ref_w: c.ref_width_px,
        d_min: c.d_min,
        d_max: c.d_max,
        grid: c.grid,
        w_min: c.w_min,
        w_max: c.w_max,
        b_min: c.b_min,
        b_max: c.b_max,
        c_in: c.c_in,
        c_out: c.c_out,
        frontier_size: c.frontier,
        ..SearchConstraints::new(budget_gflops, rho)
    }
}

fn search(g: &GlobalArgs, a: &SearchArgs) -> Result<()> {
    let c = constraints(&a.constraints, a.budget_gflops, a.rho);
    let result = solve_threaded(&c, g.threads)?;
    emit(g, &result)?;
    result.optimum()?;
    Ok(())
}

fn sweep_cmd(g: &GlobalArgs, a: &SweepArgs) -> Result<()> {
    let table = if a.reference_table {
        reference_sweep(g.threads)?
    } else {
        let base = constraints(
            &a.constraints,
            a.budgets_gflops.first().copied().unwrap_or(1.0),
            a.rhos[0],
        );
        sweep(&a.budgets_gflops, &a.rhos, &base, g.threads)?
    };
    if let Some(csv) = &a.csv {
        write_file(
            csv,
            report_table(&ReportInput::Sweep(table.clone()))?.to_csv().as_bytes(),
        )?;
    }
    emit(g, &table)
}

fn flops_cmd(g: &GlobalArgs, a: &FlopsArgs) -> Result<()> {
    let config = a.arch.config();
    let report = flops(&config, a.height_px, a.width_px)?;
    emit(
        g,
        &json!({
            "config": config,
            "with_sca": a.with_sca,
            "params": param_count(&config, a.with_sca)?,
            "gflops": report.gflops(),
            "flops": report,
        }),
    )
}

fn entropy_cmd(g: &GlobalArgs, a: &EntropyArgs) -> Result<()> {
    let config = a.arch.config();
    let report = match a.kind {
        EntropyKindArg::Modified => entropy_modified(&config)?,
        EntropyKindArg::Deepmad => entropy_deepmad(&config, a.height_px, a.width_px)?,
    };
    emit(g, &json!({ "config": config, "entropy": report }))
}

fn mosaic_cmd(g: &GlobalArgs, a: &MosaicArgs) -> Result<()> {
    let out = require_out(g)?;
    let rgb = load_image(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let pattern = CfaPattern::resolve(&a.pattern.pattern)?;
    let mut m = mosaic(&rgb, &pattern, a.pattern.phase)?;
    if a.noise != NoisePreset::None {
        let (gain, read_sigma) = a.noise.params();
        m = add_noise(&m, gain, read_sigma, g.seed.unwrap_or(0))?;
    }
    save_image(&m.raw, out, a.bits)?;
    if a.append_cfa {
        let path = companion(out, ".input.tensor");
        tensor_io::save(&m.network_input(true)?, &path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn infer_with<T: Scalar>(dir: &Path, m: &MosaicImage) -> Result<Tensor<f64>> {
    let net = load_checkpoint::<T>(dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
    let append = match net.config().c_in {
        1 => false,
        5 => true,
        c => bail!(Failure::new(
            "shape",
            format!("checkpoint expects {c} input channels; mosaics give 1 or 5")
        )),
    };
    let input = m.network_input(append)?.cast::<T>();
    Ok(net.infer(&input)?.cast::<f64>().map(|v| v.clamp(0.0, 1.0))?)
}

fn demosaic_cmd(g: &GlobalArgs, a: &DemosaicArgs) -> Result<()> {
    let out = require_out(g)?;
    let raw = load_image(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let m = MosaicImage::new(raw, CfaPattern::resolve(&a.pattern.pattern)?, a.pattern.phase)?;
    let rgb = match &a.checkpoint {
        None => bilinear_demosaic(&m)?,
        Some(dir) => match g.precision.unwrap_or(Precision::Standard) {
            Precision::Standard => infer_with::<f32>(dir, &m)?,
            Precision::High => infer_with::<f64>(dir, &m)?,
        },
    };
    save_image(&rgb, out, a.bits)?;
    Ok(())
}

fn gradcheck(g: &GlobalArgs, a: &GradcheckArgs) -> Result<()> {
    let mut report = gradcheck_suite(g.seed.unwrap_or(0))?;
    if let Some(f) = &a.filter {
        report.checks.retain(|c| c.name.contains(f.as_str()));
    }
    if report.checks.is_empty() {
        bail!(Failure::new("gradcheck", "no checks selected".into()));
    }
    let failed = report.failures();
    emit(
        g,
        &json!({ "total": report.checks.len(), "failed": failed, "report": report }),
    )?;
    if failed > 0 {
        bail!(Failure::new(
            "gradcheck",
            format!("{failed} of {} checks failed", report.checks.len())
        ));
    }
    Ok(())
}

fn apply_train(t: &TrainArgs, cfg: &mut TrainConfig) {
    if let Some(v) = t.steps {
        cfg.steps = v;
    }
    if let Some(v) = t.lr {
        cfg.lr = v;
    }
    if let Some(v) = t.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = t.loss {
        cfg.loss = v.into();
    }
    if let Some(v) = t.log_every {
        cfg.log_every = v;
    }
}

fn train_toy(g: &GlobalArgs, a: &TrainToyArgs) -> Result<()> {
    let mut spec: ToyTrainSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => ToyTrainSpec::default(),
    };
    let t = &a.train;
    apply_train(t, &mut spec.train);
    let ds = &mut spec.dataset;
    if let Some(v) = a.count {
        ds.count = v;
    }
    if let Some(v) = t.patch_px {
        ds.patch = v;
    }
    if let Some(v) = &t.pattern {
        ds.pattern = v.clone();
    }
    if let Some(v) = t.noise {
        ds.noise = v;
    }
    ds.append_cfa |= a.append_cfa;
    spec.with_sca |= t.with_sca;
    if let Some(arch) = a.arch {
        spec.arch = arch;
    }
    if a.arch.is_some() || a.append_cfa {
        spec.arch = spec.arch.with_channels(spec.dataset.c_in(), 3);
    }
    if let Some(s) = g.seed {
        spec.dataset.seed = s;
        spec.init_seed = s;
        spec.train.seed = s;
    }
    if let Some(p) = g.precision {
        spec.precision = p;
    }
    let checkpoint = if a.save_checkpoint {
        Some(companion(require_out(g)?, ".ckpt"))
    } else {
        None
    };
    let record = run_toy_training(&spec, checkpoint.as_deref(), g.record_timing)?;
    emit(g, &record)
}

fn compare(g: &GlobalArgs, a: &CompareArgs) -> Result<()> {
    let mut spec: ExperimentSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => ExperimentSpec::default_comparison(),
    };
    let t = &a.train;
    apply_train(t, &mut spec.train);
    let c_in = if spec.append_cfa { 5 } else { 1 };
    if let Some(arch) = a.arch_a {
        spec.arm_a = arch.with_channels(c_in, 3);
    }
    if let Some(arch) = a.arch_b {
        spec.arm_b = arch.with_channels(c_in, 3);
    }
    if let Some(v) = a.train_count {
        spec.train_count = v;
    }
    if let Some(v) = a.val_count {
        spec.val_count = v;
    }
    if let Some(v) = t.patch_px {
        spec.patch = v;
    }
    if let Some(v) = &t.pattern {
        spec.pattern = v.clone();
    }
    if let Some(v) = t.noise {
        spec.noise = v;
    }
    spec.with_sca |= t.with_sca;
    if let Some(s) = g.seed {
        spec.dataset_seed = s;
        spec.init_seed = s;
        spec.train.seed = s;
    }
    if let Some(p) = g.precision {
        spec.precision = p;
    }
    let record = run_comparison(&spec, g.threads > 1, g.record_timing)?;
    for arm in record.arms() {
        if let Some(e) = &arm.error {
            log::warn!("arm {}: {e}", arm.label);
        }
    }
    emit(g, &record)
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "pfm", "tensor", "bin"];

fn image_pairs(pred: &Path, gt: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    if !pred.is_dir() {
        let name = pred
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        return Ok(vec![(name, pred.to_path_buf(), gt.to_path_buf())]);
    }
    if !gt.is_dir() {
        bail!(UsageError("--pred is a directory, so --gt must be one too".into()));
    }
    let mut names: Vec<String> = std::fs::read_dir(pred)
        .with_context(|| format!("listing {}", pred.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    names.sort();
    if names.is_empty() {
        bail!(Failure::new("format", format!("no images in {}", pred.display())));
    }
    names
        .into_iter()
        .map(|n| {
            let (p, t) = (pred.join(&n), gt.join(&n));
            if !t.is_file() {
                bail!(Failure::new(
                    "format",
                    format!("no ground truth for {n} in {}", gt.display())
                ));
            }
            Ok((n, p, t))
        })
        .collect()
}

#[derive(Serialize)]
struct EvalRow {
    name: String,
    psnr: f64,
    ssim: f64,
    mse: f64,
}

fn eval(g: &GlobalArgs, a: &EvalArgs) -> Result<()> {
    let mut rows = Vec::new();
    for (name, p, t) in image_pairs(&a.pred, &a.gt)? {
        let pred = load_image(&p).with_context(|| format!("reading {}", p.display()))?;
        let gt = load_image(&t).with_context(|| format!("reading {}", t.display()))?;
        let r = metrics::report(&pred, &gt, a.peak).with_context(|| format!("comparing {name}"))?;
        rows.push(EvalRow {
            name,
            psnr: r.psnr,
            ssim: r.ssim,
            mse: r.mse,
        });
    }
    let n = rows.len() as f64;
    let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
    let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
    if let Some(csv) = &a.csv {
        let mut s = String::from("name,psnr,ssim\n");
        for r in &rows {
            let _ = writeln!(s, "{},{:.4},{:.6}", r.name, r.psnr, r.ssim);
        }
        let _ = writeln!(s, "mean,{mean_psnr:.4},{mean_ssim:.6}");
        write_file(csv, s.as_bytes())?;
    }
    emit(
        g,
        &json!({ "images": rows, "mean_psnr": mean_psnr, "mean_ssim": mean_ssim }),
    )
}

fn parse_report_input(path: &Path) -> Result<ReportInput> {
    let value: serde_json::Value = read_json(path)?;
    if let Ok(v) = serde_json::from_value::<ReportInput>(value.clone()) {
        return Ok(v);
    }
    if let Ok(t) = serde_json::from_value::<SweepTable>(value.clone()) {
        return Ok(ReportInput::Sweep(t));
    }
    if let Ok(r) = serde_json::from_value::<RunRecord>(value.clone()) {
        return Ok(ReportInput::Runs { records: vec![r] });
    }
    if let Ok(records) = serde_json::from_value::<Vec<RunRecord>>(value) {
        return Ok(ReportInput::Runs { records });
    }
    bail!(Failure::new(
        "format",
        format!("{} is not a sweep table or run record", path.display())
    ))
}

fn report(g: &GlobalArgs, a: &ReportArgs) -> Result<()> {
    let input = match &a.input {
        Some(p) => parse_report_input(p)?,
        None => ReportInput::Sweep(reference_sweep(g.threads)?),
    };
    let table = match &g.out {
        Some(dir) => write_report(&input, dir)?,
        None => report_table(&input)?,
    };
    print!("{}", table.to_text());
    Ok(())
}
