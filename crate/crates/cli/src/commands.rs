use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use curve_core::bench::{plan_spread, run_bench, BenchOptions};
use curve_core::enhance::{enhance as enhance_image, EnhanceOptions, StateMode};
use curve_core::imaging::{load_image, save_image, to_float};
use curve_core::metrics::{psnr, ssim, MetricReport, MetricRow};
use curve_core::neural::{PolicyNetwork, WeightArchive};
use curve_core::reward::{LossProvider, ProxyLoss, RemoteClipLoss};
use curve_core::sac::{load_manifest, LogEvent, SacConfig, SacError, Trainer, TrainingImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::pool::{default_jobs, map_ordered};
use crate::{BenchArgs, EnhanceArgs, EvalArgs, PipelineArgs, TrainArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Fatal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Fatal(_) => 1,
        }
    }
}

fn fatal(e: impl std::fmt::Display) -> CliError {
    CliError::Fatal(e.to_string())
}

type CliResult = Result<ExitCode, CliError>;

fn status(failures: usize) -> ExitCode {
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn enhance_options(p: &PipelineArgs) -> Result<EnhanceOptions, CliError> {
    if p.steps == 0 {
        return Err(CliError::Usage("--steps must be at least 1".into()));
    }
    if p.segments == 0 {
        return Err(CliError::Usage("--segments must be at least 1".into()));
    }
    Ok(EnhanceOptions {
        steps: p.steps,
        segments: p.segments,
        state_mode: if p.state_crop {
            StateMode::CenterCrop
        } else {
            StateMode::Resize
        },
    })
}

/// Reads a policy archive; a directory is taken as a checkpoint.
fn load_policy(path: &Path) -> Result<PolicyNetwork<f32>, CliError> {
    let file = if path.is_dir() {
        path.join("policy.bin")
    } else {
        path.to_path_buf()
    };
    let archive =
        WeightArchive::load(&file).map_err(|e| fatal(format!("{}: {e}", file.display())))?;
    let mut policy = PolicyNetwork::<f32>::new(&mut ChaCha8Rng::seed_from_u64(0));
    policy
        .load_archive(&archive)
        .map_err(|e| fatal(format!("{}: {e}", file.display())))?;
    Ok(policy)
}

fn output_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

fn enhance_one(
    input: &Path,
    policy: &PolicyNetwork<f32>,
    opts: &EnhanceOptions,
    out_dir: &Path,
    trace: bool,
) -> Result<PathBuf, String> {
    let image = load_image(input).map_err(|e| e.to_string())?;
    let (out, tr) = enhance_image(&image, policy, opts).map_err(|e| e.to_string())?;
    let stem = output_stem(input);
    let dest = out_dir.join(format!("{stem}.png"));
    save_image(&dest, &out).map_err(|e| e.to_string())?;
    if trace {
        let path = out_dir.join(format!("{stem}.trace.json"));
        let json = serde_json::to_string(&tr).map_err(|e| e.to_string())?;
        fs::write(&path, json).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(dest)
}

pub fn enhance(a: EnhanceArgs) -> CliResult {
    let opts = enhance_options(&a.pipeline)?;
    let mut stems: Vec<String> = a.inputs.iter().map(|p| output_stem(p)).collect();
    stems.sort();
    if let Some(w) = stems.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::Usage(format!(
            "two inputs would both be written as {}.png",
            w[0]
        )));
    }
    let policy = load_policy(&a.weights)?;
    fs::create_dir_all(&a.out).map_err(|e| fatal(format!("{}: {e}", a.out.display())))?;
    let jobs = default_jobs(a.jobs);
    let results = map_ordered(&a.inputs, jobs, |p| {
        enhance_one(p, &policy, &opts, &a.out, a.trace)
    });
    let mut failures = 0;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for (input, r) in a.inputs.iter().zip(results) {
        match r {
            Ok(dest) => {
                let _ = writeln!(out, "{}", dest.display());
            }
            Err(e) => {
                failures += 1;
                eprintln!("{}: {e}", input.display());
            }
        }
    }
    eprintln!(
        "enhanced {} of {} images",
        a.inputs.len() - failures,
        a.inputs.len()
    );
    Ok(status(failures))
}

enum RewardChoice {
    Proxy,
    Remote(String),
}

fn parse_reward(s: &str) -> Result<RewardChoice, CliError> {
    if s == "proxy" {
        return Ok(RewardChoice::Proxy);
    }
    match s.strip_prefix("remote:") {
        Some(url) if !url.is_empty() => Ok(RewardChoice::Remote(url.to_string())),
        _ => Err(CliError::Usage(format!(
            "--reward must be `proxy` or `remote:URL`, got {s:?}"
        ))),
    }
}

fn sac_error(e: SacError) -> CliError {
    match e {
        SacError::Config(_) => CliError::Usage(e.to_string()),
        other => fatal(other),
    }
}

pub fn train(a: TrainArgs) -> CliResult {
    let reward = parse_reward(&a.reward)?;
    let config = match &a.config {
        Some(p) => SacConfig::load(p).map_err(sac_error)?,
        None => SacConfig::default(),
    };
    config.validate().map_err(sac_error)?;
    if a.log_every == 0 {
        return Err(CliError::Usage("--log-every must be at least 1".into()));
    }
    let provider: Box<dyn LossProvider> = match reward {
        RewardChoice::Proxy => Box::new(ProxyLoss),
        RewardChoice::Remote(url) => {
            let remote = RemoteClipLoss::new(url.clone());
            remote
                .health_check()
                .map_err(|e| fatal(format!("reward service {url} is not healthy: {e}")))?;
            Box::new(remote)
        }
    };
    let entries = load_manifest(&a.manifest).map_err(sac_error)?;
    let data = TrainingImage::load_all(&entries, config.crop_size).map_err(sac_error)?;
    eprintln!("loaded {} training images", data.len());

    let mut trainer = match &a.resume {
        Some(dir) => Trainer::resume(config, dir, a.seed).map_err(sac_error)?,
        None => Trainer::new(config, a.seed).map_err(sac_error)?,
    };
    if a.resume.is_some() {
        eprintln!("resuming at step {}", trainer.step());
    }
    fs::create_dir_all(&a.out).map_err(|e| fatal(format!("{}: {e}", a.out.display())))?;

    let mut log: Box<dyn Write> = match &a.log {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| fatal(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    };
    let mut write_error: Option<io::Error> = None;
    let log_every = a.log_every;
    let mut sink = |event: &LogEvent| {
        if write_error.is_some() {
            return;
        }
        if let LogEvent::Update { step, .. } = event {
            if step % log_every != 0 {
                return;
            }
        }
        let line = serde_json::to_string(event).expect("log events serialize");
        if let Err(e) = writeln!(log, "{line}") {
            write_error = Some(e);
        }
    };
    let report = trainer
        .run(&data, provider.as_ref(), Some(&a.out), &mut sink)
        .map_err(sac_error)?;
    if let Some(e) = write_error {
        return Err(fatal(format!("writing training log: {e}")));
    }
    log.flush().map_err(|e| fatal(format!("writing training log: {e}")))?;

    let final_dir = a.out.join("final");
    trainer.save_checkpoint(&final_dir).map_err(sac_error)?;
    let policy_path = a.out.join("policy.bin");
    fs::copy(final_dir.join("policy.bin"), &policy_path)
        .map_err(|e| fatal(format!("{}: {e}", policy_path.display())))?;
    let r = &report.episode_returns;
    let tail = &r[r.len().saturating_sub(100)..];
    let tail_mean = if tail.is_empty() {
        0.0
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    eprintln!(
        "trained to step {} ({} updates, {} episodes, {} discarded); last-100 mean return {tail_mean:.4}; policy written to {}",
        report.final_step,
        report.updates,
        r.len(),
        report.discarded_episodes,
        policy_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairEntry {
    input: PathBuf,
    target: PathBuf,
}

fn load_pairs(path: &Path) -> Result<Vec<PairEntry>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| fatal(format!("{}: {e}", path.display())))?;
    let mut pairs: Vec<PairEntry> =
        serde_json::from_str(&text).map_err(|e| fatal(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    for p in &mut pairs {
        if p.input.is_relative() {
            p.input = base.join(&p.input);
        }
        if p.target.is_relative() {
            p.target = base.join(&p.target);
        }
    }
    Ok(pairs)
}

enum PairOutcome {
    Scored(MetricRow),
    Skipped(String),
    Failed(String),
}

fn eval_one(pair: &PairEntry, policy: &PolicyNetwork<f32>, opts: &EnhanceOptions) -> PairOutcome {
    let run = || -> Result<PairOutcome, String> {
        let input = load_image(&pair.input).map_err(|e| e.to_string())?;
        let target = load_image(&pair.target).map_err(|e| e.to_string())?;
        if input.dims() != target.dims() {
            return Ok(PairOutcome::Skipped(format!(
                "shape {:?} does not match target {:?}",
                input.dims(),
                target.dims()
            )));
        }
        let (out, _) = enhance_image(&input, policy, opts).map_err(|e| e.to_string())?;
        let (a, b) = (to_float(&out), to_float(&target));
        Ok(PairOutcome::Scored(MetricRow {
            path: pair.input.display().to_string(),
            psnr_db: psnr(&a, &b).map_err(|e| e.to_string())?,
            ssim: ssim(&a, &b).map_err(|e| e.to_string())?,
        }))
    };
    run().unwrap_or_else(PairOutcome::Failed)
}

pub fn eval(a: EvalArgs) -> CliResult {
    let opts = enhance_options(&a.pipeline)?;
    let pairs = load_pairs(&a.pairs)?;
    if pairs.is_empty() {
        return Err(fatal(format!("{}: no pairs to evaluate", a.pairs.display())));
    }
    let policy = load_policy(&a.weights)?;
    let outcomes = map_ordered(&pairs, default_jobs(a.jobs), |p| eval_one(p, &policy, &opts));
    let (mut skipped, mut failed) = (0, 0);
    let mut rows = Vec::new();
    for (pair, o) in pairs.iter().zip(outcomes) {
        match o {
            PairOutcome::Scored(r) => rows.push(r),
            PairOutcome::Skipped(why) => {
                skipped += 1;
                eprintln!("warning: skipping {}: {why}", pair.input.display());
            }
            PairOutcome::Failed(why) => {
                failed += 1;
                eprintln!("{}: {why}", pair.input.display());
            }
        }
    }
    let report = MetricReport::from_rows(rows)
        .map_err(|_| fatal("no pair could be scored; no CSV written"))?;
    match &a.csv {
        Some(p) => {
            let f = File::create(p).map_err(|e| fatal(format!("{}: {e}", p.display())))?;
            report
                .write_csv(BufWriter::new(f))
                .map_err(|e| fatal(format!("{}: {e}", p.display())))?;
        }
        None => report
            .write_csv(io::stdout().lock())
            .map_err(|e| fatal(format!("stdout: {e}")))?,
    }
    eprintln!(
        "mean PSNR {:.4} dB, mean SSIM {:.6} over {} pairs ({skipped} skipped, {failed} failed)",
        report.mean_psnr_db,
        report.mean_ssim,
        report.rows.len()
    );
    Ok(status(skipped + failed))
}

pub fn bench(a: BenchArgs) -> CliResult {
    let opts = enhance_options(&a.pipeline)?;
    if a.repeat == 0 {
        return Err(CliError::Usage("--repeat must be at least 1".into()));
    }
    if !curve_core::tone_curve::SUPPORTED_BIT_DEPTHS.contains(&a.bit_depth) {
        return Err(CliError::Usage(format!(
            "--bit-depth must be one of {:?}",
            curve_core::tone_curve::SUPPORTED_BIT_DEPTHS
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let policy = match &a.weights {
        Some(p) => load_policy(p)?,
        None => PolicyNetwork::<f32>::new(&mut rng),
    };
    let options = BenchOptions {
        repeats: a.repeat,
        enhance: opts,
        naive: !a.no_naive,
        bit_depth: a.bit_depth,
    };
    let rows = run_bench(&policy, &a.resolutions, &options, &mut rng).map_err(fatal)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    if a.json {
        let json = serde_json::to_string_pretty(&rows).expect("rows serialize");
        let _ = writeln!(out, "{json}");
    } else {
        let _ = writeln!(
            out,
            "{:<12} {:>10} {:>9} {:>9} {:>9} {:>9} {:>10} {:>8} {:>6}",
            "resolution", "size", "state_ms", "plan_ms", "map_ms", "lut_ms", "naive_ms", "speedup", "match"
        );
        for r in &rows {
            let size = format!("{}x{}", r.resolution.height, r.resolution.width);
            let naive = r.naive_ms.map_or("-".into(), |v| format!("{v:.3}"));
            let speedup = r.speedup().map_or("-".into(), |v| format!("{v:.2}x"));
            let matched = r.outputs_match.map_or("-", |m| if m { "yes" } else { "NO" });
            let _ = writeln!(
                out,
                "{:<12} {:>10} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>10} {:>8} {:>6}",
                r.resolution.label, size, r.state_ms, r.plan_ms, r.map_ms, r.lut_total_ms, naive, speedup, matched
            );
        }
    }
    eprintln!(
        "plan stage spread across resolutions: {:.1}%",
        100.0 * plan_spread(&rows)
    );
    let mismatches = rows.iter().filter(|r| r.outputs_match == Some(false)).count();
    if mismatches > 0 {
        eprintln!("LUT and naive outputs differ at {mismatches} resolution(s)");
    }
    Ok(status(mismatches))
}
