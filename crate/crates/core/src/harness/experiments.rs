//! Solve and experiment drivers. Restarts run on a rayon pool (size capped
//! by `TREG_THREADS`) and are joined before anything is written, so every
//! output file is independent of scheduling.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentKind;
use super::{io, metrics, Workspace};
use crate::error::{Result, TregError};
use crate::operators::flip180;
use crate::rng::derive_seed;
use crate::sampler::{self, Branch, RunOutput, RunTrace, SolverConfig};
use crate::vecops;

pub const THREADS_ENV: &str = "TREG_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Conditioned,
    Unconditioned,
}

impl Arm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arm::Conditioned => "conditioned",
            Arm::Unconditioned => "unconditioned",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RestartSummary {
    pub arm: Arm,
    pub index: usize,
    pub seed: u64,
    /// `None` for a failed restart.
    pub error: Option<String>,
    /// Assigned mode or symmetry class.
    pub class: Option<String>,
    /// `None` when the PSNR is infinite or no truth is known.
    pub psnr: Option<f64>,
    pub y_mse: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub concept: Option<String>,
    pub completed: usize,
    pub failed: usize,
    pub class_counts: BTreeMap<String, usize>,
    /// Fraction of completed restarts in the target class.
    pub target_fraction: f64,
    pub mean_pixel_variance: Option<f64>,
    pub variance_profile: Option<Vec<f64>>,
    pub mean_psnr: Option<f64>,
    pub mean_y_mse: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceSummary {
    pub first_gamma_t: Option<usize>,
    pub last_gamma_t: Option<usize>,
    pub first_gamma_data_consistency: Option<f64>,
    pub last_gamma_data_consistency: Option<f64>,
    /// Mean DSM loss at selected timesteps (those visited by the sampler).
    pub dsm_loss_at: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Aggregate {
    Solve,
    Ambiguity {
        target: String,
        arms: Vec<ArmSummary>,
    },
    Symmetry {
        target: String,
        /// `max |A(x*) - A(flip180(x*))|`.
        operator_symmetry_error: f64,
        arms: Vec<ArmSummary>,
    },
    Convergence(ConvergenceSummary),
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub kind: String,
    pub seed: u64,
    pub operator: String,
    pub restarts: Vec<RestartSummary>,
    pub aggregate: Aggregate,
    /// Files written next to `report.json`, relative to the output directory.
    pub manifest: Vec<String>,
}

impl ExperimentReport {
    pub fn arm(&self, arm: Arm) -> Option<&ArmSummary> {
        match &self.aggregate {
            Aggregate::Ambiguity { arms, .. } | Aggregate::Symmetry { arms, .. } => {
                arms.iter().find(|a| a.arm == arm)
            }
            _ => None,
        }
    }
}

/// Pool sized by `TREG_THREADS`, or rayon's default when unset.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| TregError::config(THREADS_ENV, format!("expected a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| TregError::Contract(format!("thread pool: {e}")))
}

struct Job {
    arm: Arm,
    index: usize,
    seed: u64,
    concept: Option<String>,
}

struct Finished {
    job: Job,
    result: Result<RunOutput>,
}

fn run_jobs(ws: &Workspace, jobs: Vec<Job>) -> Result<Vec<Finished>> {
    let problem = ws.problem();
    let pool = thread_pool()?;
    let results: Vec<Result<RunOutput>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let cfg = SolverConfig {
                    seed: job.seed,
                    ..ws.config.solver.clone()
                };
                sampler::run(&cfg, &problem, &ws.measurement, job.concept.as_deref())
            })
            .collect()
    });
    Ok(jobs
        .into_iter()
        .zip(results)
        .map(|(job, result)| Finished { job, result })
        .collect())
}

struct Writer {
    dir: PathBuf,
    manifest: Vec<String>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: Vec::new(),
        })
    }

    fn path(&mut self, name: String) -> PathBuf {
        let p = self.dir.join(&name);
        self.manifest.push(name);
        p
    }

    fn run(&mut self, ws: &Workspace, tag: &str, seed: u64, out: &RunOutput) -> Result<()> {
        let (h, w) = ws.op.shape();
        io::write_pgm(&self.path(format!("recon_{tag}.pgm")), &out.x_final, h, w)?;
        io::write_raw(&self.path(format!("raw_{tag}.f64")), &out.x_final, ws.measurement.sigma0, seed)?;
        io::write_trace(&self.path(format!("trace_{tag}.csv")), &out.trace)?;
        Ok(())
    }

    fn finish(self, report: &ExperimentReport) -> Result<()> {
        let mut text = serde_json::to_string_pretty(report)?;
        text.push('\n');
        fs::write(self.dir.join("report.json"), text)?;
        Ok(())
    }
}

fn finite_psnr(ws: &Workspace, x: &[f64]) -> Result<Option<f64>> {
    match &ws.truth {
        Some(t) => {
            let p = metrics::psnr(x, t, ws.config.experiment.peak)?;
            Ok(p.is_finite().then_some(p))
        }
        None => Ok(None),
    }
}

fn summarize(ws: &Workspace, f: &Finished, class: Option<String>) -> Result<RestartSummary> {
    let (psnr, y_mse, error) = match &f.result {
        Ok(out) => (
            finite_psnr(ws, &out.x_final)?,
            Some(metrics::y_mse(&ws.op, &out.x_final, &ws.measurement.y)?),
            None,
        ),
        Err(e) => (None, None, Some(e.to_string())),
    };
    Ok(RestartSummary {
        arm: f.job.arm,
        index: f.job.index,
        seed: f.job.seed,
        error,
        class,
        psnr,
        y_mse,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn restart_jobs(ws: &Workspace, arms: &[(Arm, Option<String>)]) -> Vec<Job> {
    let n = ws.config.experiment.restarts;
    arms.iter()
        .flat_map(|(arm, concept)| {
            (0..n).map(move |i| Job {
                arm: *arm,
                index: i,
                seed: derive_seed(ws.config.seed, i as u64),
                concept: concept.clone(),
            })
        })
        .collect()
}

fn target_concept(ws: &Workspace) -> Result<String> {
    ws.config
        .experiment
        .concept
        .clone()
        .ok_or_else(|| TregError::config("experiment.concept", "this experiment needs a target concept"))
}

/// One reconstruction with the configured concept and seed.
pub fn solve(ws: &Workspace, out_dir: &Path) -> Result<ExperimentReport> {
    let job = Job {
        arm: if ws.config.experiment.concept.is_some() { Arm::Conditioned } else { Arm::Unconditioned },
        index: 0,
        seed: ws.config.seed,
        concept: ws.config.experiment.concept.clone(),
    };
    let mut finished = run_jobs(ws, vec![job])?;
    let f = finished.remove(0);
    let Ok(out) = &f.result else {
        return Err(f.result.unwrap_err());
    };
    let mut writer = Writer::new(out_dir)?;
    writer.run(ws, "solve", f.job.seed, out)?;
    let report = ExperimentReport {
        kind: "solve".into(),
        seed: ws.config.seed,
        operator: ws.op.id(),
        restarts: vec![summarize(ws, &f, None)?],
        aggregate: Aggregate::Solve,
        manifest: writer.manifest.clone(),
    };
    writer.finish(&report)?;
    Ok(report)
}

pub fn run_experiment(kind: ExperimentKind, ws: &Workspace, out_dir: &Path) -> Result<ExperimentReport> {
    match kind {
        ExperimentKind::Ambiguity => ambiguity(ws, out_dir),
        ExperimentKind::Symmetry => symmetry(ws, out_dir),
        ExperimentKind::Convergence => convergence(ws, out_dir),
    }
}

fn arm_summary(
    ws: &Workspace,
    writer: &mut Writer,
    arm: Arm,
    concept: Option<String>,
    target: &str,
    runs: &[(&Finished, Option<String>)],
) -> Result<ArmSummary> {
    let ok: Vec<(&RunOutput, &Option<String>)> = runs
        .iter()
        .filter_map(|(f, c)| f.result.as_ref().ok().map(|o| (o, c)))
        .collect();
    let mut class_counts = BTreeMap::new();
    for (_, c) in &ok {
        if let Some(c) = c {
            *class_counts.entry(c.clone()).or_insert(0) += 1;
        }
    }
    let hits = class_counts.get(target).copied().unwrap_or(0);
    let images: Vec<Vec<f64>> = ok.iter().map(|(o, _)| o.x_final.clone()).collect();
    let (h, w) = ws.op.shape();
    let variance = if images.len() >= 2 {
        let v = metrics::pixel_variance(&images, w, ws.config.experiment.profile_row)?;
        io::write_raw(
            &writer.path(format!("variance_{}.f64", arm.as_str())),
            &v.map,
            ws.measurement.sigma0,
            ws.config.seed,
        )?;
        let peak = v.map.iter().cloned().fold(0.0, f64::max);
        let scaled: Vec<f64> = v.map.iter().map(|x| if peak > 0.0 { x / peak } else { 0.0 }).collect();
        io::write_pgm(&writer.path(format!("variance_{}.pgm", arm.as_str())), &scaled, h, w)?;
        Some(v)
    } else {
        None
    };
    Ok(ArmSummary {
        arm,
        concept,
        completed: ok.len(),
        failed: runs.len() - ok.len(),
        class_counts,
        target_fraction: if ok.is_empty() { 0.0 } else { hits as f64 / ok.len() as f64 },
        mean_pixel_variance: variance.as_ref().map(|v| v.mean()),
        variance_profile: variance.map(|v| v.profile),
        mean_psnr: mean(ok.iter().filter_map(|(o, _)| finite_psnr(ws, &o.x_final).ok().flatten())),
        mean_y_mse: mean(
            ok.iter()
                .filter_map(|(o, _)| metrics::y_mse(&ws.op, &o.x_final, &ws.measurement.y).ok()),
        ),
    })
}

/// Runs both arms, classifies every completed restart with `classify`, and
/// writes per-restart files plus per-arm variance maps.
fn two_arm(
    ws: &Workspace,
    out_dir: &Path,
    target: &str,
    classify: impl Fn(&RunOutput) -> String,
) -> Result<(Vec<RestartSummary>, Vec<ArmSummary>, Writer)> {
    let concept = target_concept(ws)?;
    let arms = [(Arm::Conditioned, Some(concept)), (Arm::Unconditioned, None)];
    let finished = run_jobs(ws, restart_jobs(ws, &arms))?;
    let mut writer = Writer::new(out_dir)?;
    let mut restarts = Vec::with_capacity(finished.len());
    let classes: Vec<Option<String>> = finished
        .iter()
        .map(|f| f.result.as_ref().ok().map(&classify))
        .collect();
    for (f, class) in finished.iter().zip(&classes) {
        if let Ok(out) = &f.result {
            writer.run(ws, &format!("{}_{:02}", f.job.arm.as_str(), f.job.index), f.job.seed, out)?;
        } else if let Err(e) = &f.result {
            log::warn!("{} restart {} failed: {e}", f.job.arm.as_str(), f.job.index);
        }
        restarts.push(summarize(ws, f, class.clone())?);
    }
    let mut summaries = Vec::new();
    for (arm, concept) in arms {
        let runs: Vec<(&Finished, Option<String>)> = finished
            .iter()
            .zip(&classes)
            .filter(|(f, _)| f.job.arm == arm)
            .map(|(f, c)| (f, c.clone()))
            .collect();
        summaries.push(arm_summary(ws, &mut writer, arm, concept, target, &runs)?);
    }
    Ok((restarts, summaries, writer))
}

/// Index of the concept whose mean latent is nearest to `z`.
pub fn nearest_concept(ws: &Workspace, z: &[f64]) -> usize {
    let means: Vec<Vec<f64>> = ws.prior.concepts().iter().map(|c| c.mean()).collect();
    (0..means.len())
        .min_by(|&a, &b| vecops::dist_sq(z, &means[a]).total_cmp(&vecops::dist_sq(z, &means[b])))
        .unwrap_or(0)
}

fn ambiguity(ws: &Workspace, out_dir: &Path) -> Result<ExperimentReport> {
    if ws.prior.num_concepts() < 2 {
        return Err(TregError::config("prior", "the ambiguity experiment needs >= 2 concepts"));
    }
    let target = target_concept(ws)?;
    let (restarts, arms, writer) = two_arm(ws, out_dir, &target, |out| {
        ws.prior.concepts()[nearest_concept(ws, &out.z_final)].label.clone()
    })?;
    let report = ExperimentReport {
        kind: "ambiguity".into(),
        seed: ws.config.seed,
        operator: ws.op.id(),
        restarts,
        aggregate: Aggregate::Ambiguity { target, arms },
        manifest: writer.manifest.clone(),
    };
    writer.finish(&report)?;
    Ok(report)
}

pub const SYMMETRY_CLASSES: [&str; 2] = ["reference", "flipped"];

fn symmetry(ws: &Workspace, out_dir: &Path) -> Result<ExperimentReport> {
    if ws.op.is_linear() {
        return Err(TregError::config("operator.kind", "the symmetry experiment needs phase_retrieval"));
    }
    let reference = ws
        .truth
        .clone()
        .ok_or_else(|| TregError::config("truth", "the symmetry experiment needs a reference image"))?;
    let (h, w) = ws.op.shape();
    let flipped = flip180(&reference, h, w);
    let a = ws.op.apply(&reference)?;
    let b = ws.op.apply(&flipped)?;
    let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let operator_symmetry_error = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    if operator_symmetry_error > 1e-12 * scale {
        return Err(TregError::Contract(format!(
            "operator is not flip-symmetric (error {operator_symmetry_error:e})"
        )));
    }
    let target = SYMMETRY_CLASSES[0].to_string();
    let (restarts, arms, writer) = two_arm(ws, out_dir, &target, |out| {
        let k = usize::from(vecops::dist_sq(&out.x_final, &flipped) < vecops::dist_sq(&out.x_final, &reference));
        SYMMETRY_CLASSES[k].to_string()
    })?;
    let report = ExperimentReport {
        kind: "symmetry".into(),
        seed: ws.config.seed,
        operator: ws.op.id(),
        restarts,
        aggregate: Aggregate::Symmetry {
            target,
            operator_symmetry_error,
            arms,
        },
        manifest: writer.manifest.clone(),
    };
    writer.finish(&report)?;
    Ok(report)
}

/// Timesteps whose mean DSM loss is reported in the summary.
pub const DSM_CHECKPOINTS: [usize; 2] = [800, 100];

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

fn convergence(ws: &Workspace, out_dir: &Path) -> Result<ExperimentReport> {
    let arm = if ws.config.experiment.concept.is_some() { Arm::Conditioned } else { Arm::Unconditioned };
    let finished = run_jobs(ws, restart_jobs(ws, &[(arm, ws.config.experiment.concept.clone())]))?;
    let mut writer = Writer::new(out_dir)?;
    let mut restarts = Vec::new();
    let mut traces: Vec<&RunTrace> = Vec::new();
    for f in &finished {
        if let Ok(out) = &f.result {
            writer.run(ws, &format!("{}_{:02}", arm.as_str(), f.job.index), f.job.seed, out)?;
            traces.push(&out.trace);
        }
        restarts.push(summarize(ws, f, None)?);
    }

    let mut csv = String::from(
        "t,branch,data_consistency_mean,data_consistency_std,dsm_loss_mean,dsm_loss_std,null_similarity_mean,null_similarity_std\n",
    );
    let mut per_t: Vec<(usize, Branch, f64, f64)> = Vec::new();
    if let Some(first) = traces.first() {
        for (i, rec) in first.records.iter().enumerate() {
            let col = |f: fn(&sampler::TraceRecord) -> f64| -> Vec<f64> {
                traces.iter().map(|t| f(&t.records[i])).collect()
            };
            let mut line = format!("{},{}", rec.t, rec.branch.as_str());
            let mut means = [0.0; 3];
            for (j, values) in [
                col(|r| r.data_consistency),
                col(|r| r.dsm_loss),
                col(|r| r.null_similarity),
            ]
            .iter()
            .enumerate()
            {
                let m = values.iter().sum::<f64>() / values.len() as f64;
                means[j] = m;
                line.push_str(&format!(",{},{}", m, sample_std(values, m)));
            }
            csv.push_str(&line);
            csv.push('\n');
            per_t.push((rec.t, rec.branch, means[0], means[1]));
        }
    }
    fs::write(writer.path("trace_mean.csv".into()), csv)?;

    let gamma: Vec<&(usize, Branch, f64, f64)> = per_t.iter().filter(|r| r.1 == Branch::Gamma).collect();
    let summary = ConvergenceSummary {
        first_gamma_t: gamma.first().map(|r| r.0),
        last_gamma_t: gamma.last().map(|r| r.0),
        first_gamma_data_consistency: gamma.first().map(|r| r.2),
        last_gamma_data_consistency: gamma.last().map(|r| r.2),
        dsm_loss_at: DSM_CHECKPOINTS
            .iter()
            .filter_map(|&t| per_t.iter().find(|r| r.0 == t).map(|r| (t, r.3)))
            .collect(),
    };
    let report = ExperimentReport {
        kind: "convergence".into(),
        seed: ws.config.seed,
        operator: ws.op.id(),
        restarts,
        aggregate: Aggregate::Convergence(summary),
        manifest: writer.manifest.clone(),
    };
    writer.finish(&report)?;
    Ok(report)
}
