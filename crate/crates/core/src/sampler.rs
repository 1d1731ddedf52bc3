//! The text-regularized reverse sampling loop.
//!
//! Each visited timestep computes the guided Tweedie pivot. Inside the
//! update range Γ the pivot is decoded, made measurement-consistent in pixel
//! space, re-encoded, blended with the pivot and re-noised with the total
//! noise; the null embedding is then pushed away from the consistent image.
//! Outside Γ the step is a plain DDIM step, optionally followed by a latent
//! DPS correction.

use serde::{Deserialize, Serialize};

use crate::codec::LatentCodec;
use crate::consistency::{adam_solve, cg_solve, AdamParams, CgParams};
use crate::error::{check_len, Result, TregError};
use crate::negation::{EmbeddingState, NegationStep};
use crate::operators::{ForwardOperator, Measurement};
use crate::prior::{eps_cfg, tweedie, Condition, ConceptPrior, NullMode};
use crate::rng::{self, streams};
use crate::schedule::NoiseSchedule;
use crate::vecops;

/// Latent norm above which a run is declared diverged.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// Stochasticity `s_t = eta * beta_tilde_t` of the total noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stochasticity {
    /// `sqrt(abar_prev (1 - abar_prev))`
    #[default]
    Default,
    Deterministic,
    /// One value per visited step.
    Custom(Vec<f64>),
}

/// Noise used by steps outside Γ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PlainNoise {
    #[default]
    Deterministic,
    /// Same total noise as the Γ branch.
    Total,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RhoRule {
    /// `rho_t = sqrt(abar_prev)`
    #[default]
    SqrtAlphaBarPrev,
}

/// Residual whose latent gradient drives the DPS step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DpsLoss {
    /// `||A(D(z0)) - y||`
    #[default]
    Norm,
    /// `||A(D(z0)) - y||^2`
    SquaredNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub nfe: usize,
    pub omega1: f64,
    pub omega2: f64,
    pub gamma_mod: usize,
    pub gamma_tmax: usize,
    pub cg: CgParams,
    pub adam: AdamParams,
    pub use_adam: bool,
    pub stochasticity: Stochasticity,
    pub plain_noise: PlainNoise,
    pub dps_enabled: bool,
    pub rho_rule: RhoRule,
    /// Multiplier on the DPS step size rule.
    pub rho_scale: f64,
    pub dps_loss: DpsLoss,
    pub negation_enabled: bool,
    pub negation_lr: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            nfe: 200,
            omega1: 7.5,
            omega2: 0.0,
            gamma_mod: 3,
            gamma_tmax: 850,
            cg: CgParams::default(),
            adam: AdamParams::default(),
            use_adam: false,
            stochasticity: Stochasticity::Default,
            plain_noise: PlainNoise::Deterministic,
            dps_enabled: false,
            rho_rule: RhoRule::SqrtAlphaBarPrev,
            rho_scale: 1.0,
            dps_loss: DpsLoss::Norm,
            negation_enabled: true,
            negation_lr: 0.02,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn in_gamma(&self, t: usize) -> bool {
        self.gamma_mod > 0 && t.is_multiple_of(self.gamma_mod) && t <= self.gamma_tmax
    }

    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.gamma_mod == 0 {
            return Err(TregError::config("solver.gamma_mod", "must be positive"));
        }
        if self.gamma_tmax > sched.timesteps() {
            return Err(TregError::config(
                "solver.gamma_tmax",
                format!("{} exceeds T = {}", self.gamma_tmax, sched.timesteps()),
            ));
        }
        if !(self.omega1 >= 0.0) || !(self.omega2 >= 0.0) {
            return Err(TregError::config("solver.omega", "guidance scales must be >= 0"));
        }
        if !(self.negation_lr >= 0.0) {
            return Err(TregError::config("solver.negation_lr", "must be >= 0"));
        }
        if !(self.rho_scale >= 0.0) {
            return Err(TregError::config("solver.rho_scale", "must be >= 0"));
        }
        let steps = sched.subsample_steps(self.nfe)?;
        if let Stochasticity::Custom(values) = &self.stochasticity {
            if values.len() != steps.len() {
                return Err(TregError::config(
                    "solver.stochasticity",
                    format!("{} values for {} steps", values.len(), steps.len()),
                ));
            }
            for (i, s) in values.iter().enumerate() {
                let abar_prev = sched.alpha_bar(steps.get(i + 1).copied().unwrap_or(0));
                if !(*s >= 0.0) || s * s > 1.0 - abar_prev {
                    return Err(TregError::config(
                        "solver.stochasticity",
                        format!("s = {s} at step {i} exceeds sqrt(1 - abar_prev)"),
                    ));
                }
            }
        }
        Ok(())
    }

    fn stochasticity_at(&self, step: usize, abar_prev: f64) -> f64 {
        match &self.stochasticity {
            Stochasticity::Default => NoiseSchedule::default_stochasticity(abar_prev),
            Stochasticity::Deterministic => 0.0,
            Stochasticity::Custom(v) => v[step],
        }
    }

    pub fn rho(&self, abar_prev: f64) -> f64 {
        match self.rho_rule {
            RhoRule::SqrtAlphaBarPrev => self.rho_scale * abar_prev.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Gamma,
    Plain,
    Dps,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Gamma => "gamma",
            Branch::Plain => "plain",
            Branch::Dps => "dps",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub branch: Branch,
    /// `||y - A(D(z0|t))||^2` of the guided pivot.
    pub data_consistency: f64,
    /// `(1 - abar)/abar ||eps - eps(z_t', c, t)||^2` with a fresh `eps`.
    pub dsm_loss: f64,
    pub null_similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
}

impl RunTrace {
    pub fn gamma_records(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| r.branch == Branch::Gamma)
    }

    pub fn at(&self, t: usize) -> Option<&TraceRecord> {
        self.records.iter().find(|r| r.t == t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegationEvent {
    pub t: usize,
    pub step: NegationStep,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub x_final: Vec<f64>,
    pub z_final: Vec<f64>,
    pub trace: RunTrace,
    pub negation: Vec<NegationEvent>,
    /// `z_T` followed by every iterate, when requested.
    pub latents: Vec<Vec<f64>>,
}

/// Shared, immutable pieces of an inverse problem.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub sched: &'a NoiseSchedule,
    pub prior: &'a ConceptPrior,
    pub codec: &'a LatentCodec,
    pub op: &'a ForwardOperator,
    /// Initial embedding state; every run works on its own copy.
    pub embedding: &'a EmbeddingState,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub record_latents: bool,
    /// Overrides the seeded `z_T`.
    pub initial_latent: Option<Vec<f64>>,
}

/// `ema = abar_prev z0_y + (1 - abar_prev) z0_t`
pub fn ema_combine(z0_y: &[f64], z0_t: &[f64], abar_prev: f64) -> Vec<f64> {
    vecops::lincomb(abar_prev, z0_y, 1.0 - abar_prev, z0_t)
}

/// `[sqrt(1 - abar_prev - s^2) eps_cfg + s eps_rand] / sqrt(1 - abar_prev)`.
/// With `abar_prev = 1` (and hence `s = 0`) the coefficient vanishes in the
/// DDIM step and `eps_cfg` is returned.
pub fn total_noise(eps_cfg: &[f64], eps_rand: &[f64], abar_prev: f64, s_t: f64) -> Result<Vec<f64>> {
    check_len("total noise", eps_cfg.len(), eps_rand.len())?;
    let budget = 1.0 - abar_prev;
    if !(s_t >= 0.0) || s_t * s_t > budget {
        return Err(TregError::Contract(format!(
            "stochasticity {s_t} exceeds sqrt(1 - abar_prev) = {}",
            budget.max(0.0).sqrt()
        )));
    }
    if budget == 0.0 {
        return Ok(eps_cfg.to_vec());
    }
    let norm = budget.sqrt();
    let det = (budget - s_t * s_t).max(0.0).sqrt() / norm;
    Ok(vecops::lincomb(det, eps_cfg, s_t / norm, eps_rand))
}

/// `sqrt(abar_prev) z_hat + sqrt(1 - abar_prev) eps_tilde`
pub fn ddim_step(z_hat: &[f64], eps_tilde: &[f64], abar_prev: f64) -> Vec<f64> {
    vecops::lincomb(abar_prev.sqrt(), z_hat, (1.0 - abar_prev).sqrt(), eps_tilde)
}

/// Conditioning of the guided denoiser used by the DPS correction.
#[derive(Debug, Clone, Copy)]
pub struct Guidance<'a> {
    pub concept: Option<usize>,
    pub null_weights: &'a [f64],
    pub omega: f64,
}

impl Guidance<'_> {
    fn eps(&self, prior: &ConceptPrior, z_t: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        let eps_null = prior.eps(z_t, t, &Condition::Null(self.null_weights), sched)?;
        match self.concept {
            Some(k) => {
                let eps_c = prior.eps(z_t, t, &Condition::Concept(k), sched)?;
                Ok(eps_cfg(&eps_null, &eps_c, self.omega))
            }
            None => Ok(eps_null),
        }
    }

    /// Guided Tweedie estimate `E_null + omega (E_c - E_null)`.
    pub fn denoise(&self, prior: &ConceptPrior, z_t: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        tweedie(z_t, t, &self.eps(prior, z_t, t, sched)?, sched)
    }

    fn vjp(&self, prior: &ConceptPrior, z_t: &[f64], t: usize, sched: &NoiseSchedule, u: &[f64]) -> Result<Vec<f64>> {
        let null = prior.posterior_mean_vjp(z_t, t, &Condition::Null(self.null_weights), sched, u)?;
        match self.concept {
            Some(k) if self.omega != 0.0 => {
                let cond = prior.posterior_mean_vjp(z_t, t, &Condition::Concept(k), sched, u)?;
                Ok(vecops::lincomb(1.0 - self.omega, &null, self.omega, &cond))
            }
            _ => Ok(null),
        }
    }
}

/// The DPS objective as a function of the noisy latent.
pub fn dps_objective(
    problem: &Problem<'_>,
    guidance: &Guidance<'_>,
    loss: DpsLoss,
    z_t: &[f64],
    t: usize,
    y: &[f64],
) -> Result<f64> {
    let z0 = guidance.denoise(problem.prior, z_t, t, problem.sched)?;
    let r2 = problem.op.residual_sq(&problem.codec.decode(&z0)?, y)?;
    Ok(match loss {
        DpsLoss::Norm => r2.sqrt(),
        DpsLoss::SquaredNorm => r2,
    })
}

/// Exact gradient of `dps_objective` in `z_t`, chained through the guided
/// posterior-mean Jacobian, the decoder and the operator residual.
pub fn dps_gradient(
    problem: &Problem<'_>,
    guidance: &Guidance<'_>,
    loss: DpsLoss,
    z_t: &[f64],
    t: usize,
    y: &[f64],
) -> Result<Vec<f64>> {
    let z0 = guidance.denoise(problem.prior, z_t, t, problem.sched)?;
    let x0 = problem.codec.decode(&z0)?;
    let mut gx = problem.op.residual_gradient(&x0, y)?;
    if loss == DpsLoss::Norm {
        let r = problem.op.residual_sq(&x0, y)?.sqrt();
        let scale = if r > 0.0 { 0.5 / r } else { 0.0 };
        gx.iter_mut().for_each(|g| *g *= scale);
    }
    let gz0 = problem.codec.encode_mean(&gx)?;
    guidance.vjp(problem.prior, z_t, t, problem.sched, &gz0)
}

/// Central finite-difference gradient of `dps_objective`.
pub fn dps_gradient_fd(
    problem: &Problem<'_>,
    guidance: &Guidance<'_>,
    loss: DpsLoss,
    z_t: &[f64],
    t: usize,
    y: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let mut z = z_t.to_vec();
    let mut grad = Vec::with_capacity(z.len());
    for i in 0..z.len() {
        let orig = z[i];
        z[i] = orig + h;
        let fp = dps_objective(problem, guidance, loss, &z, t, y)?;
        z[i] = orig - h;
        let fm = dps_objective(problem, guidance, loss, &z, t, y)?;
        z[i] = orig;
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// `z_prev - rho_t grad_{z_t} loss`.
#[allow(clippy::too_many_arguments)]
pub fn dps_step(
    problem: &Problem<'_>,
    guidance: &Guidance<'_>,
    loss: DpsLoss,
    z_prev: &[f64],
    z_t: &[f64],
    t: usize,
    y: &[f64],
    rho_t: f64,
) -> Result<Vec<f64>> {
    let mut grad = dps_gradient(problem, guidance, loss, z_t, t, y)?;
    if !vecops::all_finite(&grad) {
        log::warn!("non-finite analytic DPS gradient at t = {t}; using central differences");
        grad = dps_gradient_fd(problem, guidance, loss, z_t, t, y, 1e-5)?;
    }
    Ok(vecops::lincomb(1.0, z_prev, -rho_t, &grad))
}

fn null_weights(prior: &ConceptPrior, emb: &EmbeddingState) -> Vec<f64> {
    match prior.null_mode() {
        NullMode::UniformMarginal => prior.uniform_weights(),
        NullMode::EmbeddingWeighted => emb.null_weights(),
    }
}

/// Runs the full reverse process. `concept = None` disables text
/// regularization (the guided prediction is the null prediction).
pub fn run(
    config: &SolverConfig,
    problem: &Problem<'_>,
    measurement: &Measurement,
    concept: Option<&str>,
) -> Result<RunOutput> {
    run_with(config, problem, measurement, concept, &RunOptions::default())
}

pub fn run_with(
    config: &SolverConfig,
    problem: &Problem<'_>,
    measurement: &Measurement,
    concept: Option<&str>,
    options: &RunOptions,
) -> Result<RunOutput> {
    let Problem { sched, prior, codec, op, .. } = *problem;
    config.validate(sched)?;
    check_len("codec latent vs prior", prior.dim(), codec.latent_dim())?;
    check_len("codec pixels vs operator", op.in_dim(), codec.pixel_dim())?;
    check_len("measurement", op.out_dim(), measurement.y.len())?;
    if !config.use_adam && !op.is_linear() {
        return Err(TregError::config("solver.use_adam", "nonlinear operators need the Adam solver"));
    }
    let concept = concept.map(|c| prior.concept_index(c)).transpose()?;
    let y = measurement.y.as_slice();
    let steps = sched.subsample_steps(config.nfe)?;

    let mut emb = problem.embedding.clone();
    emb.set_lr(config.negation_lr)?;

    let mut sampling = rng::stream(config.seed, streams::SAMPLING);
    let mut monitor = rng::stream(config.seed, streams::MONITOR);

    let mut z = match &options.initial_latent {
        Some(z0) => {
            check_len("initial latent", prior.dim(), z0.len())?;
            z0.clone()
        }
        None => rng::normal_vec(&mut sampling, prior.dim()),
    };
    let mut latents = Vec::new();
    if options.record_latents {
        latents.push(z.clone());
    }
    let mut trace = RunTrace::default();
    let mut negation = Vec::new();

    for (i, &t) in steps.iter().enumerate() {
        let t_prev = steps.get(i + 1).copied().unwrap_or(0);
        let abar = sched.alpha_bar(t);
        let abar_prev = sched.alpha_bar(t_prev);
        let weights = null_weights(prior, &emb);
        let pivot = Guidance {
            concept,
            null_weights: &weights,
            omega: config.omega1,
        };
        let eps_hat = pivot.eps(prior, &z, t, sched)?;
        let z0_t = tweedie(&z, t, &eps_hat, sched)?;
        let x0_t = codec.decode(&z0_t)?;
        let data_consistency = op.residual_sq(&x0_t, y)?;

        let (branch, z_next, clean, similarity) = if config.in_gamma(t) {
            let s = config.stochasticity_at(i, abar_prev);
            let eps_tilde = noise_mix(&eps_hat, abar_prev, s, &mut sampling)?;
            let x0_y = if config.use_adam {
                adam_solve(op, y, &x0_t, &config.adam, None)?
            } else {
                cg_solve(op, y, &x0_t, &config.cg, None)?
            };
            let z0_y = codec.encode_mean(&x0_y)?;
            let z0_ema = ema_combine(&z0_y, &z0_t, abar_prev);
            let z_next = ddim_step(&z0_ema, &eps_tilde, abar_prev);
            if config.negation_enabled {
                let step = emb.negate_step(&x0_y)?;
                negation.push(NegationEvent { t, step });
            }
            let sim = emb.similarity(&x0_y)?;
            (Branch::Gamma, z_next, z0_ema, sim)
        } else {
            let s = match config.plain_noise {
                PlainNoise::Deterministic => 0.0,
                PlainNoise::Total => config.stochasticity_at(i, abar_prev),
            };
            let eps_tilde = noise_mix(&eps_hat, abar_prev, s, &mut sampling)?;
            let mut z_next = ddim_step(&z0_t, &eps_tilde, abar_prev);
            let mut branch = Branch::Plain;
            if config.dps_enabled {
                let guidance = Guidance {
                    concept,
                    null_weights: &weights,
                    omega: config.omega2,
                };
                z_next = dps_step(problem, &guidance, config.dps_loss, &z_next, &z, t, y, config.rho(abar_prev))?;
                branch = Branch::Dps;
            }
            let sim = emb.similarity(&x0_t)?;
            (branch, z_next, z0_t, sim)
        };

        let dsm_loss = {
            let noise = rng::normal_vec(&mut monitor, prior.dim());
            let z_m = vecops::lincomb(abar.sqrt(), &clean, (1.0 - abar).sqrt(), &noise);
            let cond = match concept {
                Some(k) => Condition::Concept(k),
                None => Condition::Null(&weights),
            };
            let eps_pred = prior.eps(&z_m, t, &cond, sched)?;
            (1.0 - abar) / abar * vecops::dist_sq(&noise, &eps_pred)
        };

        if !vecops::all_finite(&z_next) || vecops::norm(&z_next) > DIVERGENCE_NORM {
            return Err(TregError::Diverged { step: i, t });
        }
        trace.records.push(TraceRecord {
            t,
            branch,
            data_consistency,
            dsm_loss,
            null_similarity: similarity,
        });
        z = z_next;
        if options.record_latents {
            latents.push(z.clone());
        }
    }

    let x_final = codec.decode(&z)?;
    Ok(RunOutput {
        x_final,
        z_final: z,
        trace,
        negation,
        latents,
    })
}

fn noise_mix(eps_hat: &[f64], abar_prev: f64, s: f64, rng: &mut rng::Rng) -> Result<Vec<f64>> {
    if s == 0.0 {
        return total_noise(eps_hat, eps_hat, abar_prev, 0.0);
    }
    let eps_rand = rng::normal_vec(rng, eps_hat.len());
    total_noise(eps_hat, &eps_rand, abar_prev, s)
}
