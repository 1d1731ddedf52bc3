//! Flat `key = value` run configuration with dotted section prefixes.
//! `#` starts a comment; relative paths resolve against the config file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::codec::CodecSpec;
use crate::consistency::{AdamParams, CgParams};
use crate::error::{Result, TregError};
use crate::negation::EmbeddingParams;
use crate::operators::DEFAULT_SIGMA0;
use crate::sampler::{DpsLoss, PlainNoise, RhoRule, SolverConfig, Stochasticity};
use crate::schedule::{DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_TIMESTEPS};

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorConfig {
    /// `blur`, `downsample`, `inpaint` or `phase_retrieval`.
    pub kind: String,
    pub height: usize,
    pub width: usize,
    pub kernel_size: usize,
    pub sigma: f64,
    pub factor: usize,
    /// PGM mask for inpainting; pixels above one half are observed.
    pub mask: Option<PathBuf>,
    pub pad: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementConfig {
    pub sigma0: f64,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
    /// Observed `y` as a `TREGV1` dump; replaces simulation from the truth.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Truth {
    /// Pixel image of component `component` of concept `concept`.
    Component { concept: String, component: usize },
    Pgm(PathBuf),
    Raw(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Ambiguity,
    Symmetry,
    Convergence,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Ambiguity => "ambiguity",
            ExperimentKind::Symmetry => "symmetry",
            ExperimentKind::Convergence => "convergence",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = TregError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ambiguity" => Ok(Self::Ambiguity),
            "symmetry" => Ok(Self::Symmetry),
            "convergence" => Ok(Self::Convergence),
            _ => Err(TregError::config("experiment.kind", format!("unknown experiment `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: Option<ExperimentKind>,
    pub restarts: usize,
    /// Conditioning label of `solve` and of the conditioned arm; `None` is NULL.
    pub concept: Option<String>,
    pub profile_row: usize,
    pub peak: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub schedule: ScheduleConfig,
    pub prior: Option<PathBuf>,
    pub codec: CodecSpec,
    pub operator: OperatorConfig,
    pub measurement: MeasurementConfig,
    pub truth: Option<Truth>,
    pub solver: SolverConfig,
    pub negation: EmbeddingParams,
    pub experiment: ExperimentConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig {
                timesteps: DEFAULT_TIMESTEPS,
                beta_start: DEFAULT_BETA_START,
                beta_end: DEFAULT_BETA_END,
            },
            prior: None,
            codec: CodecSpec { m: 1024, d: 1024, seed: 0, sigma_e: 0.0 },
            operator: OperatorConfig {
                kind: "blur".into(),
                height: 32,
                width: 32,
                kernel_size: 13,
                sigma: 2.5,
                factor: 4,
                mask: None,
                pad: 16,
            },
            measurement: MeasurementConfig { sigma0: DEFAULT_SIGMA0, seed: None, path: None },
            truth: None,
            solver: SolverConfig::default(),
            negation: EmbeddingParams::default(),
            experiment: ExperimentConfig {
                kind: None,
                restarts: 10,
                concept: None,
                profile_row: 16,
                peak: 1.0,
            },
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| TregError::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(TregError::config(key, format!("expected true/false, got `{value}`"))),
    }
}

fn parse_stochasticity(key: &str, value: &str) -> Result<Stochasticity> {
    match value {
        "default" => Ok(Stochasticity::Default),
        "deterministic" => Ok(Stochasticity::Deterministic),
        _ => {
            let list = value.strip_prefix("custom:").ok_or_else(|| {
                TregError::config(key, "expected default, deterministic or custom:<s1>,<s2>,...")
            })?;
            list.split(',')
                .map(|v| parse_value::<f64>(key, v.trim()))
                .collect::<Result<Vec<_>>>()
                .map(Stochasticity::Custom)
        }
    }
}

fn optional_label(value: &str) -> Option<String> {
    match value {
        "" | "NULL" | "null" | "none" => None,
        v => Some(v.to_string()),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| TregError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut truth_concept = None;
        let mut truth_component = 0;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| TregError::Parse(format!("config line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let path = || base.join(value);
            let k = key;
            match key {
                "seed" => cfg.seed = parse_value(k, value)?,
                "output_dir" => cfg.output_dir = path(),
                "schedule.T" => cfg.schedule.timesteps = parse_value(k, value)?,
                "schedule.beta_start" => cfg.schedule.beta_start = parse_value(k, value)?,
                "schedule.beta_end" => cfg.schedule.beta_end = parse_value(k, value)?,
                "prior.path" => cfg.prior = Some(path()),
                "codec.m" => cfg.codec.m = parse_value(k, value)?,
                "codec.d" => cfg.codec.d = parse_value(k, value)?,
                "codec.seed" => cfg.codec.seed = parse_value(k, value)?,
                "codec.sigma_E" => cfg.codec.sigma_e = parse_value(k, value)?,
                "operator.kind" => cfg.operator.kind = value.to_string(),
                "operator.h" => cfg.operator.height = parse_value(k, value)?,
                "operator.w" => cfg.operator.width = parse_value(k, value)?,
                "operator.kernel_size" => cfg.operator.kernel_size = parse_value(k, value)?,
                "operator.sigma" => cfg.operator.sigma = parse_value(k, value)?,
                "operator.factor" => cfg.operator.factor = parse_value(k, value)?,
                "operator.mask" => cfg.operator.mask = Some(path()),
                "operator.pad" => cfg.operator.pad = parse_value(k, value)?,
                "measurement.sigma0" => cfg.measurement.sigma0 = parse_value(k, value)?,
                "measurement.seed" => cfg.measurement.seed = Some(parse_value(k, value)?),
                "measurement.path" => cfg.measurement.path = Some(path()),
                "truth.concept" => truth_concept = Some(value.to_string()),
                "truth.component" => truth_component = parse_value(k, value)?,
                "truth.pgm" => cfg.truth = Some(Truth::Pgm(path())),
                "truth.raw" => cfg.truth = Some(Truth::Raw(path())),
                "solver.nfe" => cfg.solver.nfe = parse_value(k, value)?,
                "solver.omega1" => cfg.solver.omega1 = parse_value(k, value)?,
                "solver.omega2" => cfg.solver.omega2 = parse_value(k, value)?,
                "solver.gamma_mod" => cfg.solver.gamma_mod = parse_value(k, value)?,
                "solver.gamma_tmax" => cfg.solver.gamma_tmax = parse_value(k, value)?,
                "solver.cg.lambda" => cfg.solver.cg.lambda = parse_value(k, value)?,
                "solver.cg.iters" => cfg.solver.cg.iters = parse_value(k, value)?,
                "solver.cg.tol" => cfg.solver.cg.tol = parse_value(k, value)?,
                "solver.adam.lr" => cfg.solver.adam.lr = parse_value(k, value)?,
                "solver.adam.beta1" => cfg.solver.adam.beta1 = parse_value(k, value)?,
                "solver.adam.beta2" => cfg.solver.adam.beta2 = parse_value(k, value)?,
                "solver.adam.iters" => cfg.solver.adam.iters = parse_value(k, value)?,
                "solver.adam.lambda" => cfg.solver.adam.lambda = parse_value(k, value)?,
                "solver.use_adam" => cfg.solver.use_adam = parse_bool(k, value)?,
                "solver.stochasticity" => cfg.solver.stochasticity = parse_stochasticity(k, value)?,
                "solver.plain_noise" => {
                    cfg.solver.plain_noise = match value {
                        "deterministic" => PlainNoise::Deterministic,
                        "total" => PlainNoise::Total,
                        _ => return Err(TregError::config(k, "expected deterministic or total")),
                    }
                }
                "solver.dps_enabled" => cfg.solver.dps_enabled = parse_bool(k, value)?,
                "solver.rho_rule" => {
                    cfg.solver.rho_rule = match value {
                        "sqrt_alpha_bar_prev" => RhoRule::SqrtAlphaBarPrev,
                        _ => return Err(TregError::config(k, "expected sqrt_alpha_bar_prev")),
                    }
                }
                "solver.rho_scale" => cfg.solver.rho_scale = parse_value(k, value)?,
                "solver.dps_loss" => {
                    cfg.solver.dps_loss = match value {
                        "norm" => DpsLoss::Norm,
                        "squared_norm" => DpsLoss::SquaredNorm,
                        _ => return Err(TregError::config(k, "expected norm or squared_norm")),
                    }
                }
                "solver.negation_enabled" => cfg.solver.negation_enabled = parse_bool(k, value)?,
                "solver.negation_lr" => cfg.solver.negation_lr = parse_value(k, value)?,
                "negation.q" => cfg.negation.q = parse_value(k, value)?,
                "negation.seed" => cfg.negation.seed = parse_value(k, value)?,
                "negation.kappa" => cfg.negation.kappa = parse_value(k, value)?,
                "experiment.kind" => cfg.experiment.kind = Some(value.parse()?),
                "experiment.restarts" => cfg.experiment.restarts = parse_value(k, value)?,
                "experiment.concept" => cfg.experiment.concept = optional_label(value),
                "experiment.profile_row" => cfg.experiment.profile_row = parse_value(k, value)?,
                "experiment.peak" => cfg.experiment.peak = parse_value(k, value)?,
                _ => return Err(TregError::config(key, "unknown key")),
            }
        }
        if let Some(concept) = truth_concept {
            cfg.truth = Some(Truth::Component { concept, component: truth_component });
        }
        cfg.negation.lr = cfg.solver.negation_lr;
        Ok(cfg)
    }

    /// Resolved configuration in the same `key = value` format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let p = |p: &Path| p.display().to_string();
        kv("seed", self.seed.to_string());
        kv("output_dir", p(&self.output_dir));
        kv("schedule.T", self.schedule.timesteps.to_string());
        kv("schedule.beta_start", self.schedule.beta_start.to_string());
        kv("schedule.beta_end", self.schedule.beta_end.to_string());
        if let Some(prior) = &self.prior {
            kv("prior.path", p(prior));
        }
        kv("codec.m", self.codec.m.to_string());
        kv("codec.d", self.codec.d.to_string());
        kv("codec.seed", self.codec.seed.to_string());
        kv("codec.sigma_E", self.codec.sigma_e.to_string());
        let o = &self.operator;
        kv("operator.kind", o.kind.clone());
        kv("operator.h", o.height.to_string());
        kv("operator.w", o.width.to_string());
        kv("operator.kernel_size", o.kernel_size.to_string());
        kv("operator.sigma", o.sigma.to_string());
        kv("operator.factor", o.factor.to_string());
        if let Some(mask) = &o.mask {
            kv("operator.mask", p(mask));
        }
        kv("operator.pad", o.pad.to_string());
        kv("measurement.sigma0", self.measurement.sigma0.to_string());
        if let Some(seed) = self.measurement.seed {
            kv("measurement.seed", seed.to_string());
        }
        if let Some(path) = &self.measurement.path {
            kv("measurement.path", p(path));
        }
        match &self.truth {
            Some(Truth::Component { concept, component }) => {
                kv("truth.concept", concept.clone());
                kv("truth.component", component.to_string());
            }
            Some(Truth::Pgm(path)) => kv("truth.pgm", p(path)),
            Some(Truth::Raw(path)) => kv("truth.raw", p(path)),
            None => {}
        }
        let sv = &self.solver;
        kv("solver.nfe", sv.nfe.to_string());
        kv("solver.omega1", sv.omega1.to_string());
        kv("solver.omega2", sv.omega2.to_string());
        kv("solver.gamma_mod", sv.gamma_mod.to_string());
        kv("solver.gamma_tmax", sv.gamma_tmax.to_string());
        let CgParams { lambda, iters, tol } = sv.cg;
        kv("solver.cg.lambda", lambda.to_string());
        kv("solver.cg.iters", iters.to_string());
        kv("solver.cg.tol", tol.to_string());
        let AdamParams { lr, beta1, beta2, iters, lambda } = sv.adam;
        kv("solver.adam.lr", lr.to_string());
        kv("solver.adam.beta1", beta1.to_string());
        kv("solver.adam.beta2", beta2.to_string());
        kv("solver.adam.iters", iters.to_string());
        kv("solver.adam.lambda", lambda.to_string());
        kv("solver.use_adam", sv.use_adam.to_string());
        kv(
            "solver.stochasticity",
            match &sv.stochasticity {
                Stochasticity::Default => "default".into(),
                Stochasticity::Deterministic => "deterministic".into(),
                Stochasticity::Custom(v) => format!(
                    "custom:{}",
                    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
                ),
            },
        );
        kv(
            "solver.plain_noise",
            match sv.plain_noise {
                PlainNoise::Deterministic => "deterministic",
                PlainNoise::Total => "total",
            }
            .into(),
        );
        kv("solver.dps_enabled", sv.dps_enabled.to_string());
        kv("solver.rho_rule", "sqrt_alpha_bar_prev".into());
        kv("solver.rho_scale", sv.rho_scale.to_string());
        kv(
            "solver.dps_loss",
            match sv.dps_loss {
                DpsLoss::Norm => "norm",
                DpsLoss::SquaredNorm => "squared_norm",
            }
            .into(),
        );
        kv("solver.negation_enabled", sv.negation_enabled.to_string());
        kv("solver.negation_lr", sv.negation_lr.to_string());
        kv("negation.q", self.negation.q.to_string());
        kv("negation.seed", self.negation.seed.to_string());
        kv("negation.kappa", self.negation.kappa.to_string());
        let e = &self.experiment;
        if let Some(kind) = e.kind {
            kv("experiment.kind", kind.as_str().into());
        }
        kv("experiment.restarts", e.restarts.to_string());
        kv("experiment.concept", e.concept.clone().unwrap_or_else(|| "NULL".into()));
        kv("experiment.profile_row", e.profile_row.to_string());
        kv("experiment.peak", e.peak.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_paths() {
        let text = "
            # a comment
            seed = 7
            prior.path = priors/p.json   # trailing comment
            solver.omega1 = 4
            solver.stochasticity = custom:0.1, 0.2
            solver.use_adam = true
            experiment.concept = NULL
            truth.concept = A
            truth.component = 2
        ";
        let cfg = RunConfig::parse(text, Path::new("/cfg")).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.prior, Some(PathBuf::from("/cfg/priors/p.json")));
        assert_eq!(cfg.solver.omega1, 4.0);
        assert_eq!(cfg.solver.stochasticity, Stochasticity::Custom(vec![0.1, 0.2]));
        assert!(cfg.solver.use_adam);
        assert_eq!(cfg.experiment.concept, None);
        assert_eq!(cfg.truth, Some(Truth::Component { concept: "A".into(), component: 2 }));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let e = RunConfig::parse("solver.omega = 1", Path::new(".")).unwrap_err();
        assert!(e.is_config() && e.to_string().contains("solver.omega"));
        assert!(RunConfig::parse("solver.nfe = many", Path::new(".")).unwrap_err().is_config());
        assert!(RunConfig::parse("no equals sign", Path::new(".")).unwrap_err().is_config());
        assert!(RunConfig::parse("experiment.kind = other", Path::new(".")).is_err());
    }

    #[test]
    fn text_roundtrip() {
        let mut cfg = RunConfig {
            prior: Some(PathBuf::from("/abs/prior.json")),
            output_dir: PathBuf::from("/abs/out"),
            truth: Some(Truth::Component { concept: "upright".into(), component: 0 }),
            ..RunConfig::default()
        };
        cfg.solver.stochasticity = Stochasticity::Custom(vec![0.25, 0.0]);
        cfg.experiment.kind = Some(ExperimentKind::Symmetry);
        cfg.experiment.concept = Some("upright".into());
        let back = RunConfig::parse(&cfg.to_text(), Path::new("/elsewhere")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn missing_file_names_the_path() {
        let e = RunConfig::load(Path::new("/no/such/run.cfg")).unwrap_err();
        assert!(e.is_config() && e.to_string().contains("/no/such/run.cfg"));
    }
}
