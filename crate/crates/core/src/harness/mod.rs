//! Configuration, file formats, metrics, experiment drivers and oracle
//! suites around the solver.

pub mod config;
pub mod experiments;
pub mod io;
pub mod metrics;
pub mod validate;

use crate::codec::LatentCodec;
use crate::error::{Result, TregError};
use crate::negation::EmbeddingState;
use crate::operators::{ForwardOperator, Measurement, OperatorKind};
use crate::prior::ConceptPrior;
use crate::sampler::Problem;
use crate::schedule::NoiseSchedule;

use config::{RunConfig, Truth};

/// Every component of a run, resolved from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Workspace {
    pub config: RunConfig,
    pub sched: NoiseSchedule,
    pub codec: LatentCodec,
    pub prior: ConceptPrior,
    pub op: ForwardOperator,
    pub embedding: EmbeddingState,
    pub truth: Option<Vec<f64>>,
    pub measurement: Measurement,
}

pub fn operator_from_config(cfg: &config::OperatorConfig) -> Result<ForwardOperator> {
    let kind = match cfg.kind.as_str() {
        "blur" => OperatorKind::GaussianBlur {
            kernel_size: cfg.kernel_size,
            sigma: cfg.sigma,
        },
        "downsample" => OperatorKind::Downsample { factor: cfg.factor },
        "phase_retrieval" => OperatorKind::PhaseRetrieval { pad: cfg.pad },
        "inpaint" => {
            let path = cfg
                .mask
                .as_ref()
                .ok_or_else(|| TregError::config("operator.mask", "inpainting needs a mask PGM"))?;
            let (pixels, h, w) = io::read_pgm(path)?;
            if (h, w) != (cfg.height, cfg.width) {
                return Err(TregError::config(
                    "operator.mask",
                    format!("mask is {h}x{w}, operator is {}x{}", cfg.height, cfg.width),
                ));
            }
            OperatorKind::BoxInpaint {
                mask: pixels.iter().map(|&v| u8::from(v > 0.5)).collect(),
            }
        }
        other => return Err(TregError::config("operator.kind", format!("unknown operator `{other}`"))),
    };
    ForwardOperator::new(kind, cfg.height, cfg.width)
}

impl Workspace {
    pub fn build(config: RunConfig) -> Result<Self> {
        let s = &config.schedule;
        let sched = NoiseSchedule::linear(s.timesteps, s.beta_start, s.beta_end)?;
        let codec = LatentCodec::new(config.codec)?;
        let prior_path = config
            .prior
            .as_ref()
            .ok_or_else(|| TregError::config("prior.path", "a prior document is required"))?;
        let text = std::fs::read_to_string(prior_path).map_err(|source| TregError::Read {
            path: prior_path.clone(),
            source,
        })?;
        let prior = ConceptPrior::from_json(&text, Some(&codec))?;
        if prior.dim() != codec.latent_dim() {
            return Err(TregError::config(
                "codec.d",
                format!("prior dimension {} differs from codec latent dimension {}", prior.dim(), codec.latent_dim()),
            ));
        }
        let op = operator_from_config(&config.operator)?;
        if op.in_dim() != codec.pixel_dim() {
            return Err(TregError::config(
                "codec.m",
                format!("operator image has {} pixels, codec expects {}", op.in_dim(), codec.pixel_dim()),
            ));
        }
        let embedding = EmbeddingState::new(&config.negation, &prior, &codec)?;
        for label in [&config.experiment.concept].into_iter().flatten() {
            prior.concept_index(label)?;
        }

        let truth = match &config.truth {
            None => None,
            Some(Truth::Component { concept, component }) => {
                let c = &prior.concepts()[prior.concept_index(concept)?];
                let comp = c.components.get(*component).ok_or_else(|| {
                    TregError::config("truth.component", format!("`{concept}` has {} components", c.components.len()))
                })?;
                Some(codec.decode(&comp.mean)?)
            }
            Some(Truth::Pgm(path)) => {
                let (pixels, h, w) = io::read_pgm(path)?;
                if h * w != codec.pixel_dim() {
                    return Err(TregError::config("truth.pgm", format!("{h}x{w} image does not fit the codec")));
                }
                Some(pixels)
            }
            Some(Truth::Raw(path)) => {
                let raw = io::read_raw(path)?;
                if raw.data.len() != codec.pixel_dim() {
                    return Err(TregError::config("truth.raw", "length does not match the codec"));
                }
                Some(raw.data)
            }
        };

        let measurement = match (&config.measurement.path, &truth) {
            (Some(path), _) => {
                let raw = io::read_raw(path)?;
                if raw.data.len() != op.out_dim() {
                    return Err(TregError::config(
                        "measurement.path",
                        format!("{} values, operator produces {}", raw.data.len(), op.out_dim()),
                    ));
                }
                Measurement {
                    y: raw.data,
                    sigma0: raw.sigma0,
                    op_id: op.id(),
                    seed: raw.seed,
                }
            }
            (None, Some(x)) => {
                let seed = config.measurement.seed.unwrap_or(config.seed);
                op.simulate_measurement(x, config.measurement.sigma0, seed)?
            }
            (None, None) => {
                return Err(TregError::config("truth", "either truth.* or measurement.path is required"));
            }
        };

        Ok(Self {
            config,
            sched,
            codec,
            prior,
            op,
            embedding,
            truth,
            measurement,
        })
    }

    pub fn problem(&self) -> Problem<'_> {
        Problem {
            sched: &self.sched,
            prior: &self.prior,
            codec: &self.codec,
            op: &self.op,
            embedding: &self.embedding,
        }
    }
}
