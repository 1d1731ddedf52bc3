//! Analytic conditional diffusion prior in latent space.
//!
//! Every concept is a mixture of isotropic Gaussians. Under the
//! variance-preserving forward process `z_t = sqrt(abar) z_0 + sqrt(1 - abar) eps`
//! the marginal of each component stays Gaussian, so the posterior mean
//! `E[z_0 | z_t]`, the epsilon prediction and its Jacobian are all closed-form.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::codec::LatentCodec;
use crate::error::{check_len, Result, TregError};
use crate::schedule::NoiseSchedule;
use crate::vecops;

const WEIGHT_SUM_TOL: f64 = 1e-12;
const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Concept {
    pub label: String,
    pub components: Vec<Component>,
}

impl Concept {
    /// Mixture mean `sum_i w_i m_i`.
    pub fn mean(&self) -> Vec<f64> {
        let dim = self.components[0].mean.len();
        let mut out = vec![0.0; dim];
        for c in &self.components {
            vecops::axpy(c.weight, &c.mean, &mut out);
        }
        out
    }
}

/// How the unconditional (null) prediction mixes the concepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NullMode {
    /// Equal weight `1/K` per concept, independent of the null embedding.
    UniformMarginal,
    /// Weights supplied by the null embedding (see `negation::EmbeddingState::null_weights`).
    #[default]
    EmbeddingWeighted,
}

/// What the denoiser is conditioned on.
#[derive(Debug, Clone, Copy)]
pub enum Condition<'a> {
    Concept(usize),
    /// Mixture over all concepts with the given simplex weights.
    Null(&'a [f64]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptPrior {
    dim: usize,
    concepts: Vec<Concept>,
    null_mode: NullMode,
}

/// Per-component quantities of the posterior at a fixed `(z_t, abar)`.
struct Posterior {
    resp: Vec<f64>,
    /// `sqrt(abar) v_i / (abar v_i + 1 - abar)`, the slope of the component posterior mean.
    slope: Vec<f64>,
    comp_mean: Vec<Vec<f64>>,
    /// Gradient of the component log-likelihood in `z_t`.
    score: Vec<Vec<f64>>,
    mean: Vec<f64>,
}

impl ConceptPrior {
    pub fn new(dim: usize, concepts: Vec<Concept>, null_mode: NullMode) -> Result<Self> {
        if dim == 0 {
            return Err(TregError::config("prior.d", "must be positive"));
        }
        if concepts.is_empty() {
            return Err(TregError::config("prior.concepts", "at least one concept required"));
        }
        let mut seen = HashSet::new();
        for concept in &concepts {
            if !seen.insert(concept.label.as_str()) {
                return Err(TregError::config(
                    "prior.concepts",
                    format!("duplicate label `{}`", concept.label),
                ));
            }
            if concept.components.is_empty() {
                return Err(TregError::config(
                    "prior.concepts",
                    format!("concept `{}` has no components", concept.label),
                ));
            }
            let mut total = 0.0;
            for comp in &concept.components {
                check_len("prior component mean", dim, comp.mean.len())?;
                if !(comp.weight > 0.0) {
                    return Err(TregError::config(
                        "prior.concepts.w",
                        format!("non-positive weight in `{}`", concept.label),
                    ));
                }
                if !(comp.var > 0.0) || !comp.var.is_finite() {
                    return Err(TregError::config(
                        "prior.concepts.var",
                        format!("variance must be positive in `{}`", concept.label),
                    ));
                }
                if !vecops::all_finite(&comp.mean) {
                    return Err(TregError::config(
                        "prior.concepts.mean",
                        format!("non-finite mean in `{}`", concept.label),
                    ));
                }
                total += comp.weight;
            }
            if (total - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(TregError::config(
                    "prior.concepts.w",
                    format!("weights of `{}` sum to {total}", concept.label),
                ));
            }
        }
        Ok(Self {
            dim,
            concepts,
            null_mode,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn null_mode(&self) -> NullMode {
        self.null_mode
    }

    pub fn concept_index(&self, label: &str) -> Result<usize> {
        self.concepts
            .iter()
            .position(|c| c.label == label)
            .ok_or_else(|| TregError::UnknownConcept(label.to_string()))
    }

    pub fn uniform_weights(&self) -> Vec<f64> {
        vec![1.0 / self.concepts.len() as f64; self.concepts.len()]
    }

    /// Flattened `(weight, mean, var)` triples of the mixture selected by `cond`.
    fn mixture<'a>(&'a self, cond: &Condition<'_>) -> Result<Vec<(f64, &'a [f64], f64)>> {
        match *cond {
            Condition::Concept(k) => {
                let concept = self
                    .concepts
                    .get(k)
                    .ok_or_else(|| TregError::UnknownConcept(format!("#{k}")))?;
                Ok(concept
                    .components
                    .iter()
                    .map(|c| (c.weight, c.mean.as_slice(), c.var))
                    .collect())
            }
            Condition::Null(weights) => {
                check_simplex(weights, self.concepts.len())?;
                Ok(self
                    .concepts
                    .iter()
                    .zip(weights)
                    .filter(|(_, &w)| w > 0.0)
                    .flat_map(|(concept, &wk)| {
                        concept
                            .components
                            .iter()
                            .map(move |c| (wk * c.weight, c.mean.as_slice(), c.var))
                    })
                    .collect())
            }
        }
    }

    fn posterior(&self, z_t: &[f64], abar: f64, cond: &Condition<'_>) -> Result<Posterior> {
        check_len("latent z_t", self.dim, z_t.len())?;
        let mixture = self.mixture(cond)?;
        let sa = abar.sqrt();
        let dim = self.dim as f64;

        let mut log_r = Vec::with_capacity(mixture.len());
        let mut slope = Vec::with_capacity(mixture.len());
        let mut comp_mean = Vec::with_capacity(mixture.len());
        let mut score = Vec::with_capacity(mixture.len());
        for &(w, m, v) in &mixture {
            let s2 = abar * v + (1.0 - abar);
            // residual of z_t against the component's noisy mean
            let delta: Vec<f64> = z_t.iter().zip(m).map(|(z, mi)| z - sa * mi).collect();
            log_r.push(w.ln() - 0.5 * dim * s2.ln() - vecops::norm_sq(&delta) / (2.0 * s2));
            let c = sa * v / s2;
            comp_mean.push(m.iter().zip(&delta).map(|(mi, di)| mi + c * di).collect::<Vec<_>>());
            score.push(delta.iter().map(|di| -di / s2).collect::<Vec<_>>());
            slope.push(c);
        }
        let resp = vecops::softmax(&log_r);
        let mut mean = vec![0.0; self.dim];
        for (r, mu) in resp.iter().zip(&comp_mean) {
            vecops::axpy(*r, mu, &mut mean);
        }
        Ok(Posterior {
            resp,
            slope,
            comp_mean,
            score,
            mean,
        })
    }

    /// Closed-form `E[z_0 | z_t]` at noise level `abar`.
    pub fn posterior_mean_at(&self, z_t: &[f64], abar: f64, cond: &Condition<'_>) -> Result<Vec<f64>> {
        Ok(self.posterior(z_t, abar, cond)?.mean)
    }

    /// Closed-form `E[z_0 | z_t]` at timestep `t`.
    pub fn posterior_mean(
        &self,
        z_t: &[f64],
        t: usize,
        cond: &Condition<'_>,
        sched: &NoiseSchedule,
    ) -> Result<Vec<f64>> {
        sched.check_timestep(t)?;
        self.posterior_mean_at(z_t, sched.alpha_bar(t), cond)
    }

    /// Exact epsilon prediction `(z_t - sqrt(abar) E[z_0|z_t]) / sqrt(1 - abar)`.
    pub fn eps(&self, z_t: &[f64], t: usize, cond: &Condition<'_>, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        sched.check_timestep(t)?;
        let abar = sched.alpha_bar(t);
        let mean = self.posterior_mean_at(z_t, abar, cond)?;
        let (sa, sn) = (abar.sqrt(), (1.0 - abar).sqrt());
        Ok(z_t.iter().zip(&mean).map(|(z, m)| (z - sa * m) / sn).collect())
    }

    pub fn eps_cond(&self, z_t: &[f64], t: usize, label: &str, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        let k = self.concept_index(label)?;
        self.eps(z_t, t, &Condition::Concept(k), sched)
    }

    pub fn eps_null(&self, z_t: &[f64], t: usize, weights: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
        self.eps(z_t, t, &Condition::Null(weights), sched)
    }

    /// Full `d x d` Jacobian of the posterior mean with respect to `z_t`.
    pub fn posterior_mean_jacobian(
        &self,
        z_t: &[f64],
        t: usize,
        cond: &Condition<'_>,
        sched: &NoiseSchedule,
    ) -> Result<DMatrix<f64>> {
        sched.check_timestep(t)?;
        let post = self.posterior(z_t, sched.alpha_bar(t), cond)?;
        let d = self.dim;
        let diag: f64 = post.resp.iter().zip(&post.slope).map(|(r, c)| r * c).sum();
        let mut jac = DMatrix::<f64>::identity(d, d) * diag;
        let score_bar = weighted_mean(&post.resp, &post.score, d);
        for i in 0..post.resp.len() {
            let r = post.resp[i];
            if r == 0.0 {
                continue;
            }
            let left: Vec<f64> = vecops::sub(&post.comp_mean[i], &post.mean);
            let right: Vec<f64> = vecops::sub(&post.score[i], &score_bar);
            for a in 0..d {
                let la = r * left[a];
                if la == 0.0 {
                    continue;
                }
                for b in 0..d {
                    jac[(a, b)] += la * right[b];
                }
            }
        }
        Ok(jac)
    }

    /// Vector-Jacobian product `J^T u` of the posterior mean, in `O(K d)`.
    pub fn posterior_mean_vjp(
        &self,
        z_t: &[f64],
        t: usize,
        cond: &Condition<'_>,
        sched: &NoiseSchedule,
        u: &[f64],
    ) -> Result<Vec<f64>> {
        sched.check_timestep(t)?;
        check_len("vjp cotangent", self.dim, u.len())?;
        let post = self.posterior(z_t, sched.alpha_bar(t), cond)?;
        let d = self.dim;
        let diag: f64 = post.resp.iter().zip(&post.slope).map(|(r, c)| r * c).sum();
        let mut out = vecops::scale(diag, u);
        let score_bar = weighted_mean(&post.resp, &post.score, d);
        for i in 0..post.resp.len() {
            let r = post.resp[i];
            if r == 0.0 {
                continue;
            }
            let proj: f64 = post.comp_mean[i]
                .iter()
                .zip(&post.mean)
                .zip(u)
                .map(|((mi, e), ui)| (mi - e) * ui)
                .sum();
            let coef = r * proj;
            for ((o, g), gb) in out.iter_mut().zip(&post.score[i]).zip(&score_bar) {
                *o += coef * (g - gb);
            }
        }
        Ok(out)
    }

    /// Samples `z_0` from the mixture selected by `cond`.
    pub fn sample<R: rand::Rng + ?Sized>(&self, cond: &Condition<'_>, rng: &mut R) -> Result<Vec<f64>> {
        use rand_distr::{Distribution, StandardNormal};
        let mixture = self.mixture(cond)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = mixture.len() - 1;
        for (i, (w, _, _)) in mixture.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = i;
                break;
            }
        }
        let (_, m, v) = mixture[pick];
        let sd = v.sqrt();
        Ok(m
            .iter()
            .map(|mi| { let n: f64 = StandardNormal.sample(rng); mi + sd * n })
            .collect::<Vec<f64>>())
    }

    /// Mixture mean and total covariance trace of the mixture selected by `cond`.
    pub fn moments(&self, cond: &Condition<'_>) -> Result<(Vec<f64>, f64)> {
        let mixture = self.mixture(cond)?;
        let mut mean = vec![0.0; self.dim];
        for &(w, m, _) in &mixture {
            vecops::axpy(w, m, &mut mean);
        }
        let trace = mixture
            .iter()
            .map(|&(w, m, v)| w * (v * self.dim as f64 + vecops::dist_sq(m, &mean)))
            .sum();
        Ok((mean, trace))
    }

    /// Parses the JSON prior document. Components given as `pixel_mean` are
    /// mapped to latent space with `codec`.
    pub fn from_json(text: &str, codec: Option<&LatentCodec>) -> Result<Self> {
        let doc: PriorDocument = serde_json::from_str(text)?;
        doc.into_prior(codec)
    }

    pub fn to_document(&self) -> PriorDocument {
        PriorDocument {
            d: self.dim,
            null_mode: Some(self.null_mode),
            concepts: self
                .concepts
                .iter()
                .map(|c| ConceptDocument {
                    label: c.label.clone(),
                    components: c
                        .components
                        .iter()
                        .map(|comp| ComponentDocument {
                            w: comp.weight,
                            mean: Some(comp.mean.clone()),
                            pixel_mean: None,
                            var: comp.var,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

fn weighted_mean(weights: &[f64], vectors: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for (w, v) in weights.iter().zip(vectors) {
        vecops::axpy(*w, v, &mut out);
    }
    out
}

fn check_simplex(weights: &[f64], k: usize) -> Result<()> {
    check_len("null weights", k, weights.len())?;
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(TregError::Contract(format!(
            "null weights must lie on the simplex (sum = {sum})"
        )));
    }
    Ok(())
}

/// Classifier-free guidance `eps_null + omega (eps_cond - eps_null)`.
pub fn eps_cfg(eps_null: &[f64], eps_cond: &[f64], omega: f64) -> Vec<f64> {
    eps_null
        .iter()
        .zip(eps_cond)
        .map(|(n, c)| n + omega * (c - n))
        .collect()
}

/// Tweedie denoised estimate `(z_t - sqrt(1 - abar) eps) / sqrt(abar)`.
/// Accepts the `t = 0` sentinel, where it is the identity.
pub fn tweedie(z_t: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    if t > sched.timesteps() {
        return Err(TregError::TimestepRange {
            t,
            max: sched.timesteps(),
        });
    }
    tweedie_at(z_t, sched.alpha_bar(t), eps)
}

pub fn tweedie_at(z_t: &[f64], abar: f64, eps: &[f64]) -> Result<Vec<f64>> {
    check_len("tweedie eps", z_t.len(), eps.len())?;
    if !(abar > 0.0) {
        return Err(TregError::Singular(format!("alpha_bar = {abar}")));
    }
    let (sa, sn) = (abar.sqrt(), (1.0 - abar).max(0.0).sqrt());
    Ok(z_t.iter().zip(eps).map(|(z, e)| (z - sn * e) / sa).collect())
}

/// On-disk prior schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorDocument {
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_mode: Option<NullMode>,
    pub concepts: Vec<ConceptDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConceptDocument {
    pub label: String,
    pub components: Vec<ComponentDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentDocument {
    pub w: f64,
    /// Latent-space mean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    /// Pixel-space mean, encoded with the run's codec at load time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_mean: Option<Vec<f64>>,
    pub var: f64,
}

impl PriorDocument {
    pub fn into_prior(self, codec: Option<&LatentCodec>) -> Result<ConceptPrior> {
        let mut concepts = Vec::with_capacity(self.concepts.len());
        for c in self.concepts {
            let mut components = Vec::with_capacity(c.components.len());
            for comp in c.components {
                let mean = match (comp.mean, comp.pixel_mean) {
                    (Some(m), None) => m,
                    (None, Some(px)) => {
                        let codec = codec.ok_or_else(|| {
                            TregError::config("prior", "pixel_mean components need a codec")
                        })?;
                        codec.encode_mean(&px)?
                    }
                    _ => {
                        return Err(TregError::config(
                            "prior.concepts.components",
                            format!("`{}`: exactly one of mean / pixel_mean required", c.label),
                        ))
                    }
                };
                components.push(Component {
                    weight: comp.w,
                    mean,
                    var: comp.var,
                });
            }
            concepts.push(Concept {
                label: c.label,
                components,
            });
        }
        ConceptPrior::new(self.d, concepts, self.null_mode.unwrap_or_default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(mean: Vec<f64>, var: f64) -> ConceptPrior {
        let d = mean.len();
        ConceptPrior::new(
            d,
            vec![Concept {
                label: "a".into(),
                components: vec![Component { weight: 1.0, mean, var }],
            }],
            NullMode::UniformMarginal,
        )
        .unwrap()
    }

    fn two_modes(m: f64) -> ConceptPrior {
        ConceptPrior::new(
            2,
            vec![
                Concept {
                    label: "plus".into(),
                    components: vec![Component { weight: 1.0, mean: vec![m, 0.5], var: 0.3 }],
                },
                Concept {
                    label: "minus".into(),
                    components: vec![Component { weight: 1.0, mean: vec![-m, -0.5], var: 0.3 }],
                },
            ],
            NullMode::UniformMarginal,
        )
        .unwrap()
    }

    #[test]
    fn standard_normal_example() {
        let p = single(vec![0.0, 0.0], 1.0);
        let e = p.eps_cond_at_abar(&[2.0, 0.0], 0.25);
        // (z - abar z) / sqrt(1 - abar) = 1.5 / sqrt(0.75)
        assert!((e[0] - 1.5 / 0.75f64.sqrt()).abs() < 1e-12);
        assert!((e[0] - 1.7320508).abs() < 1e-6);
        assert_eq!(e[1], 0.0);
        let z0 = tweedie_at(&[2.0, 0.0], 0.25, &e).unwrap();
        assert!((z0[0] - 1.0).abs() < 1e-12 && z0[1].abs() < 1e-12);
    }

    impl ConceptPrior {
        fn eps_cond_at_abar(&self, z: &[f64], abar: f64) -> Vec<f64> {
            let m = self.posterior_mean_at(z, abar, &Condition::Concept(0)).unwrap();
            z.iter()
                .zip(&m)
                .map(|(zi, mi)| (zi - abar.sqrt() * mi) / (1.0 - abar).sqrt())
                .collect()
        }
    }

    #[test]
    fn symmetric_cases_vanish() {
        let s = NoiseSchedule::default();
        let p = single(vec![0.0, 0.0], 1.0);
        assert_eq!(p.eps_cond(&[0.0, 0.0], 500, "a", &s).unwrap(), vec![0.0, 0.0]);

        let sym = ConceptPrior::new(
            2,
            vec![Concept {
                label: "pm".into(),
                components: vec![
                    Component { weight: 0.5, mean: vec![1.0, 2.0], var: 0.2 },
                    Component { weight: 0.5, mean: vec![-1.0, -2.0], var: 0.2 },
                ],
            }],
            NullMode::UniformMarginal,
        )
        .unwrap();
        let e = sym.eps_cond(&[0.0, 0.0], 300, "pm", &s).unwrap();
        assert!(e.iter().all(|v| v.abs() < 1e-15));

        let two = two_modes(1.5);
        let e = two.eps_null(&[0.0, 0.0], 300, &[0.5, 0.5], &s).unwrap();
        assert!(e.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn null_reductions() {
        let s = NoiseSchedule::default();
        let two = two_modes(1.0);
        let z = [0.3, -0.7];
        let one_hot = two.eps_null(&z, 400, &[0.0, 1.0], &s).unwrap();
        assert_eq!(one_hot, two.eps_cond(&z, 400, "minus", &s).unwrap());

        let p = single(vec![1.0, -1.0], 0.5);
        assert_eq!(
            p.eps_null(&z, 400, &[1.0], &s).unwrap(),
            p.eps_cond(&z, 400, "a", &s).unwrap()
        );
        assert!(matches!(
            two.eps_null(&z, 400, &[0.7, 0.7], &s),
            Err(TregError::Contract(_))
        ));
    }

    #[test]
    fn errors() {
        let s = NoiseSchedule::default();
        let p = single(vec![0.0], 1.0);
        assert!(matches!(p.eps_cond(&[0.0], 10, "b", &s), Err(TregError::UnknownConcept(_))));
        assert!(matches!(p.eps_cond(&[0.0], 0, "a", &s), Err(TregError::TimestepRange { .. })));
        assert!(matches!(p.eps_cond(&[0.0], 1001, "a", &s), Err(TregError::TimestepRange { .. })));
        assert!(tweedie_at(&[1.0], 0.0, &[0.0]).is_err());
    }

    #[test]
    fn cfg_endpoints() {
        let n = [0.2, -0.4];
        let c = [1.0, 3.0];
        assert_eq!(eps_cfg(&n, &c, 0.0), n.to_vec());
        assert_eq!(eps_cfg(&n, &c, 1.0), c.to_vec());
        assert_eq!(eps_cfg(&[0.0, 0.0], &[1.0, 0.0], 7.5), vec![7.5, 0.0]);
    }

    #[test]
    fn tweedie_identities() {
        let s = NoiseSchedule::default();
        let z = [0.4, -1.2];
        assert_eq!(tweedie(&z, 0, &[5.0, 5.0], &s).unwrap(), z.to_vec());
        let abar: f64 = 0.25;
        let e: Vec<f64> = z.iter().map(|v| v / (1.0 - abar).sqrt()).collect();
        let out = tweedie_at(&z, abar, &e).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn single_component_jacobian_is_scaled_identity() {
        let s = NoiseSchedule::default();
        let p = single(vec![0.5, -0.5, 1.0], 1.0);
        let t = 321;
        let jac = p.posterior_mean_jacobian(&[0.1, 0.2, 0.3], t, &Condition::Concept(0), &s).unwrap();
        let expect = s.alpha_bar(t).sqrt();
        for a in 0..3 {
            for b in 0..3 {
                let target = if a == b { expect } else { 0.0 };
                assert!((jac[(a, b)] - target).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_component_posterior_mean_formula() {
        let p = single(vec![0.5, -1.0], 1.0);
        let abar: f64 = 0.6;
        let z = [0.9, 0.3];
        let got = p.posterior_mean_at(&z, abar, &Condition::Concept(0)).unwrap();
        for i in 0..2 {
            let m = [0.5, -1.0][i];
            let want = m + abar.sqrt() * (z[i] - abar.sqrt() * m);
            assert!((got[i] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn near_noiseless_limit_returns_input() {
        let p = two_modes(2.0);
        let abar = 1.0 - 1e-12;
        let z = [0.3, 4.0];
        let got = p.posterior_mean_at(&z, abar, &Condition::Null(&[0.5, 0.5])).unwrap();
        assert!((got[0] - 0.3).abs() < 1e-9 && (got[1] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn vjp_matches_full_jacobian() {
        let s = NoiseSchedule::default();
        let p = two_modes(1.3);
        let z = [0.2, -0.1];
        let u = [0.7, -1.9];
        for t in [50, 400, 900] {
            let w = [0.3, 0.7];
            let cond = Condition::Null(&w);
            let jac = p.posterior_mean_jacobian(&z, t, &cond, &s).unwrap();
            let vjp = p.posterior_mean_vjp(&z, t, &cond, &s, &u).unwrap();
            for b in 0..2 {
                let want = jac[(0, b)] * u[0] + jac[(1, b)] * u[1];
                assert!((vjp[b] - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let p = two_modes(1.0);
        let text = serde_json::to_string(&p.to_document()).unwrap();
        let back = ConceptPrior::from_json(&text, None).unwrap();
        assert_eq!(back, p);

        let bad = r#"{"d":1,"concepts":[{"label":"x","components":[{"w":0.6,"mean":[0],"var":1}]}]}"#;
        assert!(ConceptPrior::from_json(bad, None).is_err());
        let dup = r#"{"d":1,"concepts":[{"label":"x","components":[{"w":1,"mean":[0],"var":1}]},
            {"label":"x","components":[{"w":1,"mean":[1],"var":1}]}]}"#;
        assert!(ConceptPrior::from_json(dup, None).is_err());
        let neg = r#"{"d":1,"concepts":[{"label":"x","components":[{"w":1,"mean":[0],"var":0}]}]}"#;
        assert!(ConceptPrior::from_json(neg, None).is_err());
        let px = r#"{"d":1,"concepts":[{"label":"x","components":[{"w":1,"pixel_mean":[0],"var":1}]}]}"#;
        assert!(ConceptPrior::from_json(px, None).is_err());
    }
}
