//! Oracle suites: each compares a solver component against an independent
//! computation on seeded random instances.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::Serialize;

use super::Workspace;
use crate::codec::{CodecSpec, LatentCodec};
use crate::consistency::{cg_solve, proximal_objective, CgParams};
use crate::error::Result;
use crate::negation::{EmbeddingParams, EmbeddingState};
use crate::operators::{ForwardOperator, OperatorKind};
use crate::prior::{tweedie, Component, Concept, ConceptPrior, Condition, NullMode};
use crate::rng::{self, Rng};
use crate::sampler::{dps_gradient, dps_gradient_fd, DpsLoss, Guidance, Problem};
use crate::schedule::NoiseSchedule;
use crate::vecops;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteOutcome {
    pub name: String,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl SuiteOutcome {
    fn new(name: &str, cases: usize, max_error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            cases,
            max_error,
            tolerance,
            passed: max_error.is_finite() && max_error <= tolerance,
        }
    }
}

impl std::fmt::Display for SuiteOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<28} cases={:<4} max_error={:.3e} tolerance={:.0e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.max_error,
            self.tolerance
        )
    }
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Random prior with `d <= 2`, two concepts of one to three components.
pub fn random_small_prior(rng: &mut Rng) -> ConceptPrior {
    let d = rng.random_range(1..=2);
    let concepts = (0..2)
        .map(|k| {
            let n = rng.random_range(1..=3);
            let raw: Vec<f64> = (0..n).map(|_| uniform(rng, 0.2, 1.0)).collect();
            let total: f64 = raw.iter().sum();
            Concept {
                label: format!("c{k}"),
                components: raw
                    .iter()
                    .map(|w| Component {
                        weight: w / total,
                        mean: (0..d).map(|_| uniform(rng, -2.0, 2.0)).collect(),
                        var: uniform(rng, 0.05, 2.0),
                    })
                    .collect(),
            }
        })
        .collect();
    ConceptPrior::new(d, concepts, NullMode::UniformMarginal).expect("valid random prior")
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((x - mean).powi(2) / var + (2.0 * std::f64::consts::PI * var).ln())
}

/// Posterior mean of a concept by conjugate updates, weights in log space.
pub fn closed_form_posterior_mean(concept: &Concept, z_t: &[f64], abar: f64) -> Vec<f64> {
    let sa = abar.sqrt();
    let logs: Vec<f64> = concept
        .components
        .iter()
        .map(|c| {
            let s2 = abar * c.var + 1.0 - abar;
            c.weight.ln()
                + z_t
                    .iter()
                    .zip(&c.mean)
                    .map(|(z, m)| log_normal(*z, sa * m, s2))
                    .sum::<f64>()
        })
        .collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    (0..z_t.len())
        .map(|j| {
            concept
                .components
                .iter()
                .zip(&w)
                .map(|(c, wi)| {
                    let prec = 1.0 / c.var + abar / (1.0 - abar);
                    let m = (c.mean[j] / c.var + sa * z_t[j] / (1.0 - abar)) / prec;
                    wi * m
                })
                .sum::<f64>()
                / total
        })
        .collect()
}

/// `(log int f, int z f / int f)` for `f(z) = N(z; m, v) N(z_t; sqrt(abar) z, 1 - abar)`
/// by composite Simpson on a grid found by scanning the log integrand.
fn quad_1d(m: f64, v: f64, z_t: f64, abar: f64) -> (f64, f64) {
    let sa = abar.sqrt();
    let lf = |z: f64| log_normal(z, m, v) + log_normal(z_t, sa * z, 1.0 - abar);
    let width = v.sqrt().min(((1.0 - abar) / abar).sqrt());
    let (lo, hi) = {
        let a = m.min(z_t / sa);
        let b = m.max(z_t / sa);
        let pad = 12.0 * v.sqrt().max(((1.0 - abar) / abar).sqrt());
        (a - pad, b + pad)
    };
    let scan = 20_001;
    let mut best = (lo, f64::NEG_INFINITY);
    for i in 0..scan {
        let z = lo + (hi - lo) * i as f64 / (scan - 1) as f64;
        let l = lf(z);
        if l > best.1 {
            best = (z, l);
        }
    }
    let (a, b) = (best.0 - 14.0 * width, best.0 + 14.0 * width);
    let n = 4000;
    let h = (b - a) / n as f64;
    let (mut i0, mut i1) = (0.0, 0.0);
    for i in 0..=n {
        let z = a + h * i as f64;
        let coef = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let f = (lf(z) - best.1).exp();
        i0 += coef * f;
        i1 += coef * z * f;
    }
    i0 *= h / 3.0;
    i1 *= h / 3.0;
    (best.1 + i0.ln(), i1 / i0)
}

/// Posterior mean of a concept by numerical integration, dimension by
/// dimension within each (isotropic) component.
pub fn quadrature_posterior_mean(concept: &Concept, z_t: &[f64], abar: f64) -> Vec<f64> {
    let per: Vec<(f64, Vec<f64>)> = concept
        .components
        .iter()
        .map(|c| {
            let parts: Vec<(f64, f64)> = z_t
                .iter()
                .zip(&c.mean)
                .map(|(z, m)| quad_1d(*m, c.var, *z, abar))
                .collect();
            (
                c.weight.ln() + parts.iter().map(|p| p.0).sum::<f64>(),
                parts.iter().map(|p| p.1).collect(),
            )
        })
        .collect();
    let top = per.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = per.iter().map(|p| (p.0 - top).exp()).collect();
    let total: f64 = w.iter().sum();
    (0..z_t.len())
        .map(|j| per.iter().zip(&w).map(|(p, wi)| wi * p.1[j]).sum::<f64>() / total)
        .collect()
}

/// Returns the quadrature and closed-form outcomes.
pub fn tweedie_suite(seed: u64, cases: usize) -> Result<(SuiteOutcome, SuiteOutcome)> {
    let sched = NoiseSchedule::default();
    let mut rng = rng::stream(seed, 11);
    let (mut quad_err, mut closed_err) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let prior = random_small_prior(&mut rng);
        let k = rng.random_range(0..prior.num_concepts());
        let t = rng.random_range(1..=sched.timesteps());
        let z_t: Vec<f64> = (0..prior.dim()).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
        let label = prior.concepts()[k].label.clone();
        let eps = prior.eps_cond(&z_t, t, &label, &sched)?;
        let est = tweedie(&z_t, t, &eps, &sched)?;
        let concept = &prior.concepts()[k];
        let abar = sched.alpha_bar(t);
        let q = quadrature_posterior_mean(concept, &z_t, abar);
        let c = closed_form_posterior_mean(concept, &z_t, abar);
        for j in 0..est.len() {
            quad_err = quad_err.max((est[j] - q[j]).abs());
            closed_err = closed_err.max((est[j] - c[j]).abs());
        }
    }
    Ok((
        SuiteOutcome::new("tweedie_vs_quadrature", cases, quad_err, 1e-6),
        SuiteOutcome::new("tweedie_vs_closed_form", cases, closed_err, 1e-10),
    ))
}

fn random_linear_operator(rng: &mut Rng) -> ForwardOperator {
    loop {
        let h = rng.random_range(2..=8);
        let w = rng.random_range(2..=8);
        let kind = match rng.random_range(0..3) {
            0 => {
                let k = 2 * rng.random_range(0..=(h.min(w) - 1) / 2) + 1;
                OperatorKind::GaussianBlur {
                    kernel_size: k,
                    sigma: uniform(rng, 0.5, 2.0),
                }
            }
            1 => OperatorKind::Downsample {
                factor: rng.random_range(1..=h.min(w)),
            },
            _ => OperatorKind::BoxInpaint {
                mask: (0..h * w).map(|_| u8::from(rng.random_bool(0.6))).collect(),
            },
        };
        if let Ok(op) = ForwardOperator::new(kind, h, w) {
            return op;
        }
    }
}

/// Dense matrix of a linear operator, column by column.
pub fn dense_matrix(op: &ForwardOperator) -> Result<DMatrix<f64>> {
    let n = op.in_dim();
    let mut a = DMatrix::zeros(op.out_dim(), n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = op.apply(&e)?;
        e[j] = 0.0;
        a.set_column(j, &DVector::from_vec(col));
    }
    Ok(a)
}

pub fn cg_dense_suite(seed: u64, cases: usize) -> Result<SuiteOutcome> {
    let mut rng = rng::stream(seed, 12);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let op = random_linear_operator(&mut rng);
        let n = op.in_dim();
        let y = rng::normal_vec(&mut rng, op.out_dim());
        let anchor = rng::normal_vec(&mut rng, n);
        let lambda = 10f64.powf(uniform(&mut rng, -3.0, 0.0));
        let a = dense_matrix(&op)?;
        let lhs = a.transpose() * &a + DMatrix::identity(n, n) * lambda;
        let rhs = a.transpose() * DVector::from_column_slice(&y) + DVector::from_column_slice(&anchor) * lambda;
        let exact = lhs.cholesky().expect("SPD").solve(&rhs);
        let x = cg_solve(&op, &y, &anchor, &CgParams { lambda, iters: n, tol: 0.0 }, None)?;
        let err = (DVector::from_vec(x) - &exact).norm() / exact.norm().max(f64::MIN_POSITIVE);
        worst = worst.max(err);
    }
    Ok(SuiteOutcome::new("cg_vs_dense_solve", cases, worst, 1e-8))
}

/// Relative reduction `1 - f(x_5) / f(anchor)` of the proximal objective
/// under the shipped CG defaults, anchored at the decoded null mean.
pub fn cg_default_reduction(ws: &Workspace) -> Result<f64> {
    let weights = ws.prior.uniform_weights();
    let (mean, _) = ws.prior.moments(&Condition::Null(&weights))?;
    let anchor = ws.codec.decode(&mean)?;
    let params = CgParams::default();
    let y = &ws.measurement.y;
    let before = proximal_objective(&ws.op, y, &anchor, params.lambda, &anchor)?;
    let x = cg_solve(&ws.op, y, &anchor, &params, None)?;
    let after = proximal_objective(&ws.op, y, &anchor, params.lambda, &x)?;
    Ok(1.0 - after / before)
}

/// Relative adjoint mismatch over `pairs` random pairs for each operator.
pub fn adjoint_error(op: &ForwardOperator, rng: &mut Rng, pairs: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let x = rng::normal_vec(rng, op.in_dim());
        let y = rng::normal_vec(rng, op.out_dim());
        let lhs = vecops::dot(&op.apply(&x)?, &y);
        let rhs = vecops::dot(&x, &op.adjoint(&y)?);
        let scale = lhs.abs().max(rhs.abs()).max(vecops::norm(&x) * vecops::norm(&y) * 1e-3);
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    Ok(worst)
}

pub fn adjoint_suite(seed: u64, extra: Option<&ForwardOperator>) -> Result<SuiteOutcome> {
    let mut rng = rng::stream(seed, 13);
    let mut ops = vec![
        ForwardOperator::new(OperatorKind::GaussianBlur { kernel_size: 13, sigma: 2.5 }, 32, 32)?,
        ForwardOperator::new(OperatorKind::GaussianBlur { kernel_size: 3, sigma: 0.8 }, 5, 7)?,
        ForwardOperator::new(OperatorKind::Downsample { factor: 4 }, 32, 32)?,
        ForwardOperator::new(OperatorKind::Downsample { factor: 3 }, 6, 9)?,
        ForwardOperator::new(
            OperatorKind::BoxInpaint { mask: crate::fixtures::box_mask(12) },
            crate::fixtures::SIZE,
            crate::fixtures::SIZE,
        )?,
    ];
    if let Some(op) = extra.filter(|o| o.is_linear()) {
        ops.push(op.clone());
    }
    let mut worst = 0.0f64;
    for op in &ops {
        worst = worst.max(adjoint_error(op, &mut rng, 100)?);
    }
    Ok(SuiteOutcome::new("adjoint_dot_tests", 100 * ops.len(), worst, 1e-10))
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    vecops::dist_sq(a, b).sqrt() / vecops::norm(b).max(vecops::norm(a)).max(1e-300)
}

/// Central differences of `||y - A(x)||^2` in `x`.
pub fn residual_gradient_fd(op: &ForwardOperator, x: &[f64], y: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut xp = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = op.residual_sq(&xp, y)?;
        xp[i] = x[i] - h;
        let fm = op.residual_sq(&xp, y)?;
        xp[i] = x[i];
        g.push((fp - fm) / (2.0 * h));
    }
    Ok(g)
}

fn random_small_operator(rng: &mut Rng, h: usize, w: usize) -> Result<ForwardOperator> {
    let kind = match rng.random_range(0..4) {
        0 => OperatorKind::GaussianBlur { kernel_size: 3, sigma: uniform(rng, 0.5, 1.5) },
        1 => OperatorKind::Downsample { factor: 2 },
        2 => OperatorKind::BoxInpaint {
            mask: (0..h * w).map(|_| u8::from(rng.random_bool(0.7))).collect(),
        },
        _ => OperatorKind::PhaseRetrieval { pad: rng.random_range(1..=2) },
    };
    ForwardOperator::new(kind, h, w)
}

pub fn residual_gradient_suite(seed: u64, cases: usize) -> Result<SuiteOutcome> {
    let mut rng = rng::stream(seed, 14);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let op = random_small_operator(&mut rng, 4, 4)?;
        let x: Vec<f64> = (0..16).map(|_| uniform(&mut rng, 0.0, 1.0)).collect();
        let x_other: Vec<f64> = (0..16).map(|_| uniform(&mut rng, 0.0, 1.0)).collect();
        let y = op.apply(&x_other)?;
        let g = op.residual_gradient(&x, &y)?;
        let fd = residual_gradient_fd(&op, &x, &y, 1e-6)?;
        worst = worst.max(relative_error(&g, &fd));
    }
    Ok(SuiteOutcome::new("residual_gradient_vs_fd", cases, worst, 1e-5))
}

pub fn dps_gradient_suite(seed: u64, cases: usize) -> Result<SuiteOutcome> {
    let mut rng = rng::stream(seed, 15);
    let sched = NoiseSchedule::default();
    let mut worst = 0.0f64;
    for case in 0..cases {
        let codec = LatentCodec::new(CodecSpec { m: 16, d: 8, seed: case as u64, sigma_e: 0.0 })?;
        let concepts = (0..2)
            .map(|k| Concept {
                label: format!("c{k}"),
                components: (0..2)
                    .map(|_| Component {
                        weight: 0.5,
                        mean: (0..8).map(|_| uniform(&mut rng, -1.0, 1.0)).collect(),
                        var: uniform(&mut rng, 0.1, 1.0),
                    })
                    .collect(),
            })
            .collect();
        let prior = ConceptPrior::new(8, concepts, NullMode::EmbeddingWeighted)?;
        let op = random_small_operator(&mut rng, 4, 4)?;
        let emb = EmbeddingState::new(&EmbeddingParams { q: 4, ..EmbeddingParams::default() }, &prior, &codec)?;
        let weights = emb.null_weights();
        let problem = Problem {
            sched: &sched,
            prior: &prior,
            codec: &codec,
            op: &op,
            embedding: &emb,
        };
        let guidance = Guidance {
            concept: rng.random_bool(0.5).then_some(0),
            null_weights: &weights,
            omega: uniform(&mut rng, 0.0, 4.0),
        };
        let t = rng.random_range(50..=sched.timesteps());
        let z_t = rng::normal_vec(&mut rng, 8);
        let x_other: Vec<f64> = (0..16).map(|_| uniform(&mut rng, 0.0, 1.0)).collect();
        let y = op.apply(&x_other)?;
        let loss = if case % 2 == 0 { DpsLoss::Norm } else { DpsLoss::SquaredNorm };
        let g = dps_gradient(&problem, &guidance, loss, &z_t, t, &y)?;
        let fd = dps_gradient_fd(&problem, &guidance, loss, &z_t, t, &y, 1e-5)?;
        worst = worst.max(relative_error(&g, &fd));
    }
    Ok(SuiteOutcome::new("dps_gradient_vs_fd", cases, worst, 1e-5))
}

/// Every suite; the workspace adds its operator to the adjoint tests and,
/// for linear operators, the CG default-reduction check.
pub fn run_all(seed: u64, ws: Option<&Workspace>) -> Result<Vec<SuiteOutcome>> {
    let (quad, closed) = tweedie_suite(seed, 100)?;
    let mut out = vec![
        quad,
        closed,
        cg_dense_suite(seed, 50)?,
        adjoint_suite(seed, ws.map(|w| &w.op))?,
        residual_gradient_suite(seed, 50)?,
        dps_gradient_suite(seed, 50)?,
    ];
    if let Some(ws) = ws.filter(|w| w.op.is_linear()) {
        let reduction = cg_default_reduction(ws)?;
        let mut s = SuiteOutcome::new("cg_default_reduction", 1, 1.0 - reduction, 0.1);
        s.passed = reduction >= 0.9;
        out.push(s);
    }
    Ok(out)
}
