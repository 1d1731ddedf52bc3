//! Pixel-space data-consistency solvers for
//! `min_x ||y - A(x)||^2 + lambda ||x - anchor||^2`.
//!
//! Linear operators use conjugate gradient on the normal equations
//! `(lambda I + A^T A) x = lambda anchor + A^T y`; the nonlinear phase
//! retrieval operator uses Adam on the same objective.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, TregError};
use crate::operators::ForwardOperator;
use crate::vecops;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgParams {
    pub lambda: f64,
    pub iters: usize,
    /// Early exit once the system residual norm drops below this; 0 disables.
    pub tol: f64,
}

impl Default for CgParams {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            iters: 5,
            tol: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub iters: usize,
    pub lambda: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            iters: 50,
            lambda: 0.0,
        }
    }
}

const ADAM_EPS: f64 = 1e-8;

/// Per-iteration diagnostics of a CG solve. Index 0 is the warm start.
#[derive(Debug, Clone, Default)]
pub struct CgTrace {
    pub residual_norms: Vec<f64>,
    pub objectives: Vec<f64>,
}

/// `lambda ||x - anchor||^2 + ||y - A x||^2`
pub fn proximal_objective(op: &ForwardOperator, y: &[f64], anchor: &[f64], lambda: f64, x: &[f64]) -> Result<f64> {
    Ok(lambda * vecops::dist_sq(x, anchor) + op.residual_sq(x, y)?)
}

pub fn cg_solve(
    op: &ForwardOperator,
    y: &[f64],
    anchor: &[f64],
    params: &CgParams,
    warm_start: Option<&[f64]>,
) -> Result<Vec<f64>> {
    Ok(cg_solve_traced(op, y, anchor, params, warm_start, false)?.0)
}

/// CG on the proximal normal equations. When `record` is set, the system
/// residual norm and proximal objective are logged after every iteration.
pub fn cg_solve_traced(
    op: &ForwardOperator,
    y: &[f64],
    anchor: &[f64],
    params: &CgParams,
    warm_start: Option<&[f64]>,
    record: bool,
) -> Result<(Vec<f64>, CgTrace)> {
    if !op.is_linear() {
        return Err(TregError::Unsupported(format!("CG needs a linear operator, got {}", op.id())));
    }
    if !(params.lambda > 0.0) {
        return Err(TregError::config("solver.cg.lambda", "must be positive"));
    }
    check_len("CG anchor", op.in_dim(), anchor.len())?;
    check_len("measurement", op.out_dim(), y.len())?;
    let lambda = params.lambda;
    let normal = |v: &[f64]| -> Result<Vec<f64>> {
        let mut out = op.adjoint(&op.apply(v)?)?;
        vecops::axpy(lambda, v, &mut out);
        Ok(out)
    };

    let mut b = op.adjoint(y)?;
    vecops::axpy(lambda, anchor, &mut b);

    let mut x = match warm_start {
        Some(w) => {
            check_len("CG warm start", op.in_dim(), w.len())?;
            w.to_vec()
        }
        None => anchor.to_vec(),
    };
    let mut r = vecops::sub(&b, &normal(&x)?);
    let mut p = r.clone();
    let mut rs = vecops::norm_sq(&r);
    let mut trace = CgTrace::default();
    if record {
        trace.residual_norms.push(rs.sqrt());
        trace.objectives.push(proximal_objective(op, y, anchor, lambda, &x)?);
    }

    for _ in 0..params.iters {
        if rs == 0.0 || (params.tol > 0.0 && rs.sqrt() < params.tol) {
            break;
        }
        let ap = normal(&p)?;
        let pap = vecops::dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rs / pap;
        vecops::axpy(alpha, &p, &mut x);
        vecops::axpy(-alpha, &ap, &mut r);
        let rs_new = vecops::norm_sq(&r);
        if record {
            trace.residual_norms.push(rs_new.sqrt());
            trace.objectives.push(proximal_objective(op, y, anchor, lambda, &x)?);
        }
        let beta = rs_new / rs;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rs = rs_new;
    }
    Ok((x, trace))
}

/// Adam on `||y - A(x)||^2 + lambda ||x - anchor||^2`, starting at `init`
/// (defaults to `anchor`).
pub fn adam_solve(
    op: &ForwardOperator,
    y: &[f64],
    anchor: &[f64],
    params: &AdamParams,
    init: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if !(params.lr > 0.0) {
        return Err(TregError::config("solver.adam.lr", "must be positive"));
    }
    if !(params.beta1 > 0.0 && params.beta1 < 1.0 && params.beta2 > 0.0 && params.beta2 < 1.0) {
        return Err(TregError::config("solver.adam.beta", "beta1, beta2 must lie in (0, 1)"));
    }
    if !(params.lambda >= 0.0) {
        return Err(TregError::config("solver.adam.lambda", "must be >= 0"));
    }
    check_len("Adam anchor", op.in_dim(), anchor.len())?;
    let mut x = match init {
        Some(v) => {
            check_len("Adam init", op.in_dim(), v.len())?;
            v.to_vec()
        }
        None => anchor.to_vec(),
    };
    let n = x.len();
    let mut m1 = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    let (mut b1t, mut b2t) = (1.0, 1.0);
    for _ in 0..params.iters {
        let mut g = op.residual_gradient(&x, y)?;
        if params.lambda > 0.0 {
            for ((gi, xi), ai) in g.iter_mut().zip(&x).zip(anchor) {
                *gi += 2.0 * params.lambda * (xi - ai);
            }
        }
        b1t *= params.beta1;
        b2t *= params.beta2;
        for i in 0..n {
            m1[i] = params.beta1 * m1[i] + (1.0 - params.beta1) * g[i];
            m2[i] = params.beta2 * m2[i] + (1.0 - params.beta2) * g[i] * g[i];
            let mhat = m1[i] / (1.0 - b1t);
            let vhat = m2[i] / (1.0 - b2t);
            x[i] -= params.lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::OperatorKind;
    use crate::rng;
    use nalgebra::{DMatrix, DVector};

    fn identity_2() -> ForwardOperator {
        ForwardOperator::new(OperatorKind::BoxInpaint { mask: vec![1, 1] }, 1, 2).unwrap()
    }

    #[test]
    fn identity_operator_halves() {
        let p = CgParams { lambda: 1.0, iters: 5, tol: 0.0 };
        let x = cg_solve(&identity_2(), &[1.0, 0.0], &[0.0, 0.0], &p, None).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-15 && x[1].abs() < 1e-15);
    }

    #[test]
    fn masked_operator_matches_dense_solve() {
        let op = ForwardOperator::new(OperatorKind::BoxInpaint { mask: vec![1, 0] }, 1, 2).unwrap();
        let p = CgParams { lambda: 0.5, iters: 10, tol: 0.0 };
        let x = cg_solve(&op, &[2.0, 123.0], &[1.0, 1.0], &p, None).unwrap();
        // Dense oracle: (0.5 I + diag(1, 0)) x = 0.5 (1, 1) + (2, 0)
        let a = DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 0.5]);
        let b = DVector::from_vec(vec![2.5, 0.5]);
        let dense = a.lu().solve(&b).unwrap();
        assert!((x[0] - dense[0]).abs() < 1e-14 && (x[1] - dense[1]).abs() < 1e-14);
        assert!((x[0] - 5.0 / 3.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn defaults() {
        let p = CgParams::default();
        assert_eq!((p.lambda, p.iters), (1e-4, 5));
        let a = AdamParams::default();
        assert_eq!((a.lr, a.beta1, a.beta2, a.lambda), (1e-3, 0.9, 0.999, 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let pr = ForwardOperator::new(OperatorKind::PhaseRetrieval { pad: 1 }, 2, 2).unwrap();
        let y = vec![0.0; pr.out_dim()];
        assert!(matches!(
            cg_solve(&pr, &y, &[0.0; 4], &CgParams::default(), None),
            Err(TregError::Unsupported(_))
        ));
        let bad = CgParams { lambda: 0.0, ..CgParams::default() };
        assert!(cg_solve(&identity_2(), &[0.0, 0.0], &[0.0, 0.0], &bad, None).is_err());
    }

    #[test]
    fn cg_objective_is_monotone() {
        let op = ForwardOperator::new(OperatorKind::GaussianBlur { kernel_size: 5, sigma: 1.5 }, 8, 8).unwrap();
        let y = rng::normal_vec(&mut rng::stream(1, 1), 64);
        let anchor = rng::normal_vec(&mut rng::stream(2, 1), 64);
        let p = CgParams { lambda: 1e-2, iters: 30, tol: 0.0 };
        let (_, trace) = cg_solve_traced(&op, &y, &anchor, &p, None, true).unwrap();
        assert!(trace.objectives.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn adam_descends_towards_the_minimizer() {
        let op = ForwardOperator::new(OperatorKind::GaussianBlur { kernel_size: 3, sigma: 1.0 }, 4, 4).unwrap();
        let y = rng::normal_vec(&mut rng::stream(3, 1), 16);
        let anchor = vec![0.2; 16];
        let params = AdamParams { lambda: 0.5, iters: 200, ..AdamParams::default() };
        let before = proximal_objective(&op, &y, &anchor, 0.5, &anchor).unwrap();
        let x = adam_solve(&op, &y, &anchor, &params, None).unwrap();
        let after = proximal_objective(&op, &y, &anchor, 0.5, &x).unwrap();
        assert!(after <= before);

        let exact = cg_solve(&op, &y, &anchor, &CgParams { lambda: 0.5, iters: 64, tol: 0.0 }, None).unwrap();
        let long = AdamParams { lr: 1e-2, iters: 5000, ..params };
        let x = adam_solve(&op, &y, &anchor, &long, None).unwrap();
        assert!(vecops::dist_sq(&x, &exact).sqrt() < 1e-3);
    }
}
