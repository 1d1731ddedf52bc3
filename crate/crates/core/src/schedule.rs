//! Discrete variance-preserving noise schedule and the DDIM coefficients
//! derived from it.
//!
//! Timesteps are 1-based: `alpha_bar(t)` for `t` in `1..=T`, with the
//! sentinel `alpha_bar(0) == 1` so the final reverse step needs no branch.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TregError};

pub const DEFAULT_TIMESTEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 0.00085;
pub const DEFAULT_BETA_END: f64 = 0.012;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    timesteps: usize,
    /// Length `T + 1`, index 0 is the noiseless sentinel.
    alpha_bar: Vec<f64>,
    /// Length `T`, entry `t - 1` holds the coefficient of step `t`.
    beta_tilde: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear-beta schedule: `beta_s` evenly spaced on `[beta_start, beta_end]`
    /// and `alpha_bar_t = prod_{s <= t} (1 - beta_s)`.
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps == 0 {
            return Err(TregError::config("schedule.T", "must be at least 1"));
        }
        if !(beta_start > 0.0 && beta_start < 1.0) {
            return Err(TregError::config(
                "schedule.beta_start",
                format!("{beta_start} not in (0, 1)"),
            ));
        }
        if !(beta_end > 0.0 && beta_end < 1.0) {
            return Err(TregError::config(
                "schedule.beta_end",
                format!("{beta_end} not in (0, 1)"),
            ));
        }
        if beta_end < beta_start {
            return Err(TregError::config(
                "schedule.beta_end",
                format!("{beta_end} is below beta_start {beta_start}"),
            ));
        }

        let betas: Vec<f64> = (0..timesteps)
            .map(|i| {
                if timesteps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (timesteps - 1) as f64
                }
            })
            .collect();

        let mut alpha_bar = Vec::with_capacity(timesteps + 1);
        alpha_bar.push(1.0);
        let mut prod = 1.0;
        for beta in &betas {
            prod *= 1.0 - beta;
            alpha_bar.push(prod);
        }
        Self::from_alpha_bar(alpha_bar)
    }

    /// Builds a schedule from an explicit `alpha_bar` table (index 0 must be 1).
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(TregError::config("schedule.alpha_bar", "needs T + 1 >= 2 entries"));
        }
        if alpha_bar[0] != 1.0 {
            return Err(TregError::config("schedule.alpha_bar", "alpha_bar[0] must be 1"));
        }
        for t in 1..alpha_bar.len() {
            let (prev, cur) = (alpha_bar[t - 1], alpha_bar[t]);
            if !(cur > 0.0 && cur < prev) {
                return Err(TregError::config(
                    "schedule.alpha_bar",
                    format!("not strictly decreasing and positive at t = {t}"),
                ));
            }
        }
        let beta_tilde = (1..alpha_bar.len())
            .map(|t| {
                let (prev, cur) = (alpha_bar[t - 1], alpha_bar[t]);
                ((1.0 - prev) / (1.0 - cur)).sqrt() * (1.0 - cur / prev).sqrt()
            })
            .collect();
        Ok(Self {
            timesteps: alpha_bar.len() - 1,
            alpha_bar,
            beta_tilde,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    /// `alpha_bar_t` for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// DDIM posterior std coefficient for step `t` in `1..=T`.
    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tilde[t - 1]
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.timesteps {
            return Err(TregError::TimestepRange {
                t,
                max: self.timesteps,
            });
        }
        Ok(())
    }

    /// `nfe` strictly decreasing timesteps with uniform stride `T / nfe`,
    /// starting at `T` and ending at the stride.
    pub fn subsample_steps(&self, nfe: usize) -> Result<Vec<usize>> {
        if nfe == 0 || nfe > self.timesteps {
            return Err(TregError::config(
                "solver.nfe",
                format!("{nfe} not in 1..={}", self.timesteps),
            ));
        }
        let stride = self.timesteps as f64 / nfe as f64;
        Ok((0..nfe)
            .map(|i| (self.timesteps as f64 - i as f64 * stride).round() as usize)
            .collect())
    }

    /// Default DDIM stochasticity `sqrt(abar_prev * (1 - abar_prev))`.
    pub fn default_stochasticity(abar_prev: f64) -> f64 {
        (abar_prev * (1.0 - abar_prev)).sqrt()
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_TIMESTEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule parameters are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_first_step_and_monotone() {
        let s = NoiseSchedule::default();
        assert!((s.alpha_bar(1) - 0.99915).abs() < 1e-15);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!(s.alpha_bar(1000) > 0.0);
        for t in 1..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.beta_tilde(t).is_finite() && s.beta_tilde(t) >= 0.0);
        }
    }

    #[test]
    fn cumulative_product_oracle() {
        // Independent oracle: log-space accumulation of the same betas.
        let s = NoiseSchedule::default();
        let mut log_acc = 0.0f64;
        for t in 1..=1000usize {
            let beta = 0.00085 + (0.012 - 0.00085) * (t - 1) as f64 / 999.0;
            log_acc += (1.0 - beta).ln();
            assert!((s.alpha_bar(t) - log_acc.exp()).abs() < 1e-12 * log_acc.exp().max(1e-3));
        }
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar(1), 0.5);
    }

    #[test]
    fn rejects_zero_beta() {
        let err = NoiseSchedule::linear(2, 0.0, 0.01).unwrap_err();
        assert!(err.to_string().contains("beta_start"));
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(5, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::linear(5, 0.2, 1.0).is_err());
    }

    #[test]
    fn subsampling() {
        let s = NoiseSchedule::default();
        let steps = s.subsample_steps(200).unwrap();
        assert_eq!(steps.len(), 200);
        assert_eq!(steps[0], 1000);
        assert!(steps.windows(2).all(|w| w[0] - w[1] == 5));
        assert_eq!(*steps.last().unwrap(), 5);

        let small = NoiseSchedule::linear(10, 0.01, 0.02).unwrap();
        assert_eq!(small.subsample_steps(10).unwrap(), (1..=10).rev().collect::<Vec<_>>());
        assert_eq!(small.subsample_steps(2).unwrap(), vec![10, 5]);
        assert_eq!(small.subsample_steps(3).unwrap(), vec![10, 7, 3]);
        assert!(small.subsample_steps(11).is_err());
        assert!(small.subsample_steps(0).is_err());
    }

    #[test]
    fn default_stochasticity_keeps_noise_real() {
        let s = NoiseSchedule::default();
        for t in 0..=1000 {
            let ab = s.alpha_bar(t);
            let st = NoiseSchedule::default_stochasticity(ab);
            assert!(st * st <= 1.0 - ab + 1e-15);
        }
    }

    #[test]
    fn beta_tilde_first_step_is_zero() {
        let s = NoiseSchedule::default();
        assert_eq!(s.beta_tilde(1), 0.0);
    }
}
