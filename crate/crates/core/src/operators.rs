//! Forward measurement operators `y = A(x) + noise` on row-major `h x w`
//! pixel grids.
//!
//! Linear operators expose an exact adjoint; phase retrieval exposes only
//! the gradient of its squared residual.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, TregError};
use crate::fft2::Fft2;
use crate::rng::{self, streams};
use crate::vecops;

/// Default measurement noise std (variance 0.01).
pub const DEFAULT_SIGMA0: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorKind {
    /// Block average over `factor x factor` tiles.
    Downsample { factor: usize },
    /// Circular convolution with a normalized `kernel_size x kernel_size` Gaussian.
    GaussianBlur { kernel_size: usize, sigma: f64 },
    /// Elementwise mask, 1 = observed, 0 = erased.
    BoxInpaint { mask: Vec<u8> },
    /// DFT magnitude of the image zero-padded by `pad` on every side.
    PhaseRetrieval { pad: usize },
}

impl OperatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            OperatorKind::Downsample { .. } => "downsample",
            OperatorKind::GaussianBlur { .. } => "blur",
            OperatorKind::BoxInpaint { .. } => "inpaint",
            OperatorKind::PhaseRetrieval { .. } => "phase_retrieval",
        }
    }
}

#[derive(Debug, Clone)]
enum Plan {
    None,
    Blur { fft: Fft2, transfer: Vec<Complex64> },
    Phase { fft: Fft2, rows: usize, cols: usize },
}

#[derive(Debug, Clone)]
pub struct ForwardOperator {
    kind: OperatorKind,
    height: usize,
    width: usize,
    out_dim: usize,
    plan: Plan,
}

/// A noisy measurement and how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub y: Vec<f64>,
    pub sigma0: f64,
    pub op_id: String,
    pub seed: u64,
}

impl ForwardOperator {
    pub fn new(kind: OperatorKind, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(TregError::config("operator", "image shape must be non-empty"));
        }
        let (out_dim, plan) = match &kind {
            OperatorKind::Downsample { factor } => {
                let f = *factor;
                if f == 0 || !height.is_multiple_of(f) || !width.is_multiple_of(f) {
                    return Err(TregError::config(
                        "operator.factor",
                        format!("{f} must divide {height}x{width}"),
                    ));
                }
                ((height / f) * (width / f), Plan::None)
            }
            OperatorKind::GaussianBlur { kernel_size, sigma } => {
                let k = *kernel_size;
                if k % 2 == 0 || k > height.min(width) {
                    return Err(TregError::config(
                        "operator.kernel_size",
                        format!("{k} must be odd and at most {}", height.min(width)),
                    ));
                }
                if !(*sigma > 0.0) {
                    return Err(TregError::config("operator.sigma", "must be positive"));
                }
                let fft = Fft2::new(height, width);
                let mut transfer = vec![Complex64::new(0.0, 0.0); height * width];
                let kernel = gaussian_kernel(k, *sigma);
                let r = (k / 2) as isize;
                for a in -r..=r {
                    for b in -r..=r {
                        let row = a.rem_euclid(height as isize) as usize;
                        let col = b.rem_euclid(width as isize) as usize;
                        transfer[row * width + col].re +=
                            kernel[((a + r) as usize) * k + (b + r) as usize];
                    }
                }
                fft.forward(&mut transfer);
                (height * width, Plan::Blur { fft, transfer })
            }
            OperatorKind::BoxInpaint { mask } => {
                check_len("inpainting mask", height * width, mask.len())?;
                if mask.iter().any(|&v| v > 1) {
                    return Err(TregError::config("operator.mask", "entries must be 0 or 1"));
                }
                (height * width, Plan::None)
            }
            OperatorKind::PhaseRetrieval { pad } => {
                let (rows, cols) = (height + 2 * pad, width + 2 * pad);
                (rows * cols, Plan::Phase { fft: Fft2::new(rows, cols), rows, cols })
            }
        };
        Ok(Self {
            kind,
            height,
            width,
            out_dim,
            plan,
        })
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn in_dim(&self) -> usize {
        self.height * self.width
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn is_linear(&self) -> bool {
        !matches!(self.kind, OperatorKind::PhaseRetrieval { .. })
    }

    /// Short identifier recorded alongside measurements.
    pub fn id(&self) -> String {
        match &self.kind {
            OperatorKind::Downsample { factor } => format!("downsample-f{factor}-{}x{}", self.height, self.width),
            OperatorKind::GaussianBlur { kernel_size, sigma } => {
                format!("blur-k{kernel_size}-s{sigma}-{}x{}", self.height, self.width)
            }
            OperatorKind::BoxInpaint { mask } => {
                let kept: usize = mask.iter().map(|&v| v as usize).sum();
                format!("inpaint-{kept}of{}-{}x{}", mask.len(), self.height, self.width)
            }
            OperatorKind::PhaseRetrieval { pad } => format!("phase-p{pad}-{}x{}", self.height, self.width),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("operator input", self.in_dim(), x.len())?;
        Ok(match (&self.kind, &self.plan) {
            (OperatorKind::Downsample { factor }, _) => self.block_average(x, *factor),
            (OperatorKind::GaussianBlur { .. }, Plan::Blur { fft, transfer }) => {
                circular_filter(fft, transfer, x, false)
            }
            (OperatorKind::BoxInpaint { mask }, _) => {
                x.iter().zip(mask).map(|(v, &m)| if m == 1 { *v } else { 0.0 }).collect()
            }
            (OperatorKind::PhaseRetrieval { pad }, Plan::Phase { fft, rows, cols }) => {
                let mut buf = self.padded(x, *pad, *rows, *cols);
                fft.forward(&mut buf);
                buf.iter().map(|c| c.norm()).collect()
            }
            _ => unreachable!("plan matches kind by construction"),
        })
    }

    /// Exact adjoint of `apply` for linear operators.
    pub fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("operator adjoint input", self.out_dim, y.len())?;
        match (&self.kind, &self.plan) {
            (OperatorKind::Downsample { factor }, _) => Ok(self.block_spread(y, *factor)),
            (OperatorKind::GaussianBlur { .. }, Plan::Blur { fft, transfer }) => {
                Ok(circular_filter(fft, transfer, y, true))
            }
            (OperatorKind::BoxInpaint { mask }, _) => {
                Ok(y.iter().zip(mask).map(|(v, &m)| if m == 1 { *v } else { 0.0 }).collect())
            }
            (OperatorKind::PhaseRetrieval { .. }, _) => Err(TregError::Unsupported(
                "phase retrieval has no linear adjoint".into(),
            )),
            _ => unreachable!("plan matches kind by construction"),
        }
    }

    /// Gradient of `||y - A(x)||^2` with respect to `x`.
    ///
    /// For phase retrieval, frequency bins with `|F P x| = 0` contribute zero.
    pub fn residual_gradient(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_len("operator input", self.in_dim(), x.len())?;
        check_len("measurement", self.out_dim, y.len())?;
        match (&self.kind, &self.plan) {
            (OperatorKind::PhaseRetrieval { pad }, Plan::Phase { fft, rows, cols }) => {
                let mut buf = self.padded(x, *pad, *rows, *cols);
                fft.forward(&mut buf);
                for (c, &yk) in buf.iter_mut().zip(y) {
                    let mag = c.norm();
                    *c = if mag > 0.0 { *c * ((mag - yk) / mag) } else { Complex64::new(0.0, 0.0) };
                }
                fft.inverse(&mut buf);
                let mut grad = Vec::with_capacity(self.in_dim());
                for r in 0..self.height {
                    for c in 0..self.width {
                        grad.push(2.0 * buf[(r + pad) * cols + c + pad].re);
                    }
                }
                Ok(grad)
            }
            _ => {
                let ax = self.apply(x)?;
                let resid = vecops::sub(&ax, y);
                Ok(vecops::scale(2.0, &self.adjoint(&resid)?))
            }
        }
    }

    /// `||y - A(x)||^2`
    pub fn residual_sq(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_len("measurement", self.out_dim, y.len())?;
        Ok(vecops::dist_sq(&self.apply(x)?, y))
    }

    /// `y = A(x_true) + sigma0 * eps` with `eps` from the seeded measurement stream.
    pub fn simulate_measurement(&self, x_true: &[f64], sigma0: f64, seed: u64) -> Result<Measurement> {
        if !(sigma0 >= 0.0) || !sigma0.is_finite() {
            return Err(TregError::config("measurement.sigma0", format!("{sigma0} must be >= 0")));
        }
        let mut y = self.apply(x_true)?;
        if sigma0 > 0.0 {
            let noise = rng::normal_vec(&mut rng::stream(seed, streams::MEASUREMENT), y.len());
            vecops::axpy(sigma0, &noise, &mut y);
        }
        Ok(Measurement {
            y,
            sigma0,
            op_id: self.id(),
            seed,
        })
    }

    fn block_average(&self, x: &[f64], f: usize) -> Vec<f64> {
        let (oh, ow) = (self.height / f, self.width / f);
        let norm = 1.0 / (f * f) as f64;
        let mut out = vec![0.0; oh * ow];
        for r in 0..self.height {
            for c in 0..self.width {
                out[(r / f) * ow + c / f] += x[r * self.width + c] * norm;
            }
        }
        out
    }

    fn block_spread(&self, y: &[f64], f: usize) -> Vec<f64> {
        let ow = self.width / f;
        let norm = 1.0 / (f * f) as f64;
        let mut out = vec![0.0; self.in_dim()];
        for r in 0..self.height {
            for c in 0..self.width {
                out[r * self.width + c] = y[(r / f) * ow + c / f] * norm;
            }
        }
        out
    }

    fn padded(&self, x: &[f64], pad: usize, rows: usize, cols: usize) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); rows * cols];
        for r in 0..self.height {
            for c in 0..self.width {
                buf[(r + pad) * cols + c + pad].re = x[r * self.width + c];
            }
        }
        buf
    }
}

fn circular_filter(fft: &Fft2, transfer: &[Complex64], x: &[f64], conjugate: bool) -> Vec<f64> {
    let mut buf = Fft2::from_real(x);
    fft.forward(&mut buf);
    for (b, h) in buf.iter_mut().zip(transfer) {
        *b *= if conjugate { h.conj() } else { *h };
    }
    fft.inverse(&mut buf);
    let n = fft.len() as f64;
    buf.iter().map(|c| c.re / n).collect()
}

/// Normalized `k x k` Gaussian kernel, row-major.
pub fn gaussian_kernel(k: usize, sigma: f64) -> Vec<f64> {
    let r = (k / 2) as f64;
    let mut kernel: Vec<f64> = (0..k * k)
        .map(|i| {
            let (a, b) = ((i / k) as f64 - r, (i % k) as f64 - r);
            (-(a * a + b * b) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= total);
    kernel
}

/// Rotates a row-major image by 180 degrees.
pub fn flip180(x: &[f64], height: usize, width: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), height * width);
    x.iter().rev().copied().collect()
}

/// Circular shift by `(dr, dc)` pixels.
pub fn circular_shift(x: &[f64], height: usize, width: usize, dr: isize, dc: isize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..height {
        for c in 0..width {
            let nr = (r as isize + dr).rem_euclid(height as isize) as usize;
            let nc = (c as isize + dc).rem_euclid(width as isize) as usize;
            out[nr * width + nc] = x[r * width + c];
        }
    }
    out
}
