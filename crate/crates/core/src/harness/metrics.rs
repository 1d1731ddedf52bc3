use crate::error::{check_len, Result, TregError};
use crate::operators::ForwardOperator;
use crate::vecops;

/// `10 log10(peak^2 / mse)`; `f64::INFINITY` for identical inputs.
pub fn psnr(x: &[f64], reference: &[f64], peak: f64) -> Result<f64> {
    check_len("psnr", reference.len(), x.len())?;
    if !(peak > 0.0) {
        return Err(TregError::Contract("psnr peak must be positive".into()));
    }
    let mse = vecops::dist_sq(x, reference) / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Mean squared measurement residual `||y - A(x)||^2 / n`.
pub fn y_mse(op: &ForwardOperator, x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(op.residual_sq(x, y)? / y.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelVariance {
    pub map: Vec<f64>,
    pub profile: Vec<f64>,
}

impl PixelVariance {
    pub fn mean(&self) -> f64 {
        self.map.iter().sum::<f64>() / self.map.len() as f64
    }
}

/// Per-pixel unbiased sample variance over `runs`, plus the values along
/// `row` of an image `width` pixels wide.
pub fn pixel_variance(runs: &[Vec<f64>], width: usize, row: usize) -> Result<PixelVariance> {
    if runs.len() < 2 {
        return Err(TregError::Contract(format!("pixel variance needs >= 2 runs, got {}", runs.len())));
    }
    let m = runs[0].len();
    for r in runs {
        check_len("pixel variance run", m, r.len())?;
    }
    if width == 0 || !m.is_multiple_of(width) || row >= m / width {
        return Err(TregError::config(
            "experiment.profile_row",
            format!("row {row} outside a {}x{width} image", m / width.max(1)),
        ));
    }
    let n = runs.len() as f64;
    let map: Vec<f64> = (0..m)
        .map(|i| {
            let mean = runs.iter().map(|r| r[i]).sum::<f64>() / n;
            runs.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / (n - 1.0)
        })
        .collect();
    let profile = map[row * width..(row + 1) * width].to_vec();
    Ok(PixelVariance { map, profile })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::OperatorKind;

    #[test]
    fn psnr_cases() {
        let x = [0.5; 4];
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);
        let r = [0.6; 4];
        assert!((psnr(&x, &r, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let gain = psnr(&x, &r, 2.0).unwrap() - psnr(&x, &r, 1.0).unwrap();
        assert!((gain - 20.0 * 2f64.log10()).abs() < 1e-12);
        assert!((gain - 6.0206).abs() < 1e-4);
        assert!(psnr(&x, &[0.0; 3], 1.0).is_err());
    }

    #[test]
    fn y_mse_cases() {
        let op = ForwardOperator::new(OperatorKind::BoxInpaint { mask: vec![1, 1, 1] }, 1, 3).unwrap();
        let x = [0.1, 0.2, 0.3];
        assert_eq!(y_mse(&op, &x, &x).unwrap(), 0.0);
        let shifted: Vec<f64> = x.iter().map(|v| v + 0.5).collect();
        assert!((y_mse(&op, &x, &shifted).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn variance_cases() {
        let same = vec![vec![0.3; 4], vec![0.3; 4]];
        assert_eq!(pixel_variance(&same, 2, 0).unwrap().map, vec![0.0; 4]);
        let v = pixel_variance(&[vec![0.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0]], 2, 1).unwrap();
        assert_eq!(v.map, vec![0.5, 0.0, 0.0, 0.0]);
        assert_eq!(v.profile, vec![0.0, 0.0]);
        assert!(pixel_variance(&same[..1], 2, 0).is_err());
        assert!(pixel_variance(&same, 2, 2).is_err());
    }
}
