//! Linear latent codec: an encoder with orthonormal rows and its transpose
//! as decoder. `encode_mean(decode(z)) == z` for every latent `z`.

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, TregError};
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecSpec {
    pub m: usize,
    pub d: usize,
    pub seed: u64,
    pub sigma_e: f64,
}

#[derive(Debug, Clone)]
pub struct LatentCodec {
    spec: CodecSpec,
    /// `d x m`, orthonormal rows.
    enc: DMatrix<f64>,
}

impl LatentCodec {
    /// Encoder rows from the QR factorization of a seeded Gaussian matrix.
    pub fn new(spec: CodecSpec) -> Result<Self> {
        if spec.m == 0 || spec.d == 0 {
            return Err(TregError::config("codec", "m and d must be positive"));
        }
        if spec.d > spec.m {
            return Err(TregError::config(
                "codec.d",
                format!("latent dimension {} exceeds pixel dimension {}", spec.d, spec.m),
            ));
        }
        if !(spec.sigma_e >= 0.0) || !spec.sigma_e.is_finite() {
            return Err(TregError::config("codec.sigma_E", "must be finite and >= 0"));
        }
        let mut rng = rng::stream(spec.seed, streams::CODEC);
        let gauss = rng::normal_vec(&mut rng, spec.m * spec.d);
        let raw = DMatrix::from_vec(spec.m, spec.d, gauss);
        let q = raw.qr().q();
        Ok(Self {
            spec,
            enc: q.transpose(),
        })
    }

    /// Codec with a caller-supplied encoder; rows must be orthonormal.
    pub fn from_encoder(enc: DMatrix<f64>, sigma_e: f64) -> Result<Self> {
        let (d, m) = enc.shape();
        let gram = &enc * enc.transpose();
        let err = (gram - DMatrix::<f64>::identity(d, d)).abs().max();
        if err > 1e-10 {
            return Err(TregError::config("codec", format!("encoder rows not orthonormal ({err:e})")));
        }
        Ok(Self {
            spec: CodecSpec { m, d, seed: 0, sigma_e },
            enc,
        })
    }

    pub fn spec(&self) -> &CodecSpec {
        &self.spec
    }

    pub fn pixel_dim(&self) -> usize {
        self.spec.m
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.d
    }

    pub fn sigma_e(&self) -> f64 {
        self.spec.sigma_e
    }

    pub fn encoder(&self) -> &DMatrix<f64> {
        &self.enc
    }

    pub fn encode_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("codec encode", self.spec.m, x.len())?;
        let z: DVector<f64> = &self.enc * DVectorView::from_slice(x, x.len());
        Ok(z.data.into())
    }

    /// `encode_mean(x) + sigma_E * eps` with `eps` drawn from `rng`.
    pub fn encode_sample<R: rand::Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mut z = self.encode_mean(x)?;
        if self.spec.sigma_e > 0.0 {
            let noise = rng::normal_vec(rng, z.len());
            for (zi, ni) in z.iter_mut().zip(noise) {
                *zi += self.spec.sigma_e * ni;
            }
        }
        Ok(z)
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("codec decode", self.spec.d, z.len())?;
        let x: DVector<f64> = self.enc.tr_mul(&DVectorView::from_slice(z, z.len()));
        Ok(x.data.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecops;

    fn codec(m: usize, d: usize, sigma_e: f64) -> LatentCodec {
        LatentCodec::new(CodecSpec { m, d, seed: 3, sigma_e }).unwrap()
    }

    #[test]
    fn rows_are_orthonormal() {
        for (m, d) in [(16, 16), (16, 5)] {
            let c = codec(m, d, 0.0);
            let gram = c.encoder() * c.encoder().transpose();
            let err = (gram - DMatrix::<f64>::identity(d, d)).abs().max();
            assert!(err < 1e-10, "gram error {err}");
        }
    }

    #[test]
    fn square_codec_is_an_isometry() {
        let c = codec(12, 12, 0.0);
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let z = c.encode_mean(&x).unwrap();
        assert!((vecops::norm(&z) - vecops::norm(&x)).abs() < 1e-12);
        let back = c.decode(&z).unwrap();
        assert!(vecops::dist_sq(&back, &x) < 1e-24);
        assert!(c.encode_mean(&[0.0; 12]).unwrap().iter().all(|v| *v == 0.0));
        assert!(c.decode(&[0.0; 12]).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn thin_codec_projects() {
        let c = codec(20, 6, 0.0);
        let z: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let round = c.encode_mean(&c.decode(&z).unwrap()).unwrap();
        assert!(vecops::dist_sq(&round, &z) < 1e-24);

        let x: Vec<f64> = (0..20).map(|i| (i as f64).cos()).collect();
        let p1 = c.decode(&c.encode_mean(&x).unwrap()).unwrap();
        let p2 = c.decode(&c.encode_mean(&p1).unwrap()).unwrap();
        assert!(vecops::dist_sq(&p1, &p2) < 1e-24);
        assert!(vecops::norm(&p1) < vecops::norm(&x));
    }

    #[test]
    fn autoencoding_term_vanishes() {
        let c = codec(10, 4, 0.0);
        let z = [0.3, -2.0, 1.1, 0.0];
        let back = c.encode_mean(&c.decode(&z).unwrap()).unwrap();
        assert!(vecops::dist_sq(&z, &back) < 1e-24);
    }

    #[test]
    fn sampling() {
        let x: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let det = codec(8, 8, 0.0);
        let mut r = rng::stream(1, 9);
        assert_eq!(det.encode_sample(&x, &mut r).unwrap(), det.encode_mean(&x).unwrap());

        let noisy = codec(8, 8, 0.3);
        let a = noisy.encode_sample(&x, &mut rng::stream(5, 9)).unwrap();
        let b = noisy.encode_sample(&x, &mut rng::stream(5, 9)).unwrap();
        assert_eq!(a, b);

        // Monte-Carlo estimate of the encoder std.
        let mean = noisy.encode_mean(&x).unwrap();
        let mut r = rng::stream(11, 9);
        let mut acc = 0.0;
        let draws = 100_000 / 8;
        for _ in 0..draws {
            let z = noisy.encode_sample(&x, &mut r).unwrap();
            acc += vecops::dist_sq(&z, &mean);
        }
        let std = (acc / (draws * 8) as f64).sqrt();
        assert!((std - 0.3).abs() < 0.02 * 0.3, "std {std}");
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(LatentCodec::new(CodecSpec { m: 4, d: 5, seed: 0, sigma_e: 0.0 }).is_err());
        assert!(LatentCodec::new(CodecSpec { m: 4, d: 2, seed: 0, sigma_e: -1.0 }).is_err());
        let c = codec(4, 2, 0.0);
        assert!(c.encode_mean(&[1.0; 3]).is_err());
        assert!(c.decode(&[1.0; 3]).is_err());
    }
}
