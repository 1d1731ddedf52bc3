//! Adaptive negation in a toy joint embedding space.
//!
//! Images are embedded by a fixed linear map with orthonormal rows followed
//! by normalization. Concept embeddings are the embeddings of each concept's
//! decoded mean image, so text and image embeddings share one space. The
//! null embedding is pushed away from the current reconstruction and
//! re-weights the concepts of the null prediction through a softmax.

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::codec::LatentCodec;
use crate::error::{check_len, Result, TregError};
use crate::prior::ConceptPrior;
use crate::rng::{self, streams};
use crate::vecops;

pub const NULL_NORM_CAP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingParams {
    pub q: usize,
    pub seed: u64,
    pub kappa: f64,
    pub lr: f64,
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        Self {
            q: 16,
            seed: 0,
            kappa: 10.0,
            lr: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingState {
    concept_emb: Vec<Vec<f64>>,
    img_proj: DMatrix<f64>,
    c_null: Vec<f64>,
    kappa: f64,
    lr: f64,
}

/// Similarity of the reconstruction embedding to `c_null` around one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegationStep {
    pub before: f64,
    pub after: f64,
}

impl EmbeddingState {
    /// Builds the embedder from `params.seed` and embeds every concept's
    /// decoded mean image.
    pub fn new(params: &EmbeddingParams, prior: &ConceptPrior, codec: &LatentCodec) -> Result<Self> {
        let m = codec.pixel_dim();
        if params.q == 0 || params.q > m {
            return Err(TregError::config("negation.q", format!("must lie in 1..={m}")));
        }
        let mut r = rng::stream(params.seed, streams::EMBEDDING);
        let raw = DMatrix::from_vec(m, params.q, rng::normal_vec(&mut r, m * params.q));
        let img_proj = raw.qr().q().transpose();

        let mut state = Self::from_parts(Vec::new(), img_proj, params.kappa, params.lr)?;
        let mut concept_emb = Vec::with_capacity(prior.num_concepts());
        for concept in prior.concepts() {
            let image = codec.decode(&concept.mean())?;
            let e = state.embed_image(&image)?;
            if vecops::norm(&e) == 0.0 {
                return Err(TregError::config(
                    "negation",
                    format!("concept `{}` embeds to the zero vector", concept.label),
                ));
            }
            concept_emb.push(e);
        }
        state.set_concepts(concept_emb)?;
        Ok(state)
    }

    /// Explicit construction; `c_null` starts at the mean of the concept rows.
    pub fn from_parts(concept_emb: Vec<Vec<f64>>, img_proj: DMatrix<f64>, kappa: f64, lr: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(TregError::config("negation.kappa", "must be positive"));
        }
        if !(lr >= 0.0) {
            return Err(TregError::config("negation.lr", "must be >= 0"));
        }
        let mut state = Self {
            concept_emb: Vec::new(),
            c_null: vec![0.0; img_proj.nrows()],
            img_proj,
            kappa,
            lr,
        };
        if !concept_emb.is_empty() {
            state.set_concepts(concept_emb)?;
        }
        Ok(state)
    }

    fn set_concepts(&mut self, concept_emb: Vec<Vec<f64>>) -> Result<()> {
        let q = self.img_proj.nrows();
        let mut c_null = vec![0.0; q];
        for e in &concept_emb {
            check_len("concept embedding", q, e.len())?;
            if (vecops::norm(e) - 1.0).abs() > 1e-9 {
                return Err(TregError::config("negation", "concept embeddings must be unit-norm"));
            }
            vecops::axpy(1.0 / concept_emb.len() as f64, e, &mut c_null);
        }
        self.concept_emb = concept_emb;
        self.c_null = c_null;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.img_proj.nrows()
    }

    pub fn concept_embeddings(&self) -> &[Vec<f64>] {
        &self.concept_emb
    }

    pub fn c_null(&self) -> &[f64] {
        &self.c_null
    }

    pub fn set_c_null(&mut self, c: Vec<f64>) -> Result<()> {
        check_len("null embedding", self.dim(), c.len())?;
        self.c_null = c;
        self.cap_norm();
        Ok(())
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        if !(lr >= 0.0) {
            return Err(TregError::config("negation.lr", "must be >= 0"));
        }
        self.lr = lr;
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `normalize(img_proj x)`; the zero vector for images in its null space.
    pub fn embed_image(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("embedded image", self.img_proj.ncols(), x.len())?;
        let v: DVector<f64> = &self.img_proj * DVectorView::from_slice(x, x.len());
        let n = v.norm();
        Ok(if n > 0.0 {
            v.iter().map(|vi| vi / n).collect()
        } else {
            vec![0.0; v.len()]
        })
    }

    pub fn similarity(&self, x: &[f64]) -> Result<f64> {
        Ok(vecops::dot(&self.embed_image(x)?, &self.c_null))
    }

    /// One descent step on `<embed(x_hat), c_null>` in `c_null`, followed by
    /// projection onto the norm ball of radius `NULL_NORM_CAP`.
    pub fn negate_step(&mut self, x_hat: &[f64]) -> Result<NegationStep> {
        let e = self.embed_image(x_hat)?;
        let before = vecops::dot(&e, &self.c_null);
        vecops::axpy(-self.lr, &e, &mut self.c_null);
        self.cap_norm();
        let after = vecops::dot(&e, &self.c_null);
        Ok(NegationStep { before, after })
    }

    fn cap_norm(&mut self) {
        let n = vecops::norm(&self.c_null);
        if n > NULL_NORM_CAP {
            let s = NULL_NORM_CAP / n;
            self.c_null.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// `softmax(kappa <c_null, e_k>)` over the concepts.
    pub fn null_weights(&self) -> Vec<f64> {
        let logits: Vec<f64> = self
            .concept_emb
            .iter()
            .map(|e| self.kappa * vecops::dot(&self.c_null, e))
            .collect();
        vecops::softmax(&logits)
    }
}
