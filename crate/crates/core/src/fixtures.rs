//! Procedural generators for the shipped fixtures. The JSON and PGM files
//! under `fixtures/` are the serialized output of these functions.

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::harness::io;
use crate::operators::flip180;
use crate::prior::{ComponentDocument, ConceptDocument, NullMode, PriorDocument};

pub const SIZE: usize = 32;
pub const PIXELS: usize = SIZE * SIZE;

/// Amplitude of the concept texture in the ambiguity fixture.
pub const TEXTURE_AMPLITUDE: f64 = 0.2;
/// Per-component latent variance of the ambiguity fixture.
pub const AMBIGUITY_VAR: f64 = 0.005;
pub const SYMMETRY_VAR: f64 = 0.002;

fn image(f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    (0..PIXELS)
        .map(|i| f((i / SIZE) as f64, (i % SIZE) as f64))
        .collect()
}

fn disk(r: f64, c: f64, r0: f64, c0: f64, radius: f64) -> bool {
    (r - r0).powi(2) + (c - c0).powi(2) <= radius * radius
}

/// Four smooth base images shared by both concepts.
pub fn ambiguity_bases() -> Vec<Vec<f64>> {
    let span = (SIZE - 1) as f64;
    vec![
        image(|r, c| if disk(r, c, 10.0, 11.0, 7.0) { 1.0 } else { 0.0 }),
        image(|r, c| if disk(r, c, 20.0, 21.0, 8.0) { 0.0 } else { 1.0 }),
        image(|_, c| c / span),
        image(|r, c| {
            let ramp = 1.0 - r / span;
            if (6.0..=16.0).contains(&c) && (14.0..=26.0).contains(&r) { 1.0 - ramp } else { ramp }
        }),
    ]
}

/// Period-4 cosine stripes: varying along rows for `horizontal`, along
/// columns otherwise.
pub fn stripes(horizontal: bool) -> Vec<f64> {
    let quarter = std::f64::consts::FRAC_PI_2;
    image(|r, c| (quarter * if horizontal { r } else { c }).cos())
}

/// Labels of the ambiguity fixture.
pub const AMBIGUITY_LABELS: [&str; 2] = ["horizontal", "vertical"];
/// Base index and concept of the ambiguity ground truth.
pub const AMBIGUITY_TRUTH: (usize, usize) = (1, 0);

pub fn ambiguity_component(base: usize, concept: usize) -> Vec<f64> {
    let b = &ambiguity_bases()[base];
    let h = stripes(concept == 0);
    b.iter().zip(&h).map(|(bi, hi)| bi + TEXTURE_AMPLITUDE * hi).collect()
}

/// Two concepts over the same four bases, told apart only by stripe
/// orientation.
pub fn ambiguity_prior() -> PriorDocument {
    let concepts = AMBIGUITY_LABELS
        .iter()
        .enumerate()
        .map(|(k, label)| ConceptDocument {
            label: label.to_string(),
            components: (0..4)
                .map(|j| ComponentDocument {
                    w: 0.25,
                    mean: None,
                    pixel_mean: Some(ambiguity_component(j, k)),
                    var: AMBIGUITY_VAR,
                })
                .collect(),
        })
        .collect();
    PriorDocument {
        d: PIXELS,
        null_mode: Some(NullMode::EmbeddingWeighted),
        concepts,
    }
}

/// An asymmetric glyph: a bar with a foot, plus a blob in one corner.
pub fn symmetry_image() -> Vec<f64> {
    image(|r, c| {
        let stem = (6.0..=25.0).contains(&r) && (8.0..=11.0).contains(&c);
        let arm = (6.0..=9.0).contains(&r) && (8.0..=22.0).contains(&c);
        let bar = (14.0..=16.0).contains(&r) && (8.0..=18.0).contains(&c);
        if stem || arm || bar {
            0.9
        } else if disk(r, c, 23.0, 22.0, 4.0) {
            0.6
        } else {
            0.05
        }
    })
}

pub const SYMMETRY_LABELS: [&str; 2] = ["upright", "flipped"];

/// The glyph and its 180-degree rotation as two single-component concepts.
pub fn symmetry_prior() -> PriorDocument {
    let upright = symmetry_image();
    let flipped = flip180(&upright, SIZE, SIZE);
    let concepts = SYMMETRY_LABELS
        .iter()
        .zip([upright, flipped])
        .map(|(label, mean)| ConceptDocument {
            label: label.to_string(),
            components: vec![ComponentDocument {
                w: 1.0,
                mean: None,
                pixel_mean: Some(mean),
                var: SYMMETRY_VAR,
            }],
        })
        .collect();
    PriorDocument {
        d: PIXELS,
        null_mode: Some(NullMode::EmbeddingWeighted),
        concepts,
    }
}

/// Central square hole of side `hole`; 1 marks an observed pixel.
pub fn box_mask(hole: usize) -> Vec<u8> {
    let lo = (SIZE - hole) / 2;
    let hi = lo + hole;
    (0..PIXELS)
        .map(|i| {
            let (r, c) = (i / SIZE, i % SIZE);
            u8::from(!((lo..hi).contains(&r) && (lo..hi).contains(&c)))
        })
        .collect()
}

pub const AMBIGUITY_PRIOR_FILE: &str = "ambiguity_prior.json";
pub const SYMMETRY_PRIOR_FILE: &str = "symmetry_prior.json";
pub const INPAINT_MASK_FILE: &str = "inpaint_mask.pgm";
pub const INPAINT_HOLE: usize = 12;

/// Serialized form of every shipped fixture, keyed by file name.
pub fn shipped_files() -> Result<Vec<(&'static str, Vec<u8>)>> {
    let json = |doc: &PriorDocument| -> Result<Vec<u8>> {
        let mut text = serde_json::to_string(doc)?;
        text.push('\n');
        Ok(text.into_bytes())
    };
    let mask: Vec<f64> = box_mask(INPAINT_HOLE).iter().map(|&v| v as f64).collect();
    Ok(vec![
        (AMBIGUITY_PRIOR_FILE, json(&ambiguity_prior())?),
        (SYMMETRY_PRIOR_FILE, json(&symmetry_prior())?),
        (INPAINT_MASK_FILE, io::encode_pgm(&mask, SIZE, SIZE)?),
    ])
}

pub fn write_all(dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for (name, bytes) in shipped_files()? {
        let path = dir.join(name);
        std::fs::write(&path, bytes)?;
        out.push(path);
    }
    Ok(out)
}
