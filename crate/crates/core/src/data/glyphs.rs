//! Procedural stroke images, for exercising the image path without external
//! downloads.
//!
//! Each class is a template of a few random bright strokes. A sample is its
//! template shifted by up to one pixel in each direction, plus Gaussian pixel
//! noise, clamped to `[0, 1]` and quantised to bytes like an IDX file would be.

use serde::{Deserialize, Serialize};

use super::{DataError, LabeledDataset};
use crate::numeric::{DenseMatrix, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlyphSpec {
    pub classes: usize,
    pub side: usize,
    pub strokes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise: f64,
}

impl Default for GlyphSpec {
    fn default() -> Self {
        Self {
            classes: 30,
            side: 12,
            strokes: 3,
            train_per_class: 60,
            test_per_class: 20,
            noise: 0.15,
        }
    }
}

fn template(side: usize, strokes: usize, rng: &mut RngStream) -> Vec<f64> {
    let mut img = vec![0.0; side * side];
    let s = side as isize;
    for _ in 0..strokes {
        let (mut r, mut c) = (rng.below(side) as isize, rng.below(side) as isize);
        let dirs = [(0, 1), (1, 0), (1, 1), (1, -1)];
        let (dr, dc) = dirs[rng.below(dirs.len())];
        let len = side / 3 + rng.below(side / 2 + 1);
        for _ in 0..len {
            if (0..s).contains(&r) && (0..s).contains(&c) {
                img[(r * s + c) as usize] = 1.0;
            }
            r += dr;
            c += dc;
        }
    }
    img
}

fn sample(tpl: &[f64], side: usize, noise: f64, rng: &mut RngStream, out: &mut Vec<f64>) {
    let dr = rng.below(3) as isize - 1;
    let dc = rng.below(3) as isize - 1;
    let s = side as isize;
    for r in 0..s {
        for c in 0..s {
            let (sr, sc) = (r - dr, c - dc);
            let base = if (0..s).contains(&sr) && (0..s).contains(&sc) {
                tpl[(sr * s + sc) as usize]
            } else {
                0.0
            };
            let v = (base + noise * rng.standard_normal()).clamp(0.0, 1.0);
            out.push((v * 255.0).round() / 255.0);
        }
    }
}

/// Generates a `(train, test)` pair of square image datasets.
pub fn gen_glyph_dataset(
    spec: &GlyphSpec,
    rng: &RngStream,
) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    if spec.classes == 0 || spec.classes > 256 || spec.side < 3 {
        return Err(DataError::Invalid(
            "glyph datasets need 1..=256 classes and side >= 3".into(),
        ));
    }
    if spec.train_per_class == 0 || spec.test_per_class == 0 {
        return Err(DataError::Invalid("glyph splits must be non-empty".into()));
    }
    let mut tpl_rng = rng.derive("templates");
    let templates: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| template(spec.side, spec.strokes, &mut tpl_rng))
        .collect();
    let build = |per_class: usize, label: &str| -> Result<LabeledDataset, DataError> {
        let mut r = rng.derive(label);
        let mut px = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..per_class {
            for (c, tpl) in templates.iter().enumerate() {
                sample(tpl, spec.side, spec.noise, &mut r, &mut px);
                labels.push(c);
            }
        }
        let n = labels.len();
        LabeledDataset::new(
            DenseMatrix::from_vec(n, spec.side * spec.side, px)?,
            Some((spec.side, spec.side)),
            labels,
            spec.classes,
        )
    };
    Ok((build(spec.train_per_class, "train")?, build(spec.test_per_class, "test")?))
}
