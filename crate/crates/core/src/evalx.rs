//! Evaluation: Dice overlap, the Q_area confidence score, Euclidean
//! simplex projection and quasi-multi-label segmentation built from
//! one-vs-rest AMF solves.

use serde::Serialize;

use crate::amf::{amf_solve, AmfParams};
use crate::error::{Error, Result};
use crate::field::{LabelField, ProbabilityField};
use crate::likelihood::{psi_from_probability, ClampRange};
use crate::par::map_indexed;

/// `2|a ∩ b| / (|a| + |b|)`; two empty sets score 1.
pub fn dice(a: &LabelField, b: &LabelField) -> Result<f64> {
    a.ensure_same_dims(b.dims())?;
    let both = a.labels().iter().zip(b.labels()).filter(|(&x, &y)| x == 1 && y == 1).count();
    let total = a.area() + b.area();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / total as f64)
}

/// Mean of per-object Dice scores.
pub fn multi_label_dice(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::param("need at least one Dice score"));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Euclidean projection onto `{x >= 0, sum x = 1}` by sorting and
/// thresholding.
pub fn simplex_project(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty(), "cannot project an empty vector");
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

/// Per-class probability maps over a shared grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassProbStack {
    maps: Vec<ProbabilityField>,
}

impl ClassProbStack {
    pub fn new(maps: Vec<ProbabilityField>) -> Result<Self> {
        if maps.len() < 2 {
            return Err(Error::param(format!("need at least two classes, got {}", maps.len())));
        }
        for m in &maps[1..] {
            maps[0].ensure_same_dims(m.dims())?;
        }
        Ok(ClassProbStack { maps })
    }

    pub fn k(&self) -> usize {
        self.maps.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.maps[0].dims()
    }

    pub fn maps(&self) -> &[ProbabilityField] {
        &self.maps
    }

    pub fn into_maps(self) -> Vec<ProbabilityField> {
        self.maps
    }

    pub fn pixel(&self, k: usize) -> Vec<f64> {
        self.maps.iter().map(|m| m.theta()[k]).collect()
    }
}

/// Per-pixel class indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMap {
    width: usize,
    height: usize,
    classes: Vec<u8>,
}

impl ClassMap {
    pub fn new(width: usize, height: usize, classes: Vec<u8>) -> Result<Self> {
        if classes.len() != width * height {
            return Err(Error::InvalidField(format!(
                "expected {} class indices, got {}",
                width * height,
                classes.len()
            )));
        }
        Ok(ClassMap { width, height, classes })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn mask(&self, class: u8) -> LabelField {
        LabelField::new(self.width, self.height, self.classes.iter().map(|&c| (c == class) as u8).collect())
            .expect("binary mask")
    }
}

fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (c, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = c;
        }
    }
    best
}

/// Binary AMF for each class against the rest.
pub fn one_vs_rest(stack: &ClassProbStack, params: &AmfParams) -> Result<Vec<ProbabilityField>> {
    params.validate()?;
    map_indexed(stack.k(), |c| {
        let psi = psi_from_probability(&stack.maps[c], ClampRange::default());
        amf_solve(&psi, params).map(|s| s.theta)
    })
    .into_iter()
    .collect()
}

/// Project each pixel's class vector onto the simplex and label it with the
/// arg max (ties to the lowest class index).
pub fn quasi_multilabel(thetas: &[ProbabilityField]) -> Result<(ClassProbStack, ClassMap)> {
    let stack = ClassProbStack::new(thetas.to_vec())?;
    if stack.k() > 256 {
        return Err(Error::param("at most 256 classes are supported"));
    }
    let (w, h) = stack.dims();
    let mut projected = vec![Vec::with_capacity(w * h); stack.k()];
    let mut classes = Vec::with_capacity(w * h);
    for k in 0..w * h {
        let p = simplex_project(&stack.pixel(k));
        classes.push(argmax_lowest(&p) as u8);
        for (dst, &x) in projected.iter_mut().zip(&p) {
            dst.push(x.min(1.0));
        }
    }
    let maps = projected
        .into_iter()
        .map(|v| ProbabilityField::new(w, h, v))
        .collect::<Result<Vec<_>>>()?;
    Ok((ClassProbStack::new(maps)?, ClassMap::new(w, h, classes)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QArea {
    pub value: f64,
    /// An empty region's term was left out.
    pub dropped_foreground: bool,
    pub dropped_background: bool,
}

/// Area-normalized approximate posterior mass of `z`:
/// `exp(mean_F ln theta + mean_B ln(1 - theta))`, with theta clamped to
/// `[1e-5, 1 - 1e-5]`.
pub fn q_area(z: &LabelField, theta: &ProbabilityField) -> Result<QArea> {
    z.ensure_same_dims(theta.dims())?;
    let clamp = ClampRange::default();
    let (mut sf, mut nf, mut sb, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for (&l, &t) in z.labels().iter().zip(theta.theta()) {
        let t = clamp.apply(t);
        if l == 1 {
            sf += t.ln();
            nf += 1;
        } else {
            sb += (1.0 - t).ln();
            nb += 1;
        }
    }
    let term = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(QArea {
        value: (term(sf, nf) + term(sb, nb)).exp(),
        dropped_foreground: nf == 0,
        dropped_background: nb == 0,
    })
}
