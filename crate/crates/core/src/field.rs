//! Grid containers and the discrete differential operators shared by the
//! solvers.
//!
//! Pixels are addressed as `(i, j)` with `i` the column (x) and `j` the row
//! (y); storage is row-major, top row first. Gradients use forward
//! differences with a Neumann boundary (the difference leaving the grid is
//! zero), and [`divergence`] is defined as the exact negative adjoint of
//! [`gradient`], so `<grad f, v> = -<f, div v>` holds to rounding error.

use crate::error::{Error, Result};

/// Discretization of the total variation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TvMode {
    /// Euclidean norm of the forward-difference gradient.
    #[serde(rename = "iso")]
    Isotropic,
    /// Sum of absolute forward differences.
    #[serde(rename = "aniso")]
    Anisotropic,
}

impl TvMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TvMode::Isotropic => "iso",
            TvMode::Anisotropic => "aniso",
        }
    }
}

impl std::fmt::Display for TvMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TvMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iso" | "isotropic" => Ok(TvMode::Isotropic),
            "aniso" | "anisotropic" => Ok(TvMode::Anisotropic),
            other => Err(Error::param(format!(
                "unknown TV mode '{other}' (expected iso or aniso)"
            ))),
        }
    }
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidField(format!(
            "dimensions must be positive, got {width}x{height}"
        )));
    }
    if width * height != len {
        return Err(Error::InvalidField(format!(
            "{width}x{height} grid needs {} values, got {len}",
            width * height
        )));
    }
    Ok(())
}

macro_rules! grid_common {
    ($ty:ident) => {
        impl $ty {
            #[inline]
            pub fn width(&self) -> usize {
                self.width
            }

            #[inline]
            pub fn height(&self) -> usize {
                self.height
            }

            #[inline]
            pub fn dims(&self) -> (usize, usize) {
                (self.width, self.height)
            }

            /// Number of pixels.
            #[inline]
            pub fn len(&self) -> usize {
                self.width * self.height
            }

            #[inline]
            pub fn is_empty(&self) -> bool {
                self.len() == 0
            }

            #[inline]
            pub fn index(&self, i: usize, j: usize) -> usize {
                debug_assert!(i < self.width && j < self.height);
                j * self.width + i
            }

            pub fn ensure_same_dims(&self, other: (usize, usize)) -> Result<()> {
                if self.dims() != other {
                    return Err(Error::DimensionMismatch {
                        expected: self.dims(),
                        found: other,
                    });
                }
                Ok(())
            }
        }
    };
}

/// Real-valued 2D grid: images, logit fields, denoised fields.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

grid_common!(ScalarField);

impl ScalarField {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!(
                "non-finite value {} at index {k}",
                values[k]
            )));
        }
        Ok(ScalarField {
            width,
            height,
            values,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "empty grid");
        ScalarField {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0)
    }

    /// Builds a field from `f(i, j)`, `i` the column and `j` the row.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "empty grid");
        let mut values = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                values.push(f(i, j));
            }
        }
        ScalarField {
            width,
            height,
            values,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.index(i, j);
        self.values[k] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> ScalarField {
        ScalarField {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        self.ensure_same_dims(other.dims())?;
        Ok(ScalarField {
            width: self.width,
            height: self.height,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn dot(&self, other: &ScalarField) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Two-component vector field on the pixel grid (gradients, ROF dual
/// variables).
#[derive(Clone, Debug, PartialEq)]
pub struct DualField {
    width: usize,
    height: usize,
    px: Vec<f64>,
    py: Vec<f64>,
}

grid_common!(DualField);

impl DualField {
    pub fn new(width: usize, height: usize, px: Vec<f64>, py: Vec<f64>) -> Result<Self> {
        check_dims(width, height, px.len())?;
        check_dims(width, height, py.len())?;
        Ok(DualField {
            width,
            height,
            px,
            py,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "empty grid");
        DualField {
            width,
            height,
            px: vec![0.0; width * height],
            py: vec![0.0; width * height],
        }
    }

    pub fn px(&self) -> &[f64] {
        &self.px
    }

    pub fn py(&self) -> &[f64] {
        &self.py
    }

    pub fn components_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.px, &mut self.py)
    }

    pub fn dot(&self, other: &DualField) -> f64 {
        assert_eq!(self.dims(), other.dims());
        let x: f64 = self.px.iter().zip(&other.px).map(|(a, b)| a * b).sum();
        let y: f64 = self.py.iter().zip(&other.py).map(|(a, b)| a * b).sum();
        x + y
    }

    /// Largest per-pixel violation of the unit ball of `mode`'s dual norm
    /// (zero when feasible).
    pub fn max_norm_excess(&self, mode: TvMode) -> f64 {
        self.px
            .iter()
            .zip(&self.py)
            .map(|(&x, &y)| match mode {
                TvMode::Isotropic => (x * x + y * y).sqrt() - 1.0,
                TvMode::Anisotropic => x.abs().max(y.abs()) - 1.0,
            })
            .fold(0.0, f64::max)
    }
}

/// Binary label map.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelField {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

grid_common!(LabelField);

impl LabelField {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        check_dims(width, height, labels.len())?;
        if let Some(k) = labels.iter().position(|&l| l > 1) {
            return Err(Error::InvalidField(format!(
                "label {} at index {k} is not 0 or 1",
                labels[k]
            )));
        }
        Ok(LabelField {
            width,
            height,
            labels,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "empty grid");
        LabelField {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(width > 0 && height > 0, "empty grid");
        let mut labels = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                labels.push(f(i, j) as u8);
            }
        }
        LabelField {
            width,
            height,
            labels,
        }
    }

    /// Labeling whose bits are taken from `code` (bit `k` = pixel `k`);
    /// used to enumerate all states of tiny grids.
    pub fn from_bits(width: usize, height: usize, code: u64) -> Self {
        assert!(width * height <= 64);
        let labels = (0..width * height).map(|k| ((code >> k) & 1) as u8).collect();
        LabelField {
            width,
            height,
            labels,
        }
    }

    /// Inverse of [`LabelField::from_bits`].
    pub fn to_bits(&self) -> u64 {
        assert!(self.len() <= 64);
        self.labels
            .iter()
            .enumerate()
            .fold(0u64, |acc, (k, &l)| acc | ((l as u64) << k))
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.labels[self.index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        let k = self.index(i, j);
        self.labels[k] = v as u8;
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Foreground pixel count.
    pub fn area(&self) -> usize {
        self.labels.iter().map(|&l| l as usize).sum()
    }

    pub fn flipped(&self) -> LabelField {
        LabelField {
            width: self.width,
            height: self.height,
            labels: self.labels.iter().map(|&l| 1 - l).collect(),
        }
    }

    pub fn to_scalar(&self) -> ScalarField {
        ScalarField {
            width: self.width,
            height: self.height,
            values: self.labels.iter().map(|&l| l as f64).collect(),
        }
    }

    /// `true` when every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &LabelField) -> bool {
        self.dims() == other.dims()
            && self
                .labels
                .iter()
                .zip(&other.labels)
                .all(|(&a, &b)| a <= b)
    }
}

/// Field of per-pixel Bernoulli parameters in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityField {
    width: usize,
    height: usize,
    theta: Vec<f64>,
}

grid_common!(ProbabilityField);

impl ProbabilityField {
    pub fn new(width: usize, height: usize, theta: Vec<f64>) -> Result<Self> {
        check_dims(width, height, theta.len())?;
        if let Some(k) = theta
            .iter()
            .position(|t| !(t.is_finite() && (0.0..=1.0).contains(t)))
        {
            return Err(Error::InvalidField(format!(
                "probability {} at index {k} is outside [0, 1]",
                theta[k]
            )));
        }
        Ok(ProbabilityField {
            width,
            height,
            theta,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        assert!((0.0..=1.0).contains(&value));
        assert!(width > 0 && height > 0, "empty grid");
        ProbabilityField {
            width,
            height,
            theta: vec![value; width * height],
        }
    }

    pub fn from_scalar(f: &ScalarField) -> Result<Self> {
        Self::new(f.width(), f.height(), f.values().to_vec())
    }

    /// Pixelwise logistic sigmoid of a logit field.
    pub fn from_logits(phi: &ScalarField) -> Self {
        ProbabilityField {
            width: phi.width(),
            height: phi.height(),
            theta: phi.values().iter().map(|&v| crate::likelihood::sigmoid(v)).collect(),
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.theta[self.index(i, j)]
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn to_scalar(&self) -> ScalarField {
        ScalarField {
            width: self.width,
            height: self.height,
            values: self.theta.clone(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.theta.iter().sum::<f64>() / self.len() as f64
    }

    /// Mean of `theta` over the pixels selected by `mask`.
    pub fn masked_mean(&self, mask: &LabelField) -> Option<f64> {
        assert_eq!(self.dims(), mask.dims());
        let (sum, n) = self
            .theta
            .iter()
            .zip(mask.labels())
            .filter(|(_, &m)| m == 1)
            .fold((0.0, 0usize), |(s, n), (&t, _)| (s + t, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

/// Forward differences with Neumann boundary.
pub fn gradient(f: &ScalarField) -> DualField {
    let (w, h) = f.dims();
    let mut g = DualField::zeros(w, h);
    gradient_into(f.values(), w, h, &mut g.px, &mut g.py);
    g
}

pub(crate) fn gradient_into(f: &[f64], w: usize, h: usize, gx: &mut [f64], gy: &mut [f64]) {
    for j in 0..h {
        let row = j * w;
        for i in 0..w {
            let k = row + i;
            gx[k] = if i + 1 < w { f[k + 1] - f[k] } else { 0.0 };
            gy[k] = if j + 1 < h { f[k + w] - f[k] } else { 0.0 };
        }
    }
}

/// Negative adjoint of [`gradient`] (backward differences with boundary
/// terms).
pub fn divergence(v: &DualField) -> ScalarField {
    let (w, h) = v.dims();
    let mut out = ScalarField::zeros(w, h);
    divergence_into(&v.px, &v.py, w, h, &mut out.values);
    out
}

pub(crate) fn divergence_into(px: &[f64], py: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for j in 0..h {
        let row = j * w;
        for i in 0..w {
            let k = row + i;
            let mut d = 0.0;
            if i + 1 < w {
                d += px[k];
            }
            if i > 0 {
                d -= px[k - 1];
            }
            if j + 1 < h {
                d += py[k];
            }
            if j > 0 {
                d -= py[k - w];
            }
            out[k] = d;
        }
    }
}

pub(crate) fn tv_of_slice(f: &[f64], w: usize, h: usize, mode: TvMode) -> f64 {
    let mut total = 0.0;
    for j in 0..h {
        let row = j * w;
        for i in 0..w {
            let k = row + i;
            let gx = if i + 1 < w { f[k + 1] - f[k] } else { 0.0 };
            let gy = if j + 1 < h { f[k + w] - f[k] } else { 0.0 };
            total += match mode {
                TvMode::Isotropic => gx.hypot(gy),
                TvMode::Anisotropic => gx.abs() + gy.abs(),
            };
        }
    }
    total
}

pub fn total_variation(f: &ScalarField, mode: TvMode) -> f64 {
    tv_of_slice(f.values(), f.width(), f.height(), mode)
}

/// Discrete boundary length of a labeling: the total variation of its 0/1
/// indicator.
pub fn boundary_length(z: &LabelField, mode: TvMode) -> f64 {
    let (w, h) = z.dims();
    let l = z.labels();
    match mode {
        // integer count, avoids float accumulation
        TvMode::Anisotropic => {
            let mut n = 0usize;
            for j in 0..h {
                for i in 0..w {
                    let k = j * w + i;
                    if i + 1 < w && l[k] != l[k + 1] {
                        n += 1;
                    }
                    if j + 1 < h && l[k] != l[k + w] {
                        n += 1;
                    }
                }
            }
            n as f64
        }
        TvMode::Isotropic => total_variation(&z.to_scalar(), mode),
    }
}

/// `div(grad f / sqrt(|grad f|^2 + eps^2))`; a smoothed curvature used for
/// Euler-Lagrange residual diagnostics only.
pub fn curvature(f: &ScalarField, eps: f64) -> ScalarField {
    assert!(eps > 0.0, "curvature smoothing must be positive");
    let mut g = gradient(f);
    for (x, y) in g.px.iter_mut().zip(g.py.iter_mut()) {
        let n = (*x * *x + *y * *y + eps * eps).sqrt();
        *x /= n;
        *y /= n;
    }
    divergence(&g)
}

pub const DEFAULT_CURVATURE_EPS: f64 = 1e-8;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ScalarField {
        ScalarField::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_dual(rng: &mut ChaCha8Rng, w: usize, h: usize) -> DualField {
        let px = (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let py = (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        DualField::new(w, h, px, py).unwrap()
    }

    fn single_pixel() -> ScalarField {
        ScalarField::from_fn(5, 5, |i, j| if (i, j) == (2, 2) { 1.0 } else { 0.0 })
    }

    #[test]
    fn constructors_reject_bad_input() {
        assert!(ScalarField::new(0, 3, vec![]).is_err());
        assert!(ScalarField::new(2, 2, vec![0.0; 3]).is_err());
        assert!(ScalarField::new(1, 1, vec![f64::NAN]).is_err());
        assert!(LabelField::new(1, 2, vec![0, 2]).is_err());
        assert!(ProbabilityField::new(1, 1, vec![1.5]).is_err());
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = gradient(&ScalarField::constant(6, 4, 3.5));
        assert!(g.px().iter().chain(g.py()).all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_of_ramp() {
        let f = ScalarField::from_fn(4, 4, |i, _| i as f64);
        let g = gradient(&f);
        for j in 0..4 {
            for i in 0..4 {
                let k = g.index(i, j);
                assert_eq!(g.px()[k], if i < 3 { 1.0 } else { 0.0 });
                assert_eq!(g.py()[k], 0.0);
            }
        }
    }

    #[test]
    fn divergence_of_ramp_gradient() {
        let f = ScalarField::from_fn(4, 4, |i, _| i as f64);
        let d = divergence(&gradient(&f));
        let expected = [1.0, 0.0, 0.0, -1.0];
        for j in 0..4 {
            for i in 0..4 {
                assert_eq!(d.get(i, j), expected[i]);
            }
        }
        assert!(divergence(&DualField::zeros(3, 5)).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjointness_by_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(w, h) in &[(8, 8), (1, 5), (7, 1), (13, 6)] {
            let f = random_field(&mut rng, w, h);
            let v = random_dual(&mut rng, w, h);
            // explicit sums over the forward-difference stencil
            let mut lhs = 0.0;
            for j in 0..h {
                for i in 0..w {
                    let k = j * w + i;
                    if i + 1 < w {
                        lhs += (f.get(i + 1, j) - f.get(i, j)) * v.px()[k];
                    }
                    if j + 1 < h {
                        lhs += (f.get(i, j + 1) - f.get(i, j)) * v.py()[k];
                    }
                }
            }
            let rhs = f.dot(&divergence(&v));
            assert!((lhs + rhs).abs() < 1e-10, "{w}x{h}: {lhs} vs {rhs}");
            assert!((gradient(&f).dot(&v) - lhs).abs() < 1e-12);
        }
    }

    #[test]
    fn tv_single_pixel() {
        let f = single_pixel();
        assert_eq!(total_variation(&f, TvMode::Anisotropic), 4.0);
        let iso = total_variation(&f, TvMode::Isotropic);
        assert!((iso - (2.0 + 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(total_variation(&ScalarField::constant(3, 3, 2.0), TvMode::Isotropic), 0.0);
    }

    #[test]
    fn boundary_length_examples() {
        for mode in [TvMode::Isotropic, TvMode::Anisotropic] {
            assert_eq!(boundary_length(&LabelField::zeros(4, 4), mode), 0.0);
            assert_eq!(boundary_length(&LabelField::zeros(4, 4).flipped(), mode), 0.0);
        }
        let z = LabelField::from_fn(5, 5, |i, j| (i, j) == (2, 2));
        assert_eq!(boundary_length(&z, TvMode::Anisotropic), 4.0);
        assert_eq!(
            boundary_length(&z, TvMode::Isotropic),
            total_variation(&z.to_scalar(), TvMode::Isotropic)
        );
    }

    #[test]
    fn curvature_examples() {
        let c = curvature(&ScalarField::constant(5, 5, 1.0), DEFAULT_CURVATURE_EPS);
        assert!(c.values().iter().all(|&v| v == 0.0));
        let ramp = ScalarField::from_fn(8, 8, |i, j| 0.5 * i as f64 + 0.25 * j as f64);
        let k = curvature(&ramp, DEFAULT_CURVATURE_EPS);
        for j in 1..7 {
            for i in 1..7 {
                assert!(k.get(i, j).abs() < 1e-8, "({i},{j}) {}", k.get(i, j));
            }
        }
    }

    #[test]
    fn bits_roundtrip() {
        let z = LabelField::from_bits(4, 4, 0xBEEF);
        assert_eq!(z.to_bits(), 0xBEEF);
        assert_eq!(z.area(), 0xBEEFu64.count_ones() as usize);
    }

    fn labels_strategy() -> impl Strategy<Value = LabelField> {
        (1usize..8, 1usize..8).prop_flat_map(|(w, h)| {
            prop::collection::vec(0u8..2, w * h).prop_map(move |l| LabelField::new(w, h, l).unwrap())
        })
    }

    fn quantized_field() -> impl Strategy<Value = ScalarField> {
        (1usize..8, 1usize..8).prop_flat_map(|(w, h)| {
            prop::collection::vec(-3i32..4, w * h).prop_map(move |v| {
                ScalarField::new(w, h, v.into_iter().map(|x| 0.5 * x as f64).collect()).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn adjointness_holds(seed in any::<u64>(), w in 1usize..12, h in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_field(&mut rng, w, h);
            let v = random_dual(&mut rng, w, h);
            let a = gradient(&f).dot(&v);
            let b = f.dot(&divergence(&v));
            prop_assert!((a + b).abs() <= 1e-10 * (1.0 + a.abs()));
        }

        #[test]
        fn tv_is_absolutely_homogeneous(seed in any::<u64>(), c in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_field(&mut rng, 6, 5);
            for mode in [TvMode::Isotropic, TvMode::Anisotropic] {
                let tv = total_variation(&f, mode);
                prop_assert!(tv >= 0.0);
                let scaled = total_variation(&f.map(|v| c * v), mode);
                prop_assert!((scaled - c.abs() * tv).abs() < 1e-10 * (1.0 + tv));
            }
        }

        #[test]
        fn boundary_length_flip_invariant(z in labels_strategy()) {
            for mode in [TvMode::Isotropic, TvMode::Anisotropic] {
                prop_assert_eq!(boundary_length(&z, mode), boundary_length(&z.flipped(), mode));
            }
        }

        // Threshold decomposition; levels are weighted by their spacing, which
        // reduces to a plain sum for unit-spaced values.
        #[test]
        fn anisotropic_coarea_is_exact(f in quantized_field()) {
            let mut levels: Vec<f64> = f.values().to_vec();
            levels.sort_by(f64::total_cmp);
            levels.dedup();
            let mut sum = 0.0;
            for pair in levels.windows(2) {
                let z = LabelField::from_fn(f.width(), f.height(), |i, j| f.get(i, j) > pair[0]);
                sum += (pair[1] - pair[0]) * boundary_length(&z, TvMode::Anisotropic);
            }
            prop_assert_eq!(sum, total_variation(&f, TvMode::Anisotropic));
        }
    }
}
