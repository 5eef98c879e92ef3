//! The active mean field model: a factorized Bernoulli approximation of the
//! label posterior whose logits `phi` solve a TV-denoising problem on the
//! logit likelihood field `psi`, i.e. `theta = sigmoid(rof(psi, lambda))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::field::ProbabilityField;
use crate::field::{total_variation, DualField, LabelField, ScalarField};
use crate::likelihood::{self, kde_fit, psi_gaussian, psi_kde, sigmoid, GaussianClassModel, KdeModel};
use crate::rof::{rof_solve, RofParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmfParams {
    /// Boundary-length prior weight (pixel area folded in).
    pub lambda: f64,
    pub rof: RofParams,
}

impl AmfParams {
    pub fn new(lambda: f64, rof: RofParams) -> Result<Self> {
        let p = AmfParams { lambda, rof };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        self.rof.validate()
    }
}

#[derive(Clone, Debug)]
pub struct AmfSolution {
    pub theta: ProbabilityField,
    /// Logits of `theta`, the denoised likelihood field.
    pub phi: ScalarField,
    /// ROF dual variable: `phi = psi - lambda * div(dual)`.
    pub dual: DualField,
    pub iterations: usize,
    pub converged: bool,
}

/// Solve for the mean-field parameters. `lambda = 0` short-circuits to the
/// pixelwise sigmoid of `psi`.
pub fn amf_solve(psi: &ScalarField, params: &AmfParams) -> Result<AmfSolution> {
    params.validate()?;
    let (w, h) = psi.dims();
    if params.lambda == 0.0 {
        return Ok(AmfSolution {
            theta: interior_probabilities(psi),
            phi: psi.clone(),
            dual: DualField::zeros(w, h),
            iterations: 0,
            converged: true,
        });
    }
    let r = rof_solve(psi, params.lambda, &params.rof)?;
    Ok(AmfSolution {
        theta: interior_probabilities(&r.u),
        phi: r.u,
        dual: r.dual,
        iterations: r.iterations,
        converged: r.converged,
    })
}

// sigmoid saturates to exactly 0 or 1 beyond |phi| ~ 37; keep theta inside (0, 1)
fn interior_probabilities(phi: &ScalarField) -> ProbabilityField {
    let hi = 1.0 - f64::EPSILON / 2.0;
    let theta = phi
        .values()
        .iter()
        .map(|&v| sigmoid(v).clamp(f64::MIN_POSITIVE, hi))
        .collect();
    ProbabilityField::new(phi.width(), phi.height(), theta).expect("sigmoid output lies in [0, 1]")
}

fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `sum [-theta psi + theta ln theta + (1-theta) ln(1-theta)] + lambda TV(theta)`,
/// with `0 ln 0 = 0`.
pub fn amf_energy(theta: &ProbabilityField, psi: &ScalarField, params: &AmfParams) -> Result<f64> {
    theta.ensure_same_dims(psi.dims())?;
    let data: f64 = theta
        .theta()
        .iter()
        .zip(psi.values())
        .map(|(&t, &p)| -t * p + xlogx(t) + xlogx(1.0 - t))
        .sum();
    let tv = if params.lambda > 0.0 {
        params.lambda * total_variation(&theta.to_scalar(), params.rof.mode)
    } else {
        0.0
    };
    Ok(data + tv)
}

/// MAP realization of the factorized distribution: `z = 1` iff
/// `theta > threshold` (ties go to background).
pub fn map_labels(theta: &ProbabilityField, threshold: f64) -> Result<LabelField> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::param(format!("MAP threshold must lie in (0, 1), got {threshold}")));
    }
    let labels = theta.theta().iter().map(|&t| (t > threshold) as u8).collect();
    LabelField::new(theta.width(), theta.height(), labels)
}

/// Superlevel set `{phi > nu}`; each level is a Chan-Vese solution with
/// area penalty `nu`.
pub fn level_set_labels(phi: &ScalarField, nu: f64) -> LabelField {
    let labels = phi.values().iter().map(|&v| (v > nu) as u8).collect();
    LabelField::new(phi.width(), phi.height(), labels).expect("binary labels")
}

/// Chan-Vese segmentation as the zero level set of the AMF solution under a
/// Gaussian intensity model.
pub fn chan_vese_segment(
    y: &ScalarField,
    model: &GaussianClassModel,
    params: &AmfParams,
) -> Result<(LabelField, ProbabilityField)> {
    let psi = psi_gaussian(y, model)?;
    let sol = amf_solve(&psi, params)?;
    let labels = map_labels(&sol.theta, 0.5)?;
    Ok((labels, sol.theta))
}

/// Two-class threshold maximizing the Gaussian classification likelihood
/// with per-class means and variances (Kittler-Illingworth criterion),
/// scanned over 256 quantile bins.
pub fn otsu_init(y: &ScalarField) -> Result<GaussianClassModel> {
    let mut v = y.values().to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if v[0] == v[n - 1] {
        return Err(Error::Degenerate("image is constant; cannot split into two classes".into()));
    }
    let mut s1 = Vec::with_capacity(n + 1);
    let mut s2 = Vec::with_capacity(n + 1);
    s1.push(0.0);
    s2.push(0.0);
    for &x in &v {
        s1.push(s1.last().unwrap() + x);
        s2.push(s2.last().unwrap() + x * x);
    }
    let range = v[n - 1] - v[0];
    let var_floor = 1e-12 * range * range;
    let stats = |lo: usize, hi: usize| {
        let m = (hi - lo) as f64;
        let mean = (s1[hi] - s1[lo]) / m;
        let var = ((s2[hi] - s2[lo]) / m - mean * mean).max(0.0) + var_floor;
        (mean, var)
    };

    let mut best: Option<(f64, usize)> = None;
    let mut last_split = usize::MAX;
    for b in 1..256 {
        let t = likelihood::quantile_sorted(&v, b as f64 / 256.0);
        // background is y <= t
        let split = v.partition_point(|&x| x <= t);
        if split == 0 || split == n || split == last_split {
            continue;
        }
        last_split = split;
        let (_, var0) = stats(0, split);
        let (_, var1) = stats(split, n);
        let n0 = split as f64;
        let n1 = (n - split) as f64;
        let total = n as f64;
        let ll = -0.5 * n0 * var0.ln() - 0.5 * n1 * var1.ln() + n0 * (n0 / total).ln() + n1 * (n1 / total).ln();
        if best.is_none_or(|(b, _)| ll > b) {
            best = Some((ll, split));
        }
    }
    let split = match best {
        Some((_, s)) => s,
        // fewer than two distinct quantiles; split at the first value change
        None => v.partition_point(|&x| x <= v[0]),
    };
    let (mu0, var0) = stats(0, split);
    let (mu1, var1) = stats(split, n);
    GaussianClassModel::new(mu0, var0.sqrt(), mu1, var1.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    GaussianMoments,
    Kde,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlternatingConfig {
    pub max_outer: usize,
    /// Converged once the MAP changes on fewer than this fraction of pixels.
    pub tol: f64,
    pub estimator: Estimator,
}

impl Default for AlternatingConfig {
    fn default() -> Self {
        AlternatingConfig {
            max_outer: 20,
            tol: 1e-3,
            estimator: Estimator::GaussianMoments,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassModels {
    Gaussian(GaussianClassModel),
    Kde { foreground: KdeModel, background: KdeModel },
}

impl ClassModels {
    pub fn psi(&self, y: &ScalarField) -> Result<ScalarField> {
        match self {
            ClassModels::Gaussian(m) => psi_gaussian(y, m),
            ClassModels::Kde { foreground, background } => Ok(psi_kde(y, foreground, background)),
        }
    }
}

/// Upper bound on KDE samples kept per class; larger regions are
/// subsampled with a fixed stride.
const MAX_KDE_SAMPLES: usize = 2000;

fn estimate_models(y: &ScalarField, map: &LabelField, estimator: Estimator) -> Result<ClassModels> {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (&v, &l) in y.values().iter().zip(map.labels()) {
        if l == 1 {
            fg.push(v);
        } else {
            bg.push(v);
        }
    }
    if fg.is_empty() || bg.is_empty() {
        return Err(Error::Degenerate("MAP segmentation has an empty class".into()));
    }
    match estimator {
        Estimator::GaussianMoments => {
            let moments = |s: &[f64]| {
                let n = s.len() as f64;
                let mean = s.iter().sum::<f64>() / n;
                let var = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                (mean, var.sqrt().max(1e-6 * (1.0 + mean.abs())))
            };
            let (mu0, sigma0) = moments(&bg);
            let (mu1, sigma1) = moments(&fg);
            Ok(ClassModels::Gaussian(GaussianClassModel::new(mu0, sigma0, mu1, sigma1)?))
        }
        Estimator::Kde => {
            let thin = |s: Vec<f64>| {
                let stride = s.len().div_ceil(MAX_KDE_SAMPLES);
                s.into_iter().step_by(stride).collect::<Vec<_>>()
            };
            Ok(ClassModels::Kde {
                foreground: kde_fit(&thin(fg), None)?,
                background: kde_fit(&thin(bg), None)?,
            })
        }
    }
}

#[derive(Clone, Debug)]
pub struct AlternatingFit {
    pub theta: ProbabilityField,
    pub map: LabelField,
    pub models: ClassModels,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Set when re-estimation hit an empty class; the returned state is the
    /// last valid one.
    pub degenerate: bool,
    /// Fraction of MAP pixels changed at each outer iteration.
    pub changes: Vec<f64>,
}

/// Alternate AMF solves with re-estimation of the class models from the
/// hard MAP labels.
///
/// One outer iteration re-fits the models from the current MAP, re-solves,
/// and compares the new MAP with the previous one.
pub fn alternating_fit(
    y: &ScalarField,
    init: ClassModels,
    params: &AmfParams,
    cfg: &AlternatingConfig,
) -> Result<AlternatingFit> {
    if cfg.max_outer == 0 {
        return Err(Error::param("max_outer must be at least 1"));
    }
    let mut models = init;
    let mut theta = amf_solve(&models.psi(y)?, params)?.theta;
    let mut map = map_labels(&theta, 0.5)?;
    let n = map.len() as f64;
    if map.area() == 0 || map.area() == map.len() {
        return Err(Error::Degenerate(
            "initial models put every pixel in one class".into(),
        ));
    }

    let mut changes = Vec::new();
    let mut converged = false;
    let mut degenerate = false;
    let mut outer = 0;
    while outer < cfg.max_outer {
        outer += 1;
        let next_models = match estimate_models(y, &map, cfg.estimator) {
            Ok(m) => m,
            Err(Error::Degenerate(_)) => {
                degenerate = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let next_theta = amf_solve(&next_models.psi(y)?, params)?.theta;
        let next_map = map_labels(&next_theta, 0.5)?;
        if next_map.area() == 0 || next_map.area() == next_map.len() {
            degenerate = true;
            break;
        }
        let diff = map
            .labels()
            .iter()
            .zip(next_map.labels())
            .filter(|(a, b)| a != b)
            .count() as f64
            / n;
        changes.push(diff);
        models = next_models;
        theta = next_theta;
        map = next_map;
        if diff < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(AlternatingFit {
        theta,
        map,
        models,
        outer_iterations: outer,
        converged,
        degenerate,
        changes,
    })
}

#[derive(Clone, Debug)]
pub struct IsingVmfResult {
    pub theta: ProbabilityField,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped fixed-point iteration for the mean-field stationarity equations of
/// a 4-neighbour Ising prior:
/// `theta_i <- sigmoid(psi_i + 4 n_i lambda sum_j (theta_j - 1/2))`, with
/// `n_i` the neighbour count of pixel `i`. Used to contrast the bias of
/// Ising mean fields with the AMF solution.
pub fn ising_vmf_fixed_point(psi: &ScalarField, lambda: f64, max_iter: usize, tol: f64) -> Result<IsingVmfResult> {
    const DAMPING: f64 = 0.5;
    if !(lambda >= 0.0) {
        return Err(Error::param(format!("lambda must be >= 0, got {lambda}")));
    }
    if max_iter == 0 || !(tol > 0.0) {
        return Err(Error::param("need max_iter >= 1 and tol > 0"));
    }
    let (w, h) = psi.dims();
    let p = psi.values();
    let mut theta: Vec<f64> = p.iter().map(|&v| sigmoid(v)).collect();
    let mut next = theta.clone();
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=max_iter {
        iterations = it;
        let mut max_change = 0.0f64;
        for j in 0..h {
            for i in 0..w {
                let k = j * w + i;
                let mut count = 0.0;
                let mut s = 0.0;
                let mut visit = |q: usize| {
                    count += 1.0;
                    s += theta[q] - 0.5;
                };
                if i > 0 {
                    visit(k - 1);
                }
                if i + 1 < w {
                    visit(k + 1);
                }
                if j > 0 {
                    visit(k - w);
                }
                if j + 1 < h {
                    visit(k + w);
                }
                let target = sigmoid(p[k] + 4.0 * count * lambda * s);
                let v = (1.0 - DAMPING) * theta[k] + DAMPING * target;
                max_change = max_change.max((v - theta[k]).abs());
                next[k] = v;
            }
        }
        std::mem::swap(&mut theta, &mut next);
        if max_change < tol {
            converged = true;
            break;
        }
    }
    Ok(IsingVmfResult {
        theta: ProbabilityField::new(w, h, theta)?,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{divergence, TvMode};
    use crate::likelihood::logit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn params(lambda: f64, mode: TvMode) -> AmfParams {
        AmfParams::new(lambda, RofParams::new(1e-10, 100_000, mode).unwrap()).unwrap()
    }

    fn random_psi(seed: u64, w: usize, h: usize, scale: f64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScalarField::from_fn(w, h, |_, _| scale * rng.random_range(-1.0..1.0))
    }

    fn random_theta(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ProbabilityField {
        ProbabilityField::new(w, h, (0..w * h).map(|_| rng.random_range(0.01..0.99)).collect()).unwrap()
    }

    #[test]
    fn constant_psi_is_unbiased() {
        for &psi0 in &[-4.0, -0.3, 0.0, 2.5] {
            for &lambda in &[0.0, 1.0, 50.0] {
                let psi = ScalarField::constant(9, 7, psi0);
                let sol = amf_solve(&psi, &params(lambda, TvMode::Isotropic)).unwrap();
                for &t in sol.theta.theta() {
                    assert!((t - sigmoid(psi0)).abs() < 1e-12);
                }
            }
        }
        let half = amf_solve(&ScalarField::zeros(5, 5), &params(3.0, TvMode::Anisotropic)).unwrap();
        assert!(half.theta.theta().iter().all(|&t| t == 0.5));
    }

    #[test]
    fn zero_lambda_is_pixelwise() {
        let psi = random_psi(1, 6, 6, 5.0);
        let sol = amf_solve(&psi, &params(0.0, TvMode::Isotropic)).unwrap();
        for (&t, &p) in sol.theta.theta().iter().zip(psi.values()) {
            assert_eq!(t, sigmoid(p));
        }
        assert!(AmfParams::new(-1.0, RofParams::default()).is_err());
    }

    #[test]
    fn flip_symmetry() {
        let psi = random_psi(2, 12, 10, 3.0);
        let p = params(1.5, TvMode::Isotropic);
        let a = amf_solve(&psi, &p).unwrap();
        let b = amf_solve(&psi.map(|v| -v), &p).unwrap();
        for (&x, &y) in a.theta.theta().iter().zip(b.theta.theta()) {
            assert!((x - (1.0 - y)).abs() < 1e-6);
        }
    }

    #[test]
    fn stronger_prior_moves_toward_half() {
        let psi = ScalarField::from_fn(16, 16, |i, j| if (i * 3 + j * 5) % 7 < 3 { 2.0 } else { -1.0 });
        let mut prev = f64::INFINITY;
        for &lambda in &[0.0, 1.0, 10.0, 100.0] {
            let sol = amf_solve(&psi, &params(lambda, TvMode::Isotropic)).unwrap();
            let dev = sol.theta.theta().iter().map(|t| (t - 0.5).abs()).fold(0.0, f64::max);
            assert!(dev <= prev + 1e-9, "lambda {lambda}: {dev} > {prev}");
            prev = dev;
        }
    }

    #[test]
    fn stationarity_through_dual() {
        let psi = random_psi(3, 10, 10, 4.0);
        for mode in [TvMode::Isotropic, TvMode::Anisotropic] {
            let sol = amf_solve(&psi, &params(0.7, mode)).unwrap();
            assert!(sol.dual.max_norm_excess(mode) <= 1e-12);
            let rebuilt = psi.zip_map(&divergence(&sol.dual), |p, d| p - 0.7 * d).unwrap();
            assert!(rebuilt.max_abs_diff(&sol.phi) < 1e-10);
            for (&t, &f) in sol.theta.theta().iter().zip(sol.phi.values()) {
                assert!((logit(t).unwrap() - f).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn energy_examples() {
        let n = 20.0;
        let p = params(4.0, TvMode::Isotropic);
        let e = amf_energy(&ProbabilityField::constant(5, 4, 0.5), &ScalarField::zeros(5, 4), &p).unwrap();
        assert!((e + n * 2f64.ln()).abs() < 1e-12);

        let psi0 = 1.3;
        let t = sigmoid(psi0);
        let psi = ScalarField::constant(5, 4, psi0);
        let e_opt = amf_energy(&ProbabilityField::constant(5, 4, t), &psi, &p).unwrap();
        let direct = n * (-t * psi0 + t * t.ln() + (1.0 - t) * (1.0 - t).ln());
        assert!((e_opt - direct).abs() < 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let c: f64 = rng.random_range(0.001..0.999);
            let e = amf_energy(&ProbabilityField::constant(5, 4, c), &psi, &p).unwrap();
            assert!(e >= e_opt - 1e-12);
        }
        // 0 ln 0 convention
        let e = amf_energy(&ProbabilityField::constant(2, 2, 1.0), &ScalarField::constant(2, 2, 2.0), &p).unwrap();
        assert_eq!(e, -8.0);
    }

    #[test]
    fn energy_is_strictly_midpoint_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let psi = random_psi(7, 8, 8, 3.0);
        for mode in [TvMode::Isotropic, TvMode::Anisotropic] {
            let p = params(2.0, mode);
            for _ in 0..50 {
                let a = random_theta(&mut rng, 8, 8);
                let b = random_theta(&mut rng, 8, 8);
                let mid: Vec<f64> = a.theta().iter().zip(b.theta()).map(|(x, y)| 0.5 * (x + y)).collect();
                let mid = ProbabilityField::new(8, 8, mid).unwrap();
                let lhs = amf_energy(&mid, &psi, &p).unwrap();
                let rhs = 0.5 * amf_energy(&a, &psi, &p).unwrap() + 0.5 * amf_energy(&b, &psi, &p).unwrap();
                assert!(lhs < rhs - 1e-12);
            }
        }
    }

    #[test]
    fn solution_minimizes_energy() {
        let psi = random_psi(8, 8, 8, 3.0);
        let p = params(0.8, TvMode::Isotropic);
        let sol = amf_solve(&psi, &p).unwrap();
        let e = amf_energy(&sol.theta, &psi, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let s = rng.random_range(1e-3..5e-2);
            let phi = sol.phi.map(|v| v + s * rng.random_range(-1.0..1.0));
            let other = ProbabilityField::from_logits(&phi);
            assert!(amf_energy(&other, &psi, &p).unwrap() >= e - 1e-9);
        }
    }

    #[test]
    fn map_label_rules() {
        let all = map_labels(&ProbabilityField::constant(3, 3, 0.9), 0.5).unwrap();
        assert_eq!(all.area(), 9);
        let none = map_labels(&ProbabilityField::constant(3, 3, 0.5), 0.5).unwrap();
        assert_eq!(none.area(), 0);
        assert!(map_labels(&ProbabilityField::constant(3, 3, 0.5), 1.0).is_err());
    }

    #[test]
    fn level_sets() {
        let phi = random_psi(10, 9, 9, 4.0);
        let zero = level_set_labels(&phi, 0.0);
        assert_eq!(zero, map_labels(&ProbabilityField::from_logits(&phi), 0.5).unwrap());
        assert_eq!(level_set_labels(&phi, 1e300).area(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a: f64 = rng.random_range(-5.0..5.0);
            let b: f64 = rng.random_range(-5.0..5.0);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            assert!(level_set_labels(&phi, hi).is_subset_of(&level_set_labels(&phi, lo)));
        }
    }

    fn two_region(w: usize, h: usize) -> LabelField {
        LabelField::from_fn(w, h, |i, j| {
            let x = i as f64 - w as f64 / 2.0;
            let y = j as f64 - h as f64 / 2.0;
            x * x + y * y < (w as f64 / 3.5).powi(2)
        })
    }

    #[test]
    fn chan_vese_recovers_clean_regions() {
        let truth = two_region(32, 32);
        let y = truth.to_scalar().map(|v| 10.0 + 20.0 * v);
        let model = GaussianClassModel::new(10.0, 8.0, 30.0, 8.0).unwrap();
        let (labels, _) = chan_vese_segment(&y, &model, &params(1.0, TvMode::Isotropic)).unwrap();
        assert_eq!(labels, truth);

        let (otsu_like, theta) = chan_vese_segment(&y, &model, &params(0.0, TvMode::Isotropic)).unwrap();
        let psi = psi_gaussian(&y, &model).unwrap();
        assert_eq!(otsu_like, level_set_labels(&psi, 0.0));
        assert_eq!(theta.theta()[0], sigmoid(psi.values()[0]));

        let flat = ScalarField::constant(16, 16, 10.0);
        let (empty, theta) = chan_vese_segment(&flat, &model, &params(2.0, TvMode::Isotropic)).unwrap();
        assert_eq!(empty.area(), 0);
        assert!(theta.theta().iter().all(|&t| t < 0.5));
    }

    #[test]
    fn otsu_examples() {
        let two = ScalarField::from_fn(8, 8, |i, _| if i < 3 { 0.0 } else { 1.0 });
        let m = otsu_init(&two).unwrap();
        assert!(m.mu0.abs() < 1e-12 && (m.mu1 - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = Normal::new(10.0, 2.0).unwrap();
        let b = Normal::new(50.0, 2.0).unwrap();
        let values: Vec<f64> = (0..2000)
            .map(|k| if k % 3 == 0 { b.sample(&mut rng) } else { a.sample(&mut rng) })
            .collect();
        let m = otsu_init(&ScalarField::new(50, 40, values).unwrap()).unwrap();
        assert!((m.mu0 - 10.0).abs() < 1.0 && (m.mu1 - 50.0).abs() < 1.0, "{m:?}");

        assert!(matches!(otsu_init(&ScalarField::constant(4, 4, 3.0)), Err(Error::Degenerate(_))));
    }

    fn noisy_disk(seed: u64) -> (LabelField, ScalarField) {
        let truth = two_region(48, 48);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let y = truth.to_scalar().map(|v| 3.0 * v + noise.sample(&mut rng));
        (truth, y)
    }

    fn region_moments(y: &ScalarField, z: &LabelField) -> GaussianClassModel {
        let m = estimate_models(y, z, Estimator::GaussianMoments).unwrap();
        match m {
            ClassModels::Gaussian(g) => g,
            _ => unreachable!(),
        }
    }

    #[test]
    fn alternating_fixed_point_takes_one_iteration() {
        let (_, y) = noisy_disk(13);
        let p = params(2.0, TvMode::Isotropic);
        let cfg = AlternatingConfig::default();
        // iterate to a fixed point, then restart from it
        let first = alternating_fit(&y, ClassModels::Gaussian(otsu_init(&y).unwrap()), &p, &cfg).unwrap();
        assert!(first.converged);
        let model = region_moments(&y, &first.map);
        let again = alternating_fit(&y, ClassModels::Gaussian(model), &p, &cfg).unwrap();
        assert_eq!(again.outer_iterations, 1);
        assert_eq!(again.changes, vec![0.0]);
        assert_eq!(again.map, first.map);
    }

    #[test]
    fn alternating_recovers_means() {
        let (truth, y) = noisy_disk(14);
        let oracle = region_moments(&y, &truth);
        let init = GaussianClassModel::new(0.8, 1.5, 2.0, 1.5).unwrap();
        let p = params(2.0, TvMode::Isotropic);
        for estimator in [Estimator::GaussianMoments, Estimator::Kde] {
            let cfg = AlternatingConfig { estimator, ..Default::default() };
            let fit = alternating_fit(&y, ClassModels::Gaussian(init), &p, &cfg).unwrap();
            assert!(fit.converged && !fit.degenerate);
            let est = region_moments(&y, &fit.map);
            assert!((est.mu0 - oracle.mu0).abs() < 0.5 && (est.mu1 - oracle.mu1).abs() < 0.5);
            assert!((est.mu1 - 3.0).abs() < 0.5 && est.mu0.abs() < 0.5);
            if estimator == Estimator::GaussianMoments {
                assert!(fit.changes.windows(2).all(|c| c[1] <= c[0]), "{:?}", fit.changes);
            }
        }
    }

    #[test]
    fn alternating_rejects_trivial_init() {
        let (_, y) = noisy_disk(15);
        let init = GaussianClassModel::new(100.0, 1.0, 200.0, 1.0).unwrap();
        let r = alternating_fit(&y, ClassModels::Gaussian(init), &params(1.0, TvMode::Isotropic), &Default::default());
        assert!(matches!(r, Err(Error::Degenerate(_))));
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) < 0.0) == (f(lo) < 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn ising_vmf_examples() {
        let zero = ising_vmf_fixed_point(&ScalarField::zeros(6, 6), 0.3, 100, 1e-12).unwrap();
        assert!(zero.converged && zero.theta.theta().iter().all(|&t| t == 0.5));

        let psi = random_psi(16, 5, 5, 3.0);
        let free = ising_vmf_fixed_point(&psi, 0.0, 200, 1e-14).unwrap();
        for (&t, &p) in free.theta.theta().iter().zip(psi.values()) {
            assert!((t - sigmoid(p)).abs() < 1e-12);
        }

        let (psi0, lambda) = (1.0, 0.01);
        let r = ising_vmf_fixed_point(&ScalarField::constant(24, 24, psi0), lambda, 10_000, 1e-14).unwrap();
        assert!(r.converged);
        let scalar = bisect(|t: f64| (t / (1.0 - t)).ln() - psi0 - 64.0 * lambda * (t - 0.5), 1e-9, 1.0 - 1e-9);
        let centre = r.theta.get(12, 12);
        assert!((centre - scalar).abs() < 1e-6, "{centre} vs {scalar}");
        assert!((centre - sigmoid(psi0)).abs() > 1e-3);

        // AMF on the same field stays unbiased
        let amf = amf_solve(&ScalarField::constant(24, 24, psi0), &params(lambda, TvMode::Isotropic)).unwrap();
        assert!((amf.theta.get(12, 12) - sigmoid(psi0)).abs() < 1e-12);
    }
}
