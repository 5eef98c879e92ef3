//! Synthetic ground truth: Matérn Gaussian-process label maps and the
//! ambiguous-circle image.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{LabelField, ScalarField};
use crate::likelihood::{quantile_sorted, MixtureComponent, MixtureModel};

/// Largest grid side supported by the dense Cholesky sampler.
pub const MAX_DENSE_SIZE: usize = 64;
pub const CHOLESKY_JITTER: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaternConfig {
    pub size: usize,
    /// Smoothness is `p + 1/2`.
    pub order_p: u32,
    pub length_l: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl MaternConfig {
    pub fn new(size: usize, length_l: f64, noise_sigma: f64, seed: u64) -> Self {
        MaternConfig {
            size,
            order_p: 1,
            length_l,
            noise_sigma,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 2 || self.size > MAX_DENSE_SIZE {
            return Err(Error::param(format!(
                "grid size must lie in [2, {MAX_DENSE_SIZE}], got {}",
                self.size
            )));
        }
        if self.order_p == 0 {
            return Err(Error::param("Matérn order p must be positive"));
        }
        if !(self.length_l > 0.0 && self.length_l.is_finite()) {
            return Err(Error::param(format!("length scale must be positive, got {}", self.length_l)));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::param(format!("noise sigma must be positive, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Unit-variance Matérn kernel with half-integer smoothness `p + 1/2`.
pub fn matern_covariance(d: f64, l: f64, p: u32) -> f64 {
    assert!(d >= 0.0 && l > 0.0, "need d >= 0 and l > 0");
    let nu = p as f64 + 0.5;
    let r = (2.0 * nu).sqrt() * d / l;
    // p!/(2p)! * sum_i (p+i)! / (i! (p-i)!) (2r)^(p-i)
    let fact = |n: u32| (1..=n).fold(1.0, |a, k| a * k as f64);
    let lead = fact(p) / fact(2 * p);
    let poly: f64 = (0..=p)
        .map(|i| fact(p + i) / (fact(i) * fact(p - i)) * (2.0 * r).powi((p - i) as i32))
        .sum();
    lead * poly * (-r).exp()
}

/// Cached lower Cholesky factor of the Matérn covariance over a square
/// grid, reusable across seeds.
#[derive(Clone, Debug)]
pub struct MaternSampler {
    size: usize,
    length_l: f64,
    order_p: u32,
    factor: DMatrix<f64>,
}

impl MaternSampler {
    pub fn new(size: usize, length_l: f64, order_p: u32) -> Result<Self> {
        MaternConfig {
            size,
            order_p,
            length_l,
            noise_sigma: 1.0,
            seed: 0,
        }
        .validate()?;
        let n = size * size;
        let coords = |k: usize| ((k % size) as f64, (k / size) as f64);
        let cov = DMatrix::from_fn(n, n, |a, b| {
            let (xa, ya) = coords(a);
            let (xb, yb) = coords(b);
            let c = matern_covariance((xa - xb).hypot(ya - yb), length_l, order_p);
            if a == b {
                c + CHOLESKY_JITTER
            } else {
                c
            }
        });
        let chol = cov
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { jitter: CHOLESKY_JITTER })?;
        Ok(MaternSampler {
            size,
            length_l,
            order_p,
            factor: chol.unpack(),
        })
    }

    pub fn matches(&self, cfg: &MaternConfig) -> bool {
        self.size == cfg.size && self.length_l == cfg.length_l && self.order_p == cfg.order_p
    }

    pub fn sample(&self, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng)
    }

    fn sample_with(&self, rng: &mut impl Rng) -> ScalarField {
        let n = self.size * self.size;
        let xi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let f = &self.factor * xi;
        ScalarField::new(self.size, self.size, f.iter().copied().collect()).expect("finite samples")
    }
}

/// Zero-mean Matérn field; builds a fresh factorization, so loops over seeds
/// should hold a [`MaternSampler`] instead.
pub fn sample_gp_field(cfg: &MaternConfig) -> Result<ScalarField> {
    cfg.validate()?;
    Ok(MaternSampler::new(cfg.size, cfg.length_l, cfg.order_p)?.sample(cfg.seed))
}

/// `z_i = 1` iff `f_i` exceeds the empirical `quantile` of `f`.
pub fn make_ground_truth(f: &ScalarField, quantile: f64) -> Result<LabelField> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::param(format!("quantile must lie in (0, 1), got {quantile}")));
    }
    let mut sorted = f.values().to_vec();
    sorted.sort_by(f64::total_cmp);
    let t = quantile_sorted(&sorted, quantile);
    LabelField::new(f.width(), f.height(), f.values().iter().map(|&v| (v > t) as u8).collect())
}

/// `y = z + N(0, sigma^2)`, iid per pixel.
pub fn add_gaussian_noise(z: &LabelField, sigma: f64, seed: u64) -> Result<ScalarField> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("noise sigma must be positive, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::param(e.to_string()))?;
    Ok(z.to_scalar().map(|v| v + noise.sample(&mut rng)))
}

/// Range of the randomly drawn threshold quantile.
pub const AUTO_QUANTILE_RANGE: (f64, f64) = (0.1, 0.9);

#[derive(Clone, Debug)]
pub struct MaternInstance {
    pub field: ScalarField,
    pub truth: LabelField,
    pub noisy: ScalarField,
    pub quantile: f64,
}

/// Full synthetic instance: GP field, thresholded truth and noisy
/// observation. `quantile = None` draws it uniformly from
/// [`AUTO_QUANTILE_RANGE`]. Field, quantile and noise use separate streams
/// of the seed.
pub fn synth_matern(sampler: &MaternSampler, cfg: &MaternConfig, quantile: Option<f64>) -> Result<MaternInstance> {
    cfg.validate()?;
    if !sampler.matches(cfg) {
        return Err(Error::param("sampler was built for a different grid or kernel"));
    }
    let stream = |s: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(s);
        r
    };
    let field = sampler.sample_with(&mut stream(0));
    let quantile = match quantile {
        Some(q) => q,
        None => stream(1).random_range(AUTO_QUANTILE_RANGE.0..AUTO_QUANTILE_RANGE.1),
    };
    let truth = make_ground_truth(&field, quantile)?;
    let noise_seed = stream(2).random::<u64>();
    let noisy = add_gaussian_noise(&truth, cfg.noise_sigma, noise_seed)?;
    Ok(MaternInstance {
        field,
        truth,
        noisy,
        quantile,
    })
}

#[derive(Clone, Debug)]
pub struct CircleInstance {
    pub clean: ScalarField,
    pub noisy: ScalarField,
    pub truth: LabelField,
    pub upper: LabelField,
    pub lower: LabelField,
    pub foreground: MixtureModel,
    pub background: MixtureModel,
}

pub const CIRCLE_BACKGROUND: (f64, f64) = (30.0, 5.0);
pub const CIRCLE_UPPER: (f64, f64) = (50.0, 10.0);
pub const CIRCLE_LOWER: (f64, f64) = (70.0, 5.0);

/// Class models: background mixes the 30 and 50 intensity classes,
/// foreground mixes 50 and 70, each with weights 1/2.
pub fn circle_models() -> (MixtureModel, MixtureModel) {
    let comp = |(mu, sigma): (f64, f64)| MixtureComponent { w: 0.5, mu, sigma };
    let fg = MixtureModel::new(vec![comp(CIRCLE_UPPER), comp(CIRCLE_LOWER)]).expect("valid mixture");
    let bg = MixtureModel::new(vec![comp(CIRCLE_BACKGROUND), comp(CIRCLE_UPPER)]).expect("valid mixture");
    (fg, bg)
}

/// Centered disc of diameter `size / 2`; the upper half has intensity 50,
/// the lower half 70 and the outside 30, with per-region noise.
pub fn synth_ambiguous_circle(size: usize, seed: u64) -> Result<CircleInstance> {
    if size < 32 {
        return Err(Error::param(format!("circle image size must be at least 32, got {size}")));
    }
    let c = size as f64 / 2.0;
    let r = size as f64 / 4.0;
    // pixel centers at half-integers
    let inside = |i: usize, j: usize| {
        let x = i as f64 + 0.5 - c;
        let y = j as f64 + 0.5 - c;
        x * x + y * y <= r * r
    };
    let truth = LabelField::from_fn(size, size, inside);
    let upper = LabelField::from_fn(size, size, |i, j| inside(i, j) && (j as f64 + 0.5) < c);
    let lower = LabelField::from_fn(size, size, |i, j| inside(i, j) && (j as f64 + 0.5) >= c);
    let region = |i: usize, j: usize| {
        if upper.get(i, j) == 1 {
            CIRCLE_UPPER
        } else if lower.get(i, j) == 1 {
            CIRCLE_LOWER
        } else {
            CIRCLE_BACKGROUND
        }
    };
    let clean = ScalarField::from_fn(size, size, |i, j| region(i, j).0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy = ScalarField::from_fn(size, size, |i, j| {
        let (mu, sigma) = region(i, j);
        mu + sigma * rng.sample::<f64, _>(StandardNormal)
    });
    let (foreground, background) = circle_models();
    Ok(CircleInstance {
        clean,
        noisy,
        truth,
        upper,
        lower,
        foreground,
        background,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matern_kernel_values() {
        assert_eq!(matern_covariance(0.0, 2.0, 1), 1.0);
        assert!(matern_covariance(1e4, 1.0, 1) < 1e-300);
        let s3 = 3f64.sqrt();
        assert!((matern_covariance(1.0, 1.0, 1) - (1.0 + s3) * (-s3).exp()).abs() < 1e-15);
        assert!((matern_covariance(1.0, 1.0, 1) - 0.4834).abs() < 1e-4);
        // nu = 5/2 closed form
        let d = 0.7;
        let r = 5f64.sqrt() * d / 1.5;
        assert!((matern_covariance(d, 1.5, 2) - (1.0 + r + r * r / 3.0) * (-r).exp()).abs() < 1e-14);
        for p in 1..4 {
            let mut prev = 1.0;
            for k in 1..50 {
                let c = matern_covariance(k as f64 * 0.2, 1.0, p);
                assert!(c < prev);
                prev = c;
            }
        }
    }

    #[test]
    fn gp_field_statistics() {
        let sampler = MaternSampler::new(12, 2.0, 1).unwrap();
        let mut var = 0.0;
        let (mut cx, mut cy) = (0.0, 0.0);
        let (mut nx, mut ny) = (0.0, 0.0);
        let seeds = 100;
        for s in 0..seeds {
            let f = sampler.sample(s);
            var += f.values().iter().map(|v| v * v).sum::<f64>() / f.len() as f64;
            for j in 0..12 {
                for i in 0..12 {
                    if i + 1 < 12 {
                        cx += f.get(i, j) * f.get(i + 1, j);
                        nx += 1.0;
                    }
                    if j + 1 < 12 {
                        cy += f.get(i, j) * f.get(i, j + 1);
                        ny += 1.0;
                    }
                }
            }
        }
        var /= seeds as f64;
        let expect = matern_covariance(1.0, 2.0, 1);
        assert!((var - 1.0).abs() < 0.1, "variance {var}");
        assert!((cx / nx - expect).abs() < 0.1 && (cy / ny - expect).abs() < 0.1);

        let cfg = MaternConfig::new(8, 3.0, 0.3, 42);
        assert_eq!(sample_gp_field(&cfg).unwrap(), sample_gp_field(&cfg).unwrap());
        assert!(sample_gp_field(&MaternConfig::new(65, 3.0, 0.3, 1)).is_err());
    }

    #[test]
    fn ground_truth_quantiles() {
        let f = ScalarField::from_fn(10, 10, |i, j| ((j * 10 + i) * 37 % 100) as f64);
        assert_eq!(make_ground_truth(&f, 0.5).unwrap().area(), 50);
        assert_eq!(make_ground_truth(&f, 0.25).unwrap().area(), 75);
        // the maximum is only reached at quantile 1, so one pixel survives just below it
        assert_eq!(make_ground_truth(&f, 1.0 - 1e-12).unwrap().area(), 1);
        assert!(make_ground_truth(&f, 1.0).is_err());
    }

    #[test]
    fn noise_model() {
        let z = LabelField::from_fn(100, 100, |i, j| (i / 10 + j / 10) % 2 == 0);
        let tiny = add_gaussian_noise(&z, 1e-9, 1).unwrap();
        assert!(tiny.max_abs_diff(&z.to_scalar()) < 1e-8);
        let y = add_gaussian_noise(&z, 0.3, 2).unwrap();
        let r = y.zip_map(&z.to_scalar(), |a, b| a - b).unwrap();
        let sd = (r.values().iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt();
        assert!((sd - 0.3).abs() < 0.015);
        assert_eq!(y, add_gaussian_noise(&z, 0.3, 2).unwrap());
    }

    #[test]
    fn matern_instances() {
        let cfg = MaternConfig::new(16, 3.0, 0.3, 5);
        let sampler = MaternSampler::new(16, 3.0, 1).unwrap();
        let a = synth_matern(&sampler, &cfg, None).unwrap();
        let b = synth_matern(&sampler, &cfg, None).unwrap();
        assert_eq!(a.noisy, b.noisy);
        assert!(a.quantile > 0.1 && a.quantile < 0.9);
        let frac = a.truth.area() as f64 / 256.0;
        assert!((frac - (1.0 - a.quantile)).abs() <= 1.0 / 256.0 + 1e-12);
        let other = MaternConfig { length_l: 1.0, ..cfg };
        assert!(synth_matern(&sampler, &other, None).is_err());
    }

    #[test]
    fn circle_regions() {
        let c = synth_ambiguous_circle(64, 3).unwrap();
        assert_eq!(c.clean.masked_mean_or_nan(&c.truth.flipped()), 30.0);
        assert_eq!(c.clean.masked_mean_or_nan(&c.lower), 70.0);
        assert_eq!(c.clean.masked_mean_or_nan(&c.upper), 50.0);
        assert_eq!(c.upper.area() + c.lower.area(), c.truth.area());
        let diff = c.noisy.zip_map(&c.clean, |a, b| a - b).unwrap();
        let bg = c.truth.flipped();
        let vals: Vec<f64> = diff.values().iter().zip(bg.labels()).filter(|(_, &l)| l == 1).map(|(v, _)| *v).collect();
        let sd = (vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64).sqrt();
        assert!((sd - 5.0).abs() < 0.5);
        let (fg, bgm) = circle_models();
        assert_eq!(c.foreground, fg);
        assert_eq!(c.background, bgm);
        assert!(synth_ambiguous_circle(16, 0).is_err());
    }

    trait MaskedMean {
        fn masked_mean_or_nan(&self, m: &LabelField) -> f64;
    }

    impl MaskedMean for ScalarField {
        fn masked_mean_or_nan(&self, m: &LabelField) -> f64 {
            let (s, n) = self
                .values()
                .iter()
                .zip(m.labels())
                .filter(|(_, &l)| l == 1)
                .fold((0.0, 0.0), |(s, n), (v, _)| (s + v, n + 1.0));
            s / n
        }
    }
}
