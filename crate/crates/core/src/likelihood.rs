//! Logit likelihood fields: `psi = ln p(y | fg) - ln p(y | bg)` per pixel,
//! for Gaussian, Gaussian-mixture and kernel-density class models, plus
//! conversion of external probability maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ProbabilityField, ScalarField};

/// Floor applied to class densities before taking logs.
pub const DENSITY_FLOOR: f64 = 1e-12;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-odds of `p`; `p` must lie strictly inside (0, 1).
pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("logit of {p} (needs 0 < p < 1)")));
    }
    Ok(logit_unchecked(p))
}

#[inline]
pub(crate) fn logit_unchecked(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

#[inline]
fn gauss_log_pdf(y: f64, mu: f64, sigma: f64) -> f64 {
    let z = (y - mu) / sigma;
    -0.5 * z * z - sigma.ln() - LN_SQRT_2PI
}

/// Class-conditional Gaussian intensities for background (0) and
/// foreground (1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianClassModel {
    pub mu0: f64,
    pub sigma0: f64,
    pub mu1: f64,
    pub sigma1: f64,
}

impl GaussianClassModel {
    pub fn new(mu0: f64, sigma0: f64, mu1: f64, sigma1: f64) -> Result<Self> {
        let m = GaussianClassModel {
            mu0,
            sigma0,
            mu1,
            sigma1,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0 && self.sigma1 > 0.0) {
            return Err(Error::param(format!(
                "Gaussian class model needs positive sigmas, got {} and {}",
                self.sigma0, self.sigma1
            )));
        }
        if !(self.mu0.is_finite() && self.mu1.is_finite()) {
            return Err(Error::param("Gaussian class means must be finite"));
        }
        Ok(())
    }

    /// `ln p(y | 1) - ln p(y | 0)`.
    #[inline]
    pub fn log_ratio(&self, y: f64) -> f64 {
        gauss_log_pdf(y, self.mu1, self.sigma1) - gauss_log_pdf(y, self.mu0, self.sigma0)
    }

    pub fn swapped(&self) -> Self {
        GaussianClassModel {
            mu0: self.mu1,
            sigma0: self.sigma1,
            mu1: self.mu0,
            sigma1: self.sigma0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub w: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// Weighted sum of Gaussians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    components: Vec<MixtureComponent>,
}

impl MixtureModel {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let m = MixtureModel { components };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::param("mixture needs at least one component"));
        }
        for c in &self.components {
            if !(c.sigma > 0.0) || !(0.0..=1.0).contains(&c.w) || !c.mu.is_finite() {
                return Err(Error::param(format!("invalid mixture component {c:?}")));
            }
        }
        let total: f64 = self.components.iter().map(|c| c.w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn density(&self, y: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.w * gauss_log_pdf(y, c.mu, c.sigma).exp())
            .sum()
    }

    /// Log density with the [`DENSITY_FLOOR`] applied, evaluated by
    /// log-sum-exp so far tails do not underflow early.
    pub fn log_density(&self, y: f64) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .filter(|c| c.w > 0.0)
            .map(|c| c.w.ln() + gauss_log_pdf(y, c.mu, c.sigma))
            .collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
        lse.max(DENSITY_FLOOR.ln())
    }
}

/// Gaussian kernel density estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    samples: Vec<f64>,
    bandwidth: f64,
}

impl KdeModel {
    pub fn new(samples: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Degenerate("kernel density needs at least one sample".into()));
        }
        if !(bandwidth > 0.0) {
            return Err(Error::param(format!("KDE bandwidth must be positive, got {bandwidth}")));
        }
        Ok(KdeModel { samples, bandwidth })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn density(&self, y: f64) -> f64 {
        let h = self.bandwidth;
        let s: f64 = self
            .samples
            .iter()
            .map(|&x| gauss_log_pdf(y, x, h).exp())
            .sum();
        s / self.samples.len() as f64
    }

    pub fn log_density(&self, y: f64) -> f64 {
        self.density(y).max(DENSITY_FLOOR).ln()
    }
}

/// Silverman's rule of thumb, `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`.
/// Falls back to the standard deviation when the IQR vanishes, and to a
/// small positive floor for constant samples.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let sd = var.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    if h > 0.0 {
        h
    } else {
        1e-3 * (1.0 + mean.abs())
    }
}

/// Linear-interpolated empirical quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Fit a KDE; `bandwidth = None` selects Silverman's rule.
pub fn kde_fit(samples: &[f64], bandwidth: Option<f64>) -> Result<KdeModel> {
    if samples.is_empty() {
        return Err(Error::Degenerate("kernel density needs at least one sample".into()));
    }
    let h = bandwidth.unwrap_or_else(|| silverman_bandwidth(samples));
    KdeModel::new(samples.to_vec(), h)
}

/// Probability clamping interval applied before logit transforms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClampRange {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ClampRange {
    fn default() -> Self {
        ClampRange {
            lo: 1e-5,
            hi: 1.0 - 1e-5,
        }
    }
}

impl ClampRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::param(format!("clamp range needs 0 < lo < hi < 1, got [{lo}, {hi}]")));
        }
        Ok(ClampRange { lo, hi })
    }

    /// Symmetric range `[eps, 1 - eps]`.
    pub fn symmetric(eps: f64) -> Result<Self> {
        Self::new(eps, 1.0 - eps)
    }

    #[inline]
    pub fn apply(&self, p: f64) -> f64 {
        p.clamp(self.lo, self.hi)
    }
}

pub fn psi_gaussian(y: &ScalarField, model: &GaussianClassModel) -> Result<ScalarField> {
    model.validate()?;
    Ok(y.map(|v| model.log_ratio(v)))
}

pub fn psi_mixture(y: &ScalarField, fg: &MixtureModel, bg: &MixtureModel) -> Result<ScalarField> {
    fg.validate()?;
    bg.validate()?;
    Ok(y.map(|v| fg.log_density(v) - bg.log_density(v)))
}

pub fn psi_kde(y: &ScalarField, fg: &KdeModel, bg: &KdeModel) -> ScalarField {
    y.map(|v| fg.log_density(v) - bg.log_density(v))
}

/// `logit(clamp(p))` pixelwise.
pub fn psi_from_probability(p: &ProbabilityField, clamp: ClampRange) -> ScalarField {
    let values = p.theta().iter().map(|&t| logit_unchecked(clamp.apply(t))).collect();
    ScalarField::new(p.width(), p.height(), values).expect("clamped logits are finite")
}
