//! Exact posterior machinery: unnormalized log posterior, a Gibbs sampler,
//! convergence diagnostics and statistics comparing P with the factorized Q.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::amf::{amf_solve, map_labels, AmfParams};
use crate::error::{Error, Result};
use crate::field::{boundary_length, LabelField, ProbabilityField, ScalarField, TvMode};
use crate::likelihood::{logit_unchecked, sigmoid, ClampRange};
use crate::par::map_indexed;
use crate::rof::RofParams;

/// Largest grid (in pixels) handled by exhaustive enumeration.
pub const MAX_ENUMERATION_PIXELS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub chains: usize,
    /// Particles retained per chain after burn-in and thinning.
    pub samples_per_chain: usize,
    pub temperature: f64,
    /// Keep every `thin`-th sweep.
    pub thin: usize,
    /// Sweeps discarded before recording.
    pub burn_in: usize,
    pub seed: u64,
    pub mode: TvMode,
}

impl GibbsConfig {
    /// Defaults: 5 chains, `T = 1`, thin 10, burn-in one fifth of all sweeps.
    pub fn new(samples_per_chain: usize, seed: u64, mode: TvMode) -> Self {
        let thin = 10;
        GibbsConfig {
            chains: 5,
            samples_per_chain,
            temperature: 1.0,
            thin,
            burn_in: samples_per_chain * thin / 4,
            seed,
            mode,
        }
    }

    /// Split a total sweep budget per chain into burn-in (20%) and retained
    /// sweeps.
    pub fn from_sweeps(sweeps: usize, thin: usize, seed: u64, mode: TvMode) -> Self {
        let burn_in = sweeps / 5;
        GibbsConfig {
            chains: 5,
            samples_per_chain: (sweeps - burn_in) / thin.max(1),
            temperature: 1.0,
            thin,
            burn_in,
            seed,
            mode,
        }
    }

    pub fn total_sweeps(&self) -> usize {
        self.burn_in + self.samples_per_chain * self.thin
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::param("need at least one chain"));
        }
        if self.samples_per_chain == 0 {
            return Err(Error::param("samples_per_chain must be positive"));
        }
        if self.thin == 0 {
            return Err(Error::param("thin must be at least 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::param(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub chain_id: usize,
    /// 1-based sweep count at which the state was recorded.
    pub sweep: usize,
    pub labels: LabelField,
}

#[derive(Clone, Debug)]
pub struct SampleSet {
    pub particles: Vec<Particle>,
    /// Foreground area of each retained particle, per chain.
    pub area_traces: Vec<Vec<f64>>,
    /// Negative unnormalized log posterior of each retained particle, per chain.
    pub energy_traces: Vec<Vec<f64>>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.particles.first().map(|p| p.labels.dims())
    }

    /// Gelman-Rubin statistic of the area traces.
    pub fn rhat(&self) -> Result<f64> {
        gelman_rubin(&self.area_traces)
    }
}

/// `sum z_i psi_i - lambda L(z)`, dropping the log-partition constant.
pub fn log_posterior_unnorm(z: &LabelField, psi: &ScalarField, lambda: f64, mode: TvMode) -> Result<f64> {
    z.ensure_same_dims(psi.dims())?;
    let data: f64 = z
        .labels()
        .iter()
        .zip(psi.values())
        .filter(|(&l, _)| l == 1)
        .map(|(_, &p)| p)
        .sum();
    Ok(data - lambda * boundary_length(z, mode))
}

/// `L(z with z_k = 1) - L(z with z_k = 0)` from the terms incident to `k`.
fn delta_length(z: &[u8], w: usize, h: usize, i: usize, j: usize, mode: TvMode) -> f64 {
    let k = j * w + i;
    match mode {
        TvMode::Anisotropic => {
            let mut n = 0i32;
            let mut fg = 0i32;
            let mut nb = |q: usize| {
                n += 1;
                fg += z[q] as i32;
            };
            if i > 0 {
                nb(k - 1);
            }
            if i + 1 < w {
                nb(k + 1);
            }
            if j > 0 {
                nb(k - w);
            }
            if j + 1 < h {
                nb(k + w);
            }
            (n - 2 * fg) as f64
        }
        TvMode::Isotropic => {
            let local = |v: u8| {
                let at = |q: usize| if q == k { v } else { z[q] } as f64;
                let term = |m: usize, a: usize, b: usize| {
                    let gx = if a + 1 < w { at(m + 1) - at(m) } else { 0.0 };
                    let gy = if b + 1 < h { at(m + w) - at(m) } else { 0.0 };
                    gx.hypot(gy)
                };
                let mut s = term(k, i, j);
                if i > 0 {
                    s += term(k - 1, i - 1, j);
                }
                if j > 0 {
                    s += term(k - w, i, j - 1);
                }
                s
            };
            local(1) - local(0)
        }
    }
}

struct ChainOutput {
    particles: Vec<Particle>,
    area: Vec<f64>,
    energy: Vec<f64>,
}

fn run_chain(psi: &ScalarField, lambda: f64, cfg: &GibbsConfig, chain: usize) -> ChainOutput {
    let (w, h) = psi.dims();
    let p = psi.values();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);
    let mut z: Vec<u8> = (0..w * h).map(|_| rng.random::<bool>() as u8).collect();
    let inv_t = 1.0 / cfg.temperature;
    let mut out = ChainOutput {
        particles: Vec::with_capacity(cfg.samples_per_chain),
        area: Vec::with_capacity(cfg.samples_per_chain),
        energy: Vec::with_capacity(cfg.samples_per_chain),
    };
    for sweep in 1..=cfg.total_sweeps() {
        for j in 0..h {
            for i in 0..w {
                let k = j * w + i;
                let dl = if lambda == 0.0 { 0.0 } else { delta_length(&z, w, h, i, j, cfg.mode) };
                let prob = sigmoid((p[k] - lambda * dl) * inv_t);
                z[k] = (rng.random::<f64>() < prob) as u8;
            }
        }
        if sweep > cfg.burn_in && (sweep - cfg.burn_in) % cfg.thin == 0 {
            let labels = LabelField::new(w, h, z.clone()).expect("binary labels");
            let lp = log_posterior_unnorm(&labels, psi, lambda, cfg.mode).expect("matching dims");
            out.area.push(labels.area() as f64);
            out.energy.push(-lp);
            out.particles.push(Particle { chain_id: chain, sweep, labels });
        }
    }
    out
}

/// Single-site Gibbs sampling of `P(z | y)` in raster order. Chains start
/// from fair-coin labelings, use independent streams of one seed, and run
/// concurrently (capped by `AMF_THREADS`); output is independent of the
/// thread count.
pub fn gibbs_sample(psi: &ScalarField, lambda: f64, cfg: &GibbsConfig) -> Result<SampleSet> {
    cfg.validate()?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::param(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let outputs = map_indexed(cfg.chains, |c| run_chain(psi, lambda, cfg, c));
    let mut set = SampleSet {
        particles: Vec::new(),
        area_traces: Vec::with_capacity(cfg.chains),
        energy_traces: Vec::with_capacity(cfg.chains),
    };
    for o in outputs {
        set.particles.extend(o.particles);
        set.area_traces.push(o.area);
        set.energy_traces.push(o.energy);
    }
    Ok(set)
}

/// Potential scale reduction factor over equal-length prefixes of the
/// traces. Identical constant traces give 1; constant traces at different
/// levels give infinity.
pub fn gelman_rubin(traces: &[Vec<f64>]) -> Result<f64> {
    if traces.len() < 2 {
        return Err(Error::param("Gelman-Rubin needs at least two chains"));
    }
    let n = traces.iter().map(Vec::len).min().unwrap_or(0);
    if n < 10 {
        return Err(Error::param(format!("Gelman-Rubin needs at least 10 points per chain, got {n}")));
    }
    let m = traces.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = traces.iter().map(|t| t[..n].iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = nf / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = traces
        .iter()
        .zip(&means)
        .map(|(t, mu)| t[..n].iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let v = (nf - 1.0) / nf * w + b / nf;
    Ok((v / w).sqrt())
}

/// `ln Q(z; theta)` with theta clamped to `[1e-5, 1 - 1e-5]`.
pub fn log_q(z: &LabelField, theta: &ProbabilityField) -> Result<f64> {
    z.ensure_same_dims(theta.dims())?;
    let clamp = ClampRange::default();
    Ok(z.labels()
        .iter()
        .zip(theta.theta())
        .map(|(&l, &t)| {
            let t = clamp.apply(t);
            if l == 1 {
                t.ln()
            } else {
                (1.0 - t).ln()
            }
        })
        .sum())
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("correlation of a zero-variance sequence".into()));
    }
    Ok(sab / (saa.sqrt() * sbb.sqrt()))
}

/// Pearson correlation of `exp(a - max a)` and `exp(b - max b)`: the
/// correlation of probability masses known only up to constant factors.
pub fn mass_correlation(log_a: &[f64], log_b: &[f64]) -> Result<f64> {
    if log_a.len() != log_b.len() {
        return Err(Error::param("mass sequences differ in length"));
    }
    if log_a.len() < 2 {
        return Err(Error::Degenerate("need at least two particles".into()));
    }
    let masses = |s: &[f64]| {
        let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        s.iter().map(|v| (v - m).exp()).collect::<Vec<_>>()
    };
    pearson(&masses(log_a), &masses(log_b))
}

/// Correlation between particle masses under P and under Q.
pub fn compare_correlation(
    samples: &SampleSet,
    psi: &ScalarField,
    lambda: f64,
    theta: &ProbabilityField,
    mode: TvMode,
) -> Result<f64> {
    let mut a = Vec::with_capacity(samples.len());
    let mut b = Vec::with_capacity(samples.len());
    for p in &samples.particles {
        a.push(log_posterior_unnorm(&p.labels, psi, lambda, mode)?);
        b.push(log_q(&p.labels, theta)?);
    }
    mass_correlation(&a, &b)
}

/// Mean and variance of the foreground area under the independent
/// Bernoulli field.
pub fn q_area_moments(theta: &ProbabilityField) -> (f64, f64) {
    theta
        .theta()
        .iter()
        .fold((0.0, 0.0), |(m, v), &t| (m + t, v + t * (1.0 - t)))
}

/// Empirical mean and unbiased variance of particle areas (variance 0 for a
/// single particle).
pub fn sample_area_moments(samples: &SampleSet) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Degenerate("sample set is empty".into()));
    }
    let areas: Vec<f64> = samples.particles.iter().map(|p| p.labels.area() as f64).collect();
    let n = areas.len() as f64;
    let mean = areas.iter().sum::<f64>() / n;
    let var = if areas.len() > 1 {
        areas.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok((mean, var))
}

/// `[ln P(z) - ln P(z0)] - [ln Q(z) - ln Q(z0)]` with the Q ratio written
/// through the logits: `sum (z_i - z0_i) phi_i`.
pub fn log_ratio_gap_phi(
    z: &LabelField,
    z0: &LabelField,
    psi: &ScalarField,
    lambda: f64,
    phi: &ScalarField,
    mode: TvMode,
) -> Result<f64> {
    z.ensure_same_dims(z0.dims())?;
    z.ensure_same_dims(psi.dims())?;
    z.ensure_same_dims(phi.dims())?;
    let mut s = 0.0;
    for ((&a, &b), (&p, &f)) in z.labels().iter().zip(z0.labels()).zip(psi.values().iter().zip(phi.values())) {
        s += (a as f64 - b as f64) * (p - f);
    }
    Ok(s - lambda * (boundary_length(z, mode) - boundary_length(z0, mode)))
}

/// [`log_ratio_gap_phi`] with `phi = logit(theta)`.
pub fn log_ratio_gap(
    z: &LabelField,
    z0: &LabelField,
    psi: &ScalarField,
    lambda: f64,
    theta: &ProbabilityField,
    mode: TvMode,
) -> Result<f64> {
    let phi = ScalarField::new(
        theta.width(),
        theta.height(),
        theta.theta().iter().map(|&t| logit_unchecked(t)).collect(),
    )?;
    log_ratio_gap_phi(z, z0, psi, lambda, &phi, mode)
}

/// Thresholds separating the distinct levels of `phi`, where values closer
/// than `tol` count as one level. Each threshold yields one nontrivial
/// superlevel set.
pub fn superlevel_thresholds(phi: &ScalarField, tol: f64) -> Vec<f64> {
    let mut v = phi.values().to_vec();
    v.sort_by(f64::total_cmp);
    v.windows(2)
        .filter(|p| p[1] - p[0] > tol)
        .map(|p| 0.5 * (p[0] + p[1]))
        .collect()
}

/// Unnormalized log posterior of every labeling, indexed by the bit code of
/// [`LabelField::from_bits`].
pub fn exhaustive_log_posterior(psi: &ScalarField, lambda: f64, mode: TvMode) -> Result<Vec<f64>> {
    let (w, h) = psi.dims();
    if w * h > MAX_ENUMERATION_PIXELS {
        return Err(Error::param(format!(
            "exhaustive enumeration supports at most {MAX_ENUMERATION_PIXELS} pixels, got {}",
            w * h
        )));
    }
    (0..1u64 << (w * h))
        .map(|code| log_posterior_unnorm(&LabelField::from_bits(w, h, code), psi, lambda, mode))
        .collect()
}

#[derive(Clone, Debug)]
pub struct MapAgreement {
    pub agree: bool,
    /// The best and second-best labelings under P are within `1e-9`.
    pub tied: bool,
    pub map_p: LabelField,
    pub map_q: LabelField,
}

/// Compare the exact MAP labeling of P (by enumeration) with the AMF MAP
/// `{theta > 1/2}`.
pub fn map_agreement(psi: &ScalarField, lambda: f64, mode: TvMode) -> Result<MapAgreement> {
    let (w, h) = psi.dims();
    let lp = exhaustive_log_posterior(psi, lambda, mode)?;
    let mut best = (f64::NEG_INFINITY, 0u64);
    let mut second = f64::NEG_INFINITY;
    for (code, &v) in lp.iter().enumerate() {
        if v > best.0 {
            second = best.0;
            best = (v, code as u64);
        } else if v > second {
            second = v;
        }
    }
    let map_p = LabelField::from_bits(w, h, best.1);
    let map_q = if lambda == 0.0 {
        LabelField::new(w, h, psi.values().iter().map(|&p| (p > 0.0) as u8).collect())?
    } else {
        let params = AmfParams::new(lambda, RofParams::new(1e-12, 1_000_000, mode)?)?;
        map_labels(&amf_solve(psi, &params)?.theta, 0.5)?
    };
    Ok(MapAgreement {
        agree: map_p == map_q,
        tied: best.0 - second < 1e-9,
        map_p,
        map_q,
    })
}
