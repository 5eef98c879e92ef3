//! End-to-end experiment recipes behind `amf repro`.

use serde::Serialize;

use crate::amf::{amf_solve, map_labels, AmfParams, AmfSolution};
use crate::error::{Error, Result};
use crate::field::{ProbabilityField, ScalarField, TvMode};
use crate::likelihood::psi_mixture;
use crate::posterior::{compare_correlation, gibbs_sample, q_area_moments, sample_area_moments, GibbsConfig};
use crate::rof::RofParams;
use crate::synth::{synth_ambiguous_circle, synth_matern, CircleInstance, MaternConfig, MaternSampler};

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CircleParams {
    pub size: usize,
    pub lambda: f64,
    pub seed: u64,
    pub mode: TvMode,
}

impl Default for CircleParams {
    fn default() -> Self {
        CircleParams {
            size: 384,
            lambda: 5.0,
            seed: 0,
            mode: TvMode::Isotropic,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CircleReport {
    pub schema: u32,
    pub params: CircleParams,
    pub mean_theta_upper: f64,
    pub mean_theta_lower: f64,
    pub mean_theta_background: f64,
    pub map_area: usize,
    pub truth_area: usize,
    pub iterations: usize,
    pub converged: bool,
}

pub struct CircleRun {
    pub instance: CircleInstance,
    pub solution: AmfSolution,
    pub report: CircleReport,
}

fn masked(theta: &ProbabilityField, mask: &crate::field::LabelField) -> f64 {
    theta.masked_mean(mask).unwrap_or(f64::NAN)
}

/// Ambiguous circle: mixture likelihood, AMF solve and region averages of
/// the resulting probabilities.
pub fn repro_circle(params: CircleParams) -> Result<CircleRun> {
    let instance = synth_ambiguous_circle(params.size, params.seed)?;
    let psi = psi_mixture(&instance.noisy, &instance.foreground, &instance.background)?;
    let amf = AmfParams::new(params.lambda, RofParams::default().with_mode(params.mode))?;
    let solution = amf_solve(&psi, &amf)?;
    let map = map_labels(&solution.theta, 0.5)?;
    let report = CircleReport {
        schema: 1,
        params,
        mean_theta_upper: masked(&solution.theta, &instance.upper),
        mean_theta_lower: masked(&solution.theta, &instance.lower),
        mean_theta_background: masked(&solution.theta, &instance.truth.flipped()),
        map_area: map.area(),
        truth_area: instance.truth.area(),
        iterations: solution.iterations,
        converged: solution.converged,
    };
    Ok(CircleRun {
        instance,
        solution,
        report,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MaternCompareParams {
    pub size: usize,
    pub length_scales: Vec<f64>,
    pub order_p: u32,
    pub noise_sigma: f64,
    pub instances: usize,
    pub lambda: f64,
    /// Gibbs sweeps per chain, burn-in included.
    pub sweeps: usize,
    pub chains: usize,
    pub thin: usize,
    pub seed: u64,
    pub mode: TvMode,
}

impl Default for MaternCompareParams {
    fn default() -> Self {
        MaternCompareParams {
            size: 64,
            length_scales: vec![1.0, 3.0],
            order_p: 1,
            noise_sigma: 0.3,
            instances: 10,
            lambda: 1.0,
            sweeps: 10_000,
            chains: 5,
            thin: 10,
            seed: 0,
            mode: TvMode::Anisotropic,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MaternInstanceReport {
    pub length_l: f64,
    pub seed: u64,
    pub quantile: f64,
    pub truth_area: usize,
    pub correlation: Option<f64>,
    pub q_mean_area: f64,
    pub q_var_area: f64,
    pub p_mean_area: f64,
    pub p_var_area: f64,
    pub rhat: f64,
    pub gibbs_converged: bool,
    pub retained: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct MaternSummary {
    pub median_correlation: f64,
    pub mean_area_correlation: f64,
    /// Fraction of instances with Q area variance at most the Gibbs one.
    pub q_var_below_fraction: f64,
    pub instances: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct MaternCompareReport {
    pub schema: u32,
    pub params: MaternCompareParams,
    pub instances: Vec<MaternInstanceReport>,
    pub summary: MaternSummary,
}

/// Observation model of the Matérn experiment: unit-contrast classes with
/// shared noise, `psi = (y - 1/2) / sigma^2`.
pub fn matern_psi(noisy: &ScalarField, sigma: f64) -> ScalarField {
    noisy.map(|y| (y - 0.5) / (sigma * sigma))
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va.sqrt() * vb.sqrt())
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Matérn ground truth, AMF in closed form and Gibbs sampling of the exact
/// posterior for each instance, then agreement statistics.
pub fn matern_compare(params: &MaternCompareParams) -> Result<MaternCompareReport> {
    if params.instances == 0 || params.length_scales.is_empty() {
        return Err(Error::param("need at least one instance and one length scale"));
    }
    let amf = AmfParams::new(params.lambda, RofParams::default().with_mode(params.mode))?;
    let mut rows = Vec::new();
    for (li, &l) in params.length_scales.iter().enumerate() {
        let sampler = MaternSampler::new(params.size, l, params.order_p)?;
        for k in 0..params.instances {
            let seed = params
                .seed
                .wrapping_add((li * params.instances + k) as u64)
                .wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let cfg = MaternConfig {
                size: params.size,
                order_p: params.order_p,
                length_l: l,
                noise_sigma: params.noise_sigma,
                seed,
            };
            let inst = synth_matern(&sampler, &cfg, None)?;
            let psi = matern_psi(&inst.noisy, params.noise_sigma);
            let sol = amf_solve(&psi, &amf)?;
            let mut gcfg = GibbsConfig::from_sweeps(params.sweeps, params.thin, seed, params.mode);
            gcfg.chains = params.chains;
            let samples = gibbs_sample(&psi, params.lambda, &gcfg)?;
            let correlation = compare_correlation(&samples, &psi, params.lambda, &sol.theta, params.mode).ok();
            let (q_mean_area, q_var_area) = q_area_moments(&sol.theta);
            let (p_mean_area, p_var_area) = sample_area_moments(&samples)?;
            let rhat = samples.rhat().unwrap_or(f64::NAN);
            rows.push(MaternInstanceReport {
                length_l: l,
                seed,
                quantile: inst.quantile,
                truth_area: inst.truth.area(),
                correlation,
                q_mean_area,
                q_var_area,
                p_mean_area,
                p_var_area,
                rhat,
                gibbs_converged: rhat < 1.1,
                retained: samples.len(),
            });
        }
    }
    // an undefined correlation counts as no agreement
    let corr: Vec<f64> = rows.iter().map(|r| r.correlation.unwrap_or(0.0)).collect();
    let qm: Vec<f64> = rows.iter().map(|r| r.q_mean_area).collect();
    let pm: Vec<f64> = rows.iter().map(|r| r.p_mean_area).collect();
    let below = rows.iter().filter(|r| r.q_var_area <= r.p_var_area).count();
    let summary = MaternSummary {
        median_correlation: median(&corr),
        mean_area_correlation: if rows.len() > 1 { pearson(&qm, &pm) } else { f64::NAN },
        q_var_below_fraction: below as f64 / rows.len() as f64,
        instances: rows.len(),
    };
    Ok(MaternCompareReport {
        schema: 1,
        params: params.clone(),
        instances: rows,
        summary,
    })
}
