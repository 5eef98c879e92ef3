//! Command-line front end. Every command prints a one-line JSON summary on
//! success; exit code 1 signals a usage error and 2 a runtime error.

pub mod repro;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::amf::{amf_solve, map_labels, otsu_init, AmfParams};
use crate::error::{Error, Result};
use crate::evalx::{dice, multi_label_dice, one_vs_rest, q_area, quasi_multilabel, ClassProbStack};
use crate::field::{LabelField, ProbabilityField, ScalarField, TvMode};
use crate::io;
use crate::likelihood::{psi_from_probability, psi_gaussian, psi_mixture, ClampRange, GaussianClassModel, MixtureModel};
use crate::posterior::{
    compare_correlation, gibbs_sample, q_area_moments, sample_area_moments, GibbsConfig, Particle, SampleSet,
};
use crate::rof::{rof_energy, rof_solve, RofParams};
use crate::synth::{synth_ambiguous_circle, synth_matern, MaternConfig, MaternSampler};

#[derive(Debug, Parser)]
#[command(name = "amf", version, about = "Active mean field segmentation and posterior diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// ROF/TV denoising of a scalar field
    Denoise(DenoiseArgs),
    /// Build the logit likelihood field psi from an image
    Likelihood(LikelihoodArgs),
    /// Solve for the AMF label probabilities
    Segment(SegmentArgs),
    /// Gibbs-sample the exact label posterior
    Gibbs(GibbsArgs),
    /// Compare Gibbs particles with the AMF approximation
    Compare(CompareArgs),
    /// Generate synthetic data
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Evaluation metrics
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Quasi-multi-label segmentation from per-class probability maps
    Multilabel(MultilabelArgs),
    /// Reproduce the synthetic experiments
    #[command(subcommand)]
    Repro(ReproCommand),
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Relative change stopping tolerance
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, default_value = "denoised.amff")]
    pub out: PathBuf,
    #[arg(long, default_value_t = TvMode::Isotropic)]
    pub mode: TvMode,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
#[group(skip)]
#[command(group = clap::ArgGroup::new("source").required(true).multiple(false))]
pub struct LikelihoodArgs {
    /// Intensity image (AMFF); not used with --prob
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Gaussian classes as mu0,sigma0,mu1,sigma1 (background first)
    #[arg(long, group = "source", value_parser = parse_gaussian)]
    pub gaussian: Option<GaussianClassModel>,
    /// JSON file {"foreground": {"components": [...]}, "background": {...}}
    #[arg(long, group = "source")]
    pub models: Option<PathBuf>,
    /// Fit Gaussian classes with an automatic two-class threshold
    #[arg(long, group = "source")]
    pub otsu: bool,
    /// Foreground probability map (AMFF); psi is its clamped logit
    #[arg(long, group = "source")]
    pub prob: Option<PathBuf>,
    #[arg(long, default_value = "psi.amff")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub psi: PathBuf,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value = "theta.amff")]
    pub out_theta: PathBuf,
    /// MAP labels (theta > 1/2) as PGM
    #[arg(long)]
    pub out_map: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = TvMode::Isotropic)]
    pub mode: TvMode,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct GibbsArgs {
    #[arg(long)]
    pub psi: PathBuf,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value_t = 5)]
    pub chains: usize,
    /// Sweeps per chain, burn-in included
    #[arg(long)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 10)]
    pub thin: usize,
    /// Sweeps discarded per chain [default: 20% of --sweeps]
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = TvMode::Anisotropic)]
    pub mode: TvMode,
    #[arg(long, default_value = "samples.amfs")]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub psi: PathBuf,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long)]
    pub samples: PathBuf,
    /// AMF probabilities; solved from --psi when absent
    #[arg(long)]
    pub theta: Option<PathBuf>,
    #[arg(long, default_value_t = TvMode::Anisotropic)]
    pub mode: TvMode,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Thresholded Matérn Gaussian process with additive noise
    Matern(MaternArgs),
    /// Ambiguous circle image and its class models
    Circle(CircleArgs),
}

#[derive(Debug, Args)]
pub struct MaternArgs {
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 3.0)]
    pub l: f64,
    #[arg(long, default_value_t = 1)]
    pub p: u32,
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
    /// Threshold quantile in (0, 1) or "auto"
    #[arg(long, default_value = "auto")]
    pub quantile: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "truth.pgm")]
    pub out_truth: PathBuf,
    #[arg(long, default_value = "noisy.amff")]
    pub out_noisy: PathBuf,
    /// Also write psi = (y - 1/2) / sigma^2
    #[arg(long)]
    pub out_psi: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CircleArgs {
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Dice overlap of two label maps
    Dice {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Area-normalized Q confidence of a labeling
    Qarea {
        #[arg(long)]
        theta: PathBuf,
        #[arg(long)]
        map: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct MultilabelArgs {
    /// Per-class probability maps (AMFF), class 0 first
    #[arg(long, num_args = 2.., required = true)]
    pub probs: Vec<PathBuf>,
    #[arg(long)]
    pub lambda: f64,
    /// Class index map (PGM gray value = class) for Dice scores
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value = "labels.pgm")]
    pub out_labels: PathBuf,
    #[arg(long, default_value = "report.json")]
    pub out_report: PathBuf,
    #[arg(long, default_value_t = TvMode::Isotropic)]
    pub mode: TvMode,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Subcommand)]
pub enum ReproCommand {
    /// Ambiguous circle segmented with a mixture likelihood
    Circle {
        #[arg(long, default_value_t = 5.0)]
        lambda: f64,
        #[arg(long, default_value_t = 384)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = TvMode::Isotropic)]
        mode: TvMode,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// AMF against Gibbs sampling on Matérn label maps
    MaternCompare {
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Comma-separated length scales
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 3.0])]
        l: Vec<f64>,
        #[arg(long, default_value_t = 0.3)]
        sigma: f64,
        /// Instances per length scale
        #[arg(long, default_value_t = 10)]
        instances: usize,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Gibbs sweeps per chain
        #[arg(long, default_value_t = 10_000)]
        sweeps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = TvMode::Anisotropic)]
        mode: TvMode,
        #[arg(long, default_value = "matern_report.json")]
        report: PathBuf,
    },
}

/// Foreground and background mixtures, as written by `synth circle`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassMixtures {
    pub foreground: MixtureModel,
    pub background: MixtureModel,
}

fn parse_gaussian(s: &str) -> std::result::Result<GaussianClassModel, String> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("not a number: {t:?}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if v.len() != 4 {
        return Err(format!("expected mu0,sigma0,mu1,sigma1, got {} values", v.len()));
    }
    GaussianClassModel::new(v[0], v[1], v[2], v[3]).map_err(|e| e.to_string())
}

/// Parse `args` (program name first), execute and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn rof_params(s: &SolverArgs, mode: TvMode) -> Result<RofParams> {
    RofParams::new(s.tol, s.max_iter, mode)
}

fn theta_field(t: &ProbabilityField) -> ScalarField {
    t.to_scalar()
}

fn read_theta(path: &Path) -> Result<ProbabilityField> {
    let f = io::read_amff(path)?;
    ProbabilityField::from_scalar(&f).map_err(|e| Error::Format {
        kind: "AMFF",
        path: path.to_path_buf(),
        reason: format!("not a probability field: {e}"),
    })
}

pub fn execute(cmd: Command) -> Result<Value> {
    match cmd {
        Command::Denoise(a) => {
            let u0 = io::read_amff(&a.input)?;
            let r = rof_solve(&u0, a.alpha, &rof_params(&a.solver, a.mode)?)?;
            io::write_amff(&a.out, &r.u)?;
            Ok(json!({
                "command": "denoise", "out": a.out, "alpha": a.alpha, "mode": a.mode,
                "iterations": r.iterations, "converged": r.converged, "energy": r.final_energy,
                "input_energy": rof_energy(&u0, &u0, a.alpha, a.mode)?,
            }))
        }
        Command::Likelihood(a) => {
            let (psi, source) = if let Some(p) = &a.prob {
                let prob = read_theta(p)?;
                (psi_from_probability(&prob, ClampRange::default()), json!("probability"))
            } else {
                let image_path = a
                    .image
                    .as_ref()
                    .ok_or_else(|| Error::param("--image is required unless --prob is given"))?;
                let y = io::read_amff(image_path)?;
                if let Some(m) = &a.gaussian {
                    (psi_gaussian(&y, m)?, json!({"gaussian": m}))
                } else if let Some(mpath) = &a.models {
                    let m: ClassMixtures = io::read_json(mpath)?;
                    m.foreground.validate()?;
                    m.background.validate()?;
                    (psi_mixture(&y, &m.foreground, &m.background)?, json!("mixture"))
                } else {
                    let m = otsu_init(&y)?;
                    (psi_gaussian(&y, &m)?, json!({"otsu": m}))
                }
            };
            io::write_amff(&a.out, &psi)?;
            Ok(json!({
                "command": "likelihood", "out": a.out, "source": source,
                "psi_min": psi.min(), "psi_max": psi.max(),
            }))
        }
        Command::Segment(a) => {
            let psi = io::read_amff(&a.psi)?;
            let params = AmfParams::new(a.lambda, rof_params(&a.solver, a.mode)?)?;
            let sol = amf_solve(&psi, &params)?;
            let map = map_labels(&sol.theta, 0.5)?;
            io::write_amff(&a.out_theta, &theta_field(&sol.theta))?;
            if let Some(p) = &a.out_map {
                io::write_labels_pgm(p, &map)?;
            }
            let (q_mean, q_var) = q_area_moments(&sol.theta);
            let summary = json!({
                "command": "segment", "lambda": a.lambda, "mode": a.mode,
                "iterations": sol.iterations, "converged": sol.converged,
                "mean_theta": sol.theta.mean(), "map_area": map.area(),
                "q_mean_area": q_mean, "q_var_area": q_var,
                "q_area": q_area(&map, &sol.theta)?,
            });
            if let Some(r) = &a.report {
                let mut report = summary.clone();
                report["schema"] = json!(1);
                io::write_json(r, &report)?;
            }
            Ok(summary)
        }
        Command::Gibbs(a) => {
            let psi = io::read_amff(&a.psi)?;
            let burn_in = a.burn_in.unwrap_or(a.sweeps / 5);
            if burn_in >= a.sweeps {
                return Err(Error::param(format!("burn-in {burn_in} leaves no sweeps out of {}", a.sweeps)));
            }
            let cfg = GibbsConfig {
                chains: a.chains,
                samples_per_chain: (a.sweeps - burn_in) / a.thin.max(1),
                temperature: a.temperature,
                thin: a.thin,
                burn_in,
                seed: a.seed,
                mode: a.mode,
            };
            let set = gibbs_sample(&psi, a.lambda, &cfg)?;
            let refs: Vec<&LabelField> = set.particles.iter().map(|p| &p.labels).collect();
            io::write_samples(&a.out, psi.width(), psi.height(), &refs)?;
            let (mean_area, var_area) = sample_area_moments(&set)?;
            let rhat = set.rhat().ok();
            let report = json!({
                "schema": 1, "command": "gibbs", "rhat": rhat,
                "converged": rhat.is_some_and(|r| r < 1.1),
                "retained": set.len(), "mean_area": mean_area, "var_area": var_area,
                "mode": a.mode, "lambda": a.lambda, "config": cfg,
            });
            if let Some(r) = &a.report {
                io::write_json(r, &report)?;
            }
            Ok(report)
        }
        Command::Compare(a) => {
            let psi = io::read_amff(&a.psi)?;
            let theta = match &a.theta {
                Some(p) => read_theta(p)?,
                None => {
                    let params = AmfParams::new(a.lambda, RofParams::default().with_mode(a.mode))?;
                    amf_solve(&psi, &params)?.theta
                }
            };
            let labels = io::read_samples(&a.samples)?;
            let set = SampleSet {
                particles: labels
                    .into_iter()
                    .enumerate()
                    .map(|(k, labels)| Particle { chain_id: 0, sweep: k + 1, labels })
                    .collect(),
                area_traces: vec![],
                energy_traces: vec![],
            };
            let correlation = compare_correlation(&set, &psi, a.lambda, &theta, a.mode)?;
            let (q_mean, q_var) = q_area_moments(&theta);
            let (p_mean, p_var) = sample_area_moments(&set)?;
            let report = json!({
                "schema": 1, "command": "compare", "mode": a.mode, "lambda": a.lambda,
                "particles": set.len(), "correlation": correlation,
                "q_mean_area": q_mean, "q_var_area": q_var,
                "p_mean_area": p_mean, "p_var_area": p_var,
            });
            if let Some(r) = &a.report {
                io::write_json(r, &report)?;
            }
            Ok(report)
        }
        Command::Synth(SynthCommand::Matern(a)) => {
            let quantile = match a.quantile.as_str() {
                "auto" => None,
                q => Some(q.parse::<f64>().map_err(|_| {
                    Error::param(format!("--quantile must be a number in (0, 1) or \"auto\", got {q:?}"))
                })?),
            };
            let cfg = MaternConfig {
                size: a.size,
                order_p: a.p,
                length_l: a.l,
                noise_sigma: a.sigma,
                seed: a.seed,
            };
            cfg.validate()?;
            let sampler = MaternSampler::new(a.size, a.l, a.p)?;
            let inst = synth_matern(&sampler, &cfg, quantile)?;
            io::write_labels_pgm(&a.out_truth, &inst.truth)?;
            io::write_amff(&a.out_noisy, &inst.noisy)?;
            if let Some(p) = &a.out_psi {
                io::write_amff(p, &repro::matern_psi(&inst.noisy, a.sigma))?;
            }
            Ok(json!({
                "command": "synth matern", "quantile": inst.quantile,
                "truth_area": inst.truth.area(), "size": a.size, "seed": a.seed,
            }))
        }
        Command::Synth(SynthCommand::Circle(a)) => {
            let c = synth_ambiguous_circle(a.size, a.seed)?;
            std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
            io::write_amff(&a.out_dir.join("clean.amff"), &c.clean)?;
            io::write_amff(&a.out_dir.join("noisy.amff"), &c.noisy)?;
            io::write_labels_pgm(&a.out_dir.join("truth.pgm"), &c.truth)?;
            let models = ClassMixtures {
                foreground: c.foreground,
                background: c.background,
            };
            io::write_json(&a.out_dir.join("models.json"), &models)?;
            Ok(json!({
                "command": "synth circle", "out_dir": a.out_dir, "size": a.size,
                "seed": a.seed, "truth_area": c.truth.area(),
            }))
        }
        Command::Eval(EvalCommand::Dice { a, b }) => {
            let za = io::read_labels_pgm(&a)?;
            let zb = io::read_labels_pgm(&b)?;
            Ok(json!({"command": "eval dice", "dice": dice(&za, &zb)?}))
        }
        Command::Eval(EvalCommand::Qarea { theta, map }) => {
            let t = read_theta(&theta)?;
            let z = io::read_labels_pgm(&map)?;
            Ok(json!({"command": "eval qarea", "q_area": q_area(&z, &t)?}))
        }
        Command::Multilabel(a) => multilabel(a),
        Command::Repro(ReproCommand::Circle {
            lambda,
            size,
            seed,
            mode,
            out_dir,
        }) => {
            let run = repro::repro_circle(repro::CircleParams { size, lambda, seed, mode })?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            io::write_amff(&out_dir.join("theta.amff"), &theta_field(&run.solution.theta))?;
            io::write_labels_pgm(&out_dir.join("map.pgm"), &map_labels(&run.solution.theta, 0.5)?)?;
            io::write_labels_pgm(&out_dir.join("truth.pgm"), &run.instance.truth)?;
            io::write_json(&out_dir.join("report.json"), &run.report)?;
            let mut summary = serde_json::to_value(&run.report)?;
            summary["command"] = json!("repro circle");
            Ok(summary)
        }
        Command::Repro(ReproCommand::MaternCompare {
            size,
            l,
            sigma,
            instances,
            lambda,
            sweeps,
            seed,
            mode,
            report,
        }) => {
            let params = repro::MaternCompareParams {
                size,
                length_scales: l,
                noise_sigma: sigma,
                instances,
                lambda,
                sweeps,
                seed,
                mode,
                ..Default::default()
            };
            let r = repro::matern_compare(&params)?;
            io::write_json(&report, &r)?;
            Ok(json!({"command": "repro matern-compare", "report": report, "summary": r.summary}))
        }
    }
}

fn multilabel(a: MultilabelArgs) -> Result<Value> {
    let maps = a.probs.iter().map(|p| read_theta(p)).collect::<Result<Vec<_>>>()?;
    let stack = ClassProbStack::new(maps)?;
    let params = AmfParams::new(a.lambda, rof_params(&a.solver, a.mode)?)?;
    let thetas = one_vs_rest(&stack, &params)?;
    let (projected, classes) = quasi_multilabel(&thetas)?;
    let (w, h) = classes.dims();
    io::write_pgm(&a.out_labels, w, h, classes.classes())?;

    let truth = match &a.truth {
        Some(p) => {
            let (tw, th, px) = io::read_pgm(p)?;
            if (tw, th) != (w, h) {
                return Err(Error::DimensionMismatch {
                    expected: (w, h),
                    found: (tw, th),
                });
            }
            Some(crate::evalx::ClassMap::new(w, h, px)?)
        }
        None => None,
    };
    let mut per_class = Vec::new();
    let mut dice_scores = Vec::new();
    for (c, theta) in projected.maps().iter().enumerate() {
        let mask = classes.mask(c as u8);
        let qa = q_area(&mask, theta)?;
        let d = match &truth {
            Some(t) => {
                let d = dice(&mask, &t.mask(c as u8))?;
                dice_scores.push(d);
                Some(d)
            }
            None => None,
        };
        per_class.push(json!({
            "class": c, "area": mask.area(), "q_area": qa.value,
            "dropped_foreground": qa.dropped_foreground,
            "dropped_background": qa.dropped_background, "dice": d,
        }));
    }
    let mean_dice = if dice_scores.is_empty() { None } else { Some(multi_label_dice(&dice_scores)?) };
    let report = json!({
        "schema": 1, "command": "multilabel", "lambda": a.lambda, "mode": a.mode,
        "classes": per_class, "multi_label_dice": mean_dice,
    });
    io::write_json(&a.out_report, &report)?;
    Ok(json!({
        "command": "multilabel", "classes": projected.k(),
        "out_labels": a.out_labels, "multi_label_dice": mean_dice,
    }))
}
