use std::io::Write;
use std::path::{Path, PathBuf};

use mclab::concentration::{concentration_report, MultiplierFamily};
use mclab::experiments::{calibrate_theorem_constant, persist_scan, rate_scan, write_json};
use mclab::rng::derive_seed;
use mclab::solvers::{kkt_residual_with, resolve_tuning, TuningContext};
use mclab::{
    fit, generate_low_rank, sample_observations, Dims, Estimator, EstimatorSpec, NoiseModel,
    ObservationSet, Tuning,
};
use serde::Serialize;

use crate::config::{RunConfig, DEFAULT_RULE_CONSTANT};
use crate::fail::{CliError, CliResult};
use crate::{
    ConcentrationArgs, Family, GenerateArgs, NoiseArg, RateScanArgs, SimulateArgs, SolveArgs,
};

pub fn generate(args: &GenerateArgs) -> CliResult<()> {
    let dims = Dims::new(args.m1, args.m2)?;
    let truth = generate_low_rank(dims, args.rank, args.a, args.seed)?;
    truth.matrix().write_csv(&args.out)?;
    let sv = truth.matrix().singular_values()?;
    let tol = sv.first().copied().unwrap_or(0.0) * dims.max_dim() as f64 * f64::EPSILON;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    println!("rank {rank}, inf-norm {}", truth.matrix().norm_inf());
    Ok(())
}

/// The matrix `generate` writes for the config's dims, rank, `a` and seed.
fn config_truth(cfg: &RunConfig) -> CliResult<mclab::GroundTruth> {
    Ok(generate_low_rank(
        Dims::new(cfg.m1, cfg.m2)?,
        cfg.rank,
        cfg.a,
        cfg.seed,
    )?)
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let cfg = RunConfig::load(&args.config)?;
    let trial = cfg.trial(cfg.estimator.unwrap_or(Estimator::LeastSquares))?;
    let dims = trial.dims()?;
    let p = trial.sampling.build(dims)?;
    let noise = trial.noise.build()?;
    let truth = config_truth(&cfg)?;
    let obs = sample_observations(&truth, &p, &noise, trial.n, derive_seed(cfg.seed, &[1]))?;
    obs.write_csv(&args.out)?;
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Sidecar {
    estimator: Estimator,
    lambda: f64,
    tau: Option<f64>,
    iterations: usize,
    converged: bool,
    kkt_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_hat: Option<f64>,
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    out.with_file_name(name)
}

pub fn solve(args: &SolveArgs) -> CliResult<()> {
    let cfg = RunConfig::load(&args.config)?;
    let dims = Dims::new(cfg.m1, cfg.m2)?;
    let obs = ObservationSet::read_csv(&args.obs, dims)?;
    let n = obs.len();
    let noise = cfg.noise.build()?;
    let p = cfg.sampling.build(dims)?;

    let (tuning, lambda) = match args.lambda.as_str() {
        "auto" => (
            Tuning::TheoremRule {
                c: cfg.rule_constant.unwrap_or(DEFAULT_RULE_CONSTANT),
            },
            None,
        ),
        "pilot" => (
            Tuning::Pilot {
                reps: 200,
                quantile: 0.95,
            },
            None,
        ),
        v => {
            let l: f64 = v.parse().map_err(|_| {
                CliError::usage(format!(
                    "--lambda must be auto, pilot or a number, got {v:?}"
                ))
            })?;
            if !(l >= 0.0 && l.is_finite()) {
                return Err(CliError::usage(format!(
                    "--lambda must be finite and >= 0, got {l}"
                )));
            }
            (Tuning::Explicit, Some(l))
        }
    };
    let tau = args.tau.or(cfg.tau);
    let spec = EstimatorSpec {
        estimator: args.estimator,
        lambda,
        tau,
        a: cfg.a,
        tuning,
    };
    if spec.estimator == Estimator::Huber && tau.is_none() && tuning == Tuning::Explicit {
        return Err(CliError::usage(
            "Huber with an explicit lambda needs --tau or tau in the config",
        ));
    }
    let ctx = TuningContext {
        sigma: Some(noise.sigma()),
        noise: Some(&noise),
        sampling: Some(&p),
        seed: derive_seed(cfg.seed, &[2]),
    };
    let spec = resolve_tuning(&spec, dims, n, &ctx)?;
    let res = fit(&obs, &spec, &cfg.solver)?;
    let kkt = kkt_residual_with(&res, &obs, &spec, &cfg.solver)?;
    res.estimate.write_csv(&args.out)?;
    write_json(
        sidecar_path(&args.out),
        &Sidecar {
            estimator: spec.estimator,
            lambda: spec.lambda.expect("resolved"),
            tau: spec.tau.filter(|_| spec.estimator == Estimator::Huber),
            iterations: res.iterations,
            converged: res.converged,
            kkt_residual: kkt,
            sigma_hat: res.sigma_hat,
        },
    )?;
    if args.strict && !res.converged {
        return Err(CliError::not_converged(format!(
            "solver stopped after {} iterations with KKT residual {kkt:.3e}",
            res.iterations
        )));
    }
    Ok(())
}

fn noise_model(args: &ConcentrationArgs) -> CliResult<NoiseModel> {
    Ok(match args.noise {
        NoiseArg::Gaussian => NoiseModel::gaussian(args.sigma)?,
        NoiseArg::StudentT => NoiseModel::student_t(args.df, args.sigma)?,
        NoiseArg::TwoPoint => NoiseModel::two_point(args.sigma)?,
    })
}

pub fn concentration(args: &ConcentrationArgs) -> CliResult<()> {
    let dims = Dims::new(args.m1, args.m2)?;
    if args.n == 0 || args.reps == 0 {
        return Err(CliError::usage("--n and --reps must be positive"));
    }
    let need_tau = || {
        args.tau
            .ok_or_else(|| CliError::usage("this family needs --tau"))
    };
    let family = match args.family {
        Family::Rademacher => MultiplierFamily::rademacher(),
        Family::Noise => MultiplierFamily::noise(noise_model(args)?),
        Family::Truncated => MultiplierFamily::truncated(noise_model(args)?, need_tau()?)?,
        Family::Indicator => MultiplierFamily::indicator(noise_model(args)?, need_tau()?)?,
    };
    let family = if args.recentered {
        family.recentered()
    } else {
        family
    };
    let p = mclab::SamplingDistribution::uniform(dims);
    let report = concentration_report(&p, &family, args.n, args.reps, args.seed, args.t, args.c)?;
    match &args.out {
        Some(path) => write_json(path, &report)?,
        None => {
            let text = serde_json::to_string_pretty(&report).map_err(|e| CliError {
                code: 1,
                message: e.to_string(),
            })?;
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}").map_err(|e| CliError::io(format!("stdout: {e}")))?;
        }
    }
    Ok(())
}

pub fn rate_scan_cmd(args: &RateScanArgs) -> CliResult<()> {
    let cfg = RunConfig::load(&args.config)?;
    let mut scan = cfg.scan()?;
    scan.base.timing |= args.timing;
    let calibration = cfg
        .scan
        .as_ref()
        .and_then(|s| s.calibrate)
        .filter(|_| scan.synthetic.is_none());
    if let Some(cal) = calibration {
        if cal.reps < 100 || !(cal.quantile > 0.0 && cal.quantile < 1.0) {
            return Err(CliError::usage(
                "calibration needs reps >= 100 and quantile in (0, 1)",
            ));
        }
        // placeholder constant so the grid validates; replaced below
        scan.base.tuning = Tuning::TheoremRule { c: 1.0 };
        scan.base.lambda = None;
        scan.base.tau = None;
    }
    // everything is checked before the first trial or pilot simulation
    scan.validate()?;
    if let Some(cal) = calibration {
        let c = calibrate_theorem_constant(&scan.trial(0, 0), cal.reps, cal.quantile)?;
        scan.base.tuning = Tuning::TheoremRule { c };
        eprintln!("calibrated rule constant C = {c}");
    }
    let result = rate_scan(&scan)?;
    match persist_scan(&result, &args.out_dir)? {
        Some(f) => println!(
            "slope {:.4}, intercept {:.4}, R² {:.4} over {} points",
            f.slope, f.intercept, f.r_squared, f.point_count
        ),
        None => println!("power-law fit undefined (nonpositive mean error)"),
    }
    Ok(())
}
