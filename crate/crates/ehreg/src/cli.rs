//! Implementations behind the `ehreg` binary. The binary itself only
//! parses arguments and maps errors to exit codes; everything here is
//! callable from library code and tests.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io;
use crate::metrics::{self, DicLikelihood};
use crate::model::{BetaPrior, McmcConfig, OutlierProbe, PriorConfig};
use crate::replicate::{self, FitModel, ReplicateConfig, StudyDesign};
use crate::sim::{
    simulate_random_intercept, simulate_regression, InterceptDesign, RegressionDesign, Scenario,
};

#[derive(Parser, Debug)]
#[command(
    name = "ehreg",
    about = "Robust Bayesian regression with heavy-tailed error mixtures",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset from the contamination design.
    Simulate(SimulateArgs),
    /// Fit one model to a dataset CSV and write draws + a summary.
    Fit(FitArgs),
    /// Run a simulate/fit/score replication study and emit a results table.
    Replicate(ReplicateArgs),
    /// Sweep a planted outlier over magnitudes and track the posterior shift.
    Robustness(RobustnessArgs),
    /// Predictive draws for new design rows from stored chain output.
    Predict(PredictArgs),
    /// Deviance information criterion of a stored fit on a dataset.
    Dic(DicArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub p: usize,
    /// Scenario as "100ω:μ", e.g. "10:20"; "0:-" for no contamination.
    #[arg(long, default_value = "0:-")]
    pub scenario: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Residual scale of the generating model.
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    /// Marginal standard deviation of the covariates.
    #[arg(long, default_value_t = 0.45)]
    pub covariate_sd: f64,
    /// Grouped design: number of groups (enables the random-intercept
    /// layout with --t-per repeats per group; n is ignored).
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub t_per: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Sidecar JSON with the generating truth (defaults next to --out).
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "y")]
    pub response: String,
    /// eh | aeh | normal | t:<nu> | at | mt
    #[arg(long, default_value = "eh")]
    pub model: String,
    /// normal | horseshoe
    #[arg(long, default_value = "normal")]
    pub prior: String,
    /// Prior variance for the coefficients (normal prior path).
    #[arg(long, default_value_t = 1000.0)]
    pub beta_var: f64,
    /// Prior variance for the free intercept (horseshoe path).
    #[arg(long, default_value_t = 1000.0)]
    pub intercept_var: f64,
    /// Optional JSON file overriding the whole prior configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 4000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1000)]
    pub burnin: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Column with integer group labels: fits a random intercept per group.
    #[arg(long)]
    pub group_col: Option<String>,
    /// Two comma-separated coordinate columns: fits a spatial GP effect.
    #[arg(long)]
    pub coord_cols: Option<String>,
    /// Columns to drop (the simulated outlier indicator is always dropped).
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<String>,
    /// Record full latent traces in the draws file.
    #[arg(long, default_value_t = false)]
    pub record_latents: bool,
    /// Output prefix: writes <prefix>_draws.csv and <prefix>_summary.json.
    #[arg(long)]
    pub out: String,
}

#[derive(Args, Debug)]
pub struct ReplicateArgs {
    /// Comma-separated scenarios, e.g. "0:-,5:10,10:20".
    #[arg(long, default_value = "0:-")]
    pub scenarios: String,
    /// Comma-separated models, e.g. "eh,mt,normal".
    #[arg(long, default_value = "eh,normal")]
    pub models: String,
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub p: usize,
    /// Held-out points per replication for predictive metrics (0 disables).
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
    /// Random-intercept study instead of plain regression.
    #[arg(long, default_value_t = false)]
    pub intercept_design: bool,
    #[arg(long, default_value_t = 50)]
    pub m: usize,
    #[arg(long, default_value_t = 10)]
    pub t_per: usize,
    #[arg(long, default_value_t = 4000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1000)]
    pub burnin: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output prefix: writes <prefix>_table.txt and <prefix>_cells.json.
    #[arg(long)]
    pub out: String,
}

#[derive(Args, Debug)]
pub struct RobustnessArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "y")]
    pub response: String,
    #[arg(long, default_value = "eh")]
    pub model: String,
    /// Row index (0-based) of the planted outlier.
    #[arg(long)]
    pub row: usize,
    /// Base value a of the planted row; defaults to its current response.
    #[arg(long)]
    pub base: Option<f64>,
    /// Slope b of the displacement a + b·ω.
    #[arg(long, default_value_t = 1.0)]
    pub slope: f64,
    /// Comma-separated magnitudes ω.
    #[arg(long, default_value = "10,100,1000,10000")]
    pub magnitudes: String,
    #[arg(long, default_value_t = 4000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1000)]
    pub burnin: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Prefix of a previous fit (reads <prefix>_draws.csv and _summary.json).
    #[arg(long)]
    pub draws: String,
    #[arg(long)]
    pub data: PathBuf,
    /// Response column to ignore if present in the new data.
    #[arg(long, default_value = "y")]
    pub response: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DicArgs {
    /// Prefix of a previous fit.
    #[arg(long)]
    pub draws: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "y")]
    pub response: String,
    /// Likelihood override; defaults to the fitted model from the summary.
    #[arg(long)]
    pub model: Option<String>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Replicate(args) => cmd_replicate(args),
        Command::Robustness(args) => cmd_robustness(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Dic(args) => cmd_dic(args),
    }
}

#[derive(Serialize)]
struct TruthSidecar {
    beta: Vec<f64>,
    sigma: f64,
    scenario: Scenario,
    seed: u64,
    v_true: Option<Vec<f64>>,
}

pub fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    use rand::SeedableRng;
    let scenario = Scenario::parse(&args.scenario)?;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(args.seed);
    let truth_path = args
        .truth
        .clone()
        .unwrap_or_else(|| args.out.with_extension("truth.json"));
    match args.groups {
        None => {
            let design = RegressionDesign {
                sigma: args.sigma,
                covariate_sd: args.covariate_sd,
                ..RegressionDesign::standard(args.n, args.p)
            };
            let simd = simulate_regression(&design, &scenario, &mut rng);
            io::write_dataset_csv(&args.out, &simd.y, &simd.covariates, &simd.outlier, None, None)?;
            io::write_json(
                &truth_path,
                &TruthSidecar {
                    beta: design.beta.clone(),
                    sigma: design.sigma,
                    scenario,
                    seed: args.seed,
                    v_true: None,
                },
            )?;
        }
        Some(m) => {
            let design = InterceptDesign {
                sigma: args.sigma,
                covariate_sd: args.covariate_sd,
                ..InterceptDesign::standard(m, args.t_per, args.p)
            };
            let simd = simulate_random_intercept(&design, &scenario, &mut rng);
            io::write_dataset_csv(
                &args.out,
                &simd.y,
                &simd.covariates,
                &simd.outlier,
                Some(&simd.groups),
                None,
            )?;
            io::write_json(
                &truth_path,
                &TruthSidecar {
                    beta: design.beta.clone(),
                    sigma: design.sigma,
                    scenario,
                    seed: args.seed,
                    v_true: Some(simd.v_true.iter().copied().collect()),
                },
            )?;
        }
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn build_prior(args: &FitArgs) -> Result<PriorConfig> {
    if let Some(path) = &args.config {
        return io::read_json(path);
    }
    let mut prior = match args.prior.as_str() {
        "normal" => PriorConfig {
            beta: BetaPrior::Isotropic {
                variance: args.beta_var,
            },
            ..PriorConfig::default()
        },
        "horseshoe" => PriorConfig {
            beta: BetaPrior::Horseshoe {
                intercept_var: args.intercept_var,
            },
            ..PriorConfig::default()
        },
        other => {
            return Err(Error::Validation {
                violations: vec![format!(
                    "unknown prior '{other}' (expected normal | horseshoe)"
                )],
            })
        }
    };
    if args.model == "aeh" {
        prior = prior.adaptive_gamma();
    }
    Ok(prior)
}

pub fn cmd_fit(args: FitArgs) -> Result<()> {
    let model = FitModel::parse(&args.model)?;
    let prior = build_prior(&args)?;
    let horseshoe = matches!(prior.beta, BetaPrior::Horseshoe { .. });

    let coord_pair = parse_coord_cols(args.coord_cols.as_deref())?;
    let mut exclude = args.exclude.clone();
    exclude.push("outlier".into());
    let parsed = io::read_dataset_csv(
        &args.data,
        &args.response,
        args.group_col.as_deref(),
        coord_pair
            .as_ref()
            .map(|(a, b)| (a.as_str(), b.as_str())),
        &exclude,
    )?;
    let data = parsed.dataset(!horseshoe);

    let mcmc = McmcConfig {
        iters: args.iters,
        burn_in: args.burnin,
        thin: args.thin,
        seed: args.seed,
        stream: 0,
        record_latents: args.record_latents,
    };
    let checked = crate::model::validate(&prior, &data, None)?;
    let out = model.fit(&data, &prior, &mcmc)?;
    let summary = metrics::summarize(&out)?;

    io::write_draws_csv(&io::draws_path(&args.out), &out)?;
    let file = io::build_summary_file(
        &out,
        &summary,
        parsed.covariate_names.clone(),
        !horseshoe,
        checked.warnings,
    );
    io::write_json(&io::summary_path(&args.out), &file)?;
    println!(
        "fit {} in {:.2}s, {} retained draws -> {}_draws.csv",
        file.model, file.runtime_secs, file.retained, args.out
    );
    Ok(())
}

pub fn cmd_replicate(args: ReplicateArgs) -> Result<()> {
    let scenarios = args
        .scenarios
        .split(',')
        .map(Scenario::parse)
        .collect::<Result<Vec<_>>>()?;
    let models = args
        .models
        .split(',')
        .map(FitModel::parse)
        .collect::<Result<Vec<_>>>()?;
    let design = if args.intercept_design {
        StudyDesign::Intercept(InterceptDesign::standard(args.m, args.t_per, args.p))
    } else {
        StudyDesign::Regression(RegressionDesign::standard(args.n, args.p))
    };
    let cfg = ReplicateConfig {
        scenarios,
        models,
        reps: args.reps,
        design,
        mcmc: McmcConfig {
            iters: args.iters,
            burn_in: args.burnin,
            thin: args.thin,
            seed: args.seed,
            stream: 0,
            record_latents: false,
        },
        n_holdout: args.holdout,
    };
    let cells = replicate::run_replication(&cfg)?;
    let table = replicate::render_table(&cells);
    io::atomic_write(
        &PathBuf::from(format!("{}_table.txt", args.out)),
        table.as_bytes(),
    )?;
    io::write_json(&PathBuf::from(format!("{}_cells.json", args.out)), &cells)?;
    print!("{table}");
    Ok(())
}

pub fn cmd_robustness(args: RobustnessArgs) -> Result<()> {
    let model = FitModel::parse(&args.model)?;
    let parsed = io::read_dataset_csv(
        &args.data,
        &args.response,
        None,
        None,
        &["outlier".into()],
    )?;
    let data = parsed.dataset(true);
    if args.row >= data.n() {
        return Err(Error::Validation {
            violations: vec![format!("row {} out of range (n = {})", args.row, data.n())],
        });
    }
    let probe = OutlierProbe {
        indices: vec![args.row],
        base: vec![args.base.unwrap_or(data.y[args.row])],
        slope: vec![args.slope],
    };
    crate::model::validate(&PriorConfig::default(), &data, Some(&probe))?;
    let magnitudes: Vec<f64> = args
        .magnitudes
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::domain(format!("bad magnitude '{t}'")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mcmc = McmcConfig {
        iters: args.iters,
        burn_in: args.burnin,
        thin: 1,
        seed: args.seed,
        stream: 0,
        record_latents: false,
    };
    let prior = PriorConfig::default();
    let points = metrics::robustness_sweep(&data, &probe, &magnitudes, |d, stream| {
        model.fit(d, &prior, &mcmc.with_stream(stream))
    })?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["omega", "distance", "mc_se"])?;
    for p in &points {
        w.write_record([
            format!("{}", p.omega),
            format!("{:.10e}", p.distance),
            format!("{:.10e}", p.mc_se),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::numeric(e.to_string()))?;
    io::atomic_write(&args.out, &bytes)?;
    for p in &points {
        println!(
            "omega {:>10}: distance {:.6} (mc se {:.6})",
            p.omega, p.distance, p.mc_se
        );
    }
    Ok(())
}

pub fn cmd_predict(args: PredictArgs) -> Result<()> {
    let summary: io::SummaryFile = io::read_json(&io::summary_path(&args.draws))?;
    let out = io::read_draws_csv(&io::draws_path(&args.draws))?;
    let parsed = io::read_dataset_csv(
        &args.data,
        &args.response,
        None,
        None,
        &["outlier".into()],
    )
    .or_else(|_| {
        // New data may legitimately lack the response column: parse with
        // the first covariate as a stand-in response, then reread.
        read_design_only(&args.data, &summary.covariates)
    })?;
    // Arrange columns in the training order.
    let mut x = DMatrix::zeros(parsed.y.len(), summary.covariates.len());
    for (j, name) in summary.covariates.iter().enumerate() {
        let src = parsed
            .covariate_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Validation {
                violations: vec![format!("new data is missing covariate '{name}'")],
            })?;
        x.set_column(j, &parsed.covariates.column(src));
    }
    let x = if summary.intercept_column {
        let n = x.nrows();
        let mut m = DMatrix::zeros(n, x.ncols() + 1);
        m.column_mut(0).fill(1.0);
        m.view_mut((0, 1), (n, x.ncols())).copy_from(&x);
        m
    } else {
        x
    };
    let pred = metrics::predict_clean(&out, &x, args.seed)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row", "mean", "lower95", "upper95"])?;
    for j in 0..pred.mean.len() {
        w.write_record([
            j.to_string(),
            format!("{:.10e}", pred.mean[j]),
            format!("{:.10e}", pred.lower[j]),
            format!("{:.10e}", pred.upper[j]),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::numeric(e.to_string()))?;
    io::atomic_write(&args.out, &bytes)?;
    println!("wrote {} predictive intervals to {}", pred.mean.len(), args.out.display());
    Ok(())
}

fn read_design_only(path: &std::path::Path, covariates: &[String]) -> Result<io::ParsedData> {
    if covariates.is_empty() {
        return Err(Error::Validation {
            violations: vec!["fit summary lists no covariates".into()],
        });
    }
    // Use the first training covariate as the "response" so the reader has
    // an anchor, then move it back into the design.
    let anchor = &covariates[0];
    let parsed = io::read_dataset_csv(path, anchor, None, None, &["outlier".into()])?;
    let n = parsed.y.len();
    let p = parsed.covariates.ncols() + 1;
    let mut covs = DMatrix::zeros(n, p);
    for i in 0..n {
        covs[(i, 0)] = parsed.y[i];
    }
    covs.view_mut((0, 1), (n, p - 1)).copy_from(&parsed.covariates);
    let mut names = vec![anchor.clone()];
    names.extend(parsed.covariate_names.clone());
    Ok(io::ParsedData {
        y: nalgebra::DVector::zeros(n),
        covariates: covs,
        covariate_names: names,
        groups: None,
        coords: None,
    })
}

pub fn cmd_dic(args: DicArgs) -> Result<()> {
    let summary: io::SummaryFile = io::read_json(&io::summary_path(&args.draws))?;
    let out = io::read_draws_csv(&io::draws_path(&args.draws))?;
    let parsed = io::read_dataset_csv(
        &args.data,
        &args.response,
        None,
        None,
        &["outlier".into()],
    )?;
    let data = parsed.dataset(summary.intercept_column);

    let tag = args
        .model
        .clone()
        .unwrap_or_else(|| summary.model.split('+').next().unwrap_or("").to_string());
    let lik = parse_likelihood(&tag)?;
    let value = metrics::dic(&out, &data, &lik)?;
    println!("DIC[{tag}] = {value:.3}");
    Ok(())
}

fn parse_likelihood(tag: &str) -> Result<DicLikelihood> {
    match tag {
        "eh" | "aeh" => Ok(DicLikelihood::Eh),
        "normal" | "n" => Ok(DicLikelihood::Normal),
        "mt" => Ok(DicLikelihood::Mt { nu: 0.5 }),
        _ => {
            if let Some(rest) = tag.strip_prefix("mt:") {
                let nu = rest
                    .parse()
                    .map_err(|_| Error::domain(format!("bad likelihood '{tag}'")))?;
                return Ok(DicLikelihood::Mt { nu });
            }
            if let Some(rest) = tag.strip_prefix("t") {
                let rest = rest.trim_start_matches(':');
                let nu = rest
                    .parse()
                    .map_err(|_| Error::domain(format!("bad likelihood '{tag}'")))?;
                return Ok(DicLikelihood::T { nu });
            }
            Err(Error::domain(format!(
                "no observed-data likelihood for '{tag}'"
            )))
        }
    }
}

fn parse_coord_cols(spec: Option<&str>) -> Result<Option<(String, String)>> {
    match spec {
        None => Ok(None),
        Some(text) => {
            let parts: Vec<&str> = text.split(',').map(str::trim).collect();
            if parts.len() != 2 || parts.iter().any(|p| p.is_empty()) {
                return Err(Error::Validation {
                    violations: vec![format!(
                        "--coord-cols expects two comma-separated names, got '{text}'"
                    )],
                });
            }
            Ok(Some((parts[0].to_string(), parts[1].to_string())))
        }
    }
}

/// Exit code for an error per the command-line contract: 2 for usage or
/// validation problems, 3 for numeric failures, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Domain(_) | Error::Unsupported(_) | Error::Validation { .. } => 2,
        Error::NotSpd { .. } | Error::Numeric { .. } | Error::Quadrature { .. } => 3,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => 1,
    }
}
