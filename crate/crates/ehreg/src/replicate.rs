//! The simulate → fit → score replication harness behind the contamination
//! studies: every (scenario, replication) pair simulates one dataset, fits
//! every requested model on it, and the per-coefficient metrics aggregate
//! into one table cell per (scenario, model).

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{inefficiency_factor, mean_ci, predict_clean};
use crate::model::{ChainOutput, Dataset, GammaPrior, McmcConfig, PriorConfig};
use crate::sampler::{self, DEFAULT_NU_GRID};
use crate::sim::{
    simulate_holdout, simulate_random_intercept, simulate_regression, InterceptDesign,
    RegressionDesign, Scenario,
};

/// Which error model to fit; the coefficient prior comes separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FitModel {
    Eh,
    AdaptiveEh,
    Normal,
    T { nu: f64 },
    AdaptiveT,
    Mt { nu: f64 },
}

impl FitModel {
    /// Parse a model flag: eh | aeh | normal | t:<ν> | at | mt[:<ν>].
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim().to_lowercase();
        match t.as_str() {
            "eh" => return Ok(FitModel::Eh),
            "aeh" => return Ok(FitModel::AdaptiveEh),
            "normal" | "n" => return Ok(FitModel::Normal),
            "at" => return Ok(FitModel::AdaptiveT),
            "mt" => return Ok(FitModel::Mt { nu: 0.5 }),
            _ => {}
        }
        if let Some(rest) = t.strip_prefix("t:") {
            let nu: f64 = rest
                .parse()
                .map_err(|_| Error::domain(format!("bad degrees of freedom in '{text}'")))?;
            return Ok(FitModel::T { nu });
        }
        if let Some(rest) = t.strip_prefix("mt:") {
            let nu: f64 = rest
                .parse()
                .map_err(|_| Error::domain(format!("bad degrees of freedom in '{text}'")))?;
            return Ok(FitModel::Mt { nu });
        }
        Err(Error::domain(format!(
            "unknown model '{text}' (expected eh | aeh | normal | t:<nu> | at | mt)"
        )))
    }

    pub fn label(&self) -> String {
        match self {
            FitModel::Eh => "EH".into(),
            FitModel::AdaptiveEh => "aEH".into(),
            FitModel::Normal => "N".into(),
            FitModel::T { nu } => format!("T{nu}"),
            FitModel::AdaptiveT => "aT".into(),
            FitModel::Mt { .. } => "MT".into(),
        }
    }

    /// Fit this model with the given coefficient prior.
    pub fn fit(
        &self,
        data: &Dataset,
        prior: &PriorConfig,
        mcmc: &McmcConfig,
    ) -> Result<ChainOutput> {
        match self {
            FitModel::Eh => sampler::run_chain(data, prior, mcmc),
            FitModel::AdaptiveEh => {
                let mut prior = prior.clone();
                if matches!(prior.gamma, GammaPrior::Fixed { .. }) {
                    prior.gamma = GammaPrior::Gamma {
                        shape: 100.0,
                        rate: 100.0,
                    };
                }
                sampler::run_chain(data, &prior, mcmc)
            }
            FitModel::Normal => sampler::run_chain_normal(data, prior, mcmc),
            FitModel::T { nu } => sampler::run_chain_t(data, prior, *nu, mcmc),
            FitModel::AdaptiveT => {
                sampler::run_chain_adaptive_t(data, prior, &DEFAULT_NU_GRID, mcmc)
            }
            FitModel::Mt { nu } => sampler::run_chain_mt(data, prior, *nu, mcmc),
        }
    }
}

#[derive(Clone, Debug)]
pub enum StudyDesign {
    Regression(RegressionDesign),
    Intercept(InterceptDesign),
}

#[derive(Clone, Debug)]
pub struct ReplicateConfig {
    pub scenarios: Vec<Scenario>,
    pub models: Vec<FitModel>,
    pub reps: usize,
    pub design: StudyDesign,
    pub mcmc: McmcConfig,
    /// Held-out points per replication for predictive scoring (0 disables).
    pub n_holdout: usize,
}

/// Aggregated metrics for one (scenario, model) cell, on the natural scale;
/// the table renderer applies the ×100 display convention.
#[derive(Clone, Debug, Serialize)]
pub struct CellResult {
    pub scenario_label: String,
    pub model: String,
    pub rmse: f64,
    pub cp: f64,
    pub al: f64,
    pub if_avg: f64,
    pub pred_rmse: Option<f64>,
    pub pred_cp: Option<f64>,
    pub pred_al: Option<f64>,
    pub rmspe: Option<f64>,
    pub reps_done: usize,
    pub reps_failed: usize,
}

struct RepOutcome {
    per_coef_err: Vec<f64>,
    cover: Vec<bool>,
    length: Vec<f64>,
    if_avg: f64,
    pred: Option<(Vec<f64>, Vec<bool>, Vec<f64>)>,
    rmspe: Option<f64>,
}

fn score_fit(
    out: &ChainOutput,
    truth: &[f64],
    holdout: Option<(&DMatrix<f64>, &[f64])>,
    v_true: Option<&[f64]>,
    pred_seed: u64,
) -> Result<RepOutcome> {
    let beta = out.block("beta")?;
    let p = beta.ncols();
    if truth.len() != p {
        return Err(Error::domain("truth/coefficient dimension mismatch"));
    }
    let mut per_coef_err = Vec::with_capacity(p);
    let mut cover = Vec::with_capacity(p);
    let mut length = Vec::with_capacity(p);
    let mut if_sum = 0.0;
    for k in 0..p {
        let col: Vec<f64> = beta.column(k).iter().copied().collect();
        let (mean, lo, hi) = mean_ci(&col);
        per_coef_err.push(mean - truth[k]);
        cover.push(lo <= truth[k] && truth[k] <= hi);
        length.push(hi - lo);
        if_sum += inefficiency_factor(&col)?;
    }

    let pred = match holdout {
        Some((x_new, y_new)) => {
            let pr = predict_clean(out, x_new, pred_seed)?;
            let errs: Vec<f64> = (0..y_new.len()).map(|j| pr.mean[j] - y_new[j]).collect();
            let cov: Vec<bool> = (0..y_new.len())
                .map(|j| pr.lower[j] <= y_new[j] && y_new[j] <= pr.upper[j])
                .collect();
            let lens: Vec<f64> = (0..y_new.len()).map(|j| pr.upper[j] - pr.lower[j]).collect();
            Some((errs, cov, lens))
        }
        None => None,
    };

    let rmspe = match v_true {
        Some(vt) => {
            let b = out.block("b")?;
            let bm = b.row_mean();
            let mse: f64 = (0..vt.len())
                .map(|j| (bm[(0, j)] - vt[j]).powi(2))
                .sum::<f64>()
                / vt.len() as f64;
            Some(mse.sqrt())
        }
        None => None,
    };

    Ok(RepOutcome {
        per_coef_err,
        cover,
        length,
        if_avg: if_sum / p as f64,
        pred,
        rmspe,
    })
}

/// Run the full grid. Replication seeds derive as base seed + replication
/// index; chain streams encode (scenario, model), so results do not depend
/// on scheduling order. Failed replications are excluded and counted.
pub fn run_replication(cfg: &ReplicateConfig) -> Result<Vec<CellResult>> {
    let n_models = cfg.models.len();
    if n_models == 0 || cfg.scenarios.is_empty() || cfg.reps == 0 {
        return Err(Error::domain("replication grid is empty"));
    }

    let tasks: Vec<(usize, usize)> = (0..cfg.scenarios.len())
        .flat_map(|s| (0..cfg.reps).map(move |r| (s, r)))
        .collect();

    let outcomes: Vec<(usize, usize, Vec<Option<RepOutcome>>)> = tasks
        .par_iter()
        .map(|&(s_idx, rep)| {
            let scenario = cfg.scenarios[s_idx];
            let mut data_rng =
                ChaCha12Rng::seed_from_u64(cfg.mcmc.seed.wrapping_add(rep as u64));
            data_rng.set_stream(1_000 + s_idx as u64);

            let per_model: Vec<Option<RepOutcome>> = match &cfg.design {
                StudyDesign::Regression(design) => {
                    let sim = simulate_regression(design, &scenario, &mut data_rng);
                    let data = sim.dataset_with_intercept();
                    let holdout = (cfg.n_holdout > 0).then(|| {
                        let (covs, y) = simulate_holdout(design, cfg.n_holdout, &mut data_rng);
                        let mut x = DMatrix::zeros(cfg.n_holdout, design.p + 1);
                        x.column_mut(0).fill(1.0);
                        x.view_mut((0, 1), (cfg.n_holdout, design.p)).copy_from(&covs);
                        let yv: Vec<f64> = y.iter().copied().collect();
                        (x, yv)
                    });
                    cfg.models
                        .iter()
                        .enumerate()
                        .map(|(m_idx, model)| {
                            let mcmc = cfg
                                .mcmc
                                .with_seed(cfg.mcmc.seed.wrapping_add(rep as u64))
                                .with_stream((s_idx * n_models + m_idx) as u64 + 1);
                            let prior = PriorConfig::default();
                            model
                                .fit(&data, &prior, &mcmc)
                                .and_then(|out| {
                                    score_fit(
                                        &out,
                                        &design.beta,
                                        holdout.as_ref().map(|(x, y)| (x, y.as_slice())),
                                        None,
                                        mcmc.seed ^ 0x9e37_79b9_7f4a_7c15,
                                    )
                                })
                                .ok()
                        })
                        .collect()
                }
                StudyDesign::Intercept(design) => {
                    let sim = simulate_random_intercept(design, &scenario, &mut data_rng);
                    let data = sim.dataset_with_intercept();
                    let v_true: Vec<f64> = sim.v_true.iter().copied().collect();
                    cfg.models
                        .iter()
                        .enumerate()
                        .map(|(m_idx, model)| {
                            let mcmc = cfg
                                .mcmc
                                .with_seed(cfg.mcmc.seed.wrapping_add(rep as u64))
                                .with_stream((s_idx * n_models + m_idx) as u64 + 1);
                            let prior = PriorConfig::default();
                            model
                                .fit(&data, &prior, &mcmc)
                                .and_then(|out| {
                                    score_fit(&out, &design.beta, None, Some(&v_true), 0)
                                })
                                .ok()
                        })
                        .collect()
                }
            };
            (s_idx, rep, per_model)
        })
        .collect();

    let mut cells = Vec::with_capacity(cfg.scenarios.len() * n_models);
    for (s_idx, scenario) in cfg.scenarios.iter().enumerate() {
        for (m_idx, model) in cfg.models.iter().enumerate() {
            let mut per_rep: Vec<&RepOutcome> = Vec::new();
            let mut failed = 0usize;
            for (s, _rep, row) in &outcomes {
                if *s != s_idx {
                    continue;
                }
                match &row[m_idx] {
                    Some(o) => per_rep.push(o),
                    None => failed += 1,
                }
            }
            if per_rep.is_empty() {
                return Err(Error::numeric(format!(
                    "every replication failed for {} at {}",
                    model.label(),
                    scenario.label()
                )));
            }
            let p = per_rep[0].per_coef_err.len();
            let reps_done = per_rep.len();
            // RMSE per coefficient over replications, then averaged.
            let mut rmse_acc = 0.0f64;
            for k in 0..p {
                let mse: f64 = per_rep
                    .iter()
                    .map(|o| o.per_coef_err[k] * o.per_coef_err[k])
                    .sum::<f64>()
                    / reps_done as f64;
                rmse_acc += mse.sqrt();
            }
            let rmse = rmse_acc / p as f64;
            let cp = per_rep
                .iter()
                .flat_map(|o| o.cover.iter())
                .map(|&c| c as u32 as f64)
                .sum::<f64>()
                / (reps_done * p) as f64;
            let al = per_rep
                .iter()
                .flat_map(|o| o.length.iter())
                .sum::<f64>()
                / (reps_done * p) as f64;
            let if_avg = per_rep.iter().map(|o| o.if_avg).sum::<f64>() / reps_done as f64;

            let (pred_rmse, pred_cp, pred_al) = if per_rep.iter().all(|o| o.pred.is_some()) {
                let mut se = 0.0f64;
                let mut cov = 0.0f64;
                let mut len = 0.0f64;
                let mut count = 0usize;
                for o in &per_rep {
                    let (errs, cvs, lens) = o.pred.as_ref().expect("checked");
                    for j in 0..errs.len() {
                        se += errs[j] * errs[j];
                        cov += cvs[j] as u32 as f64;
                        len += lens[j];
                        count += 1;
                    }
                }
                (
                    Some((se / count as f64).sqrt()),
                    Some(cov / count as f64),
                    Some(len / count as f64),
                )
            } else {
                (None, None, None)
            };

            let rmspe = per_rep
                .iter()
                .map(|o| o.rmspe)
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64);

            cells.push(CellResult {
                scenario_label: scenario.label(),
                model: model.label(),
                rmse,
                cp,
                al,
                if_avg,
                pred_rmse,
                pred_cp,
                pred_al,
                rmspe,
                reps_done,
                reps_failed: failed,
            });
        }
    }
    Ok(cells)
}

/// Render cells as aligned-column text, one block per metric, rows by
/// scenario and columns by model. Everything except IF is multiplied by
/// 100 at emission.
pub fn render_table(cells: &[CellResult]) -> String {
    let mut scenarios: Vec<String> = Vec::new();
    let mut models: Vec<String> = Vec::new();
    for c in cells {
        if !scenarios.contains(&c.scenario_label) {
            scenarios.push(c.scenario_label.clone());
        }
        if !models.contains(&c.model) {
            models.push(c.model.clone());
        }
    }
    let lookup = |s: &str, m: &str| cells.iter().find(|c| c.scenario_label == s && c.model == m);

    let mut blocks: Vec<(&str, Box<dyn Fn(&CellResult) -> Option<f64>>)> = vec![
        ("RMSE", Box::new(|c: &CellResult| Some(100.0 * c.rmse))),
        ("CP", Box::new(|c: &CellResult| Some(100.0 * c.cp))),
        ("AL", Box::new(|c: &CellResult| Some(100.0 * c.al))),
        ("IF", Box::new(|c: &CellResult| Some(c.if_avg))),
    ];
    if cells.iter().any(|c| c.pred_rmse.is_some()) {
        blocks.push((
            "PRED-RMSE",
            Box::new(|c: &CellResult| c.pred_rmse.map(|v| 100.0 * v)),
        ));
        blocks.push((
            "PRED-CP",
            Box::new(|c: &CellResult| c.pred_cp.map(|v| 100.0 * v)),
        ));
        blocks.push((
            "PRED-AL",
            Box::new(|c: &CellResult| c.pred_al.map(|v| 100.0 * v)),
        ));
    }
    if cells.iter().any(|c| c.rmspe.is_some()) {
        blocks.push((
            "RMSPE",
            Box::new(|c: &CellResult| c.rmspe.map(|v| 100.0 * v)),
        ));
    }

    let width = 10usize;
    let mut out = String::new();
    for (name, extract) in &blocks {
        out.push_str(&format!("{name}\n"));
        out.push_str(&format!("{:>12}", "scenario"));
        for m in &models {
            out.push_str(&format!("{m:>width$}"));
        }
        out.push('\n');
        for s in &scenarios {
            out.push_str(&format!("{s:>12}"));
            for m in &models {
                match lookup(s, m).and_then(|c| extract(c)) {
                    Some(v) => out.push_str(&format!("{v:>width$.2}")),
                    None => out.push_str(&format!("{:>width$}", "--")),
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    let failed: usize = cells.iter().map(|c| c.reps_failed).sum();
    if failed > 0 {
        out.push_str(&format!("excluded replications: {failed}\n"));
    }
    out
}
