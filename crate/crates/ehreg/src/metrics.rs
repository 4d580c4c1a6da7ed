//! Posterior summaries, sampling-efficiency diagnostics, model comparison,
//! prediction, and the outlier-robustness probes.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dist::{ln_normal_pdf, ln_t_pdf, EhDensityTable, HParams};
use crate::error::{Error, Result};
use crate::model::{ChainOutput, Dataset, OutlierProbe, RandomEffect};
use crate::quad::QuadratureSpec;

/// Linear-interpolation (type 7) empirical quantile of sorted data.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0 && (0.0..=1.0).contains(&p));
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Posterior mean and equal-tailed 95% credible interval of one trace.
pub fn mean_ci(trace: &[f64]) -> (f64, f64, f64) {
    let mut sorted = trace.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = trace.iter().sum::<f64>() / trace.len() as f64;
    (
        mean,
        quantile_type7(&sorted, 0.025),
        quantile_type7(&sorted, 0.975),
    )
}

/// Per-parameter posterior summaries for a chain.
#[derive(Clone, Debug)]
pub struct Summary {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub if_factor: Vec<f64>,
}

/// Means and equal-tailed 95% intervals for every recorded column.
/// Requires at least 100 retained draws.
pub fn summarize(out: &ChainOutput) -> Result<Summary> {
    let rows = out.retained();
    if rows < 100 {
        return Err(Error::domain(format!(
            "need at least 100 retained draws, have {rows}"
        )));
    }
    let mut s = Summary {
        names: out.column_names(),
        mean: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
        if_factor: Vec::new(),
    };
    for mat in out.draws.values() {
        for j in 0..mat.ncols() {
            let col: Vec<f64> = mat.column(j).iter().copied().collect();
            let (m, lo, hi) = mean_ci(&col);
            s.mean.push(m);
            s.lower.push(lo);
            s.upper.push(hi);
            s.if_factor
                .push(inefficiency_factor(&col).unwrap_or(f64::NAN));
        }
    }
    Ok(s)
}

/// Inefficiency factor 1 + 2Σρ̂ with the initial-monotone-positive-sequence
/// truncation: lag pairs Γ_m = ρ_{2m} + ρ_{2m+1} enter while positive, each
/// clipped to keep the sequence nonincreasing. Antithetic chains can land
/// below 1; the estimate is floored at 0. A zero-variance trace has IF 1.
pub fn inefficiency_factor(trace: &[f64]) -> Result<f64> {
    let n = trace.len();
    if n < 200 {
        return Err(Error::domain(format!(
            "trace too short for an inefficiency factor ({n} < 200)"
        )));
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let gamma0 = trace.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    if gamma0 <= 0.0 || gamma0 < 1e-280 {
        return Ok(1.0);
    }
    let autocov = |k: usize| -> f64 {
        let mut acc = 0.0;
        for i in 0..(n - k) {
            acc += (trace[i] - mean) * (trace[i + k] - mean);
        }
        acc / n as f64
    };
    let mut sum_pairs = 0.0f64;
    let mut prev = f64::INFINITY;
    let mut m = 0usize;
    while 2 * m + 1 < n {
        let pair = autocov(2 * m) + autocov(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        let clipped = pair.min(prev);
        sum_pairs += clipped;
        prev = clipped;
        m += 1;
    }
    Ok((2.0 * sum_pairs / gamma0 - 1.0).max(0.0))
}

/// Monte Carlo variance of the trace mean, autocorrelation-adjusted.
pub fn mc_variance_of_mean(trace: &[f64]) -> Result<f64> {
    let n = trace.len() as f64;
    let mean = trace.iter().sum::<f64>() / n;
    let var = trace.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let iff = inefficiency_factor(trace)?;
    // An IF of zero (perfectly antithetic) still leaves estimation noise;
    // keep a floor of one i.i.d.-equivalent draw.
    Ok(var * iff.max(1e-3) / n)
}

// ---------------------------------------------------------------------------
// Deviance information criterion
// ---------------------------------------------------------------------------

/// Observed-data likelihood used for the deviance: the latent indicators
/// and scales are marginalized analytically into the error density.
pub enum DicLikelihood {
    Eh,
    Mt { nu: f64 },
    T { nu: f64 },
    Normal,
}

struct DevianceInputs<'a> {
    beta: &'a DMatrix<f64>,
    alpha: Option<&'a DMatrix<f64>>,
    sigma2: &'a DMatrix<f64>,
    s: Option<&'a DMatrix<f64>>,
    b: Option<&'a DMatrix<f64>>,
}

/// DIC = 2·mean D(θ) - D(mean θ), D = -2 log L with the observed-data
/// likelihood; θ collects the regression block, σ², the mixture weight,
/// and any random effects (treated as parameters).
pub fn dic(out: &ChainOutput, data: &Dataset, lik: &DicLikelihood) -> Result<f64> {
    let rows = out.retained();
    if rows == 0 {
        return Err(Error::domain("empty chain"));
    }
    let beta = out.block("beta")?;
    let alpha = out.draws.get("alpha");
    let sigma2 = out.block("sigma2")?;
    let s = out.draws.get("s");
    let b = out.draws.get("b");
    if matches!(lik, DicLikelihood::Eh | DicLikelihood::Mt { .. }) && s.is_none() {
        return Err(Error::domain("mixture likelihood needs recorded s draws"));
    }
    let table = match lik {
        DicLikelihood::Eh => {
            let g = out.block("gamma")?;
            let (gmin, gmax) = g
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            if gmax - gmin > 1e-12 {
                return Err(Error::Unsupported(
                    "observed-data deviance needs a fixed tail shape; refit with fixed gamma"
                        .into(),
                ));
            }
            Some(EhDensityTable::new(0.5 * (gmin + gmax))?)
        }
        _ => None,
    };
    let inputs = DevianceInputs {
        beta,
        alpha,
        sigma2,
        s,
        b,
    };

    let dev_at = |beta_row: &DVector<f64>,
                  alpha_v: f64,
                  sigma2_v: f64,
                  s_v: f64,
                  b_row: Option<&DVector<f64>>|
     -> Result<f64> {
        let sigma = sigma2_v.sqrt();
        let mut eta = &data.x * beta_row;
        eta.add_scalar_mut(alpha_v);
        if let Some(bv) = b_row {
            match &data.effect {
                RandomEffect::None => {}
                RandomEffect::Intercept { groups, .. } => {
                    for (i, &g) in groups.iter().enumerate() {
                        eta[i] += bv[g];
                    }
                }
                RandomEffect::Spatial { .. } => eta += bv,
            }
        }
        let mut ll = 0.0f64;
        for i in 0..data.n() {
            let t = (data.y[i] - eta[i]) / sigma;
            let ln_f = match lik {
                DicLikelihood::Normal => ln_normal_pdf(t, 0.0, 1.0),
                DicLikelihood::T { nu } => ln_t_pdf(t, *nu),
                DicLikelihood::Mt { nu } => {
                    let a = (1.0 - s_v).ln() + ln_normal_pdf(t, 0.0, 1.0);
                    let bb = s_v.ln() + ln_t_pdf(t, *nu);
                    log_sum_exp(a, bb)
                }
                DicLikelihood::Eh => table
                    .as_ref()
                    .expect("table built for EH deviance")
                    .ln_mixture(t, s_v),
            };
            ll += ln_f - sigma.ln();
        }
        Ok(-2.0 * ll)
    };

    let mut mean_dev = 0.0f64;
    for r in 0..rows {
        let beta_r = inputs.beta.row(r).transpose();
        let alpha_r = inputs.alpha.map_or(0.0, |a| a[(r, 0)]);
        let s_r = inputs.s.map_or(0.0, |m| m[(r, 0)]);
        let b_r = inputs.b.map(|m| m.row(r).transpose());
        mean_dev += dev_at(
            &beta_r,
            alpha_r,
            inputs.sigma2[(r, 0)],
            s_r,
            b_r.as_ref(),
        )?;
    }
    mean_dev /= rows as f64;

    let beta_bar = inputs.beta.row_mean().transpose();
    let alpha_bar = inputs.alpha.map_or(0.0, |a| a.row_mean()[(0, 0)]);
    let sigma2_bar = inputs.sigma2.row_mean()[(0, 0)];
    let s_bar = inputs.s.map_or(0.0, |m| m.row_mean()[(0, 0)]);
    let b_bar = inputs.b.map(|m| m.row_mean().transpose());
    let dev_bar = dev_at(&beta_bar, alpha_bar, sigma2_bar, s_bar, b_bar.as_ref())?;

    Ok(2.0 * mean_dev - dev_bar)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

// ---------------------------------------------------------------------------
// Clean-component prediction
// ---------------------------------------------------------------------------

/// Predictive draws and equal-tailed 95% intervals for new design rows,
/// conditional on the new observations coming from the thin (non-outlying)
/// component: y* = α + x*'β + σε*, ε* ~ N(0, 1).
#[derive(Clone, Debug)]
pub struct Predictive {
    /// retained × m matrix of predictive draws.
    pub draws: DMatrix<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn predict_clean(out: &ChainOutput, x_new: &DMatrix<f64>, seed: u64) -> Result<Predictive> {
    let rows = out.retained();
    let beta = out.block("beta")?;
    if x_new.ncols() != beta.ncols() {
        return Err(Error::domain(format!(
            "design has {} columns but the chain recorded {} coefficients",
            x_new.ncols(),
            beta.ncols()
        )));
    }
    let alpha = out.draws.get("alpha");
    let sigma2 = out.block("sigma2")?;
    let m = x_new.nrows();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut draws = DMatrix::zeros(rows, m);
    for r in 0..rows {
        let beta_r = beta.row(r).transpose();
        let alpha_r = alpha.map_or(0.0, |a| a[(r, 0)]);
        let sigma = sigma2[(r, 0)].sqrt();
        let eta = x_new * beta_r;
        for j in 0..m {
            let e: f64 = StandardNormal.sample(&mut rng);
            draws[(r, j)] = alpha_r + eta[j] + sigma * e;
        }
    }
    let mut mean = Vec::with_capacity(m);
    let mut lower = Vec::with_capacity(m);
    let mut upper = Vec::with_capacity(m);
    for j in 0..m {
        let col: Vec<f64> = draws.column(j).iter().copied().collect();
        let (mu, lo, hi) = mean_ci(&col);
        mean.push(mu);
        lower.push(lo);
        upper.push(hi);
    }
    Ok(Predictive {
        draws,
        mean,
        lower,
        upper,
    })
}

// ---------------------------------------------------------------------------
// Robustness sweep
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct SweepPoint {
    pub omega: f64,
    /// ‖E[β | contaminated] - E[β | clean]‖₂.
    pub distance: f64,
    /// Monte Carlo standard error of the distance under the hypothesis that
    /// the true distance is zero.
    pub mc_se: f64,
}

/// Displace the probe rows to base + slope·ω for each magnitude, refit, and
/// measure how far the posterior mean of β moves from the clean-data fit.
/// `fit` maps (dataset, stream index) to a chain; streams keep the fits
/// independent.
pub fn robustness_sweep<F>(
    data: &Dataset,
    probe: &OutlierProbe,
    magnitudes: &[f64],
    fit: F,
) -> Result<Vec<SweepPoint>>
where
    F: Fn(&Dataset, u64) -> Result<ChainOutput>,
{
    let clean = {
        let mut d = data.clone();
        d.y = probe.apply(&data.y, 0.0);
        fit(&d, 0)?
    };
    let clean_beta = clean.block("beta")?.clone();
    let clean_mean = clean_beta.row_mean().transpose();
    let p = clean_beta.ncols();
    let mut clean_var = vec![0.0f64; p];
    for k in 0..p {
        let col: Vec<f64> = clean_beta.column(k).iter().copied().collect();
        clean_var[k] = mc_variance_of_mean(&col)?;
    }

    let mut points = Vec::with_capacity(magnitudes.len());
    for (idx, &omega) in magnitudes.iter().enumerate() {
        let mut d = data.clone();
        d.y = probe.apply(&data.y, omega);
        let out = fit(&d, 1 + idx as u64)?;
        let beta = out.block("beta")?;
        let mean = beta.row_mean().transpose();
        let mut dist2 = 0.0f64;
        let mut var_sum = 0.0f64;
        for k in 0..p {
            let diff = mean[k] - clean_mean[k];
            dist2 += diff * diff;
            let col: Vec<f64> = beta.column(k).iter().copied().collect();
            var_sum += clean_var[k] + mc_variance_of_mean(&col)?;
        }
        points.push(SweepPoint {
            omega,
            distance: dist2.sqrt(),
            mc_se: var_sum.sqrt(),
        });
    }
    Ok(points)
}

// ---------------------------------------------------------------------------
// Tail-dichotomy probe
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct RatioRow {
    pub sigma: f64,
    pub ratio: f64,
    pub target: f64,
}

/// Evaluates [f((y - x'β)/σ)/σ] / f(y) at a large |y| for a single outlier
/// (x'β = 0) under the generalized heavy component with tail exponent δ.
/// The limit is σ^{2δ}: scale-free exactly when δ = 0.
pub fn delta_ratio_probe(
    gamma: f64,
    delta: f64,
    sigmas: &[f64],
    y_magnitude: f64,
) -> Result<Vec<RatioRow>> {
    let h = HParams::new(gamma, delta)?;
    let quad = QuadratureSpec::default();
    let f_y = crate::dist::f1_density(y_magnitude, &h, &quad)?;
    sigmas
        .iter()
        .map(|&sigma| {
            if !(sigma > 0.0) {
                return Err(Error::domain("sigma must be positive"));
            }
            let f_scaled = crate::dist::f1_density(y_magnitude / sigma, &h, &quad)?;
            Ok(RatioRow {
                sigma,
                ratio: f_scaled / sigma / f_y,
                target: sigma.powf(2.0 * delta),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use indexmap::IndexMap;

    fn chain_of(draws: Vec<(&str, DMatrix<f64>)>) -> ChainOutput {
        let mut map = IndexMap::new();
        for (k, v) in draws {
            map.insert(k.to_string(), v);
        }
        ChainOutput {
            draws: map,
            z_mean: None,
            n_iter: 0,
            burn_in: 0,
            thin: 1,
            seed: 0,
            stream: 0,
            model_tag: "test".into(),
            runtime_secs: 0.0,
        }
    }

    #[test]
    fn quantiles_interpolation_rule() {
        // sorted 1..1000: 95% equal-tailed interval [25.975, 975.025]
        let data: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_relative_eq!(quantile_type7(&data, 0.025), 25.975, epsilon = 1e-9);
        assert_relative_eq!(quantile_type7(&data, 0.975), 975.025, epsilon = 1e-9);
    }

    #[test]
    fn constant_draws_collapse_interval() {
        let m = chain_of(vec![("x", DMatrix::from_element(250, 1, 3.25))]);
        let s = summarize(&m).unwrap();
        assert_eq!(s.mean[0], 3.25);
        assert_eq!(s.lower[0], 3.25);
        assert_eq!(s.upper[0], 3.25);
        assert_eq!(s.if_factor[0], 1.0); // zero-variance convention
    }

    #[test]
    fn standard_normal_interval() {
        use rand::SeedableRng;
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let n = 400_000;
        let col = DMatrix::from_fn(n, 1, |_, _| StandardNormal.sample(&mut rng));
        let s = summarize(&chain_of(vec![("x", col)])).unwrap();
        assert!((s.lower[0] + 1.96).abs() < 0.02, "{}", s.lower[0]);
        assert!((s.upper[0] - 1.96).abs() < 0.02, "{}", s.upper[0]);
    }

    #[test]
    fn too_few_draws_is_an_error() {
        let m = chain_of(vec![("x", DMatrix::from_element(50, 1, 0.0))]);
        assert!(summarize(&m).is_err());
    }

    #[test]
    fn iid_trace_has_unit_if() {
        use rand::SeedableRng;
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let trace: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let iff = inefficiency_factor(&trace).unwrap();
        assert!((iff - 1.0).abs() < 0.1, "{iff}");
    }

    #[test]
    fn ar1_trace_matches_closed_form() {
        use rand::SeedableRng;
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let phi = 0.5f64;
        let innov_sd = (1.0 - phi * phi).sqrt();
        let mut x = 0.0f64;
        let trace: Vec<f64> = (0..100_000)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = phi * x + innov_sd * e;
                x
            })
            .collect();
        let iff = inefficiency_factor(&trace).unwrap();
        assert!((iff - 3.0).abs() < 0.3, "{iff}"); // (1+φ)/(1-φ) = 3
    }

    #[test]
    fn antithetic_trace_floors_at_zero() {
        let trace: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let iff = inefficiency_factor(&trace).unwrap();
        assert!(iff < 0.1, "{iff}");
    }

    #[test]
    fn short_trace_rejected() {
        assert!(inefficiency_factor(&[0.0; 100]).is_err());
    }

    // DIC on a normal model reduces to closed-form arithmetic over the
    // recorded draws; check against a direct computation.
    #[test]
    fn dic_normal_hand_computed() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, -1.0]);
        let y = DVector::from_vec(vec![0.5, 1.8, -0.9]);
        let data = Dataset::new(y.clone(), x.clone());
        let beta = DMatrix::from_row_slice(2, 1, &[0.9, 1.1]);
        let sigma2 = DMatrix::from_row_slice(2, 1, &[1.0, 0.8]);
        let out = chain_of(vec![("beta", beta.clone()), ("sigma2", sigma2.clone())]);
        let got = dic(&out, &data, &DicLikelihood::Normal).unwrap();

        let dev = |b: f64, s2: f64| -> f64 {
            let mut ll = 0.0;
            for i in 0..3 {
                let r = y[i] - x[(i, 0)] * b;
                ll += ln_normal_pdf(r / s2.sqrt(), 0.0, 1.0) - 0.5 * s2.ln();
            }
            -2.0 * ll
        };
        let mean_dev = 0.5 * (dev(0.9, 1.0) + dev(1.1, 0.8));
        let expect = 2.0 * mean_dev - dev(1.0, 0.9);
        assert_relative_eq!(got, expect, epsilon = 1e-6);
    }

    // With s = 0 the EH mixture deviance coincides with the normal one.
    #[test]
    fn dic_eh_s_zero_matches_normal() {
        let x = DMatrix::from_row_slice(4, 1, &[1.0, -0.5, 0.3, 2.0]);
        let y = DVector::from_vec(vec![0.4, -0.2, 0.5, 2.2]);
        let data = Dataset::new(y, x);
        let beta = DMatrix::from_element(3, 1, 1.0);
        let sigma2 = DMatrix::from_element(3, 1, 0.9);
        let s = DMatrix::from_element(3, 1, 0.0);
        let gamma = DMatrix::from_element(3, 1, 1.0);
        let eh = chain_of(vec![
            ("beta", beta.clone()),
            ("sigma2", sigma2.clone()),
            ("s", s),
            ("gamma", gamma),
        ]);
        let norm = chain_of(vec![("beta", beta), ("sigma2", sigma2)]);
        let d_eh = dic(&eh, &data, &DicLikelihood::Eh).unwrap();
        let d_n = dic(&norm, &data, &DicLikelihood::Normal).unwrap();
        assert_relative_eq!(d_eh, d_n, epsilon = 1e-8);
    }

    #[test]
    fn predictive_interval_collapses_with_tiny_sigma() {
        let beta = DMatrix::from_element(200, 1, 2.0);
        let sigma2 = DMatrix::from_element(200, 1, 1e-18);
        let out = chain_of(vec![("beta", beta), ("sigma2", sigma2)]);
        let x_new = DMatrix::from_row_slice(1, 1, &[1.5]);
        let p = predict_clean(&out, &x_new, 1).unwrap();
        assert!((p.mean[0] - 3.0).abs() < 1e-6);
        assert!((p.upper[0] - p.lower[0]).abs() < 1e-6);
    }

    // Calibration self-test: in a correctly specified conjugate toy model
    // the 95% interval covers at the nominal rate.
    #[test]
    fn conjugate_toy_coverage() {
        use rand::Rng as _;
        use rand::SeedableRng;
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let reps = 2000;
        let n_obs: f64 = 15.0;
        let prior_var: f64 = 4.0;
        let mut covered = 0usize;
        for _ in 0..reps {
            let theta = (prior_var.sqrt()) * {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            };
            // ȳ | θ ~ N(θ, 1/n)
            let zbar: f64 = StandardNormal.sample(&mut rng);
            let ybar = theta + zbar / n_obs.sqrt();
            // Posterior: N(m, v) with v = 1/(1/prior_var + n), m = v·n·ȳ
            let v = 1.0 / (1.0 / prior_var + n_obs);
            let m = v * n_obs * ybar;
            // 2000 posterior draws through the summary path.
            let draws = DMatrix::from_fn(2000, 1, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + v.sqrt() * z
            });
            let s = summarize(&chain_of(vec![("theta", draws)])).unwrap();
            if s.lower[0] <= theta && theta <= s.upper[0] {
                covered += 1;
            }
            let _ = rng.random::<f64>();
        }
        let cp = covered as f64 / reps as f64;
        assert!((cp - 0.95).abs() < 0.02, "coverage {cp}");
    }

    // At δ = 0 the probe is asymptotically scale-free; the log-scale
    // corrections shrink like (1+γ)·log σ² / log y², so the 5% band needs a
    // very large |y|.
    #[test]
    fn delta_probe_scale_free_at_zero() {
        let rows = delta_ratio_probe(0.2, 0.0, &[0.5, 2.0], 1e20).unwrap();
        assert!(
            (rows[0].ratio / rows[1].ratio - 1.0).abs() < 0.05,
            "{} vs {}",
            rows[0].ratio,
            rows[1].ratio
        );
    }
}
