//! Data model, prior configuration, and chain-state containers shared by
//! every sampler.

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A regression dataset. `x` is exactly the matrix the coefficient vector
/// multiplies: include a column of ones when the model carries the
/// intercept inside β (Gaussian prior); leave it out under the horseshoe
/// prior, which models the intercept separately.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub effect: RandomEffect,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub enum RandomEffect {
    #[default]
    None,
    /// Grouped (longitudinal) random intercepts; `groups[i]` is the group of
    /// observation i, in 0..m.
    Intercept { groups: Vec<usize>, m: usize },
    /// A Gaussian-process field over planar coordinates, one site per row.
    Spatial { coords: Vec<[f64; 2]> },
}

impl Dataset {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>) -> Self {
        Dataset {
            y,
            x,
            effect: RandomEffect::None,
        }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Number of random-effect coefficients (0, groups, or one per site).
    pub fn effect_dim(&self) -> usize {
        match &self.effect {
            RandomEffect::None => 0,
            RandomEffect::Intercept { m, .. } => *m,
            RandomEffect::Spatial { coords } => coords.len(),
        }
    }
}

/// Prior on the regression coefficients.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaPrior {
    /// N(0, variance · I); the dimension is resolved against the design.
    Isotropic { variance: f64 },
    /// Explicit N(mean, cov).
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    /// Horseshoe on the slopes with a free intercept ~ N(0, intercept_var).
    Horseshoe { intercept_var: f64 },
}

/// Prior on the H-distribution shape γ.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaPrior {
    Fixed { value: f64 },
    Gamma { shape: f64, rate: f64 },
}

/// Prior on the mixing weight s.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SPrior {
    Beta { a: f64, b: f64 },
    /// Pin s; s = 0 collapses the error law onto the thin component.
    Fixed { value: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PriorConfig {
    pub beta: BetaPrior,
    /// Inverse-gamma hyperparameters for σ² (gamma on σ^{-2}).
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub s: SPrior,
    pub gamma: GammaPrior,
    /// Inverse-gamma hyperparameters for the random-intercept variance.
    pub a_v: f64,
    pub b_v: f64,
    /// Inverse-gamma hyperparameters for the GP scale κ².
    pub a_kappa: f64,
    pub b_kappa: f64,
    /// Random-walk step for the GP bandwidth, as a fraction of its upper
    /// bound.
    pub mh_step_frac: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            beta: BetaPrior::Isotropic { variance: 1000.0 },
            a_sigma: 1.0,
            b_sigma: 1.0,
            s: SPrior::Beta { a: 1.0, b: 1.0 },
            gamma: GammaPrior::Fixed { value: 1.0 },
            a_v: 1.0,
            b_v: 1.0,
            a_kappa: 1.0,
            b_kappa: 1.0,
            mh_step_frac: 0.1,
        }
    }
}

impl PriorConfig {
    pub fn horseshoe() -> Self {
        PriorConfig {
            beta: BetaPrior::Horseshoe {
                intercept_var: 1000.0,
            },
            ..PriorConfig::default()
        }
    }

    /// Default adaptive-γ configuration: an informative prior that keeps γ
    /// away from large values.
    pub fn adaptive_gamma(mut self) -> Self {
        self.gamma = GammaPrior::Gamma {
            shape: 100.0,
            rate: 100.0,
        };
        self
    }
}

/// Gaussian prior on β resolved against a concrete design dimension.
#[derive(Clone, Debug)]
pub(crate) struct ResolvedGaussianPrior {
    pub prec: DMatrix<f64>,
    pub prec_mean: DVector<f64>,
}

pub(crate) fn resolve_beta_prior(
    prior: &BetaPrior,
    p: usize,
) -> Result<Option<ResolvedGaussianPrior>> {
    match prior {
        BetaPrior::Isotropic { variance } => {
            if !(*variance > 0.0) {
                return Err(Error::domain("beta prior variance must be positive"));
            }
            Ok(Some(ResolvedGaussianPrior {
                prec: DMatrix::identity(p, p) / *variance,
                prec_mean: DVector::zeros(p),
            }))
        }
        BetaPrior::Gaussian { mean, cov } => {
            if mean.len() != p || cov.len() != p || cov.iter().any(|r| r.len() != p) {
                return Err(Error::Validation {
                    violations: vec![format!(
                        "beta prior dimension mismatch: design has p = {p}"
                    )],
                });
            }
            let cov = DMatrix::from_fn(p, p, |i, j| cov[i][j]);
            let mean = DVector::from_vec(mean.clone());
            // SPD check happens here so a bad covariance fails loudly.
            let prec = crate::dist::spd_inverse(&cov)?;
            let prec_mean = &prec * &mean;
            Ok(Some(ResolvedGaussianPrior { prec, prec_mean }))
        }
        BetaPrior::Horseshoe { intercept_var } => {
            if !(*intercept_var > 0.0) {
                return Err(Error::domain("intercept prior variance must be positive"));
            }
            Ok(None)
        }
    }
}

/// One full parameter-and-latent configuration visited by a Gibbs sweep.
/// Fields not used by the active model stay at their initialization values
/// and are never read.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub beta: DVector<f64>,
    pub alpha: f64,
    pub sigma2: f64,
    pub s: f64,
    pub gamma: f64,
    /// Student-t degrees of freedom (adaptive-t model only).
    pub nu: f64,
    pub z: Vec<u8>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    // Horseshoe locals.
    pub xi: Vec<f64>,
    pub lambda: Vec<f64>,
    pub tau2: f64,
    pub hs_nu: f64,
    // Random effects: group intercepts or the spatial field.
    pub b: DVector<f64>,
    pub tau_v2: f64,
    pub kappa2: f64,
    pub h: f64,
}

impl ChainState {
    pub fn residual_variance_factor(&self, i: usize) -> f64 {
        if self.z[i] == 1 {
            self.u[i]
        } else {
            1.0
        }
    }
}

/// MCMC run settings. `iters` counts total sweeps including burn-in;
/// retained draws = (iters - burn_in) / thin.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct McmcConfig {
    pub iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Sub-stream selector so independent chains can share one seed.
    pub stream: u64,
    /// Record the per-observation latent scale traces (memory-heavy).
    pub record_latents: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iters: 4000,
            burn_in: 1000,
            thin: 1,
            seed: 1,
            stream: 0,
            record_latents: false,
        }
    }
}

impl McmcConfig {
    pub fn retained(&self) -> Result<usize> {
        if self.thin == 0 {
            return Err(Error::domain("thin must be at least 1"));
        }
        if self.burn_in >= self.iters {
            return Err(Error::domain(format!(
                "nothing retained: iters = {} with burn_in = {}",
                self.iters, self.burn_in
            )));
        }
        Ok((self.iters - self.burn_in) / self.thin)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }
}

/// Retained posterior draws, keyed by parameter block; each matrix has one
/// row per retained sweep.
#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub draws: IndexMap<String, DMatrix<f64>>,
    pub z_mean: Option<DVector<f64>>,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub stream: u64,
    pub model_tag: String,
    pub runtime_secs: f64,
}

impl ChainOutput {
    pub fn retained(&self) -> usize {
        self.draws
            .values()
            .next()
            .map(|m| m.nrows())
            .unwrap_or(0)
    }

    /// Flattened column layout of the draw matrix, stable across runs.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (key, mat) in &self.draws {
            if mat.ncols() == 1 {
                names.push(key.clone());
            } else {
                for j in 0..mat.ncols() {
                    names.push(format!("{key}_{j}"));
                }
            }
        }
        names
    }

    pub fn block(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.draws
            .get(name)
            .ok_or_else(|| Error::domain(format!("chain output has no block '{name}'")))
    }

    /// Posterior mean of each column in a block.
    pub fn block_mean(&self, name: &str) -> Result<DVector<f64>> {
        let m = self.block(name)?;
        Ok(m.row_mean().transpose())
    }
}

/// Declares which rows of a clean dataset get displaced to `base + slope·ω`
/// in the robustness sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutlierProbe {
    pub indices: Vec<usize>,
    pub base: Vec<f64>,
    pub slope: Vec<f64>,
}

impl OutlierProbe {
    /// Response vector at magnitude ω: probe rows become base + slope·ω.
    pub fn apply(&self, y: &DVector<f64>, omega: f64) -> DVector<f64> {
        let mut out = y.clone();
        for (k, &i) in self.indices.iter().enumerate() {
            out[i] = self.base[k] + self.slope[k] * omega;
        }
        out
    }
}

/// Validated model handle: the priors resolved against the data plus any
/// non-fatal warnings (for example unverifiable robustness assumptions).
#[derive(Debug)]
pub struct Validated {
    pub warnings: Vec<String>,
}

/// Cross-check a prior configuration against a dataset. Hard violations
/// (dimension mismatches, non-SPD covariances, nonpositive hyperparameters)
/// fail; unverifiable theorem assumptions only warn.
pub fn validate(
    prior: &PriorConfig,
    data: &Dataset,
    probe: Option<&OutlierProbe>,
) -> Result<Validated> {
    let mut violations = Vec::new();
    let mut warnings = Vec::new();
    let n = data.n();
    let p = data.p();

    if n == 0 {
        violations.push("dataset has no rows".to_string());
    }
    if data.x.nrows() != n {
        violations.push(format!(
            "design has {} rows but y has {n}",
            data.x.nrows()
        ));
    }
    if data.y.iter().any(|v| !v.is_finite()) {
        violations.push("response contains non-finite values".to_string());
    }
    if data.x.iter().any(|v| !v.is_finite()) {
        violations.push("design contains non-finite values".to_string());
    }

    // Full column rank via pivoted QR.
    if n >= p && p > 0 && violations.is_empty() {
        let qr = data.x.clone().col_piv_qr();
        let r = qr.r();
        let tol = 1e-10 * r[(0, 0)].abs().max(1.0);
        let rank = (0..p).take_while(|&k| r[(k, k)].abs() > tol).count();
        if rank < p {
            violations.push(format!("design is rank deficient: rank {rank} < p = {p}"));
        }
    } else if n < p {
        warnings.push(format!("fewer rows than columns (n = {n}, p = {p})"));
    }

    for (name, v) in [
        ("a_sigma", prior.a_sigma),
        ("b_sigma", prior.b_sigma),
        ("a_v", prior.a_v),
        ("b_v", prior.b_v),
        ("a_kappa", prior.a_kappa),
        ("b_kappa", prior.b_kappa),
        ("mh_step_frac", prior.mh_step_frac),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            violations.push(format!("hyperparameter {name} must be positive, got {v}"));
        }
    }
    match prior.s {
        SPrior::Beta { a, b } => {
            if !(a > 0.0 && b > 0.0) {
                violations.push("beta hyperparameters for s must be positive".to_string());
            }
        }
        SPrior::Fixed { value } => {
            if !(0.0..=1.0).contains(&value) {
                violations.push(format!("fixed s must lie in [0, 1], got {value}"));
            }
        }
    }
    match prior.gamma {
        GammaPrior::Fixed { value } => {
            if !(value > 0.0) {
                violations.push(format!("gamma must be positive, got {value}"));
            }
        }
        GammaPrior::Gamma { shape, rate } => {
            if !(shape > 0.0 && rate > 0.0) {
                violations.push("gamma prior hyperparameters must be positive".to_string());
            }
        }
    }

    // Resolve (and SPD-check) the coefficient prior.
    if violations.is_empty() {
        match resolve_beta_prior(&prior.beta, p) {
            Ok(_) => {}
            Err(Error::NotSpd { order }) => violations.push(format!(
                "beta prior covariance is not positive definite (leading minor {order})"
            )),
            Err(e) => violations.push(e.to_string()),
        }
    }

    match &data.effect {
        RandomEffect::None => {}
        RandomEffect::Intercept { groups, m } => {
            if groups.len() != n {
                violations.push("group labels must cover every observation".to_string());
            }
            if *m == 0 || groups.iter().any(|g| g >= m) {
                violations.push("group labels out of range".to_string());
            }
        }
        RandomEffect::Spatial { coords } => {
            if coords.len() != n {
                violations.push("spatial coordinates must cover every observation".to_string());
            }
            for i in 0..coords.len() {
                for j in (i + 1)..coords.len() {
                    if coords[i] == coords[j] {
                        violations
                            .push(format!("duplicate spatial coordinates at rows {i} and {j}"));
                    }
                }
            }
        }
    }

    if let Some(probe) = probe {
        if probe.base.len() != probe.indices.len() || probe.slope.len() != probe.indices.len() {
            violations.push("probe base/slope must match its index set".to_string());
        }
        if probe.indices.iter().any(|&i| i >= n) {
            violations.push("probe indices out of range".to_string());
        }
        if probe.slope.iter().any(|&b| b == 0.0 || !b.is_finite()) {
            violations.push("probe slopes must be nonzero".to_string());
        }
        let n_out = probe.indices.len();
        let n_in = n.saturating_sub(n_out);
        if n_in < n_out + p {
            warnings.push(format!(
                "robustness assumption violated: non-outliers ({n_in}) < outliers ({n_out}) + predictors ({p})"
            ));
        }
    } else {
        warnings.push(
            "outlier partition not declared; robustness assumptions cannot be verified".to_string(),
        );
    }

    if violations.is_empty() {
        Ok(Validated { warnings })
    } else {
        Err(Error::Validation { violations })
    }
}

/// Deterministic overdispersion-free start: β at least squares, σ² at the
/// residual variance, all latent scales at one, s at one half.
pub fn init_state(data: &Dataset, prior: &PriorConfig) -> Result<ChainState> {
    let n = data.n();
    let p = data.p();
    let horseshoe = matches!(prior.beta, BetaPrior::Horseshoe { .. });

    // Least squares on [1 | X] under the horseshoe split, plain X otherwise.
    let (alpha0, beta0) = if horseshoe {
        let xx = {
            let mut m = DMatrix::zeros(n, p + 1);
            m.column_mut(0).fill(1.0);
            m.view_mut((0, 1), (n, p)).copy_from(&data.x);
            m
        };
        let sol = lstsq(&xx, &data.y);
        let alpha = sol[0];
        let beta = DVector::from_fn(p, |k, _| sol[k + 1]);
        (alpha, beta)
    } else {
        (0.0, lstsq(&data.x, &data.y))
    };

    let mut resid = data.y.clone() - &data.x * &beta0;
    resid.add_scalar_mut(-alpha0);
    let dof = n.saturating_sub(p + usize::from(horseshoe)).max(1);
    let sigma2 = (resid.norm_squared() / dof as f64).max(1e-12);

    let gamma0 = match prior.gamma {
        GammaPrior::Fixed { value } => value,
        GammaPrior::Gamma { shape, rate } => shape / rate,
    };
    let s0 = match prior.s {
        SPrior::Beta { .. } => 0.5,
        SPrior::Fixed { value } => value,
    };

    Ok(ChainState {
        beta: beta0,
        alpha: alpha0,
        sigma2,
        s: s0,
        gamma: gamma0,
        nu: 1.0,
        z: vec![0u8; n],
        u: vec![1.0; n],
        v: vec![1.0; n],
        w: vec![1.0; n],
        xi: vec![1.0; p],
        lambda: vec![1.0; p],
        tau2: 1.0,
        hs_nu: 1.0,
        b: DVector::zeros(data.effect_dim()),
        tau_v2: 1.0,
        kappa2: 1.0,
        h: 1.0,
    })
}

fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let p = x.ncols();
    if x.nrows() < p {
        return DVector::zeros(p);
    }
    let qr = x.clone().qr();
    let qty = qr.q().tr_mul(y);
    qr.r()
        .solve_upper_triangular(&qty)
        .unwrap_or_else(|| DVector::zeros(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(n: usize, p: usize) -> Dataset {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(314);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(n, |i, _| (i % 7) as f64 * 0.3 - 1.0);
        Dataset::new(y, x)
    }

    #[test]
    fn valid_config_passes() {
        let data = toy_dataset(300, 20);
        let prior = PriorConfig::default();
        let v = validate(&prior, &data, None).unwrap();
        assert!(v.warnings.iter().any(|w| w.contains("not declared")));
    }

    #[test]
    fn non_spd_beta_cov_rejected() {
        let data = toy_dataset(10, 2);
        let prior = PriorConfig {
            beta: BetaPrior::Gaussian {
                mean: vec![0.0, 0.0],
                cov: vec![vec![1.0, 2.0], vec![2.0, 1.0]], // eigenvalues 3, -1
            },
            ..PriorConfig::default()
        };
        match validate(&prior, &data, None) {
            Err(Error::Validation { violations }) => {
                assert!(violations.iter().any(|v| v.contains("positive definite")))
            }
            other => panic!("expected validation failure, got {other:?}"),
        }
    }

    #[test]
    fn probe_assumption_warns_not_fails() {
        // 10 non-outliers < 8 outliers + 5 predictors.
        let data = toy_dataset(18, 5);
        let prior = PriorConfig::default();
        let probe = OutlierProbe {
            indices: (0..8).collect(),
            base: vec![0.0; 8],
            slope: vec![1.0; 8],
        };
        let v = validate(&prior, &data, Some(&probe)).unwrap();
        assert!(v.warnings.iter().any(|w| w.contains("assumption violated")));
    }

    #[test]
    fn rank_deficient_design_rejected() {
        let mut data = toy_dataset(20, 3);
        let col0 = data.x.column(0).into_owned();
        data.x.set_column(2, &col0); // duplicate column
        assert!(matches!(
            validate(&PriorConfig::default(), &data, None),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn nothing_retained_is_an_error() {
        let cfg = McmcConfig {
            iters: 1000,
            burn_in: 1000,
            ..McmcConfig::default()
        };
        assert!(cfg.retained().is_err());
    }

    #[test]
    fn prior_round_trips_through_json() {
        let prior = PriorConfig {
            beta: BetaPrior::Gaussian {
                mean: vec![0.1, -0.7],
                cov: vec![vec![2.0, 0.3], vec![0.3, 1.0]],
            },
            a_sigma: 1.7,
            b_sigma: 0.9,
            s: SPrior::Beta { a: 2.0, b: 5.0 },
            gamma: GammaPrior::Gamma {
                shape: 100.0,
                rate: 100.0,
            },
            ..PriorConfig::default()
        };
        let text = serde_json::to_string(&prior).unwrap();
        let back: PriorConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(prior, back);
    }
}
