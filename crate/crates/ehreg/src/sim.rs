//! Synthetic-data generators: the location-shift contamination design for
//! linear regression, its random-intercept variant, a spatial layout, and a
//! larger housing-style dataset for model-comparison runs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, RandomEffect};

/// Contamination scenario: errors follow (1-ω) N(0,1) + ω N(μ, 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub omega: f64,
    pub mu: f64,
}

impl Scenario {
    pub fn clean() -> Self {
        Scenario { omega: 0.0, mu: 0.0 }
    }

    /// Label in the (100ω, μ) convention, e.g. "(10, 20)" or "(0, --)".
    pub fn label(&self) -> String {
        if self.omega == 0.0 {
            "(0, --)".to_string()
        } else {
            format!("({:.0}, {:.0})", 100.0 * self.omega, self.mu)
        }
    }

    /// Parse "10:20" (100ω : μ); "0:-" or "0" denote no contamination.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let mut parts = text.splitn(2, ':');
        let head = parts.next().unwrap_or_default();
        let pct: f64 = head
            .parse()
            .map_err(|_| Error::domain(format!("bad scenario '{text}'")))?;
        let omega = pct / 100.0;
        if !(0.0..1.0).contains(&omega) {
            return Err(Error::domain(format!("contamination ratio out of range in '{text}'")));
        }
        let tail = parts.next().unwrap_or("-").trim();
        if omega == 0.0 {
            return Ok(Scenario::clean());
        }
        let mu: f64 = tail
            .parse()
            .map_err(|_| Error::domain(format!("bad outlier location in '{text}'")))?;
        Ok(Scenario { omega, mu })
    }
}

/// The standard regression design: covariate rows from a first-order
/// autoregression with lag correlation `ar_rho` and marginal standard
/// deviation `covariate_sd`; sparse truth with intercept.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegressionDesign {
    pub n: usize,
    pub p: usize,
    /// True coefficients, intercept first (length p + 1).
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub ar_rho: f64,
    pub covariate_sd: f64,
}

/// Sparse coefficient truth: intercept 0.5, slopes 0.3 at positions 1 and
/// 4, 2.0 at positions 7 and 10, zero elsewhere.
pub fn default_beta(p: usize) -> Vec<f64> {
    let mut beta = vec![0.0; p + 1];
    beta[0] = 0.5;
    for (idx, val) in [(1usize, 0.3), (4, 0.3), (7, 2.0), (10, 2.0)] {
        if idx <= p {
            beta[idx] = val;
        }
    }
    beta
}

impl RegressionDesign {
    pub fn standard(n: usize, p: usize) -> Self {
        RegressionDesign {
            n,
            p,
            beta: default_beta(p),
            sigma: 0.5,
            ar_rho: 0.2,
            covariate_sd: 0.45,
        }
    }
}

/// One covariate row by the stationary AR(1) recursion; exact marginal
/// covariance sd²·ρ^{|k-l|}.
pub fn covariate_row<R: Rng + ?Sized>(rng: &mut R, p: usize, rho: f64, sd: f64) -> Vec<f64> {
    let innov = sd * (1.0 - rho * rho).sqrt();
    let mut row = Vec::with_capacity(p);
    let mut prev = 0.0;
    for k in 0..p {
        let z: f64 = StandardNormal.sample(rng);
        prev = if k == 0 { sd * z } else { rho * prev + innov * z };
        row.push(prev);
    }
    row
}

/// Draw one error term from the location-shift contamination law and report
/// whether it came from the shifted component.
pub fn location_shift_error<R: Rng + ?Sized>(rng: &mut R, scenario: &Scenario) -> (f64, bool) {
    let z: f64 = StandardNormal.sample(rng);
    if scenario.omega > 0.0 && rng.random::<f64>() < scenario.omega {
        (scenario.mu + z, true)
    } else {
        (z, false)
    }
}

#[derive(Clone, Debug)]
pub struct SimulatedRegression {
    pub covariates: DMatrix<f64>,
    pub y: DVector<f64>,
    pub outlier: Vec<bool>,
    pub design: RegressionDesign,
    pub scenario: Scenario,
}

impl SimulatedRegression {
    /// Dataset with an explicit intercept column; β(Gaussian-prior models)
    /// aligns with `design.beta`.
    pub fn dataset_with_intercept(&self) -> Dataset {
        let n = self.covariates.nrows();
        let p = self.covariates.ncols();
        let mut x = DMatrix::zeros(n, p + 1);
        x.column_mut(0).fill(1.0);
        x.view_mut((0, 1), (n, p)).copy_from(&self.covariates);
        Dataset::new(self.y.clone(), x)
    }

    /// Dataset of bare covariate columns; the intercept is left to the
    /// horseshoe path's separate α.
    pub fn dataset_slopes_only(&self) -> Dataset {
        Dataset::new(self.y.clone(), self.covariates.clone())
    }
}

pub fn simulate_regression<R: Rng + ?Sized>(
    design: &RegressionDesign,
    scenario: &Scenario,
    rng: &mut R,
) -> SimulatedRegression {
    let (n, p) = (design.n, design.p);
    let mut covs = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let mut outlier = vec![false; n];
    for i in 0..n {
        let row = covariate_row(rng, p, design.ar_rho, design.covariate_sd);
        let mut eta = design.beta[0];
        for k in 0..p {
            covs[(i, k)] = row[k];
            eta += design.beta[k + 1] * row[k];
        }
        let (eps, is_out) = location_shift_error(rng, scenario);
        y[i] = eta + design.sigma * eps;
        outlier[i] = is_out;
    }
    SimulatedRegression {
        covariates: covs,
        y,
        outlier,
        design: design.clone(),
        scenario: *scenario,
    }
}

/// Clean held-out rows from the same covariate law: the responses carry
/// standard-normal errors regardless of the training contamination.
pub fn simulate_holdout<R: Rng + ?Sized>(
    design: &RegressionDesign,
    m: usize,
    rng: &mut R,
) -> (DMatrix<f64>, DVector<f64>) {
    let p = design.p;
    let mut covs = DMatrix::zeros(m, p);
    let mut y = DVector::zeros(m);
    for j in 0..m {
        let row = covariate_row(rng, p, design.ar_rho, design.covariate_sd);
        let mut eta = design.beta[0];
        for k in 0..p {
            covs[(j, k)] = row[k];
            eta += design.beta[k + 1] * row[k];
        }
        let z: f64 = StandardNormal.sample(rng);
        y[j] = eta + design.sigma * z;
    }
    (covs, y)
}

/// Longitudinal design: m groups × t_per repeated measurements with a
/// Gaussian random intercept per group.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InterceptDesign {
    pub m: usize,
    pub t_per: usize,
    pub p: usize,
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub tau_v: f64,
    pub ar_rho: f64,
    pub covariate_sd: f64,
}

impl InterceptDesign {
    pub fn standard(m: usize, t_per: usize, p: usize) -> Self {
        InterceptDesign {
            m,
            t_per,
            p,
            beta: default_beta(p),
            sigma: 1.0,
            tau_v: 0.5,
            ar_rho: 0.2,
            covariate_sd: 0.45,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimulatedIntercept {
    pub covariates: DMatrix<f64>,
    pub y: DVector<f64>,
    pub groups: Vec<usize>,
    pub v_true: DVector<f64>,
    pub outlier: Vec<bool>,
    pub design: InterceptDesign,
    pub scenario: Scenario,
}

impl SimulatedIntercept {
    pub fn dataset_with_intercept(&self) -> Dataset {
        let n = self.covariates.nrows();
        let p = self.covariates.ncols();
        let mut x = DMatrix::zeros(n, p + 1);
        x.column_mut(0).fill(1.0);
        x.view_mut((0, 1), (n, p)).copy_from(&self.covariates);
        let mut d = Dataset::new(self.y.clone(), x);
        d.effect = RandomEffect::Intercept {
            groups: self.groups.clone(),
            m: self.design.m,
        };
        d
    }
}

pub fn simulate_random_intercept<R: Rng + ?Sized>(
    design: &InterceptDesign,
    scenario: &Scenario,
    rng: &mut R,
) -> SimulatedIntercept {
    let n = design.m * design.t_per;
    let p = design.p;
    let v_true = DVector::from_fn(design.m, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        design.tau_v * z
    });
    let mut covs = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let mut groups = vec![0usize; n];
    let mut outlier = vec![false; n];
    let mut i = 0usize;
    for j in 0..design.m {
        for _ in 0..design.t_per {
            let row = covariate_row(rng, p, design.ar_rho, design.covariate_sd);
            let mut eta = design.beta[0] + v_true[j];
            for k in 0..p {
                covs[(i, k)] = row[k];
                eta += design.beta[k + 1] * row[k];
            }
            let (eps, is_out) = location_shift_error(rng, scenario);
            y[i] = eta + design.sigma * eps;
            groups[i] = j;
            outlier[i] = is_out;
            i += 1;
        }
    }
    SimulatedIntercept {
        covariates: covs,
        y,
        groups,
        v_true,
        outlier,
        design: design.clone(),
        scenario: *scenario,
    }
}

/// A spatially-correlated dataset: sites on the unit square, a smooth
/// Gaussian-process intercept field, and location-shift contamination.
#[derive(Clone, Debug)]
pub struct SimulatedSpatial {
    pub covariates: DMatrix<f64>,
    pub y: DVector<f64>,
    pub coords: Vec<[f64; 2]>,
    pub field_true: DVector<f64>,
    pub outlier: Vec<bool>,
}

impl SimulatedSpatial {
    pub fn dataset_with_intercept(&self) -> Dataset {
        let n = self.covariates.nrows();
        let p = self.covariates.ncols();
        let mut x = DMatrix::zeros(n, p + 1);
        x.column_mut(0).fill(1.0);
        x.view_mut((0, 1), (n, p)).copy_from(&self.covariates);
        let mut d = Dataset::new(self.y.clone(), x);
        d.effect = RandomEffect::Spatial {
            coords: self.coords.clone(),
        };
        d
    }
}

pub fn simulate_spatial<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    kappa: f64,
    bandwidth: f64,
    sigma: f64,
    scenario: &Scenario,
    rng: &mut R,
) -> Result<SimulatedSpatial> {
    let coords: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let mut cov = DMatrix::from_fn(n, n, |i, j| {
        let dx = coords[i][0] - coords[j][0];
        let dy = coords[i][1] - coords[j][1];
        kappa * kappa * (-(dx * dx + dy * dy) / (2.0 * bandwidth * bandwidth)).exp()
    });
    for i in 0..n {
        cov[(i, i)] += 1e-8;
    }
    let l = crate::dist::cholesky_lower(&cov)?;
    let z = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    let field = l * z;

    let beta = default_beta(p);
    let mut covs = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let mut outlier = vec![false; n];
    for i in 0..n {
        let row = covariate_row(rng, p, 0.2, 0.5);
        let mut eta = beta[0] + field[i];
        for k in 0..p {
            covs[(i, k)] = row[k];
            eta += beta[k + 1] * row[k];
        }
        let (eps, is_out) = location_shift_error(rng, scenario);
        y[i] = eta + sigma * eps;
        outlier[i] = is_out;
    }
    Ok(SimulatedSpatial {
        covariates: covs,
        y,
        coords,
        field_true: field,
        outlier,
    })
}

/// A housing-style benchmark: moderately many correlated covariates, sparse
/// strong signals, and a visible block of gross outliers. Suited to
/// horseshoe fits and model-comparison runs.
pub fn simulate_housing_like<R: Rng + ?Sized>(rng: &mut R) -> SimulatedRegression {
    let p = 29;
    let mut beta = vec![0.0; p + 1];
    beta[0] = 1.0;
    for (idx, val) in [
        (1usize, 1.2),
        (3, -0.8),
        (6, 0.6),
        (11, 2.0),
        (15, -1.5),
        (22, 0.9),
    ] {
        beta[idx] = val;
    }
    let design = RegressionDesign {
        n: 506,
        p,
        beta,
        sigma: 1.0,
        ar_rho: 0.4,
        covariate_sd: 1.0,
    };
    let scenario = Scenario {
        omega: 0.08,
        mu: 12.0,
    };
    simulate_regression(&design, &scenario, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn scenario_labels_and_parsing() {
        assert_eq!(Scenario::clean().label(), "(0, --)");
        assert_eq!(Scenario { omega: 0.1, mu: 20.0 }.label(), "(10, 20)");
        assert_eq!(Scenario::parse("0:-").unwrap(), Scenario::clean());
        assert_eq!(Scenario::parse("0").unwrap(), Scenario::clean());
        assert_eq!(
            Scenario::parse("5:10").unwrap(),
            Scenario { omega: 0.05, mu: 10.0 }
        );
        assert!(Scenario::parse("abc").is_err());
        assert!(Scenario::parse("120:5").is_err());
    }

    #[test]
    fn clean_scenario_has_no_outliers() {
        let design = RegressionDesign::standard(300, 20);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let sim = simulate_regression(&design, &Scenario::clean(), &mut rng);
        assert!(sim.outlier.iter().all(|&o| !o));
    }

    #[test]
    fn contaminated_count_in_binomial_range() {
        let design = RegressionDesign::standard(300, 20);
        let scenario = Scenario { omega: 0.1, mu: 10.0 };
        for seed in 0..20 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let sim = simulate_regression(&design, &scenario, &mut rng);
            let count = sim.outlier.iter().filter(|&&o| o).count();
            assert!((15..=45).contains(&count), "seed {seed}: {count} outliers");
        }
    }

    #[test]
    fn same_seed_reproduces_exactly() {
        let design = RegressionDesign::standard(50, 5);
        let scenario = Scenario { omega: 0.05, mu: 5.0 };
        let a = simulate_regression(&design, &scenario, &mut ChaCha12Rng::seed_from_u64(9));
        let b = simulate_regression(&design, &scenario, &mut ChaCha12Rng::seed_from_u64(9));
        assert_eq!(a.y, b.y);
        assert_eq!(a.covariates, b.covariates);
        assert_eq!(a.outlier, b.outlier);
    }

    #[test]
    fn covariate_moments_match_design() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let (rho, sd, p) = (0.2, 0.5, 10);
        let n = 200_000;
        let mut var_acc = vec![0.0f64; p];
        let mut lag_acc = 0.0f64;
        for _ in 0..n {
            let row = covariate_row(&mut rng, p, rho, sd);
            for k in 0..p {
                var_acc[k] += row[k] * row[k];
            }
            lag_acc += row[3] * row[4];
        }
        for k in 0..p {
            let v = var_acc[k] / n as f64;
            assert!((v - sd * sd).abs() < 0.01, "col {k}: var {v}");
        }
        let cov34 = lag_acc / n as f64;
        assert!((cov34 - rho * sd * sd).abs() < 0.01, "lag cov {cov34}");
    }

    #[test]
    fn intercept_design_shapes() {
        let design = InterceptDesign::standard(7, 4, 3);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let sim = simulate_random_intercept(&design, &Scenario::clean(), &mut rng);
        assert_eq!(sim.y.len(), 28);
        assert_eq!(sim.groups.len(), 28);
        assert_eq!(sim.v_true.len(), 7);
        assert_eq!(sim.groups.iter().max(), Some(&6));
        let d = sim.dataset_with_intercept();
        assert_eq!(d.p(), 4);
        assert_eq!(d.effect_dim(), 7);
    }

    #[test]
    fn default_beta_layout() {
        let b = default_beta(20);
        assert_eq!(b.len(), 21);
        assert_eq!(b[0], 0.5);
        assert_eq!(b[1], 0.3);
        assert_eq!(b[4], 0.3);
        assert_eq!(b[7], 2.0);
        assert_eq!(b[10], 2.0);
        assert_eq!(b.iter().filter(|&&x| x != 0.0).count(), 5);
    }
}
