//! Spatial Gaussian-process random effect: joint field draw, conjugate
//! scale update, and random-walk Metropolis for the bandwidth.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::steps::draw_inv_gamma;
use crate::dist::{cholesky_lower, draw_gaussian_precision};
use crate::error::Result;

const JITTER: f64 = 1e-8;

/// Precomputed pairwise squared distances plus a Cholesky cache for the
/// current bandwidth; the factor is rebuilt only when a Metropolis proposal
/// is accepted.
#[derive(Clone, Debug)]
pub struct SpatialWork {
    dist2: DMatrix<f64>,
    /// Upper bound for the bandwidth: median pairwise distance.
    pub h_max: f64,
    pub h: f64,
    chol: DMatrix<f64>,
}

impl SpatialWork {
    pub fn new(coords: &[[f64; 2]], initial_frac: f64) -> Result<Self> {
        let n = coords.len();
        let mut dist2 = DMatrix::zeros(n, n);
        let mut dists = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = coords[i][0] - coords[j][0];
                let dy = coords[i][1] - coords[j][1];
                let d2 = dx * dx + dy * dy;
                dist2[(i, j)] = d2;
                dist2[(j, i)] = d2;
                dists.push(d2.sqrt());
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let h_max = if dists.is_empty() {
            1.0
        } else if dists.len() % 2 == 1 {
            dists[dists.len() / 2]
        } else {
            0.5 * (dists[dists.len() / 2 - 1] + dists[dists.len() / 2])
        };
        let h = (initial_frac * h_max).clamp(1e-6 * h_max, h_max);
        let chol = cholesky_of_correlation(&dist2, h)?;
        Ok(SpatialWork {
            dist2,
            h_max,
            h,
            chol,
        })
    }

    pub fn n(&self) -> usize {
        self.dist2.nrows()
    }

    /// log N(eta; 0, κ² C(h)) for the cached factor.
    fn ln_gp_density(&self, chol: &DMatrix<f64>, eta: &DVector<f64>, kappa2: f64) -> f64 {
        let n = self.n() as f64;
        let q = quad_form(chol, eta);
        let logdet: f64 = chol.diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        -0.5 * (n * (2.0 * std::f64::consts::PI * kappa2).ln() + logdet + q / kappa2)
    }
}

fn cholesky_of_correlation(dist2: &DMatrix<f64>, h: f64) -> Result<DMatrix<f64>> {
    let n = dist2.nrows();
    let mut c = DMatrix::from_fn(n, n, |i, j| (-dist2[(i, j)] / (2.0 * h * h)).exp());
    for i in 0..n {
        c[(i, i)] += JITTER;
    }
    cholesky_lower(&c)
}

/// η' C^{-1} η via the Cholesky factor: ‖L^{-1}η‖².
fn quad_form(chol: &DMatrix<f64>, eta: &DVector<f64>) -> f64 {
    let w = chol
        .solve_lower_triangular(eta)
        .expect("factor has positive diagonal");
    w.norm_squared()
}

/// Joint draw of the spatial field from
/// N(A^{-1}b, A^{-1}), A = κ^{-2}C(h)^{-1} + σ^{-2}D, b = σ^{-2}D(y - Xβ).
/// The weight matrix D multiplies the residual on the right-hand side.
pub fn update_spatial_field<R: Rng + ?Sized>(
    rng: &mut R,
    work: &SpatialWork,
    resid_wo_b: &DVector<f64>,
    weights: &[f64],
    sigma2: f64,
    kappa2: f64,
) -> Result<DVector<f64>> {
    let n = work.n();
    // C^{-1} from the cached factor.
    let mut cinv = DMatrix::<f64>::identity(n, n);
    work.chol.solve_lower_triangular_mut(&mut cinv);
    work.chol
        .transpose()
        .solve_upper_triangular_mut(&mut cinv);
    let mut prec = cinv / kappa2;
    let mut rhs = DVector::zeros(n);
    for i in 0..n {
        prec[(i, i)] += weights[i] / sigma2;
        rhs[i] = weights[i] / sigma2 * resid_wo_b[i];
    }
    let l = cholesky_lower(&prec)?;
    let mut mean = rhs;
    l.solve_lower_triangular_mut(&mut mean);
    l.transpose().solve_upper_triangular_mut(&mut mean);
    Ok(draw_gaussian_precision(rng, &mean, &l))
}

/// Conjugate κ² update followed by a reflected random-walk Metropolis step
/// on the bandwidth h with flat prior on (0, h_max). Returns the new κ².
pub fn update_gp_hyper<R: Rng + ?Sized>(
    rng: &mut R,
    work: &mut SpatialWork,
    eta: &DVector<f64>,
    a_kappa: f64,
    b_kappa: f64,
    step_frac: f64,
    accepts: &mut usize,
) -> Result<f64> {
    let n = work.n() as f64;
    let q = quad_form(&work.chol, eta);
    let kappa2 = draw_inv_gamma(rng, a_kappa + 0.5 * n, b_kappa + 0.5 * q)?;

    let step = step_frac * work.h_max;
    let z: f64 = StandardNormal.sample(rng);
    let proposal = reflect_into(work.h + step * z, work.h_max);
    let chol_prop = cholesky_of_correlation(&work.dist2, proposal)?;
    let lp_prop = work.ln_gp_density(&chol_prop, eta, kappa2);
    let lp_cur = work.ln_gp_density(&work.chol, eta, kappa2);
    if (rng.random::<f64>()).ln() < lp_prop - lp_cur {
        work.h = proposal;
        work.chol = chol_prop;
        *accepts += 1;
    }
    Ok(kappa2)
}

/// Reflect a proposal into (0, h_max).
pub fn reflect_into(mut h: f64, h_max: f64) -> f64 {
    for _ in 0..64 {
        if h < 0.0 {
            h = -h;
        } else if h > h_max {
            h = 2.0 * h_max - h;
        } else {
            return h.max(1e-12 * h_max);
        }
    }
    0.5 * h_max
}
