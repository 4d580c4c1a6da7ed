//! Gibbs samplers for every error model.
//!
//! All chains share one engine that composes the conditional updates in
//! `steps` according to the active error model, coefficient prior, and
//! random-effect structure. The EH sweep is partially collapsed: s and γ
//! are drawn with the (v, w) augmentation marginalized out, so the sweep
//! order is fixed — z, then (s, γ), then the (v, w) refresh, then u — and
//! must not be rearranged.

pub mod effects;
pub mod gir;
pub mod steps;

use std::time::Instant;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::model::{
    init_state, resolve_beta_prior, validate, BetaPrior, ChainOutput, ChainState, Dataset,
    GammaPrior, McmcConfig, PriorConfig, RandomEffect, ResolvedGaussianPrior, SPrior,
};
use effects::SpatialWork;

/// Discrete degrees-of-freedom grid for the adaptive-t baseline.
pub const DEFAULT_NU_GRID: [f64; 11] = [1.0, 2.0, 3.0, 4.0, 5.0, 8.0, 10.0, 15.0, 20.0, 30.0, 50.0];

#[derive(Clone, Debug, PartialEq)]
pub enum ErrorModel {
    /// Two-component mixture with H-distributed latent variances.
    Eh,
    Normal,
    T { nu: f64 },
    AdaptiveT { grid: Vec<f64> },
    /// Two-component mixture of a standard normal and a t(ν) scale mixture.
    Mt { nu: f64 },
}

impl ErrorModel {
    pub fn tag(&self) -> String {
        match self {
            ErrorModel::Eh => "eh".into(),
            ErrorModel::Normal => "normal".into(),
            ErrorModel::T { nu } => format!("t{nu}"),
            ErrorModel::AdaptiveT { .. } => "at".into(),
            ErrorModel::Mt { .. } => "mt".into(),
        }
    }

    fn is_mixture(&self) -> bool {
        matches!(self, ErrorModel::Eh | ErrorModel::Mt { .. })
    }
}

/// Dedicated generator streams. Keeping the conjugate core on its own
/// stream makes chains with identical (weights, responses) produce
/// identical β/σ² draws across error models, which pins down the
/// s = 0 degeneration exactly.
pub struct ChainRngs {
    pub core: ChaCha12Rng,
    pub latent: ChaCha12Rng,
    pub mix: ChaCha12Rng,
}

impl ChainRngs {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut core = ChaCha12Rng::seed_from_u64(seed);
        let mut latent = ChaCha12Rng::seed_from_u64(seed);
        let mut mix = ChaCha12Rng::seed_from_u64(seed);
        core.set_stream(4 * stream);
        latent.set_stream(4 * stream + 1);
        mix.set_stream(4 * stream + 2);
        ChainRngs { core, latent, mix }
    }
}

/// A fully wired sampler: data, priors, error model, and caches.
pub struct Engine {
    pub data: Dataset,
    pub prior: PriorConfig,
    pub model: ErrorModel,
    pub warnings: Vec<String>,
    gaussian_prior: Option<ResolvedGaussianPrior>,
    spatial: Option<SpatialWork>,
    pub mh_accepts: usize,
    mh_proposals: usize,
}

impl Engine {
    pub fn new(data: Dataset, prior: PriorConfig, model: ErrorModel) -> Result<Self> {
        let checked = validate(&prior, &data, None)?;
        let gaussian_prior = resolve_beta_prior(&prior.beta, data.p())?;
        let spatial = match &data.effect {
            RandomEffect::Spatial { coords } => {
                Some(SpatialWork::new(coords, 0.5)?)
            }
            _ => None,
        };
        Ok(Engine {
            data,
            prior,
            model,
            warnings: checked.warnings,
            gaussian_prior,
            spatial,
            mh_accepts: 0,
            mh_proposals: 0,
        })
    }

    pub fn is_horseshoe(&self) -> bool {
        matches!(self.prior.beta, BetaPrior::Horseshoe { .. })
    }

    /// Replace the response vector (used by the exactness test, which
    /// regenerates data between transitions).
    pub fn set_response(&mut self, y: DVector<f64>) {
        self.data.y = y;
    }

    pub fn init_state(&self) -> Result<ChainState> {
        let mut st = init_state(&self.data, &self.prior)?;
        if let ErrorModel::AdaptiveT { grid } = &self.model {
            st.nu = grid[grid.len() / 2];
        } else if let ErrorModel::T { nu } | ErrorModel::Mt { nu } = &self.model {
            st.nu = *nu;
        }
        if let Some(work) = &self.spatial {
            st.h = work.h;
        }
        Ok(st)
    }

    /// Likelihood weights d_i (inverse variance factors) for the current
    /// state under the active error model.
    pub fn weights(&self, st: &ChainState) -> Vec<f64> {
        match self.model {
            ErrorModel::Normal => vec![1.0; self.data.n()],
            ErrorModel::T { .. } | ErrorModel::AdaptiveT { .. } => {
                st.u.iter().map(|&u| 1.0 / u).collect()
            }
            ErrorModel::Eh | ErrorModel::Mt { .. } => steps::mixture_weights(&st.z, &st.u),
        }
    }

    /// Per-observation variance factors u_i^{z_i} (or u_i for pure scale
    /// mixtures).
    pub fn var_factors(&self, st: &ChainState) -> Vec<f64> {
        match self.model {
            ErrorModel::Normal => vec![1.0; self.data.n()],
            ErrorModel::T { .. } | ErrorModel::AdaptiveT { .. } => st.u.clone(),
            ErrorModel::Eh | ErrorModel::Mt { .. } => st
                .z
                .iter()
                .zip(&st.u)
                .map(|(&z, &u)| if z == 1 { u } else { 1.0 })
                .collect(),
        }
    }

    /// Contribution of the random effect to the linear predictor.
    pub fn effect_values(&self, st: &ChainState) -> DVector<f64> {
        match &self.data.effect {
            RandomEffect::None => DVector::zeros(self.data.n()),
            RandomEffect::Intercept { groups, .. } => {
                DVector::from_fn(self.data.n(), |i, _| st.b[groups[i]])
            }
            RandomEffect::Spatial { .. } => st.b.clone(),
        }
    }

    fn linear_predictor(&self, st: &ChainState) -> DVector<f64> {
        let mut eta = &self.data.x * &st.beta;
        if self.is_horseshoe() {
            eta.add_scalar_mut(st.alpha);
        }
        if self.data.effect != RandomEffect::None {
            eta += self.effect_values(st);
        }
        eta
    }

    /// One full Gibbs sweep.
    pub fn sweep(&mut self, st: &mut ChainState, rngs: &mut ChainRngs) -> Result<()> {
        let n = self.data.n();
        let weights = self.weights(st);

        // Intercept (horseshoe path).
        if let BetaPrior::Horseshoe { intercept_var } = self.prior.beta {
            let mut resid = &self.data.y - &self.data.x * &st.beta;
            if self.data.effect != RandomEffect::None {
                resid -= self.effect_values(st);
            }
            st.alpha =
                steps::update_alpha(&mut rngs.core, &resid, &weights, st.sigma2, intercept_var);
        }

        // Coefficients.
        {
            let mut y_eff = self.data.y.clone();
            if self.is_horseshoe() {
                y_eff.add_scalar_mut(-st.alpha);
            }
            if self.data.effect != RandomEffect::None {
                y_eff -= self.effect_values(st);
            }
            st.beta = if self.is_horseshoe() {
                steps::update_beta_hs(
                    &mut rngs.core,
                    &self.data.x,
                    &y_eff,
                    &weights,
                    st.sigma2,
                    st.tau2,
                    &st.xi,
                )?
            } else {
                let prior = self
                    .gaussian_prior
                    .as_ref()
                    .expect("gaussian prior resolved at construction");
                steps::update_beta(
                    &mut rngs.core,
                    &self.data.x,
                    &y_eff,
                    &weights,
                    st.sigma2,
                    &prior.prec,
                    &prior.prec_mean,
                )?
            };
        }

        // Random effects.
        match &self.data.effect {
            RandomEffect::None => {}
            RandomEffect::Intercept { groups, m } => {
                let mut resid = &self.data.y - &self.data.x * &st.beta;
                if self.is_horseshoe() {
                    resid.add_scalar_mut(-st.alpha);
                }
                st.b = steps::update_random_intercepts(
                    &mut rngs.core,
                    &resid,
                    &weights,
                    st.sigma2,
                    groups,
                    *m,
                    st.tau_v2,
                );
                st.tau_v2 =
                    steps::update_tau_v2(&mut rngs.core, &st.b, self.prior.a_v, self.prior.b_v)?;
            }
            RandomEffect::Spatial { .. } => {
                let mut resid = &self.data.y - &self.data.x * &st.beta;
                if self.is_horseshoe() {
                    resid.add_scalar_mut(-st.alpha);
                }
                let work = self.spatial.as_mut().expect("spatial work initialized");
                st.b = effects::update_spatial_field(
                    &mut rngs.core,
                    work,
                    &resid,
                    &weights,
                    st.sigma2,
                    st.kappa2,
                )?;
                st.kappa2 = effects::update_gp_hyper(
                    &mut rngs.core,
                    work,
                    &st.b,
                    self.prior.a_kappa,
                    self.prior.b_kappa,
                    self.prior.mh_step_frac,
                    &mut self.mh_accepts,
                )?;
                self.mh_proposals += 1;
                st.h = work.h;
            }
        }

        // Observation scale.
        let resid = &self.data.y - self.linear_predictor(st);
        {
            let var_factors = self.var_factors(st);
            let (extra_shape, extra_rate) = if self.is_horseshoe() {
                let p = self.data.p() as f64;
                let quad: f64 = (0..self.data.p())
                    .map(|k| st.beta[k] * st.beta[k] / (st.tau2 * st.xi[k]))
                    .sum();
                (0.5 * p, 0.5 * quad)
            } else {
                (0.0, 0.0)
            };
            st.sigma2 = steps::update_sigma2(
                &mut rngs.core,
                &resid,
                &var_factors,
                self.prior.a_sigma,
                self.prior.b_sigma,
                extra_shape,
                extra_rate,
            )?;
        }

        // Shrinkage locals.
        if self.is_horseshoe() {
            steps::update_horseshoe_locals(
                &mut rngs.mix,
                &st.beta,
                st.sigma2,
                &mut st.xi,
                &mut st.lambda,
                &mut st.tau2,
                &mut st.hs_nu,
            )?;
        }

        // Latent mixture structure.
        match &self.model {
            ErrorModel::Normal => {}
            ErrorModel::T { .. } => {
                st.u = steps::update_u_t(&mut rngs.latent, &resid, st.sigma2, st.nu)?;
            }
            ErrorModel::AdaptiveT { grid } => {
                st.u = steps::update_u_t(&mut rngs.latent, &resid, st.sigma2, st.nu)?;
                st.nu = steps::update_t_nu(&mut rngs.mix, &st.u, grid)?;
            }
            ErrorModel::Mt { .. } => {
                st.z = steps::update_z(&mut rngs.latent, &resid, st.sigma2, &st.u, st.s);
                if let SPrior::Beta { a, b } = self.prior.s {
                    st.s = steps::update_s(&mut rngs.mix, &st.z, a, b)?;
                }
                st.u = steps::update_u_mt(&mut rngs.latent, &resid, st.sigma2, &st.z, st.nu)?;
            }
            ErrorModel::Eh => {
                st.z = steps::update_z(&mut rngs.latent, &resid, st.sigma2, &st.u, st.s);
                if let SPrior::Beta { a, b } = self.prior.s {
                    st.s = steps::update_s(&mut rngs.mix, &st.z, a, b)?;
                }
                if let GammaPrior::Gamma { shape, rate } = self.prior.gamma {
                    st.gamma = steps::update_gamma(&mut rngs.mix, &st.u, shape, rate)?;
                }
                let (v, w) = steps::update_vw(&mut rngs.latent, &st.u, st.gamma)?;
                st.v = v;
                st.w = w;
                st.u = steps::update_u_eh(&mut rngs.latent, &resid, st.sigma2, &st.z, &st.v)?;
            }
        }

        debug_assert!(st.sigma2 > 0.0);
        debug_assert!(st.u.iter().all(|&u| u > 0.0));
        debug_assert!(st.z.iter().all(|&z| z <= 1));
        debug_assert!(n == st.u.len());
        Ok(())
    }

    /// Draw a response vector from the model at the current state; used by
    /// the joint-distribution exactness test.
    pub fn simulate_response(&self, st: &ChainState, rng: &mut ChaCha12Rng) -> DVector<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let eta = self.linear_predictor(st);
        let var_factors = self.var_factors(st);
        DVector::from_fn(self.data.n(), |i, _| {
            let z: f64 = StandardNormal.sample(rng);
            eta[i] + (st.sigma2 * var_factors[i]).sqrt() * z
        })
    }

    /// Metropolis acceptance rate for the GP bandwidth, if a spatial effect
    /// is active.
    pub fn mh_acceptance_rate(&self) -> Option<f64> {
        (self.mh_proposals > 0).then(|| self.mh_accepts as f64 / self.mh_proposals as f64)
    }

    /// Run the chain and collect retained draws.
    pub fn run(&mut self, mcmc: &McmcConfig) -> Result<ChainOutput> {
        let keep = mcmc.retained()?;
        let start = Instant::now();
        let n = self.data.n();
        let p = self.data.p();
        let mut st = self.init_state()?;
        let mut rngs = ChainRngs::new(mcmc.seed, mcmc.stream);

        let mut blocks: IndexMap<String, DMatrix<f64>> = IndexMap::new();
        let mut layout: Vec<(String, usize)> = Vec::new();
        if self.is_horseshoe() {
            layout.push(("alpha".into(), 1));
        }
        layout.push(("beta".into(), p));
        layout.push(("sigma2".into(), 1));
        if self.model.is_mixture() {
            layout.push(("s".into(), 1));
        }
        if matches!(self.model, ErrorModel::Eh) {
            layout.push(("gamma".into(), 1));
        }
        if matches!(self.model, ErrorModel::AdaptiveT { .. }) {
            layout.push(("nu".into(), 1));
        }
        match &self.data.effect {
            RandomEffect::None => {}
            RandomEffect::Intercept { m, .. } => {
                layout.push(("b".into(), *m));
                layout.push(("tau_v2".into(), 1));
            }
            RandomEffect::Spatial { coords } => {
                layout.push(("b".into(), coords.len()));
                layout.push(("kappa2".into(), 1));
                layout.push(("h".into(), 1));
            }
        }
        if mcmc.record_latents && !matches!(self.model, ErrorModel::Normal) {
            layout.push(("u".into(), n));
            if matches!(self.model, ErrorModel::Eh) {
                layout.push(("v".into(), n));
                layout.push(("w".into(), n));
            }
            if self.model.is_mixture() {
                layout.push(("z".into(), n));
            }
        }
        for (name, dim) in &layout {
            blocks.insert(name.clone(), DMatrix::zeros(keep, *dim));
        }

        let mut z_sum = vec![0.0f64; n];
        let mut row = 0usize;
        for iter in 0..mcmc.iters {
            self.sweep(&mut st, &mut rngs)
                .map_err(|e| e.at_iteration(iter))?;
            if iter >= mcmc.burn_in && (iter - mcmc.burn_in) % mcmc.thin == 0 && row < keep {
                for (name, _dim) in &layout {
                    let m = blocks.get_mut(name).expect("block allocated");
                    match name.as_str() {
                        "alpha" => m[(row, 0)] = st.alpha,
                        "beta" => {
                            for j in 0..p {
                                m[(row, j)] = st.beta[j];
                            }
                        }
                        "sigma2" => m[(row, 0)] = st.sigma2,
                        "s" => m[(row, 0)] = st.s,
                        "gamma" => m[(row, 0)] = st.gamma,
                        "nu" => m[(row, 0)] = st.nu,
                        "b" => {
                            for j in 0..st.b.len() {
                                m[(row, j)] = st.b[j];
                            }
                        }
                        "tau_v2" => m[(row, 0)] = st.tau_v2,
                        "kappa2" => m[(row, 0)] = st.kappa2,
                        "h" => m[(row, 0)] = st.h,
                        "u" => {
                            for j in 0..n {
                                m[(row, j)] = st.u[j];
                            }
                        }
                        "v" => {
                            for j in 0..n {
                                m[(row, j)] = st.v[j];
                            }
                        }
                        "w" => {
                            for j in 0..n {
                                m[(row, j)] = st.w[j];
                            }
                        }
                        "z" => {
                            for j in 0..n {
                                m[(row, j)] = st.z[j] as f64;
                            }
                        }
                        other => unreachable!("unknown block {other}"),
                    }
                }
                if self.model.is_mixture() {
                    for i in 0..n {
                        z_sum[i] += st.z[i] as f64;
                    }
                }
                row += 1;
            }
        }

        let z_mean = self.model.is_mixture().then(|| {
            DVector::from_fn(n, |i, _| z_sum[i] / keep.max(1) as f64)
        });

        let mut tag = self.model.tag();
        if matches!(self.model, ErrorModel::Eh)
            && matches!(self.prior.gamma, GammaPrior::Gamma { .. })
        {
            tag = "aeh".into();
        }
        if self.is_horseshoe() {
            tag.push_str("+hs");
        }
        match &self.data.effect {
            RandomEffect::None => {}
            RandomEffect::Intercept { .. } => tag.push_str("+ri"),
            RandomEffect::Spatial { .. } => tag.push_str("+sp"),
        }

        Ok(ChainOutput {
            draws: blocks,
            z_mean,
            n_iter: mcmc.iters,
            burn_in: mcmc.burn_in,
            thin: mcmc.thin,
            seed: mcmc.seed,
            stream: mcmc.stream,
            model_tag: tag,
            runtime_secs: start.elapsed().as_secs_f64(),
        })
    }
}

/// Fit the EH-error regression (fixed or adaptive γ per the prior).
pub fn run_chain(data: &Dataset, prior: &PriorConfig, mcmc: &McmcConfig) -> Result<ChainOutput> {
    Engine::new(data.clone(), prior.clone(), ErrorModel::Eh)?.run(mcmc)
}

/// Conjugate normal-error baseline.
pub fn run_chain_normal(
    data: &Dataset,
    prior: &PriorConfig,
    mcmc: &McmcConfig,
) -> Result<ChainOutput> {
    Engine::new(data.clone(), prior.clone(), ErrorModel::Normal)?.run(mcmc)
}

/// Student-t errors with fixed degrees of freedom.
pub fn run_chain_t(
    data: &Dataset,
    prior: &PriorConfig,
    nu: f64,
    mcmc: &McmcConfig,
) -> Result<ChainOutput> {
    if !(nu > 0.0) {
        return Err(Error::domain("degrees of freedom must be positive"));
    }
    Engine::new(data.clone(), prior.clone(), ErrorModel::T { nu })?.run(mcmc)
}

/// Student-t errors with a discrete-uniform prior over `grid`.
pub fn run_chain_adaptive_t(
    data: &Dataset,
    prior: &PriorConfig,
    grid: &[f64],
    mcmc: &McmcConfig,
) -> Result<ChainOutput> {
    if grid.is_empty() {
        return Err(Error::domain("degrees-of-freedom grid must be nonempty"));
    }
    Engine::new(
        data.clone(),
        prior.clone(),
        ErrorModel::AdaptiveT {
            grid: grid.to_vec(),
        },
    )?
    .run(mcmc)
}

/// Normal + t(ν) two-component mixture baseline (ν = 1/2 in the studies).
pub fn run_chain_mt(
    data: &Dataset,
    prior: &PriorConfig,
    nu: f64,
    mcmc: &McmcConfig,
) -> Result<ChainOutput> {
    if !(nu > 0.0) {
        return Err(Error::domain("degrees of freedom must be positive"));
    }
    Engine::new(data.clone(), prior.clone(), ErrorModel::Mt { nu })?.run(mcmc)
}
