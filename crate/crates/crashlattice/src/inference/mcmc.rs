//! Adaptive Metropolis-within-Gibbs over the model hierarchy.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma as GammaDist, StandardNormal};
use rayon::prelude::*;

use crate::gmrf::{IcarStructure, LdlFactor};
use crate::model::{exposure_mean, Dataset, LatentState, ModelSpec};
use crate::priors::PriorSpec;

use super::map::{fit_map_with_outcome, guarded_joint, outcome_constant};
use super::{
    ChainSamples, InferenceError, OutcomeModel, PosteriorSamples, SamplerConfig, StateLayout,
};

/// Run the sampler against the Poisson hierarchy. Chains are initialised
/// at the MAP state and run concurrently on independent RNG streams.
pub fn run_mcmc(
    data: &Dataset,
    spec: &ModelSpec,
    icar: &IcarStructure,
    config: &SamplerConfig,
) -> Result<PosteriorSamples, InferenceError> {
    run_with_outcome(data, spec, icar, config, OutcomeModel::Poisson)
}

/// Same sampler with the identity-link Gaussian surrogate outcome;
/// validation surface for closed-form Gaussian oracles.
pub fn run_mcmc_surrogate(
    data: &Dataset,
    spec: &ModelSpec,
    icar: &IcarStructure,
    config: &SamplerConfig,
    precision: f64,
) -> Result<PosteriorSamples, InferenceError> {
    run_with_outcome(
        data,
        spec,
        icar,
        config,
        OutcomeModel::GaussianSurrogate { precision },
    )
}

fn run_with_outcome(
    data: &Dataset,
    spec: &ModelSpec,
    icar: &IcarStructure,
    config: &SamplerConfig,
    outcome: OutcomeModel,
) -> Result<PosteriorSamples, InferenceError> {
    config.validate()?;
    spec.validate()?;
    let init = fit_map_with_outcome(data, spec, icar, outcome)?;
    let layout = StateLayout::for_model(spec, data);
    let scalar_names = spec.scalar_names(data);
    debug_assert_eq!(scalar_names.len(), layout.n_scalars());
    let chains: Result<Vec<ChainSamples>, InferenceError> = (0..config.n_chains)
        .into_par_iter()
        .map(|c| {
            ChainRun::new(c, data, spec, icar, outcome, config, init.clone())?.run(&layout)
        })
        .collect();
    Ok(PosteriorSamples {
        scalar_names,
        layout,
        variant: spec.variant,
        n_sites: data.len(),
        chains: chains?,
        config: *config,
    })
}

/// One conjugate Gamma draw for a precision: prior Gamma(a, b) combined
/// with a Gaussian quadratic form of `dof` effective dimensions gives
/// Gamma(a + dof/2, b + quad/2). `None` when the prior is not Gamma.
pub fn conjugate_precision_draw<R: Rng + ?Sized>(
    prior: &PriorSpec,
    dof: f64,
    quad: f64,
    rng: &mut R,
) -> Option<f64> {
    let (a, b) = prior.gamma_parameters()?;
    let shape = a + 0.5 * dof;
    let rate = b + 0.5 * quad;
    let dist = GammaDist::new(shape, 1.0 / rate).expect("valid gamma parameters");
    Some(rng.sample(dist))
}

/// Robbins-Monro scale adaptation; active during burn-in only.
struct Adapt {
    log_scale: f64,
    target: f64,
    accepted: u64,
    proposed: u64,
}

impl Adapt {
    fn new(scale: f64, target: f64) -> Self {
        Self {
            log_scale: scale.ln(),
            target,
            accepted: 0,
            proposed: 0,
        }
    }

    fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    fn adapt(&mut self, accept_prob: f64, sweep: usize) {
        let gamma = ((sweep + 1) as f64).powf(-0.6).min(0.25);
        self.log_scale = (self.log_scale + gamma * (accept_prob - self.target)).clamp(-12.0, 6.0);
    }

    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Draw from N(0, H^{-1}) given the Cholesky H = C C^T.
fn preconditioned_noise(chol: &Cholesky<f64, Dyn>, xi: &[f64]) -> Vec<f64> {
    let v = DVector::from_column_slice(xi);
    chol.l()
        .transpose()
        .solve_upper_triangular(&v)
        .expect("triangular solve")
        .iter()
        .copied()
        .collect()
}

struct ChainRun<'a> {
    chain: usize,
    data: &'a Dataset,
    spec: &'a ModelSpec,
    icar: &'a IcarStructure,
    outcome: OutcomeModel,
    config: &'a SamplerConfig,
    n: usize,
    me: bool,
    spatial: bool,
    include_theta: bool,
    components: Vec<Vec<usize>>,
    comp_entries: Vec<Vec<(usize, usize, f64)>>,
    state: LatentState,
    eta: Vec<f64>,
    mu: Vec<f64>,
    rng: ChaCha8Rng,
    beta_chol: Option<Cholesky<f64, Dyn>>,
    alpha_chol: Option<Cholesky<f64, Dyn>>,
    theta_factor: Option<LdlFactor>,
    phi_factor: Option<LdlFactor>,
    a_beta: Adapt,
    a_alpha: Adapt,
    a_x: Vec<Adapt>,
    a_theta: Vec<Adapt>,
    a_phi: Vec<Adapt>,
    a_tau_theta: Adapt,
    a_tau_eps: Adapt,
    a_tau_u: Adapt,
    a_tau_phi: Adapt,
    a_scale_theta: Adapt,
    a_scale_phi: Adapt,
}

impl<'a> ChainRun<'a> {
    fn new(
        chain: usize,
        data: &'a Dataset,
        spec: &'a ModelSpec,
        icar: &'a IcarStructure,
        outcome: OutcomeModel,
        config: &'a SamplerConfig,
        mut state: LatentState,
    ) -> Result<Self, InferenceError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        rng.set_stream(chain as u64);
        let n = data.len();
        let me = spec.variant.has_measurement_error();
        let spatial = spec.variant.has_spatial_error();
        let include_theta = spec.include_spatial_theta;
        if include_theta {
            icar.project_sum_to_zero(&mut state.theta);
        }
        if spatial {
            icar.project_sum_to_zero(&mut state.phi);
        }
        let components = if include_theta || spatial {
            icar.components()
        } else {
            Vec::new()
        };
        // K entries grouped by component; K never couples components.
        let mut comp_entries: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); components.len()];
        if !components.is_empty() {
            let labels = icar.component_labels();
            for (i, j, v) in icar.structure_matrix().entries() {
                comp_entries[labels[i]].push((i, j, v));
            }
        }
        let n_comp = components.len();
        let mut run = Self {
            chain,
            data,
            spec,
            icar,
            outcome,
            config,
            n,
            me,
            spatial,
            include_theta,
            components,
            comp_entries,
            state,
            eta: vec![0.0; n],
            mu: vec![0.0; n],
            rng,
            beta_chol: None,
            alpha_chol: None,
            theta_factor: None,
            phi_factor: None,
            a_beta: Adapt::new(1.0, config.target_accept_block),
            a_alpha: Adapt::new(1.0, config.target_accept_block),
            a_x: Vec::new(),
            a_theta: Vec::new(),
            a_phi: Vec::new(),
            a_tau_theta: Adapt::new(1.0, config.target_accept_scalar),
            a_tau_eps: Adapt::new(1.0, config.target_accept_scalar),
            a_tau_u: Adapt::new(1.0, config.target_accept_scalar),
            a_tau_phi: Adapt::new(1.0, config.target_accept_scalar),
            a_scale_theta: Adapt::new(0.5, config.target_accept_scalar),
            a_scale_phi: Adapt::new(0.5, config.target_accept_scalar),
        };
        run.recompute_caches();
        if run.eta.iter().any(|v| !v.is_finite()) {
            return Err(InferenceError::Divergence {
                chain,
                iteration: 0,
                block: "initialisation",
            });
        }
        // Starting proposal scales near the 2.38/sqrt(d) optimum; the
        // Robbins-Monro schedule refines them from there.
        run.a_beta = Adapt::new(
            2.38 / (run.state.beta.len().max(1) as f64).sqrt(),
            config.target_accept_block,
        );
        run.a_alpha = Adapt::new(
            2.38 / (run.state.alpha.len().max(1) as f64).sqrt(),
            config.target_accept_block,
        );
        let block_scales: Vec<f64> = (0..n_comp)
            .map(|c| 2.38 / (run.components[c].len() as f64).sqrt())
            .collect();
        if include_theta {
            run.a_theta = block_scales
                .iter()
                .map(|&s| Adapt::new(s, config.target_accept_block))
                .collect();
        }
        if spatial {
            run.a_phi = block_scales
                .iter()
                .map(|&s| Adapt::new(s, config.target_accept_block))
                .collect();
        }
        if me {
            run.a_x = (0..n)
                .map(|i| {
                    let h = run.outcome.curvature(run.data.e[i], run.eta[i])
                        * run.state.beta[1]
                        * run.state.beta[1]
                        + run.state.tau_eps
                        + run.state.tau_u;
                    Adapt::new(2.4 / h.sqrt(), config.target_accept_scalar)
                })
                .collect();
        }
        run.refresh_preconditioners()?;
        Ok(run)
    }

    fn recompute_caches(&mut self) {
        let covariate: &[f64] = if self.me { &self.state.x } else { &self.data.w };
        for i in 0..self.n {
            let mut v = self.state.beta[0] + self.state.beta[1] * covariate[i];
            for (j, col) in self.data.z.columns().iter().enumerate() {
                v += self.state.beta[2 + j] * col.values[i];
            }
            if self.include_theta {
                v += self.state.theta[i];
            }
            self.eta[i] = v;
        }
        for i in 0..self.n {
            self.mu[i] = if self.me {
                exposure_mean(&self.state, self.data, i)
            } else {
                0.0
            };
        }
    }

    fn refresh_preconditioners(&mut self) -> Result<(), InferenceError> {
        let nb = self.state.beta.len();
        self.beta_chol = Some(self.dense_curvature_cholesky(true, nb));
        if self.me && !self.state.alpha.is_empty() {
            let na = self.state.alpha.len();
            self.alpha_chol = Some(self.dense_curvature_cholesky(false, na));
        }
        if self.include_theta {
            let curv: Vec<f64> = (0..self.n)
                .map(|i| self.outcome.curvature(self.data.e[i], self.eta[i]).max(1e-8))
                .collect();
            let q = self
                .icar
                .structure_matrix()
                .scaled_plus_diagonal(self.state.tau_theta, &curv)?;
            self.theta_factor = Some(LdlFactor::new(&q, 0.0)?);
        }
        if self.spatial {
            let diag = vec![self.state.tau_u.max(1e-8); self.n];
            let q = self
                .icar
                .structure_matrix()
                .scaled_plus_diagonal(self.state.tau_phi, &diag)?;
            self.phi_factor = Some(LdlFactor::new(&q, 0.0)?);
        }
        Ok(())
    }

    /// Cholesky of the coefficient-block curvature (likelihood plus
    /// prior), used to precondition the block random walk.
    fn dense_curvature_cholesky(&self, is_beta: bool, dim: usize) -> Cholesky<f64, Dyn> {
        let covariate: &[f64] = if self.me { &self.state.x } else { &self.data.w };
        let mut h = DMatrix::zeros(dim, dim);
        let mut row = vec![0.0; dim];
        for i in 0..self.n {
            let c = if is_beta {
                row[0] = 1.0;
                row[1] = covariate[i];
                for (j, col) in self.data.z.columns().iter().enumerate() {
                    row[2 + j] = col.values[i];
                }
                self.outcome.curvature(self.data.e[i], self.eta[i])
            } else {
                row[0] = 1.0;
                for (j, col) in self.data.ztilde.columns().iter().enumerate() {
                    row[1 + j] = col.values[i];
                }
                self.state.tau_eps
            };
            for a in 0..dim {
                for b in a..dim {
                    h[(a, b)] += c * row[a] * row[b];
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
            let prior = if is_beta {
                self.spec.priors.beta_prior(a)
            } else {
                self.spec.priors.fixed_effects
            };
            if let PriorSpec::Normal { variance, .. } = prior {
                h[(a, a)] += 1.0 / variance;
            }
        }
        let mut jitter = 0.0;
        loop {
            let mut try_h = h.clone();
            for a in 0..dim {
                try_h[(a, a)] += jitter;
            }
            if let Some(ch) = Cholesky::new(try_h) {
                return ch;
            }
            jitter = if jitter == 0.0 { 1e-8 } else { jitter * 10.0 };
        }
    }

    #[inline]
    fn loglik_term(&self, i: usize, eta: f64) -> f64 {
        self.outcome
            .loglik_term(self.data.y[i] as f64, self.data.e[i], eta)
    }

    fn update_beta(&mut self, sweep: usize, in_adapt: bool) {
        let dim = self.state.beta.len();
        let xi: Vec<f64> = (0..dim)
            .map(|_| self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        let scale = self.a_beta.scale();
        let noise = preconditioned_noise(self.beta_chol.as_ref().expect("preconditioner"), &xi);
        let delta: Vec<f64> = noise.iter().map(|v| v * scale).collect();

        let mut log_ratio = 0.0;
        let mut new_eta = Vec::with_capacity(self.n);
        {
            let covariate: &[f64] = if self.me { &self.state.x } else { &self.data.w };
            for i in 0..self.n {
                let mut d = delta[0] + delta[1] * covariate[i];
                for (j, col) in self.data.z.columns().iter().enumerate() {
                    d += delta[2 + j] * col.values[i];
                }
                let eta_new = self.eta[i] + d;
                log_ratio += self.loglik_term(i, eta_new) - self.loglik_term(i, self.eta[i]);
                new_eta.push(eta_new);
            }
        }
        for j in 0..dim {
            let prior = self.spec.priors.beta_prior(j);
            log_ratio += prior.logdensity(self.state.beta[j] + delta[j])
                - prior.logdensity(self.state.beta[j]);
        }
        let accept_prob = log_ratio.exp().min(1.0);
        let accept = self.rng.gen::<f64>() < accept_prob;
        if accept {
            for j in 0..dim {
                self.state.beta[j] += delta[j];
            }
            self.eta = new_eta;
        }
        if in_adapt {
            self.a_beta.adapt(accept_prob, sweep);
        } else {
            self.a_beta.record(accept);
        }
    }

    fn update_alpha(&mut self, sweep: usize, in_adapt: bool) {
        let dim = self.state.alpha.len();
        if dim == 0 {
            return;
        }
        let xi: Vec<f64> = (0..dim)
            .map(|_| self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        let scale = self.a_alpha.scale();
        let noise = preconditioned_noise(self.alpha_chol.as_ref().expect("preconditioner"), &xi);
        let delta: Vec<f64> = noise.iter().map(|v| v * scale).collect();

        let tau = self.state.tau_eps;
        let mut log_ratio = 0.0;
        let mut new_mu = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let mut dmu = delta[0];
            for (j, col) in self.data.ztilde.columns().iter().enumerate() {
                dmu += delta[1 + j] * col.values[i];
            }
            let mu_new = self.mu[i] + dmu;
            let r_old = self.state.x[i] - self.mu[i];
            let r_new = self.state.x[i] - mu_new;
            log_ratio += -0.5 * tau * (r_new * r_new - r_old * r_old);
            new_mu.push(mu_new);
        }
        for j in 0..dim {
            let prior = self.spec.priors.fixed_effects;
            log_ratio += prior.logdensity(self.state.alpha[j] + delta[j])
                - prior.logdensity(self.state.alpha[j]);
        }
        let accept_prob = log_ratio.exp().min(1.0);
        let accept = self.rng.gen::<f64>() < accept_prob;
        if accept {
            for j in 0..dim {
                self.state.alpha[j] += delta[j];
            }
            self.mu = new_mu;
        }
        if in_adapt {
            self.a_alpha.adapt(accept_prob, sweep);
        } else {
            self.a_alpha.record(accept);
        }
    }

    fn update_x(&mut self, sweep: usize, in_adapt: bool) {
        let slope = self.state.beta[1];
        let tau_eps = self.state.tau_eps;
        let tau_u = self.state.tau_u;
        for i in 0..self.n {
            let s = self.a_x[i].scale();
            let delta = s * self.rng.sample::<f64, _>(StandardNormal);
            let x_new = self.state.x[i] + delta;
            let eta_new = self.eta[i] + slope * delta;
            let r_eps_old = self.state.x[i] - self.mu[i];
            let r_eps_new = x_new - self.mu[i];
            let mut r_u_old = self.data.w[i] - self.state.x[i];
            if self.spatial {
                r_u_old -= self.state.phi[i];
            }
            let r_u_new = r_u_old - delta;
            let log_ratio = self.loglik_term(i, eta_new) - self.loglik_term(i, self.eta[i])
                - 0.5 * tau_eps * (r_eps_new * r_eps_new - r_eps_old * r_eps_old)
                - 0.5 * tau_u * (r_u_new * r_u_new - r_u_old * r_u_old);
            let accept_prob = log_ratio.exp().min(1.0);
            let accept = self.rng.gen::<f64>() < accept_prob;
            if accept {
                self.state.x[i] = x_new;
                self.eta[i] = eta_new;
            }
            if in_adapt {
                self.a_x[i].adapt(accept_prob, sweep);
            } else {
                self.a_x[i].record(accept);
            }
        }
    }

    fn update_theta(&mut self, sweep: usize, in_adapt: bool) {
        let xi: Vec<f64> = (0..self.n)
            .map(|_| self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        let noise = self
            .theta_factor
            .as_ref()
            .expect("theta preconditioner")
            .correlate(&xi)
            .expect("dimension checked");
        let components = std::mem::take(&mut self.components);
        for (c, comp) in components.iter().enumerate() {
            let scale = self.a_theta[c].scale();
            let mean: f64 = comp.iter().map(|&i| noise[i]).sum::<f64>() / comp.len() as f64;
            let delta: Vec<f64> = comp.iter().map(|&i| scale * (noise[i] - mean)).collect();

            let mut log_ratio = 0.0;
            for (pos, &i) in comp.iter().enumerate() {
                let eta_new = self.eta[i] + delta[pos];
                log_ratio += self.loglik_term(i, eta_new) - self.loglik_term(i, self.eta[i]);
            }
            log_ratio +=
                -0.5 * self.state.tau_theta * self.quad_delta(c, &self.state.theta, comp, &delta);

            let accept_prob = log_ratio.exp().min(1.0);
            let accept = self.rng.gen::<f64>() < accept_prob;
            if accept {
                for (pos, &i) in comp.iter().enumerate() {
                    self.state.theta[i] += delta[pos];
                    self.eta[i] += delta[pos];
                }
                // keep the constraint exact; fold the (tiny) correction
                // into the cached predictor as well
                let m: f64 =
                    comp.iter().map(|&i| self.state.theta[i]).sum::<f64>() / comp.len() as f64;
                for &i in comp {
                    self.state.theta[i] -= m;
                    self.eta[i] -= m;
                }
            }
            if in_adapt {
                self.a_theta[c].adapt(accept_prob, sweep);
            } else {
                self.a_theta[c].record(accept);
            }
        }
        self.components = components;
    }

    fn update_phi(&mut self, sweep: usize, in_adapt: bool) {
        let xi: Vec<f64> = (0..self.n)
            .map(|_| self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        let noise = self
            .phi_factor
            .as_ref()
            .expect("phi preconditioner")
            .correlate(&xi)
            .expect("dimension checked");
        let tau_u = self.state.tau_u;
        let components = std::mem::take(&mut self.components);
        for (c, comp) in components.iter().enumerate() {
            let scale = self.a_phi[c].scale();
            let mean: f64 = comp.iter().map(|&i| noise[i]).sum::<f64>() / comp.len() as f64;
            let delta: Vec<f64> = comp.iter().map(|&i| scale * (noise[i] - mean)).collect();

            let mut log_ratio = 0.0;
            for (pos, &i) in comp.iter().enumerate() {
                let u_old = self.data.w[i] - self.state.x[i] - self.state.phi[i];
                let u_new = u_old - delta[pos];
                log_ratio += -0.5 * tau_u * (u_new * u_new - u_old * u_old);
            }
            log_ratio +=
                -0.5 * self.state.tau_phi * self.quad_delta(c, &self.state.phi, comp, &delta);

            let accept_prob = log_ratio.exp().min(1.0);
            let accept = self.rng.gen::<f64>() < accept_prob;
            if accept {
                for (pos, &i) in comp.iter().enumerate() {
                    self.state.phi[i] += delta[pos];
                }
                let m: f64 =
                    comp.iter().map(|&i| self.state.phi[i]).sum::<f64>() / comp.len() as f64;
                for &i in comp {
                    self.state.phi[i] -= m;
                }
            }
            if in_adapt {
                self.a_phi[c].adapt(accept_prob, sweep);
            } else {
                self.a_phi[c].record(accept);
            }
        }
        self.components = components;
    }

    /// Change of the quadratic form v' K v restricted to component `c`
    /// when v[comp] moves by delta.
    fn quad_delta(&self, c: usize, field: &[f64], comp: &[usize], delta: &[f64]) -> f64 {
        let pos_of = |site: usize| comp.binary_search(&site).expect("entry within component");
        let mut acc = 0.0;
        for &(i, j, v) in &self.comp_entries[c] {
            if i == j {
                let old = field[i];
                let new = old + delta[pos_of(i)];
                acc += v * (new * new - old * old);
            } else {
                let (oi, oj) = (field[i], field[j]);
                let (ni, nj) = (oi + delta[pos_of(i)], oj + delta[pos_of(j)]);
                acc += 2.0 * v * (ni * nj - oi * oj);
            }
        }
        acc
    }

    fn update_precisions(&mut self, sweep: usize, in_adapt: bool) {
        if self.include_theta {
            let q = self
                .icar
                .structure_matrix()
                .quad_form(&self.state.theta)
                .expect("dimension checked");
            self.state.tau_theta = self.draw_tau(
                self.spec.priors.tau_theta,
                self.icar.rank() as f64,
                q,
                self.state.tau_theta,
                TauSlot::Theta,
                sweep,
                in_adapt,
            );
        }
        if self.me {
            let mut ss_eps = 0.0;
            let mut ss_u = 0.0;
            for i in 0..self.n {
                let eps = self.state.x[i] - self.mu[i];
                ss_eps += eps * eps;
                let mut u = self.data.w[i] - self.state.x[i];
                if self.spatial {
                    u -= self.state.phi[i];
                }
                ss_u += u * u;
            }
            self.state.tau_eps = self.draw_tau(
                self.spec.priors.tau_eps,
                self.n as f64,
                ss_eps,
                self.state.tau_eps,
                TauSlot::Eps,
                sweep,
                in_adapt,
            );
            self.state.tau_u = self.draw_tau(
                self.spec.priors.tau_u,
                self.n as f64,
                ss_u,
                self.state.tau_u,
                TauSlot::U,
                sweep,
                in_adapt,
            );
        }
        if self.spatial {
            let q = self
                .icar
                .structure_matrix()
                .quad_form(&self.state.phi)
                .expect("dimension checked");
            self.state.tau_phi = self.draw_tau(
                self.spec.priors.tau_phi,
                self.icar.rank() as f64,
                q,
                self.state.tau_phi,
                TauSlot::Phi,
                sweep,
                in_adapt,
            );
        }
    }

    /// Joint (theta, tau_theta) scaling move: theta* = c theta,
    /// tau* = tau / c^2. The ICAR quadratic form is invariant, so the
    /// move walks along the axis of the field/precision funnel that
    /// single-parameter updates cross only in tiny steps. The acceptance
    /// ratio is the likelihood change plus the tau-prior change minus
    /// 2 ln c (ICAR normalisation and Jacobian combined).
    fn scale_move_theta(&mut self, sweep: usize, in_adapt: bool) {
        let scale = self.a_scale_theta.scale();
        let z: f64 = scale * self.rng.sample::<f64, _>(StandardNormal);
        let c = z.exp();
        let tau_new = self.state.tau_theta / (c * c);
        let mut log_ratio = 0.0;
        for i in 0..self.n {
            let eta_new = self.eta[i] + (c - 1.0) * self.state.theta[i];
            log_ratio += self.loglik_term(i, eta_new) - self.loglik_term(i, self.eta[i]);
        }
        log_ratio += self.spec.priors.tau_theta.logdensity(tau_new)
            - self.spec.priors.tau_theta.logdensity(self.state.tau_theta)
            - 2.0 * z;
        let accept_prob = log_ratio.exp().min(1.0);
        let accept = self.rng.gen::<f64>() < accept_prob;
        if accept {
            for i in 0..self.n {
                self.eta[i] += (c - 1.0) * self.state.theta[i];
                self.state.theta[i] *= c;
            }
            self.icar.project_sum_to_zero(&mut self.state.theta);
            self.state.tau_theta = tau_new;
        }
        if in_adapt {
            self.a_scale_theta.adapt(accept_prob, sweep);
        } else {
            self.a_scale_theta.record(accept);
        }
    }

    /// Same funnel move for the error-model field.
    fn scale_move_phi(&mut self, sweep: usize, in_adapt: bool) {
        let scale = self.a_scale_phi.scale();
        let z: f64 = scale * self.rng.sample::<f64, _>(StandardNormal);
        let c = z.exp();
        let tau_new = self.state.tau_phi / (c * c);
        let tau_u = self.state.tau_u;
        let mut log_ratio = 0.0;
        for i in 0..self.n {
            let u_old = self.data.w[i] - self.state.x[i] - self.state.phi[i];
            let u_new = u_old - (c - 1.0) * self.state.phi[i];
            log_ratio += -0.5 * tau_u * (u_new * u_new - u_old * u_old);
        }
        log_ratio += self.spec.priors.tau_phi.logdensity(tau_new)
            - self.spec.priors.tau_phi.logdensity(self.state.tau_phi)
            - 2.0 * z;
        let accept_prob = log_ratio.exp().min(1.0);
        let accept = self.rng.gen::<f64>() < accept_prob;
        if accept {
            for phi in &mut self.state.phi {
                *phi *= c;
            }
            self.icar.project_sum_to_zero(&mut self.state.phi);
            self.state.tau_phi = tau_new;
        }
        if in_adapt {
            self.a_scale_phi.adapt(accept_prob, sweep);
        } else {
            self.a_scale_phi.record(accept);
        }
    }

    /// Gamma-conjugate draw when available, otherwise random-walk MH on
    /// log tau against dof/2 * ln tau - tau * quad / 2 plus the prior.
    fn draw_tau(
        &mut self,
        prior: PriorSpec,
        dof: f64,
        quad: f64,
        current: f64,
        slot: TauSlot,
        sweep: usize,
        in_adapt: bool,
    ) -> f64 {
        if !self.config.force_mh_tau {
            if let Some(draw) = conjugate_precision_draw(&prior, dof, quad, &mut self.rng) {
                return draw;
            }
        }
        let scale = self.tau_adapt(slot).scale();
        let step: f64 = scale * self.rng.sample::<f64, _>(StandardNormal);
        let log_old = current.ln();
        let log_new = log_old + step;
        let tau_new = log_new.exp();
        let log_ratio = 0.5 * dof * (log_new - log_old) - 0.5 * quad * (tau_new - current)
            + prior.logdensity(tau_new)
            - prior.logdensity(current)
            + (log_new - log_old);
        let accept_prob = log_ratio.exp().min(1.0);
        let accept = self.rng.gen::<f64>() < accept_prob;
        let adapt = self.tau_adapt_mut(slot);
        if in_adapt {
            adapt.adapt(accept_prob, sweep);
        } else {
            adapt.record(accept);
        }
        if accept {
            tau_new
        } else {
            current
        }
    }

    fn tau_adapt(&self, slot: TauSlot) -> &Adapt {
        match slot {
            TauSlot::Theta => &self.a_tau_theta,
            TauSlot::Eps => &self.a_tau_eps,
            TauSlot::U => &self.a_tau_u,
            TauSlot::Phi => &self.a_tau_phi,
        }
    }

    fn tau_adapt_mut(&mut self, slot: TauSlot) -> &mut Adapt {
        match slot {
            TauSlot::Theta => &mut self.a_tau_theta,
            TauSlot::Eps => &mut self.a_tau_eps,
            TauSlot::U => &mut self.a_tau_u,
            TauSlot::Phi => &mut self.a_tau_phi,
        }
    }

    fn run(mut self, layout: &StateLayout) -> Result<ChainSamples, InferenceError> {
        let config = self.config;
        let n_kept = config.n_kept();
        let mut scalars = Vec::with_capacity(n_kept);
        let mut theta_draws = Vec::with_capacity(if self.include_theta { n_kept } else { 0 });
        let mut x_draws = Vec::with_capacity(if self.me { n_kept } else { 0 });
        let mut phi_draws = Vec::with_capacity(if self.spatial { n_kept } else { 0 });
        let mut trace = Vec::with_capacity(config.n_iterations);
        let constant = outcome_constant(self.data, self.outcome);

        for sweep in 0..config.n_iterations {
            let in_adapt = sweep < config.n_burnin;
            if in_adapt && sweep > 0 && sweep % config.adapt_window == 0 {
                self.refresh_preconditioners()?;
            }
            self.update_beta(sweep, in_adapt);
            if self.me {
                self.update_alpha(sweep, in_adapt);
                self.update_x(sweep, in_adapt);
            }
            if self.include_theta {
                self.update_theta(sweep, in_adapt);
            }
            if self.spatial {
                self.update_phi(sweep, in_adapt);
            }
            if !config.fix_precisions {
                self.update_precisions(sweep, in_adapt);
                if self.include_theta {
                    self.scale_move_theta(sweep, in_adapt);
                }
                if self.spatial {
                    self.scale_move_phi(sweep, in_adapt);
                }
            }
            if sweep % 256 == 255 {
                // kill incremental-update drift
                self.recompute_caches();
            }

            let logpost =
                guarded_joint(&self.state, self.data, self.spec, self.icar, self.outcome)
                    + constant;
            if !logpost.is_finite() {
                return Err(InferenceError::Divergence {
                    chain: self.chain,
                    iteration: sweep,
                    block: "sweep",
                });
            }
            trace.push(logpost);

            if sweep >= config.n_burnin && (sweep - config.n_burnin) % config.thinning == 0 {
                scalars.push(layout.pack(&self.state));
                if self.include_theta {
                    theta_draws.push(self.state.theta.clone());
                }
                if self.me {
                    x_draws.push(self.state.x.clone());
                }
                if self.spatial {
                    phi_draws.push(self.state.phi.clone());
                }
            }
        }

        let mut acceptance = vec![("beta".to_string(), self.a_beta.rate())];
        if self.me {
            acceptance.push(("alpha".to_string(), self.a_alpha.rate()));
            if !self.a_x.is_empty() {
                let x_rate =
                    self.a_x.iter().map(Adapt::rate).sum::<f64>() / self.a_x.len() as f64;
                acceptance.push(("x".to_string(), x_rate));
            }
        }
        if self.include_theta && !self.a_theta.is_empty() {
            let rate =
                self.a_theta.iter().map(Adapt::rate).sum::<f64>() / self.a_theta.len() as f64;
            acceptance.push(("theta".to_string(), rate));
        }
        if self.spatial && !self.a_phi.is_empty() {
            let rate = self.a_phi.iter().map(Adapt::rate).sum::<f64>() / self.a_phi.len() as f64;
            acceptance.push(("phi".to_string(), rate));
        }
        for (slot, adapt) in [
            ("tau_theta", &self.a_tau_theta),
            ("tau_eps", &self.a_tau_eps),
            ("tau_u", &self.a_tau_u),
            ("tau_phi", &self.a_tau_phi),
            ("theta_scale", &self.a_scale_theta),
            ("phi_scale", &self.a_scale_phi),
        ] {
            if adapt.proposed > 0 {
                acceptance.push((slot.to_string(), adapt.rate()));
            }
        }

        Ok(ChainSamples {
            scalars,
            theta: theta_draws,
            x: x_draws,
            phi: phi_draws,
            logpost_trace: trace,
            acceptance,
            rng_stream: self.chain as u64,
        })
    }
}

#[derive(Clone, Copy)]
enum TauSlot {
    Theta,
    Eps,
    U,
    Phi,
}
