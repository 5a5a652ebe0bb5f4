//! Covariance matrix adaptation over a fixed-length weight vector, with the
//! stagnation-driven inflation of sample size, iteration budget and initial
//! step size. Fitness is maximized.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

use crate::config::CmaConfig;

const EIGEN_FLOOR: f64 = 1e-12;

/// Expected Euclidean norm of an `n`-dimensional standard normal vector.
///
/// Exact through the gamma function up to `n = 100`, the series
/// approximation beyond.
pub fn expected_norm(n: usize) -> f64 {
    if n > 100 {
        expected_norm_approx(n)
    } else {
        let n = n as f64;
        std::f64::consts::SQRT_2 * (ln_gamma((n + 1.0) / 2.0) - ln_gamma(n / 2.0)).exp()
    }
}

/// `sqrt(n) * (1 - 1/(4n) + 1/(21 n^2))`.
pub fn expected_norm_approx(n: usize) -> f64 {
    let n = n as f64;
    n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n))
}

/// Sample count for dimension `n` at stagnation level `o`.
pub fn population_size(n: usize, o: usize) -> usize {
    4 + (3.0 * ((n + o) as f64).ln()).ceil() as usize
}

/// Log-linear recombination weights for `mu` parents, normalized to sum 1.
pub fn recombination_weights(mu: usize) -> Vec<f64> {
    let raw: Vec<f64> = (1..=mu)
        .map(|i| ((mu + 1) as f64).ln() - (i as f64).ln())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Initial step size at stagnation level `o`.
pub fn initial_sigma(o: usize, cfg: &CmaConfig) -> f64 {
    cfg.sigma_max.min(cfg.sigma_d + cfg.o_sigma * ((o + 1) as f64).ln())
}

/// Candidate indices ordered best first; ties keep index order.
pub fn rank(fitnesses: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..fitnesses.len()).collect();
    order.sort_by(|&a, &b| fitnesses[b].total_cmp(&fitnesses[a]).then(a.cmp(&b)));
    order
}

/// Strategy parameters that depend only on `n` and `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_c: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub mu_cov: f64,
    pub c_cov: f64,
}

impl Strategy {
    pub fn new(n: usize, lambda: usize) -> Self {
        let nf = n as f64;
        let mu = lambda / 2;
        let weights = recombination_weights(mu);
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_c = 4.0 / (nf + 4.0);
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 3.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let mu_cov = mu_eff;
        let c_cov = (1.0 / mu_cov) * 2.0 / (nf + std::f64::consts::SQRT_2)
            + (1.0 - 1.0 / mu_cov) * (1.0f64).min((2.0 * mu_eff - 1.0) / ((nf + 2.0).powi(2) + mu_eff));
        Self { lambda, mu, weights, mu_eff, c_c, c_sigma, d_sigma, mu_cov, c_cov }
    }
}

/// Per-iteration trace values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub sigma: f64,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub cond_number: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaState {
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub cov: DMatrix<f64>,
    pub p_c: DVector<f64>,
    pub p_sigma: DVector<f64>,
    /// Eigenvectors of `cov`, one per column.
    pub b: DMatrix<f64>,
    /// Square roots of the (floored) eigenvalues of `cov`.
    pub e: DVector<f64>,
    /// Completed iterations.
    pub t: usize,
    pub strategy: Strategy,
    pub o: usize,
    pub tau_stop: usize,
    pub f_stop: f64,
    pub best_ever: Option<(Vec<f64>, f64)>,
    /// Set when the last `tell` found the step-size path short enough to
    /// feed the rank-one path.
    pub h_sigma: bool,
    expected_norm: f64,
}

/// Starts a run around `x0` at stagnation level `o`. The run stops once a
/// candidate beats `f_stop`.
pub fn cma_init(x0: &[f64], o: usize, cfg: &CmaConfig, f_stop: f64) -> CmaState {
    let n = x0.len();
    assert!(n >= 1, "search space must have at least one dimension");
    CmaState {
        mean: DVector::from_column_slice(x0),
        sigma: initial_sigma(o, cfg),
        cov: DMatrix::identity(n, n),
        p_c: DVector::zeros(n),
        p_sigma: DVector::zeros(n),
        b: DMatrix::identity(n, n),
        e: DVector::from_element(n, 1.0),
        t: 0,
        strategy: Strategy::new(n, population_size(n, o)),
        o,
        tau_stop: cfg.rho * (1 + o),
        f_stop,
        best_ever: None,
        h_sigma: true,
        expected_norm: expected_norm(n),
    }
}

impl CmaState {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn lambda(&self) -> usize {
        self.strategy.lambda
    }

    pub fn mu(&self) -> usize {
        self.strategy.mu
    }

    pub fn condition_number(&self) -> f64 {
        let max = self.e.max();
        let min = self.e.min();
        (max * max) / (min * min)
    }

    /// Draws `lambda` candidates from `N(mean, sigma^2 C)`.
    pub fn ask<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..self.lambda())
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let y = &self.b * self.e.component_mul(&z);
                (&self.mean + self.sigma * y).as_slice().to_vec()
            })
            .collect()
    }

    /// Weighted mean of the best `mu` candidates; returns the new mean and
    /// its displacement from the old one.
    pub fn update_mean(&self, candidates: &[Vec<f64>], order: &[usize]) -> (DVector<f64>, DVector<f64>) {
        let mut mean = DVector::zeros(self.dim());
        for (w, &k) in self.strategy.weights.iter().zip(order) {
            mean += *w * DVector::from_column_slice(&candidates[k]);
        }
        let d = &mean - &self.mean;
        (mean, d)
    }

    /// `C^{-1/2} = B E^{-1} B^T`.
    pub fn inv_sqrt_cov(&self) -> DMatrix<f64> {
        let inv = DMatrix::from_diagonal(&self.e.map(|x| 1.0 / x));
        &self.b * inv * self.b.transpose()
    }

    /// Advances both evolution paths by the mean displacement `d` and
    /// evaluates the `H_sigma` gate.
    pub fn update_paths(&mut self, d: &DVector<f64>) {
        let s = &self.strategy;
        let n = self.dim() as f64;
        let step = (s.c_sigma * (2.0 - s.c_sigma) * s.mu_eff).sqrt() / self.sigma;
        self.p_sigma = (1.0 - s.c_sigma) * &self.p_sigma + step * (self.inv_sqrt_cov() * d);
        let trials = (self.t + 1) as i32;
        let norm = self.p_sigma.norm() / (1.0 - (1.0 - s.c_sigma).powi(2 * trials)).sqrt();
        self.h_sigma = norm < (1.4 + 2.0 / (n + 1.0)) * self.expected_norm;
        let gate = if self.h_sigma { 1.0 } else { 0.0 };
        self.p_c = (1.0 - s.c_c) * &self.p_c
            + gate * (s.c_c * (2.0 - s.c_c)).sqrt() * (s.mu_eff.sqrt() / self.sigma) * d;
    }

    /// Rank-one plus rank-mu covariance update. Deviations are measured from
    /// `old_mean`.
    pub fn update_covariance(&mut self, candidates: &[Vec<f64>], order: &[usize], old_mean: &DVector<f64>) {
        let s = &self.strategy;
        let n = self.dim();
        let mut rank_mu = DMatrix::zeros(n, n);
        let sigma2 = self.sigma * self.sigma;
        for (w, &k) in s.weights.iter().zip(order) {
            let y = DVector::from_column_slice(&candidates[k]) - old_mean;
            rank_mu += (*w / sigma2) * &y * y.transpose();
        }
        let rank_one = &self.p_c * self.p_c.transpose();
        let mut cov = (1.0 - s.c_cov) * &self.cov
            + (s.c_cov / s.mu_cov) * rank_one
            + s.c_cov * (1.0 - 1.0 / s.mu_cov) * rank_mu;
        cov = 0.5 * (&cov + cov.transpose());
        self.cov = cov;
        self.refresh_eigen();
    }

    /// Recomputes `B` and `E` from `C`; a non-finite `C` is reset to the
    /// identity.
    pub fn refresh_eigen(&mut self) {
        let n = self.dim();
        if self.cov.iter().any(|x| !x.is_finite()) {
            warn!("covariance matrix became non-finite; resetting to identity");
            self.cov = DMatrix::identity(n, n);
        }
        let eig = SymmetricEigen::new(self.cov.clone());
        if eig.eigenvalues.iter().any(|x| !x.is_finite()) {
            warn!("eigendecomposition failed; resetting covariance to identity");
            self.cov = DMatrix::identity(n, n);
            self.b = DMatrix::identity(n, n);
            self.e = DVector::from_element(n, 1.0);
            return;
        }
        self.b = eig.eigenvectors;
        self.e = eig.eigenvalues.map(|x| x.max(EIGEN_FLOOR).sqrt());
    }

    pub fn update_step_size(&mut self) {
        let s = &self.strategy;
        self.sigma *= ((s.c_sigma / s.d_sigma) * (self.p_sigma.norm() / self.expected_norm - 1.0)).exp();
    }

    /// Consumes one round of evaluated candidates.
    pub fn tell(&mut self, candidates: &[Vec<f64>], fitnesses: &[f64]) -> TraceRow {
        assert_eq!(candidates.len(), fitnesses.len());
        let order = rank(fitnesses);
        let best = order[0];
        if self.best_ever.as_ref().is_none_or(|(_, f)| fitnesses[best] > *f) {
            self.best_ever = Some((candidates[best].clone(), fitnesses[best]));
        }
        let old_mean = self.mean.clone();
        let (mean, d) = self.update_mean(candidates, &order);
        self.mean = mean;
        self.update_paths(&d);
        self.update_covariance(candidates, &order, &old_mean);
        self.update_step_size();
        self.t += 1;
        TraceRow {
            iter: self.t,
            sigma: self.sigma,
            best_fitness: fitnesses[best],
            mean_fitness: fitnesses.iter().sum::<f64>() / fitnesses.len() as f64,
            cond_number: self.condition_number(),
        }
    }

    /// Re-derives sample size, iteration budget and step size for a new
    /// stagnation level, keeping mean, covariance and paths.
    pub fn inflate(&mut self, o: usize, cfg: &CmaConfig) {
        self.o = o;
        self.strategy = Strategy::new(self.dim(), population_size(self.dim(), o));
        self.tau_stop = cfg.rho * (1 + o);
        self.sigma = initial_sigma(o, cfg);
    }

    pub fn should_stop(&self) -> bool {
        self.best_ever.as_ref().is_some_and(|(_, f)| *f > self.f_stop) || self.t >= self.tau_stop
    }
}
