//! Variational E-step: coordinate updates for q(Z), q(M) and q(beta) with
//! the membership matrix held fixed, plus the evidence lower bound they
//! ascend.
//!
//! Observed pairs carry a truncated-normal factor q(z_ij) located at the
//! current predictor mean. For unobserved pairs the auxiliary variable is
//! parameterised as `w_ij = z_ij - beta^T r_ij ~ N(m_ij, 1)`; this is the
//! same generative model, but it keeps held-out pairs out of the beta
//! update while every entry still contributes unit precision to q(M), which
//! is what preserves the Kronecker structure of the posterior covariance.
//! Stored `Z_mean` entries for unobserved pairs always equal `<m> + <p>`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::SpectralCache;
use crate::netdata::{ObservedNetwork, PairIndicator, SideInfo};
use crate::normal::TruncatedMoments;

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    m_mean: DMatrix<f64>,
    z_mean: DMatrix<f64>,
    /// Location parameter of each q(z_ij) (observed) or q(w_ij) (unobserved).
    z_loc: DMatrix<f64>,
    beta_mean: DVector<f64>,
    beta_cov: DMatrix<f64>,
    p_mean: DMatrix<f64>,
}

impl VariationalState {
    /// Prior-like starting point: zero means, `Sigma_beta = sigma_beta_sq * I`.
    /// Run [`update_z`] before any other update.
    pub fn new(n: usize, p: usize, sigma_beta_sq: f64) -> Self {
        Self {
            m_mean: DMatrix::zeros(n, n),
            z_mean: DMatrix::zeros(n, n),
            z_loc: DMatrix::zeros(n, n),
            beta_mean: DVector::zeros(p),
            beta_cov: DMatrix::identity(p, p) * sigma_beta_sq,
            p_mean: DMatrix::zeros(n, n),
        }
    }

    pub fn m_mean(&self) -> &DMatrix<f64> {
        &self.m_mean
    }

    pub fn z_mean(&self) -> &DMatrix<f64> {
        &self.z_mean
    }

    pub fn beta_mean(&self) -> &DVector<f64> {
        &self.beta_mean
    }

    pub fn beta_cov(&self) -> &DMatrix<f64> {
        &self.beta_cov
    }

    pub fn p_mean(&self) -> &DMatrix<f64> {
        &self.p_mean
    }

    pub fn n(&self) -> usize {
        self.m_mean.nrows()
    }

    /// Overwrites `<M>`. The other factors are left as they are.
    pub fn set_m_mean(&mut self, m_mean: DMatrix<f64>) {
        self.m_mean = m_mean;
    }

    /// Installs a new q(beta), refreshes `<P>`, and re-expresses the
    /// unobserved `<z>` entries against the new `<P>`.
    pub fn set_beta(&mut self, beta_mean: DVector<f64>, beta_cov: DMatrix<f64>, side: &SideInfo, observed: &PairIndicator) {
        self.p_mean = predictor_mean(side, &beta_mean, self.n());
        self.beta_mean = beta_mean;
        self.beta_cov = beta_cov;
        let n = self.n();
        for j in 0..n {
            for i in 0..n {
                if !observed.get(i, j) {
                    self.z_mean[(i, j)] = self.z_loc[(i, j)] + self.p_mean[(i, j)];
                }
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.m_mean.iter().all(|v| v.is_finite())
            && self.z_mean.iter().all(|v| v.is_finite())
            && self.beta_mean.iter().all(|v| v.is_finite())
            && self.beta_cov.iter().all(|v| v.is_finite())
    }
}

/// `P_ij = beta^T r_ij`; all zero without side information.
pub fn predictor_mean(side: &SideInfo, beta: &DVector<f64>, n: usize) -> DMatrix<f64> {
    if side.p() == 0 {
        return DMatrix::zeros(n, n);
    }
    DMatrix::from_fn(n, n, |i, j| {
        side.features(i, j).iter().zip(beta.iter()).map(|(r, b)| r * b).sum()
    })
}

/// Mean of q(z_ij): the truncated-normal mean for an observed pair, the
/// predictor mean itself otherwise.
pub fn expected_z(x_mean: f64, y: u8, observed: bool) -> f64 {
    if observed {
        TruncatedMoments::new(x_mean, y == 1).mean
    } else {
        x_mean
    }
}

pub fn update_z(state: &mut VariationalState, net: &ObservedNetwork, observed: &PairIndicator) {
    let n = state.n();
    for j in 0..n {
        for i in 0..n {
            let m = state.m_mean[(i, j)];
            let x = m + state.p_mean[(i, j)];
            if observed.get(i, j) {
                state.z_loc[(i, j)] = x;
                state.z_mean[(i, j)] = expected_z(x, net.get(i, j), true);
            } else {
                state.z_loc[(i, j)] = m;
                state.z_mean[(i, j)] = x;
            }
        }
    }
}

/// `<M> = V [ (V^T (<Z> - <P>) V) o D ] V^T`.
pub fn update_m(cache: &SpectralCache, z_mean: &DMatrix<f64>, p_mean: &DMatrix<f64>) -> DMatrix<f64> {
    let v = cache.vectors();
    let residual = z_mean - p_mean;
    let coeffs = (v.transpose() * residual * v).component_mul(cache.shrinkage());
    v * coeffs * v.transpose()
}

/// Ridge posterior for beta over the observed pairs:
/// `Sigma = (sum r r^T + I / sigma^2)^-1`, `mean = Sigma sum (<z> - <m>) r`.
pub fn update_beta(
    side: &SideInfo,
    z_mean: &DMatrix<f64>,
    m_mean: &DMatrix<f64>,
    sigma_beta_sq: f64,
    observed: &PairIndicator,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = side.p();
    if p == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let n = z_mean.nrows();
    let mut precision = DMatrix::identity(p, p) / sigma_beta_sq;
    let mut rhs = DVector::zeros(p);
    for i in 0..n {
        for j in 0..n {
            if !observed.get(i, j) {
                continue;
            }
            let r = DVector::from_column_slice(side.features(i, j));
            precision.ger(1.0, &r, &r, 1.0);
            rhs.axpy(z_mean[(i, j)] - m_mean[(i, j)], &r, 1.0);
        }
    }
    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::numeric("update_beta", "normal-equation matrix is not positive definite"))?;
    let cov = chol.inverse();
    let mean = chol.solve(&rhs);
    Ok((mean, cov))
}

/// `Var(m_ij)` for every entry: `sum_ab V_ia^2 V_jb^2 D_ab`.
fn m_variances(cache: &SpectralCache) -> DMatrix<f64> {
    let sq = cache.vectors().map(|v| v * v);
    &sq * cache.shrinkage() * sq.transpose()
}

/// Evidence lower bound of the joint given U, up to constants that do not
/// depend on the variational state or the network.
pub fn elbo(
    state: &VariationalState,
    cache: &SpectralCache,
    net: &ObservedNetwork,
    observed: &PairIndicator,
    side: &SideInfo,
    sigma_beta_sq: f64,
) -> f64 {
    let n = state.n();
    let half_log_2pi = 0.5 * (2.0 * PI).ln();
    let m_var = m_variances(cache);
    let p = side.p();

    let mut total = 0.0;
    for j in 0..n {
        for i in 0..n {
            let m = state.m_mean[(i, j)];
            let loc = state.z_loc[(i, j)];
            if observed.get(i, j) {
                let p_var = if p == 0 {
                    0.0
                } else {
                    let r = DVector::from_column_slice(side.features(i, j));
                    r.dot(&(&state.beta_cov * &r))
                };
                let x = m + state.p_mean[(i, j)];
                let tm = TruncatedMoments::new(loc, net.get(i, j) == 1);
                let dev = tm.mean - x;
                total += -half_log_2pi - 0.5 * (dev * dev + tm.variance + m_var[(i, j)] + p_var) + tm.entropy;
            } else {
                let dev = loc - m;
                total += -0.5 * (dev * dev + m_var[(i, j)]);
            }
        }
    }

    // E log p(M | U) + H[q(M)], one term per kept eigenpair product.
    let v = cache.vectors();
    let coeffs = v.transpose() * &state.m_mean * v;
    let l = cache.eigenvalues();
    for a in 0..l.len() {
        for b in 0..l.len() {
            let prod = l[a] * l[b];
            if prod <= 0.0 {
                continue;
            }
            let c = coeffs[(a, b)];
            total += 0.5 - 0.5 * c * c / prod - 0.5 / (1.0 + prod) - 0.5 * prod.ln_1p();
        }
    }

    if p > 0 {
        let log_det = match state.beta_cov.clone().cholesky() {
            Some(chol) => 2.0 * chol.l().diagonal().map(f64::ln).sum(),
            None => f64::NEG_INFINITY,
        };
        total += -(state.beta_mean.norm_squared() + state.beta_cov.trace()) / (2.0 * sigma_beta_sq)
            - 0.5 * p as f64 * sigma_beta_sq.ln()
            + 0.5 * log_det
            + 0.5 * p as f64;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstepConfig {
    pub tol: f64,
    pub max_sweeps: usize,
    pub sigma_beta_sq: f64,
    /// Evaluate the bound after every sweep.
    pub track_elbo: bool,
}

impl Default for EstepConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_sweeps: 200,
            sigma_beta_sq: 1.0,
            track_elbo: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstepReport {
    pub sweeps: usize,
    pub converged: bool,
    /// Max-abs change of `<M>` in the final sweep.
    pub last_change: f64,
    /// Bound after each sweep when tracking was requested.
    pub elbo_trace: Vec<f64>,
}

/// Sweeps Z, M, beta until `<M>` moves less than `config.tol` in max-abs.
pub fn run_estep(
    state: &mut VariationalState,
    cache: &SpectralCache,
    net: &ObservedNetwork,
    observed: &PairIndicator,
    side: &SideInfo,
    config: &EstepConfig,
) -> Result<EstepReport> {
    let mut elbo_trace = Vec::new();
    let mut last_change = f64::INFINITY;
    for sweep in 1..=config.max_sweeps {
        update_z(state, net, observed);
        if !state.z_mean.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("update_z", format!("non-finite <Z> in sweep {sweep}")));
        }

        let m_new = update_m(cache, &state.z_mean, &state.p_mean);
        if !m_new.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("update_m", format!("non-finite <M> in sweep {sweep}")));
        }
        last_change = (&m_new - &state.m_mean).amax();
        state.m_mean = m_new;

        if side.p() > 0 {
            let (mean, cov) = update_beta(side, &state.z_mean, &state.m_mean, config.sigma_beta_sq, observed)?;
            state.set_beta(mean, cov, side, observed);
            if !state.all_finite() {
                return Err(Error::numeric("update_beta", format!("non-finite <beta> in sweep {sweep}")));
            }
        }

        if config.track_elbo {
            elbo_trace.push(elbo(state, cache, net, observed, side, config.sigma_beta_sq));
        }
        if last_change < config.tol {
            return Ok(EstepReport {
                sweeps: sweep,
                converged: true,
                last_change,
                elbo_trace,
            });
        }
    }
    Ok(EstepReport {
        sweeps: config.max_sweeps,
        converged: false,
        last_change,
        elbo_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{rbf_matrix, spectral_decompose, KernelParams};
    use crate::mstep::MembershipMatrix;
    use crate::netdata::ObservationMask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Instance {
        net: ObservedNetwork,
        observed: PairIndicator,
        side: SideInfo,
        cache: SpectralCache,
    }

    fn instance(n: usize, p: usize, train_fraction: f64, seed: u64) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adjacency: Vec<u8> = (0..n * n).map(|_| u8::from(rng.random_bool(0.4))).collect();
        let net = ObservedNetwork::new(n, adjacency, true, true).unwrap();
        let (train, _) = ObservationMask::full(&net).split(train_fraction, seed).unwrap();
        let features: Vec<f64> = (0..n * n * p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let side = SideInfo::new(n, p, features).unwrap();
        let u = MembershipMatrix::new(DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let k = rbf_matrix(&u, KernelParams::new(0.8, 1e-6).unwrap()).unwrap();
        Instance {
            observed: train.indicator(),
            net,
            side,
            cache: spectral_decompose(&k, None).unwrap(),
        }
    }

    fn truncated_mean_by_quadrature(x: f64, positive: bool) -> f64 {
        // composite Simpson over the kept half-line
        let (a, b) = if positive { (0.0, 40.0) } else { (-40.0, 0.0) };
        let steps = 80_000;
        let h = (b - a) / steps as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..=steps {
            let z = a + k as f64 * h;
            let w = if k == 0 || k == steps {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let dens = (-0.5 * (z - x) * (z - x)).exp();
            num += w * z * dens;
            den += w * dens;
        }
        num / den
    }

    #[test]
    fn expected_z_closed_forms() {
        let root = (2.0 / PI).sqrt();
        assert!((expected_z(0.0, 1, true) - 0.797_884_560_8).abs() < 1e-10);
        assert!((expected_z(0.0, 1, true) - root).abs() < 1e-15);
        assert!((expected_z(0.0, 0, true) + root).abs() < 1e-15);
        assert_eq!(expected_z(0.37, 1, false), 0.37);
        let oracle = truncated_mean_by_quadrature(1.3, true);
        assert!((expected_z(1.3, 1, true) - oracle).abs() < 1e-8);
    }

    #[test]
    fn update_z_without_observations_copies_predictor() {
        let inst = instance(5, 2, 0.5, 1);
        let mut state = VariationalState::new(5, 2, 1.0);
        state.m_mean = DMatrix::from_fn(5, 5, |i, j| (i as f64 - j as f64) * 0.3);
        state.set_beta(DVector::from_vec(vec![0.5, -1.0]), DMatrix::identity(2, 2), &inst.side, &PairIndicator::none(5));
        update_z(&mut state, &inst.net, &PairIndicator::none(5));
        assert_eq!(state.z_mean, &state.m_mean + &state.p_mean);
    }

    #[test]
    fn single_observed_pair() {
        let net = ObservedNetwork::new(2, vec![0, 1, 0, 0], true, true).unwrap();
        let mask = ObservationMask::new(2, false, [(0, 1)]).unwrap().indicator();
        let mut state = VariationalState::new(2, 0, 1.0);
        state.m_mean = DMatrix::from_row_slice(2, 2, &[0.4, 0.0, -0.2, 0.1]);
        update_z(&mut state, &net, &mask);
        assert!((state.z_mean[(0, 1)] - 0.797_884_56).abs() < 1e-8);
        assert_eq!(state.z_mean[(0, 0)], 0.4);
        assert_eq!(state.z_mean[(1, 0)], -0.2);
    }

    #[test]
    fn truncation_moves_toward_observed_side() {
        let inst = instance(8, 0, 1.0, 5);
        let mut state = VariationalState::new(8, 0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        state.m_mean = DMatrix::from_fn(8, 8, |_, _| rng.random_range(-6.0..6.0));
        update_z(&mut state, &inst.net, &inst.observed);
        for i in 0..8 {
            for j in 0..8 {
                let diff = state.z_mean[(i, j)] - state.m_mean[(i, j)];
                if inst.net.get(i, j) == 1 {
                    assert!(diff > 0.0);
                } else {
                    assert!(diff < 0.0);
                }
            }
        }
    }

    #[test]
    fn scalar_update_m() {
        let cache = spectral_decompose(&DMatrix::from_element(1, 1, 1.0), None).unwrap();
        let m = update_m(&cache, &DMatrix::from_element(1, 1, 4.0), &DMatrix::zeros(1, 1));
        assert!((m[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn update_m_zero_residual_linearity_and_shrinkage() {
        let inst = instance(7, 0, 1.0, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rand_mat = || DMatrix::from_fn(7, 7, |_, _| rng.random_range(-2.0..2.0));
        let (a, b, p) = (rand_mat(), rand_mat(), rand_mat());
        assert!(update_m(&inst.cache, &p, &p).amax() < 1e-14);

        let zero = DMatrix::zeros(7, 7);
        let combo = update_m(&inst.cache, &(&a * 2.0 - &b * 0.5), &zero);
        let parts = update_m(&inst.cache, &a, &zero) * 2.0 - update_m(&inst.cache, &b, &zero) * 0.5;
        assert!((combo - parts).amax() < 1e-10);

        let m = update_m(&inst.cache, &a, &b);
        assert!(m.norm() <= (&a - &b).norm());
    }

    #[test]
    fn update_m_matches_dense_kronecker() {
        let inst = instance(6, 0, 1.0, 4);
        let k = inst.cache.reconstruct();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let p = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let kk = k.kronecker(&k);
        let sigma = &kk * (DMatrix::identity(36, 36) + &kk).try_inverse().unwrap();
        let resid_t = (&z - &p).transpose();
        let vec_m_t = sigma * DVector::from_column_slice(resid_t.as_slice());
        let dense = DMatrix::from_column_slice(6, 6, vec_m_t.as_slice()).transpose();
        let fast = update_m(&inst.cache, &z, &p);
        assert!((fast - dense).amax() < 1e-8);
    }

    #[test]
    fn beta_without_side_information() {
        let side = SideInfo::none(3);
        let z = DMatrix::from_element(3, 3, 1.0);
        let (mean, cov) = update_beta(&side, &z, &DMatrix::zeros(3, 3), 1.0, &PairIndicator::none(3)).unwrap();
        assert_eq!(mean.len(), 0);
        assert_eq!(cov.len(), 0);
        assert_eq!(predictor_mean(&side, &mean, 3), DMatrix::zeros(3, 3));
    }

    #[test]
    fn beta_with_zero_features_is_prior() {
        let side = SideInfo::new(3, 2, vec![0.0; 18]).unwrap();
        let mask = ObservationMask::new(3, false, (0..3).flat_map(|i| (0..3).map(move |j| (i, j))))
            .unwrap()
            .indicator();
        let z = DMatrix::from_element(3, 3, 0.7);
        let (mean, cov) = update_beta(&side, &z, &DMatrix::zeros(3, 3), 2.5, &mask).unwrap();
        assert!(mean.amax() < 1e-15);
        assert!((cov - DMatrix::identity(2, 2) * 2.5).amax() < 1e-14);
    }

    #[test]
    fn beta_matches_ridge_normal_equations() {
        let inst = instance(6, 2, 0.7, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let m = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let sigma_sq = 0.8;
        let (mean, _) = update_beta(&inst.side, &z, &m, sigma_sq, &inst.observed).unwrap();

        // stack the design rows and solve (X^T X + I/s^2) b = X^T t directly
        let rows: Vec<(usize, usize)> = (0..6)
            .flat_map(|i| (0..6).map(move |j| (i, j)))
            .filter(|&(i, j)| inst.observed.get(i, j))
            .collect();
        let x = DMatrix::from_fn(rows.len(), 2, |row, k| inst.side.features(rows[row].0, rows[row].1)[k]);
        let t = DVector::from_iterator(rows.len(), rows.iter().map(|&(i, j)| z[(i, j)] - m[(i, j)]));
        let lhs = x.transpose() * &x + DMatrix::identity(2, 2) / sigma_sq;
        let direct = lhs.lu().solve(&(x.transpose() * t)).unwrap();
        assert!((mean - direct).amax() < 1e-10);
    }

    #[test]
    fn elbo_is_finite_and_pure() {
        let inst = instance(6, 2, 0.8, 3);
        let mut state = VariationalState::new(6, 2, 1.0);
        update_z(&mut state, &inst.net, &inst.observed);
        let a = elbo(&state, &inst.cache, &inst.net, &inst.observed, &inst.side, 1.0);
        let b = elbo(&state.clone(), &inst.cache, &inst.net, &inst.observed, &inst.side, 1.0);
        assert!(a.is_finite());
        assert_eq!(a, b);
    }

    #[test]
    fn elbo_reduces_to_log_likelihood_at_fixed_point_of_z() {
        // with q(z) located at the predictor mean, each observed pair contributes
        // ln Phi((2y-1) x) - Var(x)/2
        let inst = instance(4, 0, 1.0, 6);
        let mut state = VariationalState::new(4, 0, 1.0);
        state.m_mean = update_m(&inst.cache, &DMatrix::from_fn(4, 4, |i, j| (i + 2 * j) as f64 * 0.2 - 0.5), &DMatrix::zeros(4, 4));
        update_z(&mut state, &inst.net, &inst.observed);
        let full = elbo(&state, &inst.cache, &inst.net, &inst.observed, &inst.side, 1.0);

        let m_var = m_variances(&inst.cache);
        let mut likelihood = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let s = if inst.net.get(i, j) == 1 { 1.0 } else { -1.0 };
                likelihood += crate::normal::log_cdf(s * state.m_mean[(i, j)]) - 0.5 * m_var[(i, j)];
            }
        }
        let v = inst.cache.vectors();
        let c = v.transpose() * &state.m_mean * v;
        let l = inst.cache.eigenvalues();
        let mut prior = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                let prod = l[a] * l[b];
                prior += 0.5 - 0.5 * c[(a, b)].powi(2) / prod - 0.5 / (1.0 + prod) - 0.5 * prod.ln_1p();
            }
        }
        assert!((full - likelihood - prior).abs() < 1e-9);
    }

    #[test]
    fn each_coordinate_update_raises_the_bound() {
        for seed in 0..10 {
            for (p, frac) in [(0, 0.8), (2, 0.8), (2, 1.0), (0, 1.0)] {
                let inst = instance(8, p, frac, seed);
                let sigma_sq = 1.0;
                let mut state = VariationalState::new(8, p, sigma_sq);
                let bound = |s: &VariationalState| elbo(s, &inst.cache, &inst.net, &inst.observed, &inst.side, sigma_sq);
                let mut last = bound(&state);
                for _ in 0..15 {
                    update_z(&mut state, &inst.net, &inst.observed);
                    let after_z = bound(&state);
                    assert!(after_z >= last - 1e-6, "seed {seed} p {p}: z step {last} -> {after_z}");
                    state.m_mean = update_m(&inst.cache, &state.z_mean, &state.p_mean);
                    let after_m = bound(&state);
                    assert!(after_m >= after_z - 1e-6, "seed {seed} p {p}: m step {after_z} -> {after_m}");
                    let (mean, cov) = update_beta(&inst.side, &state.z_mean, &state.m_mean, sigma_sq, &inst.observed).unwrap();
                    state.set_beta(mean, cov, &inst.side, &inst.observed);
                    let after_b = bound(&state);
                    assert!(after_b >= after_m - 1e-6, "seed {seed} p {p}: beta step {after_m} -> {after_b}");
                    last = after_b;
                }
            }
        }
    }

    #[test]
    fn run_estep_converges_and_is_a_fixed_point() {
        let inst = instance(10, 1, 0.8, 21);
        let mut state = VariationalState::new(10, 1, 1.0);
        let config = EstepConfig {
            track_elbo: true,
            ..EstepConfig::default()
        };
        let report = run_estep(&mut state, &inst.cache, &inst.net, &inst.observed, &inst.side, &config).unwrap();
        assert!(report.converged, "{report:?}");
        for w in report.elbo_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-6);
        }
        let before = state.clone();
        let again = run_estep(&mut state, &inst.cache, &inst.net, &inst.observed, &inst.side, &config).unwrap();
        assert_eq!(again.sweeps, 1);
        assert!((state.m_mean() - before.m_mean()).amax() < 1e-6);
    }

    #[test]
    fn unobserved_z_tracks_predictor_after_beta_update() {
        let inst = instance(6, 2, 0.6, 30);
        let mut state = VariationalState::new(6, 2, 1.0);
        run_estep(&mut state, &inst.cache, &inst.net, &inst.observed, &inst.side, &EstepConfig::default()).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let x = state.m_mean()[(i, j)] + state.p_mean()[(i, j)];
                if !inst.observed.get(i, j) {
                    assert!((state.z_mean()[(i, j)] - x).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn missing_entries_fixed_point_is_the_gp_posterior() {
        let n = 5;
        let inst = instance(n, 0, 0.6, 13);
        let k = inst.cache.reconstruct();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let z_obs = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let zero = DMatrix::zeros(n, n);
        let mut m = DMatrix::zeros(n, n);
        for _ in 0..5000 {
            let z = DMatrix::from_fn(n, n, |i, j| if inst.observed.get(i, j) { z_obs[(i, j)] } else { m[(i, j)] });
            m = update_m(&inst.cache, &z, &zero);
        }
        // column-stacked index a = i + n j, cov(m_ij, m_kl) = K_ik K_jl
        let obs: Vec<usize> = (0..n * n).filter(|a| inst.observed.get(a % n, a / n)).collect();
        let cov = |a: usize, b: usize| k[(a % n, b % n)] * k[(a / n, b / n)];
        let s_oo = DMatrix::from_fn(obs.len(), obs.len(), |r, c| cov(obs[r], obs[c]) + f64::from(u8::from(r == c)));
        let s_ao = DMatrix::from_fn(n * n, obs.len(), |a, c| cov(a, obs[c]));
        let zo = DVector::from_iterator(obs.len(), obs.iter().map(|&a| z_obs[(a % n, a / n)]));
        let dense = s_ao * s_oo.lu().solve(&zo).unwrap();
        let dense = DMatrix::from_column_slice(n, n, dense.as_slice());
        assert!((m - dense).amax() < 1e-10);
    }
}
