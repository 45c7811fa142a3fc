//! M-step: maximize the expected log prior of `<M>` over the membership
//! matrix, with an L1 penalty on the memberships.
//!
//! With `K = K(U) + jitter I` and the frozen cache `(V, D)` of the E-step
//! kernel, the smooth part is
//!
//! ```text
//! f(U) = -n log det K - 1/2 tr(K^-1 M K^-1 M^T) - 1/2 a^T D a,
//! a    = diag(V^T K^-1 V)
//! ```
//!
//! where the last term is `tr((K (x) K)^-1 Sigma_M)` without ever forming
//! an `n^2 x n^2` matrix. Every `dK/du_ir` is nonzero only in row and
//! column `i`, so the whole gradient is one `n x n` matrix `H` contracted
//! against the kernel derivative rows:
//!
//! ```text
//! df/du_ir = sum_q g_q H_qi,   g_q = -2 gamma (u_ir - u_qr) K_iq
//! H = -2n K^-1 + K^-1 S K^-1 + 2 K^-1 V diag(D a) V^T K^-1,
//! S = M K^-1 M^T + M^T K^-1 M
//! ```

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::kernel::{rbf_matrix, KernelParams, SpectralCache};
use crate::owlqn::{self, OwlqnConfig, SmoothObjective};

/// `d x n` memberships; column `i` is node `i`'s latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipMatrix {
    values: DMatrix<f64>,
}

impl MembershipMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::input("membership matrix must be nonempty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("membership matrix has non-finite entries"));
        }
        Ok(Self { values })
    }

    pub fn d(&self) -> usize {
        self.values.nrows()
    }

    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }
}

/// Everything the M-step holds fixed.
#[derive(Debug, Clone, Copy)]
pub struct MstepProblem<'a> {
    pub cache: &'a SpectralCache,
    pub m_mean: &'a DMatrix<f64>,
    pub lambda: f64,
    pub kernel: KernelParams,
    pub nonnegative: bool,
}

struct Factors {
    k: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `K^-1 V`
    kinv_v: DMatrix<f64>,
    /// `diag(V^T K^-1 V)`
    a: Vec<f64>,
}

impl MstepProblem<'_> {
    fn n(&self) -> usize {
        self.m_mean.nrows()
    }

    fn factor(&self, u: &MembershipMatrix) -> Result<Factors> {
        if u.n() != self.n() || self.cache.n() != self.n() {
            return Err(Error::input(format!(
                "membership matrix has {} nodes but the problem has {}",
                u.n(),
                self.n()
            )));
        }
        let k = rbf_matrix(u, self.kernel)?;
        let chol = k.clone().cholesky().ok_or_else(|| {
            Error::numeric(
                "mstep",
                format!(
                    "kernel matrix is not positive definite at jitter {:e}; increase the jitter",
                    self.kernel.jitter
                ),
            )
        })?;
        let v = self.cache.vectors();
        let kinv_v = chol.solve(v);
        let a = (0..v.ncols()).map(|c| v.column(c).dot(&kinv_v.column(c))).collect();
        Ok(Factors { k, chol, kinv_v, a })
    }

    fn value_from(&self, f: &Factors) -> f64 {
        let n = self.n() as f64;
        let log_det = 2.0 * f.chol.l_dirty().diagonal().map(f64::ln).sum();
        let left = f.chol.solve(self.m_mean);
        let right = f.chol.solve(&self.m_mean.transpose());
        // tr(K^-1 M K^-1 M^T) = sum_ij (K^-1 M)_ij (K^-1 M^T)_ji
        let trace_term = left.component_mul(&right.transpose()).sum();
        let dm = self.cache.shrinkage();
        let mut kron_term = 0.0;
        for (p, &ap) in f.a.iter().enumerate() {
            for (q, &aq) in f.a.iter().enumerate() {
                kron_term += ap * dm[(p, q)] * aq;
            }
        }
        -n * log_det - 0.5 * trace_term - 0.5 * kron_term
    }

    fn gradient_from(&self, u: &MembershipMatrix, f: &Factors) -> DMatrix<f64> {
        let n = self.n();
        let kinv = f.chol.inverse();
        let m = self.m_mean;
        let s = m * &kinv * m.transpose() + m.transpose() * &kinv * m;
        let mut h = &kinv * s * &kinv;
        h -= &kinv * (2.0 * n as f64);
        let w = self.cache.shrinkage() * nalgebra::DVector::from_column_slice(&f.a);
        let scaled = DMatrix::from_fn(n, w.len(), |i, c| f.kinv_v[(i, c)] * w[c]);
        h += scaled * f.kinv_v.transpose() * 2.0;

        let values = u.values();
        let gamma = self.kernel.gamma;
        DMatrix::from_fn(u.d(), n, |r, i| {
            let mut acc = 0.0;
            for q in 0..n {
                if q != i {
                    acc += -2.0 * gamma * (values[(r, i)] - values[(r, q)]) * f.k[(i, q)] * h[(q, i)];
                }
            }
            acc
        })
    }

    pub fn penalized_objective(&self, u: &MembershipMatrix) -> Result<f64> {
        Ok(smooth_objective(u, self)? - self.lambda * u.l1_norm())
    }
}

pub fn smooth_objective(u: &MembershipMatrix, prob: &MstepProblem) -> Result<f64> {
    let f = prob.factor(u)?;
    Ok(prob.value_from(&f))
}

/// `d x n` matrix of `df/du_ir` for the smooth part.
pub fn smooth_gradient(u: &MembershipMatrix, prob: &MstepProblem) -> Result<DMatrix<f64>> {
    let f = prob.factor(u)?;
    Ok(prob.gradient_from(u, &f))
}

pub fn smooth_value_and_gradient(u: &MembershipMatrix, prob: &MstepProblem) -> Result<(f64, DMatrix<f64>)> {
    let f = prob.factor(u)?;
    Ok((prob.value_from(&f), prob.gradient_from(u, &f)))
}

/// `tr((K^-1 (x) K^-1) Sigma_M) = a^T D a` at the candidate U.
pub fn kronecker_trace(u: &MembershipMatrix, prob: &MstepProblem) -> Result<f64> {
    let f = prob.factor(u)?;
    let dm = prob.cache.shrinkage();
    let mut total = 0.0;
    for (p, &ap) in f.a.iter().enumerate() {
        for (q, &aq) in f.a.iter().enumerate() {
            total += ap * dm[(p, q)] * aq;
        }
    }
    Ok(total)
}

/// Gradient of [`kronecker_trace`]: `-4 g^T (K^-1 V diag(D a) V^T K^-1)[:, i]`.
pub fn kronecker_trace_gradient(u: &MembershipMatrix, prob: &MstepProblem) -> Result<DMatrix<f64>> {
    let f = prob.factor(u)?;
    let n = prob.n();
    let w = prob.cache.shrinkage() * nalgebra::DVector::from_column_slice(&f.a);
    let scaled = DMatrix::from_fn(n, w.len(), |i, c| f.kinv_v[(i, c)] * w[c]);
    let c = scaled * f.kinv_v.transpose();
    let values = u.values();
    let gamma = prob.kernel.gamma;
    Ok(DMatrix::from_fn(u.d(), n, |r, i| {
        let mut acc = 0.0;
        for q in 0..n {
            if q != i {
                acc += -2.0 * gamma * (values[(r, i)] - values[(r, q)]) * f.k[(i, q)] * c[(q, i)];
            }
        }
        -4.0 * acc
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MstepOutcome {
    pub u: MembershipMatrix,
    /// `f(U) - lambda |U|_1` at the returned point.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Line search gave up; `u` is still the best iterate seen.
    pub line_search_warning: bool,
}

/// Negated smooth objective over the column-major flattening of U.
struct NegatedObjective<'a, 'b> {
    prob: &'a MstepProblem<'b>,
    d: usize,
    n: usize,
}

impl SmoothObjective for NegatedObjective<'_, '_> {
    fn dim(&self) -> usize {
        self.d * self.n
    }

    fn evaluate(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let u = MembershipMatrix::new(DMatrix::from_column_slice(self.d, self.n, x))?;
        let (value, grad) = smooth_value_and_gradient(&u, self.prob)?;
        Ok((-value, grad.iter().map(|g| -g).collect()))
    }
}

/// Maximizes `f(U) - lambda |U|_1` from `u0` by orthant-wise L-BFGS.
/// Exact zeros are produced by clipping at orthant boundaries; with
/// `nonnegative` the search never leaves the nonnegative orthant.
pub fn optimize_memberships(u0: &MembershipMatrix, prob: &MstepProblem, max_iter: usize) -> Result<MstepOutcome> {
    let (d, n) = (u0.d(), u0.n());
    let objective = NegatedObjective { prob, d, n };
    let config = OwlqnConfig {
        l1: prob.lambda,
        nonnegative: prob.nonnegative,
        max_iter,
        ..OwlqnConfig::default()
    };
    let out = owlqn::minimize(&objective, u0.values().as_slice(), &config)?;
    if out.line_search_failed {
        log::warn!("M-step line search stalled after {} iterations", out.iterations);
    }
    Ok(MstepOutcome {
        u: MembershipMatrix::new(DMatrix::from_column_slice(d, n, &out.x))?,
        objective: -out.value,
        iterations: out.iterations,
        converged: out.converged,
        line_search_warning: out.line_search_failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::spectral_decompose;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        cache: SpectralCache,
        m_mean: DMatrix<f64>,
        u: MembershipMatrix,
        kernel: KernelParams,
    }

    fn fixture(n: usize, d: usize, seed: u64) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernel = KernelParams::new(0.6, 1e-6).unwrap();
        let old = MembershipMatrix::new(DMatrix::from_fn(d, n, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let cache = spectral_decompose(&rbf_matrix(&old, kernel).unwrap(), None).unwrap();
        let m_mean = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let u = MembershipMatrix::new(DMatrix::from_fn(d, n, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        Fixture { cache, m_mean, u, kernel }
    }

    impl Fixture {
        fn problem(&self, lambda: f64) -> MstepProblem<'_> {
            MstepProblem {
                cache: &self.cache,
                m_mean: &self.m_mean,
                lambda,
                kernel: self.kernel,
                nonnegative: false,
            }
        }
    }

    /// Materializes every Kronecker product.
    fn dense_objective(u: &MembershipMatrix, fx: &Fixture) -> f64 {
        let n = u.n();
        let k = rbf_matrix(u, fx.kernel).unwrap();
        let kinv = k.clone().try_inverse().unwrap();
        let old = fx.cache.reconstruct();
        let kk_old = old.kronecker(&old);
        let sigma = &kk_old * (DMatrix::identity(n * n, n * n) + &kk_old).try_inverse().unwrap();
        let kron_trace = (kinv.kronecker(&kinv) * sigma).trace();
        let m = &fx.m_mean;
        -(n as f64) * k.determinant().ln() - 0.5 * (&kinv * m * &kinv * m.transpose()).trace() - 0.5 * kron_trace
    }

    #[test]
    fn objective_matches_dense_kronecker_evaluation() {
        for seed in 0..4 {
            let fx = fixture(6, 2, seed);
            let fast = smooth_objective(&fx.u, &fx.problem(0.0)).unwrap();
            let dense = dense_objective(&fx.u, &fx);
            assert!((fast - dense).abs() <= 1e-8 * dense.abs(), "seed {seed}: {fast} vs {dense}");
        }
    }

    #[test]
    fn kronecker_term_never_raises_objective() {
        let fx = fixture(5, 2, 3);
        let prob = fx.problem(0.0);
        let f = prob.factor(&fx.u).unwrap();
        let dm = fx.cache.shrinkage();
        let quad: f64 = (0..5).flat_map(|p| (0..5).map(move |q| (p, q))).map(|(p, q)| f.a[p] * dm[(p, q)] * f.a[q]).sum();
        assert!(quad >= 0.0);
        assert!(f.a.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..5 {
            let fx = fixture(6, 3, 100 + seed);
            let prob = fx.problem(0.0);
            let grad = smooth_gradient(&fx.u, &prob).unwrap();
            let h = 1e-5;
            let mut worst: f64 = 0.0;
            for r in 0..3 {
                for i in 0..6 {
                    let mut plus = fx.u.values().clone();
                    plus[(r, i)] += h;
                    let mut minus = fx.u.values().clone();
                    minus[(r, i)] -= h;
                    let fp = smooth_objective(&MembershipMatrix::new(plus).unwrap(), &prob).unwrap();
                    let fm = smooth_objective(&MembershipMatrix::new(minus).unwrap(), &prob).unwrap();
                    let fd = (fp - fm) / (2.0 * h);
                    worst = worst.max((grad[(r, i)] - fd).abs() / fd.abs().max(1.0));
                }
            }
            assert!(worst < 1e-4, "seed {seed}: relative error {worst}");
        }
    }

    #[test]
    fn zero_posterior_reduces_gradient_to_log_det_term() {
        let mut fx = fixture(5, 2, 8);
        fx.m_mean = DMatrix::zeros(5, 5);
        fx.cache = SpectralCache::from_parts(DMatrix::identity(5, 5), nalgebra::DVector::zeros(5)).unwrap();
        let prob = fx.problem(0.0);
        let grad = smooth_gradient(&fx.u, &prob).unwrap();
        let k = rbf_matrix(&fx.u, fx.kernel).unwrap();
        let kinv = k.try_inverse().unwrap();
        for r in 0..2 {
            for i in 0..5 {
                let g = crate::kernel::rbf_partial(&fx.u, fx.kernel, i, r).unwrap();
                // -n tr(K^-1 dK) with dK nonzero in row/col i
                let expected = -5.0 * 2.0 * kinv.column(i).dot(&g);
                assert!((grad[(r, i)] - expected).abs() < 1e-8 * expected.abs().max(1.0));
            }
        }
    }

    #[test]
    fn relabeling_nodes_leaves_value_unchanged() {
        let fx = fixture(6, 2, 4);
        let perm = [2, 5, 0, 3, 1, 4];
        let value = smooth_objective(&fx.u, &fx.problem(0.0)).unwrap();
        let grad = smooth_gradient(&fx.u, &fx.problem(0.0)).unwrap();
        let permuted = Fixture {
            cache: fx.cache.permuted(&perm),
            m_mean: DMatrix::from_fn(6, 6, |i, j| fx.m_mean[(perm[i], perm[j])]),
            u: MembershipMatrix::new(DMatrix::from_fn(2, 6, |r, i| fx.u.values()[(r, perm[i])])).unwrap(),
            kernel: fx.kernel,
        };
        let pv = smooth_objective(&permuted.u, &permuted.problem(0.0)).unwrap();
        assert!((pv - value).abs() <= 1e-10 * value.abs().max(1.0));
        let pg = smooth_gradient(&permuted.u, &permuted.problem(0.0)).unwrap();
        for r in 0..2 {
            for i in 0..6 {
                assert!((pg[(r, i)] - grad[(r, perm[i])]).abs() < 1e-8 * grad.amax().max(1.0));
            }
        }
    }

    #[test]
    fn mstep_never_lowers_penalized_objective() {
        for (seed, lambda) in [(1, 0.0), (2, 0.5), (3, 5.0)] {
            let fx = fixture(7, 2, seed);
            let prob = fx.problem(lambda);
            let before = prob.penalized_objective(&fx.u).unwrap();
            let out = optimize_memberships(&fx.u, &prob, 50).unwrap();
            assert!(out.objective >= before);
            let recomputed = prob.penalized_objective(&out.u).unwrap();
            assert!((recomputed - out.objective).abs() < 1e-9 * recomputed.abs().max(1.0));
            let again = optimize_memberships(&fx.u, &prob, 50).unwrap();
            assert_eq!(out, again);
        }
    }

    #[test]
    fn nonnegative_mstep_stays_nonnegative() {
        let fx = fixture(6, 3, 12);
        let mut prob = fx.problem(0.2);
        prob.nonnegative = true;
        let start = MembershipMatrix::new(fx.u.values().abs()).unwrap();
        let out = optimize_memberships(&start, &prob, 40).unwrap();
        assert!(out.u.values().iter().all(|&v| v >= 0.0));
    }
}
