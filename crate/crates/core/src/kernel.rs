//! Isotropic RBF covariance over membership vectors and the spectral cache
//! that makes the Kronecker-structured posterior cheap.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::mstep::MembershipMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub gamma: f64,
    pub jitter: f64,
}

impl KernelParams {
    pub fn new(gamma: f64, jitter: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::input(format!("gamma must be positive, got {gamma}")));
        }
        if !(jitter.is_finite() && jitter >= 0.0) {
            return Err(Error::input(format!("jitter must be nonnegative, got {jitter}")));
        }
        Ok(Self { gamma, jitter })
    }
}

/// `K_ij = exp(-gamma * |u_i - u_j|^2)` with `jitter` added on the diagonal.
pub fn rbf_matrix(u: &MembershipMatrix, params: KernelParams) -> Result<DMatrix<f64>> {
    let values = u.values();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("rbf_matrix", "membership matrix has non-finite entries"));
    }
    let n = u.n();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0 + params.jitter;
        let ui = values.column(i);
        for j in (i + 1)..n {
            let sq = (ui - values.column(j)).norm_squared();
            let v = (-params.gamma * sq).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Row `i` of `dK/du_ir`. The full derivative is the symmetric matrix whose
/// row and column `i` equal the returned vector and which is zero elsewhere.
pub fn rbf_partial(u: &MembershipMatrix, params: KernelParams, i: usize, r: usize) -> Result<DVector<f64>> {
    let (d, n) = (u.d(), u.n());
    if i >= n || r >= d {
        return Err(Error::input(format!(
            "partial index (node {i}, dim {r}) outside {d}x{n} membership matrix"
        )));
    }
    let values = u.values();
    let ui = values.column(i);
    Ok(DVector::from_fn(n, |j, _| {
        if j == i {
            return 0.0;
        }
        let sq = (ui - values.column(j)).norm_squared();
        -2.0 * params.gamma * (values[(r, i)] - values[(r, j)]) * (-params.gamma * sq).exp()
    }))
}

/// Leading eigenpairs of a kernel matrix together with the shrinkage
/// matrix `D_ab = l_a l_b / (1 + l_a l_b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCache {
    vectors: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    shrinkage: DMatrix<f64>,
}

impl SpectralCache {
    /// `n x m`, orthonormal columns.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    /// Non-increasing, nonnegative.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn shrinkage(&self) -> &DMatrix<f64> {
        &self.shrinkage
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n(&self) -> usize {
        self.vectors.nrows()
    }

    /// `V diag(l) V^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.n(), self.rank(), |i, a| self.vectors[(i, a)] * self.eigenvalues[a]);
        &scaled * self.vectors.transpose()
    }

    /// Relabels nodes: row `i` of the result is row `perm[i]` of `V`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let vectors = DMatrix::from_fn(self.n(), self.rank(), |i, a| self.vectors[(perm[i], a)]);
        Self {
            vectors,
            eigenvalues: self.eigenvalues.clone(),
            shrinkage: self.shrinkage.clone(),
        }
    }

    pub fn from_parts(vectors: DMatrix<f64>, eigenvalues: DVector<f64>) -> Result<Self> {
        if vectors.ncols() != eigenvalues.len() {
            return Err(Error::input("eigenvector and eigenvalue counts differ"));
        }
        if eigenvalues.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::input("eigenvalues must be finite and nonnegative"));
        }
        let m = eigenvalues.len();
        let shrinkage = DMatrix::from_fn(m, m, |a, b| {
            let prod = eigenvalues[a] * eigenvalues[b];
            prod / (1.0 + prod)
        });
        Ok(Self {
            vectors,
            eigenvalues,
            shrinkage,
        })
    }
}

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;
/// Eigenvalues below this fraction of the largest are treated as zero.
const CLAMP_RATIO: f64 = 1e-12;

/// Eigendecomposition of a symmetric kernel keeping the `rank` largest
/// eigenpairs (all of them when `rank` is `None`). The full decomposition
/// is computed and then truncated.
pub fn spectral_decompose(k: &DMatrix<f64>, rank: Option<usize>) -> Result<SpectralCache> {
    let n = k.nrows();
    if n == 0 || k.ncols() != n {
        return Err(Error::input(format!("kernel must be square and nonempty, got {}x{}", n, k.ncols())));
    }
    let m = rank.unwrap_or(n);
    if m == 0 || m > n {
        return Err(Error::input(format!("rank {m} outside 1..={n}")));
    }
    let Some(eig) = SymmetricEigen::try_new(k.clone(), EIGEN_EPS, EIGEN_MAX_ITER) else {
        let diag = k.diagonal();
        return Err(Error::numeric(
            "spectral_decompose",
            format!(
                "eigensolver did not converge (n = {n}, frobenius norm {:.3e}, diagonal range [{:.3e}, {:.3e}])",
                k.norm(),
                diag.min(),
                diag.max()
            ),
        ));
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order.truncate(m);

    let top = eig.eigenvalues[order[0]].max(0.0);
    let floor = CLAMP_RATIO * top;
    let eigenvalues = DVector::from_iterator(
        m,
        order.iter().map(|&idx| {
            let l = eig.eigenvalues[idx];
            if l < floor {
                0.0
            } else {
                l
            }
        }),
    );
    let mut vectors = DMatrix::zeros(n, m);
    for (col, &idx) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(idx));
    }
    SpectralCache::from_parts(vectors, eigenvalues)
}
