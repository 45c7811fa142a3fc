//! Outer variational-EM loop, initialization, gamma selection and scoring.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::estep::{self, EstepConfig, VariationalState};
use crate::evaluation::auc;
use crate::kernel::{rbf_matrix, spectral_decompose, KernelParams, SpectralCache};
use crate::mstep::{optimize_memberships, MembershipMatrix, MstepProblem};
use crate::netdata::{ObservationMask, ObservedNetwork, SideInfo};
use crate::normal;

pub const DEFAULT_GAMMA_GRID: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

const INIT_SD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    /// Independent N(0, 0.1^2) entries.
    #[default]
    Random,
    /// Leading eigenvectors of the centred, symmetrised training adjacency.
    Spectral,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub d: usize,
    pub gamma: f64,
    /// Candidates for [`cross_validate_gamma`].
    pub gamma_grid: Vec<f64>,
    pub lambda: f64,
    pub sigma_beta_sq: f64,
    pub jitter: f64,
    /// Keep only the leading `rank` eigenpairs of K; `None` keeps all.
    pub rank: Option<usize>,
    pub tol_e: f64,
    pub tol_outer: f64,
    pub max_e: usize,
    pub max_outer: usize,
    pub max_mstep: usize,
    pub seed: u64,
    pub nonnegative: bool,
    /// Whether self-pairs are modeled when reading a dense matrix.
    pub include_diagonal: bool,
    pub init: InitMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            d: 3,
            gamma: 1.0,
            gamma_grid: DEFAULT_GAMMA_GRID.to_vec(),
            lambda: 0.1,
            sigma_beta_sq: 1.0,
            jitter: 1e-6,
            rank: None,
            tol_e: 1e-6,
            tol_outer: 1e-4,
            max_e: 200,
            max_outer: 50,
            max_mstep: 100,
            seed: 0,
            nonnegative: false,
            include_diagonal: true,
            init: InitMode::Spectral,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("d must be at least 1".into()));
        }
        for (name, v) in [("tol_e", self.tol_e), ("tol_outer", self.tol_outer)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("max_e", self.max_e), ("max_outer", self.max_outer), ("max_mstep", self.max_mstep)] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if !(self.sigma_beta_sq > 0.0 && self.sigma_beta_sq.is_finite()) {
            return Err(Error::Config(format!("sigma_beta_sq must be positive, got {}", self.sigma_beta_sq)));
        }
        if self.rank == Some(0) {
            return Err(Error::Config("rank must be at least 1 when given".into()));
        }
        KernelParams::new(self.gamma, self.jitter).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    fn kernel(&self) -> Result<KernelParams> {
        KernelParams::new(self.gamma, self.jitter)
    }
}

/// One outer EM iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Penalized M-step objective `f(U) - lambda |U|_1` after the M-step.
    pub objective: f64,
    /// Evidence bound after the E-step at this iteration's U, minus the
    /// L1 penalty on that U.
    pub elbo: f64,
    pub estep_sweeps: usize,
    pub estep_converged: bool,
    pub mstep_iterations: usize,
    pub line_search_warning: bool,
    /// Max-abs change of U made by the M-step.
    pub max_change: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub u: MembershipMatrix,
    pub m_mean: DMatrix<f64>,
    pub beta_mean: DVector<f64>,
    pub config: FitConfig,
    pub diagnostics: Vec<IterationRecord>,
    pub converged: bool,
}

/// Random or spectral starting memberships (`d x n`). Spectral mode reads
/// `spectral_source`; pass the training-masked network so held-out labels
/// stay unseen.
pub fn init_memberships(
    n: usize,
    d: usize,
    seed: u64,
    mode: InitMode,
    spectral_source: Option<&ObservedNetwork>,
    nonnegative: bool,
) -> Result<MembershipMatrix> {
    if n == 0 || d == 0 {
        return Err(Error::input(format!("need positive n and d, got n={n}, d={d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_SD).expect("fixed positive sd");
    let mut values = DMatrix::from_fn(d, n, |_, _| normal.sample(&mut rng));

    if mode == InitMode::Spectral {
        let net = spectral_source.ok_or_else(|| Error::input("spectral initialization needs a network"))?;
        if net.n() != n {
            return Err(Error::input(format!("network has {} nodes, expected {n}", net.n())));
        }
        let a = net.to_matrix();
        let mut sym = (&a + a.transpose()) * 0.5;
        let mean = sym.mean();
        sym.add_scalar_mut(-mean);
        let eig = SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
        // rows beyond n eigenvectors keep their random draw
        for (r, &k) in order.iter().take(d).enumerate() {
            let col = eig.eigenvectors.column(k);
            let mu = col.mean();
            let sd = (col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64).sqrt();
            if sd > 1e-12 {
                for i in 0..n {
                    values[(r, i)] = col[i] * INIT_SD / sd;
                }
            }
        }
    }
    if nonnegative {
        match mode {
            InitMode::Random => values.apply(|v| *v = v.abs()),
            // the kernel only sees differences, so shifting rows keeps K
            // where absolute values would merge groups of opposite sign
            InitMode::Spectral => {
                for mut row in values.row_iter_mut() {
                    let lo = row.min();
                    row.add_scalar_mut(-lo.min(0.0));
                }
            }
        }
    }
    MembershipMatrix::new(values)
}

/// Copy of `net` with every pair outside `train` zeroed.
pub fn masked_network(net: &ObservedNetwork, train: &ObservationMask) -> Result<ObservedNetwork> {
    let n = net.n();
    let keep = train.indicator();
    let adjacency = (0..n * n)
        .map(|idx| if keep.get(idx / n, idx % n) { net.get(idx / n, idx % n) } else { 0 })
        .collect();
    ObservedNetwork::new(n, adjacency, net.directed(), net.include_diagonal())
}

fn check_inputs(net: &ObservedNetwork, train: &ObservationMask, side: &SideInfo) -> Result<()> {
    if train.is_empty() {
        return Err(Error::input("training mask is empty"));
    }
    if train.n() != net.n() || side.n() != net.n() {
        return Err(Error::input(format!(
            "network has {} nodes but mask has {} and side information {}",
            net.n(),
            train.n(),
            side.n()
        )));
    }
    if let Some(&(i, j)) = train.pairs().iter().find(|&&(i, j)| !net.is_modeled(i, j)) {
        return Err(Error::input(format!("training pair ({i}, {j}) is not a modeled pair")));
    }
    Ok(())
}

fn decompose(u: &MembershipMatrix, config: &FitConfig, label: &str) -> Result<SpectralCache> {
    let k = rbf_matrix(u, config.kernel()?).map_err(|e| e.within(label))?;
    spectral_decompose(&k, config.rank).map_err(|e| e.within(label))
}

/// Alternates E-step and M-step from a seeded start until U moves less
/// than `tol_outer` or `max_outer` iterations pass, then runs a last E-step
/// so that `<M>` belongs to the returned U.
pub fn fit(net: &ObservedNetwork, train: &ObservationMask, side: &SideInfo, config: &FitConfig) -> Result<FittedModel> {
    config.validate()?;
    check_inputs(net, train, side)?;
    let n = net.n();
    let kernel = config.kernel()?;
    let observed = train.indicator();
    let source = match config.init {
        InitMode::Spectral => Some(masked_network(net, train)?),
        InitMode::Random => None,
    };
    let mut u = init_memberships(n, config.d, config.seed, config.init, source.as_ref(), config.nonnegative)?;
    let mut state = VariationalState::new(n, side.p(), config.sigma_beta_sq);
    let ecfg = EstepConfig {
        tol: config.tol_e,
        max_sweeps: config.max_e,
        sigma_beta_sq: config.sigma_beta_sq,
        track_elbo: false,
    };

    let mut diagnostics = Vec::new();
    let mut converged = false;
    for iteration in 1..=config.max_outer {
        let started = Instant::now();
        let label = format!("iteration {iteration}");
        let cache = decompose(&u, config, &format!("{label}/kernel"))?;
        let report = estep::run_estep(&mut state, &cache, net, &observed, side, &ecfg)
            .map_err(|e| e.within(&format!("{label}/estep")))?;
        let bound = estep::elbo(&state, &cache, net, &observed, side, config.sigma_beta_sq) - config.lambda * u.l1_norm();

        let prob = MstepProblem {
            cache: &cache,
            m_mean: state.m_mean(),
            lambda: config.lambda,
            kernel,
            nonnegative: config.nonnegative,
        };
        let out = optimize_memberships(&u, &prob, config.max_mstep).map_err(|e| e.within(&format!("{label}/mstep")))?;
        let max_change = (out.u.values() - u.values()).amax();
        u = out.u;
        diagnostics.push(IterationRecord {
            iteration,
            objective: out.objective,
            elbo: bound,
            estep_sweeps: report.sweeps,
            estep_converged: report.converged,
            mstep_iterations: out.iterations,
            line_search_warning: out.line_search_warning,
            max_change,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::debug!("{label}: f={:.6} bound={bound:.6} change={max_change:.3e}", out.objective);
        if max_change < config.tol_outer {
            converged = true;
            break;
        }
    }

    let cache = decompose(&u, config, "final/kernel")?;
    estep::run_estep(&mut state, &cache, net, &observed, side, &ecfg).map_err(|e| e.within("final/estep"))?;
    Ok(FittedModel {
        m_mean: state.m_mean().clone(),
        beta_mean: state.beta_mean().clone(),
        u,
        config: config.clone(),
        diagnostics,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub i: usize,
    pub j: usize,
    /// `<m_ij> + <beta>^T r_ij`
    pub score: f64,
    /// `Phi(score)`
    pub probability: f64,
}

pub fn score_pairs(model: &FittedModel, side: &SideInfo, pairs: &[(usize, usize)]) -> Result<Vec<PairScore>> {
    let n = model.m_mean.nrows();
    if side.p() != model.beta_mean.len() || side.n() != n {
        return Err(Error::input(format!(
            "side information is {} nodes x {} features but the model expects {n} x {}",
            side.n(),
            side.p(),
            model.beta_mean.len()
        )));
    }
    pairs
        .iter()
        .map(|&(i, j)| {
            if i >= n || j >= n {
                return Err(Error::input(format!("pair ({i}, {j}) out of range for {n} nodes")));
            }
            let linear: f64 = side.features(i, j).iter().zip(model.beta_mean.iter()).map(|(r, b)| r * b).sum();
            let score = model.m_mean[(i, j)] + linear;
            Ok(PairScore {
                i,
                j,
                score,
                probability: normal::cdf(score),
            })
        })
        .collect()
}

/// AUC of the model's scores on `pairs` against the network's labels.
pub fn pair_auc(model: &FittedModel, net: &ObservedNetwork, side: &SideInfo, pairs: &[(usize, usize)]) -> Result<f64> {
    let scores: Vec<f64> = score_pairs(model, side, pairs)?.iter().map(|s| s.score).collect();
    let labels: Vec<u8> = pairs.iter().map(|&(i, j)| net.get(i, j)).collect();
    auc(&scores, &labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaSelection {
    pub gamma: f64,
    /// `(gamma, validation AUC)` for every grid value that fit.
    pub table: Vec<(f64, f64)>,
    /// Grid values that failed, with the error text.
    pub failures: Vec<(f64, String)>,
    /// Refit on the whole training mask at the chosen gamma.
    pub model: FittedModel,
}

/// Picks gamma from `config.gamma_grid` by validation AUC on a seeded
/// 80/20 split of `train`, breaking ties toward the smaller gamma.
pub fn cross_validate_gamma(
    net: &ObservedNetwork,
    train: &ObservationMask,
    side: &SideInfo,
    config: &FitConfig,
) -> Result<GammaSelection> {
    if config.gamma_grid.is_empty() {
        return Err(Error::Config("gamma grid is empty".into()));
    }
    check_inputs(net, train, side)?;
    let (inner_train, validation) = train.split(0.8, config.seed)?;
    let mut grid = config.gamma_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut table = Vec::new();
    let mut failures = Vec::new();
    for &gamma in &grid {
        let candidate = FitConfig {
            gamma,
            ..config.clone()
        };
        let outcome = fit(net, &inner_train, side, &candidate).and_then(|m| pair_auc(&m, net, side, validation.pairs()));
        match outcome {
            Ok(value) => table.push((gamma, value)),
            Err(e) => {
                log::warn!("gamma {gamma}: {e}");
                failures.push((gamma, e.to_string()));
            }
        }
    }
    // grid is ascending, so the first maximum is the smallest gamma
    let best = table
        .iter()
        .fold(None::<(f64, f64)>, |acc, &(g, a)| match acc {
            Some((_, best_auc)) if a <= best_auc => acc,
            _ => Some((g, a)),
        })
        .ok_or_else(|| {
            let reasons: Vec<String> = failures.iter().map(|(g, e)| format!("gamma {g}: {e}")).collect();
            Error::input(format!("every gamma failed: {}", reasons.join("; ")))
        })?;
    let chosen = FitConfig {
        gamma: best.0,
        ..config.clone()
    };
    let model = fit(net, train, side, &chosen)?;
    Ok(GammaSelection {
        gamma: best.0,
        table,
        failures,
        model,
    })
}
