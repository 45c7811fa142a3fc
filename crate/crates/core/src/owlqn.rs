//! Orthant-wise limited-memory quasi-Newton for
//! `min_x f(x) + l1 * |x|_1`, optionally restricted to `x >= 0`.
//!
//! Steps follow the pseudo-gradient, search directions are projected onto
//! the orthant they start in, and trial points that cross an orthant
//! boundary are clipped to zero. The line search only accepts points that
//! lower the penalized objective, so iterates are monotone.

use std::collections::VecDeque;

use crate::error::Result;

/// A differentiable objective to be minimized.
pub trait SmoothObjective {
    fn dim(&self) -> usize;

    /// Value and gradient at `x`.
    fn evaluate(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OwlqnConfig {
    pub l1: f64,
    pub nonnegative: bool,
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once the pseudo-gradient 2-norm is below `grad_tol * sqrt(dim)`.
    pub grad_tol: f64,
    pub max_backtracks: usize,
    /// Armijo constant of the sufficient-decrease test.
    pub armijo: f64,
}

impl Default for OwlqnConfig {
    fn default() -> Self {
        Self {
            l1: 0.0,
            nonnegative: false,
            memory: 10,
            max_iter: 100,
            grad_tol: 1e-5,
            max_backtracks: 40,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OwlqnOutcome {
    pub x: Vec<f64>,
    /// Penalized objective at `x`.
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The last line search ran out of backtracks; `x` is the best iterate.
    pub line_search_failed: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l1_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

fn pseudo_gradient(x: &[f64], grad: &[f64], l1: f64, nonnegative: bool) -> Vec<f64> {
    x.iter()
        .zip(grad)
        .map(|(&xi, &gi)| {
            if xi > 0.0 {
                gi + l1
            } else if xi < 0.0 {
                gi - l1
            } else if gi + l1 < 0.0 {
                gi + l1
            } else if gi - l1 > 0.0 && !nonnegative {
                gi - l1
            } else {
                0.0
            }
        })
        .collect()
}

/// Two-loop recursion: returns `-H * pg`.
fn quasi_newton_direction(pg: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let mut q: Vec<f64> = pg.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y) in history.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let alpha = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= alpha * yi;
        }
        alphas.push((alpha, rho));
    }
    if let Some((s, y)) = history.back() {
        let scale = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= scale);
    }
    for ((s, y), (alpha, rho)) in history.iter().zip(alphas.into_iter().rev()) {
        let beta = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (alpha - beta) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

pub fn minimize<O: SmoothObjective + ?Sized>(objective: &O, x0: &[f64], config: &OwlqnConfig) -> Result<OwlqnOutcome> {
    let dim = objective.dim();
    assert_eq!(x0.len(), dim, "starting point has wrong dimension");
    let mut x: Vec<f64> = if config.nonnegative {
        x0.iter().map(|v| v.max(0.0)).collect()
    } else {
        x0.to_vec()
    };
    let (start_smooth, mut grad) = objective.evaluate(&x)?;
    let mut value = start_smooth + config.l1 * l1_norm(&x);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(config.memory);
    let stop_norm = config.grad_tol * (dim as f64).sqrt();

    let mut iterations = 0;
    let mut line_search_failed = false;
    let mut converged = false;
    while iterations < config.max_iter {
        let pg = pseudo_gradient(&x, &grad, config.l1, config.nonnegative);
        if dot(&pg, &pg).sqrt() <= stop_norm {
            converged = true;
            break;
        }
        let mut direction = quasi_newton_direction(&pg, &history);
        for (di, &gi) in direction.iter_mut().zip(&pg) {
            if *di * gi >= 0.0 {
                *di = 0.0;
            }
        }
        if direction.iter().all(|&v| v == 0.0) {
            // quasi-Newton model disagrees everywhere; restart from steepest descent
            history.clear();
            direction = pg.iter().map(|v| -v).collect();
        }
        let orthant: Vec<f64> = x
            .iter()
            .zip(&pg)
            .map(|(&xi, &gi)| if xi != 0.0 { xi.signum() } else { -gi.signum() })
            .collect();

        let mut step = if history.is_empty() {
            1.0 / dot(&direction, &direction).sqrt().max(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..config.max_backtracks {
            let trial: Vec<f64> = x
                .iter()
                .zip(&direction)
                .zip(&orthant)
                .map(|((&xi, &di), &oi)| {
                    let v = xi + step * di;
                    if v * oi <= 0.0 || (config.nonnegative && v < 0.0) {
                        0.0
                    } else {
                        v
                    }
                })
                .collect();
            if let Ok((trial_smooth, trial_grad)) = objective.evaluate(&trial) {
                let trial_value = trial_smooth + config.l1 * l1_norm(&trial);
                let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                let decrease = dot(&pg, &moved);
                if trial_value.is_finite() && trial_value <= value + config.armijo * decrease && trial_value <= value {
                    accepted = Some((trial, trial_grad, trial_value));
                    break;
                }
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some((trial, trial_grad, trial_value)) = accepted else {
            line_search_failed = true;
            break;
        };

        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if history.len() == config.memory {
                history.pop_front();
            }
            history.push_back((s, y));
        }
        let improvement = value - trial_value;
        x = trial;
        grad = trial_grad;
        value = trial_value;
        if improvement <= 1e-15 * value.abs().max(1.0) {
            converged = dot(&pg, &pg).sqrt() <= stop_norm;
            break;
        }
    }
    if !converged && !line_search_failed && iterations >= config.max_iter {
        let pg = pseudo_gradient(&x, &grad, config.l1, config.nonnegative);
        converged = dot(&pg, &pg).sqrt() <= stop_norm;
    }
    Ok(OwlqnOutcome {
        x,
        value,
        iterations,
        converged,
        line_search_failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `0.5 x^T A x - b^T x`.
    struct Quadratic {
        a: DMatrix<f64>,
        b: DVector<f64>,
    }

    impl SmoothObjective for Quadratic {
        fn dim(&self) -> usize {
            self.b.len()
        }

        fn evaluate(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
            let x = DVector::from_column_slice(x);
            let ax = &self.a * &x;
            Ok((0.5 * x.dot(&ax) - self.b.dot(&x), (ax - &self.b).as_slice().to_vec()))
        }
    }

    fn random_quadratic(dim: usize, seed: u64) -> Quadratic {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        let a = g.transpose() * &g + DMatrix::identity(dim, dim) * 0.5;
        let b = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
        Quadratic { a, b }
    }

    fn soft_threshold(v: f64, t: f64) -> f64 {
        v.signum() * (v.abs() - t).max(0.0)
    }

    #[test]
    fn unpenalized_quadratic_reaches_closed_form() {
        for seed in 0..5 {
            let q = random_quadratic(12, seed);
            let exact = q.a.clone().lu().solve(&q.b).unwrap();
            let cfg = OwlqnConfig {
                grad_tol: 1e-10,
                max_iter: 500,
                ..OwlqnConfig::default()
            };
            let out = minimize(&q, &[0.0; 12], &cfg).unwrap();
            let err = (DVector::from_vec(out.x) - exact).amax();
            assert!(err < 1e-6, "seed {seed}: {err}");
        }
    }

    #[test]
    fn diagonal_lasso_matches_soft_threshold() {
        let diag = [2.0, 1.0, 0.5, 3.0, 1.5, 1.0];
        let b = [3.0, -0.2, 0.4, -4.0, 0.1, 1.2];
        let q = Quadratic {
            a: DMatrix::from_diagonal(&DVector::from_row_slice(&diag)),
            b: DVector::from_row_slice(&b),
        };
        let l1 = 0.5;
        let cfg = OwlqnConfig {
            l1,
            grad_tol: 1e-12,
            max_iter: 500,
            ..OwlqnConfig::default()
        };
        let out = minimize(&q, &[1.0; 6], &cfg).unwrap();
        for k in 0..6 {
            let expected = soft_threshold(b[k], l1) / diag[k];
            assert!((out.x[k] - expected).abs() < 1e-8, "coord {k}: {} vs {expected}", out.x[k]);
        }

        let nonneg = minimize(&q, &[1.0; 6], &OwlqnConfig { nonnegative: true, ..cfg }).unwrap();
        for k in 0..6 {
            let expected = (b[k] - l1).max(0.0) / diag[k];
            assert!((nonneg.x[k] - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn subgradient_optimality_on_coupled_problem() {
        let q = random_quadratic(10, 77);
        let l1 = 0.8;
        let cfg = OwlqnConfig {
            l1,
            grad_tol: 1e-9,
            max_iter: 1000,
            ..OwlqnConfig::default()
        };
        let x0 = vec![0.3; 10];
        let out = minimize(&q, &x0, &cfg).unwrap();
        let (_, g) = q.evaluate(&out.x).unwrap();
        assert!(out.x.contains(&0.0));
        for (xi, gi) in out.x.iter().zip(&g) {
            if *xi == 0.0 {
                assert!(gi.abs() <= l1 + 1e-6);
            } else {
                assert!((gi + l1 * xi.signum()).abs() <= 1e-4);
            }
        }
        let (start, _) = q.evaluate(&x0).unwrap();
        assert!(out.value <= start + l1 * l1_norm(&x0));
    }

    #[test]
    fn larger_penalty_never_grows_l1_norm() {
        let q = random_quadratic(8, 5);
        let mut previous = f64::INFINITY;
        for l1 in [0.0, 0.1, 0.5, 1.0, 2.0, 5.0] {
            let cfg = OwlqnConfig {
                l1,
                grad_tol: 1e-11,
                max_iter: 1000,
                ..OwlqnConfig::default()
            };
            let out = minimize(&q, &[0.5; 8], &cfg).unwrap();
            let norm = l1_norm(&out.x);
            assert!(norm <= previous + 1e-8, "l1 {l1}: {norm} > {previous}");
            previous = norm;
        }
    }

    #[test]
    fn monotone_from_any_start() {
        struct Recorder<'a> {
            inner: &'a Quadratic,
        }
        impl SmoothObjective for Recorder<'_> {
            fn dim(&self) -> usize {
                self.inner.dim()
            }
            fn evaluate(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
                self.inner.evaluate(x)
            }
        }
        let q = random_quadratic(6, 1);
        let mut x = vec![-2.0, 1.0, 0.0, 4.0, -1.0, 0.5];
        let mut last = {
            let (f, _) = q.evaluate(&x).unwrap();
            f + 0.3 * l1_norm(&x)
        };
        for _ in 0..20 {
            let cfg = OwlqnConfig {
                l1: 0.3,
                max_iter: 1,
                ..OwlqnConfig::default()
            };
            let out = minimize(&Recorder { inner: &q }, &x, &cfg).unwrap();
            assert!(out.value <= last + 1e-12);
            last = out.value;
            x = out.x;
        }
    }
}
