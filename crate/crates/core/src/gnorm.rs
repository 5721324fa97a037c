//! Finding critical points of analytic functions by minimizing the squared
//! gradient norm, with Newton's method and plain gradient descent as
//! comparators.
//!
//! `|∇f|²` has gradient `2 ∇²f ∇f`, so its minima include every critical
//! point of `f` (saddles too) but also every point where the Hessian
//! annihilates a nonzero gradient.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_CLASSIFY_TOL: f64 = 1e-6;
pub const DIVERGENCE_RADIUS: f64 = 1e8;
pub const SINGULAR_CONDITION: f64 = 1e12;
const MAX_HALVINGS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GnormError {
    #[error("iterate left the ball of radius {radius:e} at iteration {iteration}")]
    Divergence {
        iteration: usize,
        radius: f64,
        trajectory: Vec<Vec<f64>>,
    },
    #[error("Hessian singular at iteration {iteration} (condition estimate {condition:e})")]
    SingularHessian {
        iteration: usize,
        condition: f64,
        trajectory: Vec<Vec<f64>>,
    },
    #[error("step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("starting point has dimension {got}, function expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("unknown test function {0:?}")]
    UnknownFunction(String),
}

pub trait TestFunction {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Row-major `dim x dim`.
    fn hessian(&self, x: &[f64]) -> Vec<f64>;
}

/// The fixed test gallery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Gallery {
    /// `Σ x_i²`
    Bowl { dim: usize },
    /// `x² - y²`
    Saddle,
    /// `x³ + x`
    CubicLinear,
    /// `(1 - x)² + 100 (y - x²)²`
    Rosenbrock,
    /// `½ (x² + 100 y²)`
    IllConditioned,
}

impl Gallery {
    pub fn name(&self) -> &'static str {
        match self {
            Gallery::Bowl { .. } => "bowl",
            Gallery::Saddle => "saddle",
            Gallery::CubicLinear => "cubic-linear",
            Gallery::Rosenbrock => "rosenbrock",
            Gallery::IllConditioned => "ill-conditioned",
        }
    }

    pub fn all(bowl_dim: usize) -> [Gallery; 5] {
        [
            Gallery::Bowl { dim: bowl_dim },
            Gallery::Saddle,
            Gallery::CubicLinear,
            Gallery::Rosenbrock,
            Gallery::IllConditioned,
        ]
    }
}

impl fmt::Display for Gallery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses a gallery name; `bowl` defaults to one dimension (`bowl:3` for more).
impl FromStr for Gallery {
    type Err = GnormError;

    fn from_str(s: &str) -> Result<Self, GnormError> {
        let unknown = || GnormError::UnknownFunction(s.to_string());
        match s {
            "saddle" => Ok(Gallery::Saddle),
            "cubic-linear" => Ok(Gallery::CubicLinear),
            "rosenbrock" => Ok(Gallery::Rosenbrock),
            "ill-conditioned" => Ok(Gallery::IllConditioned),
            "bowl" => Ok(Gallery::Bowl { dim: 1 }),
            _ => match s.strip_prefix("bowl:").map(str::parse::<usize>) {
                Some(Ok(dim)) if dim > 0 => Ok(Gallery::Bowl { dim }),
                _ => Err(unknown()),
            },
        }
    }
}

impl TestFunction for Gallery {
    fn dim(&self) -> usize {
        match *self {
            Gallery::Bowl { dim } => dim,
            Gallery::CubicLinear => 1,
            _ => 2,
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        match self {
            Gallery::Bowl { .. } => x.iter().map(|v| v * v).sum(),
            Gallery::Saddle => x[0] * x[0] - x[1] * x[1],
            Gallery::CubicLinear => x[0].powi(3) + x[0],
            Gallery::Rosenbrock => (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            Gallery::IllConditioned => 0.5 * (x[0] * x[0] + 100.0 * x[1] * x[1]),
        }
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Gallery::Bowl { .. } => x.iter().map(|v| 2.0 * v).collect(),
            Gallery::Saddle => vec![2.0 * x[0], -2.0 * x[1]],
            Gallery::CubicLinear => vec![3.0 * x[0] * x[0] + 1.0],
            Gallery::Rosenbrock => {
                let w = x[1] - x[0] * x[0];
                vec![-2.0 * (1.0 - x[0]) - 400.0 * x[0] * w, 200.0 * w]
            }
            Gallery::IllConditioned => vec![x[0], 100.0 * x[1]],
        }
    }

    fn hessian(&self, x: &[f64]) -> Vec<f64> {
        match *self {
            Gallery::Bowl { dim } => {
                let mut h = vec![0.0; dim * dim];
                for i in 0..dim {
                    h[i * dim + i] = 2.0;
                }
                h
            }
            Gallery::Saddle => vec![2.0, 0.0, 0.0, -2.0],
            Gallery::CubicLinear => vec![6.0 * x[0]],
            Gallery::Rosenbrock => {
                let off = -400.0 * x[0];
                vec![2.0 - 400.0 * x[1] + 1200.0 * x[0] * x[0], off, off, 200.0]
            }
            Gallery::IllConditioned => vec![1.0, 0.0, 0.0, 100.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterOptions {
    pub step: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for IterOptions {
    fn default() -> Self {
        Self {
            step: 0.1,
            max_iters: 100_000,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Run {
    /// Starting point first, terminal point last.
    pub trajectory: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Step in effect at termination (after any halving).
    pub final_step: f64,
}

impl Run {
    pub fn terminal(&self) -> &[f64] {
        self.trajectory.last().expect("trajectory holds the start")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criticality {
    TrueCritical,
    SpuriousGnormCritical,
    NotCritical,
}

impl Criticality {
    pub fn name(self) -> &'static str {
        match self {
            Criticality::TrueCritical => "TrueCritical",
            Criticality::SpuriousGnormCritical => "SpuriousGnormCritical",
            Criticality::NotCritical => "NotCritical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Gnorm,
    Newton,
    GradientDescent,
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gnorm" => Ok(Method::Gnorm),
            "newton" => Ok(Method::Newton),
            "gd" => Ok(Method::GradientDescent),
            other => Err(format!("unknown method {other:?} (expected gnorm, newton or gd)")),
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn hess_times(h: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| (0..n).map(|j| h[i * n + j] * v[j]).sum()).collect()
}

fn gnorm_direction<F: TestFunction + ?Sized>(f: &F, x: &[f64]) -> Vec<f64> {
    hess_times(&f.hessian(x), &f.gradient(x))
}

fn check_start<F: TestFunction + ?Sized>(f: &F, x0: &[f64], step: f64) -> Result<(), GnormError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(GnormError::InvalidStep(step));
    }
    if x0.len() != f.dim() {
        return Err(GnormError::Dimension {
            expected: f.dim(),
            got: x0.len(),
        });
    }
    Ok(())
}

fn diverged(x: &[f64]) -> bool {
    !(norm(x) <= DIVERGENCE_RADIUS)
}

/// Descent on `|∇f|²` along `-∇²f ∇f`, halving the step (for the rest of the
/// run) whenever a step would increase `|∇f|²`. Stops once `|∇²f ∇f| < tol`.
pub fn gnorm_descent<F: TestFunction + ?Sized>(f: &F, x0: &[f64], opts: IterOptions) -> Result<Run, GnormError> {
    check_start(f, x0, opts.step)?;
    let mut step = opts.step;
    let mut x = x0.to_vec();
    let mut trajectory = vec![x.clone()];
    let mut gsq = norm(&f.gradient(&x)).powi(2);
    for it in 0..opts.max_iters {
        let d = gnorm_direction(f, &x);
        if norm(&d) < opts.tol {
            return Ok(Run {
                trajectory,
                iterations: it,
                converged: true,
                final_step: step,
            });
        }
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi - step * di).collect();
            let cand_gsq = norm(&f.gradient(&cand)).powi(2);
            if cand_gsq <= gsq {
                accepted = Some((cand, cand_gsq));
                break;
            }
            step *= 0.5;
        }
        let Some((next, next_gsq)) = accepted else {
            // No decrease at any representable step: numerically stationary.
            return Ok(Run {
                trajectory,
                iterations: it,
                converged: false,
                final_step: step,
            });
        };
        x = next;
        gsq = next_gsq;
        trajectory.push(x.clone());
        if diverged(&x) {
            return Err(GnormError::Divergence {
                iteration: it + 1,
                radius: DIVERGENCE_RADIUS,
                trajectory,
            });
        }
    }
    let converged = norm(&gnorm_direction(f, &x)) < opts.tol;
    Ok(Run {
        trajectory,
        iterations: opts.max_iters,
        converged,
        final_step: step,
    })
}

/// Damped Newton iteration `x <- x - step v` with `∇²f v = ∇f`. Stops once
/// `|∇f| < tol`.
pub fn newton_saddle<F: TestFunction + ?Sized>(f: &F, x0: &[f64], opts: IterOptions) -> Result<Run, GnormError> {
    check_start(f, x0, opts.step)?;
    let n = f.dim();
    let mut x = x0.to_vec();
    let mut trajectory = vec![x.clone()];
    for it in 0..opts.max_iters {
        let g = f.gradient(&x);
        if norm(&g) < opts.tol {
            return Ok(Run {
                trajectory,
                iterations: it,
                converged: true,
                final_step: opts.step,
            });
        }
        let h = DMatrix::from_row_slice(n, n, &f.hessian(&x));
        let sv = h.singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(condition <= SINGULAR_CONDITION) {
            return Err(GnormError::SingularHessian {
                iteration: it,
                condition,
                trajectory,
            });
        }
        let v = h
            .lu()
            .solve(&DVector::from_column_slice(&g))
            .ok_or(GnormError::SingularHessian {
                iteration: it,
                condition,
                trajectory: trajectory.clone(),
            })?;
        x = x.iter().zip(v.iter()).map(|(xi, vi)| xi - opts.step * vi).collect();
        trajectory.push(x.clone());
        if diverged(&x) {
            return Err(GnormError::Divergence {
                iteration: it + 1,
                radius: DIVERGENCE_RADIUS,
                trajectory,
            });
        }
    }
    let converged = norm(&f.gradient(&x)) < opts.tol;
    Ok(Run {
        trajectory,
        iterations: opts.max_iters,
        converged,
        final_step: opts.step,
    })
}

/// Fixed-step gradient descent on `f`. Stops once `|∇f| < tol`.
pub fn gradient_descent<F: TestFunction + ?Sized>(f: &F, x0: &[f64], opts: IterOptions) -> Result<Run, GnormError> {
    check_start(f, x0, opts.step)?;
    let mut x = x0.to_vec();
    let mut trajectory = vec![x.clone()];
    for it in 0..opts.max_iters {
        let g = f.gradient(&x);
        if norm(&g) < opts.tol {
            return Ok(Run {
                trajectory,
                iterations: it,
                converged: true,
                final_step: opts.step,
            });
        }
        x = x.iter().zip(&g).map(|(xi, gi)| xi - opts.step * gi).collect();
        trajectory.push(x.clone());
        if diverged(&x) {
            return Err(GnormError::Divergence {
                iteration: it + 1,
                radius: DIVERGENCE_RADIUS,
                trajectory,
            });
        }
    }
    let converged = norm(&f.gradient(&x)) < opts.tol;
    Ok(Run {
        trajectory,
        iterations: opts.max_iters,
        converged,
        final_step: opts.step,
    })
}

pub fn run_method<F: TestFunction + ?Sized>(
    method: Method,
    f: &F,
    x0: &[f64],
    opts: IterOptions,
) -> Result<Run, GnormError> {
    match method {
        Method::Gnorm => gnorm_descent(f, x0, opts),
        Method::Newton => newton_saddle(f, x0, opts),
        Method::GradientDescent => gradient_descent(f, x0, opts),
    }
}

pub fn classify_terminal<F: TestFunction + ?Sized>(f: &F, x: &[f64], tol: f64) -> Criticality {
    if norm(&f.gradient(x)) < tol {
        Criticality::TrueCritical
    } else if norm(&gnorm_direction(f, x)) < tol {
        Criticality::SpuriousGnormCritical
    } else {
        Criticality::NotCritical
    }
}
