//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The solver works on flat vectors; [`minimize`] adapts it to
//! [`DualVariables`] through the fixed z-major layout.

use std::collections::VecDeque;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::domain::DualVariables;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop once the sup-norm of the gradient is at or below this.
    pub gradient_tolerance: f64,
    pub memory_pairs: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            memory_pairs: 10,
            c1: 1e-4,
            c2: 0.9,
            max_line_search_steps: 40,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::Argument(format!(
                "line search needs 0 < c1 < c2 < 1, got c1={} c2={}",
                self.c1, self.c2
            )));
        }
        if self.memory_pairs == 0 || self.max_line_search_steps == 0 {
            return Err(Error::Argument("solver counts must be positive".into()));
        }
        if !(self.gradient_tolerance >= 0.0) {
            return Err(Error::Argument("gradient tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub converged: bool,
    /// `Σ_z (Σ_y a[y,z])²` at the returned point.
    pub penalty_residual: f64,
    /// `‖a‖_∞` at the returned point.
    pub optimizer_sup_norm: f64,
}

/// Outcome of a flat-vector solve.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatSolution {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    /// Function value after each accepted iterate, starting with `x0`.
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

struct CurvaturePair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Two-loop recursion: returns `-H g`.
fn search_direction(grad: &[f64], history: &VecDeque<CurvaturePair>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for pair in history.iter().rev() {
        let alpha = pair.rho * dot(&pair.s, &q);
        q.iter_mut().zip(&pair.y).for_each(|(qi, yi)| *qi -= alpha * yi);
        alphas.push(alpha);
    }
    if let Some(last) = history.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for (pair, alpha) in history.iter().zip(alphas.into_iter().rev()) {
        let beta = pair.rho * dot(&pair.y, &q);
        q.iter_mut().zip(&pair.s).for_each(|(qi, si)| *qi += (alpha - beta) * si);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

struct Trial {
    alpha: f64,
    x: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
    slope: f64,
}

struct LineSearch<'a, F> {
    eval: &'a mut F,
    x0: &'a [f64],
    f0: f64,
    slope0: f64,
    dir: &'a [f64],
    cfg: &'a SolverConfig,
    evals: usize,
}

impl<F> LineSearch<'_, F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn trial(&mut self, alpha: f64) -> Result<Trial> {
        self.evals += 1;
        let x: Vec<f64> = self
            .x0
            .iter()
            .zip(self.dir)
            .map(|(xi, di)| xi + alpha * di)
            .collect();
        let (value, grad) = (self.eval)(&x)?;
        if !value.is_finite() || !all_finite(&grad) {
            return Err(Error::Numerical {
                reason: format!("non-finite objective at step {alpha:e}"),
                iterations: 0,
                last_iterate: self.x0.to_vec(),
            });
        }
        let slope = dot(&grad, self.dir);
        Ok(Trial {
            alpha,
            x,
            value,
            grad,
            slope,
        })
    }

    /// Armijo test with a few ulps of slack for flat regions, never
    /// accepting an increase.
    ///
    /// Once the decrease is lost in roundoff the test switches to its slope
    /// form `φ'(α) ≤ (2c₁ − 1)·φ'(0)`, exact for quadratics.
    fn sufficient(&self, t: &Trial) -> bool {
        let ulp = f64::EPSILON * self.f0.abs();
        if t.value > self.f0 {
            return false;
        }
        if t.value <= self.f0 + self.cfg.c1 * t.alpha * self.slope0 + 4.0 * ulp {
            return true;
        }
        self.f0 - t.value <= 1e3 * ulp && t.slope <= (2.0 * self.cfg.c1 - 1.0) * self.slope0
    }

    fn curvature(&self, t: &Trial) -> bool {
        t.slope.abs() <= -self.cfg.c2 * self.slope0
    }

    fn budget_left(&self) -> bool {
        self.evals < self.cfg.max_line_search_steps
    }

    /// One secant step on the slope from an accepted point; exact on
    /// quadratics. Kept only if it is itself acceptable and no worse.
    fn refine(&mut self, t: Trial) -> Result<Trial> {
        if t.slope.abs() <= 1e-8 * self.slope0.abs() || !self.budget_left() {
            return Ok(t);
        }
        let alpha = t.alpha * self.slope0 / (self.slope0 - t.slope);
        if !(alpha.is_finite() && alpha > 0.0) || alpha == t.alpha {
            return Ok(t);
        }
        let r = self.trial(alpha)?;
        if r.value <= t.value && self.sufficient(&r) && self.curvature(&r) {
            Ok(r)
        } else {
            Ok(t)
        }
    }

    fn search(&mut self, alpha_init: f64) -> Result<Option<Trial>> {
        match self.run(alpha_init)? {
            Some(t) => self.refine(t).map(Some),
            None => Ok(None),
        }
    }

    fn run(&mut self, alpha_init: f64) -> Result<Option<Trial>> {
        let mut prev: Option<Trial> = None;
        let mut alpha = alpha_init;
        while self.budget_left() {
            let t = self.trial(alpha)?;
            let prev_value = prev.as_ref().map_or(self.f0, |p| p.value);
            if !self.sufficient(&t) || (prev.is_some() && t.value >= prev_value) {
                return self.zoom(prev, t);
            }
            if self.curvature(&t) {
                return Ok(Some(t));
            }
            if t.slope >= 0.0 {
                return self.zoom(Some(t), prev.unwrap_or_else(|| self.origin()));
            }
            alpha = 2.0 * t.alpha;
            prev = Some(t);
        }
        Ok(prev)
    }

    fn origin(&self) -> Trial {
        Trial {
            alpha: 0.0,
            x: self.x0.to_vec(),
            value: self.f0,
            grad: Vec::new(),
            slope: self.slope0,
        }
    }

    /// `lo` satisfies sufficient decrease (or is the origin); the minimizer
    /// lies between `lo` and `hi`.
    fn zoom(&mut self, lo: Option<Trial>, hi: Trial) -> Result<Option<Trial>> {
        let mut lo = lo.unwrap_or_else(|| self.origin());
        let mut hi = hi;
        while self.budget_left() {
            if lo.alpha.max(hi.alpha) < 1e-10 {
                break;
            }
            let alpha = interpolate(&lo, &hi);
            let t = self.trial(alpha)?;
            if !self.sufficient(&t) || t.value >= lo.value {
                hi = t;
            } else {
                if self.curvature(&t) {
                    return Ok(Some(t));
                }
                if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = std::mem::replace(&mut lo, t);
                } else {
                    lo = t;
                }
            }
            if (hi.alpha - lo.alpha).abs() < 1e-16 * lo.alpha.max(1e-10) {
                break;
            }
        }
        // Out of budget: fall back to the best decreasing point, if any.
        if lo.alpha > 0.0 && lo.value <= self.f0 {
            return Ok(Some(lo));
        }
        self.bisect(hi.alpha)
    }

    fn bisect(&mut self, mut alpha: f64) -> Result<Option<Trial>> {
        while alpha >= 1e-10 {
            alpha *= 0.5;
            let t = self.trial(alpha)?;
            if t.value < self.f0 {
                return Ok(Some(t));
            }
        }
        Ok(None)
    }
}

/// Safeguarded cubic interpolation, falling back to bisection.
fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let width = (b - a).abs();
    let mid = 0.5 * (a + b);
    let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if disc < 0.0 || !disc.is_finite() {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let cand = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    let (left, right) = (a.min(b), a.max(b));
    if cand.is_finite() && cand > left + 0.1 * width && cand < right - 0.1 * width {
        cand
    } else {
        mid
    }
}

/// Minimizes a smooth function given a combined value/gradient oracle.
pub fn minimize_flat<F>(mut eval: F, x0: Vec<f64>, cfg: &SolverConfig) -> Result<FlatSolution>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    if !all_finite(&x0) {
        return Err(Error::Argument("initial point is not finite".into()));
    }
    let mut x = x0;
    let (mut f, mut g) = eval(&x)?;
    if !f.is_finite() || !all_finite(&g) {
        return Err(Error::Numerical {
            reason: "non-finite objective at the initial point".into(),
            iterations: 0,
            last_iterate: x,
        });
    }
    let mut trace = vec![f];
    let mut history: VecDeque<CurvaturePair> = VecDeque::with_capacity(cfg.memory_pairs);
    let mut iterations = 0;
    let mut gnorm = sup_norm(&g);

    while iterations < cfg.max_iterations && gnorm > cfg.gradient_tolerance {
        let mut dir = search_direction(&g, &history);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
        }
        let alpha_init = if history.is_empty() {
            (1.0 / dot(&g, &g).sqrt()).min(1.0)
        } else {
            1.0
        };

        let outcome = {
            let mut ls = LineSearch {
                eval: &mut eval,
                x0: &x,
                f0: f,
                slope0: slope,
                dir: &dir,
                cfg,
                evals: 0,
            };
            ls.search(alpha_init)
        };
        let step = match outcome {
            Ok(step) => step,
            Err(Error::Numerical { reason, .. }) => {
                return Err(Error::Numerical {
                    reason,
                    iterations,
                    last_iterate: x,
                })
            }
            Err(e) => return Err(e),
        };
        let Some(step) = step else {
            if history.is_empty() {
                // stagnation along steepest descent
                break;
            }
            history.clear();
            continue;
        };

        let s: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if history.len() == cfg.memory_pairs {
                history.pop_front();
            }
            history.push_back(CurvaturePair { s, y, rho: 1.0 / sy });
        }
        x = step.x;
        f = step.value;
        g = step.grad;
        gnorm = sup_norm(&g);
        trace.push(f);
        iterations += 1;
    }

    Ok(FlatSolution {
        x,
        value: f,
        iterations,
        gradient_norm: gnorm,
        converged: gnorm <= cfg.gradient_tolerance,
        trace,
    })
}

/// Minimizes over dual variables, starting from `a0`.
pub fn minimize<V, G>(
    mut value_fn: V,
    mut grad_fn: G,
    a0: &DualVariables,
    cfg: &SolverConfig,
) -> Result<(DualVariables, SolveReport)>
where
    V: FnMut(&DualVariables) -> Result<f64>,
    G: FnMut(&DualVariables) -> Result<Array2<f64>>,
{
    let (k, nz) = (a0.num_classes(), a0.num_signatures());
    let eval = |flat: &[f64]| -> Result<(f64, Vec<f64>)> {
        let a = DualVariables::from_flat(k, nz, flat);
        let value = value_fn(&a)?;
        let grad = DualVariables::new(grad_fn(&a)?).to_flat();
        Ok((value, grad))
    };
    let sol = minimize_flat(eval, a0.to_flat(), cfg)?;
    let a = DualVariables::from_flat(k, nz, &sol.x);
    let report = SolveReport {
        iterations: sol.iterations,
        final_gradient_norm: sol.gradient_norm,
        converged: sol.converged,
        penalty_residual: a.penalty_residual(),
        optimizer_sup_norm: a.sup_norm(),
    };
    Ok((a, report))
}
