//! Projected limited-memory BFGS with backtracking (Armijo) line search.

use std::collections::VecDeque;

use crate::error::Result;

/// Smooth objective with a gradient oracle.
pub trait Objective {
    fn value(&self, x: &[f64]) -> Result<f64>;
    /// Gradient at `x`; `value` is the already-known objective value at `x`.
    fn gradient(&self, x: &[f64], value: f64) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Converged when `‖g‖∞ < grad_tol · (1 + |f|)`.
    pub grad_tol: f64,
    pub memory: usize,
    pub armijo_c1: f64,
    pub max_backtracks: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 200,
            grad_tol: 1e-6,
            memory: 10,
            armijo_c1: 1e-4,
            max_backtracks: 40,
        }
    }
}

/// Per-variable box; `None` on a side means unbounded.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    fn project(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub history: Vec<IterationRecord>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

// Gradient with components pushing against an active bound removed.
fn projected_gradient(x: &[f64], g: &[f64], bounds: Option<&BoxBounds>) -> Vec<f64> {
    match bounds {
        None => g.to_vec(),
        Some(b) => g
            .iter()
            .enumerate()
            .map(|(i, &gi)| {
                if (x[i] <= b.lower[i] && gi > 0.0) || (x[i] >= b.upper[i] && gi < 0.0) {
                    0.0
                } else {
                    gi
                }
            })
            .collect(),
    }
}

/// Minimizes `obj` from `x0`. The returned value never exceeds `obj(x0)`.
pub fn minimize<O: Objective + ?Sized>(
    obj: &O,
    x0: &[f64],
    bounds: Option<&BoxBounds>,
    opts: &SolverOptions,
) -> Result<Minimum> {
    let n = x0.len();
    let mut x = x0.to_vec();
    if let Some(b) = bounds {
        b.project(&mut x);
    }
    let mut f = obj.value(&x)?;
    let mut g = obj.gradient(&x, f)?;
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut history = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        let pg = projected_gradient(&x, &g, bounds);
        let gnorm = inf_norm(&pg);
        if gnorm < opts.grad_tol * (1.0 + f.abs()) {
            termination = Termination::Converged;
            break;
        }

        let mut reset = false;
        let accepted = loop {
            let direction = if memory.is_empty() {
                // first step: unit length along the steepest descent
                let scale = 1.0 / dot(&pg, &pg).sqrt();
                pg.iter().map(|v| -v * scale).collect::<Vec<f64>>()
            } else {
                two_loop(&pg, &memory)
            };
            let slope = dot(&direction, &pg);
            if !(slope < 0.0) {
                if memory.is_empty() {
                    break None;
                }
                memory.clear();
                continue;
            }
            match line_search(obj, &x, f, &g, &direction, bounds, opts)? {
                Some(found) => break Some(found),
                None if !memory.is_empty() && !reset => {
                    memory.clear();
                    reset = true;
                }
                None => break None,
            }
        };

        let Some((x_new, f_new, step)) = accepted else {
            termination = Termination::LineSearchFailure;
            break;
        };
        let g_new = obj.gradient(&x_new, f_new)?;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy.is_finite() {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        f = f_new;
        g = g_new;
        iterations += 1;
        history.push(IterationRecord {
            iteration: iterations,
            cost: f,
            grad_norm: inf_norm(&projected_gradient(&x, &g, bounds)),
            step,
        });
    }
    debug_assert_eq!(x.len(), n);
    Ok(Minimum {
        x,
        value: f,
        iterations,
        termination,
        history,
    })
}

fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    let (s, y, _) = memory.back().expect("non-empty memory");
    let gamma = dot(s, y) / dot(y, y);
    q.iter_mut().for_each(|v| *v *= gamma);
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

fn line_search<O: Objective + ?Sized>(
    obj: &O,
    x: &[f64],
    f: f64,
    g: &[f64],
    direction: &[f64],
    bounds: Option<&BoxBounds>,
    opts: &SolverOptions,
) -> Result<Option<(Vec<f64>, f64, f64)>> {
    let mut t = 1.0;
    for _ in 0..opts.max_backtracks {
        let mut trial: Vec<f64> = x.iter().zip(direction).map(|(a, d)| a + t * d).collect();
        if let Some(b) = bounds {
            b.project(&mut trial);
        }
        let moved: Vec<f64> = trial.iter().zip(x).map(|(a, b)| a - b).collect();
        let decrease = dot(g, &moved);
        if inf_norm(&moved) == 0.0 {
            return Ok(None);
        }
        // objective failures inside the search (e.g. degenerate traces) count as rejections
        if let Ok(value) = obj.value(&trial) {
            if value.is_finite() && value <= f + opts.armijo_c1 * decrease && value <= f {
                return Ok(Some((trial, value, t)));
            }
        }
        t *= 0.5;
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        diag: Vec<f64>,
        center: Vec<f64>,
    }

    impl Objective for Quadratic {
        fn value(&self, x: &[f64]) -> Result<f64> {
            Ok(x.iter()
                .zip(&self.center)
                .zip(&self.diag)
                .map(|((x, c), d)| d * (x - c) * (x - c))
                .sum())
        }
        fn gradient(&self, x: &[f64], _: f64) -> Result<Vec<f64>> {
            Ok(x.iter()
                .zip(&self.center)
                .zip(&self.diag)
                .map(|((x, c), d)| 2.0 * d * (x - c))
                .collect())
        }
    }

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn value(&self, x: &[f64]) -> Result<f64> {
            Ok((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
        }
        fn gradient(&self, x: &[f64], _: f64) -> Result<Vec<f64>> {
            Ok(vec![
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ])
        }
    }

    #[test]
    fn ill_conditioned_quadratic() {
        let q = Quadratic {
            diag: vec![1.0, 1e3, 1e6, 5.0, 0.1],
            center: vec![1.0, -2.0, 3.0, 0.5, 10.0],
        };
        let m = minimize(&q, &[0.0; 5], None, &SolverOptions::default()).unwrap();
        assert_eq!(m.termination, Termination::Converged);
        for (a, b) in m.x.iter().zip(&q.center) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!(m.history.windows(2).all(|w| w[1].cost <= w[0].cost));
    }

    #[test]
    fn rosenbrock_converges() {
        let opts = SolverOptions {
            max_iterations: 500,
            ..Default::default()
        };
        let m = minimize(&Rosenbrock, &[-1.2, 1.0], None, &opts).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn bounds_are_respected() {
        let q = Quadratic {
            diag: vec![1.0, 1.0],
            center: vec![5.0, -5.0],
        };
        let b = BoxBounds {
            lower: vec![-1.0, -1.0],
            upper: vec![1.0, 1.0],
        };
        let m = minimize(&q, &[0.0, 0.0], Some(&b), &SolverOptions::default()).unwrap();
        assert_eq!(m.termination, Termination::Converged);
        assert!((m.x[0] - 1.0).abs() < 1e-12 && (m.x[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn start_at_optimum_is_immediate() {
        let q = Quadratic {
            diag: vec![2.0, 3.0],
            center: vec![1.0, 1.0],
        };
        let m = minimize(&q, &[1.0, 1.0], None, &SolverOptions::default()).unwrap();
        assert_eq!(m.iterations, 0);
        assert_eq!(m.value, 0.0);
    }
}
