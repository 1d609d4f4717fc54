//! Derivative-free and quasi-Newton minimisation with finite differences.
//!
//! Objectives may return `+inf` outside their domain; every routine treats
//! that as "worse than anything finite".

use nalgebra::{DMatrix, DVector};

/// Counts objective evaluations.
pub struct Objective<F> {
    f: F,
    pub evaluations: usize,
}

impl<F: FnMut(&[f64]) -> f64> Objective<F> {
    pub fn new(f: F) -> Self {
        Objective { f, evaluations: 0 }
    }

    pub fn eval(&mut self, x: &[f64]) -> f64 {
        self.evaluations += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct NelderMead {
    pub initial_step: f64,
    pub max_evaluations: usize,
    /// Stop when the spread of simplex values falls below `ftol * (1 + |f_best|)`.
    pub ftol: f64,
    /// ... and the simplex diameter below `xtol`.
    pub xtol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead {
            initial_step: 0.5,
            max_evaluations: 600,
            ftol: 1e-10,
            xtol: 1e-6,
        }
    }
}

impl NelderMead {
    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, obj: &mut Objective<F>, x0: &[f64]) -> Minimum {
        let n = x0.len();
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((x0.to_vec(), obj.eval(x0)));
        for i in 0..n {
            let mut x = x0.to_vec();
            x[i] += self.initial_step;
            let v = obj.eval(&x);
            simplex.push((x, v));
        }
        let start = obj.evaluations;
        let mut iterations = 0;
        let mut converged = false;
        loop {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let best = simplex[0].1;
            let worst = simplex[n].1;
            let diameter = simplex[1..]
                .iter()
                .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if worst.is_finite() && worst - best <= self.ftol * (1.0 + best.abs()) && diameter <= self.xtol {
                converged = true;
                break;
            }
            if obj.evaluations - start >= self.max_evaluations {
                break;
            }
            iterations += 1;

            let mut centroid = vec![0.0; n];
            for (x, _) in &simplex[..n] {
                for (c, xi) in centroid.iter_mut().zip(x) {
                    *c += xi / n as f64;
                }
            }
            let along = |t: f64| -> Vec<f64> {
                centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (c - w)).collect()
            };

            let xr = along(1.0);
            let fr = obj.eval(&xr);
            if fr < simplex[0].1 {
                let xe = along(2.0);
                let fe = obj.eval(&xe);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
                continue;
            }
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(0.5);
                let fc = obj.eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = obj.eval(&xc);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
                continue;
            }
            // shrink towards the best vertex
            let x_best = simplex[0].0.clone();
            for vertex in simplex.iter_mut().skip(1) {
                let x: Vec<f64> = x_best.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                let v = obj.eval(&x);
                *vertex = (x, v);
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, value) = simplex.swap_remove(0);
        Minimum { x, value, iterations, converged }
    }
}

fn step(x: f64, rel: f64) -> f64 {
    rel * x.abs().max(1.0)
}

/// Central-difference gradient with steps `rel * max(|x_i|, 1)`.
pub fn gradient<F: FnMut(&[f64]) -> f64>(obj: &mut Objective<F>, x: &[f64], rel: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = step(x[i], rel);
        xp[i] = x[i] + h;
        let fp = obj.eval(&xp);
        xp[i] = x[i] - h;
        let fm = obj.eval(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference Hessian from function values only.
pub fn hessian<F: FnMut(&[f64]) -> f64>(obj: &mut Objective<F>, x: &[f64], rel: f64) -> DMatrix<f64> {
    let n = x.len();
    let f0 = obj.eval(x);
    let h: Vec<f64> = x.iter().map(|&xi| step(xi, rel)).collect();
    let mut m = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for i in 0..n {
        xp[i] = x[i] + h[i];
        let fp = obj.eval(&xp);
        xp[i] = x[i] - h[i];
        let fm = obj.eval(&xp);
        xp[i] = x[i];
        m[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let mut corner = |si: f64, sj: f64| {
                xp[i] = x[i] + si * h[i];
                xp[j] = x[j] + sj * h[j];
                let v = obj.eval(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

#[derive(Debug, Clone)]
pub struct Bfgs {
    pub max_iterations: usize,
    /// Stop when `max |g_i| < gtol`.
    pub gtol: f64,
    pub gradient_step: f64,
}

impl Default for Bfgs {
    fn default() -> Self {
        Bfgs {
            max_iterations: 100,
            gtol: 1e-6,
            gradient_step: 1e-4,
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

impl Bfgs {
    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, obj: &mut Objective<F>, x0: &[f64]) -> Minimum {
        let n = x0.len();
        let mut x = DVector::from_column_slice(x0);
        let mut fx = obj.eval(x.as_slice());
        let mut g = DVector::from_vec(gradient(obj, x.as_slice(), self.gradient_step));
        let mut inv_h = DMatrix::<f64>::identity(n, n);
        let mut iterations = 0;
        let mut converged = max_abs(g.as_slice()) < self.gtol;
        while !converged && iterations < self.max_iterations && fx.is_finite() {
            iterations += 1;
            let mut dir = -(&inv_h * &g);
            let mut slope = g.dot(&dir);
            if !(slope < 0.0) {
                inv_h = DMatrix::identity(n, n);
                dir = -g.clone();
                slope = g.dot(&dir);
            }
            // backtracking Armijo line search
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let xn = &x + t * &dir;
                let fn_ = obj.eval(xn.as_slice());
                if fn_.is_finite() && fn_ <= fx + 1e-4 * t * slope {
                    accepted = Some((xn, fn_));
                    break;
                }
                t *= 0.5;
            }
            let Some((xn, fn_)) = accepted else {
                break;
            };
            let gn = DVector::from_vec(gradient(obj, xn.as_slice(), self.gradient_step));
            let s = &xn - &x;
            let y = &gn - &g;
            let sy = s.dot(&y);
            if sy > 1e-12 * s.norm() * y.norm() {
                let rho = 1.0 / sy;
                let eye = DMatrix::<f64>::identity(n, n);
                let a = &eye - rho * &s * y.transpose();
                let b = &eye - rho * &y * s.transpose();
                inv_h = &a * &inv_h * &b + rho * &s * s.transpose();
            }
            let progress = fx - fn_;
            x = xn;
            fx = fn_;
            g = gn;
            converged = max_abs(g.as_slice()) < self.gtol;
            if !converged && progress <= 1e-15 * (1.0 + fx.abs()) && t < 1e-6 {
                break;
            }
        }
        Minimum {
            x: x.as_slice().to_vec(),
            value: fx,
            iterations,
            converged,
        }
    }
}
