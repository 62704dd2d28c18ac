//! Coefficient step: minimize
//! `||G lambda - f||^2 / (2 (M + 1)) + sum(lambda)` over `lambda >= 0`,
//! where column `i` of `G` is `a0(curve_i) * vec(K_0 curve_i)`.
//!
//! Projected gradient with step `1 / L` (largest eigenvalue of the scaled Gram
//! matrix, by power iteration), interleaved with an exact active-set finish
//! started from the current iterate. The finish is accepted only when it does
//! not raise the objective, so the iteration stays monotone from the warm
//! start.

use nalgebra::{DMatrix, DVector};

use crate::domain::{CadlagSamples, CoeffParams, Measurement, SensorArray, ThetaWeights, TimeGrid};
use crate::error::{Error, Result};
use crate::forward::forward_atom;
use crate::objective::a0;

/// Columns `a0(curve_i) * vec(K_0 curve_i)`, flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomResponseMatrix {
    columns: Vec<Vec<f64>>,
    rows: usize,
}

impl AtomResponseMatrix {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let rows = columns.first().map(|c| c.len()).unwrap_or(0);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::invalid("response columns have different lengths"));
        }
        Ok(AtomResponseMatrix { columns, rows })
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    /// `G lambda`.
    pub fn apply(&self, lambda: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (col, &l) in self.columns.iter().zip(lambda) {
            if l != 0.0 {
                for (o, g) in out.iter_mut().zip(col) {
                    *o += l * g;
                }
            }
        }
        out
    }
}

pub fn assemble_atom_responses(
    curves: &[CadlagSamples],
    sensors: &SensorArray,
    grid: &TimeGrid,
    theta: &ThetaWeights,
    alpha: f64,
    beta: f64,
) -> Result<AtomResponseMatrix> {
    if curves.is_empty() {
        return Err(Error::invalid("no atoms to assemble"));
    }
    let columns = curves
        .iter()
        .map(|c| {
            let k = forward_atom(sensors, grid, theta, c)?;
            let s = a0(alpha, beta, c);
            Ok(k.as_slice().iter().map(|v| s * v).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    AtomResponseMatrix::from_columns(columns)
}

/// Quadratic model of the coefficient objective:
/// `0.5 l^T H l - b^T l + sum(l) + c0`.
struct Quadratic {
    h: DMatrix<f64>,
    b: DVector<f64>,
    c0: f64,
}

impl Quadratic {
    fn new(g: &AtomResponseMatrix, f: &Measurement) -> Result<Self> {
        let t = f.cols() as f64;
        let fv = f.as_slice();
        if g.nrows() != fv.len() {
            return Err(Error::dims(fv.len(), g.nrows()));
        }
        if fv.iter().chain(g.columns.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("coefficient-step data".into()));
        }
        let n = g.ncols();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            for k in i..n {
                let v = dot(&g.columns[i], &g.columns[k]) / t;
                h[(i, k)] = v;
                h[(k, i)] = v;
            }
        }
        let b = DVector::from_iterator(n, g.columns.iter().map(|c| dot(c, fv) / t));
        let c0 = dot(fv, fv) / (2.0 * t);
        Ok(Quadratic { h, b, c0 })
    }

    fn value(&self, l: &DVector<f64>) -> f64 {
        0.5 * l.dot(&(&self.h * l)) - self.b.dot(l) + l.sum() + self.c0
    }

    fn gradient(&self, l: &DVector<f64>) -> DVector<f64> {
        (&self.h * l - &self.b).add_scalar(1.0)
    }

    fn kkt(&self, l: &DVector<f64>) -> f64 {
        kkt_from_gradient(l.as_slice(), self.gradient(l).as_slice())
    }

    fn lipschitz(&self, iters: usize) -> f64 {
        let n = self.h.nrows();
        let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
        let mut est = 0.0;
        for _ in 0..iters.max(1) {
            let hv = &self.h * &v;
            let norm = hv.norm();
            if norm == 0.0 {
                return 0.0;
            }
            est = v.dot(&hv);
            v = hv / norm;
        }
        // Rayleigh quotient of the final iterate is the sharper estimate.
        est.max(v.dot(&(&self.h * &v)))
    }

    /// Minimizer over the coordinates in `support`, all others held at zero.
    fn restricted_solve(&self, support: &[usize]) -> Option<DVector<f64>> {
        let m = support.len();
        let hs = DMatrix::from_fn(m, m, |r, c| self.h[(support[r], support[c])]);
        let rhs = DVector::from_fn(m, |r, _| self.b[support[r]] - 1.0);
        let sol = hs.cholesky()?.solve(&rhs);
        sol.iter().all(|v| v.is_finite()).then_some(sol)
    }

    /// Lawson-Hanson active-set iteration from a feasible point. Returns
    /// `None` when a restricted Hessian is numerically singular.
    fn active_set(&self, start: &DVector<f64>, tol: f64) -> Option<DVector<f64>> {
        let n = self.h.nrows();
        let mut l = start.clone();
        let mut passive: Vec<bool> = l.iter().map(|&v| v > 0.0).collect();
        for _ in 0..(10 * n + 50) {
            // Inner loop: move toward the restricted optimum, dropping
            // coordinates that would turn negative.
            loop {
                let support: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
                if support.is_empty() {
                    break;
                }
                let z = self.restricted_solve(&support)?;
                if z.iter().all(|&v| v > 0.0) {
                    l.fill(0.0);
                    for (k, &i) in support.iter().enumerate() {
                        l[i] = z[k];
                    }
                    break;
                }
                let (t, block) = support
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| z[k] <= 0.0)
                    .map(|(k, &i)| (l[i] / (l[i] - z[k]), i))
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .expect("some restricted coordinate is nonpositive");
                for (k, &i) in support.iter().enumerate() {
                    l[i] = (l[i] + t * (z[k] - l[i])).max(0.0);
                }
                // The blocking coordinate and anything driven to zero leave
                // the passive set.
                l[block] = 0.0;
                for &i in &support {
                    if l[i] <= 0.0 {
                        passive[i] = false;
                    }
                }
            }
            let grad = self.gradient(&l);
            let entering = (0..n)
                .filter(|&i| !passive[i])
                .min_by(|&a, &b| grad[a].total_cmp(&grad[b]))
                .filter(|&i| grad[i] < -tol);
            match entering {
                Some(i) => passive[i] = true,
                None => return Some(l),
            }
        }
        Some(l)
    }
}

fn kkt_from_gradient(lambda: &[f64], grad: &[f64]) -> f64 {
    lambda
        .iter()
        .zip(grad)
        .map(|(&l, &d)| if l > 0.0 { d.abs() } else { (-d).max(0.0) })
        .fold(0.0, f64::max)
}

/// Maximal KKT violation of `lambda`: `|d_i|` on the support and `max(0, -d_i)`
/// off it, with `d_i = <g_i, G lambda - f> / (M + 1) + 1`.
pub fn kkt_residual(g: &AtomResponseMatrix, f: &Measurement, lambda: &[f64]) -> Result<f64> {
    if lambda.len() != g.ncols() {
        return Err(Error::dims(g.ncols(), lambda.len()));
    }
    if g.nrows() != f.as_slice().len() {
        return Err(Error::dims(f.as_slice().len(), g.nrows()));
    }
    let t = f.cols() as f64;
    let mut r = g.apply(lambda);
    for (ri, fi) in r.iter_mut().zip(f.as_slice()) {
        *ri -= fi;
    }
    let grad: Vec<f64> = g
        .columns()
        .iter()
        .map(|c| c.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / t + 1.0)
        .collect();
    Ok(kkt_from_gradient(lambda, &grad))
}

/// Value of the coefficient objective at `lambda`.
pub fn coefficient_objective(g: &AtomResponseMatrix, f: &Measurement, lambda: &[f64]) -> Result<f64> {
    if lambda.len() != g.ncols() {
        return Err(Error::dims(g.ncols(), lambda.len()));
    }
    let mut r = g.apply(lambda);
    for (ri, fi) in r.iter_mut().zip(f.as_slice()) {
        *ri -= fi;
    }
    let sq: f64 = r.iter().map(|v| v * v).sum();
    Ok(sq / (2.0 * f.cols() as f64) + lambda.iter().sum::<f64>())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoeffSolution {
    pub lambda: Vec<f64>,
    pub objective: f64,
    pub kkt: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves the coefficient problem, warm-started from `warm` (zeros if `None`).
///
/// Running out of iterations is not an error: the best iterate is returned
/// with `converged = false`.
pub fn solve_nonneg_l1(
    g: &AtomResponseMatrix,
    f: &Measurement,
    params: &CoeffParams,
    warm: Option<&[f64]>,
) -> Result<CoeffSolution> {
    let n = g.ncols();
    if n == 0 {
        return Err(Error::invalid("no atoms in coefficient step"));
    }
    let q = Quadratic::new(g, f)?;
    let mut lambda = match warm {
        Some(w) if w.len() == n => DVector::from_iterator(n, w.iter().map(|v| v.max(0.0))),
        Some(w) => return Err(Error::dims(n, w.len())),
        None => DVector::zeros(n),
    };
    let mut value = q.value(&lambda);
    let lip = q.lipschitz(params.power_iters);
    let step = if lip > 0.0 { 1.0 / lip } else { 1.0 };
    let polish_every = 25;

    let mut iterations = 0;
    let mut kkt = q.kkt(&lambda);
    while kkt > params.kkt_tol && iterations < params.max_iters {
        if iterations % polish_every == 0 {
            if let Some(cand) = q.active_set(&lambda, params.kkt_tol) {
                let v = q.value(&cand);
                if v <= value {
                    lambda = cand;
                    kkt = q.kkt(&lambda);
                    if kkt <= params.kkt_tol {
                        break;
                    }
                }
            }
        }
        let grad = q.gradient(&lambda);
        let next = (&lambda - grad * step).map(|v| v.max(0.0));
        value = q.value(&next);
        lambda = next;
        iterations += 1;
        kkt = q.kkt(&lambda);
    }
    Ok(CoeffSolution {
        objective: coefficient_objective(g, f, lambda.as_slice())?,
        lambda: lambda.iter().cloned().collect(),
        kkt,
        iterations,
        converged: kkt <= params.kkt_tol,
    })
}
