//! Independent reference computations used to check the solver: exact 1D
//! transport distances, a transport LP, a finite-blur forward operator and
//! finite-difference gradients.

use serde::{Deserialize, Serialize};

use crate::domain::{
    Domain1D, Measurement, PiecewiseCurve, SensorArray, SparseDiracMeasure, ThetaWeights, TimeGrid,
};
use crate::error::{Error, Result};
use crate::forward::{kernel_unchecked, GroundTruth, IntervalMeasureSpec};

/// A finite nonnegative measure on the line, as `(position, mass)` pairs.
pub type PointMeasure = Vec<(f64, f64)>;

const MASS_TOL: f64 = 1e-12;

fn total(a: &[(f64, f64)]) -> f64 {
    a.iter().map(|p| p.1).sum()
}

fn check_measure(a: &[(f64, f64)], name: &str) -> Result<()> {
    for &(x, m) in a {
        if !x.is_finite() || !m.is_finite() {
            return Err(Error::NonFinite(format!("{name} has a non-finite atom")));
        }
        if m < 0.0 {
            return Err(Error::invalid(format!("{name} has negative mass {m}")));
        }
    }
    Ok(())
}

fn check_balanced(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<()> {
    check_measure(a, "first measure")?;
    check_measure(b, "second measure")?;
    let (ma, mb) = (total(a), total(b));
    if (ma - mb).abs() > MASS_TOL * ma.max(mb).max(1.0) {
        return Err(Error::invalid(format!("masses differ: {ma} vs {mb}")));
    }
    Ok(())
}

/// Wasserstein-1 distance between two equal-mass measures on the line,
/// computed as the integral of the absolute CDF difference.
pub fn w1_1d(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64> {
    check_balanced(a, b)?;
    // Signed events: +mass for `a`, -mass for `b`, swept left to right.
    let mut events: Vec<(f64, f64)> = a.iter().copied().chain(b.iter().map(|&(x, m)| (x, -m))).collect();
    events.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut cdf = 0.0;
    let mut dist = 0.0;
    for k in 0..events.len() {
        cdf += events[k].1;
        if let Some(next) = events.get(k + 1) {
            dist += cdf.abs() * (next.0 - events[k].0);
        }
    }
    Ok(dist)
}

/// Optimal transport cost `min sum_ij P_ij |x_i - y_j|` solved as a
/// transportation LP by the network simplex method (north-west corner start,
/// Bland's rule against cycling). Intended for small instances.
pub fn w1_lp_oracle(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64> {
    check_balanced(a, b)?;
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Ok(0.0);
    }
    let cost = |i: usize, j: usize| (a[i].0 - b[j].0).abs();
    let mut supply: Vec<f64> = a.iter().map(|p| p.1).collect();
    let mut demand: Vec<f64> = b.iter().map(|p| p.1).collect();

    // North-west corner: n + m - 1 basic cells forming a spanning tree.
    let mut basis: Vec<(usize, usize)> = Vec::with_capacity(n + m - 1);
    let mut flow = vec![0.0; n * m];
    let (mut i, mut j) = (0, 0);
    loop {
        let x = supply[i].min(demand[j]);
        flow[i * m + j] = x;
        supply[i] -= x;
        demand[j] -= x;
        basis.push((i, j));
        if i == n - 1 && j == m - 1 {
            break;
        }
        if i == n - 1 {
            j += 1;
        } else if j == m - 1 || supply[i] <= demand[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    // Any rounding left over on the last cell is absorbed there.
    flow[(n - 1) * m + m - 1] += supply[n - 1].max(0.0);

    let max_pivots = 100 * (n + m) * (n * m);
    for _ in 0..max_pivots {
        let (u, v) = potentials(n, m, &basis, &cost);
        let mut entering = None;
        'search: for r in 0..n {
            for c in 0..m {
                if cost(r, c) - u[r] - v[c] < -1e-12 && !basis.contains(&(r, c)) {
                    entering = Some((r, c));
                    break 'search;
                }
            }
        }
        let Some((er, ec)) = entering else {
            return Ok((0..n)
                .flat_map(|r| (0..m).map(move |c| (r, c)))
                .map(|(r, c)| flow[r * m + c] * cost(r, c))
                .sum());
        };
        // Tree path from column `ec` back to row `er` closes the cycle.
        let path = tree_path(n, m, &basis, n + ec, er);
        // Cells on the path alternate -, +, -, ... starting next to `ec`.
        let cells: Vec<(usize, usize)> = path
            .windows(2)
            .map(|e| {
                let (p, q) = (e[0].min(e[1]), e[0].max(e[1]));
                (p, q - n)
            })
            .collect();
        let mut leave = 0;
        let mut theta = f64::INFINITY;
        for (k, &(r, c)) in cells.iter().enumerate().step_by(2) {
            let x = flow[r * m + c];
            if x < theta || (x == theta && r * m + c < cells[leave].0 * m + cells[leave].1) {
                theta = x;
                leave = k;
            }
        }
        flow[er * m + ec] += theta;
        for (k, &(r, c)) in cells.iter().enumerate() {
            if k % 2 == 0 {
                flow[r * m + c] -= theta;
            } else {
                flow[r * m + c] += theta;
            }
        }
        let pos = basis_pos(&basis, cells[leave]);
        flow[cells[leave].0 * m + cells[leave].1] = 0.0;
        basis[pos] = (er, ec);
    }
    Err(Error::NotConverged {
        solver: "transport simplex",
        iters: max_pivots,
        tol: 1e-12,
        residual: f64::NAN,
    })
}

fn basis_pos(basis: &[(usize, usize)], cell: (usize, usize)) -> usize {
    basis.iter().position(|&c| c == cell).expect("cell is basic")
}

/// Dual potentials with `u_0 = 0` and `u_i + v_j = c_ij` on basic cells.
fn potentials(
    n: usize,
    m: usize,
    basis: &[(usize, usize)],
    cost: &impl Fn(usize, usize) -> f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![f64::NAN; n];
    let mut v = vec![f64::NAN; m];
    u[0] = 0.0;
    let mut stack = vec![0usize];
    while let Some(node) = stack.pop() {
        for &(r, c) in basis {
            if node < n && r == node && v[c].is_nan() {
                v[c] = cost(r, c) - u[r];
                stack.push(n + c);
            } else if node >= n && c == node - n && u[r].is_nan() {
                u[r] = cost(r, c) - v[c];
                stack.push(r);
            }
        }
    }
    (u, v)
}

/// Node path in the basis tree (rows `0..n`, columns `n..n+m`).
fn tree_path(n: usize, m: usize, basis: &[(usize, usize)], from: usize, to: usize) -> Vec<usize> {
    let mut parent = vec![usize::MAX; n + m];
    parent[from] = from;
    let mut queue = std::collections::VecDeque::from([from]);
    while let Some(node) = queue.pop_front() {
        if node == to {
            break;
        }
        for &(r, c) in basis {
            let other = if node < n && r == node {
                n + c
            } else if node >= n && c == node - n {
                r
            } else {
                continue;
            };
            if parent[other] == usize::MAX {
                parent[other] = node;
                queue.push_back(other);
            }
        }
    }
    let mut path = vec![to];
    let mut node = to;
    while node != from {
        node = parent[node];
        path.push(node);
    }
    path.reverse();
    path
}

/// Forward data of a single curve under the finite-blur operator: every time
/// sample is replaced by a triangular kernel of half-width `delta`, split
/// between the left and right of `t_j` according to `theta_j`. The time
/// integrals use the composite midpoint rule with `panels` panels per side.
pub fn forward_blurred(
    sensors: &SensorArray,
    grid: &TimeGrid,
    theta: &ThetaWeights,
    delta: f64,
    curve: &PiecewiseCurve,
    panels: usize,
) -> Result<Measurement> {
    if !(delta > 0.0) || panels == 0 {
        return Err(Error::invalid("blur width and panel count must be positive"));
    }
    if theta.len() != grid.len() {
        return Err(Error::dims(grid.len(), theta.len()));
    }
    if 2.0 * delta > grid.min_spacing() * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "blur width {delta} makes neighbouring kernels overlap"
        )));
    }
    let pts = grid.points();
    let last = pts.len() - 1;
    let th = theta.values();
    if th[0] != 0.0 || th[last] != 1.0 {
        return Err(Error::invalid("blur kernels at the interval ends must point inward"));
    }
    let h = delta / panels as f64;
    let mut out = Measurement::zeros(sensors.len(), grid.len());
    let add_side = |out: &mut Measurement, j: usize, weight: f64, sign: f64| {
        for k in 0..panels {
            let r = (k as f64 + 0.5) * h;
            let density = 2.0 * (1.0 - r / delta) / delta;
            let x = curve.eval(pts[j] + sign * r);
            for i in 0..sensors.len() {
                let cur = out.get(i, j);
                out.set(i, j, cur + weight * density * h * kernel_unchecked(sensors, i, x));
            }
        }
    };
    for j in 0..pts.len() {
        if th[j] != 0.0 {
            add_side(&mut out, j, th[j], -1.0);
        }
        if th[j] != 1.0 {
            add_side(&mut out, j, 1.0 - th[j], 1.0);
        }
    }
    Ok(out)
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|k| {
            p[k] = x[k] + h;
            let up = f(&p);
            p[k] = x[k] - h;
            let down = f(&p);
            p[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Transport error between two slices of possibly different mass: both are
/// rescaled to the smaller mass, and the mass gap is charged at the diameter
/// of the domain.
pub fn unbalanced_w1(a: &[(f64, f64)], b: &[(f64, f64)], dom: Domain1D) -> Result<f64> {
    check_measure(a, "first measure")?;
    check_measure(b, "second measure")?;
    let (ma, mb) = (total(a), total(b));
    let small = ma.min(mb);
    let gap = (ma - mb).abs() * dom.diam();
    if small <= 0.0 {
        return Ok(gap);
    }
    let rescale = |p: &[(f64, f64)], mass: f64| -> PointMeasure {
        p.iter().map(|&(x, w)| (x, w * small / mass)).collect()
    };
    let (ra, rb) = (rescale(a, ma), rescale(b, mb));
    // Rescaling leaves both at `small` up to rounding; match exactly.
    let fix = total(&ra) - total(&rb);
    let mut rb = rb;
    if let Some(last) = rb.last_mut() {
        last.1 += fix;
    }
    Ok(w1_1d(&ra, &rb)? + gap)
}

/// Number of equal-mass atoms used to discretize an interval slice.
pub const INTERVAL_ATOMS: usize = 64;

/// Time-`t_j` slice of a sparse measure: right traces, except the left trace
/// at the final time.
pub fn sparse_slice(mu: &SparseDiracMeasure, j: usize, last: usize) -> PointMeasure {
    mu.atoms
        .iter()
        .map(|a| {
            let x = if j == last { a.curve.gamma_minus[j] } else { a.curve.gamma_plus[j] };
            (x, a.mass)
        })
        .collect()
}

pub fn interval_slice(spec: &IntervalMeasureSpec, t: f64, left: bool) -> PointMeasure {
    let (lo, hi) = spec.bounds_at(t, left);
    let w = (hi - lo) / INTERVAL_ATOMS as f64;
    (0..INTERVAL_ATOMS)
        .map(|k| (lo + (k as f64 + 0.5) * w, w))
        .collect()
}

/// Per-sample and averaged transport error of a reconstruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct W1Error {
    pub per_sample: Vec<f64>,
    pub mean: f64,
}

/// Mean over time samples of [`unbalanced_w1`] between the reconstruction
/// and the ground truth.
pub fn sampled_w1_error(
    recon: &SparseDiracMeasure,
    truth: &GroundTruth,
    grid: &TimeGrid,
    dom: Domain1D,
) -> Result<W1Error> {
    let last = grid.len() - 1;
    for atom in &recon.atoms {
        atom.curve.check_grid(grid)?;
    }
    let per_sample = grid
        .points()
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let r = sparse_slice(recon, j, last);
            let g = match truth {
                GroundTruth::Atomic { measure } => {
                    for atom in &measure.atoms {
                        atom.curve.check_grid(grid)?;
                    }
                    sparse_slice(measure, j, last)
                }
                GroundTruth::Interval { spec } => interval_slice(spec, t, j == last),
            };
            unbalanced_w1(&r, &g, dom)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(W1Error { per_sample, mean })
}
