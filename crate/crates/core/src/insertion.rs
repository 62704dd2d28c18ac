//! Insertion step: maximize the discrete dual certificate over trace vectors.
//!
//! The absolute values inside the variation are replaced by
//! `eta_eps(z) = sqrt(z^2 + eps)` so that projected gradient ascent applies.
//! Starts are drawn uniformly from the domain and run independently; the best
//! start is chosen by the exact (non-smoothed) certificate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::domain::{
    AscentParams, CadlagSamples, Domain1D, Measurement, SensorArray, SolverConfig, ThetaWeights,
    TimeGrid,
};
use crate::error::{Error, Result};
use crate::forward::kernel_unchecked;
use crate::objective::{pairing, variation_with, ResidualGradient};

/// `sqrt(z^2 + eps)`.
pub fn smoothed_abs(z: f64, eps: f64) -> f64 {
    (z * z + eps).sqrt()
}

pub fn smoothed_abs_derivative(z: f64, eps: f64) -> f64 {
    z / (z * z + eps).sqrt()
}

/// Certificate functional for a fixed residual gradient.
#[derive(Clone, Copy, Debug)]
pub struct CertificateProblem<'a> {
    w: &'a Measurement,
    sensors: &'a SensorArray,
    theta: &'a [f64],
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
}

impl<'a> CertificateProblem<'a> {
    pub fn new(
        w: &'a ResidualGradient,
        sensors: &'a SensorArray,
        grid: &TimeGrid,
        theta: &'a ThetaWeights,
        alpha: f64,
        beta: f64,
        eps: f64,
    ) -> Result<Self> {
        if w.w.rows() != sensors.len() || w.w.cols() != grid.len() {
            return Err(Error::dims(
                format!("{}x{}", sensors.len(), grid.len()),
                format!("{}x{}", w.w.rows(), w.w.cols()),
            ));
        }
        if theta.len() != grid.len() {
            return Err(Error::dims(grid.len(), theta.len()));
        }
        if !(eps > 0.0) {
            return Err(Error::invalid("smoothing parameter must be positive"));
        }
        Ok(CertificateProblem {
            w: &w.w,
            sensors,
            theta: theta.values(),
            alpha,
            beta,
            eps,
        })
    }

    /// Number of time samples `M + 1`.
    pub fn samples(&self) -> usize {
        self.theta.len()
    }

    fn check(&self, curve: &CadlagSamples) -> Result<()> {
        if curve.len() != self.samples() || curve.gamma_minus.len() != self.samples() {
            return Err(Error::dims(self.samples(), curve.len()));
        }
        Ok(())
    }

    /// Exact certificate `-a0 <w, K_0 curve>`.
    pub fn exact_value(&self, curve: &CadlagSamples) -> f64 {
        let v = variation_with(curve, f64::abs);
        -pairing(self.w, self.sensors, self.theta, curve) / (self.alpha + self.beta * v)
    }

    pub fn smoothed_value(&self, curve: &CadlagSamples) -> f64 {
        let eps = self.eps;
        let v = variation_with(curve, |z| smoothed_abs(z, eps));
        -pairing(self.w, self.sensors, self.theta, curve) / (self.alpha + self.beta * v)
    }

    /// `(p_j(x), p_j'(x))` with `p_j(x) = sum_i w_ij Phi^i(x)`.
    fn column_response(&self, j: usize, x: f64) -> (f64, f64) {
        let cols = self.w.cols();
        let data = self.w.as_slice();
        let mut p = 0.0;
        let mut dp = 0.0;
        for i in 0..self.sensors.len() {
            let k = data[i * cols + j] * kernel_unchecked(self.sensors, i, x);
            p += k;
            dp -= k * (x - self.sensors.positions[i]) / self.sensors.sigma2[i];
        }
        (p, dp)
    }

    /// Smoothed value and its gradient with respect to `[gamma_plus, gamma_minus]`.
    pub fn smoothed_value_and_gradient(&self, curve: &CadlagSamples) -> (f64, Vec<f64>) {
        let n = self.samples();
        let eps = self.eps;
        let p = &curve.gamma_plus;
        let m = &curve.gamma_minus;

        // Pairing S and its gradient.
        let mut s = 0.0;
        let mut ds = vec![0.0; 2 * n];
        for (j, &th) in self.theta.iter().enumerate() {
            if th != 1.0 {
                let (v, dv) = self.column_response(j, p[j]);
                s += (1.0 - th) * v;
                ds[j] += (1.0 - th) * dv;
            }
            if th != 0.0 {
                let (v, dv) = self.column_response(j, m[j]);
                s += th * v;
                ds[n + j] += th * dv;
            }
        }

        // Smoothed variation and its gradient.
        let mut var = 0.0;
        let mut dvar = vec![0.0; 2 * n];
        for j in 0..n - 1 {
            let z1 = p[j] - m[j + 1];
            let z2 = p[j] - m[j];
            var += smoothed_abs(z1, eps) + smoothed_abs(z2, eps);
            let d1 = smoothed_abs_derivative(z1, eps);
            let d2 = smoothed_abs_derivative(z2, eps);
            dvar[j] += d1 + d2;
            dvar[n + j + 1] -= d1;
            dvar[n + j] -= d2;
        }

        // D = -a S with a = 1 / (alpha + beta V): dD = a^2 beta S dV - a dS.
        let a = 1.0 / (self.alpha + self.beta * var);
        let value = -a * s;
        let grad = ds
            .iter()
            .zip(&dvar)
            .map(|(dsk, dvk)| a * a * self.beta * s * dvk - a * dsk)
            .collect();
        (value, grad)
    }
}

/// Certificate with the variation smoothed by `eta_eps`.
#[allow(clippy::too_many_arguments)]
pub fn certificate_smoothed(
    w: &ResidualGradient,
    sensors: &SensorArray,
    grid: &TimeGrid,
    theta: &ThetaWeights,
    alpha: f64,
    beta: f64,
    eps: f64,
    curve: &CadlagSamples,
) -> Result<f64> {
    let prob = CertificateProblem::new(w, sensors, grid, theta, alpha, beta, eps)?;
    prob.check(curve)?;
    Ok(prob.smoothed_value(curve))
}

/// Gradient of [`certificate_smoothed`], ordered `[gamma_plus..., gamma_minus...]`.
#[allow(clippy::too_many_arguments)]
pub fn certificate_gradient(
    w: &ResidualGradient,
    sensors: &SensorArray,
    grid: &TimeGrid,
    theta: &ThetaWeights,
    alpha: f64,
    beta: f64,
    eps: f64,
    curve: &CadlagSamples,
) -> Result<Vec<f64>> {
    let prob = CertificateProblem::new(w, sensors, grid, theta, alpha, beta, eps)?;
    prob.check(curve)?;
    Ok(prob.smoothed_value_and_gradient(curve).1)
}

/// Result of one projected ascent run.
#[derive(Clone, Debug)]
pub struct AscentOutcome {
    pub curve: CadlagSamples,
    /// Smoothed certificate at `curve`.
    pub value: f64,
    pub iterations: usize,
}

fn project(curve: &mut CadlagSamples, dom: Domain1D) {
    for x in curve.gamma_plus.iter_mut().chain(curve.gamma_minus.iter_mut()) {
        *x = dom.clamp(*x);
    }
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Projected gradient ascent on the smoothed certificate with Armijo
/// backtracking. Steps are lengths: a trial step `s` moves the entry with
/// the largest gradient component by `s`. Each trial starts from twice the
/// last accepted step, capped at `init_step`.
pub fn gradient_ascent(
    init: &CadlagSamples,
    problem: &CertificateProblem<'_>,
    params: &AscentParams,
    init_step: f64,
    dom: Domain1D,
) -> Result<AscentOutcome> {
    problem.check(init)?;
    let n = problem.samples();
    let mut x = init.clone();
    project(&mut x, dom);
    let (mut fx, mut g) = problem.smoothed_value_and_gradient(&x);
    finite(fx, "certificate at ascent start")?;
    let mut step = init_step;
    let mut iterations = 0;

    while iterations < params.max_iters {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("certificate gradient".into()));
        }
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax == 0.0 {
            break;
        }
        let mut trial = (2.0 * step).min(init_step);
        let accepted = loop {
            let scale = trial / gmax;
            let mut cand = x.clone();
            for k in 0..n {
                cand.gamma_plus[k] = dom.clamp(x.gamma_plus[k] + scale * g[k]);
                cand.gamma_minus[k] = dom.clamp(x.gamma_minus[k] + scale * g[n + k]);
            }
            let decrease: f64 = (0..n)
                .map(|k| {
                    g[k] * (cand.gamma_plus[k] - x.gamma_plus[k])
                        + g[n + k] * (cand.gamma_minus[k] - x.gamma_minus[k])
                })
                .sum();
            if decrease <= 0.0 {
                // The projected gradient vanishes: stationary point.
                break None;
            }
            let fc = finite(problem.smoothed_value(&cand), "certificate during ascent")?;
            if fc >= fx + params.armijo_c * decrease {
                break Some((cand, fc));
            }
            trial *= params.backtrack;
            if trial < params.min_step {
                break None;
            }
        };
        match accepted {
            Some((cand, _)) => {
                x = cand;
                let (fv, gv) = problem.smoothed_value_and_gradient(&x);
                fx = finite(fv, "certificate during ascent")?;
                g = gv;
                step = trial;
                iterations += 1;
            }
            None => break,
        }
    }
    Ok(AscentOutcome {
        curve: x,
        value: fx,
        iterations,
    })
}

/// Moves trace entries that carry no data weight to the point of their
/// optimal segment nearest the preceding trace ("hold" convention).
///
/// A left trace with `theta_j = 0` only enters the variation through
/// `|gamma^{j-1,+} - gamma^{j,-}| + |gamma^{j,+} - gamma^{j,-}|`, which is
/// minimal on the whole segment between its neighbours. The hold choice
/// places every change between `t_{j-1}` and `t_j` as a jump at `t_j`. The
/// variation never increases, and the forward image is unchanged.
pub fn canonicalize_traces(curve: &CadlagSamples, theta: &ThetaWeights) -> CadlagSamples {
    let mut c = curve.clone();
    let th = theta.values();
    for j in 0..c.len() {
        if th[j] == 0.0 {
            c.gamma_minus[j] = if j == 0 { c.gamma_plus[0] } else { c.gamma_plus[j - 1] };
        }
        if th[j] == 1.0 {
            c.gamma_plus[j] = c.gamma_minus[j];
        }
    }
    c
}

/// Per-start seed derived from a master seed with SplitMix64 mixing.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(master) ^ stream) ^ index)
}

/// Uniform random trace pair in `dom`.
pub fn random_curve(samples: usize, dom: Domain1D, seed: u64) -> CadlagSamples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |_| dom.lo + rng.gen::<f64>() * dom.diam();
    let gamma_plus = (0..samples).map(&mut draw).collect();
    let gamma_minus = (0..samples).map(&mut draw).collect();
    CadlagSamples {
        gamma_plus,
        gamma_minus,
    }
}

/// Upper envelope `h(x) = max_y F(y) - c |x - y|` on a uniform grid, with
/// the maximizing index. Ties keep the point itself.
fn l1_envelope(f: &[f64], c: f64) -> (Vec<f64>, Vec<usize>) {
    let mut h = f.to_vec();
    let mut arg: Vec<usize> = (0..f.len()).collect();
    for k in 1..h.len() {
        if h[k - 1] - c > h[k] {
            h[k] = h[k - 1] - c;
            arg[k] = arg[k - 1];
        }
    }
    for k in (0..h.len().saturating_sub(1)).rev() {
        if h[k + 1] - c > h[k] {
            h[k] = h[k + 1] - c;
            arg[k] = arg[k + 1];
        }
    }
    (h, arg)
}

/// Lattice refinement factor and half-width (in lattice steps) of the local
/// search windows used after the global grid pass.
const REFINE_FACTOR: f64 = 4.0;
const REFINE_HALF_WIDTH: i32 = 8;

/// Chain layout of the coupled traces: node `2j` is `gamma^{j,-}`, node
/// `2j + 1` is `gamma^{j,+}`, ending with `gamma^{M,-}` at node `2M`.
/// `gamma^{M,+}` carries no variation and is handled on its own.
struct Chain<'p, 'a> {
    problem: &'p CertificateProblem<'a>,
    n: usize,
}

impl Chain<'_, '_> {
    fn len(&self) -> usize {
        2 * self.n - 1
    }

    fn weight(&self, node: usize) -> f64 {
        let th = self.problem.theta[node / 2];
        if node.is_multiple_of(2) {
            th
        } else {
            1.0 - th
        }
    }

    /// `-weight * p_j(x)` for each candidate position of `node`.
    fn unary(&self, node: usize, xs: &[f64]) -> Vec<f64> {
        let w = self.weight(node);
        if w == 0.0 {
            return vec![0.0; xs.len()];
        }
        xs.iter()
            .map(|&x| -w * self.problem.column_response(node / 2, x).0)
            .collect()
    }

    fn curve(&self, pos: &[f64], last_plus: f64) -> CadlagSamples {
        let mut curve = CadlagSamples::constant(pos[0], self.n);
        for (node, &x) in pos.iter().enumerate() {
            if node % 2 == 0 {
                curve.gamma_minus[node / 2] = x;
            } else {
                curve.gamma_plus[node / 2] = x;
            }
        }
        curve.gamma_plus[self.n - 1] = last_plus;
        curve
    }
}

/// Maximizes `sum unary - c sum |x_i - x_{i+1}|` over per-node candidate
/// sets by dynamic programming. Ties keep the earlier candidate.
fn chain_dp(unaries: &[Vec<f64>], sets: &[Vec<f64>], c: f64) -> Vec<usize> {
    let len = sets.len();
    let mut score = unaries[0].clone();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(len);
    for node in 1..len {
        let prev = &sets[node - 1];
        let mut next = Vec::with_capacity(sets[node].len());
        let mut arg = Vec::with_capacity(sets[node].len());
        for (k, &x) in sets[node].iter().enumerate() {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (i, &y) in prev.iter().enumerate() {
                let v = score[i] - c * (x - y).abs();
                if v > best_v {
                    best_v = v;
                    best = i;
                }
            }
            next.push(best_v + unaries[node][k]);
            arg.push(best);
        }
        score = next;
        back.push(arg);
    }
    let mut idx = vec![0usize; len];
    idx[len - 1] = argmax(&score);
    for node in (1..len).rev() {
        idx[node - 1] = back[node - 1][idx[node]];
    }
    idx
}

/// Maximizer of the exact certificate, searched globally on a uniform grid
/// of `points` positions in `dom` and then refined on nested finer lattices
/// around the current solution.
///
/// The certificate is the ratio `-S / (alpha + beta V)`. Dinkelbach's method
/// turns it into a sequence of problems `max -S - lambda (alpha + beta V)`.
/// Each is a chain of traces with absolute-difference couplings and is
/// solved exactly by dynamic programming over the candidate positions.
/// Because the lattices are nested, neighbouring traces can always coincide,
/// so flat stretches of the optimum are represented exactly.
pub fn grid_search_start(problem: &CertificateProblem<'_>, dom: Domain1D, points: usize) -> CadlagSamples {
    let chain = Chain {
        problem,
        n: problem.samples(),
    };
    let points = points.max(2);
    let mut h = dom.diam() / (points - 1) as f64;
    let xs: Vec<f64> = (0..points).map(|k| dom.lo + k as f64 * h).collect();

    // Global pass: every node shares the grid, so the min-plus step reduces
    // to an upper envelope.
    let unaries: Vec<Vec<f64>> = (0..chain.len()).map(|node| chain.unary(node, &xs)).collect();
    let last_w = 1.0 - problem.theta[chain.n - 1];
    let last_unary: Vec<f64> = xs
        .iter()
        .map(|&x| if last_w == 0.0 { 0.0 } else { -last_w * problem.column_response(chain.n - 1, x).0 })
        .collect();
    let mut last_plus = xs[argmax(&last_unary)];
    let solve_global = |lambda: f64| -> Vec<f64> {
        let c = lambda * problem.beta * h;
        let mut score = unaries[0].clone();
        let mut back = Vec::with_capacity(chain.len());
        for u in &unaries[1..] {
            let (env, arg) = l1_envelope(&score, c);
            score = env.iter().zip(u).map(|(a, b)| a + b).collect();
            back.push(arg);
        }
        let mut idx = vec![0usize; chain.len()];
        idx[chain.len() - 1] = argmax(&score);
        for node in (1..chain.len()).rev() {
            idx[node - 1] = back[node - 1][idx[node]];
        }
        idx.iter().map(|&k| xs[k]).collect()
    };
    let mut pos = solve_global(0.0);
    let mut value = problem.exact_value(&chain.curve(&pos, last_plus));
    for _ in 0..100 {
        if value <= 0.0 {
            break;
        }
        let next = solve_global(value);
        let v = problem.exact_value(&chain.curve(&next, last_plus));
        if v <= value * (1.0 + 1e-14) {
            break;
        }
        pos = next;
        value = v;
    }

    // Local passes on nested lattices; the current point stays feasible, so
    // the value never decreases.
    let min_h = 1e-10 * dom.diam();
    while value > 0.0 && h / REFINE_FACTOR > min_h {
        h /= REFINE_FACTOR;
        let window = |c: f64| -> Vec<f64> {
            let mut w: Vec<f64> = (-REFINE_HALF_WIDTH..=REFINE_HALF_WIDTH)
                .map(|k| dom.clamp(c + k as f64 * h))
                .collect();
            w.dedup();
            w
        };
        let sets: Vec<Vec<f64>> = pos.iter().map(|&c| window(c)).collect();
        let unaries: Vec<Vec<f64>> = sets.iter().enumerate().map(|(node, xs)| chain.unary(node, xs)).collect();
        if last_w != 0.0 {
            let xs = window(last_plus);
            let u: Vec<f64> = xs.iter().map(|&x| -last_w * problem.column_response(chain.n - 1, x).0).collect();
            let center = u[xs.iter().position(|&x| x == last_plus).unwrap_or(0)];
            let k = argmax(&u);
            if u[k] > center {
                last_plus = xs[k];
            }
            value = problem.exact_value(&chain.curve(&pos, last_plus));
        }
        for _ in 0..100 {
            let idx = chain_dp(&unaries, &sets, value * problem.beta);
            let next: Vec<f64> = idx.iter().enumerate().map(|(node, &k)| sets[node][k]).collect();
            let v = problem.exact_value(&chain.curve(&next, last_plus));
            if v <= value * (1.0 + 1e-14) {
                break;
            }
            pos = next;
            value = v;
        }
    }
    chain.curve(&pos, last_plus)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = k;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct InsertionOutcome {
    pub curve: CadlagSamples,
    /// Exact certificate of `curve`.
    pub value: f64,
    /// Index of the winning start; `q_starts` stands for the grid candidate.
    pub best_start: usize,
    /// Exact certificate reached by every start, in start order.
    pub start_values: Vec<f64>,
    /// Exact certificate of every start's random initialization.
    pub init_values: Vec<f64>,
}

struct StartResult {
    curve: CadlagSamples,
    value: f64,
    init_value: f64,
}

fn run_start(
    problem: &CertificateProblem<'_>,
    config: &SolverConfig,
    theta: &ThetaWeights,
    init: CadlagSamples,
) -> Result<StartResult> {
    let init_value = problem.exact_value(&init);
    let out = gradient_ascent(&init, problem, &config.ascent, config.init_step(), config.domain)?;
    let mut value = problem.exact_value(&out.curve);
    let mut curve = out.curve;
    let canon = canonicalize_traces(&curve, theta);
    let canon_value = problem.exact_value(&canon);
    if canon_value >= value {
        curve = canon;
        value = canon_value;
    }
    Ok(StartResult {
        curve,
        value,
        init_value,
    })
}

/// Multi-start insertion. Start `q` of outer iteration `stream` draws its
/// initialization from `derive_seed(config.seed, stream, q)`, so the result
/// does not depend on how the starts are scheduled.
pub fn multi_start_insertion(
    w: &ResidualGradient,
    sensors: &SensorArray,
    grid: &TimeGrid,
    theta: &ThetaWeights,
    config: &SolverConfig,
    stream: u64,
) -> Result<InsertionOutcome> {
    config.validate()?;
    let problem = CertificateProblem::new(
        w,
        sensors,
        grid,
        theta,
        config.alpha,
        config.beta,
        config.eps_smooth,
    )?;
    let samples = problem.samples();
    let results: Vec<StartResult> = (0..config.q_starts)
        .into_par_iter()
        .map(|q| {
            let init = random_curve(samples, config.domain, derive_seed(config.seed, stream, q as u64));
            run_start(&problem, config, theta, init)
        })
        .collect::<Result<_>>()?;
    let start_values = results.iter().map(|r| r.value).collect();
    let init_values = results.iter().map(|r| r.init_value).collect();

    // Highest value wins; ties go to the lowest start index, and the grid
    // candidate (index `q_starts`) comes last.
    let mut candidates = results;
    if config.grid_points >= 2 {
        // Already exact on the certificate; smoothing would only pull it off
        // the kinks of the variation.
        let curve = canonicalize_traces(&grid_search_start(&problem, config.domain, config.grid_points), theta);
        let value = problem.exact_value(&curve);
        candidates.push(StartResult {
            curve,
            value,
            init_value: value,
        });
    }
    let mut best = 0;
    for (q, r) in candidates.iter().enumerate() {
        if r.value > candidates[best].value {
            best = q;
        }
    }
    let winner = candidates.into_iter().nth(best).unwrap();
    Ok(InsertionOutcome {
        curve: winner.curve,
        value: winner.value,
        best_start: best,
        start_values,
        init_values,
    })
}
