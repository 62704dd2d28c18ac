//! Shared value types: time grids, spatial domain, trace vectors of càdlàg
//! curves, atomic measures, measurements, sensors and solver configuration.

use serde::{Deserialize, Serialize};

use crate::error::{csv_err, Error, Result};

/// Partition `0 = t_0 < ... < t_M = 1` of the unit time interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TimeGridRepr", into = "TimeGridRepr")]
pub struct TimeGrid {
    points: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TimeGridRepr {
    points: Vec<f64>,
}

impl TryFrom<TimeGridRepr> for TimeGrid {
    type Error = Error;
    fn try_from(r: TimeGridRepr) -> Result<Self> {
        TimeGrid::new(r.points)
    }
}

impl From<TimeGrid> for TimeGridRepr {
    fn from(g: TimeGrid) -> Self {
        TimeGridRepr { points: g.points }
    }
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("a time grid needs at least two points"));
        }
        if points[0] != 0.0 || *points.last().unwrap() != 1.0 {
            return Err(Error::invalid("time grid must start at 0 and end at 1"));
        }
        if points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("time grid must be strictly increasing"));
        }
        Ok(TimeGrid { points })
    }

    /// Equidistant grid with `m` intervals, `t_j = j / m`.
    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("number of time intervals must be positive"));
        }
        let points = (0..=m).map(|j| j as f64 / m as f64).collect();
        Ok(TimeGrid { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of intervals `M`; there are `M + 1` points.
    pub fn m(&self) -> usize {
        self.points.len() - 1
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Smallest spacing between consecutive points.
    pub fn min_spacing(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn make_uniform_grid(m: usize) -> Result<TimeGrid> {
    TimeGrid::uniform(m)
}

/// Closed spatial interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain1D {
    pub lo: f64,
    pub hi: f64,
}

impl Domain1D {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!("invalid domain [{lo}, {hi}]")));
        }
        Ok(Domain1D { lo, hi })
    }

    pub fn diam(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        clamp_to_domain(x, *self)
    }
}

impl Default for Domain1D {
    fn default() -> Self {
        Domain1D { lo: 0.0, hi: 5.0 }
    }
}

pub fn clamp_to_domain(x: f64, dom: Domain1D) -> f64 {
    x.max(dom.lo).min(dom.hi)
}

/// Right and left traces of a càdlàg curve at the points of a [`TimeGrid`].
///
/// `gamma_plus[j]` is the value at `t_j`, `gamma_minus[j]` the left limit there.
/// Sampled ground truths satisfy `gamma_minus[0] == gamma_plus[0]`; optimizer
/// iterates treat both entries as free.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CadlagSamples {
    pub gamma_plus: Vec<f64>,
    pub gamma_minus: Vec<f64>,
}

impl CadlagSamples {
    pub fn new(gamma_plus: Vec<f64>, gamma_minus: Vec<f64>) -> Result<Self> {
        if gamma_plus.len() != gamma_minus.len() {
            return Err(Error::dims(gamma_plus.len(), gamma_minus.len()));
        }
        if gamma_plus.len() < 2 {
            return Err(Error::invalid("trace vectors need at least two entries"));
        }
        if gamma_plus.iter().chain(&gamma_minus).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("trace vector entry".into()));
        }
        Ok(CadlagSamples {
            gamma_plus,
            gamma_minus,
        })
    }

    pub fn constant(value: f64, len: usize) -> Self {
        CadlagSamples {
            gamma_plus: vec![value; len],
            gamma_minus: vec![value; len],
        }
    }

    pub fn len(&self) -> usize {
        self.gamma_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma_plus.is_empty()
    }

    pub fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if self.gamma_plus.len() != grid.len() || self.gamma_minus.len() != grid.len() {
            return Err(Error::dims(
                format!("{} trace samples", grid.len()),
                format!("({}, {})", self.gamma_plus.len(), self.gamma_minus.len()),
            ));
        }
        Ok(())
    }

    pub fn within(&self, dom: Domain1D) -> bool {
        self.gamma_plus
            .iter()
            .chain(&self.gamma_minus)
            .all(|&x| dom.contains(x))
    }

    /// `gamma_minus[0] == gamma_plus[0]`; holds for sampled curves.
    pub fn is_anchored(&self) -> bool {
        self.gamma_minus[0] == self.gamma_plus[0]
    }

    /// Jump size `|gamma_plus[j] - gamma_minus[j]|`.
    pub fn jump_at(&self, j: usize) -> f64 {
        (self.gamma_plus[j] - self.gamma_minus[j]).abs()
    }

    /// Largest jump over the interior grid points `1..=M`.
    pub fn max_jump(&self) -> f64 {
        (1..self.len()).map(|j| self.jump_at(j)).fold(0.0, f64::max)
    }

    /// Flattened as `[gamma_plus..., gamma_minus...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.gamma_plus.clone();
        v.extend_from_slice(&self.gamma_minus);
        v
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if !flat.len().is_multiple_of(2) {
            return Err(Error::invalid("flat trace vector must have even length"));
        }
        let n = flat.len() / 2;
        CadlagSamples::new(flat[..n].to_vec(), flat[n..].to_vec())
    }
}

/// Weights `theta_j` splitting each temporal sample between left and right trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ThetaRepr", into = "ThetaRepr")]
pub struct ThetaWeights {
    theta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ThetaRepr {
    theta: Vec<f64>,
}

impl TryFrom<ThetaRepr> for ThetaWeights {
    type Error = Error;
    fn try_from(r: ThetaRepr) -> Result<Self> {
        ThetaWeights::new(r.theta)
    }
}

impl From<ThetaWeights> for ThetaRepr {
    fn from(t: ThetaWeights) -> Self {
        ThetaRepr { theta: t.theta }
    }
}

impl ThetaWeights {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.len() < 2 {
            return Err(Error::invalid("theta needs at least two entries"));
        }
        if theta[0] != 0.0 || *theta.last().unwrap() != 1.0 {
            return Err(Error::invalid("theta must be 0 at t=0 and 1 at t=1"));
        }
        if theta.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
            return Err(Error::invalid("theta entries must lie in [0, 1]"));
        }
        Ok(ThetaWeights { theta })
    }

    /// Right traces everywhere except the left trace at `t = 1`.
    pub fn right_continuous(grid: &TimeGrid) -> Self {
        let mut theta = vec![0.0; grid.len()];
        *theta.last_mut().unwrap() = 1.0;
        ThetaWeights { theta }
    }

    pub fn values(&self) -> &[f64] {
        &self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub mass: f64,
    #[serde(flatten)]
    pub curve: CadlagSamples,
}

/// `sum_i mass_i * delta_{curve_i}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseDiracMeasure {
    pub atoms: Vec<Atom>,
}

impl SparseDiracMeasure {
    pub fn empty() -> Self {
        SparseDiracMeasure { atoms: Vec::new() }
    }

    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if let Some(a) = atoms.iter().find(|a| !(a.mass >= 0.0) || !a.mass.is_finite()) {
            return Err(Error::invalid(format!("atom mass {} is not a nonnegative number", a.mass)));
        }
        Ok(SparseDiracMeasure { atoms })
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        SparseDiracMeasure {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    mass: a.mass * factor,
                    curve: a.curve.clone(),
                })
                .collect(),
        }
    }
}

/// Sensor readings, one row per sensor and one column per time sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Measurement {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for Measurement {
    type Error = Error;
    fn try_from(values: Vec<Vec<f64>>) -> Result<Self> {
        Measurement::from_rows(values)
    }
}

impl From<Measurement> for Vec<Vec<f64>> {
    fn from(m: Measurement) -> Self {
        m.to_rows()
    }
}

impl Measurement {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Measurement {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(values: Vec<Vec<f64>>) -> Result<Self> {
        let rows = values.len();
        if rows == 0 {
            return Err(Error::invalid("measurement needs at least one row"));
        }
        let cols = values[0].len();
        if values.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged measurement rows"));
        }
        Ok(Measurement {
            rows,
            cols,
            data: values.into_iter().flatten().collect(),
        })
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(rows * cols, data.len()));
        }
        Ok(Measurement { rows, cols, data })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).map(|c| c.to_vec()).collect()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Measurement) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dims(
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(())
    }

    pub fn frobenius_dot(&self, other: &Measurement) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_diff(&self, other: &Measurement) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, factor: f64, other: &Measurement) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    pub fn scaled(&self, factor: f64) -> Measurement {
        Measurement {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Headerless CSV, one line per sensor. Values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for row in self.data.chunks(self.cols.max(1)) {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let row = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::invalid(format!("bad number `{s}` in measurement")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Measurement::from_rows(rows)
    }
}

/// Gaussian sensors `Phi^i(x) = (C_i / sigma_i) exp(-(x - x_i)^2 / (2 sigma_i^2))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorArray {
    pub positions: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub c: Vec<f64>,
}

impl SensorArray {
    pub fn new(positions: Vec<f64>, sigma2: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let s = SensorArray {
            positions,
            sigma2,
            c,
        };
        s.validate()?;
        Ok(s)
    }

    /// `count` equidistant sensors covering `dom` including both endpoints.
    pub fn uniform(count: usize, dom: Domain1D, sigma2: f64, c: f64) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("need at least one sensor"));
        }
        let positions = if count == 1 {
            vec![0.5 * (dom.lo + dom.hi)]
        } else {
            let h = dom.diam() / (count - 1) as f64;
            (0..count)
                .map(|i| if i + 1 == count { dom.hi } else { dom.lo + i as f64 * h })
                .collect()
        };
        SensorArray::new(positions, vec![sigma2; count], vec![c; count])
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.positions.len();
        if l == 0 {
            return Err(Error::invalid("need at least one sensor"));
        }
        if self.sigma2.len() != l || self.c.len() != l {
            return Err(Error::dims(
                format!("{l} sensor parameters"),
                format!("sigma2: {}, c: {}", self.sigma2.len(), self.c.len()),
            ));
        }
        if self.sigma2.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("sensor variances must be positive"));
        }
        if self.positions.iter().chain(&self.c).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sensor parameter".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Largest kernel peak `max_i C_i / sigma_i`.
    pub fn max_peak(&self) -> f64 {
        self.c
            .iter()
            .zip(&self.sigma2)
            .map(|(c, s2)| c.abs() / s2.sqrt())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AscentParams {
    pub max_iters: usize,
    /// Initial trial step; `None` means `0.1 * diam(Omega)`.
    pub init_step: Option<f64>,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub min_step: f64,
}

impl Default for AscentParams {
    fn default() -> Self {
        AscentParams {
            max_iters: 300,
            init_step: None,
            armijo_c: 1e-4,
            backtrack: 0.5,
            min_step: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoeffParams {
    pub max_iters: usize,
    pub kkt_tol: f64,
    pub power_iters: usize,
}

impl Default for CoeffParams {
    fn default() -> Self {
        CoeffParams {
            max_iters: 100_000,
            kkt_tol: 1e-10,
            power_iters: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub alpha: f64,
    pub beta: f64,
    pub eps_stop: f64,
    pub eps_smooth: f64,
    pub q_starts: usize,
    /// Spatial grid size of the extra deterministic insertion candidate,
    /// which is optimal on this grid and then refined on nested finer
    /// lattices; 0 leaves only the random starts.
    pub grid_points: usize,
    pub ascent: AscentParams,
    pub coeff: CoeffParams,
    pub prune_tol: f64,
    pub max_outer_iters: usize,
    pub domain: Domain1D,
    pub seed: u64,
    /// Keep every start's certificate in the iteration history.
    pub record_start_values: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            alpha: 5.0,
            beta: 2.0,
            eps_stop: 1e-4,
            eps_smooth: 1e-6,
            q_starts: 150,
            grid_points: 500,
            ascent: AscentParams::default(),
            coeff: CoeffParams::default(),
            prune_tol: 1e-9,
            max_outer_iters: 50,
            domain: Domain1D::default(),
            seed: 0,
            record_start_values: false,
        }
    }
}

impl SolverConfig {
    pub fn with_params(alpha: f64, beta: f64) -> Self {
        SolverConfig {
            alpha,
            beta,
            ..SolverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be positive"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("beta must be positive"));
        }
        if !(self.eps_smooth > 0.0) {
            return Err(Error::invalid("eps_smooth must be positive"));
        }
        if !(self.eps_stop >= 0.0) {
            return Err(Error::invalid("eps_stop must be nonnegative"));
        }
        if self.q_starts == 0 {
            return Err(Error::invalid("q_starts must be at least 1"));
        }
        if self.grid_points == 1 {
            return Err(Error::invalid("grid_points must be 0 or at least 2"));
        }
        if !(self.prune_tol >= 0.0) {
            return Err(Error::invalid("prune_tol must be nonnegative"));
        }
        if !(self.coeff.kkt_tol > 0.0) {
            return Err(Error::invalid("kkt_tol must be positive"));
        }
        if !(self.ascent.backtrack > 0.0 && self.ascent.backtrack < 1.0) {
            return Err(Error::invalid("backtracking factor must lie in (0, 1)"));
        }
        Domain1D::new(self.domain.lo, self.domain.hi)?;
        Ok(())
    }

    pub fn init_step(&self) -> f64 {
        self.ascent.init_step.unwrap_or(0.1 * self.domain.diam())
    }
}

/// Closed-form expression of one curve piece, evaluated at time `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurveExpr {
    /// `sum_k coeffs[k] * t^k`.
    Polynomial { coeffs: Vec<f64> },
    /// `offset + scale * sqrt(t)`.
    Sqrt { offset: f64, scale: f64 },
}

impl CurveExpr {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            CurveExpr::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c),
            CurveExpr::Sqrt { offset, scale } => offset + scale * t.sqrt(),
        }
    }

    /// Time derivative; the square root piece is differentiated for `t > 0`.
    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            CurveExpr::Polynomial { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, c)| acc * t + k as f64 * c),
            CurveExpr::Sqrt { scale, .. } => 0.5 * scale / t.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePiece {
    pub start: f64,
    pub expr: CurveExpr,
}

/// Right-continuous curve on `[0, 1]`, piecewise given by closed-form
/// expressions. Piece `k` is active on `[start_k, start_{k+1})`; jumps can only
/// occur at piece starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PiecewiseRepr", into = "PiecewiseRepr")]
pub struct PiecewiseCurve {
    pieces: Vec<CurvePiece>,
}

#[derive(Serialize, Deserialize)]
struct PiecewiseRepr {
    pieces: Vec<CurvePiece>,
}

impl TryFrom<PiecewiseRepr> for PiecewiseCurve {
    type Error = Error;
    fn try_from(r: PiecewiseRepr) -> Result<Self> {
        PiecewiseCurve::new(r.pieces)
    }
}

impl From<PiecewiseCurve> for PiecewiseRepr {
    fn from(c: PiecewiseCurve) -> Self {
        PiecewiseRepr { pieces: c.pieces }
    }
}

impl PiecewiseCurve {
    pub fn new(pieces: Vec<CurvePiece>) -> Result<Self> {
        match pieces.first() {
            None => return Err(Error::invalid("curve needs at least one piece")),
            Some(p) if p.start != 0.0 => {
                return Err(Error::invalid("first curve piece must start at t = 0"))
            }
            _ => {}
        }
        for w in pieces.windows(2) {
            if !(w[0].start < w[1].start) || !(w[1].start < 1.0) {
                return Err(Error::invalid(format!(
                    "jump time {} is not a valid piece boundary in (0, 1)",
                    w[1].start
                )));
            }
        }
        Ok(PiecewiseCurve { pieces })
    }

    pub fn single(expr: CurveExpr) -> Self {
        PiecewiseCurve {
            pieces: vec![CurvePiece { start: 0.0, expr }],
        }
    }

    /// `a + b t`.
    pub fn affine(a: f64, b: f64) -> Self {
        Self::single(CurveExpr::Polynomial { coeffs: vec![a, b] })
    }

    pub fn constant(c: f64) -> Self {
        Self::single(CurveExpr::Polynomial { coeffs: vec![c] })
    }

    pub fn pieces(&self) -> &[CurvePiece] {
        &self.pieces
    }

    pub fn jump_times(&self) -> Vec<f64> {
        self.pieces.iter().skip(1).map(|p| p.start).collect()
    }

    fn piece_at(&self, t: f64) -> &CurvePiece {
        self.pieces
            .iter()
            .rev()
            .find(|p| p.start <= t)
            .unwrap_or(&self.pieces[0])
    }

    fn piece_before(&self, t: f64) -> &CurvePiece {
        self.pieces
            .iter()
            .rev()
            .find(|p| p.start < t)
            .unwrap_or(&self.pieces[0])
    }

    /// Value at `t` (right-continuous).
    pub fn eval(&self, t: f64) -> f64 {
        self.piece_at(t).expr.eval(t)
    }

    /// Left limit at `t`; equals the value at `t = 0`.
    pub fn left_limit(&self, t: f64) -> f64 {
        self.piece_before(t).expr.eval(t)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.piece_at(t).expr.derivative(t)
    }
}

/// Samples the right and left traces of `curve` on `grid`.
pub fn sample_cadlag(curve: &PiecewiseCurve, grid: &TimeGrid) -> CadlagSamples {
    let gamma_plus: Vec<f64> = grid.points().iter().map(|&t| curve.eval(t)).collect();
    let mut gamma_minus: Vec<f64> = grid.points().iter().map(|&t| curve.left_limit(t)).collect();
    gamma_minus[0] = gamma_plus[0];
    CadlagSamples {
        gamma_plus,
        gamma_minus,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measurement_csv_round_trip_is_exact() {
        let m = Measurement::from_rows(vec![
            vec![0.1, 1.0 / 3.0, -2.5e-17],
            vec![std::f64::consts::PI, 0.0, 1e300],
        ])
        .unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count(), 2);
        assert_eq!(Measurement::read_csv(buf.as_slice()).unwrap(), m);
        assert!(Measurement::read_csv("1,2\n3\n".as_bytes()).is_err());
        assert!(Measurement::read_csv("1,x\n".as_bytes()).is_err());
    }

    fn gamma3() -> PiecewiseCurve {
        PiecewiseCurve::new(vec![
            CurvePiece {
                start: 0.0,
                expr: CurveExpr::Polynomial {
                    coeffs: vec![1.0, 0.0, 1.0],
                },
            },
            CurvePiece {
                start: 0.5,
                expr: CurveExpr::Polynomial {
                    coeffs: vec![2.0, 0.0, 1.0],
                },
            },
        ])
        .unwrap()
    }

    #[test]
    fn uniform_grid_examples() {
        let g = make_uniform_grid(30).unwrap();
        assert_eq!(g.len(), 31);
        assert_eq!(g.m(), 30);
        assert_eq!(g.points()[15], 0.5);
        assert_eq!(make_uniform_grid(1).unwrap().points(), &[0.0, 1.0]);
        assert_eq!(make_uniform_grid(4).unwrap().points()[1], 0.25);
        assert!(make_uniform_grid(0).is_err());
    }

    #[test]
    fn grid_is_symmetric() {
        for m in 1..200 {
            let g = make_uniform_grid(m).unwrap();
            for j in 0..=m {
                let s = g.points()[j] + g.points()[m - j];
                assert!((s - 1.0).abs() <= f64::EPSILON, "m={m} j={j} sum={s}");
            }
        }
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.1, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.3, 1.0]).is_ok());
    }

    #[test]
    fn clamp_examples() {
        let d = Domain1D::new(0.0, 5.0).unwrap();
        assert_eq!(clamp_to_domain(6.2, d), 5.0);
        assert_eq!(clamp_to_domain(2.5, d), 2.5);
        assert_eq!(clamp_to_domain(-1.0, d), 0.0);
    }

    #[test]
    fn sample_affine_curve() {
        let g = make_uniform_grid(30).unwrap();
        let s = sample_cadlag(&PiecewiseCurve::affine(3.5, 1.0), &g);
        for j in 0..=30 {
            assert_eq!(s.gamma_plus[j], g.points()[j] + 3.5);
            assert_eq!(s.gamma_minus[j], g.points()[j] + 3.5);
        }
    }

    #[test]
    fn sample_jumping_curve() {
        let g = make_uniform_grid(30).unwrap();
        let s = sample_cadlag(&gamma3(), &g);
        assert_eq!(s.gamma_minus[15], 1.25);
        assert_eq!(s.gamma_plus[15], 2.25);
        assert!(s.is_anchored());
        assert_eq!(s.gamma_plus[30], 3.0);
        assert_eq!(s.gamma_minus[30], 3.0);
    }

    #[test]
    fn sample_constant_curve() {
        let g = make_uniform_grid(7).unwrap();
        let s = sample_cadlag(&PiecewiseCurve::constant(1.7), &g);
        assert!(s.gamma_plus.iter().chain(&s.gamma_minus).all(|&x| x == 1.7));
    }

    #[test]
    fn bad_piece_boundaries_rejected() {
        let p = |start| CurvePiece {
            start,
            expr: CurveExpr::Polynomial { coeffs: vec![1.0] },
        };
        assert!(PiecewiseCurve::new(vec![p(0.1)]).is_err());
        assert!(PiecewiseCurve::new(vec![p(0.0), p(0.5), p(0.4)]).is_err());
        assert!(PiecewiseCurve::new(vec![p(0.0), p(1.0)]).is_err());
        assert!(PiecewiseCurve::new(vec![]).is_err());
    }

    #[test]
    fn theta_invariants() {
        let g = make_uniform_grid(3).unwrap();
        let th = ThetaWeights::right_continuous(&g);
        assert_eq!(th.values(), &[0.0, 0.0, 0.0, 1.0]);
        assert!(ThetaWeights::new(vec![0.5, 1.0]).is_err());
        assert!(ThetaWeights::new(vec![0.0, 0.9]).is_err());
    }

    #[test]
    fn sensors_uniform_cover_domain() {
        let s = SensorArray::uniform(100, Domain1D::default(), 0.02, 1.0).unwrap();
        assert_eq!(s.positions[0], 0.0);
        assert_eq!(s.positions[99], 5.0);
        assert!((s.positions[1] - 5.0 / 99.0).abs() < 1e-15);
    }

    #[test]
    fn measurement_json_nested_rows() {
        let m = Measurement::from_rows(vec![vec![1.0, 2.0], vec![3.0, 0.1 + 0.2]]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[[1.0,2.0],[3.0,0.30000000000000004]]");
        let back: Measurement = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<Measurement>("[[1.0],[2.0,3.0]]").is_err());
    }

    #[test]
    fn config_defaults_from_partial_json() {
        let c: SolverConfig = serde_json::from_str(r#"{"alpha": 12, "beta": 5}"#).unwrap();
        assert_eq!(c.alpha, 12.0);
        assert_eq!(c.q_starts, 150);
        assert_eq!(c.init_step(), 0.5);
        c.validate().unwrap();
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sampled_curves_respect_invariants(
                a in 1.0f64..2.0, b in -0.5f64..0.5, jump in -0.4f64..0.4,
                tj in 0.05f64..0.95, m in 1usize..60
            ) {
                let curve = PiecewiseCurve::new(vec![
                    CurvePiece { start: 0.0, expr: CurveExpr::Polynomial { coeffs: vec![a, b] } },
                    CurvePiece { start: tj, expr: CurveExpr::Polynomial { coeffs: vec![a + jump, b] } },
                ]).unwrap();
                let g = make_uniform_grid(m).unwrap();
                let s = sample_cadlag(&curve, &g);
                prop_assert!(s.is_anchored());
                prop_assert!(s.within(Domain1D::new(0.0, 3.0).unwrap()));
                s.check_grid(&g).unwrap();
            }

            #[test]
            fn continuous_curves_have_equal_traces(c0 in 0.0f64..2.0, c1 in -1.0f64..1.0, c2 in -1.0f64..1.0, m in 1usize..60) {
                let g = make_uniform_grid(m).unwrap();
                let s = sample_cadlag(&PiecewiseCurve::single(CurveExpr::Polynomial { coeffs: vec![c0, c1, c2] }), &g);
                prop_assert_eq!(s.gamma_plus, s.gamma_minus);
            }
        }
    }
}
