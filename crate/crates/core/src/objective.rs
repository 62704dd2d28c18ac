//! Fidelity, discrete regularizer, objective and dual certificate.
//!
//! Atoms carry their effective mass `m_i = lambda_i * a0(curve_i)`, so the
//! discrete regularizer of a measure equals the sum of its coefficients
//! `lambda_i`.

use crate::domain::{CadlagSamples, Measurement, SensorArray, SparseDiracMeasure, ThetaWeights, TimeGrid};
use crate::error::Result;
use crate::forward::{forward_atom, forward_measure, kernel_unchecked};

/// Gradient `(y - f) / (M + 1)` of the fidelity at `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualGradient {
    pub w: Measurement,
}

/// `||y - f||_F^2 / (2 (M + 1))`.
pub fn fidelity(y: &Measurement, f: &Measurement) -> Result<f64> {
    y.same_shape(f)?;
    let sq: f64 = y
        .as_slice()
        .iter()
        .zip(f.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sq / (2.0 * y.cols() as f64))
}

pub fn fidelity_gradient(y: &Measurement, f: &Measurement) -> Result<ResidualGradient> {
    y.same_shape(f)?;
    let mut w = y.clone();
    w.add_scaled(-1.0, f);
    let w = w.scaled(1.0 / y.cols() as f64);
    Ok(ResidualGradient { w })
}

/// Discrete essential variation of a trace pair, with `|.|` replaced by `abs`.
pub(crate) fn variation_with(curve: &CadlagSamples, abs: impl Fn(f64) -> f64) -> f64 {
    let p = &curve.gamma_plus;
    let m = &curve.gamma_minus;
    (0..p.len() - 1)
        .map(|j| abs(p[j] - m[j + 1]) + abs(p[j] - m[j]))
        .sum()
}

/// `sum_{j<M} |gamma^{j,+} - gamma^{j+1,-}| + |gamma^{j,+} - gamma^{j,-}|`.
pub fn discrete_variation(curve: &CadlagSamples) -> f64 {
    variation_with(curve, f64::abs)
}

/// `(alpha + beta * discrete_variation(curve))^-1`.
pub fn a0(alpha: f64, beta: f64, curve: &CadlagSamples) -> f64 {
    1.0 / (alpha + beta * discrete_variation(curve))
}

/// `sum_ij w_ij (K_0 curve)_ij` without allocating the forward image.
pub(crate) fn pairing(w: &Measurement, sensors: &SensorArray, theta: &[f64], curve: &CadlagSamples) -> f64 {
    let cols = w.cols();
    let data = w.as_slice();
    let mut total = 0.0;
    for (j, &th) in theta.iter().enumerate() {
        if th != 1.0 {
            let x = curve.gamma_plus[j];
            let s: f64 = (0..sensors.len())
                .map(|i| data[i * cols + j] * kernel_unchecked(sensors, i, x))
                .sum();
            total += (1.0 - th) * s;
        }
        if th != 0.0 {
            let x = curve.gamma_minus[j];
            let s: f64 = (0..sensors.len())
                .map(|i| data[i * cols + j] * kernel_unchecked(sensors, i, x))
                .sum();
            total += th * s;
        }
    }
    total
}

/// Discrete dual certificate `-a0(curve) <w, K_0 curve>`.
pub fn certificate_value(
    w: &ResidualGradient,
    sensors: &SensorArray,
    grid: &TimeGrid,
    theta: &ThetaWeights,
    alpha: f64,
    beta: f64,
    curve: &CadlagSamples,
) -> Result<f64> {
    let k = forward_atom(sensors, grid, theta, curve)?;
    w.w.same_shape(&k)?;
    Ok(-a0(alpha, beta, curve) * w.w.frobenius_dot(&k))
}

/// Exact certificate evaluator for a fixed residual gradient.
pub struct CertificateValues<'a> {
    w: &'a ResidualGradient,
    sensors: &'a SensorArray,
    theta: &'a ThetaWeights,
    alpha: f64,
    beta: f64,
}

impl<'a> CertificateValues<'a> {
    pub fn new(
        w: &'a ResidualGradient,
        sensors: &'a SensorArray,
        grid: &TimeGrid,
        theta: &'a ThetaWeights,
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        let expect = Measurement::zeros(sensors.len(), grid.len());
        w.w.same_shape(&expect)?;
        if theta.len() != grid.len() {
            return Err(crate::error::Error::dims(grid.len(), theta.len()));
        }
        Ok(CertificateValues { w, sensors, theta, alpha, beta })
    }

    pub fn value(&self, curve: &CadlagSamples) -> f64 {
        -a0(self.alpha, self.beta, curve) * pairing(&self.w.w, self.sensors, self.theta.values(), curve)
    }
}

/// `sum_i m_i (alpha + beta * discrete_variation(curve_i))`.
pub fn regularizer(mu: &SparseDiracMeasure, alpha: f64, beta: f64) -> f64 {
    mu.atoms
        .iter()
        .map(|a| a.mass * (alpha + beta * discrete_variation(&a.curve)))
        .sum()
}

/// Objective split into its two parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveParts {
    pub fidelity: f64,
    pub regularizer: f64,
}

impl ObjectiveParts {
    pub fn total(&self) -> f64 {
        self.fidelity + self.regularizer
    }
}

pub fn objective_parts(
    mu: &SparseDiracMeasure,
    f: &Measurement,
    sensors: &SensorArray,
    grid: &TimeGrid,
    theta: &ThetaWeights,
    alpha: f64,
    beta: f64,
) -> Result<ObjectiveParts> {
    let y = forward_measure(sensors, grid, theta, mu)?;
    Ok(ObjectiveParts {
        fidelity: fidelity(&y, f)?,
        regularizer: regularizer(mu, alpha, beta),
    })
}

/// `fidelity(K_0 mu, f) + regularizer(mu)`.
pub fn objective_value(
    mu: &SparseDiracMeasure,
    f: &Measurement,
    sensors: &SensorArray,
    grid: &TimeGrid,
    theta: &ThetaWeights,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    Ok(objective_parts(mu, f, sensors, grid, theta, alpha, beta)?.total())
}
