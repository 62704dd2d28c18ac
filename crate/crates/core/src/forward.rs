//! Discrete forward operator: Gaussian sensors read each time sample of a
//! curve at its right trace, its left trace, or a `theta`-weighted mix of both.
//!
//! Kernels are evaluated on all of the real line. Truncating them to the
//! spatial domain changes nothing measurable for the sensor widths used here
//! (the tail mass beyond the domain is below `1e-100`).

use serde::{Deserialize, Serialize};

use crate::domain::{
    CadlagSamples, Domain1D, Measurement, PiecewiseCurve, SensorArray, SparseDiracMeasure,
    ThetaWeights, TimeGrid,
};
use crate::error::{Error, Result};

/// Unit-density measure on `[zeta_lo(t), zeta_hi(t)]` at every time `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalMeasureSpec {
    pub zeta_lo: PiecewiseCurve,
    pub zeta_hi: PiecewiseCurve,
}

impl IntervalMeasureSpec {
    /// Boundary traces `(lo, hi)` at `t`, either the values or the left limits.
    pub fn bounds_at(&self, t: f64, left: bool) -> (f64, f64) {
        if left {
            (self.zeta_lo.left_limit(t), self.zeta_hi.left_limit(t))
        } else {
            (self.zeta_lo.eval(t), self.zeta_hi.eval(t))
        }
    }

    /// Checks the boundaries on the grid (both traces).
    pub fn validate(&self, grid: &TimeGrid, dom: Domain1D) -> Result<()> {
        for &t in grid.points() {
            for left in [false, true] {
                let (a, b) = self.bounds_at(t, left);
                if a > b {
                    return Err(Error::invalid(format!("interval boundaries cross at t = {t}")));
                }
                if !dom.contains(a) || !dom.contains(b) {
                    return Err(Error::invalid(format!(
                        "interval [{a}, {b}] at t = {t} leaves the domain"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Mass `zeta_hi - zeta_lo` of the time-`t` slice.
    pub fn mass_at(&self, t: f64, left: bool) -> f64 {
        let (a, b) = self.bounds_at(t, left);
        b - a
    }
}

/// Ground truth used to generate data: a sparse sum of curves or a diffuse
/// interval measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    Atomic { measure: SparseDiracMeasure },
    Interval { spec: IntervalMeasureSpec },
}

impl GroundTruth {
    pub fn forward(
        &self,
        sensors: &SensorArray,
        grid: &TimeGrid,
        theta: &ThetaWeights,
        dom: Domain1D,
    ) -> Result<Measurement> {
        match self {
            GroundTruth::Atomic { measure } => forward_measure(sensors, grid, theta, measure),
            GroundTruth::Interval { spec } => forward_interval_measure(sensors, grid, theta, spec, dom),
        }
    }

    pub fn as_atomic(&self) -> Option<&SparseDiracMeasure> {
        match self {
            GroundTruth::Atomic { measure } => Some(measure),
            GroundTruth::Interval { .. } => None,
        }
    }
}

fn check_index(sensors: &SensorArray, i: usize) -> Result<()> {
    if i >= sensors.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: sensors.len(),
        });
    }
    Ok(())
}

#[inline]
pub(crate) fn kernel_unchecked(sensors: &SensorArray, i: usize, x: f64) -> f64 {
    let s2 = sensors.sigma2[i];
    let d = x - sensors.positions[i];
    sensors.c[i] / s2.sqrt() * (-d * d / (2.0 * s2)).exp()
}

/// `Phi^i(x)`.
pub fn kernel_eval(sensors: &SensorArray, i: usize, x: f64) -> Result<f64> {
    check_index(sensors, i)?;
    Ok(kernel_unchecked(sensors, i, x))
}

/// `d/dx Phi^i(x) = -(x - x_i) / sigma_i^2 * Phi^i(x)`.
pub fn kernel_derivative(sensors: &SensorArray, i: usize, x: f64) -> Result<f64> {
    check_index(sensors, i)?;
    Ok(-(x - sensors.positions[i]) / sensors.sigma2[i] * kernel_unchecked(sensors, i, x))
}

/// `int_a^b Phi^i(x) dx` through the error function.
///
/// Differences are taken between complementary error functions when both
/// limits lie on the same side of the sensor, so far tails keep full
/// relative accuracy.
pub fn kernel_interval_integral(sensors: &SensorArray, i: usize, a: f64, b: f64) -> Result<f64> {
    check_index(sensors, i)?;
    if a > b {
        return Err(Error::invalid(format!("interval [{a}, {b}] is reversed")));
    }
    Ok(interval_integral_unchecked(sensors, i, a, b))
}

pub(crate) fn interval_integral_unchecked(sensors: &SensorArray, i: usize, a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let sigma = sensors.sigma2[i].sqrt();
    let scale = sensors.c[i] * (std::f64::consts::PI / 2.0).sqrt();
    let ua = (a - sensors.positions[i]) / (sigma * std::f64::consts::SQRT_2);
    let ub = (b - sensors.positions[i]) / (sigma * std::f64::consts::SQRT_2);
    let diff = if ua >= 0.0 {
        libm::erfc(ua) - libm::erfc(ub)
    } else if ub <= 0.0 {
        libm::erfc(-ub) - libm::erfc(-ua)
    } else {
        libm::erf(ub) - libm::erf(ua)
    };
    scale * diff
}

fn check_dims(
    sensors: &SensorArray,
    grid: &TimeGrid,
    theta: &ThetaWeights,
    curve: Option<&CadlagSamples>,
) -> Result<()> {
    if theta.len() != grid.len() {
        return Err(Error::dims(
            format!("{} theta weights", grid.len()),
            theta.len(),
        ));
    }
    if let Some(c) = curve {
        c.check_grid(grid)?;
    }
    if sensors.is_empty() {
        return Err(Error::invalid("need at least one sensor"));
    }
    Ok(())
}

/// Adds `factor * K_0 delta_curve` into `out`; dimensions are assumed checked.
pub(crate) fn accumulate_atom(
    out: &mut Measurement,
    factor: f64,
    sensors: &SensorArray,
    theta: &[f64],
    curve: &CadlagSamples,
) {
    let cols = out.cols();
    let data = out.as_mut_slice();
    for (j, &th) in theta.iter().enumerate() {
        if th != 1.0 {
            let x = curve.gamma_plus[j];
            let w = factor * (1.0 - th);
            for i in 0..sensors.len() {
                data[i * cols + j] += w * kernel_unchecked(sensors, i, x);
            }
        }
        if th != 0.0 {
            let x = curve.gamma_minus[j];
            let w = factor * th;
            for i in 0..sensors.len() {
                data[i * cols + j] += w * kernel_unchecked(sensors, i, x);
            }
        }
    }
}

/// `(K_0 curve)^i_j = theta_j Phi^i(gamma^{j,-}) + (1 - theta_j) Phi^i(gamma^{j,+})`.
pub fn forward_atom(
    sensors: &SensorArray,
    grid: &TimeGrid,
    theta: &ThetaWeights,
    curve: &CadlagSamples,
) -> Result<Measurement> {
    check_dims(sensors, grid, theta, Some(curve))?;
    let mut out = Measurement::zeros(sensors.len(), grid.len());
    accumulate_atom(&mut out, 1.0, sensors, theta.values(), curve);
    Ok(out)
}

pub fn forward_measure(
    sensors: &SensorArray,
    grid: &TimeGrid,
    theta: &ThetaWeights,
    mu: &SparseDiracMeasure,
) -> Result<Measurement> {
    check_dims(sensors, grid, theta, None)?;
    let mut out = Measurement::zeros(sensors.len(), grid.len());
    for atom in &mu.atoms {
        atom.curve.check_grid(grid)?;
        accumulate_atom(&mut out, atom.mass, sensors, theta.values(), &atom.curve);
    }
    Ok(out)
}

/// Forward data of a unit-density interval measure.
pub fn forward_interval_measure(
    sensors: &SensorArray,
    grid: &TimeGrid,
    theta: &ThetaWeights,
    spec: &IntervalMeasureSpec,
    dom: Domain1D,
) -> Result<Measurement> {
    check_dims(sensors, grid, theta, None)?;
    spec.validate(grid, dom)?;
    let mut out = Measurement::zeros(sensors.len(), grid.len());
    for (j, (&t, &th)) in grid.points().iter().zip(theta.values()).enumerate() {
        let (a_plus, b_plus) = spec.bounds_at(t, false);
        let (a_minus, b_minus) = if j == 0 { (a_plus, b_plus) } else { spec.bounds_at(t, true) };
        for i in 0..sensors.len() {
            let mut v = 0.0;
            if th != 1.0 {
                v += (1.0 - th) * interval_integral_unchecked(sensors, i, a_plus, b_plus);
            }
            if th != 0.0 {
                v += th * interval_integral_unchecked(sensors, i, a_minus, b_minus);
            }
            out.set(i, j, v);
        }
    }
    Ok(out)
}
