//! Named ground truths, synthetic data generation and end-to-end experiment
//! runs with result, log and figure files.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    sample_cadlag, Atom, CurveExpr, CurvePiece, Domain1D, Measurement, PiecewiseCurve, SensorArray,
    SolverConfig, SparseDiracMeasure, ThetaWeights, TimeGrid,
};
use crate::error::{Error, Result};
use crate::forward::{GroundTruth, IntervalMeasureSpec};
use crate::objective::objective_value;
use crate::plot;
use crate::solver::{fcgcg_solve, ReconstructionResult};
use crate::validation::{sampled_w1_error, W1Error};

/// Number of time steps `M` in the standard setup.
pub const TIME_STEPS: usize = 30;
/// Number of Gaussian sensors in the standard setup.
pub const SENSOR_COUNT: usize = 100;
pub const SENSOR_SIGMA2: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    ThreeCurves,
    ThreeCurvesNoisy,
    Crossing,
    DiffuseMu,
    DiffuseNu,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 5] = [
        ExperimentName::ThreeCurves,
        ExperimentName::ThreeCurvesNoisy,
        ExperimentName::Crossing,
        ExperimentName::DiffuseMu,
        ExperimentName::DiffuseNu,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::ThreeCurves => "three_curves",
            ExperimentName::ThreeCurvesNoisy => "three_curves_noisy",
            ExperimentName::Crossing => "crossing",
            ExperimentName::DiffuseMu => "diffuse_mu",
            ExperimentName::DiffuseNu => "diffuse_nu",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::UnknownExperiment(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: ExperimentName,
    pub alpha: f64,
    pub beta: f64,
    pub noise_std: f64,
    /// Seed of the measurement noise.
    pub seed: u64,
}

impl ExperimentSpec {
    /// Reference regularization and noise level of each named experiment.
    pub fn standard(name: ExperimentName) -> Self {
        let (alpha, beta, noise_std) = match name {
            ExperimentName::ThreeCurves => (5.0, 2.0, 0.0),
            ExperimentName::ThreeCurvesNoisy => (5.0, 3.0, 0.2),
            ExperimentName::Crossing => (13.0, 5.0, 0.0),
            ExperimentName::DiffuseMu => (3.0, 2.0, 0.0),
            ExperimentName::DiffuseNu => (5.0, 2.0, 0.0),
        };
        ExperimentSpec {
            name,
            alpha,
            beta,
            noise_std,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::invalid("alpha and beta must be positive"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise standard deviation must be nonnegative"));
        }
        Ok(())
    }
}

/// Discretization and sensors shared by all experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Setup {
    pub domain: Domain1D,
    pub grid: TimeGrid,
    pub theta: ThetaWeights,
    pub sensors: SensorArray,
}

impl Setup {
    pub fn standard() -> Self {
        let domain = Domain1D::default();
        let grid = TimeGrid::uniform(TIME_STEPS).expect("positive step count");
        let theta = ThetaWeights::right_continuous(&grid);
        let c = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let sensors =
            SensorArray::uniform(SENSOR_COUNT, domain, SENSOR_SIGMA2, c).expect("valid sensor layout");
        Setup {
            domain,
            grid,
            theta,
            sensors,
        }
    }
}

fn poly(coeffs: &[f64]) -> CurveExpr {
    CurveExpr::Polynomial {
        coeffs: coeffs.to_vec(),
    }
}

fn jump_at_half(before: CurveExpr, after: CurveExpr) -> PiecewiseCurve {
    PiecewiseCurve::new(vec![
        CurvePiece { start: 0.0, expr: before },
        CurvePiece { start: 0.5, expr: after },
    ])
    .expect("valid pieces")
}

/// Continuous-time curves of a sparse ground truth; `None` for diffuse ones.
pub fn truth_curves(name: ExperimentName) -> Option<Vec<PiecewiseCurve>> {
    match name {
        ExperimentName::ThreeCurves | ExperimentName::ThreeCurvesNoisy => Some(vec![
            PiecewiseCurve::affine(3.5, 1.0),
            PiecewiseCurve::single(CurveExpr::Sqrt {
                offset: 2.5,
                scale: 1.0,
            }),
            jump_at_half(poly(&[1.0, 0.0, 1.0]), poly(&[2.0, 0.0, 1.0])),
        ]),
        ExperimentName::Crossing => Some(vec![
            PiecewiseCurve::affine(1.0, 3.0),
            PiecewiseCurve::affine(4.0, -3.0),
        ]),
        ExperimentName::DiffuseMu | ExperimentName::DiffuseNu => None,
    }
}

fn interval_truth(name: ExperimentName) -> Option<IntervalMeasureSpec> {
    match name {
        ExperimentName::DiffuseMu => Some(IntervalMeasureSpec {
            zeta_lo: PiecewiseCurve::affine(1.0, 1.0),
            zeta_hi: PiecewiseCurve::affine(4.0, -1.0),
        }),
        ExperimentName::DiffuseNu => Some(IntervalMeasureSpec {
            zeta_lo: jump_at_half(poly(&[1.0, 1.0]), poly(&[2.0, 1.0])),
            zeta_hi: jump_at_half(poly(&[2.0, 1.0]), poly(&[3.0, 1.0])),
        }),
        _ => None,
    }
}

/// Ground truth of a named experiment on `grid`. Sparse truths carry unit
/// masses.
pub fn ground_truth(name: ExperimentName, grid: &TimeGrid) -> GroundTruth {
    match truth_curves(name) {
        Some(curves) => GroundTruth::Atomic {
            measure: SparseDiracMeasure {
                atoms: curves
                    .iter()
                    .map(|c| Atom {
                        mass: 1.0,
                        curve: sample_cadlag(c, grid),
                    })
                    .collect(),
            },
        },
        None => GroundTruth::Interval {
            spec: interval_truth(name).expect("diffuse experiment"),
        },
    }
}

/// Adds i.i.d. `N(0, std^2)` noise drawn by the Box-Muller transform from a
/// ChaCha8 stream seeded with `seed`. Entries are filled in row-major order.
pub fn add_noise(f: &Measurement, std: f64, seed: u64) -> Result<Measurement> {
    if !(std >= 0.0 && std.is_finite()) {
        return Err(Error::invalid("noise standard deviation must be nonnegative"));
    }
    let mut out = f.clone();
    if std == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spare: Option<f64> = None;
    for v in out.as_mut_slice() {
        let z = match spare.take() {
            Some(z) => z,
            None => {
                // 1 - u lies in (0, 1], so the logarithm is finite.
                let u1 = 1.0 - rng.gen::<f64>();
                let u2 = rng.gen::<f64>();
                let r = (-2.0 * u1.ln()).sqrt();
                let phi = 2.0 * std::f64::consts::PI * u2;
                spare = Some(r * phi.sin());
                r * phi.cos()
            }
        };
        *v += std * z;
    }
    Ok(out)
}

/// Everything needed to solve or evaluate one data set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ExperimentSpec>,
    #[serde(flatten)]
    pub setup: Setup,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<GroundTruth>,
    pub f: Measurement,
}

impl DataFile {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: DataFile = serde_json::from_str(s)?;
        d.validate()?;
        Ok(d)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.setup;
        s.sensors.validate()?;
        if s.theta.len() != s.grid.len() {
            return Err(Error::dims(s.grid.len(), s.theta.len()));
        }
        if self.f.rows() != s.sensors.len() || self.f.cols() != s.grid.len() {
            return Err(Error::dims(
                format!("{}x{}", s.sensors.len(), s.grid.len()),
                format!("{}x{}", self.f.rows(), self.f.cols()),
            ));
        }
        match &self.truth {
            Some(GroundTruth::Atomic { measure }) => {
                for a in &measure.atoms {
                    a.curve.check_grid(&s.grid)?;
                }
            }
            Some(GroundTruth::Interval { spec }) => spec.validate(&s.grid, s.domain)?,
            None => {}
        }
        Ok(())
    }

    /// Objective of the sparse ground truth under the given parameters.
    pub fn truth_objective(&self, alpha: f64, beta: f64) -> Result<Option<f64>> {
        let Some(measure) = self.truth.as_ref().and_then(GroundTruth::as_atomic) else {
            return Ok(None);
        };
        let s = &self.setup;
        objective_value(measure, &self.f, &s.sensors, &s.grid, &s.theta, alpha, beta).map(Some)
    }
}

/// Generates the data of an experiment on the standard setup.
pub fn simulate(spec: &ExperimentSpec) -> Result<DataFile> {
    spec.validate()?;
    let setup = Setup::standard();
    let truth = ground_truth(spec.name, &setup.grid);
    let clean = truth.forward(&setup.sensors, &setup.grid, &setup.theta, setup.domain)?;
    let f = add_noise(&clean, spec.noise_std, spec.seed)?;
    Ok(DataFile {
        spec: Some(spec.clone()),
        setup,
        truth: Some(truth),
        f,
    })
}

/// Solves a data set with `config`.
pub fn solve_data(data: &DataFile, config: &SolverConfig) -> Result<ReconstructionResult> {
    let s = &data.setup;
    let mut cfg = config.clone();
    cfg.domain = s.domain;
    fcgcg_solve(&data.f, &s.sensors, &s.grid, &s.theta, &cfg)
}

/// Result of [`run_experiment`] with the derived error measures.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub data: DataFile,
    pub result: ReconstructionResult,
    /// Objective of the ground truth, for sparse truths.
    pub truth_objective: Option<f64>,
    pub w1_error: W1Error,
    /// Error of the zero measure, as a baseline.
    pub zero_w1_error: W1Error,
}

/// Simulates the data of `spec`, solves it with `config` (whose `alpha` and
/// `beta` are replaced by the spec's), and writes `data.json`,
/// `result.json`, `iterations.csv`, `residuals.csv`, `reconstruction.svg`
/// and `residuals.svg` into `out_dir` when given.
pub fn run_experiment(
    spec: &ExperimentSpec,
    config: &SolverConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentOutcome> {
    let data = simulate(spec)?;
    let mut cfg = config.clone();
    cfg.alpha = spec.alpha;
    cfg.beta = spec.beta;
    let result = solve_data(&data, &cfg)?;
    let truth = data.truth.as_ref().expect("simulated data has a truth");
    let s = &data.setup;
    let w1_error = sampled_w1_error(&result.measure, truth, &s.grid, s.domain)?;
    let zero_w1_error = sampled_w1_error(&SparseDiracMeasure::empty(), truth, &s.grid, s.domain)?;
    let truth_objective = data.truth_objective(spec.alpha, spec.beta)?;
    let outcome = ExperimentOutcome {
        data,
        result,
        truth_objective,
        w1_error,
        zero_w1_error,
    };
    if let Some(dir) = out_dir {
        write_outputs(&outcome, dir)?;
    }
    Ok(outcome)
}

fn write_outputs(o: &ExperimentOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    o.data.write(&dir.join("data.json"))?;
    fs::write(dir.join("result.json"), o.result.to_json()?)?;
    o.result.write_iteration_csv(fs::File::create(dir.join("iterations.csv"))?)?;
    o.result.write_residual_csv(fs::File::create(dir.join("residuals.csv"))?)?;
    let s = &o.data.setup;
    let title = o.data.spec.as_ref().map(|sp| sp.name.to_string()).unwrap_or_default();
    fs::write(
        dir.join("reconstruction.svg"),
        plot::reconstruction_svg(&o.result.measure, &s.grid, s.domain, o.data.truth.as_ref(), &title),
    )?;
    fs::write(dir.join("residuals.svg"), plot::residual_svg(&o.result.residuals()))?;
    Ok(())
}
