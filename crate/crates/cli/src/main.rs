use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bvtrack_core::experiments::{run_experiment, simulate, DataFile, ExperimentName, ExperimentSpec};
use bvtrack_core::plot::{reconstruction_svg, residual_svg};
use bvtrack_core::solver::certify;
use bvtrack_core::validation::w1_1d;
use bvtrack_core::{ReconstructionResult, Result, SolverConfig, TimeGrid};
use clap::{Args, Parser, Subcommand};

/// Sparse tracking of jumping point sources from blurred sensor data.
#[derive(Parser)]
#[command(name = "bvtrack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic data for a named experiment.
    Simulate {
        #[arg(long)]
        spec: ExperimentName,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        noise_std: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the measurement matrix as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Reconstruct a measure from a data file.
    Solve {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: PathBuf,
        /// Iteration log (CSV).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Residual log (CSV).
        #[arg(long)]
        residuals: Option<PathBuf>,
    },
    /// Re-check a stored reconstruction against its data.
    Certify {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        recon: PathBuf,
    },
    /// Draw a reconstruction (and optionally the ground truth) as SVG.
    Plot {
        #[arg(long)]
        recon: PathBuf,
        /// Data file; supplies the time grid and the ground truth.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the residual plot here.
        #[arg(long)]
        residuals: Option<PathBuf>,
    },
    /// Wasserstein-1 distance between two equal-mass point measures, each a
    /// JSON list of `[position, mass]` pairs.
    W1 {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Simulate, solve and plot named experiments into a directory.
    Run {
        /// Experiment name, or `all`.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        noise_std: Option<f64>,
        /// Noise seed.
        #[arg(long)]
        noise_seed: Option<u64>,
        /// Experiments run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Args, Clone, Default)]
struct SolverArgs {
    /// JSON file with solver settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Number of random starts per insertion.
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    eps_stop: Option<f64>,
    #[arg(long)]
    eps_smooth: Option<f64>,
    #[arg(long)]
    max_outer_iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SolverArgs {
    /// File settings, then the data's own parameters, then flags.
    fn resolve(&self, spec: Option<&ExperimentSpec>) -> Result<SolverConfig> {
        let mut cfg = match &self.config {
            Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
            None => SolverConfig::default(),
        };
        if let (Some(s), None) = (spec, &self.config) {
            cfg.alpha = s.alpha;
            cfg.beta = s.beta;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.q {
            cfg.q_starts = v;
        }
        if let Some(v) = self.eps_stop {
            cfg.eps_stop = v;
        }
        if let Some(v) = self.eps_smooth {
            cfg.eps_smooth = v;
        }
        if let Some(v) = self.max_outer_iters {
            cfg.max_outer_iters = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_result(path: &Path) -> Result<ReconstructionResult> {
    ReconstructionResult::from_json(&fs::read_to_string(path)?)
}

fn read_points(path: &Path) -> Result<Vec<(f64, f64)>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate {
            spec,
            out,
            noise_std,
            seed,
            csv,
        } => {
            let mut s = ExperimentSpec::standard(spec);
            if let Some(v) = noise_std {
                s.noise_std = v;
            }
            if let Some(v) = seed {
                s.seed = v;
            }
            let data = simulate(&s)?;
            data.write(&out)?;
            if let Some(p) = csv {
                data.f.write_csv(fs::File::create(p)?)?;
            }
            println!("wrote {}", out.display());
        }
        Command::Solve {
            data,
            solver,
            out,
            log,
            residuals,
        } => {
            let d = DataFile::read(&data)?;
            let cfg = solver.resolve(d.spec.as_ref())?;
            let res = bvtrack_core::experiments::solve_data(&d, &cfg)?;
            fs::write(&out, res.to_json()?)?;
            if let Some(p) = log {
                res.write_iteration_csv(fs::File::create(p)?)?;
            }
            if let Some(p) = residuals {
                res.write_residual_csv(fs::File::create(p)?)?;
            }
            let last = res.final_record();
            println!(
                "{} atoms, objective {:.10}, certificate {:.8}, stop: {:?}",
                res.measure.len(),
                last.objective,
                last.certificate_max,
                res.stop_reason
            );
        }
        Command::Certify { data, recon } => {
            let d = DataFile::read(&data)?;
            let res = read_result(&recon)?;
            let s = &d.setup;
            let report = certify(&res, &d.f, &s.sensors, &s.grid, &s.theta)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            return Ok(report.passed);
        }
        Command::Plot {
            recon,
            truth,
            out,
            residuals,
        } => {
            let res = read_result(&recon)?;
            let data = truth.as_deref().map(DataFile::read).transpose()?;
            let (grid, dom) = match &data {
                Some(d) => (d.setup.grid.clone(), d.setup.domain),
                None => {
                    let n = res.measure.atoms.first().map_or(2, |a| a.curve.len());
                    (TimeGrid::uniform(n.saturating_sub(1).max(1))?, res.config.domain)
                }
            };
            for a in &res.measure.atoms {
                a.curve.check_grid(&grid)?;
            }
            let title = data
                .as_ref()
                .and_then(|d| d.spec.as_ref())
                .map(|s| s.name.to_string())
                .unwrap_or_default();
            let truth = data.as_ref().and_then(|d| d.truth.as_ref());
            fs::write(&out, reconstruction_svg(&res.measure, &grid, dom, truth, &title))?;
            if let Some(p) = residuals {
                fs::write(p, residual_svg(&res.residuals()))?;
            }
        }
        Command::W1 { a, b } => {
            let d = w1_1d(&read_points(&a)?, &read_points(&b)?)?;
            println!("{d}");
        }
        Command::Run {
            spec,
            out_dir,
            solver,
            noise_std,
            noise_seed,
            jobs,
        } => {
            let names: Vec<ExperimentName> = if spec == "all" {
                ExperimentName::ALL.to_vec()
            } else {
                vec![spec.parse()?]
            };
            let specs: Vec<ExperimentSpec> = names
                .into_iter()
                .map(|n| {
                    let mut s = ExperimentSpec::standard(n);
                    if let Some(v) = noise_std {
                        s.noise_std = v;
                    }
                    if let Some(v) = noise_seed {
                        s.seed = v;
                    }
                    if let Some(v) = solver.alpha {
                        s.alpha = v;
                    }
                    if let Some(v) = solver.beta {
                        s.beta = v;
                    }
                    s
                })
                .collect();
            let configs = specs
                .iter()
                .map(|s| solver.resolve(Some(s)))
                .collect::<Result<Vec<_>>>()?;
            let jobs = jobs.max(1);
            for (chunk_specs, chunk_cfgs) in specs.chunks(jobs).zip(configs.chunks(jobs)) {
                let outcomes: Vec<Result<()>> = std::thread::scope(|scope| {
                    let handles: Vec<_> = chunk_specs
                        .iter()
                        .zip(chunk_cfgs)
                        .map(|(s, c)| {
                            let dir = out_dir.join(s.name.as_str());
                            scope.spawn(move || {
                                let o = run_experiment(s, c, Some(&dir))?;
                                let last = o.result.final_record();
                                println!(
                                    "{}: {} atoms, objective {:.8}, certificate {:.8}, w1 error {:.6}",
                                    s.name,
                                    o.result.measure.len(),
                                    last.objective,
                                    last.certificate_max,
                                    o.w1_error.mean
                                );
                                Ok(())
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("experiment thread panicked"))
                        .collect()
                });
                outcomes.into_iter().collect::<Result<()>>()?;
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bvtrack_core::Error;

    #[test]
    fn flags_override_config_values() {
        let args = SolverArgs {
            alpha: Some(7.0),
            q: Some(3),
            ..SolverArgs::default()
        };
        let spec = ExperimentSpec::standard(ExperimentName::Crossing);
        let cfg = args.resolve(Some(&spec)).unwrap();
        assert_eq!(cfg.alpha, 7.0);
        assert_eq!(cfg.beta, 5.0);
        assert_eq!(cfg.q_starts, 3);
    }

    #[test]
    fn invalid_overrides_are_rejected() {
        let args = SolverArgs {
            eps_stop: Some(-1.0),
            ..SolverArgs::default()
        };
        assert!(matches!(args.resolve(None), Err(Error::InvalidInput(_))));
    }
}
