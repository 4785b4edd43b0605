//! Config-driven runs: simulate, solve, check, and write the artifacts.
//!
//! Files written to the output directory:
//!
//! - `scenario_manifest.tsv`: one line per path.
//! - `scenario_<i>.tsv`: realised and compensator atoms of the first paths.
//! - `solution_steps.csv`, `solution_atoms.csv`: solver output.
//! - `l_fit.csv`: the fitted `l` at every `K`-atom (with the `u` check).
//! - `report.csv`: one row, one column per statistic.
//! - `summary.txt`: the same, readable, plus the verdict or the fault.

mod config;
mod report;

pub use config::{
    parse_config, Check, ConfigError, ExperimentConfig, JumpDiffusionSpec, LinearDriver,
    ModelSpec, OutputConfig, PdmpSpec, RunConfig, SolverKind, Terminal, Tolerances, ALL_CHECKS,
};
pub use report::{CheckResult, Report};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::bsde::{
    benchmark, martingale_residual, solve_bsde_lsmc, solve_bsde_pdmp, BsdeError, BsdeProblem,
    BsdeSolution, Driver, DriverClock, Oracle,
};
use crate::identify::{
    compute_h, decompose_h_on_k, extract_remainder, identify_z, l2_split, martingale_null_test,
    oracle_increment, orthogonality_test, y_rel_error, AtomField, IdentifyError,
};
use crate::measures::io::{fmt_f64, write_measure_tsv};
use crate::measures::{
    bracket_c, classify_supports, stochastic_integral, MarkLaw, MeasureError, PredictableField,
    TimeGrid,
};
use crate::processes::{
    simulate_ensemble, verify_measure_transfer, ClockSpec, DrivingMeasure, ForwardModel,
    JumpDiffusionModel, PdmpModel, ScalarFn, SimulatedScenario, SimulationError,
};
use crate::stats::{pairwise_sum, MeanSe};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("check `{check}` does not apply: {reason}")]
    Inapplicable { check: Check, reason: String },
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Bsde(#[from] BsdeError),
    #[error(transparent)]
    Identify(#[from] IdentifyError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl ExperimentError {
    /// Coarse fault class reported in `summary.txt`.
    pub fn category(&self) -> &'static str {
        match self {
            ExperimentError::Config(_) | ExperimentError::Inapplicable { .. } => "config",
            ExperimentError::Simulation(_) => "simulation",
            ExperimentError::Measure(_) => "measure",
            ExperimentError::Bsde(_) => "bsde",
            ExperimentError::Identify(_) => "identify",
            ExperimentError::Io { .. } => "io",
        }
    }
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Report,
    pub summary: String,
    pub out_dir: PathBuf,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.report.all_pass()
    }
}

/// Model, BSDE and oracle resolved from a config.
pub struct Setup {
    pub problem: BsdeProblem,
    pub oracle: Option<Oracle>,
    pub horizon: f64,
    /// Added to the predictable surrogate of `U` but not to its values at
    /// the realised atoms (positive controls).
    pub control_shift: Option<f64>,
}

impl std::fmt::Debug for Setup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Setup")
            .field("problem", &self.problem)
            .field("oracle", &self.oracle)
            .field("horizon", &self.horizon)
            .field("control_shift", &self.control_shift)
            .finish()
    }
}

fn scaled_oracle(o: Oracle, scale: f64) -> Oracle {
    if scale == 1.0 {
        return o;
    }
    let provenance = o.provenance.clone();
    let d = o.clone();
    Oracle::new(
        move |t, x| scale * o.value(t, x),
        move |t, x| scale * d.derivative(t, x),
        provenance,
    )
}

fn pdmp_model(spec: &PdmpSpec) -> Result<ForwardModel, SimulationError> {
    let [a, b] = spec.h;
    let rate = spec.rate;
    let landing: Arc<[f64]> = spec.landing.clone().into();
    let m = PdmpModel::new(
        Arc::new(move |x| a + b * x),
        Arc::new(move |_| rate),
        rate,
        Arc::new(move |y| {
            MarkLaw::uniform_discrete(landing.iter().map(|s| s - y).collect())
                .expect("landing states are validated non-empty")
        }),
        spec.x0,
    )?;
    Ok(ForwardModel::Pdmp(m))
}

fn jump_diffusion_model(spec: &JumpDiffusionSpec) -> Result<ForwardModel, SimulationError> {
    let (drift, sigma, rate) = (spec.drift, spec.sigma, spec.rate);
    let driving = if rate > 0.0 {
        let marks = MarkLaw::uniform_discrete(spec.marks.clone())?;
        DrivingMeasure {
            rate: Arc::new(move |_| rate),
            rate_max: rate,
            marks: Arc::new(move |_| marks.clone()),
            atoms: Vec::new(),
        }
    } else {
        DrivingMeasure::none()
    };
    Ok(ForwardModel::JumpDiffusion(JumpDiffusionModel {
        b: Arc::new(move |_, _| drift),
        sigma: (sigma != 0.0).then(|| Arc::new(move |_: f64, _: f64| sigma) as _),
        gamma: Arc::new(|_, _, e| e),
        driving,
        clock: ClockSpec::time(),
        x0: spec.x0,
    }))
}

/// Builds the problem, and the oracle when the config names a benchmark.
pub fn setup(cfg: &ExperimentConfig) -> Result<Setup, ExperimentError> {
    let scale = cfg.scale;
    match &cfg.model {
        ModelSpec::Benchmark(id) => {
            let b = benchmark(id)?;
            let oracle = scaled_oracle(b.oracle()?, scale);
            let mut problem = b.problem;
            if scale != 1.0 {
                let g = problem.terminal.clone();
                problem.terminal = Arc::new(move |x| scale * g(x));
            }
            if let Some(h) = cfg.run.horizon {
                if h != b.horizon {
                    return Err(ConfigError::Invalid(vec![format!(
                        "`run.horizon` = {h} differs from the horizon {} of benchmark `{id}`",
                        b.horizon
                    )])
                    .into());
                }
            }
            Ok(Setup {
                problem,
                oracle: Some(oracle),
                horizon: b.horizon,
                control_shift: b.control_shift.map(|s| s * scale),
            })
        }
        spec => {
            let model = match spec {
                ModelSpec::Pdmp(p) => pdmp_model(p)?,
                ModelSpec::JumpDiffusion(j) => jump_diffusion_model(j)?,
                ModelSpec::Benchmark(_) => unreachable!(),
            };
            let terminal = cfg.terminal.expect("explicit models carry a terminal");
            let g: ScalarFn = Arc::new(move |x| scale * terminal.eval(x));
            let d = cfg.driver;
            let has_jumps = match &model {
                ForwardModel::Pdmp(_) => true,
                ForwardModel::JumpDiffusion(m) => m.driving.rate_max > 0.0,
            };
            let clock = if has_jumps {
                DriverClock::Compensator
            } else {
                DriverClock::Time
            };
            let problem = BsdeProblem::new(model, g)
                .with_driver(Driver::linear(d.y, d.z, d.u, scale * d.c))
                .with_clock(clock);
            Ok(Setup {
                problem,
                oracle: None,
                horizon: cfg.run.horizon.expect("validated"),
                control_shift: None,
            })
        }
    }
}

fn has_jumps(model: &ForwardModel) -> bool {
    match model {
        ForwardModel::Pdmp(_) => true,
        ForwardModel::JumpDiffusion(m) => m.driving.rate_max > 0.0 || !m.driving.atoms.is_empty(),
    }
}

/// Why `check` cannot run on this setup, if it cannot.
fn inapplicable(check: Check, s: &Setup) -> Option<&'static str> {
    let model = &s.problem.model;
    let oracle = s.oracle.is_some();
    match check {
        Check::Y | Check::U | Check::Martingale | Check::Pathwise if !oracle => {
            Some("needs a benchmark oracle")
        }
        Check::Z | Check::Orthogonality if !oracle => Some("needs a benchmark oracle"),
        Check::Z | Check::Orthogonality if model.sigma().is_none() => {
            Some("the model has no Brownian part")
        }
        Check::Transfer | Check::Bracket | Check::U | Check::Martingale | Check::Pathwise
            if !has_jumps(model) =>
        {
            Some("the model has no jumps")
        }
        _ => None,
    }
}

/// Checks run when the config does not list any: every applicable one,
/// with the `J = K` classification reserved for PDMPs.
fn default_checks(s: &Setup) -> Vec<Check> {
    ALL_CHECKS
        .into_iter()
        .filter(|&c| inapplicable(c, s).is_none())
        .filter(|&c| c != Check::Classification || s.problem.model.is_pdmp())
        .collect()
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), ExperimentError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| ExperimentError::Io { path, source })
}

fn manifest(ensemble: &[SimulatedScenario]) -> String {
    let mut out = String::from("path\tseed\tnodes\tatoms\tpredictable_atoms\tx_T\n");
    for sc in ensemble {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            sc.path_index,
            sc.seed,
            sc.grid().len(),
            sc.measure.len(),
            sc.compensator.atoms().len(),
            fmt_f64(sc.path.terminal())
        );
    }
    out
}

/// Runs a validated config and writes every artifact. On a fault the
/// summary (with the fault category) is still written when possible.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir).map_err(|source| ExperimentError::Io {
        path: dir.clone(),
        source,
    })?;
    match run_inner(cfg, &dir) {
        Ok(outcome) => Ok(outcome),
        Err(e) => {
            let summary = format!(
                "experiment: {}\nresult: FAULT\nfault: {}: {e}\n",
                cfg.name,
                e.category()
            );
            // best effort: the original fault matters more than this write
            let _ = std::fs::write(dir.join("summary.txt"), summary);
            Err(e)
        }
    }
}

fn run_inner(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome, ExperimentError> {
    let s = setup(cfg)?;
    let checks = match &cfg.run.checks {
        Some(list) => {
            for &c in list {
                if let Some(reason) = inapplicable(c, &s) {
                    return Err(ExperimentError::Inapplicable {
                        check: c,
                        reason: reason.to_string(),
                    });
                }
            }
            list.clone()
        }
        None => default_checks(&s),
    };
    let tol = cfg.run.tolerances;
    let model = &s.problem.model;

    let grid = TimeGrid::uniform(s.horizon, cfg.run.steps)?;
    let ensemble = simulate_ensemble(model, &grid, cfg.run.seed, cfg.run.paths)?;
    write(dir, "scenario_manifest.tsv", &manifest(&ensemble))?;
    let dumped = &ensemble[..cfg.output.dump_paths.min(ensemble.len())];
    for sc in dumped {
        write(
            dir,
            &format!("scenario_{}.tsv", sc.path_index),
            &write_measure_tsv(&sc.measure, Some(&sc.compensator)),
        )?;
    }

    let mut report = Report::new(cfg);
    let needs_solution = checks.iter().any(|c| {
        matches!(
            c,
            Check::Y | Check::Z | Check::U | Check::Martingale | Check::Residual
        )
    });
    let solution = if needs_solution {
        let sol = solve(cfg, &s, &ensemble)?;
        write(dir, "solution_steps.csv", &sol.steps_csv())?;
        write(dir, "solution_atoms.csv", &sol.atoms_csv(dumped))?;
        report.y0 = Some(sol.y0());
        Some(sol)
    } else {
        None
    };

    for &check in &checks {
        match check {
            Check::Transfer => {
                let phis = [
                    PredictableField::jump_transform(|_, x| if x.abs() <= 1.0 { x * x } else { 0.0 })?,
                    PredictableField::jump_transform(|_, x| x.abs().min(1.0))?,
                ];
                let worst = ensemble
                    .par_iter()
                    .map(|sc| {
                        phis.iter().try_fold(0.0f64, |m, phi| {
                            Ok::<_, SimulationError>(
                                m.max(verify_measure_transfer(phi, model, sc)?.max()),
                            )
                        })
                    })
                    .collect::<Result<Vec<f64>, _>>()?
                    .into_iter()
                    .fold(0.0, f64::max);
                report.transfer_max = Some(worst);
            }
            Check::Bracket => {
                let w = PredictableField::new(|_, _, e| e);
                let pairs = ensemble
                    .par_iter()
                    .map(|sc| {
                        let m = stochastic_integral(&w, &sc.measure, &sc.compensator, &sc.path)?;
                        let c = bracket_c(&w, &sc.compensator, &sc.path)?;
                        Ok((m.terminal().powi(2), c.terminal()))
                    })
                    .collect::<Result<Vec<(f64, f64)>, MeasureError>>()?;
                let sq: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                let br: Vec<f64> = pairs.iter().map(|p| p.1).collect();
                let diff: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
                let n = pairs.len() as f64;
                report.bracket = Some((
                    pairwise_sum(&sq) / n,
                    pairwise_sum(&br) / n,
                    MeanSe::of(&diff),
                ));
            }
            Check::Classification => {
                let mut violations = 0usize;
                let mut k_atoms = 0usize;
                for sc in &ensemble {
                    let sup = classify_supports(&sc.compensator);
                    k_atoms += sup.k_atoms.len();
                    let counted = sc
                        .p_star
                        .as_ref()
                        .is_none_or(|p| p.terminal() == sup.k_atoms.len() as f64);
                    if !sup.j_equals_k() || !counted {
                        violations += 1;
                    }
                }
                report.classification = Some((violations, k_atoms));
            }
            Check::Y => {
                let sol = solution.as_ref().expect("solved");
                let o = s.oracle.as_ref().expect("applicable");
                report.y_rel_error = Some(y_rel_error(sol, o, &ensemble)?);
            }
            Check::Z => {
                let sol = solution.as_ref().expect("solved");
                let o = s.oracle.as_ref().expect("applicable");
                report.z_rel_error = Some(identify_z(sol, o, model, &ensemble)?);
            }
            Check::U => {
                let sol = solution.as_ref().expect("solved");
                let o = s.oracle.as_ref().expect("applicable");
                let u = solver_u(sol, s.control_shift);
                let h = compute_h(&u, o, model, &ensemble)?;
                let split = decompose_h_on_k(&h, &ensemble)?;
                let (u_nuc, u_nud) = l2_split(&u, &ensemble)?;
                let mut lines = String::from("path,hit,t,l\n");
                for l in &split.l_fit {
                    let _ = writeln!(lines, "{},{},{},{}", l.path, l.hit, fmt_f64(l.time), fmt_f64(l.l));
                }
                write(dir, "l_fit.csv", &lines)?;
                report.u_split = Some((split.h_nuc_l2, u_nuc, split.h_nud_residual, u_nud));
            }
            Check::Martingale => {
                let sol = solution.as_ref().expect("solved");
                let o = s.oracle.as_ref().expect("applicable");
                let h = compute_h(&solver_u(sol, s.control_shift), o, model, &ensemble)?;
                report.martingale = Some(martingale_null_test(&h, &ensemble)?);
            }
            Check::Pathwise => {
                let o = s.oracle.as_ref().expect("applicable");
                let u = shifted(
                    AtomField::from_field(oracle_increment(o, model), &ensemble),
                    s.control_shift,
                );
                let h = compute_h(&u, o, model, &ensemble)?;
                report.pathwise = Some(martingale_null_test(&h, &ensemble)?);
            }
            Check::Orthogonality => {
                let o = s.oracle.as_ref().expect("applicable");
                let remainders = ensemble
                    .par_iter()
                    .map(|sc| extract_remainder(o, model, sc))
                    .collect::<Result<Vec<_>, IdentifyError>>()?;
                let brownian: Vec<_> = ensemble.iter().map(|sc| sc.brownian.as_ref()).collect();
                report.orthogonality = Some(orthogonality_test(&remainders, &brownian));
            }
            Check::Residual => {
                let sol = solution.as_ref().expect("solved");
                let (_, stat) = martingale_residual(&s.problem, sol, &ensemble)?;
                report.residual = Some(stat);
            }
        }
    }
    report.evaluate(&tol);

    write(dir, "report.csv", &report.to_csv())?;
    let summary = report.summary();
    write(dir, "summary.txt", &summary)?;
    Ok(RunOutcome {
        report,
        summary,
        out_dir: dir.to_path_buf(),
    })
}

fn solve(
    cfg: &ExperimentConfig,
    s: &Setup,
    ensemble: &[SimulatedScenario],
) -> Result<BsdeSolution, BsdeError> {
    let pdmp = match cfg.run.solver {
        SolverKind::Auto => s.problem.model.is_pdmp(),
        SolverKind::Pdmp => true,
        SolverKind::Lsmc => false,
    };
    if pdmp {
        solve_bsde_pdmp(&s.problem, ensemble, cfg.run.degree)
    } else {
        solve_bsde_lsmc(&s.problem, ensemble, cfg.run.degree)
    }
}

fn shifted(u: AtomField, shift: Option<f64>) -> AtomField {
    match shift {
        Some(c) => {
            let f = u.field;
            AtomField {
                field: PredictableField::new(move |t, x, e| f.eval(t, x, e) + c),
                atom_values: u.atom_values,
            }
        }
        None => u,
    }
}

fn solver_u(sol: &BsdeSolution, shift: Option<f64>) -> AtomField {
    shifted(AtomField::of_solution(sol), shift)
}
