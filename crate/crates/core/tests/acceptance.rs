//! Acceptance criteria 1-9. Runs as a plain binary (`harness = false`) so the
//! PASS/FAIL line of every criterion is printed whether it passes or not.
//! Scenarios that a shipped config describes are run from that config.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use bsde_ident::bsde::{benchmark, closed_form_oracle, integro_ode_oracle};
use bsde_ident::experiment::{parse_config, run_experiment, ExperimentConfig, Report};
use bsde_ident::identify::relative;
use bsde_ident::measures::{
    bracket_c, kernel_decompose, stochastic_integral, CompensatorSpec, GridPath, MarkKernel,
    MarkLaw, PredictableField, TimeGrid,
};
use bsde_ident::processes::{
    simulate_ensemble, simulate_jumpdiff_scripted, simulate_pdmp, verify_measure_transfer,
    ClockSpec, DeclaredAtom, DrivingMeasure, ForwardModel, JumpDiffusionModel, PdmpModel,
    ScriptedJump,
};
use bsde_ident::stats::{MeanSe, Z_999};
use nalgebra::Complex;

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

const PATHWISE: f64 = 1e-9;
const PDMP_BENCHMARKS: [&str; 3] = ["pdmp-deterministic", "pdmp-interior", "pdmp-boundary"];

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    let path = configs_dir().join(format!("{name}.toml"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn run_in(mut cfg: ExperimentConfig, dir: &Path) -> Report {
    cfg.output.dir = dir.to_path_buf();
    run_experiment(&cfg)
        .unwrap_or_else(|e| panic!("{}: {e}", cfg.name))
        .report
}

fn phis() -> [PredictableField; 2] {
    [
        PredictableField::jump_transform(|_, x| if x.abs() <= 1.0 { x * x } else { 0.0 }).unwrap(),
        PredictableField::jump_transform(|_, x: f64| x.abs().min(1.0)).unwrap(),
    ]
}

/// Value functions written out here, checked against the library's before
/// any report that depends on them is trusted.
fn reference_value(id: &str, t: f64, x: f64) -> f64 {
    match id {
        "heat-quadratic" => x * x + (1.0 - t),
        "pdmp-interior" | "violating-h" => 0.5 + (x - 0.5) * (-3.0 * (1.0 - t)).exp(),
        "pdmp-boundary" => {
            // root of 2u^3 - u^2 - 1 = 0 in the upper half plane, by Newton
            let mut u = Complex::new(-0.25, 0.66);
            for _ in 0..50 {
                u -= (u * u * u * 2.0 - u * u - 1.0) / (u * u * 6.0 - u * 2.0);
            }
            let k = u.ln() * 4.0;
            let d = k.exp() / (k - 1.0);
            (((k - 1.0) * (1.0 - t)).exp() * ((k * x).exp() + d)).re
        }
        _ => unreachable!("{id}"),
    }
}

fn oracle_matches_reference(id: &str, xs: (f64, f64)) -> f64 {
    let o = closed_form_oracle(id).unwrap();
    let mut worst = 0.0f64;
    for i in 0..=10 {
        for j in 0..=10 {
            let t = i as f64 / 10.0;
            let x = xs.0 + (xs.1 - xs.0) * j as f64 / 10.0;
            worst = worst.max((o.value(t, x) - reference_value(id, t, x)).abs());
        }
    }
    worst
}

fn scripted_jump_diffusion() -> (JumpDiffusionModel, Vec<ScriptedJump>) {
    let model = JumpDiffusionModel {
        b: Arc::new(|_, x| 0.5 - x),
        sigma: None,
        gamma: Arc::new(|_, x, e| e * (1.0 + 0.5 * x.tanh())),
        driving: DrivingMeasure {
            rate: Arc::new(|_| 1.5),
            rate_max: 1.5,
            marks: Arc::new(|_| MarkLaw::uniform_discrete(vec![-1.0, 0.5, 1.0]).unwrap()),
            atoms: vec![
                // the clock jump: a mass-one atom whose mark moves nothing
                DeclaredAtom {
                    time: 0.3,
                    kernel: MarkKernel::dirac(1.0, 0.0),
                },
            ],
        },
        clock: ClockSpec {
            rate: 1.0,
            jumps: vec![(0.3, 0.4)],
        },
        x0: 0.1,
    };
    let script = vec![
        ScriptedJump { time: 0.2, mark: 1.0 },
        ScriptedJump { time: 0.6, mark: -1.5 },
        ScriptedJump { time: 0.85, mark: 0.5 },
    ];
    (model, script)
}

fn criterion_1() -> Outcome {
    let (jd, script) = scripted_jump_diffusion();
    let base = TimeGrid::uniform(1.0, 20)?;
    let sc = simulate_jumpdiff_scripted(&jd, &base, &script)?;
    let model = ForwardModel::JumpDiffusion(jd);
    let mut worst_jd = 0.0f64;
    for phi in phis() {
        worst_jd = worst_jd.max(verify_measure_transfer(&phi, &model, &sc)?.max());
    }
    let mut worst_pdmp = 0.0f64;
    for id in PDMP_BENCHMARKS {
        let b = benchmark(id)?;
        let grid = TimeGrid::uniform(b.horizon, 50)?;
        let ens = simulate_ensemble(&b.problem.model, &grid, 101, 1000)?;
        for sc in &ens {
            for phi in phis() {
                worst_pdmp = worst_pdmp.max(verify_measure_transfer(&phi, &b.problem.model, sc)?.max());
            }
        }
    }
    let scripted = script
        .iter()
        .all(|j| sc.measure.atoms().iter().any(|a| a.time == j.time && a.mark == j.mark));
    Ok((
        worst_jd <= PATHWISE && worst_pdmp <= PATHWISE && scripted,
        format!("scripted jump-diffusion sup {worst_jd:.2e}, PDMP benchmarks (N = 1000) sup {worst_pdmp:.2e}"),
    ))
}

fn bracket_stat(model: &ForwardModel, horizon: f64, n: usize, seed: u64) -> Result<MeanSe, Box<dyn std::error::Error>> {
    let grid = TimeGrid::uniform(horizon, 50)?;
    let ens = simulate_ensemble(model, &grid, seed, n)?;
    let w = PredictableField::new(|_, _, e| e);
    let mut diff = Vec::with_capacity(n);
    for sc in &ens {
        let m = stochastic_integral(&w, &sc.measure, &sc.compensator, &sc.path)?;
        let c = bracket_c(&w, &sc.compensator, &sc.path)?;
        diff.push(m.terminal().powi(2) - c.terminal());
    }
    Ok(MeanSe::of(&diff))
}

fn criterion_2(r: &Runs) -> Outcome {
    let (lhs, rhs, pdmp) = r.boundary_martingale.bracket.ok_or("bracket not reported")?;
    let jd = ForwardModel::JumpDiffusion(JumpDiffusionModel {
        b: Arc::new(|_, _| 0.0),
        sigma: None,
        gamma: Arc::new(|_, _, e| e),
        driving: DrivingMeasure {
            rate: Arc::new(|_| 1.0),
            rate_max: 1.0,
            marks: Arc::new(|_| MarkLaw::uniform_discrete(vec![0.5, 1.0]).unwrap()),
            atoms: vec![DeclaredAtom {
                time: 0.5,
                kernel: MarkKernel::new(0.5, MarkLaw::uniform_discrete(vec![-1.0, 2.0]).unwrap())
                    .unwrap(),
            }],
        },
        clock: ClockSpec::time(),
        x0: 0.0,
    });
    let half = bracket_stat(&jd, 1.0, 100_000, 203)?;
    let ok = pdmp.within(0.0, 3.0) && half.within(0.0, 3.0) && r.boundary_martingale.paths == 100_000;
    Ok((
        ok,
        format!(
            "boundary PDMP E[M^2] {lhs:.4} vs E[C] {rhs:.4}, diff/SE {:.2}; half-mass J\\K atom diff/SE {:.2}",
            pdmp.mean / pdmp.se,
            half.mean / half.se
        ),
    ))
}

fn criterion_3() -> Outcome {
    const MASSES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
    const MARKS: [f64; 4] = [-1.0, -0.5, 0.5, 2.0];
    const TIMES: [f64; 3] = [0.25, 0.5, 0.75];
    let base = TimeGrid::uniform(1.0, 4)?;
    let grid = Arc::new(TimeGrid::with_events(&base, &[])?);
    let path = GridPath::constant(grid, 0.0);
    // an atom: (mass index, number of marks)
    let shapes: Vec<(usize, usize)> = (0..MASSES.len())
        .flat_map(|m| (1..=MARKS.len()).map(move |k| (m, k)))
        .collect();
    let (mut cases, mut bad) = (0usize, 0usize);
    for atoms in 0..=TIMES.len() {
        let combos = shapes.len().pow(atoms as u32);
        for c in 0..combos {
            let mut spec = Vec::with_capacity(atoms);
            let mut rest = c;
            for &time in &TIMES[..atoms] {
                let (m, k) = shapes[rest % shapes.len()];
                rest /= shapes.len();
                let law = MarkLaw::uniform_discrete(MARKS[..k].to_vec())?;
                spec.push((time, MarkKernel::new(MASSES[m], law)?));
            }
            let nu = CompensatorSpec::realize(&path, None, spec)?;
            for pattern in 0u32..16 {
                let w = PredictableField::new(move |_, _, e| {
                    let i = MARKS.iter().position(|&m| m == e).unwrap_or(0);
                    if pattern >> i & 1 == 1 {
                        1.0
                    } else {
                        0.0
                    }
                });
                let c_t = bracket_c(&w, &nu, &path)?.terminal();
                let d = kernel_decompose(&w, &nu, &path)?;
                let residual = d.residual_continuous + d.residual_k + d.residual_j_not_k;
                cases += 1;
                if (c_t == 0.0) != (residual == 0.0) {
                    bad += 1;
                }
            }
        }
    }
    Ok((bad == 0, format!("{cases} measure/field pairs, {bad} disagreements")))
}

struct Runs {
    heat: Report,
    interior: Report,
    interior_martingale: Report,
    boundary: Report,
    boundary_martingale: Report,
    deterministic: Report,
    violating: Report,
    _dir: tempfile::TempDir,
}

fn runs() -> Runs {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let t = Instant::now();
        let r = run_in(load(name), &dir.path().join(name));
        println!("     ran {name} in {:.1}s", t.elapsed().as_secs_f64());
        r
    };
    Runs {
        heat: run("heat-quadratic"),
        interior: run("pdmp-interior"),
        interior_martingale: run("pdmp-interior-martingale"),
        boundary: run("pdmp-boundary"),
        boundary_martingale: run("pdmp-boundary-martingale"),
        deterministic: run("pdmp-deterministic"),
        violating: run("violating-h"),
        _dir: dir,
    }
}

fn criterion_4(r: &Runs) -> Outcome {
    let drift = oracle_matches_reference("heat-quadratic", (-3.0, 3.0));
    let z = r.heat.z_rel_error.ok_or("z not reported")?;
    Ok((
        drift <= 1e-12 && z <= 0.05 && r.heat.paths == 100_000 && r.heat.steps == 50 && r.heat.degree == 3,
        format!("heat-quadratic z_rel_error {z:.4} (N = {}, {} steps, degree {})", r.heat.paths, r.heat.steps, r.heat.degree),
    ))
}

fn criterion_5(r: &Runs) -> Outcome {
    let drift = oracle_matches_reference("pdmp-interior", (0.0, 1.0))
        .max(oracle_matches_reference("pdmp-boundary", (0.0, 1.0)));
    // the boundary closed form against the numerical solution of the
    // integro-differential equation, a separate route to the same v
    let b = benchmark("pdmp-boundary")?;
    let ForwardModel::Pdmp(m) = &b.problem.model else {
        return Err("boundary benchmark is not a PDMP".into());
    };
    let ode = integro_ode_oracle(m, b.problem.terminal.clone(), b.horizon, Default::default(), "ode")?;
    let closed = closed_form_oracle("pdmp-boundary")?;
    let mut ode_gap = 0.0f64;
    for i in 0..=10 {
        for j in 0..=10 {
            let (t, x) = (i as f64 / 10.0, j as f64 / 10.0);
            ode_gap = ode_gap.max((ode.value(t, x) - closed.value(t, x)).abs());
        }
    }
    let (hc, uc, _, _) = r.interior.u_split.ok_or("interior u not reported")?;
    let (_, _, hd, ud) = r.boundary.u_split.ok_or("boundary u not reported")?;
    let (interior, boundary) = (relative(hc, uc), relative(hd, ud));
    Ok((
        drift <= 1e-12 && ode_gap <= 1e-3 && interior <= 0.05 && boundary <= 0.05,
        format!(
            "interior ||H||_nuc / ||U||_nuc {interior:.4}; boundary K-residual / ||U||_nud {boundary:.4} (integro-ODE gap {ode_gap:.1e})"
        ),
    ))
}

fn criterion_6(r: &Runs) -> Outcome {
    let exact: Vec<f64> = [&r.deterministic, &r.interior, &r.boundary, &r.interior_martingale]
        .iter()
        .map(|rep| rep.pathwise.map_or(f64::INFINITY, |m| m.sup))
        .collect();
    let exact_ok = exact.iter().all(|&s| s <= PATHWISE);
    let lsmc: Vec<(f64, f64)> = [&r.interior_martingale, &r.boundary_martingale]
        .iter()
        .map(|rep| rep.martingale.map_or((f64::NAN, 0.0), |m| (m.terminal.mean, m.terminal.se)))
        .collect();
    let lsmc_ok = lsmc.iter().all(|&(m, se)| m.abs() <= Z_999 * se);
    let v = &r.violating;
    let (vm, vp) = (v.martingale.ok_or("no martingale")?, v.pathwise.ok_or("no pathwise")?);
    let control_fails = vm.terminal.mean.abs() > Z_999 * vm.terminal.se && vp.sup > PATHWISE;
    Ok((
        exact_ok && lsmc_ok && control_fails,
        format!(
            "oracle H sup {:.1e}; LSMC H mean/SE interior {:.2}, boundary {:.2}; violating-H mean/SE {:.0}, sup {:.2e}",
            exact.iter().fold(0.0f64, |m, &s| m.max(s)),
            lsmc[0].0 / lsmc[0].1,
            lsmc[1].0 / lsmc[1].1,
            vm.terminal.mean / vm.terminal.se,
            vp.sup
        ),
    ))
}

fn criterion_7() -> Outcome {
    let m = PdmpModel::new(
        Arc::new(|_| 1.0),
        Arc::new(|_| 0.0),
        0.0,
        Arc::new(|y| MarkLaw::Dirac(0.25 - y)),
        0.0,
    )?;
    let base = TimeGrid::uniform(1.5, 15)?;
    let sc = simulate_pdmp(&m, &base, 0, 0)?;
    let atoms = sc.compensator.atoms();
    let p_star = sc.p_star.as_ref().ok_or("no p*")?.terminal();
    let ok = atoms.len() == 1
        && (atoms[0].time - 1.0).abs() <= 1e-12
        && atoms[0].mass() == 1.0
        && p_star == 1.0;
    let detail = match atoms.first() {
        Some(a) => format!("{} atom(s), first at t = {:.15}, mass {}, p*_T = {p_star}", atoms.len(), a.time, a.mass()),
        None => "no predictable atom".into(),
    };
    Ok((ok, detail))
}

fn criterion_8(r: &Runs) -> Outcome {
    let o = r.heat.orthogonality.ok_or("orthogonality not reported")?;
    Ok((
        o.mean.abs() <= Z_999 * o.se && r.heat.paths == 100_000,
        format!("covariation mean {:.2e}, SE {:.2e} (N = {})", o.mean, o.se, r.heat.paths),
    ))
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir()?;
    let mut names: Vec<String> = std::fs::read_dir(configs_dir())?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_suffix(".toml").map(str::to_owned))
        .collect();
    names.sort();
    let mut differing = Vec::new();
    for name in &names {
        let mut cfg = load(name);
        // the large ensembles are replayed at a reduced size
        cfg.run.paths = cfg.run.paths.min(5000);
        let mut bytes = Vec::new();
        for rep in 0..2 {
            let out = dir.path().join(format!("{name}-{rep}"));
            run_in(cfg.clone(), &out);
            bytes.push(std::fs::read(out.join("report.csv"))?);
        }
        if bytes[0] != bytes[1] {
            differing.push(name.clone());
        }
    }
    Ok((
        differing.is_empty() && !names.is_empty(),
        format!("{} configs run twice, differing: {:?}", names.len(), differing),
    ))
}

fn report(n: usize, name: &str, start: Instant, outcome: Outcome, failed: &mut usize) {
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok((true, detail)) => println!("PASS {n} {name}: {detail} [{secs:.1}s]"),
        Ok((false, detail)) => {
            *failed += 1;
            println!("FAIL {n} {name}: {detail} [{secs:.1}s]");
        }
        Err(e) => {
            *failed += 1;
            println!("FAIL {n} {name}: error: {e} [{secs:.1}s]");
        }
    }
}

fn main() {
    // `cargo test -- --list` and friends
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut failed = 0;
    let t = Instant::now();
    report(1, "measure transfer", t, criterion_1(), &mut failed);
    let t = Instant::now();
    report(3, "kernel decomposition brute force", t, criterion_3(), &mut failed);
    let t = Instant::now();
    report(7, "J = K classification", t, criterion_7(), &mut failed);
    let r = runs();
    let t = Instant::now();
    report(2, "bracket isometry", t, criterion_2(&r), &mut failed);
    report(4, "Z identification", t, criterion_4(&r), &mut failed);
    report(5, "U identification", t, criterion_5(&r), &mut failed);
    report(6, "martingale null", t, criterion_6(&r), &mut failed);
    report(8, "orthogonality", t, criterion_8(&r), &mut failed);
    let t = Instant::now();
    report(9, "determinism", t, criterion_9(), &mut failed);
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
