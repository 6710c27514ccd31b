use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use compsym::abstraction::{
    build_finite_ts, to_dot, write_dump, AbstractionError, BuildOptions, FiniteTs, Grid, InputPoints, InputSource,
    DOT_STATE_LIMIT,
};
use compsym::certification::{
    build_alt_sim, certify_delta_iss_affine, min_dwell_time, verify_alt_sim_sampled, AltSimCert, CertError,
    FalsificationReport, LyapCert, DEFAULT_SPLITTERS,
};
use compsym::composition::{
    check_small_gain, composed_alt_sim, compute_deltas, gain_matrix, interconnect_finite, neighbor_output_image,
    verify_composed_sampled, GainMatrix, DEFAULT_CYCLE_BUDGET,
};
use compsym::linalg::HyperBox;
use compsym::synthesis::{
    read_controller, refine_controller, simulate_closed_loop, solve_safety, write_controller, write_trajectory_csv,
    AbstractController, ClosedLoopOptions, RefinedController, SafetySpec, SolveOptions, SynthesisError,
};
use compsym::traffic::{run_traffic_pipeline, PipelineOptions, TrafficError, TrafficParams, TrafficScale};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{load_gains, load_spec, LoadedSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("build error: {0}")]
    Build(String),
    #[error("gate failed: {0}")]
    Gate(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Build(_) => 3,
            CliError::Gate(_) => 4,
        }
    }
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// Command-line values; `None` falls back to the spec file, then to defaults.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub spec: Option<PathBuf>,
    pub eta: Option<f64>,
    pub varpi: Option<f64>,
    pub epsilon: Option<f64>,
    pub kd: Option<usize>,
    pub theta: Option<[f64; 3]>,
    pub samples: Option<usize>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub materialize: bool,
    pub dot: bool,
    pub scale_links: Option<usize>,
    pub symmetry: bool,
    pub gains: Option<PathBuf>,
    pub controllers: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
struct Params {
    eta: f64,
    varpi: f64,
    epsilon: f64,
    theta: [f64; 3],
    samples: usize,
    steps: usize,
    seed: u64,
}

struct Ctx {
    spec: LoadedSpec,
    p: Params,
}

impl RunConfig {
    fn load(&self) -> Result<Ctx, CliError> {
        let path = self.spec.as_ref().ok_or_else(|| CliError::Config("--spec is required".into()))?;
        let mut spec = load_spec(path).map_err(CliError::Config)?;
        let f = &spec.parameters;
        let eta = self.eta.or(f.eta).ok_or_else(|| CliError::Config("eta is required (--eta or [parameters])".into()))?;
        let p = Params {
            eta,
            varpi: self.varpi.or(f.varpi).unwrap_or(0.0),
            epsilon: self.epsilon.or(f.epsilon).unwrap_or(2.0),
            theta: self.theta.or(f.theta).unwrap_or(DEFAULT_SPLITTERS),
            samples: self.samples.or(f.samples).unwrap_or(1000),
            steps: self.steps.or(f.steps).unwrap_or(100),
            seed: self.seed.or(spec.seed).unwrap_or(0),
        };
        if !(p.eta.is_finite() && p.eta > 0.0) {
            return Err(CliError::Config(format!("eta must be positive, got {}", p.eta)));
        }
        if !(p.varpi.is_finite() && p.varpi >= 0.0) {
            return Err(CliError::Config(format!("varpi must be nonnegative, got {}", p.varpi)));
        }
        if let Some(kd) = self.kd {
            if kd == 0 {
                return Err(CliError::Config("kd must be at least 1".into()));
            }
            for s in &mut spec.network.subsystems {
                s.dwell_time = kd;
            }
        }
        Ok(Ctx { spec, p })
    }

    fn out_file(&self, name: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out).map_err(io(&self.out))?;
        Ok(self.out.join(name))
    }

    fn write_json(&self, name: &str, value: &Value) -> Result<(), CliError> {
        let path = self.out_file(name)?;
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(io(&path))
    }

    fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.out_file(name)?;
        fs::write(&path, text).map_err(io(&path))
    }
}

fn build_err(e: impl std::fmt::Display) -> CliError {
    CliError::Build(e.to_string())
}

fn varpi_opt(p: &Params) -> Option<f64> {
    (p.varpi > 0.0).then_some(p.varpi)
}

fn abstractions(ctx: &Ctx, materialize: bool) -> Result<Vec<FiniteTs>, CliError> {
    let net = &ctx.spec.network;
    let eta = ctx.p.eta;
    let grids: Vec<Grid> = net.subsystems.iter().map(|s| Grid::new(&s.state_domain, eta)).collect::<Result<_, _>>().map_err(build_err)?;
    let refs: Vec<&Grid> = grids.iter().collect();
    let opts = BuildOptions { materialize, ..BuildOptions::default() };
    net.subsystems
        .iter()
        .enumerate()
        .map(|(i, sub)| {
            let (inputs, source) = if sub.input_dim() == 0 {
                (InputPoints::none(), InputSource::Empty)
            } else if let Some(varpi) = varpi_opt(&ctx.p) {
                (InputPoints::quantize(&sub.internal_domain, varpi).map_err(build_err)?, InputSource::Quantized { varpi })
            } else {
                (neighbor_output_image(net, i, &refs).map_err(build_err)?, InputSource::Points)
            };
            build_finite_ts(sub, eta, inputs, source, opts).map_err(build_err)
        })
        .collect()
}

fn cert_err(e: CertError) -> CliError {
    match e {
        CertError::NotContractive { .. }
        | CertError::DwellTooSmall { .. }
        | CertError::SigmaNotContractive(_)
        | CertError::GateFailed(_) => CliError::Gate(e.to_string()),
        CertError::EtaTooLarge { .. } => CliError::Build(e.to_string()),
        _ => CliError::Config(e.to_string()),
    }
}

struct SubCert {
    cert: LyapCert,
    min_dwell: Result<usize, CertError>,
    asc: AltSimCert,
}

fn certify_one(ctx: &Ctx, i: usize) -> Result<SubCert, CertError> {
    let sub = &ctx.spec.network.subsystems[i];
    let cert = certify_delta_iss_affine(sub, &ctx.spec.extras[i].weights)?;
    let min_dwell = min_dwell_time(&cert, ctx.p.epsilon);
    let asc = build_alt_sim(sub, &cert, ctx.p.eta, varpi_opt(&ctx.p), ctx.p.epsilon, sub.dwell_time, ctx.p.theta)?;
    Ok(SubCert { cert, min_dwell, asc })
}

fn certify_all(ctx: &Ctx) -> Result<Vec<AltSimCert>, CliError> {
    (0..ctx.spec.network.len()).map(|i| certify_one(ctx, i).map(|c| c.asc).map_err(cert_err)).collect()
}

fn slopes_of(gm: &GainMatrix) -> Value {
    gm.slopes().map(|s| json!(s)).unwrap_or(Value::Null)
}

pub fn cmd_abstract(cfg: &RunConfig) -> Result<Value, CliError> {
    let ctx = cfg.load()?;
    let t = Instant::now();
    // Dumps hold the explicit relation, so the abstraction is always materialized here.
    let ftss = abstractions(&ctx, true)?;
    let seconds = t.elapsed().as_secs_f64();
    let mut subs = Vec::new();
    for (i, fts) in ftss.iter().enumerate() {
        let name = format!("subsystem_{i}.fts");
        let path = cfg.out_file(&name)?;
        let mut w = BufWriter::new(File::create(&path).map_err(io(&path))?);
        write_dump(fts, &mut w).map_err(build_err)?;
        w.flush().map_err(io(&path))?;
        let mut dot = Value::Null;
        if cfg.dot {
            match to_dot(fts) {
                Ok(text) => {
                    let dname = format!("subsystem_{i}.dot");
                    cfg.write_text(&dname, &text)?;
                    dot = json!(dname);
                }
                Err(AbstractionError::TooLarge(_)) => dot = json!(format!("skipped: more than {DOT_STATE_LIMIT} states")),
                Err(e) => return Err(build_err(e)),
            }
        }
        subs.push(json!({
            "id": i,
            "grid_points": fts.state_grid.len(),
            "states": fts.state_count(),
            "inputs": fts.inputs.len(),
            "sink_keys": fts.sink_keys().len(),
            "dump": name,
            "dot": dot,
        }));
    }
    let report = json!({ "command": "abstract", "parameters": ctx.p, "build_seconds": seconds, "subsystems": subs, "passed": true });
    cfg.write_json("abstract.json", &report)?;
    Ok(report)
}

pub fn cmd_certify(cfg: &RunConfig) -> Result<Value, CliError> {
    let ctx = cfg.load()?;
    let ftss = if ctx.p.samples > 0 { Some(abstractions(&ctx, cfg.materialize)?) } else { None };
    let mut subs = Vec::new();
    let mut failures = Vec::new();
    for i in 0..ctx.spec.network.len() {
        match certify_one(&ctx, i) {
            Ok(c) => {
                let check: Option<FalsificationReport> = ftss.as_ref().map(|f| {
                    verify_alt_sim_sampled(&ctx.spec.network.subsystems[i], &f[i], &c.asc, ctx.p.samples, ctx.p.seed + i as u64)
                });
                if check.as_ref().is_some_and(|r| !r.passed()) {
                    failures.push(format!("subsystem {i}: sampled check found violations"));
                }
                subs.push(json!({
                    "id": i,
                    "kappa": c.cert.modes.iter().map(|m| m.kappa).collect::<Vec<_>>(),
                    "rho": c.cert.modes.iter().map(|m| m.rho.as_ref().and_then(|r| r.linear_slope())).collect::<Vec<_>>(),
                    "mu": c.cert.mu,
                    "common": c.cert.common,
                    "min_dwell_time": c.min_dwell.as_ref().ok(),
                    "certificate": c.asc,
                    "check": check,
                }));
            }
            Err(e) => {
                let err = cert_err(e);
                match err {
                    CliError::Gate(_) => {}
                    CliError::Config(m) => return Err(CliError::Config(format!("subsystem {i}: {m}"))),
                    other => return Err(other),
                }
                failures.push(format!("subsystem {i}: {err}"));
                subs.push(json!({ "id": i, "error": err.to_string() }));
            }
        }
    }
    let report = json!({
        "command": "certify",
        "parameters": ctx.p,
        "subsystems": subs,
        "failures": failures,
        "passed": failures.is_empty(),
    });
    cfg.write_json("certify.json", &report)?;
    gate(report, failures)
}

fn gate(report: Value, failures: Vec<String>) -> Result<Value, CliError> {
    if failures.is_empty() {
        Ok(report)
    } else {
        Err(CliError::Gate(failures.join("; ")))
    }
}

pub fn cmd_compose(cfg: &RunConfig) -> Result<Value, CliError> {
    if let Some(path) = &cfg.gains {
        let g = load_gains(path).map_err(CliError::Config)?;
        let gm = GainMatrix::from_slopes(&g.slopes).map_err(|e| CliError::Config(e.to_string()))?;
        return compose_report(cfg, &gm, Value::Null, None);
    }
    let ctx = cfg.load()?;
    let ascs = certify_all(&ctx)?;
    let gm = gain_matrix(&ascs, &ctx.spec.network.edges).map_err(build_err)?;
    compose_report(cfg, &gm, json!(ctx.p), Some((&ctx, &ascs)))
}

fn compose_report(cfg: &RunConfig, gm: &GainMatrix, params: Value, net: Option<(&Ctx, &[AltSimCert])>) -> Result<Value, CliError> {
    let sg = check_small_gain(gm, DEFAULT_CYCLE_BUDGET).map_err(build_err)?;
    if cfg.dot {
        cfg.write_text("gains.dot", &gm.to_dot())?;
    }
    let mut failures = Vec::new();
    let mut deltas = Value::Null;
    let mut network = Value::Null;
    let mut check = Value::Null;
    if sg.pass {
        let d = compute_deltas(gm).map_err(build_err)?;
        deltas = json!(d);
        if let Some((ctx, ascs)) = net {
            let nc = composed_alt_sim(ascs, &d).map_err(build_err)?;
            if ctx.p.samples > 0 {
                let nfts = interconnect_finite(&ctx.spec.network, abstractions(ctx, cfg.materialize)?).map_err(build_err)?;
                let rep = verify_composed_sampled(&nfts, &nc, ctx.p.samples, ctx.p.seed);
                if !rep.passed() {
                    failures.push("sampled network check found violations".to_string());
                }
                check = json!(rep);
            }
            network = json!(nc);
        }
    } else {
        let worst = sg.cycles.iter().find(|c| !c.below_identity).map(|c| c.cycle.clone());
        failures.push(format!("small-gain condition violated on cycle {worst:?}"));
    }
    let report = json!({
        "command": "compose",
        "parameters": params,
        "slopes": slopes_of(gm),
        "small_gain": sg,
        "deltas": deltas,
        "network_certificate": network,
        "check": check,
        "failures": failures,
        "passed": failures.is_empty(),
    });
    cfg.write_json("compose.json", &report)?;
    gate(report, failures)
}

fn safety_specs(ctx: &Ctx) -> Result<Vec<SafetySpec>, CliError> {
    ctx.spec
        .extras
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let safe = e.safe.clone().ok_or_else(|| CliError::Config(format!("subsystem {i}: no safe set")))?;
            Ok(SafetySpec { safe, horizon: ctx.p.steps })
        })
        .collect()
}

fn synthesize_all(cfg: &RunConfig, ctx: &Ctx) -> Result<(Vec<AbstractController>, Vec<Grid>, Vec<Value>), CliError> {
    let specs = safety_specs(ctx)?;
    let ftss = abstractions(ctx, cfg.materialize)?;
    let mut ctrls = Vec::new();
    let mut grids = Vec::new();
    let mut rows = Vec::new();
    for (i, fts) in ftss.into_iter().enumerate() {
        let t = Instant::now();
        let ctrl = solve_safety(&fts, &specs[i], ctx.spec.extras[i].assumption.as_deref(), SolveOptions::default())
            .map_err(|e| match e {
                SynthesisError::EmptyWinningSet => CliError::Gate(format!("subsystem {i}: empty winning set")),
                SynthesisError::BadSpec(m) => CliError::Config(format!("subsystem {i}: {m}")),
                other => CliError::Build(format!("subsystem {i}: {other}")),
            })?;
        rows.push(json!({
            "id": i,
            "states": ctrl.state_count(),
            "winning": ctrl.winning_count(),
            "iterations": ctrl.history.len(),
            "seconds": t.elapsed().as_secs_f64(),
        }));
        grids.push(fts.state_grid.clone());
        ctrls.push(ctrl);
    }
    Ok((ctrls, grids, rows))
}

pub fn cmd_synthesize(cfg: &RunConfig) -> Result<Value, CliError> {
    let ctx = cfg.load()?;
    let (ctrls, _, mut rows) = synthesize_all(cfg, &ctx)?;
    for (i, ctrl) in ctrls.iter().enumerate() {
        let name = format!("controller_{i}.ctl");
        let path = cfg.out_file(&name)?;
        let mut w = BufWriter::new(File::create(&path).map_err(io(&path))?);
        write_controller(ctrl, &mut w).map_err(build_err)?;
        w.flush().map_err(io(&path))?;
        rows[i]["dump"] = json!(name);
    }
    let report = json!({ "command": "synthesize", "parameters": ctx.p, "subsystems": rows, "passed": true });
    cfg.write_json("synthesize.json", &report)?;
    Ok(report)
}

fn load_controllers(dir: &Path, ctx: &Ctx) -> Result<(Vec<AbstractController>, Vec<Grid>), CliError> {
    let mut ctrls = Vec::new();
    let mut grids = Vec::new();
    for (i, sub) in ctx.spec.network.subsystems.iter().enumerate() {
        let path = dir.join(format!("controller_{i}.ctl"));
        let f = File::open(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let ctrl = read_controller(&mut BufReader::new(f)).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let grid = Grid::new(&sub.state_domain, ctx.p.eta).map_err(build_err)?;
        if ctrl.grid_len != grid.len() || ctrl.modes != sub.mode_count() || ctrl.dwell_time != sub.dwell_time {
            return Err(CliError::Config(format!("{}: controller does not match subsystem {i}", path.display())));
        }
        ctrls.push(ctrl);
        grids.push(grid);
    }
    Ok((ctrls, grids))
}

/// Initial states from the spec, or uniformly drawn winning grid points.
fn initial_states(ctx: &Ctx, ctrls: &[RefinedController]) -> Result<Vec<Vec<f64>>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.p.seed);
    ctrls
        .iter()
        .enumerate()
        .map(|(i, rc)| {
            if let Some(x) = &ctx.spec.extras[i].x0 {
                return Ok(x.clone());
            }
            let winning: Vec<usize> =
                (0..rc.ctrl.grid_len).filter(|&x| (0..rc.ctrl.modes).any(|p| rc.ctrl.is_winning(x, p, 0))).collect();
            if winning.is_empty() {
                return Err(CliError::Gate(format!("subsystem {i}: no winning initial state")));
            }
            Ok(rc.grid.point(winning[rng.gen_range(0..winning.len())]))
        })
        .collect()
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Value, CliError> {
    let ctx = cfg.load()?;
    let ascs = certify_all(&ctx)?;
    let (ctrls, grids) = match &cfg.controllers {
        Some(dir) => load_controllers(dir, &ctx)?,
        None => {
            let (c, g, _) = synthesize_all(cfg, &ctx)?;
            (c, g)
        }
    };
    let refined: Vec<RefinedController> =
        ctrls.into_iter().zip(grids).zip(&ascs).map(|((c, g), a)| refine_controller(c, g, a.eps_hat)).collect();
    let x0 = initial_states(&ctx, &refined)?;
    let targets: Vec<Vec<HyperBox>> = ctx
        .spec
        .extras
        .iter()
        .enumerate()
        .map(|(i, e)| e.target.clone().or_else(|| e.safe.clone()).ok_or_else(|| CliError::Config(format!("subsystem {i}: no target"))))
        .collect::<Result<_, _>>()?;
    let t = Instant::now();
    let traj = simulate_closed_loop(
        &ctx.spec.network,
        &refined,
        &x0,
        ClosedLoopOptions { steps: ctx.p.steps, targets: &targets, monitor: Some(&ascs) },
    )
    .map_err(|e| CliError::Gate(e.to_string()))?;
    let seconds = t.elapsed().as_secs_f64();
    let dim = ctx.spec.network.subsystems.iter().map(|s| s.dim()).max().unwrap_or(0);
    write_csv(cfg, &traj, dim)?;
    let mut failures = Vec::new();
    if !traj.safe {
        failures.push(format!("trajectory left its target at {:?}", traj.first_violation));
    }
    if traj.monitor_violations > 0 {
        failures.push(format!("{} simulation-function decay violations", traj.monitor_violations));
    }
    let report = json!({
        "command": "simulate",
        "parameters": ctx.p,
        "x0": x0,
        "steps": ctx.p.steps,
        "safe": traj.safe,
        "first_violation": traj.first_violation,
        "peak_output": traj.peak_output,
        "monitor_violations": traj.monitor_violations,
        "trajectory": "trajectory.csv",
        "seconds": seconds,
        "failures": failures,
        "passed": failures.is_empty(),
    });
    cfg.write_json("simulate.json", &report)?;
    gate(report, failures)
}

fn write_csv(cfg: &RunConfig, traj: &compsym::synthesis::Trajectory, dim: usize) -> Result<(), CliError> {
    let path = cfg.out_file("trajectory.csv")?;
    let mut w = BufWriter::new(File::create(&path).map_err(io(&path))?);
    write_trajectory_csv(traj, dim, &mut w).map_err(io(&path))?;
    w.flush().map_err(io(&path))
}

pub fn cmd_traffic(cfg: &RunConfig) -> Result<Value, CliError> {
    let params = TrafficParams {
        epsilon: cfg.epsilon.unwrap_or(TrafficParams::default().epsilon),
        splitters: cfg.theta.unwrap_or(TrafficParams::default().splitters),
        ..TrafficParams::default()
    };
    let scale = TrafficScale { links: cfg.scale_links.unwrap_or(params.link_count), eta: cfg.eta.unwrap_or(params.eta) };
    let options = PipelineOptions {
        steps: cfg.steps.unwrap_or(600),
        seed: cfg.seed.unwrap_or(1),
        symmetry: cfg.symmetry,
        verify_samples: cfg.samples.unwrap_or(1000),
        x0: None,
    };
    let run = run_traffic_pipeline(&params, scale, &options).map_err(|e| match e {
        TrafficError::Params(m) => CliError::Config(m),
        TrafficError::Stage { stage, message } => {
            let msg = format!("{stage:?}: {message}");
            match stage {
                compsym::traffic::Stage::SmallGain | compsym::traffic::Stage::Synthesis | compsym::traffic::Stage::Simulation => {
                    CliError::Gate(msg)
                }
                compsym::traffic::Stage::Certify => CliError::Config(msg),
                _ => CliError::Build(msg),
            }
        }
    })?;
    write_csv(cfg, &run.trajectory, 2)?;
    if cfg.dot {
        let gm = gain_matrix(&run.certificates, &run.network.edges).map_err(build_err)?;
        cfg.write_text("gains.dot", &gm.to_dot())?;
    }
    let passed = run.report.passed();
    let mut report = json!(run.report);
    report["command"] = json!("traffic");
    report["passed"] = json!(passed);
    report["trajectory"] = json!("trajectory.csv");
    cfg.write_json("traffic.json", &report)?;
    if passed {
        Ok(report)
    } else {
        Err(CliError::Gate("traffic pipeline gates or closed-loop safety failed".into()))
    }
}
