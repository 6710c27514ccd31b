//! Road-traffic ring: each link is two cells with densities `x = (x₁, x₂)`,
//! an entry controlled by a traffic light (red = mode 0, green = mode 1)
//! and inflow from the second cell of the previous link.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::abstraction::{build_finite_ts, BuildOptions, FiniteTs, Grid, InputSource};
use crate::certification::{
    build_alt_sim, certify_delta_iss_affine, verify_alt_sim_sampled, AltSimCert, FalsificationReport, LyapCert,
};
use crate::composition::{
    check_small_gain, composed_alt_sim, compute_deltas, gain_matrix, interconnect_finite, neighbor_output_image,
    verify_composed_sampled, Deltas, NetworkAltSim, SmallGainReport, DEFAULT_CYCLE_BUDGET,
};
use crate::linalg::{HyperBox, Matrix};
use crate::model::{AffineMode, InputBlock, NetworkSpec, OutputBlock, SubsystemDef, SwitchedSubsystem};
use crate::synthesis::{
    refine_controller, simulate_closed_loop, solve_safety, AbstractController, ClosedLoopOptions, RefinedController,
    SafetySpec, SolveOptions, Trajectory,
};

/// Model and pipeline parameters. Defaults are the 25-link case study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrafficParams {
    pub link_count: usize,
    /// Sampling period in seconds.
    pub tau_seconds: f64,
    /// Flow speed in km/h.
    pub speed: f64,
    /// Cell length in km.
    pub cell_length: f64,
    /// Vehicles entering per green period.
    pub entry_flow: f64,
    pub exit_keep_odd: f64,
    pub exit_keep_even: f64,
    pub eta: f64,
    pub safe_density: f64,
    /// Upper corner of the state domain `[0, u]²`.
    pub domain_upper: f64,
    /// Splitters for the simulation-function parameters.
    pub splitters: [f64; 3],
    pub epsilon: f64,
}

impl Default for TrafficParams {
    fn default() -> Self {
        TrafficParams {
            link_count: 25,
            tau_seconds: 10.0,
            speed: 120.0,
            cell_length: 1.0,
            entry_flow: 12.0,
            exit_keep_odd: 0.9,
            exit_keep_even: 0.65,
            eta: 0.03,
            safe_density: 30.0,
            domain_upper: 30.0,
            splitters: [0.655, 0.335, 0.01],
            epsilon: 2.0,
        }
    }
}

impl TrafficParams {
    /// `τ v / d`, the fraction of a cell moving on per step.
    pub fn flow_ratio(&self) -> f64 {
        self.tau_seconds * self.speed / (3600.0 * self.cell_length)
    }

    /// Smallest `[0, u]²` mapped into itself by both modes for inputs in `[0, u]`.
    pub fn invariant_bound(&self) -> f64 {
        // Row sums of [A D] are the keep fractions.
        self.entry_flow / (1.0 - self.exit_keep_odd.max(self.exit_keep_even))
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        let positive = [
            self.tau_seconds,
            self.speed,
            self.cell_length,
            self.entry_flow,
            self.exit_keep_odd,
            self.exit_keep_even,
            self.eta,
            self.safe_density,
            self.domain_upper,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(TrafficError::Params("all parameters must be positive".into()));
        }
        if self.link_count < 2 {
            return Err(TrafficError::Params("a ring needs at least two links".into()));
        }
        let r = self.flow_ratio();
        if r >= self.exit_keep_odd.min(self.exit_keep_even) {
            return Err(TrafficError::Params(format!("flow ratio {r} leaves a nonpositive diagonal entry")));
        }
        if self.exit_keep_odd >= 1.0 || self.exit_keep_even >= 1.0 {
            return Err(TrafficError::Params("exit keep fractions must be below 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("invalid traffic parameters: {0}")]
    Params(String),
    #[error("stage {stage:?} failed: {message}")]
    Stage { stage: Stage, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stage {
    Model,
    Certify,
    Abstraction,
    Gains,
    SmallGain,
    Deltas,
    Compose,
    Verification,
    Synthesis,
    Simulation,
}

fn fail<E: std::fmt::Display>(stage: Stage) -> impl Fn(E) -> TrafficError {
    move |e| TrafficError::Stage { stage, message: e.to_string() }
}

/// Link `i` of an `n`-link ring on the domain `[0, upper]²`.
pub fn traffic_link(params: &TrafficParams, i: usize, upper: f64) -> SwitchedSubsystem {
    let n = params.link_count;
    let r = params.flow_ratio();
    let a = Matrix::from_rows(&[&[params.exit_keep_odd - r, 0.0], &[r, params.exit_keep_even - r]]);
    let d = Matrix::from_rows(&[&[r], &[0.0]]);
    SwitchedSubsystem::new(SubsystemDef {
        id: i,
        modes: vec![
            AffineMode { a: a.clone(), b: vec![0.0, 0.0], d: d.clone() },
            AffineMode { a, b: vec![params.entry_flow, 0.0], d },
        ],
        state_domain: vec![HyperBox::cube(2, 0.0, upper)],
        internal_domain: vec![HyperBox::cube(1, 0.0, upper)],
        internal_blocks: vec![InputBlock { source: (i + n - 1) % n, dim: 1 }],
        external_output: Matrix::identity(2),
        output_blocks: vec![OutputBlock { target: (i + 1) % n, c: Matrix::from_rows(&[&[0.0, 1.0]]) }],
        dwell_time: 1,
        output_lipschitz: None,
    })
    .expect("traffic link is well formed")
}

/// The ring with `w_i = x_{i−1, 2}` on the domain `[0, domain_upper]²`.
pub fn build_traffic_network(params: &TrafficParams) -> NetworkSpec {
    build_traffic_network_on(params, params.domain_upper)
}

pub fn build_traffic_network_on(params: &TrafficParams, upper: f64) -> NetworkSpec {
    let n = params.link_count;
    let subs = (0..n).map(|i| traffic_link(params, i, upper)).collect();
    let edges = (0..n).map(|i| ((i + n - 1) % n, i)).collect();
    NetworkSpec::new(subs, edges)
}

/// Unit weights: the common Lyapunov function `‖x − x̂‖∞`.
pub fn traffic_certificate(sub: &SwitchedSubsystem) -> Result<LyapCert, TrafficError> {
    certify_delta_iss_affine(sub, &vec![vec![1.0; sub.dim()]; sub.mode_count()]).map_err(fail(Stage::Certify))
}

/// Abstraction of link `i` with internal inputs equal to the image of the
/// neighbour's output over its grid.
pub fn traffic_abstraction(net: &NetworkSpec, i: usize, eta: f64) -> Result<FiniteTs, TrafficError> {
    let grids: Vec<Grid> = net
        .subsystems
        .iter()
        .map(|s| Grid::new(&s.state_domain, eta))
        .collect::<Result<_, _>>()
        .map_err(fail(Stage::Abstraction))?;
    let refs: Vec<&Grid> = grids.iter().collect();
    let inputs = neighbor_output_image(net, i, &refs).map_err(fail(Stage::Abstraction))?;
    build_finite_ts(&net.subsystems[i], eta, inputs, InputSource::Points, BuildOptions::default())
        .map_err(fail(Stage::Abstraction))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficScale {
    pub links: usize,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub steps: usize,
    pub seed: u64,
    /// Compute one link and replicate it to the others.
    pub symmetry: bool,
    /// Samples per sampled verification; zero skips the checks.
    pub verify_samples: usize,
    /// Initial densities; random in `[0, safe − η]` when `None`.
    pub x0: Option<Vec<Vec<f64>>>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions { steps: 600, seed: 1, symmetry: false, verify_samples: 1000, x0: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkReport {
    pub kappa: f64,
    pub rho: f64,
    pub sigma: f64,
    pub rho_hat: f64,
    pub eps_tilde: f64,
    pub eps_hat: f64,
    pub states: usize,
    pub winning: usize,
    pub abstraction_seconds: f64,
    pub synthesis_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainEntry {
    pub i: usize,
    pub j: usize,
    pub slope: f64,
    pub below_identity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrafficReport {
    pub params: TrafficParams,
    pub links: usize,
    pub eta: f64,
    pub seed: u64,
    pub symmetry: bool,
    pub per_link: Vec<LinkReport>,
    pub gains: Vec<GainEntry>,
    pub small_gain: SmallGainReport,
    pub deltas: Deltas,
    pub network_sigma: f64,
    pub network_eps_tilde: f64,
    pub network_eps_hat: f64,
    pub alt_sim_check: Option<FalsificationReport>,
    pub composed_check: Option<FalsificationReport>,
    pub steps: usize,
    pub trajectory_safe: bool,
    pub peak_density: f64,
    pub density_below_safe: bool,
    pub monitor_violations: usize,
    pub certify_seconds: f64,
    pub verification_seconds: f64,
    pub simulation_seconds: f64,
    pub total_seconds: f64,
}

impl TrafficReport {
    /// Every gate passed and the closed loop kept all densities below the limit.
    pub fn passed(&self) -> bool {
        self.small_gain.pass
            && self.alt_sim_check.as_ref().is_none_or(FalsificationReport::passed)
            && self.composed_check.as_ref().is_none_or(FalsificationReport::passed)
            && self.trajectory_safe
            && self.density_below_safe
    }
}

/// Output of [`run_traffic_pipeline`].
pub struct PipelineRun {
    pub report: TrafficReport,
    pub trajectory: Trajectory,
    pub network: NetworkSpec,
    pub controllers: Vec<RefinedController>,
    pub certificates: Vec<AltSimCert>,
    pub network_certificate: NetworkAltSim,
}

/// Certify, abstract, compose, synthesize and simulate the ring at `scale`.
///
/// Synthesis runs on `[0, domain_upper]²` with the absorbing sink; the
/// sampled certificate checks run on the dynamics-closed domain
/// `[0, invariant_bound]²` where the abstraction never blocks.
pub fn run_traffic_pipeline(
    params: &TrafficParams,
    scale: TrafficScale,
    options: &PipelineOptions,
) -> Result<PipelineRun, TrafficError> {
    let started = Instant::now();
    let params = TrafficParams { link_count: scale.links, eta: scale.eta, ..params.clone() };
    params.validate()?;
    let eta = scale.eta;
    let n = scale.links;
    let net = build_traffic_network(&params);
    let report = net.validate().map_err(fail(Stage::Model))?;
    if !report.pass {
        return Err(TrafficError::Stage { stage: Stage::Model, message: "coupling images leave internal domains".into() });
    }

    let t = Instant::now();
    let certs: Vec<LyapCert> = net.subsystems.iter().map(traffic_certificate).collect::<Result<_, _>>()?;
    let ascs: Vec<AltSimCert> = net
        .subsystems
        .iter()
        .zip(&certs)
        .map(|(s, c)| build_alt_sim(s, c, eta, None, params.epsilon, s.dwell_time, params.splitters))
        .collect::<Result<_, _>>()
        .map_err(fail(Stage::Certify))?;
    let certify_seconds = t.elapsed().as_secs_f64();

    let gm = gain_matrix(&ascs, &net.edges).map_err(fail(Stage::Gains))?;
    let small_gain = check_small_gain(&gm, DEFAULT_CYCLE_BUDGET).map_err(fail(Stage::SmallGain))?;
    if !small_gain.pass {
        return Err(TrafficError::Stage { stage: Stage::SmallGain, message: format!("{:?}", small_gain.max_cycle_mean) });
    }
    let deltas = compute_deltas(&gm).map_err(fail(Stage::Deltas))?;
    let net_cert = composed_alt_sim(&ascs, &deltas).map_err(fail(Stage::Compose))?;
    let sample_spec = crate::kfn::SampleSpec::default();
    let mut gains = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if let Some(g) = gm.get(i, j) {
                gains.push(GainEntry {
                    i,
                    j,
                    slope: g.linear_slope().unwrap_or(f64::NAN),
                    below_identity: g.lt_identity(&sample_spec).holds,
                });
            }
        }
    }

    let t = Instant::now();
    let (alt_sim_check, composed_check) = if options.verify_samples > 0 {
        let closed = build_traffic_network_on(&params, params.invariant_bound());
        let ftss: Vec<FiniteTs> =
            (0..n).map(|i| traffic_abstraction(&closed, i, eta)).collect::<Result<_, _>>()?;
        let mut worst: Option<FalsificationReport> = None;
        for i in 0..if options.symmetry { 1 } else { n } {
            let rep = verify_alt_sim_sampled(&closed.subsystems[i], &ftss[i], &ascs[i], options.verify_samples, options.seed + i as u64);
            if worst.as_ref().is_none_or(|w| rep.violation_count > w.violation_count) {
                worst = Some(rep);
            }
        }
        let nfts = interconnect_finite(&closed, ftss).map_err(fail(Stage::Verification))?;
        let composed = verify_composed_sampled(&nfts, &net_cert, options.verify_samples, options.seed);
        (worst, Some(composed))
    } else {
        (None, None)
    };
    let verification_seconds = t.elapsed().as_secs_f64();

    let safe_upper = params.safe_density - eta;
    let spec = SafetySpec { safe: vec![HyperBox::closed(vec![0.0; 2], vec![safe_upper; 2])], horizon: options.steps };
    let assumption = [HyperBox::closed(vec![0.0], vec![params.domain_upper])];
    let mut controllers: Vec<RefinedController> = Vec::with_capacity(n);
    let mut per_link: Vec<LinkReport> = Vec::with_capacity(n);
    for i in 0..n {
        if options.symmetry && i > 0 {
            let mut copy = per_link[0].clone();
            copy.abstraction_seconds = 0.0;
            copy.synthesis_seconds = 0.0;
            per_link.push(copy);
            controllers.push(controllers[0].clone());
            continue;
        }
        let t = Instant::now();
        let fts = traffic_abstraction(&net, i, eta)?;
        let abstraction_seconds = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let ctrl: AbstractController =
            solve_safety(&fts, &spec, Some(&assumption), SolveOptions::default()).map_err(fail(Stage::Synthesis))?;
        let synthesis_seconds = t.elapsed().as_secs_f64();
        let a = &ascs[i];
        per_link.push(LinkReport {
            kappa: certs[i].kappa_max(),
            rho: certs[i].modes[0].rho.as_ref().and_then(|r| r.linear_slope()).unwrap_or(0.0),
            sigma: a.sigma,
            rho_hat: a.rho_hat.as_ref().and_then(|r| r.linear_slope()).unwrap_or(0.0),
            eps_tilde: a.eps_tilde,
            eps_hat: a.eps_hat,
            states: fts.state_count(),
            winning: ctrl.winning_count(),
            abstraction_seconds,
            synthesis_seconds,
        });
        controllers.push(refine_controller(ctrl, fts.state_grid.clone(), a.eps_hat));
    }

    let t = Instant::now();
    let x0 = match &options.x0 {
        Some(x) => x.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            (0..n).map(|_| (0..2).map(|_| rng.gen_range(0.0..=safe_upper)).collect()).collect()
        }
    };
    let target = vec![HyperBox::closed(vec![0.0; 2], vec![params.safe_density - eta / 2.0; 2])];
    let targets = vec![target; n];
    let trajectory = simulate_closed_loop(
        &net,
        &controllers,
        &x0,
        ClosedLoopOptions { steps: options.steps, targets: &targets, monitor: Some(&ascs) },
    )
    .map_err(fail(Stage::Simulation))?;
    let simulation_seconds = t.elapsed().as_secs_f64();

    let report = TrafficReport {
        params: params.clone(),
        links: n,
        eta,
        seed: options.seed,
        symmetry: options.symmetry,
        per_link,
        gains,
        small_gain,
        deltas,
        network_sigma: net_cert.sigma,
        network_eps_tilde: net_cert.eps_tilde,
        network_eps_hat: net_cert.eps_hat,
        alt_sim_check,
        composed_check,
        steps: options.steps,
        trajectory_safe: trajectory.safe,
        peak_density: trajectory.peak_output,
        density_below_safe: trajectory.peak_output < params.safe_density,
        monitor_violations: trajectory.monitor_violations,
        certify_seconds,
        verification_seconds,
        simulation_seconds,
        total_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(PipelineRun { report, trajectory, network: net, controllers, certificates: ascs, network_certificate: net_cert })
}
