//! TOML network description.
//!
//! ```toml
//! seed = 7
//!
//! [parameters]          # every entry is optional and overridden by flags
//! eta = 0.1
//! varpi = 0.0           # 0 or absent: inputs are the neighbours' output images
//! epsilon = 2.0
//! theta = [0.7, 0.15, 0.15]
//! samples = 1000
//! steps = 100
//!
//! [[subsystems]]
//! dwell_time = 1
//! state_domain = [{ lower = [0.0, 0.0], upper = [2.0, 2.0] }]
//! internal_domain = [{ lower = [0.0], upper = [2.0] }]
//! external_output = [[1.0, 0.0], [0.0, 1.0]]   # default identity
//! weights = [[1.0, 1.0], [2.0, 1.0]]          # per mode, default unit
//! safe = [{ lower = [0.0, 0.0], upper = [1.5, 1.5] }]
//! assumption = [{ lower = [0.0], upper = [1.0] }]
//! target = [...]                              # closed-loop check, default `safe`
//! x0 = [0.5, 0.5]
//! modes = [{ a = [[0.5, 0.1], [0.1, 0.4]], b = [0.2, 0.1], d = [[0.1], [0.0]] }]
//! inputs = [{ source = 1, dim = 1 }]
//! outputs = [{ target = 1, c = [[0.0, 1.0]] }]
//! ```
//!
//! Edges are implied by `inputs`: a block with `source = j` in subsystem `i`
//! is the edge `j -> i`.

use std::path::Path;

use compsym::kfn::KFn;
use compsym::linalg::{HyperBox, Matrix};
use compsym::model::{AffineMode, InputBlock, NetworkSpec, OutputBlock, SubsystemDef, SwitchedSubsystem};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub parameters: Parameters,
    pub subsystems: Vec<SubsystemSpec>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parameters {
    pub eta: Option<f64>,
    pub varpi: Option<f64>,
    pub epsilon: Option<f64>,
    pub theta: Option<[f64; 3]>,
    pub samples: Option<usize>,
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(default)]
    pub d: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub target: usize,
    pub c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemSpec {
    #[serde(default = "one")]
    pub dwell_time: usize,
    pub state_domain: Vec<BoxSpec>,
    #[serde(default)]
    pub internal_domain: Vec<BoxSpec>,
    #[serde(default)]
    pub external_output: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub weights: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub safe: Option<Vec<BoxSpec>>,
    #[serde(default)]
    pub assumption: Option<Vec<BoxSpec>>,
    #[serde(default)]
    pub target: Option<Vec<BoxSpec>>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub output_lipschitz: Option<f64>,
    pub modes: Vec<ModeSpec>,
    #[serde(default)]
    pub inputs: Vec<InputBlock>,
    #[serde(default)]
    pub outputs: Vec<OutputSpec>,
}

fn one() -> usize {
    1
}

/// Per-subsystem data that is not part of the dynamics.
#[derive(Debug, Clone)]
pub struct Extras {
    pub weights: Vec<Vec<f64>>,
    pub safe: Option<Vec<HyperBox>>,
    pub assumption: Option<Vec<HyperBox>>,
    pub target: Option<Vec<HyperBox>>,
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct LoadedSpec {
    pub seed: Option<u64>,
    pub parameters: Parameters,
    pub network: NetworkSpec,
    pub extras: Vec<Extras>,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix, String> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(format!("{what}: ragged rows"));
    }
    Matrix::new(rows.len(), cols, rows.concat()).ok_or_else(|| format!("{what}: malformed matrix"))
}

fn boxes(specs: &[BoxSpec], what: &str) -> Result<Vec<HyperBox>, String> {
    specs
        .iter()
        .map(|b| {
            if b.lower.len() != b.upper.len() || b.lower.iter().zip(&b.upper).any(|(l, u)| !(l <= u)) {
                return Err(format!("{what}: box bounds must have equal length and lower <= upper"));
            }
            Ok(HyperBox::closed(b.lower.clone(), b.upper.clone()))
        })
        .collect()
}

/// Domain boxes need positive extent on every axis.
fn domain(specs: &[BoxSpec], what: &str) -> Result<Vec<HyperBox>, String> {
    specs
        .iter()
        .map(|b| HyperBox::new(b.lower.clone(), b.upper.clone()).ok_or_else(|| format!("{what}: box must have lower < upper")))
        .collect()
}

impl SubsystemSpec {
    fn build(&self, id: usize) -> Result<(SwitchedSubsystem, Extras), String> {
        let ctx = |what: &str| format!("subsystem {id}: {what}");
        let n = self.modes.first().map_or(0, |m| m.a.len());
        let q: usize = self.inputs.iter().map(|b| b.dim).sum();
        let modes = self
            .modes
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let d = match &m.d {
                    Some(d) => matrix(d, &ctx(&format!("mode {k} d")))?,
                    None => Matrix::zeros(m.a.len(), q),
                };
                Ok(AffineMode { a: matrix(&m.a, &ctx(&format!("mode {k} a")))?, b: m.b.clone(), d })
            })
            .collect::<Result<Vec<_>, String>>()?;
        let outputs = self
            .outputs
            .iter()
            .map(|o| Ok(OutputBlock { target: o.target, c: matrix(&o.c, &ctx("output c"))? }))
            .collect::<Result<Vec<_>, String>>()?;
        let external_output = match &self.external_output {
            Some(h) => matrix(h, &ctx("external_output"))?,
            None => Matrix::identity(n),
        };
        let output_lipschitz = self.output_lipschitz.map(KFn::linear).transpose().map_err(|e| ctx(&e.to_string()))?;
        let sub = SwitchedSubsystem::new(SubsystemDef {
            id,
            modes,
            state_domain: domain(&self.state_domain, &ctx("state_domain"))?,
            internal_domain: domain(&self.internal_domain, &ctx("internal_domain"))?,
            internal_blocks: self.inputs.clone(),
            external_output,
            output_blocks: outputs,
            dwell_time: self.dwell_time,
            output_lipschitz,
        })
        .map_err(|e| e.to_string())?;
        let weights = self.weights.clone().unwrap_or_else(|| vec![vec![1.0; n]; self.modes.len()]);
        let opt = |b: &Option<Vec<BoxSpec>>, what: &str| b.as_ref().map(|b| boxes(b, &ctx(what))).transpose();
        let extras = Extras {
            weights,
            safe: opt(&self.safe, "safe")?,
            assumption: opt(&self.assumption, "assumption")?,
            target: opt(&self.target, "target")?,
            x0: self.x0.clone(),
        };
        if extras.x0.as_ref().is_some_and(|x| x.len() != n) {
            return Err(ctx("x0 has the wrong dimension"));
        }
        Ok((sub, extras))
    }
}

pub fn parse_spec(text: &str) -> Result<LoadedSpec, String> {
    let file: SpecFile = toml::from_str(text).map_err(|e| e.to_string())?;
    if file.subsystems.is_empty() {
        return Err("no subsystems".into());
    }
    let mut subs = Vec::new();
    let mut extras = Vec::new();
    let mut edges = Vec::new();
    for (i, s) in file.subsystems.iter().enumerate() {
        let (sub, ex) = s.build(i)?;
        edges.extend(s.inputs.iter().map(|b| (b.source, i)));
        subs.push(sub);
        extras.push(ex);
    }
    let network = NetworkSpec::new(subs, edges);
    let report = network.validate().map_err(|e| e.to_string())?;
    if !report.pass {
        return Err(format!(
            "coupling check failed: edges {:?}, stray outputs {:?}",
            report.edges.iter().filter(|e| !e.contained).map(|e| (e.from, e.to)).collect::<Vec<_>>(),
            report.stray_outputs
        ));
    }
    Ok(LoadedSpec { seed: file.seed, parameters: file.parameters, network, extras })
}

pub fn load_spec(path: &Path) -> Result<LoadedSpec, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_spec(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Gain-matrix document for `compose --gains`: linear slopes, 0 for no gain.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsFile {
    pub slopes: Vec<Vec<f64>>,
}

pub fn load_gains(path: &Path) -> Result<GainsFile, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let g: GainsFile = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let n = g.slopes.len();
    if n == 0 || g.slopes.iter().any(|r| r.len() != n) {
        return Err(format!("{}: slopes must be a nonempty square matrix", path.display()));
    }
    if g.slopes.iter().flatten().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(format!("{}: slopes must be finite and nonnegative", path.display()));
    }
    Ok(g)
}
