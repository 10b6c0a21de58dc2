//! Seeded experiment pipelines: configuration, presets, run manifests and
//! the runners behind the command-line subcommands.
//!
//! Every randomized quantity of a run derives from the root seed through
//! [`stage_seed`] with a label naming the stage (for example
//! `topology/diffusion/M3/W0.25/s1/train`). Outputs are written with
//! shortest round-trip float formatting, so the same config and seed give
//! byte-identical files regardless of thread count.

pub mod bounds_run;
pub mod heads;
pub mod plansim;
pub mod precision;
pub mod topology;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::heads::{HeadKind, Integrator};
use crate::rng::stage_seed;

pub use heads::{train_head, TrainedHead};

pub const ARTIFACT: &str = "hallu";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Train,
    Topology,
    Precision,
    Bounds,
    Plansim,
    SeamMap,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Train => "train",
            ExperimentKind::Topology => "topology",
            ExperimentKind::Precision => "precision",
            ExperimentKind::Bounds => "bounds",
            ExperimentKind::Plansim => "plansim",
            ExperimentKind::SeamMap => "seam-map",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::config(format!("unknown preset `{other}` (desk|paper)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainScalar {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadParams {
    pub hidden: usize,
    pub depth: usize,
    pub embed_dim: usize,
    pub flow_steps: usize,
    pub integrator: Integrator,
    pub ddim_steps: usize,
    pub t_diff: usize,
    /// Evaluate the EMA weights (diffusion always keeps both).
    pub use_ema: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip: f64,
    pub ema_decay: f64,
    /// Scalar type used for training; trained weights are widened to f64 for evaluation.
    pub scalar: TrainScalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalParams {
    pub samples: usize,
    pub batch: usize,
    pub lipschitz_radius: f64,
    pub lipschitz_probes: usize,
    pub fd_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyParams {
    pub modes: Vec<usize>,
    pub gaps: Vec<f64>,
    pub strip_halfwidth: f64,
    pub seeds: usize,
    pub heads: Vec<HeadKind>,
    pub seam_grid: usize,
    pub seam_half: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecisionParams {
    pub ring_radius: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub noise_sigma: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub delta_points: usize,
    pub histogram_bins: usize,
    pub k_grid: Vec<usize>,
    pub chain_probes: usize,
    pub chain_fd_step: f64,
    pub seeds: usize,
    pub heads: Vec<HeadKind>,
}

/// Which data a single `train` / `seam-map` run uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "env", rename_all = "lowercase")]
pub enum TargetEnv {
    Band {
        modes: usize,
        gap_halfwidth: f64,
        strip_halfwidth: f64,
    },
    Grasp {
        noise_sigma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTarget {
    pub head: HeadKind,
    #[serde(flatten)]
    pub env: TargetEnv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeamParams {
    /// Checkpoint written by `train`; trained in place when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub half: f64,
    pub grid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub preset: Preset,
    pub head: HeadParams,
    pub train: TrainParams,
    pub eval: EvalParams,
    pub topology: TopologyParams,
    pub precision: PrecisionParams,
    pub target: TrainTarget,
    pub seam: SeamParams,
    pub plansim: crate::planner_sim::CompareConfig,
    /// Requests for the `bounds` runner.
    #[serde(default)]
    pub bounds: Vec<bounds_run::BoundRequest>,
}

/// Values every preset shares, as a JSON document that user configs are merged onto.
fn base_defaults() -> Value {
    let rho1 = 0.8f64.powi(20);
    serde_json::json!({
        "seed": 0,
        "preset": "desk",
        "head": {
            "hidden": 128, "depth": 4, "embed_dim": 64,
            "flow_steps": 20, "integrator": "euler",
            "ddim_steps": crate::heads::diffusion::DEFAULT_DDIM_STEPS,
            "t_diff": crate::heads::diffusion::DEFAULT_T_DIFF,
            "use_ema": true
        },
        "train": {
            "steps": 10000, "batch": 512, "lr": 2e-4, "weight_decay": 1e-4,
            "clip": 1.0, "ema_decay": 0.999, "scalar": "f32"
        },
        "eval": {
            "samples": 100000, "batch": 4096, "lipschitz_radius": 3.0,
            "lipschitz_probes": 2048, "fd_step": 0.01
        },
        "topology": {
            "modes": [2, 3, 4, 5], "gaps": [0.25], "strip_halfwidth": 0.5, "seeds": 3,
            "heads": ["flow", "diffusion"], "seam_grid": 101, "seam_half": 3.0
        },
        "precision": {
            "ring_radius": 1.0, "h_min": 0.0, "h_max": 1.0, "noise_sigma": 0.01,
            "delta_min": 1e-3, "delta_max": 1.0, "delta_points": 25, "histogram_bins": 40,
            "k_grid": [5, 10, 20, 50], "chain_probes": 16, "chain_fd_step": 1e-4,
            "seeds": 3, "heads": ["flow", "diffusion"]
        },
        "target": { "head": "diffusion", "env": "band", "modes": 2, "gap_halfwidth": 0.25, "strip_halfwidth": 0.5 },
        "seam": { "half": 3.0, "grid": 101 },
        "plansim": {
            "gamma": 0.8, "horizon": 20, "alpha": 0.1, "beta": 0.05,
            "eps_fp": 0.001, "eps_fn": 0.0,
            "schedules": [
                {"kind": "geometric", "rho1": rho1, "r": 2.0},
                {"kind": "polynomial", "rho1": rho1, "p": 1.0},
                {"kind": "constant", "rho": rho1}
            ],
            "q_grid": (1..=30).collect::<Vec<u64>>(),
            "trials": 10000
        },
        "bounds": []
    })
}

fn preset_overrides(p: Preset) -> Value {
    match p {
        Preset::Desk => serde_json::json!({}),
        Preset::Paper => serde_json::json!({
            "head": { "hidden": 256 },
            "train": { "steps": 100000, "batch": 2048 },
            "eval": { "samples": 1000000 }
        }),
    }
}

/// Recursively overlays `top` onto `base`; arrays and scalars are replaced.
fn merge(base: &mut Value, top: &Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Converts serde's "missing field `x`" into [`Error::MissingField`].
fn schema_error(e: serde_json::Error) -> Error {
    let msg = e.to_string();
    if let Some(rest) = msg.strip_prefix("missing field `") {
        if let Some(end) = rest.find('`') {
            return Error::MissingField(rest[..end].to_string());
        }
    }
    Error::Json(e)
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub kind: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub preset: Option<Preset>,
}

impl ExperimentConfig {
    /// Resolves a user document: preset defaults, then the document, then overrides.
    /// `kind` is required unless given as an override.
    pub fn resolve(user: &Value, ov: &Overrides) -> Result<Self> {
        if !user.is_object() {
            return Err(Error::config("config must be a JSON object"));
        }
        let preset = match ov.preset {
            Some(p) => p,
            None => match user.get("preset") {
                Some(v) => serde_json::from_value(v.clone()).map_err(schema_error)?,
                None => Preset::Desk,
            },
        };
        let mut doc = base_defaults();
        merge(&mut doc, &preset_overrides(preset));
        merge(&mut doc, user);
        let o = doc.as_object_mut().expect("object");
        o.insert("preset".into(), serde_json::to_value(preset)?);
        if let Some(k) = ov.kind {
            o.insert("kind".into(), serde_json::to_value(k)?);
        }
        if let Some(s) = ov.seed {
            o.insert("seed".into(), s.into());
        }
        let cfg: ExperimentConfig = serde_json::from_value(doc).map_err(schema_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(s: &str, ov: &Overrides) -> Result<Self> {
        let v: Value = serde_json::from_str(s).map_err(schema_error)?;
        Self::resolve(&v, ov)
    }

    pub fn load(path: &Path, ov: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json_str(&text, ov)
    }

    /// Preset defaults with only `kind` set.
    pub fn preset(kind: ExperimentKind, preset: Preset) -> Result<Self> {
        Self::resolve(
            &serde_json::json!({}),
            &Overrides {
                kind: Some(kind),
                seed: None,
                preset: Some(preset),
            },
        )
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.head;
        if h.flow_steps == 0 || h.ddim_steps == 0 || h.ddim_steps > h.t_diff {
            return Err(Error::config("need flow_steps >= 1 and 1 <= ddim_steps <= t_diff"));
        }
        crate::nn::MlpConfig::new(2, h.embed_dim, h.hidden, h.depth)?;
        let t = &self.train;
        if t.batch == 0 || !(t.lr > 0.0) || !(0.0..1.0).contains(&t.ema_decay) {
            return Err(Error::config("need batch >= 1, lr > 0 and ema_decay in [0, 1)"));
        }
        let e = &self.eval;
        if e.samples == 0 || e.batch == 0 || e.lipschitz_probes == 0 || !(e.fd_step > 0.0) {
            return Err(Error::config(
                "eval samples, batch, probes and fd_step must be positive",
            ));
        }
        let tp = &self.topology;
        if tp.modes.iter().any(|&m| m < 2) || tp.gaps.iter().any(|&w| !(w > 0.0)) || tp.seeds == 0 {
            return Err(Error::config(
                "topology needs modes >= 2, positive gaps and at least one seed",
            ));
        }
        let p = &self.precision;
        if !(p.delta_min > 0.0 && p.delta_max >= p.delta_min) || p.delta_points == 0 || p.seeds == 0 {
            return Err(Error::config(
                "precision needs 0 < delta_min <= delta_max, points >= 1, seeds >= 1",
            ));
        }
        if p.k_grid.iter().any(|&k| k == 0 || k > h.t_diff) {
            return Err(Error::config("k_grid entries must lie in [1, t_diff]"));
        }
        if self.kind == ExperimentKind::Bounds && self.bounds.is_empty() {
            return Err(Error::MissingField("bounds".into()));
        }
        Ok(())
    }

    pub fn stage_seed(&self, label: &str) -> u64 {
        stage_seed(self.seed, label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedCell {
    pub cell: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub dry_run: bool,
    pub wall_clock_secs: f64,
    /// Seed of every randomized stage, keyed by stage label.
    pub stage_seeds: BTreeMap<String, u64>,
    pub outputs: Vec<OutputFile>,
    pub failed_cells: Vec<FailedCell>,
}

/// Output directory bookkeeping shared by the runners.
pub struct RunContext {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub dry_run: bool,
    started: Instant,
    seeds: BTreeMap<String, u64>,
    outputs: Vec<OutputFile>,
    failed: Vec<FailedCell>,
}

impl RunContext {
    pub fn new(config: ExperimentConfig, out: impl Into<PathBuf>, dry_run: bool) -> Result<Self> {
        let out = out.into();
        fs::create_dir_all(&out)?;
        Ok(Self {
            config,
            out,
            dry_run,
            started: Instant::now(),
            seeds: BTreeMap::new(),
            outputs: Vec::new(),
            failed: Vec::new(),
        })
    }

    /// Derives and records the seed of a stage.
    pub fn seed(&mut self, label: &str) -> u64 {
        let s = self.config.stage_seed(label);
        self.seeds.insert(label.to_string(), s);
        s
    }

    pub fn fail(&mut self, cell: impl Into<String>, err: &Error) {
        let cell = cell.into();
        log::warn!("cell {cell} failed: {err}");
        self.failed.push(FailedCell {
            cell,
            error: err.to_string(),
        });
    }

    pub fn failed_cells(&self) -> &[FailedCell] {
        &self.failed
    }

    pub fn write_bytes(&mut self, name: &str, data: &[u8]) -> Result<()> {
        fs::write(self.out.join(name), data)?;
        let digest = Sha256::digest(data);
        self.outputs.push(OutputFile {
            path: name.to_string(),
            bytes: data.len() as u64,
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        });
        Ok(())
    }

    /// CSV preceded by a `# manifest: manifest.json` comment line.
    pub fn write_csv(&mut self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        writeln!(buf, "# manifest: {MANIFEST_FILE}")?;
        body(&mut buf)?;
        self.write_bytes(name, &buf)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut buf = serde_json::to_vec_pretty(value)?;
        buf.push(b'\n');
        self.write_bytes(name, &buf)
    }

    /// Writes the manifest and returns it.
    pub fn finish(self) -> Result<RunManifest> {
        let m = RunManifest {
            artifact: ARTIFACT.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: self.config,
            dry_run: self.dry_run,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            stage_seeds: self.seeds,
            outputs: self.outputs,
            failed_cells: self.failed,
        };
        let mut buf = serde_json::to_vec_pretty(&m)?;
        buf.push(b'\n');
        fs::write(self.out.join(MANIFEST_FILE), buf)?;
        Ok(m)
    }
}

/// Runs the experiment named by `config.kind` into `out`.
pub fn run(config: ExperimentConfig, out: &Path, dry_run: bool) -> Result<RunManifest> {
    let mut ctx = RunContext::new(config, out, dry_run)?;
    match ctx.config.kind {
        ExperimentKind::Train => heads::run_train(&mut ctx)?,
        ExperimentKind::Topology => topology::run_topology(&mut ctx)?,
        ExperimentKind::Precision => precision::run_precision(&mut ctx)?,
        ExperimentKind::Bounds => bounds_run::run_bounds(&mut ctx)?,
        ExperimentKind::Plansim => plansim::run_plansim(&mut ctx)?,
        ExperimentKind::SeamMap => heads::run_seam_map(&mut ctx)?,
    }
    ctx.finish()
}

/// Float formatting used in every table: shortest round-trip representation.
pub(crate) fn fmt(v: f64) -> String {
    v.to_string()
}
