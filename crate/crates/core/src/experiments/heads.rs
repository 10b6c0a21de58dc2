//! Training a head from config, and the `train` / `seam-map` runners.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{fmt, HeadParams, RunContext, TargetEnv, TrainParams, TrainScalar};
use crate::envs::{BandGeometry, GraspManifold};
use crate::error::{Error, Result};
use crate::heads::{
    DataSource, DiffusionHead, FlowHead, HeadKind, NoisyGrasp, Recast, StepSampler, TrainConfig, TrainLog, Trainer,
};
use crate::metrics::{seam_map, write_seam_csv, LatentGrid};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{AdamWConfig, Ema, MlpConfig, MlpParams};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

/// A head network of one scalar type.
#[derive(Debug, Clone)]
pub enum HeadNet<T: Scalar> {
    Flow(FlowHead<T>),
    Diffusion(DiffusionHead<T>),
}

impl<T: Scalar> HeadNet<T> {
    pub fn kind(&self) -> HeadKind {
        match self {
            HeadNet::Flow(_) => HeadKind::Flow,
            HeadNet::Diffusion(_) => HeadKind::Diffusion,
        }
    }

    pub fn with_sampler<R>(&self, f: impl FnOnce(&dyn StepSampler<T>) -> Result<R>) -> Result<R> {
        match self {
            HeadNet::Flow(h) => f(&h.sampler()),
            HeadNet::Diffusion(h) => f(&h.sampler()?),
        }
    }

    pub fn with_steps<R>(&self, steps: usize, f: impl FnOnce(&dyn StepSampler<T>) -> Result<R>) -> Result<R> {
        match self {
            HeadNet::Flow(h) => f(&h.sampler_with_steps(steps)?),
            HeadNet::Diffusion(h) => f(&h.sampler_with_steps(steps)?),
        }
    }
}

/// A trained head with f64 weights, ready for evaluation. Heads trained in
/// f32 also keep their native weights for bulk sampling.
#[derive(Debug, Clone)]
pub struct TrainedHead {
    pub net: HeadNet<f64>,
    pub native: Option<HeadNet<f32>>,
}

impl TrainedHead {
    pub fn kind(&self) -> HeadKind {
        self.net.kind()
    }

    /// Calls `f` with the head's default sampler.
    pub fn with_sampler<R>(&self, f: impl FnOnce(&dyn StepSampler<f64>) -> Result<R>) -> Result<R> {
        self.net.with_sampler(f)
    }

    /// Calls `f` with a sampler using `steps` steps.
    pub fn with_steps<R>(&self, steps: usize, f: impl FnOnce(&dyn StepSampler<f64>) -> Result<R>) -> Result<R> {
        self.net.with_steps(steps, f)
    }

    /// Like [`with_sampler`](Self::with_sampler), but runs in the training
    /// precision. Meant for Monte-Carlo counts, not for finite differences.
    pub fn with_bulk_sampler<R>(&self, f: impl FnOnce(&dyn StepSampler<f64>) -> Result<R>) -> Result<R> {
        match &self.native {
            Some(n) => n.with_sampler(|s| f(&Recast(s))),
            None => self.net.with_sampler(f),
        }
    }
}

pub fn train_config(t: &TrainParams, head: &HeadParams) -> TrainConfig {
    TrainConfig {
        steps: t.steps,
        batch: t.batch,
        optim: AdamWConfig {
            lr: t.lr,
            weight_decay: t.weight_decay,
            clip: t.clip,
            ..AdamWConfig::default()
        },
        ema_decay: t.ema_decay,
        t_diff: head.t_diff,
    }
}

fn fit<T: Scalar>(
    kind: HeadKind,
    data: &dyn DataSource,
    head: &HeadParams,
    train: &TrainParams,
    seed: u64,
) -> Result<Trainer<T>> {
    let cfg = MlpConfig::new(data.dim(), head.embed_dim, head.hidden, head.depth)?;
    let mut rng = rng_from_seed(seed);
    let params = MlpParams::<T>::init(cfg, &mut rng);
    let mut trainer = Trainer::new(kind, params, train_config(train, head))?;
    trainer.fit(data, &mut rng)?;
    Ok(trainer)
}

/// Builds a head from trained weights.
pub fn assemble_head<T: Scalar>(
    kind: HeadKind,
    raw: MlpParams<T>,
    ema: MlpParams<T>,
    head: &HeadParams,
    ema_decay: f64,
) -> Result<HeadNet<T>> {
    Ok(match kind {
        HeadKind::Flow => {
            let net = if head.use_ema { ema } else { raw };
            HeadNet::Flow(FlowHead::new(net, head.flow_steps, head.integrator)?)
        }
        HeadKind::Diffusion => {
            let mut h = DiffusionHead::new(raw, head.t_diff, head.ddim_steps)?;
            h.ema = Some(Ema::new(&ema, ema_decay)?);
            h.use_ema = head.use_ema;
            HeadNet::Diffusion(h)
        }
    })
}

fn widen<T: Scalar>(kind: HeadKind, t: &Trainer<T>, head: &HeadParams) -> Result<TrainedHead> {
    let net = assemble_head(kind, t.params.cast(), t.ema.shadow.cast(), head, t.config.ema_decay)?;
    Ok(TrainedHead { net, native: None })
}

/// Trains one head on `data` with the generator seeded by `seed`.
pub fn train_head(
    kind: HeadKind,
    data: &dyn DataSource,
    head: &HeadParams,
    train: &TrainParams,
    seed: u64,
) -> Result<(TrainedHead, TrainLog)> {
    match train.scalar {
        TrainScalar::F64 => {
            let t = fit::<f64>(kind, data, head, train, seed)?;
            Ok((widen(kind, &t, head)?, t.log))
        }
        TrainScalar::F32 => {
            let t = fit::<f32>(kind, data, head, train, seed)?;
            let mut h = widen(kind, &t, head)?;
            h.native = Some(assemble_head(kind, t.params, t.ema.shadow, head, t.config.ema_decay)?);
            Ok((h, t.log))
        }
    }
}

pub(crate) fn target_data(env: &TargetEnv) -> Result<Box<dyn DataSource>> {
    Ok(match *env {
        TargetEnv::Band {
            modes,
            gap_halfwidth,
            strip_halfwidth,
        } => Box::new(band(modes, strip_halfwidth, gap_halfwidth)?),
        TargetEnv::Grasp { noise_sigma } => Box::new(NoisyGrasp {
            manifold: GraspManifold::default(),
            noise_sigma,
        }),
    })
}

/// Band with the given strip half-width, `x ∈ [−1, 1]` and one gap of clearance.
pub fn band(modes: usize, strip_halfwidth: f64, gap: f64) -> Result<BandGeometry> {
    let outer = (modes as f64 - 1.0) * (strip_halfwidth + gap) + strip_halfwidth;
    BandGeometry::new(modes, strip_halfwidth, gap, -1.0, 1.0, outer + 2.0 * gap)
}

pub(crate) fn write_losses(ctx: &mut RunContext, name: &str, losses: &[f64]) -> Result<()> {
    ctx.write_csv(name, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["step", "loss"])?;
        for (i, l) in losses.iter().enumerate() {
            w.write_record([i.to_string(), fmt(*l)])?;
        }
        w.flush()?;
        Ok(())
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    head: HeadKind,
    head_params: HeadParams,
    target: TargetEnv,
}

fn save_checkpoint<T: Scalar>(ctx: &mut RunContext, t: &Trainer<T>, seed: u64) -> Result<()> {
    let meta = CheckpointMeta {
        head: t.kind,
        head_params: ctx.config.head,
        target: ctx.config.target.env,
    };
    let ck = Checkpoint::new(&t.params, Some(&t.opt), Some(&t.ema), seed, serde_json::to_value(meta)?);
    let text = ck.to_json()?;
    ctx.write_bytes("checkpoint.json", text.as_bytes())
}

pub fn run_train(ctx: &mut RunContext) -> Result<()> {
    let target = ctx.config.target.clone();
    let seed = ctx.seed(&format!("train/{}", target.head.name()));
    if ctx.dry_run {
        return Ok(());
    }
    let data = target_data(&target.env)?;
    let (head, train) = (ctx.config.head, ctx.config.train);
    let log = match train.scalar {
        TrainScalar::F64 => {
            let t = fit::<f64>(target.head, data.as_ref(), &head, &train, seed)?;
            save_checkpoint(ctx, &t, seed)?;
            t.log
        }
        TrainScalar::F32 => {
            let t = fit::<f32>(target.head, data.as_ref(), &head, &train, seed)?;
            save_checkpoint(ctx, &t, seed)?;
            t.log
        }
    };
    write_losses(ctx, "losses.csv", &log.losses)
}

fn load_head(path: &Path) -> Result<(TrainedHead, TargetEnv)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    fn open<T: Scalar>(text: &str) -> Result<(MlpParams<f64>, MlpParams<f64>, f64, serde_json::Value)> {
        let ck = Checkpoint::<T>::from_json(text)?;
        let raw = ck.params()?.cast();
        let (ema, decay) = match &ck.ema {
            Some(e) => (e.shadow.cast(), e.decay),
            None => (raw.clone(), 0.0),
        };
        Ok((raw, ema, decay, ck.run_config))
    }
    let (raw, ema, decay, meta) = match v.get("scalar").and_then(|s| s.as_str()) {
        Some("f32") => open::<f32>(&text)?,
        _ => open::<f64>(&text)?,
    };
    let meta: CheckpointMeta =
        serde_json::from_value(meta).map_err(|e| Error::config(format!("checkpoint lacks head metadata: {e}")))?;
    let net = assemble_head(meta.head, raw, ema, &meta.head_params, decay)?;
    Ok((TrainedHead { net, native: None }, meta.target))
}

pub fn run_seam_map(ctx: &mut RunContext) -> Result<()> {
    let seam = ctx.config.seam.clone();
    let target = ctx.config.target.clone();
    let seed = ctx.seed(&format!("seam-map/{}/train", target.head.name()));
    if ctx.dry_run {
        return Ok(());
    }
    let (head, env) = match &seam.checkpoint {
        Some(p) => load_head(p)?,
        None => {
            let data = target_data(&target.env)?;
            let (h, log) = train_head(target.head, data.as_ref(), &ctx.config.head, &ctx.config.train, seed)?;
            write_losses(ctx, "losses.csv", &log.losses)?;
            (h, target.env)
        }
    };
    let geom = match env {
        TargetEnv::Band {
            modes,
            gap_halfwidth,
            strip_halfwidth,
        } => band(modes, strip_halfwidth, gap_halfwidth)?,
        TargetEnv::Grasp { .. } => return Err(Error::config("seam maps need a 2-D band target")),
    };
    let grid = LatentGrid::square(seam.half, seam.grid);
    let pts = head.with_sampler(|s| seam_map(s, &geom, &grid))?;
    ctx.write_csv("seam.csv", |buf| write_seam_csv(buf, &pts))
}
