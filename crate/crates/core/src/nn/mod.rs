//! Dense time-conditioned MLP with exact reverse-mode gradients.
//!
//! Architecture: `[x ∥ embed(t)]` → `depth` × (Linear → LayerNorm → SiLU) →
//! Linear to the data dimension. All parameters live in one flat vector so the
//! optimizer, EMA and checkpoint code can treat them as a single array.

pub mod checkpoint;
pub mod embed;
mod mlp;
pub mod optim;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use embed::sinusoidal_embed;
pub use mlp::{backward, forward, forward_batch, predict_batch, ForwardCache};
pub use optim::{clip_grad_norm, global_norm, AdamW, AdamWConfig, Ema};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Dimension of the data/action vector (input and output).
    pub data_dim: usize,
    /// Sinusoidal time-embedding dimension (even).
    pub embed_dim: usize,
    pub hidden: usize,
    pub depth: usize,
}

impl MlpConfig {
    pub fn new(data_dim: usize, embed_dim: usize, hidden: usize, depth: usize) -> Result<Self> {
        let c = Self {
            data_dim,
            embed_dim,
            hidden,
            depth,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 {
            return Err(Error::config("data_dim must be positive"));
        }
        if self.embed_dim % 2 != 0 {
            return Err(Error::config(format!("embed_dim must be even, got {}", self.embed_dim)));
        }
        if self.depth > 0 && self.hidden == 0 {
            return Err(Error::config("hidden width must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.data_dim + self.embed_dim
    }

    /// Width of the representation feeding the final linear layer.
    pub fn last_width(&self) -> usize {
        if self.depth == 0 {
            self.input_dim()
        } else {
            self.hidden
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn num_params(&self) -> usize {
        self.layout().len
    }
}

/// Offsets of one hidden block inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub fan_in: usize,
    pub w: usize,
    pub b: usize,
    pub gain: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub blocks: Vec<BlockLayout>,
    pub out_fan_in: usize,
    pub out_w: usize,
    pub out_b: usize,
    pub len: usize,
}

impl Layout {
    fn new(c: &MlpConfig) -> Self {
        let mut pos = 0;
        let mut blocks = Vec::with_capacity(c.depth);
        let mut fan_in = c.input_dim();
        for _ in 0..c.depth {
            let w = pos;
            pos += fan_in * c.hidden;
            let b = pos;
            pos += c.hidden;
            let gain = pos;
            pos += c.hidden;
            let offset = pos;
            pos += c.hidden;
            blocks.push(BlockLayout {
                fan_in,
                w,
                b,
                gain,
                offset,
            });
            fan_in = c.hidden;
        }
        let out_w = pos;
        pos += fan_in * c.data_dim;
        let out_b = pos;
        pos += c.data_dim;
        Layout {
            blocks,
            out_fan_in: fan_in,
            out_w,
            out_b,
            len: pos,
        }
    }

    /// Named tensors with their shapes, in storage order.
    pub fn tensors(&self, c: &MlpConfig) -> Vec<(String, Vec<usize>)> {
        let mut v = Vec::new();
        for (l, bl) in self.blocks.iter().enumerate() {
            v.push((format!("block{l}.weight"), vec![bl.fan_in, c.hidden]));
            v.push((format!("block{l}.bias"), vec![c.hidden]));
            v.push((format!("block{l}.ln_gain"), vec![c.hidden]));
            v.push((format!("block{l}.ln_offset"), vec![c.hidden]));
        }
        v.push(("out.weight".into(), vec![self.out_fan_in, c.data_dim]));
        v.push(("out.bias".into(), vec![c.data_dim]));
        v
    }
}

/// Flat parameter (or gradient) vector together with its architecture.
///
/// Weights are stored row-major as `fan_in × fan_out`, so a batch of row
/// vectors is propagated by `X · W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MlpParams<T: Scalar> {
    pub config: MlpConfig,
    pub data: Vec<T>,
}

/// Gradients share the parameter layout.
pub type MlpGrads<T> = MlpParams<T>;

impl<T: Scalar> MlpParams<T> {
    pub fn zeros(config: MlpConfig) -> Self {
        let n = config.num_params();
        Self {
            config,
            data: vec![T::zero(); n],
        }
    }

    /// Weights ~ U(±√(1/fan_in)), biases 0, LayerNorm gain 1 and offset 0.
    pub fn init<R: Rng + ?Sized>(config: MlpConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(config);
        let layout = config.layout();
        for bl in &layout.blocks {
            let bound = (1.0 / bl.fan_in as f64).sqrt();
            for x in &mut p.data[bl.w..bl.w + bl.fan_in * config.hidden] {
                *x = T::of(rng.random_range(-bound..bound));
            }
            for x in &mut p.data[bl.gain..bl.gain + config.hidden] {
                *x = T::one();
            }
        }
        let bound = (1.0 / layout.out_fan_in as f64).sqrt();
        for x in &mut p.data[layout.out_w..layout.out_w + layout.out_fan_in * config.data_dim] {
            *x = T::of(rng.random_range(-bound..bound));
        }
        p
    }

    pub fn from_flat(config: MlpConfig, data: Vec<T>) -> Result<Self> {
        config.validate()?;
        let n = config.num_params();
        if data.len() != n {
            return Err(Error::structural(format!(
                "expected {n} coefficients, got {}",
                data.len()
            )));
        }
        Ok(Self { config, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.config != other.config || self.data.len() != other.data.len() {
            return Err(Error::structural(format!(
                "parameter shapes differ: {:?} vs {:?}",
                self.config, other.config
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn block_weight(&self, l: usize) -> ArrayView2<'_, T> {
        let bl = self.config.layout().blocks[l];
        view2(&self.data, bl.w, bl.fan_in, self.config.hidden)
    }

    pub fn block_vec(&self, l: usize, which: BlockVec) -> ArrayView1<'_, T> {
        let bl = self.config.layout().blocks[l];
        let start = which.start(&bl);
        ArrayView1::from(&self.data[start..start + self.config.hidden])
    }

    pub fn out_weight(&self) -> ArrayView2<'_, T> {
        let lay = self.config.layout();
        view2(&self.data, lay.out_w, lay.out_fan_in, self.config.data_dim)
    }

    pub fn out_bias(&self) -> ArrayView1<'_, T> {
        let lay = self.config.layout();
        ArrayView1::from(&self.data[lay.out_b..lay.out_b + self.config.data_dim])
    }

    pub fn block_weight_mut(&mut self, l: usize) -> ArrayViewMut2<'_, T> {
        let bl = self.config.layout().blocks[l];
        let h = self.config.hidden;
        view2_mut(&mut self.data, bl.w, bl.fan_in, h)
    }

    pub fn block_vec_mut(&mut self, l: usize, which: BlockVec) -> ArrayViewMut1<'_, T> {
        let bl = self.config.layout().blocks[l];
        let start = which.start(&bl);
        let h = self.config.hidden;
        ArrayViewMut1::from(&mut self.data[start..start + h])
    }

    pub fn out_weight_mut(&mut self) -> ArrayViewMut2<'_, T> {
        let lay = self.config.layout();
        let d = self.config.data_dim;
        view2_mut(&mut self.data, lay.out_w, lay.out_fan_in, d)
    }

    pub fn out_bias_mut(&mut self) -> ArrayViewMut1<'_, T> {
        let lay = self.config.layout();
        let d = self.config.data_dim;
        ArrayViewMut1::from(&mut self.data[lay.out_b..lay.out_b + d])
    }

    /// Converts the coefficients to another scalar type.
    pub fn cast<U: Scalar>(&self) -> MlpParams<U> {
        MlpParams {
            config: self.config,
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockVec {
    Bias,
    Gain,
    Offset,
}

impl BlockVec {
    fn start(self, bl: &BlockLayout) -> usize {
        match self {
            BlockVec::Bias => bl.b,
            BlockVec::Gain => bl.gain,
            BlockVec::Offset => bl.offset,
        }
    }
}

fn view2<T>(data: &[T], start: usize, rows: usize, cols: usize) -> ArrayView2<'_, T> {
    ArrayView2::from_shape((rows, cols), &data[start..start + rows * cols]).expect("layout slice matches shape")
}

fn view2_mut<T>(data: &mut [T], start: usize, rows: usize, cols: usize) -> ArrayViewMut2<'_, T> {
    ArrayViewMut2::from_shape((rows, cols), &mut data[start..start + rows * cols]).expect("layout slice matches shape")
}
