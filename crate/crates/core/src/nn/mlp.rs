use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};

use super::embed::{embed_with, ladder_frequencies};
use super::{BlockVec, MlpGrads, MlpParams, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};

/// Activations retained by [`forward_batch`] for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    input: Array2<T>,
    blocks: Vec<BlockCache<T>>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    xhat: Array2<T>,
    inv_std: Vec<T>,
    pre_act: Array2<T>,
    /// sigmoid(pre_act), reused by the SiLU derivative.
    sig: Array2<T>,
    act: Array2<T>,
}

impl<T> ForwardCache<T> {
    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }
}

fn build_input<T: Scalar>(params: &MlpParams<T>, x: ArrayView2<'_, T>, t: &[T]) -> Result<Array2<T>> {
    let c = &params.config;
    let b = x.nrows();
    if x.ncols() != c.data_dim {
        return Err(Error::structural(format!(
            "input has {} columns, network expects {}",
            x.ncols(),
            c.data_dim
        )));
    }
    if t.len() != b && t.len() != 1 {
        return Err(Error::structural(format!("{} time values for a batch of {b}", t.len())));
    }
    if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Evaluation {
            step: 0,
            what: format!("non-finite network input at flat index {pos}"),
        });
    }
    let mut input = Array2::zeros((b, c.input_dim()));
    input.slice_mut(s![.., ..c.data_dim]).assign(&x);
    if c.embed_dim > 0 {
        let freqs = ladder_frequencies::<T>(c.embed_dim)?;
        let mut shared = vec![T::zero(); c.embed_dim];
        if t.len() == 1 {
            embed_with(t[0], &freqs, &mut shared);
        }
        for (r, mut row) in input.axis_iter_mut(Axis(0)).enumerate() {
            let emb = row.slice_mut(s![c.data_dim..]);
            let slot = emb.into_slice().expect("row-major input");
            if t.len() == 1 {
                slot.copy_from_slice(&shared);
            } else {
                embed_with(t[r], &freqs, slot);
            }
        }
    }
    Ok(input)
}

fn add_bias<T: Scalar>(m: &mut Array2<T>, bias: ndarray::ArrayView1<'_, T>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        row += &bias;
    }
}

fn run<T: Scalar>(
    params: &MlpParams<T>,
    x: ArrayView2<'_, T>,
    t: &[T],
    keep: bool,
) -> Result<(Array2<T>, Option<ForwardCache<T>>)> {
    let c = params.config;
    let input = build_input(params, x, t)?;
    let b = input.nrows();
    let h = c.hidden;
    let eps = T::of(LAYER_NORM_EPS);
    let inv_h = T::one() / T::of(h as f64);

    let mut blocks = Vec::with_capacity(if keep { c.depth } else { 0 });
    let mut cur = input.clone();
    for l in 0..c.depth {
        let mut z = Array2::zeros((b, h));
        general_mat_mul(T::one(), &cur, &params.block_weight(l), T::zero(), &mut z);
        add_bias(&mut z, params.block_vec(l, BlockVec::Bias));
        let gain = params.block_vec(l, BlockVec::Gain);
        let offset = params.block_vec(l, BlockVec::Offset);
        let gain = gain.as_slice().expect("contiguous");
        let offset = offset.as_slice().expect("contiguous");

        let mut inv_std = vec![T::zero(); b];
        let cached = if keep { (b, h) } else { (0, 0) };
        let mut pre_act = Array2::zeros(cached);
        let mut sig = Array2::zeros(cached);
        let mut act = Array2::zeros((b, h));
        for r in 0..b {
            let mut zr = z.row_mut(r);
            let zr = zr.as_slice_mut().expect("contiguous");
            let mean = zr.iter().copied().sum::<T>() * inv_h;
            let var = zr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_h;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            let mut ar = act.row_mut(r);
            let ar = ar.as_slice_mut().expect("contiguous");
            for j in 0..h {
                // z is overwritten with the normalized value.
                let xh = (zr[j] - mean) * inv;
                zr[j] = xh;
                ar[j] = gain[j] * xh + offset[j];
            }
            if keep {
                let mut yr = pre_act.row_mut(r);
                let yr = yr.as_slice_mut().expect("contiguous");
                let mut sr = sig.row_mut(r);
                let sr = sr.as_slice_mut().expect("contiguous");
                for j in 0..h {
                    let y = ar[j];
                    let s = sigmoid(y);
                    yr[j] = y;
                    sr[j] = s;
                    ar[j] = y * s;
                }
            } else {
                for a in ar.iter_mut() {
                    *a = *a * sigmoid(*a);
                }
            }
        }
        if keep {
            blocks.push(BlockCache {
                xhat: z,
                inv_std,
                pre_act,
                sig,
                act: act.clone(),
            });
        }
        cur = act;
    }

    let mut out = Array2::zeros((b, c.data_dim));
    general_mat_mul(T::one(), &cur, &params.out_weight(), T::zero(), &mut out);
    add_bias(&mut out, params.out_bias());
    if let Some(pos) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::Evaluation {
            step: 0,
            what: format!("non-finite network output at flat index {pos}"),
        });
    }
    let cache = keep.then_some(ForwardCache { input, blocks });
    Ok((out, cache))
}

/// Batched forward pass. `t` holds one time value per row, or a single value
/// shared by every row. Returns outputs and the activation cache.
pub fn forward_batch<T: Scalar>(
    params: &MlpParams<T>,
    x: ArrayView2<'_, T>,
    t: &[T],
) -> Result<(Array2<T>, ForwardCache<T>)> {
    let (out, cache) = run(params, x, t, true)?;
    Ok((out, cache.expect("cache requested")))
}

/// Batched forward pass without retaining activations.
pub fn predict_batch<T: Scalar>(params: &MlpParams<T>, x: ArrayView2<'_, T>, t: &[T]) -> Result<Array2<T>> {
    Ok(run(params, x, t, false)?.0)
}

/// Single-vector forward pass.
pub fn forward<T: Scalar>(params: &MlpParams<T>, a_in: &[T], t: T) -> Result<(Vec<T>, ForwardCache<T>)> {
    let x = ArrayView2::from_shape((1, a_in.len()), a_in).map_err(|e| Error::structural(e.to_string()))?;
    let (out, cache) = forward_batch(params, x, &[t])?;
    Ok((out.into_raw_vec_and_offset().0, cache))
}

/// Gradient of `Σ_rows out_grad · output` with respect to every parameter.
pub fn backward<T: Scalar>(
    params: &MlpParams<T>,
    cache: &ForwardCache<T>,
    out_grad: ArrayView2<'_, T>,
) -> Result<MlpGrads<T>> {
    let c = params.config;
    let b = cache.batch_size();
    if out_grad.dim() != (b, c.data_dim) || cache.blocks.len() != c.depth {
        return Err(Error::structural(format!(
            "out_grad shape {:?} does not match batch {b} × {}",
            out_grad.dim(),
            c.data_dim
        )));
    }
    let h = c.hidden;
    let inv_h = T::one() / T::of(h.max(1) as f64);
    let mut grads = MlpGrads::zeros(c);

    let last = match cache.blocks.last() {
        Some(bc) => bc.act.view(),
        None => cache.input.view(),
    };
    general_mat_mul(T::one(), &last.t(), &out_grad, T::zero(), &mut grads.out_weight_mut());
    grads.out_bias_mut().assign(&out_grad.sum_axis(Axis(0)));

    let mut d_act = Array2::zeros((b, c.last_width()));
    general_mat_mul(T::one(), &out_grad, &params.out_weight().t(), T::zero(), &mut d_act);

    for l in (0..c.depth).rev() {
        let bc = &cache.blocks[l];
        let gain = params.block_vec(l, BlockVec::Gain);
        let gain = gain.as_slice().expect("contiguous");
        let mut d_gain = vec![T::zero(); h];
        let mut d_offset = vec![T::zero(); h];
        // d_act becomes dL/dz (pre-normalization) row by row.
        let mut dxhat = vec![T::zero(); h];
        for r in 0..b {
            let y = bc.pre_act.row(r);
            let y = y.as_slice().expect("contiguous");
            let sg = bc.sig.row(r);
            let sg = sg.as_slice().expect("contiguous");
            let xh = bc.xhat.row(r);
            let xh = xh.as_slice().expect("contiguous");
            let mut da = d_act.row_mut(r);
            let da = da.as_slice_mut().expect("contiguous");
            let mut sum_dx = T::zero();
            let mut sum_dx_xh = T::zero();
            for j in 0..h {
                let s = sg[j];
                let dy = da[j] * (s + y[j] * s * (T::one() - s));
                d_gain[j] += dy * xh[j];
                d_offset[j] += dy;
                let dx = dy * gain[j];
                dxhat[j] = dx;
                sum_dx += dx;
                sum_dx_xh += dx * xh[j];
            }
            let inv = bc.inv_std[r];
            for j in 0..h {
                da[j] = inv * (dxhat[j] - inv_h * sum_dx - xh[j] * inv_h * sum_dx_xh);
            }
        }
        grads
            .block_vec_mut(l, BlockVec::Gain)
            .as_slice_mut()
            .expect("contiguous")
            .copy_from_slice(&d_gain);
        grads
            .block_vec_mut(l, BlockVec::Offset)
            .as_slice_mut()
            .expect("contiguous")
            .copy_from_slice(&d_offset);
        grads.block_vec_mut(l, BlockVec::Bias).assign(&d_act.sum_axis(Axis(0)));
        let input = if l == 0 {
            cache.input.view()
        } else {
            cache.blocks[l - 1].act.view()
        };
        general_mat_mul(T::one(), &input.t(), &d_act, T::zero(), &mut grads.block_weight_mut(l));
        if l > 0 {
            let mut d_prev = Array2::zeros((b, h));
            general_mat_mul(T::one(), &d_act, &params.block_weight(l).t(), T::zero(), &mut d_prev);
            d_act = d_prev;
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpConfig;
    use crate::rng::rng_from_seed;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let c = MlpConfig::new(2, 4, 8, 3).unwrap();
        let p = MlpParams::<f64>::zeros(c);
        let (out, _) = forward(&p, &[0.3, -1.2], 0.7).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn one_block_hand_evaluation() {
        // No time embedding, one block of width 2 with identity weights,
        // LayerNorm gain 1 / offset 0, identity output layer.
        let c = MlpConfig::new(2, 0, 2, 1).unwrap();
        let mut p = MlpParams::<f64>::zeros(c);
        p.block_weight_mut(0).assign(&array![[1.0, 0.0], [0.0, 1.0]]);
        p.block_vec_mut(0, BlockVec::Gain).fill(1.0);
        p.out_weight_mut().assign(&array![[1.0, 0.0], [0.0, 1.0]]);
        let (out, _) = forward(&p, &[1.0, -1.0], 0.0).unwrap();
        // Zero-mean input: LayerNorm divides by sqrt(1 + eps).
        let n = 1.0 / (1.0f64 + 1e-5).sqrt();
        let silu = |y: f64| y / (1.0 + (-y).exp());
        assert!((out[0] - silu(n)).abs() < 1e-15);
        assert!((out[1] - silu(-n)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_input_rejected() {
        let c = MlpConfig::new(2, 4, 4, 1).unwrap();
        let p = MlpParams::<f64>::zeros(c);
        assert!(matches!(
            forward(&p, &[f64::NAN, 0.0], 0.1),
            Err(Error::Evaluation { .. })
        ));
    }

    #[test]
    fn input_perturbation_is_first_order() {
        let c = MlpConfig::new(2, 8, 16, 2).unwrap();
        let mut rng = rng_from_seed(3);
        let p = MlpParams::<f64>::init(c, &mut rng);
        let a = [0.4, -0.9];
        let (y0, _) = forward(&p, &a, 0.3).unwrap();
        // Jacobian column for input 0 by central differences, then check a
        // small perturbation along it is predicted to second order.
        let h = 1e-5;
        let (yp, _) = forward(&p, &[a[0] + h, a[1]], 0.3).unwrap();
        let (ym, _) = forward(&p, &[a[0] - h, a[1]], 0.3).unwrap();
        let col: Vec<f64> = yp.iter().zip(&ym).map(|(p, m)| (p - m) / (2.0 * h)).collect();
        let delta = 1e-4;
        let (yd, _) = forward(&p, &[a[0] + delta, a[1]], 0.3).unwrap();
        for k in 0..2 {
            let pred = y0[k] + col[k] * delta;
            assert!((yd[k] - pred).abs() < 1e-7, "k={k}");
        }
    }

    #[test]
    fn zero_out_grad_gives_zero_gradient() {
        let c = MlpConfig::new(2, 4, 6, 2).unwrap();
        let p = MlpParams::<f64>::init(c, &mut rng_from_seed(5));
        let x = array![[0.1, 0.2], [0.3, -0.4]];
        let (_, cache) = forward_batch(&p, x.view(), &[0.5, 0.25]).unwrap();
        let g = backward(&p, &cache, Array2::zeros((2, 2)).view()).unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_is_linear_in_out_grad() {
        let c = MlpConfig::new(3, 4, 6, 2).unwrap();
        let mut rng = rng_from_seed(9);
        let p = MlpParams::<f64>::init(c, &mut rng);
        let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let (_, cache) = forward_batch(&p, x.view(), &[0.3]).unwrap();
        let g1 = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let g2 = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let a = backward(&p, &cache, g1.view()).unwrap();
        let b = backward(&p, &cache, g2.view()).unwrap();
        let ab = backward(&p, &cache, (&g1 + &g2).view()).unwrap();
        for i in 0..a.len() {
            assert!((a.data[i] + b.data[i] - ab.data[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_structural() {
        let c = MlpConfig::new(2, 4, 6, 1).unwrap();
        let p = MlpParams::<f64>::zeros(c);
        let (_, cache) = forward(&p, &[0.0, 1.0], 0.0).unwrap();
        assert!(matches!(
            backward(&p, &cache, Array2::zeros((1, 3)).view()),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn batch_and_single_agree() {
        let c = MlpConfig::new(2, 8, 16, 2).unwrap();
        let mut rng = rng_from_seed(13);
        let p = MlpParams::<f64>::init(c, &mut rng);
        let x = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
        let out = predict_batch(&p, x.view(), &[0.4]).unwrap();
        for r in 0..5 {
            let (o, _) = forward(&p, &[x[[r, 0]], x[[r, 1]]], 0.4).unwrap();
            assert!((o[0] - out[[r, 0]]).abs() < 1e-14);
            assert!((o[1] - out[[r, 1]]).abs() < 1e-14);
        }
    }
}
