use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Frequency of the `i`-th sin/cos pair: 10000^(−2i/dim).
#[inline]
pub fn ladder_frequency(i: usize, dim: usize) -> f64 {
    10000f64.powf(-2.0 * i as f64 / dim as f64)
}

/// Sinusoidal time embedding: `[sin(t·f_0) … sin(t·f_{h−1}), cos(t·f_0) … cos(t·f_{h−1})]`
/// with `h = dim / 2`.
pub fn sinusoidal_embed<T: Scalar>(t: T, dim: usize) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); dim];
    sinusoidal_embed_into(t, &mut out)?;
    Ok(out)
}

pub fn sinusoidal_embed_into<T: Scalar>(t: T, out: &mut [T]) -> Result<()> {
    let freqs = ladder_frequencies(out.len())?;
    embed_with(t, &freqs, out);
    Ok(())
}

/// The `dim / 2` ladder frequencies in the precision of `T`.
pub fn ladder_frequencies<T: Scalar>(dim: usize) -> Result<Vec<T>> {
    if dim % 2 != 0 {
        return Err(Error::config(format!("embedding dimension must be even, got {dim}")));
    }
    Ok((0..dim / 2).map(|i| T::of(ladder_frequency(i, dim))).collect())
}

/// Embedding with precomputed frequencies; `out.len() == 2 * freqs.len()`.
#[inline]
pub(crate) fn embed_with<T: Scalar>(t: T, freqs: &[T], out: &mut [T]) {
    let half = freqs.len();
    for (i, &f) in freqs.iter().enumerate() {
        let (s, c) = (t * f).sin_cos();
        out[i] = s;
        out[half + i] = c;
    }
}
