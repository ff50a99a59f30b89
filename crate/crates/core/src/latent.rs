//! Latent quantization, the uniform-noise training relaxation, rate
//! estimation and lossless range coding of quantized latents.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{FactorizedPrior, ALPHABET_MAX};
use crate::error::{Error, Result};
use crate::rangecoder::{FreqTable, RangeDecoder, RangeEncoder};
use crate::tensor::Tensor;

/// Latent representation with quantization state.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    pub values: Tensor,
    pub quantized: bool,
}

impl LatentGrid {
    pub fn continuous(values: Tensor) -> Self {
        LatentGrid { values, quantized: false }
    }

    pub fn shape(&self) -> &[usize] {
        self.values.shape()
    }
}

/// Unit-bin scalar quantization: round half away from zero, clamp to the
/// coder alphabet.
pub fn quantize_unit(z: &Tensor) -> Tensor {
    let bound = ALPHABET_MAX as f64;
    z.map(|v| v.round().clamp(-bound, bound))
}

/// Midpoint reconstruction of unit bins: the identity embedding of the
/// integers into the reals.
pub fn dequantize(zbar: &Tensor) -> Tensor {
    zbar.clone()
}

/// Training relaxation: add i.i.d. uniform noise on (-1/2, 1/2).
pub fn relax(z: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
    let mut out = z.clone();
    for v in out.data_mut() {
        *v += rng.gen_range(-0.5..0.5);
    }
    out
}

fn symbols_of(zbar: &Tensor) -> Result<Vec<i64>> {
    zbar.data()
        .iter()
        .map(|&v| {
            let k = v.round() as i64;
            if (v - k as f64).abs() > 1e-9 || k.abs() > ALPHABET_MAX {
                Err(Error::Coder(format!("latent value {} outside integer alphabet", v)))
            } else {
                Ok(k)
            }
        })
        .collect()
}

fn plane(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        &[c, h, w] => Ok((c, h * w)),
        s => Err(Error::Dim(format!("latent must be [C,H,W], got {:?}", s))),
    }
}

/// Discrete rate estimate in bits: `sum -log2 p(zbar)` under the floored,
/// renormalized per-channel alphabet pmf (the same tables the coder uses).
pub fn estimate_rate_discrete(zbar: &Tensor, prior: &FactorizedPrior) -> Result<f64> {
    let (channels, per) = plane(zbar.shape())?;
    let syms = symbols_of(zbar)?;
    let mut bits = 0.0;
    for ch in 0..channels {
        let pmf = prior.pmf_table(ch);
        for &s in &syms[ch * per..(ch + 1) * per] {
            bits += -pmf[(s + ALPHABET_MAX) as usize].log2();
        }
    }
    Ok(bits)
}

/// Relaxed rate estimate in bits for noisy latents: CDF differences at
/// z +- 1/2 with the same probability floor as the discrete path.
pub fn estimate_rate_relaxed(znoisy: &Tensor, prior: &FactorizedPrior) -> Result<f64> {
    let (channels, per) = plane(znoisy.shape())?;
    let mut bits = 0.0;
    for ch in 0..channels {
        for &v in &znoisy.data()[ch * per..(ch + 1) * per] {
            let p = (prior.cdf(ch, v + 0.5) - prior.cdf(ch, v - 0.5)).max(crate::codec::PMF_FLOOR);
            bits += -p.log2();
        }
    }
    Ok(bits)
}

/// Entropy-encode a quantized latent into a latent-section payload.
/// Channels are coded in order under their own static pmfs.
pub fn entropy_encode(zbar: &Tensor, prior: &FactorizedPrior) -> Result<Vec<u8>> {
    let (channels, per) = plane(zbar.shape())?;
    let syms = symbols_of(zbar)?;
    let mut enc = RangeEncoder::new();
    for ch in 0..channels {
        let table = FreqTable::from_probabilities(&prior.pmf_table(ch))?;
        for &s in &syms[ch * per..(ch + 1) * per] {
            enc.encode(&table, (s + ALPHABET_MAX) as usize)?;
        }
    }
    Ok(enc.finish())
}

/// Decode a latent section. The prior must be the encoder's (same theta);
/// a mismatched prior yields wrong symbols without any built-in detection.
pub fn entropy_decode(payload: &[u8], prior: &FactorizedPrior, shape: &[usize]) -> Result<Tensor> {
    let (channels, per) = plane(shape)?;
    let mut dec = RangeDecoder::new(payload)?;
    let mut data = Vec::with_capacity(channels * per);
    for ch in 0..channels {
        let table = FreqTable::from_probabilities(&prior.pmf_table(ch))?;
        for _ in 0..per {
            data.push((dec.decode(&table)? as i64 - ALPHABET_MAX) as f64);
        }
    }
    Tensor::new(shape.to_vec(), data)
}
