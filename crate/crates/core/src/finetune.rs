//! Training objectives and procedures: backbone training, encoder-only
//! fine-tuning, full-model fine-tuning with coded decoder updates, the
//! genie-aided bound, and the update-interval scheduler.
//!
//! The rate-distortion loss per sample is
//!     relaxed latent bits / (Nt*Nc)  +  lambda * ||H - Hhat||^2 / (Nt*Nc),
//! averaged over the batch. Full-model fine-tuning quantizes
//! `theta_bar = theta0 + Q_t(theta - theta0)` on the forward pass (identity
//! gradient), decodes and prices latents under the quantized parameters, and
//! adds `lambda_m` times the continuous update-rate surrogate.

use crate::adam::{adam_step, AdamState};
use crate::bitstream::{Bitstream, SECTION_LATENT, SECTION_MODEL_UPDATE};
use crate::channel::{CsiDataset, CsiSample};
use crate::checkpoint::Checkpoint;
use crate::codec::{
    self, decode_features, decode_features_on, encode_features, encode_features_on,
    latent_rate_bits_on, register_params, FactorizedPrior, ParamSet, TapeParams,
};
use crate::error::{Error, Result};
use crate::latent;
use crate::rng::seeded_rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::update::{
    self, SpikeSlabPrior, UpdatePrior, UpdateQuantizer, SURROGATE_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Backbone,
    EncoderOnly,
    FullModel,
    GenieAided,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::Backbone => "backbone",
            Mode::EncoderOnly => "encoder_only",
            Mode::FullModel => "full_model",
            Mode::GenieAided => "genie_aided",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: Mode,
    /// RD weight on the distortion term.
    pub lambda: f64,
    /// Weight on the model-update rate term; defaults to lambda.
    pub lambda_m: Option<f64>,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Update quantizer (full-model only).
    pub quantizer: UpdateQuantizer,
    /// Update coding prior (full-model only).
    pub update_prior: UpdatePrior,
    /// Early-stopping patience in epochs; 0 disables early stopping.
    pub patience: usize,
    /// Held-out fraction of the fine-tuning set used for early stopping.
    pub holdout_frac: f64,
    /// Cap on validation samples scored per epoch (keeps epochs cheap).
    pub val_cap: usize,
}

impl TrainConfig {
    pub fn backbone(lambda: f64, seed: u64) -> Self {
        TrainConfig {
            mode: Mode::Backbone,
            lambda,
            lambda_m: None,
            lr: 1e-3,
            batch: 32,
            epochs: 200,
            seed,
            quantizer: UpdateQuantizer::default(),
            update_prior: UpdatePrior::SpikeSlab(SpikeSlabPrior::default()),
            patience: 0,
            holdout_frac: 0.0,
            val_cap: 64,
        }
    }

    pub fn finetune(mode: Mode, lambda: f64, seed: u64) -> Self {
        TrainConfig {
            mode,
            lambda,
            lambda_m: None,
            lr: 1e-4,
            batch: 32,
            epochs: 1000,
            seed,
            quantizer: UpdateQuantizer::default(),
            update_prior: UpdatePrior::SpikeSlab(SpikeSlabPrior::default()),
            patience: 100,
            holdout_frac: 0.2,
            val_cap: 64,
        }
    }

    pub fn lambda_m(&self) -> f64 {
        self.lambda_m.unwrap_or(self.lambda)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.batch < 1 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..0.9).contains(&self.holdout_frac) {
            return Err(Error::Config("holdout fraction must be in [0, 0.9)".into()));
        }
        Ok(())
    }
}

/// One rate-distortion measurement, rates in bits per CSI element.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RdPoint {
    pub rate_total: f64,
    pub rate_latent: f64,
    pub rate_update: f64,
    pub nmse_db: f64,
}

/// Squared-error ratio of one sample.
pub fn nmse_ratio(h: &Tensor, hhat: &Tensor) -> f64 {
    let num: f64 = h.data().iter().zip(hhat.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = h.data().iter().map(|a| a * a).sum();
    num / den
}

pub fn nmse_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

#[derive(Debug, Clone, Copy)]
pub struct LossEval {
    pub loss: f64,
    pub rate_bits_norm: f64,
    pub mse_norm: f64,
    pub update_bits_norm: f64,
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

// ── Graph builders ───────────────────────────────────────────────────

/// theta_bar nodes = theta0 + Q_t(theta - theta0), with identity backward.
/// `identity` swaps the quantizer for the identity map (the differentiable
/// surrogate the STE gradients follow).
fn theta_bar_nodes(
    tape: &mut Tape,
    theta: &TapeParams,
    theta0: &ParamSet,
    q: &UpdateQuantizer,
    identity: bool,
) -> Result<TapeParams> {
    let mut ids = Vec::with_capacity(theta.ids.len());
    for (i, t0) in theta0.tensors().iter().enumerate() {
        let t0_node = tape.leaf(t0.clone(), false);
        let delta = tape.sub(theta.ids[i], t0_node)?;
        let dq = if identity { delta } else { tape.ste_quantize(delta, q.t, q.k_max()) };
        ids.push(tape.add(dq, t0_node)?);
    }
    Ok(TapeParams { ids })
}

/// Continuous update-rate surrogate in bits, on tape:
/// `sum -log2 clamp(p(delta) * t, floor, 1)` over all decoder parameters.
fn update_rate_surrogate_on(
    tape: &mut Tape,
    theta: &TapeParams,
    theta0: &ParamSet,
    prior: &SpikeSlabPrior,
    q: &UpdateQuantizer,
) -> Result<NodeId> {
    let slab_peak = 1.0 / (prior.sigma * (2.0 * std::f64::consts::PI).sqrt());
    let spike_std = prior.spike_std();
    let spike_peak = 1.0 / (spike_std * (2.0 * std::f64::consts::PI).sqrt());
    let mut total: Option<NodeId> = None;
    for (i, t0) in theta0.tensors().iter().enumerate() {
        let t0_node = tape.leaf(t0.clone(), false);
        let delta = tape.sub(theta.ids[i], t0_node)?;
        let sq = tape.mul(delta, delta)?;
        let slab_e = tape.scale(sq, -0.5 / (prior.sigma * prior.sigma));
        let slab = tape.exp(slab_e);
        let slab = tape.scale(slab, slab_peak);
        let spike_e = tape.scale(sq, -0.5 / (spike_std * spike_std));
        let spike = tape.exp(spike_e);
        let spike = tape.scale(spike, spike_peak * prior.alpha);
        let mix = tape.add(slab, spike)?;
        let p = tape.scale(mix, 1.0 / (1.0 + prior.alpha));
        let pt = tape.scale(p, q.t);
        let lo = tape.lower_bound(pt, SURROGATE_FLOOR);
        let cl = tape.upper_bound(lo, 1.0);
        let lnp = tape.ln(cl);
        let s = tape.sum_all(lnp);
        let bits = tape.scale(s, -1.0 / std::f64::consts::LN_2);
        total = Some(match total {
            Some(t) => tape.add(t, bits)?,
            None => bits,
        });
    }
    total.ok_or_else(|| Error::Dim("empty parameter set".into()))
}

struct SampleGraph {
    loss: NodeId,
    rate_norm: NodeId,
    mse_norm: NodeId,
}

/// Per-sample RD graph: relaxed latent rate plus weighted distortion, both
/// normalized per CSI element.
fn build_rd_sample(
    tape: &mut Tape,
    h: &Tensor,
    noise: &Tensor,
    enc: &TapeParams,
    dec: &TapeParams,
    lambda: f64,
) -> Result<SampleGraph> {
    let csi_elems = (h.shape()[1] * h.shape()[2]) as f64;
    let hn = tape.leaf(h.clone(), false);
    let z = encode_features_on(tape, hn, enc)?;
    let noise_node = tape.leaf(noise.clone(), false);
    let z_noisy = tape.add(z, noise_node)?;
    let rate_bits = latent_rate_bits_on(tape, z_noisy, dec)?;
    let rate_norm = tape.scale(rate_bits, 1.0 / csi_elems);
    let hhat = decode_features_on(tape, z_noisy, dec)?;
    let err = tape.sub(hhat, hn)?;
    let sq = tape.mul(err, err)?;
    let sse = tape.sum_all(sq);
    let mse_norm = tape.scale(sse, 1.0 / csi_elems);
    let weighted = tape.scale(mse_norm, lambda);
    let loss = tape.add(rate_norm, weighted)?;
    Ok(SampleGraph { loss, rate_norm, mse_norm })
}

fn latent_noise(shape: &[usize], seed: u64, idx: u64) -> Tensor {
    let mut rng = seeded_rng(seed, "latent-noise", idx);
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rand::Rng::gen_range(&mut rng, -0.5..0.5);
    }
    t
}

fn latent_shape_for(h: &Tensor) -> Vec<usize> {
    vec![codec::LATENT_CHANNELS, h.shape()[1] / 4, h.shape()[2] / 4]
}

// ── Loss evaluation (value only) ─────────────────────────────────────

/// Mean RD loss of a batch with fixed relaxation noise; the finite-difference
/// oracle in the tests differentiates this function directly.
pub fn loss_rd_value(
    batch: &[&Tensor],
    enc: &ParamSet,
    dec: &ParamSet,
    lambda: f64,
    noise_seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    for (i, h) in batch.iter().enumerate() {
        let mut tape = Tape::new();
        let ep = register_params(&mut tape, enc, false);
        let dp = register_params(&mut tape, dec, false);
        let noise = latent_noise(&latent_shape_for(h), noise_seed, i as u64);
        let g = build_rd_sample(&mut tape, h, &noise, &ep, &dp, lambda)?;
        total += tape.value(g.loss).item();
    }
    Ok(total / batch.len() as f64)
}

/// RDM loss value. `ste_identity` replaces the quantizer with the identity
/// map, which is the differentiable function the STE gradients follow.
#[allow(clippy::too_many_arguments)]
pub fn loss_rdm_value(
    batch: &[&Tensor],
    enc: &ParamSet,
    dec: &ParamSet,
    dec0: &ParamSet,
    cfg: &TrainConfig,
    noise_seed: u64,
    ste_identity: bool,
) -> Result<f64> {
    let spike = match &cfg.update_prior {
        UpdatePrior::SpikeSlab(p) => Some(*p),
        UpdatePrior::Uniform => None,
    };
    let csi_elems = (batch[0].shape()[1] * batch[0].shape()[2]) as f64;
    let mut total = 0.0;
    for (i, h) in batch.iter().enumerate() {
        let mut tape = Tape::new();
        let ep = register_params(&mut tape, enc, false);
        let dp = register_params(&mut tape, dec, false);
        let dbar = theta_bar_nodes(&mut tape, &dp, dec0, &cfg.quantizer, ste_identity)?;
        let noise = latent_noise(&latent_shape_for(h), noise_seed, i as u64);
        let g = build_rd_sample(&mut tape, h, &noise, &ep, &dbar, cfg.lambda)?;
        total += tape.value(g.loss).item();
    }
    let mut loss = total / batch.len() as f64;
    if let Some(p) = spike {
        let flat_theta = dec.flatten();
        let flat_theta0 = dec0.flatten();
        let delta: Vec<f64> = flat_theta.iter().zip(&flat_theta0).map(|(a, b)| a - b).collect();
        let m_bits = update::update_rate_continuous(&delta, &p, &cfg.quantizer);
        loss += cfg.lambda_m() * m_bits / csi_elems;
    } else {
        // uniform prior: constant surrogate, no shrinkage force
        let m_bits = dec.n_scalars() as f64 * (cfg.quantizer.grid_len() as f64).log2();
        loss += cfg.lambda_m() * m_bits / csi_elems;
    }
    Ok(loss)
}

// ── Gradient steps ───────────────────────────────────────────────────

fn zero_grads_like(params: &ParamSet) -> Vec<Tensor> {
    params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect()
}

fn accumulate_scaled(dst: &mut [Tensor], src: &[&Tensor], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        for (dv, sv) in d.data_mut().iter_mut().zip(s.data()) {
            *dv += scale * sv;
        }
    }
}

/// Gradients of the batch loss for the active mode. Returns the loss
/// breakdown plus encoder and decoder gradients in canonical order
/// (decoder gradients are zeros for encoder-only mode).
#[allow(clippy::too_many_arguments)]
fn batch_grads(
    batch: &[&Tensor],
    enc: &ParamSet,
    dec: &ParamSet,
    dec0: Option<&ParamSet>,
    cfg: &TrainConfig,
    noise_seed: u64,
) -> Result<(LossEval, Vec<Tensor>, Vec<Tensor>)> {
    batch_grads_inner(batch, enc, dec, dec0, cfg, noise_seed, false)
}

#[allow(clippy::too_many_arguments)]
fn batch_grads_inner(
    batch: &[&Tensor],
    enc: &ParamSet,
    dec: &ParamSet,
    dec0: Option<&ParamSet>,
    cfg: &TrainConfig,
    noise_seed: u64,
    ste_identity: bool,
) -> Result<(LossEval, Vec<Tensor>, Vec<Tensor>)> {
    let train_dec = matches!(cfg.mode, Mode::Backbone | Mode::FullModel | Mode::GenieAided);
    let quantized = matches!(cfg.mode, Mode::FullModel);
    let csi_elems = (batch[0].shape()[1] * batch[0].shape()[2]) as f64;
    let inv_b = 1.0 / batch.len() as f64;

    let mut enc_grads = zero_grads_like(enc);
    let mut dec_grads = zero_grads_like(dec);
    let mut loss_sum = 0.0;
    let mut rate_sum = 0.0;
    let mut mse_sum = 0.0;

    for (i, h) in batch.iter().enumerate() {
        let mut tape = Tape::new();
        let ep = register_params(&mut tape, enc, true);
        let dp = register_params(&mut tape, dec, train_dec);
        let dec_nodes = if quantized {
            theta_bar_nodes(
                &mut tape,
                &dp,
                dec0.expect("theta0 for full-model"),
                &cfg.quantizer,
                ste_identity,
            )?
        } else {
            dp.clone()
        };
        let noise = latent_noise(&latent_shape_for(h), noise_seed, i as u64);
        let g = build_rd_sample(&mut tape, h, &noise, &ep, &dec_nodes, cfg.lambda)?;
        loss_sum += tape.value(g.loss).item();
        rate_sum += tape.value(g.rate_norm).item();
        mse_sum += tape.value(g.mse_norm).item();

        let grads = tape.backward(g.loss)?;
        let eg: Vec<&Tensor> = ep.ids.iter().map(|id| grads.get(*id).unwrap()).collect();
        accumulate_scaled(&mut enc_grads, &eg, inv_b);
        if train_dec {
            let dg: Vec<&Tensor> = dp.ids.iter().map(|id| grads.get(*id).unwrap()).collect();
            accumulate_scaled(&mut dec_grads, &dg, inv_b);
        }
    }

    let mut update_bits_norm = 0.0;
    if quantized {
        let dec0 = dec0.expect("theta0 for full-model");
        match &cfg.update_prior {
            UpdatePrior::SpikeSlab(p) => {
                let mut tape = Tape::new();
                let dp = register_params(&mut tape, dec, true);
                let m_bits = update_rate_surrogate_on(&mut tape, &dp, dec0, p, &cfg.quantizer)?;
                let m_norm = tape.scale(m_bits, cfg.lambda_m() / csi_elems);
                update_bits_norm = tape.value(m_bits).item() / csi_elems;
                let grads = tape.backward(m_norm)?;
                let dg: Vec<&Tensor> = dp.ids.iter().map(|id| grads.get(*id).unwrap()).collect();
                accumulate_scaled(&mut dec_grads, &dg, 1.0);
            }
            UpdatePrior::Uniform => {
                // constant surrogate: contributes to the loss, not the grads
                update_bits_norm =
                    dec.n_scalars() as f64 * (cfg.quantizer.grid_len() as f64).log2() / csi_elems;
            }
        }
    }

    let loss = loss_sum * inv_b + cfg.lambda_m() * update_bits_norm * if quantized { 1.0 } else { 0.0 };
    let eval = LossEval {
        loss,
        rate_bits_norm: rate_sum * inv_b,
        mse_norm: mse_sum * inv_b,
        update_bits_norm,
    };
    if !eval.loss.is_finite() {
        return Err(Error::Divergence(format!("non-finite training loss {}", eval.loss)));
    }
    Ok((eval, enc_grads, dec_grads))
}

/// Public wrapper for the gradient path of the plain RD loss (used by the
/// gradient-correctness suite).
pub fn loss_rd_grads(
    batch: &[&Tensor],
    enc: &ParamSet,
    dec: &ParamSet,
    lambda: f64,
    seed: u64,
) -> Result<(LossEval, Vec<Tensor>, Vec<Tensor>)> {
    let cfg = TrainConfig { lambda, ..TrainConfig::backbone(lambda, seed) };
    batch_grads(batch, enc, dec, None, &cfg, seed)
}

/// Gradient path of the RDM loss (full-model mode).
pub fn loss_rdm_grads(
    batch: &[&Tensor],
    enc: &ParamSet,
    dec: &ParamSet,
    dec0: &ParamSet,
    cfg: &TrainConfig,
    noise_seed: u64,
) -> Result<(LossEval, Vec<Tensor>, Vec<Tensor>)> {
    batch_grads(batch, enc, dec, Some(dec0), cfg, noise_seed)
}

/// RDM gradients with the quantizer swapped for the identity map. The STE
/// contract says the real path's gradients equal these whenever the two
/// forward passes coincide (delta on the quantizer grid); the swap-and-
/// compare oracle in the acceptance suite checks exactly that.
pub fn loss_rdm_grads_identity(
    batch: &[&Tensor],
    enc: &ParamSet,
    dec: &ParamSet,
    dec0: &ParamSet,
    cfg: &TrainConfig,
    noise_seed: u64,
) -> Result<(LossEval, Vec<Tensor>, Vec<Tensor>)> {
    batch_grads_inner(batch, enc, dec, Some(dec0), cfg, noise_seed, true)
}

/// Deterministic relaxation noise for one batch entry, shared by the loss
/// builders and the independent finite-difference oracles in the tests.
pub fn relaxation_noise(shape: &[usize], seed: u64, idx: u64) -> Tensor {
    latent_noise(shape, seed, idx)
}

// ── Validation metric (discrete path) ────────────────────────────────

fn discrete_objective(
    samples: &[&CsiSample],
    enc: &ParamSet,
    dec_eff: &ParamSet,
    lambda: f64,
    update_bits_norm: f64,
    lambda_m: f64,
) -> Result<f64> {
    let prior = FactorizedPrior::from_params(dec_eff)?;
    let mut total = 0.0;
    for s in samples {
        let csi_elems = (s.h.shape()[1] * s.h.shape()[2]) as f64;
        let z = encode_features(&s.h, enc)?;
        let zbar = latent::quantize_unit(&z);
        let rate = latent::estimate_rate_discrete(&zbar, &prior)?;
        let hhat = decode_features(&latent::dequantize(&zbar), dec_eff)?;
        let sse: f64 = s.h.data().iter().zip(hhat.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        total += rate / csi_elems + lambda * sse / csi_elems;
    }
    Ok(total / samples.len() as f64 + lambda_m * update_bits_norm)
}

// ── Coded evaluation ─────────────────────────────────────────────────

/// Result of running one fine-tuning session (or a no-fine-tuning
/// evaluation) over an evaluation slice, with real coded bitstreams.
#[derive(Debug, Clone)]
pub struct SessionResult {
    pub mode: Option<Mode>,
    pub encoder: ParamSet,
    /// Decoder-side parameters (theta_bar for full-model sessions).
    pub decoder: ParamSet,
    pub bitstream: Bitstream,
    pub per_sample: Vec<RdPoint>,
    pub aggregate: RdPoint,
    pub nonzero_updates: usize,
    pub epochs_run: usize,
    pub history: Vec<EpochStats>,
}

/// Encode and reconstruct every evaluation sample with real entropy coding;
/// amortize `update_payload` (if any) across the evaluated samples.
fn evaluate_coded(
    enc: &ParamSet,
    dec_eff: &ParamSet,
    eval: &[CsiSample],
    update_payload: Option<Vec<u8>>,
) -> Result<(Bitstream, Vec<RdPoint>, RdPoint)> {
    if eval.is_empty() {
        return Err(Error::Config("evaluation slice is empty".into()));
    }
    let prior = FactorizedPrior::from_params(dec_eff)?;
    let mut bs = Bitstream::new();
    let update_bits = update_payload.as_ref().map(|p| 8.0 * p.len() as f64).unwrap_or(0.0);
    if let Some(p) = update_payload {
        bs.push(SECTION_MODEL_UPDATE, p)?;
    }

    let csi_elems = (eval[0].h.shape()[1] * eval[0].h.shape()[2]) as f64;
    let rate_update = update_bits / (eval.len() as f64 * csi_elems);
    let mut per_sample = Vec::with_capacity(eval.len());
    let mut ratio_sum = 0.0;
    let mut latent_sum = 0.0;
    for s in eval {
        let z = encode_features(&s.h, enc)?;
        let zbar = latent::quantize_unit(&z);
        let payload = latent::entropy_encode(&zbar, &prior)?;
        let rate_latent = 8.0 * payload.len() as f64 / csi_elems;
        bs.push(SECTION_LATENT, payload)?;
        let hhat = decode_features(&latent::dequantize(&zbar), dec_eff)?;
        let ratio = nmse_ratio(&s.h, &hhat);
        ratio_sum += ratio;
        latent_sum += rate_latent;
        per_sample.push(RdPoint {
            rate_total: rate_latent + rate_update,
            rate_latent,
            rate_update,
            nmse_db: nmse_db(ratio),
        });
    }
    let rate_latent = latent_sum / eval.len() as f64;
    let aggregate = RdPoint {
        rate_total: rate_latent + rate_update,
        rate_latent,
        rate_update,
        nmse_db: nmse_db(ratio_sum / eval.len() as f64),
    };
    Ok((bs, per_sample, aggregate))
}

/// Standalone decoder path: rebuild decoder parameters from
/// `(theta0, bitstream)` and reconstruct every latent section.
/// This is the receiver side of the protocol; it shares no state with the
/// encoder beyond the checkpoint and the coding configuration.
pub fn decode_session(
    bitstream: &Bitstream,
    theta0: &ParamSet,
    q: &UpdateQuantizer,
    update_prior: &UpdatePrior,
    latent_shape: &[usize],
) -> Result<(ParamSet, Vec<Tensor>)> {
    let mut theta = theta0.clone();
    let updates: Vec<_> = bitstream.sections_with_id(SECTION_MODEL_UPDATE).collect();
    if updates.len() > 1 {
        return Err(Error::Coder(format!("{} model-update sections", updates.len())));
    }
    if let Some(section) = updates.first() {
        let delta = update::decode_update(&section.payload, update_prior, q, theta0.n_scalars())?;
        let mut flat = theta0.flatten();
        for (f, d) in flat.iter_mut().zip(&delta) {
            *f += d;
        }
        theta.assign_flat(&flat)?;
    }
    let prior = FactorizedPrior::from_params(&theta)?;
    let mut reconstructions = Vec::new();
    for section in bitstream.sections_with_id(SECTION_LATENT) {
        let zbar = latent::entropy_decode(&section.payload, &prior, latent_shape)?;
        reconstructions.push(decode_features(&latent::dequantize(&zbar), &theta)?);
    }
    Ok((theta, reconstructions))
}

// ── Training procedures ──────────────────────────────────────────────

pub struct TrainOutcome {
    /// Best-validation checkpoint (returned as the trained model).
    pub best: Checkpoint,
    /// Final-epoch state (the resume point).
    pub last: Checkpoint,
    pub history: Vec<EpochStats>,
}

fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(seed, "shuffle", epoch);
    for i in (1..n).rev() {
        let j = rand::Rng::gen_range(&mut rng, 0..=i);
        order.swap(i, j);
    }
    order.chunks(batch).map(|c| c.to_vec()).collect()
}

/// Train the backbone codec with the RD loss. Deterministic in
/// `(data, config, seed)`; pass `resume` to continue a previous run
/// bit-identically.
pub fn train_backbone(
    train: &CsiDataset,
    val: &CsiDataset,
    cfg: &TrainConfig,
    resume: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.mode != Mode::Backbone {
        return Err(Error::Config(format!("train_backbone called with mode {}", cfg.mode)));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("backbone training needs non-empty train and val sets".into()));
    }

    let (mut enc, mut dec, mut enc_adam, mut dec_adam, start_epoch) = match resume {
        Some(ck) => (
            ck.encoder.clone(),
            ck.decoder.clone(),
            ck.enc_adam.clone().unwrap_or_else(|| AdamState::new(ck.encoder.tensors())),
            ck.dec_adam.clone().unwrap_or_else(|| AdamState::new(ck.decoder.tensors())),
            ck.epoch as usize,
        ),
        None => {
            let (enc, dec) = codec::init(cfg.seed);
            let ea = AdamState::new(enc.tensors());
            let da = AdamState::new(dec.tensors());
            (enc, dec, ea, da, 0)
        }
    };

    let val_slice: Vec<&CsiSample> = val.samples.iter().take(cfg.val_cap.max(1)).collect();
    let mut best_metric = f64::INFINITY;
    let mut best = (enc.clone(), dec.clone(), start_epoch);
    let mut history = Vec::new();

    for epoch in start_epoch..cfg.epochs {
        let mut epoch_loss = 0.0;
        let batches = epoch_batches(train.len(), cfg.batch, cfg.seed, epoch as u64);
        let n_batches = batches.len();
        for (bi, idxs) in batches.into_iter().enumerate() {
            let batch: Vec<&Tensor> = idxs.iter().map(|&i| &train.samples[i].h).collect();
            let noise_seed =
                crate::rng::derive_seed(cfg.seed, "epoch-noise", (epoch as u64) << 20 | bi as u64);
            let (eval, eg, dg) = batch_grads(&batch, &enc, &dec, None, cfg, noise_seed)?;
            epoch_loss += eval.loss / n_batches as f64;
            adam_step(enc.tensors_mut(), &eg, &mut enc_adam, cfg.lr)?;
            adam_step(dec.tensors_mut(), &dg, &mut dec_adam, cfg.lr)?;
        }
        let metric = discrete_objective(&val_slice, &enc, &dec, cfg.lambda, 0.0, 0.0)?;
        history.push(EpochStats { epoch, train_loss: epoch_loss, val_metric: metric });
        if metric < best_metric {
            best_metric = metric;
            best = (enc.clone(), dec.clone(), epoch + 1);
        }
    }

    let mut best_ck = Checkpoint::new(best.0, best.1, cfg.lambda, train.n_tx, train.n_sub);
    best_ck.epoch = best.2 as u64;
    let mut last_ck = Checkpoint::new(enc, dec, cfg.lambda, train.n_tx, train.n_sub);
    last_ck.enc_adam = Some(enc_adam);
    last_ck.dec_adam = Some(dec_adam);
    last_ck.epoch = cfg.epochs as u64;
    Ok(TrainOutcome { best: best_ck, last: last_ck, history })
}

fn holdout_split(h_t: &[CsiSample], frac: f64) -> (Vec<CsiSample>, Vec<CsiSample>) {
    let n = h_t.len();
    let hold = ((n as f64 * frac).ceil() as usize).min(n.saturating_sub(1));
    let cut = n - hold;
    (h_t[..cut].to_vec(), h_t[cut..].to_vec())
}

struct FinetuneRun {
    enc: ParamSet,
    dec: ParamSet,
    epochs_run: usize,
    history: Vec<EpochStats>,
}

/// Shared fine-tuning loop with early stopping on a held-out slice.
fn finetune_loop(
    ckpt: &Checkpoint,
    h_t: &[CsiSample],
    cfg: &TrainConfig,
) -> Result<FinetuneRun> {
    cfg.validate()?;
    if h_t.is_empty() {
        return Err(Error::Config("fine-tuning set is empty".into()));
    }
    let (train, holdout) = holdout_split(h_t, cfg.holdout_frac);
    let use_holdout = !holdout.is_empty() && cfg.patience > 0;

    let mut enc = ckpt.encoder.clone();
    let mut dec = ckpt.decoder.clone();
    let dec0 = ckpt.decoder.clone();
    let mut enc_adam = AdamState::new(enc.tensors());
    let mut dec_adam = AdamState::new(dec.tensors());

    let mut best = (enc.clone(), dec.clone(), 0usize, f64::INFINITY);
    let mut since_best = 0usize;
    let mut history = Vec::new();
    let mut epochs_run = 0;

    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let batches = epoch_batches(train.len(), cfg.batch, cfg.seed, epoch as u64);
        let n_batches = batches.len();
        for (bi, idxs) in batches.into_iter().enumerate() {
            let batch: Vec<&Tensor> = idxs.iter().map(|&i| &train[i].h).collect();
            let noise_seed =
                crate::rng::derive_seed(cfg.seed, "ft-noise", (epoch as u64) << 20 | bi as u64);
            let dec0_arg = matches!(cfg.mode, Mode::FullModel).then_some(&dec0);
            let (eval, eg, dg) = batch_grads(&batch, &enc, &dec, dec0_arg, cfg, noise_seed)?;
            epoch_loss += eval.loss / n_batches as f64;
            adam_step(enc.tensors_mut(), &eg, &mut enc_adam, cfg.lr)?;
            if matches!(cfg.mode, Mode::FullModel | Mode::GenieAided) {
                adam_step(dec.tensors_mut(), &dg, &mut dec_adam, cfg.lr)?;
            }
        }
        epochs_run = epoch + 1;

        let metric = if use_holdout {
            let slice: Vec<&CsiSample> = holdout.iter().collect();
            match cfg.mode {
                Mode::FullModel => {
                    // score the quantized decoder the receiver would see
                    let (dbar, delta_bar) = quantize_decoder(&dec, &dec0, &cfg.quantizer)?;
                    let m_bits = update::update_rate_discrete(&delta_bar, &cfg.update_prior, &cfg.quantizer)?;
                    let csi = (h_t[0].h.shape()[1] * h_t[0].h.shape()[2]) as f64;
                    discrete_objective(&slice, &enc, &dbar, cfg.lambda, m_bits / csi, cfg.lambda_m())?
                }
                _ => discrete_objective(&slice, &enc, &dec, cfg.lambda, 0.0, 0.0)?,
            }
        } else {
            epoch_loss
        };
        history.push(EpochStats { epoch, train_loss: epoch_loss, val_metric: metric });

        if metric < best.3 {
            best = (enc.clone(), dec.clone(), epochs_run, metric);
            since_best = 0;
        } else if use_holdout {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    let (enc, dec, best_epochs, _) = if use_holdout { best } else { (enc, dec, epochs_run, 0.0) };
    Ok(FinetuneRun { enc, dec, epochs_run: best_epochs, history })
}

/// theta_bar = theta0 + Q_t(theta - theta0), plus the flat quantized delta.
fn quantize_decoder(
    dec: &ParamSet,
    dec0: &ParamSet,
    q: &UpdateQuantizer,
) -> Result<(ParamSet, Vec<f64>)> {
    let flat = dec.flatten();
    let flat0 = dec0.flatten();
    let delta: Vec<f64> = flat.iter().zip(&flat0).map(|(a, b)| a - b).collect();
    let delta_bar = q.quantize(&delta);
    let mut rebuilt = flat0;
    for (r, d) in rebuilt.iter_mut().zip(&delta_bar) {
        *r += d;
    }
    let mut dbar = dec0.clone();
    dbar.assign_flat(&rebuilt)?;
    Ok((dbar, delta_bar))
}

/// Evaluate the backbone on an evaluation slice without any fine-tuning.
pub fn no_finetune_eval(ckpt: &Checkpoint, h_e: &[CsiSample]) -> Result<SessionResult> {
    let (bs, per_sample, aggregate) = evaluate_coded(&ckpt.encoder, &ckpt.decoder, h_e, None)?;
    Ok(SessionResult {
        mode: None,
        encoder: ckpt.encoder.clone(),
        decoder: ckpt.decoder.clone(),
        bitstream: bs,
        per_sample,
        aggregate,
        nonzero_updates: 0,
        epochs_run: 0,
        history: Vec::new(),
    })
}

/// Encoder-only fine-tuning: update the encoder on recent samples, keep the
/// decoder and prior frozen, code latents under the frozen prior.
pub fn finetune_encoder_only(
    ckpt: &Checkpoint,
    h_t: &[CsiSample],
    h_e: &[CsiSample],
    cfg: &TrainConfig,
) -> Result<SessionResult> {
    if cfg.mode != Mode::EncoderOnly {
        return Err(Error::Config(format!("finetune_encoder_only with mode {}", cfg.mode)));
    }
    let run = finetune_loop(ckpt, h_t, cfg)?;
    debug_assert_eq!(run.dec, ckpt.decoder);
    let (bs, per_sample, aggregate) = evaluate_coded(&run.enc, &ckpt.decoder, h_e, None)?;
    Ok(SessionResult {
        mode: Some(Mode::EncoderOnly),
        encoder: run.enc,
        decoder: ckpt.decoder.clone(),
        bitstream: bs,
        per_sample,
        aggregate,
        nonzero_updates: 0,
        epochs_run: run.epochs_run,
        history: run.history,
    })
}

/// Full-model fine-tuning: optimize encoder and decoder under the RDM loss,
/// entropy-code the quantized decoder delta once per session, and code
/// evaluation latents under the quantized (receiver-side) prior.
pub fn finetune_full_model(
    ckpt: &Checkpoint,
    h_t: &[CsiSample],
    h_e: &[CsiSample],
    cfg: &TrainConfig,
) -> Result<SessionResult> {
    if cfg.mode != Mode::FullModel {
        return Err(Error::Config(format!("finetune_full_model with mode {}", cfg.mode)));
    }
    let run = finetune_loop(ckpt, h_t, cfg)?;
    let (dbar, delta_bar) = quantize_decoder(&run.dec, &ckpt.decoder, &cfg.quantizer)?;
    let payload = update::encode_update(&delta_bar, &cfg.update_prior, &cfg.quantizer)?;
    let nonzero = delta_bar.iter().filter(|v| **v != 0.0).count();
    let (bs, per_sample, aggregate) = evaluate_coded(&run.enc, &dbar, h_e, Some(payload))?;
    Ok(SessionResult {
        mode: Some(Mode::FullModel),
        encoder: run.enc,
        decoder: dbar,
        bitstream: bs,
        per_sample,
        aggregate,
        nonzero_updates: nonzero,
        epochs_run: run.epochs_run,
        history: run.history,
    })
}

/// Genie-aided bound: identical optimization with the update-rate term and
/// update coding disabled; the decoder is assumed to know the fine-tuned
/// parameters at zero cost.
pub fn genie_aided(
    ckpt: &Checkpoint,
    h_t: &[CsiSample],
    h_e: &[CsiSample],
    cfg: &TrainConfig,
) -> Result<SessionResult> {
    if cfg.mode != Mode::GenieAided {
        return Err(Error::Config(format!("genie_aided with mode {}", cfg.mode)));
    }
    let run = finetune_loop(ckpt, h_t, cfg)?;
    let (bs, per_sample, aggregate) = evaluate_coded(&run.enc, &run.dec, h_e, None)?;
    Ok(SessionResult {
        mode: Some(Mode::GenieAided),
        encoder: run.enc,
        decoder: run.dec,
        bitstream: bs,
        per_sample,
        aggregate,
        nonzero_updates: 0,
        epochs_run: run.epochs_run,
        history: run.history,
    })
}

/// Partition an evaluation stream into consecutive windows of `interval`
/// samples, fine-tune on each window's leading slice and evaluate on the
/// remainder, amortizing each session's update bits over its own evaluated
/// samples.
pub fn schedule(
    ckpt: &Checkpoint,
    stream: &CsiDataset,
    interval: usize,
    ft_len: usize,
    cfg: &TrainConfig,
) -> Result<Vec<SessionResult>> {
    if interval < 2 {
        return Err(Error::Config("interval must be at least 2".into()));
    }
    let mut out = Vec::new();
    let mut start = 0;
    let mut window_idx = 0u64;
    while start < stream.len() {
        let end = (start + interval).min(stream.len());
        let window = &stream.samples[start..end];
        let ft = ft_len.min(window.len() - 1).max(1);
        if window.len() < 2 {
            break;
        }
        let h_t = &window[..ft];
        let h_e = &window[ft..];
        let mut wcfg = cfg.clone();
        wcfg.seed = crate::rng::derive_seed(cfg.seed, "window", window_idx);
        let session = match cfg.mode {
            Mode::FullModel => finetune_full_model(ckpt, h_t, h_e, &wcfg)?,
            Mode::EncoderOnly => finetune_encoder_only(ckpt, h_t, h_e, &wcfg)?,
            Mode::GenieAided => genie_aided(ckpt, h_t, h_e, &wcfg)?,
            Mode::Backbone => return Err(Error::Config("schedule needs a fine-tuning mode".into())),
        };
        out.push(session);
        start = end;
        window_idx += 1;
    }
    Ok(out)
}
