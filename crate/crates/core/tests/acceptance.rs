//! Acceptance suite, part 1: coding, rate accounting, gradient correctness,
//! prior correctness, amortization law, RD frontier sanity.
//! Each criterion prints one PASS line with its measured numbers; a failed
//! assert is the FAIL signal. The distribution-shift criteria live in
//! `acceptance_shift.rs`.

use csifeed::bitstream::Bitstream;
use csifeed::channel::{generate, normalize, split, ChannelConfig, CsiDataset};
use csifeed::checkpoint::Checkpoint;
use csifeed::codec::{self, FactorizedPrior, ParamSet, ALPHABET_MAX};
use csifeed::finetune::{
    self, finetune_full_model, loss_rd_grads, loss_rdm_grads, loss_rdm_grads_identity,
    relaxation_noise, schedule, train_backbone, Mode, TrainConfig,
};
use csifeed::latent;
use csifeed::rng::seeded_rng;
use csifeed::tensor::{self, Tensor};
use csifeed::update::{self, SpikeSlabPrior, UpdatePrior, UpdateQuantizer};
use rand::Rng;

fn pass(n: u32, msg: &str) {
    println!("ACCEPTANCE CRITERION {}: PASS — {}", n, msg);
}

fn toy_dataset(seed: u64, count: usize, dim: usize) -> CsiDataset {
    let cfg = ChannelConfig { n_tx: dim, n_sub: dim, seed, ..Default::default() };
    normalize(&generate(&cfg, count).unwrap()).unwrap()
}

/// Draw symbols from a pmf via inverse CDF.
fn sample_from_pmf(pmf: &[f64], count: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
    let mut cum = Vec::with_capacity(pmf.len());
    let mut acc = 0.0;
    for p in pmf {
        acc += p;
        cum.push(acc);
    }
    (0..count)
        .map(|_| {
            let u: f64 = rng.gen_range(0.0..acc);
            cum.partition_point(|c| *c < u).min(pmf.len() - 1)
        })
        .collect()
}

// ── Criterion 1: lossless coding ─────────────────────────────────────

#[test]
fn criterion_1_lossless_coding() {
    let mut rng = seeded_rng(901, "c1", 0);
    let (_, dec) = codec::init(901);
    let prior = FactorizedPrior::from_params(&dec).unwrap();

    // >= 1e6 cumulative random latent symbols across several grids
    let mut cumulative = 0usize;
    for block in 0..8 {
        let z = Tensor::from_fn(&[2, 256, 256], |i| {
            if i % 701 == 0 {
                rng.gen_range(-(ALPHABET_MAX as f64)..=ALPHABET_MAX as f64).round()
            } else {
                (4.0 * rng.gen_range(-1.0f64..1.0)).round()
            }
        });
        cumulative += z.numel();
        let payload = latent::entropy_encode(&z, &prior).unwrap();
        let back = latent::entropy_decode(&payload, &prior, z.shape()).unwrap();
        assert_eq!(z, back, "latent roundtrip mismatch in block {}", block);
    }
    assert!(cumulative >= 1_000_000);

    // >= 10 random full-length update vectors
    let q = UpdateQuantizer::default();
    let sp = UpdatePrior::SpikeSlab(SpikeSlabPrior::default());
    let theta_len = dec.n_scalars();
    for trial in 0..10 {
        let sparsity = 0.002 + 0.01 * trial as f64;
        let raw: Vec<f64> = (0..theta_len)
            .map(|_| {
                if rng.gen_bool(sparsity) {
                    rng.gen_range(-0.2..0.2)
                } else {
                    rng.gen_range(-0.0015..0.0015)
                }
            })
            .collect();
        let quant = q.quantize(&raw);
        let payload = update::encode_update(&quant, &sp, &q).unwrap();
        let back = update::decode_update(&payload, &sp, &q, theta_len).unwrap();
        assert_eq!(quant, back, "update roundtrip mismatch in trial {}", trial);
    }

    // encoder-side H-hat equals the reconstruction of a decoder built from
    // serialized bytes only (checkpoint + bitstream)
    let ds = toy_dataset(902, 14, 16);
    let (enc0, dec0) = codec::init(902);
    let ckpt = Checkpoint::new(enc0, dec0, 100.0, 16, 16);
    let mut cfg = TrainConfig::finetune(Mode::FullModel, 100.0, 3);
    cfg.epochs = 2;
    cfg.batch = 4;
    cfg.patience = 0;
    let session = finetune_full_model(&ckpt, &ds.samples[..10], &ds.samples[10..], &cfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let ckpt_path = dir.path().join("theta0.ckpt");
    ckpt.save(&ckpt_path).unwrap();
    let bits = session.bitstream.to_bytes();

    let fresh_ckpt = Checkpoint::load(&ckpt_path).unwrap();
    let fresh_bits = Bitstream::from_bytes(&bits).unwrap();
    let (theta_bar, recons) = finetune::decode_session(
        &fresh_bits,
        &fresh_ckpt.decoder,
        &cfg.quantizer,
        &cfg.update_prior,
        &[2, 4, 4],
    )
    .unwrap();
    assert_eq!(theta_bar, session.decoder);
    for (r, s) in recons.iter().zip(&ds.samples[10..]) {
        let z = codec::encode_features(&s.h, &session.encoder).unwrap();
        let zbar = latent::quantize_unit(&z);
        let local = codec::decode_features(&latent::dequantize(&zbar), &session.decoder).unwrap();
        assert_eq!(r, &local, "reconstruction differs from encoder side");
    }

    pass(
        1,
        &format!(
            "{} latent symbols + 10 update vectors of {} round-trip bit-exact; \
             decoder rebuilt from bytes reproduces every H-hat bit-exactly",
            cumulative, theta_len
        ),
    );
}

// ── Criterion 2: rate accounting ─────────────────────────────────────

#[test]
fn criterion_2_rate_accounting() {
    let mut rng = seeded_rng(903, "c2", 0);
    let mut blocks = 0;
    let mut worst_ratio: f64 = 0.0;

    // latent blocks under several independently initialized priors
    for seed in [1u64, 2, 3, 4] {
        let (_, dec) = codec::init(seed);
        let prior = FactorizedPrior::from_params(&dec).unwrap();
        for ch in 0..2 {
            let pmf = prior.pmf_table(ch);
            let n = 12_800; // one [2,80,80] plane per channel
            let syms = sample_from_pmf(&pmf, n, &mut rng);
            let z = Tensor::new(
                vec![1, 1, n],
                syms.iter().map(|s| (*s as i64 - ALPHABET_MAX) as f64).collect(),
            )
            .unwrap();
            // single-channel tensors code under channel 0's table, so
            // estimate with the same table
            let est: f64 = syms.iter().map(|&s| -pmf[s].log2()).sum();
            let table = csifeed::rangecoder::FreqTable::from_probabilities(&pmf).unwrap();
            let mut enc = csifeed::rangecoder::RangeEncoder::new();
            for &s in &syms {
                enc.encode(&table, s).unwrap();
            }
            let actual = 8.0 * enc.finish().len() as f64;
            assert!(actual >= est, "actual {} below entropy {}", actual, est);
            assert!(actual <= 1.02 * est + 256.0, "actual {} vs bound {}", actual, 1.02 * est + 256.0);
            worst_ratio = worst_ratio.max(actual / est);
            blocks += 1;
            let _ = z;
        }
    }

    // update blocks across prior settings, including uniform
    let theta_len = 108_986usize;
    for (sigma, t, alpha) in [(0.05, 0.005, 1000.0), (0.05, 0.005, 10.0), (0.02, 0.002, 5000.0)] {
        let q = UpdateQuantizer::new(t, 50).unwrap();
        let prior = UpdatePrior::SpikeSlab(SpikeSlabPrior::new(sigma, t, alpha).unwrap());
        let pmf = prior.pmf_table(&q);
        let syms = sample_from_pmf(&pmf, theta_len, &mut rng);
        let quant: Vec<f64> = syms.iter().map(|&s| (s as i64 - q.k_max()) as f64 * t).collect();
        let est = update::update_rate_discrete(&quant, &prior, &q).unwrap();
        let payload = update::encode_update(&quant, &prior, &q).unwrap();
        let actual = 8.0 * (payload.len() - 18) as f64;
        assert!(actual >= est, "actual {} below entropy {}", actual, est);
        assert!(actual <= 1.02 * est + 256.0, "actual {} vs bound {}", actual, 1.02 * est + 256.0);
        worst_ratio = worst_ratio.max(actual / est);
        blocks += 1;
    }
    let q = UpdateQuantizer::default();
    let uniform = UpdatePrior::Uniform;
    let pmf = uniform.pmf_table(&q);
    let syms = sample_from_pmf(&pmf, 20_000, &mut rng);
    let quant: Vec<f64> = syms.iter().map(|&s| (s as i64 - q.k_max()) as f64 * q.t).collect();
    let est = update::update_rate_discrete(&quant, &uniform, &q).unwrap();
    let payload = update::encode_update(&quant, &uniform, &q).unwrap();
    let actual = 8.0 * (payload.len() - 18) as f64;
    assert!(actual >= est && actual <= 1.02 * est + 256.0);
    worst_ratio = worst_ratio.max(actual / est);
    blocks += 1;

    pass(
        2,
        &format!(
            "{} blocks >= 1e4 symbols inside [entropy, 1.02*entropy + 256 bits]; worst actual/entropy {:.5}",
            blocks, worst_ratio
        ),
    );
}

// ── Criterion 3: gradient correctness ────────────────────────────────

/// Incremental evaluator of the RD loss on one 4x4 sample. Stages after the
/// perturbed parameter are recomputed, everything upstream is reused; this
/// keeps the full 218k-parameter central-difference sweep inside the time
/// budget. The composition is independent of the tape (plain kernels).
struct RdEvaluator {
    h: Tensor,
    noise: Tensor,
    lambda: f64,
    csi_elems: f64,
}

#[derive(Clone)]
struct StageCache {
    e1p: Tensor,
    e2p: Tensor,
    z_noisy: Tensor,
    rate_bits: f64,
    d1u: Tensor,
    d2u: Tensor,
    sse: f64,
}

/// First parameter slot whose stage changed; selects where to resume.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Stage {
    EncConv1,
    EncConv2,
    EncConv3,
    DecConv1,
    DecConv2,
    DecConv3,
    Prior,
}

fn stage_of(param_index: usize) -> Stage {
    match param_index {
        0 | 1 => Stage::EncConv1,
        2 | 3 => Stage::EncConv2,
        4 | 5 => Stage::EncConv3,
        6 | 7 => Stage::DecConv1,
        8 | 9 => Stage::DecConv2,
        10 | 11 => Stage::DecConv3,
        _ => Stage::Prior,
    }
}

impl RdEvaluator {
    fn conv_block(x: &Tensor, k: &Tensor, b: &Tensor) -> Tensor {
        tensor::bias_add_channel(&tensor::conv2d_same(x, k).unwrap(), b).unwrap()
    }

    fn full(&self, enc: &ParamSet, dec: &ParamSet) -> (f64, StageCache) {
        let et = enc.tensors();
        let e1 = Self::conv_block(&self.h, &et[0], &et[1]);
        let (e1p, _) = tensor::maxpool2(&tensor::relu(&e1)).unwrap();
        let (loss, cache) = self.from_enc2(enc, dec, &e1p);
        (loss, StageCache { e1p, ..cache })
    }

    fn from_enc2(&self, enc: &ParamSet, dec: &ParamSet, e1p: &Tensor) -> (f64, StageCache) {
        let et = enc.tensors();
        let e2 = Self::conv_block(e1p, &et[2], &et[3]);
        let (e2p, _) = tensor::maxpool2(&tensor::relu(&e2)).unwrap();
        let (loss, cache) = self.from_enc3(enc, dec, &e2p);
        (loss, StageCache { e2p, ..cache })
    }

    fn from_enc3(&self, enc: &ParamSet, dec: &ParamSet, e2p: &Tensor) -> (f64, StageCache) {
        let et = enc.tensors();
        let z = Self::conv_block(e2p, &et[4], &et[5]);
        let z_noisy = tensor::add(&z, &self.noise).unwrap();
        let prior = FactorizedPrior::from_params(dec).unwrap();
        let rate_bits = latent::estimate_rate_relaxed(&z_noisy, &prior).unwrap();
        let (loss, cache) = self.from_dec1(dec, &z_noisy, rate_bits);
        (loss, StageCache { z_noisy, rate_bits, ..cache })
    }

    fn from_dec1(&self, dec: &ParamSet, z_noisy: &Tensor, rate_bits: f64) -> (f64, StageCache) {
        let dt = dec.tensors();
        let d1 = tensor::relu(&Self::conv_block(z_noisy, &dt[0], &dt[1]));
        let d1u = tensor::upsample2(&d1).unwrap();
        let (loss, cache) = self.from_dec2(dec, &d1u, z_noisy, rate_bits);
        (loss, StageCache { d1u, ..cache })
    }

    fn from_dec2(&self, dec: &ParamSet, d1u: &Tensor, z_noisy: &Tensor, rate_bits: f64) -> (f64, StageCache) {
        let dt = dec.tensors();
        let d2 = tensor::relu(&Self::conv_block(d1u, &dt[2], &dt[3]));
        let d2u = tensor::upsample2(&d2).unwrap();
        let (loss, cache) = self.from_dec3(dec, &d2u, z_noisy, rate_bits);
        (loss, StageCache { d2u, ..cache })
    }

    fn from_dec3(&self, dec: &ParamSet, d2u: &Tensor, z_noisy: &Tensor, rate_bits: f64) -> (f64, StageCache) {
        let dt = dec.tensors();
        let hhat = Self::conv_block(d2u, &dt[4], &dt[5]);
        let sse: f64 =
            self.h.data().iter().zip(hhat.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let loss = rate_bits / self.csi_elems + self.lambda * sse / self.csi_elems;
        (
            loss,
            StageCache {
                e1p: Tensor::zeros(&[1]),
                e2p: Tensor::zeros(&[1]),
                z_noisy: z_noisy.clone(),
                rate_bits,
                d1u: Tensor::zeros(&[1]),
                d2u: Tensor::zeros(&[1]),
                sse,
            },
        )
    }

    /// Loss after perturbing parameter `pi`, resuming from cached stages.
    fn eval_perturbed(&self, enc: &ParamSet, dec: &ParamSet, cache: &StageCache, pi: usize) -> f64 {
        match stage_of(pi) {
            Stage::EncConv1 => self.full(enc, dec).0,
            Stage::EncConv2 => self.from_enc2(enc, dec, &cache.e1p).0,
            Stage::EncConv3 => self.from_enc3(enc, dec, &cache.e2p).0,
            Stage::DecConv1 => self.from_dec1(dec, &cache.z_noisy, cache.rate_bits).0,
            Stage::DecConv2 => self.from_dec2(dec, &cache.d1u, &cache.z_noisy, cache.rate_bits).0,
            Stage::DecConv3 => self.from_dec3(dec, &cache.d2u, &cache.z_noisy, cache.rate_bits).0,
            Stage::Prior => {
                // only the rate term depends on prior parameters
                let prior = FactorizedPrior::from_params(dec).unwrap();
                let rate_bits = latent::estimate_rate_relaxed(&cache.z_noisy, &prior).unwrap();
                rate_bits / self.csi_elems + self.lambda * cache.sse / self.csi_elems
            }
        }
    }
}

fn fd_assert(analytic: f64, fd: f64, what: &str) {
    let tol = (1e-4 * analytic.abs().max(fd.abs())).max(1e-6);
    assert!(
        (analytic - fd).abs() <= tol,
        "{}: analytic {} vs fd {} (tol {})",
        what,
        analytic,
        fd,
        tol
    );
}

/// FD sweep over every parameter of both sets against analytic gradients.
/// Perturbs in place (clone-free) and resumes evaluation from the cached
/// stage of the perturbed parameter. `m_term` adds the update-rate
/// surrogate for decoder parameters; only the perturbed parameter's term
/// changes, the rest cancels in the central difference.
#[allow(clippy::too_many_arguments)]
fn fd_sweep(
    ev: &RdEvaluator,
    enc: &mut ParamSet,
    dec: &mut ParamSet,
    enc_grads: &[Tensor],
    dec_grads: &[Tensor],
    m_term: Option<(&SpikeSlabPrior, &UpdateQuantizer, &ParamSet, f64)>,
    step: f64,
) {
    let (_, cache) = ev.full(enc, dec);
    let surrogate = |prior: &SpikeSlabPrior, q: &UpdateQuantizer, d: f64| -> f64 {
        -(prior.density(d) * q.t).clamp(update::SURROGATE_FLOOR, 1.0).log2()
    };

    // encoder parameters (stage slots 0..6)
    for (ti, g) in enc_grads.iter().enumerate() {
        for j in 0..g.numel() {
            let old = enc.tensors()[ti].data()[j];
            enc.tensors_mut()[ti].data_mut()[j] = old + step;
            let lp = ev.eval_perturbed(enc, dec, &cache, ti);
            enc.tensors_mut()[ti].data_mut()[j] = old - step;
            let lm = ev.eval_perturbed(enc, dec, &cache, ti);
            enc.tensors_mut()[ti].data_mut()[j] = old;
            fd_assert(g.data()[j], (lp - lm) / (2.0 * step), &format!("enc[{}][{}]", ti, j));
        }
    }
    // decoder (+ prior) parameters (stage slots 6..)
    for (ti, g) in dec_grads.iter().enumerate() {
        let pslot = 6 + ti;
        for j in 0..g.numel() {
            let old = dec.tensors()[ti].data()[j];
            dec.tensors_mut()[ti].data_mut()[j] = old + step;
            let mut lp = ev.eval_perturbed(enc, dec, &cache, pslot);
            dec.tensors_mut()[ti].data_mut()[j] = old - step;
            let mut lm = ev.eval_perturbed(enc, dec, &cache, pslot);
            dec.tensors_mut()[ti].data_mut()[j] = old;
            if let Some((prior, q, dec0, lambda_m)) = m_term {
                let base0 = dec0.tensors()[ti].data()[j];
                lp += lambda_m * surrogate(prior, q, old + step - base0) / ev.csi_elems;
                lm += lambda_m * surrogate(prior, q, old - step - base0) / ev.csi_elems;
            }
            fd_assert(g.data()[j], (lp - lm) / (2.0 * step), &format!("dec[{}][{}]", ti, j));
        }
    }
}

#[test]
fn criterion_3_gradient_correctness() {
    let t0 = std::time::Instant::now();
    let ds = toy_dataset(904, 1, 4);
    let h = &ds.samples[0].h;
    let (mut enc, mut dec) = codec::init(904);
    let lambda = 100.0;
    let noise_seed = 31u64;
    let noise = relaxation_noise(&[2, 1, 1], noise_seed, 0);
    let ev = RdEvaluator { h: h.clone(), noise, lambda, csi_elems: 16.0 };

    // RD loss: analytic tape gradients vs the independent incremental
    // finite-difference oracle, every parameter
    let (eval, eg, dg) = loss_rd_grads(&[h], &enc, &dec, lambda, noise_seed).unwrap();
    let (plain_loss, _) = ev.full(&enc, &dec);
    assert!((plain_loss - eval.loss).abs() < 1e-9, "oracle composition drifted");
    fd_sweep(&ev, &mut enc, &mut dec, &eg, &dg, None, 1e-5);

    // RDM loss in its differentiable (identity) form at theta = theta0 +
    // 0.003 * alternating pattern, every parameter including the M term
    let mut cfg = TrainConfig::finetune(Mode::FullModel, lambda, 5);
    cfg.lambda_m = Some(2.0);
    let spike = match cfg.update_prior {
        UpdatePrior::SpikeSlab(p) => p,
        _ => unreachable!(),
    };
    let dec0 = dec.clone();
    let mut dec_moved = dec.clone();
    let mut flip = 1.0;
    for t in dec_moved.tensors_mut() {
        for v in t.data_mut() {
            *v += 0.003 * flip;
            flip = -flip;
        }
    }
    let (_, eg2, dg2) =
        loss_rdm_grads_identity(&[h], &enc, &dec_moved, &dec0, &cfg, noise_seed).unwrap();
    fd_sweep(
        &ev,
        &mut enc,
        &mut dec_moved,
        &eg2,
        &dg2,
        Some((&spike, &cfg.quantizer, &dec0, cfg.lambda_m())),
        1e-5,
    );

    // STE contract: at on-grid deltas the quantized-path gradients equal the
    // identity-path gradients exactly (swap-and-compare oracle)
    let mut dec_grid = dec.clone();
    let mut k = -3i64;
    for t in dec_grid.tensors_mut() {
        for v in t.data_mut() {
            *v += (k as f64) * cfg.quantizer.t;
            k = if k >= 3 { -3 } else { k + 1 };
        }
    }
    let (_, eg_q, dg_q) = loss_rdm_grads(&[h], &enc, &dec_grid, &dec0, &cfg, noise_seed).unwrap();
    let (_, eg_i, dg_i) =
        loss_rdm_grads_identity(&[h], &enc, &dec_grid, &dec0, &cfg, noise_seed).unwrap();
    for (a, b) in eg_q.iter().zip(&eg_i) {
        assert_eq!(a, b, "STE encoder gradients differ at grid point");
    }
    for (a, b) in dg_q.iter().zip(&dg_i) {
        assert_eq!(a, b, "STE decoder gradients differ at grid point");
    }

    let n_params = enc.n_scalars() + dec.n_scalars();
    pass(
        3,
        &format!(
            "all {} parameters of the RD and RDM losses match central differences (step 1e-5, \
             rel tol 1e-4); STE swap-with-identity exact at grid points; {:.0}s",
            n_params,
            t0.elapsed().as_secs_f64()
        ),
    );
}

// ── Criterion 4: prior correctness ───────────────────────────────────

#[test]
fn criterion_4_prior_correctness() {
    let mut rng = seeded_rng(905, "c4", 0);
    let mut checked = 0;
    while checked < 100 {
        let t = rng.gen_range(0.0005..0.02);
        let n = rng.gen_range(2..257u32);
        let sigma = rng.gen_range(0.9..40.0) * t;
        let alpha = rng.gen_range(0.0..5000.0);
        let q = UpdateQuantizer::new(t, n).unwrap();
        let prior = match SpikeSlabPrior::new(sigma, t, alpha) {
            Ok(p) => UpdatePrior::SpikeSlab(p),
            Err(_) => continue, // sigma below the 5t/6 bound
        };
        let pmf = prior.pmf_table(&q);
        let sum: f64 = pmf.iter().sum();
        assert!(
            (sum - 1.0).abs() < 1e-9,
            "pmf sum {} for (sigma={}, t={}, alpha={}, N={})",
            sum,
            sigma,
            t,
            alpha,
            n
        );
        assert!(pmf.iter().all(|p| *p >= 0.0));
        checked += 1;
    }

    // near-pure spike: central bin mass 0.9973 +- 0.0005
    let q = UpdateQuantizer::default();
    let p = UpdatePrior::SpikeSlab(SpikeSlabPrior::new(0.05, 0.005, 1e9).unwrap());
    let central = p.bin_pmf(0.0, &q).unwrap();
    assert!((central - 0.9973).abs() <= 5e-4, "central mass {}", central);

    pass(
        4,
        &format!(
            "bin pmf sums to 1 within 1e-9 for 100 random (sigma, t, alpha, N); \
             near-pure spike central mass {:.5}",
            central
        ),
    );
}

// ── Criterion 8: amortization law ────────────────────────────────────

#[test]
fn criterion_8_amortization_law() {
    // exact arithmetic: for a fixed coded update payload, the per-sample
    // update rate is nonincreasing in the interval
    let csi = 256.0;
    let update_bits = 4096.0;
    let ft = 40usize;
    let mut last = f64::INFINITY;
    for interval in [60usize, 120, 240, 480] {
        let evaluated = (interval - ft) as f64;
        let rate = update_bits / (evaluated * csi);
        assert!(rate <= last);
        last = rate;
    }

    // scheduled sessions on a small trained backbone emit the RD-vs-interval
    // table and follow the same law
    let base = toy_dataset(906, 80, 16);
    let (train, val, _) = split(&base, (0.6, 0.2, 0.2), 1).unwrap();
    let mut bcfg = TrainConfig::backbone(100.0, 906);
    bcfg.epochs = 8;
    bcfg.batch = 8;
    let ckpt = train_backbone(&train, &val, &bcfg, None).unwrap().best;

    let stream_cfg = ChannelConfig { n_tx: 16, n_sub: 16, seed: 907, ..Default::default() }
        .shift(0.4, 1.5, 0);
    let stream = normalize(&generate(&stream_cfg, 240).unwrap()).unwrap();
    let mut cfg = TrainConfig::finetune(Mode::FullModel, 100.0, 11);
    cfg.epochs = 3;
    cfg.batch = 8;
    cfg.patience = 0;

    let mut rows = Vec::new();
    for &interval in &[60usize, 120, 240] {
        let sessions = schedule(&ckpt, &stream, interval, 40, &cfg).unwrap();
        let csi = 256.0;
        let mut update_bits = 0.0;
        let mut evaluated = 0usize;
        let mut latent = 0.0;
        let mut ratio = 0.0;
        for s in &sessions {
            evaluated += s.per_sample.len();
            update_bits += s.aggregate.rate_update * csi * s.per_sample.len() as f64;
            for p in &s.per_sample {
                latent += p.rate_latent;
                ratio += 10f64.powf(p.nmse_db / 10.0);
            }
        }
        rows.push((
            interval,
            update_bits / (evaluated as f64 * csi),
            latent / evaluated as f64,
            10.0 * (ratio / evaluated as f64).log10(),
        ));
    }
    for w in rows.windows(2) {
        assert!(
            w[1].1 <= w[0].1 + 1e-12,
            "rate_update rose from {:?} to {:?}",
            w[0],
            w[1]
        );
    }
    let table: Vec<String> = rows
        .iter()
        .map(|(i, ru, rl, n)| format!("interval {} -> rate_update {:.6}, rate_latent {:.4}, NMSE {:.2} dB", i, ru, rl, n))
        .collect();

    pass(
        8,
        &format!(
            "amortized update rate nonincreasing in interval (exact arithmetic and scheduled runs); \
             RD-vs-interval table: [{}]",
            table.join("; ")
        ),
    );
}

// ── Criterion 9: RD frontier sanity ──────────────────────────────────

#[test]
fn criterion_9_rd_frontier() {
    let t0 = std::time::Instant::now();
    let base = toy_dataset(908, 120, 16);
    let (train, val, test) = split(&base, (0.4, 0.4, 0.2), 3).unwrap();

    let lambdas = [5e4, 1e5, 5e5, 1e6];
    let mut points = Vec::new();
    for &lambda in &lambdas {
        let mut cfg = TrainConfig::backbone(lambda, 908);
        cfg.epochs = 30;
        cfg.batch = 8;
        let out = train_backbone(&train, &val, &cfg, None).unwrap();
        let eval = finetune::no_finetune_eval(&out.best, &test.samples).unwrap();
        points.push((lambda, eval.aggregate.rate_latent, eval.aggregate.nmse_db));
    }

    let mut rate_inversions = 0;
    let mut nmse_inversions = 0;
    for w in points.windows(2) {
        if w[1].1 < w[0].1 {
            rate_inversions += 1;
        }
        if w[1].2 > w[0].2 {
            nmse_inversions += 1;
        }
    }
    assert!(
        rate_inversions <= 1,
        "rate not increasing in lambda: {:?} ({} inversions)",
        points,
        rate_inversions
    );
    assert!(
        nmse_inversions <= 1,
        "NMSE not decreasing in lambda: {:?} ({} inversions)",
        points,
        nmse_inversions
    );

    let desc: Vec<String> = points
        .iter()
        .map(|(l, r, n)| format!("lambda {:.0e}: ({:.3} b/elem, {:.2} dB)", l, r, n))
        .collect();
    pass(
        9,
        &format!(
            "4-point lambda sweep monotone within one inversion [{}] in {:.0}s",
            desc.join("; "),
            t0.elapsed().as_secs_f64()
        ),
    );
}
