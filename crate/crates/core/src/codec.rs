//! The codec networks: feature encoder, feature decoder and the fully
//! factorized learned latent prior, plus their tape-recorded forward passes.
//!
//! Topology (both spatial dims must be divisible by 4):
//!   encoder: conv(2->64, k5) + ReLU -> maxpool2 -> conv(64->64, k5) + ReLU
//!            -> maxpool2 -> conv(64->2, k5) (linear)
//!   decoder: conv(2->64, k5) + ReLU -> upsample2 -> conv(64->64, k5) + ReLU
//!            -> upsample2 -> conv(2<-64, k5) (linear)
//!
//! The prior models each latent channel i.i.d. over spatial positions with a
//! monotone scalar CDF network: three stacked affine layers of width 3 with
//! softplus-positive weights and tanh gating, closed by a sigmoid. Decoder
//! and prior parameters together form theta; their flat canonical ordering
//! is what the update coder operates on.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::{self, Tensor};

pub const LATENT_CHANNELS: usize = 2;
pub const HIDDEN_CHANNELS: usize = 64;
pub const KERNEL: usize = 5;
/// Latent coder alphabet bound: integer symbols in [-ALPHABET_MAX, ALPHABET_MAX].
pub const ALPHABET_MAX: i64 = 255;
/// Probability floor applied to every latent bin before renormalization.
pub const PMF_FLOOR: f64 = 1.0 / 65536.0;
/// CDF tail mass the prior is expected to leave outside the alphabet.
pub const TAIL_MASS: f64 = 1e-9;

const PRIOR_WIDTH: usize = 3;
/// Per-row init multipliers; distinct rows break hidden-unit symmetry while
/// biases stay zero so the initial CDF is odd (P(0) maximal).
const PRIOR_ROW_SCALES: [f64; PRIOR_WIDTH] = [0.8, 1.0, 1.25];
/// Composite linear slope of the initial CDF stack, chosen so the initial
/// pmf is a few bits per element over roughly [-10, 10].
const PRIOR_INIT_SLOPE: f64 = 0.4;

/// Named, ordered parameter tensors. The insertion order is the canonical
/// flat ordering used by checkpoints and update coding.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Flatten all tensors in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_scalars());
        for t in &self.tensors {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Rebuild tensor values from a canonical flat vector.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_scalars() {
            return Err(Error::Dim(format!(
                "flat vector of {} values for {} parameters",
                flat.len(),
                self.n_scalars()
            )));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

// parameter layout: six conv tensors, then 8 prior tensors per latent channel
const CONV_SLOTS: usize = 6;
const PRIOR_SLOTS: usize = 8;

fn conv_layer_dims() -> [(usize, usize); 3] {
    [(2, HIDDEN_CHANNELS), (HIDDEN_CHANNELS, HIDDEN_CHANNELS), (HIDDEN_CHANNELS, 2)]
}

fn he_kernel(rng: &mut impl Rng, c_out: usize, c_in: usize) -> Tensor {
    let std = (2.0 / (c_in * KERNEL * KERNEL) as f64).sqrt();
    Tensor::from_fn(&[c_out, c_in, KERNEL, KERNEL], |_| {
        // Box-Muller
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    })
}

fn push_conv_stack(params: &mut ParamSet, prefix: &str, rng: &mut impl Rng) {
    for (i, (c_in, c_out)) in conv_layer_dims().iter().enumerate() {
        params.push(format!("{}.conv{}.kernel", prefix, i + 1), he_kernel(rng, *c_out, *c_in));
        params.push(format!("{}.conv{}.bias", prefix, i + 1), Tensor::zeros(&[*c_out]));
    }
}

fn prior_init_raw(scale: f64) -> f64 {
    tensor::softplus_inv_scalar(scale)
}

fn push_prior_channel(params: &mut ParamSet, ch: usize) {
    let c = PRIOR_INIT_SLOPE.cbrt()
        / ((PRIOR_ROW_SCALES.iter().sum::<f64>()
            * PRIOR_ROW_SCALES.iter().map(|v| v * v).sum::<f64>())
        .cbrt());
    let w = PRIOR_WIDTH;
    params.push(
        format!("prior.ch{}.w1", ch),
        Tensor::from_fn(&[w], |j| prior_init_raw(c * PRIOR_ROW_SCALES[j])),
    );
    params.push(format!("prior.ch{}.b1", ch), Tensor::zeros(&[w]));
    params.push(format!("prior.ch{}.a1", ch), Tensor::zeros(&[w]));
    params.push(
        format!("prior.ch{}.w2", ch),
        Tensor::from_fn(&[w * w], |j| prior_init_raw(c * PRIOR_ROW_SCALES[j / w])),
    );
    params.push(format!("prior.ch{}.b2", ch), Tensor::zeros(&[w]));
    params.push(format!("prior.ch{}.a2", ch), Tensor::zeros(&[w]));
    params.push(
        format!("prior.ch{}.w3", ch),
        Tensor::from_fn(&[w], |j| prior_init_raw(c * PRIOR_ROW_SCALES[j])),
    );
    params.push(format!("prior.ch{}.b3", ch), Tensor::zeros(&[1]));
}

/// He-initialized encoder and decoder parameter sets. The decoder set
/// includes the factorized-prior parameters (jointly "theta").
pub fn init(seed: u64) -> (ParamSet, ParamSet) {
    let mut enc = ParamSet::new();
    push_conv_stack(&mut enc, "enc", &mut seeded_rng(seed, "init-enc", 0));
    let mut dec = ParamSet::new();
    push_conv_stack(&mut dec, "dec", &mut seeded_rng(seed, "init-dec", 0));
    for ch in 0..LATENT_CHANNELS {
        push_prior_channel(&mut dec, ch);
    }
    (enc, dec)
}

fn check_csi_shape(h: &Tensor) -> Result<(usize, usize)> {
    match h.shape() {
        &[2, a, b] if a % 4 == 0 && b % 4 == 0 => Ok((a, b)),
        s => Err(Error::Dim(format!("expected [2, 4m, 4n] CSI tensor, got {:?}", s))),
    }
}

// ── Plain (inference) forwards ───────────────────────────────────────

/// Encoder forward pass; `[2, H, W] -> [2, H/4, W/4]`.
pub fn encode_features(h: &Tensor, enc: &ParamSet) -> Result<Tensor> {
    check_csi_shape(h)?;
    let t = enc.tensors();
    let x = tensor::bias_add_channel(&tensor::conv2d_same(h, &t[0])?, &t[1])?;
    let x = tensor::relu(&x);
    let (x, _) = tensor::maxpool2(&x)?;
    let x = tensor::bias_add_channel(&tensor::conv2d_same(&x, &t[2])?, &t[3])?;
    let x = tensor::relu(&x);
    let (x, _) = tensor::maxpool2(&x)?;
    let x = tensor::bias_add_channel(&tensor::conv2d_same(&x, &t[4])?, &t[5])?;
    Ok(x)
}

/// Decoder forward pass; `[2, H/4, W/4] -> [2, H, W]`.
pub fn decode_features(zhat: &Tensor, dec: &ParamSet) -> Result<Tensor> {
    let t = dec.tensors();
    let x = tensor::bias_add_channel(&tensor::conv2d_same(zhat, &t[0])?, &t[1])?;
    let x = tensor::relu(&x);
    let x = tensor::upsample2(&x)?;
    let x = tensor::bias_add_channel(&tensor::conv2d_same(&x, &t[2])?, &t[3])?;
    let x = tensor::relu(&x);
    let x = tensor::upsample2(&x)?;
    let x = tensor::bias_add_channel(&tensor::conv2d_same(&x, &t[4])?, &t[5])?;
    Ok(x)
}

// ── Tape forwards ────────────────────────────────────────────────────

/// Tape node handles for a parameter set, in canonical order.
#[derive(Debug, Clone)]
pub struct TapeParams {
    pub ids: Vec<NodeId>,
}

/// Register every parameter tensor as a tape leaf.
pub fn register_params(tape: &mut Tape, params: &ParamSet, requires_grad: bool) -> TapeParams {
    TapeParams {
        ids: params.tensors().iter().map(|t| tape.leaf(t.clone(), requires_grad)).collect(),
    }
}

impl TapeParams {
    fn conv(&self, layer: usize) -> (NodeId, NodeId) {
        (self.ids[2 * layer], self.ids[2 * layer + 1])
    }

    fn prior(&self, ch: usize, slot: usize) -> NodeId {
        self.ids[CONV_SLOTS + ch * PRIOR_SLOTS + slot]
    }
}

pub fn encode_features_on(tape: &mut Tape, h: NodeId, enc: &TapeParams) -> Result<NodeId> {
    check_csi_shape(tape.value(h))?;
    let (k1, b1) = enc.conv(0);
    let (k2, b2) = enc.conv(1);
    let (k3, b3) = enc.conv(2);
    let mut x = tape.conv2d(h, k1)?;
    x = tape.bias_add(x, b1)?;
    x = tape.relu(x);
    x = tape.maxpool2(x)?;
    x = tape.conv2d(x, k2)?;
    x = tape.bias_add(x, b2)?;
    x = tape.relu(x);
    x = tape.maxpool2(x)?;
    x = tape.conv2d(x, k3)?;
    tape.bias_add(x, b3)
}

pub fn decode_features_on(tape: &mut Tape, z: NodeId, dec: &TapeParams) -> Result<NodeId> {
    let (k1, b1) = dec.conv(0);
    let (k2, b2) = dec.conv(1);
    let (k3, b3) = dec.conv(2);
    let mut x = tape.conv2d(z, k1)?;
    x = tape.bias_add(x, b1)?;
    x = tape.relu(x);
    x = tape.upsample2(x)?;
    x = tape.conv2d(x, k2)?;
    x = tape.bias_add(x, b2)?;
    x = tape.relu(x);
    x = tape.upsample2(x)?;
    x = tape.conv2d(x, k3)?;
    tape.bias_add(x, b3)
}

/// Monotone CDF of one latent channel's prior, evaluated elementwise on a
/// `[1, h, w]` node.
fn prior_cdf_on(tape: &mut Tape, x: NodeId, dec: &TapeParams, ch: usize) -> Result<NodeId> {
    let w = PRIOR_WIDTH;
    // layer 1: 1 -> w
    let w1 = tape.softplus(dec.prior(ch, 0));
    let k1 = tape.reshape(w1, &[w, 1, 1, 1])?;
    let mut u = tape.conv2d(x, k1)?;
    u = tape.bias_add(u, dec.prior(ch, 1))?;
    let a1 = tape.tanh(dec.prior(ch, 2));
    let t1 = tape.tanh(u);
    let gated = tape.mul_channel(t1, a1)?;
    let g1 = tape.add(u, gated)?;
    // layer 2: w -> w
    let w2 = tape.softplus(dec.prior(ch, 3));
    let k2 = tape.reshape(w2, &[w, w, 1, 1])?;
    let mut u = tape.conv2d(g1, k2)?;
    u = tape.bias_add(u, dec.prior(ch, 4))?;
    let a2 = tape.tanh(dec.prior(ch, 5));
    let t2 = tape.tanh(u);
    let gated = tape.mul_channel(t2, a2)?;
    let g2 = tape.add(u, gated)?;
    // layer 3: w -> 1, sigmoid
    let w3 = tape.softplus(dec.prior(ch, 6));
    let k3 = tape.reshape(w3, &[1, w, 1, 1])?;
    let mut u = tape.conv2d(g2, k3)?;
    u = tape.bias_add(u, dec.prior(ch, 7))?;
    Ok(tape.sigmoid(u))
}

/// Differentiable latent rate in bits: `sum -log2 max(c(z+1/2) - c(z-1/2),
/// floor)` over all latent elements, channels under their own priors.
pub fn latent_rate_bits_on(tape: &mut Tape, z: NodeId, dec: &TapeParams) -> Result<NodeId> {
    let channels = tape.value(z).shape()[0];
    let mut total: Option<NodeId> = None;
    for ch in 0..channels {
        let xc = tape.slice_channels(z, ch, ch + 1)?;
        let hi_in = tape.add_scalar(xc, 0.5);
        let lo_in = tape.add_scalar(xc, -0.5);
        let hi = prior_cdf_on(tape, hi_in, dec, ch)?;
        let lo = prior_cdf_on(tape, lo_in, dec, ch)?;
        let p = tape.sub(hi, lo)?;
        let p = tape.lower_bound(p, PMF_FLOOR);
        let lnp = tape.ln(p);
        let s = tape.sum_all(lnp);
        let bits = tape.scale(s, -1.0 / std::f64::consts::LN_2);
        total = Some(match total {
            Some(t) => tape.add(t, bits)?,
            None => bits,
        });
    }
    total.ok_or_else(|| Error::Dim("latent with zero channels".into()))
}

// ── Plain prior evaluation (coder side) ──────────────────────────────

/// Snapshot of one channel's prior parameters for scalar evaluation.
#[derive(Debug, Clone)]
struct PriorChannel {
    w1: Vec<f64>,
    b1: Vec<f64>,
    a1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    a2: Vec<f64>,
    w3: Vec<f64>,
    b3: f64,
}

impl PriorChannel {
    fn cdf(&self, x: f64) -> f64 {
        let w = PRIOR_WIDTH;
        let mut g1 = [0.0; PRIOR_WIDTH];
        for j in 0..w {
            let u = tensor::softplus_scalar(self.w1[j]) * x + self.b1[j];
            g1[j] = u + self.a1[j].tanh() * u.tanh();
        }
        let mut g2 = [0.0; PRIOR_WIDTH];
        for j in 0..w {
            let mut u = self.b2[j];
            for i in 0..w {
                u += tensor::softplus_scalar(self.w2[j * w + i]) * g1[i];
            }
            g2[j] = u + self.a2[j].tanh() * u.tanh();
        }
        let mut u = self.b3;
        for i in 0..w {
            u += tensor::softplus_scalar(self.w3[i]) * g2[i];
        }
        tensor::sigmoid_scalar(u)
    }
}

/// Factorized latent prior extracted from decoder parameters: one monotone
/// CDF network per latent channel, with the alphabet pmf floor and the tail
/// mass bound of the design.
#[derive(Debug, Clone)]
pub struct FactorizedPrior {
    channels: Vec<PriorChannel>,
    pub tail_mass: f64,
}

impl FactorizedPrior {
    pub fn from_params(dec: &ParamSet) -> Result<Self> {
        let mut channels = Vec::with_capacity(LATENT_CHANNELS);
        for ch in 0..LATENT_CHANNELS {
            let grab = |suffix: &str| -> Result<Vec<f64>> {
                dec.get(&format!("prior.ch{}.{}", ch, suffix))
                    .map(|t| t.data().to_vec())
                    .ok_or_else(|| Error::Config(format!("missing prior.ch{}.{}", ch, suffix)))
            };
            channels.push(PriorChannel {
                w1: grab("w1")?,
                b1: grab("b1")?,
                a1: grab("a1")?,
                w2: grab("w2")?,
                b2: grab("b2")?,
                a2: grab("a2")?,
                w3: grab("w3")?,
                b3: grab("b3")?[0],
            });
        }
        Ok(FactorizedPrior { channels, tail_mass: TAIL_MASS })
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn cdf(&self, channel: usize, x: f64) -> f64 {
        self.channels[channel].cdf(x)
    }

    /// Floored, renormalized pmf over the coder alphabet
    /// `[-ALPHABET_MAX, ALPHABET_MAX]`.
    pub fn pmf_table(&self, channel: usize) -> Vec<f64> {
        let n = (2 * ALPHABET_MAX + 1) as usize;
        let mut pmf = Vec::with_capacity(n);
        let mut lo = self.cdf(channel, -(ALPHABET_MAX as f64) - 0.5);
        for k in -ALPHABET_MAX..=ALPHABET_MAX {
            let hi = self.cdf(channel, k as f64 + 0.5);
            pmf.push((hi - lo).max(PMF_FLOOR));
            lo = hi;
        }
        let sum: f64 = pmf.iter().sum();
        for p in &mut pmf {
            *p /= sum;
        }
        pmf
    }

    /// Probability of one integer symbol under the floored, renormalized
    /// alphabet pmf.
    pub fn bin_probability(&self, channel: usize, symbol: i64) -> Result<f64> {
        if symbol.abs() > ALPHABET_MAX {
            return Err(Error::Coder(format!("symbol {} outside alphabet", symbol)));
        }
        Ok(self.pmf_table(channel)[(symbol + ALPHABET_MAX) as usize])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_is_deterministic_and_sized() {
        let (e1, d1) = init(3);
        let (e2, d2) = init(3);
        assert_eq!(e1, e2);
        assert_eq!(d1, d2);
        let (e3, _) = init(4);
        assert_ne!(e1, e3);

        assert_eq!(e1.n_scalars(), 108_930);
        assert_eq!(d1.n_scalars(), 108_986);

        // canonical flat ordering survives a flatten/assign cycle
        let flat = d1.flatten();
        let mut d4 = d1.clone();
        d4.assign_flat(&flat).unwrap();
        assert_eq!(d1, d4);
    }

    #[test]
    fn forward_shapes_and_finiteness() {
        let (enc, dec) = init(1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = Tensor::from_fn(&[2, 64, 64], |_| rng.gen_range(-1.0..1.0));
        let z = encode_features(&h, &enc).unwrap();
        assert_eq!(z.shape(), &[2, 16, 16]);
        assert!(z.is_finite());
        let hr = decode_features(&z, &dec).unwrap();
        assert_eq!(hr.shape(), &[2, 64, 64]);
        assert!(hr.is_finite());

        // dimension-reduction factor 16
        assert_eq!(h.numel() / z.numel(), 16);

        let bad = Tensor::zeros(&[2, 62, 64]);
        assert!(encode_features(&bad, &enc).is_err());
    }

    #[test]
    fn end_to_end_shape_256() {
        let (enc, dec) = init(2);
        let h = Tensor::from_fn(&[2, 256, 256], |i| ((i % 97) as f64 - 48.0) / 48.0);
        let z = encode_features(&h, &enc).unwrap();
        assert_eq!(z.shape(), &[2, 64, 64]);
        let hr = decode_features(&z, &dec).unwrap();
        assert_eq!(hr.shape(), &[2, 256, 256]);
    }

    #[test]
    fn zero_input_gives_constant_latent() {
        let (enc, _) = init(7);
        let z = encode_features(&Tensor::zeros(&[2, 16, 16]), &enc).unwrap();
        // per channel all positions equal (pure bias propagation)
        for ch in 0..2 {
            let plane = &z.data()[ch * 16..(ch + 1) * 16];
            for v in plane {
                assert!((v - plane[0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let (enc, dec) = init(9);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = Tensor::from_fn(&[2, 16, 16], |_| rng.gen_range(-1.0..1.0));
        let plain_z = encode_features(&h, &enc).unwrap();
        let plain_h = decode_features(&plain_z, &dec).unwrap();

        let mut tape = Tape::new();
        let hn = tape.leaf(h, false);
        let ep = register_params(&mut tape, &enc, false);
        let dp = register_params(&mut tape, &dec, false);
        let zn = encode_features_on(&mut tape, hn, &ep).unwrap();
        assert_eq!(tape.value(zn), &plain_z);
        let hr = decode_features_on(&mut tape, zn, &dp).unwrap();
        assert_eq!(tape.value(hr), &plain_h);
    }

    #[test]
    fn prior_cdf_monotone_and_bounded() {
        // random parameter settings, not just the init
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let (_, mut dec) = init(rng.gen());
            for name in ["w1", "b1", "a1", "w2", "b2", "a2", "w3", "b3"] {
                for ch in 0..LATENT_CHANNELS {
                    let key = format!("prior.ch{}.{}", ch, name);
                    let idx = dec.names().iter().position(|n| *n == key).unwrap();
                    for v in dec.tensors_mut()[idx].data_mut() {
                        *v += rng.gen_range(-2.0..2.0);
                    }
                }
            }
            let prior = FactorizedPrior::from_params(&dec).unwrap();
            for ch in 0..LATENT_CHANNELS {
                let mut last = -1.0;
                let mut x = -300.0;
                while x <= 300.0 {
                    let c = prior.cdf(ch, x);
                    assert!(c >= last - 1e-12, "cdf decreased at {}", x);
                    assert!((0.0..=1.0).contains(&c));
                    last = c;
                    x += 7.3;
                }
                assert!(prior.cdf(ch, -1e4) < 1e-6);
                assert!(prior.cdf(ch, 1e4) > 1.0 - 1e-6);
            }
        }
    }

    #[test]
    fn init_pmf_symmetric_peak_and_rate() {
        let (_, dec) = init(11);
        let prior = FactorizedPrior::from_params(&dec).unwrap();
        for ch in 0..LATENT_CHANNELS {
            let pmf = prior.pmf_table(ch);
            let sum: f64 = pmf.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            // P(0) maximal under the symmetric init
            let center = pmf[ALPHABET_MAX as usize];
            assert!(pmf.iter().all(|p| *p <= center + 1e-15));
            assert!(pmf.iter().all(|p| *p >= 0.0));
        }

        // initial rate on unit-variance latents lands between 1 and 8
        // bits per element
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut bits = 0.0;
        let n = 4000;
        for _ in 0..n {
            let z: f64 = {
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            };
            let sym = z.round().clamp(-(ALPHABET_MAX as f64), ALPHABET_MAX as f64) as i64;
            bits += -prior.bin_probability(0, sym).unwrap().log2();
        }
        let per = bits / n as f64;
        assert!((1.0..8.0).contains(&per), "init rate {} bits/element", per);
    }

    #[test]
    fn tape_prior_matches_plain_prior() {
        let (_, dec) = init(13);
        let prior = FactorizedPrior::from_params(&dec).unwrap();
        let mut tape = Tape::new();
        let dp = register_params(&mut tape, &dec, false);
        let xs = Tensor::new(vec![1, 1, 5], vec![-3.0, -0.5, 0.0, 1.2, 9.0]).unwrap();
        let xn = tape.leaf(xs.clone(), false);
        for ch in 0..LATENT_CHANNELS {
            let c = prior_cdf_on(&mut tape, xn, &dp, ch).unwrap();
            for (i, x) in xs.data().iter().enumerate() {
                let plain = prior.cdf(ch, *x);
                let taped = tape.value(c).data()[i];
                assert!((plain - taped).abs() < 1e-14, "{} vs {}", plain, taped);
            }
        }
    }

    #[test]
    fn fd_latent_rate_gradients() {
        // gradient of the relaxed rate w.r.t. latents and prior parameters
        let (_, dec) = init(17);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let z0 = Tensor::from_fn(&[2, 2, 2], |_| rng.gen_range(-2.0..2.0));

        let eval = |z: &Tensor, dec: &ParamSet| -> f64 {
            let mut tape = Tape::new();
            let zn = tape.leaf(z.clone(), false);
            let dp = register_params(&mut tape, dec, false);
            let r = latent_rate_bits_on(&mut tape, zn, &dp).unwrap();
            tape.value(r).item()
        };

        // z gradient
        let mut tape = Tape::new();
        let zn = tape.leaf(z0.clone(), true);
        let dp = register_params(&mut tape, &dec, true);
        let r = latent_rate_bits_on(&mut tape, zn, &dp).unwrap();
        let grads = tape.backward(r).unwrap();
        let gz = grads.get(zn).unwrap().clone();
        let step = 1e-5;
        for j in 0..z0.numel() {
            let mut zp = z0.clone();
            zp.data_mut()[j] += step;
            let mut zm = z0.clone();
            zm.data_mut()[j] -= step;
            let fd = (eval(&zp, &dec) - eval(&zm, &dec)) / (2.0 * step);
            let a = gz.data()[j];
            assert!(
                (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6) < 1e-4,
                "z grad {}: {} vs {}",
                j,
                a,
                fd
            );
        }

        // a couple of prior parameters per channel
        for (slot, name) in [(0, "w1"), (3, "w2"), (7, "b3")] {
            for ch in 0..LATENT_CHANNELS {
                let key = format!("prior.ch{}.{}", ch, name);
                let idx = dec.names().iter().position(|n| *n == key).unwrap();
                let g = grads.get(dp.prior(ch, slot)).unwrap().clone();
                for j in 0..g.numel() {
                    let mut dp_ = dec.clone();
                    dp_.tensors_mut()[idx].data_mut()[j] += step;
                    let mut dm_ = dec.clone();
                    dm_.tensors_mut()[idx].data_mut()[j] -= step;
                    let fd = (eval(&z0, &dp_) - eval(&z0, &dm_)) / (2.0 * step);
                    let a = g.data()[j];
                    assert!(
                        (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6) < 1e-4,
                        "{} grad {}: {} vs {}",
                        key,
                        j,
                        a,
                        fd
                    );
                }
            }
        }
    }
}
