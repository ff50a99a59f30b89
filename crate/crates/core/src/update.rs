//! Quantization, prior modelling, rate measurement and lossless coding of
//! decoder model updates `delta = theta - theta0`.
//!
//! Updates are quantized to a grid of bin width `t` (round to the nearest
//! multiple, half up, then clip), modelled by a spike-and-slab Gaussian
//! mixture whose spike std `t/6` puts ~99.7% of spike mass in the central
//! bin, and range-coded with the pushed-forward bin pmf.

use crate::bitstream;
use crate::error::{Error, Result};
use crate::rangecoder::{FreqTable, RangeDecoder, RangeEncoder};

/// Probability floor / ceiling for the continuous rate surrogate, so the
/// per-parameter surrogate cost stays within [0, 16] bits.
pub const SURROGATE_FLOOR: f64 = 1.0 / 65536.0;

/// Round half up: floor(x + 0.5). Matches the update quantizer's tie rule
/// (the latent quantizer rounds half away from zero instead).
#[inline]
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Quantize one update value to the grid `{k*t : |k| <= k_max}`.
///
/// Out-of-range values clip to the outermost grid point, so the image is
/// always on-grid and the map is idempotent.
#[inline]
pub fn quantize_scalar(v: f64, t: f64, k_max: i64) -> f64 {
    let k = round_half_up(v / t) as i64;
    k.clamp(-k_max, k_max) as f64 * t
}

/// Uniform update quantizer: `N` equispaced bins of width `t`, clip bound
/// `(N-1)t/2`. The reconstruction grid is the integer multiples of `t`
/// inside the clip bound: `k in [-k_max, k_max]` with `k_max = (N-1)/2`
/// (for even `N` the half-integer clip bound truncates to the nearest
/// interior multiple so that 0 is always a grid point).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateQuantizer {
    pub t: f64,
    pub n_bins: u32,
}

impl Default for UpdateQuantizer {
    fn default() -> Self {
        UpdateQuantizer { t: 0.005, n_bins: 50 }
    }
}

impl UpdateQuantizer {
    pub fn new(t: f64, n_bins: u32) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Config(format!("bin width t must be positive, got {}", t)));
        }
        if n_bins < 2 {
            return Err(Error::Config(format!("need at least 2 bins, got {}", n_bins)));
        }
        Ok(UpdateQuantizer { t, n_bins })
    }

    /// Largest grid index: (N-1)/2 rounded down.
    pub fn k_max(&self) -> i64 {
        ((self.n_bins - 1) / 2) as i64
    }

    /// Clip bound (N-1)t/2 from the quantizer definition.
    pub fn clip_bound(&self) -> f64 {
        (self.n_bins as f64 - 1.0) * self.t / 2.0
    }

    /// Number of representable grid points (the coding alphabet size).
    pub fn grid_len(&self) -> usize {
        (2 * self.k_max() + 1) as usize
    }

    pub fn quantize(&self, values: &[f64]) -> Vec<f64> {
        let k_max = self.k_max();
        values.iter().map(|&v| quantize_scalar(v, self.t, k_max)).collect()
    }

    /// Grid indices of already-quantized values; errors on off-grid input.
    pub fn to_indices(&self, quantized: &[f64]) -> Result<Vec<i64>> {
        let k_max = self.k_max();
        quantized
            .iter()
            .map(|&v| {
                let k = (v / self.t).round() as i64;
                if k.abs() > k_max || (v - k as f64 * self.t).abs() > 1e-9 {
                    Err(Error::Coder(format!("value {} is off the update grid", v)))
                } else {
                    Ok(k)
                }
            })
            .collect()
    }

    pub fn from_indices(&self, indices: &[i64]) -> Vec<f64> {
        indices.iter().map(|&k| k as f64 * self.t).collect()
    }
}

/// Flat model-update vector in canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateVector {
    pub values: Vec<f64>,
    pub quantized: bool,
}

impl UpdateVector {
    pub fn raw(values: Vec<f64>) -> Self {
        UpdateVector { values, quantized: false }
    }

    pub fn quantize(&self, q: &UpdateQuantizer) -> UpdateVector {
        UpdateVector { values: q.quantize(&self.values), quantized: true }
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }
}

fn normal_cdf(x: f64, std: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / (std * std::f64::consts::SQRT_2)))
}

fn normal_pdf(x: f64, std: f64) -> f64 {
    let z = x / std;
    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

/// Zero-mean Gaussian mixture prior for model updates:
/// `p(d) = (N(0, sigma^2) + alpha * N(0, (t/6)^2)) / (1 + alpha)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeSlabPrior {
    pub sigma: f64,
    pub t: f64,
    pub alpha: f64,
}

impl Default for SpikeSlabPrior {
    fn default() -> Self {
        SpikeSlabPrior { sigma: 0.05, t: 0.005, alpha: 1000.0 }
    }
}

impl SpikeSlabPrior {
    pub fn new(sigma: f64, t: f64, alpha: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::Config(format!("spike scale t must be positive, got {}", t)));
        }
        // slab must stay much wider than the spike
        if !(sigma >= 5.0 * t / 6.0) {
            return Err(Error::Config(format!(
                "slab std {} too narrow for spike std {}",
                sigma,
                t / 6.0
            )));
        }
        if !(alpha >= 0.0) {
            return Err(Error::Config(format!("spike weight alpha must be >= 0, got {}", alpha)));
        }
        Ok(SpikeSlabPrior { sigma, t, alpha })
    }

    pub fn spike_std(&self) -> f64 {
        self.t / 6.0
    }

    pub fn density(&self, d: f64) -> f64 {
        (normal_pdf(d, self.sigma) + self.alpha * normal_pdf(d, self.spike_std())) / (1.0 + self.alpha)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        (normal_cdf(x, self.sigma) + self.alpha * normal_cdf(x, self.spike_std())) / (1.0 + self.alpha)
    }
}

/// Prior used for coding updates: the spike-and-slab design, or a uniform
/// pmf over the grid (the ablation baseline).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdatePrior {
    SpikeSlab(SpikeSlabPrior),
    Uniform,
}

impl UpdatePrior {
    /// Pushed-forward pmf over the quantizer grid. Interior bins integrate
    /// the density over `[dbar - t/2, dbar + t/2]`; the two edge bins absorb
    /// the clipped tails, so the table sums to 1.
    pub fn pmf_table(&self, q: &UpdateQuantizer) -> Vec<f64> {
        let k_max = q.k_max();
        let n = q.grid_len();
        match self {
            UpdatePrior::Uniform => vec![1.0 / n as f64; n],
            UpdatePrior::SpikeSlab(p) => {
                if k_max == 0 {
                    return vec![1.0];
                }
                let mut pmf = Vec::with_capacity(n);
                for k in -k_max..=k_max {
                    let center = k as f64 * q.t;
                    let mass = if k == -k_max {
                        p.cdf(center + q.t / 2.0)
                    } else if k == k_max {
                        1.0 - p.cdf(center - q.t / 2.0)
                    } else {
                        p.cdf(center + q.t / 2.0) - p.cdf(center - q.t / 2.0)
                    };
                    pmf.push(mass.max(0.0));
                }
                pmf
            }
        }
    }

    /// Probability of one grid value under the pushed-forward pmf.
    pub fn bin_pmf(&self, dbar: f64, q: &UpdateQuantizer) -> Result<f64> {
        let idx = q.to_indices(&[dbar])?[0];
        Ok(self.pmf_table(q)[(idx + q.k_max()) as usize])
    }
}

/// Discrete update rate: `sum -log2 pmf[dbar_i]` in bits.
pub fn update_rate_discrete(quantized: &[f64], prior: &UpdatePrior, q: &UpdateQuantizer) -> Result<f64> {
    let pmf = prior.pmf_table(q);
    let k_max = q.k_max();
    let indices = q.to_indices(quantized)?;
    Ok(indices.iter().map(|&k| -pmf[(k + k_max) as usize].log2()).sum())
}

/// Continuous training surrogate: `sum -log2 clamp(p(d_i) * t, floor, 1)`.
/// The bin-width factor makes the argument a probability-like mass; the
/// clamp keeps each term in [0, 16] bits.
pub fn update_rate_continuous(raw: &[f64], prior: &SpikeSlabPrior, q: &UpdateQuantizer) -> f64 {
    raw.iter()
        .map(|&d| -(prior.density(d) * q.t).clamp(SURROGATE_FLOOR, 1.0).log2())
        .sum()
}

// ── Wire format ──────────────────────────────────────────────────────
//
// Section payload: f32 t, u16 N, f32 sigma, f32 alpha, u32 len, then the
// range-coded indices. A uniform prior is flagged by sigma == 0 && alpha == 0
// (invalid as a spike-and-slab configuration, so unambiguous).

const HEADER_LEN: usize = 18;

fn prior_sentinel(prior: &UpdatePrior) -> (f32, f32) {
    match prior {
        UpdatePrior::SpikeSlab(p) => (p.sigma as f32, p.alpha as f32),
        UpdatePrior::Uniform => (0.0, 0.0),
    }
}

fn freq_table(prior: &UpdatePrior, q: &UpdateQuantizer) -> Result<FreqTable> {
    FreqTable::from_probabilities(&prior.pmf_table(q))
}

/// Entropy-encode a quantized update vector into a model-update section
/// payload for the bitstream container.
pub fn encode_update(quantized: &[f64], prior: &UpdatePrior, q: &UpdateQuantizer) -> Result<Vec<u8>> {
    let indices = q.to_indices(quantized)?;
    let table = freq_table(prior, q)?;
    let k_max = q.k_max();
    let mut enc = RangeEncoder::new();
    for &k in &indices {
        enc.encode(&table, (k + k_max) as usize)?;
    }
    let coded = enc.finish();

    let (sigma, alpha) = prior_sentinel(prior);
    let mut payload = Vec::with_capacity(HEADER_LEN + coded.len());
    payload.extend_from_slice(&(q.t as f32).to_le_bytes());
    payload.extend_from_slice(&(q.n_bins as u16).to_le_bytes());
    payload.extend_from_slice(&sigma.to_le_bytes());
    payload.extend_from_slice(&alpha.to_le_bytes());
    payload.extend_from_slice(&(quantized.len() as u32).to_le_bytes());
    payload.extend_from_slice(&coded);
    Ok(payload)
}

/// Decode a model-update section. The caller supplies the prior and
/// quantizer it expects; the section header must agree (this is how a
/// decoder detects configuration drift before trusting the symbols).
pub fn decode_update(
    payload: &[u8],
    prior: &UpdatePrior,
    q: &UpdateQuantizer,
    expected_len: usize,
) -> Result<Vec<f64>> {
    if payload.len() < HEADER_LEN {
        return Err(Error::format(payload.len() as u64, "model-update section too short"));
    }
    let t = f32::from_le_bytes(payload[0..4].try_into().unwrap());
    let n = u16::from_le_bytes(payload[4..6].try_into().unwrap());
    let sigma = f32::from_le_bytes(payload[6..10].try_into().unwrap());
    let alpha = f32::from_le_bytes(payload[10..14].try_into().unwrap());
    let len = u32::from_le_bytes(payload[14..18].try_into().unwrap()) as usize;

    if t != q.t as f32 || n as u32 != q.n_bins {
        return Err(Error::Coder(format!(
            "quantizer mismatch: section (t={}, N={}) vs expected (t={}, N={})",
            t, n, q.t, q.n_bins
        )));
    }
    let (exp_sigma, exp_alpha) = prior_sentinel(prior);
    if sigma != exp_sigma || alpha != exp_alpha {
        return Err(Error::Coder(format!(
            "prior mismatch: section (sigma={}, alpha={}) vs expected (sigma={}, alpha={})",
            sigma, alpha, exp_sigma, exp_alpha
        )));
    }
    if len != expected_len {
        return Err(Error::Coder(format!(
            "update length mismatch: section {} vs expected {}",
            len, expected_len
        )));
    }

    let table = freq_table(prior, q)?;
    let k_max = q.k_max();
    let mut dec = RangeDecoder::new(&payload[HEADER_LEN..])?;
    let mut indices = Vec::with_capacity(len);
    for _ in 0..len {
        indices.push(dec.decode(&table)? as i64 - k_max);
    }
    Ok(q.from_indices(&indices))
}

/// Convenience: wrap an encoded update in a single-section bitstream.
pub fn update_section_bits(payload: &[u8]) -> f64 {
    8.0 * payload.len() as f64
}

pub use bitstream::SECTION_MODEL_UPDATE;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Adaptive Simpson quadrature, the independent oracle for bin masses.
    fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fb: f64, fm: f64, eps: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
            left + right + (left + right - whole) / 15.0
        } else {
            simpson(f, a, m, fa, fm, flm, eps / 2.0, depth - 1)
                + simpson(f, m, b, fm, fb, frm, eps / 2.0, depth - 1)
        }
    }

    fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
        let fa = f(a);
        let fb = f(b);
        let fm = f(0.5 * (a + b));
        simpson(&f, a, b, fa, fb, fm, eps, 48)
    }

    #[test]
    fn quantize_examples() {
        let q = UpdateQuantizer::default(); // t = 0.005, N = 50
        assert_eq!(q.k_max(), 24);
        assert_eq!(q.grid_len(), 49);
        assert_eq!(quantize_scalar(0.0, q.t, q.k_max()), 0.0);
        // 0.0074 / 0.005 = 1.48 -> rounds to 1 -> 0.005
        assert_eq!(quantize_scalar(0.0074, q.t, q.k_max()), 0.005);
        // clipping: 1.0 is far outside, lands on the outermost grid point
        // 24 * 0.005 = 0.12 (the nearest on-grid value inside the clip
        // bound (N-1)t/2 = 0.1225)
        assert_eq!(quantize_scalar(1.0, q.t, q.k_max()), 0.12);
        assert!((q.clip_bound() - 0.1225).abs() < 1e-15);
        // round-half-up tie rule
        assert_eq!(quantize_scalar(0.0025, q.t, q.k_max()), 0.005);
        assert_eq!(quantize_scalar(-0.0025, q.t, q.k_max()), -0.0);
    }

    #[test]
    fn quantize_idempotent_and_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &(t, n) in &[(0.005, 50u32), (0.01, 7), (0.002, 256), (0.005, 2)] {
            let q = UpdateQuantizer::new(t, n).unwrap();
            let vals: Vec<f64> = (0..500).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let quant = q.quantize(&vals);
            let again = q.quantize(&quant);
            assert_eq!(quant, again, "idempotence failed for t={}, n={}", t, n);
            let idx = q.to_indices(&quant).unwrap();
            assert!(idx.iter().all(|k| k.abs() <= q.k_max()));
        }
    }

    #[test]
    fn off_grid_value_is_error() {
        let q = UpdateQuantizer::default();
        assert!(q.to_indices(&[0.0051]).is_err());
        assert!(q.to_indices(&[10.0]).is_err());
        assert!(q.to_indices(&[0.005, -0.12, 0.0]).is_ok());
    }

    #[test]
    fn density_examples() {
        // alpha = 0 -> pure slab
        let p = SpikeSlabPrior::new(0.05, 0.005, 0.0).unwrap();
        let slab_only = (0.0f64.powi(2) / -2.0).exp() / (0.05 * (2.0 * std::f64::consts::PI).sqrt());
        assert!((p.density(0.0) - slab_only).abs() < 1e-12);

        // spike dominates at zero for large alpha
        let p = SpikeSlabPrior::new(0.05, 0.005, 1000.0).unwrap();
        let spike_part = 1000.0 * normal_pdf(0.0, p.spike_std());
        let slab_part = normal_pdf(0.0, 0.05);
        assert!(spike_part / slab_part > 1e4);

        // density integrates to 1 (adaptive quadrature oracle)
        let total = integrate(|x| p.density(x), -0.6, 0.6, 1e-12)
            + (1.0 - p.cdf(0.6))
            + p.cdf(-0.6);
        assert!((total - 1.0).abs() < 1e-9, "integral {}", total);
    }

    #[test]
    fn invalid_priors_rejected() {
        assert!(SpikeSlabPrior::new(0.001, 0.005, 10.0).is_err()); // slab narrower than 5*t/6
        assert!(SpikeSlabPrior::new(0.05, -1.0, 10.0).is_err());
        assert!(SpikeSlabPrior::new(0.05, 0.005, -0.5).is_err());
    }

    #[test]
    fn near_pure_spike_central_mass() {
        // paper figure: spike std t/6 puts ~99.7% of spike mass in the
        // central bin
        let q = UpdateQuantizer::default();
        let p = UpdatePrior::SpikeSlab(SpikeSlabPrior::new(0.05, 0.005, 1e9).unwrap());
        let center = p.bin_pmf(0.0, &q).unwrap();
        assert!((center - 0.9973).abs() < 5e-4, "central mass {}", center);
    }

    #[test]
    fn pmf_sums_to_one_and_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..50 {
            let t = rng.gen_range(0.001..0.02);
            let n = rng.gen_range(2..128u32);
            let sigma = rng.gen_range(1.0..30.0) * t;
            let alpha = rng.gen_range(0.0..2000.0);
            let q = UpdateQuantizer::new(t, n).unwrap();
            let prior = match SpikeSlabPrior::new(sigma, t, alpha) {
                Ok(p) => UpdatePrior::SpikeSlab(p),
                Err(_) => continue,
            };
            let pmf = prior.pmf_table(&q);
            let sum: f64 = pmf.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "pmf sum {} for t={} n={}", sum, t, n);
        }

        // bin masses against the quadrature oracle
        let q = UpdateQuantizer::default();
        let sp = SpikeSlabPrior::new(0.05, 0.005, 100.0).unwrap();
        let prior = UpdatePrior::SpikeSlab(sp);
        let pmf = prior.pmf_table(&q);
        for k in [-1i64, 0, 1, 7] {
            let c = k as f64 * q.t;
            let oracle = integrate(|x| sp.density(x), c - q.t / 2.0, c + q.t / 2.0, 1e-13);
            let got = pmf[(k + q.k_max()) as usize];
            assert!((got - oracle).abs() < 1e-10, "bin {}: {} vs {}", k, got, oracle);
        }
    }

    #[test]
    fn bin0_probability_nondecreasing_in_alpha() {
        let q = UpdateQuantizer::default();
        let mut last = 0.0;
        for alpha in [0.0, 1.0, 10.0, 100.0, 1000.0, 1e6] {
            let p = UpdatePrior::SpikeSlab(SpikeSlabPrior::new(0.05, 0.005, alpha).unwrap());
            let c = p.bin_pmf(0.0, &q).unwrap();
            assert!(c >= last, "alpha {} decreased central mass", alpha);
            last = c;
        }
    }

    #[test]
    fn rates_zero_vector_and_uniform() {
        let q = UpdateQuantizer::default();
        let len = 1000usize;
        let zeros = vec![0.0; len];

        // near-pure spike: ~ -log2(0.9973) = 0.0039 bits per parameter
        let p = UpdatePrior::SpikeSlab(SpikeSlabPrior::new(0.05, 0.005, 1e9).unwrap());
        let bits = update_rate_discrete(&zeros, &p, &q).unwrap();
        let per = bits / len as f64;
        assert!((per - 0.0039).abs() < 5e-4, "bits/param {}", per);

        // uniform prior: log2(grid) bits per parameter
        let u = UpdatePrior::Uniform;
        let bits = update_rate_discrete(&zeros, &u, &q).unwrap();
        assert!((bits / len as f64 - (q.grid_len() as f64).log2()).abs() < 1e-12);
    }

    #[test]
    fn continuous_surrogate_shape() {
        let q = UpdateQuantizer::default();
        let p = SpikeSlabPrior::default();
        // at zero the mass estimate saturates the ceiling -> 0 bits
        assert_eq!(update_rate_continuous(&[0.0], &p, &q), 0.0);
        // a slab-scale value costs bits, and more than a smaller one
        let far = update_rate_continuous(&[0.08], &p, &q);
        let near = update_rate_continuous(&[0.02], &p, &q);
        assert!(far > near && near > 0.0, "far {} near {}", far, near);
        // pure slab closed form: -log2(pdf(0) * t)
        let slab = SpikeSlabPrior::new(0.5, 0.005, 0.0).unwrap();
        let expect = -(normal_pdf(0.0, 0.5) * q.t).log2();
        assert!((update_rate_continuous(&[0.0], &slab, &q) - expect).abs() < 1e-12);
    }

    #[test]
    fn roundtrip_and_rate_accounting() {
        let q = UpdateQuantizer::default();
        let sp = SpikeSlabPrior::default();
        let prior = UpdatePrior::SpikeSlab(sp);
        let mut rng = ChaCha8Rng::seed_from_u64(23);

        // sparse vector resembling trained updates
        let len = 218_000usize;
        let raw: Vec<f64> = (0..len)
            .map(|_| {
                if rng.gen_bool(0.01) {
                    rng.gen_range(-0.08..0.08)
                } else {
                    rng.gen_range(-0.001..0.001)
                }
            })
            .collect();
        let quant = q.quantize(&raw);
        let payload = encode_update(&quant, &prior, &q).unwrap();
        let back = decode_update(&payload, &prior, &q, len).unwrap();
        assert_eq!(quant, back);

        // rate estimate vs actual coded size: within 2% + 32 bytes
        let est = update_rate_discrete(&quant, &prior, &q).unwrap();
        let actual = 8.0 * (payload.len() - 18) as f64;
        assert!(actual >= est, "actual {} < entropy {}", actual, est);
        assert!(actual <= est * 1.02 + 256.0, "actual {} vs bound {}", actual, est * 1.02 + 256.0);

        // the same sparse vector under a uniform prior is much larger
        let upay = encode_update(&quant, &UpdatePrior::Uniform, &q).unwrap();
        assert!(
            upay.len() as f64 >= 5.0 * payload.len() as f64,
            "uniform {} vs spike-slab {}",
            upay.len(),
            payload.len()
        );
    }

    #[test]
    fn all_zero_vector_codes_tiny() {
        let q = UpdateQuantizer::default();
        let prior = UpdatePrior::SpikeSlab(SpikeSlabPrior::default());
        let len = 100_000usize;
        let payload = encode_update(&vec![0.0; len], &prior, &q).unwrap();
        let bits_per_param = 8.0 * payload.len() as f64 / len as f64;
        assert!(bits_per_param < 0.01 + 8.0 * 64.0 / len as f64, "bits/param {}", bits_per_param);
    }

    #[test]
    fn header_mismatch_rejected() {
        let q = UpdateQuantizer::default();
        let prior = UpdatePrior::SpikeSlab(SpikeSlabPrior::default());
        let quant = q.quantize(&[0.0, 0.005, -0.01]);
        let payload = encode_update(&quant, &prior, &q).unwrap();

        let other_q = UpdateQuantizer::new(0.01, 50).unwrap();
        assert!(decode_update(&payload, &prior, &other_q, 3).is_err());
        let other_p = UpdatePrior::SpikeSlab(SpikeSlabPrior::new(0.1, 0.005, 1000.0).unwrap());
        assert!(decode_update(&payload, &other_p, &q, 3).is_err());
        assert!(decode_update(&payload, &prior, &q, 4).is_err());
        assert!(decode_update(&payload, &UpdatePrior::Uniform, &q, 3).is_err());
    }
}
