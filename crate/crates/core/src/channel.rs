//! Synthetic CSI datasets: a clustered geometric multipath generator with
//! controllable distribution shift, plus deterministic splitting and
//! power normalization.
//!
//! Each sample is a sum over paths of a complex gain times the outer product
//! of an array steering vector (antennas) and a delay phase ramp
//! (subcarriers). Shifting the scenario moves the mean angle of departure,
//! scales the spreads, or changes the path count, which changes the
//! second-order statistics a trained codec relies on.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::tensor::Tensor;

/// Fixed system bandwidth in Hz used to map path delays to per-subcarrier
/// phase slopes.
pub const BANDWIDTH_HZ: f64 = 50e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Transmit antenna count (power of two; 256 is treated as a 64x4 planar
    /// array, anything else as a linear array).
    pub n_tx: usize,
    /// Subcarrier count (power of two).
    pub n_sub: usize,
    pub n_paths: usize,
    /// Std of per-path angle offsets around the scenario mean, radians.
    pub angle_spread: f64,
    /// Mean of per-path exponential delays, seconds.
    pub delay_spread: f64,
    /// Scenario knob: mean azimuth angle of departure, radians.
    pub carrier_offset: f64,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        // angle spread well inside one array beamwidth (2/n_tx in sin space)
        // keeps the spatial correlation dominated by one eigen-direction,
        // which is the compressible structure the codec exploits
        ChannelConfig {
            n_tx: 64,
            n_sub: 64,
            n_paths: 10,
            angle_spread: 0.01,
            delay_spread: 100e-9,
            carrier_offset: 0.3,
            seed: 0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.n_tx.is_power_of_two() || self.n_tx < 4 {
            return Err(Error::Config(format!("n_tx {} must be a power of two >= 4", self.n_tx)));
        }
        if !self.n_sub.is_power_of_two() || self.n_sub < 4 {
            return Err(Error::Config(format!("n_sub {} must be a power of two >= 4", self.n_sub)));
        }
        if self.n_paths < 1 {
            return Err(Error::Config("n_paths must be >= 1".into()));
        }
        // zero spreads are allowed: they collapse the cluster to a point
        if self.angle_spread < 0.0 || self.delay_spread < 0.0 {
            return Err(Error::Config("spreads must be nonnegative".into()));
        }
        if !self.angle_spread.is_finite()
            || !self.delay_spread.is_finite()
            || !self.carrier_offset.is_finite()
        {
            return Err(Error::Config("non-finite channel configuration".into()));
        }
        Ok(())
    }

    /// Planar-array factorization (azimuth x elevation).
    pub fn array_dims(&self) -> (usize, usize) {
        if self.n_tx == 256 {
            (64, 4)
        } else {
            (self.n_tx, 1)
        }
    }

    /// Stable identifier of the generating configuration.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        format!("{:016x}", h)
    }

    /// New scenario derived from this one; identity when all deltas are zero.
    pub fn shift(&self, angle_shift: f64, spread_scale: f64, path_delta: i64) -> ChannelConfig {
        ChannelConfig {
            carrier_offset: self.carrier_offset + angle_shift,
            angle_spread: self.angle_spread * spread_scale,
            delay_spread: self.delay_spread * spread_scale,
            n_paths: (self.n_paths as i64 + path_delta).max(1) as usize,
            ..*self
        }
    }
}

/// One complex channel matrix stored as a `[2, n_tx, n_sub]` real tensor
/// (real plane then imaginary plane).
#[derive(Debug, Clone, PartialEq)]
pub struct CsiSample {
    pub h: Tensor,
}

impl CsiSample {
    pub fn squared_fro_norm(&self) -> f64 {
        self.h.data().iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsiDataset {
    pub samples: Vec<CsiSample>,
    pub n_tx: usize,
    pub n_sub: usize,
    pub normalized: bool,
    /// Fingerprint of the generating config ("ingested" for external data).
    pub fingerprint: String,
    /// Split tag: train / val / test / eval-stream.
    pub tag: Option<String>,
}

impl CsiDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_squared_fro(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.squared_fro_norm()).sum::<f64>() / self.samples.len() as f64
    }

    fn with_samples(&self, samples: Vec<CsiSample>, tag: &str) -> CsiDataset {
        CsiDataset {
            samples,
            n_tx: self.n_tx,
            n_sub: self.n_sub,
            normalized: self.normalized,
            fingerprint: self.fingerprint.clone(),
            tag: Some(tag.to_string()),
        }
    }
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller; uses two uniforms per draw, deterministic under ChaCha
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generate `count` CSI samples. Deterministic in `(config, count)`: each
/// sample draws from its own derived stream.
pub fn generate(config: &ChannelConfig, count: usize) -> Result<CsiDataset> {
    config.validate()?;
    if count < 1 {
        return Err(Error::Config("generate needs count >= 1".into()));
    }
    let (n_az, n_el) = config.array_dims();
    let subcarrier_hz = BANDWIDTH_HZ / config.n_sub as f64;
    let gain_scale = (0.5 / config.n_paths as f64).sqrt();

    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = seeded_rng(config.seed, "csi-sample", i as u64);
        let mut h = vec![Complex64::new(0.0, 0.0); config.n_tx * config.n_sub];
        for _ in 0..config.n_paths {
            let azimuth = config.carrier_offset + config.angle_spread * standard_normal(&mut rng);
            let elevation = 0.35 * config.angle_spread * standard_normal(&mut rng);
            let delay = -config.delay_spread * (1.0 - rng.gen::<f64>()).ln();
            let gain = Complex64::new(
                gain_scale * standard_normal(&mut rng),
                gain_scale * standard_normal(&mut rng),
            );

            // half-wavelength steering, azimuth x elevation factorization
            let az_phase = std::f64::consts::PI * azimuth.sin();
            let el_phase = std::f64::consts::PI * elevation.sin();
            let mut steer = Vec::with_capacity(config.n_tx);
            for m in 0..n_az {
                let a_az = Complex64::from_polar(1.0, az_phase * m as f64);
                for k in 0..n_el {
                    let a_el = Complex64::from_polar(1.0, el_phase * k as f64);
                    steer.push(a_az * a_el);
                }
            }

            let delay_step = -2.0 * std::f64::consts::PI * subcarrier_hz * delay;
            for (a, s_a) in steer.iter().enumerate() {
                let row = &mut h[a * config.n_sub..(a + 1) * config.n_sub];
                let g = gain * s_a;
                for (s, slot) in row.iter_mut().enumerate() {
                    *slot += g * Complex64::from_polar(1.0, delay_step * s as f64);
                }
            }
        }

        let mut data = Vec::with_capacity(2 * config.n_tx * config.n_sub);
        data.extend(h.iter().map(|c| c.re));
        data.extend(h.iter().map(|c| c.im));
        samples.push(CsiSample { h: Tensor::new(vec![2, config.n_tx, config.n_sub], data)? });
    }

    Ok(CsiDataset {
        samples,
        n_tx: config.n_tx,
        n_sub: config.n_sub,
        normalized: false,
        fingerprint: config.fingerprint(),
        tag: None,
    })
}

/// Deterministic shuffle-and-cut split. Fractions must sum to 1 within 1e-9.
pub fn split(
    dataset: &CsiDataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(CsiDataset, CsiDataset, CsiDataset)> {
    let (f1, f2, f3) = fractions;
    if f1 < 0.0 || f2 < 0.0 || f3 < 0.0 || ((f1 + f2 + f3) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("fractions {:?} must be nonnegative and sum to 1", fractions)));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(seed, "split-shuffle", 0);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let c1 = (f1 * n as f64).round() as usize;
    let c2 = ((f1 + f2) * n as f64).round() as usize;
    let take = |range: std::ops::Range<usize>| -> Vec<CsiSample> {
        range.map(|i| dataset.samples[order[i]].clone()).collect()
    };
    Ok((
        dataset.with_samples(take(0..c1.min(n)), "train"),
        dataset.with_samples(take(c1.min(n)..c2.min(n)), "val"),
        dataset.with_samples(take(c2.min(n)..n), "test"),
    ))
}

/// Scale every sample by one global constant so the dataset-mean squared
/// Frobenius norm equals `n_tx * n_sub`.
pub fn normalize(dataset: &CsiDataset) -> Result<CsiDataset> {
    let mean = dataset.mean_squared_fro();
    if !(mean > 0.0) {
        return Err(Error::Config("cannot normalize an empty or all-zero dataset".into()));
    }
    let target = (dataset.n_tx * dataset.n_sub) as f64;
    let scale = (target / mean).sqrt();
    let samples = dataset
        .samples
        .iter()
        .map(|s| CsiSample { h: s.h.map(|v| v * scale) })
        .collect();
    Ok(CsiDataset { samples, normalized: true, tag: dataset.tag.clone(), fingerprint: dataset.fingerprint.clone(), ..*dataset })
}

/// Spatial correlation matrix `R = E[h_s h_s^H]` over samples and
/// subcarriers, returned row-major as complex pairs. Used by stats checks.
pub fn spatial_correlation(dataset: &CsiDataset) -> Vec<Complex64> {
    let n_tx = dataset.n_tx;
    let n_sub = dataset.n_sub;
    let mut r = vec![Complex64::new(0.0, 0.0); n_tx * n_tx];
    for sample in &dataset.samples {
        let d = sample.h.data();
        for s in 0..n_sub {
            // column s of H as a complex vector over antennas
            for a in 0..n_tx {
                let ha = Complex64::new(d[a * n_sub + s], d[n_tx * n_sub + a * n_sub + s]);
                for b in 0..n_tx {
                    let hb = Complex64::new(d[b * n_sub + s], d[n_tx * n_sub + b * n_sub + s]);
                    r[a * n_tx + b] += ha * hb.conj();
                }
            }
        }
    }
    let norm = 1.0 / (dataset.samples.len().max(1) as f64 * n_sub as f64);
    for v in &mut r {
        *v *= norm;
    }
    r
}

/// Fraction of the trace captured by the dominant eigenvalue of a Hermitian
/// matrix (power iteration).
pub fn dominant_eig_fraction(r: &[Complex64], n: usize) -> f64 {
    let trace: f64 = (0..n).map(|i| r[i * n + i].re).sum();
    if trace <= 0.0 {
        return 0.0;
    }
    let mut v: Vec<Complex64> =
        (0..n).map(|i| Complex64::new(1.0 + (i as f64 * 0.13).sin(), 0.1 * (i as f64 * 0.7).cos())).collect();
    let mut lambda = 0.0;
    for _ in 0..200 {
        let mut w = vec![Complex64::new(0.0, 0.0); n];
        for a in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for b in 0..n {
                acc += r[a * n + b] * v[b];
            }
            w[a] = acc;
        }
        let norm = w.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        for c in &mut w {
            *c /= norm;
        }
        lambda = norm;
        v = w;
    }
    lambda / trace
}
