//! Uplink OFDM PHY: Gray QAM mapping, CP-OFDM modulation, comb pilots with
//! least-squares channel estimation, multi-user zero-forcing and EVM/SER.
//!
//! Used subcarriers are numbered `0..used_subcarriers` in increasing
//! frequency. The first half sits below DC and the second half above it;
//! DC itself is never used.
//!
//! Gray mappings (`b0` is the first bit of each group):
//!
//! * QPSK: `(1 - 2·b0 + j(1 - 2·b1)) / √2`, so `00 -> (1 + j)/√2`.
//! * 16-QAM: `(I + jQ) / √10`; I from `(b0, b1)` and Q from `(b2, b3)` with
//!   `00 -> +3`, `01 -> +1`, `11 -> -1`, `10 -> -3`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfdmConfig {
    pub fft_size: usize,
    pub sampling_rate_hz: f64,
    pub used_subcarriers: usize,
    pub cp_length: usize,
    /// Data OFDM symbols following the single pilot symbol of a slot.
    pub data_symbols: usize,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        OfdmConfig {
            fft_size: 2048,
            sampling_rate_hz: 30.72e6,
            used_subcarriers: 1200,
            cp_length: 144,
            data_symbols: 13,
        }
    }
}

impl OfdmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 4 {
            return Err(Error::invalid_field("fft_size", "must be at least 4"));
        }
        if self.used_subcarriers == 0 || self.used_subcarriers % 2 != 0 {
            return Err(Error::invalid_field(
                "used_subcarriers",
                "must be positive and even",
            ));
        }
        if self.used_subcarriers >= self.fft_size {
            return Err(Error::invalid_field(
                "used_subcarriers",
                "must be below fft_size",
            ));
        }
        if self.cp_length >= self.fft_size {
            return Err(Error::invalid_field("cp_length", "must be below fft_size"));
        }
        if !(self.sampling_rate_hz > 0.0) {
            return Err(Error::invalid_field("sampling_rate_hz", "must be positive"));
        }
        if self.data_symbols == 0 {
            return Err(Error::invalid_field("data_symbols", "must be positive"));
        }
        Ok(())
    }

    pub fn subcarrier_spacing_hz(&self) -> f64 {
        self.sampling_rate_hz / self.fft_size as f64
    }

    pub fn occupied_bandwidth_hz(&self) -> f64 {
        self.used_subcarriers as f64 * self.subcarrier_spacing_hz()
    }

    pub fn symbol_length(&self) -> usize {
        self.fft_size + self.cp_length
    }

    /// Signed subcarrier number of used subcarrier `j` (never 0).
    pub fn subcarrier_number(&self, j: usize) -> i64 {
        let half = (self.used_subcarriers / 2) as i64;
        let j = j as i64;
        if j < half {
            j - half
        } else {
            j - half + 1
        }
    }

    pub fn fft_bin(&self, j: usize) -> usize {
        self.subcarrier_number(j).rem_euclid(self.fft_size as i64) as usize
    }

    /// Baseband frequency of used subcarrier `j`.
    pub fn subcarrier_offset_hz(&self, j: usize) -> f64 {
        self.subcarrier_number(j) as f64 * self.subcarrier_spacing_hz()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Qpsk,
    Qam16,
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modulation::Qpsk => "qpsk",
            Modulation::Qam16 => "qam16",
        })
    }
}

const QAM16_SCALE: f64 = 0.316_227_766_016_837_94; // 1/√10

fn qam16_level(b0: u8, b1: u8) -> f64 {
    match (b0, b1) {
        (0, 0) => 3.0,
        (0, 1) => 1.0,
        (1, 1) => -1.0,
        _ => -3.0,
    }
}

fn qam16_bits(level: f64) -> (u8, u8) {
    if level >= 2.0 {
        (0, 0)
    } else if level >= 0.0 {
        (0, 1)
    } else if level >= -2.0 {
        (1, 1)
    } else {
        (1, 0)
    }
}

impl Modulation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
        }
    }

    fn map_group(self, b: &[u8]) -> Complex64 {
        match self {
            Modulation::Qpsk => Complex64::new(
                (1.0 - 2.0 * b[0] as f64) * FRAC_1_SQRT_2,
                (1.0 - 2.0 * b[1] as f64) * FRAC_1_SQRT_2,
            ),
            Modulation::Qam16 => Complex64::new(
                qam16_level(b[0], b[1]) * QAM16_SCALE,
                qam16_level(b[2], b[3]) * QAM16_SCALE,
            ),
        }
    }

    fn demap_into(self, x: Complex64, out: &mut Vec<u8>) {
        match self {
            Modulation::Qpsk => {
                out.push((x.re < 0.0) as u8);
                out.push((x.im < 0.0) as u8);
            }
            Modulation::Qam16 => {
                let (b0, b1) = qam16_bits(x.re / QAM16_SCALE);
                let (b2, b3) = qam16_bits(x.im / QAM16_SCALE);
                out.extend([b0, b1, b2, b3]);
            }
        }
    }

    /// Nearest constellation point.
    pub fn decide(self, x: Complex64) -> Complex64 {
        let mut bits = Vec::with_capacity(4);
        self.demap_into(x, &mut bits);
        self.map_group(&bits)
    }

    pub fn constellation(self) -> Vec<Complex64> {
        let n = self.bits_per_symbol();
        (0..1usize << n)
            .map(|v| {
                let bits: Vec<u8> = (0..n).map(|i| ((v >> (n - 1 - i)) & 1) as u8).collect();
                self.map_group(&bits)
            })
            .collect()
    }
}

/// Gray-maps bits (each 0 or 1) onto unit-average-power symbols.
pub fn qam_map(bits: &[u8], modulation: Modulation) -> Result<Vec<Complex64>> {
    let k = modulation.bits_per_symbol();
    if bits.len() % k != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} bits is not a multiple of {k} for {modulation}",
            bits.len()
        )));
    }
    if bits.iter().any(|&b| b > 1) {
        return Err(Error::InvalidArgument("bits must be 0 or 1".into()));
    }
    Ok(bits.chunks(k).map(|g| modulation.map_group(g)).collect())
}

/// Hard-decision inverse of [`qam_map`].
pub fn qam_demap(symbols: &[Complex64], modulation: Modulation) -> Vec<u8> {
    let mut bits = Vec::with_capacity(symbols.len() * modulation.bits_per_symbol());
    for &x in symbols {
        modulation.demap_into(x, &mut bits);
    }
    bits
}

/// CP-OFDM modulator with unitary transform scaling (`1/√N` both ways).
#[derive(Clone)]
pub struct OfdmModem {
    config: OfdmConfig,
    ifft: Arc<dyn Fft<f64>>,
    fft: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl fmt::Debug for OfdmModem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OfdmModem")
            .field("config", &self.config)
            .finish()
    }
}

impl OfdmModem {
    pub fn new(config: OfdmConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        let ifft = planner.plan_fft_inverse(config.fft_size);
        let fft = planner.plan_fft_forward(config.fft_size);
        let scale = 1.0 / (config.fft_size as f64).sqrt();
        Ok(OfdmModem {
            config,
            ifft,
            fft,
            scale,
        })
    }

    pub fn config(&self) -> &OfdmConfig {
        &self.config
    }

    /// One OFDM symbol: used-subcarrier symbols in, `cp + fft_size` samples out.
    pub fn modulate(&self, symbols: &[Complex64]) -> Result<Vec<Complex64>> {
        let cfg = &self.config;
        if symbols.len() != cfg.used_subcarriers {
            return Err(Error::DimensionMismatch(format!(
                "got {} symbols for {} used subcarriers",
                symbols.len(),
                cfg.used_subcarriers
            )));
        }
        let mut grid = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
        for (j, &s) in symbols.iter().enumerate() {
            grid[cfg.fft_bin(j)] = s;
        }
        self.ifft.process(&mut grid);
        for x in &mut grid {
            *x *= self.scale;
        }
        let mut out = Vec::with_capacity(cfg.symbol_length());
        out.extend_from_slice(&grid[cfg.fft_size - cfg.cp_length..]);
        out.extend_from_slice(&grid);
        Ok(out)
    }

    /// Strips the CP and returns the used-subcarrier values.
    pub fn demodulate(&self, samples: &[Complex64]) -> Result<Vec<Complex64>> {
        let cfg = &self.config;
        if samples.len() != cfg.symbol_length() {
            return Err(Error::DimensionMismatch(format!(
                "got {} samples, OFDM symbol is {}",
                samples.len(),
                cfg.symbol_length()
            )));
        }
        let mut grid = samples[cfg.cp_length..].to_vec();
        self.fft.process(&mut grid);
        Ok((0..cfg.used_subcarriers)
            .map(|j| grid[cfg.fft_bin(j)] * self.scale)
            .collect())
    }
}

pub fn ofdm_modulate(symbols: &[Complex64], config: &OfdmConfig) -> Result<Vec<Complex64>> {
    OfdmModem::new(config.clone())?.modulate(symbols)
}

pub fn ofdm_demodulate(samples: &[Complex64], config: &OfdmConfig) -> Result<Vec<Complex64>> {
    OfdmModem::new(config.clone())?.demodulate(samples)
}

/// Comb pilots in the first OFDM symbol of a slot: UE `k` owns every
/// used subcarrier `j` with `j % num_ues == k`. Pilot amplitude is `√K` so
/// that a pilot symbol carries the same energy as a data symbol.
#[derive(Clone, Debug, PartialEq)]
pub struct PilotPlan {
    num_ues: usize,
    used_subcarriers: usize,
}

impl PilotPlan {
    pub fn new(num_ues: usize, used_subcarriers: usize) -> Result<Self> {
        if num_ues == 0 {
            return Err(Error::InvalidArgument(
                "pilot plan needs at least one UE".into(),
            ));
        }
        if num_ues > used_subcarriers {
            return Err(Error::InvalidArgument(format!(
                "{num_ues} UEs cannot share {used_subcarriers} pilot subcarriers"
            )));
        }
        Ok(PilotPlan {
            num_ues,
            used_subcarriers,
        })
    }

    pub fn num_ues(&self) -> usize {
        self.num_ues
    }

    pub fn used_subcarriers(&self) -> usize {
        self.used_subcarriers
    }

    pub fn owner(&self, j: usize) -> usize {
        j % self.num_ues
    }

    pub fn pilot_subcarriers(&self, ue: usize) -> impl Iterator<Item = usize> + '_ {
        (ue..self.used_subcarriers).step_by(self.num_ues)
    }

    /// Unit-modulus chirp scaled by `√K`.
    pub fn pilot_value(&self, j: usize) -> Complex64 {
        let n = j as f64;
        let phase = PI * n * n / self.used_subcarriers as f64;
        Complex64::from_polar((self.num_ues as f64).sqrt(), phase)
    }

    /// Frequency-domain pilot symbol transmitted by `ue`.
    pub fn pilot_symbol(&self, ue: usize) -> Vec<Complex64> {
        (0..self.used_subcarriers)
            .map(|j| {
                if self.owner(j) == ue {
                    self.pilot_value(j)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect()
    }
}

/// Least-squares estimate at each UE's pilots, linearly interpolated in
/// frequency to every used subcarrier (held flat beyond the outermost
/// pilots).
///
/// `rx_pilot` is `chains x used_subcarriers`; the result is
/// `used_subcarriers x chains x num_ues`.
pub fn estimate_channel(
    rx_pilot: ArrayView2<Complex64>,
    plan: &PilotPlan,
    config: &OfdmConfig,
) -> Result<Array3<Complex64>> {
    let (chains, width) = rx_pilot.dim();
    if width != plan.used_subcarriers() || width != config.used_subcarriers {
        return Err(Error::DimensionMismatch(format!(
            "pilot grid has {width} subcarriers, plan expects {}",
            plan.used_subcarriers()
        )));
    }
    let k = plan.num_ues();
    let mut est = Array3::zeros((width, chains, k));
    for ue in 0..k {
        let pilots: Vec<usize> = plan.pilot_subcarriers(ue).collect();
        if pilots.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "UE {ue} has no pilot resources"
            )));
        }
        let freq: Vec<f64> = pilots
            .iter()
            .map(|&j| config.subcarrier_number(j) as f64)
            .collect();
        for chain in 0..chains {
            let ls: Vec<Complex64> = pilots
                .iter()
                .map(|&j| rx_pilot[(chain, j)] / plan.pilot_value(j))
                .collect();
            let mut seg = 0usize;
            for j in 0..width {
                let f = config.subcarrier_number(j) as f64;
                let value = if f <= freq[0] {
                    ls[0]
                } else if f >= freq[freq.len() - 1] {
                    ls[ls.len() - 1]
                } else {
                    while freq[seg + 1] < f {
                        seg += 1;
                    }
                    let t = (f - freq[seg]) / (freq[seg + 1] - freq[seg]);
                    ls[seg] * (1.0 - t) + ls[seg + 1] * t
                };
                est[(j, chain, ue)] = value;
            }
        }
    }
    Ok(est)
}

/// Thin QR factorization of one `M x K` channel for repeated ZF solves.
#[derive(Clone, Debug)]
pub struct ZfDetector {
    q: Array2<Complex64>,
    r: Array2<Complex64>,
}

/// Columns whose residual after projection falls below this fraction of
/// the largest column norm count as linearly dependent.
const RANK_TOLERANCE: f64 = 1e-10;

impl ZfDetector {
    /// Fails with [`Error::Singular`] (subcarrier list empty) when `h` has
    /// dependent columns or more columns than rows.
    pub fn new(h: ArrayView2<Complex64>) -> Result<Self> {
        let (m, k) = h.dim();
        if k == 0 || k > m {
            return Err(Error::Singular {
                subcarriers: vec![],
            });
        }
        let max_norm = h
            .axis_iter(Axis(1))
            .map(|c| c.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let mut q = Array2::<Complex64>::zeros((m, k));
        let mut r = Array2::<Complex64>::zeros((k, k));
        for j in 0..k {
            let mut v = h.column(j).to_owned();
            // Two Gram-Schmidt passes keep Q orthonormal to working precision.
            for _ in 0..2 {
                for i in 0..j {
                    let qi = q.column(i);
                    let proj: Complex64 = qi.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
                    r[(i, j)] += proj;
                    v.zip_mut_with(&qi, |x, y| *x -= proj * y);
                }
            }
            let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if !(norm > RANK_TOLERANCE * max_norm) {
                return Err(Error::Singular {
                    subcarriers: vec![],
                });
            }
            r[(j, j)] = Complex64::new(norm, 0.0);
            q.column_mut(j).assign(&v.mapv(|x| x / norm));
        }
        Ok(ZfDetector { q, r })
    }

    /// `(H^H H)^-1 H^H y`, computed as `R^-1 Q^H y`.
    pub fn detect(&self, y: ArrayView1<Complex64>) -> Vec<Complex64> {
        let k = self.r.nrows();
        let mut x: Vec<Complex64> = (0..k)
            .map(|i| {
                self.q
                    .column(i)
                    .iter()
                    .zip(y.iter())
                    .map(|(a, b)| a.conj() * b)
                    .sum()
            })
            .collect();
        for i in (0..k).rev() {
            let mut acc = x[i];
            for c in i + 1..k {
                acc -= self.r[(i, c)] * x[c];
            }
            x[i] = acc / self.r[(i, i)];
        }
        x
    }
}

/// Per-subcarrier zero forcing. `h` is `subcarriers x M x K` and `y` is
/// `subcarriers x M`; the result is `subcarriers x K`.
pub fn zf_detect(h: &Array3<Complex64>, y: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let (sc, m, k) = h.dim();
    if y.dim() != (sc, m) {
        return Err(Error::DimensionMismatch(format!(
            "observation is {:?}, channel is {sc}x{m}x{k}",
            y.dim()
        )));
    }
    let detectors = zf_detectors(h)?;
    let mut out = Array2::zeros((sc, k));
    for (s, det) in detectors.iter().enumerate() {
        let x = det.detect(y.row(s));
        for (u, v) in x.into_iter().enumerate() {
            out[(s, u)] = v;
        }
    }
    Ok(out)
}

/// Factorizes every subcarrier, collecting all rank-deficient ones.
pub fn zf_detectors(h: &Array3<Complex64>) -> Result<Vec<ZfDetector>> {
    let mut detectors = Vec::with_capacity(h.dim().0);
    let mut singular = Vec::new();
    for (s, hs) in h.outer_iter().enumerate() {
        match ZfDetector::new(hs) {
            Ok(d) => detectors.push(d),
            Err(Error::Singular { .. }) => singular.push(s),
            Err(e) => return Err(e),
        }
    }
    if singular.is_empty() {
        Ok(detectors)
    } else {
        Err(Error::Singular {
            subcarriers: singular,
        })
    }
}

/// RMS error vector relative to RMS reference, in percent.
pub fn evm_percent(equalized: &[Complex64], reference: &[Complex64]) -> Result<f64> {
    if equalized.len() != reference.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} equalized vs {} reference symbols",
            equalized.len(),
            reference.len()
        )));
    }
    if equalized.is_empty() {
        return Err(Error::InvalidArgument("EVM of an empty symbol set".into()));
    }
    let err: f64 = equalized
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    let power: f64 = reference.iter().map(|x| x.norm_sqr()).sum();
    Ok(100.0 * (err / power).sqrt())
}

/// Fraction of hard decisions that differ from the reference symbols.
pub fn symbol_error_rate(
    equalized: &[Complex64],
    reference: &[Complex64],
    modulation: Modulation,
) -> Result<f64> {
    if equalized.len() != reference.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} equalized vs {} reference symbols",
            equalized.len(),
            reference.len()
        )));
    }
    if equalized.is_empty() {
        return Err(Error::InvalidArgument("SER of an empty symbol set".into()));
    }
    let errors = equalized
        .iter()
        .zip(reference)
        .filter(|(x, r)| (modulation.decide(**x) - **r).norm() > 1e-9)
        .count();
    Ok(errors as f64 / equalized.len() as f64)
}

/// Detection output for one uplink slot.
#[derive(Clone, Debug)]
pub struct DetectedFrame {
    /// Per UE, data symbols in (symbol, subcarrier) order.
    pub equalized: Vec<Vec<Complex64>>,
    pub evm_percent: Vec<f64>,
    pub ser: Vec<f64>,
    /// `subcarriers x chains x UEs`.
    pub channel_estimate: Array3<Complex64>,
}
