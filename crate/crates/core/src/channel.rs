//! Deterministic geometric mmWave channel: free-space LOS plus optional
//! single-ray clusters, evaluated on the used OFDM subcarriers, and the
//! 64 -> 16 reduction through the selected butler beams.

use std::f64::consts::PI;
use std::io::{Read, Write};

use ndarray::{Array3, Array4};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::array::{
    ArrayGeometry, BeamIndex, Direction, ELEMENTS_PER_SUBARRAY, NUM_BEAMS, NUM_ELEMENTS,
    NUM_SUBARRAYS,
};
use crate::error::{Error, Result};
use crate::ofdm::OfdmConfig;
use crate::{CARRIER_FREQUENCY_HZ, MAX_UES, SPEED_OF_LIGHT};

/// Per-subarray combiner: output of a beam port is `Σ c[i]·x[i]`.
pub type Combiner = [Complex64; ELEMENTS_PER_SUBARRAY];

/// `20·log10(4π·d·f/c)`.
pub fn fspl_db(distance_m: f64, frequency_hz: f64) -> Result<f64> {
    if !(distance_m > 0.0) || !distance_m.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "distance must be positive, got {distance_m}"
        )));
    }
    if !(frequency_hz > 0.0) || !frequency_hz.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "frequency must be positive, got {frequency_hz}"
        )));
    }
    Ok(20.0 * (4.0 * PI * distance_m * frequency_hz / SPEED_OF_LIGHT).log10())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSpec {
    pub count: usize,
    /// Mean cluster power relative to the LOS path.
    pub gain_db: f64,
    /// Laplacian RMS spread of the ray angle around the cluster mean.
    pub angle_spread_deg: f64,
    pub lognormal_sigma_db: f64,
    pub mean_excess_delay_ns: f64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        ClusterSpec {
            count: 2,
            gain_db: -15.0,
            angle_spread_deg: 5.0,
            lognormal_sigma_db: 3.0,
            mean_excess_delay_ns: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelScenario {
    pub carrier_frequency_hz: f64,
    pub ue_positions: Vec<[f64; 3]>,
    pub bs_position: [f64; 3],
    /// Rotation of the array boresight from +z toward +x.
    pub bs_yaw_deg: f64,
    pub clusters: ClusterSpec,
    pub seed: u64,
}

impl ChannelScenario {
    pub fn line_of_sight(ue_positions: Vec<[f64; 3]>) -> Self {
        ChannelScenario {
            carrier_frequency_hz: CARRIER_FREQUENCY_HZ,
            ue_positions,
            bs_position: [0.0; 3],
            bs_yaw_deg: 0.0,
            clusters: ClusterSpec {
                count: 0,
                ..ClusterSpec::default()
            },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_frequency_hz > 0.0) {
            return Err(Error::InvalidArgument(
                "carrier frequency must be positive".into(),
            ));
        }
        if self.ue_positions.is_empty() || self.ue_positions.len() > MAX_UES {
            return Err(Error::InvalidArgument(format!(
                "{} UEs, expected 1..={MAX_UES}",
                self.ue_positions.len()
            )));
        }
        Ok(())
    }

    /// UE position in the array frame.
    fn local_vector(&self, ue: usize) -> [f64; 3] {
        let p = self.ue_positions[ue];
        let r = [
            p[0] - self.bs_position[0],
            p[1] - self.bs_position[1],
            p[2] - self.bs_position[2],
        ];
        let (s, c) = self.bs_yaw_deg.to_radians().sin_cos();
        [c * r[0] - s * r[2], r[1], s * r[0] + c * r[2]]
    }

    pub fn distance(&self, ue: usize) -> f64 {
        let v = self.local_vector(ue);
        (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
    }

    /// Arrival direction of the LOS path of `ue` at the array.
    pub fn los_direction(&self, ue: usize) -> Result<Direction> {
        Direction::from_vector(self.local_vector(ue))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathTap {
    pub ue: usize,
    pub delay_s: f64,
    pub gain: Complex64,
    pub aoa: Direction,
    pub line_of_sight: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    /// `subcarriers x 64 x K`.
    pub full_h: Array3<Complex64>,
    pub taps: Vec<PathTap>,
    pub subcarrier_offsets_hz: Vec<f64>,
}

impl ChannelRealization {
    pub fn num_ues(&self) -> usize {
        self.full_h.dim().2
    }

    pub fn num_subcarriers(&self) -> usize {
        self.full_h.dim().0
    }
}

fn laplace(rng: &mut ChaCha8Rng, rms: f64) -> f64 {
    let b = rms / std::f64::consts::SQRT_2;
    let u: f64 = rng.gen_range(-0.5..0.5);
    -b * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
}

/// Uses the element phases of `geometry`, so pass a geometry built at the
/// carrier wavelength for physical runs.
pub fn generate_channel(
    scenario: &ChannelScenario,
    geometry: &ArrayGeometry,
    ofdm: &OfdmConfig,
) -> Result<ChannelRealization> {
    scenario.validate()?;
    let wavelength = SPEED_OF_LIGHT / scenario.carrier_frequency_hz;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut taps = Vec::new();
    for ue in 0..scenario.ue_positions.len() {
        let d = scenario.distance(ue);
        if !(d > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "UE {ue} coincides with the BS"
            )));
        }
        let aoa = scenario
            .los_direction(ue)
            .map_err(|_| Error::InvalidArgument(format!("UE {ue} is behind the array plane")))?;
        let amplitude = 10f64.powf(-fspl_db(d, scenario.carrier_frequency_hz)? / 20.0);
        let delay = d / SPEED_OF_LIGHT;
        taps.push(PathTap {
            ue,
            delay_s: delay,
            gain: Complex64::from_polar(amplitude, -2.0 * PI * d / wavelength),
            aoa,
            line_of_sight: true,
        });
        let spec = &scenario.clusters;
        for _ in 0..spec.count {
            let mean_az: f64 = rng.gen_range(-60.0..60.0);
            let mean_el: f64 = rng.gen_range(-20.0..20.0);
            let az = (mean_az + laplace(&mut rng, spec.angle_spread_deg)).clamp(-89.0, 89.0);
            let el = (mean_el + laplace(&mut rng, spec.angle_spread_deg)).clamp(-89.0, 89.0);
            let shadow: f64 = StandardNormal.sample(&mut rng);
            let power_db = spec.gain_db + spec.lognormal_sigma_db * shadow;
            let phase: f64 = rng.gen_range(0.0..2.0 * PI);
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            let excess = -u.ln() * spec.mean_excess_delay_ns * 1e-9;
            taps.push(PathTap {
                ue,
                delay_s: delay + excess,
                gain: Complex64::from_polar(amplitude * 10f64.powf(power_db / 20.0), phase),
                aoa: Direction::from_az_el_deg(az, el)?,
                line_of_sight: false,
            });
        }
    }

    let offsets: Vec<f64> = (0..ofdm.used_subcarriers)
        .map(|j| ofdm.subcarrier_offset_hz(j))
        .collect();
    let k = scenario.ue_positions.len();
    let mut full_h = Array3::zeros((offsets.len(), NUM_ELEMENTS, k));
    for tap in &taps {
        let response: Vec<Complex64> = (0..NUM_ELEMENTS)
            .map(|e| geometry.element_response(e, &tap.aoa))
            .collect();
        for (s, &f) in offsets.iter().enumerate() {
            let g = tap.gain * Complex64::from_polar(1.0, -2.0 * PI * f * tap.delay_s);
            for (e, a) in response.iter().enumerate() {
                full_h[(s, e, tap.ue)] += g * a;
            }
        }
    }
    Ok(ChannelRealization {
        full_h,
        taps,
        subcarrier_offsets_hz: offsets,
    })
}

/// Channel seen at every beam port: `subcarriers x 16 x 4 x K`, entry
/// `[s, r, b, k] = Σ_i combiners[b][i] · full_h[s, 4r + i, k]`.
pub fn beam_port_channel(
    full_h: &Array3<Complex64>,
    combiners: &[Combiner; NUM_BEAMS],
) -> Result<Array4<Complex64>> {
    let (sc, m, k) = full_h.dim();
    if m != NUM_ELEMENTS {
        return Err(Error::DimensionMismatch(format!(
            "full channel has {m} rows, expected {NUM_ELEMENTS}"
        )));
    }
    let mut out = Array4::zeros((sc, NUM_SUBARRAYS, NUM_BEAMS, k));
    for s in 0..sc {
        for r in 0..NUM_SUBARRAYS {
            for (b, c) in combiners.iter().enumerate() {
                for u in 0..k {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (i, w) in c.iter().enumerate() {
                        acc += w * full_h[(s, ELEMENTS_PER_SUBARRAY * r + i, u)];
                    }
                    out[(s, r, b, u)] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// `subcarriers x 16 x K` channel after one beam per subarray.
pub fn effective_channel(
    full_h: &Array3<Complex64>,
    selection: &[BeamIndex],
    combiners: &[Combiner; NUM_BEAMS],
) -> Result<Array3<Complex64>> {
    let (sc, m, k) = full_h.dim();
    if selection.len() != NUM_SUBARRAYS {
        return Err(Error::InvalidArgument(format!(
            "selection has {} entries, expected {NUM_SUBARRAYS}",
            selection.len()
        )));
    }
    if m != NUM_ELEMENTS {
        return Err(Error::DimensionMismatch(format!(
            "full channel has {m} rows, expected {NUM_ELEMENTS}"
        )));
    }
    let mut out = Array3::zeros((sc, NUM_SUBARRAYS, k));
    for s in 0..sc {
        for (r, beam) in selection.iter().enumerate() {
            let c = &combiners[beam.get()];
            for u in 0..k {
                out[(s, r, u)] = c
                    .iter()
                    .enumerate()
                    .map(|(i, w)| w * full_h[(s, ELEMENTS_PER_SUBARRAY * r + i, u)])
                    .sum();
            }
        }
    }
    Ok(out)
}

pub fn butler_combiners() -> [Combiner; NUM_BEAMS] {
    crate::array::butler_codebook().map(|b| b.weights)
}

const DUMP_MAGIC: &[u8; 4] = b"HBFC";
const DUMP_VERSION: u32 = 1;

/// Binary dump of a stack of complex matrices: magic `HBFC`, then u32
/// version, matrices, rows, cols (all little-endian), then f32 re/im pairs
/// in `[matrix][row][col]` order.
pub fn write_matrix_dump(h: &Array3<Complex64>, mut out: impl Write) -> std::io::Result<()> {
    let (a, b, c) = h.dim();
    out.write_all(DUMP_MAGIC)?;
    for v in [DUMP_VERSION, a as u32, b as u32, c as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(a * b * c * 8);
    for x in h.iter() {
        buf.extend_from_slice(&(x.re as f32).to_le_bytes());
        buf.extend_from_slice(&(x.im as f32).to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn read_matrix_dump(mut input: impl Read) -> std::io::Result<Array3<Complex64>> {
    use std::io::{Error as IoError, ErrorKind};
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(IoError::new(
            ErrorKind::InvalidData,
            "bad channel dump magic",
        ));
    }
    let mut word = [0u8; 4];
    let mut header = [0u32; 4];
    for h in &mut header {
        input.read_exact(&mut word)?;
        *h = u32::from_le_bytes(word);
    }
    if header[0] != DUMP_VERSION {
        return Err(IoError::new(
            ErrorKind::InvalidData,
            "unsupported channel dump version",
        ));
    }
    let dims = (header[1] as usize, header[2] as usize, header[3] as usize);
    let mut data = Vec::with_capacity(dims.0 * dims.1 * dims.2);
    for _ in 0..dims.0 * dims.1 * dims.2 {
        input.read_exact(&mut word)?;
        let re = f32::from_le_bytes(word) as f64;
        input.read_exact(&mut word)?;
        let im = f32::from_le_bytes(word) as f64;
        data.push(Complex64::new(re, im));
    }
    Array3::from_shape_vec(dims, data).map_err(|e| IoError::new(ErrorKind::InvalidData, e))
}
