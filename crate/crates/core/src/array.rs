//! 64-element planar array built from 16 butler-matrix subarrays.
//!
//! The array lies in the x-y plane with boresight along +z. A direction is
//! described by its direction cosines `(u, v, w)` with `u = sin(az)cos(el)`,
//! `v = sin(el)` and `w = cos(az)cos(el)`; only the front hemisphere
//! (`w >= 0`) is valid.
//!
//! Elements are indexed `4 * subarray + port`. Subarrays sit on a 4x4 grid
//! (`subarray = sx + 4 * sy`) and ports on a 2x2 grid (`port = ix + 2 * iy`).

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::Range;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ELEMENT_SPACING_M: f64 = 5.5e-3;
pub const SUBARRAY_SPACING_M: f64 = 22e-3;
pub const NUM_SUBARRAYS: usize = 16;
pub const ELEMENTS_PER_SUBARRAY: usize = 4;
pub const NUM_ELEMENTS: usize = NUM_SUBARRAYS * ELEMENTS_PER_SUBARRAY;
pub const NUM_BEAMS: usize = 4;

/// Wavelength at which the board spacings are exactly λ/2 and 2λ.
pub const DESIGN_WAVELENGTH_M: f64 = 2.0 * ELEMENT_SPACING_M;

/// Exponent of the default cosine patch pattern.
pub const DEFAULT_ELEMENT_EXPONENT: f64 = 1.0;

/// Element peak gain that puts the subarray peak at 10.1 dBi with the
/// default exponent on the standard geometry. Recomputed by
/// [`ElementPattern::calibrate`]; a unit test keeps the two in sync.
pub const DEFAULT_ELEMENT_PEAK_GAIN_DBI: f64 = 5.127_517_435;

/// Target peak gain of one subarray.
pub const SUBARRAY_PEAK_GAIN_DBI: f64 = 10.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Direction {
    u: f64,
    v: f64,
    w: f64,
}

impl Direction {
    pub const BORESIGHT: Direction = Direction {
        u: 0.0,
        v: 0.0,
        w: 1.0,
    };

    /// Azimuth and elevation in radians.
    pub fn from_az_el(az: f64, el: f64) -> Result<Self> {
        if !az.is_finite() || !el.is_finite() {
            return Err(Error::InvalidDirection(format!(
                "non-finite angles ({az}, {el})"
            )));
        }
        let w = az.cos() * el.cos();
        if w < -1e-12 {
            return Err(Error::InvalidDirection(format!(
                "az={:.3}°, el={:.3}° lies behind the array plane",
                az.to_degrees(),
                el.to_degrees()
            )));
        }
        Ok(Direction {
            u: az.sin() * el.cos(),
            v: el.sin(),
            w: w.max(0.0),
        })
    }

    pub fn from_az_el_deg(az: f64, el: f64) -> Result<Self> {
        Self::from_az_el(az.to_radians(), el.to_radians())
    }

    /// Front-hemisphere direction from its first two direction cosines.
    pub fn from_uv(u: f64, v: f64) -> Result<Self> {
        let r2 = u * u + v * v;
        if !r2.is_finite() || r2 > 1.0 + 1e-12 {
            return Err(Error::InvalidDirection(format!(
                "(u, v) = ({u}, {v}) is outside the unit disc"
            )));
        }
        Ok(Direction {
            u,
            v,
            w: (1.0 - r2).max(0.0).sqrt(),
        })
    }

    /// Direction of an arbitrary vector; rejected if it points behind the array.
    pub fn from_vector(vec: [f64; 3]) -> Result<Self> {
        let n = (vec[0] * vec[0] + vec[1] * vec[1] + vec[2] * vec[2]).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidDirection(format!(
                "degenerate vector {vec:?}"
            )));
        }
        if vec[2] / n < -1e-12 {
            return Err(Error::InvalidDirection(format!(
                "vector {vec:?} points behind the array plane"
            )));
        }
        Ok(Direction {
            u: vec[0] / n,
            v: vec[1] / n,
            w: (vec[2] / n).max(0.0),
        })
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn az(&self) -> f64 {
        self.u.atan2(self.w)
    }

    pub fn el(&self) -> f64 {
        self.v.clamp(-1.0, 1.0).asin()
    }

    pub fn unit_vector(&self) -> [f64; 3] {
        [self.u, self.v, self.w]
    }

    /// Point reflection through boresight, `(u, v) -> (-u, -v)`.
    pub fn mirrored(&self) -> Direction {
        Direction {
            u: -self.u,
            v: -self.v,
            w: self.w,
        }
    }

    /// Angle between two directions in radians.
    pub fn angle_to(&self, other: &Direction) -> f64 {
        let dot = self.u * other.u + self.v * other.v + self.w * other.w;
        dot.clamp(-1.0, 1.0).acos()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArrayGeometry {
    element_positions: Vec<[f64; 3]>,
    subarray_membership: Vec<usize>,
    wavelength: f64,
}

impl ArrayGeometry {
    /// 4x4 grid of 2x2 subarrays centred on the origin.
    pub fn new(element_spacing: f64, subarray_spacing: f64, wavelength: f64) -> Result<Self> {
        for (name, value) in [
            ("element_spacing", element_spacing),
            ("subarray_spacing", subarray_spacing),
            ("wavelength", wavelength),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        let mut element_positions = Vec::with_capacity(NUM_ELEMENTS);
        let mut subarray_membership = Vec::with_capacity(NUM_ELEMENTS);
        for subarray in 0..NUM_SUBARRAYS {
            let (sx, sy) = ((subarray % 4) as f64, (subarray / 4) as f64);
            for port in 0..ELEMENTS_PER_SUBARRAY {
                let (ix, iy) = ((port % 2) as f64, (port / 2) as f64);
                element_positions.push([
                    (sx - 1.5) * subarray_spacing + (ix - 0.5) * element_spacing,
                    (sy - 1.5) * subarray_spacing + (iy - 0.5) * element_spacing,
                    0.0,
                ]);
                subarray_membership.push(subarray);
            }
        }
        Ok(ArrayGeometry {
            element_positions,
            subarray_membership,
            wavelength,
        })
    }

    /// Board spacings (5.5 mm / 22 mm) at the design wavelength.
    pub fn standard() -> Self {
        Self::new(ELEMENT_SPACING_M, SUBARRAY_SPACING_M, DESIGN_WAVELENGTH_M)
            .expect("standard geometry is valid")
    }

    /// Board spacings evaluated at the wavelength of `frequency_hz`.
    pub fn at_frequency(frequency_hz: f64) -> Result<Self> {
        if !(frequency_hz > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "frequency must be positive, got {frequency_hz}"
            )));
        }
        Self::new(
            ELEMENT_SPACING_M,
            SUBARRAY_SPACING_M,
            crate::SPEED_OF_LIGHT / frequency_hz,
        )
    }

    pub fn element_positions(&self) -> &[[f64; 3]] {
        &self.element_positions
    }

    pub fn subarray_of(&self, element: usize) -> usize {
        self.subarray_membership[element]
    }

    pub fn subarray_elements(subarray: usize) -> Range<usize> {
        subarray * ELEMENTS_PER_SUBARRAY..(subarray + 1) * ELEMENTS_PER_SUBARRAY
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// Unnormalized plane-wave response of one element, `exp(j k p·û)`.
    pub fn element_response(&self, element: usize, direction: &Direction) -> Complex64 {
        let p = self.element_positions[element];
        let d = direction.unit_vector();
        let phase = self.wavenumber() * (p[0] * d[0] + p[1] * d[1] + p[2] * d[2]);
        Complex64::from_polar(1.0, phase)
    }

    /// Nominal peak direction of a butler beam: ±90° steps across the
    /// element spacing.
    pub fn beam_direction(&self, beam: BeamIndex) -> Result<Direction> {
        let spacing = self.element_positions[1][0] - self.element_positions[0][0];
        let c = self.wavelength / (4.0 * spacing);
        let (su, sv) = beam.signs();
        Direction::from_uv(su * c, sv * c)
    }
}

/// Unit-norm steering vector over `subset` of the array elements.
pub fn steering_vector(
    geometry: &ArrayGeometry,
    direction: &Direction,
    subset: &[usize],
) -> Result<Vec<Complex64>> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument(
            "steering vector over an empty element set".into(),
        ));
    }
    if let Some(&bad) = subset.iter().find(|&&e| e >= NUM_ELEMENTS) {
        return Err(Error::InvalidArgument(format!(
            "element index {bad} out of range"
        )));
    }
    let scale = 1.0 / (subset.len() as f64).sqrt();
    Ok(subset
        .iter()
        .map(|&e| geometry.element_response(e, direction) * scale)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct BeamIndex(u8);

impl BeamIndex {
    pub const ALL: [BeamIndex; NUM_BEAMS] =
        [BeamIndex(0), BeamIndex(1), BeamIndex(2), BeamIndex(3)];

    pub fn new(index: usize) -> Result<Self> {
        if index < NUM_BEAMS {
            Ok(BeamIndex(index as u8))
        } else {
            Err(Error::InvalidArgument(format!(
                "beam index {index} not in 0..{NUM_BEAMS}"
            )))
        }
    }

    pub fn get(self) -> usize {
        self.0 as usize
    }

    /// Beam pointing in the opposite quadrant.
    pub fn mirror(self) -> BeamIndex {
        BeamIndex(3 - self.0)
    }

    /// Quadrant signs `(sign u, sign v)`: bit 0 flips u, bit 1 flips v.
    fn signs(self) -> (f64, f64) {
        let su = if self.0 & 1 == 0 { 1.0 } else { -1.0 };
        let sv = if self.0 & 2 == 0 { 1.0 } else { -1.0 };
        (su, sv)
    }
}

impl TryFrom<u8> for BeamIndex {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        BeamIndex::new(value as usize)
    }
}

impl From<BeamIndex> for u8 {
    fn from(b: BeamIndex) -> u8 {
        b.0
    }
}

/// Port coefficients of one butler beam. The beam output is
/// `Σ weights[i] · x[i]` over the four element signals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamWeights {
    pub beam: BeamIndex,
    pub weights: [Complex64; ELEMENTS_PER_SUBARRAY],
}

impl BeamWeights {
    pub fn combine(&self, element_signals: &[Complex64]) -> Complex64 {
        self.weights
            .iter()
            .zip(element_signals)
            .map(|(w, x)| w * x)
            .sum()
    }
}

/// 2x2 butler beam: phase `-(π/2)(s_u·ix + s_v·iy)` on port `ix + 2·iy`.
pub fn butler_weights(beam_index: usize) -> Result<BeamWeights> {
    let beam = BeamIndex::new(beam_index)?;
    let (su, sv) = beam.signs();
    let mut weights = [Complex64::new(0.0, 0.0); ELEMENTS_PER_SUBARRAY];
    for (port, w) in weights.iter_mut().enumerate() {
        let (ix, iy) = ((port % 2) as f64, (port / 2) as f64);
        *w = Complex64::from_polar(1.0, -FRAC_PI_2 * (su * ix + sv * iy));
    }
    Ok(BeamWeights { beam, weights })
}

pub fn butler_codebook() -> [BeamWeights; NUM_BEAMS] {
    BeamIndex::ALL.map(|b| butler_weights(b.get()).expect("index in range"))
}

/// Cosine patch pattern: `peak + 10·exponent·log10(cos θ)` dBi.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementPattern {
    pub peak_gain_dbi: f64,
    pub exponent: f64,
}

impl Default for ElementPattern {
    fn default() -> Self {
        ElementPattern {
            peak_gain_dbi: DEFAULT_ELEMENT_PEAK_GAIN_DBI,
            exponent: DEFAULT_ELEMENT_EXPONENT,
        }
    }
}

impl ElementPattern {
    pub const ISOTROPIC: ElementPattern = ElementPattern {
        peak_gain_dbi: 0.0,
        exponent: 0.0,
    };

    pub fn gain_dbi(&self, direction: &Direction) -> f64 {
        if self.exponent == 0.0 {
            return self.peak_gain_dbi;
        }
        self.peak_gain_dbi + 10.0 * self.exponent * direction.w().log10()
    }

    /// Picks the peak gain so that the best butler beam of one subarray
    /// peaks at `target_subarray_peak_dbi` on `geometry`.
    pub fn calibrate(
        geometry: &ArrayGeometry,
        exponent: f64,
        target_subarray_peak_dbi: f64,
    ) -> ElementPattern {
        let shape = ElementPattern {
            peak_gain_dbi: 0.0,
            exponent,
        };
        let weights = butler_weights(0).expect("beam 0");
        let (_, peak) = find_peak(|d| subarray_gain(geometry, &weights, &shape, d), 0.5);
        ElementPattern {
            peak_gain_dbi: target_subarray_peak_dbi - peak,
            exponent,
        }
    }
}

fn power_db(power: f64) -> f64 {
    10.0 * power.log10()
}

/// Gain of one subarray steered with `weights`, element pattern included.
pub fn subarray_gain(
    geometry: &ArrayGeometry,
    weights: &BeamWeights,
    element: &ElementPattern,
    direction: &Direction,
) -> f64 {
    let response: Vec<Complex64> = ArrayGeometry::subarray_elements(0)
        .map(|e| geometry.element_response(e, direction))
        .collect();
    let combined = weights.combine(&response);
    element.gain_dbi(direction) + power_db(combined.norm_sqr() / ELEMENTS_PER_SUBARRAY as f64)
}

fn subarray_outputs(
    geometry: &ArrayGeometry,
    selection: &[Option<BeamIndex>],
    direction: &Direction,
) -> Result<Vec<Option<Complex64>>> {
    if selection.len() != NUM_SUBARRAYS {
        return Err(Error::InvalidArgument(format!(
            "selection has {} entries, expected {NUM_SUBARRAYS}",
            selection.len()
        )));
    }
    if selection.iter().all(Option::is_none) {
        return Err(Error::InvalidArgument("no subarray enabled".into()));
    }
    let codebook = butler_codebook();
    Ok(selection
        .iter()
        .enumerate()
        .map(|(subarray, beam)| {
            beam.map(|beam| {
                let response: Vec<Complex64> = ArrayGeometry::subarray_elements(subarray)
                    .map(|e| geometry.element_response(e, direction))
                    .collect();
                codebook[beam.get()].combine(&response)
            })
        })
        .collect())
}

fn combined_gain(
    element: &ElementPattern,
    direction: &Direction,
    outputs: impl Iterator<Item = Complex64>,
    enabled: usize,
) -> f64 {
    let combined: Complex64 = outputs.sum();
    let norm = (enabled * ELEMENTS_PER_SUBARRAY) as f64;
    element.gain_dbi(direction) + power_db(combined.norm_sqr() / norm)
}

/// Gain of the enabled subarrays summed with equal digital weights; `None`
/// switches a subarray off.
pub fn full_array_gain(
    geometry: &ArrayGeometry,
    selection: &[Option<BeamIndex>],
    element: &ElementPattern,
    direction: &Direction,
) -> Result<f64> {
    let outputs = subarray_outputs(geometry, selection, direction)?;
    let enabled = outputs.iter().flatten().count();
    Ok(combined_gain(
        element,
        direction,
        outputs.into_iter().flatten(),
        enabled,
    ))
}

/// Gain with unit-modulus digital weights on the 16 chains that co-phase
/// the subarray outputs toward `steer`. With `steer == direction` this is
/// the ideal coherent gain: subarray gain plus `10 log10(enabled)`.
pub fn steered_array_gain(
    geometry: &ArrayGeometry,
    selection: &[Option<BeamIndex>],
    element: &ElementPattern,
    direction: &Direction,
    steer: &Direction,
) -> Result<f64> {
    let outputs = subarray_outputs(geometry, selection, direction)?;
    let reference = subarray_outputs(geometry, selection, steer)?;
    let enabled = outputs.iter().flatten().count();
    let weighted = outputs.iter().zip(&reference).filter_map(|(y, r)| {
        let (y, r) = ((*y)?, (*r)?);
        let phase = if r.norm() > 0.0 {
            r.conj() / r.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        Some(y * phase)
    });
    Ok(combined_gain(element, direction, weighted, enabled))
}

/// Maximizes `gain` over the front hemisphere: an az/el grid at `step_deg`
/// followed by successive local zooms around the best cell.
pub fn find_peak(gain: impl Fn(&Direction) -> f64, step_deg: f64) -> (Direction, f64) {
    let mut best = (Direction::BORESIGHT, gain(&Direction::BORESIGHT));
    let n = (180.0 / step_deg).round() as i64;
    for i in 0..=n {
        for j in 0..=n {
            let az = -90.0 + i as f64 * step_deg;
            let el = -90.0 + j as f64 * step_deg;
            let d = Direction::from_az_el_deg(az, el).expect("front hemisphere grid");
            let g = gain(&d);
            if g > best.1 {
                best = (d, g);
            }
        }
    }
    let mut step = step_deg;
    for _ in 0..6 {
        let (az0, el0) = (best.0.az().to_degrees(), best.0.el().to_degrees());
        let fine = step / 5.0;
        for i in -5..=5 {
            for j in -5..=5 {
                let az = (az0 + i as f64 * fine).clamp(-90.0, 90.0);
                let el = (el0 + j as f64 * fine).clamp(-90.0, 90.0);
                if let Ok(d) = Direction::from_az_el_deg(az, el) {
                    let g = gain(&d);
                    if g > best.1 {
                        best = (d, g);
                    }
                }
            }
        }
        step = fine;
    }
    best
}

/// One row of a pattern export.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternSample {
    pub az_deg: f64,
    pub el_deg: f64,
    pub gain_dbi: f64,
}

/// Samples `gain` on an az/el grid with `step_deg` spacing.
pub fn pattern_grid(gain: impl Fn(&Direction) -> f64, step_deg: f64) -> Vec<PatternSample> {
    let n = (180.0 / step_deg).round() as i64;
    let mut out = Vec::with_capacity(((n + 1) * (n + 1)) as usize);
    for j in 0..=n {
        for i in 0..=n {
            let az_deg = -90.0 + i as f64 * step_deg;
            let el_deg = -90.0 + j as f64 * step_deg;
            let d = Direction::from_az_el_deg(az_deg, el_deg).expect("front hemisphere grid");
            out.push(PatternSample {
                az_deg,
                el_deg,
                gain_dbi: gain(&d),
            });
        }
    }
    out
}

pub fn write_pattern_csv(
    samples: &[PatternSample],
    mut out: impl std::io::Write,
) -> std::io::Result<()> {
    writeln!(out, "az_deg,el_deg,gain_dbi")?;
    for s in samples {
        writeln!(out, "{},{},{}", s.az_deg, s.el_deg, s.gain_dbi)?;
    }
    Ok(())
}
