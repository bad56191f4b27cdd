//! Browser bindings for the demo page in `www/`.
//!
//! Each exported function has a plain-Rust twin (`*_impl`) so the numerics
//! are testable natively; the wasm wrappers only convert errors.

use hbf_core::array::{
    butler_weights, full_array_gain, subarray_gain, ArrayGeometry, BeamIndex, Direction,
    ElementPattern, NUM_SUBARRAYS,
};
use hbf_core::rf_chain::{cascade_tx_gain, PaModel, RfChainConfig, DEFAULT_RAPP_SMOOTHNESS};
use hbf_core::scenario::{run_uplink_scenario, RunOptions, ScenarioConfig};
use wasm_bindgen::prelude::*;

/// Azimuth cut (elevation 0) from -90 to 90 degrees in `points` steps.
/// With one beam the pattern is that of a single subarray; with 16 beams
/// (one per subarray) it is the full array.
pub fn beam_pattern_impl(beams: &[u8], points: usize) -> hbf_core::Result<Vec<f64>> {
    if points < 2 {
        return Err(hbf_core::Error::InvalidArgument(
            "need at least two points".into(),
        ));
    }
    let geometry = ArrayGeometry::standard();
    let element = ElementPattern::default();
    let azimuths = (0..points).map(|i| -90.0 + 180.0 * i as f64 / (points - 1) as f64);
    match beams.len() {
        1 => {
            let w = butler_weights(beams[0] as usize)?;
            azimuths
                .map(|az| {
                    let d = Direction::from_az_el_deg(az, 0.0)?;
                    Ok(subarray_gain(&geometry, &w, &element, &d))
                })
                .collect()
        }
        NUM_SUBARRAYS => {
            let selection = beams
                .iter()
                .map(|&b| BeamIndex::new(b as usize).map(Some))
                .collect::<hbf_core::Result<Vec<_>>>()?;
            azimuths
                .map(|az| {
                    let d = Direction::from_az_el_deg(az, 0.0)?;
                    full_array_gain(&geometry, &selection, &element, &d)
                })
                .collect()
        }
        n => Err(hbf_core::Error::InvalidArgument(format!(
            "expected 1 or {NUM_SUBARRAYS} beams, got {n}"
        ))),
    }
}

/// PA output power in dBm for inputs spaced 0.5 dB apart from `from_dbm`.
pub fn pa_curve_impl(p1db_dbm: f64, from_dbm: f64, points: usize) -> Vec<f64> {
    let pa = PaModel::calibrated(
        cascade_tx_gain(&RfChainConfig::default()),
        p1db_dbm,
        DEFAULT_RAPP_SMOOTHNESS,
    );
    (0..points)
        .map(|i| pa.output_power_dbm(from_dbm + 0.5 * i as f64))
        .collect()
}

/// Equalized uplink symbols of two UEs (QPSK and 16-QAM) on a reduced
/// 256-point OFDM grid.
#[wasm_bindgen]
pub struct Constellation {
    points: Vec<f64>,
    evm: Vec<f64>,
    ser: Vec<f64>,
}

#[wasm_bindgen]
impl Constellation {
    /// Interleaved `ue, re, im` triples.
    pub fn points(&self) -> Vec<f64> {
        self.points.clone()
    }

    pub fn evm_percent(&self) -> Vec<f64> {
        self.evm.clone()
    }

    pub fn ser(&self) -> Vec<f64> {
        self.ser.clone()
    }
}

pub fn uplink_constellation_impl(
    ue_tx_power_dbm: f64,
    noise: bool,
    seed: u64,
) -> hbf_core::Result<Constellation> {
    let mut config = ScenarioConfig::default();
    config.seed = seed;
    config.system.fft_size = 256;
    config.phy.used_subcarriers = 150;
    config.phy.cp_length = 18;
    config.phy.data_symbols = 4;
    config.phy.ue_tx_power_dbm = ue_tx_power_dbm;
    config.chain.rf.thermal_noise = noise;
    let out = run_uplink_scenario(&config, RunOptions::default())?;
    Ok(Constellation {
        points: out
            .constellation
            .iter()
            .flat_map(|c| [c.ue as f64, c.re, c.im])
            .collect(),
        evm: out
            .result
            .ue_metrics
            .iter()
            .map(|m| m.evm_percent)
            .collect(),
        ser: out.result.ue_metrics.iter().map(|m| m.ser).collect(),
    })
}

fn js_err(e: hbf_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn beam_pattern(beams: &[u8], points: usize) -> Result<Vec<f64>, JsError> {
    beam_pattern_impl(beams, points).map_err(js_err)
}

#[wasm_bindgen]
pub fn pa_curve(p1db_dbm: f64, from_dbm: f64, points: usize) -> Vec<f64> {
    pa_curve_impl(p1db_dbm, from_dbm, points)
}

#[wasm_bindgen]
pub fn uplink_constellation(
    ue_tx_power_dbm: f64,
    noise: bool,
    seed: u64,
) -> Result<Constellation, JsError> {
    uplink_constellation_impl(ue_tx_power_dbm, noise, seed).map_err(js_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subarray_cut_peaks_off_boresight() {
        let cut = beam_pattern_impl(&[0], 181).unwrap();
        assert_eq!(cut.len(), 181);
        let (i, peak) =
            cut.iter().enumerate().fold(
                (0, f64::MIN),
                |best, (i, &g)| if g > best.1 { (i, g) } else { best },
            );
        assert!(
            i > 90,
            "beam 0 points to positive azimuth, peak at index {i}"
        );
        assert!(peak < 10.2);
    }

    #[test]
    fn full_array_is_stronger() {
        let sub = beam_pattern_impl(&[0], 91).unwrap();
        let full = beam_pattern_impl(&[0; 16], 91).unwrap();
        let max = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max);
        assert!(max(&full) > max(&sub) + 10.0);
        assert!(beam_pattern_impl(&[0, 1], 91).is_err());
        assert!(beam_pattern_impl(&[7], 91).is_err());
    }

    #[test]
    fn pa_curve_compresses() {
        let c = pa_curve_impl(18.0, -40.0, 100);
        assert!((c[1] - c[0] - 0.5).abs() < 1e-3);
        assert!(c[99] - c[98] < 0.1);
    }

    #[test]
    fn small_constellation() {
        let c = uplink_constellation_impl(0.0, true, 3).unwrap();
        assert_eq!(c.points().len(), 3 * 2 * 150 * 4);
        assert!(c.evm_percent().iter().all(|&e| e < 5.0));
        assert!(c.ser().iter().all(|&s| s == 0.0));
    }
}
