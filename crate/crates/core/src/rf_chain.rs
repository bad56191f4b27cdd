//! One TRx chain: FRECON + FEM stage gains, Rapp PA compression, TDD and
//! beam switch leakage, and receiver thermal noise.
//!
//! Complex baseband samples are scaled so that `|x|^2` is power in mW.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Thermal noise density at 290 K, dBm/Hz.
pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;

pub const DEFAULT_P1DB_DBM: f64 = 18.0;
pub const DEFAULT_RAPP_SMOOTHNESS: f64 = 2.0;

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Mean `|x|^2` in dBm.
pub fn mean_power_dbm(samples: &[Complex64]) -> f64 {
    let total: f64 = samples.iter().map(|x| x.norm_sqr()).sum();
    mw_to_dbm(total / samples.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfChainConfig {
    pub frecon_tx_gain_db: f64,
    pub fem_tx_gain_db: f64,
    pub tx_interconnect_loss_db: f64,
    pub frecon_rx_gain_db: f64,
    pub fem_rx_gain_db: f64,
    pub rx_interconnect_loss_db: f64,
    pub noise_figure_db: f64,
    pub bandwidth_hz: f64,
    /// When false the receiver is noiseless.
    pub thermal_noise: bool,
}

impl Default for RfChainConfig {
    fn default() -> Self {
        RfChainConfig {
            frecon_tx_gain_db: 9.0,
            fem_tx_gain_db: 14.0,
            tx_interconnect_loss_db: 1.0,
            frecon_rx_gain_db: 7.0,
            fem_rx_gain_db: 12.0,
            rx_interconnect_loss_db: 0.2,
            noise_figure_db: 5.0,
            bandwidth_hz: 20e6,
            thermal_noise: true,
        }
    }
}

impl RfChainConfig {
    pub fn validate(&self) -> Result<()> {
        let gains = [
            ("frecon_tx_gain_db", self.frecon_tx_gain_db),
            ("fem_tx_gain_db", self.fem_tx_gain_db),
            ("tx_interconnect_loss_db", self.tx_interconnect_loss_db),
            ("frecon_rx_gain_db", self.frecon_rx_gain_db),
            ("fem_rx_gain_db", self.fem_rx_gain_db),
            ("rx_interconnect_loss_db", self.rx_interconnect_loss_db),
            ("noise_figure_db", self.noise_figure_db),
        ];
        for (field, value) in gains {
            if !value.is_finite() {
                return Err(Error::invalid_field(field, "must be finite"));
            }
        }
        if !(self.bandwidth_hz > 0.0) || !self.bandwidth_hz.is_finite() {
            return Err(Error::invalid_field("bandwidth_hz", "must be positive"));
        }
        Ok(())
    }

    /// Input-referred noise power in dBm, `None` when noise is disabled.
    pub fn noise_power_dbm(&self) -> Option<f64> {
        self.thermal_noise.then(|| {
            THERMAL_NOISE_DBM_PER_HZ + 10.0 * self.bandwidth_hz.log10() + self.noise_figure_db
        })
    }
}

pub fn cascade_tx_gain(config: &RfChainConfig) -> f64 {
    config.frecon_tx_gain_db + config.fem_tx_gain_db - config.tx_interconnect_loss_db
}

pub fn cascade_rx_gain(config: &RfChainConfig) -> f64 {
    config.frecon_rx_gain_db + config.fem_rx_gain_db - config.rx_interconnect_loss_db
}

/// Rapp AM/AM model of the Tx chain. AM/PM is not modelled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaModel {
    pub small_signal_gain_db: f64,
    pub output_saturation_dbm: f64,
    pub smoothness: f64,
}

impl Default for PaModel {
    fn default() -> Self {
        PaModel::calibrated(
            cascade_tx_gain(&RfChainConfig::default()),
            DEFAULT_P1DB_DBM,
            DEFAULT_RAPP_SMOOTHNESS,
        )
    }
}

impl PaModel {
    /// Places the 1 dB compression point at `p1db_out_dbm` output power.
    ///
    /// At compression the Rapp gain factor is `10^(-1/20)`, i.e.
    /// `(g·a/A_sat)^(2p) = 10^(p/10) - 1`.
    pub fn calibrated(small_signal_gain_db: f64, p1db_out_dbm: f64, smoothness: f64) -> Self {
        let ratio = (10f64.powf(smoothness / 10.0) - 1.0).powf(1.0 / (2.0 * smoothness));
        let out_amplitude = db_to_amplitude(p1db_out_dbm);
        let sat_amplitude = out_amplitude / (ratio * db_to_amplitude(-1.0));
        PaModel {
            small_signal_gain_db,
            output_saturation_dbm: 20.0 * sat_amplitude.log10(),
            smoothness,
        }
    }

    pub fn saturation_amplitude(&self) -> f64 {
        db_to_amplitude(self.output_saturation_dbm)
    }

    pub fn output_amplitude(&self, input_amplitude: f64) -> f64 {
        let linear = db_to_amplitude(self.small_signal_gain_db) * input_amplitude;
        let p2 = 2.0 * self.smoothness;
        linear / (1.0 + (linear / self.saturation_amplitude()).powf(p2)).powf(1.0 / p2)
    }

    pub fn output_power_dbm(&self, input_dbm: f64) -> f64 {
        20.0 * self.output_amplitude(db_to_amplitude(input_dbm)).log10()
    }

    /// Input drive at which the gain is 1 dB below small signal.
    pub fn input_p1db_dbm(&self) -> f64 {
        let ratio = (10f64.powf(self.smoothness / 10.0) - 1.0).powf(1.0 / (2.0 * self.smoothness));
        20.0 * (ratio * self.saturation_amplitude()).log10() - self.small_signal_gain_db
    }
}

/// Memoryless AM/AM distortion; per-sample phase is preserved.
pub fn apply_pa(samples: &[Complex64], model: &PaModel) -> Vec<Complex64> {
    samples
        .iter()
        .map(|&x| {
            let a = x.norm();
            if a == 0.0 {
                x
            } else {
                x * (model.output_amplitude(a) / a)
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchKind {
    /// TDD switch.
    Spdt,
    /// Beam-selection switch.
    Sp4t,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwitchModel {
    pub spdt_isolation_db: f64,
    pub sp4t_isolation_db: f64,
    pub insertion_loss_db: f64,
}

impl Default for SwitchModel {
    fn default() -> Self {
        SwitchModel {
            spdt_isolation_db: 38.0,
            sp4t_isolation_db: 30.0,
            insertion_loss_db: 0.0,
        }
    }
}

impl SwitchModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.spdt_isolation_db > 0.0) {
            return Err(Error::invalid_field("spdt_isolation_db", "must be > 0 dB"));
        }
        if !(self.sp4t_isolation_db > 0.0) {
            return Err(Error::invalid_field("sp4t_isolation_db", "must be > 0 dB"));
        }
        if !self.insertion_loss_db.is_finite() {
            return Err(Error::invalid_field("insertion_loss_db", "must be finite"));
        }
        Ok(())
    }

    pub fn isolation_db(&self, kind: SwitchKind) -> f64 {
        match kind {
            SwitchKind::Spdt => self.spdt_isolation_db,
            SwitchKind::Sp4t => self.sp4t_isolation_db,
        }
    }
}

/// Output of a switch: the selected path after insertion loss plus every
/// unselected path attenuated by the isolation.
pub fn apply_switch<S: AsRef<[Complex64]>>(
    selected: &[Complex64],
    leaking: &[S],
    model: &SwitchModel,
    kind: SwitchKind,
) -> Result<Vec<Complex64>> {
    if let Some(bad) = leaking.iter().find(|l| l.as_ref().len() != selected.len()) {
        return Err(Error::DimensionMismatch(format!(
            "leaking path has {} samples, selected path has {}",
            bad.as_ref().len(),
            selected.len()
        )));
    }
    let through = db_to_amplitude(-model.insertion_loss_db);
    let leak = db_to_amplitude(-model.isolation_db(kind));
    let mut out: Vec<Complex64> = selected.iter().map(|x| x * through).collect();
    for path in leaking {
        for (o, x) in out.iter_mut().zip(path.as_ref()) {
            *o += x * leak;
        }
    }
    Ok(out)
}

/// Seeded circularly-symmetric complex Gaussian generator.
#[derive(Clone, Debug)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        NoiseSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// One sample with `E|n|^2 = power_mw`.
    pub fn sample(&mut self, power_mw: f64) -> Complex64 {
        let sigma = (power_mw / 2.0).sqrt();
        let re: f64 = StandardNormal.sample(&mut self.rng);
        let im: f64 = StandardNormal.sample(&mut self.rng);
        Complex64::new(re * sigma, im * sigma)
    }

    pub fn add_to(&mut self, samples: &mut [Complex64], power_mw: f64) {
        for x in samples {
            *x += self.sample(power_mw);
        }
    }
}

/// Adds thermal noise of `-174 dBm/Hz + 10log10(BW) + NF` to `samples`.
pub fn add_rx_noise(samples: &[Complex64], config: &RfChainConfig, seed: u64) -> Vec<Complex64> {
    let mut out = samples.to_vec();
    if let Some(dbm) = config.noise_power_dbm() {
        NoiseSource::new(seed).add_to(&mut out, dbm_to_mw(dbm));
    }
    out
}

/// Power level at the input and output of one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageLevel {
    pub stage: String,
    pub input_dbm: f64,
    pub output_dbm: f64,
}

fn stage(name: &str, input_dbm: f64, output_dbm: f64) -> StageLevel {
    StageLevel {
        stage: name.to_string(),
        input_dbm,
        output_dbm,
    }
}

/// Tx chain levels for a CW drive. The FEM stage carries the whole-chain
/// compression so the last output equals the PA model output.
pub fn tx_power_trace(config: &RfChainConfig, pa: &PaModel, input_dbm: f64) -> Vec<StageLevel> {
    let frecon_out = input_dbm + config.frecon_tx_gain_db;
    let link_out = frecon_out - config.tx_interconnect_loss_db;
    let pa_out = pa.output_power_dbm(input_dbm);
    vec![
        stage("frecon_tx", input_dbm, frecon_out),
        stage("tx_interconnect", frecon_out, link_out),
        stage("fem_tx", link_out, pa_out),
    ]
}

pub fn rx_power_trace(config: &RfChainConfig, input_dbm: f64) -> Vec<StageLevel> {
    let fem_out = input_dbm + config.fem_rx_gain_db;
    let link_out = fem_out - config.rx_interconnect_loss_db;
    let frecon_out = link_out + config.frecon_rx_gain_db;
    vec![
        stage("fem_rx", input_dbm, fem_out),
        stage("rx_interconnect", fem_out, link_out),
        stage("frecon_rx", link_out, frecon_out),
    ]
}

pub fn write_stage_csv(levels: &[StageLevel], mut out: impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "stage,input_dbm,output_dbm")?;
    for l in levels {
        writeln!(out, "{},{},{}", l.stage, l.input_dbm, l.output_dbm)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn tone(power_dbm: f64, n: usize) -> Vec<Complex64> {
        let a = db_to_amplitude(power_dbm);
        (0..n)
            .map(|i| Complex64::from_polar(a, 0.37 * i as f64))
            .collect()
    }

    #[test]
    fn cascade_gains() {
        let cfg = RfChainConfig::default();
        assert_abs_diff_eq!(cascade_tx_gain(&cfg), 22.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cascade_rx_gain(&cfg), 18.8, epsilon = 1e-12);
        let zero = RfChainConfig {
            frecon_tx_gain_db: 0.0,
            fem_tx_gain_db: 0.0,
            tx_interconnect_loss_db: 0.0,
            ..cfg.clone()
        };
        assert_eq!(cascade_tx_gain(&zero), 0.0);
        let lossless = RfChainConfig {
            tx_interconnect_loss_db: 0.0,
            ..cfg
        };
        assert_abs_diff_eq!(cascade_tx_gain(&lossless), 23.0, epsilon = 1e-12);
    }

    #[test]
    fn config_validation() {
        let bad = RfChainConfig {
            bandwidth_hz: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SwitchModel {
            sp4t_isolation_db: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn pa_small_signal_limit() {
        let pa = PaModel::default();
        let input = pa.input_p1db_dbm() - 30.0;
        let gain = pa.output_power_dbm(input) - input;
        assert!((gain - pa.small_signal_gain_db).abs() < 0.01);
    }

    #[test]
    fn pa_p1db_point() {
        let pa = PaModel::default();
        let drive = pa.input_p1db_dbm();
        let out = mean_power_dbm(&apply_pa(&tone(drive, 16), &pa));
        assert_abs_diff_eq!(out, 18.0, epsilon = 0.05);
        assert_abs_diff_eq!(out - drive, pa.small_signal_gain_db - 1.0, epsilon = 1e-9);
    }

    #[test]
    fn pa_saturates() {
        let pa = PaModel::default();
        let mut last = 0.0;
        for dbm in (-40..80).map(|d| d as f64) {
            let out = pa.output_power_dbm(dbm);
            assert!(out >= last || last == 0.0);
            assert!(out <= pa.output_saturation_dbm + 1e-9);
            last = out;
        }
        assert_abs_diff_eq!(
            pa.output_power_dbm(200.0),
            pa.output_saturation_dbm,
            epsilon = 1e-6
        );
    }

    #[test]
    fn switch_identity_and_isolation() {
        let model = SwitchModel::default();
        let x = tone(0.0, 64);
        let none: [Vec<Complex64>; 0] = [];
        assert_eq!(
            apply_switch(&x, &none, &model, SwitchKind::Sp4t).unwrap(),
            x
        );

        let zero = vec![Complex64::new(0.0, 0.0); 64];
        for (kind, iso) in [(SwitchKind::Sp4t, 30.0), (SwitchKind::Spdt, 38.0)] {
            let out = apply_switch(&zero, &[x.clone()], &model, kind).unwrap();
            let suppression = mean_power_dbm(&x) - mean_power_dbm(&out);
            assert_abs_diff_eq!(suppression, iso, epsilon = 0.01);
        }
        assert!(apply_switch(&x, &[tone(0.0, 3)], &model, SwitchKind::Spdt).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let cfg = RfChainConfig::default();
        let x = tone(-80.0, 1000);
        let a = add_rx_noise(&x, &cfg, 7);
        let b = add_rx_noise(&x, &cfg, 7);
        assert_eq!(a, b);
        assert_ne!(a, add_rx_noise(&x, &cfg, 8));
        let quiet = RfChainConfig {
            thermal_noise: false,
            ..cfg
        };
        assert_eq!(add_rx_noise(&x, &quiet, 7), x);
    }

    #[test]
    fn noise_power_budget() {
        let cfg = RfChainConfig::default();
        assert_abs_diff_eq!(cfg.noise_power_dbm().unwrap(), -95.9897, epsilon = 1e-4);
    }

    #[test]
    fn traces_end_at_chain_output() {
        let cfg = RfChainConfig::default();
        let pa = PaModel::default();
        let tx = tx_power_trace(&cfg, &pa, -30.0);
        assert_abs_diff_eq!(
            tx.last().unwrap().output_dbm,
            pa.output_power_dbm(-30.0),
            epsilon = 1e-12
        );
        let rx = rx_power_trace(&cfg, -60.0);
        assert_abs_diff_eq!(rx.last().unwrap().output_dbm, -60.0 + 18.8, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn pa_monotone_and_sublinear(a in 1e-6f64..1e3, k in 1.0f64..8.0) {
            let pa = PaModel::default();
            let lo = pa.output_amplitude(a);
            let hi = pa.output_amplitude(a * k);
            prop_assert!(hi >= lo);
            prop_assert!(hi <= k * lo * (1.0 + 1e-12));
        }

        #[test]
        fn pa_preserves_phase(re in -10.0f64..10.0, im in -10.0f64..10.0) {
            let x = Complex64::new(re, im);
            prop_assume!(x.norm() > 1e-9);
            let y = apply_pa(&[x], &PaModel::default())[0];
            prop_assert!((y.arg() - x.arg()).abs() < 1e-12);
        }

        #[test]
        fn switch_is_linear(s in -5.0f64..5.0, re in -1.0f64..1.0, im in -1.0f64..1.0) {
            let model = SwitchModel::default();
            let sel = vec![Complex64::new(re, im), Complex64::new(im, -re)];
            let leak = vec![Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.25)];
            let base = apply_switch(&sel, &[leak.clone()], &model, SwitchKind::Sp4t).unwrap();
            let sel_s: Vec<_> = sel.iter().map(|x| x * s).collect();
            let leak_s: Vec<_> = leak.iter().map(|x| x * s).collect();
            let scaled = apply_switch(&sel_s, &[leak_s], &model, SwitchKind::Sp4t).unwrap();
            for (a, b) in base.iter().zip(&scaled) {
                prop_assert!((a * s - b).norm() < 1e-12);
            }
        }
    }
}
