//! Signal path between the UE transmitters and the 16 BS baseband chains.
//!
//! UE symbols go through the PA in the time domain; the channel is applied
//! per subcarrier (delays are far shorter than the cyclic prefix). At the BS
//! each chain sees its selected butler port plus the three other ports
//! leaking through the SP4T switch, thermal noise referenced to the chain
//! input, and the linear Rx gain.

use ndarray::{Array2, Array4};
use num_complex::Complex64;

use crate::array::{BeamIndex, NUM_BEAMS, NUM_SUBARRAYS};
use crate::error::{Error, Result};
use crate::ofdm::OfdmModem;
use crate::rf_chain::{
    apply_pa, apply_switch, db_to_amplitude, dbm_to_mw, NoiseSource, PaModel, SwitchKind,
    SwitchModel,
};

/// UE transmitter: OFDM at `tx_power_dbm` mean time-domain power through an
/// optional PA.
#[derive(Clone, Debug, PartialEq)]
pub struct UeTransmitter {
    pub tx_power_dbm: f64,
    pub pa: Option<PaModel>,
}

impl UeTransmitter {
    /// Post-PA frequency-domain values on the used subcarriers. Drive is set
    /// so a unit-power symbol on every used subcarrier gives the configured
    /// output power with a linear PA.
    pub fn transmit(&self, modem: &OfdmModem, symbols: &[Complex64]) -> Result<Vec<Complex64>> {
        let cfg = modem.config();
        let out_mw = dbm_to_mw(self.tx_power_dbm);
        let target = (out_mw * cfg.fft_size as f64 / cfg.used_subcarriers as f64).sqrt();
        match &self.pa {
            None => Ok(symbols.iter().map(|x| x * target).collect()),
            Some(pa) => {
                let drive = target / db_to_amplitude(pa.small_signal_gain_db);
                let scaled: Vec<Complex64> = symbols.iter().map(|x| x * drive).collect();
                let time = modem.modulate(&scaled)?;
                modem.demodulate(&apply_pa(&time, pa))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReceiverModel {
    /// Beam-port leakage; `None` models an ideal switch.
    pub switch: Option<SwitchModel>,
    pub rx_gain_db: f64,
    /// Per-sample noise at the chain input; `None` is noiseless.
    pub noise_power_dbm: Option<f64>,
}

impl ReceiverModel {
    pub fn ideal() -> Self {
        ReceiverModel {
            switch: None,
            rx_gain_db: 0.0,
            noise_power_dbm: None,
        }
    }
}

/// Received OFDM symbol of every chain.
#[derive(Clone, Debug)]
pub struct ReceivedSymbol {
    /// `chains x used_subcarriers`.
    pub freq: Array2<Complex64>,
    /// Time-domain samples per chain, CP included, after noise and gain.
    pub time: Vec<Vec<Complex64>>,
}

/// Passes one OFDM symbol (per-UE post-PA frequency values) through the
/// beam-port channel `ports` (`subcarriers x 16 x 4 x K`).
pub fn receive_symbol(
    ports: &Array4<Complex64>,
    selection: &[BeamIndex],
    tx: &[Vec<Complex64>],
    receiver: &ReceiverModel,
    modem: &OfdmModem,
    noise: &mut NoiseSource,
) -> Result<ReceivedSymbol> {
    let (sc, subarrays, beams, k) = ports.dim();
    if subarrays != NUM_SUBARRAYS || beams != NUM_BEAMS {
        return Err(Error::DimensionMismatch(format!(
            "beam-port channel is {subarrays}x{beams}, expected {NUM_SUBARRAYS}x{NUM_BEAMS}"
        )));
    }
    if selection.len() != NUM_SUBARRAYS {
        return Err(Error::InvalidArgument(format!(
            "selection has {} entries, expected {NUM_SUBARRAYS}",
            selection.len()
        )));
    }
    if tx.len() != k || tx.iter().any(|t| t.len() != sc) {
        return Err(Error::DimensionMismatch(format!(
            "expected {k} UE signals of {sc} subcarriers"
        )));
    }
    let gain = db_to_amplitude(receiver.rx_gain_db);
    let noise_mw = receiver.noise_power_dbm.map(dbm_to_mw);
    let mut freq = Array2::zeros((NUM_SUBARRAYS, sc));
    let mut time = Vec::with_capacity(NUM_SUBARRAYS);
    for (r, beam) in selection.iter().enumerate() {
        let port_signals: Vec<Vec<Complex64>> = (0..NUM_BEAMS)
            .map(|b| {
                (0..sc)
                    .map(|s| (0..k).map(|u| ports[(s, r, b, u)] * tx[u][s]).sum())
                    .collect()
            })
            .collect();
        let chain_in = match &receiver.switch {
            None => port_signals[beam.get()].clone(),
            Some(model) => {
                let leaking: Vec<&Vec<Complex64>> = port_signals
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| *b != beam.get())
                    .map(|(_, p)| p)
                    .collect();
                apply_switch(&port_signals[beam.get()], &leaking, model, SwitchKind::Sp4t)?
            }
        };
        let mut samples = modem.modulate(&chain_in)?;
        if let Some(mw) = noise_mw {
            noise.add_to(&mut samples, mw);
        }
        for x in &mut samples {
            *x *= gain;
        }
        let demod = modem.demodulate(&samples)?;
        for (s, v) in demod.into_iter().enumerate() {
            freq[(r, s)] = v;
        }
        time.push(samples);
    }
    Ok(ReceivedSymbol { freq, time })
}
