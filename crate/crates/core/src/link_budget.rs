//! EIRP, measured and theoretical path loss of an over-the-air bench link.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::channel::fspl_db;
use crate::error::{Error, Result};

/// All terms in dB, dBm or dBi; `p_rx_dbm` is the IF output power at the
/// receiver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkBudgetInput {
    pub p_tx_dbm: f64,
    pub tx_chain_gain_db: f64,
    pub tx_cable_loss_db: f64,
    pub tx_antenna_gain_dbi: f64,
    pub p_rx_dbm: f64,
    pub rx_chain_gain_db: f64,
    pub rx_cable_loss_db: f64,
    pub rx_antenna_gain_dbi: f64,
    pub distance_m: f64,
    pub frequency_hz: f64,
}

impl LinkBudgetInput {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance_m > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "distance must be positive, got {}",
                self.distance_m
            )));
        }
        if !(self.frequency_hz > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "frequency must be positive, got {}",
                self.frequency_hz
            )));
        }
        if self.tx_cable_loss_db < 0.0 || self.rx_cable_loss_db < 0.0 {
            return Err(Error::InvalidArgument(
                "cable losses must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkBudgetResult {
    pub eirp_dbm: f64,
    pub pl_measured_db: f64,
    pub pl_theoretical_db: f64,
    pub gap_db: f64,
}

pub fn eirp(input: &LinkBudgetInput) -> f64 {
    input.p_tx_dbm + input.tx_chain_gain_db - input.tx_cable_loss_db + input.tx_antenna_gain_dbi
}

pub fn measured_pl(input: &LinkBudgetInput) -> f64 {
    eirp(input)
        - (input.p_rx_dbm - input.rx_chain_gain_db + input.rx_cable_loss_db
            - input.rx_antenna_gain_dbi)
}

/// Free-space loss less both antenna gains.
pub fn theoretical_pl(
    distance_m: f64,
    frequency_hz: f64,
    tx_antenna_gain_dbi: f64,
    rx_antenna_gain_dbi: f64,
) -> Result<f64> {
    Ok(fspl_db(distance_m, frequency_hz)? - tx_antenna_gain_dbi - rx_antenna_gain_dbi)
}

pub fn budget_gap(pl_theoretical_db: f64, pl_measured_db: f64) -> f64 {
    (pl_theoretical_db - pl_measured_db).abs()
}

pub fn evaluate(input: &LinkBudgetInput) -> Result<LinkBudgetResult> {
    input.validate()?;
    let pl_theoretical_db = theoretical_pl(
        input.distance_m,
        input.frequency_hz,
        input.tx_antenna_gain_dbi,
        input.rx_antenna_gain_dbi,
    )?;
    let pl_measured_db = measured_pl(input);
    Ok(LinkBudgetResult {
        eirp_dbm: eirp(input),
        pl_measured_db,
        pl_theoretical_db,
        gap_db: budget_gap(pl_theoretical_db, pl_measured_db),
    })
}

/// Received IF power implied by a true path loss; the inverse of
/// [`measured_pl`].
pub fn received_power_for(input: &LinkBudgetInput, path_loss_db: f64) -> f64 {
    eirp(input) - path_loss_db + input.rx_antenna_gain_dbi - input.rx_cable_loss_db
        + input.rx_chain_gain_db
}

/// One row of the distance / path-loss table. The reference columns carry
/// hardware bench measurements for comparison and are never computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub distance_m: f64,
    pub eirp_dbm: f64,
    pub p_rx_dbm: f64,
    pub pl_theoretical_db: f64,
    pub pl_measured_db: f64,
    pub gap_db: f64,
    pub reference_pl_measured_db: Option<f64>,
    pub reference_gap_db: Option<f64>,
}

fn opt(v: Option<f64>, precision: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.precision$}"))
}

pub fn format_report_text(rows: &[BudgetRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>8} {:>10} {:>10} {:>8} {:>12} {:>10}",
        "d (m)", "PL_th (dB)", "PL_m (dB)", "Gap", "ref PL_m", "ref Gap"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>8} {:>10.1} {:>10.1} {:>8.1} {:>12} {:>10}",
            r.distance_m,
            r.pl_theoretical_db,
            r.pl_measured_db,
            r.gap_db,
            opt(r.reference_pl_measured_db, 1),
            opt(r.reference_gap_db, 1),
        );
    }
    s
}

pub const REPORT_CSV_HEADER: &str = "distance_m,eirp_dbm,p_rx_dbm,pl_theoretical_db,pl_measured_db,gap_db,reference_pl_measured_db,reference_gap_db";

pub fn write_report_csv(rows: &[BudgetRow], mut out: impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "{REPORT_CSV_HEADER}")?;
    let cell = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.distance_m,
            r.eirp_dbm,
            r.p_rx_dbm,
            r.pl_theoretical_db,
            r.pl_measured_db,
            r.gap_db,
            cell(r.reference_pl_measured_db),
            cell(r.reference_gap_db),
        )?;
    }
    Ok(())
}
