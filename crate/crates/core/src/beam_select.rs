//! Beam sweep, per-subarray argmax selection, and the TDD / beam control
//! word that drives the FRECON and FEM switches.
//!
//! Control word layout (`u64`, shown in hex for debugging):
//!
//! | bits   | meaning                                        |
//! |--------|------------------------------------------------|
//! | 0..32  | beam of subarray `r` in bits `2r..2r+2`         |
//! | 32..34 | TDD state: `0b01` = Rx, `0b10` = Tx             |
//! | 34..64 | reserved, must be zero                          |
//!
//! All beams 0 in Rx mode is therefore `0x1_0000_0000`.

use std::fmt;

use ndarray::Array4;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::{BeamIndex, NUM_BEAMS, NUM_SUBARRAYS};
use crate::error::{Error, Result};
use crate::frontend::{receive_symbol, ReceiverModel};
use crate::ofdm::{estimate_channel, OfdmModem, PilotPlan};
use crate::rf_chain::NoiseSource;

/// Per subarray and beam: Σ over UEs and subcarriers of `|ĥ|^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub magnitudes: [[f64; NUM_BEAMS]; NUM_SUBARRAYS],
}

impl SweepResult {
    pub fn new(magnitudes: [[f64; NUM_BEAMS]; NUM_SUBARRAYS]) -> Result<Self> {
        if magnitudes.iter().flatten().any(|m| !(*m >= 0.0)) {
            return Err(Error::InvalidArgument(
                "sweep magnitudes must be non-negative".into(),
            ));
        }
        Ok(SweepResult { magnitudes })
    }

    pub fn scaled(&self, factor: f64) -> SweepResult {
        SweepResult {
            magnitudes: self.magnitudes.map(|row| row.map(|m| m * factor)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<BeamIndex>", into = "Vec<BeamIndex>")]
pub struct BeamSelection([BeamIndex; NUM_SUBARRAYS]);

impl BeamSelection {
    pub fn uniform(beam: BeamIndex) -> Self {
        BeamSelection([beam; NUM_SUBARRAYS])
    }

    pub fn indices(&self) -> &[BeamIndex] {
        &self.0
    }

    pub fn get(&self, subarray: usize) -> BeamIndex {
        self.0[subarray]
    }
}

impl TryFrom<Vec<BeamIndex>> for BeamSelection {
    type Error = Error;

    fn try_from(v: Vec<BeamIndex>) -> Result<Self> {
        let n = v.len();
        v.try_into().map(BeamSelection).map_err(|_| {
            Error::InvalidArgument(format!(
                "selection has {n} entries, expected {NUM_SUBARRAYS}"
            ))
        })
    }
}

impl From<BeamSelection> for Vec<BeamIndex> {
    fn from(s: BeamSelection) -> Self {
        s.0.to_vec()
    }
}

/// What the sweep transmits and how the BS receives it.
#[derive(Clone, Debug)]
pub struct SweepSetup<'a> {
    pub modem: &'a OfdmModem,
    pub plan: &'a PilotPlan,
    /// Per-UE post-PA pilot symbol on the used subcarriers.
    pub tx_pilots: &'a [Vec<Complex64>],
    pub receiver: &'a ReceiverModel,
}

/// Four Rx sweep slots: every subarray on beam `b`, pilots estimated and
/// their energy accumulated into column `b`.
pub fn run_beam_sweep(
    ports: &Array4<Complex64>,
    setup: &SweepSetup<'_>,
    noise: &mut NoiseSource,
) -> Result<SweepResult> {
    let mut magnitudes = [[0.0; NUM_BEAMS]; NUM_SUBARRAYS];
    for beam in BeamIndex::ALL {
        let selection = BeamSelection::uniform(beam);
        let rx = receive_symbol(
            ports,
            selection.indices(),
            setup.tx_pilots,
            setup.receiver,
            setup.modem,
            noise,
        )?;
        let est = estimate_channel(rx.freq.view(), setup.plan, setup.modem.config())?;
        for ((_, chain, _), h) in est.indexed_iter() {
            magnitudes[chain][beam.get()] += h.norm_sqr();
        }
    }
    SweepResult::new(magnitudes)
}

/// Per-subarray argmax; ties go to the lowest beam index.
pub fn select_beams(sweep: &SweepResult) -> BeamSelection {
    BeamSelection(sweep.magnitudes.map(|row| {
        let mut best = 0;
        for b in 1..NUM_BEAMS {
            if row[b] > row[best] {
                best = b;
            }
        }
        BeamIndex::ALL[best]
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TddState {
    Tx,
    Rx,
}

const TDD_SHIFT: u32 = 32;
const TDD_RX: u64 = 0b01;
const TDD_TX: u64 = 0b10;
const RESERVED_MASK: u64 = !((1u64 << 34) - 1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ControlWord(pub u64);

impl fmt::Display for ControlWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#011x}", self.0)
    }
}

impl ControlWord {
    pub fn beam_bits(self) -> u32 {
        self.0 as u32
    }
}

pub fn encode_control_word(selection: &BeamSelection, tdd: TddState) -> ControlWord {
    let beams = selection
        .indices()
        .iter()
        .enumerate()
        .fold(0u64, |acc, (r, b)| acc | ((b.get() as u64) << (2 * r)));
    let tdd_bits = match tdd {
        TddState::Rx => TDD_RX,
        TddState::Tx => TDD_TX,
    };
    ControlWord(beams | (tdd_bits << TDD_SHIFT))
}

pub fn decode_control_word(word: ControlWord) -> Result<(BeamSelection, TddState)> {
    if word.0 & RESERVED_MASK != 0 {
        return Err(Error::MalformedControlWord {
            word: word.0,
            reason: "reserved bits set".into(),
        });
    }
    let tdd = match (word.0 >> TDD_SHIFT) & 0b11 {
        TDD_RX => TddState::Rx,
        TDD_TX => TddState::Tx,
        other => {
            return Err(Error::MalformedControlWord {
                word: word.0,
                reason: format!("invalid TDD field {other:#04b}"),
            })
        }
    };
    let beams = std::array::from_fn(|r| BeamIndex::ALL[((word.0 >> (2 * r)) & 0b11) as usize]);
    Ok((BeamSelection(beams), tdd))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotKind {
    /// Rx slot with every subarray on the given beam.
    Sweep(BeamIndex),
    Rx,
    Tx,
}

/// Slots of a frame: when the frame sweeps, the first four slots are sweep
/// slots; the remaining slots alternate uplink Rx and downlink Tx.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TddSchedule {
    pub slots_per_frame: u64,
    /// A sweep happens in frames `0, period, 2·period, ...`.
    pub sweep_period_frames: u64,
}

impl Default for TddSchedule {
    fn default() -> Self {
        TddSchedule {
            slots_per_frame: 10,
            sweep_period_frames: 1,
        }
    }
}

impl TddSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.slots_per_frame <= NUM_BEAMS as u64 {
            return Err(Error::invalid_field(
                "slots_per_frame",
                format!("must exceed the {NUM_BEAMS} sweep slots"),
            ));
        }
        if self.sweep_period_frames == 0 {
            return Err(Error::invalid_field(
                "sweep_period_frames",
                "must be at least 1",
            ));
        }
        Ok(())
    }

    pub fn period(&self) -> u64 {
        self.slots_per_frame * self.sweep_period_frames
    }

    pub fn is_sweep_frame(&self, frame: u64) -> bool {
        frame % self.sweep_period_frames == 0
    }

    pub fn slot_kind(&self, position: u64) -> SlotKind {
        let frame = position / self.slots_per_frame;
        let slot = position % self.slots_per_frame;
        let mut data_slot = slot;
        if self.is_sweep_frame(frame) {
            if slot < NUM_BEAMS as u64 {
                return SlotKind::Sweep(BeamIndex::ALL[slot as usize]);
            }
            data_slot -= NUM_BEAMS as u64;
        }
        if data_slot % 2 == 0 {
            SlotKind::Rx
        } else {
            SlotKind::Tx
        }
    }
}

pub fn tdd_schedule_step(schedule: &TddSchedule, position: u64) -> SlotKind {
    schedule.slot_kind(position)
}

/// Single-owner sequencer that turns the schedule and the current
/// selection into one control word per slot.
#[derive(Clone, Debug, PartialEq)]
pub struct TddController {
    schedule: TddSchedule,
    position: u64,
    selection: BeamSelection,
}

impl TddController {
    pub fn new(schedule: TddSchedule) -> Result<Self> {
        schedule.validate()?;
        Ok(TddController {
            schedule,
            position: 0,
            selection: BeamSelection::uniform(BeamIndex::ALL[0]),
        })
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn selection(&self) -> &BeamSelection {
        &self.selection
    }

    pub fn set_selection(&mut self, selection: BeamSelection) {
        self.selection = selection;
    }

    /// Emits the current slot and moves to the next one.
    pub fn advance(&mut self) -> (SlotKind, ControlWord) {
        let kind = self.schedule.slot_kind(self.position);
        let word = match kind {
            SlotKind::Sweep(b) => encode_control_word(&BeamSelection::uniform(b), TddState::Rx),
            SlotKind::Rx => encode_control_word(&self.selection, TddState::Rx),
            SlotKind::Tx => encode_control_word(&self.selection, TddState::Tx),
        };
        self.position += 1;
        (kind, word)
    }
}

/// One row per subarray of a sweep, ready for CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionLogEntry {
    pub frame: u64,
    pub subarray: usize,
    pub chosen_beam: BeamIndex,
    pub magnitudes: [f64; NUM_BEAMS],
}

pub fn selection_log(
    frame: u64,
    sweep: &SweepResult,
    selection: &BeamSelection,
) -> Vec<SelectionLogEntry> {
    (0..NUM_SUBARRAYS)
        .map(|r| SelectionLogEntry {
            frame,
            subarray: r,
            chosen_beam: selection.get(r),
            magnitudes: sweep.magnitudes[r],
        })
        .collect()
}

pub const SELECTION_CSV_HEADER: &str =
    "frame,subarray,chosen_beam,magnitude_0,magnitude_1,magnitude_2,magnitude_3";

pub fn write_selection_csv(
    entries: &[SelectionLogEntry],
    mut out: impl std::io::Write,
) -> std::io::Result<()> {
    writeln!(out, "{SELECTION_CSV_HEADER}")?;
    for e in entries {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.frame,
            e.subarray,
            e.chosen_beam.get(),
            e.magnitudes[0],
            e.magnitudes[1],
            e.magnitudes[2],
            e.magnitudes[3]
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sweep_with_row(row: [f64; 4]) -> SweepResult {
        SweepResult::new([row; 16]).unwrap()
    }

    #[test]
    fn argmax_and_ties() {
        let s = select_beams(&sweep_with_row([0.1, 0.9, 0.3, 0.3]));
        assert!(s.indices().iter().all(|b| b.get() == 1));
        let s = select_beams(&sweep_with_row([0.5; 4]));
        assert!(s.indices().iter().all(|b| b.get() == 0));
        let s = select_beams(&sweep_with_row([0.0; 4]));
        assert!(s.indices().iter().all(|b| b.get() == 0));
    }

    #[test]
    fn sweep_result_rejects_negative() {
        let mut m = [[1.0; 4]; 16];
        m[3][2] = -1.0;
        assert!(SweepResult::new(m).is_err());
    }

    #[test]
    fn canonical_words() {
        let zero = BeamSelection::uniform(BeamIndex::ALL[0]);
        let w = encode_control_word(&zero, TddState::Rx);
        assert_eq!(w, ControlWord(0x1_0000_0000));
        assert_eq!(w.to_string(), "0x100000000");
        assert_eq!(decode_control_word(w).unwrap(), (zero, TddState::Rx));

        let all3 = BeamSelection::uniform(BeamIndex::ALL[3]);
        let w = encode_control_word(&all3, TddState::Tx);
        assert_eq!(w.beam_bits(), u32::MAX);
        assert_eq!(decode_control_word(w).unwrap(), (all3, TddState::Tx));
    }

    #[test]
    fn malformed_words() {
        assert!(decode_control_word(ControlWord(0)).is_err());
        assert!(decode_control_word(ControlWord(0b11 << 32)).is_err());
        assert!(decode_control_word(ControlWord((1 << 32) | (1 << 40))).is_err());
    }

    #[test]
    fn schedule_shape() {
        let sched = TddSchedule::default();
        assert_eq!(sched.slot_kind(0), SlotKind::Sweep(BeamIndex::ALL[0]));
        let kinds: Vec<SlotKind> = (0..10).map(|p| sched.slot_kind(p)).collect();
        assert_eq!(
            kinds
                .iter()
                .filter(|k| matches!(k, SlotKind::Sweep(_)))
                .count(),
            4
        );
        assert_eq!(kinds[4], SlotKind::Rx);
        assert_eq!(kinds[5], SlotKind::Tx);
        for p in 0..100 {
            assert_eq!(sched.slot_kind(p), sched.slot_kind(p + 10));
        }
        let sparse = TddSchedule {
            slots_per_frame: 6,
            sweep_period_frames: 3,
        };
        assert_eq!(sparse.slot_kind(6), SlotKind::Rx);
        assert_eq!(sparse.slot_kind(18), SlotKind::Sweep(BeamIndex::ALL[0]));
        for p in 0..100 {
            assert_eq!(sparse.slot_kind(p), sparse.slot_kind(p + sparse.period()));
        }
        assert!(TddSchedule {
            slots_per_frame: 4,
            sweep_period_frames: 1
        }
        .validate()
        .is_err());
        assert!(TddSchedule {
            slots_per_frame: 8,
            sweep_period_frames: 0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn controller_emits_sweep_then_selection() {
        let mut ctl = TddController::new(TddSchedule::default()).unwrap();
        let chosen = BeamSelection::try_from(
            (0..16)
                .map(|r| BeamIndex::ALL[(r * 3) % 4])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        ctl.set_selection(chosen.clone());
        for b in 0..4 {
            let (kind, word) = ctl.advance();
            assert_eq!(kind, SlotKind::Sweep(BeamIndex::ALL[b]));
            let (sel, tdd) = decode_control_word(word).unwrap();
            assert_eq!(sel, BeamSelection::uniform(BeamIndex::ALL[b]));
            assert_eq!(tdd, TddState::Rx);
        }
        let (_, word) = ctl.advance();
        assert_eq!(
            decode_control_word(word).unwrap(),
            (chosen.clone(), TddState::Rx)
        );
        let (_, word) = ctl.advance();
        assert_eq!(decode_control_word(word).unwrap(), (chosen, TddState::Tx));
        assert_eq!(ctl.position(), 6);
    }

    #[test]
    fn selection_csv_header() {
        let sweep = sweep_with_row([1.0, 2.0, 3.0, 0.5]);
        let sel = select_beams(&sweep);
        let mut out = Vec::new();
        write_selection_csv(&selection_log(0, &sweep, &sel), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next().unwrap(), SELECTION_CSV_HEADER);
        assert_eq!(text.lines().nth(1).unwrap(), "0,0,2,1,2,3,0.5");
        assert_eq!(text.lines().count(), 17);
    }

    fn selection_strategy() -> impl Strategy<Value = BeamSelection> {
        proptest::collection::vec(0usize..4, 16).prop_map(|v| {
            BeamSelection::try_from(v.into_iter().map(|b| BeamIndex::ALL[b]).collect::<Vec<_>>())
                .unwrap()
        })
    }

    proptest! {
        #[test]
        fn control_word_round_trip(sel in selection_strategy(), tx in any::<bool>()) {
            let tdd = if tx { TddState::Tx } else { TddState::Rx };
            prop_assert_eq!(decode_control_word(encode_control_word(&sel, tdd)).unwrap(), (sel, tdd));
        }

        #[test]
        fn selection_scale_invariant(
            rows in proptest::collection::vec(proptest::array::uniform4(0.0f64..10.0), 16),
            c in 1e-6f64..1e6,
        ) {
            let m: [[f64; 4]; 16] = rows.try_into().unwrap();
            let s = SweepResult::new(m).unwrap();
            prop_assert_eq!(select_beams(&s), select_beams(&s.scaled(c)));
        }
    }
}
