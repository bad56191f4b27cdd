//! Scenario configuration and the three end-to-end runs: multi-user uplink,
//! link-budget bench, and sweep only.
//!
//! Configs are JSON. Every section and field is optional except `kind`;
//! unknown keys are rejected. `ScenarioConfig::default()` printed with
//! [`default_config_json`] is the full documented schema.

use std::path::{Path, PathBuf};

use ndarray::Array3;
use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array::{
    ArrayGeometry, BeamIndex, ElementPattern, DEFAULT_ELEMENT_EXPONENT,
    DEFAULT_ELEMENT_PEAK_GAIN_DBI, ELEMENT_SPACING_M, NUM_ELEMENTS, NUM_SUBARRAYS,
    SUBARRAY_SPACING_M,
};
use crate::beam_select::{
    run_beam_sweep, select_beams, selection_log, BeamSelection, SelectionLogEntry, SweepSetup,
    TddController, TddSchedule,
};
use crate::channel::{
    beam_port_channel, butler_combiners, generate_channel, ChannelScenario, ClusterSpec,
};
use crate::error::{Error, Result};
use crate::frontend::{receive_symbol, ReceiverModel, UeTransmitter};
use crate::link_budget::{self, BudgetRow, LinkBudgetInput};
use crate::ofdm::{
    evm_percent, qam_map, symbol_error_rate, zf_detectors, Modulation, OfdmConfig, OfdmModem,
    PilotPlan,
};
use crate::rf_chain::{
    apply_pa, cascade_rx_gain, cascade_tx_gain, db_to_amplitude, dbm_to_mw, mean_power_dbm,
    mw_to_dbm, rx_power_trace, tx_power_trace, NoiseSource, PaModel, RfChainConfig, StageLevel,
    SwitchModel, DEFAULT_P1DB_DBM, DEFAULT_RAPP_SMOOTHNESS,
};
use crate::{CARRIER_FREQUENCY_HZ, MAX_UES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    UplinkMu,
    BudgetBench,
    SweepOnly,
}

/// Top-level system parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub carrier_frequency_hz: f64,
    /// Informational; baseband processing treats up/down conversion as ideal.
    pub intermediate_frequency_hz: f64,
    pub sampling_rate_hz: f64,
    pub signal_bandwidth_hz: f64,
    pub fft_size: usize,
    pub num_antennas: usize,
    pub num_trx: usize,
    pub p1db_dbm: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            carrier_frequency_hz: CARRIER_FREQUENCY_HZ,
            intermediate_frequency_hz: 2.45e9,
            sampling_rate_hz: 30.72e6,
            signal_bandwidth_hz: 20e6,
            fft_size: 2048,
            num_antennas: NUM_ELEMENTS,
            num_trx: NUM_SUBARRAYS,
            p1db_dbm: DEFAULT_P1DB_DBM,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub element_spacing_m: f64,
    pub subarray_spacing_m: f64,
    pub element: ElementPattern,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig {
            element_spacing_m: ELEMENT_SPACING_M,
            subarray_spacing_m: SUBARRAY_SPACING_M,
            element: ElementPattern {
                peak_gain_dbi: DEFAULT_ELEMENT_PEAK_GAIN_DBI,
                exponent: DEFAULT_ELEMENT_EXPONENT,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub rf: RfChainConfig,
    pub switch: SwitchModel,
    /// Model SP4T leakage between beam ports in the receiver.
    pub switch_leakage: bool,
    pub pa_smoothness: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            rf: RfChainConfig::default(),
            switch: SwitchModel::default(),
            switch_leakage: true,
            pa_smoothness: DEFAULT_RAPP_SMOOTHNESS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub bs_position: [f64; 3],
    pub bs_yaw_deg: f64,
    /// Defaults to UEs on an 8.7 m arc around boresight, 1 m apart.
    pub ue_positions: Option<Vec<[f64; 3]>>,
    pub clusters: ClusterSpec,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            bs_position: [0.0; 3],
            bs_yaw_deg: 0.0,
            ue_positions: None,
            clusters: ClusterSpec {
                count: 0,
                ..ClusterSpec::default()
            },
        }
    }
}

/// Distance of the default UE preset from the BS.
pub const PRESET_UE_DISTANCE_M: f64 = 8.7;
/// Lateral spacing of neighbouring preset UEs.
pub const PRESET_UE_SPACING_M: f64 = 1.0;

pub fn preset_ue_positions(num_ues: usize) -> Vec<[f64; 3]> {
    (0..num_ues)
        .map(|k| {
            let x = (k as f64 - (num_ues as f64 - 1.0) / 2.0) * PRESET_UE_SPACING_M;
            let z = (PRESET_UE_DISTANCE_M * PRESET_UE_DISTANCE_M - x * x)
                .max(0.0)
                .sqrt();
            [x, 0.0, z]
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhyConfig {
    pub num_ues: usize,
    pub used_subcarriers: usize,
    pub cp_length: usize,
    pub data_symbols: usize,
    /// Defaults to QPSK for even UEs and 16-QAM for odd UEs.
    pub modulations: Option<Vec<Modulation>>,
    pub ue_tx_power_dbm: f64,
    pub ue_pa: bool,
    /// Pins the per-element SNR instead of deriving noise from the Rx chain.
    pub snr_override_db: Option<f64>,
}

impl Default for PhyConfig {
    fn default() -> Self {
        PhyConfig {
            num_ues: 2,
            used_subcarriers: 1200,
            cp_length: 144,
            data_symbols: 13,
            modulations: None,
            ue_tx_power_dbm: 0.0,
            ue_pa: true,
            snr_override_db: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub schedule: TddSchedule,
    pub frames: u64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            schedule: TddSchedule::default(),
            frames: 1,
        }
    }
}

/// A hardware bench measurement shown next to the simulated table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferencePoint {
    pub distance_m: f64,
    pub pl_measured_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub distances_m: Vec<f64>,
    pub p_tx_dbm: f64,
    pub tx_cable_loss_db: f64,
    pub rx_cable_loss_db: f64,
    pub tx_antenna_gain_dbi: f64,
    pub rx_antenna_gain_dbi: f64,
    pub reference: Vec<ReferencePoint>,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig {
            distances_m: vec![7.0, 8.7],
            p_tx_dbm: -25.0,
            tx_cable_loss_db: 0.5,
            rx_cable_loss_db: 0.5,
            tx_antenna_gain_dbi: 5.0,
            rx_antenna_gain_dbi: 5.0,
            reference: vec![
                ReferencePoint {
                    distance_m: 7.0,
                    pl_measured_db: 71.3,
                },
                ReferencePoint {
                    distance_m: 8.7,
                    pl_measured_db: 72.9,
                },
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub array: ArrayConfig,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub phy: PhyConfig,
    #[serde(default)]
    pub beam: BeamConfig,
    #[serde(default)]
    pub budget: BudgetConfig,
}

fn default_seed() -> u64 {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            kind: ScenarioKind::UplinkMu,
            seed: default_seed(),
            output_dir: default_output_dir(),
            system: SystemConfig::default(),
            array: ArrayConfig::default(),
            chain: ChainConfig::default(),
            channel: ChannelConfig::default(),
            phy: PhyConfig::default(),
            beam: BeamConfig::default(),
            budget: BudgetConfig::default(),
        }
    }
}

fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::ConfigInvalid { field, reason } => Error::ConfigInvalid {
            field: format!("{section}.{field}"),
            reason,
        },
        other => other,
    }
}

fn positive(field: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid_field(
            field,
            format!("must be positive, got {value}"),
        ))
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let sys = &self.system;
        positive("system.carrier_frequency_hz", sys.carrier_frequency_hz)?;
        positive(
            "system.intermediate_frequency_hz",
            sys.intermediate_frequency_hz,
        )?;
        positive("system.sampling_rate_hz", sys.sampling_rate_hz)?;
        positive("system.signal_bandwidth_hz", sys.signal_bandwidth_hz)?;
        if sys.num_antennas != NUM_ELEMENTS {
            return Err(Error::invalid_field(
                "system.num_antennas",
                format!("only the {NUM_ELEMENTS}-antenna profile is supported"),
            ));
        }
        if sys.num_trx != NUM_SUBARRAYS {
            return Err(Error::invalid_field(
                "system.num_trx",
                format!("only the {NUM_SUBARRAYS}-chain profile is supported"),
            ));
        }
        if !sys.p1db_dbm.is_finite() {
            return Err(Error::invalid_field("system.p1db_dbm", "must be finite"));
        }

        positive("array.element_spacing_m", self.array.element_spacing_m)?;
        positive("array.subarray_spacing_m", self.array.subarray_spacing_m)?;
        if !self.array.element.peak_gain_dbi.is_finite() || !(self.array.element.exponent >= 0.0) {
            return Err(Error::invalid_field(
                "array.element",
                "needs finite gain and exponent >= 0",
            ));
        }

        self.chain
            .rf
            .validate()
            .map_err(|e| prefix("chain.rf", e))?;
        self.chain
            .switch
            .validate()
            .map_err(|e| prefix("chain.switch", e))?;
        positive("chain.pa_smoothness", self.chain.pa_smoothness)?;

        let phy = &self.phy;
        if phy.num_ues == 0 || phy.num_ues > MAX_UES {
            return Err(Error::invalid_field(
                "phy.num_ues",
                format!("must be in 1..={MAX_UES}, got {}", phy.num_ues),
            ));
        }
        self.ofdm_config().validate().map_err(|e| match e {
            Error::ConfigInvalid { field, reason } => {
                let section = if field == "fft_size" || field == "sampling_rate_hz" {
                    "system"
                } else {
                    "phy"
                };
                Error::ConfigInvalid {
                    field: format!("{section}.{field}"),
                    reason,
                }
            }
            other => other,
        })?;
        if let Some(m) = &phy.modulations {
            if m.len() != phy.num_ues {
                return Err(Error::invalid_field(
                    "phy.modulations",
                    format!("has {} entries for {} UEs", m.len(), phy.num_ues),
                ));
            }
        }
        if !phy.ue_tx_power_dbm.is_finite() {
            return Err(Error::invalid_field(
                "phy.ue_tx_power_dbm",
                "must be finite",
            ));
        }
        if let Some(snr) = phy.snr_override_db {
            if !snr.is_finite() {
                return Err(Error::invalid_field(
                    "phy.snr_override_db",
                    "must be finite",
                ));
            }
        }

        if let Some(p) = &self.channel.ue_positions {
            if p.len() != phy.num_ues {
                return Err(Error::invalid_field(
                    "channel.ue_positions",
                    format!("has {} entries for {} UEs", p.len(), phy.num_ues),
                ));
            }
        }
        let scenario = self.channel_scenario();
        for ue in 0..phy.num_ues {
            if !(scenario.distance(ue) > 0.0) {
                return Err(Error::invalid_field(
                    "channel.ue_positions",
                    format!("UE {ue} coincides with the BS"),
                ));
            }
            if scenario.los_direction(ue).is_err() {
                return Err(Error::invalid_field(
                    "channel.ue_positions",
                    format!("UE {ue} is behind the array plane"),
                ));
            }
        }

        self.beam
            .schedule
            .validate()
            .map_err(|e| prefix("beam.schedule", e))?;
        if self.beam.frames == 0 {
            return Err(Error::invalid_field("beam.frames", "must be at least 1"));
        }

        let b = &self.budget;
        if b.distances_m.is_empty() {
            return Err(Error::invalid_field(
                "budget.distances_m",
                "must not be empty",
            ));
        }
        for &d in &b.distances_m {
            positive("budget.distances_m", d)?;
        }
        if b.tx_cable_loss_db < 0.0 || b.rx_cable_loss_db < 0.0 {
            return Err(Error::invalid_field(
                "budget",
                "cable losses must be non-negative",
            ));
        }
        Ok(())
    }

    pub fn ofdm_config(&self) -> OfdmConfig {
        OfdmConfig {
            fft_size: self.system.fft_size,
            sampling_rate_hz: self.system.sampling_rate_hz,
            used_subcarriers: self.phy.used_subcarriers,
            cp_length: self.phy.cp_length,
            data_symbols: self.phy.data_symbols,
        }
    }

    pub fn pa_model(&self) -> PaModel {
        PaModel::calibrated(
            cascade_tx_gain(&self.chain.rf),
            self.system.p1db_dbm,
            self.chain.pa_smoothness,
        )
    }

    pub fn ue_positions(&self) -> Vec<[f64; 3]> {
        self.channel
            .ue_positions
            .clone()
            .unwrap_or_else(|| preset_ue_positions(self.phy.num_ues))
    }

    pub fn modulations(&self) -> Vec<Modulation> {
        self.phy.modulations.clone().unwrap_or_else(|| {
            (0..self.phy.num_ues)
                .map(|k| {
                    if k % 2 == 0 {
                        Modulation::Qpsk
                    } else {
                        Modulation::Qam16
                    }
                })
                .collect()
        })
    }

    pub fn channel_scenario(&self) -> ChannelScenario {
        ChannelScenario {
            carrier_frequency_hz: self.system.carrier_frequency_hz,
            ue_positions: self.ue_positions(),
            bs_position: self.channel.bs_position,
            bs_yaw_deg: self.channel.bs_yaw_deg,
            clusters: self.channel.clusters.clone(),
            seed: derive_seed(self.seed, Stream::Channel),
        }
    }

    /// Physical array at the carrier wavelength.
    pub fn geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::new(
            self.array.element_spacing_m,
            self.array.subarray_spacing_m,
            crate::SPEED_OF_LIGHT / self.system.carrier_frequency_hz,
        )
    }

    /// Hash of every field that affects results (seed and output
    /// directory excluded), as 16 hex digits.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.seed = 0;
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

/// Parses and validates a JSON config.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let config: ScenarioConfig = serde_json::from_str(text).map_err(|e| Error::ConfigParse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

pub fn default_config_json() -> String {
    serde_json::to_string_pretty(&ScenarioConfig::default()).expect("config serializes")
}

#[derive(Clone, Copy, Debug)]
enum Stream {
    Channel = 1,
    Noise = 2,
    Bits = 3,
}

/// Independent per-purpose seeds from one run seed.
fn derive_seed(seed: u64, stream: Stream) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng.next_u64()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrMode {
    /// Noise from the Rx chain: -174 dBm/Hz + 10log10(BW) + NF.
    Physical,
    /// Noise pinned to a per-element SNR.
    Override,
    Noiseless,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UeMetrics {
    pub ue: usize,
    pub modulation: Modulation,
    pub symbols: usize,
    pub evm_percent: f64,
    pub ser: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
    pub snr_mode: SnrMode,
    pub noise_power_dbm: Option<f64>,
    pub ue_metrics: Vec<UeMetrics>,
    pub selected_beams: Option<BeamSelection>,
    pub sweep_magnitudes: Option<Vec<[f64; 4]>>,
    /// Control words of the first frame, in hex.
    pub control_words: Vec<String>,
    pub budget: Vec<BudgetRow>,
    pub stage_levels: Vec<StageLevel>,
}

impl RunResult {
    fn new(config: &ScenarioConfig) -> Self {
        RunResult {
            kind: config.kind,
            seed: config.seed,
            config_hash: config.config_hash(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            snr_mode: SnrMode::Noiseless,
            noise_power_dbm: None,
            ue_metrics: Vec::new(),
            selected_beams: None,
            sweep_magnitudes: None,
            control_words: Vec::new(),
            budget: Vec::new(),
            stage_levels: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstellationPoint {
    pub ue: usize,
    pub subcarrier: usize,
    pub symbol_index: usize,
    pub re: f64,
    pub im: f64,
    pub ref_re: f64,
    pub ref_im: f64,
}

/// A run's result plus the bulk data behind it.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub result: RunResult,
    pub constellation: Vec<ConstellationPoint>,
    pub selection_log: Vec<SelectionLogEntry>,
    /// BS time-domain samples of the first uplink slot, `[chain][sample]`.
    pub iq: Option<Vec<Vec<Complex64>>>,
    /// `subcarriers x 64 x K` channel.
    pub channel: Option<Array3<Complex64>>,
}

/// Collects optional bulk outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub capture_iq: bool,
    pub capture_channel: bool,
}

pub fn run(config: &ScenarioConfig, options: RunOptions) -> Result<RunOutput> {
    match config.kind {
        ScenarioKind::UplinkMu => run_uplink_scenario(config, options),
        ScenarioKind::BudgetBench => run_budget_bench(config),
        ScenarioKind::SweepOnly => run_sweep_only(config, options),
    }
}

/// Shared state of the uplink and sweep runs.
struct Link {
    modem: OfdmModem,
    plan: PilotPlan,
    transmitters: Vec<UeTransmitter>,
    ports: ndarray::Array4<Complex64>,
    full_h: Array3<Complex64>,
    receiver: ReceiverModel,
    snr_mode: SnrMode,
}

impl Link {
    fn build(config: &ScenarioConfig) -> Result<Link> {
        config.validate()?;
        let ofdm = config.ofdm_config();
        let modem = OfdmModem::new(ofdm.clone())?;
        let plan = PilotPlan::new(config.phy.num_ues, ofdm.used_subcarriers)?;
        let real = generate_channel(&config.channel_scenario(), &config.geometry()?, &ofdm)?;
        let ports = beam_port_channel(&real.full_h, &butler_combiners())?;
        let pa = config.phy.ue_pa.then(|| config.pa_model());
        let transmitters = vec![
            UeTransmitter {
                tx_power_dbm: config.phy.ue_tx_power_dbm,
                pa,
            };
            config.phy.num_ues
        ];

        let (snr_mode, noise_power_dbm) = match config.phy.snr_override_db {
            Some(snr) => {
                // Mean per-element received power per time sample.
                let bin_mw = dbm_to_mw(config.phy.ue_tx_power_dbm) * ofdm.fft_size as f64
                    / ofdm.used_subcarriers as f64;
                let mean_gain = real.full_h.iter().map(|h| h.norm_sqr()).sum::<f64>()
                    / (real.full_h.dim().0 * real.full_h.dim().1) as f64;
                let signal_mw =
                    bin_mw * mean_gain * ofdm.used_subcarriers as f64 / ofdm.fft_size as f64;
                (SnrMode::Override, Some(mw_to_dbm(signal_mw) - snr))
            }
            None => match config.chain.rf.noise_power_dbm() {
                Some(n) => (SnrMode::Physical, Some(n)),
                None => (SnrMode::Noiseless, None),
            },
        };
        let receiver = ReceiverModel {
            switch: config.chain.switch_leakage.then_some(config.chain.switch),
            rx_gain_db: cascade_rx_gain(&config.chain.rf),
            noise_power_dbm,
        };
        Ok(Link {
            modem,
            plan,
            transmitters,
            ports,
            full_h: real.full_h,
            receiver,
            snr_mode,
        })
    }

    fn tx_pilots(&self) -> Result<Vec<Vec<Complex64>>> {
        self.transmitters
            .iter()
            .enumerate()
            .map(|(ue, t)| t.transmit(&self.modem, &self.plan.pilot_symbol(ue)))
            .collect()
    }

    fn sweep(&self, noise: &mut NoiseSource) -> Result<crate::beam_select::SweepResult> {
        let pilots = self.tx_pilots()?;
        let setup = SweepSetup {
            modem: &self.modem,
            plan: &self.plan,
            tx_pilots: &pilots,
            receiver: &self.receiver,
        };
        run_beam_sweep(&self.ports, &setup, noise)
    }
}

fn first_frame_words(config: &ScenarioConfig, selection: &BeamSelection) -> Result<Vec<String>> {
    let mut ctl = TddController::new(config.beam.schedule)?;
    ctl.set_selection(selection.clone());
    Ok((0..config.beam.schedule.slots_per_frame)
        .map(|_| ctl.advance().1.to_string())
        .collect())
}

/// Channel -> sweep -> selection -> per-UE OFDM through PA, switch and noise
/// -> LS estimation -> ZF -> EVM/SER, repeated for `beam.frames` frames.
pub fn run_uplink_scenario(config: &ScenarioConfig, options: RunOptions) -> Result<RunOutput> {
    if config.kind != ScenarioKind::UplinkMu {
        return Err(Error::invalid_field("kind", "expected uplink_mu"));
    }
    let link = Link::build(config)?;
    let ofdm = link.modem.config().clone();
    let k = config.phy.num_ues;
    let modulations = config.modulations();
    let mut noise = NoiseSource::new(derive_seed(config.seed, Stream::Noise));
    let mut bit_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, Stream::Bits));

    let mut result = RunResult::new(config);
    result.snr_mode = link.snr_mode;
    result.noise_power_dbm = link.receiver.noise_power_dbm;

    let mut selection = BeamSelection::uniform(BeamIndex::ALL[0]);
    let mut log = Vec::new();
    let mut constellation = Vec::new();
    let mut equalized: Vec<Vec<Complex64>> = vec![Vec::new(); k];
    let mut reference: Vec<Vec<Complex64>> = vec![Vec::new(); k];
    let mut iq = None;

    for frame in 0..config.beam.frames {
        if config.beam.schedule.is_sweep_frame(frame) {
            let sweep = link.sweep(&mut noise)?;
            selection = select_beams(&sweep);
            log.extend(selection_log(frame, &sweep, &selection));
            if frame == 0 {
                result.sweep_magnitudes = Some(sweep.magnitudes.to_vec());
            }
        }

        // Pilot symbol followed by the data symbols.
        let mut data: Vec<Vec<Vec<Complex64>>> = vec![Vec::new(); k];
        for (ue, m) in modulations.iter().enumerate() {
            for _ in 0..ofdm.data_symbols {
                let bits: Vec<u8> = (0..ofdm.used_subcarriers * m.bits_per_symbol())
                    .map(|_| bit_rng.gen_range(0..=1u8))
                    .collect();
                data[ue].push(qam_map(&bits, *m)?);
            }
        }
        let mut slot_time: Vec<Vec<Complex64>> = vec![Vec::new(); NUM_SUBARRAYS];
        let mut received = Vec::with_capacity(ofdm.data_symbols + 1);
        for symbol in 0..=ofdm.data_symbols {
            let tx: Vec<Vec<Complex64>> = (0..k)
                .map(|ue| {
                    let freq = if symbol == 0 {
                        link.plan.pilot_symbol(ue)
                    } else {
                        data[ue][symbol - 1].clone()
                    };
                    link.transmitters[ue].transmit(&link.modem, &freq)
                })
                .collect::<Result<_>>()?;
            let rx = receive_symbol(
                &link.ports,
                selection.indices(),
                &tx,
                &link.receiver,
                &link.modem,
                &mut noise,
            )?;
            if options.capture_iq && frame == 0 {
                for (chain, samples) in rx.time.iter().enumerate() {
                    slot_time[chain].extend_from_slice(samples);
                }
            }
            received.push(rx.freq);
        }
        if options.capture_iq && frame == 0 {
            iq = Some(slot_time);
        }

        let estimate = crate::ofdm::estimate_channel(received[0].view(), &link.plan, &ofdm)?;
        let detectors = zf_detectors(&estimate)?;
        for (symbol, y) in received.iter().enumerate().skip(1) {
            for (sc, det) in detectors.iter().enumerate() {
                let x = det.detect(y.column(sc));
                for ue in 0..k {
                    let r = data[ue][symbol - 1][sc];
                    equalized[ue].push(x[ue]);
                    reference[ue].push(r);
                    if frame == 0 {
                        constellation.push(ConstellationPoint {
                            ue,
                            subcarrier: sc,
                            symbol_index: symbol - 1,
                            re: x[ue].re,
                            im: x[ue].im,
                            ref_re: r.re,
                            ref_im: r.im,
                        });
                    }
                }
            }
        }
    }

    for ue in 0..k {
        result.ue_metrics.push(UeMetrics {
            ue,
            modulation: modulations[ue],
            symbols: equalized[ue].len(),
            evm_percent: evm_percent(&equalized[ue], &reference[ue])?,
            ser: symbol_error_rate(&equalized[ue], &reference[ue], modulations[ue])?,
        });
    }
    result.control_words = first_frame_words(config, &selection)?;
    result.selected_beams = Some(selection);
    let pa = config.pa_model();
    result.stage_levels = tx_power_trace(
        &config.chain.rf,
        &pa,
        config.phy.ue_tx_power_dbm - pa.small_signal_gain_db,
    );

    Ok(RunOutput {
        result,
        constellation,
        selection_log: log,
        iq,
        channel: options.capture_channel.then_some(link.full_h),
    })
}

/// Beam sweep and selection only.
pub fn run_sweep_only(config: &ScenarioConfig, options: RunOptions) -> Result<RunOutput> {
    if config.kind != ScenarioKind::SweepOnly {
        return Err(Error::invalid_field("kind", "expected sweep_only"));
    }
    let link = Link::build(config)?;
    let mut noise = NoiseSource::new(derive_seed(config.seed, Stream::Noise));
    let mut result = RunResult::new(config);
    result.snr_mode = link.snr_mode;
    result.noise_power_dbm = link.receiver.noise_power_dbm;
    let mut log = Vec::new();
    let mut selection = BeamSelection::uniform(BeamIndex::ALL[0]);
    for frame in 0..config.beam.frames {
        if config.beam.schedule.is_sweep_frame(frame) {
            let sweep = link.sweep(&mut noise)?;
            selection = select_beams(&sweep);
            log.extend(selection_log(frame, &sweep, &selection));
            if frame == 0 {
                result.sweep_magnitudes = Some(sweep.magnitudes.to_vec());
            }
        }
    }
    result.control_words = first_frame_words(config, &selection)?;
    result.selected_beams = Some(selection);
    Ok(RunOutput {
        result,
        constellation: Vec::new(),
        selection_log: log,
        iq: None,
        channel: options.capture_channel.then_some(link.full_h),
    })
}

/// Single Tx chain -> free space -> single Rx chain at each configured
/// distance, evaluated with the EIRP / path-loss equations.
pub fn run_budget_bench(config: &ScenarioConfig) -> Result<RunOutput> {
    if config.kind != ScenarioKind::BudgetBench {
        return Err(Error::invalid_field("kind", "expected budget_bench"));
    }
    config.validate()?;
    let b = &config.budget;
    let rf = &config.chain.rf;
    let pa = config.pa_model();
    let f = config.system.carrier_frequency_hz;
    let ofdm = OfdmConfig {
        used_subcarriers: 2,
        fft_size: 4,
        cp_length: 0,
        ..config.ofdm_config()
    };
    let single = ArrayGeometry::standard();

    // CW tone at the IF input.
    let tone: Vec<Complex64> = (0..256)
        .map(|i| Complex64::from_polar(db_to_amplitude(b.p_tx_dbm), 0.1 * i as f64))
        .collect();
    let tx_out = apply_pa(&tone, &pa);

    let mut rows = Vec::with_capacity(b.distances_m.len());
    for &d in &b.distances_m {
        let mut scenario = ChannelScenario::line_of_sight(vec![[0.0, 0.0, d]]);
        scenario.carrier_frequency_hz = f;
        // The theoretical loss is antenna-inclusive (free space less both
        // antenna gains); the bench uses it as the loss between the antenna
        // terminals, so the budget bookkeeping recovers it exactly.
        let tap = generate_channel(&scenario, &single, &ofdm)?.full_h[(0, 0, 0)];
        let path = tap * db_to_amplitude(b.tx_antenna_gain_dbi + b.rx_antenna_gain_dbi);
        let link_gain = db_to_amplitude(-b.tx_cable_loss_db)
            * db_to_amplitude(b.tx_antenna_gain_dbi)
            * db_to_amplitude(b.rx_antenna_gain_dbi)
            * db_to_amplitude(-b.rx_cable_loss_db)
            * db_to_amplitude(cascade_rx_gain(rf));
        let rx: Vec<Complex64> = tx_out.iter().map(|x| x * path * link_gain).collect();
        let input = LinkBudgetInput {
            p_tx_dbm: b.p_tx_dbm,
            tx_chain_gain_db: cascade_tx_gain(rf),
            tx_cable_loss_db: b.tx_cable_loss_db,
            tx_antenna_gain_dbi: b.tx_antenna_gain_dbi,
            p_rx_dbm: mean_power_dbm(&rx),
            rx_chain_gain_db: cascade_rx_gain(rf),
            rx_cable_loss_db: b.rx_cable_loss_db,
            rx_antenna_gain_dbi: b.rx_antenna_gain_dbi,
            distance_m: d,
            frequency_hz: f,
        };
        let r = link_budget::evaluate(&input)?;
        let reference = b
            .reference
            .iter()
            .find(|p| (p.distance_m - d).abs() < 1e-9)
            .map(|p| p.pl_measured_db);
        rows.push(BudgetRow {
            distance_m: d,
            eirp_dbm: r.eirp_dbm,
            p_rx_dbm: input.p_rx_dbm,
            pl_theoretical_db: r.pl_theoretical_db,
            pl_measured_db: r.pl_measured_db,
            gap_db: r.gap_db,
            reference_pl_measured_db: reference,
            reference_gap_db: reference.map(|m| link_budget::budget_gap(r.pl_theoretical_db, m)),
        });
    }

    let mut result = RunResult::new(config);
    let mut stages = tx_power_trace(rf, &pa, b.p_tx_dbm);
    if let Some(first) = rows.first() {
        let antenna_in = first.p_rx_dbm - cascade_rx_gain(rf);
        stages.extend(rx_power_trace(rf, antenna_in));
    }
    result.stage_levels = stages;
    result.budget = rows;
    Ok(RunOutput {
        result,
        constellation: Vec::new(),
        selection_log: Vec::new(),
        iq: None,
        channel: None,
    })
}
