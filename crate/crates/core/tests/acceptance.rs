//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each, and exits non-zero if any failed.

use std::f64::consts::PI;
use std::io::Write;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hbf_core::array::{
    butler_weights, steered_array_gain, subarray_gain, ArrayGeometry, BeamIndex, Direction,
    ElementPattern,
};
use hbf_core::beam_select::{run_beam_sweep, select_beams, SweepSetup};
use hbf_core::channel::{
    beam_port_channel, butler_combiners, generate_channel, ChannelScenario, ClusterSpec,
};
use hbf_core::export::{export_results, ExportFormat};
use hbf_core::frontend::ReceiverModel;
use hbf_core::ofdm::{qam_map, zf_detect, Modulation, OfdmConfig, OfdmModem, PilotPlan};
use hbf_core::rf_chain::{
    apply_switch, mean_power_dbm, NoiseSource, RfChainConfig, SwitchKind, SwitchModel,
};
use hbf_core::scenario::{run, run_budget_bench, RunOptions, ScenarioConfig, ScenarioKind};
use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn within(elapsed: Duration, limit_s: f64, detail: String) -> Check {
    ensure(
        elapsed.as_secs_f64() < limit_s,
        format!(
            "{detail}; {:.2} s (limit {limit_s} s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut config = ScenarioConfig::default();
    config.kind = ScenarioKind::BudgetBench;
    let rows = run_budget_bench(&config)
        .map_err(|e| e.to_string())?
        .result
        .budget;
    let elapsed = start.elapsed();
    let expected = [(7.0, 68.3), (8.7, 70.2)];
    if rows.len() != expected.len() {
        return Err(format!("{} rows", rows.len()));
    }
    let mut detail = Vec::new();
    for (row, (d, pl_th)) in rows.iter().zip(expected) {
        detail.push(format!(
            "d={d} PL_th={:.3} PL_m={:.3}",
            row.pl_theoretical_db, row.pl_measured_db
        ));
        if row.distance_m != d
            || (row.pl_theoretical_db - pl_th).abs() > 0.1
            || (row.pl_measured_db - row.pl_theoretical_db).abs() > 0.01
        {
            return Err(detail.join(", "));
        }
    }
    within(elapsed, 1.0, detail.join(", "))
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let pa = ScenarioConfig::default().pa_model();
    let gain = |p_in: f64| pa.output_power_dbm(p_in) - p_in;
    let (mut lo, mut hi) = (-80.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gain(mid) > pa.small_signal_gain_db - 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let p1db = pa.output_power_dbm(0.5 * (lo + hi));
    let elapsed = start.elapsed();
    if (p1db - 18.0).abs() > 0.05 {
        return Err(format!("output P1dB {p1db:.4} dBm"));
    }
    within(
        elapsed,
        1.0,
        format!("output P1dB {p1db:.4} dBm at input {:.3} dBm", lo),
    )
}

fn grid_peak(gain: impl Fn(&Direction) -> f64) -> f64 {
    let mut best = f64::MIN;
    for i in 0..=360 {
        for j in 0..=360 {
            let az = -90.0 + 0.5 * i as f64;
            let el = -90.0 + 0.5 * j as f64;
            if let Ok(d) = Direction::from_az_el_deg(az, el) {
                best = best.max(gain(&d));
            }
        }
    }
    best
}

fn criterion_3() -> Check {
    let start = Instant::now();
    let geometry = ArrayGeometry::standard();
    let element = ElementPattern::default();
    let mut detail = Vec::new();
    for b in 0..4 {
        let w = butler_weights(b).map_err(|e| e.to_string())?;
        let sub = grid_peak(|d| subarray_gain(&geometry, &w, &element, d));
        let selection = vec![Some(BeamIndex::new(b).unwrap()); 16];
        let full = grid_peak(|d| {
            steered_array_gain(&geometry, &selection, &element, d, d).unwrap_or(f64::MIN)
        });
        detail.push(format!(
            "beam {b}: sub {sub:.3} dBi, full {full:.3} dBi (+{:.3})",
            full - sub
        ));
        if (sub - 10.1).abs() > 0.05 || (full - sub - 12.04).abs() > 0.1 {
            return Err(detail.join("; "));
        }
    }
    within(start.elapsed(), 10.0, detail.join("; "))
}

fn tone(n: usize, cycles: f64) -> Vec<Complex64> {
    (0..n)
        .map(|i| Complex64::from_polar(0.3, 2.0 * PI * cycles * i as f64 / n as f64))
        .collect()
}

fn criterion_4() -> Check {
    let start = Instant::now();
    let model = SwitchModel::default();
    let quiet = vec![Complex64::new(0.0, 0.0); 1024];
    let mut detail = Vec::new();
    for (kind, ports, expected) in [(SwitchKind::Sp4t, 3, 30.0), (SwitchKind::Spdt, 1, 38.0)] {
        for p in 0..ports {
            let mut leaking = vec![quiet.clone(); ports];
            leaking[p] = tone(1024, 5.0 + p as f64);
            let out = apply_switch(&quiet, &leaking, &model, kind).map_err(|e| e.to_string())?;
            let suppression = mean_power_dbm(&leaking[p]) - mean_power_dbm(&out);
            detail.push(format!("{kind:?} port {p}: {suppression:.4} dB"));
            if (suppression - expected).abs() > 0.01 {
                return Err(detail.join(", "));
            }
        }
    }
    within(start.elapsed(), 1.0, detail.join(", "))
}

fn criterion_5() -> Check {
    let start = Instant::now();
    let config = ScenarioConfig::default();
    if config.phy.num_ues != 2 {
        return Err("default preset must have two UEs".into());
    }
    for pos in config.ue_positions() {
        let d = (pos[0] * pos[0] + pos[1] * pos[1] + pos[2] * pos[2]).sqrt();
        if (d - 8.7).abs() > 1e-9 {
            return Err(format!("UE at {d} m"));
        }
    }
    let noisy = run(&config, RunOptions::default())
        .map_err(|e| e.to_string())?
        .result;
    let mut quiet_config = config.clone();
    quiet_config.chain.rf.thermal_noise = false;
    let quiet = run(&quiet_config, RunOptions::default())
        .map_err(|e| e.to_string())?
        .result;
    let mut detail = Vec::new();
    let mut ok = true;
    for (n, q) in noisy.ue_metrics.iter().zip(&quiet.ue_metrics) {
        detail.push(format!(
            "UE{} {}: {} symbols, SER {}, EVM {:.3}% (noiseless {:.4}%)",
            n.ue, n.modulation, n.symbols, n.ser, n.evm_percent, q.evm_percent
        ));
        ok &= n.symbols >= 10_000 && n.ser == 0.0 && n.evm_percent < 5.0 && q.evm_percent < 0.1;
    }
    let mods: Vec<Modulation> = noisy.ue_metrics.iter().map(|m| m.modulation).collect();
    ok &= mods == vec![Modulation::Qpsk, Modulation::Qam16];
    if !ok {
        return Err(detail.join("; "));
    }
    within(start.elapsed(), 60.0, detail.join("; "))
}

/// Beam `b` of port `(ix, iy)`: quarter-wave steps with signs from the beam bits.
fn reference_weight(b: usize, port: usize) -> Complex64 {
    let su = if b & 1 == 0 { 1.0 } else { -1.0 };
    let sv = if b & 2 == 0 { 1.0 } else { -1.0 };
    let (ix, iy) = ((port % 2) as f64, (port / 2) as f64);
    Complex64::from_polar(1.0, -PI / 2.0 * (su * ix + sv * iy))
}

fn criterion_6() -> Check {
    let start = Instant::now();
    let cfg = OfdmConfig {
        fft_size: 64,
        used_subcarriers: 24,
        cp_length: 8,
        ..OfdmConfig::default()
    };
    let modem = OfdmModem::new(cfg.clone()).unwrap();
    let plan = PilotPlan::new(1, cfg.used_subcarriers).unwrap();
    let receiver = ReceiverModel::ideal();
    let geometry = ArrayGeometry::standard();
    let combiners = butler_combiners();
    let mut matches = 0;
    let mut scale_ok = true;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scenario = ChannelScenario::line_of_sight(vec![[
            rng.gen_range(-6.0..6.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(2.0..12.0),
        ]]);
        scenario.clusters = ClusterSpec {
            count: rng.gen_range(0..6),
            ..ClusterSpec::default()
        };
        scenario.seed = seed;
        let h = generate_channel(&scenario, &geometry, &cfg)
            .map_err(|e| e.to_string())?
            .full_h;
        let ports = beam_port_channel(&h, &combiners).map_err(|e| e.to_string())?;
        let pilots = vec![plan.pilot_symbol(0)];
        let setup = SweepSetup {
            modem: &modem,
            plan: &plan,
            tx_pilots: &pilots,
            receiver: &receiver,
        };
        let sweep = run_beam_sweep(&ports, &setup, &mut NoiseSource::new(seed))
            .map_err(|e| e.to_string())?;
        let chosen = select_beams(&sweep);
        scale_ok &= select_beams(&sweep.scaled(rng.gen_range(1e-6..1e6))) == chosen;

        let brute: Vec<usize> = (0..16)
            .map(|r| {
                let energy = |b: usize| -> f64 {
                    (0..cfg.used_subcarriers)
                        .map(|s| {
                            (0..4)
                                .map(|p| reference_weight(b, p) * h[(s, 4 * r + p, 0)])
                                .sum::<Complex64>()
                                .norm_sqr()
                        })
                        .sum()
                };
                (0..4).fold(0, |best, b| if energy(b) > energy(best) { b } else { best })
            })
            .collect();
        if brute
            .iter()
            .enumerate()
            .all(|(r, &b)| chosen.get(r).get() == b)
        {
            matches += 1;
        }
    }
    let detail = format!("{matches}/100 channels match brute force, scaling invariant: {scale_ok}");
    if matches != 100 || !scale_ok {
        return Err(detail);
    }
    within(start.elapsed(), 10.0, detail)
}

fn gaussian(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn criterion_7() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let cfg = OfdmConfig::default();
    let modem = OfdmModem::new(cfg.clone()).unwrap();
    let mut worst_ofdm: f64 = 0.0;
    for m in [Modulation::Qpsk, Modulation::Qam16] {
        let bits: Vec<u8> = (0..cfg.used_subcarriers * m.bits_per_symbol())
            .map(|_| rng.gen_range(0..=1))
            .collect();
        let x = qam_map(&bits, m).unwrap();
        let back = modem.demodulate(&modem.modulate(&x).unwrap()).unwrap();
        let err: f64 = x
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let norm: f64 = x.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        worst_ofdm = worst_ofdm.max(err / norm);
    }

    let mut worst_zf: f64 = 0.0;
    for _ in 0..100 {
        let h = Array3::from_shape_fn((1, 16, 2), |_| gaussian(&mut rng));
        let x = [gaussian(&mut rng), gaussian(&mut rng)];
        let y = Array2::from_shape_fn((1, 16), |(_, m)| h[(0, m, 0)] * x[0] + h[(0, m, 1)] * x[1]);
        let est = zf_detect(&h, &y).map_err(|e| e.to_string())?;
        for k in 0..2 {
            worst_zf = worst_zf.max((est[(0, k)] - x[k]).norm() / x[k].norm());
        }
    }

    let noise_dbm = RfChainConfig::default()
        .noise_power_dbm()
        .ok_or("thermal noise disabled by default")?;
    let mut noise = NoiseSource::new(11);
    let samples: Vec<Complex64> = (0..1_000_000)
        .map(|_| noise.sample(10f64.powf(noise_dbm / 10.0)))
        .collect();
    let measured = mean_power_dbm(&samples);

    let detail = format!(
        "OFDM round trip {worst_ofdm:.2e}, ZF {worst_zf:.2e}, noise {measured:.3} dBm (nominal {noise_dbm:.3})"
    );
    if worst_ofdm > 1e-9 || worst_zf > 1e-9 || (measured + 95.99).abs() > 0.1 {
        return Err(detail);
    }
    within(start.elapsed(), 30.0, detail)
}

fn criterion_8() -> Check {
    let start = Instant::now();
    let mut compared = 0;
    for kind in [
        ScenarioKind::UplinkMu,
        ScenarioKind::BudgetBench,
        ScenarioKind::SweepOnly,
    ] {
        let mut config = ScenarioConfig::default();
        config.kind = kind;
        config.seed = 42;
        let options = RunOptions {
            capture_iq: true,
            capture_channel: true,
        };
        for format in [ExportFormat::Csv, ExportFormat::Json] {
            let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
            let mut listings = Vec::new();
            for dir in &dirs {
                let output = run(&config, options).map_err(|e| e.to_string())?;
                let files =
                    export_results(&output, format, dir.path()).map_err(|e| e.to_string())?;
                let contents: Vec<(String, Vec<u8>)> = files
                    .iter()
                    .map(|p| {
                        (
                            p.file_name().unwrap().to_string_lossy().into_owned(),
                            std::fs::read(p).unwrap(),
                        )
                    })
                    .collect();
                listings.push(contents);
            }
            if listings[0] != listings[1] {
                return Err(format!("{kind:?} {format:?} exports differ"));
            }
            compared += listings[0].len();
        }
    }
    within(
        start.elapsed(),
        60.0,
        format!("{compared} files byte-identical across repeated runs"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("1 link budget", criterion_1),
        ("2 PA P1dB", criterion_2),
        ("3 array gains", criterion_3),
        ("4 switch isolation", criterion_4),
        ("5 multi-user uplink", criterion_5),
        ("6 beam selection", criterion_6),
        ("7 PHY numerics", criterion_7),
        ("8 determinism", criterion_8),
    ];
    let suite = Instant::now();
    let mut failed = 0;
    let mut err = std::io::stderr().lock();
    for (name, check) in criteria {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        let _ = writeln!(err, "acceptance {tag} [{name}] {detail}");
    }
    let _ = writeln!(
        err,
        "acceptance: {} passed, {failed} failed in {:.1} s",
        8 - failed,
        suite.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
