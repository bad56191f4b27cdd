//! Writing run outputs to disk.
//!
//! Every file is named `{config_hash}_s{seed}_{name}` so runs of different
//! configs or seeds can share one directory. Nothing time-dependent is
//! written, so identical inputs give byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::beam_select::write_selection_csv;
use crate::channel::write_matrix_dump;
use crate::error::{Error, Result};
use crate::link_budget::write_report_csv;
use crate::rf_chain::write_stage_csv;
use crate::scenario::{RunOutput, RunResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

pub const METRICS_CSV_HEADER: &str =
    "config_hash,seed,kind,snr_mode,ue,modulation,symbols,evm_percent,ser";
pub const CONSTELLATION_CSV_HEADER: &str = "ue,subcarrier,symbol_index,re,im,ref_re,ref_im";

fn label<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub fn write_metrics_csv(result: &RunResult, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{METRICS_CSV_HEADER}")?;
    for m in &result.ue_metrics {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            result.config_hash,
            result.seed,
            label(&result.kind),
            label(&result.snr_mode),
            m.ue,
            m.modulation,
            m.symbols,
            m.evm_percent,
            m.ser
        )?;
    }
    Ok(())
}

/// Interleaved little-endian `f32` I/Q, one chain after another.
pub fn write_iq(
    chains: &[Vec<num_complex::Complex64>],
    mut out: impl Write,
) -> std::io::Result<()> {
    for chain in chains {
        for x in chain {
            out.write_all(&(x.re as f32).to_le_bytes())?;
            out.write_all(&(x.im as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn create(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Writes everything the run produced and returns the paths in write order.
pub fn export_results(
    output: &RunOutput,
    format: ExportFormat,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let r = &output.result;
    let stem = format!("{}_s{}", r.config_hash, r.seed);
    let path = |name: &str| out_dir.join(format!("{stem}_{name}"));
    let mut written = Vec::new();

    let p = path("result.json");
    create(&p, |w| {
        serde_json::to_writer_pretty(&mut *w, r)?;
        writeln!(w)
    })?;
    written.push(p);

    match format {
        ExportFormat::Json => {
            if !output.constellation.is_empty() {
                let p = path("constellation.json");
                create(&p, |w| {
                    Ok(serde_json::to_writer(&mut *w, &output.constellation)?)
                })?;
                written.push(p);
            }
            if !output.selection_log.is_empty() {
                let p = path("selection.json");
                create(&p, |w| {
                    Ok(serde_json::to_writer(&mut *w, &output.selection_log)?)
                })?;
                written.push(p);
            }
        }
        ExportFormat::Csv => {
            if !r.ue_metrics.is_empty() {
                let p = path("metrics.csv");
                create(&p, |w| write_metrics_csv(r, w))?;
                written.push(p);
            }
            let mut ues: Vec<usize> = output.constellation.iter().map(|c| c.ue).collect();
            ues.sort_unstable();
            ues.dedup();
            for ue in ues {
                let p = path(&format!("constellation_ue{ue}.csv"));
                create(&p, |w| {
                    writeln!(w, "{CONSTELLATION_CSV_HEADER}")?;
                    for c in output.constellation.iter().filter(|c| c.ue == ue) {
                        writeln!(
                            w,
                            "{},{},{},{},{},{},{}",
                            c.ue, c.subcarrier, c.symbol_index, c.re, c.im, c.ref_re, c.ref_im
                        )?;
                    }
                    Ok(())
                })?;
                written.push(p);
            }
            if !output.selection_log.is_empty() {
                let p = path("selection.csv");
                create(&p, |w| write_selection_csv(&output.selection_log, w))?;
                written.push(p);
            }
            if !r.stage_levels.is_empty() {
                let p = path("stages.csv");
                create(&p, |w| write_stage_csv(&r.stage_levels, w))?;
                written.push(p);
            }
            if !r.budget.is_empty() {
                let p = path("budget.csv");
                create(&p, |w| write_report_csv(&r.budget, w))?;
                written.push(p);
            }
        }
    }

    if let Some(iq) = &output.iq {
        let p = path("iq.bin");
        create(&p, |w| write_iq(iq, w))?;
        written.push(p);
    }
    if let Some(h) = &output.channel {
        let p = path("channel.bin");
        create(&p, |w| write_matrix_dump(h, w))?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{run_budget_bench, ScenarioConfig, ScenarioKind};

    #[test]
    fn budget_export_names_and_headers() {
        let mut c = ScenarioConfig::default();
        c.kind = ScenarioKind::BudgetBench;
        let out = run_budget_bench(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = export_results(&out, ExportFormat::Csv, dir.path()).unwrap();
        let names: Vec<String> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        let stem = format!("{}_s1_", c.config_hash());
        assert_eq!(
            names,
            vec![
                format!("{stem}result.json"),
                format!("{stem}stages.csv"),
                format!("{stem}budget.csv"),
            ]
        );
        let budget = std::fs::read_to_string(&files[2]).unwrap();
        assert_eq!(budget.lines().count(), 3);
        let back: RunResult = serde_json::from_slice(&std::fs::read(&files[0]).unwrap()).unwrap();
        assert_eq!(back, out.result);
    }

    #[test]
    fn iq_layout() {
        let chains = vec![
            vec![num_complex::Complex64::new(1.0, -2.0)],
            vec![num_complex::Complex64::new(0.5, 0.25)],
        ];
        let mut buf = Vec::new();
        write_iq(&chains, &mut buf).unwrap();
        let floats: Vec<f32> = buf
            .chunks(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        assert_eq!(floats, vec![1.0, -2.0, 0.5, 0.25]);
    }

    #[test]
    fn unwritable_directory_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let mut c = ScenarioConfig::default();
        c.kind = ScenarioKind::BudgetBench;
        let out = run_budget_bench(&c).unwrap();
        let err = export_results(&out, ExportFormat::Csv, &blocker.join("sub")).unwrap_err();
        assert_eq!(err.category(), crate::ErrorCategory::Io);
    }
}
