//! CSV tables and JSON run metadata emitted by the command-line front end.
//!
//! CSV numbers use scientific notation with 9 significant digits; every run
//! also writes a `<out>.meta.json` with the seed, grid and config hash so a
//! run can be replayed to identical bytes.

use crate::error::Result;
use crate::experiments::oscillator::SweepRow;
use crate::experiments::wave::WaveRow;
use serde::Serialize;
use std::io::Write;

pub fn fmt_sci(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn sweep_to_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "kappa,err,seed")?;
    for r in rows {
        writeln!(w, "{},{},{}", fmt_sci(r.kappa), fmt_sci(r.err), r.seed)?;
    }
    Ok(())
}

pub fn wave_to_csv<W: Write>(rows: &[WaveRow], mut w: W) -> Result<()> {
    writeln!(w, "iteration,param_err,displ_err,vel_err")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.iteration,
            fmt_sci(r.param_err),
            fmt_sci(r.displ_err),
            fmt_sci(r.vel_err)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub parameters: serde_json::Value,
}

impl RunMetadata {
    pub fn write(&self, out_csv: &std::path::Path) -> Result<std::path::PathBuf> {
        let meta_path = out_csv.with_extension("meta.json");
        std::fs::write(&meta_path, serde_json::to_string_pretty(self).unwrap())?;
        Ok(meta_path)
    }
}
