//! Text outputs: metric tables, the training log and PGM slice images.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use cbct_core::metrics::MetricReport;
use cbct_core::trainer::StepLog;
use cbct_core::Volume;

use crate::error::{CliError, CliResult};

/// PSNR with the `inf` sentinel for identical inputs, two decimals otherwise.
pub fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.2}")
    }
}

pub fn metrics_csv(report: &MetricReport, labels: &[String]) -> String {
    let mut out = String::from("case,psnr_db,ssim\n");
    for (i, (p, s)) in report.cases.iter().enumerate() {
        let label = labels.get(i).cloned().unwrap_or_else(|| i.to_string());
        out += &format!("{label},{p},{s}\n");
    }
    out
}

pub fn metrics_pretty(report: &MetricReport) -> String {
    let mut out = String::new();
    if report.cases.len() == 1 {
        let (p, s) = report.cases[0];
        out += &format!("PSNR {} dB\nSSIM {s:.6}\n", fmt_db(p));
    } else {
        out += &format!(
            "PSNR {} ± {:.2} dB\nSSIM {:.6} ± {:.6}\n({} cases)\n",
            fmt_db(report.psnr_mean),
            report.psnr_std,
            report.ssim_mean,
            report.ssim_std,
            report.cases.len()
        );
    }
    out
}

/// Per-step training log: `step,epoch,lr,loss,wall_ms`.
pub struct StepCsv {
    out: BufWriter<File>,
    path: String,
}

impl StepCsv {
    pub fn create(path: &Path) -> CliResult<Self> {
        let file = File::create(path).map_err(|e| CliError::write(path, e))?;
        let mut csv = StepCsv { out: BufWriter::new(file), path: path.display().to_string() };
        csv.line("step,epoch,lr,loss,wall_ms")?;
        Ok(csv)
    }

    fn line(&mut self, s: &str) -> CliResult<()> {
        writeln!(self.out, "{s}").map_err(|e| CliError::runtime(format!("cannot write {}: {e}", self.path)))
    }

    pub fn step(&mut self, log: &StepLog, wall_ms: u128) -> CliResult<()> {
        self.line(&format!("{},{},{},{},{wall_ms}", log.step, log.epoch, log.lr, log.loss))
    }

    pub fn flush(&mut self) -> CliResult<()> {
        self.out.flush().map_err(|e| CliError::runtime(format!("cannot write {}: {e}", self.path)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceAxis {
    Axial,
    Coronal,
    Sagittal,
}

impl SliceAxis {
    pub const ALL: [SliceAxis; 3] = [SliceAxis::Axial, SliceAxis::Coronal, SliceAxis::Sagittal];

    pub fn name(self) -> &'static str {
        match self {
            SliceAxis::Axial => "axial",
            SliceAxis::Coronal => "coronal",
            SliceAxis::Sagittal => "sagittal",
        }
    }

    /// Index of the volume axis held fixed (x = 0, y = 1, z = 2).
    fn fixed(self) -> usize {
        match self {
            SliceAxis::Axial => 2,
            SliceAxis::Coronal => 1,
            SliceAxis::Sagittal => 0,
        }
    }
}

impl FromStr for SliceAxis {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        SliceAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| CliError::invalid(format!("unknown slice axis `{s}` (axial, coronal, sagittal)")))
    }
}

/// One slice as 8-bit grey levels, `(width, height, pixels)`. Values are
/// clamped to `[lo, hi]` and scaled to 0..=255; rows run top to bottom with
/// the second in-plane axis flipped so +y/+z point up.
pub fn slice_gray(vol: &Volume, axis: SliceAxis, index: usize, lo: f64, hi: f64) -> CliResult<(usize, usize, Vec<u8>)> {
    let [nx, ny, nz] = vol.dims();
    let fixed = axis.fixed();
    let n_fixed = vol.dims()[fixed];
    if index >= n_fixed {
        return Err(CliError::invalid(format!("{} slice {index} is out of range (0..{n_fixed})", axis.name())));
    }
    if !(hi > lo) {
        return Err(CliError::invalid(format!("window [{lo}, {hi}] is empty")));
    }
    let (w, h) = match axis {
        SliceAxis::Axial => (nx, ny),
        SliceAxis::Coronal => (nx, nz),
        SliceAxis::Sagittal => (ny, nz),
    };
    let mut pixels = Vec::with_capacity(w * h);
    for row in 0..h {
        let b = h - 1 - row;
        for a in 0..w {
            let v = match axis {
                SliceAxis::Axial => vol.get(a, b, index),
                SliceAxis::Coronal => vol.get(a, index, b),
                SliceAxis::Sagittal => vol.get(index, a, b),
            };
            let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
            pixels.push((t * 255.0).round() as u8);
        }
    }
    Ok((w, h, pixels))
}

/// Binary (P5) PGM bytes.
pub fn pgm_bytes(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Decodes the P5 files written by [`pgm_bytes`].
pub fn parse_pgm(bytes: &[u8]) -> Option<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while bytes.get(pos)?.is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while !bytes.get(pos)?.is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?.to_string());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return None;
    }
    let (w, h): (usize, usize) = (fields[1].parse().ok()?, fields[2].parse().ok()?);
    let data = bytes.get(pos + 1..)?;
    (data.len() == w * h).then(|| (w, h, data.to_vec()))
}
