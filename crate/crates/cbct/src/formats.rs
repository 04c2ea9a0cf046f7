//! Raw little-endian f32 payloads with JSON sidecars.
//!
//! A file `a.vol` is accompanied by `a.vol.json`. When the path is `-` the
//! data goes through stdin/stdout instead, as one line of sidecar JSON
//! followed by the raw payload, so commands can be piped together.

use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use cbct_core::{DetectorGrid, ProjectionSet, ScanGeometry, Volume, VolumeGrid};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Where a command reads or writes: a file path or the standard streams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    Std,
    File(PathBuf),
}

impl Location {
    pub fn parse(s: &str) -> Self {
        if s == "-" {
            Location::Std
        } else {
            Location::File(PathBuf::from(s))
        }
    }

    pub fn path(&self) -> Option<&Path> {
        match self {
            Location::Std => None,
            Location::File(p) => Some(p),
        }
    }

    pub fn display(&self) -> String {
        match self {
            Location::Std => "-".to_string(),
            Location::File(p) => p.display().to_string(),
        }
    }
}

impl From<&str> for Location {
    fn from(s: &str) -> Self {
        Location::parse(s)
    }
}

impl From<&Path> for Location {
    fn from(p: &Path) -> Self {
        Location::File(p.to_path_buf())
    }
}

impl From<PathBuf> for Location {
    fn from(p: PathBuf) -> Self {
        Location::File(p)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Scan geometry as stored on disk; angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryDoc {
    pub n_views: usize,
    pub angles_deg: Vec<f64>,
    pub dso_mm: f64,
    pub dsd_mm: f64,
    pub det_w: usize,
    pub det_h: usize,
    pub du_mm: f64,
    pub dv_mm: f64,
}

impl GeometryDoc {
    pub fn from_geometry(g: &ScanGeometry) -> Self {
        let det = g.detector();
        GeometryDoc {
            n_views: g.n_views(),
            angles_deg: g.angles().iter().map(|a| a.to_degrees()).collect(),
            dso_mm: g.dso(),
            dsd_mm: g.dsd(),
            det_w: det.width,
            det_h: det.height,
            du_mm: det.du,
            dv_mm: det.dv,
        }
    }

    pub fn to_geometry(&self) -> CliResult<ScanGeometry> {
        if self.angles_deg.len() != self.n_views {
            return Err(CliError::invalid(format!(
                "geometry lists {} angles for n_views = {}",
                self.angles_deg.len(),
                self.n_views
            )));
        }
        let det = DetectorGrid { width: self.det_w, height: self.det_h, du: self.du_mm, dv: self.dv_mm };
        Ok(ScanGeometry::new(self.angles_deg.iter().map(|a| a.to_radians()).collect(), self.dso_mm, self.dsd_mm, det)?)
    }
}

pub fn read_geometry(path: &Path) -> CliResult<ScanGeometry> {
    let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    serde_json::from_str::<GeometryDoc>(&text)?.to_geometry()
}

pub fn write_geometry(path: &Path, g: &ScanGeometry) -> CliResult<()> {
    write_json(path, &GeometryDoc::from_geometry(g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sidecar {
    Volume { dims: [usize; 3], spacing_mm: [f64; 3], origin_mm: [f64; 3] },
    Projections { geometry: GeometryDoc },
}

impl Sidecar {
    fn payload_len(&self) -> usize {
        match self {
            Sidecar::Volume { dims, .. } => dims.iter().product(),
            Sidecar::Projections { geometry } => geometry.n_views * geometry.det_w * geometry.det_h,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::write(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

pub fn f32_bytes(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(|v| (v as f32).to_le_bytes()).collect()
}

pub fn f32_values(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect()
}

fn write_payload(loc: &Location, sidecar: &Sidecar, data: &[f64]) -> CliResult<()> {
    let bytes = f32_bytes(data.iter().copied());
    match loc {
        Location::File(path) => {
            fs::write(path, &bytes).map_err(|e| CliError::write(path, e))?;
            write_json(&sidecar_path(path), sidecar)
        }
        Location::Std => {
            let header = serde_json::to_string(sidecar).map_err(|e| CliError::runtime(e.to_string()))?;
            let mut out = io::stdout().lock();
            let stdout = Path::new("<stdout>");
            writeln!(out, "{header}").map_err(|e| CliError::write(stdout, e))?;
            out.write_all(&bytes).map_err(|e| CliError::write(stdout, e))?;
            out.flush().map_err(|e| CliError::write(stdout, e))
        }
    }
}

fn read_payload(loc: &Location) -> CliResult<(Sidecar, Vec<f64>)> {
    let (sidecar, bytes): (Sidecar, Vec<u8>) = match loc {
        Location::File(path) => {
            let sidecar = read_json(&sidecar_path(path))?;
            (sidecar, fs::read(path).map_err(|e| CliError::read(path, e))?)
        }
        Location::Std => {
            let stdin = Path::new("<stdin>");
            let mut reader = BufReader::new(io::stdin().lock());
            let mut header = String::new();
            reader.read_line(&mut header).map_err(|e| CliError::read(stdin, e))?;
            let sidecar = serde_json::from_str(header.trim_end())
                .map_err(|e| CliError::invalid(format!("stdin does not start with a sidecar header: {e}")))?;
            let mut bytes = Vec::new();
            reader.read_to_end(&mut bytes).map_err(|e| CliError::read(stdin, e))?;
            (sidecar, bytes)
        }
    };
    let want = sidecar.payload_len() * 4;
    if bytes.len() != want {
        return Err(CliError::invalid(format!(
            "{}: payload has {} bytes, the sidecar describes {want}",
            loc.display(),
            bytes.len()
        )));
    }
    Ok((sidecar, f32_values(&bytes)))
}

pub fn write_volume(loc: &Location, vol: &Volume) -> CliResult<()> {
    let g = vol.grid();
    let sidecar = Sidecar::Volume { dims: g.dims, spacing_mm: g.spacing, origin_mm: g.origin };
    write_payload(loc, &sidecar, vol.data())
}

pub fn read_volume(loc: &Location) -> CliResult<Volume> {
    match read_payload(loc)? {
        (Sidecar::Volume { dims, spacing_mm, origin_mm }, data) => {
            Ok(Volume::new(VolumeGrid::new(dims, spacing_mm, origin_mm)?, data)?)
        }
        _ => Err(CliError::invalid(format!("{} holds projections, expected a volume", loc.display()))),
    }
}

pub fn write_projections(loc: &Location, proj: &ProjectionSet) -> CliResult<()> {
    let sidecar = Sidecar::Projections { geometry: GeometryDoc::from_geometry(proj.geometry()) };
    write_payload(loc, &sidecar, proj.data())
}

pub fn read_projections(loc: &Location) -> CliResult<ProjectionSet> {
    match read_payload(loc)? {
        (Sidecar::Projections { geometry }, data) => Ok(ProjectionSet::new(geometry.to_geometry()?, data)?),
        _ => Err(CliError::invalid(format!("{} holds a volume, expected projections", loc.display()))),
    }
}

/// Rounds a volume through the on-disk precision.
pub fn to_f32_precision(vol: &Volume) -> Volume {
    vol.map(|v| v as f32 as f64)
}
