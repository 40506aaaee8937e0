//! File formats: binary and CSV sinograms, CSV tables, 16-bit PGM maps.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmaError};
use crate::reconstructor::Image;
use crate::sampling::{SamplingGrid, Sinogram};

pub const SINOGRAM_MAGIC: &[u8; 4] = b"SMA1";

/// Run identity stamped on every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Provenance { config_hash: config_hash.into(), seed }
    }

    fn comment(&self) -> String {
        format!("# config_hash={} seed={}", self.config_hash, self.seed)
    }
}

/// Row-by-row CSV output with `#` header comments.
pub struct CsvWriter {
    out: BufWriter<File>,
    columns: usize,
}

impl CsvWriter {
    pub fn create(path: &Path, prov: Option<&Provenance>, columns: &[&str]) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        if let Some(p) = prov {
            writeln!(out, "{}", p.comment())?;
        }
        writeln!(out, "{}", columns.join(","))?;
        Ok(CsvWriter { out, columns: columns.len() })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        if fields.len() != self.columns {
            return Err(SmaError::DimensionMismatch {
                expected: format!("{} columns", self.columns),
                actual: format!("{} fields", fields.len()),
            });
        }
        writeln!(self.out, "{}", fields.join(","))?;
        Ok(())
    }

    pub fn row_f64(&mut self, fields: &[f64]) -> Result<()> {
        let f: Vec<String> = fields.iter().map(|v| v.to_string()).collect();
        self.row(&f)
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Parsed CSV: column names and string fields, comments dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub comments: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| SmaError::Format(format!("no column {name}")))?;
        self.rows
            .iter()
            .map(|r| {
                r[i].parse::<f64>()
                    .map_err(|e| SmaError::Format(format!("column {name}: {e}")))
            })
            .collect()
    }
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let mut comments = Vec::new();
    let mut columns = None;
    let mut rows = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if let Some(c) = line.strip_prefix('#') {
            comments.push(c.trim().to_string());
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        match &columns {
            None => columns = Some(fields),
            Some(c) if c.len() != fields.len() => {
                return Err(SmaError::Format(format!("row has {} fields, header {}", fields.len(), c.len())))
            }
            Some(_) => rows.push(fields),
        }
    }
    Ok(CsvTable {
        comments,
        columns: columns.ok_or_else(|| SmaError::Format("missing CSV header".into()))?,
        rows,
    })
}

/// `SMA1` header, `u32` counts, `f64` spacings, then row-major values, all
/// little-endian. Only canonical grids round-trip, so others are refused.
pub fn write_sinogram_bin(path: &Path, sino: &Sinogram) -> Result<()> {
    let g = &sino.grid;
    if !g.is_canonical() {
        return Err(SmaError::Unsupported("binary sinograms require the full lattice of their parameters".into()));
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(SINOGRAM_MAGIC)?;
    out.write_all(&(g.n_alpha as u32).to_le_bytes())?;
    out.write_all(&(g.n_p as u32).to_le_bytes())?;
    for v in [g.d_alpha(), g.d_p(), g.p_bar, g.support] {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in &sino.values {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_sinogram_bin(path: &Path) -> Result<Sinogram> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SINOGRAM_MAGIC {
        return Err(SmaError::Format("not an SMA1 sinogram".into()));
    }
    let mut u = [0u8; 4];
    r.read_exact(&mut u)?;
    let n_alpha = u32::from_le_bytes(u) as usize;
    r.read_exact(&mut u)?;
    let n_p = u32::from_le_bytes(u) as usize;
    let mut f = [0u8; 8];
    let mut head = [0.0; 4];
    for h in &mut head {
        r.read_exact(&mut f)?;
        *h = f64::from_le_bytes(f);
    }
    let [d_alpha, d_p, p_bar, support] = head;
    let grid = SamplingGrid::new(d_p, d_alpha / d_p, p_bar, support)?;
    if (grid.n_alpha, grid.n_p) != (n_alpha, n_p) {
        return Err(SmaError::Format(format!(
            "header counts {n_alpha} x {n_p} disagree with spacings ({} x {})",
            grid.n_alpha, grid.n_p
        )));
    }
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        r.read_exact(&mut f)?;
        values.push(f64::from_le_bytes(f));
    }
    if r.read(&mut f)? != 0 {
        return Err(SmaError::Format("trailing bytes after sinogram values".into()));
    }
    Sinogram::from_values(&grid, values)
}

pub fn write_sinogram_csv(path: &Path, sino: &Sinogram, prov: Option<&Provenance>) -> Result<()> {
    let g = &sino.grid;
    let mut w = CsvWriter::create(path, prov, &["k", "j", "alpha", "p", "value"])?;
    for i in 0..g.n_alpha {
        for j in 0..g.n_p {
            w.row(&[
                (g.k_min + i as i64).to_string(),
                (g.j_min + j as i64).to_string(),
                g.alpha(i).to_string(),
                g.p(j).to_string(),
                sino.get(i, j).to_string(),
            ])?;
        }
    }
    w.finish()
}

pub fn write_image_csv(path: &Path, img: &Image, prov: Option<&Provenance>) -> Result<()> {
    let mut w = CsvWriter::create(path, prov, &["x", "y", "value"])?;
    for iy in 0..img.ny {
        for ix in 0..img.nx {
            let p = img.point(ix, iy);
            w.row_f64(&[p[0], p[1], img.get(ix, iy)])?;
        }
    }
    w.finish()
}

/// Min-max scaling of a PGM map; `value = min + level / 65535 * (max - min)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgmSidecar {
    pub nx: usize,
    pub ny: usize,
    pub min: f64,
    pub max: f64,
    /// Physical placement of pixel `(0, 0)` and the pixel step, when known.
    pub origin: Option<[f64; 2]>,
    pub step: Option<f64>,
    pub provenance: Option<Provenance>,
}

impl PgmSidecar {
    pub fn value(&self, level: u16) -> f64 {
        self.min + level as f64 / 65535.0 * (self.max - self.min)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Binary 16-bit PGM with rows written top (largest `y`) first, plus
/// `<path>.json` holding the scaling.
pub fn write_pgm16(
    path: &Path,
    nx: usize,
    ny: usize,
    values: &[f64],
    geometry: Option<([f64; 2], f64)>,
    prov: Option<&Provenance>,
) -> Result<PgmSidecar> {
    if values.len() != nx * ny || nx == 0 || ny == 0 {
        return Err(SmaError::DimensionMismatch {
            expected: format!("{nx} x {ny} values"),
            actual: format!("{}", values.len()),
        });
    }
    let finite = values.iter().filter(|v| v.is_finite());
    let min = finite.clone().cloned().fold(f64::INFINITY, f64::min);
    let max = finite.cloned().fold(f64::NEG_INFINITY, f64::max);
    let (min, max) = if min.is_finite() { (min, max) } else { (0.0, 0.0) };
    let span = max - min;
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n")?;
    if let Some(p) = prov {
        writeln!(out, "{}", p.comment())?;
    }
    write!(out, "{nx} {ny}\n65535\n")?;
    for iy in (0..ny).rev() {
        for ix in 0..nx {
            let v = values[iy * nx + ix];
            let level = if span > 0.0 && v.is_finite() {
                ((v - min) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
            } else {
                0
            };
            out.write_all(&level.to_be_bytes())?;
        }
    }
    out.flush()?;
    let sidecar = PgmSidecar {
        nx,
        ny,
        min,
        max,
        origin: geometry.map(|g| g.0),
        step: geometry.map(|g| g.1),
        provenance: prov.cloned(),
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| SmaError::Format(e.to_string()))?;
    std::fs::write(sidecar_path(path), json)?;
    Ok(sidecar)
}

pub fn write_image_pgm(path: &Path, img: &Image, prov: Option<&Provenance>) -> Result<PgmSidecar> {
    write_pgm16(path, img.nx, img.ny, &img.values, Some(([img.x_min, img.y_min], img.step)), prov)
}

/// Levels in storage order (top row first) and the header dimensions.
pub fn read_pgm16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let bytes = std::fs::read(path)?;
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(SmaError::Format("truncated PGM header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).to_string());
    }
    i += 1;
    if tokens[0] != "P5" || tokens[3] != "65535" {
        return Err(SmaError::Format("expected a 16-bit binary PGM".into()));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| SmaError::Format(e.to_string()));
    let (nx, ny) = (parse(&tokens[1])?, parse(&tokens[2])?);
    let body = &bytes[i.min(bytes.len())..];
    if body.len() != 2 * nx * ny {
        return Err(SmaError::Format(format!("PGM body has {} bytes, expected {}", body.len(), 2 * nx * ny)));
    }
    Ok((nx, ny, body.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()))
}
