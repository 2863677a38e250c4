//! Legacy residual archives.
//!
//! A text file with a `key = value` header, a `---` separator, then one row
//! per residual:
//!
//! ```text
//! gparareal-archive
//! version = 1
//! system = fhn
//! dim = 2
//! fine_order = 4
//! coarse_order = 2
//! fine_steps_per_slice = 4000
//! coarse_steps_per_slice = 4
//! slice_width = 3ff0000000000000
//! hyperparameters = 3f847ae147ae147b:3fe0000000000000 ...
//! rows = 188
//! ---
//! acquisition bfe0000000000000 ... | 3f50624dd2f1a9fc ...
//! ```
//!
//! Every real number is the 16-digit hex of its IEEE-754 bit pattern, so a
//! read after a write reproduces the data bitwise.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gp::{Hyperparameters, Provenance, ResidualDataset};
use crate::integrators::RkOrder;

pub const ARCHIVE_VERSION: u32 = 1;
const MAGIC: &str = "gparareal-archive";

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveHeader {
    pub version: u32,
    pub system: String,
    pub dim: usize,
    pub fine_order: RkOrder,
    pub coarse_order: RkOrder,
    pub fine_steps_per_slice: usize,
    pub coarse_steps_per_slice: usize,
    pub slice_width: f64,
    /// Per-output hyperparameters when the archive was saved; may be empty.
    pub hyperparameters: Vec<Hyperparameters>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LegacyArchive {
    pub header: ArchiveHeader,
    pub data: ResidualDataset,
}

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn unhex(s: &str) -> Option<f64> {
    (s.len() == 16).then_some(())?;
    u64::from_str_radix(s, 16).ok().map(f64::from_bits)
}

pub fn render_archive(archive: &LegacyArchive) -> Result<String> {
    let h = &archive.header;
    if archive.data.dim() != h.dim {
        return Err(Error::DimensionMismatch {
            expected: h.dim,
            found: archive.data.dim(),
        });
    }
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(s, "version = {}", h.version);
    let _ = writeln!(s, "system = {}", h.system);
    let _ = writeln!(s, "dim = {}", h.dim);
    let _ = writeln!(s, "fine_order = {}", u8::from(h.fine_order));
    let _ = writeln!(s, "coarse_order = {}", u8::from(h.coarse_order));
    let _ = writeln!(s, "fine_steps_per_slice = {}", h.fine_steps_per_slice);
    let _ = writeln!(s, "coarse_steps_per_slice = {}", h.coarse_steps_per_slice);
    let _ = writeln!(s, "slice_width = {}", hex(h.slice_width));
    let thetas: Vec<String> = h
        .hyperparameters
        .iter()
        .map(|t| format!("{}:{}", hex(t.sigma2), hex(t.ell2)))
        .collect();
    let _ = writeln!(s, "hyperparameters = {}", thetas.join(" "));
    let _ = writeln!(s, "rows = {}", archive.data.len());
    let _ = writeln!(s, "---");
    for (x, y, p) in archive.data.rows() {
        let xs: Vec<String> = x.iter().map(|&v| hex(v)).collect();
        let ys: Vec<String> = y.iter().map(|&v| hex(v)).collect();
        let _ = writeln!(s, "{} {} | {}", p.as_str(), xs.join(" "), ys.join(" "));
    }
    Ok(s)
}

pub fn archive_write(path: &Path, archive: &LegacyArchive) -> Result<()> {
    let text = render_archive(archive)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn archive_read(path: &Path) -> Result<LegacyArchive> {
    let text = std::fs::read_to_string(path)?;
    parse_archive(&text).map_err(|message| Error::Archive {
        path: path.to_path_buf(),
        message,
    })
}

/// Parses archive text; errors name the offending line.
pub fn parse_archive(text: &str) -> std::result::Result<LegacyArchive, String> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, MAGIC)) => {}
        _ => return Err(format!("line 1: expected `{MAGIC}`")),
    }
    let mut fields = std::collections::HashMap::new();
    for (n, line) in lines.by_ref() {
        if line == "---" {
            break;
        }
        let (k, v) = line
            .split_once(" = ")
            .or_else(|| line.strip_suffix(" =").map(|k| (k, "")))
            .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
        fields.insert(k.to_string(), (n + 1, v.to_string()));
    }
    let get = |key: &str| -> std::result::Result<(usize, &str), String> {
        fields
            .get(key)
            .map(|(n, v)| (*n, v.as_str()))
            .ok_or_else(|| format!("header: missing `{key}`"))
    };
    let num = |key: &str| -> std::result::Result<usize, String> {
        let (n, v) = get(key)?;
        v.parse().map_err(|_| format!("line {n}: bad `{key}`"))
    };
    let order = |key: &str| -> std::result::Result<RkOrder, String> {
        let (n, v) = get(key)?;
        v.parse::<u8>()
            .ok()
            .and_then(|o| RkOrder::try_from(o).ok())
            .ok_or_else(|| format!("line {n}: bad `{key}`"))
    };

    let version = num("version")? as u32;
    if version != ARCHIVE_VERSION {
        return Err(format!("unsupported version {version} (expected {ARCHIVE_VERSION})"));
    }
    let dim = num("dim")?;
    if dim == 0 {
        return Err("header: `dim` must be positive".into());
    }
    let (n_width, width) = get("slice_width")?;
    let slice_width = unhex(width).ok_or_else(|| format!("line {n_width}: bad `slice_width`"))?;
    let (n_theta, theta_text) = get("hyperparameters")?;
    let hyperparameters = theta_text
        .split_whitespace()
        .map(|pair| {
            let (a, b) = pair.split_once(':')?;
            Hyperparameters::new(unhex(a)?, unhex(b)?).ok()
        })
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| format!("line {n_theta}: bad `hyperparameters`"))?;
    if !hyperparameters.is_empty() && hyperparameters.len() != dim {
        return Err(format!("line {n_theta}: {} hyperparameter pairs for dim {dim}", hyperparameters.len()));
    }
    let header = ArchiveHeader {
        version,
        system: get("system")?.1.to_string(),
        dim,
        fine_order: order("fine_order")?,
        coarse_order: order("coarse_order")?,
        fine_steps_per_slice: num("fine_steps_per_slice")?,
        coarse_steps_per_slice: num("coarse_steps_per_slice")?,
        slice_width,
        hyperparameters,
    };
    let expected_rows = num("rows")?;

    let mut data = ResidualDataset::new(dim);
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let bad = || format!("line {}: corrupt row", n + 1);
        let (head, ys) = line.split_once(" | ").ok_or_else(bad)?;
        let mut head = head.split(' ');
        let provenance = match head.next() {
            Some("acquisition") => Provenance::Acquisition,
            Some("legacy") => Provenance::Legacy,
            _ => return Err(bad()),
        };
        let x: Vec<f64> = head.map(unhex).collect::<Option<_>>().ok_or_else(bad)?;
        let y: Vec<f64> = ys.split(' ').map(unhex).collect::<Option<_>>().ok_or_else(bad)?;
        if x.len() != dim || y.len() != dim {
            return Err(format!(
                "line {}: row has {} inputs and {} outputs, header dim is {dim}",
                n + 1,
                x.len(),
                y.len()
            ));
        }
        data.push(&x, &y, provenance).map_err(|e| e.to_string())?;
    }
    if data.len() != expected_rows {
        return Err(format!("header announces {expected_rows} rows, found {}", data.len()));
    }
    Ok(LegacyArchive { header, data })
}

/// Mismatches between an archive and the solve about to use it. Rows are
/// still usable when these are non-empty; an archive from a different window
/// is silent as long as slice width and steps per slice agree.
pub fn compatibility_warnings(archive: &ArchiveHeader, expected: &ArchiveHeader) -> Vec<String> {
    let mut w = Vec::new();
    if archive.system != expected.system {
        w.push(format!("archive system `{}` differs from `{}`", archive.system, expected.system));
    }
    if archive.fine_order != expected.fine_order || archive.coarse_order != expected.coarse_order {
        w.push(format!(
            "archive solvers {}/{} differ from {}/{}",
            archive.fine_order, archive.coarse_order, expected.fine_order, expected.coarse_order
        ));
    }
    if archive.fine_steps_per_slice != expected.fine_steps_per_slice
        || archive.coarse_steps_per_slice != expected.coarse_steps_per_slice
    {
        w.push(format!(
            "archive steps per slice {}/{} differ from {}/{}",
            archive.fine_steps_per_slice,
            archive.coarse_steps_per_slice,
            expected.fine_steps_per_slice,
            expected.coarse_steps_per_slice
        ));
    }
    let rel = (archive.slice_width - expected.slice_width).abs() / expected.slice_width.abs();
    if rel > 1e-12 {
        w.push(format!(
            "archive slice width {} differs from {}",
            archive.slice_width, expected.slice_width
        ));
    }
    w
}
