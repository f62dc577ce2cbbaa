//! On-disk artifact formats: potential fields as a JSON header plus a raw
//! little-endian f64 payload, test-line bundles as a manifest directory with
//! per-slice payloads, and CSV exports for plotting.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{KglError, Result};
use crate::geometry::{GridDescriptor, SurfaceGrid};
use crate::potentials::PotentialField;
use crate::transform::{Grid1D, TestLine};
use crate::BOTTOM;

#[derive(Debug, Serialize, Deserialize)]
struct FieldHeader {
    grid: GridDescriptor,
    label: String,
    masked_nodes: Vec<usize>,
    atoms: Vec<(usize, f64)>,
}

fn write_f64_payload(path: &Path, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

fn read_f64_payload(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(KglError::Config(format!("{}: payload is not f64-aligned", path.display())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Writes `<stem>.json` and `<stem>.f64` under `dir`; returns the header path.
pub fn write_field(dir: &Path, stem: &str, field: &PotentialField) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let header = FieldHeader {
        grid: field.grid.descriptor(),
        label: field.label.clone(),
        masked_nodes: (0..field.mask.len()).filter(|&x| field.mask[x]).collect(),
        atoms: field.atoms.clone(),
    };
    let header_path = dir.join(format!("{stem}.json"));
    fs::write(&header_path, serde_json::to_string_pretty(&header)?)?;
    write_f64_payload(&dir.join(format!("{stem}.f64")), &field.values)?;
    Ok(header_path)
}

/// Reads a field written by [`write_field`]; the grid must match the header.
pub fn read_field(grid: &Arc<SurfaceGrid>, dir: &Path, stem: &str) -> Result<PotentialField> {
    let header: FieldHeader =
        serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    if header.grid != grid.descriptor() {
        return Err(KglError::Config(format!(
            "grid mismatch: payload was written for {:?}",
            header.grid
        )));
    }
    let values = read_f64_payload(&dir.join(format!("{stem}.f64")))?;
    if values.len() != grid.node_count() {
        return Err(KglError::Config("payload length does not match the grid".into()));
    }
    let mut field = PotentialField::from_values(grid, values, &header.label);
    for x in header.masked_nodes {
        field.mask[x] = true;
    }
    field.atoms = header.atoms;
    Ok(field)
}

/// Node-value table: `index,row,col,a,b,value,masked` with chart coordinates.
pub fn field_csv(path: &Path, field: &PotentialField) -> Result<()> {
    let g = &field.grid;
    let mut out = String::from("index,row,col,a,b,value,masked\n");
    for x in 0..g.node_count() {
        if g.is_infinity(x) {
            continue;
        }
        let (a, b) = g.node_angles(x);
        let v = field.values[x];
        let shown = if v == BOTTOM { f64::NEG_INFINITY } else { v };
        out.push_str(&format!(
            "{},{},{},{:.12},{:.12},{:.12e},{}\n",
            x,
            x / g.n,
            x % g.n,
            a,
            b,
            shown,
            u8::from(field.mask[x])
        ));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct TestLineManifest {
    grid: GridDescriptor,
    label: String,
    taugrid: Grid1D,
    tau_minus: f64,
    tau_plus: f64,
    endpoint_atoms: Option<(Vec<(usize, f64)>, Vec<(usize, f64)>)>,
    /// Payload file name per slope index; `None` marks an empty slice.
    slices: Vec<Option<String>>,
}

/// Writes a test line as `manifest.json` plus one `.f64` payload per
/// non-empty slice into `dir`.
pub fn write_test_line(dir: &Path, tline: &TestLine) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(tline.slices.len());
    for (i, slice) in tline.slices.iter().enumerate() {
        match slice {
            Some(values) => {
                let name = format!("slice_{i:05}.f64");
                write_f64_payload(&dir.join(&name), values)?;
                names.push(Some(name));
            }
            None => names.push(None),
        }
    }
    let manifest = TestLineManifest {
        grid: tline.grid.descriptor(),
        label: tline.label.clone(),
        taugrid: tline.taugrid,
        tau_minus: tline.tau_minus,
        tau_plus: tline.tau_plus,
        endpoint_atoms: tline.endpoint_atoms.clone(),
        slices: names,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_test_line(grid: &Arc<SurfaceGrid>, dir: &Path) -> Result<TestLine> {
    let manifest: TestLineManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.grid != grid.descriptor() {
        return Err(KglError::Config("grid mismatch in test-line manifest".into()));
    }
    let mut slices = Vec::with_capacity(manifest.slices.len());
    for name in &manifest.slices {
        match name {
            Some(name) => {
                let values = read_f64_payload(&dir.join(name))?;
                if values.len() != grid.node_count() {
                    return Err(KglError::Config("slice length does not match the grid".into()));
                }
                slices.push(Some(values));
            }
            None => slices.push(None),
        }
    }
    Ok(TestLine {
        grid: grid.clone(),
        taugrid: manifest.taugrid,
        slices,
        tau_minus: manifest.tau_minus,
        tau_plus: manifest.tau_plus,
        endpoint_atoms: manifest.endpoint_atoms,
        label: manifest.label,
    })
}

/// Slope profiles of selected nodes: `tau,node<i>,node<j>,...` with empty
/// cells where a slice is missing or the node is at the bottom.
pub fn tau_profile_csv(path: &Path, tline: &TestLine, nodes: &[usize]) -> Result<()> {
    let mut out = String::from("tau");
    for x in nodes {
        out.push_str(&format!(",node{x}"));
    }
    out.push('\n');
    for i in 0..tline.taugrid.len {
        out.push_str(&format!("{:.12}", tline.taugrid.value(i)));
        for &x in nodes {
            match &tline.slices[i] {
                Some(s) if s[x] != BOTTOM => out.push_str(&format!(",{:.12e}", s[x])),
                _ => out.push(','),
            }
        }
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Two-column CSV for scalar-vs-scalar plots (energy against time, masses
/// against slope, ...).
pub fn xy_csv(path: &Path, x_name: &str, y_name: &str, rows: &[(f64, f64)]) -> Result<()> {
    let mut out = format!("{x_name},{y_name}\n");
    for (x, y) in rows {
        out.push_str(&format!("{x:.12e},{y:.12e}\n"));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Appends a line to a writer, for streaming run logs.
pub fn log_line<W: Write>(w: &mut W, line: &str) -> Result<()> {
    writeln!(w, "{line}")?;
    Ok(())
}
