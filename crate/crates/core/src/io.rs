//! Flat binary field files: little-endian `f64`, real and imaginary parts
//! interleaved for complex data, node order `i + n (j + n k)`. Each `.bin`
//! has a `.json` sidecar describing the grid.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CoefficientField, Domain, ScalarField, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Real,
    Complex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub n: usize,
    pub extent: [f64; 3],
    pub kind: FieldKind,
    /// Producer-specific metadata.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

pub fn write_complex(values: &[C64], mut out: impl Write) -> std::io::Result<()> {
    for v in values {
        out.write_all(&v.re.to_le_bytes())?;
        out.write_all(&v.im.to_le_bytes())?;
    }
    out.flush()
}

pub fn write_real(values: &[f64], mut out: impl Write) -> std::io::Result<()> {
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()
}

fn read_f64s(mut input: impl Read) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::InvalidArgument(format!(
            "binary length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Writes `<stem>.bin` and `<stem>.json`.
pub fn save_field(field: &ScalarField, stem: &Path, meta: serde_json::Value) -> Result<()> {
    let (bin, json) = paths(stem);
    write_complex(field.values(), BufWriter::new(File::create(bin)?))?;
    let d = field.domain();
    let sidecar = FieldSidecar {
        n: d.n(),
        extent: d.extent(),
        kind: FieldKind::Complex,
        meta,
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(json)?), &sidecar)?;
    Ok(())
}

pub fn save_coefficient(field: &CoefficientField, stem: &Path) -> Result<()> {
    let (bin, json) = paths(stem);
    write_real(field.values(), BufWriter::new(File::create(bin)?))?;
    let d = field.domain();
    let sidecar = FieldSidecar {
        n: d.n(),
        extent: d.extent(),
        kind: FieldKind::Real,
        meta: serde_json::to_value(field.spec())?,
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(json)?), &sidecar)?;
    Ok(())
}

/// Reads a field written by [`save_field`] or [`save_coefficient`]; real data
/// comes back with zero imaginary part.
pub fn load_field(stem: &Path) -> Result<(ScalarField, FieldSidecar)> {
    let (bin, json) = paths(stem);
    let sidecar: FieldSidecar = serde_json::from_reader(BufReader::new(File::open(json)?))?;
    let domain = Domain::new(sidecar.extent, sidecar.n)?;
    let raw = read_f64s(BufReader::new(File::open(bin)?))?;
    let values: Vec<C64> = match sidecar.kind {
        FieldKind::Complex => raw.chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect(),
        FieldKind::Real => raw.iter().map(|&v| C64::new(v, 0.0)).collect(),
    };
    let expected = match sidecar.kind {
        FieldKind::Complex => 2 * domain.node_count(),
        FieldKind::Real => domain.node_count(),
    };
    if raw.len() != expected {
        return Err(Error::InvalidArgument(format!(
            "binary holds {} values, sidecar implies {expected}",
            raw.len()
        )));
    }
    Ok((ScalarField::from_values(domain, values)?, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{generate_coefficient, CoefficientSpec};

    #[test]
    fn complex_and_real_fields_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = Domain::new([1.0, 2.0, 0.5], 9).unwrap();
        let f = ScalarField::from_fn(d, |x| C64::new(x[0] - x[2], x[1].sin()));
        let stem = dir.path().join("u");
        save_field(&f, &stem, serde_json::json!({"k": 1.0})).unwrap();
        let (g, side) = load_field(&stem).unwrap();
        assert_eq!(f, g);
        assert_eq!(side.kind, FieldKind::Complex);
        assert_eq!(side.meta["k"], 1.0);
        assert_eq!(std::fs::metadata(stem.with_extension("bin")).unwrap().len(), 16 * 729);

        let gamma = generate_coefficient(&d, &CoefficientSpec::diffusion_of_constant(10.0)).unwrap();
        let stem = dir.path().join("gamma");
        save_coefficient(&gamma, &stem).unwrap();
        let (h, side) = load_field(&stem).unwrap();
        assert_eq!(side.kind, FieldKind::Real);
        assert!(h.values().iter().zip(gamma.values()).all(|(a, b)| a.re == *b && a.im == 0.0));
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let d = Domain::unit_cube(9).unwrap();
        let stem = dir.path().join("u");
        save_field(&ScalarField::zeros(d), &stem, serde_json::Value::Null).unwrap();
        let bin = stem.with_extension("bin");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 16]).unwrap();
        assert!(load_field(&stem).is_err());
    }
}
