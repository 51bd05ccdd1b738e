//! Serialization of diagnostics rows (CSV) and field snapshots (raw
//! little-endian floats behind a fixed 64-byte text header).

use crate::error::{Result, SimError};
use crate::grid::{GridSpec, Lattice};
use crate::state::DiagnosticsRecord;
use std::io::{Read, Write};
use std::path::Path;

/// Version tag written as the first line of every diagnostics CSV.
pub const DIAG_CSV_VERSION: &str = "# nordvlas-diag v1";

const CSV_COLUMNS: &str = "time,total_energy,kinetic_energy,field_energy,p_max,ptilde_max,phi_min,phi_max,char_invariant_residual_max,energy_drift_rel";

/// Serialize records to CSV. Floats use the shortest round-trip
/// representation, so identical runs produce byte-identical files.
pub fn diagnostics_to_csv(records: &[DiagnosticsRecord]) -> String {
    let mut out = String::new();
    out.push_str(DIAG_CSV_VERSION);
    out.push('\n');
    out.push_str(CSV_COLUMNS);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.time,
            r.total_energy,
            r.kinetic_energy,
            r.field_energy,
            r.p_max,
            r.ptilde_max,
            r.phi_min,
            r.phi_max,
            r.char_invariant_residual_max,
            r.energy_drift_rel
        ));
    }
    out
}

pub fn write_diagnostics_csv(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(diagnostics_to_csv(records).as_bytes())?;
    Ok(())
}

/// Parse a diagnostics CSV produced by [`diagnostics_to_csv`].
pub fn parse_diagnostics_csv(text: &str) -> Result<Vec<DiagnosticsRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(v) if v == DIAG_CSV_VERSION => {}
        other => {
            return Err(SimError::InvalidConfig(format!(
                "unrecognized diagnostics version line: {other:?}"
            )))
        }
    }
    match lines.next() {
        Some(h) if h == CSV_COLUMNS => {}
        other => {
            return Err(SimError::InvalidConfig(format!(
                "unrecognized diagnostics column header: {other:?}"
            )))
        }
    }
    let mut records = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    SimError::InvalidConfig(format!("row {}: cannot parse `{s}`", n + 1))
                })
            })
            .collect::<Result<_>>()?;
        if fields.len() != 10 {
            return Err(SimError::InvalidConfig(format!(
                "row {}: expected 10 columns, got {}",
                n + 1,
                fields.len()
            )));
        }
        records.push(DiagnosticsRecord {
            time: fields[0],
            total_energy: fields[1],
            kinetic_energy: fields[2],
            field_energy: fields[3],
            p_max: fields[4],
            ptilde_max: fields[5],
            phi_min: fields[6],
            phi_max: fields[7],
            char_invariant_residual_max: fields[8],
            energy_drift_rel: fields[9],
        });
    }
    Ok(records)
}

/// Snapshot header size in bytes. The header is ASCII:
/// `nordvlas-snap v1 n=NNNNN dx=D t=T` padded with spaces, where `n` is
/// the nodes-per-axis count and `D`, `T` are `%.9e` floats. The payload
/// is `n^3` little-endian f64 values with the last index fastest.
pub const SNAPSHOT_HEADER_LEN: usize = 64;

pub fn write_snapshot(path: &Path, lattice: &Lattice, grid: &GridSpec, time: f64) -> Result<()> {
    let mut header = format!(
        "nordvlas-snap v1 n={:05} dx={:.9e} t={:.9e}",
        lattice.nodes_per_axis(),
        grid.dx,
        time
    )
    .into_bytes();
    assert!(header.len() <= SNAPSHOT_HEADER_LEN, "snapshot header overflow");
    header.resize(SNAPSHOT_HEADER_LEN, b' ');
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(&header)?;
    for &v in lattice.as_slice() {
        file.write_all(&v.to_le_bytes())?;
    }
    file.flush()?;
    Ok(())
}

/// Read back a snapshot: `(nodes_per_axis, dx, time, values)`.
pub fn read_snapshot(path: &Path) -> Result<(usize, f64, f64, Vec<f64>)> {
    let mut file = std::fs::File::open(path)?;
    let mut header = [0u8; SNAPSHOT_HEADER_LEN];
    file.read_exact(&mut header)?;
    let text = std::str::from_utf8(&header)
        .map_err(|_| SimError::InvalidConfig("snapshot header is not ASCII".into()))?;
    if !text.starts_with("nordvlas-snap v1") {
        return Err(SimError::InvalidConfig("not a nordvlas snapshot".into()));
    }
    let mut n = 0usize;
    let mut dx = f64::NAN;
    let mut time = f64::NAN;
    for token in text.split_whitespace() {
        if let Some(v) = token.strip_prefix("n=") {
            n = v.parse().map_err(|_| SimError::InvalidConfig("bad n in snapshot header".into()))?;
        } else if let Some(v) = token.strip_prefix("dx=") {
            dx = v.parse().map_err(|_| SimError::InvalidConfig("bad dx in snapshot header".into()))?;
        } else if let Some(v) = token.strip_prefix("t=") {
            time = v.parse().map_err(|_| SimError::InvalidConfig("bad t in snapshot header".into()))?;
        }
    }
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() != n * n * n * 8 {
        return Err(SimError::InvalidConfig(format!(
            "snapshot payload has {} bytes, expected {}",
            bytes.len(),
            n * n * n * 8
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((n, dx, time, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;

    #[test]
    fn csv_round_trips_bitwise() {
        let records = vec![
            DiagnosticsRecord::new(0.0, 1.25, 0.5, 3.7, 1.1, -0.25, 0.125, 1e-12, 0.0),
            DiagnosticsRecord::new(
                0.1 + 0.2, // a value without a short decimal form
                1.0 / 3.0,
                2.0f64.sqrt(),
                0.0,
                0.0,
                -1e-300,
                1e300,
                f64::MIN_POSITIVE,
                0.015,
            ),
        ];
        let text = diagnostics_to_csv(&records);
        assert!(text.starts_with(DIAG_CSV_VERSION));
        let back = parse_diagnostics_csv(&text).unwrap();
        assert_eq!(records.len(), back.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.time.to_bits(), b.time.to_bits());
            assert_eq!(a.total_energy.to_bits(), b.total_energy.to_bits());
            assert_eq!(a.phi_min.to_bits(), b.phi_min.to_bits());
            assert_eq!(a.char_invariant_residual_max.to_bits(), b.char_invariant_residual_max.to_bits());
        }
    }

    #[test]
    fn snapshot_round_trips() {
        let g = GridSpec::new(Vec3::zero(), 1.0, 8).unwrap();
        let lat = Lattice::from_fn(&g, |x| x.x * 1.5 - x.y + 0.25 * x.z);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.snap");
        write_snapshot(&path, &lat, &g, 0.75).unwrap();
        let size = std::fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(size, SNAPSHOT_HEADER_LEN + 9 * 9 * 9 * 8);
        let (n, dx, t, values) = read_snapshot(&path).unwrap();
        assert_eq!(n, 9);
        assert!((dx - g.dx).abs() < 1e-10);
        assert!((t - 0.75).abs() < 1e-10);
        assert_eq!(values.len(), lat.as_slice().len());
        for (a, b) in values.iter().zip(lat.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
