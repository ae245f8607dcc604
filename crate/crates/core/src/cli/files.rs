//! CSV input files: the simulator ensemble and the observations.
//!
//! Ensemble columns are `x1..xr` (inputs normalized to `[0, 1]`) followed by one
//! `y@<depth>` column per output. Observations have columns `depth,z`.

use std::path::Path;

use nalgebra::DMatrix;

use crate::calibration::Ensemble;
use crate::emulator::Design;
use crate::error::{PbaError, Result};

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::Reader::from_path(path).map_err(|e| PbaError::Config(format!("cannot open {}: {e}", path.display())))
}

fn bad(path: &Path, reason: impl std::fmt::Display) -> PbaError {
    PbaError::Config(format!("{}: {reason}", path.display()))
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| bad(path, format!("line {line}: `{s}` is not a number")))
}

pub fn read_ensemble(path: &Path) -> Result<Ensemble> {
    let mut rdr = open(path)?;
    let headers = rdr.headers().map_err(|e| bad(path, e))?.clone();
    let mut n_inputs = 0;
    let mut depths = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if let Some(d) = h.strip_prefix("y@") {
            depths.push(parse_f64(path, 1, d)?);
        } else if h == format!("x{}", i + 1) && depths.is_empty() {
            n_inputs += 1;
        } else {
            return Err(bad(path, format!("unexpected column `{h}`")));
        }
    }
    if n_inputs == 0 || depths.is_empty() {
        return Err(bad(path, "need x1.. input columns followed by y@depth output columns"));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(path, e))?;
        for s in rec.iter() {
            values.push(parse_f64(path, k + 2, s)?);
        }
        rows += 1;
    }
    let all = DMatrix::from_row_slice(rows, n_inputs + depths.len(), &values);
    let points = all.columns(0, n_inputs).into_owned();
    let outputs = all.columns(n_inputs, depths.len()).into_owned();
    let design = Design::new(points, outputs).map_err(|e| bad(path, e))?;
    Ensemble::new(design, depths).map_err(|e| bad(path, e))
}

pub fn write_ensemble(path: &Path, ensemble: &Ensemble) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| PbaError::Io { path: path.into(), source: e.into() })?;
    let r = ensemble.design.dims();
    let mut header: Vec<String> = (1..=r).map(|i| format!("x{i}")).collect();
    header.extend(ensemble.depths.iter().map(|d| format!("y@{d}")));
    let io = |e: csv::Error| PbaError::Io { path: path.into(), source: e.into() };
    w.write_record(&header).map_err(io)?;
    for i in 0..ensemble.design.n() {
        let row: Vec<String> = ensemble
            .design
            .points
            .row(i)
            .iter()
            .chain(ensemble.design.outputs.row(i).iter())
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(PbaError::io(path))
}

/// `(depth, z)` pairs in file order.
pub fn read_observations(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = open(path)?;
    let headers = rdr.headers().map_err(|e| bad(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["depth", "z"] {
        return Err(bad(path, "expected header `depth,z`"));
    }
    let (mut depths, mut z) = (Vec::new(), Vec::new());
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(path, e))?;
        depths.push(parse_f64(path, k + 2, &rec[0])?);
        z.push(parse_f64(path, k + 2, &rec[1])?);
    }
    if depths.is_empty() {
        return Err(bad(path, "no observations"));
    }
    Ok((depths, z))
}

pub fn write_observations(path: &Path, depths: &[f64], z: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| PbaError::Io { path: path.into(), source: e.into() })?;
    let io = |e: csv::Error| PbaError::Io { path: path.into(), source: e.into() };
    w.write_record(["depth", "z"]).map_err(io)?;
    for (d, v) in depths.iter().zip(z) {
        w.write_record([d.to_string(), v.to_string()]).map_err(io)?;
    }
    w.flush().map_err(PbaError::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ensemble_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let design = Design::new(
            DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]),
            DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0 + 1e-17]),
        )
        .unwrap();
        let e = Ensemble::new(design, vec![0.0, 1.5, 3.0]).unwrap();
        write_ensemble(&p, &e).unwrap();
        assert_eq!(read_ensemble(&p).unwrap(), e);
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_ensemble(Path::new("/nonexistent/ens.csv")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("/nonexistent/ens.csv"));
    }
}
