//! CSV formats for datasets and weights, number formatting, and atomic
//! file writes.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::types::{Dataset, EstimatorId, OutcomeModelId, WeightSet, NUM_COVARIATES};

/// Formats like C's `%.17g`: 17 significant digits, trailing zeros removed,
/// scientific notation outside `1e-5 <= |v| < 1e17`.
pub fn fmt_g17(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-5..17).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (16 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Formats an optional value, writing `NA` when absent.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), fmt_g17)
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory followed by a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut builder = tempfile::Builder::new();
    // Default temp files are 0600; let the umask decide as for a plain create.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o666));
    }
    let mut tmp = builder.tempfile_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn dataset_header() -> String {
    let mut cols: Vec<String> = (1..=NUM_COVARIATES).map(|j| format!("x{j}")).collect();
    cols.extend(["t", "y", "true_ps", "outcome_model"].map(String::from));
    cols.join(",")
}

pub fn dataset_to_csv(ds: &Dataset) -> String {
    let mut out = dataset_header();
    out.push('\n');
    for i in 0..ds.n() {
        for j in 0..NUM_COVARIATES {
            out.push_str(&fmt_g17(ds.covariates[(i, j)]));
            out.push(',');
        }
        out.push_str(&ds.treatment[i].to_string());
        out.push(',');
        out.push_str(&fmt_g17(ds.outcome[i]));
        out.push(',');
        if let Some(ps) = &ds.true_ps {
            out.push_str(&fmt_g17(ps[i]));
        }
        out.push(',');
        out.push_str(ds.outcome_model.as_str());
        out.push('\n');
    }
    out
}

fn parse_f64(field: &str, row: usize, name: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        row,
        message: format!("column {name}: '{field}' is not a number"),
    })
}

pub fn dataset_from_csv(reader: impl Read) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.join(",") != dataset_header() {
        return Err(Error::Parse {
            row: 0,
            message: format!("expected header '{}'", dataset_header()),
        });
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); NUM_COVARIATES];
    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut ps = Vec::new();
    let mut any_ps = false;
    let mut model = None;
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec?;
        for (j, col) in cols.iter_mut().enumerate() {
            col.push(parse_f64(&rec[j], row, &header[j])?);
        }
        let tv = parse_f64(&rec[10], row, "t")?;
        if tv != 0.0 && tv != 1.0 {
            return Err(Error::Parse { row, message: format!("treatment '{}' is not 0 or 1", &rec[10]) });
        }
        t.push(tv as u8);
        y.push(parse_f64(&rec[11], row, "y")?);
        let p = rec[12].trim();
        if p.is_empty() {
            ps.push(f64::NAN);
        } else {
            any_ps = true;
            ps.push(parse_f64(p, row, "true_ps")?);
        }
        let m: OutcomeModelId = rec[13].trim().parse().map_err(|_| Error::Parse {
            row,
            message: format!("unknown outcome model '{}'", &rec[13]),
        })?;
        if model.is_some_and(|prev| prev != m) {
            return Err(Error::Parse { row, message: "mixed outcome models".into() });
        }
        model = Some(m);
    }
    let n = t.len();
    let model = model.ok_or(Error::Parse { row: 0, message: "dataset has no rows".into() })?;
    if any_ps && ps.iter().any(|p| p.is_nan()) {
        return Err(Error::Parse { row: 0, message: "true_ps present for some rows only".into() });
    }
    let x = DMatrix::from_fn(n, NUM_COVARIATES, |i, j| cols[j][i]);
    Dataset::new(x, t, y, any_ps.then_some(ps), model, 0)
}

pub fn weights_to_csv(ws: &WeightSet) -> String {
    let mut out = String::from("unit_index,weight,estimator,converged\n");
    for (i, w) in ws.weights.iter().enumerate() {
        out.push_str(&format!("{i},{},{},{}\n", fmt_g17(*w), ws.estimator, ws.converged));
    }
    out
}

pub fn weights_from_csv(reader: impl Read) -> Result<WeightSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != ["unit_index", "weight", "estimator", "converged"] {
        return Err(Error::Parse {
            row: 0,
            message: "expected header 'unit_index,weight,estimator,converged'".into(),
        });
    }
    let mut weights = Vec::new();
    let mut estimator = None;
    let mut converged = true;
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec?;
        let idx: usize = rec[0].trim().parse().map_err(|_| Error::Parse {
            row,
            message: format!("bad unit index '{}'", &rec[0]),
        })?;
        if idx != weights.len() {
            return Err(Error::Parse { row, message: format!("unit index {idx} out of sequence") });
        }
        weights.push(parse_f64(&rec[1], row, "weight")?);
        let e: EstimatorId = rec[2].trim().parse().map_err(|_| Error::Parse {
            row,
            message: format!("unknown estimator '{}'", &rec[2]),
        })?;
        estimator = Some(e);
        converged &= match rec[3].trim() {
            "true" => true,
            "false" => false,
            other => return Err(Error::Parse { row, message: format!("bad converged flag '{other}'") }),
        };
    }
    let estimator = estimator.ok_or(Error::Parse { row: 0, message: "weights file has no rows".into() })?;
    let mut ws = WeightSet::new(weights, estimator);
    ws.converged = converged;
    Ok(ws)
}
