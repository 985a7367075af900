//! Problem files, canonical JSON, reproducible float output and sweep CSV.
//!
//! Every float written by this module uses 17 significant digits
//! (`{:.16e}`), which round-trips `f64` exactly.

use std::io::{self, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::ser::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{LqError, Result};
use crate::perturbation::PerturbationSweep;
use crate::problem::LqProblem;

/// `x` with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Wraps a serde_json formatter so floats are written with [`fmt_f64`].
struct Digits17<F>(F);

impl<F: Formatter> Formatter for Digits17<F> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }
    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn end_object_key<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_key(w)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

fn serialize_with<T: Serialize + ?Sized, F: Formatter>(value: &T, formatter: F) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17(formatter));
    value.serialize(&mut ser).expect("in-memory serialization of plain data cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Indented JSON with 17-digit floats and a trailing newline.
pub fn to_json_pretty<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serialize_with(value, PrettyFormatter::new());
    s.push('\n');
    s
}

/// Single-line JSON with 17-digit floats, no trailing newline.
pub fn to_json_compact<T: Serialize + ?Sized>(value: &T) -> String {
    serialize_with(value, CompactFormatter)
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn vector_values(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct RawProblem {
    n: usize,
    m: usize,
    N: usize,
    A: Value,
    B: Value,
    Q: Value,
    S: Value,
    R: Value,
    H: Value,
}

fn schema(msg: impl Into<String>) -> LqError {
    LqError::Schema(msg.into())
}

fn parse_matrix(field: &str, value: &Value, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let outer = value
        .as_array()
        .ok_or_else(|| schema(format!("{field}: expected an array of rows")))?;
    if outer.len() != rows {
        return Err(LqError::mismatch(format!("{field} rows"), 0, rows, outer.len()));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (i, row) in outer.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| schema(format!("{field}[{i}]: expected an array of numbers")))?;
        if row.len() != cols {
            return Err(LqError::mismatch(format!("{field} row {i} length"), 0, cols, row.len()));
        }
        for (j, x) in row.iter().enumerate() {
            let x = x
                .as_f64()
                .ok_or_else(|| schema(format!("{field}[{i}][{j}]: expected a finite number, found {x}")))?;
            data.push(x);
        }
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// Arrays of arrays of arrays are per-step sequences, anything else is one
/// matrix repeated over the horizon.
fn parse_sequence(field: &str, value: &Value, horizon: usize, rows: usize, cols: usize) -> Result<Vec<DMatrix<f64>>> {
    let is_sequence = value
        .as_array()
        .and_then(|outer| outer.first())
        .and_then(Value::as_array)
        .and_then(|row| row.first())
        .is_some_and(Value::is_array);
    if !is_sequence {
        return Ok(vec![parse_matrix(field, value, rows, cols)?; horizon]);
    }
    let steps = value.as_array().expect("checked above");
    if steps.len() != horizon {
        return Err(LqError::mismatch(format!("{field} sequence length"), 0, horizon, steps.len()));
    }
    steps
        .iter()
        .enumerate()
        .map(|(t, mat)| parse_matrix(&format!("{field}[{t}]"), mat, rows, cols))
        .collect()
}

/// Parses a problem document. Syntax errors carry line and column.
pub fn parse_problem(text: &str) -> Result<LqProblem> {
    let raw: RawProblem = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
    let (n, m, horizon) = (raw.n, raw.m, raw.N);
    if n == 0 || m == 0 || horizon == 0 {
        return Err(schema(format!("n, m and N must be positive (n={n}, m={m}, N={horizon})")));
    }
    let a = parse_sequence("A", &raw.A, horizon, n, n)?;
    let b = parse_sequence("B", &raw.B, horizon, n, m)?;
    let q = parse_sequence("Q", &raw.Q, horizon, n, n)?;
    let s = parse_sequence("S", &raw.S, horizon, m, n)?;
    let r = parse_sequence("R", &raw.R, horizon, m, m)?;
    let h = parse_matrix("H", &raw.H, n, n)?;
    LqProblem::new(a, b, q, s, r, h)
}

pub fn load_problem(path: &Path) -> Result<LqProblem> {
    let text = std::fs::read_to_string(path).map_err(|e| schema(format!("{}: {e}", path.display())))?;
    parse_problem(&text)
}

#[derive(serde::Serialize)]
#[allow(non_snake_case)]
struct CanonicalProblem {
    n: usize,
    m: usize,
    N: usize,
    A: Vec<Vec<Vec<f64>>>,
    B: Vec<Vec<Vec<f64>>>,
    Q: Vec<Vec<Vec<f64>>>,
    S: Vec<Vec<Vec<f64>>>,
    R: Vec<Vec<Vec<f64>>>,
    H: Vec<Vec<f64>>,
}

/// Compact JSON with every sequence expanded, fields in schema order and a
/// trailing newline.
pub fn canonical_json(problem: &LqProblem) -> String {
    let horizon = problem.horizon();
    let seq = |get: fn(&LqProblem, usize) -> &DMatrix<f64>| (0..horizon).map(|t| matrix_rows(get(problem, t))).collect();
    let doc = CanonicalProblem {
        n: problem.state_dim(),
        m: problem.control_dim(),
        N: horizon,
        A: seq(LqProblem::a),
        B: seq(LqProblem::b),
        Q: seq(LqProblem::q),
        S: seq(LqProblem::s),
        R: seq(LqProblem::r),
        H: matrix_rows(problem.h()),
    };
    let mut s = to_json_compact(&doc);
    s.push('\n');
    s
}

/// SHA-256 of [`canonical_json`], hex encoded.
pub fn problem_digest(problem: &LqProblem) -> String {
    hex::encode(Sha256::digest(canonical_json(problem).as_bytes()))
}

/// Column names of the sweep CSV for `n` states and `m` controls.
pub fn sweep_csv_header(n: usize, m: usize) -> Vec<String> {
    let mut header = vec!["epsilon".to_string(), "t".to_string()];
    for i in 0..m {
        for j in 0..n {
            header.push(format!("K_{i}_{j}"));
        }
    }
    header.extend((0..m).map(|i| format!("u_{i}")));
    header.push("V_eps".into());
    header.push("kernel_flag".into());
    header
}

/// One row per `(ε, t)`.
pub fn write_sweep_csv<W: Write>(sweep: &PerturbationSweep, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io_err = |e: csv::Error| LqError::Runtime(e.to_string());
    let first = sweep.points.first().expect("schedule has at least three points");
    let (m, n) = first.gains[0].shape();
    w.write_record(sweep_csv_header(n, m)).map_err(io_err)?;
    for point in &sweep.points {
        for (t, gain) in point.gains.iter().enumerate() {
            let mut rec = vec![fmt_f64(point.epsilon), t.to_string()];
            rec.extend(gain.row_iter().flat_map(|r| r.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>()));
            rec.extend(point.control[t].iter().map(|&x| fmt_f64(x)));
            rec.push(fmt_f64(point.value));
            rec.push(point.flags()[t].label().to_string());
            w.write_record(&rec).map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| LqError::Runtime(e.to_string()))
}
