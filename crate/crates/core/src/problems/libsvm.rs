//! LIBSVM / SVMlight text format: `<label> <idx>:<val> <idx>:<val> ...` with
//! 1-based feature indices.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use super::RobustRegression;
use crate::error::{Error, Result};

/// Parsed file: labels mapped to ±1 and sparse rows with 0-based indices.
#[derive(Clone, Debug, PartialEq)]
pub struct LibsvmData {
    pub labels: Vec<f64>,
    pub rows: Vec<Vec<(usize, f64)>>,
    /// Largest 1-based feature index seen.
    pub max_index: usize,
}

impl LibsvmData {
    /// Dense row-major copy with `dim` columns; features beyond `dim` are
    /// dropped.
    pub fn dense_rows(&self, dim: usize) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| {
                let mut v = vec![0.0; dim];
                for &(k, x) in r {
                    if k < dim {
                        v[k] = x;
                    }
                }
                v
            })
            .collect()
    }
}

fn parse_label(tok: &str) -> std::result::Result<f64, String> {
    let v: f64 = tok.parse().map_err(|_| format!("bad label `{tok}`"))?;
    if v == 1.0 {
        Ok(1.0)
    } else if v == -1.0 || v == 0.0 {
        Ok(-1.0)
    } else {
        Err(format!("label {v} not in {{-1, +1, 0, 1}}"))
    }
}

/// Parse LIBSVM text. `path` is only used in error messages.
pub fn parse_libsvm<R: BufRead>(reader: R, path: &Path) -> Result<LibsvmData> {
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    let mut max_index = 0;
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut toks = content.split_whitespace();
        let label_tok = toks.next().expect("nonempty line has a token");
        let label = match parse_label(label_tok) {
            Ok(l) => l,
            Err(m) if label_tok.parse::<f64>().is_ok() => return Err(Error::Data(format!(
                "{}:{lineno}: {m}",
                path.display()
            ))),
            Err(m) => return Err(err(lineno, m)),
        };
        let mut row = Vec::new();
        for tok in toks {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(lineno, format!("expected idx:val, got `{tok}`")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(lineno, format!("bad feature index `{idx}`")))?;
            if idx == 0 {
                return Err(err(lineno, "feature indices are 1-based".into()));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| err(lineno, format!("bad feature value `{val}`")))?;
            max_index = max_index.max(idx);
            row.push((idx - 1, val));
        }
        labels.push(label);
        rows.push(row);
    }
    Ok(LibsvmData {
        labels,
        rows,
        max_index,
    })
}

pub fn read_libsvm(path: impl AsRef<Path>) -> Result<LibsvmData> {
    let path = path.as_ref();
    let f = File::open(path)?;
    parse_libsvm(BufReader::new(f), path)
}

/// Write in LIBSVM format; values use Rust's shortest round-trip formatting
/// so a parse of the output reproduces the input exactly.
pub fn write_libsvm<W: Write>(data: &LibsvmData, mut w: W) -> Result<()> {
    for (label, row) in data.labels.iter().zip(&data.rows) {
        write!(w, "{}", if *label > 0.0 { "+1" } else { "-1" })?;
        for &(k, v) in row {
            write!(w, " {}:{}", k + 1, v)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Load a LIBSVM file as a robust-regression problem over `agents` shards.
///
/// Rows are split contiguously; the first `N mod M` shards get one extra
/// row. The dimension is `dim_cap` when given, otherwise the largest index.
pub fn load_libsvm(
    path: impl AsRef<Path>,
    agents: usize,
    dim_cap: Option<usize>,
    alpha: f64,
) -> Result<RobustRegression> {
    let path: PathBuf = path.as_ref().to_path_buf();
    let data = read_libsvm(&path)?;
    if agents == 0 {
        return Err(Error::invalid("need at least one agent"));
    }
    let total = data.labels.len();
    if total < agents {
        return Err(Error::Data(format!(
            "{}: {total} rows cannot fill {agents} agents",
            path.display()
        )));
    }
    let dim = dim_cap.unwrap_or(data.max_index);
    if dim == 0 {
        return Err(Error::Data(format!("{}: no features", path.display())));
    }
    let dense = data.dense_rows(dim);
    let base = total / agents;
    let extra = total % agents;
    let mut start = 0;
    let mut shards = Vec::with_capacity(agents);
    for i in 0..agents {
        let len = base + usize::from(i < extra);
        let block: Vec<f64> = dense[start..start + len].iter().flatten().copied().collect();
        shards.push((
            DMatrix::from_column_slice(dim, len, &block),
            data.labels[start..start + len].to_vec(),
        ));
        start += len;
    }
    RobustRegression::new(shards, alpha)
}
