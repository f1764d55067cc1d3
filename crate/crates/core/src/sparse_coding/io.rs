//! Text format for dictionaries:
//!
//! ```text
//! LOADVEIL-DICT v1 t=<t> n=<n>
//! <n space-separated values>   (t rows, row-major)
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{Dictionary, Result, SparseCodingError};

const MAGIC: &str = "LOADVEIL-DICT";
const VERSION: &str = "v1";

fn format_err(line: usize, message: impl Into<String>) -> SparseCodingError {
    SparseCodingError::Format {
        line,
        message: message.into(),
    }
}

fn parse_dim(token: Option<&str>, key: &str) -> Result<usize> {
    let token = token.ok_or_else(|| format_err(1, format!("missing {key}=")))?;
    token
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format_err(1, format!("expected {key}=<count>, found {token:?}")))
}

impl Dictionary {
    pub fn write_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "{MAGIC} {VERSION} t={} n={}", self.t(), self.n())?;
        for row in self.basis().rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(reader: R) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines.next().ok_or_else(|| format_err(1, "empty file"))??;
        let mut tokens = header.split_whitespace();
        if tokens.next() != Some(MAGIC) || tokens.next() != Some(VERSION) {
            return Err(format_err(1, format!("expected header `{MAGIC} {VERSION} t=.. n=..`")));
        }
        let t = parse_dim(tokens.next(), "t")?;
        let n = parse_dim(tokens.next(), "n")?;
        if t == 0 || n == 0 {
            return Err(format_err(1, "t and n must be positive"));
        }
        let mut data = Vec::with_capacity(t * n);
        for row in 0..t {
            let line_no = row + 2;
            let line = lines
                .next()
                .ok_or_else(|| format_err(line_no, format!("expected {t} rows, file ends after {row}")))??;
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(
                    tok.parse::<f64>()
                        .map_err(|_| format_err(line_no, format!("bad number {tok:?}")))?,
                );
            }
            if data.len() - before != n {
                return Err(format_err(
                    line_no,
                    format!("expected {n} values, found {}", data.len() - before),
                ));
            }
        }
        if let Some(extra) = lines.next() {
            if !extra?.trim().is_empty() {
                return Err(format_err(t + 2, "trailing data after the last row"));
            }
        }
        let basis = Array2::from_shape_vec((t, n), data).expect("row-major shape checked");
        Dictionary::new(basis)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }
}
