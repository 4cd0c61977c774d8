//! Binary feature containers and text embedding tables.
//!
//! Feature container layout (little endian):
//!
//! ```text
//! "SCNF"  u8 version=1  u32 rows  u32 cols  rows*cols f32, row-major
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"SCNF";
pub const FEATURE_VERSION: u8 = 1;
const HEADER_LEN: usize = 13;

/// Encodes a matrix as a feature container (values narrowed to `f32`).
pub fn encode_feature_container(m: &Matrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.rows()).map_err(|_| Error::Shape("too many rows".into()))?;
    let cols = u32::try_from(m.cols()).map_err(|_| Error::Shape("too many columns".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.data().len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.push(FEATURE_VERSION);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for &v in m.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_feature_container(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Data("not a feature container".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Data("truncated feature container header".into()));
    }
    if bytes[4] != FEATURE_VERSION {
        return Err(Error::Data(format!("unsupported feature container version {}", bytes[4])));
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
    let payload = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Data(format!("dimension overflow: {rows} x {cols}")))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() < payload {
        return Err(Error::Data(format!(
            "truncated payload: {rows} x {cols} needs {payload} bytes, found {}",
            body.len()
        )));
    }
    if body.len() > payload {
        return Err(Error::Data(format!(
            "{} trailing bytes after payload",
            body.len() - payload
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    Matrix::from_vec_checked(rows, cols, data)
}

pub fn write_feature_container(path: &Path, m: &Matrix) -> Result<()> {
    let bytes = encode_feature_container(m)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_container(path: &Path) -> Result<Matrix> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_feature_container(&bytes).map_err(|e| Error::load(path, e.to_string()))
}

/// Token → embedding row lookup.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    rows: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Adds or replaces `token`.
    pub fn insert(&mut self, token: &str, values: &[f64]) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::Shape(format!(
                "embedding for '{token}' has {} values, table dim is {}",
                values.len(),
                self.dim
            )));
        }
        match self.index.get(token) {
            Some(&i) => self.rows[i * self.dim..(i + 1) * self.dim].copy_from_slice(values),
            None => {
                self.index.insert(token.to_string(), self.tokens.len());
                self.tokens.push(token.to_string());
                self.rows.extend_from_slice(values);
            }
        }
        Ok(())
    }

    /// Exact match first, then lowercase.
    pub fn get(&self, token: &str) -> Option<&[f64]> {
        let i = self
            .index
            .get(token)
            .or_else(|| self.index.get(&token.to_lowercase()))?;
        Some(&self.rows[i * self.dim..(i + 1) * self.dim])
    }

    /// Stacks the embeddings of `tokens`; the error names the first missing token.
    pub fn lookup<S: AsRef<str>>(&self, tokens: &[S]) -> std::result::Result<Matrix, String> {
        let mut data = Vec::with_capacity(tokens.len() * self.dim);
        for t in tokens {
            let row = self.get(t.as_ref()).ok_or_else(|| t.as_ref().to_string())?;
            data.extend_from_slice(row);
        }
        Ok(Matrix::from_vec(tokens.len(), self.dim, data).expect("consistent dims"))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut table: Option<EmbeddingTable> = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ').filter(|s| !s.is_empty());
            let token = parts.next().expect("nonempty line");
            let values: Vec<f64> = parts
                .map(|p| {
                    p.parse::<f64>().map_err(|_| Error::Parse {
                        line: i + 1,
                        msg: format!("bad float '{p}'"),
                    })
                })
                .collect::<Result<_>>()?;
            if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("token '{token}' needs finite values"),
                });
            }
            let t = table.get_or_insert_with(|| EmbeddingTable::new(values.len()));
            t.insert(token, &values).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(table.unwrap_or_default())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        BufReader::new(f)
            .read_to_string(&mut text)
            .map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::load(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        for (i, t) in self.tokens.iter().enumerate() {
            let row = &self.rows[i * self.dim..(i + 1) * self.dim];
            let vals: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{t} {}", vals.join(" ")).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a text file as lines, for small sidecar lists.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .map(|l| l.map_err(|e| Error::io(path, e)))
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .collect()
}

/// Matrix as CSV, one row per line, shortest round-trip float formatting.
pub fn matrix_csv(m: &Matrix) -> String {
    let mut s = String::new();
    for i in 0..m.rows() {
        let vals: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&vals.join(","));
        s.push('\n');
    }
    s
}
