use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::write_atomic;

const HEADER_TAG: &str = "switchnet-dataset";
const VERSION: u32 = 1;

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Provenance {
    Synthetic { seed: u64 },
    Mnist { threshold: u8, crop: Option<usize> },
    Words { source: String },
    Unknown,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Synthetic { seed } => write!(f, "synthetic seed={seed}"),
            Provenance::Mnist { threshold, crop } => match crop {
                Some(s) => write!(f, "mnist threshold={threshold} crop={s}"),
                None => write!(f, "mnist threshold={threshold}"),
            },
            Provenance::Words { source } => write!(f, "words source={source}"),
            Provenance::Unknown => write!(f, "unknown"),
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse {
            line: 2,
            message: format!("unrecognized provenance `{s}`"),
        };
        let (kind, rest) = s.split_once(' ').unwrap_or((s, ""));
        let field = |key: &str| {
            rest.split(' ')
                .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
        };
        match kind {
            "synthetic" => Ok(Provenance::Synthetic {
                seed: field("seed").and_then(|v| v.parse().ok()).ok_or_else(bad)?,
            }),
            "mnist" => Ok(Provenance::Mnist {
                threshold: field("threshold").and_then(|v| v.parse().ok()).ok_or_else(bad)?,
                crop: match field("crop") {
                    Some(v) => Some(v.parse().map_err(|_| bad())?),
                    None => None,
                },
            }),
            "words" => Ok(Provenance::Words {
                source: rest.strip_prefix("source=").ok_or_else(bad)?.to_string(),
            }),
            "unknown" => Ok(Provenance::Unknown),
            _ => Err(bad()),
        }
    }
}

/// `I` binary vectors of a common length `n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    n: usize,
    rows: Vec<Vec<u8>>,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(n: usize, rows: Vec<Vec<u8>>, provenance: Provenance) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("dataset dimension must be positive".into()));
        }
        if rows.is_empty() {
            return Err(Error::InvalidArgument("dataset must contain at least one row".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "row {i} has length {} but the dataset dimension is {n}",
                    row.len()
                )));
            }
            if row.iter().any(|&b| b > 1) {
                return Err(Error::InvalidArgument(format!("row {i} is not binary")));
            }
        }
        Ok(Self { n, rows, provenance })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.rows
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Splits off the last `count` rows as a held-out set.
    pub fn split_tail(&self, count: usize) -> Result<(Dataset, Dataset)> {
        if count == 0 || count >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "held-out size {count} must be in 1..{}",
                self.len()
            )));
        }
        let cut = self.len() - count;
        Ok((
            Dataset::new(self.n, self.rows[..cut].to_vec(), self.provenance.clone())?,
            Dataset::new(self.n, self.rows[cut..].to_vec(), self.provenance.clone())?,
        ))
    }

    /// File form: the header line, a `# <provenance>` line, then one
    /// `0`/`1` string per row.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * (self.n + 1) + 64);
        out.push_str(&format!(
            "{HEADER_TAG} v{VERSION} n={} count={}\n",
            self.n,
            self.rows.len()
        ));
        out.push_str(&format!("# {}\n", self.provenance));
        for row in &self.rows {
            out.extend(row.iter().map(|&b| if b == 1 { '1' } else { '0' }));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().peekable();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Corrupt("empty dataset file".into()))?;
        let (n, count) = parse_header(header)?;

        let mut provenance = Provenance::Unknown;
        if let Some((_, line)) = lines.peek() {
            if let Some(p) = line.strip_prefix("# ") {
                provenance = p.parse()?;
                lines.next();
            }
        }

        let mut rows = Vec::with_capacity(count);
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            if line.len() != n {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("row has {} bits, expected {n}", line.len()),
                });
            }
            let row = line
                .bytes()
                .map(|c| match c {
                    b'0' => Ok(0u8),
                    b'1' => Ok(1u8),
                    _ => Err(Error::Parse {
                        line: idx + 1,
                        message: format!("unexpected character `{}`", c as char),
                    }),
                })
                .collect::<Result<Vec<u8>>>()?;
            rows.push(row);
        }
        if rows.len() != count {
            return Err(Error::Truncated(format!(
                "header declares {count} rows, found {}",
                rows.len()
            )));
        }
        Self::new(n, rows, provenance)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let bad = |m: &str| Error::Parse {
        line: 1,
        message: m.to_string(),
    };
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.first() != Some(&HEADER_TAG) {
        return Err(Error::Corrupt("missing dataset header".into()));
    }
    let version: u32 = parts
        .get(1)
        .and_then(|v| v.strip_prefix('v'))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("missing version"))?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let field = |key: &str| -> Result<usize> {
        parts
            .iter()
            .find_map(|p| p.strip_prefix(key))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(&format!("missing or invalid `{key}`")))
    };
    let n = field("n=")?;
    let count = field("count=")?;
    if n == 0 || count == 0 {
        return Err(Error::Corrupt("dataset header declares an empty dataset".into()));
    }
    Ok((n, count))
}
