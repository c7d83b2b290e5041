use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

use super::{write_atomic, Dataset, Provenance};

const HEADER_TAG: &str = "switchnet-dist";
const VERSION: u32 = 1;

/// Largest `n` for which an explicit table over `2^n` configurations is built.
pub const MAX_TABLE_BITS: usize = 20;

/// An explicit distribution over `{0,1}^n`.
///
/// Entry `i` is the probability of the configuration whose binary expansion
/// is `i`, with `x_1` as the most significant bit.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionTable {
    n: usize,
    probs: Vec<f64>,
}

impl DistributionTable {
    pub fn new(n: usize, probs: Vec<f64>) -> Result<Self> {
        if n == 0 || n > MAX_TABLE_BITS {
            return Err(Error::InvalidArgument(format!(
                "table dimension must be in 1..={MAX_TABLE_BITS}, got {n}"
            )));
        }
        if probs.len() != 1 << n {
            return Err(Error::DimensionMismatch {
                context: "distribution table",
                expected: 1 << n,
                actual: probs.len(),
            });
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument(
                "probabilities must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { n, probs })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, x: &[u8]) -> f64 {
        self.probs[self.index_of(x)]
    }

    pub fn index_of(&self, x: &[u8]) -> usize {
        config_index(x)
    }

    pub fn config(&self, index: usize) -> Vec<u8> {
        index_config(index, self.n)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER_TAG} v{VERSION} n={}\n", self.n);
        for p in &self.probs {
            // shortest representation that parses back to the same f64
            out.push_str(&format!("{p:?}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Corrupt("empty distribution file".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.first() != Some(&HEADER_TAG) {
            return Err(Error::Corrupt("missing distribution header".into()));
        }
        let version: u32 = parts
            .get(1)
            .and_then(|v| v.strip_prefix('v'))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Corrupt("missing distribution version".into()))?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let n: usize = parts
            .get(2)
            .and_then(|v| v.strip_prefix("n="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Corrupt("missing `n=` in distribution header".into()))?;
        let probs = lines
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 2,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if n <= MAX_TABLE_BITS && probs.len() < 1 << n {
            return Err(Error::Truncated(format!(
                "expected {} probabilities, found {}",
                1usize << n,
                probs.len()
            )));
        }
        Self::new(n, probs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Index of a configuration, `x_1` most significant.
pub(crate) fn config_index(x: &[u8]) -> usize {
    x.iter().fold(0, |acc, &b| (acc << 1) | usize::from(b))
}

pub(crate) fn index_config(index: usize, n: usize) -> Vec<u8> {
    (0..n).map(|k| ((index >> (n - 1 - k)) & 1) as u8).collect()
}

/// Every configuration's weight drawn uniformly from `[0.1, 1]`, then
/// normalized.
pub fn gen_synthetic(n: usize, seed: u64) -> Result<DistributionTable> {
    if n == 0 || n > MAX_TABLE_BITS {
        return Err(Error::InvalidArgument(format!(
            "synthetic distributions need 1 <= n <= {MAX_TABLE_BITS}, got {n}"
        )));
    }
    let mut rng = rng::stream(seed, 0);
    let weights: Vec<f64> = (0..1usize << n).map(|_| rng.random_range(0.1..=1.0)).collect();
    let total: f64 = weights.iter().sum();
    DistributionTable::new(n, weights.into_iter().map(|w| w / total).collect())
}

/// `count` i.i.d. draws from `table`.
pub fn sample_from_table(table: &DistributionTable, count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let mut cumulative = Vec::with_capacity(table.probs.len());
    let mut acc = 0.0;
    for p in &table.probs {
        acc += p;
        cumulative.push(acc);
    }
    let last_nonzero = table.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    let mut rng = rng::stream(seed, 1);
    let rows = (0..count)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            let idx = cumulative.partition_point(|&c| c <= u).min(last_nonzero);
            index_config(idx, table.n)
        })
        .collect();
    Dataset::new(table.n, rows, Provenance::Synthetic { seed })
}
