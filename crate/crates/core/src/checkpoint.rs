//! Binary model files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "SWNETCKP"  u32 version  u32 n  u8 arch
//!   arch 1: u32 m
//!   arch 2: u32 m1  u32 l  u32 m2
//! f64 parameters, conditional by conditional, blocks in canonical order
//! 32-byte SHA-256 of everything above
//! ```
//!
//! Parameters are stored as raw bit patterns, so a round trip is exact.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::model::{Architecture, ConditionalKind, ConditionalModel, SwitchBlock, SwitchNetworkModel};

pub const MAGIC: &[u8; 8] = b"SWNETCKP";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

pub fn to_bytes(model: &SwitchNetworkModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.n() as u32).to_le_bytes());
    match model.architecture() {
        Architecture::Single { m } => {
            out.push(1);
            out.extend_from_slice(&(m as u32).to_le_bytes());
        }
        Architecture::Two { m1, l, m2 } => {
            out.push(2);
            for v in [m1, l, m2] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
        }
    }
    for cm in model.conditionals() {
        for block in cm.blocks() {
            for p in block.params() {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, len: usize, what: &str) -> Result<&[u8]> {
        let slice = self
            .bytes
            .get(self.at..self.at + len)
            .ok_or_else(|| Error::Truncated(format!("checkpoint ends inside the {what}")))?;
        self.at += len;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn dim(&mut self, what: &str) -> Result<usize> {
        let v = self.u32(what)? as usize;
        if v == 0 {
            return Err(Error::Corrupt(format!("checkpoint {what} is zero")));
        }
        Ok(v)
    }

    fn block(&mut self, input_dim: usize, width: usize) -> Result<SwitchBlock> {
        let count = SwitchBlock::param_count(input_dim, width);
        let raw = self.take(count * 8, "parameters")?;
        let params = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        SwitchBlock::from_flat(input_dim, width, params)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<SwitchNetworkModel> {
    if bytes.is_empty() {
        return Err(Error::Truncated("checkpoint file is empty".into()));
    }
    let mut r = Reader { bytes, at: 0 };
    let magic = r.take(MAGIC.len(), "header")?;
    if magic != MAGIC {
        return Err(Error::Corrupt("not a switchnet checkpoint (bad magic)".into()));
    }
    let version = r.u32("header")?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    if bytes.len() < DIGEST_LEN + r.at {
        return Err(Error::Truncated("checkpoint is missing its checksum".into()));
    }
    let body_len = bytes.len() - DIGEST_LEN;
    let n = r.dim("variable count")?;
    let architecture = match r.take(1, "header")?[0] {
        1 => Architecture::Single { m: r.dim("width")? },
        2 => Architecture::Two {
            m1: r.dim("width")?,
            l: r.dim("latent size")?,
            m2: r.dim("width")?,
        },
        tag => return Err(Error::Corrupt(format!("unknown architecture tag {tag}"))),
    };
    let expected_params: usize = (0..n).map(|k| architecture.conditional_params(k)).sum();
    let expected_len = r.at + expected_params * 8 + DIGEST_LEN;
    if bytes.len() < expected_len {
        return Err(Error::Truncated(format!(
            "checkpoint has {} bytes, expected {expected_len}",
            bytes.len()
        )));
    }
    if bytes.len() > expected_len {
        return Err(Error::Corrupt(format!(
            "checkpoint has {} trailing bytes",
            bytes.len() - expected_len
        )));
    }
    if Sha256::digest(&bytes[..body_len]).as_slice() != &bytes[body_len..] {
        return Err(Error::Checksum);
    }

    let mut conditionals = Vec::with_capacity(n);
    for k in 0..n {
        let kind = match architecture {
            Architecture::Single { m } => ConditionalKind::SingleLayer(r.block(k, m)?),
            Architecture::Two { m1, l, m2 } => {
                let first = (0..l).map(|_| r.block(k, m1)).collect::<Result<_>>()?;
                let second = r.block(l, m2)?;
                ConditionalKind::TwoLayer { first, second }
            }
        };
        conditionals.push(ConditionalModel::new(k, kind)?);
    }
    SwitchNetworkModel::new(architecture, conditionals)
}

pub fn save(model: &SwitchNetworkModel, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SwitchNetworkModel> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn models() -> Vec<SwitchNetworkModel> {
        vec![
            SwitchNetworkModel::init(5, Architecture::Single { m: 3 }, 1).unwrap(),
            SwitchNetworkModel::init(4, Architecture::Two { m1: 2, l: 3, m2: 4 }, 2).unwrap(),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for model in models() {
            let bytes = to_bytes(&model);
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back, model);
            assert_eq!(to_bytes(&back), bytes);
            let x = [1, 0, 1, 1, 0][..model.n()].to_vec();
            assert_eq!(
                back.joint_log_prob(&x).unwrap().to_bits(),
                model.joint_log_prob(&x).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn special_values_survive() {
        let mut model = SwitchNetworkModel::zeros(2, Architecture::Single { m: 1 }).unwrap();
        *model.conditional_mut(1).param_mut(0) = -0.0;
        *model.conditional_mut(1).param_mut(1) = f64::MIN_POSITIVE / 4.0;
        let back = from_bytes(&to_bytes(&model)).unwrap();
        assert_eq!(
            back.conditional(1)
                .flat_params()
                .iter()
                .map(|p| p.to_bits())
                .collect::<Vec<_>>(),
            model
                .conditional(1)
                .flat_params()
                .iter()
                .map(|p| p.to_bits())
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn damage_is_detected() {
        let bytes = to_bytes(&models()[1]);
        assert!(matches!(from_bytes(&[]), Err(Error::Truncated(_))));

        let mut bad_magic = bytes.clone();
        bad_magic[0] ^= 0xff;
        assert!(matches!(from_bytes(&bad_magic), Err(Error::Corrupt(_))));

        let mut bad_version = bytes.clone();
        bad_version[8] = 7;
        assert!(matches!(from_bytes(&bad_version), Err(Error::Version { found: 7, .. })));

        assert!(matches!(
            from_bytes(&bytes[..bytes.len() - 40]),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(from_bytes(&bytes[..10]), Err(Error::Truncated(_))));

        let mut flipped = bytes.clone();
        let mid = bytes.len() / 2;
        flipped[mid] ^= 1;
        assert!(matches!(from_bytes(&flipped), Err(Error::Checksum)));

        let mut bad_tag = bytes.clone();
        bad_tag[16] = 9;
        assert!(matches!(from_bytes(&bad_tag), Err(Error::Corrupt(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = models().remove(0);
        save(&model, &path).unwrap();
        assert_eq!(load(&path).unwrap(), model);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
