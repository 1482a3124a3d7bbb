//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "WANECKPT"                       8 bytes
//! version                          u32
//! echo length                      u32, then that many bytes of `key=value\n`
//! 4 tables (structural, words, W1, W2), each:
//!     rows u64, cols u64, rows*cols f64
//! SHA-256 of everything above      32 bytes
//! ```
//!
//! The echo carries the model configuration plus whatever the writer adds
//! (training settings, the split fingerprint). Keys are written sorted, so
//! equal inputs give byte-identical files.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{CheckpointError, Error, Result};
use crate::kernel::Matrix;
use crate::model::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 8] = b"WANECKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub echo: BTreeMap<String, String>,
}

fn model_echo(c: &ModelConfig) -> [(&'static str, String); 7] {
    [
        ("model.mode", c.mode.to_string()),
        ("model.align", c.align.to_string()),
        ("model.aggregate", c.aggregate.to_string()),
        ("model.word_dim", c.word_dim.to_string()),
        ("model.alpha1", c.alphas[0].to_string()),
        ("model.alpha2", c.alphas[1].to_string()),
        ("model.alpha3", c.alphas[2].to_string()),
    ]
}

impl Checkpoint {
    pub fn new(params: ModelParams, extra: BTreeMap<String, String>) -> Self {
        let mut echo = extra;
        for (k, v) in model_echo(&params.config) {
            echo.insert(k.to_string(), v);
        }
        Self { params, echo }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let mut echo = String::new();
        for (k, v) in &self.echo {
            echo.push_str(k);
            echo.push('=');
            echo.push_str(v);
            echo.push('\n');
        }
        out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
        out.extend_from_slice(echo.as_bytes());
        let p = &self.params;
        for table in [&p.structural, &p.words, &p.w1, &p.w2] {
            out.extend_from_slice(&(table.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(table.cols() as u64).to_le_bytes());
            for x in table.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut r = Reader { bytes, pos: MAGIC.len() };
        let version = r.u32().ok_or(CheckpointError::Checksum)?;
        if version != VERSION {
            return Err(CheckpointError::Version { found: version, expected: VERSION });
        }
        if bytes.len() < MAGIC.len() + 4 + 32 {
            return Err(CheckpointError::Checksum);
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CheckpointError::Checksum);
        }
        let mut r = Reader { bytes: body, pos: r.pos };
        let malformed = |m: &str| CheckpointError::Malformed(m.to_string());
        let n = r.u32().ok_or_else(|| malformed("echo length"))? as usize;
        let echo_bytes = r.take(n).ok_or_else(|| malformed("echo"))?;
        let echo_text = std::str::from_utf8(echo_bytes).map_err(|_| malformed("echo is not UTF-8"))?;
        let mut echo = BTreeMap::new();
        for line in echo_text.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| malformed("echo line without `=`"))?;
            echo.insert(k.to_string(), v.to_string());
        }
        let mut tables = Vec::with_capacity(4);
        for _ in 0..4 {
            let rows = r.u64().ok_or_else(|| malformed("table rows"))? as usize;
            let cols = r.u64().ok_or_else(|| malformed("table cols"))? as usize;
            let len = rows.checked_mul(cols).ok_or_else(|| malformed("table size"))?;
            let raw = r
                .take(len.checked_mul(8).ok_or_else(|| malformed("table size"))?)
                .ok_or_else(|| malformed("table data"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tables.push(Matrix::from_vec(rows, cols, data).map_err(|e| malformed(&e.to_string()))?);
        }
        if r.pos != body.len() {
            return Err(malformed("trailing bytes"));
        }
        let get = |k: &str| echo.get(k).ok_or_else(|| CheckpointError::Malformed(format!("missing `{k}`")));
        let parse_err = |k: &str| CheckpointError::Malformed(format!("bad `{k}`"));
        let alpha = |k: &str| get(k)?.parse::<f64>().map_err(|_| parse_err(k));
        let config = ModelConfig {
            mode: get("model.mode")?.parse().map_err(|_| parse_err("model.mode"))?,
            align: get("model.align")?.parse().map_err(|_| parse_err("model.align"))?,
            aggregate: get("model.aggregate")?.parse().map_err(|_| parse_err("model.aggregate"))?,
            word_dim: get("model.word_dim")?.parse().map_err(|_| parse_err("model.word_dim"))?,
            alphas: [alpha("model.alpha1")?, alpha("model.alpha2")?, alpha("model.alpha3")?],
        };
        let mut it = tables.into_iter();
        let params = ModelParams {
            config,
            structural: it.next().expect("4 tables"),
            words: it.next().expect("4 tables"),
            w1: it.next().expect("4 tables"),
            w2: it.next().expect("4 tables"),
        };
        params
            .check_shapes(params.num_vertices(), params.vocab_size())
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        Ok(Self { params, echo })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }

    /// Errors unless the checkpoint was trained on the split with this
    /// fingerprint.
    pub fn require_split(&self, fingerprint: &str) -> Result<()> {
        match self.echo.get("split_sha256") {
            Some(f) if f == fingerprint => Ok(()),
            trained => Err(CheckpointError::SplitMismatch {
                expected: trained.cloned().unwrap_or_else(|| "none".into()),
                found: fingerprint.to_string(),
            }
            .into()),
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Aggregate, Align, Mode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let config = ModelConfig::with_structural_dim(Mode::WaneWc, Align::Sub, Aggregate::Max, 4).unwrap();
        let params = ModelParams::init(config, 5, 9, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut extra = BTreeMap::new();
        extra.insert("split_sha256".to_string(), "abc".to_string());
        Checkpoint::new(params, extra)
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncation_is_a_checksum_error() {
        let bytes = sample().to_bytes();
        for cut in [bytes.len() - 1, bytes.len() / 2, 20] {
            assert_eq!(Checkpoint::from_bytes(&bytes[..cut]), Err(CheckpointError::Checksum));
        }
    }

    #[test]
    fn flipped_byte_is_a_checksum_error() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert_eq!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::Checksum));
    }

    #[test]
    fn other_version_is_rejected_before_checksum() {
        let mut bytes = sample().to_bytes();
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert_eq!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::Version { found: 0, expected: VERSION })
        );
    }

    #[test]
    fn bad_magic() {
        assert_eq!(Checkpoint::from_bytes(b"NOTACKPT...."), Err(CheckpointError::BadMagic));
        assert_eq!(Checkpoint::from_bytes(b""), Err(CheckpointError::BadMagic));
    }

    #[test]
    fn split_fingerprint_check() {
        let c = sample();
        assert!(c.require_split("abc").is_ok());
        assert!(matches!(
            c.require_split("xyz"),
            Err(Error::Checkpoint(CheckpointError::SplitMismatch { .. }))
        ));
    }
}
