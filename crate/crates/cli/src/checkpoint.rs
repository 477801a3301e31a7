//! Parameter checkpoints.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! magic    8 bytes  "TNNCKPT1"
//! meta_len u64      length of the JSON metadata block
//! meta     bytes    JSON: architecture, t, step, rng position
//! count    u64      number of parameters
//! data     f64 * count
//! ```
//!
//! The text form is a single JSON document with the same metadata and the
//! parameters as shortest round-trip decimals.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tnn_core::{TnnArchitecture, TnnParams};

use crate::error::CliError;

const MAGIC: &[u8; 8] = b"TNNCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub architecture: TnnArchitecture,
    pub t: f64,
    pub step: u64,
    /// word position of the mask stream, as a decimal string (u128)
    pub rng_word_pos: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: TnnParams,
}

#[derive(Serialize, Deserialize)]
struct TextForm {
    meta: CheckpointMeta,
    params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(params: TnnParams, t: f64, step: u64, rng_word_pos: u128) -> Self {
        Self {
            meta: CheckpointMeta {
                architecture: params.arch().clone(),
                t,
                step,
                rng_word_pos: rng_word_pos.to_string(),
            },
            params,
        }
    }

    pub fn rng_word_pos(&self) -> u128 {
        self.meta.rng_word_pos.parse().unwrap_or(0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        let data = self.params.as_slice();
        let mut out = Vec::with_capacity(24 + meta.len() + 8 * data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8], String> {
            let s = bytes.get(at..at + n).ok_or("truncated checkpoint")?;
            at += n;
            Ok(s)
        };
        if take(8)? != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let meta_len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let meta: CheckpointMeta =
            serde_json::from_slice(take(meta_len)?).map_err(|e| format!("bad metadata: {e}"))?;
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let raw = take(count.checked_mul(8).ok_or("bad parameter count")?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let params =
            TnnParams::from_vec(meta.architecture.clone(), data).map_err(|e| e.to_string())?;
        Ok(Self { meta, params })
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(&TextForm {
            meta: self.meta.clone(),
            params: self.params.as_slice().to_vec(),
        })
        .expect("checkpoint serializes")
    }

    pub fn from_text(s: &str) -> Result<Self, String> {
        let t: TextForm = serde_json::from_str(s).map_err(|e| e.to_string())?;
        let params = TnnParams::from_vec(t.meta.architecture.clone(), t.params)
            .map_err(|e| e.to_string())?;
        Ok(Self {
            meta: t.meta,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let bytes = if path.extension().is_some_and(|e| e == "json") {
            self.to_text().into_bytes()
        } else {
            self.to_bytes()
        };
        std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
    }

    /// Loads either form; JSON is recognized by its extension.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            String::from_utf8(bytes)
                .map_err(|e| e.to_string())
                .and_then(|s| Self::from_text(&s))
        } else {
            Self::from_bytes(&bytes)
        };
        parsed.map_err(|m| {
            CliError::io(
                path,
                std::io::Error::new(std::io::ErrorKind::InvalidData, m),
            )
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use tnn_core::{init_network, InputMap};

    fn ckpt() -> Checkpoint {
        let arch = TnnArchitecture::new(
            3,
            2,
            vec![5, 4],
            InputMap::PeriodicEmbedding { a: 1.0, b: PI },
            (-1.0, 1.0),
        )
        .unwrap();
        Checkpoint::new(
            init_network(&arch, 8).unwrap(),
            0.25,
            250,
            12345678901234567890123,
        )
    }

    #[test]
    fn binary_round_trip_is_bitwise() {
        let c = ckpt();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.rng_word_pos(), 12345678901234567890123);
        let x = [0.1, -0.7, 0.33];
        assert_eq!(
            back.params.eval_point(&x).to_bits(),
            c.params.eval_point(&x).to_bits()
        );
    }

    #[test]
    fn text_round_trip_is_bitwise() {
        let c = ckpt();
        let back = Checkpoint::from_text(&c.to_text()).unwrap();
        for (a, b) in back.params.as_slice().iter().zip(c.params.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupt_input_rejected() {
        let c = ckpt();
        let bytes = c.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = ckpt();
        for name in ["p.bin", "p.json"] {
            let path = dir.path().join(name);
            c.save(&path).unwrap();
            assert_eq!(Checkpoint::load(&path).unwrap().params, c.params);
        }
        assert!(matches!(
            Checkpoint::load(&dir.path().join("missing.bin")),
            Err(CliError::Io { .. })
        ));
    }
}
