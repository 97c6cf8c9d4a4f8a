//! Binary tensor container.
//!
//! Layout: the magic `SPCKPT01`, a little-endian `u64` header length, a JSON
//! header (format version, metadata, tensor table of name, dtype, shape, byte
//! offset), the contiguous little-endian `f32` payload, then `TRLR` followed
//! by the 32-byte configuration hash and the 32-byte dataset hash.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SpectralBand;
use crate::error::{Error, Result};
use crate::head::HeadFlags;
use crate::nn::ViTConfig;
use crate::protocol::{NamedTensors, PadModel};

pub const MAGIC: &[u8; 8] = b"SPCKPT01";
pub const TRAILER: &[u8; 4] = b"TRLR";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    metadata: BTreeMap<String, serde_json::Value>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub tensors: NamedTensors,
    pub config_hash: [u8; 32],
    pub dataset_hash: [u8; 32],
}

fn band_nm(s: &str) -> bool {
    s.parse::<u16>().is_ok_and(|nm| SpectralBand::new(nm).is_ok())
}

fn block_index(s: &str) -> bool {
    s.strip_prefix("block").is_some_and(|i| !i.is_empty() && i.bytes().all(|b| b.is_ascii_digit()))
}

/// Whether `name` belongs to one of the encoder, head, ensemble, data,
/// evaluation or feature-dump naming schemes.
pub fn valid_name(name: &str) -> bool {
    let parts: Vec<&str> = name.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return false;
    }
    let band = |p: &str| p.strip_prefix("band").is_some_and(band_nm);
    match parts.as_slice() {
        ["embed", _, ..] => true,
        ["trunk", b, _, ..] => block_index(b),
        [b, blk, _, ..] if b.starts_with("band") => band(b) && block_index(blk),
        ["head", b, _, ..] => band(b),
        ["ensemble", "acc" | "w", nm] => band_nm(nm),
        ["data", b, "mean" | "std"] => band(b),
        ["eval", "dev_threshold"] => true,
        ["features", b, _, ..] => band(b) || *b == "fused",
        _ => false,
    }
}

impl Checkpoint {
    pub fn new(tensors: NamedTensors, config_hash: [u8; 32], dataset_hash: [u8; 32]) -> Self {
        Self { metadata: BTreeMap::new(), tensors, config_hash, dataset_hash }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, (shape, data)) in &self.tensors {
            if !valid_name(name) {
                return Err(Error::Format(format!("tensor name {name:?} is outside the naming scheme")));
            }
            if shape.iter().product::<usize>() != data.len() {
                return Err(Error::Format(format!("{name}: shape {shape:?} does not hold {} values", data.len())));
            }
            entries.push(TensorEntry { name: name.clone(), dtype: "f32".into(), shape: shape.clone(), offset });
            offset += 4 * data.len() as u64;
        }
        let header = Header { format_version: FORMAT_VERSION, metadata: self.metadata.clone(), tensors: entries };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize + 68);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, data) in self.tensors.values() {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(TRAILER);
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&self.dataset_hash);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Format(m);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let payload_start = 16usize.checked_add(hlen).filter(|e| *e <= bytes.len()).ok_or_else(|| bad("header runs past the end".into()))?;
        let header: Header =
            serde_json::from_slice(&bytes[16..payload_start]).map_err(|e| bad(format!("unreadable header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(format!("format version {} (expected {FORMAT_VERSION})", header.format_version)));
        }
        if bytes.len() < payload_start + 68 {
            return Err(bad("file too short for the trailer".into()));
        }
        let payload_end = bytes.len() - 68;
        let payload = &bytes[payload_start..payload_end];
        let trailer = &bytes[payload_end..];
        if &trailer[..4] != TRAILER {
            return Err(bad("missing trailer".into()));
        }

        let mut tensors = NamedTensors::new();
        let mut expected = 0u64;
        for e in &header.tensors {
            if !valid_name(&e.name) {
                return Err(bad(format!("tensor name {:?} is outside the naming scheme", e.name)));
            }
            if e.dtype != "f32" {
                return Err(bad(format!("{}: unsupported dtype {}", e.name, e.dtype)));
            }
            // Tensors are packed in table order, so each must start where the previous ended.
            if e.offset != expected {
                return Err(bad(format!("{}: offset {} overlaps or leaves a gap (expected {expected})", e.name, e.offset)));
            }
            let n = e.shape.iter().product::<usize>();
            let end = e.offset + 4 * n as u64;
            if end as usize > payload.len() {
                return Err(bad(format!("{}: data runs past the payload", e.name)));
            }
            let data = payload[e.offset as usize..end as usize]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if tensors.insert(e.name.clone(), (e.shape.clone(), data)).is_some() {
                return Err(bad(format!("duplicate tensor {}", e.name)));
            }
            expected = end;
        }
        if expected as usize != payload.len() {
            return Err(bad(format!("payload has {} bytes, tensors cover {expected}", payload.len())));
        }
        Ok(Self {
            metadata: header.metadata,
            tensors,
            config_hash: trailer[4..36].try_into().expect("32 bytes"),
            dataset_hash: trailer[36..68].try_into().expect("32 bytes"),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Store a model with the metadata needed to rebuild it.
    pub fn from_model(model: &PadModel, config_hash: [u8; 32], dataset_hash: [u8; 32]) -> Result<Self> {
        let flags = model.flags().ok_or_else(|| Error::State("model has no heads".into()))?;
        let mut c = Self::new(model.to_tensors(), config_hash, dataset_hash);
        c.metadata.insert("model".into(), serde_json::to_value(&model.encoder.config).expect("serializable"));
        c.metadata.insert("head_flags".into(), serde_json::to_value(flags).expect("serializable"));
        Ok(c)
    }

    pub fn meta<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self.metadata.get(key).ok_or_else(|| Error::Format(format!("metadata key {key} missing")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Format(format!("metadata {key}: {e}")))
    }

    pub fn model(&self) -> Result<PadModel> {
        let config: ViTConfig = self.meta("model")?;
        let flags: HeadFlags = self.meta("head_flags")?;
        PadModel::from_tensors(&config, flags, &self.tensors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        let mut t = NamedTensors::new();
        t.insert("embed.proj.weight".into(), (vec![2, 3], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, -0.0, 7.0]));
        t.insert("ensemble.w.850".into(), (vec![1], vec![0.25]));
        t.insert("head.band980.e_k".into(), (vec![0], vec![]));
        let mut c = Checkpoint::new(t, [7; 32], [9; 32]);
        c.metadata.insert("note".into(), serde_json::json!("x"));
        c
    }

    #[test]
    fn names_follow_the_schemes() {
        for ok in [
            "embed.cls_token",
            "trunk.block0.attn.qkv.weight",
            "band800.block3.mlp.fc1.bias",
            "head.band830.fuse.weight",
            "ensemble.acc.980",
            "ensemble.w.800",
            "data.band870.std",
            "eval.dev_threshold",
            "features.band800.a0",
            "features.fused.a3",
        ] {
            assert!(valid_name(ok), "{ok}");
        }
        for bad in ["", "embed", "head.band801.x", "trunk.blockx.y", "ensemble.w.7", "other.x", "band800.block1", "data.band800.var", "a..b"] {
            assert!(!valid_name(bad), "{bad}");
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        for (n, (s, d)) in &c.tensors {
            let (s2, d2) = &back.tensors[n];
            assert_eq!(s, s2);
            assert!(d.iter().zip(d2).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        assert_eq!(back.config_hash, [7; 32]);
        assert_eq!(back.dataset_hash, [9; 32]);
        assert_eq!(back.metadata, c.metadata);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(Checkpoint::from_bytes(&b).is_err());
        let mut b = bytes.clone();
        let n = b.len();
        b[n - 68] = b'X';
        assert!(Checkpoint::from_bytes(&b).is_err());
        let mut b = bytes.clone();
        b.insert(bytes.len() - 68, 0);
        assert!(Checkpoint::from_bytes(&b).is_err());
        let mut t = NamedTensors::new();
        t.insert("weights".into(), (vec![1], vec![0.0]));
        assert!(Checkpoint::new(t, [0; 32], [0; 32]).to_bytes().is_err());
        let mut t = NamedTensors::new();
        t.insert("embed.x".into(), (vec![2], vec![0.0]));
        assert!(Checkpoint::new(t, [0; 32], [0; 32]).to_bytes().is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_payloads_round_trip(bits in proptest::collection::vec(any::<u32>(), 0..64), h in any::<[u8; 32]>()) {
            let data: Vec<f32> = bits.iter().map(|b| f32::from_bits(*b)).collect();
            let mut t = NamedTensors::new();
            t.insert("trunk.block0.norm1.weight".into(), (vec![data.len()], data.clone()));
            let c = Checkpoint::new(t, h, [1; 32]);
            let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
            let got = &back.tensors["trunk.block0.norm1.weight"].1;
            prop_assert!(got.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(back.config_hash, h);
        }
    }
}
