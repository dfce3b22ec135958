//! Versioned binary checkpoint: magic, format version, JSON header, then
//! little-endian `f32` parameters and running statistics.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{NetConfig, ResNet};
use super::NetError;

const MAGIC: &[u8; 8] = b"SHIMNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub net: NetConfig,
    pub tool_version: String,
    /// Free-form run metadata (resolved config, training summary).
    pub meta: serde_json::Value,
    pub params: usize,
    pub stats: usize,
}

pub fn save_checkpoint(net: &ResNet, meta: serde_json::Value, path: &Path) -> Result<(), NetError> {
    let header = CheckpointHeader {
        net: net.config().clone(),
        tool_version: crate::VERSION.to_string(),
        meta,
        params: net.params.len(),
        stats: net.stats.len(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(16 + json.len() + 4 * (header.params + header.stats));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in net.params.iter().chain(&net.stats) {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| NetError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(&buf).map_err(|e| NetError::Io(format!("{}: {e}", path.display())))
}

/// Load a checkpoint; when `expected` is given the stored network config must match it.
pub fn load_checkpoint(path: &Path, expected: Option<&NetConfig>) -> Result<(ResNet, CheckpointHeader), NetError> {
    let bytes = fs::read(path).map_err(|e| NetError::Io(format!("{}: {e}", path.display())))?;
    let bad = |m: &str| NetError::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    if let Some(cfg) = expected {
        if *cfg != header.net {
            return Err(NetError::Config(format!(
                "checkpoint network config {:?} does not match requested {:?}",
                header.net, cfg
            )));
        }
    }
    let data = &bytes[16 + hlen..];
    if data.len() != 4 * (header.params + header.stats) {
        return Err(bad(&format!("expected {} values, found {} bytes", header.params + header.stats, data.len())));
    }
    let values: Vec<f64> = data.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect();
    let (params, stats) = values.split_at(header.params);
    let net = ResNet::from_parts(header.net.clone(), params.to_vec(), stats.to_vec())?;
    Ok((net, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::model::{InputBatch, Mode};
    use crate::net::ops::Act;

    fn cfg() -> NetConfig {
        NetConfig::desk(2, 8, 8).with_widths(2, [2, 4, 8, 16])
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let mut net = ResNet::new(cfg()).unwrap();
        net.stats.iter_mut().enumerate().for_each(|(i, v)| *v += 0.01 * i as f64);
        net.quantize_f32();
        save_checkpoint(&net, serde_json::json!({"fold": 1}), &path).unwrap();
        let (back, header) = load_checkpoint(&path, Some(&cfg())).unwrap();
        assert_eq!(back.params, net.params);
        assert_eq!(back.stats, net.stats);
        assert_eq!(header.meta["fold"], 1);
        let mut x = Act::zeros(2, 4, 8, 8);
        x.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64 * 0.37).sin());
        let x = InputBatch(x);
        assert_eq!(net.forward(&x, Mode::Eval).unwrap().outputs, back.forward(&x, Mode::Eval).unwrap().outputs);
    }

    #[test]
    fn refuses_mismatch_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&ResNet::new(cfg()).unwrap(), serde_json::Value::Null, &path).unwrap();
        let other = NetConfig { seed: 9, ..cfg() };
        assert!(matches!(load_checkpoint(&path, Some(&other)), Err(NetError::Config(_))));
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path, None), Err(NetError::Checkpoint(_))));
        fs::write(&path, b"garbage").unwrap();
        assert!(matches!(load_checkpoint(&path, None), Err(NetError::Checkpoint(_))));
    }
}
