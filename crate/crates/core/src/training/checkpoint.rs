//! Binary model checkpoints.
//!
//! Layout: one line of compact JSON header terminated by `\n`, followed by
//! the parameters as little-endian IEEE-754 `f32` in header order: trunk,
//! fc, then proxies in `proxy_classes` order.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::ProxyTable;
use crate::error::{Error, Result};
use crate::training::model::{EmbedderModel, LayerShape};

pub const FORMAT: &str = "proxyforge-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub input_dim: usize,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub layers: Vec<LayerShape>,
    pub groups: Vec<GroupEntry>,
    pub proxy_classes: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: EmbedderModel,
    pub proxies: ProxyTable,
}

pub fn encode_checkpoint(
    model: &EmbedderModel,
    proxies: &ProxyTable,
    seed: u64,
    config_hash: &str,
) -> Result<Vec<u8>> {
    let fc = model.fc_offset();
    let header = CheckpointHeader {
        format: FORMAT.into(),
        version: VERSION,
        dtype: "f32-le".into(),
        input_dim: model.input_dim(),
        embed_dim: model.embed_dim(),
        hidden: model.hidden(),
        layers: model.layers().to_vec(),
        groups: vec![
            GroupEntry {
                name: "trunk".into(),
                len: fc,
            },
            GroupEntry {
                name: "fc".into(),
                len: model.params().len() - fc,
            },
            GroupEntry {
                name: "proxy".into(),
                len: proxies.len() * proxies.dim(),
            },
        ],
        proxy_classes: proxies.class_ids().to_vec(),
        seed,
        config_hash: config_hash.to_string(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for v in model.params().iter().chain(proxies.flatten().iter()) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(mut reader: impl BufRead) -> Result<Checkpoint> {
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    let header: CheckpointHeader = serde_json::from_slice(&line)
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION || header.dtype != "f32-le" {
        return Err(Error::Format("unsupported checkpoint format".into()));
    }
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    let total: usize = header.groups.iter().map(|g| g.len).sum();
    if payload.len() != total * 4 {
        return Err(Error::Format(format!(
            "payload has {} bytes, header declares {}",
            payload.len(),
            total * 4
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let group_len = |name: &str| -> Result<usize> {
        header
            .groups
            .iter()
            .find(|g| g.name == name)
            .map(|g| g.len)
            .ok_or_else(|| Error::Format(format!("missing group `{name}`")))
    };
    let model_len = group_len("trunk")? + group_len("fc")?;
    let model = EmbedderModel::from_params(
        header.input_dim,
        &header.hidden,
        header.embed_dim,
        values[..model_len].to_vec(),
    )?;
    let dim = header.embed_dim;
    if group_len("proxy")? != dim * header.proxy_classes.len() {
        return Err(Error::Format("proxy group size mismatch".into()));
    }
    let proxies = ProxyTable::new(
        header
            .proxy_classes
            .iter()
            .cloned()
            .zip(values[model_len..].chunks(dim.max(1)).map(<[f64]>::to_vec))
            .collect(),
    )?;
    Ok(Checkpoint {
        header,
        model,
        proxies,
    })
}

pub fn write_checkpoint(
    path: impl AsRef<Path>,
    model: &EmbedderModel,
    proxies: &ProxyTable,
    seed: u64,
    config_hash: &str,
) -> Result<()> {
    let bytes = encode_checkpoint(model, proxies, seed, config_hash)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let f = std::fs::File::open(path)?;
    decode_checkpoint(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_and_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = EmbedderModel::new(3, &[4], 2, &mut rng);
        let proxies = ProxyTable::new(vec![
            ("a".into(), vec![1.0, 0.5]),
            ("b".into(), vec![-0.25, 2.0]),
        ])
        .unwrap();
        let bytes = encode_checkpoint(&model, &proxies, 7, "abc").unwrap();
        let nl = bytes.iter().position(|b| *b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&bytes[..nl]).unwrap();
        assert_eq!(header["groups"][0]["len"], 16);
        assert_eq!(header["groups"][1]["len"], 10);
        assert_eq!(header["groups"][2]["len"], 4);
        assert_eq!(bytes.len() - nl - 1, 30 * 4);
        // last proxy value is 2.0f32 little-endian
        assert_eq!(&bytes[bytes.len() - 4..], &2.0f32.to_le_bytes());

        let ck = decode_checkpoint(&bytes[..]).unwrap();
        assert_eq!(ck.proxies, proxies);
        assert_eq!(ck.header.config_hash, "abc");
        for (a, b) in ck.model.params().iter().zip(model.params()) {
            assert_eq!(*a, f64::from(*b as f32));
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let model = EmbedderModel::identity(2);
        let proxies = ProxyTable::new(vec![("a".into(), vec![1.0, 0.0])]).unwrap();
        let bytes = encode_checkpoint(&model, &proxies, 0, "").unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }
}
