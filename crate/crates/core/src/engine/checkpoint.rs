//! Binary model files.
//!
//! Layout, little-endian: the magic `PURSCKPT`, a `u32` format version, a
//! `u32` metadata length followed by that many bytes of JSON metadata, a
//! `u32` block count, then per block a `u32` name length, the name, a `u32`
//! rank, the `u32` dimensions and the `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EngineError, InferenceSettings, Model, ModelConfig, ModelParams, Variant};
use crate::data::{FeatureTable, IndexedDataset};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PURSCKPT";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    variant: Variant,
    config: ModelConfig,
    settings: InferenceSettings,
    dataset: IndexedDataset,
    user_features: FeatureTable,
    item_features: FeatureTable,
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<(), EngineError> {
    let v = u32::try_from(v)
        .map_err(|_| EngineError::Checkpoint(format!("{v} does not fit in 32 bits")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), EngineError> {
    let meta = Meta {
        variant: model.variant,
        config: model.params.config.clone(),
        settings: model.settings.clone(),
        dataset: model.dataset.clone(),
        user_features: model.user_features.clone(),
        item_features: model.item_features.clone(),
    };
    let meta = serde_json::to_vec(&meta).map_err(|e| EngineError::Checkpoint(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    put_u32(&mut w, meta.len())?;
    w.write_all(&meta)?;
    let store = &model.params.store;
    put_u32(&mut w, store.len())?;
    for (name, t) in store.iter() {
        put_u32(&mut w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(&mut w, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut w, d)?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>, EngineError> {
        let mut buf = vec![0; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| match e.kind() {
                ErrorKind::UnexpectedEof => {
                    EngineError::Checkpoint(format!("file is truncated while reading {what}"))
                }
                _ => EngineError::Io(e),
            })?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32, EngineError> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn len(&mut self, what: &str) -> Result<usize, EngineError> {
        Ok(self.u32(what)? as usize)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Model, EngineError> {
    let file = File::open(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => {
            EngineError::Checkpoint(format!("checkpoint not found: {}", path.display()))
        }
        _ => EngineError::Io(e),
    })?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };
    if r.bytes(8, "the header")? != MAGIC {
        return Err(EngineError::Checkpoint(format!(
            "{} is not a model checkpoint",
            path.display()
        )));
    }
    let version = r.u32("the version")?;
    if version != CHECKPOINT_VERSION {
        return Err(EngineError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let meta_len = r.len("the metadata length")?;
    let meta: Meta = serde_json::from_slice(&r.bytes(meta_len, "the metadata")?)
        .map_err(|e| EngineError::Checkpoint(format!("bad metadata: {e}")))?;
    meta.config.validate().map_err(EngineError::Checkpoint)?;

    let mut params = ModelParams::new(
        &meta.config,
        meta.user_features.dim,
        meta.item_features.dim,
        meta.dataset.users.len(),
        meta.dataset.items.len(),
        0,
    );
    let blocks = r.len("the block count")?;
    if blocks != params.store.len() {
        return Err(EngineError::Checkpoint(format!(
            "file holds {blocks} parameter blocks, the configured model has {}",
            params.store.len()
        )));
    }
    let mut filled = vec![false; blocks];
    for _ in 0..blocks {
        let n = r.len("a block name")?;
        let name = String::from_utf8(r.bytes(n, "a block name")?)
            .map_err(|_| EngineError::Checkpoint("block name is not UTF-8".into()))?;
        let rank = r.len("a block shape")?;
        let shape = (0..rank)
            .map(|_| r.len("a block shape"))
            .collect::<Result<Vec<_>, _>>()?;
        let id = params
            .store
            .find(&name)
            .ok_or_else(|| EngineError::Checkpoint(format!("unknown parameter block {name}")))?;
        if filled[id.index()] {
            return Err(EngineError::Checkpoint(format!(
                "parameter block {name} appears twice"
            )));
        }
        if params.store.get(id).shape() != shape.as_slice() {
            return Err(EngineError::Checkpoint(format!(
                "block {name} has shape {shape:?}, expected {:?}",
                params.store.get(id).shape()
            )));
        }
        let count: usize = shape.iter().product();
        let raw = r.bytes(count * 8, &format!("block {name}"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        params.store.set(id, data)?;
        filled[id.index()] = true;
    }
    let mut rest = Vec::new();
    r.inner.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(EngineError::Checkpoint(format!(
            "{} trailing bytes after the last block",
            rest.len()
        )));
    }
    Ok(Model {
        params,
        variant: meta.variant,
        settings: meta.settings,
        dataset: meta.dataset,
        user_features: meta.user_features,
        item_features: meta.item_features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{InteractionEvent, Vocab};

    fn model() -> Model {
        let events: Vec<InteractionEvent> = (0..4)
            .map(|i| InteractionEvent {
                user_id: format!("u{}", i % 2),
                item_id: format!("i{i}"),
                label: (i % 2) as u8,
                timestamp: i,
                raw_rating: None,
            })
            .collect();
        let dataset = IndexedDataset::from_events(&events);
        let config = ModelConfig {
            embedding_dim: 4,
            autoencoder_hidden: 6,
            ctr_hidden: vec![5],
            activation_unit_hidden: vec![3],
            factor_hidden: vec![3],
            ..ModelConfig::default()
        };
        let numeric = [("i1".to_string(), vec![0.3, std::f64::consts::PI])]
            .into_iter()
            .collect();
        let item_features =
            FeatureTable::build(&Vocab::from_keys(["i0", "i1", "i2", "i3"]), &numeric, true);
        let mut params = ModelParams::new(&config, 2, item_features.dim, 2, 4, 9);
        params
            .store
            .set(params.user_bias, vec![0.1 + 0.2, 1.0 / 3.0])
            .unwrap();
        Model {
            params,
            variant: Variant::V3NoFactor,
            settings: InferenceSettings::default(),
            user_features: FeatureTable::one_hot(2),
            item_features,
            dataset,
        }
    }

    fn bits(m: &Model) -> Vec<(String, Vec<u64>)> {
        m.params
            .store
            .iter()
            .map(|(n, t)| {
                (
                    n.to_string(),
                    t.data().iter().map(|v| v.to_bits()).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model();
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(bits(&m), bits(&back));
        assert_eq!(m.item_features, back.item_features);
        assert_eq!(m.dataset, back.dataset);
        assert_eq!(m.variant, back.variant);
        assert_eq!(m.settings, back.settings);
        assert_eq!(m.params.config, back.params.config);
    }

    #[test]
    fn truncation_and_versions_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let cut = dir.path().join("cut.ckpt");
        std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_checkpoint(&cut).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");

        let mut newer = bytes.clone();
        newer[8..12].copy_from_slice(&7u32.to_le_bytes());
        let v = dir.path().join("v.ckpt");
        std::fs::write(&v, &newer).unwrap();
        let err = load_checkpoint(&v).unwrap_err().to_string();
        assert!(
            err.contains('7') && err.contains(&CHECKPOINT_VERSION.to_string()),
            "{err}"
        );

        let err = load_checkpoint(&dir.path().join("absent"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("checkpoint not found"), "{err}");
    }
}
