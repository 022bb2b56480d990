//! Trained-model container.
//!
//! ```text
//! "QANA" | version u32 | architecture config | param count u32
//! param*:    name | trainable u8 | rank u32 | dims u32* | f32 values
//! metadata:  count u32 | (key, value)*
//! ```
//!
//! Little-endian throughout; strings and value blobs carry a u64 length.

use std::path::Path;

use qana_core::arch::{ParamStore, QanaConfig, QanaModel, NUM_BLOCKS};
use qana_core::codec::{ByteReader, ByteWriter};
use qana_core::{QanaError, Result, Tensor};

pub const MODEL_MAGIC: &[u8; 4] = b"QANA";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: QanaModel<f32>,
    /// Free-form training facts, kept in insertion order.
    pub metadata: Vec<(String, String)>,
}

impl ModelFile {
    pub fn new(model: QanaModel<f32>) -> Self {
        Self {
            model,
            metadata: Vec::new(),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn write_config(w: &mut ByteWriter, c: &QanaConfig) {
    for ch in c.block_channels {
        w.u32(ch as u32);
    }
    w.f64(c.ghost_ratio);
    w.u32(c.ghost_kernel as u32);
    w.f64(c.dropout);
    w.u32(c.eca_kernel as u32);
    w.u32(c.se_reduction as u32);
    w.u32(c.num_classes as u32);
    w.u32(c.head_channels as u32);
    w.f64(c.bn_eps);
    w.f64(c.bn_momentum);
}

fn read_config(r: &mut ByteReader) -> Result<QanaConfig> {
    let mut block_channels = [0usize; NUM_BLOCKS];
    for ch in block_channels.iter_mut() {
        *ch = r.u32()? as usize;
    }
    Ok(QanaConfig {
        block_channels,
        ghost_ratio: r.f64()?,
        ghost_kernel: r.u32()? as usize,
        dropout: r.f64()?,
        eca_kernel: r.u32()? as usize,
        se_reduction: r.u32()? as usize,
        num_classes: r.u32()? as usize,
        head_channels: r.u32()? as usize,
        bn_eps: r.f64()?,
        bn_momentum: r.f64()?,
    })
}

pub fn encode_model(file: &ModelFile) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    write_config(&mut w, &file.model.config);
    w.u32(file.model.params.len() as u32);
    for (name, p) in file.model.params.iter() {
        w.str(name);
        w.u8(p.trainable as u8);
        w.u32(p.value.rank() as u32);
        for &d in p.value.shape() {
            w.u32(d as u32);
        }
        w.f32s(p.value.data());
    }
    w.u32(file.metadata.len() as u32);
    for (k, v) in &file.metadata {
        w.str(k);
        w.str(v);
    }
    w.into_bytes()
}

fn corrupt(e: QanaError) -> QanaError {
    match e {
        QanaError::Corrupt(_) => e,
        other => QanaError::Corrupt(other.to_string()),
    }
}

/// Parse a model file. Nothing is returned unless the whole file checks
/// out: magic, version, every tensor, the metadata and the absence of
/// trailing bytes.
pub fn decode_model(bytes: &[u8]) -> Result<ModelFile> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != MODEL_MAGIC {
        return Err(QanaError::Corrupt("not a QANA model file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(QanaError::Version {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let config = read_config(&mut r)?;
    let n = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..n {
        let name = r.str()?;
        let trainable = match r.u8()? {
            0 => false,
            1 => true,
            t => {
                return Err(QanaError::Corrupt(format!(
                    "parameter `{name}`: bad trainable flag {t}"
                )))
            }
        };
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(QanaError::Corrupt(format!("parameter `{name}`: rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let value = Tensor::new(shape, r.f32s()?).map_err(corrupt)?;
        params.insert(name, value, trainable).map_err(corrupt)?;
    }
    let m = r.u32()? as usize;
    let mut metadata = Vec::with_capacity(m.min(256));
    for _ in 0..m {
        metadata.push((r.str()?, r.str()?));
    }
    if !r.is_at_end() {
        return Err(QanaError::Corrupt("trailing bytes after model".into()));
    }
    let model = QanaModel::from_parts(config, params).map_err(corrupt)?;
    Ok(ModelFile { model, metadata })
}

pub fn save_model(file: &ModelFile, path: &Path) -> Result<()> {
    std::fs::write(path, encode_model(file))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    decode_model(&std::fs::read(path)?)
}
