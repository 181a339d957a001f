use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::features::{ALPHABET_SIZE, POSITION_DIM, TEXT_FEATURE_DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Vec<Param>,
}

/// Width of the row fed to the first dense layer.
pub fn input_width(cfg: &ModelConfig) -> usize {
    POSITION_DIM
        + if cfg.use_text_features { TEXT_FEATURE_DIM } else { 0 }
        + if cfg.use_char_embed { cfg.char_filters } else { 0 }
}

/// Names and shapes of every parameter, in checkpoint order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let h = cfg.hidden_width;
    let mut out = Vec::new();
    let mut dense = |name: &str, fan_in: usize, fan_out: usize| {
        out.push((format!("{name}.w"), vec![fan_in, fan_out]));
        out.push((format!("{name}.b"), vec![fan_out]));
    };
    if cfg.use_char_embed {
        dense("char", cfg.char_kernel * ALPHABET_SIZE, cfg.char_filters);
    }
    dense("input", input_width(cfg), h);
    dense("graph", (1 + 4 * cfg.n_neighbors) * h, h);
    if cfg.use_seq_conv {
        dense("seq", cfg.seq_conv_kernel * h, h);
    }
    if cfg.use_attention {
        for p in ["attn.q", "attn.k", "attn.v", "attn.o"] {
            dense(p, h, h);
        }
        dense("ffn.1", h, cfg.ffn_width);
        dense("ffn.2", cfg.ffn_width, h);
    }
    if cfg.use_dropout_block {
        dense("post", cfg.post_conv_kernel * h, h);
    }
    dense("out", h, cfg.class_count);
    out
}

impl Model {
    /// Glorot-uniform weights, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = param_layout(&config)
            .into_iter()
            .map(|(name, shape)| {
                let value = if shape.len() == 2 {
                    let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    let n = shape[0] * shape[1];
                    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
                    Tensor::new(shape, data).expect("layout shape")
                } else {
                    Tensor::zeros(shape)
                };
                Param { name, value }
            })
            .collect();
        Ok(Model { config, params })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.value)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.value.data().iter().all(|v| v.is_finite()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Model::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let config = serde_json::to_vec(&self.config).expect("config serializes");
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(config.len() as u64).to_le_bytes())?;
        w.write_all(&config)?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&(p.name.len() as u64).to_le_bytes())?;
            w.write_all(p.name.as_bytes())?;
            w.write_all(&(p.value.shape().len() as u64).to_le_bytes())?;
            for &d in p.value.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(&mut r, "version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let config_len = read_len(&mut r, "config length")?;
        let mut config = vec![0u8; config_len];
        read_exact(&mut r, &mut config, "config")?;
        let config: ModelConfig = serde_json::from_slice(&config)
            .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        config
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let count = read_len(&mut r, "parameter count")?;
        let layout = param_layout(&config);
        if count != layout.len() {
            return Err(Error::Checkpoint(format!(
                "{count} parameters stored, config implies {}",
                layout.len()
            )));
        }
        let mut params = Vec::with_capacity(count);
        for (want_name, want_shape) in layout {
            let name_len = read_len(&mut r, "name length")?;
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name, "name")?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
            let rank = read_len(&mut r, "rank")?;
            let shape = (0..rank)
                .map(|_| read_len(&mut r, "dimension"))
                .collect::<Result<Vec<_>>>()?;
            if name != want_name || shape != want_shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} {shape:?} does not match expected {want_name} {want_shape:?}"
                )));
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b, &name)?;
                data.push(f64::from_le_bytes(b));
            }
            params.push(Param {
                name,
                value: Tensor::new(shape, data)?,
            });
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(Model { config, params })
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn read_exact(r: &mut &[u8], buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint(format!("truncated while reading {what}")))
}

fn read_u32(r: &mut &[u8], what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_len(r: &mut &[u8], what: &str) -> Result<usize> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    usize::try_from(u64::from_le_bytes(b))
        .ok()
        .filter(|&n| n <= 1 << 32)
        .ok_or_else(|| Error::Checkpoint(format!("implausible {what}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_respects_ablations() {
        let full = param_layout(&ModelConfig::default());
        assert!(full.iter().any(|(n, _)| n == "attn.q.w"));
        let cfg = ModelConfig {
            use_attention: false,
            use_seq_conv: false,
            use_dropout_block: false,
            use_char_embed: false,
            use_text_features: false,
            n_neighbors: 0,
            ..Default::default()
        };
        let names: Vec<String> = param_layout(&cfg).into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["input.w", "input.b", "graph.w", "graph.b", "out.w", "out.b"]);
        assert_eq!(input_width(&cfg), POSITION_DIM);
    }

    #[test]
    fn init_is_seeded() {
        let a = Model::init(ModelConfig::default(), 3).unwrap();
        let b = Model::init(ModelConfig::default(), 3).unwrap();
        let c = Model::init(ModelConfig::default(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.get("out.b").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = Model::init(ModelConfig::default(), 9).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"TGCK");
        assert_eq!(Model::from_bytes(&bytes).unwrap(), m);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        m.save(&path).unwrap();
        assert_eq!(Model::load(&path).unwrap(), m);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let bytes = Model::init(ModelConfig::default(), 1).unwrap().to_bytes();
        assert!(Model::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Model::from_bytes(&bad).is_err());
        let mut future = bytes;
        future[4] = 99;
        let msg = Model::from_bytes(&future).unwrap_err().to_string();
        assert!(msg.contains("version"), "{msg}");
    }
}
