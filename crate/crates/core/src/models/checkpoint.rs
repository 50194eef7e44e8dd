//! Single-file model container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! magic "NINFCKPT" | version | config_len | config JSON | value_bytes
//! n_params | { name_len | name | rank | dims[rank] | values } * n_params
//! ```
//!
//! `value_bytes` is 4 or 8: values are stored at the model's own precision,
//! so a round trip is lossless. Loading converts to the requested precision.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{build_model, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NINFCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint<T: Scalar>(model: &Model<T>) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(&model.config)?;
    let mut out = Vec::with_capacity(64 + 4 * model.num_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let put = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    put(&mut out, CHECKPOINT_VERSION as usize);
    put(&mut out, config.len());
    out.extend_from_slice(&config);
    let wide = std::mem::size_of::<T>() == 8;
    put(&mut out, if wide { 8 } else { 4 });
    put(&mut out, model.params.len());
    for (name, t) in model.params.iter() {
        put(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put(&mut out, t.rank());
        for &d in t.shape() {
            put(&mut out, d);
        }
        for &v in t.data() {
            if wide {
                out.extend_from_slice(&v.to_f64().to_le_bytes());
            } else {
                out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Parses a checkpoint and checks that its parameter names and shapes are
/// exactly those the embedded config builds.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Model<T>> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        r.pos = 0;
        return Err(r.err("bad magic, not a checkpoint file"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(r.err(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32("config length")?;
    let start = r.pos;
    let config: ModelConfig =
        serde_json::from_slice(r.take(len, "config")?).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            offset: start as u64,
            msg: format!("config JSON: {e}"),
        })?;
    let width = r.u32("value width")?;
    if width != 4 && width != 8 {
        r.pos -= 4;
        return Err(r.err(format!("value width must be 4 or 8, found {width}")));
    }
    let template = build_model::<T>(&config, 0)?;

    let count = r.u32("parameter count")?;
    if count != template.params.len() {
        return Err(Error::Checkpoint(format!(
            "config expects {} parameter tensors, file holds {count}",
            template.params.len()
        )));
    }
    let mut params = ParamStore::new();
    for (want_name, want) in template.params.iter() {
        let name_len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| r.err("name is not UTF-8"))?;
        if name != want_name {
            return Err(Error::Checkpoint(format!(
                "expected parameter {want_name:?}, found {name:?}"
            )));
        }
        let rank = r.u32("rank")?;
        let shape = (0..rank)
            .map(|_| r.u32("dimension"))
            .collect::<Result<Vec<_>>>()?;
        if shape != want.shape() {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {shape:?} does not match config shape {:?}",
                want.shape()
            )));
        }
        let raw = r.take(width * want.numel(), "values")?;
        let data = raw
            .chunks_exact(width)
            .map(|c| {
                T::from_f64(match *c {
                    [a, b, c, d] => f32::from_le_bytes([a, b, c, d]) as f64,
                    _ => f64::from_le_bytes(c.try_into().expect("8 bytes")),
                })
            })
            .collect();
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes after last parameter"));
    }
    Ok(Model { config, params })
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ImageSize, Variant};

    fn model() -> Model<f32> {
        let cfg = ModelConfig {
            variant: Variant::Ninformer,
            image_size: ImageSize::new(8, 8, 1),
            patch_size: 4,
            d_model: 8,
            n_blocks: 1,
            n_heads: 2,
            d_mlp: 6,
            d_token_mix: 5,
            d_channel_mix: 7,
            n_classes: 3,
            use_positional_embedding: false,
            sigmoid_gate: false,
        };
        build_model(&cfg, 4).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = encode_checkpoint(&m).unwrap();
        assert_eq!(&bytes[..8], b"NINFCKPT");
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        let back: Model<f32> = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.config, m.config);
        assert!(back.params.bit_eq(&m.params));
    }

    #[test]
    fn wide_models_round_trip_losslessly() {
        let m: Model<f64> = model().cast();
        let mut m = m;
        for (_, t) in m.params.iter_mut() {
            for v in t.data_mut() {
                *v += 1e-12;
            }
        }
        let back: Model<f64> =
            decode_checkpoint(&encode_checkpoint(&m).unwrap(), Path::new("mem")).unwrap();
        assert!(back.params.bit_eq(&m.params));
        let narrow: Model<f32> =
            decode_checkpoint(&encode_checkpoint(&m).unwrap(), Path::new("mem")).unwrap();
        assert!(narrow.params.bit_eq(&m.params.cast()));
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = encode_checkpoint(&model()).unwrap();
        let p = Path::new("mem");

        let mut bad = bytes.clone();
        bad[0] = b'X';
        let e = decode_checkpoint::<f32>(&bad, p).unwrap_err();
        assert!(matches!(e, Error::Format { offset: 0, .. }), "{e}");

        let e = decode_checkpoint::<f32>(&bytes[..bytes.len() - 3], p).unwrap_err();
        assert!(e.to_string().contains("truncated"), "{e}");

        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint::<f32>(&extra, p).is_err());
    }

    #[test]
    fn config_mismatch_is_a_checkpoint_error() {
        let m = model();
        let mut other = m.clone();
        other.config.d_mlp = 7;
        let bytes = encode_checkpoint(&Model {
            config: other.config,
            params: m.params,
        })
        .unwrap();
        assert!(matches!(
            decode_checkpoint::<f32>(&bytes, Path::new("mem")),
            Err(Error::Checkpoint(_))
        ));
    }
}
