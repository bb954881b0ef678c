//! Binary weights file.
//!
//! ```text
//! magic        8 bytes  "RFSCALIB"
//! version      u32 LE
//! layer count  u32 LE
//! per layer    u32 LE inputs, u32 LE outputs          (forward order)
//! per layer    f64 LE weights (row-major, outputs × inputs), f64 LE biases
//! input norm   f64 LE mean[inputs], std[inputs]
//! output norm  f64 LE mean[outputs], std[outputs]
//! ```

use std::path::Path;

use thiserror::Error;

use super::model::{CalibModel, Normalizer, FEATURES, OUTPUTS};
use super::network::{Linear, Network, ResidualBlock};
use crate::error::Result;

pub const MAGIC: [u8; 8] = *b"RFSCALIB";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ModelFormatError {
    #[error("not a calibration model file (bad magic bytes {found:02x?})")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported model format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("model file truncated: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("model file has trailing data: expected {expected} bytes, got {actual}")]
    TrailingBytes { expected: usize, actual: usize },
    #[error("invalid layer table: {0}")]
    BadDimensions(String),
    #[error("invalid model contents: {0}")]
    BadContents(String),
}

pub fn model_to_bytes(model: &CalibModel) -> Vec<u8> {
    let layers = model.network.layers();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for l in &layers {
        out.extend_from_slice(&(l.inputs as u32).to_le_bytes());
        out.extend_from_slice(&(l.outputs as u32).to_le_bytes());
    }
    let mut put = |values: &[f64]| {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for l in &layers {
        put(&l.weight);
        put(&l.bias);
    }
    for norm in [&model.input_norm, &model.output_norm] {
        put(&norm.mean);
        put(&norm.std);
    }
    out
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u32(&mut self) -> u32 {
        let v = u32::from_le_bytes(self.data[self.pos..self.pos + 4].try_into().expect("4 bytes"));
        self.pos += 4;
        v
    }

    fn f64s(&mut self, n: usize) -> Vec<f64> {
        let v = self.data[self.pos..self.pos + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        self.pos += 8 * n;
        v
    }
}

fn need(data: &[u8], expected: usize) -> Result<(), ModelFormatError> {
    if data.len() < expected {
        return Err(ModelFormatError::Truncated {
            expected,
            actual: data.len(),
        });
    }
    Ok(())
}

pub fn model_from_bytes(data: &[u8]) -> Result<CalibModel, ModelFormatError> {
    if data.len() >= MAGIC.len() && data[..MAGIC.len()] != MAGIC {
        return Err(ModelFormatError::BadMagic {
            found: data[..MAGIC.len()].to_vec(),
        });
    }
    need(data, 16)?;
    let mut r = Reader { data, pos: 8 };
    let version = r.u32();
    if version != FORMAT_VERSION {
        return Err(ModelFormatError::UnsupportedVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let layer_count = r.u32() as usize;
    if layer_count < 2 || layer_count % 2 != 0 || layer_count > 1 << 16 {
        return Err(ModelFormatError::BadDimensions(format!(
            "{layer_count} layers; expected input, pairs of block layers and output"
        )));
    }
    need(data, 16 + 8 * layer_count)?;
    let dims: Vec<(usize, usize)> = (0..layer_count)
        .map(|_| (r.u32() as usize, r.u32() as usize))
        .collect();

    let hidden = dims[0].1;
    let (first_in, last_out) = (dims[0].0, dims[layer_count - 1].1);
    if first_in != FEATURES || last_out != OUTPUTS {
        return Err(ModelFormatError::BadDimensions(format!(
            "network maps {first_in} → {last_out}, expected {FEATURES} → {OUTPUTS}"
        )));
    }
    if hidden == 0 || dims[1..layer_count - 1].iter().any(|&d| d != (hidden, hidden)) || dims[layer_count - 1].0 != hidden {
        return Err(ModelFormatError::BadDimensions(format!(
            "inconsistent hidden widths {dims:?}"
        )));
    }

    let params: usize = dims.iter().map(|(i, o)| i * o + o).sum();
    let expected = 16 + 8 * layer_count + 8 * (params + 2 * FEATURES + 2 * OUTPUTS);
    need(data, expected)?;
    if data.len() > expected {
        return Err(ModelFormatError::TrailingBytes {
            expected,
            actual: data.len(),
        });
    }

    let mut layers: Vec<Linear<f64>> = dims
        .iter()
        .map(|&(inputs, outputs)| Linear {
            inputs,
            outputs,
            weight: r.f64s(inputs * outputs),
            bias: r.f64s(outputs),
        })
        .collect();
    let input_norm = Normalizer {
        mean: r.f64s(FEATURES),
        std: r.f64s(FEATURES),
    };
    let output_norm = Normalizer {
        mean: r.f64s(OUTPUTS),
        std: r.f64s(OUTPUTS),
    };

    let output = layers.pop().expect("at least two layers");
    let mut rest = layers.into_iter();
    let input = rest.next().expect("at least two layers");
    let mut blocks = Vec::new();
    while let (Some(first), Some(second)) = (rest.next(), rest.next()) {
        blocks.push(ResidualBlock { first, second });
    }
    let model = CalibModel {
        network: Network { input, blocks, output },
        input_norm,
        output_norm,
    };
    if !model.is_finite() {
        return Err(ModelFormatError::BadContents(
            "non-finite parameters or nonpositive normalization scale".into(),
        ));
    }
    Ok(model)
}

pub fn save_model(model: &CalibModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<CalibModel> {
    let data = std::fs::read(path)?;
    Ok(model_from_bytes(&data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::{Architecture, CalibModel};

    fn model() -> CalibModel {
        let mut m = CalibModel::new(Architecture { hidden: 6, blocks: 2 }, 11);
        m.input_norm.mean = vec![25_000.0, 25_000.0, 50.0, 50.0];
        m.output_norm.std = vec![30.0, 40.0];
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = model_to_bytes(&m);
        assert_eq!(bytes.len(), 16 + 8 * 6 + 8 * (4 * 6 + 6 + 4 * (36 + 6) + 12 + 2 + 12));
        let back = model_from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        let f = [26_000.0, 24_000.0, 40.0, 61.0];
        assert_eq!(m.forward(f).unwrap().x.to_bits(), back.forward(f).unwrap().x.to_bits());
    }

    #[test]
    fn corruptions_have_distinct_errors() {
        let bytes = model_to_bytes(&model());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(model_from_bytes(&bad), Err(ModelFormatError::BadMagic { .. })));

        let mut bad = bytes.clone();
        bad[8] = 9;
        assert_eq!(
            model_from_bytes(&bad),
            Err(ModelFormatError::UnsupportedVersion { found: 9, expected: 1 })
        );

        let cut = &bytes[..bytes.len() - 5];
        assert_eq!(
            model_from_bytes(cut),
            Err(ModelFormatError::Truncated {
                expected: bytes.len(),
                actual: bytes.len() - 5
            })
        );
        assert!(matches!(model_from_bytes(&bytes[..10]), Err(ModelFormatError::Truncated { .. })));

        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(model_from_bytes(&long), Err(ModelFormatError::TrailingBytes { .. })));

        let mut bad = bytes.clone();
        bad[16..20].copy_from_slice(&5u32.to_le_bytes());
        assert!(matches!(model_from_bytes(&bad), Err(ModelFormatError::BadDimensions(_))));

        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 8..].copy_from_slice(&0.0f64.to_le_bytes());
        assert!(matches!(model_from_bytes(&bad), Err(ModelFormatError::BadContents(_))));
    }
}
