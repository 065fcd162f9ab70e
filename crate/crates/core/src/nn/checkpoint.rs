//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"SDRM"  magic
//! u32      version (= 1)
//! repeated until EOF:
//!   u32 rows, u32 cols, rows*cols f64 payload (row-major)
//! ```
//!
//! Tensors appear in [`Parameters`] order. Biases are stored as `1 × n`.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::params::Parameters;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SDRM";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

pub fn encode(params: &(impl Parameters + ?Sized)) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + params.parameter_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for ((rows, cols), data) in params.shapes().into_iter().zip(params.tensors()) {
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Tensor>> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("missing SDRM magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut pos = 8;
    let mut tensors = Vec::new();
    while pos < bytes.len() {
        if bytes.len() - pos < 8 {
            return Err(Error::Checkpoint(format!("truncated header at byte {pos}")));
        }
        let rows = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        pos += 8;
        let n = rows * cols;
        if bytes.len() - pos < n * 8 {
            return Err(Error::Checkpoint(format!(
                "tensor {} truncated: need {} bytes",
                tensors.len(),
                n * 8
            )));
        }
        let data = bytes[pos..pos + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += n * 8;
        tensors.push(Tensor { rows, cols, data });
    }
    Ok(tensors)
}

/// Overwrite `params` with the decoded tensors; shapes must match exactly.
pub fn decode_into(bytes: &[u8], params: &mut (impl Parameters + ?Sized)) -> Result<()> {
    let tensors = decode(bytes)?;
    let shapes = params.shapes();
    if tensors.len() != shapes.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model has {}",
            tensors.len(),
            shapes.len()
        )));
    }
    for (i, (t, &(rows, cols))) in tensors.iter().zip(&shapes).enumerate() {
        if (t.rows, t.cols) != (rows, cols) {
            return Err(Error::Checkpoint(format!(
                "tensor {i} is {}x{}, model expects {rows}x{cols}",
                t.rows, t.cols
            )));
        }
    }
    for (dst, t) in params.tensors_mut().into_iter().zip(tensors) {
        dst.copy_from_slice(&t.data);
    }
    Ok(())
}

pub fn save(path: &Path, params: &(impl Parameters + ?Sized)) -> Result<()> {
    let bytes = encode(params);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_into(path: &Path, params: &mut (impl Parameters + ?Sized)) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_into(&bytes, params)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of the encoded container, i.e. of the file `save` would write.
pub fn params_sha256(params: &(impl Parameters + ?Sized)) -> String {
    sha256_hex(&encode(params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, MlpNet};
    use rand::SeedableRng;

    #[test]
    fn header_layout() {
        let bytes = encode(&vec![1.5f64, -2.0]);
        assert_eq!(&bytes[..4], b"SDRM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(bytes[16..24].try_into().unwrap()), 1.5);
        assert_eq!(bytes.len(), 8 + 8 + 16);
    }

    #[test]
    fn mlp_round_trip_and_shape_guard() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let net = MlpNet::new(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let bytes = encode(&net);
        let mut other =
            MlpNet::new(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        decode_into(&bytes, &mut other).unwrap();
        assert_eq!(net, other);

        let mut wrong =
            MlpNet::new(&[3, 4, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        assert!(matches!(decode_into(&bytes, &mut wrong), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode(b"NOPE\x01\0\0\0").is_err());
        let mut bytes = encode(&vec![1.0, 2.0, 3.0]);
        bytes.truncate(bytes.len() - 3);
        assert!(decode(&bytes).is_err());
    }
}
