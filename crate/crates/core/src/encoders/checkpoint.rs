//! Versioned binary container for trained encoders.
//!
//! Layout: `b"DSE1"`, `u32` LE header length, UTF-8 JSON header (architecture,
//! normalization box, tensor names and shapes), then every tensor as LE `f32`
//! in header order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dse::{DseArch, DseModel, Linear, ResBlock};
use crate::error::{Error, Result};
use crate::params::PhiBox;

const MAGIC: &[u8; 4] = b"DSE1";

#[derive(Serialize, Deserialize)]
struct Header {
    arch: DseArch,
    phi_box: PhiBox,
    tensors: Vec<TensorInfo>,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

fn tensors(model: &DseModel) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mat = |name: String, a: &Array2<f64>| (name, a.shape().to_vec(), a.iter().copied().collect());
    let vec = |name: String, a: &Array1<f64>| (name, a.shape().to_vec(), a.to_vec());
    let mut out = vec![mat("stem.w".into(), &model.stem.w), vec("stem.b".into(), &model.stem.b)];
    for (i, b) in model.blocks.iter().enumerate() {
        out.push(mat(format!("block{i}.w"), &b.lin.w));
        out.push(vec(format!("block{i}.b"), &b.lin.b));
        out.push(vec(format!("block{i}.gamma"), &b.gamma));
        out.push(vec(format!("block{i}.beta"), &b.beta));
        out.push(vec(format!("block{i}.running_mean"), &b.running_mean));
        out.push(vec(format!("block{i}.running_var"), &b.running_var));
    }
    out.push(mat("head.w".into(), &model.head.w));
    out.push(vec("head.b".into(), &model.head.b));
    out
}

pub fn to_bytes(model: &DseModel) -> Result<Vec<u8>> {
    let ts = tensors(model);
    let header = Header {
        arch: model.arch.clone(),
        phi_box: model.phi_box.clone(),
        tensors: ts
            .iter()
            .map(|(name, shape, _)| TensorInfo {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + model.param_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, data) in &ts {
        for &v in data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<DseModel> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated checkpoint".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)
        .map_err(|_| Error::Format("truncated checkpoint".into()))?;
    let len = u32::from_le_bytes(len) as usize;
    if r.len() < len {
        return Err(Error::Format("truncated checkpoint header".into()));
    }
    let header: Header = serde_json::from_slice(&r[..len])?;
    r = &r[len..];

    let template = DseModel::new(header.arch.clone(), header.phi_box.clone(), 0);
    let expected: Vec<TensorInfo> = tensors(&template)
        .into_iter()
        .map(|(name, shape, _)| TensorInfo { name, shape })
        .collect();
    if expected != header.tensors {
        return Err(Error::Format("tensor list does not match architecture".into()));
    }

    let mut next = |n: usize| -> Result<Vec<f64>> {
        if r.len() < 4 * n {
            return Err(Error::Format("truncated checkpoint tensors".into()));
        }
        let (head, tail) = r.split_at(4 * n);
        r = tail;
        Ok(head
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    };
    let h = header.arch.hidden;
    let shape_err = |e: ndarray::ShapeError| Error::Format(e.to_string());
    let input = header.arch.input_dim();
    let stem_w = Array2::from_shape_vec((h, input), next(h * input)?).map_err(shape_err)?;
    let stem_b = Array1::from(next(h)?);
    let mut blocks = Vec::with_capacity(header.arch.blocks);
    for _ in 0..header.arch.blocks {
        let w = Array2::from_shape_vec((h, h), next(h * h)?).map_err(shape_err)?;
        blocks.push(ResBlock {
            lin: Linear { w, b: Array1::from(next(h)?) },
            gamma: Array1::from(next(h)?),
            beta: Array1::from(next(h)?),
            running_mean: Array1::from(next(h)?),
            running_var: Array1::from(next(h)?),
        });
    }
    let out = header.arch.output_dim();
    let head_w = Array2::from_shape_vec((out, h), next(out * h)?).map_err(shape_err)?;
    let head_b = Array1::from(next(out)?);
    if !r.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes in checkpoint", r.len())));
    }
    let model = DseModel {
        arch: header.arch,
        phi_box: header.phi_box,
        stem: Linear { w: stem_w, b: stem_b },
        blocks,
        head: Linear { w: head_w, b: head_b },
    };
    if !model.is_finite() {
        return Err(Error::NonFinite("checkpoint weights"));
    }
    Ok(model)
}

pub fn save(model: &DseModel, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(model)?)?;
    f.sync_all()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<DseModel> {
    from_bytes(&std::fs::read(path)?)
}

/// Hex SHA-256 of the serialized checkpoint.
pub fn fingerprint(model: &DseModel) -> Result<String> {
    let digest = Sha256::digest(to_bytes(model)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Model with every weight rounded through `f32`, i.e. exactly what a
/// save/load cycle produces.
pub fn quantized(model: &DseModel) -> Result<DseModel> {
    from_bytes(&to_bytes(model)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phosphene::ArraySpec;

    fn tiny() -> DseModel {
        let arch = DseArch {
            target_height: 4,
            target_width: 4,
            array: ArraySpec { rows: 2, cols: 3, pitch_um: 400.0 },
            hidden: 6,
            blocks: 2,
            ..DseArch::default()
        };
        DseModel::new(arch, PhiBox::default(), 9)
    }

    #[test]
    fn roundtrip_is_exact_after_quantization() {
        let q = quantized(&tiny()).unwrap();
        let bytes = to_bytes(&q).unwrap();
        assert_eq!(&bytes[..4], b"DSE1");
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, q);
        assert_eq!(fingerprint(&back).unwrap(), fingerprint(&q).unwrap());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = to_bytes(&tiny()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 4]);
        assert!(from_bytes(&extra).is_err());
    }
}
