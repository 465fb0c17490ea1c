use std::path::Path;

use super::model::{CONV1_FILTERS, CONV2_FILTERS, KERNEL};
use super::{NfcModel, NnError, Tensor, FEATURE_LEN, FLAT_LEN, INPUT_CHANNELS};

pub const MAGIC: &[u8; 4] = b"NFCM";
pub const VERSION: u32 = 1;

const KIND_CONV: u8 = 1;
const KIND_MAXPOOL: u8 = 2;
const KIND_FLATTEN_CONCAT: u8 = 3;
const KIND_DENSE_RELU: u8 = 4;
const KIND_DENSE_SIGMOID: u8 = 5;

/// Layer headers of the fixed architecture, in file order.
fn layout(model: &NfcModel<f32>) -> Vec<(u8, [u32; 4])> {
    let k = KERNEL as u32;
    let mut out = vec![
        (KIND_CONV, [CONV1_FILTERS as u32, INPUT_CHANNELS as u32, k, k]),
        (KIND_MAXPOOL, [2, 2, 0, 0]),
        (KIND_CONV, [CONV2_FILTERS as u32, CONV1_FILTERS as u32, k, k]),
        (KIND_MAXPOOL, [2, 2, 0, 0]),
        (KIND_FLATTEN_CONCAT, [FLAT_LEN as u32, FEATURE_LEN as u32, 0, 0]),
    ];
    let last = model.dense.len() - 1;
    for (l, d) in model.dense.iter().enumerate() {
        let kind = if l == last { KIND_DENSE_SIGMOID } else { KIND_DENSE_RELU };
        out.push((kind, [d.nout() as u32, d.nin() as u32, 0, 0]));
    }
    out
}

/// Parameter tensors (weights, biases) carried by each layer, in file order.
fn layer_params(model: &mut NfcModel<f32>) -> Vec<Option<(&mut Tensor<f32>, &mut Tensor<f32>)>> {
    let mut out = Vec::new();
    let NfcModel { conv1, conv2, dense } = model;
    out.push(Some((&mut conv1.w, &mut conv1.b)));
    out.push(None);
    out.push(Some((&mut conv2.w, &mut conv2.b)));
    out.push(None);
    out.push(None);
    for d in dense.iter_mut() {
        out.push(Some((&mut d.w, &mut d.b)));
    }
    out
}

pub fn save_model(model: &NfcModel<f32>) -> Vec<u8> {
    let heads = layout(model);
    let mut out = Vec::with_capacity(16 + 4 * model.param_count() + 21 * heads.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(heads.len() as u32).to_le_bytes());
    let mut m = model.clone();
    for ((kind, dims), params) in heads.into_iter().zip(layer_params(&mut m)) {
        out.push(kind);
        for d in dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        if let Some((w, b)) = params {
            for v in w.data().iter().chain(b.data()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.at.checked_add(n).ok_or(NnError::TruncatedFile)?;
        let s = self.bytes.get(self.at..end).ok_or(NnError::TruncatedFile)?;
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn load_model(bytes: &[u8]) -> Result<NfcModel<f32>, NnError> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(4)? != MAGIC {
        return Err(NnError::BadMagic);
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(NnError::VersionMismatch(version));
    }
    let mut model = NfcModel::<f32>::zeros();
    let expected = layout(&model);
    let count = c.u32()? as usize;
    if count != expected.len() {
        return Err(NnError::Malformed(format!(
            "expected {} layers, found {count}",
            expected.len()
        )));
    }
    for (i, ((kind, dims), params)) in expected.into_iter().zip(layer_params(&mut model)).enumerate() {
        let k = c.take(1)?[0];
        let mut d = [0u32; 4];
        for v in &mut d {
            *v = c.u32()?;
        }
        if (k, d) != (kind, dims) {
            return Err(NnError::Malformed(format!(
                "layer {i}: expected kind {kind} dims {dims:?}, found kind {k} dims {d:?}"
            )));
        }
        if let Some((w, b)) = params {
            for t in [w, b] {
                let raw = c.take(4 * t.len())?;
                for (v, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                    *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
                }
            }
        }
    }
    if c.at != bytes.len() {
        return Err(NnError::Malformed(format!("{} trailing bytes", bytes.len() - c.at)));
    }
    Ok(model)
}

pub fn write_model(path: &Path, model: &NfcModel<f32>) -> Result<(), NnError> {
    std::fs::write(path, save_model(model))?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<NfcModel<f32>, NnError> {
    load_model(&std::fs::read(path)?)
}
