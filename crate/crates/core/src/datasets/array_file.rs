//! Self-describing binary array container (`.milt`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size        field
//! 0       4           magic "MILT"
//! 4       1           version (1)
//! 5       1           dtype code: 1 = float32, 2 = int64, 3 = uint8 (bool)
//! 6       1           ndim
//! 7       8 * ndim    shape, u64 each
//! ...     elem * prod payload, row-major
//! ```

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{MilError, Result};

pub const MAGIC: &[u8; 4] = b"MILT";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 1,
    I64 = 2,
    U8 = 3,
}

impl DType {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::I64),
            3 => Some(DType::U8),
            _ => None,
        }
    }

    pub fn element_size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::I64 => 8,
            DType::U8 => 1,
        }
    }
}

/// An n-dimensional array of one of the supported element types.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(ArrayD<f32>),
    I64(ArrayD<i64>),
    U8(ArrayD<u8>),
}

impl ArrayData {
    pub fn dtype(&self) -> DType {
        match self {
            ArrayData::F32(_) => DType::F32,
            ArrayData::I64(_) => DType::I64,
            ArrayData::U8(_) => DType::U8,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            ArrayData::F32(a) => a.shape(),
            ArrayData::I64(a) => a.shape(),
            ArrayData::U8(a) => a.shape(),
        }
    }

    pub fn into_f32(self) -> Option<ArrayD<f32>> {
        match self {
            ArrayData::F32(a) => Some(a),
            _ => None,
        }
    }

    pub fn into_i64(self) -> Option<ArrayD<i64>> {
        match self {
            ArrayData::I64(a) => Some(a),
            _ => None,
        }
    }

    pub fn into_u8(self) -> Option<ArrayD<u8>> {
        match self {
            ArrayData::U8(a) => Some(a),
            _ => None,
        }
    }
}

impl From<ArrayD<f32>> for ArrayData {
    fn from(a: ArrayD<f32>) -> Self {
        ArrayData::F32(a)
    }
}

impl From<ArrayD<i64>> for ArrayData {
    fn from(a: ArrayD<i64>) -> Self {
        ArrayData::I64(a)
    }
}

impl From<ArrayD<u8>> for ArrayData {
    fn from(a: ArrayD<u8>) -> Self {
        ArrayData::U8(a)
    }
}

pub fn header_len(ndim: usize) -> usize {
    7 + 8 * ndim
}

pub fn encode(a: &ArrayData) -> Vec<u8> {
    let shape = a.shape();
    assert!(shape.len() <= u8::MAX as usize, "too many dimensions");
    let count: usize = shape.iter().product();
    let mut out = Vec::with_capacity(header_len(shape.len()) + count * a.dtype().element_size());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(a.dtype() as u8);
    out.push(shape.len() as u8);
    for &dim in shape {
        out.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    // `iter` walks logical (row-major) order regardless of memory layout.
    match a {
        ArrayData::F32(x) => x
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        ArrayData::I64(x) => x
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        ArrayData::U8(x) => out.extend(x.iter().copied()),
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ArrayData> {
    if bytes.len() < 7 || &bytes[..4] != MAGIC {
        return Err(MilError::UnrecognizedArrayFile("bad magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(MilError::UnrecognizedArrayFile(format!(
            "unsupported version {}",
            bytes[4]
        )));
    }
    let dtype = DType::from_code(bytes[5]).ok_or_else(|| {
        MilError::UnrecognizedArrayFile(format!("unknown dtype code {}", bytes[5]))
    })?;
    let ndim = bytes[6] as usize;
    let hlen = header_len(ndim);
    if bytes.len() < hlen {
        return Err(MilError::CorruptArrayFile("truncated header".into()));
    }
    let mut shape = Vec::with_capacity(ndim);
    for chunk in bytes[7..hlen].chunks_exact(8) {
        let dim = u64::from_le_bytes(chunk.try_into().unwrap());
        shape.push(
            usize::try_from(dim)
                .map_err(|_| MilError::CorruptArrayFile("dimension overflow".into()))?,
        );
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| MilError::CorruptArrayFile("shape overflow".into()))?;
    let payload = &bytes[hlen..];
    let expected = count
        .checked_mul(dtype.element_size())
        .ok_or_else(|| MilError::CorruptArrayFile("shape overflow".into()))?;
    if payload.len() != expected {
        return Err(MilError::CorruptArrayFile(format!(
            "payload is {} bytes, shape requires {expected}",
            payload.len()
        )));
    }
    let shape = IxDyn(&shape);
    let data = match dtype {
        DType::F32 => {
            let v = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            ArrayData::F32(ArrayD::from_shape_vec(shape, v).unwrap())
        }
        DType::I64 => {
            let v = payload
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            ArrayData::I64(ArrayD::from_shape_vec(shape, v).unwrap())
        }
        DType::U8 => ArrayData::U8(ArrayD::from_shape_vec(shape, payload.to_vec()).unwrap()),
    };
    Ok(data)
}

pub fn write_array(a: &ArrayData, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(a)).map_err(|e| MilError::io(path, e))
}

pub fn read_array(path: impl AsRef<Path>) -> Result<ArrayData> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| MilError::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        MilError::UnrecognizedArrayFile(m) => {
            MilError::UnrecognizedArrayFile(format!("{}: {m}", path.display()))
        }
        MilError::CorruptArrayFile(m) => {
            MilError::CorruptArrayFile(format!("{}: {m}", path.display()))
        }
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr0, array, Array2};
    use proptest::prelude::*;

    #[test]
    fn one_by_two_float_matrix_layout() {
        let a = ArrayData::F32(array![[1.0f32, 2.0]].into_dyn());
        let bytes = encode(&a);
        assert_eq!(header_len(2), 23);
        assert_eq!(bytes.len(), 23 + 8);
        assert_eq!(&bytes[..7], &[b'M', b'I', b'L', b'T', 1, 1, 2]);
        assert_eq!(&bytes[7..15], &1u64.to_le_bytes());
        assert_eq!(&bytes[15..23], &2u64.to_le_bytes());
        assert_eq!(&bytes[23..27], &1.0f32.to_le_bytes());
        assert_eq!(decode(&bytes).unwrap(), a);
    }

    #[test]
    fn three_by_four_payload() {
        let a = ArrayData::F32(Array2::<f32>::zeros((3, 4)).into_dyn());
        assert_eq!(encode(&a).len() - header_len(2), 48);
    }

    #[test]
    fn scalar_round_trip() {
        let a = ArrayData::F32(arr0(1.0f32).into_dyn());
        let bytes = encode(&a);
        assert_eq!(bytes.len(), 7 + 4);
        assert_eq!(decode(&bytes).unwrap(), a);
    }

    #[test]
    fn rejects_bad_headers() {
        let good = encode(&ArrayData::I64(array![1i64, 2, 3].into_dyn()));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode(&bad)
            .unwrap_err()
            .to_string()
            .starts_with("unrecognized array file"));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(decode(&bad)
            .unwrap_err()
            .to_string()
            .starts_with("unrecognized array file"));
        let mut bad = good.clone();
        bad[5] = 9;
        assert!(decode(&bad)
            .unwrap_err()
            .to_string()
            .starts_with("unrecognized array file"));
        let truncated = &good[..good.len() - 1];
        assert!(decode(truncated)
            .unwrap_err()
            .to_string()
            .starts_with("corrupt array file"));
        assert!(decode(&good[..10])
            .unwrap_err()
            .to_string()
            .starts_with("corrupt array file"));
    }

    #[test]
    fn transposed_views_are_written_row_major() {
        let a = array![[1i64, 2], [3, 4]];
        let t = a.t().to_owned();
        let from_view = encode(&ArrayData::I64(a.t().into_owned().into_dyn()));
        assert_eq!(from_view, encode(&ArrayData::I64(t.into_dyn())));
    }

    proptest! {
        #[test]
        fn f32_round_trip_is_bit_exact(bits in proptest::collection::vec(any::<u32>(), 0..64), cols in 1usize..5) {
            let rows = bits.len() / cols;
            let v: Vec<f32> = bits[..rows * cols].iter().map(|&b| f32::from_bits(b)).collect();
            let a = Array2::from_shape_vec((rows, cols), v).unwrap().into_dyn();
            let back = decode(&encode(&ArrayData::F32(a.clone()))).unwrap().into_f32().unwrap();
            prop_assert_eq!(back.shape(), a.shape());
            prop_assert!(back.iter().zip(a.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }

        #[test]
        fn i64_round_trip(v in proptest::collection::vec(any::<i64>(), 0..32)) {
            let a = ArrayData::I64(ndarray::Array1::from(v).into_dyn());
            prop_assert_eq!(decode(&encode(&a)).unwrap(), a);
        }
    }
}
