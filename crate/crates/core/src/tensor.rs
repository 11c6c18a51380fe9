//! Dense row-major tensors over `f64`, `i64`, and `bool`.

use crate::error::{CoreError, Result};
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DType {
    F64,
    I64,
    Bool,
}

impl std::fmt::Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DType::F64 => write!(f, "f64"),
            DType::I64 => write!(f, "i64"),
            DType::Bool => write!(f, "bool"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Buffer {
    F64(Vec<f64>),
    I64(Vec<i64>),
    Bool(Vec<bool>),
}

impl Buffer {
    pub fn len(&self) -> usize {
        match self {
            Buffer::F64(v) => v.len(),
            Buffer::I64(v) => v.len(),
            Buffer::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            Buffer::F64(_) => DType::F64,
            Buffer::I64(_) => DType::I64,
            Buffer::Bool(_) => DType::Bool,
        }
    }
}

/// A dense tensor. Data is stored contiguously in row-major order and the
/// element count always equals the product of the extents.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Buffer,
}

pub fn num_elements(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Buffer) -> Result<Tensor> {
        if num_elements(&shape) != data.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "buffer of {} elements does not fill shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        Tensor::new(shape, Buffer::F64(data))
    }

    pub fn from_i64(shape: Vec<usize>, data: Vec<i64>) -> Result<Tensor> {
        Tensor::new(shape, Buffer::I64(data))
    }

    pub fn from_bool(shape: Vec<usize>, data: Vec<bool>) -> Result<Tensor> {
        Tensor::new(shape, Buffer::Bool(data))
    }

    pub fn scalar_f64(v: f64) -> Tensor {
        Tensor { shape: vec![], data: Buffer::F64(vec![v]) }
    }

    pub fn scalar_i64(v: i64) -> Tensor {
        Tensor { shape: vec![], data: Buffer::I64(vec![v]) }
    }

    pub fn scalar_bool(v: bool) -> Tensor {
        Tensor { shape: vec![], data: Buffer::Bool(vec![v]) }
    }

    pub fn zeros(dtype: DType, shape: Vec<usize>) -> Tensor {
        let n = num_elements(&shape);
        let data = match dtype {
            DType::F64 => Buffer::F64(vec![0.0; n]),
            DType::I64 => Buffer::I64(vec![0; n]),
            DType::Bool => Buffer::Bool(vec![false; n]),
        };
        Tensor { shape, data }
    }

    pub fn full_f64(shape: Vec<usize>, v: f64) -> Tensor {
        let n = num_elements(&shape);
        Tensor { shape, data: Buffer::F64(vec![v; n]) }
    }

    /// Uniform draws from `[0, 1)`.
    pub fn rand_uniform(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor {
        let n = num_elements(&shape);
        let data = (0..n).map(|_| rng.gen::<f64>()).collect();
        Tensor { shape, data: Buffer::F64(data) }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn buffer(&self) -> &Buffer {
        &self.data
    }

    pub fn as_f64(&self) -> Result<&[f64]> {
        match &self.data {
            Buffer::F64(v) => Ok(v),
            other => Err(CoreError::DTypeMismatch(format!(
                "expected f64 tensor, found {}",
                other.dtype()
            ))),
        }
    }

    pub fn as_i64(&self) -> Result<&[i64]> {
        match &self.data {
            Buffer::I64(v) => Ok(v),
            other => Err(CoreError::DTypeMismatch(format!(
                "expected i64 tensor, found {}",
                other.dtype()
            ))),
        }
    }

    pub fn as_bool(&self) -> Result<&[bool]> {
        match &self.data {
            Buffer::Bool(v) => Ok(v),
            other => Err(CoreError::DTypeMismatch(format!(
                "expected bool tensor, found {}",
                other.dtype()
            ))),
        }
    }

    pub fn scalar_as_f64(&self) -> Result<f64> {
        if !self.shape.is_empty() {
            return Err(CoreError::ShapeMismatch(format!(
                "expected scalar, found shape {:?}",
                self.shape
            )));
        }
        Ok(self.as_f64()?[0])
    }

    pub fn scalar_as_i64(&self) -> Result<i64> {
        if !self.shape.is_empty() {
            return Err(CoreError::ShapeMismatch(format!(
                "expected scalar, found shape {:?}",
                self.shape
            )));
        }
        Ok(self.as_i64()?[0])
    }

    /// Same buffer under a different shape with identical element count.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        if num_elements(&shape) != self.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "cannot reshape {:?} ({} elements) into {:?}",
                self.shape,
                self.len(),
                shape
            )));
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }

    /// Stack tensors of identical shape/dtype along a fresh leading axis.
    pub fn stack(rows: &[&Tensor]) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(CoreError::Invalid("cannot stack zero tensors".into()));
        }
        let shape0 = rows[0].shape.clone();
        let dtype = rows[0].dtype();
        for t in rows {
            if t.shape != shape0 || t.dtype() != dtype {
                return Err(CoreError::ShapeMismatch(
                    "stack requires identical shapes and dtypes".into(),
                ));
            }
        }
        let mut shape = vec![rows.len()];
        shape.extend_from_slice(&shape0);
        let data = match dtype {
            DType::F64 => {
                let mut out = Vec::with_capacity(rows.len() * rows[0].len());
                for t in rows {
                    out.extend_from_slice(t.as_f64()?);
                }
                Buffer::F64(out)
            }
            DType::I64 => {
                let mut out = Vec::with_capacity(rows.len() * rows[0].len());
                for t in rows {
                    out.extend_from_slice(t.as_i64()?);
                }
                Buffer::I64(out)
            }
            DType::Bool => {
                let mut out = Vec::with_capacity(rows.len() * rows[0].len());
                for t in rows {
                    out.extend_from_slice(t.as_bool()?);
                }
                Buffer::Bool(out)
            }
        };
        Ok(Tensor { shape, data })
    }

    /// Extract row `i` along the leading axis.
    pub fn row(&self, i: usize) -> Result<Tensor> {
        if self.shape.is_empty() {
            return Err(CoreError::ShapeMismatch("cannot slice a scalar".into()));
        }
        if i >= self.shape[0] {
            return Err(CoreError::IndexOutOfBounds(format!(
                "row {} of leading extent {}",
                i, self.shape[0]
            )));
        }
        let row_len: usize = self.shape[1..].iter().product();
        let start = i * row_len;
        let shape = self.shape[1..].to_vec();
        let data = match &self.data {
            Buffer::F64(v) => Buffer::F64(v[start..start + row_len].to_vec()),
            Buffer::I64(v) => Buffer::I64(v[start..start + row_len].to_vec()),
            Buffer::Bool(v) => Buffer::Bool(v[start..start + row_len].to_vec()),
        };
        Ok(Tensor { shape, data })
    }

    /// Max absolute difference against another f64 tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(CoreError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let a = self.as_f64()?;
        let b = other.as_f64()?;
        Ok(a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max))
    }
}

/// Standard trailing-dimension broadcast of two shapes.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let ea = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let eb = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if ea == eb {
            ea
        } else if ea == 1 {
            eb
        } else if eb == 1 {
            ea
        } else {
            return Err(CoreError::ShapeMismatch(format!(
                "cannot broadcast {:?} with {:?}",
                a, b
            )));
        };
    }
    Ok(out)
}

/// Iterator support: maps a flat output index to the flat index of an input
/// broadcast into the output shape (stride zero on broadcast dimensions).
pub(crate) fn broadcast_offsets(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let out_strides = strides(out_shape);
    let in_strides = strides(in_shape);
    let pad = out_shape.len() - in_shape.len();
    let n = num_elements(out_shape);
    let mut offsets = vec![0usize; n];
    if n == 0 {
        return offsets;
    }
    // Effective stride per output dim, zero where the input broadcasts.
    let eff: Vec<usize> = (0..out_shape.len())
        .map(|d| {
            if d < pad || in_shape[d - pad] == 1 {
                0
            } else {
                in_strides[d - pad]
            }
        })
        .collect();
    for (flat, slot) in offsets.iter_mut().enumerate() {
        let mut rem = flat;
        let mut off = 0;
        for d in 0..out_shape.len() {
            let idx = rem / out_strides[d];
            rem %= out_strides[d];
            off += idx * eff[d];
        }
        *slot = off;
    }
    offsets
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shapes(&[2, 3], &[3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shapes(&[2, 1], &[1, 4]).unwrap(), vec![2, 4]);
        assert_eq!(broadcast_shapes(&[], &[5]).unwrap(), vec![5]);
        assert!(broadcast_shapes(&[2], &[3]).is_err());
    }

    #[test]
    fn stack_and_row_roundtrip() {
        let a = Tensor::from_f64(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_f64(vec![2], vec![3.0, 4.0]).unwrap();
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.row(1).unwrap(), b);
    }

    #[test]
    fn buffer_must_fill_shape() {
        assert!(Tensor::from_f64(vec![3], vec![1.0]).is_err());
    }
}
