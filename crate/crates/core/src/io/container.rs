//! GDHM tensor container: magic `GDHM`, a little-endian `u32` version, then
//! named chunks until end of file. Each chunk is a `u32` name length, the
//! UTF-8 name, a `u8` element tag (0 f32, 1 i32, 2 f64), a `u8` rank, `u32`
//! dimensions and the raw little-endian payload.

use std::path::Path;

use crate::error::ContainerError;
use crate::real::{ElementType, Real};

pub const MAGIC: [u8; 4] = *b"GDHM";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I32(Vec<i32>),
    F64(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn element(&self) -> ElementType {
        match self.data {
            TensorData::F32(_) => ElementType::F32,
            TensorData::I32(_) => ElementType::I32,
            TensorData::F64(_) => ElementType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => v.len(),
            TensorData::I32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Real tensor stored in the native precision of `T`.
    pub fn real<T: Real>(dims: Vec<usize>, values: &[T]) -> Self {
        let data = match T::ELEMENT {
            ElementType::F32 => TensorData::F32(values.iter().map(|v| v.to_f64_lossy() as f32).collect()),
            _ => TensorData::F64(values.iter().map(|v| v.to_f64_lossy()).collect()),
        };
        Self { dims, data }
    }

    pub fn int(dims: Vec<usize>, values: Vec<i32>) -> Self {
        Self { dims, data: TensorData::I32(values) }
    }

    /// Values converted to `T`; `None` for integer tensors.
    pub fn to_real<T: Real>(&self) -> Option<Vec<T>> {
        match &self.data {
            TensorData::F32(v) => Some(v.iter().map(|x| T::lit(*x as f64)).collect()),
            TensorData::F64(v) => Some(v.iter().map(|x| T::lit(*x)).collect()),
            TensorData::I32(_) => None,
        }
    }

    pub fn as_int(&self) -> Option<&[i32]> {
        match &self.data {
            TensorData::I32(v) => Some(v),
            _ => None,
        }
    }
}

/// Ordered named chunks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub chunks: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, chunk: &str) -> Result<&'a [u8], ContainerError> {
        if self.bytes.len() - self.pos < n {
            return Err(ContainerError::Truncated(chunk.to_string()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, chunk: &str) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4, chunk)?.try_into().unwrap()))
    }
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, tensor: Tensor) -> Result<(), ContainerError> {
        if self.get(name).is_some() {
            return Err(ContainerError::Duplicate(name.to_string()));
        }
        self.chunks.push((name.to_string(), tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.chunks.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for (name, t) in &self.chunks {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.element() as u8);
            out.push(t.dims.len() as u8);
            for d in &t.dims {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "<header>")?.try_into().unwrap();
        if magic != MAGIC {
            return Err(ContainerError::BadMagic(magic));
        }
        let version = r.u32("<header>")?;
        if version != VERSION {
            return Err(ContainerError::Version(version));
        }
        let mut c = Container::new();
        while r.pos < bytes.len() {
            let len = r.u32("<chunk name>")? as usize;
            let name = std::str::from_utf8(r.take(len, "<chunk name>")?).map_err(|_| ContainerError::Name)?.to_string();
            let tag = r.take(1, &name)?[0];
            let elem = ElementType::from_tag(tag).ok_or(ContainerError::ElementTag(tag))?;
            let ndim = r.take(1, &name)?[0] as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32(&name)? as usize);
            }
            let count: usize = dims.iter().product();
            let raw = r.take(count.checked_mul(elem.size()).ok_or_else(|| ContainerError::Truncated(name.clone()))?, &name)?;
            let data = match elem {
                ElementType::F32 => TensorData::F32(raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect()),
                ElementType::I32 => TensorData::I32(raw.chunks_exact(4).map(|b| i32::from_le_bytes(b.try_into().unwrap())).collect()),
                ElementType::F64 => TensorData::F64(raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect()),
            };
            c.push(&name, Tensor { dims, data })?;
        }
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> Result<(), ContainerError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ContainerError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Byte offsets at which each chunk starts, then the total length.
    pub fn chunk_boundaries(&self) -> Vec<usize> {
        let mut out = vec![8];
        let mut pos = 8;
        for (name, t) in &self.chunks {
            pos += 4 + name.len() + 2 + 4 * t.dims.len() + t.len() * t.element().size();
            out.push(pos);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bytes() {
        let mut c = Container::new();
        c.push("a", Tensor::real(vec![2, 2], &[1.0f32, -2.5, 3.0, f32::MIN_POSITIVE])).unwrap();
        c.push("b", Tensor::int(vec![3], vec![-1, 0, 7])).unwrap();
        c.push("c", Tensor::real(vec![1], &[0.1f64])).unwrap();
        let bytes = c.to_bytes();
        let d = Container::from_bytes(&bytes).unwrap();
        assert_eq!(c, d);
        assert_eq!(d.to_bytes(), bytes);
        assert_eq!(*c.chunk_boundaries().last().unwrap(), bytes.len());
    }

    #[test]
    fn header_errors() {
        assert!(matches!(Container::from_bytes(b"GDHX\x01\0\0\0"), Err(ContainerError::BadMagic(_))));
        assert!(matches!(Container::from_bytes(b"GDHM\x02\0\0\0"), Err(ContainerError::Version(2))));
        assert!(matches!(Container::from_bytes(b"GD"), Err(ContainerError::Truncated(_))));
        let mut c = Container::new();
        c.push("x", Tensor::int(vec![1], vec![1])).unwrap();
        assert!(matches!(c.push("x", Tensor::int(vec![1], vec![1])), Err(ContainerError::Duplicate(_))));
        let bytes = c.to_bytes();
        match Container::from_bytes(&bytes[..bytes.len() - 1]) {
            Err(ContainerError::Truncated(name)) => assert_eq!(name, "x"),
            other => panic!("{other:?}"),
        }
    }
}
