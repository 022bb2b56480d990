//! Little-endian binary reader/writer shared by the model and SNN file
//! formats.

use crate::error::{QanaError, Result};

#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn i32(&mut self, v: i32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn len_prefixed(&mut self, n: usize) {
        self.u64(n as u64);
    }

    pub fn str(&mut self, s: &str) {
        self.len_prefixed(s.len());
        self.bytes(s.as_bytes());
    }

    pub fn i8s(&mut self, v: &[i8]) {
        self.len_prefixed(v.len());
        self.buf.extend(v.iter().map(|&x| x as u8));
    }

    pub fn i32s(&mut self, v: &[i32]) {
        self.len_prefixed(v.len());
        for &x in v {
            self.i32(x);
        }
    }

    pub fn f32s(&mut self, v: &[f32]) {
        self.len_prefixed(v.len());
        for &x in v {
            self.bytes(&x.to_le_bytes());
        }
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.len_prefixed(v.len());
        for &x in v {
            self.f64(x);
        }
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn is_at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                QanaError::Corrupt(format!(
                    "unexpected end of data: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn arr<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.arr()?))
    }

    pub fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.arr()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.arr()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.arr()?))
    }

    /// Element count, checked against the bytes left so a corrupt length
    /// cannot trigger a huge allocation.
    pub fn len_prefixed(&mut self, elem_size: usize) -> Result<usize> {
        let n = self.u64()?;
        let left = (self.buf.len() - self.pos) as u64;
        if n.saturating_mul(elem_size as u64) > left {
            return Err(QanaError::Corrupt(format!("length {n} exceeds remaining {left} bytes")));
        }
        Ok(n as usize)
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.len_prefixed(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| QanaError::Corrupt("invalid utf-8 string".into()))
    }

    pub fn i8s(&mut self) -> Result<Vec<i8>> {
        let n = self.len_prefixed(1)?;
        Ok(self.take(n)?.iter().map(|&b| b as i8).collect())
    }

    pub fn i32s(&mut self) -> Result<Vec<i32>> {
        let n = self.len_prefixed(4)?;
        (0..n).map(|_| self.i32()).collect()
    }

    pub fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.len_prefixed(4)?;
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len_prefixed(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
}
