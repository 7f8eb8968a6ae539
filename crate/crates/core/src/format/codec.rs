use crate::tensor::{Matrix, Precision, Scalar};

use super::FormatError;

const HEADER: usize = 20;

/// Frames `payload` with magic, version, length and a trailing CRC-32.
pub(super) fn frame(magic: &[u8; 8], version: u32, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + payload.len() + 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Validates the framing and returns the payload.
pub(super) fn unframe<'a>(
    bytes: &'a [u8],
    magic: &[u8; 8],
    version: u32,
) -> Result<&'a [u8], FormatError> {
    if bytes.len() < 8 || &bytes[..8] != magic {
        return Err(FormatError::BadMagic {
            expected: *magic,
            found: bytes[..bytes.len().min(8)].to_vec(),
        });
    }
    if bytes.len() < HEADER {
        return Err(FormatError::Truncated { needed: HEADER, have: bytes.len() });
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if found != version {
        return Err(FormatError::UnsupportedVersion { found, supported: version });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let needed = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(HEADER + 4))
        .unwrap_or(usize::MAX);
    if bytes.len() < needed {
        return Err(FormatError::Truncated { needed, have: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(FormatError::TrailingBytes(bytes.len() - needed));
    }
    let body_end = needed - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    Ok(&bytes[HEADER..body_end])
}

#[derive(Default)]
pub(super) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u32(&mut self, v: usize) {
        self.buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn bytes32(&mut self, b: &[u8]) {
        self.u32(b.len());
        self.buf.extend_from_slice(b);
    }
    pub fn tensor<T: Scalar>(&mut self, name: &str, m: &Matrix<T>) {
        self.buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        self.buf.extend_from_slice(name.as_bytes());
        self.u32(m.rows());
        self.u32(m.cols());
        self.buf.reserve(m.len() * T::BYTES);
        for &v in m.as_slice() {
            v.write_le(&mut self.buf);
        }
    }
}

pub(super) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(
            FormatError::Truncated { needed: self.pos.saturating_add(n), have: self.buf.len() },
        )?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }
    pub fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    pub fn u32(&mut self) -> Result<usize, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    pub fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn bytes32(&mut self) -> Result<&'a [u8], FormatError> {
        let n = self.u32()?;
        self.take(n)
    }

    pub fn precision<T: Scalar>(&mut self) -> Result<(), FormatError> {
        let b = self.u8()? as usize;
        let file = Precision::from_bytes(b).ok_or_else(|| FormatError::InvalidField {
            field: "scalar_bytes",
            detail: b.to_string(),
        })?;
        if file != T::PRECISION {
            return Err(FormatError::PrecisionMismatch { file, requested: T::PRECISION });
        }
        Ok(())
    }

    /// Reads one tensor record, checking it against the expected name and shape.
    pub fn tensor<T: Scalar>(
        &mut self,
        index: usize,
        name: &str,
        shape: (usize, usize),
    ) -> Result<Matrix<T>, FormatError> {
        let len = self.u16()? as usize;
        let found = String::from_utf8_lossy(self.take(len)?).into_owned();
        let rows = self.u32()?;
        let cols = self.u32()?;
        if found != name || (rows, cols) != shape {
            return Err(FormatError::TensorMismatch {
                index,
                expected: name.to_string(),
                expected_shape: shape,
                found,
                found_shape: (rows, cols),
            });
        }
        let raw = self.take(rows * cols * T::BYTES)?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        Ok(Matrix::from_vec(rows, cols, data).expect("shape checked"))
    }

    pub fn finish(self) -> Result<(), FormatError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::TrailingBytes(n)),
        }
    }
}
