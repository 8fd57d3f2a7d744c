//! Length-prefixed binary frames shared by the worker and QSM protocols.
//!
//! A frame is `u32 length | u8 opcode | payload`, where `length` counts the
//! opcode byte plus the payload. All integers are little-endian; reals are
//! IEEE-754 `f64` bit patterns.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

/// Frames above this size are rejected as corrupt.
pub const MAX_FRAME: usize = 256 << 20;

pub fn write_frame<W: Write>(w: &mut W, opcode: u8, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len() + 1)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    let mut header = [0u8; 5];
    header[..4].copy_from_slice(&len.to_le_bytes());
    header[4] = opcode;
    w.write_all(&header)?;
    w.write_all(payload)?;
    w.flush()
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<(u8, Vec<u8>)> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if len == 0 || len > MAX_FRAME {
        return Err(Error::Protocol(format!("bad frame length {len}")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    let opcode = body[0];
    body.remove(0);
    Ok((opcode, body))
}

/// Little-endian payload builder.
#[derive(Default, Debug)]
pub struct Encoder(Vec<u8>);

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.0.push(v);
        self
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }
}

/// Cursor over a received payload.
pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Decoder { buf, pos: 0 }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::Protocol("truncated payload".into()))?;
        self.pos = end;
        Ok(bytes.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    /// Fail unless every byte was consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::Protocol(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_layout_is_length_opcode_payload() {
        let mut out = Vec::new();
        write_frame(&mut out, 3, &[0xaa, 0xbb]).unwrap();
        assert_eq!(out, vec![3, 0, 0, 0, 3, 0xaa, 0xbb]);
        let (op, payload) = read_frame(&mut out.as_slice()).unwrap();
        assert_eq!(op, 3);
        assert_eq!(payload, vec![0xaa, 0xbb]);
    }

    #[test]
    fn decoder_rejects_truncation_and_trailing() {
        let mut d = Decoder::new(&[1, 2, 3]);
        assert!(d.u32().is_err());
        let mut d = Decoder::new(&[1, 0, 9]);
        assert_eq!(d.u16().unwrap(), 1);
        assert!(d.finish().is_err());
    }

    #[test]
    fn zero_length_frame_is_rejected() {
        let bytes = [0u8, 0, 0, 0];
        assert!(read_frame(&mut bytes.as_slice()).is_err());
    }
}
