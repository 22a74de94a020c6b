//! MSB-first bit packing.

use crate::error::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bit_len: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bit: bool) {
        let offset = (self.bit_len % 8) as u8;
        if offset == 0 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().expect("byte pushed above") |= 0x80 >> offset;
        }
        self.bit_len += 1;
    }

    pub fn extend(&mut self, bits: &[bool]) {
        for &b in bits {
            self.push(b);
        }
    }

    /// Bits written so far, excluding padding.
    pub fn bit_len(&self) -> u64 {
        self.bit_len
    }

    /// Bytes with the final byte zero-padded.
    pub fn finish(self) -> (Vec<u8>, u64) {
        (self.bytes, self.bit_len)
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn read(&mut self) -> Result<bool> {
        let byte = self
            .bytes
            .get((self.pos / 8) as usize)
            .ok_or_else(|| Error::Decode(format!("bitstream truncated at bit {}", self.pos)))?;
        let bit = byte & (0x80 >> (self.pos % 8)) != 0;
        self.pos += 1;
        Ok(bit)
    }

    pub fn position(&self) -> u64 {
        self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msb_first_with_padding() {
        let mut w = BitWriter::new();
        w.extend(&[true, false, true, true, false, false, false, false, true]);
        let (bytes, bits) = w.finish();
        assert_eq!(bits, 9);
        assert_eq!(bytes, vec![0b1011_0000, 0b1000_0000]);
        let mut r = BitReader::new(&bytes);
        assert!(r.read().unwrap());
        assert!(!r.read().unwrap());
        for _ in 2..16 {
            r.read().unwrap();
        }
        assert!(r.read().is_err());
    }
}
