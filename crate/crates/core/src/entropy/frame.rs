//! Wire frame for one quantized tensor.
//!
//! ```text
//! offset  size  field
//!      0     3  magic "CO3" (0x43 0x4F 0x33)
//!      3     1  version (0x01)
//!      4     1  format: exp_bits << 4 | mant_bits
//!      5     8  grid scale, IEEE-754 binary64, big-endian
//!     13     8  model location μ
//!     21     8  model scale α
//!     29     8  model shape β
//!     37     8  element count, u64 big-endian
//!     45     …  Huffman payload, MSB first, zero-padded to a byte
//! ```
//!
//! The receiver rebuilds the codebook from `(format, scale, μ, α, β)`, so
//! no code table is sent.

use super::huffman::{build_huffman, decode, encode, HuffmanCode};
use super::pmf::level_probabilities;
use crate::distfit::GenNormParams;
use crate::error::{Error, Result};
use crate::fpquant::{FpFormat, QuantizedBlock};

pub const MAGIC: [u8; 3] = *b"CO3";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 45;
pub const HEADER_BITS: u64 = HEADER_LEN as u64 * 8;

/// Codebook shared by sender and receiver for one `(format, model)` pair.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub format: FpFormat,
    pub model: GenNormParams,
    pub code: HuffmanCode,
}

impl Codebook {
    pub fn new(format: FpFormat, model: GenNormParams) -> Result<Self> {
        let pmf = level_probabilities(&model, &format)?;
        let code = build_huffman(&pmf)?;
        Ok(Self { format, model, code })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub format: FpFormat,
    pub model: GenNormParams,
    pub count: u64,
    pub payload: Vec<u8>,
    /// Codeword bits in `payload` before padding. Not transmitted; the
    /// receiver recovers it while decoding.
    pub payload_bits: u64,
}

impl Frame {
    pub fn encode(block: &QuantizedBlock, codebook: &Codebook) -> Result<Self> {
        if block.format != codebook.format {
            return Err(Error::Encode("block format differs from codebook format".into()));
        }
        let payload = encode(block, &codebook.code)?;
        Ok(Self {
            format: codebook.format,
            model: codebook.model,
            count: block.len() as u64,
            payload: payload.bytes,
            payload_bits: payload.bit_len,
        })
    }

    /// Decodes with a codebook rebuilt from the header.
    pub fn decode(&self) -> Result<QuantizedBlock> {
        let codebook = Codebook::new(self.format, self.model)?;
        self.decode_with(&codebook)
    }

    pub fn decode_with(&self, codebook: &Codebook) -> Result<QuantizedBlock> {
        if codebook.format != self.format || codebook.model != self.model {
            return Err(Error::Decode("codebook does not match frame header".into()));
        }
        let n = usize::try_from(self.count).map_err(|_| Error::Decode("element count overflows".into()))?;
        let symbols = decode(&self.payload, &codebook.code, n)?;
        Ok(QuantizedBlock { format: self.format, symbols })
    }

    pub fn byte_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    /// All bits on the wire, header and padding included.
    pub fn wire_bits(&self) -> u64 {
        self.byte_len() as u64 * 8
    }

    /// Header plus padding.
    pub fn overhead_bits(&self) -> u64 {
        self.wire_bits() - self.payload_bits
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.format.exp_bits() << 4 | self.format.mant_bits());
        for v in [self.format.scale(), self.model.mu, self.model.alpha, self.model.beta] {
            out.extend_from_slice(&v.to_bits().to_be_bytes());
        }
        out.extend_from_slice(&self.count.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses a frame and checks that its payload decodes cleanly.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Decode(format!("frame of {} bytes is shorter than the header", bytes.len())));
        }
        if bytes[..3] != MAGIC {
            return Err(Error::Decode("bad magic".into()));
        }
        if bytes[3] != VERSION {
            return Err(Error::Decode(format!("unsupported version {}", bytes[3])));
        }
        let f64_at = |o: usize| f64::from_bits(u64::from_be_bytes(bytes[o..o + 8].try_into().expect("8 bytes")));
        let format = FpFormat::new(bytes[4] >> 4, bytes[4] & 0x0F)
            .and_then(|f| f.with_scale(f64_at(5)))
            .map_err(|e| Error::Decode(format!("bad format field: {e}")))?;
        let model = GenNormParams::new(f64_at(13), f64_at(21), f64_at(29))
            .map_err(|e| Error::Decode(format!("bad model field: {e}")))?;
        let count = u64::from_be_bytes(bytes[37..45].try_into().expect("8 bytes"));
        let mut frame = Self { format, model, count, payload: bytes[HEADER_LEN..].to_vec(), payload_bits: 0 };
        let block = frame.decode()?;
        let codebook = Codebook::new(format, model)?;
        frame.payload_bits = codebook.code.payload_bits(&block.symbols)?;
        Ok(frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpquant::{dequantize, quantize};

    #[test]
    fn header_layout_is_bit_exact() {
        let format = FpFormat::FP4.with_scale(0.5).unwrap();
        let model = GenNormParams::new(0.0, 1.0, 2.0).unwrap();
        let cb = Codebook::new(format, model).unwrap();
        let block = quantize(&[0.0, 0.2, -1.4], &format).unwrap();
        let frame = Frame::encode(&block, &cb).unwrap();
        let bytes = frame.to_bytes();
        assert_eq!(&bytes[..5], &[0x43, 0x4F, 0x33, 0x01, 0x21]);
        assert_eq!(&bytes[5..13], &0.5f64.to_bits().to_be_bytes());
        assert_eq!(&bytes[13..21], &[0; 8]);
        assert_eq!(&bytes[21..29], &[0x3F, 0xF0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[29..37], &[0x40, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[37..45], &[0, 0, 0, 0, 0, 0, 0, 3]);
        assert_eq!(bytes.len(), HEADER_LEN + frame.payload.len());

        let parsed = Frame::from_bytes(&bytes).unwrap();
        assert_eq!(parsed, frame);
        assert_eq!(parsed.to_bytes(), bytes);
        assert_eq!(dequantize(&parsed.decode().unwrap()).unwrap(), vec![0.0, 0.0, -1.5]);
    }

    #[test]
    fn empty_block() {
        let cb = Codebook::new(FpFormat::FP8, GenNormParams::new(0.0, 1.0, 1.0).unwrap()).unwrap();
        let frame = Frame::encode(&quantize(&[], &FpFormat::FP8).unwrap(), &cb).unwrap();
        assert_eq!(frame.payload_bits, 0);
        assert_eq!(frame.wire_bits(), HEADER_BITS);
        assert!(Frame::from_bytes(&frame.to_bytes()).unwrap().decode().unwrap().is_empty());
    }

    #[test]
    fn corrupt_frames_rejected() {
        let cb = Codebook::new(FpFormat::FP4, GenNormParams::new(0.0, 1.0, 1.0).unwrap()).unwrap();
        let frame = Frame::encode(&quantize(&[1.0, -2.0, 3.0, 0.0], &FpFormat::FP4).unwrap(), &cb).unwrap();
        let bytes = frame.to_bytes();
        assert!(Frame::from_bytes(&bytes[..20]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Frame::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[3] = 2;
        assert!(Frame::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[44] = 200; // count far beyond payload
        assert!(Frame::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[21..29].copy_from_slice(&(-1.0f64).to_bits().to_be_bytes());
        assert!(Frame::from_bytes(&bad).is_err());
    }
}
