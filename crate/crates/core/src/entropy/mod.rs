//! GenNorm-driven entropy coding of quantizer symbols ("Compress").

mod bitio;
mod frame;
mod huffman;
mod ledger;
mod pmf;

pub use bitio::{BitReader, BitWriter};
pub use frame::{Codebook, Frame, HEADER_BITS, HEADER_LEN, MAGIC, VERSION};
pub use huffman::{build_huffman, decode, encode, encode_symbols, EncodedPayload, HuffmanCode};
pub use ledger::{CommLedger, LedgerEntry};
pub use pmf::{level_probabilities, LevelPmf};
