use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use super::bitio::{BitReader, BitWriter};
use super::pmf::LevelPmf;
use crate::error::{Error, Result};
use crate::fpquant::QuantizedBlock;

/// Canonical prefix code over symbol indices `0..n`.
#[derive(Debug, Clone)]
pub struct HuffmanCode {
    lengths: Vec<u32>,
    codes: Vec<Vec<bool>>,
    trie: Vec<[Link; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Link {
    Empty,
    Node(u32),
    Leaf(u32),
}

impl PartialEq for HuffmanCode {
    fn eq(&self, other: &Self) -> bool {
        self.lengths == other.lengths
    }
}

#[derive(Debug, Clone, Copy)]
struct HeapKey {
    weight: f64,
    order: usize,
}

impl PartialEq for HeapKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapKey {}

impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.weight.total_cmp(&other.weight).then(self.order.cmp(&other.order))
    }
}

/// Huffman code lengths by repeatedly merging the two lightest nodes.
///
/// Ties are broken by creation order: leaves first in symbol order, then
/// merged nodes in the order they were formed. Zero-probability symbols
/// therefore pair off into a balanced subtree hanging below the lightest
/// positive symbols, so they remain encodable with long codewords.
fn huffman_lengths(weights: &[f64]) -> Vec<u32> {
    let n = weights.len();
    if n == 1 {
        return vec![1];
    }
    let mut parent = vec![usize::MAX; 2 * n - 1];
    let mut heap: BinaryHeap<Reverse<HeapKey>> =
        weights.iter().enumerate().map(|(i, &w)| Reverse(HeapKey { weight: w, order: i })).collect();
    let mut next = n;
    while heap.len() > 1 {
        let Reverse(a) = heap.pop().expect("len > 1");
        let Reverse(b) = heap.pop().expect("len > 1");
        parent[a.order] = next;
        parent[b.order] = next;
        heap.push(Reverse(HeapKey { weight: a.weight + b.weight, order: next }));
        next += 1;
    }
    // parents are created after their children, so walk downward from the root
    let mut depth = vec![0u32; 2 * n - 1];
    for node in (0..2 * n - 2).rev() {
        depth[node] = depth[parent[node]] + 1;
    }
    depth.truncate(n);
    depth
}

pub fn build_huffman(pmf: &LevelPmf) -> Result<HuffmanCode> {
    if pmf.is_empty() {
        return Err(Error::Domain("cannot build a code for an empty alphabet".into()));
    }
    if !pmf.probs.iter().any(|&p| p > 0.0) {
        return Err(Error::Domain("no symbol has positive probability".into()));
    }
    HuffmanCode::from_lengths(huffman_lengths(&pmf.probs))
}

impl HuffmanCode {
    /// Canonical code for the given lengths: symbols sorted by
    /// `(length, index)` receive consecutive codewords.
    pub fn from_lengths(lengths: Vec<u32>) -> Result<Self> {
        if lengths.is_empty() || lengths.contains(&0) {
            return Err(Error::Domain("code lengths must be positive".into()));
        }
        let mut order: Vec<usize> = (0..lengths.len()).collect();
        order.sort_by_key(|&s| (lengths[s], s));

        let mut codes = vec![Vec::new(); lengths.len()];
        let mut current: Vec<bool> = Vec::new();
        for (rank, &s) in order.iter().enumerate() {
            if rank > 0 && !increment(&mut current) {
                return Err(Error::Domain("code lengths violate the Kraft inequality".into()));
            }
            current.resize(lengths[s] as usize, false);
            codes[s] = current.clone();
        }

        let mut trie = vec![[Link::Empty; 2]];
        for (s, code) in codes.iter().enumerate() {
            let mut node = 0usize;
            for (i, &bit) in code.iter().enumerate() {
                let slot = &mut trie[node][bit as usize];
                if i + 1 == code.len() {
                    *slot = Link::Leaf(s as u32);
                } else {
                    node = match *slot {
                        Link::Node(k) => k as usize,
                        Link::Empty => {
                            let k = trie.len();
                            trie[node][bit as usize] = Link::Node(k as u32);
                            trie.push([Link::Empty; 2]);
                            k
                        }
                        Link::Leaf(_) => unreachable!("canonical codes are prefix-free"),
                    };
                }
            }
        }
        Ok(Self { lengths, codes, trie })
    }

    pub fn lengths(&self) -> &[u32] {
        &self.lengths
    }

    pub fn codeword(&self, symbol: u32) -> Option<&[bool]> {
        self.codes.get(symbol as usize).map(Vec::as_slice)
    }

    pub fn alphabet_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn kraft_sum(&self) -> f64 {
        self.lengths.iter().map(|&l| (-(l as f64)).exp2()).sum()
    }

    /// `Σ p_i · l_i` for the normalized pmf.
    pub fn expected_length(&self, pmf: &LevelPmf) -> f64 {
        let total: f64 = pmf.probs.iter().sum();
        pmf.probs.iter().zip(&self.lengths).map(|(p, &l)| p / total * l as f64).sum()
    }

    /// Total bits the symbols would occupy, without padding.
    pub fn payload_bits(&self, symbols: &[u32]) -> Result<u64> {
        symbols
            .iter()
            .map(|&s| {
                self.lengths
                    .get(s as usize)
                    .map(|&l| l as u64)
                    .ok_or_else(|| Error::Encode(format!("symbol {s} has no codeword")))
            })
            .sum()
    }
}

/// Adds one to a big-endian bit string; `false` on overflow.
fn increment(bits: &mut [bool]) -> bool {
    for b in bits.iter_mut().rev() {
        if *b {
            *b = false;
        } else {
            *b = true;
            return true;
        }
    }
    false
}

/// Encoded symbols, MSB first, zero-padded to a whole byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPayload {
    pub bytes: Vec<u8>,
    /// Codeword bits before padding.
    pub bit_len: u64,
}

pub fn encode_symbols(symbols: &[u32], code: &HuffmanCode) -> Result<EncodedPayload> {
    let mut w = BitWriter::new();
    for &s in symbols {
        let cw = code
            .codeword(s)
            .ok_or_else(|| Error::Encode(format!("symbol {s} outside alphabet of {}", code.alphabet_size())))?;
        w.extend(cw);
    }
    let (bytes, bit_len) = w.finish();
    Ok(EncodedPayload { bytes, bit_len })
}

pub fn encode(block: &QuantizedBlock, code: &HuffmanCode) -> Result<EncodedPayload> {
    encode_symbols(&block.symbols, code)
}

/// Decodes exactly `n` symbols. The stream must end within the final byte
/// and its padding bits must be zero.
pub fn decode(bytes: &[u8], code: &HuffmanCode, n: usize) -> Result<Vec<u32>> {
    let mut r = BitReader::new(bytes);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut node = 0usize;
        loop {
            let bit = r.read()?;
            match code.trie[node][bit as usize] {
                Link::Leaf(s) => {
                    out.push(s);
                    break;
                }
                Link::Node(k) => node = k as usize,
                Link::Empty => {
                    return Err(Error::Decode(format!("invalid codeword ending at bit {}", r.position())));
                }
            }
        }
    }
    let used_bytes = r.position().div_ceil(8) as usize;
    if used_bytes != bytes.len() {
        return Err(Error::Decode(format!("{} trailing bytes after {n} symbols", bytes.len() - used_bytes)));
    }
    while !r.position().is_multiple_of(8) {
        if r.read()? {
            return Err(Error::Decode("nonzero padding".into()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distfit::GenNormParams;
    use crate::entropy::level_probabilities;
    use crate::fpquant::FpFormat;
    use proptest::prelude::*;

    fn code_for(probs: &[f64]) -> (LevelPmf, HuffmanCode) {
        let pmf = LevelPmf::from_probs(probs.to_vec()).unwrap();
        let code = build_huffman(&pmf).unwrap();
        (pmf, code)
    }

    fn is_prefix_free(code: &HuffmanCode) -> bool {
        let n = code.alphabet_size();
        (0..n).all(|i| {
            (0..n).all(|j| {
                i == j || {
                    let (a, b) = (code.codeword(i as u32).unwrap(), code.codeword(j as u32).unwrap());
                    !(a.len() <= b.len() && b[..a.len()] == *a)
                }
            })
        })
    }

    #[test]
    fn dyadic_pmf() {
        let (pmf, code) = code_for(&[0.5, 0.25, 0.125, 0.125]);
        assert_eq!(code.lengths(), &[1, 2, 3, 3]);
        assert_eq!(code.expected_length(&pmf), 1.75);
        assert_eq!(code.codeword(0).unwrap(), &[false]);
        assert_eq!(code.codeword(1).unwrap(), &[true, false]);
        assert_eq!(code.codeword(2).unwrap(), &[true, true, false]);
        assert_eq!(code.codeword(3).unwrap(), &[true, true, true]);
    }

    #[test]
    fn uniform_and_single() {
        let (_, code) = code_for(&[0.125; 8]);
        assert!(code.lengths().iter().all(|&l| l == 3));
        let (_, code) = code_for(&[1.0]);
        assert_eq!(code.lengths(), &[1]);
        let p = encode_symbols(&[0, 0, 0], &code).unwrap();
        assert_eq!(p.bit_len, 3);
        assert_eq!(decode(&p.bytes, &code, 3).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn errors() {
        assert!(matches!(build_huffman(&LevelPmf::from_probs(vec![]).unwrap()), Err(Error::Domain(_))));
        assert!(matches!(build_huffman(&LevelPmf::from_probs(vec![0.0, 0.0]).unwrap()), Err(Error::Domain(_))));
        assert!(HuffmanCode::from_lengths(vec![1, 1, 1]).is_err());
        let (_, code) = code_for(&[0.5, 0.25, 0.25]);
        assert!(matches!(encode_symbols(&[3], &code), Err(Error::Encode(_))));
        let p = encode_symbols(&[2, 1, 0, 2], &code).unwrap();
        assert!(matches!(decode(&p.bytes, &code, 9), Err(Error::Decode(_))));
        let mut padded = p.bytes.clone();
        padded.push(0);
        assert!(matches!(decode(&padded, &code, 4), Err(Error::Decode(_))));
    }

    #[test]
    fn zero_probability_symbols_stay_encodable() {
        let (pmf, code) = code_for(&[0.6, 0.4, 0.0, 0.0, 0.0]);
        assert!(is_prefix_free(&code));
        assert!(code.kraft_sum() <= 1.0);
        let max_positive = code.lengths()[..2].iter().max().copied().unwrap();
        assert!(code.lengths()[2..].iter().all(|&l| l >= max_positive));
        let h = pmf.entropy_bits();
        let l = code.expected_length(&pmf);
        assert!(h <= l && l < h + 1.0);
        let p = encode_symbols(&[4, 0, 2, 3, 1], &code).unwrap();
        assert_eq!(decode(&p.bytes, &code, 5).unwrap(), vec![4, 0, 2, 3, 1]);
    }

    #[test]
    fn most_probable_symbol_uses_shortest_codeword() {
        let pmf = level_probabilities(&GenNormParams::new(0.0, 1.0, 1.0).unwrap(), &FpFormat::FP4).unwrap();
        let code = build_huffman(&pmf).unwrap();
        let top = (0..pmf.len()).max_by(|&a, &b| pmf.probs[a].total_cmp(&pmf.probs[b])).unwrap() as u32;
        let shortest = *code.lengths().iter().min().unwrap();
        let n = 37;
        let payload = encode_symbols(&vec![top; n], &code).unwrap();
        assert_eq!(payload.bit_len, n as u64 * shortest as u64);
    }

    #[test]
    fn fp8_tails_get_long_but_valid_codes() {
        let pmf = level_probabilities(&GenNormParams::new(0.0, 1.0, 2.0).unwrap(), &FpFormat::FP8).unwrap();
        let code = build_huffman(&pmf).unwrap();
        assert!(code.kraft_sum() <= 1.0 + 1e-12);
        assert!(is_prefix_free(&code));
        let syms: Vec<u32> = (0..241).collect();
        let p = encode_symbols(&syms, &code).unwrap();
        assert_eq!(decode(&p.bytes, &code, syms.len()).unwrap(), syms);
    }

    #[test]
    fn identical_pmf_identical_code() {
        let pmf = level_probabilities(&GenNormParams::new(0.1, 0.7, 1.3).unwrap(), &FpFormat::FP8).unwrap();
        let a = build_huffman(&pmf).unwrap();
        let b = build_huffman(&pmf.clone()).unwrap();
        assert_eq!(a.lengths(), b.lengths());
        assert!((0..241).all(|s| a.codeword(s) == b.codeword(s)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn round_trip_and_optimality(weights in proptest::collection::vec(0.0..1.0f64, 1..40),
                                     picks in proptest::collection::vec(any::<proptest::sample::Index>(), 0..200)) {
            prop_assume!(weights.iter().any(|&w| w > 0.0));
            let (pmf, code) = code_for(&weights);
            prop_assert!(code.kraft_sum() <= 1.0);
            prop_assert!(is_prefix_free(&code));
            let h = pmf.entropy_bits();
            let l = code.expected_length(&pmf);
            // a lone symbol still costs one bit
            let slack = if weights.len() == 1 { 1.0 + 1e-12 } else { 1.0 };
            prop_assert!(l >= h - 1e-12 && l < h + slack, "H={} L={}", h, l);
            let syms: Vec<u32> = picks.iter().map(|i| i.index(weights.len()) as u32).collect();
            let p = encode_symbols(&syms, &code).unwrap();
            prop_assert_eq!(p.bit_len, code.payload_bits(&syms).unwrap());
            prop_assert_eq!(decode(&p.bytes, &code, syms.len()).unwrap(), syms);
        }
    }
}
