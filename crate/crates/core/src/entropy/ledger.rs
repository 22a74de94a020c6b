use serde::{Deserialize, Serialize};

/// Bits sent by one user in one round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub payload_bits: u64,
    /// Frame header plus byte padding.
    pub header_bits: u64,
}

impl LedgerEntry {
    pub fn total(&self) -> u64 {
        self.payload_bits + self.header_bits
    }
}

/// Per-round, per-user communication accounting. `total_bits` is the sum of
/// every entry.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    rounds: Vec<Vec<LedgerEntry>>,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds to the `(t, u)` cell, growing the table as needed.
    pub fn record(&mut self, t: usize, u: usize, payload_bits: u64, header_bits: u64) {
        if self.rounds.len() <= t {
            self.rounds.resize_with(t + 1, Vec::new);
        }
        let row = &mut self.rounds[t];
        if row.len() <= u {
            row.resize(u + 1, LedgerEntry::default());
        }
        row[u].payload_bits += payload_bits;
        row[u].header_bits += header_bits;
    }

    pub fn entry(&self, t: usize, u: usize) -> LedgerEntry {
        self.rounds.get(t).and_then(|r| r.get(u)).copied().unwrap_or_default()
    }

    pub fn rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn round(&self, t: usize) -> &[LedgerEntry] {
        self.rounds.get(t).map(Vec::as_slice).unwrap_or(&[])
    }

    fn entries(&self) -> impl Iterator<Item = &LedgerEntry> {
        self.rounds.iter().flatten()
    }

    pub fn payload_bits(&self) -> u64 {
        self.entries().map(|e| e.payload_bits).sum()
    }

    pub fn header_bits(&self) -> u64 {
        self.entries().map(|e| e.header_bits).sum()
    }

    pub fn total_bits(&self) -> u64 {
        self.entries().map(LedgerEntry::total).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals() {
        assert_eq!(CommLedger::new().total_bits(), 0);

        let mut l = CommLedger::new();
        l.record(0, 0, 100, 0);
        l.record(0, 0, 100, 0);
        assert_eq!(l.total_bits(), 200);

        let mut l = CommLedger::new();
        for t in 0..3 {
            for u in 0..2 {
                l.record(t, u, 6, 2);
            }
        }
        assert_eq!(l.total_bits(), 48);
        assert_eq!(l.payload_bits(), 36);
        assert_eq!(l.header_bits(), 12);
        assert_eq!(l.entry(2, 1).total(), 8);
        assert_eq!(l.entry(7, 7), LedgerEntry::default());
    }
}
