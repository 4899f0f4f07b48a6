use std::collections::{HashSet, VecDeque};

use super::{normalize_label, EmbeddingVector};

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    /// Normalized label text; the uniqueness key.
    pub text: String,
    pub embedding: EmbeddingVector,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BankUpdate {
    pub inserted: usize,
    pub evicted: usize,
    pub skipped: usize,
}

/// Fixed-capacity FIFO of unique target labels reused as negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    replace_per_step: usize,
    entries: VecDeque<BankEntry>,
    skipped_total: u64,
}

impl MemoryBank {
    pub fn new(capacity: usize, replace_per_step: usize) -> Self {
        MemoryBank {
            capacity,
            replace_per_step,
            entries: VecDeque::with_capacity(capacity),
            skipped_total: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries from oldest to newest.
    pub fn entries(&self) -> impl Iterator<Item = &BankEntry> {
        self.entries.iter()
    }

    pub fn contains(&self, text: &str) -> bool {
        let key = normalize_label(text);
        self.entries.iter().any(|e| e.text == key)
    }

    pub fn skipped_total(&self) -> u64 {
        self.skipped_total
    }

    /// Insert up to `replace_per_step` labels not already present, evicting the
    /// oldest entries only as far as needed to stay within capacity.
    pub fn update(&mut self, new: &[(String, EmbeddingVector)], step: u64) -> BankUpdate {
        let mut present: HashSet<String> = self.entries.iter().map(|e| e.text.clone()).collect();
        let mut fresh = Vec::new();
        let mut stats = BankUpdate::default();
        for (text, emb) in new {
            let key = normalize_label(text);
            if fresh.len() >= self.replace_per_step.min(self.capacity) {
                break;
            }
            if !present.insert(key.clone()) {
                stats.skipped += 1;
                continue;
            }
            fresh.push(BankEntry {
                text: key,
                embedding: emb.clone(),
                step,
            });
        }
        let overflow = (self.entries.len() + fresh.len()).saturating_sub(self.capacity);
        for _ in 0..overflow {
            self.entries.pop_front();
        }
        stats.evicted = overflow;
        stats.inserted = fresh.len();
        self.entries.extend(fresh);
        self.skipped_total += stats.skipped as u64;
        stats
    }
}

/// Negatives for one step: every current-batch target, then each bank entry
/// whose text is neither a positive nor already present in the batch.
pub fn gather_negatives(
    bank: &MemoryBank,
    batch_targets: &[(String, EmbeddingVector)],
    positives: &HashSet<String>,
) -> Vec<(String, EmbeddingVector)> {
    let positives: HashSet<String> = positives.iter().map(|p| normalize_label(p)).collect();
    let batch: HashSet<String> = batch_targets
        .iter()
        .map(|(t, _)| normalize_label(t))
        .collect();
    let mut out: Vec<(String, EmbeddingVector)> = batch_targets.to_vec();
    out.extend(
        bank.entries()
            .filter(|e| !positives.contains(&e.text) && !batch.contains(&e.text))
            .map(|e| (e.text.clone(), e.embedding.clone())),
    );
    out
}
