//! Batch assembly bounded by source token count.

use rand::Rng;

use crate::util::{derive_rng, label};

/// Group item indices into batches whose summed source-token count stays
/// within `max_tokens`, preserving corpus order. An item longer than the
/// budget gets a batch of its own.
pub fn assemble_batches(
    token_counts: &[usize],
    max_tokens: usize,
) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let mut cur_tokens = 0usize;
    for (i, &n) in token_counts.iter().enumerate() {
        if !cur.is_empty() && cur_tokens + n > max_tokens {
            batches.push(std::mem::take(&mut cur));
            cur_tokens = 0;
        }
        cur.push(i);
        cur_tokens += n;
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches
}

/// Deterministic batch order for a given epoch (Fisher-Yates over batch
/// indices seeded by `(seed, epoch)`).
pub fn epoch_order(n_batches: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_batches).collect();
    let mut rng = derive_rng(seed, &[label("epoch"), epoch]);
    for i in (1..n_batches).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Endless deterministic batch stream: reshuffles batch order every epoch.
pub struct BatchStream {
    batches: Vec<Vec<usize>>,
    order: Vec<usize>,
    seed: u64,
    epoch: u64,
    pos: usize,
}

impl BatchStream {
    pub fn new(token_counts: &[usize], max_tokens: usize, seed: u64) -> BatchStream {
        let batches = assemble_batches(token_counts, max_tokens);
        let order = epoch_order(batches.len(), seed, 0);
        BatchStream { batches, order, seed, epoch: 0, pos: 0 }
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.pos >= self.order.len() {
            self.epoch += 1;
            self.order = epoch_order(self.batches.len(), self.seed, self.epoch);
            self.pos = 0;
        }
        let b = &self.batches[self.order[self.pos]];
        self.pos += 1;
        b
    }
}
