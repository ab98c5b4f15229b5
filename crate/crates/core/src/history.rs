use std::collections::VecDeque;

/// Sliding window over the most recent removal choices.
///
/// Feeds the removal decoder: per-request frequency within the window plus
/// indicators for the last three picks.
#[derive(Debug, Clone)]
pub struct ActionHistory {
    k: usize,
    window: VecDeque<usize>,
    counts: Vec<u32>,
}

impl ActionHistory {
    /// `n_requests` request ids (`1..=n_requests`), window length `k >= 1`.
    pub fn new(n_requests: usize, k: usize) -> Self {
        assert!(k >= 1, "history window must be at least 1");
        Self { k, window: VecDeque::with_capacity(k + 1), counts: vec![0; n_requests + 1] }
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn capacity(&self) -> usize {
        self.k
    }

    pub fn push(&mut self, request: usize) {
        debug_assert!(request >= 1 && request < self.counts.len());
        if self.window.len() == self.k {
            let evicted = self.window.pop_front().unwrap();
            self.counts[evicted] -= 1;
        }
        self.window.push_back(request);
        self.counts[request] += 1;
    }

    /// How often `request` was removed within the window.
    pub fn count(&self, request: usize) -> u32 {
        self.counts[request]
    }

    /// Request chosen at the `slot`-th most recent step (1 = latest), if any.
    pub fn last(&self, slot: usize) -> Option<usize> {
        debug_assert!((1..=3).contains(&slot));
        if slot == 0 || slot > self.window.len() {
            return None;
        }
        self.window.get(self.window.len() - slot).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.window.iter().copied()
    }
}
