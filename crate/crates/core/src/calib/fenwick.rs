//! Binary indexed tree over bin counts (1-based bins).

#[derive(Clone, Debug)]
pub struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    pub fn new(n: usize) -> Self {
        Self { tree: vec![0; n + 1] }
    }

    pub fn from_counts(counts: &[u64]) -> Self {
        let mut tree = vec![0; counts.len() + 1];
        tree[1..].copy_from_slice(counts);
        for i in 1..tree.len() {
            let parent = i + (i & i.wrapping_neg());
            if parent < tree.len() {
                tree[parent] += tree[i];
            }
        }
        Self { tree }
    }

    pub fn len(&self) -> usize {
        self.tree.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add(&mut self, bin: usize, v: u64) {
        let mut i = bin;
        while i < self.tree.len() {
            self.tree[i] += v;
            i += i & i.wrapping_neg();
        }
    }

    pub fn sub(&mut self, bin: usize, v: u64) {
        let mut i = bin;
        while i < self.tree.len() {
            self.tree[i] -= v;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum of bins `1..=bin`; `prefix(0) == 0`.
    pub fn prefix(&self, bin: usize) -> u64 {
        let mut i = bin.min(self.len());
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i &= i - 1;
        }
        s
    }

    /// Smallest bin whose prefix sum reaches `target` (`target >= 1`), or
    /// `None` if the total is below it.
    pub fn lower_bound(&self, target: u64) -> Option<usize> {
        if target == 0 {
            return Some(0);
        }
        let mut pos = 0;
        let mut rem = target;
        let mut step = self.len().checked_ilog2().map_or(0, |b| 1usize << b);
        while step > 0 {
            let next = pos + step;
            if next <= self.len() && self.tree[next] < rem {
                pos = next;
                rem -= self.tree[next];
            }
            step >>= 1;
        }
        (pos < self.len()).then_some(pos + 1)
    }
}
