use rand::Rng;

const ABSENT: usize = usize::MAX;

/// Set of indices in `0..capacity` with O(1) insert, remove and uniform sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedSet {
    items: Vec<usize>,
    position: Vec<usize>,
}

impl IndexedSet {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            items: Vec::new(),
            position: vec![ABSENT; capacity],
        }
    }

    pub fn insert(&mut self, x: usize) -> bool {
        if self.position[x] != ABSENT {
            return false;
        }
        self.position[x] = self.items.len();
        self.items.push(x);
        true
    }

    pub fn remove(&mut self, x: usize) -> bool {
        let pos = self.position[x];
        if pos == ABSENT {
            return false;
        }
        let last = *self.items.last().expect("non-empty");
        self.items.swap_remove(pos);
        if last != x {
            self.position[last] = pos;
        }
        self.position[x] = ABSENT;
        true
    }

    #[inline]
    pub fn contains(&self, x: usize) -> bool {
        self.position.get(x).is_some_and(|&p| p != ABSENT)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.items
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        if self.items.is_empty() {
            None
        } else {
            Some(self.items[rng.gen_range(0..self.items.len())])
        }
    }
}

/// Complete binary tree of non-negative rates supporting point updates and
/// sampling proportional to rate, both in O(log n). Internal sums are recomputed from
/// children on every update, so the total never drifts.
#[derive(Debug, Clone)]
pub struct RateTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl RateTree {
    pub fn new(len: usize) -> Self {
        let leaves = len.max(1).next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn set(&mut self, idx: usize, rate: f64) {
        debug_assert!(rate >= 0.0 && rate.is_finite());
        let mut node = self.leaves + idx;
        self.nodes[node] = rate;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.nodes[self.leaves + idx]
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    /// Leaf whose cumulative interval contains `target in [0, total)`. Never returns a
    /// zero-rate leaf.
    pub fn find(&self, mut target: f64) -> usize {
        let mut node = 1;
        while node < self.leaves {
            let left = self.nodes[2 * node];
            let right = self.nodes[2 * node + 1];
            if (target < left && left > 0.0) || right <= 0.0 {
                node *= 2;
            } else {
                target -= left;
                node = 2 * node + 1;
            }
        }
        node - self.leaves
    }
}
