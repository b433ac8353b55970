//! Binary sum-tree over nonnegative leaf priorities.
//!
//! Leaves live in the second half of a flat array of `2 * capacity - 1` nodes;
//! node `k` has children `2k + 1` and `2k + 2`. Each write recomputes its
//! ancestors from their children, so internal nodes never accumulate drift.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SumTree {
    capacity: usize,
    nodes: Vec<f64>,
    live_leaves: usize,
    node_writes: u64,
}

/// Leaf array as written to disk; internal nodes are rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumTreeLeaves {
    pub capacity: usize,
    pub leaves: Vec<f64>,
}

impl SumTree {
    /// `requested` is rounded up to the next power of two; extra leaves stay at 0.
    pub fn new(requested: usize) -> Self {
        let capacity = requested.max(1).next_power_of_two();
        Self {
            capacity,
            nodes: vec![0.0; 2 * capacity - 1],
            live_leaves: 0,
            node_writes: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of leaves currently holding positive mass.
    pub fn live_leaves(&self) -> usize {
        self.live_leaves
    }

    pub fn height(&self) -> usize {
        self.capacity.trailing_zeros() as usize
    }

    /// Total number of node writes performed by `set_leaf` since construction.
    pub fn node_writes(&self) -> u64 {
        self.node_writes
    }

    pub fn total(&self) -> f64 {
        self.nodes[0]
    }

    pub fn leaf(&self, index: usize) -> f64 {
        self.nodes[self.capacity - 1 + index]
    }

    pub fn leaves(&self) -> &[f64] {
        &self.nodes[self.capacity - 1..]
    }

    pub fn set_leaf(&mut self, index: usize, value: f64) -> Result<()> {
        if index >= self.capacity {
            return Err(Error::InvalidArgument(format!(
                "leaf {index} out of range for capacity {}",
                self.capacity
            )));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite("sum-tree leaf"));
        }
        if value < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sum-tree leaf must be nonnegative, got {value}"
            )));
        }
        let mut node = self.capacity - 1 + index;
        let was_live = self.nodes[node] > 0.0;
        self.live_leaves = self.live_leaves + (value > 0.0) as usize - was_live as usize;
        self.nodes[node] = value;
        self.node_writes += 1;
        while node > 0 {
            node = (node - 1) / 2;
            self.nodes[node] = self.nodes[2 * node + 1] + self.nodes[2 * node + 2];
            self.node_writes += 1;
        }
        Ok(())
    }

    /// Leaf whose half-open cumulative interval `[prefix, prefix + value)` contains `u`.
    pub fn sample_prefix(&self, u: f64) -> Result<usize> {
        self.sample_prefix_counted(u).map(|(leaf, _)| leaf)
    }

    /// Like [`SumTree::sample_prefix`], also returning how many nodes were read.
    pub fn sample_prefix_counted(&self, u: f64) -> Result<(usize, usize)> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::EmptyBuffer);
        }
        if !(0.0..total).contains(&u) {
            return Err(Error::InvalidArgument(format!(
                "prefix {u} outside [0, {total})"
            )));
        }
        let mut node = 0;
        let mut u = u;
        let mut reads = 1;
        while node < self.capacity - 1 {
            let left = 2 * node + 1;
            let right = left + 1;
            let left_sum = self.nodes[left];
            reads += 2;
            // rounding can leave u just past the left mass with an empty right side
            if u < left_sum || self.nodes[right] <= 0.0 {
                node = left;
            } else {
                u -= left_sum;
                node = right;
            }
        }
        Ok((node + 1 - self.capacity, reads))
    }

    pub fn to_leaves(&self) -> SumTreeLeaves {
        SumTreeLeaves {
            capacity: self.capacity,
            leaves: self.leaves().to_vec(),
        }
    }

    pub fn from_leaves(saved: &SumTreeLeaves) -> Result<Self> {
        if !saved.capacity.is_power_of_two() || saved.leaves.len() != saved.capacity {
            return Err(Error::Format(format!(
                "sum-tree leaf array of length {} for capacity {}",
                saved.leaves.len(),
                saved.capacity
            )));
        }
        let mut tree = Self::new(saved.capacity);
        for (i, &v) in saved.leaves.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Format(format!("invalid sum-tree leaf {v}")));
            }
            let node = tree.capacity - 1 + i;
            tree.nodes[node] = v;
            tree.live_leaves += (v > 0.0) as usize;
        }
        for node in (0..tree.capacity - 1).rev() {
            tree.nodes[node] = tree.nodes[2 * node + 1] + tree.nodes[2 * node + 2];
        }
        Ok(tree)
    }
}
