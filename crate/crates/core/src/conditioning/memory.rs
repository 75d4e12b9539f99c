use ndarray::Array3;

use crate::error::{invalid, Result};
use crate::geometry::CameraPose;
use crate::scalar::Scalar;

pub const DEFAULT_MEMORY_K: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry<S> {
    /// `H x W x C`
    pub frame: Array3<S>,
    pub pose: CameraPose<S>,
    pub step: u64,
}

/// Previously generated frames with the poses they were seen from, ordered
/// by step and bounded by `capacity`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank<S> {
    entries: Vec<MemoryEntry<S>>,
    capacity: usize,
}

impl<S: Scalar> MemoryBank<S> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("memory capacity must be positive"));
        }
        Ok(Self {
            entries: Vec::new(),
            capacity,
        })
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

    pub fn entries(&self) -> &[MemoryEntry<S>] {
        &self.entries
    }

    /// Inserts in step order (after existing entries of equal step) and
    /// evicts the oldest entries beyond capacity.
    pub fn push(&mut self, frame: Array3<S>, pose: CameraPose<S>, step: u64) {
        let at = self.entries.partition_point(|e| e.step <= step);
        self.entries.insert(at, MemoryEntry { frame, pose, step });
        if self.entries.len() > self.capacity {
            let excess = self.entries.len() - self.capacity;
            self.entries.drain(..excess);
        }
    }

    /// Viewpoint similarity of every entry to `pose`.
    pub fn scores(&self, pose: &CameraPose<S>, sigma_pos: f64) -> Vec<f64> {
        self.entries
            .iter()
            .map(|e| viewpoint_similarity(&e.pose, pose, sigma_pos))
            .collect()
    }
}

/// `exp(-|c_a - c_b| / sigma) * max(0, cos(axis_a, axis_b))`.
pub fn viewpoint_similarity<S: Scalar>(
    a: &CameraPose<S>,
    b: &CameraPose<S>,
    sigma_pos: f64,
) -> f64 {
    let (ca, cb) = (a.center(), b.center());
    let dist = (0..3)
        .map(|i| (ca[i] - cb[i]).as_f64().powi(2))
        .sum::<f64>()
        .sqrt();
    let (oa, ob) = (a.optical_axis(), b.optical_axis());
    let dot: f64 = (0..3).map(|i| oa[i].as_f64() * ob[i].as_f64()).sum();
    let na: f64 = oa.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
    let nb: f64 = ob.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
    (-dist / sigma_pos).exp() * (dot / (na * nb)).max(0.0)
}

/// Top-`k` entries by viewpoint similarity; ties keep the earlier step first.
pub fn retrieve_memory<'a, S: Scalar>(
    bank: &'a MemoryBank<S>,
    pose: &CameraPose<S>,
    k: usize,
    sigma_pos: f64,
) -> Vec<&'a MemoryEntry<S>> {
    let scores = bank.scores(pose, sigma_pos);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    order
        .into_iter()
        .take(k)
        .map(|i| &bank.entries[i])
        .collect()
}

/// Functional form of [`MemoryBank::push`].
pub fn update_memory<S: Scalar>(
    mut bank: MemoryBank<S>,
    frame: Array3<S>,
    pose: CameraPose<S>,
    step: u64,
) -> MemoryBank<S> {
    bank.push(frame, pose, step);
    bank
}
