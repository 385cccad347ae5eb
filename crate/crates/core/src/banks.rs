//! Fixed-capacity FIFO queues of momentum features used as contrastive negatives.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::{self, Scalar};

/// FIFO of unit-norm feature vectors, oldest first.
///
/// Stores plain values only, so nothing gradient-bearing can enter a bank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MemoryBank<T> {
    capacity: usize,
    width: usize,
    entries: VecDeque<Vec<T>>,
}

impl<T: Scalar> MemoryBank<T> {
    pub fn new(capacity: usize, width: usize) -> Result<Self> {
        if capacity == 0 || width == 0 {
            return Err(Error::InvalidConfig("memory bank capacity and width must be positive".into()));
        }
        Ok(Self { capacity, width, entries: VecDeque::with_capacity(capacity) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Append `batch` in order, evicting the oldest entries beyond capacity.
    /// The whole batch is validated before anything is inserted.
    pub fn enqueue<V: AsRef<[T]>>(&mut self, batch: &[V]) -> Result<()> {
        if batch.len() > self.capacity {
            return Err(Error::BatchLargerThanCapacity { batch: batch.len(), capacity: self.capacity });
        }
        for v in batch {
            let v = v.as_ref();
            if v.len() != self.width {
                return Err(shape_err("enqueue", format!("vector width {} vs bank width {}", v.len(), self.width)));
            }
            let n = scalar::norm(v).to_f64_lossy();
            if (n - 1.0).abs() > scalar::unit_tolerance::<T>() {
                return Err(Error::NotUnitNorm { norm: n });
            }
        }
        for v in batch {
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back(v.as_ref().to_vec());
        }
        Ok(())
    }

    /// Snapshot copy of the current entries, oldest first.
    pub fn negatives(&self) -> Vec<Vec<T>> {
        self.entries.iter().cloned().collect()
    }

    /// Entries flattened row-major, `[len, width]`.
    pub fn flat(&self) -> Vec<T> {
        self.entries.iter().flatten().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> {
        self.entries.iter().map(Vec::as_slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(i: usize) -> Vec<f64> {
        let t = i as f64 * 0.37;
        vec![t.cos(), t.sin()]
    }

    #[test]
    fn fifo_eviction() {
        let mut bank = MemoryBank::new(4, 2).unwrap();
        let (a, b, c, d, e, f) = (unit(0), unit(1), unit(2), unit(3), unit(4), unit(5));
        bank.enqueue(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(bank.negatives(), vec![a, b]);
        bank.enqueue(&[c.clone(), d.clone()]).unwrap();
        bank.enqueue(&[e.clone(), f.clone()]).unwrap();
        assert_eq!(bank.negatives(), vec![c, d, e, f]);
    }

    #[test]
    fn snapshot_is_isolated() {
        let mut bank = MemoryBank::new(3, 2).unwrap();
        assert!(bank.negatives().is_empty());
        bank.enqueue(&[unit(1)]).unwrap();
        let mut snap = bank.negatives();
        assert_eq!(snap, vec![unit(1)]);
        bank.enqueue(&[unit(2), unit(3)]).unwrap();
        assert_eq!(snap, vec![unit(1)]);
        snap[0][0] = 9.0;
        assert_eq!(bank.negatives()[0], unit(1));
    }

    #[test]
    fn rejects_bad_batches() {
        let mut bank = MemoryBank::new(2, 2).unwrap();
        assert!(matches!(
            bank.enqueue(&[unit(0), unit(1), unit(2)]),
            Err(Error::BatchLargerThanCapacity { batch: 3, capacity: 2 })
        ));
        assert!(matches!(bank.enqueue(&[vec![1.0, 1.0]]), Err(Error::NotUnitNorm { .. })));
        assert!(bank.enqueue(&[vec![1.0, 0.0, 0.0]]).is_err());
        assert!(bank.is_empty());
    }
}
