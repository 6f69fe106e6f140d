//! Fixed-capacity experience replay with uniform sampling.

use rand::Rng;

use crate::error::{Error, Result};
use crate::sim::Phase;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition<O> {
    pub s: O,
    pub a: Phase,
    pub r: f64,
    pub s_next: O,
    pub terminal: bool,
}

/// Ring buffer of transitions. Once full, every push overwrites the oldest
/// entry.
#[derive(Debug, Clone)]
pub struct ReplayMemory<O> {
    capacity: usize,
    buffer: Vec<Transition<O>>,
    cursor: usize,
}

impl<O> ReplayMemory<O> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay capacity must be positive".into()));
        }
        Ok(ReplayMemory {
            capacity,
            buffer: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn push(&mut self, transition: Transition<O>) {
        if self.buffer.len() < self.capacity {
            self.buffer.push(transition);
        } else {
            self.buffer[self.cursor] = transition;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Contents from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition<O>> {
        let split = if self.buffer.len() < self.capacity {
            0
        } else {
            self.cursor
        };
        self.buffer[split..].iter().chain(self.buffer[..split].iter())
    }

    /// `batch_size` independent uniform draws, with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Transition<O>>> {
        if self.buffer.is_empty() {
            return Err(Error::EmptyMemory);
        }
        Ok((0..batch_size)
            .map(|_| &self.buffer[rng.random_range(0..self.buffer.len())])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(id: u32) -> Transition<u32> {
        Transition {
            s: id,
            a: Phase::Nsg,
            r: 0.0,
            s_next: id + 1,
            terminal: false,
        }
    }

    fn ids(m: &ReplayMemory<u32>) -> Vec<u32> {
        m.iter().map(|t| t.s).collect()
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut m = ReplayMemory::new(2).unwrap();
        m.push(t(1));
        assert_eq!(m.len(), 1);
        m.push(t(2));
        m.push(t(3));
        assert_eq!(ids(&m), vec![2, 3]);
    }

    #[test]
    fn size_saturates_at_capacity() {
        let mut m = ReplayMemory::new(5).unwrap();
        for i in 0..10 {
            m.push(t(i));
        }
        assert_eq!(m.len(), 5);
        assert_eq!(ids(&m), vec![5, 6, 7, 8, 9]);
    }

    #[test]
    fn single_item_is_repeated() {
        let mut m = ReplayMemory::new(8).unwrap();
        m.push(t(42));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = m.sample(4, &mut rng).unwrap();
        assert_eq!(batch.len(), 4);
        assert!(batch.iter().all(|x| x.s == 42));
    }

    #[test]
    fn empty_memory_cannot_sample() {
        let m: ReplayMemory<u32> = ReplayMemory::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(m.sample(1, &mut rng), Err(Error::EmptyMemory)));
        assert!(ReplayMemory::<u32>::new(0).is_err());
    }

    #[test]
    fn samples_come_from_current_contents() {
        let mut m = ReplayMemory::new(3).unwrap();
        for i in 0..10 {
            m.push(t(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for x in m.sample(500, &mut rng).unwrap() {
            assert!((7..10).contains(&x.s));
        }
    }
}
