//! Buffer-based streaming shuffle.
//!
//! The first `k` items fill the buffer. Every later item replaces a uniformly
//! chosen slot whose previous occupant is emitted. At end of input the buffer
//! drains in random order. Memory is bounded by `k` and the output is a
//! permutation of the input.

use rand::Rng;

#[derive(Debug, Clone)]
pub struct ShuffleBuffer<T, R> {
    capacity: usize,
    slots: Vec<T>,
    rng: R,
}

impl<T, R: Rng> ShuffleBuffer<T, R> {
    /// A capacity of 0 behaves like 1 (no reordering).
    pub fn new(capacity: usize, rng: R) -> ShuffleBuffer<T, R> {
        let capacity = capacity.max(1);
        ShuffleBuffer {
            capacity,
            slots: Vec::with_capacity(capacity.min(1 << 16)),
            rng,
        }
    }

    /// Offers an item; returns the item evicted once the buffer is full.
    pub fn push(&mut self, item: T) -> Option<T> {
        if self.slots.len() < self.capacity {
            self.slots.push(item);
            return None;
        }
        let i = self.rng.gen_range(0..self.capacity);
        Some(std::mem::replace(&mut self.slots[i], item))
    }

    /// Removes a uniformly chosen remaining item.
    pub fn pop(&mut self) -> Option<T> {
        if self.slots.is_empty() {
            return None;
        }
        let i = self.rng.gen_range(0..self.slots.len());
        Some(self.slots.swap_remove(i))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

pub struct ShuffleStream<I: Iterator, R> {
    input: I,
    buffer: ShuffleBuffer<I::Item, R>,
    exhausted: bool,
}

impl<I: Iterator, R: Rng> Iterator for ShuffleStream<I, R> {
    type Item = I::Item;

    fn next(&mut self) -> Option<I::Item> {
        while !self.exhausted {
            match self.input.next() {
                Some(x) => {
                    if let Some(out) = self.buffer.push(x) {
                        return Some(out);
                    }
                }
                None => self.exhausted = true,
            }
        }
        self.buffer.pop()
    }
}

pub fn shuffle_stream<I: IntoIterator, R: Rng>(input: I, capacity: usize, rng: R) -> ShuffleStream<I::IntoIter, R> {
    ShuffleStream {
        input: input.into_iter(),
        buffer: ShuffleBuffer::new(capacity, rng),
        exhausted: false,
    }
}
