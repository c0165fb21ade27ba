//! Bounded multi-producer queue that discards the oldest item when full.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

pub struct DropOldestQueue<T> {
    items: Mutex<VecDeque<T>>,
    ready: Condvar,
    capacity: usize,
    dropped: AtomicU64,
}

impl<T> DropOldestQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self { items: Mutex::new(VecDeque::with_capacity(capacity)), ready: Condvar::new(), capacity, dropped: AtomicU64::new(0) }
    }

    /// Enqueues `item`; returns true if an older item was discarded to
    /// make room.
    pub fn push(&self, item: T) -> bool {
        let mut q = self.items.lock().unwrap();
        let overflow = q.len() == self.capacity;
        if overflow {
            q.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        q.push_back(item);
        drop(q);
        self.ready.notify_one();
        overflow
    }

    /// Waits up to `timeout` for an item.
    pub fn pop_timeout(&self, timeout: Duration) -> Option<T> {
        let deadline = Instant::now() + timeout;
        let mut q = self.items.lock().unwrap();
        loop {
            if let Some(item) = q.pop_front() {
                return Some(item);
            }
            let left = deadline.checked_duration_since(Instant::now())?;
            q = self.ready.wait_timeout(q, left).unwrap().0;
        }
    }

    pub fn try_pop(&self) -> Option<T> {
        self.items.lock().unwrap().pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use std::thread;

    #[test]
    fn drops_oldest_on_overflow() {
        let q = DropOldestQueue::new(3);
        for i in 0..5 {
            q.push(i);
        }
        assert_eq!(q.dropped(), 2);
        let drained: Vec<_> = std::iter::from_fn(|| q.try_pop()).collect();
        assert_eq!(drained, [2, 3, 4]);
    }

    #[test]
    fn pop_times_out_when_empty() {
        let q: DropOldestQueue<u8> = DropOldestQueue::new(1);
        let start = Instant::now();
        assert_eq!(q.pop_timeout(Duration::from_millis(30)), None);
        assert!(start.elapsed() >= Duration::from_millis(30));
    }

    #[test]
    fn wakes_waiting_consumer() {
        let q = Arc::new(DropOldestQueue::new(8));
        let consumer = {
            let q = q.clone();
            thread::spawn(move || q.pop_timeout(Duration::from_secs(5)))
        };
        thread::sleep(Duration::from_millis(20));
        q.push(7);
        assert_eq!(consumer.join().unwrap(), Some(7));
    }

    #[test]
    fn concurrent_producers_lose_nothing_below_capacity() {
        let q = Arc::new(DropOldestQueue::new(4_000));
        let producers: Vec<_> = (0..4)
            .map(|p| {
                let q = q.clone();
                thread::spawn(move || (0..1_000).for_each(|i| {
                    q.push(p * 1_000 + i);
                }))
            })
            .collect();
        producers.into_iter().for_each(|h| h.join().unwrap());
        assert_eq!(q.len(), 4_000);
        assert_eq!(q.dropped(), 0);
    }
}
