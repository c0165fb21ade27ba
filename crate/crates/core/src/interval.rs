//! Static augmented interval tree over closed intervals `[start, end]`.
//!
//! Intervals are sorted by start and laid out as a balanced BST in a `Vec`
//! (the middle element of each range is the subtree root). Every node caches
//! the maximum `end` in its subtree so stabbing queries can prune whole
//! subtrees.

use std::cell::Cell;

#[derive(Debug, Clone)]
struct Node<K, V> {
    start: K,
    end: K,
    max_end: K,
    value: V,
}

#[derive(Debug, Clone)]
pub struct IntervalTree<K, V> {
    // in-order storage: node `mid` of `lo..hi` is the root of that range
    nodes: Vec<Node<K, V>>,
}

impl<K: Ord + Copy, V> IntervalTree<K, V> {
    /// Builds the tree. Intervals with `start > end` are kept but never match.
    pub fn new(intervals: impl IntoIterator<Item = (K, K, V)>) -> Self {
        let mut nodes: Vec<Node<K, V>> = intervals
            .into_iter()
            .map(|(start, end, value)| Node { start, end, max_end: end, value })
            .collect();
        nodes.sort_by(|a, b| a.start.cmp(&b.start).then(a.end.cmp(&b.end)));
        let len = nodes.len();
        augment(&mut nodes, 0, len);
        Self { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Every value whose interval contains `point`, in start order.
    pub fn stab(&self, point: K) -> Vec<&V> {
        let mut out = Vec::new();
        self.stab_into(point, &mut out, None);
        out
    }

    /// Like [`stab`](Self::stab) but also returns how many nodes the search
    /// examined.
    pub fn stab_counted(&self, point: K) -> (Vec<&V>, usize) {
        let visits = Cell::new(0);
        let mut out = Vec::new();
        self.stab_into(point, &mut out, Some(&visits));
        (out, visits.get())
    }

    pub(crate) fn stab_into<'a>(&'a self, point: K, out: &mut Vec<&'a V>, visits: Option<&Cell<usize>>) {
        self.search(0, self.nodes.len(), point, out, visits);
    }

    fn search<'a>(
        &'a self,
        lo: usize,
        hi: usize,
        point: K,
        out: &mut Vec<&'a V>,
        visits: Option<&Cell<usize>>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let node = &self.nodes[mid];
        if let Some(v) = visits {
            v.set(v.get() + 1);
        }
        if node.max_end < point {
            return;
        }
        self.search(lo, mid, point, out, visits);
        if node.start <= point {
            if point <= node.end {
                out.push(&node.value);
            }
            self.search(mid + 1, hi, point, out, visits);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (K, K, &V)> {
        self.nodes.iter().map(|n| (n.start, n.end, &n.value))
    }
}

fn augment<K: Ord + Copy, V>(nodes: &mut [Node<K, V>], lo: usize, hi: usize) -> Option<K> {
    if lo >= hi {
        return None;
    }
    let mid = lo + (hi - lo) / 2;
    let left = augment(nodes, lo, mid);
    let right = augment(nodes, mid + 1, hi);
    let mut max = nodes[mid].end;
    for child in [left, right].into_iter().flatten() {
        max = max.max(child);
    }
    nodes[mid].max_end = max;
    Some(max)
}
