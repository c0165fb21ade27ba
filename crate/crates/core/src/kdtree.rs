//! Static 2-D KD-tree for nearest-neighbour queries on projected points.
//!
//! Ties on distance resolve to the smaller payload, so callers that need a
//! deterministic winner give payloads a meaningful `Ord`.

use num_traits::Float;

use crate::geo::planar_dist2;

#[derive(Debug, Clone)]
pub struct NeighborTree<F, P> {
    // in-order layout, split axis alternates with depth
    points: Vec<([F; 2], P)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("cannot build a neighbour tree from zero points")]
pub struct EmptyInput;

/// Result of a nearest query.
#[derive(Debug, Clone, PartialEq)]
pub struct Nearest<'a, F, P> {
    pub payload: &'a P,
    pub point: [F; 2],
    /// Squared planar distance to the query.
    pub dist2: F,
}

impl<F: Float, P: Ord> NeighborTree<F, P> {
    pub fn new(points: Vec<([F; 2], P)>) -> Result<Self, EmptyInput> {
        if points.is_empty() {
            return Err(EmptyInput);
        }
        let mut points = points;
        build(&mut points, 0);
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The point closest to `query`; equal distances go to the smaller payload.
    pub fn nearest(&self, query: [F; 2]) -> Nearest<'_, F, P> {
        let mut best: Option<(F, usize)> = None;
        self.search(0, self.points.len(), 0, query, &mut best);
        let (dist2, idx) = best.expect("tree is nonempty");
        let (point, payload) = &self.points[idx];
        Nearest { payload, point: *point, dist2 }
    }

    fn better(&self, d: F, idx: usize, best: &Option<(F, usize)>) -> bool {
        match best {
            None => true,
            Some((bd, bi)) => d < *bd || (d == *bd && self.points[idx].1 < self.points[*bi].1),
        }
    }

    fn search(&self, lo: usize, hi: usize, depth: usize, query: [F; 2], best: &mut Option<(F, usize)>) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let axis = depth % 2;
        let (point, _) = &self.points[mid];
        let d = planar_dist2(*point, query);
        if self.better(d, mid, best) {
            *best = Some((d, mid));
        }
        let diff = query[axis] - point[axis];
        let (near, far) = if diff < F::zero() {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(near.0, near.1, depth + 1, query, best);
        // `<=` keeps equal-distance candidates on the far side reachable for tie-breaking
        if best.is_none_or(|(bd, _)| diff * diff <= bd) {
            self.search(far.0, far.1, depth + 1, query, best);
        }
    }
}

fn build<F: Float, P>(points: &mut [([F; 2], P)], depth: usize) {
    if points.len() <= 1 {
        return;
    }
    let axis = depth % 2;
    let mid = points.len() / 2;
    points.select_nth_unstable_by(mid, |a, b| {
        a.0[axis].partial_cmp(&b.0[axis]).unwrap_or(std::cmp::Ordering::Equal)
    });
    let (left, right) = points.split_at_mut(mid);
    build(left, depth + 1);
    build(&mut right[1..], depth + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_rejected() {
        assert_eq!(NeighborTree::<f64, u32>::new(vec![]).unwrap_err(), EmptyInput);
    }

    #[test]
    fn single_point_always_nearest() {
        let t = NeighborTree::new(vec![([1.0f64, 2.0], "a")]).unwrap();
        for q in [[0.0, 0.0], [100.0, -5.0], [1.0, 2.0]] {
            assert_eq!(*t.nearest(q).payload, "a");
        }
        assert_eq!(t.nearest([1.0, 2.0]).dist2, 0.0);
    }

    #[test]
    fn ties_go_to_smaller_payload() {
        for order in [vec!["b", "a"], vec!["a", "b"]] {
            let pts = order
                .iter()
                .map(|p| (if *p == "a" { [-1.0f64, 0.0] } else { [1.0, 0.0] }, *p))
                .collect();
            let t = NeighborTree::new(pts).unwrap();
            assert_eq!(*t.nearest([0.0, 0.0]).payload, "a");
        }
    }

    #[test]
    fn collinear_middle() {
        let t = NeighborTree::new(vec![([0.0f32, 0.0], 1), ([1.0, 0.0], 2), ([2.0, 0.0], 3)]).unwrap();
        assert_eq!(*t.nearest([1.2, 0.1]).payload, 2);
    }

    #[test]
    fn matches_linear_scan_with_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            // coarse grid forces many exact ties
            let pts: Vec<([f64; 2], u32)> = (0..200)
                .map(|i| ([rng.gen_range(0..20) as f64, rng.gen_range(0..20) as f64], i))
                .collect();
            let t = NeighborTree::new(pts.clone()).unwrap();
            for _ in 0..50 {
                let q = [rng.gen_range(-2.0..22.0), rng.gen_range(-2.0..22.0)];
                let want = pts
                    .iter()
                    .min_by(|a, b| {
                        planar_dist2(a.0, q)
                            .partial_cmp(&planar_dist2(b.0, q))
                            .unwrap()
                            .then(a.1.cmp(&b.1))
                    })
                    .unwrap();
                assert_eq!(*t.nearest(q).payload, want.1);
            }
        }
    }
}
