//! Static 3-d tree for nearest-neighbour queries.

use crate::geometry::Vec3;

#[derive(Debug)]
pub(crate) struct KdTree {
    points: Vec<Vec3>,
    // permutation of point indices arranged as an implicit balanced tree
    order: Vec<usize>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axes = vec![0u8; points.len()];
        build_rec(points, &mut order, &mut axes);
        KdTree {
            points: points.to_vec(),
            order,
            axes,
        }
    }

    /// Index and squared distance of the closest stored point.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.order.len(), &mut best);
        Some(best)
    }

    fn search(&self, q: &Vec3, lo: usize, hi: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let d2 = (p - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && idx < best.0) {
            *best = (idx, d2);
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, best);
        if diff * diff <= best.1 {
            self.search(q, far.0, far.1, best);
        }
    }
}

fn build_rec(points: &[Vec3], order: &mut [usize], axes: &mut [u8]) {
    if order.len() <= 1 {
        return;
    }
    // split on the axis of largest spread
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &i in order.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let axis = (hi - lo).imax();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    axes[mid] = axis as u8;
    let (left, right) = order.split_at_mut(mid);
    let (laxes, raxes) = axes.split_at_mut(mid);
    build_rec(points, left, laxes);
    build_rec(points, &mut right[1..], &mut raxes[1..]);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let pts: Vec<Vec3> = (0..500)
            .map(|_| Vec3::new(rng.gen_range(-20.0..20.0), rng.gen_range(-5.0..5.0), rng.gen_range(-30.0..30.0)))
            .collect();
        let tree = KdTree::build(&pts);
        for _ in 0..2000 {
            let q = Vec3::new(rng.gen_range(-25.0..25.0), rng.gen_range(-10.0..10.0), rng.gen_range(-35.0..35.0));
            let brute = pts
                .iter()
                .map(|p| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min);
            let (_, d2) = tree.nearest(&q).unwrap();
            assert_eq!(d2, brute);
        }
        assert!(KdTree::build(&[]).nearest(&Vec3::zeros()).is_none());
    }
}
