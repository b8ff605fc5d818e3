//! Finite unions of closed intervals on the real line.
//!
//! Used for exact neighbourhood measures and for uniform sampling on
//! complements in one dimension.

/// Sorted, pairwise disjoint closed intervals `[a, b]` with `a < b`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntervalSet {
    parts: Vec<(f64, f64)>,
}

impl IntervalSet {
    pub fn empty() -> Self {
        Self { parts: Vec::new() }
    }

    pub fn single(a: f64, b: f64) -> Self {
        let mut s = Self::empty();
        s.insert(a, b);
        s
    }

    /// Builds the union of arbitrary intervals.
    pub fn from_intervals<I: IntoIterator<Item = (f64, f64)>>(items: I) -> Self {
        let mut v: Vec<(f64, f64)> = items.into_iter().filter(|(a, b)| b > a).collect();
        v.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut parts: Vec<(f64, f64)> = Vec::with_capacity(v.len());
        for (a, b) in v {
            match parts.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => parts.push((a, b)),
            }
        }
        Self { parts }
    }

    pub fn parts(&self) -> &[(f64, f64)] {
        &self.parts
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn insert(&mut self, a: f64, b: f64) {
        if b <= a {
            return;
        }
        let mut all = std::mem::take(&mut self.parts);
        all.push((a, b));
        *self = Self::from_intervals(all);
    }

    pub fn union(&self, other: &Self) -> Self {
        Self::from_intervals(self.parts.iter().chain(other.parts.iter()).copied())
    }

    pub fn intersect(&self, other: &Self) -> Self {
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < self.parts.len() && j < other.parts.len() {
            let (a1, b1) = self.parts[i];
            let (a2, b2) = other.parts[j];
            let lo = a1.max(a2);
            let hi = b1.min(b2);
            if hi > lo {
                out.push((lo, hi));
            }
            if b1 < b2 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self { parts: out }
    }

    /// Closure of `self` minus `other`; differs from the set difference on a null set.
    pub fn difference(&self, other: &Self) -> Self {
        let mut out = Vec::new();
        for &(a, b) in &self.parts {
            let mut cur = a;
            for &(c, d) in &other.parts {
                if d <= cur || c >= b {
                    continue;
                }
                if c > cur {
                    out.push((cur, c));
                }
                cur = cur.max(d);
                if cur >= b {
                    break;
                }
            }
            if cur < b {
                out.push((cur, b));
            }
        }
        Self { parts: out }
    }

    pub fn measure(&self) -> f64 {
        self.parts.iter().map(|(a, b)| b - a).sum()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.parts.iter().any(|&(a, b)| a <= x && x <= b)
    }

    /// Maps `u` in `[0, measure)` to the point at that cumulative length.
    pub fn point_at(&self, u: f64) -> Option<f64> {
        let mut rest = u;
        for &(a, b) in &self.parts {
            let len = b - a;
            if rest < len {
                return Some(a + rest);
            }
            rest -= len;
        }
        self.parts.last().map(|&(_, b)| b)
    }

    /// All interval endpoints, sorted.
    pub fn endpoints(&self) -> Vec<f64> {
        self.parts.iter().flat_map(|&(a, b)| [a, b]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn union_merges_overlaps() {
        let s = IntervalSet::from_intervals([(0.0, 1.0), (0.5, 2.0), (3.0, 4.0)]);
        assert_eq!(s.parts(), &[(0.0, 2.0), (3.0, 4.0)]);
        assert_eq!(s.measure(), 3.0);
    }

    #[test]
    fn difference_and_intersection_partition() {
        let a = IntervalSet::from_intervals([(0.0, 5.0)]);
        let b = IntervalSet::from_intervals([(1.0, 2.0), (3.0, 3.5)]);
        let d = a.difference(&b);
        assert_eq!(d.parts(), &[(0.0, 1.0), (2.0, 3.0), (3.5, 5.0)]);
        let i = a.intersect(&b);
        assert!((d.measure() + i.measure() - a.measure()).abs() < 1e-15);
    }

    #[test]
    fn point_at_inverts_cumulative_length() {
        let s = IntervalSet::from_intervals([(0.0, 1.0), (2.0, 3.0)]);
        assert_eq!(s.point_at(0.5), Some(0.5));
        assert_eq!(s.point_at(1.5), Some(2.5));
    }
}
