//! Event-driven state of a single FIFM process.
//!
//! Particles are kept in priority order together with an insertion sequence
//! number; the sequence number is strictly increasing along the order. Patience
//! expiries live in a lazy min-heap keyed by `(expiry, id)`. On the torus an
//! optional uniform grid with cells no smaller than the radius restricts the
//! match search to the 3x3 block of cells around the arrival.

use crate::fifm::{OrderedConfiguration, Particle};
use crate::space::{Color, MarkedPoint, Space, SpaceKind};
use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapKey {
    expiry: f64,
    id: i64,
    seq: u64,
}

impl Eq for HeapKey {}

impl Ord for HeapKey {
    fn cmp(&self, o: &Self) -> Ordering {
        self.expiry.total_cmp(&o.expiry).then(self.id.cmp(&o.id)).then(self.seq.cmp(&o.seq))
    }
}

impl PartialOrd for HeapKey {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

#[derive(Debug, Clone)]
struct Grid {
    n: usize,
    cell: f64,
    cells: Vec<Vec<(u64, MarkedPoint)>>,
}

impl Grid {
    fn for_space(space: &Space) -> Option<Grid> {
        match space.kind() {
            SpaceKind::Torus2D { side } => {
                let n = (side / space.radius()).floor() as usize;
                (n >= 4).then(|| Grid { n, cell: side / n as f64, cells: vec![Vec::new(); n * n] })
            }
            _ => None,
        }
    }

    fn coords(&self, m: &MarkedPoint) -> (usize, usize) {
        let cx = ((m.pos.x / self.cell) as usize).min(self.n - 1);
        let cy = ((m.pos.y / self.cell) as usize).min(self.n - 1);
        (cx, cy)
    }

    fn insert(&mut self, seq: u64, m: MarkedPoint) {
        let (cx, cy) = self.coords(&m);
        self.cells[cy * self.n + cx].push((seq, m));
    }

    fn remove(&mut self, seq: u64, m: &MarkedPoint) {
        let (cx, cy) = self.coords(m);
        let cell = &mut self.cells[cy * self.n + cx];
        if let Some(k) = cell.iter().position(|(s, _)| *s == seq) {
            cell.swap_remove(k);
        }
    }

    fn earliest_compatible(&self, space: &Space, a: &MarkedPoint) -> Option<u64> {
        let (cx, cy) = self.coords(a);
        let n = self.n as isize;
        let mut best: Option<u64> = None;
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let x = (cx as isize + dx).rem_euclid(n) as usize;
                let y = (cy as isize + dy).rem_euclid(n) as usize;
                for (seq, m) in &self.cells[y * self.n + x] {
                    if best.is_none_or(|b| *seq < b) && space.compatible(m, a) {
                        best = Some(*seq);
                    }
                }
            }
        }
        best
    }
}

/// Result of offering an arrival to the engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Arrival {
    Accepted,
    Matched(Particle),
}

#[derive(Debug, Clone)]
pub(crate) struct Engine<'s> {
    space: &'s Space,
    order: Vec<(u64, Particle)>,
    heap: BinaryHeap<Reverse<HeapKey>>,
    grid: Option<Grid>,
    next_seq: u64,
    reds: usize,
}

impl<'s> Engine<'s> {
    pub fn new(space: &'s Space) -> Self {
        Self {
            space,
            order: Vec::new(),
            heap: BinaryHeap::new(),
            grid: Grid::for_space(space),
            next_seq: 0,
            reds: 0,
        }
    }

    pub fn with_initial(space: &'s Space, initial: &OrderedConfiguration) -> Self {
        let mut e = Self::new(space);
        for p in &initial.items {
            e.push(*p);
        }
        e
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn reds(&self) -> usize {
        self.reds
    }

    pub fn blues(&self) -> usize {
        self.order.len() - self.reds
    }

    pub fn particles(&self) -> impl Iterator<Item = &Particle> {
        self.order.iter().map(|(_, p)| p)
    }

    pub fn configuration(&self) -> OrderedConfiguration {
        OrderedConfiguration::new(self.particles().copied().collect())
    }

    /// Appends a particle at the lowest priority.
    pub fn push(&mut self, p: Particle) {
        let seq = self.next_seq;
        self.next_seq += 1;
        if let Some(g) = &mut self.grid {
            g.insert(seq, p.marked());
        }
        self.heap.push(Reverse(HeapKey { expiry: p.expiry(), id: p.id, seq }));
        if p.color == Color::Red {
            self.reds += 1;
        }
        self.order.push((seq, p));
    }

    fn index_of_seq(&self, seq: u64) -> Option<usize> {
        self.order.binary_search_by_key(&seq, |(s, _)| *s).ok()
    }

    fn remove_at(&mut self, idx: usize) -> Particle {
        let (seq, p) = self.order.remove(idx);
        if let Some(g) = &mut self.grid {
            g.remove(seq, &p.marked());
        }
        if p.color == Color::Red {
            self.reds -= 1;
        }
        p
    }

    /// Position in priority order of the earliest particle compatible with `a`.
    pub fn find_match(&self, a: &MarkedPoint) -> Option<usize> {
        match &self.grid {
            Some(g) => g.earliest_compatible(self.space, a).and_then(|seq| self.index_of_seq(seq)),
            None => self.order.iter().position(|(_, p)| self.space.compatible(&p.marked(), a)),
        }
    }

    /// Applies the first-in-first-match rule to an arriving particle.
    pub fn arrive(&mut self, p: Particle) -> Arrival {
        match self.find_match(&p.marked()) {
            Some(idx) => Arrival::Matched(self.remove_at(idx)),
            None => {
                debug_assert!(
                    self.particles().all(|q| !self.space.compatible(&q.marked(), &p.marked())),
                    "accepted arrival {} would break validity",
                    p.id
                );
                self.push(p);
                Arrival::Accepted
            }
        }
    }

    /// Earliest pending expiry `(time, id)` among present particles.
    pub fn peek_expiry(&mut self) -> Option<(f64, i64)> {
        while let Some(Reverse(k)) = self.heap.peek() {
            if self.index_of_seq(k.seq).is_some() {
                return Some((k.expiry, k.id));
            }
            self.heap.pop();
        }
        None
    }

    /// Removes and returns the particle with the earliest expiry.
    pub fn pop_expiry(&mut self) -> Option<Particle> {
        self.peek_expiry()?;
        let Reverse(k) = self.heap.pop()?;
        let idx = self.index_of_seq(k.seq)?;
        Some(self.remove_at(idx))
    }
}
