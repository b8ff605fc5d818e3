//! Ordered configurations, detailed states and the first-in-first-match rule.

use crate::error::{FifmError, Result};
use crate::space::{Color, MarkedPoint, Point, Space};
use serde::{Deserialize, Serialize};

/// A particle: position, colour, arrival time, patience and identifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub pos: Point,
    pub color: Color,
    pub birth: f64,
    pub patience: f64,
    pub id: i64,
}

impl Particle {
    pub fn marked(&self) -> MarkedPoint {
        MarkedPoint::new(self.pos, self.color)
    }

    /// Absolute time at which the particle reneges if still unmatched.
    pub fn expiry(&self) -> f64 {
        self.birth + self.patience
    }
}

/// Particles in priority order: earlier entries are matched first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OrderedConfiguration {
    pub items: Vec<Particle>,
}

impl OrderedConfiguration {
    pub fn new(items: Vec<Particle>) -> Self {
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn marked(&self) -> Vec<MarkedPoint> {
        self.items.iter().map(Particle::marked).collect()
    }

    pub fn count(&self, c: Color) -> usize {
        self.items.iter().filter(|p| p.color == c).count()
    }

    /// Parses the JSON array form `[{pos, color, birth, patience, id}, ...]`.
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Checks domain membership, positive patience and unique ids.
    pub fn check(&self, space: &Space) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for p in &self.items {
            space.check_marked(&p.marked())?;
            if !(p.patience > 0.0) {
                return Err(FifmError::Argument(format!("particle {} has non-positive patience", p.id)));
            }
            if !ids.insert(p.id) {
                return Err(FifmError::Argument(format!("duplicate particle id {}", p.id)));
            }
        }
        Ok(())
    }
}

/// True iff no two particles of opposite colour are within the interaction radius.
pub fn is_valid_configuration(space: &Space, config: &OrderedConfiguration) -> bool {
    is_valid_points(space, &config.marked())
}

pub fn is_valid_points(space: &Space, points: &[MarkedPoint]) -> bool {
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            if space.compatible(a, b) {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mark {
    /// Unmatched: still present in the forward process.
    #[serde(rename = "u")]
    U,
    /// Matched: already departed, kept for the backward bookkeeping.
    #[serde(rename = "m")]
    M,
}

impl Mark {
    pub fn flip(self) -> Mark {
        match self {
            Mark::U => Mark::M,
            Mark::M => Mark::U,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetailedItem {
    pub point: MarkedPoint,
    pub mark: Mark,
}

/// A sequence of marked items tracking both present and already matched particles.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DetailedState {
    pub items: Vec<DetailedItem>,
}

impl DetailedState {
    pub fn new(items: Vec<DetailedItem>) -> Self {
        Self { items }
    }

    /// Number of `u` items among the first `i` entries.
    pub fn unmatched_prefix_count(&self, i: usize) -> usize {
        self.items[..i].iter().filter(|it| it.mark == Mark::U).count()
    }
}

/// Checks the three validity conditions of a detailed state: the head is
/// unmatched, no two unmatched items are compatible, and no matched item is
/// compatible with an earlier unmatched one.
pub fn is_valid_detailed(space: &Space, state: &DetailedState) -> bool {
    if let Some(first) = state.items.first() {
        if first.mark != Mark::U {
            return false;
        }
    }
    for (j, later) in state.items.iter().enumerate() {
        for earlier in &state.items[..j] {
            if earlier.mark == Mark::U && space.compatible(&earlier.point, &later.point) {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchOutcome {
    MatchedAt(usize),
    Accepted,
}

/// Index of the earliest particle compatible with the arrival, if any.
pub fn fifm_match(space: &Space, config: &OrderedConfiguration, arrival: &MarkedPoint) -> MatchOutcome {
    match config.items.iter().position(|p| space.compatible(&p.marked(), arrival)) {
        Some(i) => MatchOutcome::MatchedAt(i),
        None => MatchOutcome::Accepted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn particle(x: f64, c: Color, id: i64) -> Particle {
        Particle { pos: Point::line(x), color: c, birth: id as f64, patience: 1.0, id }
    }

    fn cfg(v: &[(f64, Color)]) -> OrderedConfiguration {
        OrderedConfiguration::new(v.iter().enumerate().map(|(i, &(x, c))| particle(x, c, i as i64)).collect())
    }

    fn item(x: f64, c: Color, mark: Mark) -> DetailedItem {
        DetailedItem { point: MarkedPoint::line(x, c), mark }
    }

    use Color::{Blue as B, Red as R};

    #[test]
    fn validity_examples() {
        let s = Space::interval(5.0).unwrap();
        assert!(!is_valid_configuration(&s, &cfg(&[(2.0, R), (2.5, B)])));
        assert!(is_valid_configuration(&s, &cfg(&[(0.5, R), (2.0, B)])));
        assert!(is_valid_configuration(&s, &cfg(&[])));
        assert!(!is_valid_configuration(&s, &cfg(&[(1.0, R), (2.0, B)])));
    }

    #[test]
    fn detailed_validity_examples() {
        let s = Space::interval(5.0).unwrap();
        let st = |v: Vec<DetailedItem>| DetailedState::new(v);
        assert!(is_valid_detailed(&s, &st(vec![item(2.0, R, Mark::U)])));
        assert!(!is_valid_detailed(&s, &st(vec![item(2.0, R, Mark::M)])));
        assert!(!is_valid_detailed(&s, &st(vec![item(2.0, R, Mark::U), item(2.5, B, Mark::M)])));
        assert!(is_valid_detailed(&s, &st(vec![item(2.0, R, Mark::U), item(2.5, R, Mark::M), item(3.5, B, Mark::M)])));
        assert!(!is_valid_detailed(&s, &st(vec![item(2.0, R, Mark::U), item(2.9, B, Mark::U)])));
        assert!(is_valid_detailed(&s, &st(vec![])));
    }

    #[test]
    fn match_examples() {
        let s = Space::interval(5.0).unwrap();
        let m = |c: &[(f64, Color)], a: MarkedPoint| fifm_match(&s, &cfg(c), &a);
        assert_eq!(m(&[(1.0, R), (1.6, R)], MarkedPoint::line(1.2, B)), MatchOutcome::MatchedAt(0));
        assert_eq!(m(&[(1.0, R)], MarkedPoint::line(3.0, B)), MatchOutcome::Accepted);
        assert_eq!(m(&[(1.0, B), (1.6, R)], MarkedPoint::line(1.2, B)), MatchOutcome::MatchedAt(1));
    }

    #[test]
    fn configuration_json_round_trip() {
        let c = cfg(&[(1.0, R), (3.5, B)]);
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"pos\":1.0") && text.contains("\"color\":\"red\""));
        assert_eq!(OrderedConfiguration::from_json(&text).unwrap(), c);
    }

    fn valid_config() -> impl Strategy<Value = OrderedConfiguration> {
        prop::collection::vec((0.0..8.0f64, any::<bool>()), 0..10).prop_map(|v| {
            let s = Space::interval(8.0).unwrap();
            let mut out: Vec<Particle> = Vec::new();
            for (i, (x, r)) in v.into_iter().enumerate() {
                let p = particle(x, if r { R } else { B }, i as i64);
                if out.iter().all(|q| !s.compatible(&q.marked(), &p.marked())) {
                    out.push(p);
                }
            }
            OrderedConfiguration::new(out)
        })
    }

    proptest! {
        #[test]
        fn match_agrees_with_priority_regions(c in valid_config(), x in 0.0..8.0f64, red in any::<bool>()) {
            let s = Space::interval(8.0).unwrap();
            let a = MarkedPoint::line(x, if red { R } else { B });
            let outcome = fifm_match(&s, &c, &a);
            let pts = c.marked();
            for (i, p) in pts.iter().enumerate() {
                // The arrival lies in W_i iff it is in N(x_i) and outside N(prefix).
                let in_w = s.compatible(p, &a) && !pts[..i].iter().any(|q| s.compatible(q, &a));
                prop_assert_eq!(in_w, outcome == MatchOutcome::MatchedAt(i));
            }
        }

        #[test]
        fn transitions_preserve_validity_and_order(c in valid_config(), x in 0.0..8.0f64, red in any::<bool>()) {
            let s = Space::interval(8.0).unwrap();
            let a = particle(x, if red { R } else { B }, 1000);
            let mut next = c.clone();
            match fifm_match(&s, &c, &a.marked()) {
                MatchOutcome::Accepted => next.items.push(a),
                MatchOutcome::MatchedAt(i) => {
                    next.items.remove(i);
                    prop_assert_eq!(next.len() + 1, c.len());
                    let ids: Vec<i64> = c.items.iter().map(|p| p.id).filter(|&id| id != c.items[i].id).collect();
                    prop_assert_eq!(ids, next.items.iter().map(|p| p.id).collect::<Vec<_>>());
                }
            }
            prop_assert!(is_valid_configuration(&s, &next));
        }
    }
}
