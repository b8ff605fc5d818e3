//! Domains, metrics, reference measures and the neighbourhood-measure kernel.
//!
//! A particle `x = (p, c)` blocks the opposite colour in the closed ball of
//! radius `r` around `p`; its neighbourhood is `N(x) = B(p, r) x {opposite(c)}`.
//! Every density in the crate consumes `lambda_bar(N(A))`, the reference
//! measure of a union of such neighbourhoods, computed here.
//!
//! Four domains are supported: an interval, a circle, a square flat torus and
//! a finite set of customer/server types with a compatibility graph. Points
//! are stored as two coordinates; one-dimensional domains ignore the second
//! and finite domains store the type index in the first.

use crate::error::{FifmError, Result};
use crate::intervals::IntervalSet;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;

/// Default torus quadrature step as a fraction of the interaction radius.
pub const DEFAULT_TORUS_STEP: f64 = 1.0 / 256.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Color {
    #[serde(rename = "red", alias = "R", alias = "Red")]
    Red,
    #[serde(rename = "blue", alias = "B", alias = "Blue")]
    Blue,
}

impl Color {
    pub fn opposite(self) -> Color {
        match self {
            Color::Red => Color::Blue,
            Color::Blue => Color::Red,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Color::Red => 0,
            Color::Blue => 1,
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Color::Red => "red",
            Color::Blue => "blue",
        })
    }
}

/// A location in the domain. One-dimensional domains use `x` only; finite
/// domains store the type index in `x`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn line(x: f64) -> Self {
        Self { x, y: 0.0 }
    }

    pub fn plane(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn of_type(t: usize) -> Self {
        Self { x: t as f64, y: 0.0 }
    }

    pub fn type_index(&self) -> usize {
        self.x as usize
    }
}

impl Serialize for Point {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.y == 0.0 {
            s.serialize_f64(self.x)
        } else {
            [self.x, self.y].serialize(s)
        }
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Scalar(f64),
            Pair([f64; 2]),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Scalar(x) => Point::line(x),
            Raw::Pair([x, y]) => Point::plane(x, y),
        })
    }
}

/// A point together with its colour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkedPoint {
    pub pos: Point,
    pub color: Color,
}

impl MarkedPoint {
    pub fn new(pos: Point, color: Color) -> Self {
        Self { pos, color }
    }

    pub fn line(x: f64, color: Color) -> Self {
        Self::new(Point::line(x), color)
    }
}

/// Reference measure of a neighbourhood union, with a quadrature error bound
/// (zero when the value is exact).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasureValue {
    pub value: f64,
    pub error_bound: f64,
}

impl MeasureValue {
    pub fn exact(value: f64) -> Self {
        Self { value, error_bound: 0.0 }
    }
}

/// Customer and server types with a compatibility graph. Customers carry the
/// red colour and servers the blue colour.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteTypes {
    names: Vec<String>,
    colors: Vec<Color>,
    weights: Vec<f64>,
    compat: Vec<Vec<bool>>,
}

impl FiniteTypes {
    /// `edges` join a customer (red) type to a server (blue) type.
    pub fn new(
        names: Vec<String>,
        colors: Vec<Color>,
        weights: Vec<f64>,
        edges: &[(usize, usize)],
    ) -> Result<Self> {
        let n = names.len();
        if n == 0 {
            return Err(FifmError::Argument("finite space needs at least one type".into()));
        }
        if colors.len() != n || weights.len() != n {
            return Err(FifmError::Argument(format!(
                "{} types but {} colours and {} weights",
                n,
                colors.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(FifmError::Argument(format!("type weight {w} must be positive")));
        }
        let mut compat = vec![vec![false; n]; n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(FifmError::Argument(format!("edge ({i}, {j}) refers to an unknown type")));
            }
            if colors[i] == colors[j] {
                return Err(FifmError::Argument(format!(
                    "edge ({}, {}) joins two types on the same side",
                    names[i], names[j]
                )));
            }
            compat[i][j] = true;
            compat[j][i] = true;
        }
        Ok(Self { names, colors, weights, compat })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn color(&self, t: usize) -> Color {
        self.colors[t]
    }

    pub fn weight(&self, t: usize) -> f64 {
        self.weights[t]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn compatible(&self, a: usize, b: usize) -> bool {
        self.compat[a][b]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.len() {
            for j in 0..self.len() {
                if self.compat[i][j] && self.colors[i] == Color::Red {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpaceKind {
    Interval { length: f64 },
    Circle { length: f64 },
    Torus2D { side: f64 },
    Finite(FiniteTypes),
}

/// A domain with its metric, reference measure and interaction radius.
#[derive(Debug, Clone, PartialEq)]
pub struct Space {
    kind: SpaceKind,
    radius: f64,
    torus_step: f64,
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(FifmError::Argument(format!("{name} must be positive and finite, got {v}")))
    }
}

impl Space {
    pub fn interval(length: f64) -> Result<Self> {
        Ok(Self::with_kind(SpaceKind::Interval { length: positive("length", length)? }))
    }

    pub fn circle(length: f64) -> Result<Self> {
        Ok(Self::with_kind(SpaceKind::Circle { length: positive("length", length)? }))
    }

    pub fn torus2d(side: f64) -> Result<Self> {
        Ok(Self::with_kind(SpaceKind::Torus2D { side: positive("side", side)? }))
    }

    pub fn finite(types: FiniteTypes) -> Self {
        Self::with_kind(SpaceKind::Finite(types))
    }

    fn with_kind(kind: SpaceKind) -> Self {
        Self { kind, radius: 1.0, torus_step: DEFAULT_TORUS_STEP }
    }

    /// Overrides the interaction radius (ignored by finite domains).
    pub fn with_radius(mut self, radius: f64) -> Result<Self> {
        self.radius = positive("radius", radius)?;
        Ok(self)
    }

    /// Overrides the torus quadrature step, as a fraction of the radius.
    pub fn with_torus_step(mut self, step: f64) -> Result<Self> {
        self.torus_step = positive("torus step", step)?;
        Ok(self)
    }

    pub fn kind(&self) -> &SpaceKind {
        &self.kind
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn finite_types(&self) -> Option<&FiniteTypes> {
        match &self.kind {
            SpaceKind::Finite(t) => Some(t),
            _ => None,
        }
    }

    pub fn is_one_dimensional(&self) -> bool {
        matches!(self.kind, SpaceKind::Interval { .. } | SpaceKind::Circle { .. })
    }

    /// `lambda(D)`: length, area or total type weight.
    pub fn measure(&self) -> f64 {
        match &self.kind {
            SpaceKind::Interval { length } | SpaceKind::Circle { length } => *length,
            SpaceKind::Torus2D { side } => side * side,
            SpaceKind::Finite(t) => t.total_weight(),
        }
    }

    /// `lambda_bar(D x C)`: the colour-marked reference mass of the whole space.
    pub fn marked_measure(&self) -> f64 {
        match &self.kind {
            SpaceKind::Finite(t) => t.total_weight(),
            _ => 2.0 * self.measure(),
        }
    }

    /// Smallest `lambda_bar(N(x))` over single particles.
    pub fn min_ball_measure(&self) -> f64 {
        let r = self.radius;
        match &self.kind {
            SpaceKind::Interval { length } => r.min(*length),
            SpaceKind::Circle { length } => (2.0 * r).min(*length),
            SpaceKind::Torus2D { side } => {
                if 2.0 * r <= *side {
                    std::f64::consts::PI * r * r
                } else {
                    // Lower bound: the inscribed disk of radius side/2.
                    std::f64::consts::PI * side * side / 4.0
                }
            }
            SpaceKind::Finite(t) => (0..t.len())
                .map(|a| (0..t.len()).filter(|&b| t.compatible(a, b)).map(|b| t.weight(b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn check_point(&self, p: &Point) -> Result<()> {
        let ok = match &self.kind {
            SpaceKind::Interval { length } => p.x >= 0.0 && p.x <= *length && p.y == 0.0,
            SpaceKind::Circle { length } => p.x >= 0.0 && p.x < *length && p.y == 0.0,
            SpaceKind::Torus2D { side } => p.x >= 0.0 && p.x < *side && p.y >= 0.0 && p.y < *side,
            SpaceKind::Finite(t) => p.x >= 0.0 && p.x.fract() == 0.0 && (p.x as usize) < t.len() && p.y == 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(FifmError::Domain(format!("point ({}, {}) lies outside {}", p.x, p.y, self.describe())))
        }
    }

    /// Checks the point and, on finite domains, that the colour matches the type side.
    pub fn check_marked(&self, m: &MarkedPoint) -> Result<()> {
        self.check_point(&m.pos)?;
        if let SpaceKind::Finite(t) = &self.kind {
            let expected = t.color(m.pos.type_index());
            if expected != m.color {
                return Err(FifmError::Domain(format!(
                    "type {} is {} but the particle is marked {}",
                    t.names[m.pos.type_index()],
                    expected,
                    m.color
                )));
            }
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            SpaceKind::Interval { length } => format!("Interval({length})"),
            SpaceKind::Circle { length } => format!("Circle({length})"),
            SpaceKind::Torus2D { side } => format!("Torus2D({side})"),
            SpaceKind::Finite(t) => format!("FiniteTypes({} types)", t.len()),
        }
    }

    /// Metric distance; geodesic on the circle and torus, 0/1/2 on finite types.
    pub fn distance(&self, p: &Point, q: &Point) -> Result<f64> {
        self.check_point(p)?;
        self.check_point(q)?;
        Ok(self.dist(p, q))
    }

    /// Unchecked distance.
    #[inline]
    pub fn dist(&self, p: &Point, q: &Point) -> f64 {
        match &self.kind {
            SpaceKind::Interval { .. } => (p.x - q.x).abs(),
            SpaceKind::Circle { length } => wrap_gap(p.x - q.x, *length),
            SpaceKind::Torus2D { side } => {
                let dx = wrap_gap(p.x - q.x, *side);
                let dy = wrap_gap(p.y - q.y, *side);
                (dx * dx + dy * dy).sqrt()
            }
            SpaceKind::Finite(t) => {
                let (a, b) = (p.type_index(), q.type_index());
                if a == b {
                    0.0
                } else if t.compatible(a, b) {
                    1.0
                } else {
                    2.0
                }
            }
        }
    }

    /// True when `b` lies in `N(a)`: opposite colours within the interaction radius.
    #[inline]
    pub fn compatible(&self, a: &MarkedPoint, b: &MarkedPoint) -> bool {
        if a.color == b.color {
            return false;
        }
        match &self.kind {
            SpaceKind::Finite(t) => t.compatible(a.pos.type_index(), b.pos.type_index()),
            _ => self.dist(&a.pos, &b.pos) <= self.radius,
        }
    }

    /// `lambda_bar(N(A))` for the given marked points.
    pub fn neighborhood_measure(&self, points: &[MarkedPoint]) -> Result<MeasureValue> {
        for m in points {
            self.check_marked(m)?;
        }
        Ok(self.neighborhood_measure_unchecked(points))
    }

    pub(crate) fn neighborhood_measure_unchecked(&self, points: &[MarkedPoint]) -> MeasureValue {
        match &self.kind {
            SpaceKind::Interval { .. } | SpaceKind::Circle { .. } => {
                let sides = self.sides(points);
                MeasureValue::exact(sides.measure())
            }
            SpaceKind::Torus2D { side } => torus_union_area(*side, self.radius, self.radius * self.torus_step, points),
            SpaceKind::Finite(t) => {
                let mut covered = vec![false; t.len()];
                for m in points {
                    let a = m.pos.type_index();
                    for (b, c) in covered.iter_mut().enumerate() {
                        if t.compatible(a, b) {
                            *c = true;
                        }
                    }
                }
                MeasureValue::exact(covered.iter().zip(&t.weights).filter(|(c, _)| **c).map(|(_, w)| w).sum())
            }
        }
    }

    /// `lambda_bar(N(x) \ N(prefix))`.
    pub fn priority_region_measure(&self, prefix: &[MarkedPoint], x: &MarkedPoint) -> Result<MeasureValue> {
        for m in prefix {
            self.check_marked(m)?;
        }
        self.check_marked(x)?;
        Ok(self.priority_region_measure_unchecked(prefix, x))
    }

    pub(crate) fn priority_region_measure_unchecked(&self, prefix: &[MarkedPoint], x: &MarkedPoint) -> MeasureValue {
        match &self.kind {
            SpaceKind::Interval { .. } | SpaceKind::Circle { .. } => {
                let ball = self.ball(x.pos.x);
                let blocked: Vec<MarkedPoint> = prefix.iter().filter(|m| m.color == x.color).copied().collect();
                let prior = self.sides(&blocked).side(x.color.opposite()).clone();
                MeasureValue::exact(ball.difference(&prior).measure())
            }
            SpaceKind::Torus2D { .. } | SpaceKind::Finite(_) => {
                let same: Vec<MarkedPoint> = prefix.iter().filter(|m| m.color == x.color).copied().collect();
                let mut with_x = same.clone();
                with_x.push(*x);
                let a = self.neighborhood_measure_unchecked(&with_x);
                let b = self.neighborhood_measure_unchecked(&same);
                MeasureValue { value: (a.value - b.value).max(0.0), error_bound: a.error_bound + b.error_bound }
            }
        }
    }

    /// Closed ball around `x` on a one-dimensional domain, as a subset of `[0, L]`.
    pub(crate) fn ball(&self, x: f64) -> IntervalSet {
        let r = self.radius;
        match &self.kind {
            SpaceKind::Interval { length } => IntervalSet::single((x - r).max(0.0), (x + r).min(*length)),
            SpaceKind::Circle { length } => circle_arc(x - r, x + r, *length),
            _ => unreachable!("ball() is only defined on one-dimensional domains"),
        }
    }

    /// The two colour sides of `N(A)` on a one-dimensional domain.
    pub(crate) fn sides(&self, points: &[MarkedPoint]) -> Sides {
        let r = self.radius;
        let mut red = Vec::new();
        let mut blue = Vec::new();
        for m in points {
            // A red particle blocks blue arrivals and vice versa.
            let target = match m.color {
                Color::Red => &mut blue,
                Color::Blue => &mut red,
            };
            match &self.kind {
                SpaceKind::Interval { length } => target.push(((m.pos.x - r).max(0.0), (m.pos.x + r).min(*length))),
                SpaceKind::Circle { length } => target.extend(circle_arc(m.pos.x - r, m.pos.x + r, *length).parts()),
                _ => unreachable!("sides() is only defined on one-dimensional domains"),
            }
        }
        Sides { red: IntervalSet::from_intervals(red), blue: IntervalSet::from_intervals(blue) }
    }

    /// The whole one-dimensional domain as an interval set.
    #[allow(dead_code)]
    pub(crate) fn full_set(&self) -> IntervalSet {
        match &self.kind {
            SpaceKind::Interval { length } | SpaceKind::Circle { length } => IntervalSet::single(0.0, *length),
            _ => unreachable!("full_set() is only defined on one-dimensional domains"),
        }
    }

    /// Draws a colour-marked point from the normalised reference measure.
    pub fn sample_marked<R: Rng + ?Sized>(&self, rng: &mut R) -> MarkedPoint {
        match &self.kind {
            SpaceKind::Interval { length } | SpaceKind::Circle { length } => {
                let x = rng.random::<f64>() * length;
                let color = if rng.random::<bool>() { Color::Red } else { Color::Blue };
                MarkedPoint::line(x, color)
            }
            SpaceKind::Torus2D { side } => {
                let x = rng.random::<f64>() * side;
                let y = rng.random::<f64>() * side;
                let color = if rng.random::<bool>() { Color::Red } else { Color::Blue };
                MarkedPoint::new(Point::plane(x, y), color)
            }
            SpaceKind::Finite(t) => {
                let mut u = rng.random::<f64>() * t.total_weight();
                let mut k = t.len() - 1;
                for (i, w) in t.weights.iter().enumerate() {
                    if u < *w {
                        k = i;
                        break;
                    }
                    u -= w;
                }
                MarkedPoint::new(Point::of_type(k), t.color(k))
            }
        }
    }

    /// Parses a JSON space descriptor.
    pub fn from_json(text: &str) -> Result<Self> {
        let d: SpaceDescriptor = serde_json::from_str(text)?;
        d.build()
    }

    pub fn to_descriptor(&self) -> SpaceDescriptor {
        let radius = if self.radius == 1.0 { None } else { Some(self.radius) };
        match &self.kind {
            SpaceKind::Interval { length } => SpaceDescriptor::Interval { length: *length, radius },
            SpaceKind::Circle { length } => SpaceDescriptor::Circle { length: *length, radius },
            SpaceKind::Torus2D { side } => SpaceDescriptor::Torus2d { side: *side, radius },
            SpaceKind::Finite(t) => SpaceDescriptor::Finite {
                types: t.names.clone(),
                edges: t.edges().into_iter().map(|(i, j)| [i, j]).collect(),
                weights: Some(t.weights.clone()),
                sides: Some(
                    t.colors
                        .iter()
                        .map(|c| match c {
                            Color::Red => Side::Customer,
                            Color::Blue => Side::Server,
                        })
                        .collect(),
                ),
            },
        }
    }
}

/// The two colour sides of a neighbourhood union on a one-dimensional domain.
/// `red` holds the positions where red arrivals are blocked.
#[derive(Debug, Clone, Default)]
pub(crate) struct Sides {
    pub red: IntervalSet,
    pub blue: IntervalSet,
}

impl Sides {
    pub fn side(&self, c: Color) -> &IntervalSet {
        match c {
            Color::Red => &self.red,
            Color::Blue => &self.blue,
        }
    }

    pub fn measure(&self) -> f64 {
        self.red.measure() + self.blue.measure()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    #[serde(alias = "red", alias = "c")]
    Customer,
    #[serde(alias = "blue", alias = "s")]
    Server,
}

/// JSON form of a [`Space`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SpaceDescriptor {
    Interval {
        length: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
    },
    Circle {
        length: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
    },
    Torus2d {
        side: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
    },
    Finite {
        types: Vec<String>,
        edges: Vec<[usize; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
        /// Side of each type; when absent the first endpoint of every edge is a customer.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sides: Option<Vec<Side>>,
    },
}

impl SpaceDescriptor {
    pub fn build(&self) -> Result<Space> {
        let with_radius = |s: Space, r: &Option<f64>| match r {
            Some(r) => s.with_radius(*r),
            None => Ok(s),
        };
        match self {
            SpaceDescriptor::Interval { length, radius } => with_radius(Space::interval(*length)?, radius),
            SpaceDescriptor::Circle { length, radius } => with_radius(Space::circle(*length)?, radius),
            SpaceDescriptor::Torus2d { side, radius } => with_radius(Space::torus2d(*side)?, radius),
            SpaceDescriptor::Finite { types, edges, weights, sides } => {
                let n = types.len();
                let weights = weights.clone().unwrap_or_else(|| vec![1.0; n]);
                let colors: Vec<Color> = match sides {
                    Some(s) => {
                        if s.len() != n {
                            return Err(FifmError::Schema(format!("{} sides for {} types", s.len(), n)));
                        }
                        s.iter()
                            .map(|s| match s {
                                Side::Customer => Color::Red,
                                Side::Server => Color::Blue,
                            })
                            .collect()
                    }
                    None => {
                        let mut c: Vec<Option<Color>> = vec![None; n];
                        for [i, j] in edges {
                            for (k, col) in [(*i, Color::Red), (*j, Color::Blue)] {
                                let slot = c.get_mut(k).ok_or_else(|| {
                                    FifmError::Schema(format!("edge endpoint {k} is not a type index"))
                                })?;
                                if slot.is_some_and(|prev| prev != col) {
                                    return Err(FifmError::Schema(format!(
                                        "type {k} appears as both customer and server; give explicit sides"
                                    )));
                                }
                                *slot = Some(col);
                            }
                        }
                        c.into_iter().map(|c| c.unwrap_or(Color::Red)).collect()
                    }
                };
                let edges: Vec<(usize, usize)> = edges.iter().map(|[i, j]| (*i, *j)).collect();
                Ok(Space::finite(FiniteTypes::new(types.clone(), colors, weights, &edges)?))
            }
        }
    }
}

#[inline]
fn wrap_gap(d: f64, l: f64) -> f64 {
    let a = d.abs() % l;
    a.min(l - a)
}

/// The arc `[a, b]` on a circle of circumference `l`, unwrapped into `[0, l]`.
fn circle_arc(a: f64, b: f64, l: f64) -> IntervalSet {
    if b - a >= l {
        return IntervalSet::single(0.0, l);
    }
    let a0 = a.rem_euclid(l);
    let b0 = a0 + (b - a);
    if b0 <= l {
        IntervalSet::single(a0, b0)
    } else {
        IntervalSet::from_intervals([(a0, l), (0.0, b0 - l)])
    }
}

/// Area of the union of disks on the torus, per colour, by horizontal strips.
///
/// Each strip contributes its midline chord-union length times the strip
/// height. The union length is 1-Lipschitz in every chord endpoint, and every
/// endpoint has total variation `2r` over one disk, so the total error is at
/// most `h * 4r` per disk.
fn torus_union_area(side: f64, r: f64, step: f64, points: &[MarkedPoint]) -> MeasureValue {
    if points.is_empty() {
        return MeasureValue::exact(0.0);
    }
    let rows = (side / step).ceil().max(1.0) as usize;
    let h = side / rows as f64;
    let mut total = 0.0;
    for color in [Color::Red, Color::Blue] {
        let centres: Vec<&Point> = points.iter().filter(|m| m.color == color).map(|m| &m.pos).collect();
        if centres.is_empty() {
            continue;
        }
        let mut buf = Vec::new();
        for k in 0..rows {
            let y = (k as f64 + 0.5) * h;
            buf.clear();
            for c in &centres {
                for shift in [-side, 0.0, side] {
                    let dy = (y - c.y - shift).abs();
                    if dy <= r {
                        let half = (r * r - dy * dy).sqrt();
                        buf.extend(circle_arc(c.x - half, c.x + half, side).parts().iter().copied());
                    }
                }
            }
            total += IntervalSet::from_intervals(buf.iter().copied()).measure() * h;
        }
    }
    MeasureValue { value: total, error_bound: h * 4.0 * r * points.len() as f64 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn red(x: f64) -> MarkedPoint {
        MarkedPoint::line(x, Color::Red)
    }
    fn blue(x: f64) -> MarkedPoint {
        MarkedPoint::line(x, Color::Blue)
    }

    fn single_edge() -> Space {
        Space::finite(
            FiniteTypes::new(vec!["c1".into(), "s1".into()], vec![Color::Red, Color::Blue], vec![1.0, 1.0], &[(0, 1)])
                .unwrap(),
        )
    }

    #[test]
    fn opposite_is_an_involution() {
        for c in [Color::Red, Color::Blue] {
            assert_ne!(c.opposite(), c);
            assert_eq!(c.opposite().opposite(), c);
        }
    }

    #[test]
    fn distance_examples() {
        let i5 = Space::interval(5.0).unwrap();
        assert_relative_eq!(i5.distance(&Point::line(1.0), &Point::line(3.5)).unwrap(), 2.5);
        let c3 = Space::circle(3.0).unwrap();
        assert_relative_eq!(c3.distance(&Point::line(0.2), &Point::line(2.9)).unwrap(), 0.3, epsilon = 1e-12);
        let f = single_edge();
        assert_eq!(f.distance(&Point::of_type(0), &Point::of_type(1)).unwrap(), 1.0);
        assert_eq!(f.distance(&Point::of_type(1), &Point::of_type(1)).unwrap(), 0.0);
        assert!(matches!(i5.distance(&Point::line(6.0), &Point::line(1.0)), Err(FifmError::Domain(_))));
    }

    #[test]
    fn neighborhood_measure_examples() {
        let s = Space::interval(5.0).unwrap();
        let m = |v: &[MarkedPoint]| s.neighborhood_measure(v).unwrap().value;
        assert_eq!(m(&[]), 0.0);
        assert_relative_eq!(m(&[red(2.0)]), 2.0);
        assert_relative_eq!(m(&[red(2.0), red(2.5)]), 2.5);
        assert_relative_eq!(m(&[red(2.0), blue(4.0)]), 4.0);
    }

    #[test]
    fn priority_region_examples() {
        let s = Space::interval(5.0).unwrap();
        let w = |p: &[MarkedPoint], x: MarkedPoint| s.priority_region_measure(p, &x).unwrap().value;
        assert_relative_eq!(w(&[], red(2.0)), 2.0);
        assert_relative_eq!(w(&[red(2.0)], red(2.5)), 0.5);
        // An opposite-colour prefix blocks the other side, so W_x = N(x) = [1.5, 3.5].
        assert_relative_eq!(w(&[blue(2.0)], red(2.5)), 2.0);
    }

    #[test]
    fn finite_measure_counts_compatible_weight() {
        let s = single_edge();
        let c = MarkedPoint::new(Point::of_type(0), Color::Red);
        assert_eq!(s.neighborhood_measure(&[c]).unwrap().value, 1.0);
        let bad = MarkedPoint::new(Point::of_type(0), Color::Blue);
        assert!(s.neighborhood_measure(&[bad]).is_err());
    }

    #[test]
    fn circle_ball_wraps() {
        let s = Space::circle(3.0).unwrap();
        assert_relative_eq!(s.neighborhood_measure(&[red(0.2)]).unwrap().value, 2.0, epsilon = 1e-12);
        let small = Space::circle(1.5).unwrap();
        assert_relative_eq!(small.neighborhood_measure(&[red(0.2)]).unwrap().value, 1.5);
    }

    #[test]
    fn torus_single_disk_area() {
        let s = Space::torus2d(10.0).unwrap();
        let v = s.neighborhood_measure(&[MarkedPoint::new(Point::plane(0.3, 9.9), Color::Red)]).unwrap();
        assert!((v.value - std::f64::consts::PI).abs() <= v.error_bound);
        assert!(v.error_bound < 0.02);
    }

    #[test]
    fn descriptor_round_trip() {
        for text in [
            r#"{"kind":"interval","length":5.0}"#,
            r#"{"kind":"circle","length":3.0}"#,
            r#"{"kind":"torus2d","side":20.0}"#,
            r#"{"kind":"finite","types":["c1","s1"],"edges":[[0,1]],"weights":[1.0,2.0]}"#,
        ] {
            let s = Space::from_json(text).unwrap();
            let back = serde_json::to_string(&s.to_descriptor()).unwrap();
            assert_eq!(Space::from_json(&back).unwrap(), s);
        }
        assert!(Space::from_json(r#"{"kind":"interval","length":-1}"#).is_err());
        assert!(Space::from_json(r#"{"kind":"sphere","radius":1}"#).is_err());
    }

    fn arb_line_points(len: f64) -> impl Strategy<Value = Vec<MarkedPoint>> {
        prop::collection::vec((0.0..len, any::<bool>()), 0..8).prop_map(|v| {
            v.into_iter().map(|(x, r)| MarkedPoint::line(x, if r { Color::Red } else { Color::Blue })).collect()
        })
    }

    proptest! {
        #[test]
        fn circle_metric_axioms(a in 0.0..7.0f64, b in 0.0..7.0f64, c in 0.0..7.0f64) {
            let s = Space::circle(7.0).unwrap();
            let (p, q, r) = (Point::line(a), Point::line(b), Point::line(c));
            prop_assert!((s.dist(&p, &q) - s.dist(&q, &p)).abs() < 1e-12);
            prop_assert!(s.dist(&p, &r) <= s.dist(&p, &q) + s.dist(&q, &r) + 1e-12);
        }

        #[test]
        fn torus_metric_axioms(a in (0.0..5.0f64, 0.0..5.0f64), b in (0.0..5.0f64, 0.0..5.0f64), c in (0.0..5.0f64, 0.0..5.0f64)) {
            let s = Space::torus2d(5.0).unwrap();
            let (p, q, r) = (Point::plane(a.0, a.1), Point::plane(b.0, b.1), Point::plane(c.0, c.1));
            prop_assert!((s.dist(&p, &q) - s.dist(&q, &p)).abs() < 1e-12);
            prop_assert!(s.dist(&p, &r) <= s.dist(&p, &q) + s.dist(&q, &r) + 1e-12);
        }

        #[test]
        fn measure_is_monotone(a in arb_line_points(6.0), extra in arb_line_points(6.0)) {
            for s in [Space::interval(6.0).unwrap(), Space::circle(6.0).unwrap()] {
                let base = s.neighborhood_measure(&a).unwrap().value;
                let mut all = a.clone();
                all.extend(extra.iter().copied());
                let more = s.neighborhood_measure(&all).unwrap().value;
                prop_assert!(more + 1e-12 >= base);
                prop_assert!(more <= s.marked_measure() + 1e-12);
            }
        }

        #[test]
        fn measure_is_subadditive(a in arb_line_points(6.0), b in arb_line_points(6.0)) {
            let s = Space::interval(6.0).unwrap();
            let mut all = a.clone();
            all.extend(b.iter().copied());
            let u = s.neighborhood_measure(&all).unwrap().value;
            let sum = s.neighborhood_measure(&a).unwrap().value + s.neighborhood_measure(&b).unwrap().value;
            prop_assert!(u <= sum + 1e-12);
        }

        #[test]
        fn priority_region_bounded_by_ball(a in arb_line_points(6.0), x in 0.0..6.0f64) {
            let s = Space::circle(6.0).unwrap();
            let p = MarkedPoint::line(x, Color::Red);
            let w = s.priority_region_measure(&a, &p).unwrap().value;
            prop_assert!(w <= s.neighborhood_measure(&[p]).unwrap().value + 1e-12);
        }
    }

    /// Hit-or-miss estimate of the union measure, drawn directly from the ball definition.
    fn monte_carlo_measure(s: &Space, pts: &[MarkedPoint], n: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let mass = s.marked_measure();
        let mut hits = 0usize;
        for _ in 0..n {
            let q = s.sample_marked(rng);
            if pts.iter().any(|m| m.color != q.color && s.dist(&m.pos, &q.pos) <= 1.0) {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        (mass * p, mass * (p * (1.0 - p) / n as f64).sqrt())
    }

    #[test]
    fn one_dimensional_measure_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let s = if trial % 2 == 0 { Space::interval(6.0).unwrap() } else { Space::circle(6.0).unwrap() };
            let k = 1 + trial % 5;
            let pts: Vec<MarkedPoint> = (0..k).map(|_| s.sample_marked(&mut rng)).collect();
            let exact = s.neighborhood_measure(&pts).unwrap().value;
            let (est, se) = monte_carlo_measure(&s, &pts, 40_000, &mut rng);
            assert!((exact - est).abs() <= 3.0 * se.max(1e-9), "trial {trial}: exact {exact} vs {est} +- {se}");
        }
    }

    #[test]
    fn torus_quadrature_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let coarse = Space::torus2d(8.0).unwrap().with_torus_step(1.0 / 64.0).unwrap();
        let fine = coarse.clone().with_torus_step(1.0 / 128.0).unwrap();
        for _ in 0..5 {
            let pts: Vec<MarkedPoint> = (0..6).map(|_| coarse.sample_marked(&mut rng)).collect();
            let a = coarse.neighborhood_measure(&pts).unwrap();
            let b = fine.neighborhood_measure(&pts).unwrap();
            assert!((a.value - b.value).abs() <= a.error_bound);
        }
    }
}
