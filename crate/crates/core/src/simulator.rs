//! Driving Poisson process, exact forward simulation and the generator.
//!
//! Events are replayed in time order: the next event is the earlier of the
//! next arrival and the earliest patience expiry, with ties broken by
//! `(time, id)`. Arrivals go through the first-in-first-match rule.
//!
//! Log bookkeeping: an `arrival` record leaves the state size unchanged, an
//! `acceptance` adds one, and `match_departure` and `reneging` each remove one.
//! So an arrival that matches nets to `-1` overall: the partner departs and
//! the arrival never joins.

use crate::engine::{Arrival, Engine};
use crate::error::{FifmError, Result};
use crate::fifm::{is_valid_configuration, OrderedConfiguration, Particle};
use crate::rng::{self, StreamRng};
use crate::space::{Color, MarkedPoint, Space, SpaceKind};
use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

/// Arrival intensity (density of the arrival measure with respect to the
/// reference measure, per colour) and reneging rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub intensity: f64,
    pub mu: f64,
}

impl ModelParams {
    pub fn new(intensity: f64, mu: f64) -> Result<Self> {
        let p = Self { intensity, mu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.intensity.is_finite() && self.intensity > 0.0) {
            return Err(FifmError::Argument(format!("intensity must be positive, got {}", self.intensity)));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(FifmError::Argument(format!("mu must be positive, got {}", self.mu)));
        }
        Ok(())
    }

    /// Total arrival rate `intensity * lambda_bar(D x C)`.
    pub fn arrival_rate(&self, space: &Space) -> f64 {
        self.intensity * space.marked_measure()
    }
}

/// Draws the arrivals of `[t0, t1)` from `rng`, with ids starting at `first_id`.
pub fn sample_arrivals(
    space: &Space,
    params: &ModelParams,
    t0: f64,
    t1: f64,
    first_id: i64,
    rng: &mut StreamRng,
) -> Vec<Particle> {
    let mean = params.arrival_rate(space) * (t1 - t0);
    let n = if mean > 0.0 { Poisson::new(mean).expect("positive Poisson mean").sample(rng) as usize } else { 0 };
    let exp = Exp::new(params.mu).expect("positive reneging rate");
    let mut births: Vec<f64> = (0..n).map(|_| t0 + rng.random::<f64>() * (t1 - t0)).collect();
    births.sort_by(f64::total_cmp);
    births
        .into_iter()
        .enumerate()
        .map(|(k, birth)| {
            let m = space.sample_marked(rng);
            Particle { pos: m.pos, color: m.color, birth, patience: exp.sample(rng), id: first_id + k as i64 }
        })
        .collect()
}

/// Arrivals of `[t0, t1)` assembled from unit time blocks `[k, k + 1)`, each
/// drawn from its own block stream, with ids starting at `first_id`. A block's
/// arrivals do not depend on `t0` or `t1`, so widening the window extends the
/// same realisation.
pub fn blocked_arrivals(
    space: &Space,
    params: &ModelParams,
    seed: u64,
    stream: u64,
    t0: f64,
    t1: f64,
    first_id: i64,
) -> Vec<Particle> {
    let mut out = Vec::new();
    if !(t1 > t0) {
        return out;
    }
    for k in t0.floor() as i64..t1.ceil() as i64 {
        let mut g = rng::block_stream(seed, stream, k);
        let block = sample_arrivals(space, params, k as f64, (k + 1) as f64, 0, &mut g);
        out.extend(block.into_iter().filter(|p| p.birth >= t0 && p.birth < t1));
    }
    for (i, p) in out.iter_mut().enumerate() {
        p.id = first_id + i as i64;
    }
    out
}

/// The driving process on `[t0, t1)`, sorted by birth with ids `0, 1, ...`.
pub fn generate_driving_process(
    space: &Space,
    params: &ModelParams,
    t0: f64,
    t1: f64,
    seed: u64,
) -> Result<Vec<Particle>> {
    params.validate()?;
    if !(t0.is_finite() && t1.is_finite()) || t0 > t1 {
        return Err(FifmError::Argument(format!("time window [{t0}, {t1}] is not ordered")));
    }
    let mut rng = rng::stream(seed, 0);
    Ok(sample_arrivals(space, params, t0, t1, 0, &mut rng))
}

/// Draws an initial configuration: i.i.d. uniform particles of one colour,
/// Poisson many with mean `density * lambda(D)`, born at `t` with fresh patience.
pub fn poisson_initial(
    space: &Space,
    params: &ModelParams,
    density: f64,
    color: Color,
    t: f64,
    rng: &mut StreamRng,
) -> OrderedConfiguration {
    let mean = density * space.measure();
    let n = if mean > 0.0 { Poisson::new(mean).expect("positive mean").sample(rng) as usize } else { 0 };
    let exp = Exp::new(params.mu).expect("positive reneging rate");
    let items = (0..n)
        .map(|k| {
            let mut m = space.sample_marked(rng);
            if let SpaceKind::Finite(_) = space.kind() {
                // Finite types carry their colour; redraw until the side matches.
                while m.color != color {
                    m = space.sample_marked(rng);
                }
            }
            Particle { pos: m.pos, color, birth: t, patience: exp.sample(rng), id: k as i64 - n as i64 }
        })
        .collect();
    OrderedConfiguration::new(items)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Arrival { id: i64 },
    MatchDeparture { arrival: i64, matched: i64 },
    Reneging { id: i64 },
    Acceptance { id: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventLogRecord {
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
    pub state_size_after: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogLevel {
    /// No per-event records.
    None,
    /// Acceptances, match departures and reneging.
    #[default]
    Transitions,
    /// Also an `arrival` record before every acceptance or match.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub log: LogLevel,
    /// Record a `(time, total, reds, blues)` row every `stats_interval`.
    pub stats_interval: Option<f64>,
    /// Start of the statistics window; defaults to the earliest event or 0.
    pub start_time: Option<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { log: LogLevel::Transitions, stats_interval: None, start_time: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StatsRow {
    pub time: f64,
    pub total: usize,
    pub reds: usize,
    pub blues: usize,
}

/// Online summary of a run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RunStats {
    pub t_start: f64,
    pub t_end: f64,
    pub arrivals: u64,
    pub acceptances: u64,
    pub matches: u64,
    pub reneges: u64,
    pub mean_total: f64,
    pub mean_reds: f64,
    pub mean_blues: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub final_state: OrderedConfiguration,
    pub log: Vec<EventLogRecord>,
    pub rows: Vec<StatsRow>,
    pub stats: RunStats,
}

/// Replays `events` from `initial` up to `t_end` and returns the final state and the log.
pub fn simulate(
    space: &Space,
    params: &ModelParams,
    initial: &OrderedConfiguration,
    events: &[Particle],
    t_end: f64,
) -> Result<(OrderedConfiguration, Vec<EventLogRecord>)> {
    let r = simulate_with(space, params, initial, events, t_end, &SimOptions::default())?;
    Ok((r.final_state, r.log))
}

pub fn simulate_with(
    space: &Space,
    params: &ModelParams,
    initial: &OrderedConfiguration,
    events: &[Particle],
    t_end: f64,
    opts: &SimOptions,
) -> Result<SimulationResult> {
    params.validate()?;
    initial.check(space)?;
    if !is_valid_configuration(space, initial) {
        return Err(FifmError::Argument("initial configuration has a compatible pair".into()));
    }
    for e in events {
        space.check_marked(&e.marked())?;
        if !(e.patience > 0.0) {
            return Err(FifmError::Argument(format!("event {} has non-positive patience", e.id)));
        }
    }
    if events.windows(2).any(|w| w[1].birth < w[0].birth) {
        return Err(FifmError::Argument("events are not sorted by birth".into()));
    }
    let t_start = opts.start_time.unwrap_or_else(|| events.first().map_or(0.0, |e| e.birth.min(0.0)));
    if let Some(dt) = opts.stats_interval {
        if !(dt > 0.0) {
            return Err(FifmError::Argument("stats interval must be positive".into()));
        }
    }

    let mut engine = Engine::with_initial(space, initial);
    let mut log = Vec::new();
    let mut rows = Vec::new();
    let mut stats = RunStats { t_start, t_end, ..RunStats::default() };
    let mut area = [0.0f64; 3];
    let mut last_t = t_start;
    let mut next_row = t_start;
    let mut i = 0usize;

    let advance = |engine: &Engine, to: f64, last_t: &mut f64, area: &mut [f64; 3], rows: &mut Vec<StatsRow>, next_row: &mut f64| {
        if let Some(dt) = opts.stats_interval {
            while *next_row <= to && *next_row <= t_end {
                rows.push(StatsRow { time: *next_row, total: engine.len(), reds: engine.reds(), blues: engine.blues() });
                *next_row += dt;
            }
        }
        let span = (to - *last_t).max(0.0);
        area[0] += span * engine.len() as f64;
        area[1] += span * engine.reds() as f64;
        area[2] += span * engine.blues() as f64;
        *last_t = to.max(*last_t);
    };

    loop {
        let arrival = events.get(i).filter(|e| e.birth <= t_end);
        let expiry = engine.peek_expiry().filter(|(t, _)| *t <= t_end);
        let take_arrival = match (arrival, expiry) {
            (None, None) => break,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (Some(a), Some((t, id))) => (a.birth, a.id) < (t, id),
        };
        if take_arrival {
            let a = *arrival.expect("arrival present");
            i += 1;
            advance(&engine, a.birth, &mut last_t, &mut area, &mut rows, &mut next_row);
            stats.arrivals += 1;
            if opts.log == LogLevel::Full {
                log.push(EventLogRecord { time: a.birth, kind: EventKind::Arrival { id: a.id }, state_size_after: engine.len() });
            }
            let kind = match engine.arrive(a) {
                Arrival::Accepted => {
                    stats.acceptances += 1;
                    EventKind::Acceptance { id: a.id }
                }
                Arrival::Matched(m) => {
                    stats.matches += 1;
                    EventKind::MatchDeparture { arrival: a.id, matched: m.id }
                }
            };
            if opts.log != LogLevel::None {
                log.push(EventLogRecord { time: a.birth, kind, state_size_after: engine.len() });
            }
        } else {
            let (t, _) = expiry.expect("expiry present");
            advance(&engine, t, &mut last_t, &mut area, &mut rows, &mut next_row);
            let p = engine.pop_expiry().expect("expiry present");
            stats.reneges += 1;
            if opts.log != LogLevel::None {
                log.push(EventLogRecord { time: t, kind: EventKind::Reneging { id: p.id }, state_size_after: engine.len() });
            }
        }
    }
    advance(&engine, t_end, &mut last_t, &mut area, &mut rows, &mut next_row);
    let span = t_end - t_start;
    if span > 0.0 {
        stats.mean_total = area[0] / span;
        stats.mean_reds = area[1] / span;
        stats.mean_blues = area[2] / span;
    }
    Ok(SimulationResult { final_state: engine.configuration(), log, rows, stats })
}

/// Bounded test functionals for the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    Constant,
    Count,
    RedCount,
    /// Number of unordered same-colour pairs within distance `radius`.
    SameColorPairs { radius: f64 },
}

impl Functional {
    /// The dictionary used by the stationarity check.
    pub fn dictionary() -> [Functional; 3] {
        [Functional::Count, Functional::RedCount, Functional::SameColorPairs { radius: 1.0 }]
    }

    pub fn name(&self) -> String {
        match self {
            Functional::Constant => "constant".into(),
            Functional::Count => "count".into(),
            Functional::RedCount => "red_count".into(),
            Functional::SameColorPairs { radius } => format!("same_color_pairs_{radius}"),
        }
    }

    pub fn eval(&self, space: &Space, pts: &[MarkedPoint]) -> f64 {
        match self {
            Functional::Constant => 1.0,
            Functional::Count => pts.len() as f64,
            Functional::RedCount => pts.iter().filter(|m| m.color == Color::Red).count() as f64,
            Functional::SameColorPairs { radius } => {
                let mut n = 0usize;
                for (i, a) in pts.iter().enumerate() {
                    for b in &pts[i + 1..] {
                        if a.color == b.color && space.dist(&a.pos, &b.pos) <= *radius {
                            n += 1;
                        }
                    }
                }
                n as f64
            }
        }
    }

    /// Positions where the value of `f(eta + (p, c))` may jump, for one-dimensional quadrature.
    fn breakpoints(&self, space: &Space, pts: &[MarkedPoint]) -> Vec<f64> {
        match self {
            Functional::SameColorPairs { radius } => {
                pts.iter().flat_map(|m| [m.pos.x - radius, m.pos.x + radius]).map(|x| wrap_1d(space, x)).collect()
            }
            _ => Vec::new(),
        }
    }
}

fn wrap_1d(space: &Space, x: f64) -> f64 {
    match space.kind() {
        SpaceKind::Circle { length } => x.rem_euclid(*length),
        _ => x,
    }
}

/// `Lf(eta)`: departures weighted by `mu + intensity * lambda_bar(W_x)` and
/// arrivals integrated over the acceptance region `{x not in N(eta)}`.
pub fn evaluate_generator(
    space: &Space,
    params: &ModelParams,
    config: &OrderedConfiguration,
    f: &Functional,
) -> Result<f64> {
    params.validate()?;
    config.check(space)?;
    if !is_valid_configuration(space, config) {
        return Err(FifmError::Argument("configuration has a compatible pair".into()));
    }
    if let SpaceKind::Torus2D { .. } = space.kind() {
        return Err(FifmError::Capability(
            "the generator is evaluated only on one-dimensional and finite domains".into(),
        ));
    }
    let pts = config.marked();
    let base = f.eval(space, &pts);
    let mut departures = 0.0;
    for (i, x) in pts.iter().enumerate() {
        let w = space.priority_region_measure_unchecked(&pts[..i], x).value;
        let mut rest = pts.clone();
        rest.remove(i);
        departures += (params.mu + params.intensity * w) * (f.eval(space, &rest) - base);
    }
    let gain = |a: MarkedPoint| {
        let mut with = pts.clone();
        with.push(a);
        f.eval(space, &with) - base
    };
    let arrivals = match space.kind() {
        SpaceKind::Finite(t) => {
            let mut sum = 0.0;
            for k in 0..t.len() {
                let a = MarkedPoint::new(crate::space::Point::of_type(k), t.color(k));
                if !pts.iter().any(|m| space.compatible(m, &a)) {
                    sum += params.intensity * t.weight(k) * gain(a);
                }
            }
            sum
        }
        _ => {
            let sides = space.sides(&pts);
            let mut cuts = f.breakpoints(space, &pts);
            cuts.sort_by(f64::total_cmp);
            let mut sum = 0.0;
            for c in [Color::Red, Color::Blue] {
                let open = space_full(space).difference(sides.side(c));
                for &(a, b) in open.parts() {
                    let mut knots = vec![a];
                    knots.extend(cuts.iter().copied().filter(|&x| x > a && x < b));
                    knots.push(b);
                    for w in knots.windows(2) {
                        let g = |x: f64| gain(MarkedPoint::line(x, c));
                        sum += params.intensity * adaptive_simpson(&g, w[0], w[1], 1e-12, 40);
                    }
                }
            }
            sum
        }
    };
    Ok(departures + arrivals)
}

fn space_full(space: &Space) -> crate::intervals::IntervalSet {
    match space.kind() {
        SpaceKind::Interval { length } | SpaceKind::Circle { length } => {
            crate::intervals::IntervalSet::single(0.0, *length)
        }
        _ => crate::intervals::IntervalSet::empty(),
    }
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}
