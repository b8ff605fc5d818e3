//! Large-window constructions: the killing function, the two-process coupling
//! and its discrepancy experiments.
//!
//! The killing function assigns to every arrival the particle it matches, or
//! `Accepted` when it joins the system; it is evaluated chronologically, which
//! on a finite window coincides with its recursive characterisation.
//!
//! Two processes driven by one event stream differ by *zombies* (present only
//! in the first) and *antizombies* (present only in the second); together they
//! are the special particles. Every event falls into one of the classes of
//! [`TransitionClass`]; none of them increases the number of specials, and each
//! special reneges at rate `mu`, so the special density decays at least like
//! `exp(-mu t)`.

use crate::engine::{Arrival, Engine};
use crate::error::{FifmError, Result};
use crate::fifm::{is_valid_configuration, OrderedConfiguration, Particle};
use crate::par;
use crate::rng;
use crate::simulator::{blocked_arrivals, poisson_initial, sample_arrivals, ModelParams};
use crate::space::{Color, MarkedPoint, Point, Space, SpaceKind};
use rand::Rng;
use serde::Serialize;
use std::collections::{BTreeMap, HashMap};

/// Value of the killing function at one particle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kill {
    /// Matched on arrival with the particle of this id.
    Matched(i64),
    /// Accepted on arrival, or part of the initial condition.
    Accepted,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct KillingAssignment {
    pub map: BTreeMap<i64, Kill>,
}

impl KillingAssignment {
    /// `(arrival, matched)` pairs in arrival order of the matcher.
    pub fn pairs(&self, order: &[Particle]) -> Vec<(i64, i64)> {
        order
            .iter()
            .filter_map(|p| match self.map.get(&p.id) {
                Some(Kill::Matched(y)) => Some((p.id, *y)),
                _ => None,
            })
            .collect()
    }
}

/// Evaluates the killing function on `initial` followed by `events` (sorted by birth).
///
/// `kappa(x)` is the lowest-ranked earlier particle `y` of opposite colour within
/// distance `r`, with `kappa(y) = Accepted`, still patient at `b_x`, and not the
/// value of `kappa` at any particle ranked between them.
pub fn compute_kappa(space: &Space, initial: &OrderedConfiguration, events: &[Particle]) -> Result<KillingAssignment> {
    if events.windows(2).any(|w| w[1].birth < w[0].birth) {
        return Err(FifmError::Argument("events are not sorted by birth".into()));
    }
    let mut out = KillingAssignment::default();
    // Accepted particles not yet killed, in rank order.
    let mut open: Vec<Particle> = Vec::new();
    for p in &initial.items {
        out.map.insert(p.id, Kill::Accepted);
        open.push(*p);
    }
    for x in events {
        if out.map.contains_key(&x.id) {
            return Err(FifmError::Argument(format!("duplicate particle id {}", x.id)));
        }
        open.retain(|y| y.expiry() > x.birth);
        let hit = open
            .iter()
            .position(|y| y.color != x.color && space.dist(&y.pos, &x.pos) <= space.radius());
        match hit {
            Some(k) => {
                let y = open.remove(k);
                out.map.insert(x.id, Kill::Matched(y.id));
            }
            None => {
                out.map.insert(x.id, Kill::Accepted);
                open.push(*x);
            }
        }
    }
    Ok(out)
}

/// Spatial window used to count discrepancies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Region {
    Empty,
    /// Axis-aligned box `[lo, hi]`; one-dimensional domains ignore `y`.
    Box { lo: [f64; 2], hi: [f64; 2] },
    /// The whole domain.
    All,
}

impl Region {
    /// Square (or interval) of the given side centred in the domain; side 0 gives [`Region::Empty`].
    pub fn centered(space: &Space, side: f64) -> Result<Region> {
        if !(side >= 0.0) {
            return Err(FifmError::Argument("window side must be non-negative".into()));
        }
        if side == 0.0 {
            return Ok(Region::Empty);
        }
        let extent = match space.kind() {
            SpaceKind::Torus2D { side } => *side,
            SpaceKind::Circle { length } | SpaceKind::Interval { length } => *length,
            SpaceKind::Finite(_) => return Err(FifmError::Capability("windows need a continuous domain".into())),
        };
        if side + 4.0 * space.radius() > extent {
            return Err(FifmError::Argument(format!(
                "window of side {side} leaves less than two interaction radii of margin in a domain of extent {extent}"
            )));
        }
        let (a, b) = (extent / 2.0 - side / 2.0, extent / 2.0 + side / 2.0);
        Ok(if space.is_one_dimensional() { Region::Box { lo: [a, 0.0], hi: [b, 0.0] } } else { Region::Box { lo: [a, a], hi: [b, b] } })
    }

    pub fn contains(&self, space: &Space, p: &Point) -> bool {
        match self {
            Region::Empty => false,
            Region::All => true,
            Region::Box { lo, hi } => {
                p.x >= lo[0] && p.x <= hi[0] && (space.is_one_dimensional() || (p.y >= lo[1] && p.y <= hi[1]))
            }
        }
    }

    pub fn measure(&self, space: &Space) -> f64 {
        match self {
            Region::Empty => 0.0,
            Region::All => space.measure(),
            Region::Box { lo, hi } if space.is_one_dimensional() => hi[0] - lo[0],
            Region::Box { lo, hi } => (hi[0] - lo[0]) * (hi[1] - lo[1]),
        }
    }
}

/// How one event changes the classes of the particles it touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionClass {
    /// Accepted in both processes.
    RegularArrival,
    /// Matches the same regular particle in both processes.
    RegularMatch,
    RegularRenege,
    /// A zombie or antizombie loses patience.
    SpecialRenege,
    /// Kills a zombie in the first process and is accepted in the second.
    ZombieToAntizombie,
    /// Kills an antizombie in the second process and is accepted in the first.
    AntizombieToZombie,
    /// Kills a zombie and an antizombie.
    Annihilation,
    /// Kills a zombie and, in the second process, a regular particle, which becomes a zombie.
    ZombieTransfer,
    /// Kills an antizombie and, in the first process, a regular particle, which becomes an antizombie.
    AntizombieTransfer,
    /// Anything else; never produced by consistent inputs.
    Unclassified,
}

/// Densities of zombies and antizombies in the counting window over time.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DiscrepancyTrace {
    pub times: Vec<f64>,
    pub zombie_density: Vec<f64>,
    pub antizombie_density: Vec<f64>,
}

impl DiscrepancyTrace {
    pub fn special_density(&self) -> Vec<f64> {
        self.zombie_density.iter().zip(&self.antizombie_density).map(|(z, a)| z + a).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledRun {
    pub trace: DiscrepancyTrace,
    pub transitions: BTreeMap<TransitionClass, usize>,
    /// Last time specials in the window went from present to absent; 0 when never present.
    pub last_clear_time: f64,
    /// Specials are present in the window at the end of the run.
    pub censored: bool,
    /// An event increased the number of specials.
    pub specials_increased: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledOptions {
    pub dt: f64,
    pub window: Region,
    /// Stop as soon as no special particle exists anywhere.
    pub stop_when_clear: bool,
}

impl Default for CoupledOptions {
    fn default() -> Self {
        Self { dt: 0.1, window: Region::All, stop_when_clear: false }
    }
}

fn key(p: &Particle) -> (u64, u64, Color) {
    (p.pos.x.to_bits(), p.pos.y.to_bits(), p.color)
}

/// Rewrites initial-condition ids so particles shared by position and colour
/// carry one identity, with negative ids disjoint from the arrival ids.
fn align_initial(init1: &OrderedConfiguration, init2: &OrderedConfiguration) -> (OrderedConfiguration, OrderedConfiguration) {
    let mut next = -1i64;
    let mut ids: HashMap<(u64, u64, Color), i64> = HashMap::new();
    let mut relabel = |c: &OrderedConfiguration, ids: &mut HashMap<_, _>, share: bool| {
        OrderedConfiguration::new(
            c.items
                .iter()
                .map(|p| {
                    let id = match (share, ids.get(&key(p))) {
                        (true, Some(&id)) => id,
                        _ => {
                            let id = next;
                            next -= 1;
                            ids.insert(key(p), id);
                            id
                        }
                    };
                    Particle { id, ..*p }
                })
                .collect(),
        )
    };
    let a = relabel(init1, &mut ids, false);
    let b = relabel(init2, &mut ids, true);
    (a, b)
}

/// Runs two processes from `init1` and `init2` on the arrival stream `events`
/// (sorted by birth, non-negative ids) until `t_end`, sampling every `dt`.
pub(crate) fn coupled_run(
    space: &Space,
    init1: &OrderedConfiguration,
    init2: &OrderedConfiguration,
    events: &[Particle],
    t_start: f64,
    t_end: f64,
    opts: &CoupledOptions,
) -> CoupledRun {
    let mut e1 = Engine::with_initial(space, init1);
    let mut e2 = Engine::with_initial(space, init2);
    let mut zombies: HashMap<i64, MarkedPoint> = HashMap::new();
    let mut antizombies: HashMap<i64, MarkedPoint> = HashMap::new();
    {
        let ids1: HashMap<i64, MarkedPoint> = init1.items.iter().map(|p| (p.id, p.marked())).collect();
        let ids2: HashMap<i64, MarkedPoint> = init2.items.iter().map(|p| (p.id, p.marked())).collect();
        zombies.extend(ids1.iter().filter(|(id, _)| !ids2.contains_key(id)).map(|(i, m)| (*i, *m)));
        antizombies.extend(ids2.iter().filter(|(id, _)| !ids1.contains_key(id)).map(|(i, m)| (*i, *m)));
    }
    let window = opts.window;
    let area = window.measure(space);
    let in_window = |z: &HashMap<i64, MarkedPoint>| z.values().filter(|m| window.contains(space, &m.pos)).count();
    let mut run = CoupledRun {
        trace: DiscrepancyTrace::default(),
        transitions: BTreeMap::new(),
        last_clear_time: 0.0,
        censored: false,
        specials_increased: false,
    };
    let mut present = in_window(&zombies) + in_window(&antizombies) > 0;
    let samples = ((t_end - t_start) / opts.dt + 1e-9).floor() as usize + 1;
    let mut k_sample = 0usize;
    let at = |k: usize| t_start + k as f64 * opts.dt;
    let sample = |run: &mut CoupledRun, t: f64, z: &HashMap<i64, MarkedPoint>, a: &HashMap<i64, MarkedPoint>| {
        let (zc, ac) = (in_window(z) as f64, in_window(a) as f64);
        run.trace.times.push(t);
        run.trace.zombie_density.push(if area > 0.0 { zc / area } else { 0.0 });
        run.trace.antizombie_density.push(if area > 0.0 { ac / area } else { 0.0 });
    };
    let mut i = 0usize;
    loop {
        let arrival = events.get(i).filter(|e| e.birth <= t_end).map(|e| (e.birth, e.id));
        let expiry = match (e1.peek_expiry(), e2.peek_expiry()) {
            (Some(a), Some(b)) => Some(if (a.0, a.1) <= (b.0, b.1) { a } else { b }),
            (a, b) => a.or(b),
        }
        .filter(|(t, _)| *t <= t_end);
        let next = match (arrival, expiry) {
            (None, None) => None,
            (Some(a), None) => Some(a.0),
            (None, Some(x)) => Some(x.0),
            (Some(a), Some(x)) => Some(if a <= x { a.0 } else { x.0 }),
        };
        // Samples strictly before the next event see the current state.
        while k_sample < samples && next.is_none_or(|t| at(k_sample) < t) {
            sample(&mut run, at(k_sample), &zombies, &antizombies);
            k_sample += 1;
        }
        let Some(now) = next else { break };
        let before = zombies.len() + antizombies.len();
        let class = if arrival.is_some_and(|a| expiry.is_none_or(|x| a <= x)) {
            let x = events[i];
            i += 1;
            let r1 = e1.arrive(x);
            let r2 = e2.arrive(x);
            match (r1, r2) {
                (Arrival::Accepted, Arrival::Accepted) => TransitionClass::RegularArrival,
                (Arrival::Matched(y1), Arrival::Matched(y2)) if y1.id == y2.id => {
                    if zombies.contains_key(&y1.id) || antizombies.contains_key(&y1.id) {
                        TransitionClass::Unclassified
                    } else {
                        TransitionClass::RegularMatch
                    }
                }
                (Arrival::Matched(y1), Arrival::Accepted) => {
                    if zombies.remove(&y1.id).is_some() {
                        antizombies.insert(x.id, x.marked());
                        TransitionClass::ZombieToAntizombie
                    } else {
                        TransitionClass::Unclassified
                    }
                }
                (Arrival::Accepted, Arrival::Matched(y2)) => {
                    if antizombies.remove(&y2.id).is_some() {
                        zombies.insert(x.id, x.marked());
                        TransitionClass::AntizombieToZombie
                    } else {
                        TransitionClass::Unclassified
                    }
                }
                (Arrival::Matched(y1), Arrival::Matched(y2)) => {
                    let z1 = zombies.contains_key(&y1.id);
                    let a2 = antizombies.contains_key(&y2.id);
                    let regular1 = !z1 && !antizombies.contains_key(&y1.id);
                    let regular2 = !a2 && !zombies.contains_key(&y2.id);
                    if z1 && a2 {
                        zombies.remove(&y1.id);
                        antizombies.remove(&y2.id);
                        TransitionClass::Annihilation
                    } else if z1 && regular2 {
                        zombies.remove(&y1.id);
                        zombies.insert(y2.id, y2.marked());
                        TransitionClass::ZombieTransfer
                    } else if regular1 && a2 {
                        antizombies.remove(&y2.id);
                        antizombies.insert(y1.id, y1.marked());
                        TransitionClass::AntizombieTransfer
                    } else {
                        TransitionClass::Unclassified
                    }
                }
            }
        } else {
            let (t, id) = expiry.expect("expiry present");
            let hit1 = e1.peek_expiry() == Some((t, id));
            let hit2 = e2.peek_expiry() == Some((t, id));
            if hit1 {
                e1.pop_expiry();
            }
            if hit2 {
                e2.pop_expiry();
            }
            match (hit1, hit2) {
                (true, true) => TransitionClass::RegularRenege,
                (true, false) if zombies.remove(&id).is_some() => TransitionClass::SpecialRenege,
                (false, true) if antizombies.remove(&id).is_some() => TransitionClass::SpecialRenege,
                _ => TransitionClass::Unclassified,
            }
        };
        *run.transitions.entry(class).or_insert(0) += 1;
        if zombies.len() + antizombies.len() > before {
            run.specials_increased = true;
        }
        let now_present = in_window(&zombies) + in_window(&antizombies) > 0;
        if present && !now_present {
            run.last_clear_time = now;
        }
        present = now_present;
        if opts.stop_when_clear && zombies.is_empty() && antizombies.is_empty() {
            // Nothing can differ from here on; fill the remaining samples with zeros.
            while k_sample < samples {
                sample(&mut run, at(k_sample), &zombies, &antizombies);
                k_sample += 1;
            }
            break;
        }
    }
    run.censored = present;
    run
}

/// Couples the processes started from `init1` and `init2` at time 0 on one
/// Poisson driving stream derived from `seed`, up to `t_end`.
pub fn coupled_simulate(
    space: &Space,
    params: &ModelParams,
    init1: &OrderedConfiguration,
    init2: &OrderedConfiguration,
    t_end: f64,
    seed: u64,
    opts: &CoupledOptions,
) -> Result<CoupledRun> {
    params.validate()?;
    for c in [init1, init2] {
        c.check(space)?;
        if !is_valid_configuration(space, c) {
            return Err(FifmError::Argument("initial configuration has a compatible pair".into()));
        }
    }
    if !(t_end >= 0.0) || !(opts.dt > 0.0) {
        return Err(FifmError::Argument("t_end must be non-negative and dt positive".into()));
    }
    let (a, b) = align_initial(init1, init2);
    let mut g = rng::stream(seed, 1);
    let events = sample_arrivals(space, params, 0.0, t_end, 0, &mut g);
    Ok(coupled_run(space, &a, &b, &events, 0.0, t_end, opts))
}

/// One row of the decay curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayRow {
    pub t: f64,
    pub beta_s_mean: f64,
    pub beta_s_ci_lo: f64,
    pub beta_s_ci_hi: f64,
    pub beta_s_stderr: f64,
    /// `mean beta_S(0) * exp(-mu t)`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayCurve {
    pub rows: Vec<DecayRow>,
    pub replicas: usize,
    pub transitions: BTreeMap<TransitionClass, usize>,
    pub specials_increased: usize,
}

impl DecayCurve {
    /// Every confidence interval reaches down to the bound.
    pub fn within_bound(&self) -> bool {
        self.rows.iter().all(|r| r.beta_s_ci_lo <= r.bound * (1.0 + 1e-12))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,beta_S_mean,beta_S_ci_lo,beta_S_ci_hi,bound\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                r.t, r.beta_s_mean, r.beta_s_ci_lo, r.beta_s_ci_hi, r.bound
            ));
        }
        s
    }
}

/// Special density over time for `init1 = empty` and `init2 ~ Poisson(init_density)`
/// red particles, averaged over independent replicas with 95% normal intervals.
pub fn decay_experiment(
    space: &Space,
    params: &ModelParams,
    init_density: f64,
    t_end: f64,
    replicas: usize,
    seed: u64,
    dt: f64,
) -> Result<DecayCurve> {
    params.validate()?;
    if replicas < 2 {
        return Err(FifmError::Argument("at least two replicas are needed for an interval".into()));
    }
    let runs = par::map(replicas, |r| {
        let mut g = rng::stream(seed, 2 * r as u64);
        let init2 = poisson_initial(space, params, init_density, Color::Red, 0.0, &mut g);
        let mut ev = rng::stream(seed, 2 * r as u64 + 1);
        let events = sample_arrivals(space, params, 0.0, t_end, 0, &mut ev);
        let opts = CoupledOptions { dt, window: Region::All, stop_when_clear: true };
        coupled_run(space, &OrderedConfiguration::default(), &init2, &events, 0.0, t_end, &opts)
    });
    let traces: Vec<Vec<f64>> = runs.iter().map(|r| r.trace.special_density()).collect();
    let len = traces.iter().map(Vec::len).min().unwrap_or(0);
    let n = replicas as f64;
    let mut rows = Vec::with_capacity(len);
    let mut beta0 = 0.0;
    for k in 0..len {
        let xs: Vec<f64> = traces.iter().map(|t| t[k]).collect();
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let stderr = (var / n).sqrt();
        let half = 1.96 * stderr;
        if k == 0 {
            beta0 = mean;
        }
        let t = runs[0].trace.times[k];
        rows.push(DecayRow { t, beta_s_mean: mean, beta_s_ci_lo: mean - half, beta_s_ci_hi: mean + half, beta_s_stderr: stderr, bound: beta0 * (-params.mu * t).exp() });
    }
    let mut transitions = BTreeMap::new();
    for r in &runs {
        for (k, v) in &r.transitions {
            *transitions.entry(*k).or_insert(0) += v;
        }
    }
    let specials_increased = runs.iter().filter(|r| r.specials_increased).count();
    Ok(DecayCurve { rows, replicas, transitions, specials_increased })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingOptions {
    /// Confirmation horizon: runs stop at `H`, and specials still in the window then are censored.
    pub horizon: f64,
    /// Head start of the earlier process.
    pub head_start: f64,
    pub bootstrap: usize,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        Self { horizon: 20.0, head_start: 1.0, bootstrap: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingTimeEstimate {
    pub samples: Vec<f64>,
    pub censored: Vec<bool>,
    pub mean: f64,
    pub stderr: f64,
    /// 95% percentile-bootstrap interval of the mean.
    pub ci: (f64, f64),
    pub censored_fraction: f64,
    /// `E|S_0| exp(-mu H)`: bound on the expected number of specials alive at the horizon.
    pub reappearance_bound: f64,
    pub unclassified_transitions: usize,
}

impl CouplingTimeEstimate {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("replica,tau,censored\n");
        for (i, (t, c)) in self.samples.iter().zip(&self.censored).enumerate() {
            s.push_str(&format!("{i},{t:.16e},{}\n", u8::from(*c)));
        }
        s
    }
}

/// Empirical coupling time of the window: per replica, a process started empty
/// at `-head_start` is coupled from time 0 with a process started empty at 0;
/// the sample is the last time specials leave the window before the horizon.
/// Arrivals come from per-replica unit time blocks, so runs with a longer
/// horizon extend the same realisations.
pub fn estimate_coupling_time(
    space: &Space,
    params: &ModelParams,
    window: Region,
    replicas: usize,
    seed: u64,
    opts: &CouplingOptions,
) -> Result<CouplingTimeEstimate> {
    params.validate()?;
    if replicas == 0 || !(opts.horizon > 0.0) || !(opts.head_start > 0.0) {
        return Err(FifmError::Argument("need replicas > 0 and positive horizon and head start".into()));
    }
    let runs = par::map(replicas, |r| {
        let early = blocked_arrivals(space, params, seed, r as u64, -opts.head_start, 0.0, 0);
        let events = blocked_arrivals(space, params, seed, r as u64, 0.0, opts.horizon, early.len() as i64);
        let mut e = Engine::new(space);
        let mut i = 0;
        loop {
            let a = early.get(i);
            let x = e.peek_expiry().filter(|(t, _)| *t < 0.0);
            match (a, x) {
                (None, None) => break,
                (Some(p), x) if x.is_none_or(|(t, id)| (p.birth, p.id) < (t, id)) => {
                    e.arrive(*p);
                    i += 1;
                }
                _ => {
                    e.pop_expiry();
                }
            }
        }
        let init2 = e.configuration();
        let specials0 = init2.len();
        let opts_c = CoupledOptions { dt: opts.horizon, window, stop_when_clear: true };
        let run = coupled_run(space, &OrderedConfiguration::default(), &init2, &events, 0.0, opts.horizon, &opts_c);
        (run, specials0)
    });
    let samples: Vec<f64> = runs.iter().map(|(r, _)| if r.censored { opts.horizon } else { r.last_clear_time }).collect();
    let censored: Vec<bool> = runs.iter().map(|(r, _)| r.censored).collect();
    let n = replicas as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if replicas > 1 { samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let mut g = rng::stream(seed, u64::MAX);
    let mut boots: Vec<f64> = (0..opts.bootstrap)
        .map(|_| (0..replicas).map(|_| samples[g.random_range(0..replicas)]).sum::<f64>() / n)
        .collect();
    boots.sort_by(f64::total_cmp);
    let ci = if boots.is_empty() {
        (mean, mean)
    } else {
        let q = |p: f64| boots[((p * boots.len() as f64) as usize).min(boots.len() - 1)];
        (q(0.025), q(0.975))
    };
    let mean_s0 = runs.iter().map(|(_, s)| *s as f64).sum::<f64>() / n;
    let unclassified = runs.iter().map(|(r, _)| r.transitions.get(&TransitionClass::Unclassified).copied().unwrap_or(0)).sum();
    Ok(CouplingTimeEstimate {
        censored_fraction: censored.iter().filter(|c| **c).count() as f64 / n,
        samples,
        censored,
        mean,
        stderr: (var / n).sqrt(),
        ci,
        reappearance_bound: mean_s0 * (-params.mu * opts.horizon).exp(),
        unclassified_transitions: unclassified,
    })
}
