//! Perfect sampling by coupling from the past.
//!
//! A time `t` is a regeneration time when every arrival born at or before `t`
//! has reneged by `t`. The FIFM state at such a time is empty whatever the
//! earlier history was, so running forward from the latest regeneration time
//! before 0 with an empty state gives an exact stationary sample at time 0.
//!
//! The past is generated lazily in unit blocks `[-k, -k+1)`, each from its own
//! keyed stream, so a deeper scan extends the same realisation. The scan walks
//! events in decreasing birth order and keeps a candidate time. An event born
//! at or before the candidate and still alive at it pushes the candidate below
//! its birth. The candidate is accepted once the scan has gone `depth` time
//! units past it. The expected number of earlier events still alive at the
//! candidate is then at most `exp(-mu * depth) * rate / mu`.

use crate::engine::Engine;
use crate::error::{FifmError, Result};
use crate::fifm::{OrderedConfiguration, Particle};
use crate::rng;
use crate::simulator::{sample_arrivals, ModelParams};
use crate::space::Space;
use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

/// Default cap on the number of driving events held by one backward scan.
pub const DEFAULT_MAX_EVENTS: usize = 4_000_000;

/// Default bound on the expected number of missed covering events.
pub const DEFAULT_MISS_TOLERANCE: f64 = 1e-12;

/// Candidate regeneration times examined by the backward scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanGranularity {
    /// Integer times `0, -1, -2, ...`.
    #[default]
    Integer,
    /// Any real time: the latest instant before 0 with no live arrival.
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CftpOptions {
    pub granularity: ScanGranularity,
    /// Largest scan depth in time units before giving up.
    pub max_depth: Option<f64>,
    /// Bound on the expected number of covering events born beyond the scanned window.
    pub miss_tolerance: f64,
    /// Largest number of driving events generated before giving up.
    pub max_events: usize,
}

impl Default for CftpOptions {
    fn default() -> Self {
        Self {
            granularity: ScanGranularity::Integer,
            max_depth: None,
            miss_tolerance: DEFAULT_MISS_TOLERANCE,
            max_events: DEFAULT_MAX_EVENTS,
        }
    }
}

/// Candidates visited by a backward scan.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RegenerationScan {
    pub times_checked: Vec<f64>,
    pub first_regeneration: Option<f64>,
}

/// A stationary sample with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CftpSample {
    pub config: OrderedConfiguration,
    pub regeneration_time: f64,
    pub events_replayed: usize,
    /// Bound on the probability that an unscanned event covers the regeneration time.
    pub missed_bound: f64,
}

/// True iff no event born at or before `t` is still alive at `t`.
pub fn is_regeneration_time(events: &[Particle], t: f64) -> bool {
    !events.iter().any(|e| e.birth <= t && e.expiry() > t)
}

/// Expected number of events born before `t - depth` that are alive at `t`.
pub fn missed_event_bound(space: &Space, params: &ModelParams, depth: f64) -> f64 {
    (-params.mu * depth).exp() * params.arrival_rate(space) / params.mu
}

/// Like [`is_regeneration_time`], with a warning when the events only cover
/// `[window_start, t]` and the missed-event bound exceeds `tolerance`.
pub fn check_regeneration_time(
    space: &Space,
    params: &ModelParams,
    events: &[Particle],
    window_start: f64,
    t: f64,
    tolerance: f64,
) -> (bool, Option<String>) {
    let bound = missed_event_bound(space, params, t - window_start);
    let warning = (bound > tolerance).then(|| {
        format!("event window of depth {} leaves a missed-event probability up to {bound:.3e}", t - window_start)
    });
    (is_regeneration_time(events, t), warning)
}

/// Depth after which a candidate is accepted.
pub fn confirmation_depth(space: &Space, params: &ModelParams, tolerance: f64) -> f64 {
    let ratio = params.arrival_rate(space) / params.mu;
    ((ratio / tolerance).ln() / params.mu).max(0.0)
}

/// Default scan limit `10 * max(1, rate/mu) * exp(rate/mu)`.
pub fn default_max_depth(space: &Space, params: &ModelParams) -> f64 {
    let ratio = params.arrival_rate(space) / params.mu;
    (10.0 * ratio.max(1.0) * ratio.exp()).min(1e9)
}

/// Lazily generated driving process on `(-inf, 0)`.
struct Past<'a> {
    space: &'a Space,
    params: &'a ModelParams,
    seed: u64,
    stream: u64,
    blocks: Vec<Vec<Particle>>,
    events: usize,
}

impl<'a> Past<'a> {
    fn new(space: &'a Space, params: &'a ModelParams, seed: u64, stream: u64) -> Self {
        Self { space, params, seed, stream, blocks: Vec::new(), events: 0 }
    }

    /// Events of `[-k, -k+1)`, sorted by birth.
    fn block(&mut self, k: usize) -> &[Particle] {
        while self.blocks.len() < k {
            let j = self.blocks.len() + 1;
            let mut r = rng::block_stream(self.seed, self.stream, -(j as i64));
            let t0 = -(j as f64);
            let b = sample_arrivals(self.space, self.params, t0, t0 + 1.0, 0, &mut r);
            self.events += b.len();
            self.blocks.push(b);
        }
        &self.blocks[k - 1]
    }

    /// All generated events with birth at or after `t`, in time order, with ids `0, 1, ...`.
    fn events_from(&self, t: f64) -> Vec<Particle> {
        let mut out: Vec<Particle> =
            self.blocks.iter().rev().flat_map(|b| b.iter().filter(|e| e.birth >= t).copied()).collect();
        for (k, e) in out.iter_mut().enumerate() {
            e.id = k as i64;
        }
        out
    }
}

/// Scans backwards from `start` for the latest regeneration time not after `start`.
fn scan(past: &mut Past<'_>, start: f64, opts: &CftpOptions, record: &mut RegenerationScan) -> Result<f64> {
    let depth = confirmation_depth(past.space, past.params, opts.miss_tolerance);
    let max_depth = opts.max_depth.unwrap_or_else(|| default_max_depth(past.space, past.params));
    let mut c = start;
    record.times_checked.push(c);
    let mut k = 1usize;
    loop {
        let block_start = -(k as f64);
        if -block_start > max_depth + depth {
            return Err(FifmError::Sampling(format!(
                "no regeneration time within depth {max_depth} (candidate {c}, {} blocks generated, rate {}, mu {})",
                k - 1,
                past.params.arrival_rate(past.space),
                past.params.mu
            )));
        }
        if past.events > opts.max_events {
            return Err(FifmError::Sampling(format!(
                "no regeneration time after {} driving events (depth {}, rate {}, mu {}); \
                 the expected search length grows like exp(rate / mu)",
                past.events,
                k - 1,
                past.params.arrival_rate(past.space),
                past.params.mu
            )));
        }
        if block_start <= c {
            let gran = opts.granularity;
            let events = past.block(k);
            for e in events.iter().rev() {
                if e.birth <= c && e.expiry() > c {
                    c = match gran {
                        ScanGranularity::Integer => e.birth.ceil() - 1.0,
                        ScanGranularity::Continuous => e.birth,
                    };
                    if gran == ScanGranularity::Integer {
                        record.times_checked.push(c);
                    }
                }
            }
        }
        if block_start <= c - depth {
            record.first_regeneration = Some(c);
            return Ok(c);
        }
        k += 1;
    }
}

fn replay(space: &Space, events: &[Particle], t_end: f64) -> OrderedConfiguration {
    let mut engine = Engine::new(space);
    let mut i = 0usize;
    loop {
        let arrival = events.get(i).filter(|e| e.birth <= t_end);
        let expiry = engine.peek_expiry().filter(|(t, _)| *t <= t_end);
        match (arrival, expiry) {
            (None, None) => break,
            (Some(a), Some((t, id))) if (t, id) < (a.birth, a.id) => {
                engine.pop_expiry();
            }
            (Some(a), _) => {
                engine.arrive(*a);
                i += 1;
            }
            (None, Some(_)) => {
                engine.pop_expiry();
            }
        }
    }
    engine.configuration()
}

/// Refuses loads whose expected search length, about `exp(rate / mu)` driving
/// events, exceeds the event budget.
fn check_feasible(space: &Space, params: &ModelParams, opts: &CftpOptions) -> Result<()> {
    let ratio = params.arrival_rate(space) / params.mu;
    if ratio.exp() > opts.max_events as f64 {
        return Err(FifmError::Capability(format!(
            "rate / mu = {ratio:.3} needs about {:.2e} driving events per sample, above the budget of {}",
            ratio.exp(),
            opts.max_events
        )));
    }
    Ok(())
}

/// One exact stationary sample, replica `stream` of master seed `seed`.
pub fn sample_stationary_with(
    space: &Space,
    params: &ModelParams,
    seed: u64,
    stream: u64,
    opts: &CftpOptions,
) -> Result<CftpSample> {
    params.validate()?;
    check_feasible(space, params, opts)?;
    let mut past = Past::new(space, params, seed, stream);
    let mut record = RegenerationScan::default();
    let t = scan(&mut past, 0.0, opts, &mut record)?;
    let events = past.events_from(t);
    let config = replay(space, &events, 0.0);
    let depth = confirmation_depth(space, params, opts.miss_tolerance);
    Ok(CftpSample {
        config,
        regeneration_time: t,
        events_replayed: events.len(),
        missed_bound: missed_event_bound(space, params, depth),
    })
}

/// One exact stationary sample with default options.
pub fn sample_stationary(space: &Space, params: &ModelParams, seed: u64) -> Result<OrderedConfiguration> {
    Ok(sample_stationary_with(space, params, seed, 0, &CftpOptions::default())?.config)
}

/// `n` independent samples; replica `r` uses stream `r`.
pub fn sample_many(space: &Space, params: &ModelParams, n: usize, seed: u64, opts: &CftpOptions) -> Result<Vec<CftpSample>> {
    crate::par::map(n, |r| sample_stationary_with(space, params, seed, r as u64, opts)).into_iter().collect()
}

/// Finds the first `count` regeneration times of one realisation and the
/// state at 0 obtained by restarting from each of them.
pub fn restart_states(
    space: &Space,
    params: &ModelParams,
    seed: u64,
    count: usize,
    opts: &CftpOptions,
) -> Result<Vec<(f64, OrderedConfiguration)>> {
    let mut past = Past::new(space, params, seed, 0);
    let mut out = Vec::new();
    let mut start = 0.0;
    for _ in 0..count {
        let mut record = RegenerationScan::default();
        let t = scan(&mut past, start, opts, &mut record)?;
        out.push((t, replay(space, &past.events_from(t), 0.0)));
        start = t - 1.0;
    }
    Ok(out)
}

/// Backward scan record for replica `stream`.
pub fn regeneration_scan(
    space: &Space,
    params: &ModelParams,
    seed: u64,
    stream: u64,
    opts: &CftpOptions,
) -> Result<RegenerationScan> {
    let mut past = Past::new(space, params, seed, stream);
    let mut record = RegenerationScan::default();
    scan(&mut past, 0.0, opts, &mut record)?;
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegenerationEstimate {
    pub estimate: f64,
    pub stderr: f64,
    /// `exp(-rate / mu)`.
    pub exact: f64,
    pub trials: usize,
}

/// Monte Carlo probability that time 0 is a regeneration time.
///
/// Each trial draws the arrival times and patiences of an independent driving
/// process on `(-depth, 0]` and checks whether any arrival is alive at 0.
pub fn estimate_regeneration_probability(
    space: &Space,
    params: &ModelParams,
    trials: usize,
    seed: u64,
) -> Result<RegenerationEstimate> {
    params.validate()?;
    let rate = params.arrival_rate(space);
    if !(rate > 0.0) {
        return Err(FifmError::Argument("the domain has zero reference measure".into()));
    }
    if trials == 0 {
        return Err(FifmError::Argument("at least one trial is needed".into()));
    }
    let depth = confirmation_depth(space, params, DEFAULT_MISS_TOLERANCE);
    let hits: Vec<bool> = crate::par::map(trials, |r| {
        let mut g = rng::stream(seed, r as u64);
        let n = Poisson::new(rate * depth).expect("positive mean").sample(&mut g) as usize;
        let exp = Exp::new(params.mu).expect("positive mu");
        (0..n).all(|_| {
            let birth = -depth * g.random::<f64>();
            birth + exp.sample(&mut g) <= 0.0
        })
    });
    let k = hits.iter().filter(|h| **h).count() as f64;
    let p = k / trials as f64;
    Ok(RegenerationEstimate {
        estimate: p,
        stderr: (p * (1.0 - p) / trials as f64).sqrt(),
        exact: (-rate / params.mu).exp(),
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fifm::is_valid_configuration;
    use crate::space::{Color, Point};

    fn ev(b: f64, w: f64) -> Particle {
        Particle { pos: Point::line(0.0), color: Color::Red, birth: b, patience: w, id: 0 }
    }

    #[test]
    fn regeneration_examples() {
        assert!(is_regeneration_time(&[], 0.0));
        assert!(!is_regeneration_time(&[ev(-1.0, 2.0)], 0.0));
        assert!(is_regeneration_time(&[ev(-3.0, 1.0)], 0.0));
        let s = Space::interval(1.0).unwrap();
        let p = ModelParams::new(1.0, 1.0).unwrap();
        let (ok, warn) = check_regeneration_time(&s, &p, &[ev(-3.0, 1.0)], -3.0, 0.0, 1e-12);
        assert!(ok);
        assert!(warn.is_some());
    }

    #[test]
    fn infeasible_load_is_refused_up_front() {
        let s = Space::circle(10.0).unwrap();
        let p = ModelParams::new(1.0, 1.0).unwrap();
        let err = sample_stationary_with(&s, &p, 0, 0, &CftpOptions::default()).unwrap_err();
        assert!(matches!(err, FifmError::Capability(_)));
    }

    #[test]
    fn scan_result_is_a_regeneration_time_of_the_generated_past() {
        let s = Space::circle(3.0).unwrap();
        let p = ModelParams::new(1.0, 1.0).unwrap();
        for gran in [ScanGranularity::Integer, ScanGranularity::Continuous] {
            let opts = CftpOptions { granularity: gran, ..CftpOptions::default() };
            for seed in 0..20 {
                let mut past = Past::new(&s, &p, seed, 0);
                let mut rec = RegenerationScan::default();
                let t = scan(&mut past, 0.0, &opts, &mut rec).unwrap();
                let all = past.events_from(f64::NEG_INFINITY);
                if gran == ScanGranularity::Integer {
                    assert_eq!(t, t.round());
                    assert!(is_regeneration_time(&all, t));
                    // Every later integer is covered.
                    let mut u = t + 1.0;
                    while u <= 0.0 {
                        assert!(!is_regeneration_time(&all, u), "seed {seed}: {u} is also a regeneration time");
                        u += 1.0;
                    }
                } else {
                    // Just before the returned time nothing is alive.
                    assert!(is_regeneration_time(&all, t - 1e-9) || t == 0.0);
                }
            }
        }
    }

    #[test]
    fn restarts_from_earlier_regenerations_agree() {
        let s = Space::circle(3.0).unwrap();
        let p = ModelParams::new(1.0, 1.0).unwrap();
        for seed in 0..30 {
            let states = restart_states(&s, &p, seed, 3, &CftpOptions::default()).unwrap();
            assert!(states[0].0 > states[1].0 && states[1].0 > states[2].0);
            assert_eq!(states[0].1.marked(), states[1].1.marked());
            assert_eq!(states[0].1.marked(), states[2].1.marked());
        }
    }

    #[test]
    fn granularities_give_the_same_sample() {
        let s = Space::interval(3.0).unwrap();
        let p = ModelParams::new(1.0, 1.0).unwrap();
        let cont = CftpOptions { granularity: ScanGranularity::Continuous, ..CftpOptions::default() };
        for seed in 0..20 {
            let a = sample_stationary_with(&s, &p, seed, 0, &CftpOptions::default()).unwrap();
            let b = sample_stationary_with(&s, &p, seed, 0, &cont).unwrap();
            assert!(b.regeneration_time >= a.regeneration_time);
            assert_eq!(a.config.marked(), b.config.marked());
            assert!(is_valid_configuration(&s, &a.config));
        }
    }

    #[test]
    fn samples_are_deterministic() {
        let s = Space::interval(3.0).unwrap();
        let p = ModelParams::new(1.0, 1.0).unwrap();
        assert_eq!(sample_stationary(&s, &p, 5).unwrap(), sample_stationary(&s, &p, 5).unwrap());
    }

    #[test]
    fn depth_limit_is_reported() {
        let s = Space::interval(4.0).unwrap();
        let p = ModelParams::new(1.0, 1.0).unwrap();
        let opts = CftpOptions { max_depth: Some(1.0), ..CftpOptions::default() };
        assert!(matches!(sample_stationary_with(&s, &p, 1, 0, &opts), Err(FifmError::Sampling(_))));
    }

    #[test]
    fn large_mu_gives_mostly_empty_states() {
        let s = Space::interval(3.0).unwrap();
        let p = ModelParams::new(1.0, 100.0).unwrap();
        let samples = sample_many(&s, &p, 2000, 3, &CftpOptions::default()).unwrap();
        let empty = samples.iter().filter(|x| x.config.is_empty()).count() as f64 / 2000.0;
        // The stationary mean count is about rate/mu = 0.06.
        assert!(empty > 0.9, "empty fraction {empty}");
    }

    #[test]
    fn regeneration_probability_limits() {
        let s = Space::interval(1.0).unwrap();
        let big = ModelParams::new(1.0, 1e4).unwrap();
        assert!(estimate_regeneration_probability(&s, &big, 1000, 1).unwrap().estimate > 0.99);
        let p = ModelParams::new(1.0, 1.0).unwrap();
        assert!(estimate_regeneration_probability(&s, &p, 0, 1).is_err());
        assert!(Space::interval(0.0).is_err());
    }
}
