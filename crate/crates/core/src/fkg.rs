//! Correlation inequalities for the Janossy densities.
//!
//! `Pi~(xi)` below is the Janossy density without the validity indicator.
//! Point sets are compared by exact position and colour. The lattice order is
//! `xi >= gamma` iff `xi^R ⊇ gamma^R` and `xi^B ⊆ gamma^B`, with
//!
//! * join `xi ∨ gamma = (xi^R ∪ gamma^R, xi^B ∩ gamma^B)`,
//! * meet `xi ∧ gamma = (xi^R ∩ gamma^R, xi^B ∪ gamma^B)`.
//!
//! Inequalities are compared in log space. An inequality `lhs >= rhs` holds
//! when `rhs - lhs <= INEQUALITY_SLACK * max(lhs, rhs)`, and an equality case
//! when the relative gap is at most `EQUALITY_TOLERANCE`.

use crate::analytics::{is_valid_with_boundary, janossy_boundary, janossy_tilde, Boundary, DEFAULT_JANOSSY_CAP};
use crate::cftp::{sample_many, CftpOptions, ScanGranularity};
use crate::error::{FifmError, Result};
use crate::fifm::{is_valid_points, OrderedConfiguration};
use crate::report::VerificationReport;
use crate::rng;
use crate::simulator::ModelParams;
use crate::space::{Color, MarkedPoint, Point, Space, SpaceKind};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Relative slack allowed on the wrong side of an inequality.
pub const INEQUALITY_SLACK: f64 = 1e-12;
/// Relative tolerance for cases where equality is predicted.
pub const EQUALITY_TOLERANCE: f64 = 1e-10;
/// Largest `n + m` accepted by [`lemma_aux_check`].
pub const LEMMA_AUX_MAX: usize = 16;

/// Both sides of the path-sum identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaAux {
    pub lhs: f64,
    pub rhs: f64,
    pub rel_err: f64,
    pub paths: u64,
}

/// Sums `prod_i 1 / (alpha_{x(i)} + beta_{y(i)})` over all increasing lattice
/// paths from `(0, 0)` to `(n, m)` with `alpha_0 = beta_0 = 0`, and compares it
/// with `prod 1/alpha prod 1/beta`.
pub fn lemma_aux_check(alphas: &[f64], betas: &[f64]) -> Result<LemmaAux> {
    let (n, m) = (alphas.len(), betas.len());
    if n + m > LEMMA_AUX_MAX {
        return Err(FifmError::Argument(format!("n + m = {} exceeds {LEMMA_AUX_MAX}", n + m)));
    }
    if alphas.iter().chain(betas).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(FifmError::Argument("alphas and betas must be positive and finite".into()));
    }
    let a: Vec<f64> = std::iter::once(0.0).chain(alphas.iter().copied()).collect();
    let b: Vec<f64> = std::iter::once(0.0).chain(betas.iter().copied()).collect();
    let mut paths = 0u64;
    let lhs = path_sum(&a, &b, 0, 0, 1.0, &mut paths);
    let rhs = alphas.iter().chain(betas).map(|v| 1.0 / v).product::<f64>();
    Ok(LemmaAux { lhs, rhs, rel_err: (lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE), paths })
}

fn path_sum(a: &[f64], b: &[f64], x: usize, y: usize, acc: f64, paths: &mut u64) -> f64 {
    let (n, m) = (a.len() - 1, b.len() - 1);
    if x == n && y == m {
        *paths += 1;
        return acc;
    }
    let mut total = 0.0;
    if x < n {
        total += path_sum(a, b, x + 1, y, acc / (a[x + 1] + b[y]), paths);
    }
    if y < m {
        total += path_sum(a, b, x, y + 1, acc / (a[x] + b[y + 1]), paths);
    }
    total
}

/// Both sides of one instance of a correlation inequality `lhs >= rhs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityOutcome {
    pub log_lhs: f64,
    pub log_rhs: f64,
    /// Equality is predicted for this instance.
    pub equality_expected: bool,
    /// A right-hand state is invalid, so the inequality holds trivially.
    pub vacuous: bool,
}

impl InequalityOutcome {
    fn new(log_lhs: f64, log_rhs: f64, equality_expected: bool) -> Self {
        Self { log_lhs, log_rhs, equality_expected, vacuous: false }
    }

    fn vacuous() -> Self {
        Self { log_lhs: f64::NEG_INFINITY, log_rhs: f64::NEG_INFINITY, equality_expected: false, vacuous: true }
    }

    pub fn lhs(&self) -> f64 {
        self.log_lhs.exp()
    }

    pub fn rhs(&self) -> f64 {
        self.log_rhs.exp()
    }

    /// `max(0, rhs - lhs) / max(lhs, rhs)`.
    pub fn violation(&self) -> f64 {
        if self.vacuous || self.log_rhs == f64::NEG_INFINITY || self.log_lhs >= self.log_rhs {
            0.0
        } else {
            -(self.log_lhs - self.log_rhs).exp_m1()
        }
    }

    /// `|lhs - rhs| / max(lhs, rhs)`.
    pub fn deviation(&self) -> f64 {
        if self.vacuous || (self.log_lhs == f64::NEG_INFINITY && self.log_rhs == f64::NEG_INFINITY) {
            0.0
        } else {
            -(-(self.log_lhs - self.log_rhs).abs()).exp_m1()
        }
    }

    pub fn holds(&self) -> bool {
        self.violation() <= INEQUALITY_SLACK && (!self.equality_expected || self.deviation() <= EQUALITY_TOLERANCE)
    }

    /// Error in units of the applicable tolerance; at most 1 when the instance holds.
    pub fn scaled_error(&self) -> f64 {
        let v = self.violation() / INEQUALITY_SLACK;
        if self.equality_expected {
            v.max(self.deviation() / EQUALITY_TOLERANCE)
        } else {
            v
        }
    }
}

type Key = (u64, u64, Color);

fn key(m: &MarkedPoint) -> Key {
    (m.pos.x.to_bits(), m.pos.y.to_bits(), m.color)
}

fn contains(set: &[MarkedPoint], m: &MarkedPoint) -> bool {
    set.iter().any(|p| key(p) == key(m))
}

fn union(a: &[MarkedPoint], b: &[MarkedPoint]) -> Vec<MarkedPoint> {
    let mut out = dedup(a);
    for m in b {
        if !contains(&out, m) {
            out.push(*m);
        }
    }
    out
}

fn intersection(a: &[MarkedPoint], b: &[MarkedPoint]) -> Vec<MarkedPoint> {
    dedup(a).into_iter().filter(|m| contains(b, m)).collect()
}

fn dedup(a: &[MarkedPoint]) -> Vec<MarkedPoint> {
    let mut out: Vec<MarkedPoint> = Vec::with_capacity(a.len());
    for m in a {
        if !contains(&out, m) {
            out.push(*m);
        }
    }
    out
}

fn same_set(a: &[MarkedPoint], b: &[MarkedPoint]) -> bool {
    let (a, b) = (dedup(a), dedup(b));
    a.len() == b.len() && a.iter().all(|m| contains(&b, m))
}

fn of_color(a: &[MarkedPoint], c: Color) -> Vec<MarkedPoint> {
    a.iter().filter(|m| m.color == c).copied().collect()
}

/// `N(a) ∩ N(b)` has positive measure.
fn neighborhoods_overlap(space: &Space, a: &[MarkedPoint], b: &[MarkedPoint]) -> bool {
    a.iter().any(|x| {
        b.iter().any(|y| {
            if x.color != y.color {
                return false;
            }
            match space.kind() {
                SpaceKind::Finite(t) => {
                    let (i, j) = (x.pos.type_index(), y.pos.type_index());
                    (0..t.len()).any(|z| t.compatible(i, z) && t.compatible(j, z))
                }
                _ => space.dist(&x.pos, &y.pos) < 2.0 * space.radius(),
            }
        })
    })
}

fn log_janossy(space: &Space, params: &ModelParams, pts: &[MarkedPoint]) -> Result<f64> {
    Ok(janossy_tilde(space, params, pts, DEFAULT_JANOSSY_CAP)?.log_value)
}

/// `Pi~(xi ∪ gamma) >= Pi~(xi) Pi~(gamma)` for disjoint `xi`, `gamma` with a
/// valid union, with equality when their neighbourhoods are disjoint.
pub fn fkg_weak_check(space: &Space, params: &ModelParams, xi: &[MarkedPoint], gamma: &[MarkedPoint]) -> Result<InequalityOutcome> {
    if !intersection(xi, gamma).is_empty() {
        return Err(FifmError::Argument("xi and gamma must be disjoint".into()));
    }
    let u = union(xi, gamma);
    if !is_valid_points(space, &u) {
        return Err(FifmError::Argument("xi ∪ gamma must be a valid configuration".into()));
    }
    let lhs = log_janossy(space, params, &u)?;
    let rhs = log_janossy(space, params, xi)? + log_janossy(space, params, gamma)?;
    Ok(InequalityOutcome::new(lhs, rhs, !neighborhoods_overlap(space, xi, gamma)))
}

/// `Pi~(xi ∪ gamma) Pi~(xi ∩ gamma) >= Pi~(xi) Pi~(gamma)` for sets of one colour.
pub fn fkg_same_type_check(space: &Space, params: &ModelParams, xi: &[MarkedPoint], gamma: &[MarkedPoint]) -> Result<InequalityOutcome> {
    let mut colors = xi.iter().chain(gamma).map(|m| m.color);
    if let Some(c) = colors.next() {
        if colors.any(|d| d != c) {
            return Err(FifmError::Argument("same-type check needs points of a single colour".into()));
        }
    }
    let (u, i) = (union(xi, gamma), intersection(xi, gamma));
    let lhs = log_janossy(space, params, &u)? + log_janossy(space, params, &i)?;
    let rhs = log_janossy(space, params, xi)? + log_janossy(space, params, gamma)?;
    let nested = same_set(&i, xi) || same_set(&i, gamma);
    let separated = i.is_empty() && !neighborhoods_overlap(space, xi, gamma);
    Ok(InequalityOutcome::new(lhs, rhs, nested || separated))
}

/// Two configurations with their join and meet.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticePair {
    pub xi: Vec<MarkedPoint>,
    pub gamma: Vec<MarkedPoint>,
    pub join: Vec<MarkedPoint>,
    pub meet: Vec<MarkedPoint>,
}

impl LatticePair {
    pub fn new(xi: Vec<MarkedPoint>, gamma: Vec<MarkedPoint>) -> Self {
        let (r, b) = (Color::Red, Color::Blue);
        let join = union(&union(&of_color(&xi, r), &of_color(&gamma, r)), &intersection(&of_color(&xi, b), &of_color(&gamma, b)));
        let meet = union(&intersection(&of_color(&xi, r), &of_color(&gamma, r)), &union(&of_color(&xi, b), &of_color(&gamma, b)));
        Self { xi, gamma, join, meet }
    }

    /// `{join, meet} = {xi, gamma}`, where both sides coincide.
    pub fn is_trivial(&self) -> bool {
        (same_set(&self.join, &self.xi) && same_set(&self.meet, &self.gamma))
            || (same_set(&self.join, &self.gamma) && same_set(&self.meet, &self.xi))
    }
}

/// `Pi~(xi ∨ gamma) Pi~(xi ∧ gamma) >= Pi~(xi) Pi~(gamma)`.
pub fn fkg_lattice_check(space: &Space, params: &ModelParams, pair: &LatticePair) -> Result<InequalityOutcome> {
    let lhs = log_janossy(space, params, &pair.join)? + log_janossy(space, params, &pair.meet)?;
    let rhs = log_janossy(space, params, &pair.xi)? + log_janossy(space, params, &pair.gamma)?;
    Ok(InequalityOutcome::new(lhs, rhs, pair.is_trivial()))
}

/// `pi~_{zeta1}(eta ∨ gamma) pi~_{zeta2}(eta ∧ gamma) >= pi~_{zeta1}(eta) pi~_{zeta2}(gamma)`
/// for `zeta1 >= zeta2`, with densities clipped by the boundary.
pub fn holley_condition_check(
    space: &Space,
    params: &ModelParams,
    zeta1: &Boundary,
    zeta2: &Boundary,
    eta: &[MarkedPoint],
    gamma: &[MarkedPoint],
) -> Result<InequalityOutcome> {
    if !zeta1.geq(zeta2) {
        return Err(FifmError::Argument("zeta1 must dominate zeta2 in the boundary order".into()));
    }
    holley_inequality(space, params, zeta1, zeta2, eta, gamma)
}

/// The Holley inequality without the order precondition, used as a negative control.
pub fn holley_inequality(
    space: &Space,
    params: &ModelParams,
    zeta1: &Boundary,
    zeta2: &Boundary,
    eta: &[MarkedPoint],
    gamma: &[MarkedPoint],
) -> Result<InequalityOutcome> {
    if !is_valid_with_boundary(space, eta, zeta1)? || !is_valid_with_boundary(space, gamma, zeta2)? {
        return Ok(InequalityOutcome::vacuous());
    }
    let pair = LatticePair::new(eta.to_vec(), gamma.to_vec());
    let log_pi = |pts: &[MarkedPoint], z: &Boundary| -> Result<f64> {
        if !is_valid_with_boundary(space, pts, z)? {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(janossy_boundary(space, params, pts, z, DEFAULT_JANOSSY_CAP)?.log_value)
    };
    let lhs = log_pi(&pair.join, zeta1)? + log_pi(&pair.meet, zeta2)?;
    let rhs = log_pi(eta, zeta1)? + log_pi(gamma, zeta2)?;
    Ok(InequalityOutcome::new(lhs, rhs, zeta1 == zeta2 && pair.is_trivial()))
}

/// Randomised sweep settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub trials: usize,
    /// Cap on the number of points in a generated pool.
    pub n_max: usize,
    /// Poisson mean of the pool size.
    pub mean_count: f64,
    pub seed: u64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { trials: 1000, n_max: 5, mean_count: 3.0, seed: 0 }
    }
}

const PLACEMENT_ATTEMPTS: usize = 1000;

fn pool_size<R: Rng>(rng: &mut R, opts: &SweepOptions) -> usize {
    let k = Poisson::new(opts.mean_count).map(|p| p.sample(rng) as usize).unwrap_or(0);
    k.min(opts.n_max)
}

/// Up to `k` distinct points, each redrawn until `accept` holds for it
/// together with the points already placed.
fn draw_pool<R: Rng>(
    space: &Space,
    rng: &mut R,
    k: usize,
    color: Option<Color>,
    accept: impl Fn(&[MarkedPoint]) -> bool,
) -> Vec<MarkedPoint> {
    let mut pool: Vec<MarkedPoint> = Vec::with_capacity(k);
    for _ in 0..k {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let mut m = space.sample_marked(rng);
            if let Some(c) = color {
                if space.finite_types().is_some() && m.color != c {
                    continue;
                }
                m.color = c;
            }
            if contains(&pool, &m) {
                continue;
            }
            pool.push(m);
            if accept(&pool) {
                break;
            }
            pool.pop();
        }
    }
    pool
}

/// Assigns each point to the first set, the second, or both, uniformly.
fn split_overlapping<R: Rng>(rng: &mut R, pool: &[MarkedPoint]) -> (Vec<MarkedPoint>, Vec<MarkedPoint>) {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for m in pool {
        match rng.random_range(0..3) {
            0 => a.push(*m),
            1 => b.push(*m),
            _ => {
                a.push(*m);
                b.push(*m);
            }
        }
    }
    (a, b)
}

fn describe(name: &str, a: &[MarkedPoint], b: &[MarkedPoint], o: &InequalityOutcome) -> String {
    format!(
        "{name}: xi={} gamma={} lhs={:.17e} rhs={:.17e}",
        serde_json::to_string(a).unwrap_or_default(),
        serde_json::to_string(b).unwrap_or_default(),
        o.lhs(),
        o.rhs()
    )
}

fn sweep_report(
    check: &str,
    outcomes: Vec<Result<(Vec<MarkedPoint>, Vec<MarkedPoint>, InequalityOutcome)>>,
) -> Result<VerificationReport> {
    let mut report = VerificationReport::new(check, 1.0);
    let (mut strict, mut equal, mut vacuous) = (0usize, 0usize, 0usize);
    for o in outcomes {
        let (a, b, o) = o?;
        if o.vacuous {
            vacuous += 1;
        } else if o.equality_expected {
            equal += 1;
        } else if o.deviation() > EQUALITY_TOLERANCE {
            strict += 1;
        }
        report.record(o.scaled_error(), || describe(check, &a, &b, &o));
    }
    report.note(format!(
        "errors in units of tolerance (slack {INEQUALITY_SLACK:e}, equality {EQUALITY_TOLERANCE:e}); \
         {equal} predicted equalities, {strict} strict inequalities, {vacuous} vacuous"
    ));
    Ok(report)
}

/// Weak FKG on random disjoint splits of random valid configurations.
pub fn weak_fkg_sweep(space: &Space, params: &ModelParams, opts: &SweepOptions) -> Result<VerificationReport> {
    let outcomes = crate::par::map(opts.trials, |t| {
        let mut g = rng::stream(opts.seed, t as u64);
        let k = pool_size(&mut g, opts);
        let pool = draw_pool(space, &mut g, k, None, |p| is_valid_points(space, p));
        let (mut xi, mut gamma) = (Vec::new(), Vec::new());
        for m in pool {
            if g.random::<bool>() {
                xi.push(m)
            } else {
                gamma.push(m)
            }
        }
        let o = fkg_weak_check(space, params, &xi, &gamma)?;
        Ok((xi, gamma, o))
    });
    sweep_report("fkg-weak", outcomes)
}

/// Same-type FKG on random overlapping single-colour sets.
pub fn same_type_fkg_sweep(space: &Space, params: &ModelParams, opts: &SweepOptions) -> Result<VerificationReport> {
    let outcomes = crate::par::map(opts.trials, |t| {
        let mut g = rng::stream(opts.seed, t as u64);
        let color = if g.random::<bool>() { Color::Red } else { Color::Blue };
        let k = pool_size(&mut g, opts);
        let pool = draw_pool(space, &mut g, k, Some(color), |_| true);
        let (xi, gamma) = split_overlapping(&mut g, &pool);
        let o = fkg_same_type_check(space, params, &xi, &gamma)?;
        Ok((xi, gamma, o))
    });
    sweep_report("fkg-same-type", outcomes)
}

/// Lattice FKG on random overlapping subsets of random valid configurations.
pub fn lattice_fkg_sweep(space: &Space, params: &ModelParams, opts: &SweepOptions) -> Result<VerificationReport> {
    let outcomes = crate::par::map(opts.trials, |t| {
        let mut g = rng::stream(opts.seed, t as u64);
        let k = pool_size(&mut g, opts);
        let pool = draw_pool(space, &mut g, k, None, |p| is_valid_points(space, p));
        let (xi, gamma) = split_overlapping(&mut g, &pool);
        let pair = LatticePair::new(xi.clone(), gamma.clone());
        let o = fkg_lattice_check(space, params, &pair)?;
        Ok((xi, gamma, o))
    });
    sweep_report("fkg-lattice", outcomes)
}

/// Colour split `Pi~(xi) = Pi~(xi^R) Pi~(xi^B)` on random valid configurations,
/// the equality case of the weak inequality for sets of different colours.
pub fn split_identity_sweep(space: &Space, params: &ModelParams, opts: &SweepOptions) -> Result<VerificationReport> {
    let outcomes = crate::par::map(opts.trials, |t| {
        let mut g = rng::stream(opts.seed, t as u64);
        let k = pool_size(&mut g, opts);
        let pool = draw_pool(space, &mut g, k, None, |p| is_valid_points(space, p));
        let (r, b) = (of_color(&pool, Color::Red), of_color(&pool, Color::Blue));
        let o = fkg_weak_check(space, params, &r, &b)?;
        Ok((r, b, o))
    });
    sweep_report("split-identity", outcomes)
}

/// The FKG sweeps: weak, same-type, lattice and the colour split.
pub fn fkg_sweep(space: &Space, params: &ModelParams, opts: &SweepOptions) -> Result<Vec<VerificationReport>> {
    Ok(vec![
        weak_fkg_sweep(space, params, opts)?,
        same_type_fkg_sweep(space, params, opts)?,
        lattice_fkg_sweep(space, params, opts)?,
        split_identity_sweep(space, params, opts)?,
    ])
}

/// Holley inequality on random interior configurations. Points are drawn from
/// a valid pool and placed in `eta` only when valid under `zeta1`, in `gamma`
/// only when valid under `zeta2`. With `enforce_order = false` the order
/// precondition is skipped, which turns the sweep into a negative control.
pub fn holley_sweep(
    space: &Space,
    params: &ModelParams,
    zeta1: &Boundary,
    zeta2: &Boundary,
    opts: &SweepOptions,
    enforce_order: bool,
) -> Result<VerificationReport> {
    if enforce_order && !zeta1.geq(zeta2) {
        return Err(FifmError::Argument("zeta1 must dominate zeta2 in the boundary order".into()));
    }
    let check = if enforce_order { "holley" } else { "holley-unordered" };
    let outcomes = crate::par::map(opts.trials, |t| {
        let mut g = rng::stream(opts.seed, t as u64);
        let k = pool_size(&mut g, opts);
        let pool = draw_pool(space, &mut g, k, None, |p| is_valid_points(space, p));
        let (mut eta, mut gamma) = (Vec::new(), Vec::new());
        for m in pool {
            let choice = g.random_range(0..3);
            let try_eta = choice != 1;
            let try_gamma = choice != 0;
            if try_eta {
                eta.push(m);
                if !is_valid_with_boundary(space, &eta, zeta1)? {
                    eta.pop();
                }
            }
            if try_gamma {
                gamma.push(m);
                if !is_valid_with_boundary(space, &gamma, zeta2)? {
                    gamma.pop();
                }
            }
        }
        let o = holley_inequality(space, params, zeta1, zeta2, &eta, &gamma)?;
        Ok((eta, gamma, o))
    });
    let mut report = sweep_report(check, outcomes)?;
    report.note(format!("zeta1={zeta1:?} zeta2={zeta2:?}"));
    Ok(report)
}

/// Increasing functionals in the lattice order (more red, less blue).
/// Regions are half-open ranges `[lo, hi)` of the first coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum IncreasingFunctional {
    /// Number of red particles in the region.
    RedCount { lo: f64, hi: f64 },
    /// Minus the number of blue particles in the region.
    MinusBlueCount { lo: f64, hi: f64 },
    /// 1 if some red particle lies within `radius` of `x`.
    RedNear { x: f64, radius: f64 },
}

impl IncreasingFunctional {
    pub fn eval(&self, space: &Space, config: &OrderedConfiguration) -> f64 {
        let items = &config.items;
        match *self {
            Self::RedCount { lo, hi } => {
                items.iter().filter(|p| p.color == Color::Red && p.pos.x >= lo && p.pos.x < hi).count() as f64
            }
            Self::MinusBlueCount { lo, hi } => {
                -(items.iter().filter(|p| p.color == Color::Blue && p.pos.x >= lo && p.pos.x < hi).count() as f64)
            }
            Self::RedNear { x, radius } => {
                let c = Point::line(x);
                let hit = items.iter().any(|p| {
                    let d = if space.is_one_dimensional() { space.dist(&p.pos, &c) } else { (p.pos.x - x).abs() };
                    p.color == Color::Red && d <= radius
                });
                f64::from(u8::from(hit))
            }
        }
    }
}

impl FromStr for IncreasingFunctional {
    type Err = FifmError;

    /// Parses `red-count:LO:HI`, `minus-blue-count:LO:HI` or `red-near:X:RADIUS`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || FifmError::Argument(format!("unknown functional {s:?}; use red-count:LO:HI, minus-blue-count:LO:HI or red-near:X:R"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let a: f64 = parts[1].parse().map_err(|_| bad())?;
        let b: f64 = parts[2].parse().map_err(|_| bad())?;
        match parts[0] {
            "red-count" => Ok(Self::RedCount { lo: a, hi: b }),
            "minus-blue-count" => Ok(Self::MinusBlueCount { lo: a, hi: b }),
            "red-near" => Ok(Self::RedNear { x: a, radius: b }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for IncreasingFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::RedCount { lo, hi } => write!(f, "red-count:{lo}:{hi}"),
            Self::MinusBlueCount { lo, hi } => write!(f, "minus-blue-count:{lo}:{hi}"),
            Self::RedNear { x, radius } => write!(f, "red-near:{x}:{radius}"),
        }
    }
}

/// Sample covariance of two functionals with the standard error of the mean
/// of centred products.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Association {
    pub f: IncreasingFunctional,
    pub g: IncreasingFunctional,
    pub cov: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl Association {
    /// Covariance in units of its standard error; `+inf` when both vanish at 0.
    pub fn z_score(&self) -> f64 {
        if self.stderr > 0.0 {
            self.cov / self.stderr
        } else if self.cov >= 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Covariance of `f` and `g` over given configurations.
pub fn association_from_samples(
    space: &Space,
    configs: &[OrderedConfiguration],
    f: IncreasingFunctional,
    g: IncreasingFunctional,
) -> Association {
    let n = configs.len();
    let fs: Vec<f64> = configs.iter().map(|c| f.eval(space, c)).collect();
    let gs: Vec<f64> = configs.iter().map(|c| g.eval(space, c)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n.max(1) as f64;
    let (mf, mg) = (mean(&fs), mean(&gs));
    let prods: Vec<f64> = fs.iter().zip(&gs).map(|(a, b)| (a - mf) * (b - mg)).collect();
    let cov = if n > 1 { prods.iter().sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    let mp = mean(&prods);
    let var = if n > 1 { prods.iter().map(|p| (p - mp).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    Association { f, g, cov, stderr: (var / n.max(1) as f64).sqrt(), samples: n }
}

/// Stationary samples for association estimates, drawn by CFTP with a
/// continuous regeneration scan.
pub fn stationary_samples(space: &Space, params: &ModelParams, samples: usize, seed: u64) -> Result<Vec<OrderedConfiguration>> {
    let opts = CftpOptions { granularity: ScanGranularity::Continuous, ..CftpOptions::default() };
    Ok(sample_many(space, params, samples, seed, &opts)?.into_iter().map(|s| s.config).collect())
}

/// Covariance of two increasing functionals under the stationary law.
pub fn positive_association_estimate(
    space: &Space,
    params: &ModelParams,
    f: IncreasingFunctional,
    g: IncreasingFunctional,
    samples: usize,
    seed: u64,
) -> Result<Association> {
    if samples < 2 {
        return Err(FifmError::Argument("at least two samples are needed".into()));
    }
    let configs = stationary_samples(space, params, samples, seed)?;
    Ok(association_from_samples(space, &configs, f, g))
}

/// Default functional pairs on a one-dimensional domain of length `length`.
pub fn default_association_pairs(length: f64, radius: f64) -> Vec<(IncreasingFunctional, IncreasingFunctional)> {
    use IncreasingFunctional::*;
    let half = length / 2.0;
    vec![
        (RedCount { lo: 0.0, hi: half }, RedCount { lo: half, hi: length }),
        (RedCount { lo: 0.0, hi: length }, MinusBlueCount { lo: 0.0, hi: length }),
        (RedNear { x: half / 2.0, radius }, RedCount { lo: half, hi: length }),
    ]
}

/// Passes when every covariance is at least `-z_tolerance` standard errors.
pub fn positive_association_report(
    space: &Space,
    configs: &[OrderedConfiguration],
    pairs: &[(IncreasingFunctional, IncreasingFunctional)],
    z_tolerance: f64,
) -> (VerificationReport, Vec<Association>) {
    let mut report = VerificationReport::new("positive-association", z_tolerance);
    let mut out = Vec::new();
    for &(f, g) in pairs {
        let a = association_from_samples(space, configs, f, g);
        report.record((-a.z_score()).max(0.0), || format!("f={f} g={g} cov={:.6e} stderr={:.3e}", a.cov, a.stderr));
        report.note(format!("f={f} g={g} cov={:.6e} stderr={:.3e}", a.cov, a.stderr));
        out.push(a);
    }
    (report, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn p(mu: f64) -> ModelParams {
        ModelParams::new(1.0, mu).unwrap()
    }

    fn red(x: f64) -> MarkedPoint {
        MarkedPoint::line(x, Color::Red)
    }

    fn blue(x: f64) -> MarkedPoint {
        MarkedPoint::line(x, Color::Blue)
    }

    /// Brute-force permutation sum with neighbourhood measures from the space.
    fn oracle_janossy(space: &Space, params: &ModelParams, pts: &[MarkedPoint], b: &Boundary) -> f64 {
        fn perms(v: &mut Vec<MarkedPoint>, k: usize, out: &mut Vec<Vec<MarkedPoint>>) {
            if k == v.len() {
                out.push(v.clone());
                return;
            }
            for i in k..v.len() {
                v.swap(k, i);
                perms(v, k + 1, out);
                v.swap(k, i);
            }
        }
        let mut all = Vec::new();
        perms(&mut pts.to_vec(), 0, &mut all);
        all.iter()
            .map(|order| {
                (1..=order.len())
                    .map(|i| {
                        let s = space.sides(&order[..i]);
                        let meas = match b {
                            Boundary::Free => s.red.measure() + s.blue.measure(),
                            Boundary::Red => {
                                let l = match space.kind() {
                                    SpaceKind::Interval { length } => *length,
                                    _ => unreachable!(),
                                };
                                let rim = crate::intervals::IntervalSet::from_intervals([(0.0, 1.0f64.min(l)), ((l - 1.0).max(0.0), l)]);
                                s.red.measure() + s.blue.difference(&rim).measure()
                            }
                            _ => unreachable!(),
                        };
                        1.0 / (params.intensity * meas + i as f64 * params.mu)
                    })
                    .product::<f64>()
            })
            .sum()
    }

    #[test]
    fn lemma_aux_base_case() {
        let r = lemma_aux_check(&[2.0], &[3.0]).unwrap();
        assert!((r.lhs - (0.1 + 1.0 / 15.0)).abs() < 1e-15);
        assert!((r.rhs - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.paths, 2);
    }

    #[test]
    fn lemma_aux_one_sided() {
        let r = lemma_aux_check(&[2.0, 5.0, 0.5], &[]).unwrap();
        assert!((r.lhs - 0.2).abs() < 1e-15);
        assert_eq!(r.paths, 1);
        assert!(lemma_aux_check(&[1.0; 9], &[1.0; 8]).is_err());
        assert!(lemma_aux_check(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn lemma_aux_random_instances() {
        let mut g = rng::stream(17, 0);
        for _ in 0..100 {
            let n = g.random_range(0..=5);
            let m = g.random_range(0..=5);
            let a: Vec<f64> = (0..n).map(|_| g.random_range(0.05..5.0)).collect();
            let b: Vec<f64> = (0..m).map(|_| g.random_range(0.05..5.0)).collect();
            let r = lemma_aux_check(&a, &b).unwrap();
            assert!(r.rel_err < 1e-12, "{a:?} {b:?} {r:?}");
        }
    }

    #[test]
    fn janossy_matches_permutation_oracle_with_boundary() {
        let s = Space::interval(4.0).unwrap();
        let pts = [red(0.4), red(1.5), blue(3.0)];
        for b in [Boundary::Free, Boundary::Red] {
            let fast = janossy_boundary(&s, &p(1.0), &pts, &b, 20).unwrap().value();
            let slow = oracle_janossy(&s, &p(1.0), &pts, &b);
            assert!((fast - slow).abs() < 1e-13 * slow, "{b:?}: {fast} vs {slow}");
        }
    }

    #[test]
    fn weak_equality_far_apart_and_strict_when_overlapping() {
        let s = Space::circle(20.0).unwrap();
        let o = fkg_weak_check(&s, &p(1.0), &[red(1.0), red(1.5)], &[red(10.0), blue(15.0)]).unwrap();
        assert!(o.equality_expected);
        assert!(o.deviation() < EQUALITY_TOLERANCE, "{o:?}");
        let o = fkg_weak_check(&s, &p(1.0), &[red(1.0)], &[red(1.8)]).unwrap();
        assert!(!o.equality_expected);
        assert!(o.holds());
        assert!(o.deviation() > 1e-3, "{o:?}");
        let o = fkg_weak_check(&s, &p(1.0), &[], &[red(1.8), blue(5.0)]).unwrap();
        assert!(o.equality_expected && o.holds());
    }

    #[test]
    fn weak_rejects_overlapping_or_invalid_input() {
        let s = Space::circle(20.0).unwrap();
        assert!(matches!(fkg_weak_check(&s, &p(1.0), &[red(1.0)], &[red(1.0)]), Err(FifmError::Argument(_))));
        assert!(matches!(fkg_weak_check(&s, &p(1.0), &[red(1.0)], &[blue(1.5)]), Err(FifmError::Argument(_))));
    }

    #[test]
    fn same_type_equalities_and_errors() {
        let s = Space::circle(10.0).unwrap();
        let xi = [red(1.0), red(2.2)];
        let o = fkg_same_type_check(&s, &p(1.0), &xi, &xi).unwrap();
        assert!(o.equality_expected && o.deviation() < EQUALITY_TOLERANCE);
        let o = fkg_same_type_check(&s, &p(1.0), &[red(1.0)], &[red(6.0)]).unwrap();
        assert!(o.equality_expected && o.deviation() < EQUALITY_TOLERANCE);
        let o = fkg_same_type_check(&s, &p(1.0), &[red(1.0), red(1.7)], &[red(1.7), red(2.4)]).unwrap();
        assert!(o.holds() && o.deviation() > 1e-6, "{o:?}");
        assert!(fkg_same_type_check(&s, &p(1.0), &[red(1.0)], &[blue(6.0)]).is_err());
    }

    #[test]
    fn lattice_join_meet_and_trivial_cases() {
        let pair = LatticePair::new(vec![red(1.0), blue(5.0)], vec![red(2.0), blue(5.0), blue(7.0)]);
        assert!(same_set(&pair.join, &[red(1.0), red(2.0), blue(5.0)]));
        assert!(same_set(&pair.meet, &[blue(5.0), blue(7.0)]));
        let s = Space::circle(10.0).unwrap();
        let o = fkg_lattice_check(&s, &p(1.0), &pair).unwrap();
        assert!(o.holds(), "{o:?}");
        let sep = LatticePair::new(vec![red(1.0), red(2.0)], vec![blue(5.0)]);
        assert!(sep.is_trivial());
        let o = fkg_lattice_check(&s, &p(1.0), &sep).unwrap();
        assert!(o.deviation() < EQUALITY_TOLERANCE);
    }

    #[test]
    fn holley_free_boundaries_reduce_to_lattice() {
        let s = Space::interval(6.0).unwrap();
        let eta = vec![red(1.0), blue(4.0)];
        let gamma = vec![red(1.6), blue(4.0), blue(5.5)];
        let h = holley_condition_check(&s, &p(1.0), &Boundary::Free, &Boundary::Free, &eta, &gamma).unwrap();
        let l = fkg_lattice_check(&s, &p(1.0), &LatticePair::new(eta, gamma)).unwrap();
        assert!((h.log_lhs - l.log_lhs).abs() < 1e-14 && (h.log_rhs - l.log_rhs).abs() < 1e-14);
    }

    #[test]
    fn holley_order_and_single_point_cases() {
        let s = Space::interval(4.0).unwrap();
        let err = holley_condition_check(&s, &p(1.0), &Boundary::Free, &Boundary::Red, &[], &[]);
        assert!(matches!(err, Err(FifmError::Argument(_))));
        // A red point in the rim is favoured by the red boundary.
        let o = holley_condition_check(&s, &p(1.0), &Boundary::Red, &Boundary::Free, &[], &[red(0.5)]).unwrap();
        assert!(o.holds() && o.deviation() > 1e-3, "{o:?}");
        let swapped = holley_inequality(&s, &p(1.0), &Boundary::Free, &Boundary::Red, &[], &[red(0.5)]).unwrap();
        assert!(!swapped.holds());
        // A blue point in the rim is invalid under the red boundary.
        let o = holley_condition_check(&s, &p(1.0), &Boundary::Red, &Boundary::Free, &[blue(0.5)], &[]).unwrap();
        assert!(o.vacuous);
    }

    #[test]
    fn sweeps_pass_and_negative_control_fails() {
        let s = Space::circle(4.0).unwrap();
        let opts = SweepOptions { trials: 200, seed: 3, ..SweepOptions::default() };
        for r in fkg_sweep(&s, &p(1.0), &opts).unwrap() {
            assert!(r.passed, "{r} {:?}", r.notes);
        }
        let w = Space::interval(4.0).unwrap();
        let h = holley_sweep(&w, &p(1.0), &Boundary::Red, &Boundary::Free, &opts, true).unwrap();
        assert!(h.passed, "{h}");
        let neg = holley_sweep(&w, &p(1.0), &Boundary::Free, &Boundary::Red, &opts, false).unwrap();
        assert!(!neg.passed, "{neg}");
        assert!(holley_sweep(&w, &p(1.0), &Boundary::Free, &Boundary::Red, &opts, true).is_err());
    }

    #[test]
    fn sweeps_on_finite_graph() {
        let g = crate::bipartite::CompatibilityGraph::n_graph();
        let opts = SweepOptions { trials: 200, seed: 5, ..SweepOptions::default() };
        for r in fkg_sweep(&g.space(), &p(0.7), &opts).unwrap() {
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn functionals_parse_and_evaluate() {
        let f: IncreasingFunctional = "red-count:0:2".parse().unwrap();
        assert_eq!(f, IncreasingFunctional::RedCount { lo: 0.0, hi: 2.0 });
        assert_eq!(f.to_string().parse::<IncreasingFunctional>().unwrap(), f);
        assert!("sum:0:1".parse::<IncreasingFunctional>().is_err());
        let s = Space::circle(4.0).unwrap();
        let part = |x: f64, c: Color| crate::fifm::Particle { pos: Point::line(x), color: c, birth: 0.0, patience: 1.0, id: 0 };
        let c = OrderedConfiguration::new(vec![part(0.5, Color::Red), part(1.0, Color::Blue), part(3.9, Color::Red)]);
        assert_eq!(f.eval(&s, &c), 1.0);
        assert_eq!(IncreasingFunctional::MinusBlueCount { lo: 0.0, hi: 4.0 }.eval(&s, &c), -1.0);
        assert_eq!(IncreasingFunctional::RedNear { x: 0.1, radius: 0.25 }.eval(&s, &c), 1.0);
        assert_eq!(IncreasingFunctional::RedNear { x: 2.0, radius: 0.25 }.eval(&s, &c), 0.0);
    }

    #[test]
    fn variance_is_nonnegative_and_association_small_run() {
        let s = Space::circle(4.0).unwrap();
        let configs = stationary_samples(&s, &p(1.0), 2000, 11).unwrap();
        let f = IncreasingFunctional::RedCount { lo: 0.0, hi: 2.0 };
        assert!(association_from_samples(&s, &configs, f, f).cov >= 0.0);
        let (r, _) = positive_association_report(&s, &configs, &default_association_pairs(4.0, 1.0), 3.0);
        assert!(r.passed, "{r} {:?}", r.notes);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn lattice_inequality_on_valid_pools(xs in prop::collection::vec((0.0f64..6.0, any::<bool>(), 0u8..3), 0..6)) {
            let s = Space::circle(6.0).unwrap();
            let mut pool: Vec<MarkedPoint> = Vec::new();
            let mut roles = Vec::new();
            for (x, r, role) in xs {
                let m = MarkedPoint::line(x, if r { Color::Red } else { Color::Blue });
                pool.push(m);
                if is_valid_points(&s, &pool) && !contains(&pool[..pool.len() - 1], &m) {
                    roles.push(role);
                } else {
                    pool.pop();
                }
            }
            let xi: Vec<_> = pool.iter().zip(&roles).filter(|(_, r)| **r != 1).map(|(m, _)| *m).collect();
            let gamma: Vec<_> = pool.iter().zip(&roles).filter(|(_, r)| **r != 0).map(|(m, _)| *m).collect();
            let o = fkg_lattice_check(&s, &p(1.0), &LatticePair::new(xi, gamma)).unwrap();
            prop_assert!(o.holds(), "{:?}", o);
        }
    }
}
