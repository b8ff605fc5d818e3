//! Stationary densities and normalising constants.
//!
//! Densities are taken with respect to `lambda_bar^n`, where `lambda_bar` is
//! the arrival measure `intensity * reference (x) counting on colours`; every
//! neighbourhood measure below is scaled by the intensity. Values are kept in
//! log space.
//!
//! * Ordered product form: `prod_i 1 / (lambda_bar(N(g_1..g_i)) + i mu)` on
//!   valid configurations, with value 1 at the empty state.
//! * Detailed product form: `prod_{i=0..n} 1 / rho(Q_u^i)` with
//!   `rho(k) = lambda_bar(D x C) + k mu` and `Q_u^i` the number of unmatched
//!   items among the first `i`. Summing it over matched insertions gives the
//!   ordered form divided by `rho(0)`.
//! * Janossy density: the ordered form summed over all orderings. The factor
//!   at step `i` depends only on the set of the first `i` points, so the sum is
//!   evaluated by a recursion over subsets in `2^n n` steps.
//! * Boundary-conditioned Janossy density on an interval window: every
//!   neighbourhood measure is clipped to the complement of `N(zeta)`.

use crate::error::{FifmError, Result};
use crate::fifm::{is_valid_detailed, is_valid_points, DetailedState, Mark, OrderedConfiguration};
use crate::intervals::IntervalSet;
use crate::rng;
use crate::simulator::{adaptive_simpson, ModelParams};
use crate::space::{Color, MarkedPoint, Sides, Space, SpaceKind};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Default cap on the number of points in a Janossy evaluation.
pub const DEFAULT_JANOSSY_CAP: usize = 20;
/// Default truncation length for normalising constants.
pub const DEFAULT_TRUNCATION: usize = 30;

/// Natural log of an unnormalised density, with the normalised value when known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityValue {
    pub log_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalized: Option<f64>,
}

impl DensityValue {
    pub fn from_log(log_value: f64) -> Self {
        Self { log_value, normalized: None }
    }

    pub fn zero() -> Self {
        Self::from_log(f64::NEG_INFINITY)
    }

    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }

    /// Attaches the normalised value `exp(log_value) / k_inverse`.
    pub fn normalize(mut self, k_inverse: f64) -> Self {
        self.normalized = Some((self.log_value - k_inverse.ln()).exp());
        self
    }
}

/// `log(sum(exp(xs)))`, exact for all-`-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `rho(n) = intensity * lambda_bar(D x C) + n mu`.
pub fn rho(n: usize, space: &Space, params: &ModelParams) -> f64 {
    params.arrival_rate(space) + n as f64 * params.mu
}

fn scaled_measure(space: &Space, params: &ModelParams, pts: &[MarkedPoint]) -> f64 {
    params.intensity * space.neighborhood_measure_unchecked(pts).value
}

fn check_points(space: &Space, pts: &[MarkedPoint]) -> Result<()> {
    pts.iter().try_for_each(|m| space.check_marked(m))
}

/// Unnormalised ordered density of a sequence of marked points.
pub fn pi_ordered_points(space: &Space, params: &ModelParams, pts: &[MarkedPoint]) -> Result<DensityValue> {
    params.validate()?;
    check_points(space, pts)?;
    if !is_valid_points(space, pts) {
        return Ok(DensityValue::zero());
    }
    let mut log = 0.0;
    for i in 1..=pts.len() {
        log -= (scaled_measure(space, params, &pts[..i]) + i as f64 * params.mu).ln();
    }
    Ok(DensityValue::from_log(log))
}

/// Unnormalised ordered density of a configuration.
pub fn pi_ordered(space: &Space, params: &ModelParams, config: &OrderedConfiguration) -> Result<DensityValue> {
    pi_ordered_points(space, params, &config.marked())
}

/// Unnormalised detailed density `prod_{i=0..n} 1/rho(Q_u^i)`.
pub fn pi_hat_detailed(space: &Space, params: &ModelParams, state: &DetailedState) -> Result<DensityValue> {
    params.validate()?;
    for it in &state.items {
        space.check_marked(&it.point)?;
    }
    if !is_valid_detailed(space, state) {
        return Ok(DensityValue::zero());
    }
    let mut q = 0usize;
    let mut log = -rho(0, space, params).ln();
    for it in &state.items {
        if it.mark == Mark::U {
            q += 1;
        }
        log -= rho(q, space, params).ln();
    }
    Ok(DensityValue::from_log(log))
}

/// Boundary condition outside an interval window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// No particles outside the window.
    Free,
    /// Every point outside the window carries a red particle.
    Red,
    /// Every point outside the window carries a blue particle.
    Blue,
    /// Finitely many particles outside the window.
    Points(Vec<MarkedPoint>),
}

impl Boundary {
    /// Parses `red`, `blue`, `free` or a JSON array of `{pos, color}` points.
    pub fn parse(text: &str) -> Result<Self> {
        match text.trim() {
            "free" => Ok(Boundary::Free),
            "red" => Ok(Boundary::Red),
            "blue" => Ok(Boundary::Blue),
            other => Ok(Boundary::Points(serde_json::from_str(other)?)),
        }
    }

    /// The lattice order: more red and less blue outside the window.
    pub fn geq(&self, other: &Boundary) -> bool {
        use Boundary::*;
        let reds = |b: &Boundary| match b {
            Points(p) => p.iter().filter(|m| m.color == Color::Red).map(|m| m.pos.x.to_bits()).collect(),
            _ => Vec::new(),
        };
        let blues = |b: &Boundary| match b {
            Points(p) => p.iter().filter(|m| m.color == Color::Blue).map(|m| m.pos.x.to_bits()).collect(),
            _ => Vec::new(),
        };
        let subset = |a: &Vec<u64>, b: &Vec<u64>| a.iter().all(|x| b.contains(x));
        match (self, other) {
            (Red, _) | (_, Blue) => true,
            (Blue, _) | (_, Red) => false,
            (Free, Free) => true,
            (Free, Points(_)) => blues(other).is_empty() && reds(other).is_empty(),
            (Points(_), Free) => blues(self).is_empty(),
            (Points(_), Points(_)) => subset(&reds(other), &reds(self)) && subset(&blues(self), &blues(other)),
        }
    }

    /// Colour sides of `N(zeta)` inside the window `[0, length]`.
    fn exclusion(&self, space: &Space) -> Result<Sides> {
        if *self == Boundary::Free {
            return Ok(Sides::default());
        }
        let SpaceKind::Interval { length } = space.kind() else {
            return Err(FifmError::Capability("boundary conditions need an interval window".into()));
        };
        let (l, r) = (*length, space.radius());
        let rim = IntervalSet::from_intervals([(0.0, r.min(l)), ((l - r).max(0.0), l)]);
        Ok(match self {
            Boundary::Free => unreachable!(),
            // Red outside blocks blue arrivals near the rim, and vice versa.
            Boundary::Red => Sides { red: IntervalSet::empty(), blue: rim },
            Boundary::Blue => Sides { red: rim, blue: IntervalSet::empty() },
            Boundary::Points(pts) => {
                for (i, a) in pts.iter().enumerate() {
                    if a.pos.x >= 0.0 && a.pos.x <= l {
                        return Err(FifmError::Argument(format!("boundary point {} lies inside the window", a.pos.x)));
                    }
                    for b in &pts[i + 1..] {
                        if a.color != b.color && (a.pos.x - b.pos.x).abs() <= r {
                            return Err(FifmError::Argument("boundary contains a compatible pair".into()));
                        }
                    }
                }
                let clip = |c: Color| {
                    IntervalSet::from_intervals(
                        pts.iter()
                            .filter(|m| m.color == c.opposite())
                            .map(|m| ((m.pos.x - r).max(0.0), (m.pos.x + r).min(l))),
                    )
                };
                Sides { red: clip(Color::Red), blue: clip(Color::Blue) }
            }
        })
    }
}

/// Validity of interior points together with the boundary.
pub fn is_valid_with_boundary(space: &Space, pts: &[MarkedPoint], boundary: &Boundary) -> Result<bool> {
    if !is_valid_points(space, pts) {
        return Ok(false);
    }
    let ex = boundary.exclusion(space)?;
    Ok(!pts.iter().any(|m| ex.side(m.color).contains(m.pos.x)))
}

/// Janossy density `sum over orderings of the ordered product`, without validity indicator.
pub fn janossy_tilde(space: &Space, params: &ModelParams, pts: &[MarkedPoint], cap: usize) -> Result<DensityValue> {
    janossy_boundary(space, params, pts, &Boundary::Free, cap)
}

/// Janossy density with every neighbourhood measure clipped to the complement of `N(zeta)`.
pub fn janossy_boundary(
    space: &Space,
    params: &ModelParams,
    pts: &[MarkedPoint],
    boundary: &Boundary,
    cap: usize,
) -> Result<DensityValue> {
    params.validate()?;
    check_points(space, pts)?;
    let n = pts.len();
    if n > cap || n > 30 {
        return Err(FifmError::Capability(format!(
            "{n} points exceed the Janossy cap {cap}; split by colour, the density factorises over colours"
        )));
    }
    let ex = boundary.exclusion(space)?;
    let clipped = *boundary != Boundary::Free;
    let measure = |subset: &[MarkedPoint]| -> f64 {
        if clipped {
            let s = space.sides(subset);
            params.intensity * (s.red.difference(&ex.red).measure() + s.blue.difference(&ex.blue).measure())
        } else {
            scaled_measure(space, params, subset)
        }
    };
    let full = 1usize << n;
    let mut logf = vec![f64::NEG_INFINITY; full];
    logf[0] = 0.0;
    let mut subset = Vec::with_capacity(n);
    let mut terms = Vec::with_capacity(n);
    for s in 1..full {
        subset.clear();
        terms.clear();
        for (k, p) in pts.iter().enumerate() {
            if s & (1 << k) != 0 {
                subset.push(*p);
                terms.push(logf[s ^ (1 << k)]);
            }
        }
        let denom = measure(&subset) + subset.len() as f64 * params.mu;
        logf[s] = log_sum_exp(&terms) - denom.ln();
    }
    Ok(DensityValue::from_log(logf[full - 1]))
}

/// `pi~`: the Janossy density times the validity indicator.
pub fn pi_tilde(space: &Space, params: &ModelParams, pts: &[MarkedPoint], boundary: &Boundary, cap: usize) -> Result<DensityValue> {
    if !is_valid_with_boundary(space, pts, boundary)? {
        return Ok(DensityValue::zero());
    }
    janossy_boundary(space, params, pts, boundary, cap)
}

/// How a term of the normalising constant was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TermMethod {
    Exact,
    Quadrature,
    ImportanceSampling,
}

/// `Z_n`, the total mass of valid configurations with `n` particles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Term {
    pub n: usize,
    pub value: f64,
    pub stderr: f64,
    pub method: TermMethod,
}

/// `K^{-1} = sum_n Z_n` with the stationary law of the particle count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizingConstant {
    pub k_inverse: f64,
    pub k_inverse_stderr: f64,
    /// Certified bound on `sum_{n > truncation} Z_n`.
    pub tail_bound: f64,
    pub terms: Vec<Term>,
    /// `P(|eta| = n)` for `n = 0..=truncation`.
    pub count_probs: Vec<f64>,
    pub count_stderr: Vec<f64>,
}

impl NormalizingConstant {
    /// Stationary probability of the empty state.
    pub fn pi_empty(&self) -> f64 {
        1.0 / self.k_inverse
    }

    pub fn mean_count(&self) -> f64 {
        self.count_probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationOptions {
    /// Terms up to this length use nested adaptive quadrature on continuous domains.
    pub quadrature_levels: usize,
    /// Importance-sampling paths for the remaining terms.
    pub paths: usize,
    pub seed: u64,
    pub quadrature_tol: f64,
}

impl Default for NormalizationOptions {
    fn default() -> Self {
        Self { quadrature_levels: 2, paths: 200_000, seed: 0x5eed, quadrature_tol: 1e-10 }
    }
}

/// `K^{-1}` truncated at `truncation` particles, with a certified tail bound.
///
/// Finite domains are summed exactly by a recursion over the set of types
/// present. One-dimensional continuous domains use nested adaptive quadrature
/// for the first terms and sequential importance sampling for the rest: the
/// `i`-th point is drawn uniformly from the region still allowed by the
/// previous points, so `prod_i a_{i-1} / (m_i + i mu)` is unbiased for `Z_n`,
/// where `a` is the allowed mass and `m` the neighbourhood mass.
pub fn normalizing_constant(
    space: &Space,
    params: &ModelParams,
    truncation: usize,
    opts: &NormalizationOptions,
) -> Result<NormalizingConstant> {
    params.validate()?;
    if truncation < 1 {
        return Err(FifmError::Argument("truncation must be at least 1".into()));
    }
    match space.kind() {
        SpaceKind::Finite(_) => finite_constant(space, params, truncation),
        SpaceKind::Interval { .. } | SpaceKind::Circle { .. } => continuous_constant(space, params, truncation, opts),
        SpaceKind::Torus2D { .. } => {
            Err(FifmError::Capability("normalising constants are computed on one-dimensional and finite domains".into()))
        }
    }
}

/// Sum of the geometric-style tail `sum_{n > N} B_n` with `B_n = B_N prod_{j=N+1..n} r_j`.
fn product_tail(b_n: f64, ratio: impl Fn(usize) -> f64, from: usize) -> f64 {
    let mut term = b_n;
    let mut sum = 0.0;
    let mut j = from + 1;
    loop {
        term *= ratio(j);
        sum += term;
        if term <= sum * 1e-17 || term == 0.0 || j > from + 100_000 {
            break;
        }
        j += 1;
    }
    sum
}

fn finite_constant(space: &Space, params: &ModelParams, truncation: usize) -> Result<NormalizingConstant> {
    let t = space.finite_types().expect("finite space");
    let k = t.len();
    if k > 20 {
        return Err(FifmError::Capability(format!("{k} types exceed the exact-summation limit of 20")));
    }
    let lam: Vec<f64> = (0..k).map(|c| params.intensity * t.weight(c)).collect();
    let nbr_mass = |set: usize| -> f64 {
        (0..k).filter(|&b| (0..k).any(|a| set & (1 << a) != 0 && t.compatible(a, b))).map(|b| lam[b]).sum()
    };
    let mut blocked = vec![0usize; k];
    for (a, bl) in blocked.iter_mut().enumerate() {
        for b in 0..k {
            if t.compatible(a, b) {
                *bl |= 1 << b;
            }
        }
    }
    let sets = 1usize << k;
    let masses: Vec<f64> = (0..sets).map(nbr_mass).collect();
    let mut cur = vec![0.0f64; sets];
    cur[0] = 1.0;
    let mut terms = vec![Term { n: 0, value: 1.0, stderr: 0.0, method: TermMethod::Exact }];
    for n in 1..=truncation {
        let mut next = vec![0.0f64; sets];
        for (set, &w) in cur.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let forbidden = (0..k).filter(|&a| set & (1 << a) != 0).fold(0usize, |acc, a| acc | blocked[a]);
            for c in 0..k {
                if forbidden & (1 << c) != 0 {
                    continue;
                }
                let s2 = set | (1 << c);
                next[s2] += w * lam[c] / (masses[s2] + n as f64 * params.mu);
            }
        }
        terms.push(Term { n, value: next.iter().sum(), stderr: 0.0, method: TermMethod::Exact });
        cur = next;
    }
    let single: Vec<f64> = (0..k).map(|c| masses[1 << c]).collect();
    let ratio = |j: usize| (0..k).map(|c| lam[c] / (single[c] + j as f64 * params.mu)).sum::<f64>();
    let tail = product_tail(terms[truncation].value, ratio, truncation);
    Ok(assemble(terms, tail, None))
}

/// Builds the count law. `paths` carries the per-path sums needed for the
/// delta-method standard errors of importance-sampled terms.
fn assemble(terms: Vec<Term>, tail_bound: f64, paths: Option<&PathMoments>) -> NormalizingConstant {
    let k_inverse: f64 = terms.iter().map(|t| t.value).sum();
    let count_probs: Vec<f64> = terms.iter().map(|t| t.value / k_inverse).collect();
    let (count_stderr, k_inverse_stderr) = match paths {
        None => (vec![0.0; terms.len()], 0.0),
        Some(pm) => {
            let n = pm.paths as f64;
            let var_s = (pm.ss / n - (pm.s / n).powi(2)).max(0.0);
            let se: Vec<f64> = terms
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let p = t.value / k_inverse;
                    // Influence of one path: (w_i - p s) / K^{-1}, with w_i = 0 for non-sampled terms.
                    let (mw, mww, mws) = if t.method == TermMethod::ImportanceSampling {
                        (pm.w[i] / n, pm.ww[i] / n, pm.ws[i] / n)
                    } else {
                        (0.0, 0.0, 0.0)
                    };
                    let ms = pm.s / n;
                    let var = (mww - mw * mw) - 2.0 * p * (mws - mw * ms) + p * p * var_s;
                    (var.max(0.0) / n).sqrt() / k_inverse
                })
                .collect();
            (se, (var_s / n).sqrt())
        }
    };
    NormalizingConstant { k_inverse, k_inverse_stderr, tail_bound, terms, count_probs, count_stderr }
}

/// Per-path first and second moments of the importance weights.
struct PathMoments {
    paths: usize,
    w: Vec<f64>,
    ww: Vec<f64>,
    ws: Vec<f64>,
    s: f64,
    ss: f64,
}

fn continuous_constant(
    space: &Space,
    params: &ModelParams,
    truncation: usize,
    opts: &NormalizationOptions,
) -> Result<NormalizingConstant> {
    let levels = opts.quadrature_levels.min(truncation);
    let mut terms = vec![Term { n: 0, value: 1.0, stderr: 0.0, method: TermMethod::Exact }];
    for n in 1..=levels {
        terms.push(Term {
            n,
            value: ordered_integral_quadrature(space, params, n, opts.quadrature_tol)?,
            stderr: 0.0,
            method: TermMethod::Quadrature,
        });
    }
    let mut moments = None;
    if truncation > levels {
        if opts.paths == 0 {
            return Err(FifmError::Argument("importance sampling needs at least one path".into()));
        }
        let pm = importance_moments(space, params, truncation, levels, opts.paths, opts.seed);
        let n = pm.paths as f64;
        for k in levels + 1..=truncation {
            let mean = pm.w[k] / n;
            let var = (pm.ww[k] / n - mean * mean).max(0.0);
            terms.push(Term { n: k, value: mean, stderr: (var / n).sqrt(), method: TermMethod::ImportanceSampling });
        }
        moments = Some(pm);
    }
    let lam_total = params.arrival_rate(space);
    let m_min = params.intensity * space.min_ball_measure();
    // B_1 = Lambda / (m + mu), B_n = B_{n-1} (Lambda - m) / (m + n mu).
    let bound = |n: usize| -> f64 {
        let mut b = lam_total / (m_min + params.mu);
        for j in 2..=n {
            b *= (lam_total - m_min).max(0.0) / (m_min + j as f64 * params.mu);
        }
        b
    };
    let tail = product_tail(bound(truncation), |j| (lam_total - m_min).max(0.0) / (m_min + j as f64 * params.mu), truncation);
    Ok(assemble(terms, tail, moments.as_ref()))
}

/// Importance-sampling moments for terms `levels+1..=truncation`.
fn importance_moments(
    space: &Space,
    params: &ModelParams,
    truncation: usize,
    levels: usize,
    paths: usize,
    seed: u64,
) -> PathMoments {
    const CHUNK: usize = 4096;
    let chunks = paths.div_ceil(CHUNK);
    let parts = crate::par::map(chunks, |c| {
        let mut g = rng::stream(seed, c as u64);
        let mut pm = PathMoments {
            paths: 0,
            w: vec![0.0; truncation + 1],
            ww: vec![0.0; truncation + 1],
            ws: vec![0.0; truncation + 1],
            s: 0.0,
            ss: 0.0,
        };
        let mut weights = vec![0.0; truncation + 1];
        for _ in 0..CHUNK.min(paths - c * CHUNK) {
            sample_path(space, params, truncation, &mut g, &mut weights);
            let s: f64 = weights[levels + 1..].iter().sum();
            for k in levels + 1..=truncation {
                pm.w[k] += weights[k];
                pm.ww[k] += weights[k] * weights[k];
                pm.ws[k] += weights[k] * s;
            }
            pm.s += s;
            pm.ss += s * s;
            pm.paths += 1;
        }
        pm
    });
    let mut total = PathMoments {
        paths: 0,
        w: vec![0.0; truncation + 1],
        ww: vec![0.0; truncation + 1],
        ws: vec![0.0; truncation + 1],
        s: 0.0,
        ss: 0.0,
    };
    for p in parts {
        total.paths += p.paths;
        for k in 0..=truncation {
            total.w[k] += p.w[k];
            total.ww[k] += p.ww[k];
            total.ws[k] += p.ws[k];
        }
        total.s += p.s;
        total.ss += p.ss;
    }
    total
}

/// One sequential path: `weights[n]` receives the importance weight of `Z_n`.
fn sample_path<R: Rng>(space: &Space, params: &ModelParams, truncation: usize, g: &mut R, weights: &mut [f64]) {
    let full = space_full(space);
    let mut sides = Sides::default();
    let mut w = 1.0;
    weights[0] = 1.0;
    for i in 1..=truncation {
        let open_red = full.difference(&sides.red);
        let open_blue = full.difference(&sides.blue);
        let (ar, ab) = (open_red.measure(), open_blue.measure());
        let allowed = params.intensity * (ar + ab);
        if allowed <= 0.0 || w == 0.0 {
            weights[i..].iter_mut().for_each(|x| *x = 0.0);
            return;
        }
        let u = g.random::<f64>() * (ar + ab);
        let (color, x) = if u < ar {
            (Color::Red, open_red.point_at(u).expect("non-empty"))
        } else {
            (Color::Blue, open_blue.point_at(u - ar).expect("non-empty"))
        };
        let ball = space.ball(x);
        match color {
            Color::Red => sides.blue = sides.blue.union(&ball),
            Color::Blue => sides.red = sides.red.union(&ball),
        }
        let m = params.intensity * sides.measure();
        w *= allowed / (m + i as f64 * params.mu);
        weights[i] = w;
    }
}

fn space_full(space: &Space) -> IntervalSet {
    match space.kind() {
        SpaceKind::Interval { length } | SpaceKind::Circle { length } => IntervalSet::single(0.0, *length),
        _ => IntervalSet::empty(),
    }
}

/// `Z_n` by nested adaptive Simpson quadrature over valid ordered `n`-tuples.
///
/// Each level integrates over the region still allowed by the previous points,
/// split at every ball boundary so the integrand is smooth on each piece.
pub fn ordered_integral_quadrature(space: &Space, params: &ModelParams, n: usize, tol: f64) -> Result<f64> {
    params.validate()?;
    if !space.is_one_dimensional() {
        return Err(FifmError::Capability("quadrature is implemented on one-dimensional domains".into()));
    }
    if n > 4 {
        return Err(FifmError::Capability(format!("nested quadrature of depth {n} is too expensive; use importance sampling")));
    }
    let mut prefix = Vec::with_capacity(n);
    Ok(nested(space, params, &mut prefix, n, tol))
}

fn nested(space: &Space, params: &ModelParams, prefix: &mut Vec<MarkedPoint>, n: usize, tol: f64) -> f64 {
    if prefix.len() == n {
        return 1.0;
    }
    let level = prefix.len() + 1;
    let sides = space.sides(prefix);
    let full = space_full(space);
    let r = space.radius();
    let mut cuts: Vec<f64> = prefix
        .iter()
        .flat_map(|m| [m.pos.x - 2.0 * r, m.pos.x - r, m.pos.x, m.pos.x + r, m.pos.x + 2.0 * r])
        .map(|x| match space.kind() {
            SpaceKind::Circle { length } => x.rem_euclid(*length),
            _ => x,
        })
        .collect();
    if let SpaceKind::Interval { length } = space.kind() {
        cuts.extend([r, length - r]);
    }
    cuts.sort_by(f64::total_cmp);
    let mut total = 0.0;
    for c in [Color::Red, Color::Blue] {
        let open = full.difference(sides.side(c));
        for &(a, b) in open.parts() {
            let mut knots = vec![a];
            knots.extend(cuts.iter().copied().filter(|&x| x > a && x < b));
            knots.push(b);
            for w in knots.windows(2) {
                let base: &[MarkedPoint] = prefix;
                let g = |x: f64| {
                    let mut pre = base.to_vec();
                    pre.push(MarkedPoint::line(x, c));
                    let m = scaled_measure(space, params, &pre);
                    nested(space, params, &mut pre, n, tol) / (m + level as f64 * params.mu)
                };
                total += params.intensity * adaptive_simpson(&g, w[0], w[1], tol, 30);
            }
        }
    }
    total
}
