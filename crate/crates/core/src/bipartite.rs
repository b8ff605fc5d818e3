//! First-come-first-served bipartite matching with reneging on finitely many types.
//!
//! A detailed state is a list of `(type, mark)` items. The backward process
//! keeps unmatched (`u`) agents together with matched (`m`) placeholders and
//! prunes leading `m` items; the forward process is its dual under
//! [`reverse_map`], which reverses the list and flips every mark. The backward
//! product form is `prod_i lambda(c_i) / rho(Q_u^i)` with `rho(k) = Lambda + k mu`,
//! and [`check_local_balance`] verifies `pi(j) q(j,k) = pi(k) q'(phi(k), phi(j))`
//! pair by pair.
//!
//! In the forward process, processing an unmatched head of type `c` draws a
//! renege slot `tau` with `P(tau >= k) = prod_{l<k} rho(Q(l)) / rho(Q(l)+1)`,
//! where `Q(l)` counts matched items after position `l`. When `tau` exceeds the
//! list length, the gap is filled with i.i.d. arrivals; those are integrated out
//! analytically, leaving finitely many targets below a length cap plus a
//! reported tail mass.
//!
//! The truncated solve works on the plain FCFS chain (type lists without marks).
//! Arrivals that would grow a list beyond the cap are blocked; the product form
//! restricted to short lists is then exactly stationary for the truncated chain.

use crate::error::{FifmError, Result};
use crate::fifm::Mark;
use crate::par;
use crate::report::VerificationReport;
use crate::simulator::ModelParams;
use crate::space::{Color, FiniteTypes, Space, SpaceKind};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

/// Default cap on the number of enumerated states.
pub const DEFAULT_STATE_CAP: usize = 2_000_000;
/// Relative tolerance of the local-balance check.
pub const BALANCE_TOLERANCE: f64 = 1e-10;
const DENSE_LIMIT: usize = 2500;

/// Customer and server types with compatibility edges and arrival weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityGraph {
    types: FiniteTypes,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum TypeRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphJson {
    customers: Vec<String>,
    servers: Vec<String>,
    edges: Vec<[TypeRef; 2]>,
    #[serde(default)]
    weights: BTreeMap<String, f64>,
}

impl CompatibilityGraph {
    /// Customer types come first, then servers; `edges` hold `(customer, server)`
    /// indices into the respective lists and `weights` follow the type order.
    pub fn new(customers: &[&str], servers: &[&str], edges: &[(usize, usize)], weights: Vec<f64>) -> Result<Self> {
        let nc = customers.len();
        let names: Vec<String> = customers.iter().chain(servers).map(|s| s.to_string()).collect();
        let colors: Vec<Color> = (0..names.len()).map(|i| if i < nc { Color::Red } else { Color::Blue }).collect();
        for &(c, s) in edges {
            if c >= nc || s >= servers.len() {
                return Err(FifmError::Argument(format!("edge ({c}, {s}) is out of range")));
            }
        }
        let e: Vec<(usize, usize)> = edges.iter().map(|&(c, s)| (c, nc + s)).collect();
        Ok(Self { types: FiniteTypes::new(names, colors, weights, &e)? })
    }

    /// `C = {c}`, `S = {s}`, one edge.
    pub fn single_edge(wc: f64, ws: f64) -> Result<Self> {
        Self::new(&["c"], &["s"], &[(0, 0)], vec![wc, ws])
    }

    /// `c1 - s1, c2 - s1, c2 - s2` with unit weights.
    pub fn n_graph() -> Self {
        Self::new(&["c1", "c2"], &["s1", "s2"], &[(0, 0), (1, 0), (1, 1)], vec![1.0; 4]).expect("static graph")
    }

    pub fn from_types(types: FiniteTypes) -> Self {
        Self { types }
    }

    pub fn from_space(space: &Space) -> Result<Self> {
        match space.kind() {
            SpaceKind::Finite(t) => Ok(Self { types: t.clone() }),
            _ => Err(FifmError::Capability("the discrete model needs a finite-type space".into())),
        }
    }

    /// Parses `{"customers":[..],"servers":[..],"edges":[[c,s],..],"weights":{..}}`.
    /// Edge endpoints are names or indices into the customer and server lists;
    /// missing weights default to 1.
    pub fn from_json(text: &str) -> Result<Self> {
        let g: GraphJson = serde_json::from_str(text)?;
        let resolve = |r: &TypeRef, list: &[String], what: &str| -> Result<usize> {
            match r {
                TypeRef::Index(i) if *i < list.len() => Ok(*i),
                TypeRef::Name(n) => list
                    .iter()
                    .position(|x| x == n)
                    .ok_or_else(|| FifmError::Schema(format!("unknown {what} `{n}` in edge"))),
                TypeRef::Index(i) => Err(FifmError::Schema(format!("{what} index {i} is out of range"))),
            }
        };
        let edges = g
            .edges
            .iter()
            .map(|[c, s]| Ok((resolve(c, &g.customers, "customer")?, resolve(s, &g.servers, "server")?)))
            .collect::<Result<Vec<_>>>()?;
        let all: Vec<&String> = g.customers.iter().chain(&g.servers).collect();
        if let Some(k) = g.weights.keys().find(|k| !all.contains(k)) {
            return Err(FifmError::Schema(format!("weight given for unknown type `{k}`")));
        }
        let weights = all.iter().map(|n| g.weights.get(*n).copied().unwrap_or(1.0)).collect();
        let c: Vec<&str> = g.customers.iter().map(String::as_str).collect();
        let s: Vec<&str> = g.servers.iter().map(String::as_str).collect();
        Self::new(&c, &s, &edges, weights).map_err(|e| match e {
            FifmError::Argument(m) => FifmError::Schema(m),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let t = &self.types;
        let idx: Vec<usize> = (0..t.len()).collect();
        let customers: Vec<String> = idx.iter().filter(|&&i| t.color(i) == Color::Red).map(|&i| t.names()[i].clone()).collect();
        let servers: Vec<String> = idx.iter().filter(|&&i| t.color(i) == Color::Blue).map(|&i| t.names()[i].clone()).collect();
        let edges = t
            .edges()
            .into_iter()
            .map(|(a, b)| [TypeRef::Name(t.names()[a].clone()), TypeRef::Name(t.names()[b].clone())])
            .collect();
        let weights = idx.iter().map(|&i| (t.names()[i].clone(), t.weight(i))).collect();
        serde_json::to_string(&GraphJson { customers, servers, edges, weights }).expect("serialisable")
    }

    pub fn space(&self) -> Space {
        Space::finite(self.types.clone())
    }

    pub fn types(&self) -> &FiniteTypes {
        &self.types
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn name(&self, t: usize) -> &str {
        &self.types.names()[t]
    }

    pub fn compatible(&self, a: usize, b: usize) -> bool {
        self.types.compatible(a, b)
    }

    fn lambda(&self, params: &ModelParams, t: usize) -> f64 {
        params.intensity * self.types.weight(t)
    }

    fn total(&self, params: &ModelParams) -> f64 {
        params.intensity * self.types.total_weight()
    }

    fn rho(&self, params: &ModelParams, n: usize) -> f64 {
        self.total(params) + n as f64 * params.mu
    }

    /// `lambda(N(c))`.
    fn neighbour_rate(&self, params: &ModelParams, c: usize) -> f64 {
        (0..self.len()).filter(|&b| self.compatible(c, b)).map(|b| self.lambda(params, b)).sum()
    }

    /// Renders a state as `c:u s:m ...`.
    pub fn format_state(&self, s: &DiscreteDetailedState) -> String {
        if s.items.is_empty() {
            return "()".into();
        }
        let parts: Vec<String> = s
            .items
            .iter()
            .map(|(t, m)| format!("{}:{}", self.name(*t), if *m == Mark::U { "u" } else { "m" }))
            .collect();
        parts.join(" ")
    }

    pub fn format_types(&self, s: &[usize]) -> String {
        if s.is_empty() {
            return "()".into();
        }
        s.iter().map(|&t| self.name(t)).collect::<Vec<_>>().join(" ")
    }
}

/// A list of `(type index, mark)` items.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiscreteDetailedState {
    pub items: Vec<(usize, Mark)>,
}

impl DiscreteDetailedState {
    pub fn new(items: Vec<(usize, Mark)>) -> Self {
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count(&self, mark: Mark) -> usize {
        self.items.iter().filter(|(_, m)| *m == mark).count()
    }

    /// Removes leading matched items.
    fn pruned(mut self) -> Self {
        let k = self.items.iter().take_while(|(_, m)| *m == Mark::M).count();
        self.items.drain(..k);
        self
    }

    /// Removes trailing unmatched items.
    fn trimmed(mut self) -> Self {
        while self.items.last().is_some_and(|(_, m)| *m == Mark::U) {
            self.items.pop();
        }
        self
    }
}

/// Backward validity: head unmatched, no compatible `u`-`u` pair, no `m`
/// compatible with an earlier `u`.
pub fn is_valid_backward(g: &CompatibilityGraph, s: &DiscreteDetailedState) -> bool {
    if s.items.first().is_some_and(|(_, m)| *m != Mark::U) {
        return false;
    }
    s.items
        .iter()
        .enumerate()
        .all(|(j, &(b, _))| s.items[..j].iter().all(|&(a, ma)| !(ma == Mark::U && g.compatible(a, b))))
}

/// Forward validity: tail matched, no compatible `m`-`m` pair, no `m`
/// compatible with an earlier `u`.
pub fn is_valid_forward(g: &CompatibilityGraph, s: &DiscreteDetailedState) -> bool {
    is_valid_backward(g, &reverse_map(s))
}

/// Reverses the list and flips every mark.
pub fn reverse_map(s: &DiscreteDetailedState) -> DiscreteDetailedState {
    DiscreteDetailedState::new(s.items.iter().rev().map(|&(t, m)| (t, m.flip())).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    Renege,
    MatchExchange,
    Accept,
    PopMatched,
    FcfsInsert,
    NoMatchInsert,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatedTransition {
    pub target: DiscreteDetailedState,
    pub rate: f64,
    pub kind: TransitionKind,
}

/// Sums rates per target state.
pub fn aggregate(ts: &[RatedTransition]) -> BTreeMap<DiscreteDetailedState, f64> {
    let mut out = BTreeMap::new();
    for t in ts {
        *out.entry(t.target.clone()).or_insert(0.0) += t.rate;
    }
    out
}

/// All backward-valid states with at most `max_len` items, by length then lexicographically.
pub fn enumerate_valid_states(g: &CompatibilityGraph, max_len: usize, cap: usize) -> Result<Vec<DiscreteDetailedState>> {
    let mut out = vec![DiscreteDetailedState::default()];
    let mut frontier = vec![DiscreteDetailedState::default()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for t in 0..g.len() {
                for mark in [Mark::U, Mark::M] {
                    if s.is_empty() && mark == Mark::M {
                        continue;
                    }
                    // Appending keeps validity iff the new item avoids every earlier `u`.
                    if s.items.iter().any(|&(a, m)| m == Mark::U && g.compatible(a, t)) {
                        continue;
                    }
                    let mut items = s.items.clone();
                    items.push((t, mark));
                    next.push(DiscreteDetailedState::new(items));
                }
            }
        }
        if out.len() + next.len() > cap {
            return Err(FifmError::Capability(format!(
                "more than {cap} valid states up to length {max_len}; lower max_len"
            )));
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    Ok(out)
}

fn check_backward(g: &CompatibilityGraph, s: &DiscreteDetailedState) -> Result<()> {
    if s.items.iter().any(|(t, _)| *t >= g.len()) {
        return Err(FifmError::Argument("state refers to an unknown type".into()));
    }
    if !is_valid_backward(g, s) {
        return Err(FifmError::Argument(format!("{} is not a valid backward state", g.format_state(s))));
    }
    Ok(())
}

/// Reneging, match-exchange and acceptance transitions of the backward process.
pub fn backward_transitions(
    g: &CompatibilityGraph,
    params: &ModelParams,
    s: &DiscreteDetailedState,
) -> Result<Vec<RatedTransition>> {
    params.validate()?;
    check_backward(g, s)?;
    let mut out = Vec::new();
    for (i, &(t, m)) in s.items.iter().enumerate() {
        if m != Mark::U {
            continue;
        }
        let mut items = s.items.clone();
        items.remove(i);
        items.push((t, Mark::M));
        out.push(RatedTransition {
            target: DiscreteDetailedState::new(items).pruned(),
            rate: params.mu,
            kind: TransitionKind::Renege,
        });
    }
    for c in 0..g.len() {
        let rate = g.lambda(params, c);
        // `c` lies in `W_{x_i}` exactly for the first unmatched item compatible with it.
        let first = s.items.iter().position(|&(a, m)| m == Mark::U && g.compatible(a, c));
        let (target, kind) = match first {
            Some(i) => {
                let mut items = s.items.clone();
                let partner = items[i].0;
                items[i] = (c, Mark::M);
                items.push((partner, Mark::M));
                (DiscreteDetailedState::new(items).pruned(), TransitionKind::MatchExchange)
            }
            None => {
                let mut items = s.items.clone();
                items.push((c, Mark::U));
                (DiscreteDetailedState::new(items), TransitionKind::Accept)
            }
        };
        out.push(RatedTransition { target, rate, kind });
    }
    Ok(out)
}

/// Forward transitions up to a target-length cap, with the rate of the omitted remainder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForwardTransitions {
    pub transitions: Vec<RatedTransition>,
    pub tail_rate: f64,
}

/// Law of the renege slot `tau`; `q[k]` is the number of matched items after
/// 1-based position `k`, and zero beyond the list.
struct TauLaw {
    rho0: f64,
    mu: f64,
    q: Vec<usize>,
}

impl TauLaw {
    fn new(g: &CompatibilityGraph, params: &ModelParams, items: &[(usize, Mark)]) -> Self {
        let n = items.len();
        let mut q = vec![0usize; n + 1];
        for k in (0..n).rev() {
            q[k] = q[k + 1] + usize::from(items[k].1 == Mark::M);
        }
        Self { rho0: g.rho(params, 0), mu: params.mu, q }
    }

    fn rho(&self, n: usize) -> f64 {
        self.rho0 + n as f64 * self.mu
    }

    fn q_after(&self, k: usize) -> usize {
        self.q.get(k).copied().unwrap_or(0)
    }

    /// `rho(Q(k)) / rho(Q(k)+1)`.
    fn stay(&self, k: usize) -> f64 {
        let q = self.q_after(k);
        self.rho(q) / self.rho(q + 1)
    }

    /// `P(tau >= k)`.
    fn survival(&self, k: usize) -> f64 {
        let n = self.q.len() - 1;
        let head: f64 = (1..k.min(n + 1)).map(|l| self.stay(l)).product();
        if k > n + 1 {
            head * (self.rho(0) / self.rho(1)).powi((k - n - 1) as i32)
        } else {
            head
        }
    }

    /// `P(tau = k) = mu / rho(Q(k)+1) * P(tau >= k)`.
    fn point(&self, k: usize) -> f64 {
        self.mu / self.rho(self.q_after(k) + 1) * self.survival(k)
    }
}

/// `P(tau = k)` for `k = 1..=kmax` and `P(tau > kmax)` for an unmatched head.
pub fn tau_distribution(
    g: &CompatibilityGraph,
    params: &ModelParams,
    s: &DiscreteDetailedState,
    kmax: usize,
) -> (Vec<f64>, f64) {
    let law = TauLaw::new(g, params, &s.items);
    ((1..=kmax).map(|k| law.point(k)).collect(), law.survival(kmax + 1))
}

fn check_forward(g: &CompatibilityGraph, s: &DiscreteDetailedState) -> Result<()> {
    if s.items.iter().any(|(t, _)| *t >= g.len()) {
        return Err(FifmError::Argument("state refers to an unknown type".into()));
    }
    if !is_valid_forward(g, s) {
        return Err(FifmError::Argument(format!("{} is not a valid forward state", g.format_state(s))));
    }
    Ok(())
}

/// Transitions of the forward process from `s`, to targets of length at most `cap`.
pub fn forward_transitions(
    g: &CompatibilityGraph,
    params: &ModelParams,
    s: &DiscreteDetailedState,
    cap: usize,
) -> Result<ForwardTransitions> {
    params.validate()?;
    check_forward(g, s)?;
    let mut out = ForwardTransitions { transitions: Vec::new(), tail_rate: 0.0 };
    match s.items.first() {
        None => {
            for c in 0..g.len() {
                let head = [(c, Mark::U)];
                unmatched_head(g, params, &head, g.lambda(params, c), cap, &mut out);
            }
        }
        Some(&(_, Mark::M)) => {
            let rate = g.rho(params, s.count(Mark::M));
            out.transitions.push(RatedTransition {
                target: DiscreteDetailedState::new(s.items[1..].to_vec()),
                rate,
                kind: TransitionKind::PopMatched,
            });
        }
        Some(&(_, Mark::U)) => {
            let rate = g.rho(params, s.count(Mark::M));
            unmatched_head(g, params, &s.items, rate, cap, &mut out);
        }
    }
    Ok(out)
}

/// Processes an unmatched head `y[0]` at total rate `rate`.
fn unmatched_head(
    g: &CompatibilityGraph,
    params: &ModelParams,
    y: &[(usize, Mark)],
    rate: f64,
    cap: usize,
    out: &mut ForwardTransitions,
) {
    let n = y.len();
    let c = y[0].0;
    let law = TauLaw::new(g, params, y);
    let insert_at = |k: usize| {
        // x_2..x_k, (c, m), x_{k+1}..x_n
        let mut items: Vec<(usize, Mark)> = y[1..k].to_vec();
        items.push((c, Mark::M));
        items.extend_from_slice(&y[k..]);
        DiscreteDetailedState::new(items).trimmed()
    };
    let first_match = (1..n).find(|&i| y[i].1 == Mark::U && g.compatible(c, y[i].0)).map(|i| i + 1);
    let last_slot = first_match.map_or(n, |i| i - 1);
    for k in 1..=last_slot {
        out.transitions.push(RatedTransition { target: insert_at(k), rate: rate * law.point(k), kind: TransitionKind::NoMatchInsert });
    }
    if let Some(i) = first_match {
        let mut items: Vec<(usize, Mark)> = y.to_vec();
        items[i - 1] = (c, Mark::M);
        out.transitions.push(RatedTransition {
            target: DiscreteDetailedState::new(items[1..].to_vec()).trimmed(),
            rate: rate * law.survival(i),
            kind: TransitionKind::FcfsInsert,
        });
        return;
    }
    // Fill-ins x_{n+1}, x_{n+2}, ... are i.i.d. with law lambda / Lambda; the
    // kept ones are incompatible with `c` and precede the new matched item.
    let total = g.total(params);
    let incompatible: Vec<usize> = (0..g.len()).filter(|&f| !g.compatible(c, f)).collect();
    let p_comp = g.neighbour_rate(params, c) / total;
    let p_inc = 1.0 - p_comp;
    let Some(jmax) = cap.checked_sub(n) else {
        out.tail_rate += rate * law.survival(n + 1);
        return;
    };
    let mut fills: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
    for j in 0..=jmax {
        let no_match = if j >= 1 { law.point(n + j) } else { 0.0 };
        let matched_next = law.survival(n + j + 1) * p_comp;
        for (f, w) in &fills {
            let mut items: Vec<(usize, Mark)> = y[1..].to_vec();
            items.extend(f.iter().map(|&t| (t, Mark::U)));
            items.push((c, Mark::M));
            let target = DiscreteDetailedState::new(items);
            if no_match > 0.0 {
                out.transitions.push(RatedTransition { target: target.clone(), rate: rate * w * no_match, kind: TransitionKind::NoMatchInsert });
            }
            if matched_next > 0.0 {
                out.transitions.push(RatedTransition { target, rate: rate * w * matched_next, kind: TransitionKind::FcfsInsert });
            }
        }
        if j < jmax {
            fills = fills
                .iter()
                .flat_map(|(f, w)| {
                    incompatible.iter().map(move |&t| {
                        let mut f2 = f.clone();
                        f2.push(t);
                        (f2, w * g.lambda(params, t) / total)
                    })
                })
                .collect();
        }
    }
    out.tail_rate += rate * law.survival(n + jmax + 1) * p_inc.powi(jmax as i32 + 1);
}

/// `log prod_i lambda(c_i) / rho(Q_u^i)`; the empty state has log-density 0.
pub fn log_product_form(g: &CompatibilityGraph, params: &ModelParams, s: &DiscreteDetailedState) -> f64 {
    let mut q = 0usize;
    let mut log = 0.0;
    for &(t, m) in &s.items {
        if m == Mark::U {
            q += 1;
        }
        log += g.lambda(params, t).ln() - g.rho(params, q).ln();
    }
    log
}

/// Options of [`check_local_balance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceOptions {
    /// Added to `mu` on the forward side only; nonzero values are a negative control.
    pub mu_perturbation: f64,
    pub tolerance: f64,
    pub state_cap: usize,
}

impl Default for BalanceOptions {
    fn default() -> Self {
        Self { mu_perturbation: 0.0, tolerance: BALANCE_TOLERANCE, state_cap: DEFAULT_STATE_CAP }
    }
}

/// Checks `pi(j) q(j,k) = pi(k) q'(phi(k), phi(j))` for every backward
/// transition out of every valid state of length at most `max_len`, and that
/// `phi` preserves total jump rates.
pub fn check_local_balance(
    g: &CompatibilityGraph,
    params: &ModelParams,
    max_len: usize,
    opts: &BalanceOptions,
) -> Result<VerificationReport> {
    params.validate()?;
    let states = enumerate_valid_states(g, max_len, opts.state_cap)?;
    let fwd_params = ModelParams::new(params.intensity, params.mu + opts.mu_perturbation)?;
    let per_state = par::map(states.len(), |idx| -> Result<Vec<(f64, String)>> {
        let j = &states[idx];
        let phi_j = reverse_map(j);
        let log_pj = log_product_form(g, params, j);
        let back = aggregate(&backward_transitions(g, params, j)?);
        let mut errs = Vec::with_capacity(back.len() + 1);
        let out_rate: f64 = back.values().sum();
        let fwd_out = {
            let f = forward_transitions(g, &fwd_params, &phi_j, 0)?;
            f.transitions.iter().map(|t| t.rate).sum::<f64>() + f.tail_rate
        };
        errs.push((rel_err(out_rate, fwd_out), format!("total rate at {}: {out_rate} vs {fwd_out}", g.format_state(j))));
        for (k, q) in back {
            let fwd = aggregate(&forward_transitions(g, &fwd_params, &reverse_map(&k), j.len())?.transitions);
            let q_rev = fwd.get(&phi_j).copied().unwrap_or(0.0);
            let lhs = log_pj + q.ln();
            let rhs = log_product_form(g, params, &k) + q_rev.ln();
            let err = if q_rev == 0.0 { 1.0 } else { (rhs - lhs).exp_m1().abs() };
            errs.push((err, format!("{} -> {}: lhs={:.6e} rhs={:.6e}", g.format_state(j), g.format_state(&k), lhs.exp(), rhs.exp())));
        }
        Ok(errs)
    });
    let mut report = VerificationReport::new("local-balance", opts.tolerance);
    for errs in per_state {
        for (e, d) in errs? {
            report.record(e, || d);
        }
    }
    report.note(format!("{} states up to length {max_len}", states.len()));
    Ok(report)
}

fn rel_err(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m == 0.0 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

/// Stationary law of the plain chain on type lists of length at most `max_len`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncatedSolution {
    pub states: Vec<Vec<usize>>,
    pub probs: Vec<f64>,
    /// Product form normalised over the same states.
    pub product_form: Vec<f64>,
    /// Certified bound on the stationary mass of longer lists.
    pub truncation_bound: f64,
    /// `P(|eta| = n)` for `n = 0..=max_len`.
    pub count_marginal: Vec<f64>,
    pub method: &'static str,
}

/// Type lists of length at most `max_len` with no compatible pair.
pub fn enumerate_plain_states(g: &CompatibilityGraph, max_len: usize, cap: usize) -> Result<Vec<Vec<usize>>> {
    let mut out = vec![Vec::new()];
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for t in 0..g.len() {
                if s.iter().all(|&a| !g.compatible(a, t)) {
                    let mut v = s.clone();
                    v.push(t);
                    next.push(v);
                }
            }
        }
        if out.len() + next.len() > cap {
            return Err(FifmError::Capability(format!("more than {cap} plain states up to length {max_len}")));
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    Ok(out)
}

/// `log prod_i lambda(c_i) / (lambda(N(c_1..c_i)) + i mu)` for a plain type list.
pub fn log_plain_product_form(g: &CompatibilityGraph, params: &ModelParams, s: &[usize]) -> f64 {
    let mut covered = vec![false; g.len()];
    let mut log = 0.0;
    for (i, &t) in s.iter().enumerate() {
        for (b, cov) in covered.iter_mut().enumerate() {
            *cov |= g.compatible(t, b);
        }
        let nbr: f64 = (0..g.len()).filter(|&b| covered[b]).map(|b| g.lambda(params, b)).sum();
        log += g.lambda(params, t).ln() - (nbr + (i + 1) as f64 * params.mu).ln();
    }
    log
}

/// Solves `pi Q = 0` for the plain chain on lists of length at most `max_len`,
/// blocking arrivals that would be appended to a full list.
pub fn solve_stationary_truncated(g: &CompatibilityGraph, params: &ModelParams, max_len: usize) -> Result<TruncatedSolution> {
    params.validate()?;
    let states = enumerate_plain_states(g, max_len, DEFAULT_STATE_CAP)?;
    let index: HashMap<&[usize], usize> = states.iter().enumerate().map(|(i, s)| (s.as_slice(), i)).collect();
    // Outgoing rates per state as (target, rate).
    let out: Vec<Vec<(usize, f64)>> = states
        .iter()
        .map(|s| {
            let mut v = Vec::new();
            for i in 0..s.len() {
                let mut t = s.clone();
                t.remove(i);
                v.push((index[t.as_slice()], params.mu));
            }
            for c in 0..g.len() {
                let rate = g.lambda(params, c);
                match s.iter().position(|&a| g.compatible(a, c)) {
                    Some(i) => {
                        let mut t = s.clone();
                        t.remove(i);
                        v.push((index[t.as_slice()], rate));
                    }
                    None if s.len() < max_len => {
                        let mut t = s.clone();
                        t.push(c);
                        v.push((index[t.as_slice()], rate));
                    }
                    None => {}
                }
            }
            v
        })
        .collect();
    let n = states.len();
    let (probs, method) = if n <= DENSE_LIMIT { (dense_solve(&out)?, "dense-lu") } else { (gauss_seidel(&out)?, "gauss-seidel") };
    let logs: Vec<f64> = states.iter().map(|s| log_plain_product_form(g, params, s)).collect();
    let z: f64 = logs.iter().map(|l| l.exp()).sum();
    let product_form: Vec<f64> = logs.iter().map(|l| l.exp() / z).collect();
    let mut count_marginal = vec![0.0; max_len + 1];
    for (s, p) in states.iter().zip(&probs) {
        count_marginal[s.len()] += p;
    }
    // Mass of length L+k is at most mass(L) prod_{j=L+1..L+k} sum_c lambda(c) / (lambda(N(c)) + j mu).
    let r = |j: usize| (0..g.len()).map(|c| g.lambda(params, c) / (g.neighbour_rate(params, c) + j as f64 * params.mu)).sum::<f64>();
    let mut term = count_marginal[max_len];
    let mut bound = 0.0;
    let mut j = max_len + 1;
    loop {
        term *= r(j);
        bound += term;
        if term <= 1e-18 * bound.max(1e-300) || term == 0.0 || j > max_len + 1_000_000 {
            break;
        }
        j += 1;
    }
    Ok(TruncatedSolution { states, probs, product_form, truncation_bound: bound, count_marginal, method })
}

fn dense_solve(out: &[Vec<(usize, f64)>]) -> Result<Vec<f64>> {
    let n = out.len();
    // Rows of Q^T; the last equation is replaced by normalisation.
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (i, row) in out.iter().enumerate() {
        for &(j, r) in row {
            a[(j, i)] += r;
            a[(i, i)] -= r;
        }
    }
    for k in 0..n {
        a[(n - 1, k)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| FifmError::Numerical("singular generator: the truncated chain is not irreducible".into()))?;
    Ok(x.iter().map(|v| v.max(0.0)).collect())
}

fn gauss_seidel(out: &[Vec<(usize, f64)>]) -> Result<Vec<f64>> {
    let n = out.len();
    let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut total = vec![0.0; n];
    for (i, row) in out.iter().enumerate() {
        for &(j, r) in row {
            if i != j {
                incoming[j].push((i, r));
                total[i] += r;
            }
        }
    }
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..100_000 {
        let mut change = 0.0f64;
        for j in 0..n {
            if total[j] == 0.0 {
                return Err(FifmError::Numerical("absorbing state in the truncated chain".into()));
            }
            let v = incoming[j].iter().map(|&(i, r)| pi[i] * r).sum::<f64>() / total[j];
            change = change.max((v - pi[j]).abs() / v.max(1e-300));
            pi[j] = v;
        }
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= s);
        if change < 1e-13 {
            return Ok(pi);
        }
    }
    Err(FifmError::Numerical("Gauss-Seidel did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use Mark::{M, U};

    fn st(items: &[(usize, Mark)]) -> DiscreteDetailedState {
        DiscreteDetailedState::new(items.to_vec())
    }
    fn p(mu: f64) -> ModelParams {
        ModelParams::new(1.0, mu).unwrap()
    }
    // Single edge: type 0 = c, type 1 = s.
    fn edge() -> CompatibilityGraph {
        CompatibilityGraph::single_edge(1.0, 1.0).unwrap()
    }

    #[test]
    fn enumeration_examples() {
        let g = edge();
        assert_eq!(enumerate_valid_states(&g, 0, 100).unwrap(), vec![st(&[])]);
        assert_eq!(enumerate_valid_states(&g, 1, 100).unwrap(), vec![st(&[]), st(&[(0, U)]), st(&[(1, U)])]);
        let two = enumerate_valid_states(&g, 2, 100).unwrap();
        assert!(!two.contains(&st(&[(0, U), (1, U)])));
        assert!(!two.contains(&st(&[(0, U), (1, M)])));
        assert!(two.contains(&st(&[(0, U), (0, M)])));
        assert!(two.iter().all(|s| is_valid_backward(&g, s)));
        assert!(matches!(enumerate_valid_states(&CompatibilityGraph::n_graph(), 12, 1000), Err(FifmError::Capability(_))));
    }

    /// Brute force: every list over (type, mark) filtered by the three conditions.
    #[test]
    fn enumeration_matches_filter() {
        let g = CompatibilityGraph::n_graph();
        let all = enumerate_valid_states(&g, 4, 1 << 20).unwrap();
        let mut brute = vec![st(&[])];
        let mut layer = vec![st(&[])];
        for _ in 0..4 {
            layer = layer
                .iter()
                .flat_map(|s| {
                    (0..4).flat_map(move |t| {
                        [U, M].into_iter().map(move |m| {
                            let mut v = s.items.clone();
                            v.push((t, m));
                            st(&v)
                        })
                    })
                })
                .collect();
            brute.extend(layer.iter().filter(|s| is_valid_backward(&g, s)).cloned());
        }
        let mut a = all.clone();
        a.sort();
        brute.sort();
        assert_eq!(a, brute);
    }

    #[test]
    fn backward_examples() {
        let g = edge();
        let empty = backward_transitions(&g, &p(1.0), &st(&[])).unwrap();
        assert_eq!(empty.len(), 2);
        assert!(empty.iter().all(|t| t.kind == TransitionKind::Accept && t.rate == 1.0));
        let one = aggregate(&backward_transitions(&g, &p(1.0), &st(&[(0, U)])).unwrap());
        // Renege and match-exchange both prune to the empty state.
        assert_relative_eq!(one[&st(&[])], 2.0);
        assert_relative_eq!(one[&st(&[(0, U), (0, U)])], 1.0);
        assert!(backward_transitions(&g, &p(1.0), &st(&[(0, M)])).is_err());
    }

    #[test]
    fn match_exchange_keeps_later_items() {
        let g = CompatibilityGraph::n_graph();
        // c1 = 0, c2 = 1, s1 = 2, s2 = 3. State c1:u c1:m c2:u; arrival s2 matches c2.
        let s = st(&[(0, U), (0, M), (1, U)]);
        let ts = backward_transitions(&g, &p(1.0), &s).unwrap();
        let t = ts.iter().find(|t| t.kind == TransitionKind::MatchExchange && t.target.items.get(2) == Some(&(3, M))).unwrap();
        assert_eq!(t.target, st(&[(0, U), (0, M), (3, M), (1, M)]));
        // Arrival s1 matches c1 (first compatible u), leading m items are pruned away.
        let t = ts.iter().find(|t| t.kind == TransitionKind::MatchExchange && t.target.items.last() == Some(&(0, M))).unwrap();
        assert_eq!(t.target, st(&[(1, U), (0, M)]));
    }

    #[test]
    fn reverse_map_examples() {
        assert_eq!(reverse_map(&st(&[])), st(&[]));
        assert_eq!(reverse_map(&st(&[(0, U)])), st(&[(0, M)]));
        assert_eq!(reverse_map(&st(&[(0, U), (3, M)])), st(&[(3, U), (0, M)]));
    }

    #[test]
    fn phi_is_a_bijection_onto_forward_states() {
        let g = CompatibilityGraph::n_graph();
        for len in 0..=4 {
            let back = enumerate_valid_states(&g, len, 1 << 20).unwrap();
            let mut images: Vec<_> = back.iter().map(reverse_map).collect();
            assert!(images.iter().all(|s| is_valid_forward(&g, s)));
            images.sort();
            images.dedup();
            assert_eq!(images.len(), back.len());
            // Count forward-valid lists directly.
            let mut count = 1;
            let mut layer = vec![st(&[])];
            for _ in 0..len {
                layer = layer
                    .iter()
                    .flat_map(|s| (0..4).flat_map(move |t| [U, M].into_iter().map(move |m| {
                        let mut v = s.items.clone();
                        v.push((t, m));
                        st(&v)
                    })))
                    .collect();
                count += layer.iter().filter(|s| is_valid_forward(&g, s)).count();
            }
            assert_eq!(count, back.len());
        }
    }

    #[test]
    fn forward_pop_and_tau_examples() {
        let g = edge();
        let f = forward_transitions(&g, &p(1.0), &st(&[(1, M)]), 4).unwrap();
        assert_eq!(f.transitions.len(), 1);
        assert_eq!(f.transitions[0].target, st(&[]));
        assert_relative_eq!(f.transitions[0].rate, 3.0);
        let (probs, tail) = tau_distribution(&g, &p(1.0), &st(&[(0, U)]), 200);
        assert_relative_eq!(probs[0], 1.0 / 3.0);
        assert!((probs.iter().sum::<f64>() + tail - 1.0).abs() < 1e-12);
        assert!(tail < 1e-12);
    }

    #[test]
    fn tau_with_matched_items() {
        let g = CompatibilityGraph::n_graph();
        let s = st(&[(0, U), (3, U), (0, M), (1, U), (1, M)]);
        let (probs, tail) = tau_distribution(&g, &p(0.7), &s, 400);
        assert!((probs.iter().sum::<f64>() + tail - 1.0).abs() < 1e-12);
        // P(tau = 1) = mu / rho(Q(1) + 1) with Q(1) = 2 matched items after the head.
        assert_relative_eq!(probs[0], 0.7 / (4.0 + 3.0 * 0.7));
    }

    #[test]
    fn forward_rates_sum_to_jump_rate() {
        let g = CompatibilityGraph::n_graph();
        let params = p(0.8);
        for s in enumerate_valid_states(&g, 4, 1 << 20).unwrap() {
            let f = reverse_map(&s);
            let ft = forward_transitions(&g, &params, &f, 6).unwrap();
            let total: f64 = ft.transitions.iter().map(|t| t.rate).sum::<f64>() + ft.tail_rate;
            let expect = 4.0 + f.count(M) as f64 * 0.8;
            assert_relative_eq!(total, expect, max_relative = 1e-12);
            assert!(ft.transitions.iter().all(|t| t.rate > 0.0 && is_valid_forward(&g, &t.target)));
        }
    }

    #[test]
    fn backward_rates_sum_to_jump_rate() {
        let g = CompatibilityGraph::n_graph();
        for s in enumerate_valid_states(&g, 4, 1 << 20).unwrap() {
            let ts = backward_transitions(&g, &p(1.3), &s).unwrap();
            let total: f64 = ts.iter().map(|t| t.rate).sum();
            assert_relative_eq!(total, 4.0 + s.count(U) as f64 * 1.3, max_relative = 1e-12);
            assert!(ts.iter().all(|t| is_valid_backward(&g, &t.target)));
        }
    }

    #[test]
    fn local_balance_single_edge_and_n_graph() {
        let r = check_local_balance(&edge(), &p(1.0), 4, &BalanceOptions::default()).unwrap();
        assert!(r.passed && r.max_error < 1e-12, "{r}");
        let g = CompatibilityGraph::n_graph();
        let r = check_local_balance(&g, &p(1.0), 4, &BalanceOptions::default()).unwrap();
        assert!(r.passed, "{r}");
        let weighted = CompatibilityGraph::new(&["a", "b"], &["x", "y", "z"], &[(0, 0), (0, 1), (1, 2)], vec![0.3, 1.7, 0.9, 2.2, 0.5]).unwrap();
        let r = check_local_balance(&weighted, &ModelParams::new(1.4, 0.6).unwrap(), 4, &BalanceOptions::default()).unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn perturbed_rates_fail_local_balance() {
        let opts = BalanceOptions { mu_perturbation: 1e-3, ..Default::default() };
        let r = check_local_balance(&edge(), &p(1.0), 3, &opts).unwrap();
        assert!(!r.passed);
        assert!(r.worst_case.is_some());
    }

    #[test]
    fn truncated_solve_matches_product_form() {
        let g = edge();
        let sol = solve_stationary_truncated(&g, &p(1.0), 8).unwrap();
        assert_eq!(sol.states.len(), 17);
        for (a, b) in sol.probs.iter().zip(&sol.product_form) {
            assert_relative_eq!(*a, *b, max_relative = 1e-10);
        }
        assert!(sol.truncation_bound < 1e-6, "{}", sol.truncation_bound);
        let n = CompatibilityGraph::n_graph();
        let sol = solve_stationary_truncated(&n, &p(0.9), 6).unwrap();
        for (a, b) in sol.probs.iter().zip(&sol.product_form) {
            assert_relative_eq!(*a, *b, max_relative = 1e-9);
        }
    }

    #[test]
    fn gauss_seidel_agrees_with_lu() {
        let g = CompatibilityGraph::n_graph();
        let sol = solve_stationary_truncated(&g, &p(1.0), 5).unwrap();
        let states = &sol.states;
        let index: HashMap<&[usize], usize> = states.iter().enumerate().map(|(i, s)| (s.as_slice(), i)).collect();
        let out: Vec<Vec<(usize, f64)>> = states
            .iter()
            .map(|s| {
                let mut v: Vec<(usize, f64)> = (0..s.len()).map(|i| { let mut t = s.clone(); t.remove(i); (index[t.as_slice()], 1.0) }).collect();
                for c in 0..4 {
                    match s.iter().position(|&a| g.compatible(a, c)) {
                        Some(i) => { let mut t = s.clone(); t.remove(i); v.push((index[t.as_slice()], 1.0)); }
                        None if s.len() < 5 => { let mut t = s.clone(); t.push(c); v.push((index[t.as_slice()], 1.0)); }
                        None => {}
                    }
                }
                v
            })
            .collect();
        let gs = gauss_seidel(&out).unwrap();
        for (a, b) in gs.iter().zip(&sol.probs) {
            assert_relative_eq!(*a, *b, max_relative = 1e-9);
        }
    }

    #[test]
    fn small_arrival_rate_concentrates_on_empty() {
        let sol = solve_stationary_truncated(&edge(), &ModelParams::new(1e-8, 1.0).unwrap(), 4).unwrap();
        assert!((sol.probs[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn graph_json_roundtrip() {
        let text = r#"{"customers":["c1","c2"],"servers":["s1","s2"],"edges":[["c1","s1"],[1,0],["c2","s2"]],"weights":{"c1":2.0}}"#;
        let g = CompatibilityGraph::from_json(text).unwrap();
        assert_eq!(g.len(), 4);
        assert!(g.compatible(1, 2) && g.compatible(0, 2) && !g.compatible(0, 3));
        assert_eq!(g.types().weight(0), 2.0);
        assert_eq!(CompatibilityGraph::from_json(&g.to_json()).unwrap(), g);
        assert!(matches!(CompatibilityGraph::from_json(r#"{"customers":["a"],"servers":["b"],"edges":[["a","q"]]}"#), Err(FifmError::Schema(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn random_graphs_satisfy_local_balance(
            edges in prop::collection::vec((0usize..2, 0usize..2), 1..4),
            w in prop::collection::vec(0.2..3.0f64, 4),
            mu in 0.2..3.0f64,
        ) {
            let g = CompatibilityGraph::new(&["a", "b"], &["x", "y"], &edges, w).unwrap();
            let r = check_local_balance(&g, &ModelParams::new(1.0, mu).unwrap(), 3, &BalanceOptions::default()).unwrap();
            prop_assert!(r.passed, "{}", r);
        }
    }
}
