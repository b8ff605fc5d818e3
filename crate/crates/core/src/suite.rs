//! End-to-end verification suite tying the modules together.
//!
//! Every check returns a [`VerificationReport`] and is deterministic given its
//! fixed seed. [`Scale::Full`] uses the documented acceptance sizes;
//! [`Scale::Quick`] shrinks trial and sample counts for a desk run.

use crate::analytics::{normalizing_constant, Boundary, NormalizationOptions, DEFAULT_TRUNCATION};
use crate::bipartite::{check_local_balance, solve_stationary_truncated, BalanceOptions, CompatibilityGraph};
use crate::cftp::{estimate_regeneration_probability, sample_many, CftpOptions};
use crate::error::Result;
use crate::euclid::{compute_kappa, decay_experiment, estimate_coupling_time, CouplingOptions, Region};
use crate::fifm::OrderedConfiguration;
use crate::fkg::{
    default_association_pairs, fkg_sweep, holley_sweep, lemma_aux_check, positive_association_report,
    stationary_samples, SweepOptions,
};
use crate::report::VerificationReport;
use crate::rng;
use crate::simulator::{evaluate_generator, generate_driving_process, simulate, EventKind, Functional, ModelParams};
use crate::space::Space;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Quick,
    Full,
}

impl Scale {
    fn pick<T>(self, quick: T, full: T) -> T {
        match self {
            Scale::Quick => quick,
            Scale::Full => full,
        }
    }
}

fn unit_params() -> ModelParams {
    ModelParams { intensity: 1.0, mu: 1.0 }
}

/// Turns an error into a failing report so one broken check does not hide the others.
fn or_fail(check: &str, r: Result<VerificationReport>) -> VerificationReport {
    r.unwrap_or_else(|e| {
        let mut rep = VerificationReport::new(check, f64::NAN);
        rep.fail(e.to_string());
        rep
    })
}

/// Path-sum identity for all `n, m <= 5`.
pub fn lemma_aux_identity(scale: Scale) -> VerificationReport {
    let per_shape = scale.pick(20, 100);
    let mut rep = VerificationReport::new("lemma-aux", 1e-12);
    let mut g = rng::stream(0xa0c, 0);
    for n in 0..=5 {
        for m in 0..=5 {
            for _ in 0..per_shape {
                let a: Vec<f64> = (0..n).map(|_| g.random_range(0.01..10.0)).collect();
                let b: Vec<f64> = (0..m).map(|_| g.random_range(0.01..10.0)).collect();
                match lemma_aux_check(&a, &b) {
                    Ok(r) => rep.record(r.rel_err, || format!("alphas={a:?} betas={b:?} lhs={:.17e} rhs={:.17e}", r.lhs, r.rhs)),
                    Err(e) => rep.fail(e.to_string()),
                }
            }
        }
    }
    rep
}

/// Local balance on the single-edge and N graphs.
pub fn local_balance(scale: Scale) -> VerificationReport {
    let max_len = scale.pick(4, 5);
    let p = unit_params();
    let run = || -> Result<VerificationReport> {
        let single = CompatibilityGraph::single_edge(1.0, 1.0)?;
        let a = check_local_balance(&single, &p, max_len, &BalanceOptions::default())?;
        let b = check_local_balance(&CompatibilityGraph::n_graph(), &p, max_len, &BalanceOptions::default())?;
        let mut r = VerificationReport::combine("local-balance", &[a.clone(), b.clone()]);
        r.max_error = a.max_error.max(b.max_error);
        r.tolerance = a.tolerance;
        r.worst_case = if a.max_error >= b.max_error { a.worst_case } else { b.worst_case };
        Ok(r)
    };
    or_fail("local-balance", run())
}

/// Truncated stationary solve against the product form on the single edge.
pub fn solve_vs_product_form(_scale: Scale) -> VerificationReport {
    let run = || -> Result<VerificationReport> {
        let g = CompatibilityGraph::single_edge(1.0, 1.0)?;
        let sol = solve_stationary_truncated(&g, &unit_params(), 8)?;
        let mut rep = VerificationReport::new("product-form", 1e-6);
        for (k, s) in sol.states.iter().enumerate() {
            let d = (sol.probs[k] - sol.product_form[k]).abs();
            rep.record(d, || format!("state={} solve={:.17e} product={:.17e}", g.format_types(s), sol.probs[k], sol.product_form[k]));
        }
        rep.note(format!("certified truncation bound {:.3e}, method {}", sol.truncation_bound, sol.method));
        if !(sol.truncation_bound < 1e-6) {
            rep.fail(format!("truncation bound {:.3e} is not below 1e-6", sol.truncation_bound));
        }
        Ok(rep)
    };
    or_fail("product-form", run())
}

/// Particle-count histogram of CFTP samples on Circle(3) against the analytic marginal.
pub fn count_marginal(scale: Scale) -> VerificationReport {
    let n = scale.pick(10_000, 100_000);
    let run = || -> Result<VerificationReport> {
        let space = Space::circle(3.0)?;
        let p = unit_params();
        let nc = normalizing_constant(&space, &p, DEFAULT_TRUNCATION, &NormalizationOptions::default())?;
        let samples = sample_many(&space, &p, n, 0xc0c, &CftpOptions::default())?;
        let bins = nc.count_probs.len();
        let mut hist = vec![0usize; bins + 1];
        for s in &samples {
            hist[s.config.len().min(bins)] += 1;
        }
        let nf = n as f64;
        let mut tv = hist[bins] as f64 / nf + nc.tail_bound;
        let mut per_bin = VerificationReport::new("count-marginal-bins", 3.0);
        for k in 0..bins {
            let emp = hist[k] as f64 / nf;
            let q = nc.count_probs[k];
            tv += (emp - q).abs();
            let se = (q * (1.0 - q) / nf + nc.count_stderr[k].powi(2)).sqrt();
            if q > 1e-9 || hist[k] > 0 {
                let z = if se > 0.0 { (emp - q).abs() / se } else if emp == q { 0.0 } else { f64::INFINITY };
                per_bin.record(z, || format!("n={k} empirical={emp:.6e} analytic={q:.6e} stderr={se:.3e}"));
            }
        }
        let mut tv_rep = VerificationReport::new("count-marginal-tv", 0.02);
        tv_rep.record(0.5 * tv, || format!("samples={n}"));
        let mut r = VerificationReport::combine("count-marginal", &[tv_rep.clone(), per_bin.clone()]);
        r.max_error = tv_rep.max_error;
        r.tolerance = tv_rep.tolerance;
        r.worst_case = per_bin.worst_case.clone();
        Ok(r)
    };
    or_fail("count-marginal", run())
}

/// Monte Carlo regeneration probability against `exp(-2 lambda(D) / mu)`.
pub fn regeneration_grid(scale: Scale) -> VerificationReport {
    let trials = scale.pick(20_000, 100_000);
    let mut rep = VerificationReport::new("regeneration", 3.0);
    for (i, &ld) in [0.5, 1.0, 2.0].iter().enumerate() {
        for (j, &mu) in [0.5, 1.0, 2.0].iter().enumerate() {
            let r = Space::interval(ld).and_then(|s| {
                estimate_regeneration_probability(&s, &ModelParams { intensity: 1.0, mu }, trials, 0x4e6 + (3 * i + j) as u64)
            });
            match r {
                Ok(e) => {
                    let se = (e.exact * (1.0 - e.exact) / trials as f64).sqrt();
                    rep.record((e.estimate - e.exact).abs() / se, || {
                        format!("lambda(D)={ld} mu={mu} estimate={:.6e} exact={:.6e} stderr={se:.3e}", e.estimate, e.exact)
                    });
                }
                Err(e) => rep.fail(e.to_string()),
            }
        }
    }
    rep
}

/// Mean of `L f` over stationary samples on Interval(3), in standard errors.
pub fn generator_mean(scale: Scale) -> VerificationReport {
    let n = scale.pick(4_000, 40_000);
    let run = || -> Result<VerificationReport> {
        let space = Space::interval(3.0)?;
        let p = unit_params();
        let samples: Vec<OrderedConfiguration> =
            sample_many(&space, &p, n, 0x9e4, &CftpOptions::default())?.into_iter().map(|s| s.config).collect();
        let mut rep = VerificationReport::new("generator", 3.0);
        for f in Functional::dictionary() {
            let vals = samples.iter().map(|c| evaluate_generator(&space, &p, c, &f)).collect::<Result<Vec<f64>>>()?;
            let nf = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / nf;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            let se = (var / nf).sqrt();
            rep.record(mean.abs() / se, || format!("f={} mean={mean:.6e} stderr={se:.3e}", f.name()));
            rep.note(format!("f={} mean={mean:.6e} stderr={se:.3e}", f.name()));
        }
        Ok(rep)
    };
    or_fail("generator", run())
}

/// Randomised FKG sweeps on Circle(4).
pub fn fkg_suite(scale: Scale) -> Vec<VerificationReport> {
    let opts = SweepOptions { trials: scale.pick(200, 1000), n_max: 5, mean_count: 3.0, seed: 9 };
    let run = || -> Result<Vec<VerificationReport>> { fkg_sweep(&Space::circle(4.0)?, &unit_params(), &opts) };
    run().unwrap_or_else(|e| vec![or_fail("fkg", Err(e))])
}

/// Holley inequality for red >= free >= blue on Interval(4), with the swapped
/// order as a negative control that must find a violation.
pub fn holley_suite(scale: Scale) -> VerificationReport {
    let opts = SweepOptions { trials: scale.pick(100, 500), n_max: 5, mean_count: 3.0, seed: 11 };
    let run = || -> Result<VerificationReport> {
        let w = Space::interval(4.0)?;
        let p = unit_params();
        let mut parts = Vec::new();
        for (z1, z2) in [(Boundary::Red, Boundary::Free), (Boundary::Free, Boundary::Blue), (Boundary::Red, Boundary::Blue)] {
            parts.push(holley_sweep(&w, &p, &z1, &z2, &opts, true)?);
        }
        let neg = holley_sweep(&w, &p, &Boundary::Free, &Boundary::Red, &opts, false)?;
        let mut control = VerificationReport::new("holley-negative-control", 0.0);
        control.cases = neg.cases;
        if neg.passed {
            control.fail("swapped boundaries produced no violation");
        } else {
            control.note(format!("swapped boundaries violated: {}", neg.worst_case.clone().unwrap_or_default()));
        }
        parts.push(control);
        let mut r = VerificationReport::combine("holley", &parts);
        r.max_error = parts[..3].iter().map(|p| p.max_error).fold(0.0, f64::max);
        r.tolerance = 1.0;
        Ok(r)
    };
    or_fail("holley", run())
}

/// Special density on Torus2D(20) against `beta_S(0) exp(-mu t)`, in standard errors.
pub fn discrepancy_decay(scale: Scale) -> VerificationReport {
    let replicas = scale.pick(40, 200);
    let run = || -> Result<VerificationReport> {
        let space = Space::torus2d(20.0)?;
        let curve = decay_experiment(&space, &unit_params(), 1.0, 5.0, replicas, 0xdeca, 1.0)?;
        let mut rep = VerificationReport::new("decay", 2.0);
        for r in curve.rows.iter().filter(|r| r.t > 0.5) {
            let z = if r.beta_s_stderr > 0.0 {
                (r.beta_s_mean - r.bound) / r.beta_s_stderr
            } else if r.beta_s_mean <= r.bound {
                0.0
            } else {
                f64::INFINITY
            };
            rep.record(z.max(0.0), || format!("t={} mean={:.6e} bound={:.6e} stderr={:.3e}", r.t, r.beta_s_mean, r.bound, r.beta_s_stderr));
        }
        if curve.specials_increased > 0 {
            rep.fail(format!("special count increased in {} replicas", curve.specials_increased));
        }
        Ok(rep)
    };
    or_fail("decay", run())
}

/// Coupling time of a side-2 window on Torus2D(20) at horizons 20 and 40.
pub fn coupling_time(scale: Scale) -> VerificationReport {
    let replicas = scale.pick(100, 500);
    let run = || -> Result<VerificationReport> {
        let space = Space::torus2d(20.0)?;
        let window = Region::centered(&space, 2.0)?;
        let p = unit_params();
        let short = estimate_coupling_time(&space, &p, window, replicas, 0x7a0, &CouplingOptions::default())?;
        let long_opts = CouplingOptions { horizon: 40.0, ..CouplingOptions::default() };
        let long = estimate_coupling_time(&space, &p, window, replicas, 0x7a0, &long_opts)?;
        let shift = (long.mean - short.mean).abs() / short.mean;
        let mut rep = VerificationReport::new("coupling-time", 0.05);
        rep.record(shift, || format!("mean(H=20)={:.6e} mean(H=40)={:.6e}", short.mean, long.mean));
        rep.note(format!(
            "H=20: mean={:.4} ci=({:.4}, {:.4}) censored={:.4}; H=40: mean={:.4} ci=({:.4}, {:.4}) censored={:.4}",
            short.mean, short.ci.0, short.ci.1, short.censored_fraction, long.mean, long.ci.0, long.ci.1, long.censored_fraction
        ));
        if !(short.censored_fraction < 0.01) {
            rep.fail(format!("censored fraction {:.4} at horizon 20", short.censored_fraction));
        }
        if !(short.ci.0.is_finite() && short.ci.1.is_finite() && long.ci.0.is_finite() && long.ci.1.is_finite()) {
            rep.fail("bootstrap interval is not finite");
        }
        Ok(rep)
    };
    or_fail("coupling-time", run())
}

/// Killing-function match pairs against simulator match pairs on Circle(10).
pub fn kappa_equivalence(scale: Scale) -> VerificationReport {
    let streams = scale.pick(20, 100);
    let run = || -> Result<VerificationReport> {
        let space = Space::circle(10.0)?;
        let p = unit_params();
        let init = OrderedConfiguration::default();
        let mut rep = VerificationReport::new("kappa", 0.0);
        for seed in 0..streams as u64 {
            let ev = generate_driving_process(&space, &p, 0.0, 30.0, 0x6a0 + seed)?;
            let k = compute_kappa(&space, &init, &ev)?.pairs(&ev);
            let (_, log) = simulate(&space, &p, &init, &ev, f64::INFINITY)?;
            let sim: Vec<(i64, i64)> = log
                .iter()
                .filter_map(|r| match r.kind {
                    EventKind::MatchDeparture { arrival, matched } => Some((arrival, matched)),
                    _ => None,
                })
                .collect();
            let mismatches = k.iter().zip(&sim).filter(|(a, b)| a != b).count() + k.len().abs_diff(sim.len());
            rep.record(mismatches as f64, || format!("stream seed={} kappa pairs={} simulator pairs={}", 0x6a0 + seed, k.len(), sim.len()));
        }
        Ok(rep)
    };
    or_fail("kappa", run())
}

/// Covariances of the dictionary functionals on Circle(4), in standard errors.
pub fn positive_association(scale: Scale) -> VerificationReport {
    let n = scale.pick(10_000, 100_000);
    let run = || -> Result<VerificationReport> {
        let space = Space::circle(4.0)?;
        let configs = stationary_samples(&space, &unit_params(), n, 0xa55)?;
        Ok(positive_association_report(&space, &configs, &default_association_pairs(4.0, space.radius()), 3.0).0)
    };
    or_fail("positive-association", run())
}

/// Every check in a fixed order.
pub fn run_all(scale: Scale) -> Vec<VerificationReport> {
    let mut out = vec![lemma_aux_identity(scale), local_balance(scale), solve_vs_product_form(scale), count_marginal(scale)];
    out.push(regeneration_grid(scale));
    out.push(generator_mean(scale));
    out.extend(fkg_suite(scale));
    out.push(holley_suite(scale));
    out.push(discrepancy_decay(scale));
    out.push(coupling_time(scale));
    out.push(kappa_equivalence(scale));
    out.push(positive_association(scale));
    out
}
