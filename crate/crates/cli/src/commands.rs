//! Subcommand implementations. Each returns `Ok(false)` when a requested check fails.

use crate::args::*;
use crate::output::*;
use anyhow::Result;
use fifm::analytics::{normalizing_constant, pi_ordered, pi_tilde, NormalizationOptions, DEFAULT_JANOSSY_CAP};
use fifm::bipartite::{check_local_balance, solve_stationary_truncated, BalanceOptions};
use fifm::cftp::{estimate_regeneration_probability, sample_many, CftpOptions, ScanGranularity};
use fifm::euclid::{decay_experiment, estimate_coupling_time, CouplingOptions, Region};
use fifm::fkg::{
    default_association_pairs, fkg_sweep, holley_sweep, lemma_aux_check, positive_association_report, stationary_samples,
    SweepOptions,
};
use fifm::report::VerificationReport;
use fifm::simulator::{generate_driving_process, simulate_with, LogLevel, SimOptions};
use fifm::suite::{self, Scale};
use fifm::{Color, FifmError, ModelParams, OrderedConfiguration, Space, SpaceKind};
use rand::Rng;
use serde_json::{json, Value};
use std::time::Instant;

pub fn run(cli: &Cli) -> Result<bool> {
    let run = serde_json::to_value(cli)?;
    let config = json!({ "version": env!("CARGO_PKG_VERSION"), "run": run, "inputs": input_documents(&run) });
    match &cli.command {
        Command::Simulate(a) => simulate(a, &config),
        Command::CftpSample(a) => cftp_sample(a, &config),
        Command::Density(a) => density(a, &config),
        Command::Solve(a) => solve(a, &config),
        Command::Verify { check } => verify(check, &config),
        Command::Decay(a) => decay(a, &config),
        Command::Tau(a) => tau(a, &config),
        Command::Regen(a) => regen(a, &config),
    }
}

/// Contents of the JSON input files named in the arguments, keyed by argument.
fn input_documents(run: &Value) -> Value {
    let mut out = serde_json::Map::new();
    let mut visit = |obj: &serde_json::Map<String, Value>| {
        for key in ["space", "graph", "window", "config", "initial"] {
            if let Some(Value::String(p)) = obj.get(key) {
                if let Ok(v) = std::fs::read_to_string(p).map_err(anyhow::Error::from).and_then(|t| Ok(serde_json::from_str::<Value>(&t)?)) {
                    out.insert(key.to_string(), v);
                }
            }
        }
    };
    if let Some(cmd) = run.get("command").and_then(Value::as_object) {
        visit(cmd);
        if let Some(check) = cmd.get("check").and_then(Value::as_object) {
            visit(check);
        }
    }
    Value::Object(out)
}

fn params(m: &ModelArgs) -> Result<ModelParams> {
    Ok(ModelParams::new(m.intensity, m.mu)?)
}

fn simulate(a: &SimulateArgs, config: &Value) -> Result<bool> {
    let space = load_space(&a.space)?;
    let p = params(&a.model)?;
    let initial = match &a.initial {
        Some(path) => load_configuration(path)?,
        None => OrderedConfiguration::default(),
    };
    let mut events = generate_driving_process(&space, &p, 0.0, a.t_end, a.seed)?;
    // Arrival ids follow the initial ids so every particle has a unique id.
    let offset = initial.items.iter().map(|q| q.id + 1).max().unwrap_or(0).max(0);
    for e in &mut events {
        e.id += offset;
    }
    let level = match a.log_level {
        LogLevelArg::None => LogLevel::None,
        LogLevelArg::Transitions => LogLevel::Transitions,
        LogLevelArg::Full => LogLevel::Full,
    };
    let opts = SimOptions { log: level, stats_interval: a.stats.as_ref().map(|_| a.stats_interval), start_time: Some(0.0) };
    let r = simulate_with(&space, &p, &initial, &events, a.t_end, &opts)?;
    if let Some(path) = &a.log {
        write_artifact(path, &jsonl_bytes(&r.log)?, config)?;
    }
    if let Some(path) = &a.stats {
        let rows = r.rows.iter().map(|s| vec![f17(s.time), s.total.to_string(), s.reds.to_string(), s.blues.to_string()]);
        write_artifact(path, &csv_bytes(&["time", "total", "reds", "blues"], rows)?, config)?;
    }
    print_json(&json!({ "config": config, "stats": r.stats, "final_size": r.final_state.len() }))?;
    Ok(true)
}

fn cftp_sample(a: &CftpArgs, config: &Value) -> Result<bool> {
    let space = load_space(&a.space)?;
    let p = params(&a.model)?;
    let granularity = match a.granularity {
        GranularityArg::Integer => ScanGranularity::Integer,
        GranularityArg::Continuous => ScanGranularity::Continuous,
    };
    let samples = sample_many(&space, &p, a.replicas, a.seed, &CftpOptions { granularity, ..CftpOptions::default() })?;
    if let Some(path) = &a.out {
        let lines = samples.iter().enumerate().map(|(r, s)| {
            json!({
                "replica": r,
                "regeneration_time": s.regeneration_time,
                "events_replayed": s.events_replayed,
                "missed_bound": s.missed_bound,
                "config": s.config,
            })
        });
        write_artifact(path, &jsonl_bytes(lines)?, config)?;
    }
    let max = samples.iter().map(|s| s.config.len()).max().unwrap_or(0);
    let mut hist = vec![0usize; max + 1];
    for s in &samples {
        hist[s.config.len()] += 1;
    }
    let n = samples.len().max(1) as f64;
    let mean = samples.iter().map(|s| s.config.len() as f64).sum::<f64>() / n;
    let reds = samples.iter().map(|s| s.config.count(Color::Red) as f64).sum::<f64>() / n;
    print_json(&json!({
        "config": config,
        "samples": samples.len(),
        "mean_count": mean,
        "mean_red_count": reds,
        "count_histogram": hist,
        "missed_bound": samples.first().map(|s| s.missed_bound),
    }))?;
    Ok(true)
}

fn density(a: &DensityArgs, config: &Value) -> Result<bool> {
    let space = load_space(&a.space)?;
    let p = params(&a.model)?;
    let cfg = load_configuration(&a.config)?;
    cfg.check(&space)?;
    let out = match &a.boundary {
        Some(b) => {
            let b = load_boundary(b)?;
            if a.normalize {
                return Err(FifmError::Capability("normalisation under a boundary condition is not supported".into()).into());
            }
            let d = pi_tilde(&space, &p, &cfg.marked(), &b, DEFAULT_JANOSSY_CAP)?;
            json!({ "config": config, "kind": "janossy", "boundary": b, "log_density": d.log_value, "density": d.value() })
        }
        None => {
            let mut d = pi_ordered(&space, &p, &cfg)?;
            let mut extra = Value::Null;
            if a.normalize {
                let opts = NormalizationOptions { seed: a.seed, ..NormalizationOptions::default() };
                let nc = normalizing_constant(&space, &p, a.truncation, &opts)?;
                d = d.normalize(nc.k_inverse);
                extra = json!({ "k_inverse": nc.k_inverse, "k_inverse_stderr": nc.k_inverse_stderr, "tail_bound": nc.tail_bound });
            }
            json!({
                "config": config,
                "kind": "ordered",
                "log_density": d.log_value,
                "density": d.value(),
                "normalized": d.normalized,
                "normalization": extra,
            })
        }
    };
    print_json(&out)?;
    Ok(true)
}

fn solve(a: &SolveArgs, config: &Value) -> Result<bool> {
    let g = load_graph(&a.graph)?;
    let sol = solve_stationary_truncated(&g, &params(&a.model)?, a.max_len)?;
    let max_diff = sol.probs.iter().zip(&sol.product_form).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    if let Some(path) = &a.out {
        let rows = sol.states.iter().enumerate().map(|(k, s)| {
            vec![g.format_types(s), f17(sol.probs[k]), f17(sol.product_form[k]), f17((sol.probs[k] - sol.product_form[k]).abs())]
        });
        write_artifact(path, &csv_bytes(&["state", "probability", "product_form", "abs_diff"], rows)?, config)?;
    }
    print_json(&json!({
        "config": config,
        "states": sol.states.len(),
        "method": sol.method,
        "truncation_bound": sol.truncation_bound,
        "max_abs_diff_product_form": max_diff,
        "count_marginal": sol.count_marginal,
    }))?;
    Ok(true)
}

fn verify(check: &VerifyCommand, config: &Value) -> Result<bool> {
    let start = Instant::now();
    let (reports, path): (Vec<CheckReport>, _) = match check {
        VerifyCommand::LocalBalance(a) => {
            let g = load_graph(&a.graph)?;
            let opts = BalanceOptions { mu_perturbation: a.mu_perturbation, ..BalanceOptions::default() };
            let r = check_local_balance(&g, &params(&a.model)?, a.max_len, &opts)?;
            (vec![(&r).into()], a.report.report.as_deref())
        }
        VerifyCommand::Fkg(a) => {
            let space = load_space(&a.space)?;
            let p = params(&a.model)?;
            let opts = SweepOptions { trials: a.trials, n_max: a.n_max, seed: a.seed, ..SweepOptions::default() };
            let mut reports: Vec<CheckReport> = fkg_sweep(&space, &p, &opts)?.iter().map(Into::into).collect();
            if a.association_samples > 0 {
                match space.kind() {
                    SpaceKind::Interval { length } | SpaceKind::Circle { length } => {
                        match stationary_samples(&space, &p, a.association_samples, a.seed) {
                            Ok(configs) => {
                                let pairs = default_association_pairs(*length, space.radius());
                                reports.push((&positive_association_report(&space, &configs, &pairs, 3.0).0).into());
                            }
                            Err(fifm::FifmError::Capability(why)) => {
                                reports.push(CheckReport::skipped("positive-association", &why))
                            }
                            Err(e) => return Err(e.into()),
                        }
                    }
                    _ => reports.push(CheckReport::skipped("positive-association", "needs a one-dimensional space")),
                }
            }
            (reports, a.report.report.as_deref())
        }
        VerifyCommand::Holley(a) => {
            let window = load_space(&a.window)?;
            let p = params(&a.model)?;
            let (z1, z2) = (load_boundary(&a.zeta1)?, load_boundary(&a.zeta2)?);
            let opts = SweepOptions { trials: a.trials, n_max: a.n_max, seed: a.seed, ..SweepOptions::default() };
            let mut reports = vec![CheckReport::from(&holley_sweep(&window, &p, &z1, &z2, &opts, true)?)];
            if a.negative_control {
                let neg = holley_sweep(&window, &p, &z2, &z1, &opts, false)?;
                let mut control = VerificationReport::new("holley-negative-control", 0.0);
                control.cases = neg.cases;
                match &neg.worst_case {
                    Some(w) if !neg.passed => control.note(format!("violation found: {w}")),
                    _ => control.fail("swapped boundaries produced no violation"),
                }
                reports.push((&control).into());
            }
            (reports, a.report.report.as_deref())
        }
        VerifyCommand::LemmaAux(a) => (vec![(&lemma_aux(a)?).into()], a.report.report.as_deref()),
        VerifyCommand::ProductForm(a) => {
            let g = load_graph(&a.graph)?;
            let sol = solve_stationary_truncated(&g, &params(&a.model)?, a.max_len)?;
            let mut r = VerificationReport::new("product-form", a.tolerance);
            for (k, s) in sol.states.iter().enumerate() {
                r.record((sol.probs[k] - sol.product_form[k]).abs(), || {
                    format!("state={} solve={} product={}", g.format_types(s), f17(sol.probs[k]), f17(sol.product_form[k]))
                });
            }
            r.note(format!("certified truncation bound {:.3e}", sol.truncation_bound));
            if !(sol.truncation_bound < a.tolerance) {
                r.fail(format!("truncation bound {:.3e} exceeds {:.1e}; raise --max-len", sol.truncation_bound, a.tolerance));
            }
            (vec![(&r).into()], a.report.report.as_deref())
        }
        VerifyCommand::All(a) => {
            let scale = if a.quick { Scale::Quick } else { Scale::Full };
            let reports = suite::run_all(scale).iter().map(Into::into).collect();
            (reports, a.report.report.as_deref())
        }
    };
    emit_reports(&reports, config, path, start.elapsed().as_secs_f64())
}

fn lemma_aux(a: &LemmaAuxArgs) -> Result<VerificationReport> {
    let mut rep = VerificationReport::new("lemma-aux", 1e-12);
    if let (Some(al), Some(be)) = (&a.alphas, &a.betas) {
        let r = lemma_aux_check(al, be)?;
        rep.record(r.rel_err, || format!("alphas={al:?} betas={be:?}"));
        rep.note(format!("lhs={} rhs={} paths={}", f17(r.lhs), f17(r.rhs), r.paths));
        return Ok(rep);
    }
    if a.alphas.is_some() != a.betas.is_some() {
        return Err(FifmError::Argument("give both --alphas and --betas, or neither".into()).into());
    }
    let mut g = fifm::rng::stream(a.seed, 0);
    for n in 0..=a.max_size {
        for m in 0..=a.max_size {
            for _ in 0..a.instances {
                let al: Vec<f64> = (0..n).map(|_| g.random_range(0.01..10.0)).collect();
                let be: Vec<f64> = (0..m).map(|_| g.random_range(0.01..10.0)).collect();
                let r = lemma_aux_check(&al, &be)?;
                rep.record(r.rel_err, || format!("alphas={al:?} betas={be:?}"));
            }
        }
    }
    Ok(rep)
}

fn decay(a: &DecayArgs, config: &Value) -> Result<bool> {
    let space = Space::torus2d(a.side)?;
    let curve = decay_experiment(&space, &params(&a.model)?, a.init_density, a.t_end, a.replicas, a.seed, a.dt)?;
    if let Some(path) = &a.out {
        write_artifact(path, curve.to_csv().as_bytes(), config)?;
    }
    print_json(&json!({
        "config": config,
        "rows": curve.rows,
        "within_bound": curve.within_bound(),
        "specials_increased": curve.specials_increased,
        "transitions": curve.transitions.iter().map(|(k, v)| (format!("{k:?}"), *v)).collect::<std::collections::BTreeMap<_, _>>(),
    }))?;
    Ok(true)
}

fn tau(a: &TauArgs, config: &Value) -> Result<bool> {
    let space = Space::torus2d(a.side)?;
    let window = Region::centered(&space, a.k_side)?;
    let opts = CouplingOptions { horizon: a.horizon, head_start: a.head_start, bootstrap: a.bootstrap };
    let est = estimate_coupling_time(&space, &params(&a.model)?, window, a.replicas, a.seed, &opts)?;
    if let Some(path) = &a.out {
        write_artifact(path, est.to_csv().as_bytes(), config)?;
    }
    print_json(&json!({
        "config": config,
        "mean": est.mean,
        "stderr": est.stderr,
        "ci": [est.ci.0, est.ci.1],
        "censored_fraction": est.censored_fraction,
        "reappearance_bound": est.reappearance_bound,
        "unclassified_transitions": est.unclassified_transitions,
    }))?;
    Ok(true)
}

fn regen(a: &RegenArgs, config: &Value) -> Result<bool> {
    let space = load_space(&a.space)?;
    let e = estimate_regeneration_probability(&space, &params(&a.model)?, a.trials, a.seed)?;
    let se = (e.exact * (1.0 - e.exact) / e.trials as f64).sqrt();
    print_json(&json!({
        "config": config,
        "estimate": e.estimate,
        "stderr": e.stderr,
        "exact": e.exact,
        "z": (e.estimate - e.exact) / se,
        "trials": e.trials,
    }))?;
    Ok(true)
}
