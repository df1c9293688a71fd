use serde_json::{json, Map, Value};
use supermarket::fit::{fit, verify_fit, MomentTriple};
use supermarket::fixed_point::{
    balance_residuals, expected_sojourn, fixed_point_table, FixedPointTable, ModelParams, Truncation,
};
use supermarket::mean_field::{
    default_depth, integrate, lyapunov_distance, stationary_solve, MeanFieldState, StepControl,
};
use supermarket::sim::{aggregate, run_all, SimConfig, SimStats};
use supermarket::{parse_dist, Error, PhDocument, PhaseType, Result};

use crate::report::{ResultsDocument, Table};
use crate::{CompareArgs, FitArgs, FixedPointArgs, Init, ModelArgs, OdeArgs, SimArgs, SimulateArgs};

fn params_map(value: Value) -> Map<String, Value> {
    match value {
        Value::Object(map) => map,
        _ => unreachable!("parameters are built as objects"),
    }
}

fn model(args: &ModelArgs) -> Result<ModelParams> {
    let d = u32::try_from(args.d).map_err(|_| Error::InvalidParameter(format!("d = {} is too large", args.d)))?;
    ModelParams::new(parse_dist(&args.dist)?, args.lambda, d)
}

fn model_parameters(args: &ModelArgs) -> Value {
    json!({ "dist": args.dist, "lambda": args.lambda, "d": args.d })
}

fn distribution_summary(doc: &mut ResultsDocument, params: &ModelParams) {
    doc.note("omega", params.omega().to_vec());
    doc.note("mu", params.mu());
    doc.note("rho", params.rho());
    doc.note("theta", params.theta());
}

pub fn fit_cmd(command: Vec<String>, args: &FitArgs) -> Result<ResultsDocument> {
    let raw = MomentTriple::new(args.m1, args.m2, args.m3)?;
    let out = fit(raw)?;
    let mut doc = ResultsDocument::new(command, params_map(json!({ "m1": args.m1, "m2": args.m2, "m3": args.m3 })));
    let flags: Vec<String> = out.clamp_flags.iter().map(ToString::to_string).collect();
    doc.note("clamp_flags", flags);
    doc.note("clamped", out.clamped);
    doc.note("coefficients", out.coefficients);
    doc.note("eta", out.eta);
    doc.note("xi1", out.xi1);
    doc.note("xi2", out.xi2);
    doc.note("distribution", PhDocument::from(&out.distribution));
    doc.note("verify_error", verify_fit(&out));
    let mut t = Table::new("fit", ["eta", "xi1", "xi2", "verify_error"].map(String::from).to_vec());
    t.push(vec![out.eta, out.xi1, out.xi2, verify_fit(&out)]);
    doc.tables.push(t);
    Ok(doc)
}

fn levels_table(table: &FixedPointTable) -> Table {
    let m = table.omega.len();
    let mut columns = vec!["k".to_string()];
    columns.extend((1..=m).map(|i| format!("pi_{i}")));
    columns.push("tail".into());
    let mut t = Table::new("fixed_point", columns);
    for (k, level) in table.levels().enumerate() {
        let mut row = vec![(k + 1) as f64];
        row.extend_from_slice(level);
        row.push(level.iter().sum());
        t.push(row);
    }
    t
}

fn truncation(kmax: Option<usize>) -> Truncation {
    kmax.map_or_else(Truncation::default, Truncation::levels)
}

pub fn fixed_point_cmd(command: Vec<String>, args: &FixedPointArgs) -> Result<ResultsDocument> {
    let params = model(&args.model)?;
    let table = fixed_point_table(&params, truncation(args.kmax));
    let mut parameters = model_parameters(&args.model);
    parameters["kmax"] = json!(args.kmax);
    let mut doc = ResultsDocument::new(command, params_map(parameters));
    distribution_summary(&mut doc, &params);
    let res = balance_residuals(&table, &params);
    doc.note("max_scalar_residual", res.max_scalar());
    doc.note("max_vector_residual", res.max_vector());
    doc.tables.push(levels_table(&table));
    Ok(doc)
}

pub fn sojourn_cmd(command: Vec<String>, args: &ModelArgs) -> Result<ResultsDocument> {
    let params = model(args)?;
    let mut doc = ResultsDocument::new(command, params_map(model_parameters(args)));
    distribution_summary(&mut doc, &params);
    let value = expected_sojourn(&params);
    doc.note("mean_service", params.ph().mean());
    doc.note("expected_sojourn", value);
    let mut t = Table::new("sojourn", ["d", "rho", "expected_sojourn"].map(String::from).to_vec());
    t.push(vec![f64::from(params.d()), params.rho(), value]);
    doc.tables.push(t);
    Ok(doc)
}

fn read_initial(path: &str, order: usize) -> Result<MeanFieldState> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{path}: {e}")))?;
    let parse_err = |reason: String| Error::Parse { input: path.into(), reason };
    let value: Value = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
    // either a bare list of levels or {"levels": [...]}
    let levels = match value {
        Value::Object(mut map) => map.remove("levels").ok_or_else(|| parse_err("missing `levels`".into()))?,
        other => other,
    };
    let levels: Vec<Vec<f64>> = serde_json::from_value(levels).map_err(|e| parse_err(e.to_string()))?;
    let state = MeanFieldState::from_levels(&levels)?;
    if state.order() != order {
        return Err(Error::Dimension(format!("initial state has {} phases, model has {order}", state.order())));
    }
    Ok(state)
}

pub fn ode_cmd(command: Vec<String>, args: &OdeArgs) -> Result<ResultsDocument> {
    let params = model(&args.model)?;
    let horizon = args.horizon.unwrap_or(100.0 / params.lambda());
    let initial = match &args.init {
        Init::Empty => MeanFieldState::empty(params.order(), args.kmax.unwrap_or_else(|| default_depth(&params))),
        Init::FixedPoint => MeanFieldState::fixed_point(&params, args.kmax.unwrap_or_else(|| default_depth(&params))),
        Init::File(path) => read_initial(path, params.order())?,
    };
    let depth = initial.depth();
    let pi = fixed_point_table(&params, Truncation::levels(depth));
    let traj = integrate(&initial, &params, horizon, StepControl::default())?;

    let mut parameters = model_parameters(&args.model);
    parameters["horizon"] = json!(horizon);
    parameters["kmax"] = json!(depth);
    parameters["init"] = json!(args.init.to_string());
    let mut doc = ResultsDocument::new(command, params_map(parameters));
    distribution_summary(&mut doc, &params);
    doc.note("step", traj.step);
    doc.note("refinement_gap", traj.refinement_gap);

    let mut columns = vec!["t".to_string()];
    columns.extend((1..=depth).map(|k| format!("S_{k}")));
    columns.push("phi".into());
    let mut t = Table::new("trajectory", columns);
    let mut violations = 0;
    for s in &traj.samples {
        let phi = lyapunov_distance(s, &pi)?;
        violations += phi.ordering_violations;
        let mut row = vec![s.t];
        row.extend(s.tails());
        row.push(phi.value);
        t.push(row);
    }
    doc.note("ordering_violations", violations);
    doc.tables.push(t);
    Ok(doc)
}

fn sim_config(ph: PhaseType, lambda: f64, d: usize, sim: &SimArgs) -> SimConfig {
    let mut cfg = SimConfig::new(sim.n, d, lambda, ph).with_seed(sim.seed).with_replications(sim.reps);
    if let Some(h) = sim.horizon {
        cfg = cfg.with_horizon(h);
    }
    if let Some(w) = sim.warmup {
        cfg = cfg.with_warmup(w);
    }
    cfg
}

fn sim_parameters(cfg: &SimConfig) -> Value {
    json!({
        "n": cfg.n,
        "horizon": cfg.horizon,
        "warmup": cfg.warmup,
        "seed": cfg.seed,
        "reps": cfg.replications,
    })
}

fn run_sims(cfg: &SimConfig) -> Result<(Vec<SimStats>, SimStats)> {
    cfg.validate()?;
    let reps = run_all(cfg)?;
    let agg = aggregate(&reps)?;
    Ok((reps, agg))
}

pub fn simulate_cmd(command: Vec<String>, args: &SimulateArgs) -> Result<ResultsDocument> {
    let ph = parse_dist(&args.dist)?;
    let cfg = sim_config(ph, args.lambda, args.d, &args.sim);
    let (reps, agg) = run_sims(&cfg)?;

    let mut parameters = sim_parameters(&cfg);
    parameters["dist"] = json!(args.dist);
    parameters["lambda"] = json!(args.lambda);
    parameters["d"] = json!(args.d);
    let mut doc = ResultsDocument::new(command, params_map(parameters));
    doc.provenance.seed = Some(cfg.seed);
    doc.note("rho", cfg.rho());
    doc.note("overloaded", agg.overloaded);
    doc.note("mean_response", agg.mean_response);
    doc.note("little_check", agg.little_check);
    doc.note("customers_served", agg.customers_served);

    let mut per_rep = Table::new(
        "replications",
        ["rep", "mean_response", "mean_in_system", "little_check", "customers_served"].map(String::from).to_vec(),
    );
    for (i, r) in reps.iter().enumerate() {
        per_rep.push(vec![i as f64, r.mean_response.mean, r.mean_in_system, r.little_check, r.customers_served as f64]);
    }
    doc.tables.push(per_rep);
    doc.tables.push(tail_table(&agg));
    Ok(doc)
}

/// `k, mean[, half_width]`; the width column is dropped when it is unbounded.
fn tail_table(agg: &SimStats) -> Table {
    let with_ci = agg.tail_fractions.iter().all(|e| e.half_width.is_some());
    let mut columns = vec!["k".to_string(), "tail".to_string()];
    if with_ci {
        columns.push("half_width".into());
    }
    let mut t = Table::new("tail_fractions", columns);
    for (k, e) in agg.tail_fractions.iter().enumerate().skip(1) {
        let mut row = vec![k as f64, e.mean];
        if let Some(h) = e.half_width.filter(|_| with_ci) {
            row.push(h);
        }
        t.push(row);
    }
    t
}

/// Vector residuals above this (times lambda) are reported as nonzero.
const RESIDUAL_FLAG: f64 = 1e-10;

pub fn compare_cmd(command: Vec<String>, args: &CompareArgs) -> Result<ResultsDocument> {
    let params = model(&args.model)?;
    let baseline = ModelParams::new(PhaseType::exponential(params.mu())?, params.lambda(), params.d())?;
    let depth = args.kmax.unwrap_or_else(|| default_depth(&params));
    let pi = fixed_point_table(&params, Truncation::levels(depth));
    let pi_exp = fixed_point_table(&baseline, Truncation::levels(depth));
    let ode = stationary_solve(&params, depth, 1e-10)?;
    let residuals = balance_residuals(&pi, &params);

    let mut parameters = model_parameters(&args.model);
    parameters["kmax"] = json!(depth);
    let sim = if args.no_sim {
        None
    } else {
        let cfg = sim_config(params.ph().clone(), params.lambda(), args.model.d, &args.sim);
        let sim_params = sim_parameters(&cfg);
        for (k, v) in params_map(sim_params) {
            parameters[k] = v;
        }
        Some((cfg.seed, run_sims(&cfg)?.1))
    };

    let mut doc = ResultsDocument::new(command, params_map(parameters));
    distribution_summary(&mut doc, &params);
    doc.provenance.seed = sim.as_ref().map(|(seed, _)| *seed);
    let max_vec = residuals.max_vector();
    doc.note("max_scalar_residual", residuals.max_scalar());
    doc.note("max_vector_residual", max_vec);
    doc.note("vector_residual_nonzero", max_vec > RESIDUAL_FLAG * params.lambda());
    doc.note("ode_stationary_time", ode.t);

    let with_ci = sim.as_ref().is_some_and(|(_, agg)| agg.mean_response.half_width.is_some());
    let mut columns: Vec<String> = ["k", "closed_form", "ode", "exp_baseline"].map(String::from).to_vec();
    if sim.is_some() {
        columns.push("sim".into());
    }
    if with_ci {
        columns.push("sim_half_width".into());
    }
    let mut tails = Table::new("tails", columns);
    let ode_tails = ode.tails();
    for k in 1..=depth {
        let mut row = vec![k as f64, pi.tails()[k - 1], ode_tails[k - 1], pi_exp.tails()[k - 1]];
        if let Some((_, agg)) = &sim {
            let e = agg.tail_fractions.get(k).copied();
            row.push(e.map_or(0.0, |e| e.mean));
            if with_ci {
                row.push(e.and_then(|e| e.half_width).unwrap_or(0.0));
            }
        }
        tails.push(row);
    }
    doc.tables.push(tails);

    let mut columns: Vec<String> = ["analytic", "exp_baseline"].map(String::from).to_vec();
    let mut row = vec![expected_sojourn(&params), expected_sojourn(&baseline)];
    if let Some((_, agg)) = &sim {
        columns.extend(["sim", "little_check"].map(String::from));
        row.extend([agg.mean_response.mean, agg.little_check]);
        if let Some(h) = agg.mean_response.half_width {
            columns.push("sim_half_width".into());
            row.push(h);
        }
    }
    let mut sojourn = Table::new("sojourn", columns);
    sojourn.push(row);
    doc.tables.push(sojourn);
    Ok(doc)
}
