//! Workflow implementations behind the subcommands.

use crate::{CliError, CommonArgs};
use ofo::config;
use ofo::metrics::{beta1_baseline, ise, oscillations, MetricConfig, MetricsReport};
use ofo::plant::{calibrated_default, Calibration, CalibrationTargets, CompressorParams};
use ofo::simloop::{run_closed_loop, Setpoint, SimSpec};
use ofo::tuner::{self, PlantTuneProblem, TuneResult, TuneSpec};
use ofo::{OfoConfig, SimError};
use std::fs;
use std::path::{Path, PathBuf};

/// Resolve the plant: explicit file wins, otherwise the built-in calibration.
fn load_plant(common: &CommonArgs) -> Result<(CompressorParams, Option<&'static Calibration>), CliError> {
    match &common.params {
        Some(path) => Ok((config::load_params(path)?, None)),
        None => {
            let cal = calibrated_default();
            Ok((cal.params.clone(), Some(cal)))
        }
    }
}

/// Controller settings: defaults, overlaid by the config file, overlaid by
/// explicit flags.
fn load_controller(
    common: &CommonArgs,
    nu: Option<f64>,
    dt: Option<f64>,
) -> Result<OfoConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => config::load_controller(path)?,
        None => OfoConfig::default(),
    };
    if let Some(nu) = nu {
        cfg.nu = nu;
    }
    if let Some(dt) = dt {
        cfg.dt = dt;
    }
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

fn parse_setpoint(selector: &str) -> Result<Setpoint, CliError> {
    if let Some(sp) = Setpoint::from_name(selector) {
        return Ok(sp);
    }
    let path = Path::new(selector);
    if !path.exists() {
        return Err(CliError::Config(format!(
            "unknown setpoint '{selector}' (expected constant, sine, step, or a CSV file)"
        )));
    }
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Config(format!("{selector}: empty setpoint file")))?;
    let in_bar = match header.trim() {
        "t,psd" => false,
        "t,psd_bar" => true,
        other => {
            return Err(CliError::Config(format!(
                "{selector}: expected header 't,psd' or 't,psd_bar', got '{other}'"
            )))
        }
    };
    let mut points = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let parse = |v: Option<&str>| -> Result<f64, CliError> {
            v.and_then(|s| s.trim().parse::<f64>().ok()).ok_or_else(|| {
                CliError::Config(format!("{selector}: bad row {} '{line}'", idx + 2))
            })
        };
        let t = parse(cols.next())?;
        let mut v = parse(cols.next())?;
        if in_bar {
            v *= 1.0e5;
        }
        points.push((t, v));
    }
    if points.is_empty() {
        return Err(CliError::Config(format!("{selector}: no setpoint rows")));
    }
    Ok(Setpoint::Table(points))
}

fn ensure_out(common: &CommonArgs) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&common.out)?;
    Ok(common.out.clone())
}

fn write_deterministic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes)?;
    Ok(())
}

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::Fault { .. } => CliError::Runtime(e.to_string()),
        SimError::BadSpec(m) => CliError::Config(m),
    }
}

pub fn calibrate_targets(settling: f64) -> CalibrationTargets {
    CalibrationTargets {
        settling_s: settling,
        ..CalibrationTargets::default()
    }
}

pub fn calibrate(common: &CommonArgs, settling: f64) -> Result<(), CliError> {
    if !(settling > 0.0) {
        return Err(CliError::Config(format!(
            "settling goal must be positive, got {settling}"
        )));
    }
    let out = ensure_out(common)?;
    let cal = ofo::plant::calibrate(&calibrate_targets(settling))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let params_path = out.join("params.toml");
    config::save_params(&cal.params, &params_path)?;
    let report_path = out.join("calibration_report.txt");
    write_deterministic(&report_path, format!("{}\n", cal.report).as_bytes())?;
    println!("wrote {}", params_path.display());
    println!("wrote {}", report_path.display());
    Ok(())
}

fn sim_spec(
    params: &CompressorParams,
    cal: Option<&Calibration>,
    t_final: f64,
    from_validation_state: bool,
) -> Result<SimSpec, CliError> {
    let mut spec = if from_validation_state {
        SimSpec::at_validation_state(params)
    } else {
        match cal {
            Some(c) => SimSpec::new(c.steady_state, c.steady_torque),
            None => {
                // custom parameter file: start from its own steady state at
                // the default reference torque
                let tau = params.delta * 647.2 * 60.45;
                let eq = ofo::plant::equilibrium(tau, params)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                SimSpec::new(eq, tau)
            }
        }
    };
    if !(t_final > 0.0) {
        return Err(CliError::Config(format!(
            "t_final must be positive, got {t_final}"
        )));
    }
    spec.t_final = t_final;
    Ok(spec)
}

pub fn simulate(
    common: &CommonArgs,
    nu: Option<f64>,
    dt: Option<f64>,
    setpoint: &str,
    t_final: f64,
    from_validation_state: bool,
) -> Result<(), CliError> {
    let (params, cal) = load_plant(common)?;
    let cfg = load_controller(common, nu, dt)?;
    let setpoint = parse_setpoint(setpoint)?;
    let spec = sim_spec(&params, cal, t_final, from_validation_state)?;
    let out = ensure_out(common)?;

    let trace = run_closed_loop(&spec, &cfg, &setpoint, &params).map_err(sim_error)?;
    let metric = MetricConfig {
        t_final,
        ..MetricConfig::default()
    };
    let report = MetricsReport {
        epsilon: ise(&trace, &metric),
        oscillations: oscillations(&trace, &metric),
        beta1_baseline: beta1_baseline(trace.ps[0], &setpoint, &metric),
    };
    let trace_path = out.join("trace.csv");
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    write_deterministic(&trace_path, &buf)?;
    let metrics_path = out.join("metrics.json");
    let json = serde_json::to_string_pretty(&report).expect("metrics serialize");
    write_deterministic(&metrics_path, format!("{json}\n").as_bytes())?;
    println!("wrote {}", trace_path.display());
    println!("wrote {}", metrics_path.display());
    println!(
        "epsilon = {:.4}, oscillations = {}, beta1 baseline = {:.4}",
        report.epsilon, report.oscillations, report.beta1_baseline
    );
    Ok(())
}

fn parse_values(list: &str, what: &str) -> Result<Vec<f64>, CliError> {
    let values: Result<Vec<f64>, _> = list
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect();
    let values = values.map_err(|_| CliError::Config(format!("bad {what} list '{list}'")))?;
    if values.is_empty() {
        return Err(CliError::Config(format!("empty {what} list")));
    }
    Ok(values)
}

pub fn sweep(
    common: &CommonArgs,
    nu_values: &str,
    dt_values: &str,
    setpoint: &str,
    t_final: f64,
) -> Result<(), CliError> {
    let (params, cal) = load_plant(common)?;
    let setpoint = parse_setpoint(setpoint)?;
    let nus = parse_values(nu_values, "nu")?;
    let dts = parse_values(dt_values, "dt")?;
    let bounds = TuneSpec::new(f64::INFINITY, u64::MAX);
    for &nu in &nus {
        if !(bounds.nu_bounds.0..=bounds.nu_bounds.1).contains(&nu) {
            return Err(CliError::Config(format!(
                "nu = {nu} outside the bounds [{}, {}]",
                bounds.nu_bounds.0, bounds.nu_bounds.1
            )));
        }
    }
    for &dt in &dts {
        if !(bounds.dt_bounds.0..=bounds.dt_bounds.1).contains(&dt) {
            return Err(CliError::Config(format!(
                "dt = {dt} outside the bounds [{}, {}]",
                bounds.dt_bounds.0, bounds.dt_bounds.1
            )));
        }
    }
    let spec = sim_spec(&params, cal, t_final, false)?;
    let mut problem = PlantTuneProblem::new(&params, spec, setpoint);
    problem.controller = load_controller(common, None, None)?;
    let grid = tuner::sweep(&nus, &dts, &problem);
    let out = ensure_out(common)?;
    let path = out.join("sweep.csv");
    let mut buf = Vec::new();
    tuner::write_sweep_csv(&grid, &mut buf)?;
    write_deterministic(&path, &buf)?;
    println!("wrote {} ({} cells)", path.display(), grid.len());
    Ok(())
}

fn parse_beta(text: &str) -> Result<(f64, u64), CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(CliError::Config(format!(
            "threshold pair must be 'beta1,beta2', got '{text}'"
        )));
    }
    let beta1: f64 = parts[0]
        .parse()
        .map_err(|_| CliError::Config(format!("bad beta1 '{}'", parts[0])))?;
    let beta2: u64 = parts[1]
        .parse()
        .map_err(|_| CliError::Config(format!("bad beta2 '{}'", parts[1])))?;
    if !(beta1 > 0.0) {
        return Err(CliError::Config(format!("beta1 must be positive, got {beta1}")));
    }
    Ok((beta1, beta2))
}

pub fn tune(
    common: &CommonArgs,
    betas: &[String],
    setpoint: &str,
    budget: usize,
    t_final: f64,
) -> Result<(), CliError> {
    if betas.is_empty() {
        return Err(CliError::Config("at least one --beta pair is required".into()));
    }
    let schedule: Result<Vec<(f64, u64)>, CliError> = betas.iter().map(|b| parse_beta(b)).collect();
    let schedule = schedule?;
    let (params, cal) = load_plant(common)?;
    let setpoint = parse_setpoint(setpoint)?;
    let spec = sim_spec(&params, cal, t_final, false)?;
    let out = ensure_out(common)?;

    let mut problem = PlantTuneProblem::new(&params, spec, setpoint);
    problem.controller = load_controller(common, None, None)?;

    let mut results: Vec<((f64, u64), TuneResult)> = Vec::new();
    for (idx, &(b1, b2)) in schedule.iter().enumerate() {
        let mut tune_spec = TuneSpec::new(b1, b2);
        tune_spec.budget = budget;
        tune_spec.dt_bounds = (5.0e-3, t_final / 2.0);
        tune_spec.initial.1 = tune_spec
            .initial
            .1
            .clamp(tune_spec.dt_bounds.0, tune_spec.dt_bounds.1);
        tune_spec.validate().map_err(CliError::Config)?;
        let result = tuner::tune(&tune_spec, &problem);
        let path = out.join(format!("tune_{:02}_beta_{b1}_{b2}.json", idx + 1));
        let json = serde_json::to_string_pretty(&result).expect("result serializes");
        write_deterministic(&path, format!("{json}\n").as_bytes())?;
        println!("wrote {}", path.display());
        results.push(((b1, b2), result));
    }

    // summary, both machine- and eyeball-friendly
    let mut csv = String::from("beta1,beta2,nu,dt,epsilon,oscillations,feasible\n");
    let mut txt = String::from(
        "  beta1    beta2         nu         dt    epsilon   |F|  feasible\n",
    );
    for ((b1, b2), r) in &results {
        let eps = r
            .epsilon_star
            .map(|e| format!("{e:.6}"))
            .unwrap_or_default();
        let osc = r
            .oscillations_star
            .map(|o| o.to_string())
            .unwrap_or_default();
        csv.push_str(&format!(
            "{b1},{b2},{},{},{eps},{osc},{}\n",
            r.nu_star, r.dt_star, r.feasible
        ));
        txt.push_str(&format!(
            "{b1:>7} {b2:>8} {:>10.3} {:>10.3} {:>10} {:>5}  {}\n",
            r.nu_star,
            r.dt_star,
            if eps.is_empty() { "-".into() } else { format!("{:.3}", r.epsilon_star.unwrap()) },
            if osc.is_empty() { "-" } else { &osc },
            r.feasible
        ));
    }
    let csv_path = out.join("tune_summary.csv");
    write_deterministic(&csv_path, csv.as_bytes())?;
    let txt_path = out.join("tune_summary.txt");
    write_deterministic(&txt_path, txt.as_bytes())?;
    println!("wrote {}", csv_path.display());
    println!("wrote {}", txt_path.display());
    print!("{txt}");
    Ok(())
}

pub fn validate(
    common: &CommonArgs,
    sets: &[String],
    trajectories: &str,
    t_final: f64,
) -> Result<(), CliError> {
    let mut parsed: Vec<(String, f64, f64)> = Vec::new();
    for set in sets {
        let (name, rest) = set.split_once('=').ok_or_else(|| {
            CliError::Config(format!("gain set must be 'NAME=nu,dt', got '{set}'"))
        })?;
        let (nu_s, dt_s) = rest.split_once(',').ok_or_else(|| {
            CliError::Config(format!("gain set must be 'NAME=nu,dt', got '{set}'"))
        })?;
        let nu: f64 = nu_s
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("bad nu in '{set}'")))?;
        let dt: f64 = dt_s
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("bad dt in '{set}'")))?;
        if parsed.iter().any(|(n, _, _)| n == name) {
            return Err(CliError::Config(format!("duplicate set name '{name}'")));
        }
        parsed.push((name.to_string(), nu, dt));
    }
    if parsed.is_empty() {
        return Err(CliError::Config("at least one --set is required".into()));
    }
    let mut trajs: Vec<(String, Setpoint)> = Vec::new();
    for name in trajectories.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match name {
            "step" => trajs.push(("step".into(), Setpoint::Step)),
            "sine" => trajs.push(("sine".into(), Setpoint::Sine)),
            other => {
                return Err(CliError::Config(format!(
                    "unknown validation trajectory '{other}' (expected step or sine)"
                )))
            }
        }
    }
    if trajs.is_empty() {
        return Err(CliError::Config(
            "at least one validation trajectory is required".into(),
        ));
    }

    let (params, _) = load_plant(common)?;
    let spec = {
        let mut s = SimSpec::at_validation_state(&params);
        if !(t_final > 0.0) {
            return Err(CliError::Config(format!(
                "t_final must be positive, got {t_final}"
            )));
        }
        s.t_final = t_final;
        s
    };
    let base_cfg = load_controller(common, None, None)?;
    let metric = MetricConfig {
        t_final,
        ..MetricConfig::default()
    };

    // error matrix: one row per gain set, one column per trajectory
    use rayon::prelude::*;
    let jobs: Vec<(usize, usize)> = (0..parsed.len())
        .flat_map(|i| (0..trajs.len()).map(move |j| (i, j)))
        .collect();
    let errors: Vec<Result<f64, SimError>> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let (_, nu, dt) = &parsed[i];
            let mut cfg = base_cfg.clone();
            cfg.nu = *nu;
            cfg.dt = *dt;
            cfg.validate().map_err(SimError::BadSpec)?;
            run_closed_loop(&spec, &cfg, &trajs[j].1, &params).map(|tr| ise(&tr, &metric))
        })
        .collect();

    let out = ensure_out(common)?;
    let mut csv = String::from("set,nu,dt");
    for (name, _) in &trajs {
        csv.push_str(&format!(",epsilon_{name}"));
    }
    csv.push('\n');
    let mut txt = format!("{:<10} {:>9} {:>9}", "set", "nu", "dt");
    for (name, _) in &trajs {
        txt.push_str(&format!(" {:>12}", name));
    }
    txt.push('\n');
    for (i, (name, nu, dt)) in parsed.iter().enumerate() {
        csv.push_str(&format!("{name},{nu},{dt}"));
        txt.push_str(&format!("{name:<10} {nu:>9.3} {dt:>9.3}"));
        for j in 0..trajs.len() {
            match &errors[i * trajs.len() + j] {
                Ok(eps) => {
                    csv.push_str(&format!(",{eps:.6}"));
                    txt.push_str(&format!(" {eps:>12.4}"));
                }
                Err(e) => {
                    return Err(sim_error(e.clone()));
                }
            }
        }
        csv.push('\n');
        txt.push('\n');
    }
    let csv_path = out.join("validation.csv");
    write_deterministic(&csv_path, csv.as_bytes())?;
    let txt_path = out.join("validation.txt");
    write_deterministic(&txt_path, txt.as_bytes())?;
    println!("wrote {}", csv_path.display());
    println!("wrote {}", txt_path.display());
    print!("{txt}");
    Ok(())
}
