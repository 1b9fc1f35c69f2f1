//! Subcommand implementations. Each command validates its configuration
//! eagerly, runs the corresponding library operations, writes CSV/JSON
//! artifacts atomically, and reports an optional statistical verdict
//! (exit code 2 when a verdict is negative).

use std::fmt::Write as _;
use std::path::Path;

use shelab_core::error::{Error, Result};
use shelab_core::exponents::{
    default_eps_grid, estimate_gamma, thresholds, GammaCurve, GammaSample, MomentSample,
    ThresholdReport,
};
use shelab_core::harness::{
    limit_diagnostics, run_ensemble, DiagnosticKind, DiagnosticParams, EnsembleConfig,
    EnsembleResult, VarianceSource,
};
use shelab_core::localization::{coupling_error, localize, LocalizationSpec};
use shelab_core::solver::{
    generate_noise, replica_seed, solve_fd_record, solve_mild, GridSpec, ModelSpec, RecordSpec,
};
use shelab_core::stats;
use shelab_core::windows::{build_partition, refine_partition_margin, window_length};

use crate::config::Config;
use crate::manifest::RunWriter;

pub struct CommandOutcome {
    pub verdict: Option<bool>,
}

fn parse_model(cfg: &mut Config) -> Result<ModelSpec> {
    let raw = cfg.get_string("model", "pam");
    if raw == "pam" {
        return Ok(ModelSpec::pam());
    }
    if raw == "zero" {
        // deterministic sigma = 0 preset, for smoke tests
        return Ok(shelab_core::solver::zero_model());
    }
    if let Some(kappa) = raw.strip_prefix("scaled-pam:") {
        let kappa: f64 = kappa
            .parse()
            .map_err(|_| Error::Config(format!("bad scaled-pam coefficient in {raw:?}")))?;
        return ModelSpec::scaled_pam(kappa);
    }
    if let Some(level) = raw.strip_prefix("constant:") {
        let level: f64 = level
            .parse()
            .map_err(|_| Error::Config(format!("bad constant level in {raw:?}")))?;
        return Ok(ModelSpec::constant(level));
    }
    Err(Error::Config(format!(
        "unknown model {raw:?} (expected pam, zero, scaled-pam:<kappa> or constant:<level>)"
    )))
}

fn curve_for(cfg: &mut Config, default: &str) -> Result<(GammaCurve, f64)> {
    let raw = cfg.get_string("curve", default);
    let lip = cfg.get_f64("lip", 1.0)?;
    let curve = match raw.as_str() {
        "pam" => GammaCurve::pam(),
        "zero" => {
            let table: Vec<GammaSample> = [1.0, 2.0, 3.0, 4.0, 5.0]
                .iter()
                .map(|&p| GammaSample::exact(p, 0.0))
                .collect();
            GammaCurve::tabulated(table.clone(), table, "constant-sigma")?
        }
        "scaled-pam" => {
            // gamma(p) = lip^4 p (p^2 - 1) / 24 on a fine grid
            let lip4 = lip.powi(4);
            let table: Vec<GammaSample> = (0..=400)
                .map(|i| {
                    let p = 1.0 + i as f64 * 0.01;
                    GammaSample::exact(p, lip4 * p * (p * p - 1.0) / 24.0)
                })
                .collect();
            GammaCurve::tabulated(table.clone(), table, "scaled-pam")?
        }
        other => {
            return Err(Error::Config(format!(
                "unknown curve {other:?} (expected pam, zero or scaled-pam)"
            )))
        }
    };
    Ok((curve, lip))
}

/// Rounds M up so that 2M/dx is an integer (M must be a multiple of dx/2).
fn round_half_domain(m: f64, dx: f64) -> f64 {
    let unit = dx / 2.0;
    (m / unit).ceil() * unit
}

/// One ensemble per schedule time, each on a grid sized to its own window
/// (L(t) + pad) unless a fixed half-domain is forced, so early times do not
/// pay for the final-time domain.
#[allow(clippy::too_many_arguments)]
fn per_time_ensembles(
    lambda: f64,
    schedule: &[f64],
    dx: f64,
    dt: f64,
    half_domain: Option<f64>,
    replicas: usize,
    base_seed: u64,
    model: ModelSpec,
    variance_source: VarianceSource,
) -> Result<Vec<EnsembleResult>> {
    let mut results = Vec::with_capacity(schedule.len());
    for &t in schedule {
        let l = window_length(lambda, t);
        let pad = 6.0 * t.sqrt();
        let m = half_domain.unwrap_or_else(|| round_half_domain(l + pad + 1.0, dx));
        let grid = GridSpec::new(dx, dt, m, t)?;
        let config = EnsembleConfig {
            grid,
            model,
            lambda: Some(lambda),
            schedule: vec![t],
            extra_windows: vec![],
            probes: vec![],
            replicas,
            base_seed,
            variance_source,
        };
        results.push(run_ensemble(&config)?);
    }
    Ok(results)
}

fn diagnostic_csv(results: &[&EnsembleResult], kind: DiagnosticKind) -> String {
    let mut csv = String::new();
    match kind {
        DiagnosticKind::Slln => {
            csv.push_str("path,t,L,average,abs_dev\n");
            let r = results[0];
            for ti in 0..r.times.len() {
                let avgs = r.window_averages(ti, 0);
                for (path, a) in avgs.iter().enumerate() {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{}",
                        path,
                        r.times[ti],
                        r.windows[ti][0],
                        a,
                        (a - 1.0).abs()
                    );
                }
            }
        }
        _ => {
            csv.push_str("t,L,replicas,average_mean,average_se\n");
            for r in results {
                for ti in 0..r.times.len() {
                    let avgs = r.window_averages(ti, 0);
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{}",
                        r.times[ti],
                        r.windows[ti][0],
                        avgs.len(),
                        stats::mean(&avgs),
                        stats::se_of_mean(&avgs)
                    );
                }
            }
        }
    }
    csv
}

fn report_csv(report: &shelab_core::harness::TestReport) -> String {
    let mut csv = String::from("t,window,metric");
    let mut keys: Vec<String> = Vec::new();
    if let Some(first) = report.rows.first() {
        keys = first.aux.keys().cloned().collect();
        for k in &keys {
            let _ = write!(csv, ",{k}");
        }
    }
    csv.push('\n');
    for row in &report.rows {
        let _ = write!(csv, "{},{},{}", row.t, row.window, row.metric);
        for k in &keys {
            let _ = write!(csv, ",{}", row.aux.get(k).copied().unwrap_or(f64::NAN));
        }
        csv.push('\n');
    }
    csv
}

#[allow(clippy::too_many_arguments)]
fn run_trend_command(
    cfg: &mut Config,
    out_dir: &Path,
    name: &str,
    kind: DiagnosticKind,
    default_lambda: f64,
    default_schedule: &[f64],
    default_dx: f64,
    default_dt: f64,
    default_replicas: usize,
) -> Result<CommandOutcome> {
    let lambda = cfg.get_f64("lambda", default_lambda)?;
    let schedule = cfg.get_f64_list("schedule", default_schedule)?;
    let dx = cfg.get_f64("dx", default_dx)?;
    let dt = cfg.get_f64("dt", default_dt)?;
    let replicas = cfg.get_usize("replicas", default_replicas)?;
    let seed = cfg.get_u64("seed", 0)?;
    let model = parse_model(cfg)?;
    let variance_source = match cfg.get_string("variance_source", "exact-oracle").as_str() {
        "exact-oracle" => VarianceSource::ExactOracle,
        "mc" | "mc-cross-replica" => VarianceSource::McCrossReplica,
        other => {
            return Err(Error::Config(format!(
                "unknown variance_source {other:?}"
            )))
        }
    };
    let params = DiagnosticParams {
        wlln_epsilon: cfg.get_f64("epsilon", 0.1)?,
        wlln_final: cfg.get_f64("wlln_final", 0.05)?,
        ks_final: cfg.get_f64("ks_final", 0.1)?,
        slln_tail_start: cfg.get_f64("tail_start", 6.0)?,
        slln_sup_threshold: cfg.get_f64("sup_threshold", 0.1)?,
        slln_min_fraction: cfg.get_f64("min_fraction", 0.95)?,
        variance_band: cfg.get_f64("variance_band", 0.1)?,
        ..DiagnosticParams::default()
    };
    let default_curve = cfg_curve_for_model(&model);
    let (curve, lip) = curve_for(cfg, &default_curve)?;
    let thresholds_report = thresholds(&curve, lip, &default_eps_grid())?;
    cfg.reject_unknown()?;

    let results: Vec<EnsembleResult> = if kind == DiagnosticKind::Slln {
        // one ensemble spanning the schedule: the running sup is pathwise
        let t_max = *schedule.last().ok_or_else(|| {
            Error::Config("schedule must be non-empty".into())
        })?;
        let l = window_length(lambda, t_max);
        let m = round_half_domain(l + 6.0 * t_max.sqrt() + 1.0, dx);
        let grid = GridSpec::new(dx, dt, m, t_max)?;
        let config = EnsembleConfig {
            grid,
            model,
            lambda: Some(lambda),
            schedule: schedule.clone(),
            extra_windows: vec![],
            probes: vec![],
            replicas,
            base_seed: seed,
            variance_source,
        };
        vec![run_ensemble(&config)?]
    } else {
        per_time_ensembles(lambda, &schedule, dx, dt, replicas, seed, model, variance_source)?
    };
    let refs: Vec<&EnsembleResult> = results.iter().collect();
    let report = limit_diagnostics(&refs, kind, &thresholds_report, &params)?;

    let mut writer = RunWriter::create(out_dir, name)?;
    writer.write_artifact(&format!("{name}.csv"), report_csv(&report).as_bytes())?;
    writer.write_artifact(
        "averages.csv",
        diagnostic_csv(&refs, kind).as_bytes(),
    )?;
    writer.write_json("report.json", &report)?;
    let verdict = report.pass;
    writer.finish(cfg.echo(), seed, &workers_echo(), Some(verdict))?;
    Ok(CommandOutcome {
        verdict: Some(verdict),
    })
}

fn cfg_curve_for_model(model: &ModelSpec) -> String {
    let desc = model.to_string();
    if desc.starts_with("constant") {
        "zero".to_string()
    } else if desc.starts_with("scaled-pam") {
        "scaled-pam".to_string()
    } else {
        "pam".to_string()
    }
}

fn workers_echo() -> String {
    format!("{}", rayon::current_num_threads())
}

pub fn wlln(cfg: &mut Config, out_dir: &Path) -> Result<CommandOutcome> {
    run_trend_command(
        cfg,
        out_dir,
        "wlln",
        DiagnosticKind::Wlln,
        1.0,
        &[2.0, 4.0, 6.0, 8.0],
        0.25,
        0.03125,
        600,
    )
}

pub fn slln(cfg: &mut Config, out_dir: &Path) -> Result<CommandOutcome> {
    run_trend_command(
        cfg,
        out_dir,
        "slln",
        DiagnosticKind::Slln,
        2.5,
        &[5.0, 5.5, 6.0, 6.25, 6.5, 6.75],
        1.0,
        0.25,
        20,
    )
}

pub fn clt(cfg: &mut Config, out_dir: &Path) -> Result<CommandOutcome> {
    run_trend_command(
        cfg,
        out_dir,
        "clt",
        DiagnosticKind::Clt,
        1.5,
        &[4.0, 6.0, 8.0],
        0.8,
        0.1,
        2000,
    )
}

pub fn clt_fail(cfg: &mut Config, out_dir: &Path) -> Result<CommandOutcome> {
    run_trend_command(
        cfg,
        out_dir,
        "clt-fail",
        DiagnosticKind::CltFail,
        0.2,
        &[4.0, 6.0, 8.0],
        0.1,
        0.005,
        1000,
    )
}

pub fn variance_check(cfg: &mut Config, out_dir: &Path) -> Result<CommandOutcome> {
    let t = cfg.get_f64("t", 1.0)?;
    let windows = cfg.get_f64_list("windows", &[5.0, 20.0, 50.0])?;
    let dx = cfg.get_f64("dx", 0.03)?;
    let dt = cfg.get_f64("dt", 0.0004)?;
    let replicas = cfg.get_usize("replicas", 2000)?;
    let seed = cfg.get_u64("seed", 0)?;
    let band = cfg.get_f64("variance_band", 0.1)?;
    let model = parse_model(cfg)?;
    cfg.reject_unknown()?;

    let max_l = windows.iter().cloned().fold(0.0, f64::max);
    let m = round_half_domain(max_l + 6.0 * t.sqrt() + 1.0, dx);
    let grid = GridSpec::new(dx, dt, m, t)?;
    let config = EnsembleConfig {
        grid,
        model,
        lambda: None,
        schedule: vec![t],
        extra_windows: windows,
        probes: vec![],
        replicas,
        base_seed: seed,
        variance_source: VarianceSource::ExactOracle,
    };
    let result = run_ensemble(&config)?;
    let curve = GammaCurve::pam();
    let thresholds_report = thresholds(&curve, model.lip(), &default_eps_grid())?;
    let params = DiagnosticParams {
        variance_band: band,
        ..DiagnosticParams::default()
    };
    let report = limit_diagnostics(
        &[&result],
        DiagnosticKind::VarianceRatio,
        &thresholds_report,
        &params,
    )?;

    let mut writer = RunWriter::create(out_dir, "variance-check")?;
    writer.write_artifact("variance_check.csv", report_csv(&report).as_bytes())?;
    writer.write_json("report.json", &report)?;
    let verdict = report.pass;
    writer.finish(cfg.echo(), seed, &workers_echo(), Some(verdict))?;
    Ok(CommandOutcome {
        verdict: Some(verdict),
    })
}

pub fn lyapunov(cfg: &mut Config, out_dir: &Path) -> Result<CommandOutcome> {
    let schedule = cfg.get_f64_list(
        "schedule",
        &[0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
    )?;
    let p = cfg.get_f64("p", 2.0)?;
    let fit = cfg.get_f64_list("fit_window", &[0.5, 1.0])?;
    let dx = cfg.get_f64("dx", 0.05)?;
    let dt = cfg.get_f64("dt", 0.00125)?;
    let half_domain = cfg.get_f64("half_domain", 8.0)?;
    let replicas = cfg.get_usize("replicas", 2000)?;
    let seed = cfg.get_u64("seed", 0)?;
    let model = parse_model(cfg)?;
    cfg.reject_unknown()?;
    if fit.len() != 2 {
        return Err(Error::Config("fit_window must be `t0,t1`".into()));
    }

    let horizon = *schedule.last().unwrap();
    let grid = GridSpec::new(dx, dt, half_domain, horizon)?;
    let config = EnsembleConfig {
        grid,
        model,
        lambda: None,
        schedule: schedule.clone(),
        extra_windows: vec![],
        probes: vec![0.0],
        replicas,
        base_seed: seed,
        variance_source: VarianceSource::ExactOracle,
    };
    let result = run_ensemble(&config)?;
    let series: Vec<MomentSample> = (0..schedule.len())
        .map(|ti| {
            let values: Vec<f64> = result.probe_values[ti][0]
                .iter()
                .map(|v| v.abs().powf(p))
                .collect();
            MomentSample {
                t: schedule[ti],
                moment: stats::mean(&values),
                se: stats::se_of_mean(&values),
            }
        })
        .collect();
    let estimate = estimate_gamma(&series, p, (fit[0], fit[1]))?;

    let mut csv = String::from("t,moment,se\n");
    for s in &series {
        let _ = writeln!(csv, "{},{},{}", s.t, s.moment, s.se);
    }
    let mut writer = RunWriter::create(out_dir, "lyapunov")?;
    writer.write_artifact("lyapunov.csv", csv.as_bytes())?;
    writer.write_json("report.json", &estimate)?;
    writer.finish(cfg.echo(), seed, &workers_echo(), None)?;
    Ok(CommandOutcome {
        verdict: None,
    })
}

pub fn simulate(cfg: &mut Config, out_dir: &Path) -> Result<CommandOutcome> {
    let dx = cfg.get_f64("dx", 0.1)?;
    let dt = cfg.get_f64("dt", dx * dx / 2.0)?;
    let half_domain = cfg.get_f64("half_domain", 4.0)?;
    let horizon = cfg.get_f64("horizon", 0.5)?;
    let seed = cfg.get_u64("seed", 0)?;
    let format = cfg.get_string("format", "csv");
    let snapshots = cfg.get_f64_list("snapshots", &[horizon])?;
    let model = parse_model(cfg)?;
    cfg.reject_unknown()?;

    let grid = GridSpec::new(dx, dt, half_domain, horizon)?;
    let steps: Vec<usize> = snapshots
        .iter()
        .map(|&t| grid.step_of(t))
        .collect::<Result<_>>()?;
    let mut steps = steps;
    steps.sort_unstable();
    steps.dedup();
    let noise = generate_noise(&grid, seed);
    let record = RecordSpec {
        snapshot_steps: steps,
        probe_cells: vec![],
    };
    let run = solve_fd_record(&grid, &model, &noise, &record)?;

    let mut writer = RunWriter::create(out_dir, "simulate")?;
    match format.as_str() {
        "csv" | "bin" | "both" => {}
        other => return Err(Error::Config(format!("unknown format {other:?}"))),
    }
    if format == "csv" || format == "both" {
        let mut buf = Vec::new();
        run.field
            .write_csv(&mut buf)
            .map_err(|e| Error::Config(format!("csv write failed: {e}")))?;
        writer.write_artifact("field.csv", &buf)?;
    }
    if format == "bin" || format == "both" {
        let mut buf = Vec::new();
        run.field
            .write_binary(&mut buf)
            .map_err(|e| Error::Config(format!("binary write failed: {e}")))?;
        writer.write_artifact("field.bin", &buf)?;
    }
    writer.finish(cfg.echo(), seed, &workers_echo(), None)?;
    Ok(CommandOutcome {
        verdict: None,
    })
}

pub fn localize_cmd(cfg: &mut Config, out_dir: &Path) -> Result<CommandOutcome> {
    let c_grid = cfg.get_f64_list("c_grid", &[0.5, 1.0, 2.0, 4.0])?;
    let depth = cfg.get_usize("depth", 5)?;
    let p = cfg.get_f64("p", 2.0)?;
    let dx = cfg.get_f64("dx", 0.2)?;
    let dt = cfg.get_f64("dt", 0.02)?;
    let half_domain = cfg.get_f64("half_domain", 8.0)?;
    let horizon = cfg.get_f64("horizon", 0.5)?;
    let replicas = cfg.get_usize("replicas", 120)?;
    let probes = cfg.get_f64_list("probes", &[-1.0, 0.0, 1.4])?;
    let seed = cfg.get_u64("seed", 0)?;
    let model = parse_model(cfg)?;
    cfg.reject_unknown()?;

    let grid = GridSpec::new(dx, dt, half_domain, horizon)?;
    let full: Vec<_> = (0..replicas)
        .map(|r| {
            let noise = generate_noise(&grid, replica_seed(seed, r as u64));
            solve_mild(&grid, &model, &noise, None, depth)
        })
        .collect::<Result<_>>()?;

    let mut csv = String::from("c,depth,t,p,error,ci_lo,ci_hi\n");
    let mut errors = Vec::new();
    for &c in &c_grid {
        let spec = LocalizationSpec::new(c, depth)?;
        let local: Vec<_> = (0..replicas)
            .map(|r| {
                let noise = generate_noise(&grid, replica_seed(seed, r as u64));
                localize(&noise, &model, &grid, &spec)
            })
            .collect::<Result<_>>()?;
        let err = coupling_error(&full, &local, p, &probes)?;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            c, depth, horizon, p, err.error, err.ci.0, err.ci.1
        );
        errors.push((c, err));
    }
    // trend: error nonincreasing in c within the bootstrap interval
    let trend_ok = errors
        .windows(2)
        .all(|w| w[1].1.error <= w[0].1.ci.1 + 1e-12);

    #[derive(serde::Serialize)]
    struct LocalizeReport {
        depth: usize,
        p: f64,
        horizon: f64,
        probes: Vec<f64>,
        replicas: usize,
        rows: Vec<(f64, shelab_core::localization::CouplingError)>,
        trend_ok: bool,
    }
    let report = LocalizeReport {
        depth,
        p,
        horizon,
        probes,
        replicas,
        rows: errors,
        trend_ok,
    };

    let mut writer = RunWriter::create(out_dir, "localize")?;
    writer.write_artifact("localize.csv", csv.as_bytes())?;
    writer.write_json("report.json", &report)?;
    writer.finish(cfg.echo(), seed, &workers_echo(), Some(trend_ok))?;
    Ok(CommandOutcome {
        verdict: Some(trend_ok),
    })
}

pub fn partition(cfg: &mut Config, out_dir: &Path) -> Result<CommandOutcome> {
    let l = cfg.get_f64("l", 10.0)?;
    let l_prime = cfg.get_f64("l_prime", 3.0)?;
    let margin = cfg.get_opt_f64("margin")?;
    let t = cfg.get_opt_f64("t")?;
    let k = cfg.get_opt_f64("k")?;
    let c0 = cfg.get_opt_f64("c0")?;
    let seed = cfg.get_u64("seed", 0)?;
    cfg.reject_unknown()?;

    let mut layout = build_partition(l, l_prime)?;
    let effective_margin = match (margin, t, k, c0) {
        (Some(m), _, _, _) => Some(m),
        (None, Some(t), Some(k), Some(c0)) => Some((c0 * t * t * k.powi(3)).ceil()),
        (None, None, None, None) => None,
        _ => {
            return Err(Error::Config(
                "refinement needs either margin or all of t, k, c0".into(),
            ))
        }
    };
    if let Some(m) = effective_margin {
        layout = refine_partition_margin(&layout, m)?;
    }

    let mut writer = RunWriter::create(out_dir, "partition")?;
    writer.write_json("partition.json", &layout)?;
    writer.finish(cfg.echo(), seed, &workers_echo(), None)?;
    Ok(CommandOutcome {
        verdict: None,
    })
}

pub fn thresholds_cmd(cfg: &mut Config, out_dir: &Path) -> Result<CommandOutcome> {
    let (curve, lip) = curve_for(cfg, "pam")?;
    let eps_min = cfg.get_f64("eps_min", 1e-6)?;
    let seed = cfg.get_u64("seed", 0)?;
    cfg.reject_unknown()?;
    let mut grid = default_eps_grid();
    grid.retain(|&e| e >= eps_min);
    if grid.is_empty() {
        return Err(Error::Config("empty epsilon grid".into()));
    }
    let report: ThresholdReport = thresholds(&curve, lip, &grid)?;
    let mut writer = RunWriter::create(out_dir, "thresholds")?;
    writer.write_json("thresholds.json", &report)?;
    writer.finish(cfg.echo(), seed, &workers_echo(), None)?;
    Ok(CommandOutcome {
        verdict: None,
    })
}
