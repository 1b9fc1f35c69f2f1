//! Monte Carlo orchestration: ensembles over time schedules, the normalised
//! window statistic, goodness-of-fit tests, and the limit-theorem
//! diagnostics with explicit pass/fail verdicts.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exponents::ThresholdReport;
use crate::kernel::{gaussian_window_variance, xi_time_integral, QuadratureSpec, XiCurve};
use crate::num::norm_cdf;
use crate::solver::{generate_noise, march_fd, replica_seed, GridSpec, ModelSpec, SigmaKind};
use crate::stats;
use crate::windows::{window_length, WindowWeights};

/// Where the CLT normalisation comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum VarianceSource {
    /// Exact quadrature of the covariance formula (no data double-use).
    ExactOracle,
    /// Cross-replica sample variance with a jackknife error bar; the report
    /// flags that the same data normalise themselves.
    McCrossReplica,
}

/// Everything one Monte Carlo run needs. Per-replica noise seeds are
/// derived injectively from `base_seed`, so the result is a pure function
/// of this struct regardless of worker count.
#[derive(Clone)]
pub struct EnsembleConfig {
    pub grid: GridSpec,
    pub model: ModelSpec,
    /// Window growth rate; at each schedule time t the window e^{lambda t}
    /// is probed. None runs without growing windows.
    pub lambda: Option<f64>,
    /// Probe times, strictly increasing, on the time lattice.
    pub schedule: Vec<f64>,
    /// Additional fixed half-widths probed at every schedule time.
    pub extra_windows: Vec<f64>,
    /// Positions whose point values are recorded per replica.
    pub probes: Vec<f64>,
    pub replicas: usize,
    pub base_seed: u64,
    pub variance_source: VarianceSource,
}

impl EnsembleConfig {
    /// Eagerly validates every precondition, naming the violated invariant.
    pub fn validate(&self) -> Result<()> {
        if self.replicas < 2 {
            return Err(Error::Config(format!(
                "replica count must be at least 2, got {}",
                self.replicas
            )));
        }
        if self.schedule.is_empty() || self.schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "schedule must be non-empty and strictly increasing".into(),
            ));
        }
        for &t in &self.schedule {
            self.grid.step_of(t)?;
            if let Some(lambda) = self.lambda {
                let l = window_length(lambda, t);
                if l > self.grid.max_window_halfwidth() {
                    return Err(Error::Config(format!(
                        "window L(t) = e^{{{lambda} * {t}}} = {l:.3e} overflows the padded \
                         domain (max half-width {:.3e}) at time {t}",
                        self.grid.max_window_halfwidth()
                    )));
                }
            }
        }
        for &l in &self.extra_windows {
            if l > self.grid.max_window_halfwidth() {
                return Err(Error::Config(format!(
                    "fixed window half-width {l} overflows the padded domain (max {})",
                    self.grid.max_window_halfwidth()
                )));
            }
        }
        for &x in &self.probes {
            self.grid.cell_of(x)?;
        }
        Ok(())
    }

    fn windows_at(&self, t: f64) -> Vec<f64> {
        let mut w = Vec::new();
        if let Some(lambda) = self.lambda {
            w.push(window_length(lambda, t));
        }
        w.extend_from_slice(&self.extra_windows);
        w
    }
}

/// Raw per-replica statistics of one ensemble run.
#[derive(Clone, Debug, Serialize)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    /// Half-widths probed at each time (lambda window first, then fixed).
    pub windows: Vec<Vec<f64>>,
    /// Exact midpoint-rule weight sums per window (2L up to rounding);
    /// averages divide by these so a flat field averages to exactly one.
    pub weight_sums: Vec<Vec<f64>>,
    /// window_integrals[ti][wi][r] = int_{-L}^{L} u(t_i, x) dx in replica r.
    pub window_integrals: Vec<Vec<Vec<f64>>>,
    pub probes: Vec<f64>,
    /// probe_values[ti][pi][r] = u(t_i, x_p) in replica r.
    pub probe_values: Vec<Vec<Vec<f64>>>,
    pub replicas: usize,
    pub base_seed: u64,
    pub lambda: Option<f64>,
    pub model: String,
    pub variance_source: VarianceSource,
    /// Negative lattice values encountered by the solver, summed over
    /// replicas (the discrete scheme records, never clips).
    pub negative_cells: u64,
}

impl EnsembleResult {
    /// Window averages (integral over the exact weight sum) at one
    /// (time, window) pair.
    pub fn window_averages(&self, ti: usize, wi: usize) -> Vec<f64> {
        let denom = self.weight_sums[ti][wi];
        self.window_integrals[ti][wi]
            .iter()
            .map(|s| s / denom)
            .collect()
    }
}

/// Runs the ensemble: replicas march the explicit scheme independently and
/// deterministically; scheduled rows are reduced to window integrals and
/// probe values on the fly (rows are never retained).
pub fn run_ensemble(config: &EnsembleConfig) -> Result<EnsembleResult> {
    config.validate()?;
    let grid = config.grid;
    let steps: Vec<usize> = config
        .schedule
        .iter()
        .map(|&t| grid.step_of(t))
        .collect::<Result<_>>()?;
    let windows: Vec<Vec<f64>> = config.schedule.iter().map(|&t| config.windows_at(t)).collect();
    let weights: Vec<Vec<WindowWeights>> = windows
        .iter()
        .map(|ws| ws.iter().map(|&l| WindowWeights::build(&grid, l)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let weight_sums: Vec<Vec<f64>> = weights
        .iter()
        .map(|ws| ws.iter().map(|w| w.weight_sum()).collect())
        .collect();
    let probe_cells: Vec<usize> = config
        .probes
        .iter()
        .map(|&x| grid.cell_of(x))
        .collect::<Result<_>>()?;

    struct ReplicaOut {
        integrals: Vec<Vec<f64>>, // [ti][wi]
        probes: Vec<Vec<f64>>,    // [ti][pi]
        negatives: u64,
    }

    let run_one = |r: usize| -> Result<ReplicaOut> {
        let noise = generate_noise(&grid, replica_seed(config.base_seed, r as u64));
        let mut integrals = vec![vec![0.0; windows[0].len()]; steps.len()];
        let mut probes = vec![vec![0.0; probe_cells.len()]; steps.len()];
        let stats = march_fd(&grid, &config.model, &noise, |n, row| {
            if let Some(ti) = steps.iter().position(|&s| s == n) {
                for (wi, w) in weights[ti].iter().enumerate() {
                    integrals[ti][wi] = w.apply(row);
                }
                for (pi, &cell) in probe_cells.iter().enumerate() {
                    probes[ti][pi] = row[cell];
                }
            }
        })?;
        Ok(ReplicaOut {
            integrals,
            probes,
            negatives: stats.negative_cells,
        })
    };

    // Wide rows parallelise inside the solver; otherwise parallelise over
    // replicas. Either way the output is assembled in replica order.
    let outs: Vec<ReplicaOut> = if grid.n_cells() >= (1 << 15) {
        (0..config.replicas).map(run_one).collect::<Result<_>>()?
    } else {
        (0..config.replicas)
            .into_par_iter()
            .map(run_one)
            .collect::<Result<_>>()?
    };

    let mut window_integrals =
        vec![vec![vec![0.0; config.replicas]; windows[0].len()]; steps.len()];
    let mut probe_values = vec![vec![vec![0.0; config.replicas]; probe_cells.len()]; steps.len()];
    let mut negative_cells = 0;
    for (r, out) in outs.into_iter().enumerate() {
        for ti in 0..steps.len() {
            for wi in 0..windows[ti].len() {
                window_integrals[ti][wi][r] = out.integrals[ti][wi];
            }
            for pi in 0..probe_cells.len() {
                probe_values[ti][pi][r] = out.probes[ti][pi];
            }
        }
        negative_cells += out.negatives;
    }

    Ok(EnsembleResult {
        times: config.schedule.clone(),
        windows,
        weight_sums,
        window_integrals,
        probes: config.probes.clone(),
        probe_values,
        replicas: config.replicas,
        base_seed: config.base_seed,
        lambda: config.lambda,
        model: config.model.to_string(),
        variance_source: config.variance_source,
        negative_cells,
    })
}

/// Normalises window integrals into the statistic
/// F = (S - mean * 2L) / sqrt(variance), one value per replica.
pub fn f_statistic(
    window_integrals: &[f64],
    variance: f64,
    mean_field_value: f64,
    half_width: f64,
) -> Result<Vec<f64>> {
    if !(variance > 0.0) {
        return Err(Error::Data(format!(
            "variance must be positive, got {variance}"
        )));
    }
    if window_integrals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite window integral".into()));
    }
    let center = mean_field_value * 2.0 * half_width;
    let scale = variance.sqrt();
    Ok(window_integrals.iter().map(|s| (s - center) / scale).collect())
}

/// Survival function of the Kolmogorov distribution, Q(lambda) =
/// P(sup |B(t)| > lambda), with the series switched near the origin for
/// accuracy.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // 1 - sqrt(2 pi)/lambda * sum exp(-(2k-1)^2 pi^2 / (8 lambda^2))
        let a = std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
        let mut sum = 0.0;
        for k in 0..10 {
            let odd = (2 * k + 1) as f64;
            sum += (-odd * odd * a).exp();
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * sum
    } else {
        let mut sum = 0.0;
        for k in 1..=100 {
            let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
            if k % 2 == 1 {
                sum += term;
            } else {
                sum -= term;
            }
            if term < 1e-16 {
                break;
            }
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// One-sample Kolmogorov-Smirnov distance to the standard normal, with the
/// asymptotic p-value.
pub fn ks_normal(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 8 {
        return Err(Error::Data(format!(
            "KS test needs at least 8 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite sample in KS input".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d = 0.0_f64;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = norm_cdf(x);
        let above = (i as f64 + 1.0) / n - cdf;
        let below = cdf - i as f64 / n;
        d = d.max(above).max(below);
    }
    let p = kolmogorov_survival(n.sqrt() * d);
    Ok((d, p))
}

/// Two-sample Kolmogorov-Smirnov distance with the asymptotic p-value
/// (effective sample size n1 n2 / (n1 + n2)).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 8 || b.len() < 8 {
        return Err(Error::Data(format!(
            "two-sample KS needs at least 8 samples per set, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite sample in KS input".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (sa.len(), sb.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0_f64;
    while i < na && j < nb {
        let x = sa[i].min(sb[j]);
        while i < na && sa[i] <= x {
            i += 1;
        }
        while j < nb && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let n_eff = (na as f64 * nb as f64) / (na + nb) as f64;
    Ok((d, kolmogorov_survival(n_eff.sqrt() * d)))
}

/// Which limit-theorem diagnostic a report carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticKind {
    Wlln,
    Slln,
    Clt,
    CltFail,
    VarianceRatio,
}

/// Tolerances and knobs of the diagnostics; every verdict echoes these.
#[derive(Clone, Debug, Serialize)]
pub struct DiagnosticParams {
    /// Exceedance level for the weak law: P(|average - 1| >= epsilon).
    pub wlln_epsilon: f64,
    /// Final-time bound on the exceedance probability.
    pub wlln_final: f64,
    /// Final-time bound on the KS distance in the CLT regime.
    pub ks_final: f64,
    /// Pathwise running sup is monitored for schedule times beyond this.
    pub slln_tail_start: f64,
    /// Running-sup threshold per path.
    pub slln_sup_threshold: f64,
    /// Fraction of paths that must stay below the threshold.
    pub slln_min_fraction: f64,
    /// Acceptance band around 1 for the variance ratio at the last probe.
    pub variance_band: f64,
    pub quad: QuadratureSpec,
}

impl Default for DiagnosticParams {
    fn default() -> Self {
        Self {
            wlln_epsilon: 0.1,
            wlln_final: 0.05,
            ks_final: 0.1,
            slln_tail_start: 6.0,
            slln_sup_threshold: 0.1,
            slln_min_fraction: 0.95,
            variance_band: 0.1,
            quad: QuadratureSpec::default(),
        }
    }
}

/// One row of a diagnostic report.
#[derive(Clone, Debug, Serialize)]
pub struct MetricRow {
    pub t: f64,
    pub window: f64,
    pub metric: f64,
    pub aux: BTreeMap<String, f64>,
}

/// A diagnostic verdict: the rows it was computed from, the trend check,
/// and the criterion echoed so the verdict is reproducible from the table
/// alone.
#[derive(Clone, Debug, Serialize)]
pub struct TestReport {
    pub kind: DiagnosticKind,
    pub rows: Vec<MetricRow>,
    pub trend_ok: bool,
    pub final_ok: Option<bool>,
    pub pass: bool,
    pub criterion: String,
    pub params: DiagnosticParams,
    pub thresholds: ThresholdReport,
    pub lambda: Option<f64>,
    /// Set when the normalisation reuses the tested data (cross-replica
    /// variance source).
    pub data_double_use: bool,
}

/// The exact xi curve of a model, when one exists.
pub fn xi_for_model(model: &ModelSpec) -> Option<XiCurve> {
    match model.kind() {
        SigmaKind::Pam => Some(XiCurve::AnalyticPam),
        SigmaKind::Constant { level } => Some(XiCurve::ConstantSigma { level }),
        _ => None,
    }
}

fn weakly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0] + 1e-12)
}

/// Runs one limit-theorem diagnostic over a schedule of ensemble results.
///
/// Each `EnsembleResult` contributes its schedule times; for the pathwise
/// strong-law check a single result spanning the whole schedule is required
/// (the running sup needs per-path trajectories). Monotone-trend verdicts
/// are stated for the growing-window statistic (`lambda` windows).
pub fn limit_diagnostics(
    results: &[&EnsembleResult],
    kind: DiagnosticKind,
    thresholds: &ThresholdReport,
    params: &DiagnosticParams,
) -> Result<TestReport> {
    if results.is_empty() {
        return Err(Error::Usage("no ensemble results supplied".into()));
    }
    let lambda = results[0].lambda;
    for r in results.iter() {
        if r.lambda != lambda {
            return Err(Error::Usage("mixed window rates across results".into()));
        }
        if kind != DiagnosticKind::VarianceRatio && lambda.is_none() {
            return Err(Error::Usage(
                "this diagnostic needs the growing-window statistic (lambda)".into(),
            ));
        }
    }

    // flatten (result, time index) pairs in time order
    let mut flat: Vec<(&EnsembleResult, usize)> = Vec::new();
    for r in results {
        for ti in 0..r.times.len() {
            flat.push((r, ti));
        }
    }
    flat.sort_by(|a, b| a.0.times[a.1].partial_cmp(&b.0.times[b.1]).unwrap());

    let mut rows: Vec<MetricRow> = Vec::new();
    let trend_ok;
    let mut final_ok = None;
    let mut data_double_use = false;
    let criterion;

    match kind {
        DiagnosticKind::Wlln => {
            for (r, ti) in &flat {
                let avgs = r.window_averages(*ti, 0);
                let exceed = avgs
                    .iter()
                    .filter(|a| (**a - 1.0).abs() >= params.wlln_epsilon)
                    .count() as f64
                    / avgs.len() as f64;
                let mut aux = BTreeMap::new();
                aux.insert("replicas".into(), avgs.len() as f64);
                aux.insert("epsilon".into(), params.wlln_epsilon);
                aux.insert(
                    "se".into(),
                    (exceed * (1.0 - exceed) / avgs.len() as f64).sqrt(),
                );
                rows.push(MetricRow {
                    t: r.times[*ti],
                    window: r.windows[*ti][0],
                    metric: exceed,
                    aux,
                });
            }
            let metrics: Vec<f64> = rows.iter().map(|r| r.metric).collect();
            trend_ok = weakly_decreasing(&metrics);
            final_ok = Some(*metrics.last().unwrap() < params.wlln_final);
            criterion = format!(
                "exceedance P(|average - 1| >= {}) weakly decreasing, < {} at final time",
                params.wlln_epsilon, params.wlln_final
            );
        }
        DiagnosticKind::Slln => {
            if results.len() != 1 {
                return Err(Error::Usage(
                    "the pathwise strong-law check needs one result spanning the schedule".into(),
                ));
            }
            let r = results[0];
            let n_paths = r.replicas;
            let mut running_sup = vec![0.0_f64; n_paths];
            let mut tail_seen = false;
            for ti in 0..r.times.len() {
                let t = r.times[ti];
                let avgs = r.window_averages(ti, 0);
                let in_tail = t > params.slln_tail_start;
                if in_tail {
                    tail_seen = true;
                    for (s, a) in running_sup.iter_mut().zip(&avgs) {
                        *s = s.max((a - 1.0).abs());
                    }
                }
                let below = running_sup
                    .iter()
                    .filter(|&&s| s < params.slln_sup_threshold)
                    .count() as f64
                    / n_paths as f64;
                let mut aux = BTreeMap::new();
                aux.insert("paths".into(), n_paths as f64);
                aux.insert(
                    "max_abs_dev".into(),
                    avgs.iter().map(|a| (a - 1.0).abs()).fold(0.0, f64::max),
                );
                aux.insert("fraction_below".into(), if in_tail { below } else { f64::NAN });
                rows.push(MetricRow {
                    t,
                    window: r.windows[ti][0],
                    metric: stats::mean(
                        &avgs.iter().map(|a| (a - 1.0).abs()).collect::<Vec<_>>(),
                    ),
                    aux,
                });
            }
            if !tail_seen {
                return Err(Error::Usage(format!(
                    "schedule has no times beyond the tail start {}",
                    params.slln_tail_start
                )));
            }
            let fraction = running_sup
                .iter()
                .filter(|&&s| s < params.slln_sup_threshold)
                .count() as f64
                / n_paths as f64;
            trend_ok = true; // the strong law has no per-time trend claim
            final_ok = Some(fraction >= params.slln_min_fraction);
            criterion = format!(
                "running sup of |average - 1| beyond t = {} below {} for a fraction >= {} of paths",
                params.slln_tail_start, params.slln_sup_threshold, params.slln_min_fraction
            );
        }
        DiagnosticKind::Clt | DiagnosticKind::CltFail => {
            for (r, ti) in &flat {
                let l = r.windows[*ti][0];
                let t = r.times[*ti];
                let integrals = &r.window_integrals[*ti][0];
                let variance = match r.variance_source {
                    VarianceSource::ExactOracle => {
                        let model = parse_model_for_xi(&r.model)?;
                        gaussian_window_variance(t, l, &model, &params.quad)?
                    }
                    VarianceSource::McCrossReplica => {
                        data_double_use = true;
                        stats::sample_variance(integrals)
                    }
                };
                let f = f_statistic(integrals, variance, 1.0, l)?;
                let mut aux = BTreeMap::new();
                aux.insert("f_sample_var".into(), stats::sample_variance(&f));
                aux.insert("replicas".into(), f.len() as f64);
                if r.variance_source == VarianceSource::McCrossReplica {
                    aux.insert(
                        "variance_jackknife_se".into(),
                        stats::jackknife_se_of_variance(integrals),
                    );
                }
                let metric = match kind {
                    DiagnosticKind::Clt => {
                        let (d, p) = ks_normal(&f)?;
                        aux.insert("ks_p".into(), p);
                        d
                    }
                    _ => {
                        let abs_f: Vec<f64> = f.iter().map(|v| v.abs()).collect();
                        stats::median(&abs_f)
                    }
                };
                rows.push(MetricRow {
                    t,
                    window: l,
                    metric,
                    aux,
                });
            }
            let metrics: Vec<f64> = rows.iter().map(|r| r.metric).collect();
            trend_ok = weakly_decreasing(&metrics);
            if kind == DiagnosticKind::Clt {
                final_ok = Some(*metrics.last().unwrap() < params.ks_final);
                criterion = format!(
                    "KS distance of F to N(0,1) weakly decreasing, < {} at final time",
                    params.ks_final
                );
            } else {
                criterion = "median |F| weakly decreasing (F -> 0 in probability)".into();
            }
        }
        DiagnosticKind::VarianceRatio => {
            let mut deviations: Vec<(f64, f64)> = Vec::new(); // (|ratio-1|, se)
            for (r, ti) in &flat {
                let t = r.times[*ti];
                let model = parse_model_for_xi(&r.model)?;
                let denom_rate = xi_time_integral(t, &model, &params.quad)?;
                for wi in 0..r.windows[*ti].len() {
                    let l = r.windows[*ti][wi];
                    let integrals = &r.window_integrals[*ti][wi];
                    let denom = 2.0 * l * denom_rate;
                    let ratio = stats::sample_variance(integrals) / denom;
                    let se = stats::se_of_variance(integrals) / denom;
                    let mut aux = BTreeMap::new();
                    aux.insert("se".into(), se);
                    aux.insert("replicas".into(), integrals.len() as f64);
                    aux.insert("l_over_sqrt_t".into(), l / t.sqrt());
                    deviations.push(((ratio - 1.0).abs(), se));
                    rows.push(MetricRow {
                        t,
                        window: l,
                        metric: ratio,
                        aux,
                    });
                }
            }
            // |ratio - 1| weakly decreasing within combined confidence slack
            trend_ok = deviations.windows(2).all(|w| {
                let slack = 1.96 * (w[0].1 + w[1].1);
                w[1].0 <= w[0].0 + slack
            });
            let last = rows.last().unwrap();
            final_ok = Some((last.metric - 1.0).abs() <= params.variance_band);
            criterion = format!(
                "Var-hat / (2L int xi) has |ratio - 1| weakly decreasing (within CI) \
                 and within {} of 1 at the last probe",
                params.variance_band
            );
        }
    }

    if rows.len() < 3 && kind != DiagnosticKind::Slln {
        return Err(Error::Usage(format!(
            "diagnostic needs at least 3 schedule points, got {}",
            rows.len()
        )));
    }

    let pass = trend_ok && final_ok.unwrap_or(true);
    Ok(TestReport {
        kind,
        rows,
        trend_ok,
        final_ok,
        pass,
        criterion,
        params: params.clone(),
        thresholds: thresholds.clone(),
        lambda,
        data_double_use,
    })
}

/// Recovers the xi curve from a model descriptor (ensemble results carry
/// the descriptor, not the model itself).
fn parse_model_for_xi(model: &str) -> Result<XiCurve> {
    if model == "pam" {
        return Ok(XiCurve::AnalyticPam);
    }
    if let Some(rest) = model.strip_prefix("constant(sigma=") {
        if let Some(level) = rest.strip_suffix(')') {
            let level: f64 = level
                .parse()
                .map_err(|_| Error::Usage(format!("bad model descriptor {model}")))?;
            return Ok(XiCurve::ConstantSigma { level });
        }
    }
    Err(Error::Usage(format!(
        "no exact variance oracle for model '{model}'; use the cross-replica variance source"
    )))
}

/// Time-regularity estimate from a single path u(t, x0) on the fine time
/// lattice: the slope of log E|u(t+h) - u(t)|^2 against log h, halved.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct HolderEstimate {
    pub exponent: f64,
    pub ci: (f64, f64),
    pub n_lags: usize,
}

pub fn holder_exponent(path: &[f64], dt: f64, lag_min: f64, lag_max: f64) -> Result<HolderEstimate> {
    if path.len() < 100 {
        return Err(Error::Data(format!(
            "need at least 100 time samples, got {}",
            path.len()
        )));
    }
    let span = (path.len() - 1) as f64 * dt;
    if lag_min < 2.0 * dt - 1e-12 || lag_max > span / 10.0 + 1e-12 || lag_min >= lag_max {
        return Err(Error::Config(format!(
            "lag range [{lag_min}, {lag_max}] outside the allowed [2 dt, span/10] = \
             [{}, {}]",
            2.0 * dt,
            span / 10.0
        )));
    }
    let first = path[0];
    if path.iter().all(|&v| v == first) {
        return Err(Error::Data("degenerate constant path".into()));
    }

    let steps_min = (lag_min / dt).round().max(2.0) as usize;
    let steps_max = (lag_max / dt).round() as usize;
    let n_lags = 10usize;
    let mut lags: Vec<usize> = (0..n_lags)
        .map(|i| {
            let f = i as f64 / (n_lags - 1) as f64;
            ((steps_min as f64) * (steps_max as f64 / steps_min as f64).powf(f)).round() as usize
        })
        .collect();
    lags.dedup();

    let mut xs = Vec::with_capacity(lags.len());
    let mut ys = Vec::with_capacity(lags.len());
    for &lag in &lags {
        let mut acc = 0.0;
        let count = path.len() - lag;
        for i in 0..count {
            let d = path[i + lag] - path[i];
            acc += d * d;
        }
        let m = acc / count as f64;
        if m <= 0.0 {
            return Err(Error::Data("degenerate increments in path".into()));
        }
        xs.push((lag as f64 * dt).ln());
        ys.push(m.ln());
    }
    let n = xs.len() as f64;
    if xs.len() < 3 {
        return Err(Error::Data("not enough distinct lags".into()));
    }
    let mx = stats::mean(&xs);
    let my = stats::mean(&ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let se = (ss_res / (n - 2.0).max(1.0) / sxx).sqrt();
    Ok(HolderEstimate {
        exponent: slope / 2.0,
        ci: ((slope - 1.96 * se) / 2.0, (slope + 1.96 * se) / 2.0),
        n_lags: xs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponents::{default_eps_grid, thresholds as compute_thresholds, GammaCurve};
    use crate::num::inv_norm_cdf;
    use crate::solver::zero_model;

    fn tiny_config() -> EnsembleConfig {
        EnsembleConfig {
            grid: GridSpec::with_default_dt(0.1, 8.0, 0.2).unwrap(),
            model: zero_model(),
            lambda: Some(1.0),
            schedule: vec![0.1, 0.2],
            extra_windows: vec![],
            probes: vec![0.0],
            replicas: 2,
            base_seed: 0,
            variance_source: VarianceSource::ExactOracle,
        }
    }

    #[test]
    fn zero_sigma_ensemble_is_exactly_flat() {
        let result = run_ensemble(&tiny_config()).unwrap();
        for ti in 0..result.times.len() {
            for avg in result.window_averages(ti, 0) {
                assert_eq!(avg, 1.0);
            }
            let se = stats::se_of_mean(&result.window_averages(ti, 0));
            assert_eq!(se, 0.0);
        }
    }

    #[test]
    fn ensemble_is_reproducible() {
        let a = run_ensemble(&tiny_config()).unwrap();
        let b = run_ensemble(&tiny_config()).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn window_overflow_is_rejected_naming_the_time() {
        let mut config = tiny_config();
        config.lambda = Some(20.0);
        let err = run_ensemble(&config).unwrap_err();
        assert!(err.to_string().contains("overflows"), "{err}");
        // the first overflowing schedule time is named
        assert!(err.to_string().contains("at time 0.1"), "{err}");
    }

    #[test]
    fn f_statistic_centered_degenerate_case() {
        let l = 3.0;
        let samples = vec![2.0 * l; 16];
        let f = f_statistic(&samples, 4.0, 1.0, l).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
        assert!(f_statistic(&samples, 0.0, 1.0, l).is_err());
    }

    #[test]
    fn ks_at_optimal_quantile_grid() {
        let n = 100;
        let samples: Vec<f64> = (1..=n)
            .map(|i| inv_norm_cdf((i as f64 - 0.5) / n as f64))
            .collect();
        let (d, p) = ks_normal(&samples).unwrap();
        assert!((d - 0.005).abs() < 1e-12, "D = {d}");
        assert!(p > 0.99);
    }

    #[test]
    fn ks_point_mass_has_distance_half() {
        let samples = vec![0.0; 64];
        let (d, _p) = ks_normal(&samples).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ks_golden_calibration_run() {
        // 2000 exact-normal draws from the counter-based generator, walking
        // distinct cells (the row holds 160, so rows advance too)
        let grid = GridSpec::with_default_dt(0.1, 8.0, 0.1).unwrap();
        let noise = generate_noise(&grid, 2024);
        let samples: Vec<f64> = (0..2000)
            .map(|i| noise.standard_normal(i / 160, i % 160))
            .collect();
        let (_d, p) = ks_normal(&samples).unwrap();
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn ks_rejects_tiny_or_bad_input() {
        assert!(ks_normal(&[0.0; 7]).is_err());
        assert!(ks_normal(&[f64::NAN; 10]).is_err());
    }

    #[test]
    fn ks_two_sample_separated_and_identical_sets() {
        let a: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let b: Vec<f64> = (0..100).map(|i| 5.0 + i as f64 / 100.0).collect();
        let (d, p) = ks_two_sample(&a, &b).unwrap();
        assert_eq!(d, 1.0);
        assert!(p < 1e-10);
        let (d, p) = ks_two_sample(&a, &a).unwrap();
        assert_eq!(d, 0.0);
        assert!(p > 0.999999);
        // same distribution, different draws
        let grid = GridSpec::with_default_dt(0.1, 8.0, 0.1).unwrap();
        let noise = generate_noise(&grid, 77);
        let x: Vec<f64> = (0..1000).map(|i| noise.standard_normal(i / 160, i % 160)).collect();
        let y: Vec<f64> = (0..1000).map(|i| noise.standard_normal(20 + i / 160, i % 160)).collect();
        let (_d, p) = ks_two_sample(&x, &y).unwrap();
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn kolmogorov_survival_sanity() {
        assert!((kolmogorov_survival(0.5) - 0.9639).abs() < 5e-4);
        assert!((kolmogorov_survival(1.0) - 0.2700).abs() < 5e-4);
        assert!((kolmogorov_survival(2.0) - 0.00067).abs() < 5e-5);
        assert!(kolmogorov_survival(1e-3) > 0.999999);
    }

    #[test]
    fn holder_exponent_of_linear_path_is_one() {
        let dt = 1e-3;
        let path: Vec<f64> = (0..2000).map(|i| i as f64 * dt).collect();
        let est = holder_exponent(&path, dt, 2.0 * dt, 0.15).unwrap();
        assert!((est.exponent - 1.0).abs() < 1e-10, "{}", est.exponent);
        assert!(est.ci.0 <= 1.0 && 1.0 <= est.ci.1);
    }

    #[test]
    fn holder_rejects_bad_input() {
        let dt = 1e-3;
        assert!(holder_exponent(&vec![1.0; 50], dt, 2.0 * dt, 0.004).is_err());
        assert!(holder_exponent(&vec![1.0; 2000], dt, 2.0 * dt, 0.15).is_err()); // constant
        let path: Vec<f64> = (0..2000).map(|i| (i as f64).sin()).collect();
        assert!(holder_exponent(&path, dt, 0.5 * dt, 0.15).is_err()); // lag too small
        assert!(holder_exponent(&path, dt, 2.0 * dt, 1.0).is_err()); // lag too large
    }

    #[test]
    fn wlln_diagnostic_on_flat_model_passes() {
        let mut config = tiny_config();
        config.replicas = 8;
        config.schedule = vec![0.05, 0.1, 0.15, 0.2];
        let result = run_ensemble(&config).unwrap();
        let report = limit_diagnostics(
            &[&result],
            DiagnosticKind::Wlln,
            &compute_thresholds(&GammaCurve::pam(), 1.0, &default_eps_grid()).unwrap(),
            &DiagnosticParams::default(),
        )
        .unwrap();
        assert!(report.pass, "{:?}", report.rows);
        assert!(report.trend_ok);
        assert_eq!(report.final_ok, Some(true));
    }
}
