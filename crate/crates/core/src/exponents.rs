//! Moment Lyapunov exponent curves, the intermittency criterion, and the
//! calculator for the five lambda-thresholds that separate the limit-theorem
//! regimes of exponentially growing spatial averages.

use serde::Serialize;

use crate::error::{Error, Result};

/// gamma(p) = p (p^2 - 1) / 24, the exact moment Lyapunov exponent of the
/// parabolic Anderson model with flat unit initial data.
#[inline]
pub fn pam_gamma(p: f64) -> f64 {
    p * (p * p - 1.0) / 24.0
}

/// One tabulated point of an estimated exponent curve, with its
/// confidence band (lo = hi = value when the point is exact).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GammaSample {
    pub p: f64,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl GammaSample {
    pub fn exact(p: f64, value: f64) -> Self {
        Self {
            p,
            value,
            lo: value,
            hi: value,
        }
    }
}

/// Upper and lower p-th moment Lyapunov exponent curves.
#[derive(Clone, Debug, Serialize)]
pub enum GammaCurve {
    /// The exact PAM curve: both evaluators equal p(p^2 - 1)/24.
    AnalyticPam,
    /// Piecewise-linear tabulated curves (linear extrapolation beyond the
    /// grid keeps convex tables convex).
    Tabulated {
        lower: Vec<GammaSample>,
        upper: Vec<GammaSample>,
        provenance: String,
    },
}

#[derive(Clone, Copy)]
enum Corner {
    Central,
    Low,
    High,
}

fn eval_table(table: &[GammaSample], p: f64, corner: Corner) -> f64 {
    let at = |s: &GammaSample| match corner {
        Corner::Central => s.value,
        Corner::Low => s.lo,
        Corner::High => s.hi,
    };
    assert!(table.len() >= 2, "tabulated curve needs at least two points");
    let idx = if p <= table[0].p {
        0
    } else if p >= table[table.len() - 1].p {
        table.len() - 2
    } else {
        table.partition_point(|s| s.p <= p) - 1
    };
    let (a, b) = (&table[idx], &table[idx + 1]);
    at(a) + (at(b) - at(a)) * (p - a.p) / (b.p - a.p)
}

impl GammaCurve {
    pub fn pam() -> Self {
        GammaCurve::AnalyticPam
    }

    /// Builds a tabulated curve pair, checking ordering and the upper-vs-
    /// lower dominance on the grid.
    pub fn tabulated(
        lower: Vec<GammaSample>,
        upper: Vec<GammaSample>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        for table in [&lower, &upper] {
            if table.len() < 2 {
                return Err(Error::Config("curve table needs at least two points".into()));
            }
            if table.windows(2).any(|w| w[0].p >= w[1].p) {
                return Err(Error::Config("curve table must be sorted in p".into()));
            }
        }
        let probe: Vec<f64> = lower.iter().map(|s| s.p).chain(upper.iter().map(|s| s.p)).collect();
        for &p in &probe {
            if eval_table(&upper, p, Corner::Central) < eval_table(&lower, p, Corner::Central) - 1e-12 {
                return Err(Error::Config(format!(
                    "upper curve below lower curve at p = {p}"
                )));
            }
        }
        Ok(GammaCurve::Tabulated {
            lower,
            upper,
            provenance: provenance.into(),
        })
    }

    pub fn upper_at(&self, p: f64) -> f64 {
        match self {
            GammaCurve::AnalyticPam => pam_gamma(p),
            GammaCurve::Tabulated { upper, .. } => eval_table(upper, p, Corner::Central),
        }
    }

    pub fn lower_at(&self, p: f64) -> f64 {
        match self {
            GammaCurve::AnalyticPam => pam_gamma(p),
            GammaCurve::Tabulated { lower, .. } => eval_table(lower, p, Corner::Central),
        }
    }

    fn upper_corner(&self, p: f64, corner: Corner) -> f64 {
        match self {
            GammaCurve::AnalyticPam => pam_gamma(p),
            GammaCurve::Tabulated { upper, .. } => eval_table(upper, p, corner),
        }
    }

    fn lower_corner(&self, p: f64, corner: Corner) -> f64 {
        match self {
            GammaCurve::AnalyticPam => pam_gamma(p),
            GammaCurve::Tabulated { lower, .. } => eval_table(lower, p, corner),
        }
    }

    pub fn has_bands(&self) -> bool {
        match self {
            GammaCurve::AnalyticPam => false,
            GammaCurve::Tabulated { lower, upper, .. } => lower
                .iter()
                .chain(upper.iter())
                .any(|s| s.lo != s.value || s.hi != s.value),
        }
    }

    pub fn provenance(&self) -> &str {
        match self {
            GammaCurve::AnalyticPam => "analytic-PAM",
            GammaCurve::Tabulated { provenance, .. } => provenance,
        }
    }

    /// Right derivative of the upper curve at p = 1: forward difference with
    /// step 1e-6 on analytic curves, first tabulated secant at p >= 1 on
    /// estimated ones (a convex curve only guarantees a right derivative).
    fn upper_right_derivative_at_one(&self, corner_hi: Corner, corner_lo: Corner) -> f64 {
        match self {
            GammaCurve::AnalyticPam => {
                let h = 1e-6;
                (pam_gamma(1.0 + h) - pam_gamma(1.0)) / h
            }
            GammaCurve::Tabulated { upper, .. } => {
                let start = upper.partition_point(|s| s.p < 1.0 - 1e-12);
                let i = start.min(upper.len() - 2);
                let (a, b) = (&upper[i], &upper[i + 1]);
                let hi = match corner_hi {
                    Corner::Central => b.value,
                    Corner::Low => b.lo,
                    Corner::High => b.hi,
                };
                let lo = match corner_lo {
                    Corner::Central => a.value,
                    Corner::Low => a.lo,
                    Corner::High => a.hi,
                };
                (hi - lo) / (b.p - a.p)
            }
        }
    }
}

/// Flags in the intermittency check: a pair (p, p') on the grid where the
/// ratio gamma(p)/p fails to increase strictly.
#[derive(Clone, Debug, Serialize)]
pub struct IntermittencyReport {
    /// (p, lower ratio gamma_(p)/p, upper ratio gamma^(p)/p) per grid point.
    pub ratios: Vec<(f64, f64, f64)>,
    /// Adjacent pairs violating strict increase.
    pub violations: Vec<(f64, f64)>,
    pub fully_intermittent: bool,
}

/// Checks full intermittency, gamma(p)/p strictly increasing, across the
/// given p-grid. Where the two curves differ, the left term uses the lower
/// curve and the right term the upper curve, the conservative direction for
/// flagging violations.
pub fn intermittency_check(curve: &GammaCurve, p_grid: &[f64]) -> Result<IntermittencyReport> {
    if p_grid.len() < 2 || p_grid.windows(2).any(|w| w[0] >= w[1]) || p_grid[0] < 1.0 {
        return Err(Error::Config(
            "p-grid must be increasing with at least two points in [1, inf)".into(),
        ));
    }
    let ratios: Vec<(f64, f64, f64)> = p_grid
        .iter()
        .map(|&p| (p, curve.lower_at(p) / p, curve.upper_at(p) / p))
        .collect();
    let mut violations = Vec::new();
    for w in ratios.windows(2) {
        let (p0, lo0, _) = w[0];
        let (p1, _, hi1) = w[1];
        if !(lo0 < hi1) {
            violations.push((p0, p1));
        }
    }
    Ok(IntermittencyReport {
        fully_intermittent: violations.is_empty(),
        ratios,
        violations,
    })
}

/// One moment estimate at one time: E-hat[|u(t, 0)|^p] with its standard
/// error (zero for exact curves).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MomentSample {
    pub t: f64,
    pub moment: f64,
    pub se: f64,
}

/// Output of [`estimate_gamma`]: the weighted log-linear slope with a
/// delta-method confidence interval, plus the endpoint secant.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GammaEstimate {
    pub p: f64,
    pub slope: f64,
    pub ci: (f64, f64),
    /// Secant between the first and last point of the fit window; together
    /// with the slope this brackets the lower/upper exponent proxies.
    pub secant: f64,
    pub window: (f64, f64),
    pub n_points: usize,
}

/// Weighted least-squares fit of log-moment against t inside the window.
pub fn estimate_gamma(
    series: &[MomentSample],
    p: f64,
    window: (f64, f64),
) -> Result<GammaEstimate> {
    let pts: Vec<&MomentSample> = series
        .iter()
        .filter(|s| s.t >= window.0 - 1e-12 && s.t <= window.1 + 1e-12)
        .collect();
    if pts.len() < 4 {
        return Err(Error::Data(format!(
            "need at least 4 time points inside the fit window, got {}",
            pts.len()
        )));
    }
    for s in &pts {
        if !(s.moment > 0.0) {
            return Err(Error::Data(format!(
                "non-positive moment estimate {} at t = {} \
                 (more replicas are usually needed for high p)",
                s.moment, s.t
            )));
        }
    }
    let exact = pts.iter().all(|s| s.se == 0.0);
    let (mut sw, mut swt, mut swy, mut swtt, mut swty) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut data = Vec::with_capacity(pts.len());
    for s in &pts {
        let y = s.moment.ln();
        let w = if exact {
            1.0
        } else {
            let se_log = (s.se / s.moment).max(1e-12);
            1.0 / (se_log * se_log)
        };
        data.push((s.t, y, w));
        sw += w;
        swt += w * s.t;
        swy += w * y;
        swtt += w * s.t * s.t;
        swty += w * s.t * y;
    }
    let det = sw * swtt - swt * swt;
    if det.abs() < 1e-300 {
        return Err(Error::Data("degenerate time grid in the fit window".into()));
    }
    let slope = (sw * swty - swt * swy) / det;
    let intercept = (swy - slope * swt) / sw;
    let var_slope = if exact {
        // residual-based variance (zero for exactly log-linear data)
        let n = data.len() as f64;
        let ss: f64 = data
            .iter()
            .map(|&(t, y, _)| {
                let r = y - intercept - slope * t;
                r * r
            })
            .sum();
        let s2 = ss / (n - 2.0).max(1.0);
        s2 * sw / det
    } else {
        sw / det
    };
    let half = 1.96 * var_slope.max(0.0).sqrt();
    let (t0, y0) = (data[0].0, data[0].1);
    let (t1, y1) = (data[data.len() - 1].0, data[data.len() - 1].1);
    Ok(GammaEstimate {
        p,
        slope,
        ci: (slope - half, slope + half),
        secant: (y1 - y0) / (t1 - t0),
        window,
        n_points: data.len(),
    })
}

/// The five lambda-thresholds plus the Malliavin constants, with the inputs
/// echoed. `*_ci` fields are present when the curve carries confidence
/// bands (propagated by worst-case corners).
#[derive(Clone, Debug, Serialize)]
pub struct ThresholdReport {
    /// Weak law of large numbers: right derivative of the upper curve at 1.
    pub lambda1: f64,
    /// Strong law of large numbers: 5 gamma^(4) / 6.
    pub lambda2: f64,
    /// Central limit theorem holds above this.
    pub lambda3: f64,
    /// Central limit theorem fails below this (lambda4 <= lambda3).
    pub lambda4: f64,
    /// Quantitative central limit theorem: 2^9 Lip^4 + gamma^(4) - 2 gamma_(2).
    pub lambda5: f64,
    pub lambda1_ci: Option<(f64, f64)>,
    pub lambda2_ci: Option<(f64, f64)>,
    pub lambda3_ci: Option<(f64, f64)>,
    pub lambda4_ci: Option<(f64, f64)>,
    pub lambda5_ci: Option<(f64, f64)>,
    /// C1 = 8 Lip / eps^{3/2} at the representative epsilon.
    pub c1: f64,
    /// C2 = 2^3 k^2 Lip^4 / (1 - eps)^4 at k = 4.
    pub c2: f64,
    pub malliavin_epsilon: f64,
    pub malliavin_k: u32,
    pub lip_sigma: f64,
    pub eps_grid: Vec<f64>,
    pub curve_provenance: String,
    /// Which curve feeds the lambda1 finite difference when the two curves
    /// differ (the conservative choice is the upper curve).
    pub lambda1_curve: &'static str,
}

/// Default geometric epsilon grid reaching down to 1e-6, where the
/// open-interval inf/sup of the CLT thresholds are attained for smooth
/// convex curves.
pub fn default_eps_grid() -> Vec<f64> {
    let mut grid = Vec::new();
    let mut e = 0.9999;
    grid.push(e);
    e = 0.5;
    while e >= 1e-6 {
        grid.push(e);
        e *= 0.5;
    }
    grid.push(1e-6);
    grid
}

/// Representative epsilon at which the Malliavin constants are reported.
const MALLIAVIN_EPS: f64 = 0.5;

/// Computes the threshold report for a curve pair and Lipschitz constant.
pub fn thresholds(curve: &GammaCurve, lip_sigma: f64, eps_grid: &[f64]) -> Result<ThresholdReport> {
    if eps_grid.is_empty() {
        return Err(Error::Domain("epsilon grid must be non-empty".into()));
    }
    for &e in eps_grid {
        if !(e > 0.0 && e < 1.0) {
            return Err(Error::Domain(format!(
                "epsilon grid must lie in (0, 1), got {e}"
            )));
        }
    }
    if !(lip_sigma >= 0.0) {
        return Err(Error::Domain(format!(
            "Lipschitz constant must be nonnegative, got {lip_sigma}"
        )));
    }

    let lambda3_expr = |eps: f64, up: Corner, low: Corner| {
        2.0 * (curve.upper_corner(2.0 + eps, up) - curve.lower_corner(2.0, low)) / eps
            - curve.lower_corner(2.0, low)
    };
    let lambda4_expr = |eps: f64, up: Corner, low: Corner| {
        2.0 * (curve.lower_corner(2.0, low) - curve.upper_corner(2.0 - eps, up)) / eps
            - curve.lower_corner(2.0, low)
    };
    let min_over = |f: &dyn Fn(f64) -> f64| eps_grid.iter().map(|&e| f(e)).fold(f64::MAX, f64::min);
    let max_over = |f: &dyn Fn(f64) -> f64| eps_grid.iter().map(|&e| f(e)).fold(f64::MIN, f64::max);

    let lambda1 = curve.upper_right_derivative_at_one(Corner::Central, Corner::Central);
    let lambda2 = 5.0 * curve.upper_at(4.0) / 6.0;
    let lambda3 = min_over(&|e| lambda3_expr(e, Corner::Central, Corner::Central));
    let lambda4 = max_over(&|e| lambda4_expr(e, Corner::Central, Corner::Central));
    let lip4 = lip_sigma.powi(4);
    let lambda5 = 512.0 * lip4 + curve.upper_at(4.0) - 2.0 * curve.lower_at(2.0);

    let (l1ci, l2ci, l3ci, l4ci, l5ci) = if curve.has_bands() {
        let l1 = (
            curve.upper_right_derivative_at_one(Corner::Low, Corner::High),
            curve.upper_right_derivative_at_one(Corner::High, Corner::Low),
        );
        let l2 = (
            5.0 * curve.upper_corner(4.0, Corner::Low) / 6.0,
            5.0 * curve.upper_corner(4.0, Corner::High) / 6.0,
        );
        let l3 = (
            min_over(&|e| lambda3_expr(e, Corner::Low, Corner::High)),
            min_over(&|e| lambda3_expr(e, Corner::High, Corner::Low)),
        );
        let l4 = (
            max_over(&|e| lambda4_expr(e, Corner::High, Corner::Low)),
            max_over(&|e| lambda4_expr(e, Corner::Low, Corner::High)),
        );
        let l5 = (
            512.0 * lip4 + curve.upper_corner(4.0, Corner::Low)
                - 2.0 * curve.lower_corner(2.0, Corner::High),
            512.0 * lip4 + curve.upper_corner(4.0, Corner::High)
                - 2.0 * curve.lower_corner(2.0, Corner::Low),
        );
        (Some(l1), Some(l2), Some(l3), Some(l4), Some(l5))
    } else {
        (None, None, None, None, None)
    };

    let eps = MALLIAVIN_EPS;
    Ok(ThresholdReport {
        lambda1,
        lambda2,
        lambda3,
        lambda4,
        lambda5,
        lambda1_ci: l1ci,
        lambda2_ci: l2ci,
        lambda3_ci: l3ci,
        lambda4_ci: l4ci,
        lambda5_ci: l5ci,
        c1: 8.0 * lip_sigma / eps.powf(1.5),
        c2: 8.0 * 16.0 * lip4 / (1.0 - eps).powi(4),
        malliavin_epsilon: eps,
        malliavin_k: 4,
        lip_sigma,
        eps_grid: eps_grid.to_vec(),
        curve_provenance: curve.provenance().to_string(),
        lambda1_curve: "upper",
    })
}

/// Equivalent form of the quantitative-CLT threshold for the linear model
/// sigma(u) = Lip u: (2^11 - 2) gamma(2) + gamma(4) in units of the PAM
/// curve scaled by Lip^4.
pub fn lambda5_linear_model(lip_sigma: f64) -> f64 {
    let lip4 = lip_sigma.powi(4);
    (2048.0 - 2.0) * lip4 * pam_gamma(2.0) + lip4 * pam_gamma(4.0)
}

/// Synthetic convex curve pair on a fixed p-grid, for calibration and
/// property tests: the lower curve has increasing nonnegative slopes and
/// the upper curve adds a convex nonnegative gap vanishing at p = 1.
pub fn random_convex_pair(seed: u64) -> GammaCurve {
    let mut state = seed;
    let mut unit = move || {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        ((z ^ (z >> 31)) >> 11) as f64 / 9_007_199_254_740_992.0
    };
    let grid = [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 5.0];
    let mut lower = vec![GammaSample::exact(1.0, 0.0)];
    let mut upper = vec![GammaSample::exact(1.0, 0.0)];
    let mut slope = 0.5 * unit();
    let mut gap_slope = 0.0;
    let (mut lo_val, mut gap) = (0.0, 0.0);
    for w in grid.windows(2) {
        let dp = w[1] - w[0];
        slope += unit(); // nondecreasing slopes keep the curve convex
        gap_slope += 0.3 * unit();
        lo_val += slope * dp;
        gap += gap_slope * dp;
        lower.push(GammaSample::exact(w[1], lo_val));
        upper.push(GammaSample::exact(w[1], lo_val + gap));
    }
    GammaCurve::tabulated(lower, upper, "synthetic-convex").expect("construction is valid")
}
