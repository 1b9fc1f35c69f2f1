//! Exact and semi-exact reference quantities: the heat kernel, the second
//! moment of the parabolic Anderson model, two-point covariances and the
//! variance of window integrals. These serve as oracles for every
//! statistical diagnostic in the harness.

use serde::Serialize;

use crate::error::{Error, Result};

/// Tolerance and budget for the adaptive quadrature used by the covariance
/// and window-variance integrals.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub max_subdivisions: u32,
}

impl QuadratureSpec {
    pub fn new(rel_tol: f64, max_subdivisions: u32) -> Result<Self> {
        if !(rel_tol > 0.0) {
            return Err(Error::Config(format!(
                "quadrature relative tolerance must be positive, got {rel_tol}"
            )));
        }
        if max_subdivisions == 0 {
            return Err(Error::Config(
                "quadrature needs at least one subdivision level".into(),
            ));
        }
        Ok(Self {
            rel_tol,
            max_subdivisions,
        })
    }
}

impl Default for QuadratureSpec {
    /// Oracle precision must exceed Monte Carlo precision by orders of
    /// magnitude: 1e-8 relative with 20 subdivision levels.
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            max_subdivisions: 20,
        }
    }
}

/// Adaptive Simpson integration of `f` over `[a, b]`.
///
/// Accepted panels keep the total error below `rel_tol * |integral|`; panels
/// that exhaust the subdivision budget contribute their Richardson error
/// estimate to the achieved-error tally, and the call fails if that tally
/// ends up above the requested tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain("quadrature endpoints must be finite".into()));
    }
    if a == b {
        return Ok(0.0);
    }

    // Pre-split into fixed panels so narrow features cannot slip between
    // the initial sample points, then adapt within each panel.
    const PANELS: usize = 16;
    let h = (b - a) / PANELS as f64;
    let mut panels = Vec::with_capacity(PANELS);
    let mut scale = 0.0;
    for i in 0..PANELS {
        let pa = a + i as f64 * h;
        let pb = if i + 1 == PANELS { b } else { pa + h };
        let pm = 0.5 * (pa + pb);
        let (fa, fm, fb) = (f(pa), f(pm), f(pb));
        let whole = simpson(pa, pb, fa, fm, fb);
        scale += whole.abs();
        panels.push((pa, pb, fa, fm, fb, whole));
    }
    let scale = scale.max(1e-12);
    let tol = spec.rel_tol * scale / PANELS as f64;
    let mut leftover = 0.0;
    let mut value = 0.0;
    for (pa, pb, fa, fm, fb, whole) in panels {
        value += adapt(
            &f,
            pa,
            pb,
            fa,
            fm,
            fb,
            whole,
            tol,
            spec.max_subdivisions,
            &mut leftover,
        );
    }
    let budget = spec.rel_tol * value.abs().max(scale);
    if leftover > budget {
        return Err(Error::QuadratureNoConverge {
            achieved: leftover / value.abs().max(1e-300),
            requested: spec.rel_tol,
            max_subdivisions: spec.max_subdivisions,
        });
    }
    Ok(value)
}

#[inline]
fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adapt<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    leftover: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    if depth == 0 {
        *leftover += delta.abs() / 15.0;
        return left + right + delta / 15.0;
    }
    adapt(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, leftover)
        + adapt(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, leftover)
}

/// The heat kernel p_t(x) = (2 pi t)^{-1/2} exp(-x^2 / 2t).
pub fn heat_kernel(t: f64, x: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!(
            "heat kernel requires t > 0, got t = {t}"
        )));
    }
    Ok((-x * x / (2.0 * t)).exp() / (2.0 * std::f64::consts::PI * t).sqrt())
}

/// The second-moment curve xi(t) = E[sigma^2(u(t, 0))] that drives the
/// covariance and variance integrals.
#[derive(Clone, Debug)]
pub enum XiCurve {
    /// Parabolic Anderson model with flat unit initial data.
    AnalyticPam,
    /// sigma identically equal to `level`, so xi = level^2 at all times
    /// (the Gaussian reference field when level = 1).
    ConstantSigma { level: f64 },
    /// Empirical table of (t, xi) pairs, interpolated linearly.
    Empirical(Vec<(f64, f64)>),
}

impl XiCurve {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            XiCurve::AnalyticPam => pam_second_moment(t.max(0.0)).unwrap_or(f64::NAN),
            XiCurve::ConstantSigma { level } => level * level,
            XiCurve::Empirical(table) => interp_linear(table, t),
        }
    }

    pub fn provenance(&self) -> &'static str {
        match self {
            XiCurve::AnalyticPam => "analytic-PAM",
            XiCurve::ConstantSigma { .. } => "constant-sigma",
            XiCurve::Empirical(_) => "empirical-table",
        }
    }
}

fn interp_linear(table: &[(f64, f64)], t: f64) -> f64 {
    assert!(!table.is_empty(), "empirical xi table must be non-empty");
    if t <= table[0].0 {
        return table[0].1;
    }
    if t >= table[table.len() - 1].0 {
        return table[table.len() - 1].1;
    }
    let idx = table.partition_point(|&(ti, _)| ti <= t) - 1;
    let (t0, v0) = table[idx];
    let (t1, v1) = table[idx + 1];
    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
}

/// E[u(t, 0)^2] for the parabolic Anderson model with flat unit initial
/// data. Solves the renewal equation
/// `xi(t) = 1 + int_0^t xi(r) (4 pi (t - r))^{-1/2} dr`
/// in closed form: xi(t) = e^{t/4} (1 + erf(sqrt(t)/2)). Validated against
/// an independent product-integration Volterra solver in the test suite.
pub fn pam_second_moment(t: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::Domain(format!(
            "second moment requires t >= 0, got t = {t}"
        )));
    }
    Ok((t / 4.0).exp() * (1.0 + libm::erf(0.5 * t.sqrt())))
}

/// Cov(u(t, x), u(t, x + sep)) = int_0^t xi(r) p_{2(t-r)}(sep) dr.
///
/// The substitution v = sqrt(t - r) absorbs the r -> t endpoint singularity
/// analytically: the integral becomes
/// `(1 / sqrt(pi)) int_0^{sqrt(t)} xi(t - v^2) exp(-sep^2 / (4 v^2)) dv`,
/// which is smooth and handled by adaptive quadrature.
pub fn pair_covariance(t: f64, sep: f64, xi: &XiCurve, q: &QuadratureSpec) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!(
            "pair covariance requires t > 0, got t = {t}"
        )));
    }
    let sep2 = sep * sep;
    let integrand = move |v: f64| {
        if v <= 0.0 {
            return if sep2 == 0.0 { xi.eval(t) } else { 0.0 };
        }
        let damp = if sep2 == 0.0 {
            1.0
        } else {
            (-sep2 / (4.0 * v * v)).exp()
        };
        xi.eval(t - v * v) * damp
    };
    let raw = integrate(integrand, 0.0, t.sqrt(), q)?;
    Ok(raw / std::f64::consts::PI.sqrt())
}

/// Var(int_{-L}^{L} u(t, x) dx), the exact nested integral
/// `2L int_0^t xi(r) int_0^{2L} p_{2(t-r)}(z) (2 - z/L) dz dr`.
///
/// The inner z-integral is evaluated in closed form,
/// `erf(L/v) - v (1 - e^{-L^2/v^2}) / (L sqrt(pi))` with v = sqrt(t - r),
/// leaving a one-dimensional smooth outer integral.
pub fn gaussian_window_variance(t: f64, l: f64, xi: &XiCurve, q: &QuadratureSpec) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!(
            "window variance requires t > 0, got t = {t}"
        )));
    }
    if !(l > 0.0) {
        return Err(Error::Domain(format!(
            "window variance requires L > 0, got L = {l}"
        )));
    }
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    let integrand = move |v: f64| {
        if v <= 0.0 {
            return 2.0 * v * xi.eval(t); // zero at the endpoint, kept finite
        }
        let a = l / v;
        let inner = libm::erf(a) - v * inv_sqrt_pi / l * (1.0 - (-a * a).exp());
        2.0 * v * xi.eval(t - v * v) * inner
    };
    let raw = integrate(integrand, 0.0, t.sqrt(), q)?;
    Ok(2.0 * l * raw)
}

/// `int_0^t xi(r) dr`, the normaliser of the window-variance asymptotics.
pub fn xi_time_integral(t: f64, xi: &XiCurve, q: &QuadratureSpec) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!(
            "xi integral requires t > 0, got t = {t}"
        )));
    }
    integrate(|r| xi.eval(r), 0.0, t, q)
}
