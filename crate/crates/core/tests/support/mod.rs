//! Shared oracles for the integration tests. Everything here is
//! independent of the library's implementation paths: the renewal solver
//! uses product integration on the singular kernel, and the lattice
//! covariance recursion reproduces the second-moment structure of the
//! explicit scheme exactly, without Monte Carlo.

/// Solves the renewal equation
/// `xi(t) = 1 + int_0^t xi(r) (4 pi (t - r))^{-1/2} dr`
/// by product integration: xi is piecewise linear on a uniform grid and the
/// singular factor is integrated analytically over each panel.
/// Returns xi at the grid points 0, h, 2h, ..., n h.
pub fn volterra_pam_second_moment(h: f64, n: usize) -> Vec<f64> {
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    // weight moments over panel [t_i, t_{i+1}] against (4 pi (t_n - r))^{-1/2}:
    // m0 = (sqrt(tau0) - sqrt(tau1)) / sqrt(pi)
    // m1 = [ (t_n - t_i) 2 (sqrt(tau0) - sqrt(tau1))
    //        - (2/3)(tau0^{3/2} - tau1^{3/2}) ] / (2 sqrt(pi))
    // with tau0 = t_n - t_i, tau1 = t_n - t_{i+1}.
    let mut xi = vec![1.0; n + 1];
    for step in 1..=n {
        let tn = step as f64 * h;
        let mut known = 0.0;
        let mut last_m0 = 0.0;
        let mut last_m1 = 0.0;
        for i in 0..step {
            let tau0 = tn - i as f64 * h;
            let tau1 = tn - (i + 1) as f64 * h;
            let s0 = tau0.sqrt();
            let s1 = tau1.max(0.0).sqrt();
            let m0 = (s0 - s1) * inv_sqrt_pi;
            let m1 = (tau0 * 2.0 * (s0 - s1) - 2.0 / 3.0 * (tau0 * s0 - tau1.max(0.0) * s1))
                * 0.5
                * inv_sqrt_pi;
            if i + 1 == step {
                last_m0 = m0;
                last_m1 = m1;
            } else {
                let slope_term = m1 / h;
                known += xi[i] * (m0 - slope_term) + xi[i + 1] * slope_term;
            }
        }
        let slope_term = last_m1 / h;
        let coeff = slope_term; // multiplies the unknown xi[step]
        let rhs = 1.0 + known + xi[step - 1] * (last_m0 - slope_term);
        xi[step] = rhs / (1.0 - coeff);
    }
    xi
}

/// Exact second-moment structure of the explicit finite-difference scheme:
/// evolves the stationary covariance R_n(k) = E[u_n(x_j) u_n(x_{j+k})]
/// under
/// `u_{n+1} = S * u_n + sigma(u_n) dW / dx`
/// with S the three-point stencil [c, 1-2c, c], c = dt/(2 dx^2). The noise
/// term adds (dt/dx) E[sigma^2(u_n)] at lag 0; for the linear models this
/// closes exactly, no sampling involved.
pub struct LatticeCovariance {
    pub dx: f64,
    pub dt: f64,
    /// Centered covariance C(k) = R(k) - 1 for k = 0..max_lag.
    pub cov: Vec<f64>,
}

pub enum LatticeModel {
    /// sigma(u) = u: the noise source is R_n(0).
    Pam,
    /// sigma = level: the noise source is level^2.
    ConstantSigma(f64),
}

impl LatticeCovariance {
    pub fn evolve(dx: f64, dt: f64, horizon: f64, model: LatticeModel, max_lag: usize) -> Self {
        let c = dt / (2.0 * dx * dx);
        let steps = (horizon / dt).round() as usize;
        // R(k) includes the mean-square product; start from u = 1.
        let mut r = vec![1.0f64; max_lag + 3];
        let mut next = vec![0.0f64; max_lag + 3];
        let s = [c, 1.0 - 2.0 * c, c];
        for _ in 0..steps {
            // next(k) = sum_{a,b} s_a s_b R(k + b - a) + source delta_{k0}
            for k in 0..=max_lag {
                let mut acc = 0.0;
                for (a, &sa) in s.iter().enumerate() {
                    for (b, &sb) in s.iter().enumerate() {
                        let lag = k as isize + b as isize - a as isize;
                        let lag = lag.unsigned_abs();
                        let val = if lag < r.len() { r[lag] } else { 1.0 };
                        acc += sa * sb * val;
                    }
                }
                next[k] = acc;
            }
            let source = match model {
                LatticeModel::Pam => r[0],
                LatticeModel::ConstantSigma(level) => level * level,
            };
            next[0] += dt / dx * source;
            next[max_lag + 1] = r[max_lag + 1];
            next[max_lag + 2] = r[max_lag + 2];
            std::mem::swap(&mut r, &mut next);
        }
        let cov = r[..=max_lag].iter().map(|v| v - 1.0).collect();
        Self { dx, dt, cov }
    }

    /// E[u^2] at a cell, i.e. 1 + C(0).
    pub fn second_moment(&self) -> f64 {
        1.0 + self.cov[0]
    }

    /// Exact variance of the window integral over N consecutive cells with
    /// uniform weight dx (fractional end cells ignored; calibration use).
    pub fn window_variance(&self, n_cells: usize) -> f64 {
        let n = n_cells as f64;
        let mut acc = self.cov[0] * n;
        for (k, &c) in self.cov.iter().enumerate().skip(1) {
            if k >= n_cells {
                break;
            }
            acc += 2.0 * (n - k as f64) * c;
        }
        acc * self.dx * self.dx
    }
}
