//! Localised solutions built from iterated window-restricted Walsh sums,
//! their exact dependence cones, and the coupled error against the full
//! solution.
//!
//! The value of the depth-n localised field at (t, x) reads noise only
//! inside an iterated window construction; two points whose cones are
//! disjoint are exactly independent, which is what the partition-based
//! limit-theorem arguments need.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::solver::{
    cells_within, truncation_radius, GridSpec, LocalizationTag, ModelSpec, NoiseField,
    SolutionField,
};

/// Window coefficient and Picard depth of a localised field. The window
/// around the evaluation point (t, x) is [x - sqrt(c t), x + sqrt(c t)].
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LocalizationSpec {
    pub c: f64,
    pub depth: usize,
}

impl LocalizationSpec {
    pub fn new(c: f64, depth: usize) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::Config(format!(
                "window coefficient must be positive, got {c}"
            )));
        }
        Ok(Self { c, depth })
    }

    #[inline]
    pub fn window_radius(&self, t: f64) -> f64 {
        (self.c * t.max(0.0)).sqrt()
    }
}

/// The separation that makes depth-k localised values independent:
/// points further apart than c0 t^2 k^3 have disjoint windows.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SeparationRule {
    pub c0: f64,
    pub k: u32,
    pub t: f64,
}

impl SeparationRule {
    pub fn new(c0: f64, k: u32, t: f64) -> Result<Self> {
        if !(c0 > 0.0) {
            return Err(Error::Config(format!("c0 must be positive, got {c0}")));
        }
        if k < 2 {
            return Err(Error::Config(format!("moment order must be >= 2, got {k}")));
        }
        Ok(Self { c0, k, t })
    }

    pub fn min_separation(&self) -> f64 {
        self.c0 * self.t * self.t * (self.k as f64).powi(3)
    }
}

/// Localised solve: the mild scheme restricted to the window
/// I(x, t; c) = [x - sqrt(ct), x + sqrt(ct)], iterated to the requested
/// Picard depth. The output field carries the (c, depth) tag.
pub fn localize(
    noise: &NoiseField,
    model: &ModelSpec,
    grid: &GridSpec,
    spec: &LocalizationSpec,
) -> Result<SolutionField> {
    localize_snapshots(noise, model, grid, spec, &[grid.n_steps()])
}

/// Localised solve recording a chosen set of time steps.
pub fn localize_snapshots(
    noise: &NoiseField,
    model: &ModelSpec,
    grid: &GridSpec,
    spec: &LocalizationSpec,
    snapshot_steps: &[usize],
) -> Result<SolutionField> {
    let radius_at_horizon = spec.window_radius(grid.horizon);
    if radius_at_horizon < 2.0 * grid.dx {
        return Err(Error::Config(format!(
            "window radius sqrt(c T) = {radius_at_horizon} is not resolvable on the grid \
             (needs at least 2 dx = {})",
            2.0 * grid.dx
        )));
    }
    let window = |t: f64| spec.window_radius(t);
    let mut field = crate::solver::solve_mild_snapshots(
        grid,
        model,
        noise,
        Some(&window),
        spec.depth,
        snapshot_steps,
    )?;
    field.localization = Some(LocalizationTag {
        c: spec.c,
        depth: spec.depth,
    });
    Ok(field)
}

/// The exact set of noise cells that can influence the localised value at
/// one lattice point, stored as one spatial half-width per earlier time row.
#[derive(Clone, Debug)]
pub struct DependenceCone {
    pub target_step: usize,
    pub target_cell: usize,
    /// halfwidth_cells[m] = spatial half-width (in cells, minimal periodic
    /// image) of the cone at noise row m, for m < target_step.
    pub halfwidth_cells: Vec<usize>,
    n_cells: usize,
}

impl DependenceCone {
    pub fn contains(&self, step: usize, cell: usize) -> bool {
        if step >= self.target_step {
            return false;
        }
        let raw = cell.abs_diff(self.target_cell);
        let dist = raw.min(self.n_cells - raw);
        dist <= self.halfwidth_cells[step]
    }

    pub fn is_disjoint(&self, other: &DependenceCone) -> bool {
        let rows = self.target_step.min(other.target_step);
        for m in 0..rows {
            let raw = self.target_cell.abs_diff(other.target_cell);
            let dist = raw.min(self.n_cells - raw);
            if dist <= self.halfwidth_cells[m] + other.halfwidth_cells[m] {
                return false;
            }
        }
        true
    }

    pub fn is_subset_of(&self, other: &DependenceCone) -> bool {
        self.target_step == other.target_step
            && self.target_cell == other.target_cell
            && self
                .halfwidth_cells
                .iter()
                .zip(&other.halfwidth_cells)
                .all(|(a, b)| a <= b)
    }

    /// Largest spatial half-width (in length units) over all rows.
    pub fn max_halfwidth(&self, dx: f64) -> f64 {
        self.halfwidth_cells.iter().copied().max().unwrap_or(0) as f64 * dx
    }
}

/// Computes the exact dependence cone of the depth-n localised value at
/// lattice point (t, x): the iterated union of the restriction windows,
/// intersected with the kernel truncation used by the mild solver. Uses the
/// same cell-rounding rule as the solver, so "outside the cone" is exact in
/// the bit-for-bit sense.
pub fn dependence_cone(
    spec: &LocalizationSpec,
    grid: &GridSpec,
    t: f64,
    x: f64,
) -> Result<DependenceCone> {
    let target_step = grid.step_of(t)?;
    let target_cell = grid.cell_of(x)?;
    let nx = grid.n_cells();
    let half = (nx - 1) / 2;
    let nt = target_step;

    // w[n][m]: cells reachable in one Walsh sum from a point at row n
    // reading noise at row m (window cap and kernel truncation).
    let width = |n: usize, m: usize| -> usize {
        let lag = (n - m) as f64 * grid.dt - 0.5 * grid.dt;
        let trunc = cells_within(truncation_radius(lag, grid.dx), grid.dx);
        let win = cells_within(spec.window_radius(grid.time(n)), grid.dx);
        trunc.min(win).min(half)
    };

    if spec.depth == 0 || nt == 0 {
        return Ok(DependenceCone {
            target_step,
            target_cell,
            halfwidth_cells: vec![0; 0],
            n_cells: nx,
        });
    }

    // reach[n][m], triangular in m < n, for targets up to the requested step.
    let mut reach: Vec<Vec<usize>> = (0..=nt).map(|n| (0..n).map(|m| width(n, m)).collect()).collect();
    for _level in 1..spec.depth {
        let mut next: Vec<Vec<usize>> = Vec::with_capacity(nt + 1);
        for n in 0..=nt {
            let mut row = Vec::with_capacity(n);
            for m in 0..n {
                let mut best = width(n, m);
                for mid in (m + 1)..n {
                    let via = width(n, mid).saturating_add(reach[mid][m]);
                    best = best.max(via);
                }
                row.push(best.min(half));
            }
            next.push(row);
        }
        reach = next;
    }

    Ok(DependenceCone {
        target_step,
        target_cell,
        halfwidth_cells: reach[nt].clone(),
        n_cells: nx,
    })
}

/// Empirical p-th moment of the coupled difference between full and
/// localised fields, with a bootstrap confidence interval.
#[derive(Clone, Debug, Serialize)]
pub struct CouplingError {
    pub p: f64,
    /// Max over probe points of the empirical p-th moment of |full - local|.
    pub error: f64,
    pub ci: (f64, f64),
    pub per_probe: Vec<f64>,
    pub replicas: usize,
}

const BOOTSTRAP_RESAMPLES: usize = 1000;
const BOOTSTRAP_SEED: u64 = 0x5eed_b00d;

/// Measures sup over probe points of the empirical p-th moment of the
/// difference between coupled replica pairs (same noise, same grid). Both
/// slices must hold one field per replica, built from identical seeds.
pub fn coupling_error(
    full: &[SolutionField],
    local: &[SolutionField],
    p: f64,
    probes: &[f64],
) -> Result<CouplingError> {
    if full.len() != local.len() || full.is_empty() {
        return Err(Error::Usage(
            "coupled ensembles must be non-empty and of equal size".into(),
        ));
    }
    if probes.is_empty() {
        return Err(Error::Usage("need at least one probe point".into()));
    }
    if !(p > 0.0) {
        return Err(Error::Usage(format!("moment order must be positive, got {p}")));
    }
    let grid = full[0].grid;
    for f in full.iter().chain(local.iter()) {
        if (f.grid.dx - grid.dx).abs() > 1e-12
            || (f.grid.dt - grid.dt).abs() > 1e-12
            || f.grid.n_cells() != grid.n_cells()
        {
            return Err(Error::Usage("coupled fields live on different grids".into()));
        }
        if f.model != full[0].model {
            return Err(Error::Usage(format!(
                "coupled fields use different models: {} vs {}",
                f.model, full[0].model
            )));
        }
    }
    let cells: Vec<usize> = probes
        .iter()
        .map(|&x| grid.cell_of(x))
        .collect::<Result<_>>()?;
    let n = full.len();
    // diffs[probe][replica] = |full - local|^p
    let diffs: Vec<Vec<f64>> = cells
        .iter()
        .map(|&cell| {
            full.iter()
                .zip(local.iter())
                .map(|(f, l)| (f.final_row()[cell] - l.final_row()[cell]).abs().powf(p))
                .collect()
        })
        .collect();
    let per_probe: Vec<f64> = diffs
        .iter()
        .map(|d| d.iter().sum::<f64>() / n as f64)
        .collect();
    let error = per_probe.iter().cloned().fold(f64::MIN, f64::max);

    // percentile bootstrap over replicas
    let mut stats = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut state = BOOTSTRAP_SEED;
    let mut next_index = |max: usize| {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        ((z ^ (z >> 31)) % max as u64) as usize
    };
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let picks: Vec<usize> = (0..n).map(|_| next_index(n)).collect();
        let stat = diffs
            .iter()
            .map(|d| picks.iter().map(|&i| d[i]).sum::<f64>() / n as f64)
            .fold(f64::MIN, f64::max);
        stats.push(stat);
    }
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = stats[(0.025 * (BOOTSTRAP_RESAMPLES - 1) as f64).round() as usize];
    let hi = stats[(0.975 * (BOOTSTRAP_RESAMPLES - 1) as f64).round() as usize];

    Ok(CouplingError {
        p,
        error,
        ci: (lo, hi),
        per_probe,
        replicas: n,
    })
}
