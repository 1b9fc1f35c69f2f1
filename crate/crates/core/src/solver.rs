//! Discrete space-time white noise and two independent discretisations of
//! the stochastic heat equation: an explicit finite-difference marching
//! scheme (fast path) and a mild-form Walsh-sum scheme with optional
//! localisation windows (reference path).

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::num::inv_norm_cdf;

/// Cells per parallel chunk in the finite-difference step.
const FD_CHUNK: usize = 1 << 13;
/// Rows narrower than this are stepped sequentially.
const FD_PAR_THRESHOLD: usize = 1 << 15;
/// Soft cap on the mild solver's space-time lattice (it is meant for
/// coarse presets; the full-history Walsh sum is quadratic in time).
const MILD_MAX_LATTICE: usize = 50_000_000;

/// The periodic space-time lattice. Nodes sit at x_j = -M + j dx for
/// j = 0..n_cells (x = M is identified with x = -M) and t_n = n dt.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GridSpec {
    pub dx: f64,
    pub dt: f64,
    /// Half-domain M; the torus has circumference 2M.
    pub half_domain: f64,
    /// Time horizon T.
    pub horizon: f64,
    n_cells: usize,
    n_steps: usize,
}

impl GridSpec {
    pub fn new(dx: f64, dt: f64, half_domain: f64, horizon: f64) -> Result<Self> {
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(Error::Config(format!("dx must be positive, got {dx}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        if dt > dx * dx * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "explicit stability requires dt <= dx^2 (diffusion coefficient 1/2): \
                 dt = {dt}, dx^2 = {}",
                dx * dx
            )));
        }
        if !(half_domain > 0.0 && horizon > 0.0) {
            return Err(Error::Config(
                "half-domain and horizon must be positive".into(),
            ));
        }
        let cells = 2.0 * half_domain / dx;
        let n_cells = cells.round() as usize;
        if n_cells < 4 || (cells - n_cells as f64).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "2M/dx must be an integer >= 4, got {cells}"
            )));
        }
        let steps = horizon / dt;
        let n_steps = steps.round() as usize;
        if n_steps < 1 || (steps - n_steps as f64).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "T/dt must be a positive integer, got {steps}"
            )));
        }
        Ok(Self {
            dx,
            dt,
            half_domain,
            horizon,
            n_cells,
            n_steps,
        })
    }

    /// Grid with the default time step dt = dx^2 / 2.
    pub fn with_default_dt(dx: f64, half_domain: f64, horizon: f64) -> Result<Self> {
        Self::new(dx, dx * dx / 2.0, half_domain, horizon)
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        -self.half_domain + j as f64 * self.dx
    }

    #[inline]
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    /// Width of the boundary-pollution pad: influence spreads about
    /// 6 sqrt(T) over the horizon, so windows must stay this far from the
    /// periodic seam.
    pub fn pad(&self) -> f64 {
        6.0 * self.horizon.sqrt()
    }

    /// Largest averaging half-width the padded domain supports.
    pub fn max_window_halfwidth(&self) -> f64 {
        self.half_domain - self.pad()
    }

    /// Lattice cell holding position x (must be a node up to rounding).
    pub fn cell_of(&self, x: f64) -> Result<usize> {
        if x.abs() > self.half_domain {
            return Err(Error::Config(format!(
                "position {x} outside the domain [-{m}, {m}]",
                m = self.half_domain
            )));
        }
        let j = ((x + self.half_domain) / self.dx).round() as usize;
        Ok(j.min(self.n_cells - 1))
    }

    /// Lattice step holding time t (must be a multiple of dt).
    pub fn step_of(&self, t: f64) -> Result<usize> {
        let s = t / self.dt;
        let n = s.round() as usize;
        if (s - n as f64).abs() > 1e-6 || n > self.n_steps {
            return Err(Error::Config(format!(
                "time {t} is not on the lattice (dt = {}, horizon = {})",
                self.dt, self.horizon
            )));
        }
        Ok(n)
    }
}

/// The multiplicative noise coefficient sigma.
#[derive(Clone, Copy)]
pub enum SigmaKind {
    /// sigma(u) = u (parabolic Anderson model).
    Pam,
    /// sigma(u) = kappa u.
    ScaledPam { kappa: f64 },
    /// sigma = level, constant. Violates sigma(0) = 0 deliberately; this is
    /// the exactly Gaussian reference field and is flagged reference-only.
    Constant { level: f64 },
    /// Arbitrary Lipschitz coefficient with sigma(0) = 0.
    Custom {
        f: fn(f64) -> f64,
        lip: f64,
        lower: f64,
    },
}

#[derive(Clone, Copy)]
pub struct ModelSpec {
    kind: SigmaKind,
}

impl ModelSpec {
    pub fn pam() -> Self {
        Self {
            kind: SigmaKind::Pam,
        }
    }

    pub fn scaled_pam(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::Config(format!(
                "scaled-pam coefficient must be positive, got {kappa}"
            )));
        }
        Ok(Self {
            kind: SigmaKind::ScaledPam { kappa },
        })
    }

    pub fn constant(level: f64) -> Self {
        Self {
            kind: SigmaKind::Constant { level },
        }
    }

    /// Custom Lipschitz coefficient. sigma(0) = 0 is required; the
    /// degenerate sigma = 0 (lip = 0) is allowed for testing.
    pub fn custom(f: fn(f64) -> f64, lip: f64, lower: f64) -> Result<Self> {
        if f(0.0) != 0.0 {
            return Err(Error::Config("custom sigma must satisfy sigma(0) = 0".into()));
        }
        if !(lip >= lower && lower >= 0.0) {
            return Err(Error::Config(format!(
                "need 0 <= lower <= lip, got lower = {lower}, lip = {lip}"
            )));
        }
        Ok(Self {
            kind: SigmaKind::Custom { f, lip, lower },
        })
    }

    pub fn kind(&self) -> SigmaKind {
        self.kind
    }

    #[inline]
    pub fn sigma(&self, u: f64) -> f64 {
        match self.kind {
            SigmaKind::Pam => u,
            SigmaKind::ScaledPam { kappa } => kappa * u,
            SigmaKind::Constant { level } => level,
            SigmaKind::Custom { f, .. } => f(u),
        }
    }

    /// Lipschitz constant of sigma.
    pub fn lip(&self) -> f64 {
        match self.kind {
            SigmaKind::Pam => 1.0,
            SigmaKind::ScaledPam { kappa } => kappa,
            SigmaKind::Constant { .. } => 0.0,
            SigmaKind::Custom { lip, .. } => lip,
        }
    }

    /// Lower linear-growth constant of sigma.
    pub fn lower(&self) -> f64 {
        match self.kind {
            SigmaKind::Pam => 1.0,
            SigmaKind::ScaledPam { kappa } => kappa,
            SigmaKind::Constant { .. } => 0.0,
            SigmaKind::Custom { lower, .. } => lower,
        }
    }

    /// True for the constant-sigma Gaussian benchmark, which breaks the
    /// sigma(0) = 0 positivity condition on purpose.
    pub fn is_reference_only(&self) -> bool {
        matches!(self.kind, SigmaKind::Constant { .. })
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SigmaKind::Pam => write!(f, "pam"),
            SigmaKind::ScaledPam { kappa } => write!(f, "scaled-pam(kappa={kappa})"),
            SigmaKind::Constant { level } => write!(f, "constant(sigma={level})"),
            SigmaKind::Custom { lip, lower, .. } => write!(f, "custom(lip={lip},lower={lower})"),
        }
    }
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Injectively derives the noise seed of one replica from an ensemble base
/// seed. The finalizer is bijective, so distinct replicas map to distinct
/// seeds for any base.
pub fn replica_seed(base_seed: u64, replica: u64) -> u64 {
    splitmix64(base_seed ^ splitmix64(replica.wrapping_add(1)))
}

/// Discrete space-time white noise: the increment at cell (n, j) is a pure
/// function of (seed, n, j), distributed N(0, dt dx). Stateless, so any
/// evaluation order and any parallel schedule sees identical values.
#[derive(Clone, Debug)]
pub struct NoiseField {
    seed: u64,
    n_cells: u64,
    amp: f64,
    overrides: Option<HashMap<(usize, usize), f64>>,
}

pub fn generate_noise(grid: &GridSpec, seed: u64) -> NoiseField {
    NoiseField {
        seed,
        n_cells: grid.n_cells() as u64,
        amp: (grid.dt * grid.dx).sqrt(),
        overrides: None,
    }
}

impl NoiseField {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Standard normal draw for cell (n, j).
    #[inline]
    pub fn standard_normal(&self, n: usize, j: usize) -> f64 {
        let counter = (n as u64).wrapping_mul(self.n_cells).wrapping_add(j as u64);
        let z = splitmix64(self.seed.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN)));
        // (0, 1) strictly: 53 mantissa bits, offset by half an ulp
        let u = ((z >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0);
        inv_norm_cdf(u)
    }

    /// The white-noise increment Delta W at (n, j), variance dt dx.
    #[inline]
    pub fn increment(&self, n: usize, j: usize) -> f64 {
        if let Some(map) = &self.overrides {
            if let Some(&v) = map.get(&(n, j)) {
                return v;
            }
        }
        self.amp * self.standard_normal(n, j)
    }

    /// Copy of this field with the increment at one cell replaced. Used by
    /// the dependence-cone diagnostics.
    pub fn with_increment_override(&self, n: usize, j: usize, value: f64) -> Self {
        let mut out = self.clone();
        out.overrides
            .get_or_insert_with(HashMap::new)
            .insert((n, j), value);
        out
    }
}

/// Tag carried by localised fields: window coefficient c and Picard depth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LocalizationTag {
    pub c: f64,
    pub depth: usize,
}

/// A realised field on the lattice, holding the rows recorded during a run.
#[derive(Clone, Debug)]
pub struct SolutionField {
    pub grid: GridSpec,
    pub model: String,
    /// Recorded times, ascending.
    pub times: Vec<f64>,
    /// One row of u-values per recorded time.
    pub values: Vec<Vec<f64>>,
    pub localization: Option<LocalizationTag>,
    /// Number of negative lattice values seen while marching (the discrete
    /// scheme may dip below zero; values are recorded, never clipped).
    pub negative_cells: u64,
}

impl SolutionField {
    pub fn final_row(&self) -> &[f64] {
        self.values.last().expect("field holds at least one row")
    }

    pub fn row_at(&self, time: f64) -> Result<&[f64]> {
        let idx = self
            .times
            .iter()
            .position(|&t| (t - time).abs() <= 1e-9 * time.abs().max(1.0))
            .ok_or_else(|| Error::Usage(format!("time {time} was not recorded")))?;
        Ok(&self.values[idx])
    }

    /// CSV dump with header `t,x,u`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "t,x,u")?;
        for (t, row) in self.times.iter().zip(&self.values) {
            for (j, v) in row.iter().enumerate() {
                writeln!(w, "{},{},{}", t, self.grid.x(j), v)?;
            }
        }
        Ok(())
    }

    /// Compact binary dump: little-endian f64 grid metadata
    /// (dx, dt, half_domain, horizon), u64 counts (n_times, n_cells),
    /// the recorded times, then the rows in time-major order.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for v in [self.grid.dx, self.grid.dt, self.grid.half_domain, self.grid.horizon] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.times.len() as u64).to_le_bytes())?;
        w.write_all(&(self.grid.n_cells() as u64).to_le_bytes())?;
        for t in &self.times {
            w.write_all(&t.to_le_bytes())?;
        }
        for row in &self.values {
            for v in row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Row statistics accumulated by the marching driver.
#[derive(Clone, Copy, Debug, Default)]
pub struct MarchStats {
    pub negative_cells: u64,
}

/// Drives the explicit finite-difference scheme
/// `u_{n+1,j} = u_{n,j} + dt/(2 dx^2) (u_{n,j+1} - 2 u_{n,j} + u_{n,j-1})
///   + sigma(u_{n,j}) dW_{n,j} / dx`
/// with periodic wrap, calling `visit(step, row)` after every step
/// (including step 0 with the flat initial row). Streams rows, so the
/// caller decides what to keep.
///
/// Rows wider than a threshold are stepped in parallel chunks; chunk
/// results are bit-identical to the sequential order for any worker count.
pub fn march_fd<F: FnMut(usize, &[f64])>(
    grid: &GridSpec,
    model: &ModelSpec,
    noise: &NoiseField,
    mut visit: F,
) -> Result<MarchStats> {
    let nx = grid.n_cells();
    let mut cur = vec![1.0_f64; nx];
    let mut next = vec![0.0_f64; nx];
    let mut stats = MarchStats::default();
    visit(0, &cur);

    let diff = grid.dt / (2.0 * grid.dx * grid.dx);
    let inv_dx = 1.0 / grid.dx;
    for n in 0..grid.n_steps() {
        let (neg, bad) = if nx >= FD_PAR_THRESHOLD {
            step_parallel(&cur, &mut next, nx, diff, inv_dx, model, noise, n)
        } else {
            step_chunk(&cur, &mut next, 0, nx, diff, inv_dx, model, noise, n)
        };
        if let Some(j) = bad {
            return Err(Error::NumericalBlowup { step: n + 1, cell: j });
        }
        stats.negative_cells += neg;
        std::mem::swap(&mut cur, &mut next);
        visit(n + 1, &cur);
    }
    Ok(stats)
}

#[allow(clippy::too_many_arguments)]
fn step_parallel(
    cur: &[f64],
    next: &mut [f64],
    nx: usize,
    diff: f64,
    inv_dx: f64,
    model: &ModelSpec,
    noise: &NoiseField,
    n: usize,
) -> (u64, Option<usize>) {
    let results: Vec<(u64, Option<usize>)> = next
        .par_chunks_mut(FD_CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let start = ci * FD_CHUNK;
            let mut out = (0u64, None);
            let (neg, bad) = step_into(cur, chunk, start, nx, diff, inv_dx, model, noise, n);
            out.0 = neg;
            out.1 = bad;
            out
        })
        .collect();
    let mut neg = 0;
    let mut bad = None;
    for (c, b) in results {
        neg += c;
        if bad.is_none() {
            bad = b;
        }
    }
    (neg, bad)
}

#[allow(clippy::too_many_arguments)]
fn step_chunk(
    cur: &[f64],
    next: &mut [f64],
    start: usize,
    nx: usize,
    diff: f64,
    inv_dx: f64,
    model: &ModelSpec,
    noise: &NoiseField,
    n: usize,
) -> (u64, Option<usize>) {
    let len = next.len().min(nx - start);
    step_into(cur, &mut next[start..start + len], start, nx, diff, inv_dx, model, noise, n)
}

/// Computes `out[k] = step(cur, start + k)`. Returns (negative count,
/// first non-finite cell).
#[allow(clippy::too_many_arguments)]
fn step_into(
    cur: &[f64],
    out: &mut [f64],
    start: usize,
    nx: usize,
    diff: f64,
    inv_dx: f64,
    model: &ModelSpec,
    noise: &NoiseField,
    n: usize,
) -> (u64, Option<usize>) {
    let mut neg = 0u64;
    let mut bad = None;
    for (k, slot) in out.iter_mut().enumerate() {
        let j = start + k;
        let jm = if j == 0 { nx - 1 } else { j - 1 };
        let jp = if j + 1 == nx { 0 } else { j + 1 };
        let u = cur[j];
        let lap = cur[jm] - 2.0 * u + cur[jp];
        let v = u + diff * lap + model.sigma(u) * noise.increment(n, j) * inv_dx;
        if v < 0.0 {
            neg += 1;
        }
        if !v.is_finite() && bad.is_none() {
            bad = Some(j);
        }
        *slot = v;
    }
    (neg, bad)
}

/// What to retain from a finite-difference run.
#[derive(Clone, Debug, Default)]
pub struct RecordSpec {
    /// Steps whose full rows are kept (sorted; step 0 is the initial row).
    pub snapshot_steps: Vec<usize>,
    /// Cells whose full time trace is kept.
    pub probe_cells: Vec<usize>,
}

/// Output of [`solve_fd_record`].
pub struct FdRun {
    pub field: SolutionField,
    /// traces[p][n] = u(t_n, x_{probe p}) for n = 0..=n_steps.
    pub traces: Vec<Vec<f64>>,
}

/// Explicit finite-difference solve keeping the rows and probe traces
/// requested in `record`.
pub fn solve_fd_record(
    grid: &GridSpec,
    model: &ModelSpec,
    noise: &NoiseField,
    record: &RecordSpec,
) -> Result<FdRun> {
    for &s in &record.snapshot_steps {
        if s > grid.n_steps() {
            return Err(Error::Config(format!(
                "snapshot step {s} beyond horizon step {}",
                grid.n_steps()
            )));
        }
    }
    for &c in &record.probe_cells {
        if c >= grid.n_cells() {
            return Err(Error::Config(format!("probe cell {c} outside the grid")));
        }
    }
    let mut times = Vec::with_capacity(record.snapshot_steps.len());
    let mut values = Vec::with_capacity(record.snapshot_steps.len());
    let mut traces = vec![Vec::with_capacity(grid.n_steps() + 1); record.probe_cells.len()];
    let stats = march_fd(grid, model, noise, |n, row| {
        if record.snapshot_steps.binary_search(&n).is_ok() {
            times.push(grid.time(n));
            values.push(row.to_vec());
        }
        for (trace, &cell) in traces.iter_mut().zip(&record.probe_cells) {
            trace.push(row[cell]);
        }
    })?;
    Ok(FdRun {
        field: SolutionField {
            grid: *grid,
            model: model.to_string(),
            times,
            values,
            localization: None,
            negative_cells: stats.negative_cells,
        },
        traces,
    })
}

/// Explicit finite-difference solve retaining the final row only.
pub fn solve_fd(grid: &GridSpec, model: &ModelSpec, noise: &NoiseField) -> Result<SolutionField> {
    let record = RecordSpec {
        snapshot_steps: vec![grid.n_steps()],
        probe_cells: vec![],
    };
    Ok(solve_fd_record(grid, model, noise, &record)?.field)
}

/// Number of lattice offsets covered by a radius (shared by the mild solver
/// and the dependence-cone computation so that both agree exactly).
#[inline]
pub(crate) fn cells_within(radius: f64, dx: f64) -> usize {
    (radius / dx + 1e-9).floor().max(0.0) as usize
}

/// Spatial truncation radius of the heat kernel at a given lag: beyond
/// 6 sqrt(lag) + dx the tail mass is below 1e-9 and is dropped.
#[inline]
pub(crate) fn truncation_radius(lag: f64, dx: f64) -> f64 {
    6.0 * lag.sqrt() + dx
}

/// Mild-form Walsh-sum solve:
/// `u(t_n, x_j) = 1 + sum_{m<n} sum_{j'} p_{(n-m-1/2) dt}(x_{j'} - x_j)
///   sigma(u_prev(t_m, x_{j'})) dW_{m,j'}`,
/// iterated `picard_depth` times from the flat field. The kernel is
/// evaluated at the cell-centred lag to sidestep the m = n-1 singularity,
/// spatial sums are truncated at 6 sqrt(lag) + dx, and `window` (a map
/// from target time to radius) further restricts them for localisation.
///
/// Records the requested snapshot steps of the final Picard level.
pub fn solve_mild_snapshots(
    grid: &GridSpec,
    model: &ModelSpec,
    noise: &NoiseField,
    window: Option<&(dyn Fn(f64) -> f64 + Sync)>,
    picard_depth: usize,
    snapshot_steps: &[usize],
) -> Result<SolutionField> {
    let nx = grid.n_cells();
    let nt = grid.n_steps();
    if (nt + 1).saturating_mul(nx) > MILD_MAX_LATTICE {
        return Err(Error::Config(format!(
            "mild solver lattice {} x {} exceeds the coarse-preset budget",
            nt + 1,
            nx
        )));
    }
    for &s in snapshot_steps {
        if s > nt {
            return Err(Error::Config(format!("snapshot step {s} beyond horizon")));
        }
    }

    let half = (nx - 1) / 2;
    // kern[l][o]: kernel at lag (l - 1/2) dt and offset o cells, l = n - m.
    let trunc: Vec<usize> = (0..=nt)
        .map(|l| {
            if l == 0 {
                0
            } else {
                let lag = (l as f64 - 0.5) * grid.dt;
                cells_within(truncation_radius(lag, grid.dx), grid.dx).min(half)
            }
        })
        .collect();
    let kern: Vec<Vec<f64>> = (0..=nt)
        .map(|l| {
            if l == 0 {
                return Vec::new();
            }
            let lag = (l as f64 - 0.5) * grid.dt;
            let norm = 1.0 / (2.0 * std::f64::consts::PI * lag).sqrt();
            // no dx factor here: the noise increments already carry the
            // cell measure, so sum_j p(d_j) dW_j is the Walsh integral
            (0..=trunc[l])
                .map(|o| {
                    let d = o as f64 * grid.dx;
                    norm * (-d * d / (2.0 * lag)).exp()
                })
                .collect()
        })
        .collect();
    // Per-target-time window width in cells (None = unrestricted).
    let win_cells: Vec<Option<usize>> = (0..=nt)
        .map(|n| window.map(|w| cells_within(w(grid.time(n)), grid.dx).min(half)))
        .collect();

    let mut prev = vec![1.0_f64; (nt + 1) * nx];
    let mut cur = vec![1.0_f64; (nt + 1) * nx];
    let mut stage = vec![0.0_f64; nt * nx];

    for _level in 0..picard_depth {
        // stage[m][j] = sigma(prev(t_m, x_j)) dW(m, j)
        stage
            .par_chunks_mut(nx)
            .enumerate()
            .for_each(|(m, row)| {
                let prow = &prev[m * nx..(m + 1) * nx];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = model.sigma(prow[j]) * noise.increment(m, j);
                }
            });
        for n in 1..=nt {
            let (head, tail) = cur.split_at_mut(n * nx);
            let out = &mut tail[..nx];
            let _ = head;
            let stage_ref = &stage;
            let trunc_ref = &trunc;
            let kern_ref = &kern;
            let wn = win_cells[n];
            out.par_iter_mut().enumerate().for_each(|(j, slot)| {
                let mut acc = 0.0;
                for m in 0..n {
                    let l = n - m;
                    let mut w = trunc_ref[l];
                    if let Some(wc) = wn {
                        w = w.min(wc);
                    }
                    let row = &stage_ref[m * nx..(m + 1) * nx];
                    let k = &kern_ref[l];
                    acc += k[0] * row[j];
                    for o in 1..=w {
                        let jp = if j + o >= nx { j + o - nx } else { j + o };
                        let jm = if o > j { j + nx - o } else { j - o };
                        acc += k[o] * (row[jp] + row[jm]);
                    }
                }
                *slot = 1.0 + acc;
            });
        }
        std::mem::swap(&mut prev, &mut cur);
    }

    let negative_cells = prev.iter().filter(|&&v| v < 0.0).count() as u64;
    if let Some(pos) = prev.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericalBlowup {
            step: pos / nx,
            cell: pos % nx,
        });
    }
    let mut steps: Vec<usize> = snapshot_steps.to_vec();
    steps.sort_unstable();
    steps.dedup();
    let times = steps.iter().map(|&s| grid.time(s)).collect();
    let values = steps
        .iter()
        .map(|&s| prev[s * nx..(s + 1) * nx].to_vec())
        .collect();
    Ok(SolutionField {
        grid: *grid,
        model: model.to_string(),
        times,
        values,
        localization: None,
        negative_cells,
    })
}

/// Mild solve keeping the final row only.
pub fn solve_mild(
    grid: &GridSpec,
    model: &ModelSpec,
    noise: &NoiseField,
    window: Option<&(dyn Fn(f64) -> f64 + Sync)>,
    picard_depth: usize,
) -> Result<SolutionField> {
    solve_mild_snapshots(grid, model, noise, window, picard_depth, &[grid.n_steps()])
}

fn zero_sigma(_: f64) -> f64 {
    0.0
}

/// Degenerate sigma = 0 model, for deterministic tests.
pub fn zero_model() -> ModelSpec {
    ModelSpec::custom(zero_sigma, 0.0, 0.0).expect("zero sigma is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> GridSpec {
        GridSpec::with_default_dt(0.1, 2.0, 0.2).unwrap()
    }

    #[test]
    fn grid_rejects_unstable_dt() {
        let err = GridSpec::new(0.1, 0.02, 2.0, 1.0).unwrap_err();
        assert!(err.to_string().contains("dt <= dx^2"), "{err}");
    }

    #[test]
    fn grid_rejects_non_integer_divisions() {
        assert!(GridSpec::new(0.3, 0.01, 1.0, 1.0).is_err());
        assert!(GridSpec::new(0.1, 0.003, 1.0, 1.0).is_err());
    }

    #[test]
    fn noise_is_deterministic_per_cell() {
        let grid = small_grid();
        let a = generate_noise(&grid, 42);
        let b = generate_noise(&grid, 42);
        for n in 0..grid.n_steps() {
            for j in 0..grid.n_cells() {
                assert_eq!(a.increment(n, j).to_bits(), b.increment(n, j).to_bits());
            }
        }
        let c = generate_noise(&grid, 43);
        assert_ne!(
            a.increment(0, 0).to_bits(),
            c.increment(0, 0).to_bits(),
            "different seeds should differ"
        );
    }

    #[test]
    fn noise_override_hits_one_cell_only() {
        let grid = small_grid();
        let a = generate_noise(&grid, 7);
        let b = a.with_increment_override(1, 3, 0.5);
        assert_eq!(b.increment(1, 3), 0.5);
        assert_eq!(a.increment(1, 4).to_bits(), b.increment(1, 4).to_bits());
        assert_eq!(a.increment(2, 3).to_bits(), b.increment(2, 3).to_bits());
    }

    #[test]
    fn zero_sigma_keeps_field_flat() {
        let grid = small_grid();
        let noise = generate_noise(&grid, 1);
        let field = solve_fd(&grid, &zero_model(), &noise).unwrap();
        assert!(field.final_row().iter().all(|&v| v == 1.0));
        assert_eq!(field.negative_cells, 0);
    }

    #[test]
    fn mild_zero_sigma_and_zero_depth_are_flat() {
        let grid = small_grid();
        let noise = generate_noise(&grid, 1);
        let flat = solve_mild(&grid, &zero_model(), &noise, None, 4).unwrap();
        assert!(flat.final_row().iter().all(|&v| v == 1.0));
        let depth0 = solve_mild(&grid, &ModelSpec::pam(), &noise, None, 0).unwrap();
        assert!(depth0.final_row().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn vacuous_window_matches_full_mild() {
        let grid = small_grid();
        let noise = generate_noise(&grid, 11);
        let model = ModelSpec::pam();
        let full = solve_mild(&grid, &model, &noise, None, 3).unwrap();
        let wide: &(dyn Fn(f64) -> f64 + Sync) = &|_t| 10.0 * grid.half_domain;
        let windowed = solve_mild(&grid, &model, &noise, Some(wide), 3).unwrap();
        for (a, b) in full.final_row().iter().zip(windowed.final_row()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn fd_solve_is_deterministic_across_worker_counts() {
        // Wide enough row to trigger the parallel path.
        let grid = GridSpec::new(0.05, 0.00125, 1024.0, 0.00250).unwrap();
        assert!(grid.n_cells() >= FD_PAR_THRESHOLD);
        let noise = generate_noise(&grid, 9);
        let model = ModelSpec::pam();
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let f1 = pool1.install(|| solve_fd(&grid, &model, &noise)).unwrap();
        let f4 = pool4.install(|| solve_fd(&grid, &model, &noise)).unwrap();
        assert_eq!(f1.negative_cells, f4.negative_cells);
        for (a, b) in f1.final_row().iter().zip(f4.final_row()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn custom_sigma_must_vanish_at_zero() {
        fn bad(_u: f64) -> f64 {
            1.0
        }
        assert!(ModelSpec::custom(bad, 1.0, 1.0).is_err());
    }

    #[test]
    fn blowup_is_reported_with_location() {
        let grid = small_grid();
        // A huge override forces an immediate non-finite value downstream.
        let noise = generate_noise(&grid, 3).with_increment_override(0, 5, f64::INFINITY);
        let err = solve_fd(&grid, &ModelSpec::pam(), &noise).unwrap_err();
        match err {
            Error::NumericalBlowup { step, cell } => {
                assert_eq!(step, 1);
                assert_eq!(cell, 5);
            }
            other => panic!("expected blow-up, got {other}"),
        }
    }
}
