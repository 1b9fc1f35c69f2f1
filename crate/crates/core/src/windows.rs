//! Exponentially growing averaging windows, lattice spatial averages, and
//! the alternating-block partitions of [-L, L] with their refined
//! inner-block / strip decomposition.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::solver::{GridSpec, SolutionField};

/// Half-width of the averaging window at time t: L(t) = e^{lambda t}.
#[inline]
pub fn window_length(lambda: f64, t: f64) -> f64 {
    (lambda * t).exp()
}

/// A growth rate together with the probe times of an experiment.
#[derive(Clone, Debug, Serialize)]
pub struct WindowSchedule {
    pub lambda: f64,
    pub times: Vec<f64>,
}

impl WindowSchedule {
    pub fn new(lambda: f64, times: Vec<f64>) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::Config(format!(
                "window growth rate must be positive, got {lambda}"
            )));
        }
        if times.is_empty() || times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "schedule times must be non-empty and strictly increasing".into(),
            ));
        }
        Ok(Self { lambda, times })
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.times
            .iter()
            .map(|&t| window_length(self.lambda, t))
            .collect()
    }
}

/// Precomputed midpoint-rule weights of one averaging window: full cells
/// weigh dx, the end cells carry their fractional overlap, and the weights
/// sum to exactly 2L for any alignment, so the expectation of the integral
/// is exact for mean-one fields.
#[derive(Clone, Debug)]
pub struct WindowWeights {
    j_first: usize,
    weights: Vec<f64>,
    weight_sum: f64,
}

impl WindowWeights {
    pub fn build(grid: &GridSpec, l: f64) -> Result<Self> {
        if !(l >= grid.dx) {
            return Err(Error::Config(format!(
                "window half-width {l} below one lattice spacing {}",
                grid.dx
            )));
        }
        if l > grid.max_window_halfwidth() + 1e-9 {
            return Err(Error::Config(format!(
                "window half-width {l} exceeds the padded domain \
                 (max {}, half-domain {} minus pad {})",
                grid.max_window_halfwidth(),
                grid.half_domain,
                grid.pad()
            )));
        }
        // Cell j covers [x_j - dx/2, x_j + dx/2].
        let dx = grid.dx;
        let j_first = (((-l) + grid.half_domain) / dx - 0.5).floor().max(0.0) as usize;
        let j_last = (((l + grid.half_domain) / dx + 0.5).ceil() as usize).min(grid.n_cells() - 1);
        let mut weights = Vec::with_capacity(j_last - j_first + 1);
        for j in j_first..=j_last {
            let cell_lo = grid.x(j) - 0.5 * dx;
            let cell_hi = grid.x(j) + 0.5 * dx;
            weights.push((cell_hi.min(l) - cell_lo.max(-l)).max(0.0));
        }
        while weights.last() == Some(&0.0) {
            weights.pop();
        }
        let mut out = Self {
            j_first,
            weights,
            weight_sum: 0.0,
        };
        // Same accumulation order as `apply`, so a flat row integrates to
        // the weight sum bit-for-bit.
        let ones = vec![1.0; out.j_first + out.weights.len()];
        out.weight_sum = out.apply(&ones);
        Ok(out)
    }

    /// Sum of the weights (equals 2L up to rounding); dividing integrals by
    /// this rather than 2L makes the average of a flat field exactly one.
    pub fn weight_sum(&self) -> f64 {
        self.weight_sum
    }

    /// Weighted sum over the row, chunk-accumulated in a fixed order.
    pub fn apply(&self, row: &[f64]) -> f64 {
        let mut total = 0.0;
        let mut offset = 0;
        for chunk in self.weights.chunks(4096) {
            let mut acc = 0.0;
            let base = self.j_first + offset;
            for (k, w) in chunk.iter().enumerate() {
                acc += w * row[base + k];
            }
            total += acc;
            offset += chunk.len();
        }
        total
    }
}

/// Integral of a lattice row over [-L, L]; see [`WindowWeights`].
pub fn window_integral(row: &[f64], grid: &GridSpec, l: f64) -> Result<f64> {
    debug_assert_eq!(row.len(), grid.n_cells());
    Ok(WindowWeights::build(grid, l)?.apply(row))
}

/// Spatial average over [-L, L]: the window integral divided by the exact
/// weight sum (equal to 2L up to rounding).
pub fn spatial_average(field: &SolutionField, time: f64, l: f64) -> Result<f64> {
    let row = field.row_at(time)?;
    let w = WindowWeights::build(&field.grid, l)?;
    Ok(w.apply(row) / w.weight_sum())
}

/// The refined layer of a partition: inner blocks shrunk by the separation
/// margin, plus the strips that make up the remainder.
#[derive(Clone, Debug, Serialize)]
pub struct RefinedLayout {
    pub margin: f64,
    /// Inner blocks, one per block (empty intervals are collapsed).
    pub inner_blocks: Vec<(f64, f64)>,
    /// Strips: q + 1 of them, two half-margin strips at the ends and
    /// full-width strips at the interior block boundaries.
    pub strips: Vec<(f64, f64)>,
}

/// Decomposition of [-L, L] into q = floor(2L / L') blocks of equal length
/// 2L/q, with the even/odd parity classes whose members are pairwise
/// separated by at least L'.
#[derive(Clone, Debug, Serialize)]
pub struct PartitionLayout {
    pub l: f64,
    pub l_prime: f64,
    pub q: usize,
    /// The uniform remainder spread: alpha_j = (2L - q L') / q for all j.
    pub alpha: f64,
    /// Block endpoints: blocks[i] = (left, right), i = 0..q (paper blocks
    /// are 1-based; block i here is the paper's Lambda_{i+1}).
    pub blocks: Vec<(f64, f64)>,
    /// Indices (0-based) whose 1-based position is even.
    pub parity_even: Vec<usize>,
    /// Indices (0-based) whose 1-based position is odd.
    pub parity_odd: Vec<usize>,
    pub refined: Option<RefinedLayout>,
}

impl PartitionLayout {
    pub fn block_length(&self) -> f64 {
        self.l_prime + self.alpha
    }
}

/// Builds the alternating-block partition of [-L, L].
///
/// The remainder 2L - q L' is spread uniformly, alpha_j = (2L - q L') / q,
/// which keeps every block length in [L', L' + 1] provided the remainder is
/// at most q. Infeasible inputs are rejected rather than silently clamped.
pub fn build_partition(l: f64, l_prime: f64) -> Result<PartitionLayout> {
    if !(l > 0.0 && l_prime > 0.0 && l_prime < l) {
        return Err(Error::PartitionInfeasible(format!(
            "need 0 < L' < L, got L = {l}, L' = {l_prime}"
        )));
    }
    let q = (2.0 * l / l_prime).floor() as usize;
    let remainder = 2.0 * l - q as f64 * l_prime;
    if remainder > q as f64 * (1.0 + 1e-12) {
        return Err(Error::PartitionInfeasible(format!(
            "remainder {remainder} exceeds block count {q}; \
             choose a smaller L' so that each alpha_j stays within [0, 1]"
        )));
    }
    let alpha = remainder / q as f64;
    let len = 2.0 * l / q as f64; // equals l_prime + alpha
    let endpoint = |i: usize| -l + i as f64 * len;
    let blocks: Vec<(f64, f64)> = (0..q).map(|i| (endpoint(i), endpoint(i + 1))).collect();
    let parity_even = (0..q).filter(|i| (i + 1) % 2 == 0).collect();
    let parity_odd = (0..q).filter(|i| (i + 1) % 2 == 1).collect();
    Ok(PartitionLayout {
        l,
        l_prime,
        q,
        alpha,
        blocks,
        parity_even,
        parity_odd,
        refined: None,
    })
}

/// Adds the refined layer: inner blocks shrunk by the integer margin
/// ceil(c0 t^2 k^3) on both sides, and the strips covering the rest, so the
/// inner blocks are mutually separated by at least twice the margin.
pub fn refine_partition(
    layout: &PartitionLayout,
    t: f64,
    k: u32,
    c0: f64,
) -> Result<PartitionLayout> {
    if !(c0 >= 0.0) {
        return Err(Error::Config(format!("c0 must be nonnegative, got {c0}")));
    }
    if k < 2 {
        return Err(Error::Config(format!("moment order k must be >= 2, got {k}")));
    }
    let margin = (c0 * t * t * (k as f64).powi(3)).ceil();
    refine_partition_margin(layout, margin)
}

/// Refined layer with an explicit margin (already rounded up).
pub fn refine_partition_margin(layout: &PartitionLayout, margin: f64) -> Result<PartitionLayout> {
    let len = layout.block_length();
    if margin < 0.0 {
        return Err(Error::Config(format!("margin must be >= 0, got {margin}")));
    }
    if 2.0 * margin >= len && margin > 0.0 {
        return Err(Error::PartitionInfeasible(format!(
            "margin {margin} too large: inner blocks of length {len} - 2*{margin} would be empty"
        )));
    }
    let q = layout.q;
    let inner_blocks: Vec<(f64, f64)> = layout
        .blocks
        .iter()
        .map(|&(a, b)| (a + margin, b - margin))
        .collect();
    let mut strips = Vec::with_capacity(q + 1);
    strips.push((-layout.l, -layout.l + margin));
    for i in 1..q {
        let edge = layout.blocks[i - 1].1;
        strips.push((edge - margin, edge + margin));
    }
    strips.push((layout.l - margin, layout.l));
    let mut refined = layout.clone();
    refined.refined = Some(RefinedLayout {
        margin,
        inner_blocks,
        strips,
    });
    Ok(refined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{generate_noise, solve_fd, zero_model};
    use proptest::prelude::*;

    #[test]
    fn window_length_values() {
        assert_eq!(window_length(0.7, 0.0), 1.0);
        assert!((window_length(2.0 / 3.0, 3.0) - 2.0_f64.exp().powi(1)).abs() < 1e-12);
        assert!((window_length(1.0, 5.0) - 148.413_159_102_576_6).abs() < 1e-10);
    }

    #[test]
    fn schedule_requires_increasing_times() {
        assert!(WindowSchedule::new(1.0, vec![1.0, 1.0]).is_err());
        assert!(WindowSchedule::new(0.0, vec![1.0]).is_err());
        let s = WindowSchedule::new(0.5, vec![2.0, 4.0]).unwrap();
        assert_eq!(s.half_widths().len(), 2);
    }

    #[test]
    fn flat_field_averages_to_one_for_any_window() {
        let grid = GridSpec::with_default_dt(0.1, 8.0, 0.1).unwrap();
        let noise = generate_noise(&grid, 0);
        let field = solve_fd(&grid, &zero_model(), &noise).unwrap();
        for &l in &[0.1, 0.37, 1.0, 1.93] {
            let avg = spatial_average(&field, grid.horizon, l).unwrap();
            assert!((avg - 1.0).abs() < 1e-12, "L={l}: {avg}");
        }
    }

    #[test]
    fn linear_field_averages_to_nearly_zero() {
        let grid = GridSpec::with_default_dt(0.1, 8.0, 0.1).unwrap();
        let row: Vec<f64> = (0..grid.n_cells()).map(|j| grid.x(j)).collect();
        for &l in &[0.55, 1.0, 1.77] {
            let avg = window_integral(&row, &grid, l).unwrap() / (2.0 * l);
            assert!(avg.abs() <= grid.dx * grid.dx / l + 1e-12, "L={l}: {avg}");
        }
    }

    #[test]
    fn window_rejects_padded_domain_overflow() {
        let grid = GridSpec::with_default_dt(0.1, 8.0, 1.0).unwrap();
        let row = vec![1.0; grid.n_cells()];
        // pad = 6, so anything above 2.0 must be rejected
        assert!(window_integral(&row, &grid, 3.0).is_err());
        assert!(window_integral(&row, &grid, 1.9).is_ok());
    }

    #[test]
    fn partition_example_l10_lp3() {
        let p = build_partition(10.0, 3.0).unwrap();
        assert_eq!(p.q, 6);
        assert!((p.alpha - 1.0 / 3.0).abs() < 1e-12);
        let total: f64 = p.blocks.iter().map(|(a, b)| b - a).sum();
        assert!((total - 20.0).abs() < 1e-12);
        for (a, b) in &p.blocks {
            assert!((b - a - 10.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_example_exact_division() {
        let p = build_partition(10.0, 2.5).unwrap();
        assert_eq!(p.q, 8);
        assert_eq!(p.alpha, 0.0);
        for (a, b) in &p.blocks {
            assert!((b - a - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn same_parity_blocks_are_separated() {
        let p = build_partition(10.0, 3.0).unwrap();
        for class in [&p.parity_even, &p.parity_odd] {
            for pair in class.windows(2) {
                let gap = p.blocks[pair[1]].0 - p.blocks[pair[0]].1;
                assert!(gap >= p.l_prime - 1e-12, "gap {gap}");
            }
        }
    }

    #[test]
    fn refine_example_l100_lp20_margin2() {
        let p = build_partition(100.0, 20.0).unwrap();
        let r = refine_partition_margin(&p, 2.0).unwrap();
        let refined = r.refined.as_ref().unwrap();
        assert_eq!(refined.inner_blocks.len(), 10);
        for (a, b) in &refined.inner_blocks {
            assert!((b - a - 16.0).abs() < 1e-12);
        }
        assert_eq!(refined.strips.len(), 11);
        let (s0, s1) = refined.strips[0];
        assert!((s1 - s0 - 2.0).abs() < 1e-12);
        let (e0, e1) = refined.strips[10];
        assert!((e1 - e0 - 2.0).abs() < 1e-12);
        for s in &refined.strips[1..10] {
            assert!((s.1 - s.0 - 4.0).abs() < 1e-12);
        }
        let inner_total: f64 = refined.inner_blocks.iter().map(|(a, b)| b - a).sum();
        let strip_total: f64 = refined.strips.iter().map(|(a, b)| b - a).sum();
        assert!((inner_total - 160.0).abs() < 1e-12);
        assert!((inner_total + strip_total - 200.0).abs() < 1e-12);
    }

    #[test]
    fn zero_margin_refinement_is_vacuous() {
        let p = build_partition(10.0, 3.0).unwrap();
        let r = refine_partition_margin(&p, 0.0).unwrap();
        let refined = r.refined.as_ref().unwrap();
        assert_eq!(refined.inner_blocks, p.blocks);
        for (a, b) in &refined.strips {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn refine_rejects_oversized_margin() {
        let p = build_partition(10.0, 3.0).unwrap();
        assert!(refine_partition_margin(&p, 2.0).is_err());
        assert!(refine_partition(&p, 2.0, 3, 1.0).is_err());
    }

    #[test]
    fn infeasible_remainder_is_rejected() {
        // 2L = 21, L' = 10: q = 2, remainder = 1 <= 2 feasible;
        // 2L = 43, L' = 20: q = 2, remainder = 3 > 2 infeasible.
        assert!(build_partition(10.5, 10.0).is_ok());
        assert!(build_partition(21.5, 20.0).is_err());
    }

    proptest! {
        #[test]
        fn partition_invariants_hold_on_feasible_inputs(
            l in 1.0_f64..500.0,
            frac in 0.02_f64..0.45,
        ) {
            let l_prime = l * frac;
            let q_guess = (2.0 * l / l_prime).floor();
            prop_assume!(2.0 * l - q_guess * l_prime <= q_guess);
            let p = build_partition(l, l_prime).unwrap();
            // tiling
            let total: f64 = p.blocks.iter().map(|(a, b)| b - a).sum();
            prop_assert!((total - 2.0 * l).abs() <= 2e-12 * l * p.q as f64);
            // block-length bounds
            for (a, b) in &p.blocks {
                let len = b - a;
                prop_assert!(len >= p.l_prime - 1e-9);
                prop_assert!(len <= p.l_prime + 1.0 + 1e-9);
            }
            // contiguity
            for w in p.blocks.windows(2) {
                prop_assert!((w[0].1 - w[1].0).abs() < 1e-12 * l.max(1.0));
            }
        }

        #[test]
        fn partition_is_scale_equivariant(
            // remainder <= q feasibility caps the scale for L = 10, L' = 3
            scale in 0.1_f64..2.9,
        ) {
            let p1 = build_partition(10.0, 3.0).unwrap();
            let p2 = build_partition(10.0 * scale, 3.0 * scale).unwrap();
            prop_assert_eq!(p1.q, p2.q);
            for (b1, b2) in p1.blocks.iter().zip(&p2.blocks) {
                prop_assert!((b1.0 * scale - b2.0).abs() < 1e-9 * scale * 10.0);
                prop_assert!((b1.1 * scale - b2.1).abs() < 1e-9 * scale * 10.0);
            }
        }

        #[test]
        fn spatial_average_is_linear_and_monotone(
            seed in 0u64..1000,
            l in 0.2_f64..1.8,
        ) {
            let grid = GridSpec::with_default_dt(0.1, 8.0, 0.1).unwrap();
            let noise = generate_noise(&grid, seed);
            let row_a: Vec<f64> = (0..grid.n_cells()).map(|j| noise.standard_normal(0, j)).collect();
            let row_b: Vec<f64> = (0..grid.n_cells()).map(|j| noise.standard_normal(1, j).abs()).collect();
            let ia = window_integral(&row_a, &grid, l).unwrap();
            let ib = window_integral(&row_b, &grid, l).unwrap();
            let combined: Vec<f64> = row_a.iter().zip(&row_b).map(|(a, b)| 2.0 * a + 3.0 * b).collect();
            let ic = window_integral(&combined, &grid, l).unwrap();
            prop_assert!((ic - (2.0 * ia + 3.0 * ib)).abs() < 1e-9 * (1.0 + ic.abs()));
            // monotone under pointwise domination
            let dominated: Vec<f64> = row_b.iter().map(|b| b * 0.5).collect();
            let id = window_integral(&dominated, &grid, l).unwrap();
            prop_assert!(id <= ib + 1e-12);
        }
    }
}
