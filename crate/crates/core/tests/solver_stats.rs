//! Statistical validation of the noise generator and the two solvers:
//! chi-square and correlation checks on the increments, moment
//! preservation, spatial stationarity, the exactly Gaussian constant-sigma
//! benchmark, and the cross-validation between the finite-difference and
//! mild schemes on coupled noise.

mod support;

use rayon::prelude::*;
use shelab_core::harness::ks_normal;
use shelab_core::kernel::pam_second_moment;
use shelab_core::solver::{
    generate_noise, replica_seed, solve_fd, solve_fd_record, solve_mild, GridSpec, ModelSpec,
    RecordSpec,
};
use shelab_core::stats;
use support::{LatticeCovariance, LatticeModel};

#[test]
fn noise_variance_passes_chi_square_band() {
    // 1e6 increments: sample variance / (dt dx) within 1 +- 0.005
    // (the 3-sigma chi-square band is +-0.0042)
    let grid = GridSpec::with_default_dt(0.1, 50.0, 5.0).unwrap();
    let noise = generate_noise(&grid, 7);
    let n = 1_000_000usize;
    let nx = grid.n_cells();
    let mut acc = 0.0;
    for i in 0..n {
        let v = noise.increment(i / nx, i % nx);
        acc += v * v;
    }
    let scale = grid.dt * grid.dx;
    let ratio = acc / n as f64 / scale;
    assert!((ratio - 1.0).abs() < 0.005, "variance ratio {ratio}");
}

#[test]
fn adjacent_noise_cells_are_uncorrelated() {
    // sample correlation of 1e6 spatial neighbour pairs within 0 +- 0.004
    let grid = GridSpec::with_default_dt(0.1, 60.0, 5.0).unwrap();
    let noise = generate_noise(&grid, 13);
    let nx = grid.n_cells();
    let n = 1_000_000usize;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (row, col) = (i / (nx - 1), i % (nx - 1));
        let a = noise.standard_normal(row, col);
        let b = noise.standard_normal(row, col + 1);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    let corr = sxy / (sxx * syy).sqrt();
    assert!(corr.abs() < 0.004, "neighbour correlation {corr}");
}

#[test]
fn pam_mean_is_preserved_within_three_se() {
    let grid = GridSpec::with_default_dt(0.05, 8.0, 1.0).unwrap();
    let model = ModelSpec::pam();
    let cell = grid.cell_of(0.0).unwrap();
    let replicas = 4000usize;
    let values: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let noise = generate_noise(&grid, replica_seed(11, r as u64));
            solve_fd(&grid, &model, &noise).unwrap().final_row()[cell]
        })
        .collect();
    let mean = stats::mean(&values);
    let se = stats::se_of_mean(&values);
    assert!(
        (mean - 1.0).abs() < 3.0 * se,
        "mean {mean}, se {se} (deviation {:.2} se)",
        (mean - 1.0).abs() / se
    );
}

#[test]
fn pam_second_moment_tracks_renewal_oracle() {
    // moderate grid: the lattice bias plus Monte Carlo noise stays within
    // a few percent of the continuum renewal value at t = 1
    let grid = GridSpec::with_default_dt(0.05, 8.0, 1.0).unwrap();
    let model = ModelSpec::pam();
    let cell = grid.cell_of(0.0).unwrap();
    let replicas = 4000usize;
    let sq: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let noise = generate_noise(&grid, replica_seed(17, r as u64));
            let v = solve_fd(&grid, &model, &noise).unwrap().final_row()[cell];
            v * v
        })
        .collect();
    let mean = stats::mean(&sq);
    let se = stats::se_of_mean(&sq);
    let oracle = pam_second_moment(1.0).unwrap();
    // lattice bias at dx = 0.05 is about +1.5%; allow bias plus 3 se
    assert!(
        (mean - oracle).abs() < 0.04 + 3.0 * se,
        "E[u^2] = {mean} vs oracle {oracle} (se {se})"
    );
}

#[test]
fn spatial_stationarity_between_center_and_half_domain() {
    let grid = GridSpec::with_default_dt(0.05, 8.0, 0.5).unwrap();
    let model = ModelSpec::pam();
    let c0 = grid.cell_of(0.0).unwrap();
    let c1 = grid.cell_of(4.0).unwrap();
    let replicas = 4000usize;
    let pairs: Vec<(f64, f64)> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let noise = generate_noise(&grid, replica_seed(23, r as u64));
            let row = solve_fd(&grid, &model, &noise).unwrap();
            (row.final_row()[c0], row.final_row()[c1])
        })
        .collect();
    let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (ma, mb) = (stats::mean(&a), stats::mean(&b));
    let se = (stats::se_of_mean(&a).powi(2) + stats::se_of_mean(&b).powi(2)).sqrt();
    assert!((ma - mb).abs() < 3.0 * se, "means {ma} vs {mb}, se {se}");
    let (va, vb) = (stats::sample_variance(&a), stats::sample_variance(&b));
    let sev = (stats::se_of_variance(&a).powi(2) + stats::se_of_variance(&b).powi(2)).sqrt();
    assert!((va - vb).abs() < 3.0 * sev, "variances {va} vs {vb}, se {sev}");
}

#[test]
fn constant_sigma_field_is_exactly_gaussian() {
    // u - 1 is Gaussian at every cell for sigma = 1; KS at the 1% level
    // over 1e4 replicas, normalised by the exact lattice variance
    let grid = GridSpec::with_default_dt(0.05, 7.0, 1.0).unwrap();
    let model = ModelSpec::constant(1.0);
    assert!(model.is_reference_only());
    let cell = grid.cell_of(0.0).unwrap();
    let replicas = 10_000usize;
    let values: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let noise = generate_noise(&grid, replica_seed(31, r as u64));
            solve_fd(&grid, &model, &noise).unwrap().final_row()[cell]
        })
        .collect();
    let max_lag = ((8.0 * std::f64::consts::SQRT_2) / grid.dx).ceil() as usize + 8;
    let lat = LatticeCovariance::evolve(grid.dx, grid.dt, 1.0, LatticeModel::ConstantSigma(1.0), max_lag);
    let sd = lat.cov[0].sqrt();
    let z: Vec<f64> = values.iter().map(|v| (v - 1.0) / sd).collect();
    let (d, p) = ks_normal(&z).unwrap();
    assert!(p > 0.01, "KS D = {d}, p = {p}");
}

#[test]
fn pam_negative_fraction_decreases_under_refinement() {
    let mut fractions = Vec::new();
    for &dx in &[0.2_f64, 0.1, 0.05] {
        let grid = GridSpec::with_default_dt(dx, 8.0, 1.0).unwrap();
        let model = ModelSpec::pam();
        let replicas = 200usize;
        let (mut neg, mut total) = (0u64, 0u64);
        for r in 0..replicas {
            let noise = generate_noise(&grid, replica_seed(37, r as u64));
            let field = solve_fd(&grid, &model, &noise).unwrap();
            neg += field.negative_cells;
            total += (grid.n_cells() * grid.n_steps()) as u64;
        }
        fractions.push(neg as f64 / total as f64);
    }
    assert!(
        fractions[0] > fractions[1] && fractions[1] > fractions[2],
        "negative fractions {fractions:?}"
    );
}

#[test]
fn mild_scheme_cross_validates_against_fd() {
    // Coupled noise on a padded torus. Successive Picard increments
    // contract geometrically; the depth-6 field is the mild fixed point
    // for all practical purposes. The remaining gap to the
    // finite-difference field is the scheme difference: it does not shrink
    // with depth (the two discretisations differ at the kernel level), but
    // it shrinks with dx and stays far below the field's own fluctuation
    // scale.
    let grid = GridSpec::with_default_dt(0.05, 4.0, 0.25).unwrap();
    let model = ModelSpec::pam();
    let noise = generate_noise(&grid, 101);
    let fd = solve_fd(&grid, &model, &noise).unwrap();

    let depths: Vec<_> = (4..=6)
        .map(|d| solve_mild(&grid, &model, &noise, None, d).unwrap())
        .collect();
    let msd = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
    };
    let inc_45 = msd(depths[0].final_row(), depths[1].final_row());
    let inc_56 = msd(depths[1].final_row(), depths[2].final_row());
    assert!(
        inc_56 < 0.25 * inc_45,
        "Picard increments not contracting: {inc_45} -> {inc_56}"
    );

    let ones = vec![1.0; grid.n_cells()];
    let gap = msd(fd.final_row(), depths[2].final_row());
    let fluctuation = msd(fd.final_row(), &ones);
    assert!(
        gap < 0.1 * fluctuation,
        "scheme gap {gap} not small next to the fluctuation scale {fluctuation}"
    );

    // refinement trend of the scheme gap
    let grid2 = GridSpec::with_default_dt(0.1, 4.0, 0.25).unwrap();
    let noise2 = generate_noise(&grid2, 101);
    let fd2 = solve_fd(&grid2, &model, &noise2).unwrap();
    let mild2 = solve_mild(&grid2, &model, &noise2, None, 6).unwrap();
    let gap_coarse = msd(fd2.final_row(), mild2.final_row());
    assert!(
        gap < gap_coarse,
        "gap did not shrink with dx: {gap} vs {gap_coarse}"
    );
}

#[test]
fn fd_window_variance_matches_exact_lattice_recursion() {
    // Monte Carlo window-integral variance against the closed covariance
    // recursion of the same scheme: agreement within Monte Carlo error.
    let grid = GridSpec::with_default_dt(0.1, 12.0, 1.0).unwrap();
    let model = ModelSpec::pam();
    let l = 4.0;
    let replicas = 3000usize;
    let integrals: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let noise = generate_noise(&grid, replica_seed(41, r as u64));
            let field = solve_fd(&grid, &model, &noise).unwrap();
            shelab_core::windows::window_integral(field.final_row(), &grid, l).unwrap()
        })
        .collect();
    let var_mc = stats::sample_variance(&integrals);
    let se = stats::se_of_variance(&integrals);
    let max_lag = ((8.0 * std::f64::consts::SQRT_2) / grid.dx).ceil() as usize + 8;
    let lat = LatticeCovariance::evolve(grid.dx, grid.dt, 1.0, LatticeModel::Pam, max_lag);
    let var_exact = lat.window_variance((2.0 * l / grid.dx).round() as usize);
    assert!(
        (var_mc - var_exact).abs() < 4.0 * se,
        "MC {var_mc} vs recursion {var_exact} (se {se})"
    );
}

#[test]
fn probe_traces_record_every_step() {
    let grid = GridSpec::with_default_dt(0.1, 4.0, 0.2).unwrap();
    let noise = generate_noise(&grid, 3);
    let record = RecordSpec {
        snapshot_steps: vec![0, grid.n_steps()],
        probe_cells: vec![grid.cell_of(0.0).unwrap()],
    };
    let run = solve_fd_record(&grid, &ModelSpec::pam(), &noise, &record).unwrap();
    assert_eq!(run.traces[0].len(), grid.n_steps() + 1);
    assert_eq!(run.traces[0][0], 1.0);
    assert_eq!(run.field.times.len(), 2);
    assert_eq!(run.field.values[0], vec![1.0; grid.n_cells()]);
}
