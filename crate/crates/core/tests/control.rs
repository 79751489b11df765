use lod_ocp::assembly::{assemble_load, AssembledOperators};
use lod_ocp::control::{
    compute_errors, rescale_problem, unscale_solution, DesiredState, Example, Mode, Pipeline,
    ProblemConfig,
};
use lod_ocp::grid::GridPair;
use lod_ocp::linalg::{dot, norm2, LinearOperator};
use lod_ocp::multiscale::CorrectorKind;
use lod_ocp::saddle::SaddleOperator;
use nalgebra::{DMatrix, DVector};

fn oscillatory(n: usize, r: usize) -> ProblemConfig {
    ProblemConfig::new(Example::Oscillatory { epsilon: 0.08 }, n, r)
        .with_desired(DesiredState::Constant(-1.0))
}

/// Dense solve of `[[A, M], [M, -γA]] [p; y] = [L; 0]` assembled from scratch.
fn dense_kkt(n: usize, r: usize, example: &Example, gamma: f64, y_d: f64) -> Vec<f64> {
    let grid = GridPair::build_nested(n, r).unwrap();
    let ops = AssembledOperators::assemble(&grid, &example.field().unwrap());
    let a = ops.stiffness.to_dense();
    let m = ops.mass.to_dense();
    let dim = grid.n_fine();
    let mut k = DMatrix::zeros(2 * dim, 2 * dim);
    k.view_mut((0, 0), (dim, dim)).copy_from(&a);
    k.view_mut((0, dim), (dim, dim)).copy_from(&m);
    k.view_mut((dim, 0), (dim, dim)).copy_from(&m);
    k.view_mut((dim, dim), (dim, dim)).copy_from(&(a * -gamma));
    let load = assemble_load(&grid, &|_| y_d);
    let mut rhs = DVector::zeros(2 * dim);
    rhs.rows_mut(0, dim).copy_from_slice(&load);
    k.lu().solve(&rhs).unwrap().iter().copied().collect()
}

#[test]
fn fine_reference_matches_dense_oracle_for_small_gamma() {
    let gamma = 1e-2;
    let mut cfg = oscillatory(4, 4);
    cfg.gamma = gamma;
    let p = Pipeline::new(cfg.clone()).unwrap();
    let fine = p.solve_fine().unwrap();
    let oracle = dense_kkt(4, 4, &cfg.example, gamma, -1.0);
    let err: f64 = fine.solution.as_slice().iter().zip(&oracle).map(|(a, b)| (a - b).powi(2)).sum();
    assert!(err.sqrt() < 1e-8 * norm2(&oracle));
    let n = p.grid.n_fine();
    for (u, pv) in fine.control.iter().zip(&fine.solution.as_slice()[..n]) {
        assert!((u - pv / gamma).abs() < 1e-9 * (1.0 + u.abs()));
    }
}

#[test]
fn ideal_solution_agrees_with_kernel_route_under_rescaling() {
    let mut cfg = oscillatory(4, 4).with_mode(Mode::Ideal);
    cfg.gamma = 0.05;
    let p = Pipeline::new(cfg).unwrap();
    let fine = p.solve_fine().unwrap();
    let ms = p.solve_multiscale().unwrap();
    let via = p.ideal_from_fine(&fine.solution).unwrap();
    let (e, _) = compute_errors(&ms.solution, &via, &p.ops).unwrap();
    assert!(e < 1e-7, "{e}");
}

#[test]
fn rescaling_round_trip() {
    let cfg = oscillatory(4, 2);
    let tau = 3.0;
    let scaled = rescale_problem(&cfg, tau).unwrap();
    assert!((scaled.gamma - cfg.gamma / 9.0).abs() < 1e-15);
    assert_eq!(scaled.field_scale, 3.0);
    let base = Pipeline::new(cfg).unwrap().solve_fine().unwrap();
    let other = Pipeline::new(scaled).unwrap().solve_fine().unwrap();
    let back = unscale_solution(&other.solution, tau);
    let (e, l) = compute_errors(&base.solution, &back, &Pipeline::new(oscillatory(4, 2)).unwrap().ops).unwrap();
    assert!(e < 1e-8 && l < 1e-8, "{e} {l}");
    assert!(rescale_problem(&oscillatory(4, 2), 0.0).is_err());
}

#[test]
fn multiscale_error_is_galerkin_orthogonal_to_the_basis() {
    let p = Pipeline::new(oscillatory(4, 4).with_mode(Mode::Localized(2))).unwrap();
    let fine = p.solve_fine().unwrap();
    let system = p.reduced_system(CorrectorKind::Localized(2)).unwrap();
    let ms = p.solve_reduced(&system, &p.load).unwrap();
    let b = SaddleOperator {
        a: &p.ops.stiffness,
        m: &p.ops.mass,
        gamma: 1.0,
    };
    let diff: Vec<f64> = fine
        .solution
        .as_slice()
        .iter()
        .zip(ms.solution.as_slice())
        .map(|(a, b)| a - b)
        .collect();
    let bd = b.apply_vec(&diff);
    let scale = norm2(&b.apply_vec(fine.solution.as_slice()));
    for j in 0..system.basis.dim() {
        let col = system.basis.column(j);
        let g = dot(&col, &bd) / (scale * norm2(&col));
        assert!(g.abs() < 1e-8, "basis {j}: {g}");
    }
}

#[test]
fn well_posedness_bound_holds() {
    for example in [Example::Oscillatory { epsilon: 0.08 }, Example::heterogeneous(3)] {
        let mut cfg = ProblemConfig::new(example, 4, 4);
        cfg.gamma = 0.1;
        let p = Pipeline::new(cfg).unwrap();
        let fine = p.solve_fine().unwrap();
        let w = p.well_posedness(&fine).unwrap();
        assert!(w.lhs > 0.0 && w.holds(1e-10), "{w:?}");
    }
}

#[test]
fn localized_error_decreases_with_steps() {
    let p = Pipeline::new(oscillatory(4, 8)).unwrap();
    let fine = p.solve_fine().unwrap();
    let mut last = f64::INFINITY;
    for k in 1..=4 {
        let sys = p.reduced_system(CorrectorKind::Localized(k)).unwrap();
        let ms = p.solve_reduced(&sys, &p.load).unwrap();
        let (e, _) = compute_errors(&fine.solution, &ms.solution, &p.ops).unwrap();
        assert!(e <= last * 1.05, "k = {k}: {e} after {last}");
        last = e;
    }
    let ideal = p.ideal_from_fine(&fine.solution).unwrap();
    let (e, _) = compute_errors(&fine.solution, &ideal, &p.ops).unwrap();
    assert!(e <= last * 1.05);
}

#[test]
fn invalid_problems_are_rejected() {
    let mut cfg = oscillatory(4, 4);
    cfg.gamma = -1.0;
    assert!(Pipeline::new(cfg).is_err());
    assert!(Pipeline::new(oscillatory(4, 4).with_mode(Mode::LocalizedAuto(0))).is_err());
    assert!(Pipeline::new(oscillatory(1, 4)).is_err());
}
