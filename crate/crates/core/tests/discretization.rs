use std::f64::consts::PI;

use lod_ocp::assembly::{assemble_load, AssembledOperators};
use lod_ocp::coeff::CoefficientField;
use lod_ocp::grid::GridPair;
use lod_ocp::interp::InterpOperators;
use lod_ocp::linalg::dot;

fn sinsin(grid: &GridPair) -> Vec<f64> {
    (0..grid.n_fine())
        .map(|f| {
            let [x, y] = grid.fine_node_position(f);
            (PI * x).sin() * (PI * y).sin()
        })
        .collect()
}

#[test]
fn nested_grid_counts_and_node_maps() {
    let g = GridPair::build_nested(4, 3).unwrap();
    assert_eq!(g.fine_cells(), 12);
    assert_eq!(g.n_fine(), 121);
    assert_eq!(g.n_coarse(), 9);
    for c in 0..g.n_coarse() {
        let f = g.coarse_to_fine(c);
        assert_eq!(g.fine_to_coarse(f), Some(c));
        assert_eq!(g.coarse_node_position(c), g.fine_node_position(f));
    }
    assert!(g.coarse_node_index(0, 2).is_none());
    assert!(g.coarse_node_index(4, 2).is_none());
    assert!(GridPair::build_nested(1, 4).is_err());
    assert!(GridPair::build_nested(4, 0).is_err());
}

#[test]
fn patch_layers_grow_outwards() {
    let g = GridPair::build_nested(6, 2).unwrap();
    let centre = g.coarse_node_index(3, 3).unwrap();
    let corner = g.coarse_node_index(1, 1).unwrap();
    assert!(g.max_layer(corner) > g.max_layer(centre));
    let dists: Vec<usize> = (0..g.fine_elements().len()).map(|e| g.layer_distance(centre, e)).collect();
    assert_eq!(dists.iter().filter(|&&d| d == 0).count(), 4 * 4);
    assert_eq!(*dists.iter().max().unwrap(), g.max_layer(centre));
}

#[test]
fn interpolation_is_a_projection_onto_coarse_space() {
    let g = GridPair::build_nested(4, 4).unwrap();
    let ip = InterpOperators::build(&g);
    let pp = ip.pi.matmul(&ip.p).to_dense();
    let m = g.n_coarse();
    for i in 0..m {
        for j in 0..m {
            let target = if i == j { 1.0 } else { 0.0 };
            assert!((pp[(i, j)] - target).abs() < 1e-12, "({i},{j}) {}", pp[(i, j)]);
        }
    }
    assert_eq!(ip.ell(), g.n_fine() - m);
}

#[test]
fn kernel_parametrization_lies_in_kernel_and_is_adjoint() {
    let g = GridPair::build_nested(4, 3).unwrap();
    let ip = InterpOperators::build(&g);
    let c: Vec<f64> = (0..ip.ell()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
    let z = ip.z_mul(&c);
    let pz = ip.pi.mul_vec(&z);
    assert!(pz.iter().all(|v| v.abs() < 1e-12));
    let y: Vec<f64> = (0..g.n_fine()).map(|i| ((i * 31) % 11) as f64 * 0.1).collect();
    let lhs = dot(&z, &y);
    let rhs = dot(&c, &ip.zt_mul(&y));
    assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    for (a, b) in ip.kernel_coords(&z).iter().zip(&c) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn laplacian_and_mass_reproduce_integrals() {
    let g = GridPair::build_nested(8, 4).unwrap();
    let field = CoefficientField::constant(1.0).unwrap();
    let ops = AssembledOperators::assemble(&g, &field);
    let u = sinsin(&g);
    let energy = dot(&u, &ops.stiffness.mul_vec(&u));
    let mass = dot(&u, &ops.mass.mul_vec(&u));
    assert!((energy / (PI * PI / 2.0) - 1.0).abs() < 5e-3, "{energy}");
    assert!((mass / 0.25 - 1.0).abs() < 5e-3, "{mass}");
    assert!(ops.stiffness.symmetry_defect() < 1e-14);
    assert!(ops.mass.symmetry_defect() < 1e-14);
    let load = assemble_load(&g, &|x| (PI * x[0]).sin() * (PI * x[1]).sin());
    assert!((dot(&load, &u) / 0.25 - 1.0).abs() < 5e-3);
}

#[test]
fn stiffness_scales_linearly_with_the_field() {
    let g = GridPair::build_nested(4, 2).unwrap();
    let f = CoefficientField::oscillatory(0.08).unwrap();
    let a = AssembledOperators::assemble(&g, &f).stiffness;
    let b = AssembledOperators::assemble(&g, &f.scaled(3.0)).stiffness;
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((3.0 * x - y).abs() < 1e-12 * y.abs().max(1.0));
    }
}

#[test]
fn coefficient_fields_respect_bounds_and_round_trip() {
    let osc = CoefficientField::oscillatory(0.04).unwrap();
    let (lo, hi) = osc.bounds();
    for i in 0..200 {
        let x = [i as f64 / 199.0, (i * 37 % 200) as f64 / 199.0];
        let [a, b] = osc.eval(x);
        assert_eq!(a, b);
        assert!(a >= lo - 1e-12 && a <= hi + 1e-12);
    }
    let het = CoefficientField::block_random(7, 10, 1.0, 1350.0).unwrap();
    let again = CoefficientField::block_random(7, 10, 1.0, 1350.0).unwrap();
    let other = CoefficientField::block_random(8, 10, 1.0, 1350.0).unwrap();
    assert_eq!(het, again);
    assert_ne!(het, other);
    let (lo, hi) = het.bounds();
    assert!(lo >= 1.0 && hi <= 1350.0 && lo < hi);
    assert_eq!(CoefficientField::from_columns(&het.to_columns()).unwrap(), het);
    assert_eq!(CoefficientField::from_columns(&osc.to_columns()).unwrap(), osc);
    assert!(CoefficientField::constant(-1.0).is_err());
    assert!(CoefficientField::oscillatory(0.0).is_err());
    assert!(CoefficientField::block_random(1, 4, 2.0, 1.0).is_err());
}
