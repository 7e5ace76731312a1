//! Property tests for the structural invariants: skew/symmetric splits,
//! line-integral reconstruction of the flow, subspace algebra, gains
//! round-trips and lossless serialization.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use saddleflow::dynamics::csv::{trajectory_from_csv, trajectory_to_csv};
use saddleflow::dynamics::{Trajectory, TrajectoryMeta};
use saddleflow::expm::matexp_action;
use saddleflow::harness::generate;
use saddleflow::model::{
    finite_diff_gradient, flow_from_line_integral, GainVector, PolynomialSaddle, SaddleProblem,
};
use saddleflow::rng::CounterRng;
use saddleflow::subspace::{
    invariance_residual, maximal_invariant_subspace, nullspace, operator_norm, Subspace,
};

fn random_skew(rng: &mut CounterRng, n: usize) -> DMatrix<f64> {
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 2.0 * rng.next_f64() - 1.0;
            a[(i, j)] = v;
            a[(j, i)] = -v;
        }
    }
    a
}

fn random_state(rng: &mut CounterRng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * (2.0 * rng.next_f64() - 1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn coupling_skew_curvature_semidefinite(seed in any::<u64>()) {
        let mut rng = CounterRng::from_seed(seed);
        let n = 1 + (rng.next_u64() as usize) % 4;
        let m = 1 + (rng.next_u64() as usize) % 4;
        let q = generate::random_quadratic(&mut rng, n, m);
        let z = random_state(&mut rng, n + m, 2.0);
        let a = q.coupling(&z).unwrap();
        let b = q.curvature(&z).unwrap();
        prop_assert!((&a + a.transpose()).amax() < 1e-12);
        prop_assert!((&b - b.transpose()).amax() < 1e-12);
        let max_eig = b.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(max_eig <= 1e-8, "curvature eigenvalue {max_eig}");
    }

    #[test]
    fn flow_matches_line_integral_reconstruction(seed in any::<u64>()) {
        // The decomposition flow = coupling(saddle) * w + integral of the
        // shifted curvature along the ray, on a problem with nonconstant
        // Hessian.
        let mut rng = CounterRng::from_seed(seed);
        let p = PolynomialSaddle::quartic_example();
        let z_ref = DVector::zeros(2);
        let z = random_state(&mut rng, 2, 1.5);
        let direct = p.flow_field(&z).unwrap();
        let reconstructed = flow_from_line_integral(&p, &z_ref, &z, 128).unwrap();
        prop_assert!((direct - reconstructed).norm() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = CounterRng::from_seed(seed);
        let p = PolynomialSaddle::quartic_example();
        let z = random_state(&mut rng, 2, 1.5);
        let g = p.gradient(&z).unwrap();
        let fd = finite_diff_gradient(&|w| p.value(w), &z).unwrap();
        prop_assert!((g.clone() - fd).norm() <= 1e-5 * (1.0 + g.norm()));
    }

    #[test]
    fn gains_round_trip_recovers_flow(seed in any::<u64>()) {
        let mut rng = CounterRng::from_seed(seed);
        let n = 1 + (rng.next_u64() as usize) % 3;
        let m = 1 + (rng.next_u64() as usize) % 3;
        let q = generate::random_quadratic(&mut rng, n, m);
        let gains = generate::random_gains(&mut rng, n, m);
        let round_trip = q
            .apply_gains(&gains)
            .unwrap()
            .apply_gains(&gains.inverse())
            .unwrap();
        let z = random_state(&mut rng, n + m, 2.0);
        let f0 = q.flow_field(&z).unwrap();
        let f1 = round_trip.flow_field(&z).unwrap();
        prop_assert!((f0 - f1).norm() < 1e-12);
    }

    #[test]
    fn gains_transform_field_identity(seed in any::<u64>()) {
        // Lambda * F'(Lambda^{-1} z) = diag(gamma) * F(z) pointwise.
        let mut rng = CounterRng::from_seed(seed);
        let n = 1 + (rng.next_u64() as usize) % 3;
        let m = 1 + (rng.next_u64() as usize) % 3;
        let q = generate::random_quadratic(&mut rng, n, m);
        let gains = generate::random_gains(&mut rng, n, m);
        let transformed = q.apply_gains(&gains).unwrap();
        let lambda = gains.lambda();
        let z = random_state(&mut rng, n + m, 2.0);
        let lhs = transformed
            .flow_field(&z.component_div(&lambda))
            .unwrap()
            .component_mul(&lambda);
        let rhs = q.flow_field(&z).unwrap().component_mul(&gains.concatenated());
        prop_assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn unit_gains_are_identity(seed in any::<u64>()) {
        let mut rng = CounterRng::from_seed(seed);
        let q = generate::random_quadratic(&mut rng, 2, 2);
        let transformed = q.apply_gains(&GainVector::ones(2, 2)).unwrap();
        let z = random_state(&mut rng, 4, 2.0);
        let d = (q.flow_field(&z).unwrap() - transformed.flow_field(&z).unwrap()).norm();
        prop_assert!(d < 1e-14);
    }

    #[test]
    fn projectors_idempotent_and_symmetric(seed in any::<u64>()) {
        let mut rng = CounterRng::from_seed(seed);
        let n = 2 + (rng.next_u64() as usize) % 6;
        let k = 1 + (rng.next_u64() as usize) % n;
        let cols = DMatrix::from_fn(n, k, |_, _| rng.next_normal());
        let s = Subspace::from_spanning(&cols).unwrap();
        let p = s.projector();
        prop_assert!(operator_norm(&(&p * &p - &p)) < 1e-10);
        prop_assert!((&p - p.transpose()).amax() < 1e-12);
        // Complement projector sums to the identity.
        let pc = s.complement().projector();
        prop_assert!((p + pc - DMatrix::<f64>::identity(n, n)).amax() < 1e-10);
    }

    #[test]
    fn nullspace_vectors_are_annihilated(seed in any::<u64>()) {
        let mut rng = CounterRng::from_seed(seed);
        let rows = 1 + (rng.next_u64() as usize) % 6;
        let cols = 1 + (rng.next_u64() as usize) % 6;
        let rank = (rng.next_u64() as usize) % (rows.min(cols) + 1);
        // Build a matrix of known rank from an outer product.
        let mut m = DMatrix::<f64>::zeros(rows, cols);
        for _ in 0..rank {
            let u = DVector::from_fn(rows, |_, _| rng.next_normal());
            let v = DVector::from_fn(cols, |_, _| rng.next_normal());
            m += u * v.transpose();
        }
        let ns = nullspace(&m).unwrap();
        for j in 0..ns.dim() {
            let v = ns.basis().column(j).into_owned();
            prop_assert!((&m * v).norm() < 1e-8 * (1.0 + operator_norm(&m)));
        }
        prop_assert!(ns.dim() >= cols - rank, "kernel cannot be smaller than cols - rank");
    }

    #[test]
    fn invariant_subspace_is_contained_and_invariant(seed in any::<u64>()) {
        let mut rng = CounterRng::from_seed(seed);
        let n = 2 + (rng.next_u64() as usize) % 6;
        let a = random_skew(&mut rng, n);
        let k = 1 + (rng.next_u64() as usize) % n;
        let cols = DMatrix::from_fn(n, k, |_, _| rng.next_normal());
        let x = Subspace::from_spanning(&cols).unwrap();
        let y = maximal_invariant_subspace(&a, &x).unwrap();
        prop_assert!(x.contains_subspace(&y, 1e-8));
        prop_assert!(invariance_residual(&a, &y) < 1e-8);
    }

    #[test]
    fn matexp_action_preserves_norm_for_skew(seed in any::<u64>(), t in -8.0..8.0f64) {
        let mut rng = CounterRng::from_seed(seed);
        let n = 2 + (rng.next_u64() as usize) % 5;
        let a = random_skew(&mut rng, n);
        let v = DVector::from_fn(n, |_, _| rng.next_normal());
        let w = matexp_action(&a, t, &v).unwrap();
        prop_assert!((w.norm() - v.norm()).abs() < 1e-9 * (1.0 + t.abs()));
    }

    #[test]
    fn trajectory_csv_round_trip_is_bit_exact(seed in any::<u64>(), len in 2usize..40) {
        let mut rng = CounterRng::from_seed(seed);
        let dim = 1 + (rng.next_u64() as usize) % 5;
        let mut t = 0.0;
        let mut times = Vec::with_capacity(len);
        let mut states = Vec::with_capacity(len);
        for _ in 0..len {
            t += 1e-6 + rng.next_f64();
            times.push(t);
            states.push(DVector::from_fn(dim, |_, _| 1e3 * (2.0 * rng.next_f64() - 1.0)));
        }
        let traj = Trajectory::new(times, states, TrajectoryMeta::external("prop")).unwrap();
        let text = trajectory_to_csv(&traj);
        let back = trajectory_from_csv(&text).unwrap();
        prop_assert_eq!(traj.times(), back.times());
        for (a, b) in traj.states().iter().zip(back.states()) {
            prop_assert_eq!(a.as_slice(), b.as_slice());
        }
    }
}
