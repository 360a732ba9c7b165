mod common;

use blocklev::linalg::{
    block_leverage_scores, dataset_block_scores, exact_solution, frobenius_block_scores, generate_regression_instance,
    orthonormal_basis, partition, row_leverage_scores, OrthonormalBasis,
};
use nalgebra::{dmatrix, DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn basis_of_scaled_identity() {
    let a = DMatrix::<f64>::identity(3, 3) * 5.0;
    let u = OrthonormalBasis::of_matrix(&a).unwrap();
    let abs = u.u().abs();
    // columns may be permuted or flipped, but each is a unit coordinate vector
    assert!((abs.clone() * abs.transpose() - DMatrix::identity(3, 3)).amax() < 1e-12);
}

#[test]
fn basis_projector_matches_explicit_inverse() {
    let a = dmatrix![1.0, 0.0; 0.0, 1.0; 1.0, 1.0];
    let u = OrthonormalBasis::of_matrix(&a).unwrap();
    let p = u.u() * u.u().transpose();
    assert!((p - common::projector(&a)).amax() < 1e-12);
}

#[test]
fn square_invertible_has_uniform_scores() {
    let a = dmatrix![2.0, 1.0, 0.0; 0.0, 3.0, 1.0; 1.0, 0.0, 1.0];
    let pi = row_leverage_scores(&OrthonormalBasis::of_matrix(&a).unwrap());
    assert!(pi.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
}

#[test]
fn identity_block_scores_and_frobenius() {
    let mut a = DMatrix::zeros(4, 3);
    a.fill_with_identity();
    let ds = partition(a, DVector::zeros(4), 2).unwrap();
    let scores = dataset_block_scores(&ds).unwrap();
    assert!((scores.prob(0) - 2.0 / 3.0).abs() < 1e-12);
    let fro = frobenius_block_scores(&DMatrix::identity(4, 4), &ds).unwrap();
    assert_eq!(fro, vec![2.0, 2.0]);
    let mut m = DMatrix::identity(4, 4);
    m.rows_mut(2, 2).fill(0.0);
    let fro = frobenius_block_scores(&m, &ds).unwrap();
    assert_eq!(fro[1], 0.0);
}

#[test]
fn random_system_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let ds = common::random_dataset(50, 5, 5, &mut rng);
    let x = exact_solution(&ds).unwrap();
    let oracle = common::normal_equations(ds.a(), ds.b());
    assert!((&x - &oracle).norm() <= 1e-8 * oracle.norm());
}

#[test]
fn consistent_system_is_solved_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let ds = common::random_dataset(30, 4, 3, &mut rng);
    let x_true = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
    let ds = ds.with_b(ds.a() * &x_true).unwrap();
    let x = exact_solution(&ds).unwrap();
    assert!((ds.a() * x - ds.b()).norm() <= 1e-8 * ds.b().norm());
}

#[test]
fn benchmark_instance_shape() {
    let spec = blocklev::linalg::InstanceSpec {
        n: 2000,
        d: 40,
        dof: 3.0,
        noise_sigma: 1.0,
        signal_scale: 1.0,
    };
    let inst = generate_regression_instance(&spec, 7).unwrap();
    assert_eq!(inst.a.shape(), (2000, 40));
    assert_eq!(inst.b.len(), 2000);
}

fn matrix_strategy() -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>, usize)> {
    (2usize..5, 2usize..6, 2usize..5).prop_flat_map(|(d, tau, k)| {
        let n = tau * k + 1;
        (
            proptest::collection::vec(-1.0f64..1.0, n * d),
            proptest::collection::vec(-1.0f64..1.0, n),
            Just((n, d, k)),
        )
            .prop_map(|(a, b, (n, d, k))| {
                let mut a = DMatrix::from_vec(n, d, a);
                // keep the matrix well away from rank deficiency
                for j in 0..d {
                    a[(j, j)] += 3.0;
                }
                (a, DVector::from_vec(b), k)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_sum_to_one_and_match_oracle((a, b, k) in matrix_strategy()) {
        let ds = partition(a, b, k).unwrap();
        let basis = orthonormal_basis(&ds).unwrap();
        let pi = row_leverage_scores(&basis);
        prop_assert!((pi.sum() - 1.0).abs() < 1e-12);
        let blocks = block_leverage_scores(&basis, &ds).unwrap();
        let oracle = common::block_leverage_oracle(ds.a(), ds.tau());
        for (p, o) in blocks.probs().iter().zip(&oracle) {
            prop_assert!((p - o).abs() < 1e-10);
        }
        let fro = frobenius_block_scores(basis.u(), &ds).unwrap();
        for (p, f) in blocks.probs().iter().zip(&fro) {
            prop_assert!((p - f / ds.d() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_is_orthonormal_and_padding_is_inert((a, b, k) in matrix_strategy()) {
        let ds = partition(a, b, k).unwrap();
        prop_assert_eq!(ds.n() % k, 0);
        let basis = orthonormal_basis(&ds).unwrap();
        let gram = basis.u().tr_mul(basis.u());
        prop_assert!((gram - DMatrix::identity(ds.d(), ds.d())).amax() <= 1e-10);
        let pi = row_leverage_scores(&basis);
        for i in ds.raw_rows()..ds.n() {
            prop_assert!(pi[i].abs() < 1e-14);
        }
    }

    #[test]
    fn scores_invariant_under_right_multiplication(
        (a, b, k) in matrix_strategy(),
        m in proptest::collection::vec(-1.0f64..1.0, 16),
    ) {
        let d = a.ncols();
        let mut mix = DMatrix::from_fn(d, d, |i, j| m[(i * 4 + j) % 16]);
        for i in 0..d {
            mix[(i, i)] += 4.0;
        }
        let ds1 = partition(a.clone(), b.clone(), k).unwrap();
        let ds2 = partition(a * mix, b, k).unwrap();
        let p1 = dataset_block_scores(&ds1).unwrap();
        let p2 = dataset_block_scores(&ds2).unwrap();
        for (x, y) in p1.probs().iter().zip(p2.probs()) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn solution_residual_is_orthogonal((a, b, k) in matrix_strategy()) {
        let ds = partition(a, b, k).unwrap();
        let x = exact_solution(&ds).unwrap();
        let normal = ds.a().tr_mul(&(ds.a() * &x - ds.b()));
        let scale = ds.a().norm() * ds.b().norm();
        prop_assert!(normal.norm() <= 1e-8 * scale.max(1.0));
    }
}
