mod common;

use bearing_consensus::dkf::{consensus_round, metropolis_weights, InformationPair, STATE_DIM};
use bearing_consensus::gain_design::{
    build_qbar, build_transformation, build_xi, closed_form_sigma, consensus_alpha_bound, schur_pd_check, ObserverGains,
};
use bearing_consensus::graph::{CommGraph, Edge};
use bearing_consensus::numerics::{kron, projection_matrix, sym_eigen, Matrix, SymMatrix};
use bearing_consensus::observer::{correction_term, AgentState, Measurement, NeighborEstimate};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn max_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().max_abs()
}

fn gains_strategy(max_order: usize) -> impl Strategy<Value = ObserverGains> {
    (1..=max_order)
        .prop_flat_map(|m| {
            (
                prop::collection::vec(0.1f64..10.0, m),
                0.1f64..20.0,
                0.05f64..2.0,
                0.01f64..0.5,
            )
        })
        .prop_map(|(k, a, d, g)| ObserverGains::new(k, a, d, g).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigenvalues_agree_with_sturm_oracle(seed in any::<u64>(), n in 1usize..9) {
        let a = random_symmetric(&mut rng(seed), n, 5.0);
        let mine = sym_eigen(&a).unwrap().eigenvalues;
        let oracle = sturm_eigenvalues(&rows_of(a.as_matrix()));
        for (x, y) in mine.iter().zip(&oracle) {
            prop_assert!((x - y).abs() <= 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn projection_has_trace_two_and_is_idempotent(seed in any::<u64>()) {
        let b = random_unit(&mut rng(seed));
        let p = projection_matrix(&b).unwrap();
        let trace: f64 = (0..3).map(|i| p[(i, i)]).sum();
        prop_assert!((trace - 2.0).abs() < 1e-12);
        let pp = p.as_matrix().matmul(p.as_matrix()).unwrap();
        prop_assert!(max_diff(&pp, p.as_matrix()) < 1e-12);
        let pb = p.as_matrix().mul_vec(&b).unwrap();
        prop_assert!(pb.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn kron_mixed_product(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_matrix(&mut r, 2, 3, 1.0);
        let b = random_matrix(&mut r, 2, 2, 1.0);
        let c = random_matrix(&mut r, 3, 2, 1.0);
        let d = random_matrix(&mut r, 2, 3, 1.0);
        let lhs = kron(&a, &b).matmul(&kron(&c, &d)).unwrap();
        let rhs = kron(&a.matmul(&c).unwrap(), &b.matmul(&d).unwrap());
        prop_assert!(max_diff(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn laplacian_spectral_identities(seed in any::<u64>(), n in 2usize..10) {
        let g = random_connected_graph(&mut rng(seed), n);
        let l = g.laplacian();
        let ones = vec![1.0; n];
        prop_assert!(l.as_matrix().mul_vec(&ones).unwrap().iter().all(|x| x.abs() < 1e-12));
        prop_assert!(g.is_connected());
        prop_assert!(g.lambda_min_positive().unwrap() > 0.0);

        let u = g.u_matrix();
        let avg = Matrix::from_rows(&vec![vec![1.0 / n as f64; n]; n]).unwrap();
        let id = avg.add(&u.matmul(&u.transpose()).unwrap()).unwrap();
        prop_assert!(max_diff(&id, &Matrix::identity(n)) <= 1e-9);
        prop_assert!(max_diff(&u.transpose().matmul(u).unwrap(), &Matrix::identity(n - 1)) <= 1e-9);
        let ut1 = u.transpose().mul_vec(&ones).unwrap();
        prop_assert!(ut1.iter().all(|x| x.abs() <= 1e-9));
        let ulu = u.transpose().matmul(l.as_matrix()).unwrap().matmul(u).unwrap();
        prop_assert!(max_diff(&ulu, &Matrix::from_diag(g.lambda())) <= 1e-9);
    }

    #[test]
    fn similarity_matches_closed_form(gains in gains_strategy(4), w in 1usize..4, seed in any::<u64>()) {
        let phi = random_spd(&mut rng(seed), w, 0.1);
        let p = build_transformation(&gains, w);
        let lhs = p.matrix().matmul(&build_xi(&gains, &phi)).unwrap().matmul(p.inverse()).unwrap();
        prop_assert!(max_diff(&lhs, &closed_form_sigma(&gains, &phi)) <= 1e-9);
        let m = gains.order();
        prop_assert!(max_diff(&p.matrix().matmul(p.inverse()).unwrap(), &Matrix::identity(m * w)) <= 1e-12);
    }

    #[test]
    fn qbar_matches_negated_sigma(gains in gains_strategy(5), phi in 0.1f64..3.0) {
        prop_assume!(gains.order() >= 2);
        let m = gains.order();
        let mut s = closed_form_sigma(&gains, &SymMatrix::from_diag(&[phi])).scale(-1.0);
        s[(m - 1, m - 1)] = gains.delta();
        let q = s.add(&s.transpose()).unwrap();
        prop_assert!(max_diff(&q, build_qbar(&gains).unwrap().as_matrix()) <= 1e-12);
    }

    #[test]
    fn second_order_qbar_is_always_pd(k1 in 0.01f64..50.0, k2 in 0.01f64..50.0, delta in 0.01f64..5.0) {
        let g = ObserverGains::new(vec![k1, k2], 1.0, delta, 0.1).unwrap();
        let q = build_qbar(&g).unwrap();
        prop_assert!(oracle_min_eigenvalue(&q) > 0.0);
        prop_assert!((q[(0, 0)] - 2.0 * k2 / k1).abs() < 1e-12);
        prop_assert!((q[(1, 1)] - 2.0 * delta).abs() < 1e-12);
        prop_assert!(q[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn alpha_bound_grows_with_mu_and_shrinks_with_connectivity(
        mu in 0.0f64..2.0, dmu in 0.001f64..1.0, gamma in 0.01f64..0.9, l in 0.1f64..5.0, dl in 0.01f64..5.0,
    ) {
        let b = consensus_alpha_bound(mu, gamma, l, None).unwrap();
        prop_assert!(consensus_alpha_bound(mu + dmu, gamma, l, None).unwrap() > b);
        prop_assert!(consensus_alpha_bound(mu, gamma, l + dl, None).unwrap() < b);
    }

    #[test]
    fn schur_conservative_check_is_sound(seed in any::<u64>(), na in 1usize..4, nc in 1usize..4) {
        let mut r = rng(seed);
        let a = random_spd(&mut r, na, 0.5);
        let b = random_matrix(&mut r, na, nc, 0.7);
        let c = random_spd(&mut r, nc, 0.6);
        let gamma = 0.5;
        if schur_pd_check(&a, &b, &c, gamma).unwrap() {
            let cinv = c.spd_inverse().unwrap();
            let s = a.as_matrix().sub(&b.matmul(cinv.as_matrix()).unwrap().matmul(&b.transpose()).unwrap()).unwrap();
            prop_assert!(oracle_min_eigenvalue(&SymMatrix::new(s).unwrap()) > 0.0);
        }
    }

    #[test]
    fn correction_is_invariant_to_weight_and_alpha_rescaling(seed in any::<u64>(), s in 0.1f64..10.0) {
        let mut r = rng(seed);
        let x: Vec<f64> = random_matrix(&mut r, 1, 3, 5.0).data().to_vec();
        let state = AgentState::new(0, &[x]).unwrap();
        let b = random_unit(&mut r);
        let meas = Measurement::new(0, projection_matrix(&b).unwrap(), vec![0.3, -0.2, 0.1]).unwrap();
        let nb = |w: f64, e: Vec<f64>| NeighborEstimate::new(1, w, e).unwrap();
        let e: Vec<f64> = random_matrix(&mut r, 1, 3, 5.0).data().to_vec();
        let d1 = correction_term(&state, &meas, &[nb(1.5, e.clone())], 2.0).unwrap();
        let d2 = correction_term(&state, &meas, &[nb(1.5 * s, e)], 2.0 / s).unwrap();
        for (p, q) in d1.iter().zip(&d2) {
            prop_assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn consensus_rounds_preserve_sums_and_psd(seed in any::<u64>(), n in 2usize..7) {
        let mut r = rng(seed);
        let g = random_connected_graph(&mut r, n);
        let w = metropolis_weights(&g);
        let pairs: Vec<InformationPair> = (0..n)
            .map(|_| {
                let omega = random_spd(&mut r, STATE_DIM, 0.1);
                let q = random_matrix(&mut r, 1, STATE_DIM, 3.0).data().to_vec();
                InformationPair::new(omega, q).unwrap()
            })
            .collect();
        let next = consensus_round(&pairs, &w).unwrap();
        let sum_q = |ps: &[InformationPair]| -> Vec<f64> {
            (0..STATE_DIM).map(|e| ps.iter().map(|p| p.q()[e]).sum()).collect()
        };
        let sum_omega = |ps: &[InformationPair]| {
            ps.iter().fold(Matrix::zeros(STATE_DIM, STATE_DIM), |acc, p| acc.add(p.omega().as_matrix()).unwrap())
        };
        for (a, b) in sum_q(&pairs).iter().zip(&sum_q(&next)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        prop_assert!(max_diff(&sum_omega(&pairs), &sum_omega(&next)) < 1e-9);
        for p in &next {
            prop_assert!(oracle_min_eigenvalue(p.omega()) > -1e-12);
        }
    }
}

#[test]
fn metropolis_weights_are_doubly_stochastic() {
    let g = CommGraph::from_edges(
        4,
        &[
            Edge(0, 1, 1.0),
            Edge(1, 2, 1.0),
            Edge(2, 3, 1.0),
            Edge(3, 0, 1.0),
            Edge(0, 2, 1.0),
        ],
    )
    .unwrap();
    let w = metropolis_weights(&g);
    for i in 0..4 {
        let row: f64 = w.row(i).iter().sum();
        let col: f64 = w.column(i).iter().sum();
        assert!((row - 1.0).abs() < 1e-12 && (col - 1.0).abs() < 1e-12);
    }
}

#[test]
fn graph_eigenbasis_splits_phi() {
    let mut r = rng(11);
    for _ in 0..50 {
        let n = r.random_range(2..7);
        let g = random_connected_graph(&mut r, n);
        let psi: Vec<SymMatrix> = (0..n)
            .map(|_| projection_matrix(&random_unit(&mut r)).unwrap())
            .collect();
        let alpha = r.random_range(0.1..10.0);
        let (b11, b12, b22) = phi_bar_blocks(&g, &psi, alpha);
        let mean = psi
            .iter()
            .fold(SymMatrix::zeros(3), |acc, p| acc.add(p).unwrap())
            .scale(1.0 / n as f64);
        assert!(max_diff(b11.as_matrix(), mean.as_matrix()) < 1e-12);
        let lambda = Matrix::from_diag(g.lambda());
        let coupling = b22
            .as_matrix()
            .sub(&kron(&lambda, &Matrix::identity(3)).scale(alpha))
            .unwrap();
        assert!(oracle_min_eigenvalue(&SymMatrix::new(coupling).unwrap()) > -1e-9);
        assert_eq!((b12.rows(), b12.cols()), (3, 3 * (n - 1)));
    }
}
