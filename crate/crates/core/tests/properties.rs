//! Property tests over randomly generated chains.

use ndarray::{Array1, Array2};
use proptest::prelude::*;

use randpoincare::{markov, verify, DiscretizedKernel};

/// Random row-stochastic matrix with strictly positive entries.
fn stochastic_matrix(n: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(prop::collection::vec(0.05f64..1.0, n), n).prop_map(move |rows| {
        let mut m = Array2::zeros((n, n));
        for (i, row) in rows.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            for (j, &v) in row.iter().enumerate() {
                m[[i, j]] = v / sum;
            }
        }
        m
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn return_committors_are_complementary(
        m in (2usize..6).prop_flat_map(stochastic_matrix),
        mass in prop::collection::vec(0.01f64..1.0, 6),
    ) {
        let n = m.nrows();
        let k = DiscretizedKernel::from_matrix(m);
        let a = vec![0usize];
        let b = vec![n - 1];
        let mut mu = Array1::zeros(n);
        for i in 0..n {
            mu[i] = mass[i % mass.len()];
        }
        let total = mu.sum();
        mu.mapv_inplace(|v| v / total);
        let p = markov::return_committor(&k, &mu, &a, &b).unwrap();
        let q = markov::return_committor(&k, &mu, &b, &a).unwrap();
        prop_assert!((p + q - 1.0).abs() < 1e-10, "p + q = {}", p + q);
    }

    #[test]
    fn feynman_kac_solves_the_eigen_relation(
        m in (3usize..7).prop_flat_map(stochastic_matrix),
        u in 0.0f64..0.08,
        data in prop::collection::vec(-1.0f64..1.0, 7),
    ) {
        let n = m.nrows();
        let k = DiscretizedKernel::from_matrix(m);
        let a: Vec<usize> = (0..n / 2).collect();
        let phibar = Array1::from_iter(a.iter().map(|&i| data[i % data.len()]));
        let phi = verify::feynman_kac_solution(&k, &a, &phibar, u).unwrap();
        let kphi = k.matrix.dot(&phi);
        for x in n / 2..n {
            prop_assert!(
                (kphi[x] - (-u).exp() * phi[x]).abs() < 1e-10,
                "row {x}: {} vs {}", kphi[x], (-u).exp() * phi[x]
            );
        }
    }

    #[test]
    fn doob_transform_divides_the_spectrum(
        m in (2usize..6).prop_flat_map(stochastic_matrix),
        keep in 0.3f64..0.95,
    ) {
        let mut sub = m.clone();
        sub.mapv_inplace(|v| v * keep);
        let k = DiscretizedKernel::from_matrix_with_kill(
            sub,
            Array1::from_elem(m.nrows(), 1.0 - keep),
        );
        let q = markov::qsd(&k, 1e-13).unwrap();
        let bar = markov::doob_transform(&k, &q).unwrap();
        prop_assert!(bar.is_stochastic(1e-10));
        let sd_k = markov::spectral_decomposition(&k, k.n()).unwrap();
        let sd_b = markov::spectral_decomposition(&bar, k.n()).unwrap();
        for i in 0..k.n() {
            let expect = sd_k.eigenvalues[i] / q.lambda0;
            prop_assert!(
                (sd_b.eigenvalues[i] - expect).norm() < 1e-9,
                "eigenvalue {i}: {} vs {}", sd_b.eigenvalues[i], expect
            );
        }
    }

    #[test]
    fn trace_then_kill_keeps_total_mass(
        m in (3usize..7).prop_flat_map(stochastic_matrix),
    ) {
        let n = m.nrows();
        let k = DiscretizedKernel::from_matrix(m);
        let a: Vec<usize> = (0..n).step_by(2).collect();
        let traced = markov::trace(&k, &a).unwrap();
        prop_assert!(traced.is_stochastic(1e-10));
        let killed = markov::kill(&traced, &[0]).unwrap();
        killed.validate(1e-10).unwrap();
    }

    #[test]
    fn hierarchy_is_shift_invariant(
        base in prop::collection::vec(0.5f64..10.0, 9),
        shift in 0.0f64..5.0,
    ) {
        let mut h = Array2::from_elem((3, 3), f64::INFINITY);
        let mut idx = 0;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    h[[i, j]] = base[idx];
                    idx += 1;
                }
            }
        }
        let mut shifted = h.clone();
        shifted.mapv_inplace(|v| if v.is_finite() { v + shift } else { v });
        let a = randpoincare::metastable::hierarchy_order(&h);
        let b = randpoincare::metastable::hierarchy_order(&shifted);
        match (a, b) {
            (Ok((o1, t1)), Ok((o2, t2))) => {
                prop_assert_eq!(o1, o2);
                prop_assert!((t1 - t2).abs() < 1e-9);
            }
            (Err(_), Err(_)) => {}
            (x, y) => prop_assert!(false, "shift changed the outcome: {x:?} vs {y:?}"),
        }
    }
}
