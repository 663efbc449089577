//! Block triangularization of the finite-rank matrix P-hat = I - P and the
//! eigenvalue certificates that come with it.
//!
//! With S unit-upper and T lower-block, the similarity P-hat S = S T isolates
//! the softest metastable eigenvalue in the scalar block
//! alpha = a-hat + P-hat_21 S_12; the fixed point for S_12 solves
//! P-hat_11 S_12 - S_12 a-hat - S_12 (P-hat_21 S_12) + P-hat_12 = 0.

use ndarray::{Array1, Array2};
use ndarray_linalg::Eig;
use num_complex::Complex64;

use super::BoundCertificate;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BlockTriangularization {
    pub s12: Array1<f64>,
    pub t11: Array2<f64>,
    pub t21: Array1<f64>,
    pub alpha: f64,
    pub iterations: usize,
    /// sup norm of P-hat S - S T at convergence.
    pub residual: f64,
    /// Banach contraction condition b / a-hat < 1/8.
    pub contraction_ok: bool,
    pub a_hat: f64,
    pub b: f64,
    pub norm_p12: f64,
}

impl BlockTriangularization {
    pub fn s_matrix(&self) -> Array2<f64> {
        let m = self.s12.len();
        let mut s = Array2::eye(m + 1);
        for i in 0..m {
            s[[i, m]] = self.s12[i];
        }
        s
    }

    pub fn t_matrix(&self) -> Array2<f64> {
        let m = self.s12.len();
        let mut t = Array2::zeros((m + 1, m + 1));
        for i in 0..m {
            for j in 0..m {
                t[[i, j]] = self.t11[[i, j]];
            }
        }
        for j in 0..m {
            t[[m, j]] = self.t21[j];
        }
        t[[m, m]] = self.alpha;
        t
    }
}

fn sup_norm_vec(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

fn sup_norm_mat(m: &Array2<f64>) -> f64 {
    m.rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max)
}

/// Solves the S_12 fixed point by iteration from zero and assembles the
/// block factors. `phat` is the full (k+1) x (k+1) matrix I - P; the scalar
/// block is its last diagonal entry.
pub fn block_triangularize(phat: &Array2<f64>, tol: f64) -> Result<BlockTriangularization> {
    let n = phat.nrows();
    if n < 2 || phat.ncols() != n {
        return Err(Error::InvalidParameter(
            "P-hat must be square with size >= 2".into(),
        ));
    }
    let m = n - 1;
    let a_hat = phat[[m, m]];
    let p11 = phat.slice(ndarray::s![..m, ..m]).to_owned();
    let p12 = phat.slice(ndarray::s![..m, m]).to_owned();
    let p21 = phat.slice(ndarray::s![m, ..m]).to_owned();
    // b is the worst off-diagonal row mass among the leading rows
    let b = (0..m)
        .map(|l| {
            (0..n)
                .filter(|&j| j != l)
                .map(|j| phat[[l, j]].abs())
                .sum::<f64>()
        })
        .fold(0.0f64, f64::max);
    if a_hat == 0.0 {
        // degenerate but trivial when nothing forces S_12
        if sup_norm_vec(&p12) > 0.0 {
            return Err(Error::InvalidParameter(
                "a-hat is zero with a nonzero forcing block".into(),
            ));
        }
        let tri = BlockTriangularization {
            s12: Array1::zeros(m),
            t11: p11,
            t21: p21.to_owned(),
            alpha: 0.0,
            iterations: 0,
            residual: 0.0,
            contraction_ok: b == 0.0,
            a_hat,
            b,
            norm_p12: 0.0,
        };
        let s = tri.s_matrix();
        let t = tri.t_matrix();
        let residual = sup_norm_mat(&(&phat.dot(&s) - &s.dot(&t)));
        return Ok(BlockTriangularization { residual, ..tri });
    }
    let ratio = b / a_hat.abs();
    let contraction_ok = ratio < 0.125;
    if ratio > 0.5 {
        return Err(Error::NoContraction);
    }
    let norm_p12 = sup_norm_vec(&p12);
    let ball_radius = 2.0 * norm_p12 / a_hat.abs();

    let mut xi = Array1::<f64>::zeros(m);
    let mut iterations = 0;
    let mut outside = 0usize;
    const CAP: usize = 100_000;
    loop {
        let quad = p21.dot(&xi);
        let next = (&p12 + &p11.dot(&xi) - &(xi.clone() * quad)) / a_hat;
        let step = sup_norm_vec(&(&next - &xi));
        xi = next;
        iterations += 1;
        if sup_norm_vec(&xi) > ball_radius * (1.0 + tol) + 1e-300 {
            outside += 1;
            if outside > 200 {
                return Err(Error::NoContraction);
            }
        } else {
            outside = 0;
        }
        if step <= tol {
            break;
        }
        if iterations >= CAP {
            return Err(Error::NoContraction);
        }
    }

    let alpha = a_hat + p21.dot(&xi);
    // P-hat S = S T forces T11 = P-hat_11 - S_12 P-hat_21
    let mut t11 = p11.clone();
    for i in 0..m {
        for j in 0..m {
            t11[[i, j]] -= xi[i] * p21[j];
        }
    }
    let tri = BlockTriangularization {
        s12: xi,
        t11,
        t21: p21.to_owned(),
        alpha,
        iterations,
        residual: 0.0,
        contraction_ok,
        a_hat,
        b,
        norm_p12,
    };
    let s = tri.s_matrix();
    let t = tri.t_matrix();
    let residual = sup_norm_mat(&(&phat.dot(&s) - &s.dot(&t)));
    Ok(BlockTriangularization { residual, ..tri })
}

#[derive(Debug, Clone)]
pub struct KstarSpectrum {
    /// Eigenvalues of P (the nonzero eigenvalues of K*), decreasing modulus.
    pub eigenvalues: Vec<Complex64>,
    pub triangularization: BlockTriangularization,
    pub certificates: Vec<BoundCertificate>,
}

/// Eigenvalues of the finite-rank reduction together with the certificates
/// tying them to the block triangularization:
/// the softest eigenvalue is 1 - alpha, it stays within 2 ||P-hat_12|| of
/// 1 - a-hat, and every other eigenvalue stays within 4 b of 1.
pub fn kstar_spectrum(p: &Array2<f64>, tol: f64) -> Result<KstarSpectrum> {
    let n = p.nrows();
    let mut phat = -p.clone();
    for i in 0..n {
        phat[[i, i]] += 1.0;
    }
    let tri = block_triangularize(&phat, tol)?;
    let (vals, _) = p.eig().map_err(|e| Error::Linalg(e.to_string()))?;
    let mut eigenvalues: Vec<Complex64> = vals.iter().copied().collect();
    eigenvalues.sort_by(|a, b| {
        b.norm()
            .partial_cmp(&a.norm())
            .unwrap()
            .then(b.re.partial_cmp(&a.re).unwrap())
    });

    let lam_star = eigenvalues
        .iter()
        .copied()
        .min_by(|a, b| {
            (a - Complex64::new(1.0 - tri.alpha, 0.0))
                .norm()
                .partial_cmp(&(b - Complex64::new(1.0 - tri.alpha, 0.0)).norm())
                .unwrap()
        })
        .expect("nonempty spectrum");

    let mut certificates = Vec::new();
    certificates.push(BoundCertificate {
        name: "kstar_alpha_consistency".into(),
        inputs: vec![
            ("lambda_star".into(), lam_star.re),
            ("one_minus_alpha".into(), 1.0 - tri.alpha),
        ],
        bound: 1e-10,
        measured: Some((lam_star - Complex64::new(1.0 - tri.alpha, 0.0)).norm()),
        satisfied: Some(
            (lam_star - Complex64::new(1.0 - tri.alpha, 0.0)).norm() <= 1e-10,
        ),
    });
    certificates.push(BoundCertificate {
        name: "kstar_lambda_star_near_one_minus_ahat".into(),
        inputs: vec![
            ("a_hat".into(), tri.a_hat),
            ("norm_p12".into(), tri.norm_p12),
        ],
        bound: 2.0 * tri.norm_p12,
        measured: Some((lam_star - Complex64::new(1.0 - tri.a_hat, 0.0)).norm()),
        satisfied: Some(
            (lam_star - Complex64::new(1.0 - tri.a_hat, 0.0)).norm()
                <= 2.0 * tri.norm_p12 + 1e-12,
        ),
    });
    let worst_other = eigenvalues
        .iter()
        .filter(|&&l| (l - lam_star).norm() > 1e-14)
        .map(|&l| (l - Complex64::new(1.0, 0.0)).norm())
        .fold(0.0f64, f64::max);
    certificates.push(BoundCertificate {
        name: "kstar_others_near_one".into(),
        inputs: vec![("b".into(), tri.b)],
        bound: 4.0 * tri.b,
        measured: Some(worst_other),
        satisfied: Some(worst_other <= 4.0 * tri.b + 1e-12),
    });
    certificates.push(BoundCertificate {
        name: "kstar_lambda_star_real".into(),
        inputs: vec![],
        bound: 1e-10,
        measured: Some(lam_star.im.abs()),
        satisfied: Some(lam_star.im.abs() <= 1e-10),
    });

    Ok(KstarSpectrum {
        eigenvalues,
        triangularization: tri,
        certificates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn analytic_two_by_two() {
        // P-hat = [[a, -a], [-b, b]]: the fixed point from zero converges to
        // S_12 = -a/b, alpha = a + b, T11 = 0; P-hat eigenvalues are 0, a+b
        let (a, b) = (0.01, 0.2);
        let phat = array![[a, -a], [-b, b]];
        let tri = block_triangularize(&phat, 1e-14).unwrap();
        assert!((tri.s12[0] + a / b).abs() < 1e-12, "s12 {}", tri.s12[0]);
        assert!((tri.alpha - (a + b)).abs() < 1e-12);
        assert!(tri.t11[[0, 0]].abs() < 1e-12);
        assert!(tri.residual <= 1e-12);
        assert!(tri.contraction_ok);
        // a priori bound
        assert!(sup_norm_vec(&tri.s12) <= 2.0 * tri.norm_p12 / tri.a_hat + 1e-12);
    }

    #[test]
    fn zero_forcing_gives_zero_s12() {
        let phat = array![[0.02, 0.0], [-0.3, 0.3]];
        let tri = block_triangularize(&phat, 1e-14).unwrap();
        assert_eq!(tri.s12[0], 0.0);
        assert!((tri.alpha - 0.3).abs() < 1e-15);
    }

    #[test]
    fn kstar_spectrum_two_by_two() {
        // P = I - P-hat, eigenvalues {1, 0.79}
        let (a, b) = (0.01, 0.2);
        let p = array![[1.0 - a, a], [b, 1.0 - b]];
        let ks = kstar_spectrum(&p, 1e-14).unwrap();
        assert!((ks.eigenvalues[0].re - 1.0).abs() < 1e-12);
        assert!((ks.eigenvalues[1].re - 0.79).abs() < 1e-12);
        for c in &ks.certificates {
            assert_eq!(c.satisfied, Some(true), "certificate {} failed", c.name);
        }
        // lambda* = 1 - alpha within 1e-10
        assert!((ks.eigenvalues[1].re - (1.0 - ks.triangularization.alpha)).abs() < 1e-10);
    }

    #[test]
    fn identity_p_is_trivial() {
        let p = Array2::eye(3);
        let ks = kstar_spectrum(&p, 1e-14).unwrap();
        for l in &ks.eigenvalues {
            assert!((l.re - 1.0).abs() < 1e-12);
        }
        assert_eq!(ks.triangularization.norm_p12, 0.0);
    }

    #[test]
    fn eigenvector_of_the_soft_eigenvalue() {
        let (a, b) = (0.03, 0.31);
        let phat = array![[a, -a], [-b, b]];
        let tri = block_triangularize(&phat, 1e-14).unwrap();
        // P-hat (S_12, 1) = (1 - lambda*) (S_12, 1)
        let v = array![tri.s12[0], 1.0];
        let lhs = phat.dot(&v);
        let one_minus_lambda = tri.alpha;
        for i in 0..2 {
            assert!((lhs[i] - one_minus_lambda * v[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn similarity_preserves_the_spectrum() {
        // random-ish metastable P-hat of size 4
        let phat = array![
            [0.020, -0.008, -0.007, -0.005],
            [-0.010, 0.030, -0.012, -0.008],
            [-0.004, -0.006, 0.016, -0.006],
            [-0.100, -0.120, -0.080, 0.300]
        ];
        let tri = block_triangularize(&phat, 1e-15).unwrap();
        assert!(tri.residual <= 1e-12);
        let (ev_phat, _) = phat.eig().unwrap();
        let (ev_t11, _) = tri.t11.eig().unwrap();
        let mut from_t: Vec<Complex64> = ev_t11.iter().copied().collect();
        from_t.push(Complex64::new(tri.alpha, 0.0));
        for lam in ev_phat.iter() {
            let d = from_t
                .iter()
                .map(|m| (lam - m).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(d < 1e-8, "eigenvalue {lam} not reproduced by T");
        }
    }
}
