//! Quantitative certificates: uniform positivity, the spectral-gap and
//! oscillation bounds for trace-killed ball kernels, the operator-norm bounds
//! comparing K^u, K^0 and K*, and the resolvent contour bound.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::MetastableStructure;
use crate::error::{Error, Result};
use crate::map::DiscretizedKernel;
use crate::markov;

/// One named bound with its measured counterpart.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundCertificate {
    pub name: String,
    pub inputs: Vec<(String, f64)>,
    pub bound: f64,
    pub measured: Option<f64>,
    pub satisfied: Option<bool>,
}

impl std::fmt::Display for BoundCertificate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: bound {:.6e}",
            self.name, self.bound
        )?;
        if let Some(m) = self.measured {
            write!(f, ", measured {m:.6e}")?;
        }
        match self.satisfied {
            Some(true) => write!(f, " [ok]"),
            Some(false) => write!(f, " [VIOLATED]"),
            None => write!(f, " [report only]"),
        }
    }
}

/// L(n) = max over columns of (max row entry / min row entry) of the n-step
/// kernel; infinite when a visited column has a vanishing minimum. All-zero
/// columns are skipped: they satisfy the positivity condition vacuously.
pub fn uniform_positivity(kernel: &DiscretizedKernel, n: usize) -> Result<f64> {
    let kn = kernel.iterate(n)?;
    let mut worst: f64 = 1.0;
    for j in 0..kn.n() {
        let col = kn.matrix.column(j);
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
        if max <= 0.0 {
            continue;
        }
        if min <= 0.0 {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(max / min);
    }
    Ok(worst)
}

/// Spectral-gap certificate for a trace-killed ball kernel:
/// theta^n <= L(n) - min_x (K^0_B)^n(x, B) / lambda_0^n, with the measured
/// theta = |lambda_1| / lambda_0 from a direct eigendecomposition.
pub fn spectral_gap_bound(
    kernel: &DiscretizedKernel,
    n: usize,
    tol: f64,
) -> Result<BoundCertificate> {
    let l = uniform_positivity(kernel, n)?;
    let q = markov::qsd(kernel, tol)?;
    let kn = kernel.iterate(n)?;
    let survival = kn.row_sums();
    let min_survival = survival.iter().cloned().fold(f64::INFINITY, f64::min);
    let bound = l - min_survival / q.lambda0.powi(n as i32);
    let measured = if kernel.n() == 1 {
        0.0
    } else {
        let sd = markov::spectral_decomposition(kernel, 2)?;
        sd.eigenvalues[1].norm() / q.lambda0
    };
    let satisfied = if l.is_infinite() {
        true
    } else {
        measured.powi(n as i32) <= bound + 1e-12
    };
    Ok(BoundCertificate {
        name: "spectral_gap".into(),
        inputs: vec![
            ("n".into(), n as f64),
            ("L".into(), l),
            ("lambda0".into(), q.lambda0),
            ("min_survival".into(), min_survival),
        ],
        bound,
        measured: Some(measured),
        satisfied: Some(satisfied),
    })
}

/// Oscillation certificate for the principal right eigenfunction:
/// ||phi_0 - 1|| <= M L(n)^2 sup_x |1 - (K^0_B)^n(x, B)/lambda_0^n|.
/// The constant M is a report parameter; callers decide whether the flag is
/// an assertion.
pub fn oscillation_bound(
    kernel: &DiscretizedKernel,
    n: usize,
    m_const: f64,
    tol: f64,
) -> Result<BoundCertificate> {
    let l = uniform_positivity(kernel, n)?;
    let q = markov::qsd(kernel, tol)?;
    let kn = kernel.iterate(n)?;
    let survival = kn.row_sums();
    let sup_term = survival
        .iter()
        .map(|&s| (1.0 - s / q.lambda0.powi(n as i32)).abs())
        .fold(0.0f64, f64::max);
    let bound = m_const * l * l * sup_term;
    let measured = q
        .principal_right
        .iter()
        .map(|&p| (p - 1.0).abs())
        .fold(0.0f64, f64::max);
    Ok(BoundCertificate {
        name: "oscillation".into(),
        inputs: vec![
            ("n".into(), n as f64),
            ("L".into(), l),
            ("M".into(), m_const),
            ("sup_term".into(), sup_term),
        ],
        bound,
        measured: Some(measured),
        satisfied: Some(measured <= bound + 1e-12),
    })
}

fn sup_norm_mat(m: &Array2<f64>) -> f64 {
    m.rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max)
}

fn op_norm_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        let s: f64 = (0..a.ncols()).map(|j| (a[[i, j]] - b[[i, j]]).abs()).sum();
        worst = worst.max(s);
    }
    worst
}

fn mat_pow(m: &Array2<f64>, p: usize) -> Array2<f64> {
    let mut out = m.clone();
    for _ in 1..p {
        out = out.dot(m);
    }
    out
}

/// Evaluates the closed-form norm bounds ||K^u - K^0||, ||(K^u)^m - (K^0)^m||
/// and ||(K^0)^m - (K*)^m|| on the metastable set M = union of all balls,
/// together with the directly measured norms.
pub fn norm_certificates(
    kernel: &DiscretizedKernel,
    structure: &MetastableStructure,
    u: f64,
    m_pow: usize,
    tol: f64,
) -> Result<Vec<BoundCertificate>> {
    let nb = structure.n_balls();
    let m_cells = structure.m_cells(nb);
    let m_rows = kernel.local_indices(&m_cells)?;
    let traced = markov::trace(kernel, &m_rows)?;

    // expected return / hitting times feeding the K^u - K^0 bound
    let hitting = markov::expected_hitting_time(kernel, &m_rows)?;
    let returns = markov::expected_return_time(kernel, &m_rows)?;
    let e1 = m_rows
        .iter()
        .map(|&x| returns[x] - 1.0)
        .fold(0.0f64, f64::max);
    let e2 = (0..kernel.n())
        .filter(|r| !m_rows.contains(r))
        .map(|x| hitting[x])
        .fold(0.0f64, f64::max);
    let factor = 1.0 - (-u).exp();
    if factor * e2 >= 1.0 {
        return Err(Error::LaplaceDivergence { value: factor * e2 });
    }
    let q_bound = factor * e1 / (1.0 - factor * e2);

    let ku = markov::laplace_kernel(kernel, &m_rows, u)?;
    let measured_1 = op_norm_diff(&ku.matrix, &traced.matrix);
    let mut certs = vec![BoundCertificate {
        name: "norm_Ku_K0".into(),
        inputs: vec![
            ("u".into(), u),
            ("E_M[tau+ - 1]".into(), e1),
            ("E_Mc[tau+]".into(), e2),
        ],
        bound: q_bound,
        measured: Some(measured_1),
        satisfied: Some(measured_1 <= q_bound + 1e-12),
    }];

    let bound_m = (1.0 + q_bound).powi(m_pow as i32) - 1.0;
    let measured_m = op_norm_diff(&mat_pow(&ku.matrix, m_pow), &mat_pow(&traced.matrix, m_pow));
    certs.push(BoundCertificate {
        name: "norm_Ku_K0_iterated".into(),
        inputs: vec![("u".into(), u), ("m".into(), m_pow as f64)],
        bound: bound_m,
        measured: Some(measured_m),
        satisfied: Some(measured_m <= bound_m + 1e-12),
    });

    // R_i certificate for the rank reduction of the m-step trace kernel.
    // The remainder norms ||(K_B)^l - lambda0^l phi0 pi0^T|| are measured
    // exactly; in the asymptotic regime they shrink to the 2 |lambda1|^l
    // shorthand of the closed form.
    let mut qsds = Vec::with_capacity(nb);
    let mut r_max: f64 = 0.0;
    let k0_m = mat_pow(&traced.matrix, m_pow);
    let mut measured_rank: f64 = 0.0;
    let mut measured_power: f64 = 0.0;
    for i in 0..nb {
        let rows_i = structure.ball_rows(&traced, i)?;
        let killed = markov::kill(&traced, &rows_i)?;
        let q = markov::qsd(&killed, tol)?;
        let osc = q
            .principal_right
            .iter()
            .map(|&p| (p - 1.0).abs())
            .fold(0.0f64, f64::max);
        let p_out = killed
            .kill_column
            .as_ref()
            .map(|kc| kc.iter().cloned().fold(0.0f64, f64::max))
            .unwrap_or(0.0);
        let p_in = (0..traced.n())
            .filter(|r| !rows_i.contains(r))
            .map(|x| rows_i.iter().map(|&y| traced.matrix[[x, y]]).sum::<f64>())
            .fold(0.0f64, f64::max);
        // remainder norms of the killed ball kernel up to the m-th power
        let nb_i = killed.n();
        let rank1 = {
            let mut r1 = Array2::zeros((nb_i, nb_i));
            for a in 0..nb_i {
                for b in 0..nb_i {
                    r1[[a, b]] = q.principal_right[a] * q.qsd[b];
                }
            }
            r1
        };
        let mut pow = Array2::eye(nb_i);
        let mut lam_pow = 1.0;
        let mut rem_norms = Vec::with_capacity(m_pow + 1);
        for _ in 0..=m_pow {
            let rem = &pow - &(rank1.clone() * lam_pow);
            rem_norms.push(sup_norm_mat(&rem));
            pow = pow.dot(&killed.matrix);
            lam_pow *= q.lambda0;
        }
        let delta_m = 0.5 * (m_pow * m_pow.saturating_sub(1)) as f64 * p_out * p_in;
        let mut excursions = 0.0;
        let mut lam_l = 1.0;
        for rem in rem_norms.iter().take(m_pow) {
            excursions += lam_l * osc + rem;
            lam_l *= q.lambda0;
        }
        let r_i = 2.0 * delta_m
            + q.lambda0.powi(m_pow as i32) * osc
            + rem_norms[m_pow]
            + p_out * excursions;
        r_max = r_max.max(r_i);

        // measured rank-reduction error: rows of (K^0)^m against the
        // QSD-averaged rows, ball by ball
        let mut avg = Array1::<f64>::zeros(traced.n());
        for (li, &x) in rows_i.iter().enumerate() {
            let w = q.qsd[li];
            for y in 0..traced.n() {
                avg[y] += w * k0_m[[x, y]];
            }
        }
        for &x in &rows_i {
            let d: f64 = (0..traced.n()).map(|y| (k0_m[[x, y]] - avg[y]).abs()).sum();
            measured_rank = measured_rank.max(d);
        }
        qsds.push(q);
    }
    let kstar = super::finite_rank_kernel(&traced, structure, &qsds)?;
    measured_power = measured_power
        .max(op_norm_diff(&k0_m, &mat_pow(&kstar.matrix, m_pow)));
    certs.push(BoundCertificate {
        name: "norm_K0_Kstar_iterated".into(),
        inputs: vec![
            ("m".into(), m_pow as f64),
            ("literal_power_diff".into(), measured_power),
        ],
        bound: r_max,
        measured: Some(measured_rank),
        satisfied: Some(measured_rank <= r_max + 1e-12),
    });
    Ok(certs)
}

/// Resolvent contour certificate: on |z - lambda*| = r the inverse satisfies
/// ||(z I - P)^{-1}|| <= c1 / |z - lambda*| with the numerical constant
/// c1 = 9 (5/4)^2.
pub fn resolvent_bound(
    p: &Array2<f64>,
    lambda_star: f64,
    r: f64,
    samples: usize,
) -> Result<BoundCertificate> {
    let n = p.nrows();
    let c1 = 9.0 * (1.25f64) * 1.25;
    let mut worst: f64 = 0.0;
    for s in 0..samples {
        let angle = 2.0 * std::f64::consts::PI * s as f64 / samples as f64;
        let z = Complex64::new(lambda_star + r * angle.cos(), r * angle.sin());
        let mut m = Array2::<Complex64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                m[[i, j]] = -Complex64::new(p[[i, j]], 0.0);
            }
            m[[i, i]] += z;
        }
        let inv = crate::linalg::solve_many(&m, &Array2::from_diag_elem(n, Complex64::new(1.0, 0.0)))
            .ok_or(Error::SingularSystem {
                what: "resolvent contour",
            })?;
        let norm = (0..n)
            .map(|i| (0..n).map(|j| inv[[i, j]].norm()).sum::<f64>())
            .fold(0.0f64, f64::max);
        worst = worst.max(norm * r);
    }
    Ok(BoundCertificate {
        name: "resolvent_contour".into(),
        inputs: vec![
            ("lambda_star".into(), lambda_star),
            ("r".into(), r),
            ("c1".into(), c1),
        ],
        bound: c1,
        measured: Some(worst),
        satisfied: Some(worst <= c1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sym2_killed() -> DiscretizedKernel {
        DiscretizedKernel::from_matrix_with_kill(
            array![[0.8, 0.1], [0.1, 0.8]],
            array![0.1, 0.1],
        )
    }

    #[test]
    fn uniform_positivity_examples() {
        // identical rows: rank one, L = 1
        let k = DiscretizedKernel::from_matrix(array![[0.3, 0.7], [0.3, 0.7]]);
        assert!((uniform_positivity(&k, 1).unwrap() - 1.0).abs() < 1e-15);
        // the symmetric pair: column max/min = 8
        assert!((uniform_positivity(&sym2_killed(), 1).unwrap() - 8.0).abs() < 1e-12);
        // a zero entry in a visited column reports infinity
        let k0 = DiscretizedKernel::from_matrix(array![[0.5, 0.5], [0.0, 0.9]]);
        assert!(uniform_positivity(&k0, 1).unwrap().is_infinite());
    }

    #[test]
    fn positivity_ratio_decreases_under_iteration() {
        let k = sym2_killed();
        let l1 = uniform_positivity(&k, 1).unwrap();
        let l2 = uniform_positivity(&k, 2).unwrap();
        let l4 = uniform_positivity(&k, 4).unwrap();
        assert!(l2 <= l1 && l4 <= l2, "L not improving: {l1} {l2} {l4}");
    }

    #[test]
    fn spectral_gap_certificate_symmetric_pair() {
        let cert = spectral_gap_bound(&sym2_killed(), 1, 1e-13).unwrap();
        assert!((cert.bound - 7.0).abs() < 1e-9, "bound {}", cert.bound);
        let measured = cert.measured.unwrap();
        assert!((measured - 7.0 / 9.0).abs() < 1e-9, "measured {measured}");
        assert_eq!(cert.satisfied, Some(true));
    }

    #[test]
    fn spectral_gap_certificate_rank_one() {
        let k = DiscretizedKernel::from_matrix_with_kill(
            array![[0.45, 0.45], [0.45, 0.45]],
            array![0.1, 0.1],
        );
        let cert = spectral_gap_bound(&k, 1, 1e-13).unwrap();
        assert!(cert.bound.abs() < 1e-9);
        assert!(cert.measured.unwrap().abs() < 1e-9);
    }

    #[test]
    fn oscillation_certificate_symmetric_pair() {
        let cert = oscillation_bound(&sym2_killed(), 1, 1.0, 1e-13).unwrap();
        assert!(cert.measured.unwrap() < 1e-9);
        assert!(cert.bound.abs() < 1e-9);
    }

    #[test]
    fn oscillation_rank_one_nonuniform() {
        // rank-1 kernel with nonuniform row masses c(x): phi_0 = c / <p, c>
        let k = DiscretizedKernel::from_matrix_with_kill(
            array![[0.54, 0.36], [0.36, 0.24]],
            array![0.1, 0.4],
        );
        let q = markov::qsd(&k, 1e-13).unwrap();
        let row_mass = k.row_sums();
        let expect = row_mass
            .iter()
            .map(|&c| (1.0 - c / q.lambda0).abs())
            .fold(0.0f64, f64::max);
        let cert = oscillation_bound(&k, 1, 1.0, 1e-13).unwrap();
        assert!(
            (cert.measured.unwrap() - expect).abs() < 1e-9,
            "measured {} vs {}",
            cert.measured.unwrap(),
            expect
        );
    }

    #[test]
    fn norm_bound_formula_arithmetic() {
        // e1 = 0.1, e2 = 5, 1 - e^{-u} = 0.1 -> bound = 0.01 / 0.5 = 0.02
        let e1: f64 = 0.1;
        let e2: f64 = 5.0;
        let factor: f64 = 0.1;
        let bound = factor * e1 / (1.0 - factor * e2);
        assert!((bound - 0.02).abs() < 1e-15);
        // m = 1 reduces the iterated bound to the plain one
        let iterated = (1.0f64 + bound).powi(1) - 1.0;
        assert!((iterated - bound).abs() < 1e-15);
    }

    #[test]
    fn resolvent_certificate_two_state() {
        let p = array![[0.99, 0.01], [0.2, 0.8]];
        let ks = crate::metastable::kstar_spectrum(&p, 1e-14).unwrap();
        let lam = 1.0 - ks.triangularization.alpha;
        let r = ks.triangularization.a_hat / 8.0;
        let cert = resolvent_bound(&p, lam, r, 16).unwrap();
        assert_eq!(cert.satisfied, Some(true), "{}", cert);
    }
}
