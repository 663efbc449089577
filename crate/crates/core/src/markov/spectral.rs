//! Dense nonsymmetric eigendecomposition with biorthonormal left/right pairs.

use ndarray::{Array1, Array2};
use ndarray_linalg::Eig;
use num_complex::Complex64;

use crate::linalg;

use super::super::map::DiscretizedKernel;
use crate::error::{Error, Result};

const PAIRING_RADIUS: f64 = 1e-10;
const REAL_IM_TOL: f64 = 1e-10;

/// Modulus-ordered eigenvalues with biorthonormal eigenvectors:
/// sum_x left[i](x) * right[j](x) = delta_ij.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<Complex64>,
    pub right: Vec<Array1<Complex64>>,
    pub left: Vec<Array1<Complex64>>,
}

impl SpectralDecomposition {
    pub fn count(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_real(&self, k: usize) -> bool {
        self.eigenvalues[k].im == 0.0
    }

    pub fn real_eigenvalue(&self, k: usize) -> Option<f64> {
        self.is_real(k).then(|| self.eigenvalues[k].re)
    }

    pub fn right_real(&self, k: usize) -> Array1<f64> {
        self.right[k].mapv(|c| c.re)
    }

    pub fn left_real(&self, k: usize) -> Array1<f64> {
        self.left[k].mapv(|c| c.re)
    }

    /// max_ij |<left_i, right_j> - delta_ij|
    pub fn biorthonormality_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, l) in self.left.iter().enumerate() {
            for (j, r) in self.right.iter().enumerate() {
                let p: Complex64 = l.iter().zip(r).map(|(a, b)| a * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((p - target).norm());
            }
        }
        worst
    }
}

fn sort_order(vals: &[Complex64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| {
        vals[b]
            .norm()
            .partial_cmp(&vals[a].norm())
            .unwrap()
            .then(vals[b].re.partial_cmp(&vals[a].re).unwrap())
            .then(vals[a].im.partial_cmp(&vals[b].im).unwrap())
    });
    idx
}

/// Top `count` eigenpairs of the kernel matrix by modulus.
///
/// Right vectors come from the matrix, left vectors from its transpose;
/// pairs are matched nearest-in-complex-plane and renormalized cluster by
/// cluster so that degenerate but diagonalizable eigenvalues still yield a
/// biorthonormal family. A cluster whose Gram matrix is numerically singular
/// is reported as defective, not resolved.
pub fn spectral_decomposition(
    kernel: &DiscretizedKernel,
    count: usize,
) -> Result<SpectralDecomposition> {
    let n = kernel.n();
    if count == 0 || count > n {
        return Err(Error::InvalidParameter(format!(
            "count must be in 1..={n}"
        )));
    }
    let a = &kernel.matrix;
    let (vals_r, vecs_r) = a.eig().map_err(|e| Error::Linalg(e.to_string()))?;
    let (vals_l, vecs_l) = a
        .t()
        .to_owned()
        .eig()
        .map_err(|e| Error::Linalg(e.to_string()))?;

    let order_r = sort_order(vals_r.as_slice().unwrap());
    let order_l = sort_order(vals_l.as_slice().unwrap());

    // greedy nearest matching of the left spectrum to the right one
    let mut used = vec![false; n];
    let mut eigenvalues = Vec::with_capacity(count);
    let mut right = Vec::with_capacity(count);
    let mut left = Vec::with_capacity(count);
    for &ri in order_r.iter().take(count) {
        let lam = vals_r[ri];
        let mut best: Option<(usize, f64)> = None;
        for &li in &order_l {
            if used[li] {
                continue;
            }
            let d = (vals_l[li] - lam).norm();
            if best.map(|(_, bd)| d < bd).unwrap_or(true) {
                best = Some((li, d));
            }
        }
        let (li, d) = best.ok_or(Error::DefectiveCluster { value: lam.re })?;
        if d > PAIRING_RADIUS.max(1e-8 * lam.norm()) {
            return Err(Error::DefectiveCluster { value: lam.re });
        }
        used[li] = true;
        eigenvalues.push(lam);
        right.push(vecs_r.column(ri).to_owned());
        left.push(vecs_l.column(li).to_owned());
    }

    // zero out imaginary parts of numerically real eigenvalues
    for lam in eigenvalues.iter_mut() {
        if lam.im.abs() <= REAL_IM_TOL {
            lam.im = 0.0;
        }
    }

    // cluster eigenvalues that coincide within the pairing radius and
    // biorthonormalize each cluster through its Gram matrix
    let mut start = 0;
    while start < eigenvalues.len() {
        let mut end = start + 1;
        while end < eigenvalues.len()
            && (eigenvalues[end] - eigenvalues[end - 1]).norm() <= PAIRING_RADIUS
        {
            end += 1;
        }
        let c = end - start;
        if c == 1 {
            let g: Complex64 = left[start]
                .iter()
                .zip(&right[start])
                .map(|(a, b)| a * b)
                .sum();
            if g.norm() < 1e-14 {
                return Err(Error::DefectiveCluster {
                    value: eigenvalues[start].re,
                });
            }
            left[start] = left[start].mapv(|v| v / g);
        } else {
            let mut gram = Array2::<Complex64>::zeros((c, c));
            for i in 0..c {
                for j in 0..c {
                    gram[[i, j]] = left[start + i]
                        .iter()
                        .zip(&right[start + j])
                        .map(|(a, b)| a * b)
                        .sum();
                }
            }
            // new_left_j = sum_i (G^{-1})[j][i] left_i  so that  <new_left_j, right_k> = delta
            let mut new_left = Vec::with_capacity(c);
            for j in 0..c {
                let mut e = Array1::<Complex64>::zeros(c);
                e[j] = Complex64::new(1.0, 0.0);
                // solve G^T x = e_j, then new_left_j = sum_i x_i left_i
                let x = linalg::solve(&gram.t().to_owned(), &e).ok_or(
                    Error::DefectiveCluster {
                        value: eigenvalues[start].re,
                    },
                )?;
                if !x.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
                    return Err(Error::DefectiveCluster {
                        value: eigenvalues[start].re,
                    });
                }
                let mut acc = Array1::<Complex64>::zeros(n);
                for (i, xi) in x.iter().enumerate() {
                    acc = acc + left[start + i].mapv(|v| v * xi);
                }
                new_left.push(acc);
            }
            for (i, nl) in new_left.into_iter().enumerate() {
                left[start + i] = nl;
            }
        }
        start = end;
    }

    // normalization conventions: lambda_0 pair is the Perron pair for
    // nonnegative kernels (pi_0 a probability vector, phi_0 positive); the
    // other pairs get their peak right-vector entry pinned to +1
    for k in 0..eigenvalues.len() {
        if k == 0 {
            let s: Complex64 = left[0].iter().sum();
            if s.norm() > 1e-14 {
                left[0] = left[0].mapv(|v| v / s);
                right[0] = right[0].mapv(|v| v * s);
            }
            if right[0].iter().map(|v| v.re).sum::<f64>() < 0.0 {
                right[0] = right[0].mapv(|v| -v);
                left[0] = left[0].mapv(|v| -v);
            }
        } else {
            let peak = right[k]
                .iter()
                .cloned()
                .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
                .unwrap();
            if peak.norm() > 1e-14 {
                right[k] = right[k].mapv(|v| v / peak);
                left[k] = left[k].mapv(|v| v * peak);
            }
        }
        // realify vectors of real eigenvalues when the imaginary dust allows
        if eigenvalues[k].im == 0.0 {
            let max_im = right[k]
                .iter()
                .chain(left[k].iter())
                .map(|v| v.im.abs())
                .fold(0.0f64, f64::max);
            let max_norm = right[k]
                .iter()
                .chain(left[k].iter())
                .map(|v| v.norm())
                .fold(0.0f64, f64::max);
            if max_im <= 1e-8 * max_norm.max(1.0) {
                right[k] = right[k].mapv(|v| Complex64::new(v.re, 0.0));
                left[k] = left[k].mapv(|v| Complex64::new(v.re, 0.0));
            }
        }
    }

    Ok(SpectralDecomposition {
        eigenvalues,
        right,
        left,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn k3() -> DiscretizedKernel {
        DiscretizedKernel::from_matrix(array![
            [0.8, 0.1, 0.1],
            [0.1, 0.8, 0.1],
            [0.1, 0.1, 0.8]
        ])
    }

    #[test]
    fn stochastic_kernel_has_unit_principal_pair() {
        let sd = spectral_decomposition(&k3(), 3).unwrap();
        // oracle: K3 = 0.7 I + 0.3 * uniform rank-1, eigenvalues {1, 0.7, 0.7}
        assert!((sd.eigenvalues[0].re - 1.0).abs() < 1e-10);
        assert_eq!(sd.eigenvalues[0].im, 0.0);
        assert!((sd.eigenvalues[1].re - 0.7).abs() < 1e-10);
        assert!((sd.eigenvalues[2].re - 0.7).abs() < 1e-10);
        let phi0 = sd.right_real(0);
        for &v in phi0.iter() {
            assert!((v - 1.0).abs() < 1e-8, "phi0 not constant: {phi0}");
        }
        let pi0 = sd.left_real(0);
        for &v in pi0.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-10, "pi0 not uniform: {pi0}");
        }
        assert!(sd.biorthonormality_residual() < 1e-8);
    }

    #[test]
    fn identity_matrix_spectrum() {
        let k = DiscretizedKernel::from_matrix(Array2::eye(4));
        let sd = spectral_decomposition(&k, 4).unwrap();
        for lam in &sd.eigenvalues {
            assert!((lam.re - 1.0).abs() < 1e-12 && lam.im == 0.0);
        }
        assert!(sd.biorthonormality_residual() < 1e-8);
    }

    #[test]
    fn rotation_block_keeps_complex_pair() {
        // doubly stochastic with a strong cycle: complex second pair
        let k = DiscretizedKernel::from_matrix(array![
            [0.1, 0.8, 0.1],
            [0.1, 0.1, 0.8],
            [0.8, 0.1, 0.1]
        ]);
        let sd = spectral_decomposition(&k, 3).unwrap();
        assert!((sd.eigenvalues[0].re - 1.0).abs() < 1e-10);
        assert!(sd.eigenvalues[1].im.abs() > 0.1);
        assert!((sd.eigenvalues[1].im + sd.eigenvalues[2].im).abs() < 1e-10);
        assert!(sd.biorthonormality_residual() < 1e-8);
    }

    #[test]
    fn substochastic_principal_pair_is_positive() {
        let k = DiscretizedKernel::from_matrix(array![[0.8, 0.1], [0.1, 0.8]]);
        let sd = spectral_decomposition(&k, 2).unwrap();
        assert!((sd.eigenvalues[0].re - 0.9).abs() < 1e-12);
        let pi0 = sd.left_real(0);
        assert!(pi0.iter().all(|&v| v >= -1e-12));
        assert!((pi0.sum() - 1.0).abs() < 1e-12);
    }
}
