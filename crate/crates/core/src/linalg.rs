//! Dense LU solves with partial pivoting, real and complex.
//!
//! The systems in this crate stay small (a few hundred rows), so a plain
//! pure-Rust factorization is plenty; it also keeps solves off the LAPACK
//! threading path, which allocates large per-call stack buffers.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

pub(crate) trait LinScalar:
    Copy
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
{
    fn zero() -> Self;
    fn one() -> Self;
    fn modulus(self) -> f64;
}

impl LinScalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl LinScalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
}

pub(crate) struct Lu<T> {
    lu: Array2<T>,
    pivots: Vec<usize>,
    swaps: usize,
}

/// Factorizes in place with partial pivoting. Reports singularity when a
/// pivot falls below 1e-13 times the largest initial entry.
pub(crate) fn lu_factor<T: LinScalar>(mut a: Array2<T>) -> Option<Lu<T>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let amax = a.iter().map(|v| v.modulus()).fold(0.0f64, f64::max);
    let threshold = 1e-13 * amax.max(f64::MIN_POSITIVE);
    let mut pivots = Vec::with_capacity(n);
    let mut swaps = 0;
    for k in 0..n {
        let mut p = k;
        let mut best = a[[k, k]].modulus();
        for i in k + 1..n {
            let v = a[[i, k]].modulus();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best <= threshold {
            return None;
        }
        if p != k {
            for j in 0..n {
                let tmp = a[[k, j]];
                a[[k, j]] = a[[p, j]];
                a[[p, j]] = tmp;
            }
            swaps += 1;
        }
        pivots.push(p);
        let pivot = a[[k, k]];
        for i in k + 1..n {
            let factor = a[[i, k]] / pivot;
            a[[i, k]] = factor;
            for j in k + 1..n {
                let sub = factor * a[[k, j]];
                a[[i, j]] = a[[i, j]] - sub;
            }
        }
    }
    Some(Lu {
        lu: a,
        pivots,
        swaps,
    })
}

impl<T: LinScalar> Lu<T> {
    pub(crate) fn solve(&self, b: &Array1<T>) -> Array1<T> {
        let n = self.lu.nrows();
        let mut x = b.clone();
        // the factorization swaps full rows, so b takes the whole permutation
        // before the triangular sweeps
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                let tmp = x[k];
                x[k] = x[p];
                x[p] = tmp;
            }
        }
        for k in 0..n {
            let xk = x[k];
            for i in k + 1..n {
                let sub = self.lu[[i, k]] * xk;
                x[i] = x[i] - sub;
            }
        }
        for k in (0..n).rev() {
            let mut acc = x[k];
            for j in k + 1..n {
                let sub = self.lu[[k, j]] * x[j];
                acc = acc - sub;
            }
            x[k] = acc / self.lu[[k, k]];
        }
        x
    }

    pub(crate) fn det(&self) -> T {
        let n = self.lu.nrows();
        let mut d = if self.swaps.is_multiple_of(2) {
            T::one()
        } else {
            -T::one()
        };
        for k in 0..n {
            d = d * self.lu[[k, k]];
        }
        d
    }
}

/// Convenience: solve A x = b, None when singular.
pub(crate) fn solve<T: LinScalar>(a: &Array2<T>, b: &Array1<T>) -> Option<Array1<T>> {
    lu_factor(a.clone()).map(|lu| lu.solve(b))
}

/// Solve with several right-hand sides given as matrix columns.
pub(crate) fn solve_many<T: LinScalar>(a: &Array2<T>, rhs: &Array2<T>) -> Option<Array2<T>> {
    let lu = lu_factor(a.clone())?;
    let mut out = Array2::from_elem(rhs.dim(), T::zero());
    for j in 0..rhs.ncols() {
        let col = rhs.column(j).to_owned();
        out.column_mut(j).assign(&lu.solve(&col));
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solves_a_real_system() {
        let a = array![[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let b = array![1.0, 2.0, 3.0];
        let x = solve(&a, &b).unwrap();
        let r = a.dot(&x) - &b;
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn detects_singularity() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        assert!(solve(&a, &array![1.0, 0.0]).is_none());
    }

    #[test]
    fn determinant_tracks_pivoting() {
        let a = array![[0.0, 1.0], [1.0, 0.0]];
        let lu = lu_factor(a).unwrap();
        assert!((lu.det() + 1.0).abs() < 1e-14);
    }

    #[test]
    fn complex_solve() {
        let i = Complex64::new(0.0, 1.0);
        let one = Complex64::new(1.0, 0.0);
        let a = array![[one * 2.0, i], [-i, one * 3.0]];
        let b = array![one, i];
        let x = solve(&a, &b).unwrap();
        let r0 = a[[0, 0]] * x[0] + a[[0, 1]] * x[1] - b[0];
        let r1 = a[[1, 0]] * x[0] + a[[1, 1]] * x[1] - b[1];
        assert!(r0.norm() < 1e-13 && r1.norm() < 1e-13);
    }
}

#[cfg(test)]
mod bigtests {
    use super::*;

    fn lcg(state: &mut u64) -> f64 {
        *state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((*state >> 33) as f64) / (u32::MAX as f64) - 0.5
    }

    #[test]
    fn residual_stays_small_on_larger_systems() {
        let n = 150;
        let mut state = 0x12345678u64;
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                a[[i, j]] = 0.3 * lcg(&mut state) / n as f64;
            }
            a[[i, i]] += 1.0;
        }
        let b = Array1::from_iter((0..n).map(|_| lcg(&mut state)));
        let x = solve(&a, &b).unwrap();
        let r = a.dot(&x) - &b;
        let worst = r.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        assert!(worst < 1e-12, "residual {worst}");
    }

    #[test]
    fn pivot_swaps_stay_consistent() {
        // rows shuffled so that partial pivoting must permute heavily; a
        // diagonally dominant test alone never exercises the swaps
        let n = 120;
        let mut state = 0xabcdef01u64;
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                a[[i, j]] = 0.3 * lcg(&mut state) / n as f64;
            }
            // dominance on an off-diagonal band instead of the diagonal
            a[[i, (i + 7) % n]] += 1.0;
        }
        let b = Array1::from_iter((0..n).map(|_| lcg(&mut state)));
        let x = solve(&a, &b).unwrap();
        let r = a.dot(&x) - &b;
        let worst = r.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        assert!(worst < 1e-12, "residual {worst}");
    }
}
