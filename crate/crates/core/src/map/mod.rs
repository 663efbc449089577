//! Discretization of the random Poincare map: a uniform grid over the
//! primary-section chart and the row-(sub)stochastic matrix estimated on it.

mod sampler;

pub use sampler::{build_kernel, sample_chain, SamplerConfig};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform axis-aligned partition of the chart box. Cells are ordered
/// lexicographically, first axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub shape: Vec<usize>,
}

impl Grid {
    pub fn regular(lo: Vec<f64>, hi: Vec<f64>, shape: Vec<usize>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert_eq!(lo.len(), shape.len());
        assert!(shape.iter().all(|&n| n > 0));
        assert!(lo.iter().zip(&hi).all(|(a, b)| a < b));
        Grid { lo, hi, shape }
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn n_cells(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(&self.shape)
            .map(|((a, b), &n)| (b - a) / n as f64)
            .collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.widths().iter().product()
    }

    fn unflatten(&self, idx: usize) -> Vec<usize> {
        let mut rest = idx;
        self.shape
            .iter()
            .map(|&n| {
                let i = rest % n;
                rest /= n;
                i
            })
            .collect()
    }

    pub fn center(&self, idx: usize) -> Vec<f64> {
        let multi = self.unflatten(idx);
        let w = self.widths();
        multi
            .iter()
            .enumerate()
            .map(|(ax, &i)| self.lo[ax] + (i as f64 + 0.5) * w[ax])
            .collect()
    }

    /// Cell containing `x`, or None outside the box. Points exactly on the
    /// upper boundary belong to the last cell.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let w = self.widths();
        let mut idx = 0;
        let mut stride = 1;
        for ax in 0..self.dim() {
            if x[ax] < self.lo[ax] || x[ax] > self.hi[ax] {
                return None;
            }
            let mut i = ((x[ax] - self.lo[ax]) / w[ax]).floor() as usize;
            if i >= self.shape[ax] {
                i = self.shape[ax] - 1;
            }
            idx += i * stride;
            stride *= self.shape[ax];
        }
        Some(idx)
    }

    /// Nearest cell to `x`, clamping coordinates into the box.
    pub fn locate_clamped(&self, x: &[f64]) -> usize {
        let clamped: Vec<f64> = x
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&lo, &hi))| v.clamp(lo, hi))
            .collect();
        self.locate(&clamped).expect("clamped point is in the box")
    }

    /// Indices of cells whose center lies within `radius` of `center` in the
    /// sup norm.
    pub fn cells_within(&self, center: &[f64], radius: f64) -> Vec<usize> {
        (0..self.n_cells())
            .filter(|&i| {
                self.center(i)
                    .iter()
                    .zip(center)
                    .all(|(a, b)| (a - b).abs() <= radius)
            })
            .collect()
    }
}

/// Row-(sub)stochastic transition matrix over grid cells: the numerical
/// stand-in for the kernel density k(x, y).
///
/// `cells[i]` is the grid cell backing row/column `i`; derived kernels
/// (killed, traced) keep the original grid and record the retained cells.
#[derive(Debug, Clone)]
pub struct DiscretizedKernel {
    pub grid: Grid,
    pub cells: Vec<usize>,
    pub matrix: Array2<f64>,
    pub kill_column: Option<Array1<f64>>,
    pub sample_counts: Option<Vec<u64>>,
    pub sigma: f64,
}

impl DiscretizedKernel {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Wraps a bare matrix with a synthetic unit-interval grid; used for toy
    /// chains and tests.
    pub fn from_matrix(matrix: Array2<f64>) -> Self {
        let n = matrix.nrows();
        assert_eq!(n, matrix.ncols());
        DiscretizedKernel {
            grid: Grid::regular(vec![0.0], vec![1.0], vec![n]),
            cells: (0..n).collect(),
            matrix,
            kill_column: None,
            sample_counts: None,
            sigma: 0.0,
        }
    }

    pub fn from_matrix_with_kill(matrix: Array2<f64>, kill: Array1<f64>) -> Self {
        let mut k = Self::from_matrix(matrix);
        k.kill_column = Some(kill);
        k
    }

    pub fn row_sums(&self) -> Array1<f64> {
        self.matrix.sum_axis(ndarray::Axis(1))
    }

    /// Per-row total mass including the cemetery column.
    pub fn total_row_mass(&self) -> Array1<f64> {
        let mut s = self.row_sums();
        if let Some(kill) = &self.kill_column {
            s += kill;
        }
        s
    }

    pub fn is_stochastic(&self, tol: f64) -> bool {
        self.kill_column
            .as_ref()
            .map(|k| k.iter().all(|&v| v.abs() <= tol))
            .unwrap_or(true)
            && self.row_sums().iter().all(|&s| (s - 1.0).abs() <= tol)
    }

    /// Checks the type invariants: entries in [0, 1], total row mass 1.
    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.matrix.nrows() != self.matrix.ncols() {
            return Err(Error::InvalidParameter("matrix must be square".into()));
        }
        if self
            .matrix
            .iter()
            .any(|&v| !(0.0..=1.0 + tol).contains(&v))
        {
            return Err(Error::InvalidParameter(
                "matrix entries outside [0, 1]".into(),
            ));
        }
        for (i, &s) in self.total_row_mass().iter().enumerate() {
            if (s - 1.0).abs() > tol {
                return Err(Error::InvalidParameter(format!(
                    "row {i} total mass {s} differs from 1"
                )));
            }
        }
        Ok(())
    }

    /// Maps global grid-cell indices to row indices of this kernel. Errors if
    /// a requested cell is not represented.
    pub fn local_indices(&self, global: &[usize]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(global.len());
        for &g in global {
            match self.cells.iter().position(|&c| c == g) {
                Some(i) => out.push(i),
                None => {
                    return Err(Error::InvalidParameter(format!(
                        "grid cell {g} is not a row of this kernel"
                    )))
                }
            }
        }
        Ok(out)
    }

    /// n-step kernel by matrix power; kill mass is propagated so the result
    /// keeps unit total row mass.
    pub fn iterate(&self, n: usize) -> Result<DiscretizedKernel> {
        if n < 1 {
            return Err(Error::InvalidParameter("n must be >= 1".into()));
        }
        let mut m = self.matrix.clone();
        let base = self
            .kill_column
            .clone()
            .unwrap_or_else(|| Array1::zeros(self.n()));
        let mut kill = base.clone();
        for _ in 1..n {
            kill = self.matrix.dot(&kill) + &base;
            m = self.matrix.dot(&m);
        }
        let mut out = self.clone();
        out.matrix = m;
        out.kill_column = if self.kill_column.is_some() {
            Some(kill)
        } else {
            None
        };
        out.sample_counts = None;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    pub(crate) fn k3() -> DiscretizedKernel {
        DiscretizedKernel::from_matrix(array![
            [0.8, 0.1, 0.1],
            [0.1, 0.8, 0.1],
            [0.1, 0.1, 0.8]
        ])
    }

    #[test]
    fn grid_roundtrip() {
        let g = Grid::regular(vec![0.5], vec![3.0], vec![200]);
        assert_eq!(g.n_cells(), 200);
        for i in [0, 37, 199] {
            let c = g.center(i);
            assert_eq!(g.locate(&c), Some(i));
        }
        assert_eq!(g.locate(&[3.0]), Some(199));
        assert_eq!(g.locate(&[3.0001]), None);
        assert_eq!(g.locate_clamped(&[17.0]), 199);
    }

    #[test]
    fn grid_2d_cells() {
        let g = Grid::regular(vec![0.0, 0.0], vec![1.0, 2.0], vec![4, 5]);
        assert_eq!(g.n_cells(), 20);
        assert!((g.cell_volume() - 0.1).abs() < 1e-15);
        for i in 0..20 {
            assert_eq!(g.locate(&g.center(i)), Some(i));
        }
    }

    #[test]
    fn iterate_identity_and_associativity() {
        let k = k3();
        let k1 = k.iterate(1).unwrap();
        assert_eq!(k1.matrix, k.matrix);
        let k4a = k.iterate(2).unwrap().iterate(2).unwrap();
        let k4b = k.iterate(4).unwrap();
        for (a, b) in k4a.matrix.iter().zip(k4b.matrix.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn iterate_squares_diagonal() {
        let k2 = k3().iterate(2).unwrap();
        // 0.64 + 0.01 + 0.01
        for i in 0..3 {
            assert!((k2.matrix[[i, i]] - 0.66).abs() < 1e-12);
        }
    }

    #[test]
    fn iterate_propagates_kill_mass() {
        let k = DiscretizedKernel::from_matrix_with_kill(
            array![[0.8, 0.1], [0.1, 0.8]],
            array![0.1, 0.1],
        );
        let k3 = k.iterate(3).unwrap();
        k3.validate(1e-12).unwrap();
        assert!(k3.kill_column.unwrap().iter().all(|&v| v > 0.0));
    }
}
