//! Python bindings: build reference-model kernels, run the operator calculus
//! and the committor/QSD estimates from Python.

use ndarray::{Array1, Array2};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use randpoincare::metastable::{self, HProvenance};
use randpoincare::{markov, verify, SamplerConfig};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, n), flat).map_err(err)
}

/// A row-(sub)stochastic kernel over grid cells.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Kernel {
    inner: randpoincare::DiscretizedKernel,
}

#[pymethods]
impl Kernel {
    /// Wraps a bare transition matrix (toy chains, tests).
    #[staticmethod]
    fn from_matrix(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Kernel {
            inner: randpoincare::DiscretizedKernel::from_matrix(to_matrix(rows)?),
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Kernel {
            inner: randpoincare::io::kernel_from_json(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        randpoincare::io::kernel_to_json(&self.inner, Default::default()).map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }

    fn matrix(&self) -> Vec<Vec<f64>> {
        self.inner
            .matrix
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect()
    }

    fn kill_column(&self) -> Option<Vec<f64>> {
        self.inner.kill_column.as_ref().map(|k| k.to_vec())
    }

    fn cell_centers(&self) -> Vec<Vec<f64>> {
        self.inner
            .cells
            .iter()
            .map(|&c| self.inner.grid.center(c))
            .collect()
    }

    fn row_sums(&self) -> Vec<f64> {
        self.inner.row_sums().to_vec()
    }

    fn iterate(&self, n: usize) -> PyResult<Kernel> {
        Ok(Kernel {
            inner: self.inner.iterate(n).map_err(err)?,
        })
    }

    fn kill(&self, cells: Vec<usize>) -> PyResult<Kernel> {
        Ok(Kernel {
            inner: markov::kill(&self.inner, &cells).map_err(err)?,
        })
    }

    fn trace(&self, cells: Vec<usize>) -> PyResult<Kernel> {
        Ok(Kernel {
            inner: markov::trace(&self.inner, &cells).map_err(err)?,
        })
    }

    fn laplace_kernel(&self, cells: Vec<usize>, u: f64) -> PyResult<Kernel> {
        Ok(Kernel {
            inner: markov::laplace_kernel(&self.inner, &cells, u).map_err(err)?,
        })
    }

    /// (lambda0, qsd, principal_right, residual) of a substochastic kernel.
    fn qsd(&self, tol: f64) -> PyResult<(f64, Vec<f64>, Vec<f64>, f64)> {
        let q = markov::qsd(&self.inner, tol).map_err(err)?;
        Ok((
            q.lambda0,
            q.qsd.to_vec(),
            q.principal_right.to_vec(),
            q.residual,
        ))
    }

    fn doob_transform(&self, tol: f64) -> PyResult<Kernel> {
        let q = markov::qsd(&self.inner, tol).map_err(err)?;
        Ok(Kernel {
            inner: markov::doob_transform(&self.inner, &q).map_err(err)?,
        })
    }

    fn committor(&self, a: Vec<usize>, b: Vec<usize>) -> PyResult<Vec<f64>> {
        Ok(markov::committor(&self.inner, &a, &b).map_err(err)?.to_vec())
    }

    fn return_committor(&self, mu: Vec<f64>, a: Vec<usize>, b: Vec<usize>) -> PyResult<f64> {
        markov::return_committor(&self.inner, &Array1::from_vec(mu), &a, &b).map_err(err)
    }

    fn expected_hitting_time(&self, a: Vec<usize>) -> PyResult<Vec<f64>> {
        Ok(markov::expected_hitting_time(&self.inner, &a)
            .map_err(err)?
            .to_vec())
    }

    fn stationary_distribution(&self) -> PyResult<Vec<f64>> {
        Ok(markov::stationary_distribution(&self.inner)
            .map_err(err)?
            .to_vec())
    }

    /// Modulus-ordered eigenvalues as (re, im) pairs.
    fn eigenvalues(&self, count: usize) -> PyResult<Vec<(f64, f64)>> {
        let sd = markov::spectral_decomposition(&self.inner, count).map_err(err)?;
        Ok(sd.eigenvalues.iter().map(|l| (l.re, l.im)).collect())
    }

    /// Full decomposition: eigenvalues plus right and left vectors, all as
    /// (re, im) pairs.
    #[allow(clippy::type_complexity)]
    fn spectral_decomposition(
        &self,
        count: usize,
    ) -> PyResult<(
        Vec<(f64, f64)>,
        Vec<Vec<(f64, f64)>>,
        Vec<Vec<(f64, f64)>>,
    )> {
        let sd = markov::spectral_decomposition(&self.inner, count).map_err(err)?;
        let right: Vec<Vec<(f64, f64)>> = sd
            .right
            .iter()
            .map(|v| v.iter().map(|c| (c.re, c.im)).collect())
            .collect();
        let left: Vec<Vec<(f64, f64)>> = sd
            .left
            .iter()
            .map(|v| v.iter().map(|c| (c.re, c.im)).collect())
            .collect();
        Ok((
            sd.eigenvalues.iter().map(|l| (l.re, l.im)).collect(),
            right,
            left,
        ))
    }
}

/// The built-in two-orbit reference model wrapper.
#[pyclass]
struct ReferenceModel {
    model: randpoincare::SdeModel,
    dt: f64,
    seed: u64,
}

#[pymethods]
impl ReferenceModel {
    #[new]
    #[pyo3(signature = (omega=1.0, sigma=0.1, theta_noise=0.1, dt=1e-3, seed=1))]
    fn new(omega: f64, sigma: f64, theta_noise: f64, dt: f64, seed: u64) -> Self {
        ReferenceModel {
            model: randpoincare::reference_model(omega, sigma, theta_noise),
            dt,
            seed,
        }
    }

    /// Quasipotential barriers between the stable orbits (analytic).
    fn analytic_h(&self) -> Option<Vec<Vec<f64>>> {
        self.model
            .analytic_h_matrix()
            .map(|h| h.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    fn stable_points(&self) -> Option<Vec<Vec<f64>>> {
        self.model.stable_section_points()
    }

    /// Simulates the chain of section returns from x0.
    fn sample_chain(&self, x0: f64, steps: usize) -> PyResult<Vec<f64>> {
        let cfg = SamplerConfig::new(self.dt, self.seed);
        let chain =
            randpoincare::sample_chain(&self.model, &[x0], steps, &cfg).map_err(err)?;
        Ok(chain.scalar_points().to_vec())
    }

    /// Monte Carlo kernel on a uniform grid over the section chart.
    fn build_kernel(&self, cells: usize, samples_per_cell: usize) -> PyResult<Kernel> {
        let grid = randpoincare::Grid::regular(
            self.model.section_primary.chart_lo.clone(),
            self.model.section_primary.chart_hi.clone(),
            vec![cells],
        );
        let cfg = SamplerConfig::new(self.dt, self.seed);
        Ok(Kernel {
            inner: randpoincare::build_kernel(&self.model, &grid, samples_per_cell, &cfg)
                .map_err(err)?,
        })
    }

    /// Periodic orbit location and Floquet multipliers from a chart guess.
    #[allow(clippy::type_complexity)]
    fn find_orbit(&self, guess: f64) -> PyResult<(f64, f64, bool, Vec<(f64, f64)>)> {
        let cfg = SamplerConfig::new(self.dt, self.seed);
        let orbit = randpoincare::floquet::find_periodic_orbit(&self.model, &[guess], 1e-10, &cfg)
            .map_err(err)?;
        Ok((
            orbit.chart[0],
            orbit.period,
            orbit.stable,
            orbit.multipliers.iter().map(|m| (m.re, m.im)).collect(),
        ))
    }

    /// Metastable structure on the kernel's grid: returns the ball cell sets
    /// in metastable order plus the hierarchy margin.
    #[allow(clippy::type_complexity)]
    fn detect_structure(
        &self,
        kernel: &Kernel,
        delta: f64,
    ) -> PyResult<(Vec<Vec<usize>>, Vec<Vec<f64>>, f64)> {
        let cfg = SamplerConfig::new(self.dt, self.seed);
        let structure =
            metastable::detect_balls(&kernel.inner, &self.model, delta, &cfg).map_err(err)?;
        let h = self
            .model
            .analytic_h_matrix()
            .ok_or_else(|| PyValueError::new_err("no analytic H matrix"))?;
        let structure = structure
            .with_hierarchy(h, HProvenance::Analytic)
            .map_err(err)?;
        Ok((
            structure.balls.clone(),
            structure.centers.clone(),
            structure.theta.unwrap_or(f64::NAN),
        ))
    }
}

/// Least-squares transition-exponent fit of (sigma, probability) points:
/// returns (H, intercept, r_squared).
#[pyfunction]
fn estimate_exponent(points: Vec<(f64, f64)>) -> PyResult<(f64, f64, f64)> {
    verify::estimate_exponent(&points).map_err(err)
}

/// Metastable order (most stable first) and margin theta of an H matrix.
#[pyfunction]
fn hierarchy_order(h: Vec<Vec<f64>>) -> PyResult<(Vec<usize>, f64)> {
    metastable::hierarchy_order(&to_matrix(h)?).map_err(err)
}

#[pymodule]
fn randpoincare_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Kernel>()?;
    m.add_class::<ReferenceModel>()?;
    m.add_function(wrap_pyfunction!(estimate_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(hierarchy_order, m)?)?;
    Ok(())
}
