//! Fixed-step Euler–Maruyama integration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Confinement, SdeModel};
use crate::error::{Error, Result};

/// A sampled trajectory. States are stored flat, `dim` values per point.
#[derive(Debug, Clone)]
pub struct Path {
    pub dim: usize,
    pub times: Vec<f64>,
    states: Vec<f64>,
    pub dt: f64,
    /// Index of the first state outside the domain (variant B only); the
    /// path is truncated there.
    pub exit_index: Option<usize>,
}

impl Path {
    pub fn new(dim: usize, dt: f64) -> Self {
        Path {
            dim,
            times: Vec::new(),
            states: Vec::new(),
            dt,
            exit_index: None,
        }
    }

    pub fn from_points(dim: usize, dt: f64, times: Vec<f64>, flat_states: Vec<f64>) -> Self {
        assert_eq!(times.len() * dim, flat_states.len());
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        Path {
            dim,
            times,
            states: flat_states,
            dt,
            exit_index: None,
        }
    }

    pub fn push(&mut self, t: f64, z: &[f64]) {
        debug_assert_eq!(z.len(), self.dim);
        self.times.push(t);
        self.states.extend_from_slice(z);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Ok,
    NonFinite,
    /// Left the invariant domain under variant B killing.
    Exited,
}

/// One Euler–Maruyama step at a time; owns the scratch buffers.
pub struct Stepper<'m> {
    model: &'m SdeModel,
    pub dt: f64,
    sqrt_dt: f64,
    drift_buf: Vec<f64>,
    diff_buf: Vec<f64>,
    noise_buf: Vec<f64>,
}

impl<'m> Stepper<'m> {
    pub fn new(model: &'m SdeModel, dt: f64) -> Self {
        assert!(dt > 0.0, "dt must be positive");
        Stepper {
            model,
            dt,
            sqrt_dt: dt.sqrt(),
            drift_buf: vec![0.0; model.dim],
            diff_buf: vec![0.0; model.dim * model.noise_dim],
            noise_buf: vec![0.0; model.noise_dim],
        }
    }

    pub fn step(&mut self, z: &mut [f64], rng: &mut ChaCha8Rng) -> StepOutcome {
        let model = self.model;
        model.drift(z, &mut self.drift_buf);
        if model.sigma > 0.0 {
            model.diffusion_into(z, &mut self.diff_buf);
            for xi in self.noise_buf.iter_mut() {
                *xi = StandardNormal.sample(rng);
            }
            let amp = model.sigma * self.sqrt_dt;
            for (i, (zi, fi)) in z.iter_mut().zip(&self.drift_buf).enumerate() {
                let mut gx = 0.0;
                for (j, xi) in self.noise_buf.iter().enumerate() {
                    gx += self.diff_buf[i * model.noise_dim + j] * xi;
                }
                *zi += fi * self.dt + amp * gx;
            }
        } else {
            for (zi, fi) in z.iter_mut().zip(&self.drift_buf) {
                *zi += fi * self.dt;
            }
        }
        if !z.iter().all(|v| v.is_finite()) {
            return StepOutcome::NonFinite;
        }
        if model.confinement == Confinement::KilledB && !model.domain.contains(z) {
            return StepOutcome::Exited;
        }
        StepOutcome::Ok
    }
}

/// Deterministic Euler stepper for the sigma = 0 flow; shares the scheme with
/// the stochastic path so fixed points agree exactly.
pub struct DetStepper<'m> {
    model: &'m SdeModel,
    pub dt: f64,
    buf: Vec<f64>,
}

impl<'m> DetStepper<'m> {
    pub fn new(model: &'m SdeModel, dt: f64) -> Self {
        DetStepper {
            model,
            dt,
            buf: vec![0.0; model.dim],
        }
    }

    pub fn step(&mut self, z: &mut [f64]) {
        self.model.drift(z, &mut self.buf);
        for (zi, fi) in z.iter_mut().zip(&self.buf) {
            *zi += fi * self.dt;
        }
    }
}

/// Integrates the SDE from `z0` over `[0, horizon]` with fixed step `dt`.
/// Deterministic given `(seed, dt)`; with sigma = 0 this is the Euler scheme
/// for the underlying ODE.
pub fn integrate_path(
    model: &SdeModel,
    z0: &[f64],
    dt: f64,
    horizon: f64,
    seed: u64,
) -> Result<Path> {
    if dt <= 0.0 {
        return Err(Error::InvalidParameter("dt must be positive".into()));
    }
    if z0.len() != model.dim {
        return Err(Error::InvalidParameter(format!(
            "initial state has dimension {}, model expects {}",
            z0.len(),
            model.dim
        )));
    }
    if !model.domain.contains(z0) {
        return Err(Error::InvalidParameter("z0 outside domain".into()));
    }
    let steps = (horizon / dt).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stepper = Stepper::new(model, dt);
    let mut z = z0.to_vec();
    let mut path = Path::new(model.dim, dt);
    path.push(0.0, &z);
    for n in 1..=steps {
        let t = n as f64 * dt;
        match stepper.step(&mut z, &mut rng) {
            StepOutcome::Ok => path.push(t, &z),
            StepOutcome::NonFinite => return Err(Error::NonFiniteState { t }),
            StepOutcome::Exited => {
                path.push(t, &z);
                path.exit_index = Some(path.len() - 1);
                break;
            }
        }
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{linear_decay_model, reference_model};

    #[test]
    fn linear_ode_endpoint_matches_exponential() {
        let model = linear_decay_model(2, 1.0, 4.0, 0.0);
        let path = integrate_path(&model, &[1.0, 0.0], 1e-4, 1.0, 0).unwrap();
        let exact = (-1.0f64).exp();
        let end = path.last_state();
        assert!((end[0] - exact).abs() < 1e-3, "endpoint {end:?} vs {exact}");
        assert!(end[1].abs() < 1e-12);
    }

    #[test]
    fn halving_dt_halves_the_error() {
        let model = linear_decay_model(2, 1.0, 4.0, 0.0);
        let exact = (-1.0f64).exp();
        let err = |dt: f64| {
            let p = integrate_path(&model, &[1.0, 0.0], dt, 1.0, 0).unwrap();
            (p.last_state()[0] - exact).abs()
        };
        let ratio = err(1e-3) / err(5e-4);
        assert!((1.7..2.3).contains(&ratio), "convergence ratio {ratio}");
    }

    #[test]
    fn reference_orbit_stays_on_circle() {
        let model = reference_model(1.0, 0.0, 0.1);
        let period = 2.0 * std::f64::consts::PI;
        let path = integrate_path(&model, &[1.0, 0.0], 1e-3, period, 0).unwrap();
        for i in 0..path.len() {
            assert!((path.state(i)[0] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let model = reference_model(1.0, 0.12, 0.1);
        let a = integrate_path(&model, &[1.1, 0.0], 1e-3, 5.0, 42).unwrap();
        let b = integrate_path(&model, &[1.1, 0.0], 1e-3, 5.0, 42).unwrap();
        assert_eq!(a.len(), b.len());
        for i in 0..a.len() {
            assert_eq!(a.state(i), b.state(i), "paths diverge at {i}");
        }
        let c = integrate_path(&model, &[1.1, 0.0], 1e-3, 5.0, 43).unwrap();
        assert_ne!(a.state(a.len() - 1), c.state(c.len() - 1));
    }

    #[test]
    fn blowup_is_reported_as_non_finite() {
        use crate::sde::{Confinement, Domain, SdeModel, Section};
        use std::sync::Arc;
        let drift: crate::sde::VectorField = Arc::new(|z: &[f64], out: &mut [f64]| {
            out[0] = z[0] * z[0] * z[0];
            out[1] = 1.0;
        });
        let diffusion: crate::sde::MatrixField = Arc::new(|_z: &[f64], out: &mut [f64]| {
            out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        });
        let section = |offset: f64| Section {
            normal: vec![0.0, 1.0],
            offset,
            wrap: None,
            tangents: vec![vec![1.0, 0.0]],
            origin: vec![0.0, offset],
            chart_lo: vec![-1e3],
            chart_hi: vec![1e3],
        };
        let model = SdeModel::new(
            2,
            2,
            drift,
            diffusion,
            Domain::new(
                vec![f64::NEG_INFINITY; 2],
                vec![f64::INFINITY; 2],
            ),
            section(0.0),
            section(1.0),
            0.0,
            Confinement::RecurrentA,
        );
        let err = integrate_path(&model, &[3.0, 0.0], 0.5, 50.0, 0);
        assert!(matches!(err, Err(crate::error::Error::NonFiniteState { .. })));
    }

    #[test]
    fn energy_check_over_ten_periods() {
        let model = reference_model(1.0, 0.0, 0.1);
        let period = 2.0 * std::f64::consts::PI;
        for r0 in [1.0, 2.2] {
            let path = integrate_path(&model, &[r0, 0.0], 1e-3, 10.0 * period, 0).unwrap();
            for i in 0..path.len() {
                assert!((path.state(i)[0] - r0).abs() <= 1e-5);
            }
        }
    }
}
