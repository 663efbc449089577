//! Freidlin–Wentzell action of a discretized path.

use ndarray::Array1;

use super::{Path, SdeModel};
use crate::error::{Error, Result};

/// Left-endpoint Riemann sum of (1/2) (v - f)^T D^{-1} (v - f) dt with the
/// velocity v from finite differences. Zero (up to discretization) exactly on
/// deterministic solutions.
pub fn path_action(model: &SdeModel, path: &Path) -> Result<f64> {
    if path.len() < 2 {
        return Err(Error::InvalidParameter(
            "path needs at least two points".into(),
        ));
    }
    use ndarray_linalg::{Factorize, Solve};
    let mut action = 0.0;
    let mut f = vec![0.0; model.dim];
    for i in 0..path.len() - 1 {
        let z0 = path.state(i);
        let z1 = path.state(i + 1);
        let dt = path.times[i + 1] - path.times[i];
        model.drift(z0, &mut f);
        let u = Array1::from_iter(
            z0.iter()
                .zip(z1)
                .zip(&f)
                .map(|((a, b), fi)| (b - a) / dt - fi),
        );
        let d = model.d_matrix(z0);
        let lu = d
            .factorize()
            .map_err(|_| Error::SingularDiffusion { index: i })?;
        let w = lu
            .solve(&u)
            .map_err(|_| Error::SingularDiffusion { index: i })?;
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularDiffusion { index: i });
        }
        action += 0.5 * u.dot(&w) * dt;
    }
    Ok(action)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{integrate_path, linear_decay_model, reference_model, Path};

    #[test]
    fn deterministic_path_has_zero_action() {
        let model = reference_model(1.0, 0.0, 0.1);
        let path = integrate_path(&model, &[1.3, 0.0], 1e-3, 3.0, 0).unwrap();
        let a = path_action(&model, &path).unwrap();
        assert!(a.abs() <= 1e-8, "action {a}");
    }

    #[test]
    fn straight_line_against_no_drift() {
        // 1D-like: f = 0 via rate 0, D = I; straight path 0 -> a in time T
        let model = linear_decay_model(2, 0.0, 10.0, 1.0);
        let (a, t_total, n) = (2.0, 4.0, 4000);
        let dt = t_total / n as f64;
        let mut flat = Vec::new();
        let mut times = Vec::new();
        for i in 0..=n {
            times.push(i as f64 * dt);
            flat.extend_from_slice(&[a * i as f64 / n as f64, 0.0]);
        }
        let path = Path::from_points(2, dt, times, flat);
        let act = path_action(&model, &path).unwrap();
        let exact = a * a / (2.0 * t_total);
        assert!((act - exact).abs() < 1e-10, "{act} vs {exact}");
    }

    #[test]
    fn uphill_radial_path_costs_twice_the_potential_difference() {
        // reversed radial flow: dr/dt = +V'(r), dtheta/dt = omega climbs the
        // barrier from r = 1 to r = 1.5 at action 2 [V(1.5) - V(1)]
        let model = reference_model(1.0, 0.0, 0.1);
        let dt = 1e-4;
        let eps = 1e-3;
        let mut r: f64 = 1.0 + eps;
        let mut theta = 0.0;
        let mut times = vec![0.0];
        let mut flat = vec![r, theta];
        let vprime = |r: f64| (r - 1.0) * (r - 1.5) * (r - 2.2);
        let mut t = 0.0;
        while r < 1.5 - eps {
            r += vprime(r) * dt;
            theta += 1.0 * dt;
            t += dt;
            times.push(t);
            flat.extend_from_slice(&[r, theta]);
        }
        let path = Path::from_points(2, dt, times, flat);
        let act = path_action(&model, &path).unwrap();
        let v = |r: f64| model.radial_potential(r).unwrap();
        let exact = 2.0 * (v(path.last_state()[0]) - v(path.state(0)[0]));
        assert!(
            (act - exact).abs() < 5e-4,
            "action {act} vs analytic {exact}"
        );
        // and the analytic barrier itself: 2 * 0.0197917
        assert!((exact - 0.0395833).abs() < 1e-4);
    }

    #[test]
    fn action_is_nonnegative() {
        let model = reference_model(1.0, 0.15, 0.1);
        for seed in 0..5 {
            let path = integrate_path(&model, &[1.2, 0.0], 1e-3, 2.0, seed).unwrap();
            assert!(path_action(&model, &path).unwrap() >= 0.0);
        }
    }
}
