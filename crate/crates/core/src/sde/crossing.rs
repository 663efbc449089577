//! Section-crossing detection with the secondary-section alternation rule.
//!
//! A primary crossing is recorded only after an intervening secondary
//! crossing, which keeps Brownian recrossings of the section from producing
//! spurious chain steps.

use super::{Path, SdeModel, Section};
use crate::error::{Error, Result};

/// Chain of recorded primary-section crossings, in chart coordinates.
#[derive(Debug, Clone)]
pub struct CrossingChain {
    pub chart_dim: usize,
    /// Chart coordinates of the recorded crossings, flat.
    points: Vec<f64>,
    pub crossing_times: Vec<f64>,
    /// Chain index at which the path left the domain (variant B).
    pub killed_at: Option<usize>,
}

impl CrossingChain {
    pub fn new(chart_dim: usize) -> Self {
        CrossingChain {
            chart_dim,
            points: Vec::new(),
            crossing_times: Vec::new(),
            killed_at: None,
        }
    }

    pub fn len(&self) -> usize {
        self.crossing_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.crossing_times.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.chart_dim..(i + 1) * self.chart_dim]
    }

    pub fn push(&mut self, t: f64, x: &[f64]) {
        debug_assert_eq!(x.len(), self.chart_dim);
        self.crossing_times.push(t);
        self.points.extend_from_slice(x);
    }

    /// Scalar view for one-dimensional charts.
    pub fn scalar_points(&self) -> &[f64] {
        assert_eq!(self.chart_dim, 1);
        &self.points
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectionId {
    Primary,
    Secondary,
}

#[derive(Debug, Clone)]
pub struct CrossingEvent {
    pub section: SectionId,
    pub time: f64,
    pub state: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Waiting {
    Secondary,
    Primary,
}

/// Streaming state machine: feed consecutive path segments, collect the
/// alternating crossing sequence.
pub struct CrossingDetector {
    waiting: Waiting,
    last_sign: Option<f64>,
    pub time_tol: f64,
    pub transversality_margin: f64,
}

impl CrossingDetector {
    pub fn new(time_tol: f64, transversality_margin: f64) -> Self {
        CrossingDetector {
            waiting: Waiting::Secondary,
            last_sign: None,
            time_tol,
            transversality_margin,
        }
    }

    fn active_section<'m>(&self, model: &'m SdeModel) -> &'m Section {
        match self.waiting {
            Waiting::Secondary => &model.section_secondary,
            Waiting::Primary => &model.section_primary,
        }
    }

    /// Observes the segment (t0,z0) -> (t1,z1). Returns the refined crossing
    /// of the section currently waited on, if the segment produces one that
    /// passes the transversality filter.
    pub fn observe(
        &mut self,
        model: &SdeModel,
        t0: f64,
        z0: &[f64],
        t1: f64,
        z1: &[f64],
    ) -> Option<CrossingEvent> {
        let section = self.active_section(model);
        let s1 = section.signed_distance(z1);
        let s0 = match self.last_sign {
            Some(s) => s,
            None => {
                let s = section.signed_distance(z0);
                if s == 0.0 {
                    // starting exactly on the section does not count as a crossing
                    self.last_sign = Some(s1);
                    return None;
                }
                s
            }
        };
        self.last_sign = Some(s1);
        if s0 == 0.0 || s1 == 0.0 || s0.signum() == s1.signum() {
            return None;
        }
        // guard against wrap artifacts of angular sections: a genuine crossing
        // has both endpoints close to the section
        if let Some(period) = section.wrap {
            if s0.abs() > period / 4.0 || s1.abs() > period / 4.0 {
                return None;
            }
        }
        let (tc, zc) = refine_crossing(section, t0, z0, t1, z1, self.time_tol);
        // transversality filter: tangential touches are not crossings
        let f = model.drift_vec(&zc);
        let fn_ = f
            .iter()
            .zip(&section.normal)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            .abs();
        let fnorm = f.iter().map(|a| a * a).sum::<f64>().sqrt();
        if fn_ < self.transversality_margin * fnorm {
            return None;
        }
        let which = match self.waiting {
            Waiting::Secondary => {
                self.waiting = Waiting::Primary;
                SectionId::Secondary
            }
            Waiting::Primary => {
                self.waiting = Waiting::Secondary;
                SectionId::Primary
            }
        };
        // the sign tracking restarts for the newly awaited section
        self.last_sign = Some(self.active_section(model).signed_distance(&zc));
        Some(CrossingEvent {
            section: which,
            time: tc,
            state: zc,
        })
    }
}

/// Bisection on the linear interpolant of one integration step, down to the
/// given time tolerance.
fn refine_crossing(
    section: &Section,
    t0: f64,
    z0: &[f64],
    t1: f64,
    z1: &[f64],
    time_tol: f64,
) -> (f64, Vec<f64>) {
    let interp = |a: f64, out: &mut Vec<f64>| {
        out.clear();
        out.extend(z0.iter().zip(z1).map(|(x0, x1)| x0 + a * (x1 - x0)));
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    let s_lo = section.signed_distance(z0);
    let mut z = Vec::with_capacity(z0.len());
    while (hi - lo) * (t1 - t0) > time_tol {
        let mid = 0.5 * (lo + hi);
        interp(mid, &mut z);
        let s = section.signed_distance(&z);
        if s == 0.0 {
            lo = mid;
            break;
        }
        if s.signum() == s_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = 0.5 * (lo + hi);
    interp(a, &mut z);
    (t0 + a * (t1 - t0), z)
}

/// Extracts the alternating secondary-then-primary crossing chain of a stored
/// path. Crossing times are refined by bisection to `dt * 1e-3`.
pub fn detect_crossings(model: &SdeModel, path: &Path) -> Result<CrossingChain> {
    let mut detector = CrossingDetector::new(path.dt * 1e-3, 1e-6);
    let mut chain = CrossingChain::new(model.section_primary.chart_dim());
    for i in 1..path.len() {
        if let Some(ev) = detector.observe(
            model,
            path.times[i - 1],
            path.state(i - 1),
            path.times[i],
            path.state(i),
        ) {
            if ev.section == SectionId::Primary {
                chain.push(ev.time, &model.section_primary.chart(&ev.state));
            }
        }
    }
    if let Some(idx) = path.exit_index {
        let _ = idx;
        chain.killed_at = Some(chain.len());
    }
    if chain.is_empty() && chain.killed_at.is_none() {
        return Err(Error::NoCrossing);
    }
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{integrate_path, reference_model};
    use std::f64::consts::PI;

    #[test]
    fn uniform_rotation_crossing_times() {
        let omega = 1.3;
        let model = reference_model(omega, 0.0, 0.1);
        // start on Sigma at the stable radius: crossings at multiples of 2 pi / omega
        let path = integrate_path(&model, &[1.0, 0.0], 1e-4, 4.2 * 2.0 * PI / omega, 0).unwrap();
        let chain = detect_crossings(&model, &path).unwrap();
        assert_eq!(chain.len(), 4);
        for (n, &t) in chain.crossing_times.iter().enumerate() {
            let expect = (n + 1) as f64 * 2.0 * PI / omega;
            assert!((t - expect).abs() < 1e-6, "crossing {n}: {t} vs {expect}");
            assert!((chain.point(n)[0] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn alternation_filters_recrossings() {
        // a hand-built path that wiggles back and forth through Sigma without
        // visiting Sigma' in between: only crossings after a Sigma' visit count
        let model = reference_model(1.0, 0.0, 0.1);
        let thetas = [
            -0.1, 0.1, -0.05, 0.2, // wiggles at Sigma before any Sigma' visit
            PI - 0.1,
            PI + 0.1, // Sigma' crossing
            2.0 * PI - 0.1,
            2.0 * PI + 0.1, // genuine Sigma crossing
            2.0 * PI + 0.2,
            2.0 * PI - 0.1, // recross backwards: not recorded (no Sigma' between)
            2.0 * PI + 0.3,
        ];
        let mut flat = Vec::new();
        let times: Vec<f64> = (0..thetas.len()).map(|i| i as f64 * 0.1).collect();
        for &th in &thetas {
            flat.extend_from_slice(&[1.0, th]);
        }
        let path = Path::from_points(2, 0.1, times, flat);
        let chain = detect_crossings(&model, &path).unwrap();
        assert_eq!(chain.len(), 1);
    }

    #[test]
    fn noisy_reference_counts_revolutions() {
        let model = reference_model(1.0, 0.1, 0.1);
        let horizon = 30.0 * 2.0 * PI;
        let path = integrate_path(&model, &[1.0, 0.0], 1e-3, horizon, 7).unwrap();
        let chain = detect_crossings(&model, &path).unwrap();
        // oracle: winding number of the theta coordinate
        let winding = (path.last_state()[1] / (2.0 * PI)).floor() as usize;
        assert!(
            chain.len() == winding || chain.len() == winding + 1,
            "chain {} vs winding {}",
            chain.len(),
            winding
        );
    }

    #[test]
    fn tangential_crossings_are_rejected() {
        use crate::sde::{Confinement, Domain, SdeModel};
        use std::sync::Arc;
        // drift purely radial: tangent to both angular sections everywhere,
        // so sign changes of the section coordinate never count as crossings
        let drift: crate::sde::VectorField = Arc::new(|_z: &[f64], out: &mut [f64]| {
            out[0] = 1.0;
            out[1] = 0.0;
        });
        let diffusion: crate::sde::MatrixField = Arc::new(|_z: &[f64], out: &mut [f64]| {
            out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        });
        let reference = reference_model(1.0, 0.0, 0.1);
        let model = SdeModel::new(
            2,
            2,
            drift,
            diffusion,
            Domain::new(vec![0.0, f64::NEG_INFINITY], vec![10.0, f64::INFINITY]),
            reference.section_primary.clone(),
            reference.section_secondary.clone(),
            0.0,
            Confinement::RecurrentA,
        );
        // a hand-built path sweeping theta through pi and 2 pi
        let thetas = [PI - 0.2, PI + 0.2, 2.0 * PI - 0.2, 2.0 * PI + 0.2];
        let mut flat = Vec::new();
        for &th in &thetas {
            flat.extend_from_slice(&[1.0, th]);
        }
        let times: Vec<f64> = (0..thetas.len()).map(|i| i as f64 * 0.1).collect();
        let path = Path::from_points(2, 0.1, times, flat);
        assert!(matches!(
            detect_crossings(&model, &path),
            Err(Error::NoCrossing)
        ));
        // the same path against the reference drift records the crossing
        let chain = detect_crossings(&reference, &path).unwrap();
        assert_eq!(chain.len(), 1);
    }

    #[test]
    fn empty_path_is_no_crossing() {
        let model = reference_model(1.0, 0.0, 0.1);
        let path = integrate_path(&model, &[1.0, 0.0], 1e-3, 0.5, 0).unwrap();
        assert!(matches!(
            detect_crossings(&model, &path),
            Err(Error::NoCrossing)
        ));
    }
}
