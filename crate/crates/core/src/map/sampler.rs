//! Monte Carlo estimation of the random Poincare map on a grid.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{DiscretizedKernel, Grid};
use crate::error::{Error, Result};
use crate::sde::{
    Confinement, CrossingChain, CrossingDetector, SdeModel, SectionId, StepOutcome, Stepper,
};

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub dt: f64,
    pub seed: u64,
    /// A single return leg exceeding this flow time counts as a timeout,
    /// flagging a violation of the finite-return-time property.
    pub max_leg_time: f64,
    pub transversality_margin: f64,
}

impl SamplerConfig {
    pub fn new(dt: f64, seed: u64) -> Self {
        SamplerConfig {
            dt,
            seed,
            max_leg_time: 1e4,
            transversality_margin: 1e-6,
        }
    }
}

pub(crate) enum LegOutcome {
    Returned { chart: Vec<f64>, time: f64 },
    Killed,
}

/// Runs one return leg: from a state on the primary section, integrate until
/// the path crosses the secondary then the primary section.
pub(crate) fn one_return(
    model: &SdeModel,
    stepper: &mut Stepper<'_>,
    config: &SamplerConfig,
    start_chart: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<LegOutcome> {
    let mut detector = CrossingDetector::new(config.dt * 1e-3, config.transversality_margin);
    let mut z = model.section_primary.embed(start_chart);
    let mut t = 0.0;
    let max_steps = (config.max_leg_time / config.dt).ceil() as usize;
    let mut z_prev = z.clone();
    for _ in 0..max_steps {
        z_prev.copy_from_slice(&z);
        let outcome = stepper.step(&mut z, rng);
        let t_next = t + config.dt;
        match outcome {
            StepOutcome::NonFinite => return Err(Error::NonFiniteState { t: t_next }),
            StepOutcome::Exited => return Ok(LegOutcome::Killed),
            StepOutcome::Ok => {}
        }
        if let Some(ev) = detector.observe(model, t, &z_prev, t_next, &z) {
            if ev.section == SectionId::Primary {
                return Ok(LegOutcome::Returned {
                    chart: model.section_primary.chart(&ev.state),
                    time: ev.time,
                });
            }
        }
        t = t_next;
    }
    Err(Error::Timeout {
        max_time: config.max_leg_time,
    })
}

/// Simulates the chain X_0 = x0, X_1, ..., until `steps` returns to the
/// primary section (or killing under variant B). Each leg uses fresh noise
/// from one deterministic stream.
pub fn sample_chain(
    model: &SdeModel,
    x0: &[f64],
    steps: usize,
    config: &SamplerConfig,
) -> Result<CrossingChain> {
    if steps < 1 {
        return Err(Error::InvalidParameter("steps must be >= 1".into()));
    }
    let d = model.section_primary.chart_dim();
    if x0.len() != d {
        return Err(Error::InvalidParameter(
            "x0 dimension does not match the section chart".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut stepper = Stepper::new(model, config.dt);
    let mut chain = CrossingChain::new(d);
    let mut x = x0.to_vec();
    let mut t_origin = 0.0;
    for _ in 0..steps {
        match one_return(model, &mut stepper, config, &x, &mut rng)? {
            LegOutcome::Returned { chart, time } => {
                t_origin += time;
                chain.push(t_origin, &chart);
                x = chart;
            }
            LegOutcome::Killed => {
                chain.killed_at = Some(chain.len());
                break;
            }
        }
    }
    Ok(chain)
}

/// Estimates the one-return kernel on the grid: `samples_per_cell`
/// independent legs from each cell center, rows normalized by completed
/// samples. Cells run in parallel with per-cell streams seeded
/// `seed XOR cell`, so the result is reproducible bit-for-bit.
pub fn build_kernel(
    model: &SdeModel,
    grid: &Grid,
    samples_per_cell: usize,
    config: &SamplerConfig,
) -> Result<DiscretizedKernel> {
    if samples_per_cell < 100 {
        return Err(Error::InvalidParameter(
            "samples_per_cell must be at least 100".into(),
        ));
    }
    if grid.dim() != model.section_primary.chart_dim() {
        return Err(Error::InvalidParameter(
            "grid dimension does not match the section chart".into(),
        ));
    }
    let n = grid.n_cells();
    let rows: Vec<Result<(Vec<f64>, f64, u64)>> = (0..n)
        .into_par_iter()
        .map(|cell| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ cell as u64);
            let mut stepper = Stepper::new(model, config.dt);
            let start = grid.center(cell);
            let mut counts = vec![0.0f64; n];
            let mut killed = 0.0f64;
            let mut completed = 0u64;
            for _ in 0..samples_per_cell {
                match one_return(model, &mut stepper, config, &start, &mut rng) {
                    Ok(LegOutcome::Returned { chart, .. }) => {
                        counts[grid.locate_clamped(&chart)] += 1.0;
                        completed += 1;
                    }
                    Ok(LegOutcome::Killed) => {
                        killed += 1.0;
                        completed += 1;
                    }
                    Err(Error::Timeout { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            if completed == 0 {
                return Err(Error::EmptyRow { cell });
            }
            let norm = completed as f64;
            for c in counts.iter_mut() {
                *c /= norm;
            }
            Ok((counts, killed / norm, completed))
        })
        .collect();

    let mut matrix = Array2::zeros((n, n));
    let mut kill = Array1::zeros(n);
    let mut sample_counts = Vec::with_capacity(n);
    let mut any_kill = false;
    for (i, row) in rows.into_iter().enumerate() {
        let (counts, killed, completed) = row?;
        for (j, &v) in counts.iter().enumerate() {
            matrix[[i, j]] = v;
        }
        if killed > 0.0 {
            any_kill = true;
        }
        kill[i] = killed;
        sample_counts.push(completed);
    }
    let kernel = DiscretizedKernel {
        grid: grid.clone(),
        cells: (0..n).collect(),
        matrix,
        kill_column: if any_kill || model.confinement == Confinement::KilledB {
            Some(kill)
        } else {
            None
        },
        sample_counts: Some(sample_counts),
        sigma: model.sigma,
    };
    kernel.validate(1e-12)?;
    Ok(kernel)
}
