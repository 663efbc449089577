//! SDE models with Poincare sections: the continuous-time layer feeding the
//! random Poincare map.
//!
//! A model is dz_t = f(z_t) dt + sigma g(z_t) dW_t on a positively invariant
//! box, together with two disjoint transversal sections. The primary section
//! carries a d-dimensional chart; chain states live in chart coordinates.

mod action;
mod crossing;
mod integrate;

pub use action::path_action;
pub use crossing::{detect_crossings, CrossingChain, CrossingDetector, CrossingEvent, SectionId};
pub use integrate::{integrate_path, DetStepper, Path, StepOutcome, Stepper};

use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Writes the (d+1) x k diffusion matrix g(z) in row-major order.
pub type MatrixField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Confinement variant of the standing recurrence assumption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confinement {
    /// The process is positive recurrent; paths are never killed.
    RecurrentA,
    /// Leaving the domain sends the chain to an absorbing cemetery state.
    KilledB,
}

/// Axis-aligned bounds of the positively invariant set. Use infinities for
/// unconstrained axes (e.g. an angular coordinate on the universal cover).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Domain {
    /// Unbounded axes are stored as null in JSON (negative infinity here).
    #[serde(with = "crate::serde_util::neg_inf_vec")]
    pub lo: Vec<f64>,
    #[serde(with = "crate::serde_util::pos_inf_vec")]
    pub hi: Vec<f64>,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        Domain { lo, hi }
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&zi, (&lo, &hi))| zi >= lo && zi <= hi)
    }
}

/// An affine hypersurface { z : <n, z> = c } with a d-dimensional chart.
///
/// `wrap` marks the normal coordinate as periodic with the given period, so
/// that e.g. theta = 0 and theta = 2*pi*k describe the same section of a
/// phase-like variable kept on the universal cover.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Section {
    pub normal: Vec<f64>,
    pub offset: f64,
    pub wrap: Option<f64>,
    /// Orthonormal tangent vectors spanning the section (length d).
    pub tangents: Vec<Vec<f64>>,
    /// A point on the section; chart coordinates are measured from here.
    pub origin: Vec<f64>,
    pub chart_lo: Vec<f64>,
    pub chart_hi: Vec<f64>,
}

impl Section {
    /// Signed normal coordinate of `z` relative to the section, wrapped into
    /// (-period/2, period/2] for angular sections.
    pub fn signed_distance(&self, z: &[f64]) -> f64 {
        let raw: f64 = self
            .normal
            .iter()
            .zip(z)
            .map(|(n, zi)| n * zi)
            .sum::<f64>()
            - self.offset;
        match self.wrap {
            None => raw,
            Some(period) => {
                let mut s = raw.rem_euclid(period);
                if s > period / 2.0 {
                    s -= period;
                }
                s
            }
        }
    }

    /// Chart coordinates of a state assumed to lie on (or near) the section.
    pub fn chart(&self, z: &[f64]) -> Vec<f64> {
        self.tangents
            .iter()
            .map(|t| t.iter().zip(z).zip(&self.origin).map(|((ti, zi), oi)| ti * (zi - oi)).sum())
            .collect()
    }

    /// State-space point of a chart coordinate.
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.origin.clone();
        for (ti, xi) in self.tangents.iter().zip(x) {
            for (zj, tj) in z.iter_mut().zip(ti) {
                *zj += xi * tj;
            }
        }
        z
    }

    pub fn chart_dim(&self) -> usize {
        self.tangents.len()
    }
}

/// Built-in drift/diffusion catalog. Only catalog models serialize; custom
/// models are constructed programmatically.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CatalogModel {
    /// Planar model in (r, theta): dr = -V'(r) dt + sigma dW_1,
    /// dtheta = omega dt + sigma * theta_noise dW_2, with
    /// V'(r) = prod_i (r - roots[i]). Sections at theta = 0 and theta = pi.
    RadialWells {
        omega: f64,
        theta_noise: f64,
        roots: Vec<f64>,
        r_min: f64,
        r_max: f64,
    },
    /// dz = -rate * z dt + sigma dW on a box, sections at z_last = 0 / offset.
    LinearDecay { dim: usize, rate: f64, half_width: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub catalog: CatalogModel,
    pub sigma: f64,
    pub confinement: Confinement,
    /// Redundant with the catalog but kept in the file for validation.
    #[serde(default)]
    pub dimension: Option<usize>,
    /// Optional overrides of the catalog defaults.
    #[serde(default)]
    pub domain: Option<Domain>,
    #[serde(default)]
    pub section_primary: Option<Section>,
    #[serde(default)]
    pub section_secondary: Option<Section>,
}

/// A noisy ODE with two disjoint Poincare sections.
#[derive(Clone)]
pub struct SdeModel {
    pub dim: usize,
    pub noise_dim: usize,
    drift: VectorField,
    diffusion: MatrixField,
    pub domain: Domain,
    pub section_primary: Section,
    pub section_secondary: Section,
    pub sigma: f64,
    pub confinement: Confinement,
    pub spec: Option<ModelSpec>,
}

impl std::fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SdeModel")
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("sigma", &self.sigma)
            .field("confinement", &self.confinement)
            .field("spec", &self.spec.as_ref().map(|s| s.name.clone()))
            .finish()
    }
}

impl SdeModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim: usize,
        noise_dim: usize,
        drift: VectorField,
        diffusion: MatrixField,
        domain: Domain,
        section_primary: Section,
        section_secondary: Section,
        sigma: f64,
        confinement: Confinement,
    ) -> Self {
        SdeModel {
            dim,
            noise_dim,
            drift,
            diffusion,
            domain,
            section_primary,
            section_secondary,
            sigma,
            confinement,
            spec: None,
        }
    }

    pub fn drift(&self, z: &[f64], out: &mut [f64]) {
        (self.drift)(z, out);
    }

    pub fn drift_vec(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift(z, &mut out);
        out
    }

    /// g(z) as a (d+1) x k matrix.
    pub fn diffusion_matrix(&self, z: &[f64]) -> Array2<f64> {
        let mut buf = vec![0.0; self.dim * self.noise_dim];
        (self.diffusion)(z, &mut buf);
        Array2::from_shape_vec((self.dim, self.noise_dim), buf).expect("diffusion shape")
    }

    pub(crate) fn diffusion_into(&self, z: &[f64], buf: &mut [f64]) {
        (self.diffusion)(z, buf);
    }

    /// D(z) = g(z) g(z)^T, the diffusion matrix of the generator.
    pub fn d_matrix(&self, z: &[f64]) -> Array2<f64> {
        let g = self.diffusion_matrix(z);
        g.dot(&g.t())
    }

    pub fn with_sigma(&self, sigma: f64) -> Self {
        let mut m = self.clone();
        m.sigma = sigma;
        if let Some(spec) = &mut m.spec {
            spec.sigma = sigma;
        }
        m
    }

    /// Checks the standing assumptions at sampled chart points: sections are
    /// disjoint, the drift is transversal to both sections with the given
    /// margin, and the eigenvalues of D(z) stay within [c_minus, c_plus].
    pub fn validate_assumptions(
        &self,
        samples_per_axis: usize,
        transversality_margin: f64,
        c_minus: f64,
        c_plus: f64,
    ) -> Result<()> {
        use ndarray_linalg::Eigh;
        let gap = (self.section_primary.offset - self.section_secondary.offset).abs();
        let disjoint = match self.section_primary.wrap {
            Some(p) => gap.rem_euclid(p) > 1e-9 && (p - gap.rem_euclid(p)) > 1e-9,
            None => gap > 1e-9
                || self.section_primary.normal != self.section_secondary.normal,
        };
        if !disjoint {
            return Err(Error::InvalidParameter(
                "primary and secondary sections intersect".into(),
            ));
        }
        for section in [&self.section_primary, &self.section_secondary] {
            let d = section.chart_dim();
            let n_pts = samples_per_axis.max(2).pow(d as u32);
            for flat in 0..n_pts {
                let mut x = vec![0.0; d];
                let mut rest = flat;
                for (i, xi) in x.iter_mut().enumerate() {
                    let m = samples_per_axis.max(2);
                    let j = rest % m;
                    rest /= m;
                    let t = (j as f64 + 0.5) / m as f64;
                    *xi = section.chart_lo[i] + t * (section.chart_hi[i] - section.chart_lo[i]);
                }
                let z = section.embed(&x);
                let f = self.drift_vec(&z);
                let fn_ = f
                    .iter()
                    .zip(&section.normal)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    .abs();
                let fnorm = f.iter().map(|a| a * a).sum::<f64>().sqrt();
                if fn_ < transversality_margin * fnorm {
                    return Err(Error::InvalidParameter(format!(
                        "drift not transversal to section at chart point {x:?}"
                    )));
                }
                let d_mat = self.d_matrix(&z);
                let (evals, _) = d_mat
                    .eigh(ndarray_linalg::UPLO::Upper)
                    .map_err(|e| Error::Linalg(e.to_string()))?;
                for ev in evals.iter() {
                    if *ev < c_minus || *ev > c_plus {
                        return Err(Error::InvalidParameter(format!(
                            "D(z) eigenvalue {ev} outside [{c_minus}, {c_plus}] at {x:?}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Chart coordinates of the stable deterministic fixed points of the
    /// Poincare map, when the catalog knows them.
    pub fn stable_section_points(&self) -> Option<Vec<Vec<f64>>> {
        match &self.spec.as_ref()?.catalog {
            CatalogModel::RadialWells { roots, .. } => {
                let mut sorted = roots.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                Some(
                    stable_roots(&sorted)
                        .into_iter()
                        .map(|r| vec![r])
                        .collect(),
                )
            }
            CatalogModel::LinearDecay { .. } => Some(vec![vec![0.0; self.dim - 1]]),
        }
    }

    /// Analytic quasipotential exponent matrix H(i, j) between the stable
    /// orbits, in the same order as `stable_section_points`. Available for the
    /// gradient catalog models where V is a closed-form polynomial.
    pub fn analytic_h_matrix(&self) -> Option<Array2<f64>> {
        match &self.spec.as_ref()?.catalog {
            CatalogModel::RadialWells { roots, .. } => {
                let mut sorted = roots.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let stable = stable_roots(&sorted);
                let n = stable.len();
                if n < 2 {
                    return None;
                }
                let v = |r: f64| poly_potential(&sorted, r);
                // In 1D gradient dynamics the quasipotential between wells is
                // the sum of the uphill costs over the saddles in between,
                // each measured from the well just before it.
                let mut h = Array2::from_elem((n, n), f64::INFINITY);
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let step: isize = if j > i { 1 } else { -1 };
                        let mut cost = 0.0;
                        let mut w = i as isize;
                        while w != j as isize {
                            let a = stable[w as usize];
                            let b = stable[(w + step) as usize];
                            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                            let saddle = sorted
                                .iter()
                                .copied()
                                .find(|&s| s > lo && s < hi)
                                .expect("saddle between adjacent wells");
                            cost += 2.0 * (v(saddle) - v(a));
                            w += step;
                        }
                        h[[i, j]] = cost;
                    }
                }
                Some(h)
            }
            _ => None,
        }
    }

    /// V(r) for the radial catalog model (defined up to a constant).
    pub fn radial_potential(&self, r: f64) -> Option<f64> {
        match &self.spec.as_ref()?.catalog {
            CatalogModel::RadialWells { roots, .. } => Some(poly_potential(roots, r)),
            _ => None,
        }
    }
}

fn stable_roots(sorted: &[f64]) -> Vec<f64> {
    // V'(r) = prod (r - c_i) with simple sorted roots: V'' alternates sign,
    // the last root is always a well for odd-degree positive leading term.
    sorted
        .iter()
        .enumerate()
        .filter(|(i, _)| (sorted.len() - 1 - i).is_multiple_of(2))
        .map(|(_, &c)| c)
        .collect()
}

/// Antiderivative of prod_i (r - roots[i]) evaluated at r.
fn poly_potential(roots: &[f64], r: f64) -> f64 {
    // expand the monic polynomial, then integrate term by term
    let mut coeffs = vec![1.0f64]; // highest degree first
    for &c in roots {
        let mut next = vec![0.0; coeffs.len() + 1];
        for (i, &a) in coeffs.iter().enumerate() {
            next[i] += a;
            next[i + 1] -= a * c;
        }
        coeffs = next;
    }
    let deg = coeffs.len() - 1;
    let mut acc = 0.0;
    for (i, &a) in coeffs.iter().enumerate() {
        let p = (deg - i + 1) as f64;
        acc += a * r.powf(p) / p;
    }
    acc
}

/// The built-in two-orbit reference model: stable orbits at r = 1 and
/// r = 2.2, an unstable orbit at r = 1.5, sections at theta = 0 and pi.
pub fn reference_model(omega: f64, sigma: f64, theta_noise: f64) -> SdeModel {
    assert!(omega > 0.0, "omega must be positive");
    assert!(sigma >= 0.0, "sigma must be nonnegative");
    radial_wells_model(omega, sigma, theta_noise, vec![1.0, 1.5, 2.2], 0.5, 3.0)
}

/// General radial-wells catalog model; `roots` are the zeros of V'.
pub fn radial_wells_model(
    omega: f64,
    sigma: f64,
    theta_noise: f64,
    roots: Vec<f64>,
    r_min: f64,
    r_max: f64,
) -> SdeModel {
    let roots_d = roots.clone();
    let drift: VectorField = Arc::new(move |z: &[f64], out: &mut [f64]| {
        let r = z[0];
        let mut vp = 1.0;
        for &c in &roots_d {
            vp *= r - c;
        }
        out[0] = -vp;
        out[1] = omega;
    });
    let diffusion: MatrixField = Arc::new(move |_z: &[f64], out: &mut [f64]| {
        out[0] = 1.0;
        out[1] = 0.0;
        out[2] = 0.0;
        out[3] = theta_noise;
    });
    let section = |angle: f64| Section {
        normal: vec![0.0, 1.0],
        offset: angle,
        wrap: Some(2.0 * std::f64::consts::PI),
        tangents: vec![vec![1.0, 0.0]],
        origin: vec![0.0, angle],
        chart_lo: vec![r_min],
        chart_hi: vec![r_max],
    };
    let mut model = SdeModel::new(
        2,
        2,
        drift,
        diffusion,
        Domain::new(vec![r_min, f64::NEG_INFINITY], vec![r_max, f64::INFINITY]),
        section(0.0),
        section(std::f64::consts::PI),
        sigma,
        Confinement::RecurrentA,
    );
    model.spec = Some(ModelSpec {
        name: "radial_wells".into(),
        catalog: CatalogModel::RadialWells {
            omega,
            theta_noise,
            roots,
            r_min,
            r_max,
        },
        sigma,
        confinement: Confinement::RecurrentA,
        dimension: Some(2),
        domain: None,
        section_primary: None,
        section_secondary: None,
    });
    model
}

/// Builds a model from its serialized catalog spec, applying the optional
/// domain/section overrides.
pub fn model_from_spec(spec: &ModelSpec) -> Result<SdeModel> {
    let mut model = match &spec.catalog {
        CatalogModel::RadialWells {
            omega,
            theta_noise,
            roots,
            r_min,
            r_max,
        } => radial_wells_model(*omega, spec.sigma, *theta_noise, roots.clone(), *r_min, *r_max),
        CatalogModel::LinearDecay {
            dim,
            rate,
            half_width,
        } => linear_decay_model(*dim, *rate, *half_width, spec.sigma),
    };
    if let Some(d) = spec.dimension {
        if d != model.dim {
            return Err(Error::InvalidParameter(format!(
                "spec dimension {d} does not match the catalog dimension {}",
                model.dim
            )));
        }
    }
    if let Some(domain) = &spec.domain {
        if domain.lo.len() != model.dim {
            return Err(Error::InvalidParameter(
                "domain override has the wrong dimension".into(),
            ));
        }
        model.domain = domain.clone();
    }
    if let Some(section) = &spec.section_primary {
        model.section_primary = section.clone();
    }
    if let Some(section) = &spec.section_secondary {
        model.section_secondary = section.clone();
    }
    model.confinement = spec.confinement;
    let mut s = spec.clone();
    s.sigma = model.sigma;
    model.spec = Some(s);
    Ok(model)
}

/// dz = -rate z dt + sigma dW; mostly a test fixture.
pub fn linear_decay_model(dim: usize, rate: f64, half_width: f64, sigma: f64) -> SdeModel {
    assert!(dim >= 2);
    let drift: VectorField = Arc::new(move |z: &[f64], out: &mut [f64]| {
        for (o, zi) in out.iter_mut().zip(z) {
            *o = -rate * zi;
        }
    });
    let d = dim;
    let diffusion: MatrixField = Arc::new(move |_z: &[f64], out: &mut [f64]| {
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = 1.0;
        }
    });
    let mut normal = vec![0.0; dim];
    normal[dim - 1] = 1.0;
    let mut tangents = Vec::new();
    for i in 0..dim - 1 {
        let mut t = vec![0.0; dim];
        t[i] = 1.0;
        tangents.push(t);
    }
    let section = |offset: f64| Section {
        normal: normal.clone(),
        offset,
        wrap: None,
        tangents: tangents.clone(),
        origin: {
            let mut o = vec![0.0; dim];
            o[dim - 1] = offset;
            o
        },
        chart_lo: vec![-half_width; dim - 1],
        chart_hi: vec![half_width; dim - 1],
    };
    let mut model = SdeModel::new(
        dim,
        dim,
        drift,
        diffusion,
        Domain::new(vec![-half_width; dim], vec![half_width; dim]),
        section(0.0),
        section(half_width / 2.0),
        sigma,
        Confinement::RecurrentA,
    );
    model.spec = Some(ModelSpec {
        name: "linear_decay".into(),
        catalog: CatalogModel::LinearDecay {
            dim,
            rate,
            half_width,
        },
        sigma,
        confinement: Confinement::RecurrentA,
        dimension: Some(dim),
        domain: None,
        section_primary: None,
        section_secondary: None,
    });
    model
}


pub use self::field_helpers::*;

mod field_helpers {
    use super::*;
    use ndarray::ArrayView2;

    /// Drift Jacobian by central finite differences with step h.
    pub fn drift_jacobian(model: &SdeModel, z: &[f64], h: f64) -> Array2<f64> {
        let d = model.dim;
        let mut jac = Array2::zeros((d, d));
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        let mut fp = vec![0.0; d];
        let mut fm = vec![0.0; d];
        for j in 0..d {
            zp[j] += h;
            zm[j] -= h;
            model.drift(&zp, &mut fp);
            model.drift(&zm, &mut fm);
            for i in 0..d {
                jac[[i, j]] = (fp[i] - fm[i]) / (2.0 * h);
            }
            zp[j] = z[j];
            zm[j] = z[j];
        }
        jac
    }

    pub fn solve_small(a: ArrayView2<'_, f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
        crate::linalg::solve(&a.to_owned(), b).ok_or(Error::SingularSystem {
            what: "small linear system",
        })
    }
}
