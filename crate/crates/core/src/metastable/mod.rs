//! Metastable structure over a discretized kernel: balls around the stable
//! orbits, the hierarchy order, the finite-rank reduction and its spectrum,
//! and eigenfunction estimates built from committors.

mod bounds;
mod triangular;

pub use bounds::{
    norm_certificates, oscillation_bound, resolvent_bound, spectral_gap_bound,
    uniform_positivity, BoundCertificate,
};
pub use triangular::{block_triangularize, kstar_spectrum, BlockTriangularization, KstarSpectrum};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{DiscretizedKernel, SamplerConfig};
use crate::markov::{self, QsdResult};
use crate::sde::SdeModel;

/// How the exponent matrix H was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HProvenance {
    Analytic,
    UserSupplied,
    Regressed,
}

/// Balls B_i around the deterministic fixed points, kept in metastable order
/// once a hierarchy has been attached (most stable orbit first).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetastableStructure {
    /// Chart coordinates of the orbit intersections x*_i.
    pub centers: Vec<Vec<f64>>,
    /// Grid cell indices of each ball.
    pub balls: Vec<Vec<usize>>,
    pub delta: f64,
    /// Permutation mapping metastable position -> detection index.
    pub order: Option<Vec<usize>>,
    /// Exponent matrix in the stored (metastable) order, infinity on the
    /// diagonal (stored as null in JSON).
    #[serde(with = "crate::serde_util::inf_matrix")]
    pub h: Option<Array2<f64>>,
    pub theta: Option<f64>,
    pub h_provenance: Option<HProvenance>,
}

impl MetastableStructure {
    pub fn n_balls(&self) -> usize {
        self.balls.len()
    }

    /// Union of the first k balls (grid cell indices, sorted).
    pub fn m_cells(&self, k: usize) -> Vec<usize> {
        let mut cells: Vec<usize> = self.balls[..k].iter().flatten().copied().collect();
        cells.sort_unstable();
        cells
    }

    /// Rows of `kernel` backing ball i.
    pub fn ball_rows(&self, kernel: &DiscretizedKernel, i: usize) -> Result<Vec<usize>> {
        kernel.local_indices(&self.balls[i])
    }

    /// Attaches an exponent matrix given in detection order, reordering the
    /// balls into the metastable order it induces.
    pub fn with_hierarchy(mut self, h: Array2<f64>, provenance: HProvenance) -> Result<Self> {
        let n = self.n_balls();
        if h.nrows() != n || h.ncols() != n {
            return Err(Error::InvalidParameter(
                "H matrix size does not match the number of balls".into(),
            ));
        }
        let (order, theta) = hierarchy_order(&h)?;
        let mut h_ord = Array2::from_elem((n, n), f64::INFINITY);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    h_ord[[i, j]] = h[[order[i], order[j]]];
                }
            }
        }
        self.centers = order.iter().map(|&i| self.centers[i].clone()).collect();
        self.balls = order.iter().map(|&i| self.balls[i].clone()).collect();
        self.order = Some(order);
        self.h = Some(h_ord);
        self.theta = Some(theta);
        self.h_provenance = Some(provenance);
        Ok(self)
    }
}

/// Finds the balls B_i = cells within `delta` of the deterministic fixed
/// points and validates that the sigma = 0 return map sends each ball
/// strictly into itself, checked on sampled boundary points.
pub fn detect_balls(
    kernel: &DiscretizedKernel,
    model: &SdeModel,
    delta: f64,
    config: &SamplerConfig,
) -> Result<MetastableStructure> {
    let centers = model.stable_section_points().ok_or_else(|| {
        Error::InvalidParameter(
            "model catalog does not expose its deterministic fixed points".into(),
        )
    })?;
    if centers.is_empty() {
        return Err(Error::EmptySet);
    }
    let grid = &kernel.grid;
    let balls: Vec<Vec<usize>> = centers
        .iter()
        .map(|c| grid.cells_within(c, delta))
        .collect();
    for (i, b) in balls.iter().enumerate() {
        if b.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "ball {i} contains no grid cells"
            )));
        }
        for (j, other) in balls.iter().enumerate().skip(i + 1) {
            if b.iter().any(|c| other.contains(c)) {
                return Err(Error::BallOverlap { i, j });
            }
        }
    }
    // strict invariance of each ball under the deterministic return map
    let det = model.with_sigma(0.0);
    let d = grid.dim();
    for (i, center) in centers.iter().enumerate() {
        let mut boundary = Vec::new();
        for ax in 0..d {
            for sign in [-1.0, 1.0] {
                let mut x = center.clone();
                x[ax] += sign * delta;
                boundary.push(x);
            }
        }
        for x in boundary {
            let chain = crate::map::sample_chain(&det, &x, 1, config)?;
            if chain.is_empty() {
                return Err(Error::NotInvariant { i });
            }
            let ret = chain.point(0);
            let inside = ret
                .iter()
                .zip(center)
                .all(|(a, b)| (a - b).abs() < delta * (1.0 - 1e-9));
            if !inside {
                return Err(Error::NotInvariant { i });
            }
        }
    }
    Ok(MetastableStructure {
        centers,
        balls,
        delta,
        order: None,
        h: None,
        theta: None,
        h_provenance: None,
    })
}

/// The iterative relabeling procedure: repeatedly find the unique orbit with
/// the cheapest escape among the remaining ones, label it last, discard,
/// recurse. Returns the permutation (most stable first) and the largest
/// hierarchy margin theta.
pub fn hierarchy_order(h: &Array2<f64>) -> Result<(Vec<usize>, f64)> {
    let n = h.nrows();
    if n == 0 {
        return Err(Error::EmptySet);
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && !(h[[i, j]].is_finite() && h[[i, j]] >= 0.0) {
                return Err(Error::InvalidParameter(
                    "off-diagonal H entries must be finite and nonnegative".into(),
                ));
            }
        }
    }
    const TIE_TOL: f64 = 1e-12;
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut order_rev = Vec::with_capacity(n);
    while remaining.len() > 1 {
        let escape = |i: usize| {
            remaining
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| h[[i, j]])
                .fold(f64::INFINITY, f64::min)
        };
        let mut best = remaining[0];
        let mut best_val = escape(best);
        let mut tie = false;
        for &i in remaining.iter().skip(1) {
            let v = escape(i);
            if v < best_val - TIE_TOL {
                best = i;
                best_val = v;
                tie = false;
            } else if (v - best_val).abs() <= TIE_TOL {
                tie = true;
            }
        }
        if tie {
            return Err(Error::AmbiguousHierarchy {
                step: order_rev.len(),
            });
        }
        order_rev.push(best);
        remaining.retain(|&i| i != best);
    }
    order_rev.push(remaining[0]);
    let order: Vec<usize> = order_rev.into_iter().rev().collect();

    // largest theta for which the hierarchy inequality holds in this order
    let mut theta = f64::INFINITY;
    for j in 1..n {
        let escape_j = (0..j).map(|p| h[[order[j], order[p]]]).fold(f64::INFINITY, f64::min);
        let mut rhs = f64::INFINITY;
        for i in 0..j {
            let v = (0..=j)
                .filter(|&p| p != i)
                .map(|p| h[[order[i], order[p]]])
                .fold(f64::INFINITY, f64::min);
            rhs = rhs.min(v);
        }
        theta = theta.min(rhs - escape_j);
    }
    Ok((order, theta))
}

/// The stochastic matrix P of the finite-rank reduction on M_{k+1}:
/// P_ij = P_{qsd_i}(first trace-return lands in B_j), with qsd_i the QSD of
/// the trace kernel killed outside B_i (trace first, then kill).
pub fn build_p(
    trace_kernel: &DiscretizedKernel,
    structure: &MetastableStructure,
    k: usize,
    tol: f64,
) -> Result<(Array2<f64>, Vec<QsdResult>)> {
    let nb = k + 1;
    if nb > structure.n_balls() {
        return Err(Error::InvalidParameter(
            "k exceeds the number of balls".into(),
        ));
    }
    let mut p = Array2::zeros((nb, nb));
    let mut qsds = Vec::with_capacity(nb);
    for i in 0..nb {
        let rows_i = structure.ball_rows(trace_kernel, i)?;
        let killed = markov::kill(trace_kernel, &rows_i)?;
        let q = markov::qsd(&killed, tol)?;
        for j in 0..nb {
            let rows_j = structure.ball_rows(trace_kernel, j)?;
            let mut acc = 0.0;
            for (li, &x) in rows_i.iter().enumerate() {
                let mut row_mass = 0.0;
                for &y in &rows_j {
                    row_mass += trace_kernel.matrix[[x, y]];
                }
                acc += q.qsd[li] * row_mass;
            }
            p[[i, j]] = acc;
        }
        qsds.push(q);
    }
    Ok((p, qsds))
}

/// The rank-(k+1) kernel K*: every row in ball i is replaced by the
/// QSD-averaged trace row of that ball.
pub fn finite_rank_kernel(
    trace_kernel: &DiscretizedKernel,
    structure: &MetastableStructure,
    qsds: &[QsdResult],
) -> Result<DiscretizedKernel> {
    let n = trace_kernel.n();
    let nb = qsds.len();
    let mut matrix = Array2::zeros((n, n));
    let mut covered = vec![false; n];
    for (i, q) in qsds.iter().enumerate().take(nb) {
        let rows_i = structure.ball_rows(trace_kernel, i)?;
        let mut dist = Array1::<f64>::zeros(n);
        for (li, &x) in rows_i.iter().enumerate() {
            let w = q.qsd[li];
            for y in 0..n {
                dist[y] += w * trace_kernel.matrix[[x, y]];
            }
        }
        for &x in &rows_i {
            matrix.row_mut(x).assign(&dist);
            covered[x] = true;
        }
    }
    if covered.iter().any(|c| !c) {
        return Err(Error::InvalidParameter(
            "trace kernel has rows outside every ball".into(),
        ));
    }
    Ok(DiscretizedKernel {
        grid: trace_kernel.grid.clone(),
        cells: trace_kernel.cells.clone(),
        matrix,
        kill_column: trace_kernel.kill_column.clone(),
        sample_counts: None,
        sigma: trace_kernel.sigma,
    })
}

/// Building blocks shared by the eigenfunction estimates: the trace-killed
/// ball QSDs as measures on the full kernel, and the escape probability of
/// the softest ball.
pub struct BallMeasures {
    /// One probability vector per ball, supported on the ball's rows.
    pub measures: Vec<Array1<f64>>,
    pub qsds: Vec<QsdResult>,
}

pub fn ball_measures(
    kernel: &DiscretizedKernel,
    structure: &MetastableStructure,
    k: usize,
    tol: f64,
) -> Result<BallMeasures> {
    let m_cells = structure.m_cells(k + 1);
    let m_rows = kernel.local_indices(&m_cells)?;
    let traced = markov::trace(kernel, &m_rows)?;
    let mut measures = Vec::with_capacity(k + 1);
    let mut qsds = Vec::with_capacity(k + 1);
    for i in 0..=k {
        let rows_i = structure.ball_rows(&traced, i)?;
        let killed = markov::kill(&traced, &rows_i)?;
        let q = markov::qsd(&killed, tol)?;
        let mut mu = Array1::zeros(kernel.n());
        let full_rows = structure.ball_rows(kernel, i)?;
        for (li, &row) in full_rows.iter().enumerate() {
            mu[row] = q.qsd[li];
        }
        measures.push(mu);
        qsds.push(q);
    }
    Ok(BallMeasures { measures, qsds })
}

/// Rows of the balls 0..=k excluding ball `except` (M_{k+1} minus one ball).
fn rows_of_balls_except(
    kernel: &DiscretizedKernel,
    structure: &MetastableStructure,
    k: usize,
    except: usize,
) -> Result<Vec<usize>> {
    let mut rows = Vec::new();
    for j in 0..=k {
        if j != except {
            rows.extend(structure.ball_rows(kernel, j)?);
        }
    }
    Ok(rows)
}

/// Committor-based estimate of the k-th right eigenfunction:
/// phi_k(x) ~ P_x(tau_{B_{k+1}} < tau_{M_k})
///          + sum_{i<=k} rho_ki P_x(tau_{B_i} < tau_{M_{k+1} \ B_i}).
pub fn right_eigenfunction_estimate(
    kernel: &DiscretizedKernel,
    structure: &MetastableStructure,
    k: usize,
    tol: f64,
) -> Result<Array1<f64>> {
    if k == 0 || k >= structure.n_balls() {
        return Err(Error::InvalidParameter(
            "k must be between 1 and N - 1".into(),
        ));
    }
    let meas = ball_measures(kernel, structure, k, tol)?;
    let rows_last = structure.ball_rows(kernel, k)?;
    let m_k_rows = kernel.local_indices(&structure.m_cells(k))?;
    let den = markov::return_committor(kernel, &meas.measures[k], &m_k_rows, &rows_last)?;
    let mut phi = markov::committor(kernel, &rows_last, &m_k_rows)?;
    for i in 0..k {
        let rows_i = structure.ball_rows(kernel, i)?;
        let others = rows_of_balls_except(kernel, structure, k, i)?;
        let num = markov::return_committor(kernel, &meas.measures[i], &rows_last, &m_k_rows)?;
        let rho = -num / den;
        let h_i = markov::committor(kernel, &rows_i, &others)?;
        phi = phi + h_i * rho;
    }
    Ok(phi)
}

/// Committor-based estimate of the k-th left eigenfunction's ball masses,
/// normalized so the mass of B_{k+1} is 1.
pub fn left_eigenfunction_estimate(
    kernel: &DiscretizedKernel,
    structure: &MetastableStructure,
    k: usize,
    tol: f64,
) -> Result<Array1<f64>> {
    let nb = structure.n_balls();
    if k == 0 || k >= nb {
        return Err(Error::InvalidParameter(
            "k must be between 1 and N - 1".into(),
        ));
    }
    let meas = ball_measures(kernel, structure, k, tol)?;
    let rows_last = structure.ball_rows(kernel, k)?;
    let m_k_rows = kernel.local_indices(&structure.m_cells(k))?;
    let den = markov::return_committor(kernel, &meas.measures[k], &m_k_rows, &rows_last)?;
    let mut masses = Array1::zeros(nb);
    for j in 0..k {
        let rows_j = structure.ball_rows(kernel, j)?;
        let others = rows_of_balls_except(kernel, structure, k, j)?;
        let num = markov::return_committor(kernel, &meas.measures[k], &rows_j, &others)?;
        masses[j] = -num / den;
    }
    masses[k] = 1.0;
    if k + 1 < nb {
        // remaining balls carry the QSD mass of the kernel killed on M_k
        let m_k = structure.m_cells(k);
        let outside: Vec<usize> = (0..kernel.n())
            .filter(|&r| !m_k.contains(&kernel.cells[r]))
            .collect();
        let killed = markov::kill(kernel, &outside)?;
        let q = markov::qsd(&killed, tol)?;
        for j in k + 1..nb {
            let rows_j = structure.ball_rows(&killed, j)?;
            masses[j] = rows_j.iter().map(|&r| q.qsd[r]).sum();
        }
    }
    Ok(masses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hierarchy_two_orbits() {
        let h = array![[f64::INFINITY, 5.0], [2.0, f64::INFINITY]];
        let (order, theta) = hierarchy_order(&h).unwrap();
        assert_eq!(order, vec![0, 1]);
        assert!((theta - 3.0).abs() < 1e-12);
    }

    #[test]
    fn hierarchy_three_orbits() {
        let h = array![
            [f64::INFINITY, 3.0, 5.0],
            [1.0, f64::INFINITY, 4.0],
            [2.0, 6.0, f64::INFINITY]
        ];
        let (order, theta) = hierarchy_order(&h).unwrap();
        assert_eq!(order, vec![0, 2, 1]);
        assert!((theta - 1.0).abs() < 1e-12);

        // brute-force oracle: the returned order must satisfy the hierarchy
        // inequality with the returned theta, and no other permutation may
        // yield a larger margin
        let margin = |perm: &[usize]| -> f64 {
            let n = perm.len();
            let mut th = f64::INFINITY;
            for j in 1..n {
                let esc = (0..j).map(|p| h[[perm[j], perm[p]]]).fold(f64::INFINITY, f64::min);
                let mut rhs = f64::INFINITY;
                for i in 0..j {
                    let v = (0..=j)
                        .filter(|&p| p != i)
                        .map(|p| h[[perm[i], perm[p]]])
                        .fold(f64::INFINITY, f64::min);
                    rhs = rhs.min(v);
                }
                th = th.min(rhs - esc);
            }
            th
        };
        let mut best = f64::NEG_INFINITY;
        let perms = [
            [0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0],
        ];
        for p in &perms {
            best = best.max(margin(p));
        }
        assert!((margin(&order) - best).abs() < 1e-12);
    }

    #[test]
    fn hierarchy_tie_is_ambiguous() {
        let h = array![[f64::INFINITY, 2.0], [2.0, f64::INFINITY]];
        assert!(matches!(
            hierarchy_order(&h),
            Err(Error::AmbiguousHierarchy { .. })
        ));
    }

    #[test]
    fn hierarchy_invariant_under_constant_shift() {
        let h = array![
            [f64::INFINITY, 3.0, 5.0],
            [1.0, f64::INFINITY, 4.0],
            [2.0, 6.0, f64::INFINITY]
        ];
        let mut shifted = h.clone();
        shifted.mapv_inplace(|v| if v.is_finite() { v + 7.5 } else { v });
        let (o1, t1) = hierarchy_order(&h).unwrap();
        let (o2, t2) = hierarchy_order(&shifted).unwrap();
        assert_eq!(o1, o2);
        assert!((t1 - t2).abs() < 1e-12);
    }

    #[test]
    fn detect_balls_on_the_reference_model() {
        use crate::map::{build_kernel, Grid};
        use crate::sde::{radial_wells_model, reference_model};
        let model = reference_model(2.0 * std::f64::consts::PI, 0.12, 0.1);
        let grid = Grid::regular(vec![0.5], vec![3.0], vec![50]);
        let cfg = SamplerConfig::new(1e-3, 0);
        let kernel = build_kernel(&model, &grid, 100, &cfg).unwrap();
        let s = detect_balls(&kernel, &model, 0.15, &cfg).unwrap();
        assert_eq!(s.n_balls(), 2);
        assert!(!s.balls[0].is_empty() && !s.balls[1].is_empty());
        for &c in &s.balls[0] {
            assert!(s.balls[1].iter().all(|&d| d != c), "balls overlap");
        }
        // a radius past half the gap between fixed points must overlap
        assert!(matches!(
            detect_balls(&kernel, &model, 0.65, &cfg),
            Err(Error::BallOverlap { .. })
        ));
        // single-orbit catalog model gives one trivially valid ball
        let single = radial_wells_model(
            2.0 * std::f64::consts::PI,
            0.1,
            0.1,
            vec![1.0],
            0.5,
            1.6,
        );
        let grid1 = Grid::regular(vec![0.5], vec![1.6], vec![20]);
        let k1 = build_kernel(&single, &grid1, 100, &cfg).unwrap();
        let s1 = detect_balls(&k1, &single, 0.2, &cfg).unwrap();
        assert_eq!(s1.n_balls(), 1);
    }

    #[test]
    fn norm_certificates_vanish_at_u_zero() {
        use crate::metastable::norm_certificates;
        let k = DiscretizedKernel::from_matrix(array![
            [0.90, 0.05, 0.05],
            [0.05, 0.90, 0.05],
            [0.05, 0.05, 0.90]
        ]);
        let structure = MetastableStructure {
            centers: vec![vec![k.grid.center(0)[0]], vec![k.grid.center(2)[0]]],
            balls: vec![vec![0], vec![2]],
            delta: 0.1,
            order: None,
            h: None,
            theta: None,
            h_provenance: None,
        };
        let certs = norm_certificates(&k, &structure, 0.0, 1, 1e-13).unwrap();
        let ku_cert = &certs[0];
        assert_eq!(ku_cert.bound, 0.0);
        assert!(ku_cert.measured.unwrap() <= 1e-14);
        assert_eq!(ku_cert.satisfied, Some(true));
    }

    #[test]
    fn build_p_with_single_cell_balls_is_the_trace_matrix() {
        // toy kernel where each "ball" is one cell: the QSDs are point
        // masses and P equals the trace matrix on those cells
        let k = DiscretizedKernel::from_matrix(array![
            [0.90, 0.05, 0.05],
            [0.05, 0.90, 0.05],
            [0.05, 0.05, 0.90]
        ]);
        let structure = MetastableStructure {
            centers: vec![vec![k.grid.center(0)[0]], vec![k.grid.center(2)[0]]],
            balls: vec![vec![0], vec![2]],
            delta: 0.1,
            order: None,
            h: None,
            theta: None,
            h_provenance: None,
        };
        let m_rows = k.local_indices(&structure.m_cells(2)).unwrap();
        let traced = markov::trace(&k, &m_rows).unwrap();
        let (p, qsds) = build_p(&traced, &structure, 1, 1e-13).unwrap();
        for (i, q) in qsds.iter().enumerate() {
            assert_eq!(q.qsd.len(), 1);
            assert!((q.qsd[0] - 1.0).abs() < 1e-14, "ball {i}");
        }
        for i in 0..2 {
            for j in 0..2 {
                assert!((p[[i, j]] - traced.matrix[[i, j]]).abs() < 1e-12);
            }
            assert!((p.row(i).sum() - 1.0).abs() < 1e-10);
        }
        // K* on single-cell balls reproduces the trace rows, rank <= 2
        let kstar = finite_rank_kernel(&traced, &structure, &qsds).unwrap();
        for (a, b) in kstar.matrix.iter().zip(traced.matrix.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
