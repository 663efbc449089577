//! Operator calculus on discretized kernels: killing, trace, QSDs, the Doob
//! transform, committors, hitting times, and the Laplace-transform kernel.

use ndarray::{Array1, Array2, Axis};

use crate::linalg;

use super::super::map::DiscretizedKernel;
use crate::error::{Error, Result};

/// Principal triple of a substochastic kernel.
#[derive(Debug, Clone)]
pub struct QsdResult {
    pub lambda0: f64,
    /// Quasistationary distribution (left principal eigenfunction, sums to 1).
    pub qsd: Array1<f64>,
    /// Right principal eigenfunction, scaled so <qsd, phi_0> = 1.
    pub principal_right: Array1<f64>,
    /// l1 residual of the left eigen equation.
    pub residual: f64,
}

pub(crate) fn take(matrix: &Array2<f64>, rows: &[usize], cols: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), cols.len()));
    for (i, &r) in rows.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            out[[i, j]] = matrix[[r, c]];
        }
    }
    out
}

fn complement(n: usize, set: &[usize]) -> Vec<usize> {
    let mut inside = vec![false; n];
    for &i in set {
        inside[i] = true;
    }
    (0..n).filter(|&i| !inside[i]).collect()
}

fn check_set(kernel: &DiscretizedKernel, set: &[usize]) -> Result<()> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut seen = vec![false; kernel.n()];
    for &i in set {
        if i >= kernel.n() {
            return Err(Error::InvalidParameter(format!(
                "row index {i} out of range"
            )));
        }
        if seen[i] {
            return Err(Error::InvalidParameter(format!("duplicate row index {i}")));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Restriction of the kernel to A x A; the lost mass becomes the cemetery
/// column.
pub fn kill(kernel: &DiscretizedKernel, a: &[usize]) -> Result<DiscretizedKernel> {
    check_set(kernel, a)?;
    let matrix = take(&kernel.matrix, a, a);
    let total = kernel.total_row_mass();
    let kill: Array1<f64> = a
        .iter()
        .enumerate()
        .map(|(i, &r)| (total[r] - matrix.row(i).sum()).max(0.0))
        .collect();
    Ok(DiscretizedKernel {
        grid: kernel.grid.clone(),
        cells: a.iter().map(|&i| kernel.cells[i]).collect(),
        matrix,
        kill_column: Some(kill),
        sample_counts: None,
        sigma: kernel.sigma,
    })
}

/// Kernel of the process monitored only while visiting A, through the
/// resolvent at 1 of the complement-killed kernel:
/// K|_A = K_AA + K_AC (I - K_CC)^{-1} K_CA.
pub fn trace(kernel: &DiscretizedKernel, a: &[usize]) -> Result<DiscretizedKernel> {
    check_set(kernel, a)?;
    let n = kernel.n();
    let c = complement(n, a);
    if c.is_empty() {
        let mut out = kernel.clone();
        out.sample_counts = None;
        return Ok(out);
    }
    let kaa = take(&kernel.matrix, a, a);
    let kac = take(&kernel.matrix, a, &c);
    let kca = take(&kernel.matrix, &c, a);
    let kcc = take(&kernel.matrix, &c, &c);
    let mut m = Array2::eye(c.len());
    m -= &kcc;
    let lu = linalg::lu_factor(m).ok_or(Error::NonReturning)?;
    // X = (I - K_CC)^{-1} K_CA, column by column
    let mut x = Array2::zeros((c.len(), a.len()));
    for j in 0..a.len() {
        let sol = lu.solve(&kca.column(j).to_owned());
        if !sol.iter().all(|v| v.is_finite()) {
            return Err(Error::NonReturning);
        }
        x.column_mut(j).assign(&sol);
    }
    let matrix = &kaa + &kac.dot(&x);
    let kill_column = if let Some(kill) = &kernel.kill_column {
        let kill_a: Array1<f64> = a.iter().map(|&i| kill[i]).collect();
        let kill_c: Array1<f64> = c.iter().map(|&i| kill[i]).collect();
        let absorbed = lu.solve(&kill_c);
        Some(&kill_a + &kac.dot(&absorbed))
    } else {
        None
    };
    Ok(DiscretizedKernel {
        grid: kernel.grid.clone(),
        cells: a.iter().map(|&i| kernel.cells[i]).collect(),
        matrix,
        kill_column,
        sample_counts: None,
        sigma: kernel.sigma,
    })
}

/// Strongly connected components of the positivity pattern (Kosaraju).
fn sccs(matrix: &Array2<f64>) -> Vec<Vec<usize>> {
    let n = matrix.nrows();
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        // iterative post-order DFS
        seen[start] = true;
        let mut stack = vec![(start, 0usize)];
        while let Some(&(i, next)) = stack.last() {
            let mut pushed = false;
            let mut j = next;
            while j < n {
                let cand = j;
                j += 1;
                if matrix[[i, cand]] > 0.0 && !seen[cand] {
                    stack.last_mut().unwrap().1 = j;
                    seen[cand] = true;
                    stack.push((cand, 0));
                    pushed = true;
                    break;
                }
            }
            if !pushed {
                order.push(i);
                stack.pop();
            }
        }
    }
    let mut comp = vec![usize::MAX; n];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for &start in order.iter().rev() {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut members = vec![start];
        comp[start] = id;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if matrix[[j, i]] > 0.0 && comp[j] == usize::MAX {
                    comp[j] = id;
                    members.push(j);
                    stack.push(j);
                }
            }
        }
        comps.push(members);
    }
    comps
}

/// A QSD is well-defined when the positivity pattern has exactly one closed
/// communicating class (killing does not count as an exit).
fn has_unique_closed_class(matrix: &Array2<f64>) -> bool {
    let comps = sccs(matrix);
    let n = matrix.nrows();
    let mut comp_of = vec![0usize; n];
    for (id, members) in comps.iter().enumerate() {
        for &m in members {
            comp_of[m] = id;
        }
    }
    let mut closed = 0;
    for (id, members) in comps.iter().enumerate() {
        let exits = members.iter().any(|&i| {
            (0..n).any(|j| matrix[[i, j]] > 0.0 && comp_of[j] != id)
        });
        if !exits {
            closed += 1;
        }
    }
    closed == 1
}

/// Quasistationary distribution and principal pair of a substochastic kernel
/// by power iteration on the matrix and its transpose.
pub fn qsd(kernel: &DiscretizedKernel, tol: f64) -> Result<QsdResult> {
    const CAP: usize = 1_000_000;
    let m = &kernel.matrix;
    let n = kernel.n();
    if n == 0 {
        return Err(Error::EmptySet);
    }
    if !has_unique_closed_class(m) {
        return Err(Error::InvalidParameter(
            "QSD is ill-defined: the kernel has several closed communicating classes".into(),
        ));
    }
    let mut v = Array1::from_elem(n, 1.0 / n as f64);
    let mut lambda = 0.0;
    let mut converged = false;
    for _ in 0..CAP {
        let w = v.dot(m); // v^T K
        let s = w.sum();
        if s <= 0.0 {
            return Err(Error::NoGap { cap: CAP });
        }
        let next = w / s;
        let drift = (&next - &v).mapv(f64::abs).sum();
        v = next;
        if (s - lambda).abs() <= tol && drift <= tol.max(1e-14) {
            lambda = s;
            converged = true;
            break;
        }
        lambda = s;
    }
    if !converged {
        return Err(Error::NoGap { cap: CAP });
    }
    let mut phi = Array1::from_elem(n, 1.0);
    for _ in 0..CAP {
        let w = m.dot(&phi);
        let s = w.sum();
        if s <= 0.0 {
            return Err(Error::NoGap { cap: CAP });
        }
        let next = w / s * n as f64;
        let drift = (&next - &phi).mapv(f64::abs).sum() / n as f64;
        phi = next;
        if drift <= tol.max(1e-14) {
            break;
        }
    }
    let scale = v.dot(&phi);
    if scale.abs() < 1e-300 {
        return Err(Error::NoGap { cap: CAP });
    }
    let phi = phi / scale;
    let residual = (&v.dot(m) - &(v.clone() * lambda)).mapv(f64::abs).sum();
    Ok(QsdResult {
        lambda0: lambda,
        qsd: v,
        principal_right: phi,
        residual,
    })
}

/// Doob h-transform of a substochastic kernel: the process conditioned on
/// never being killed, k̄(x,y) = k(x,y) phi_0(y) / (lambda_0 phi_0(x)).
pub fn doob_transform(kernel: &DiscretizedKernel, q: &QsdResult) -> Result<DiscretizedKernel> {
    let n = kernel.n();
    for (i, &p) in q.principal_right.iter().enumerate() {
        if p <= 1e-14 {
            return Err(Error::ZeroEigenfunction {
                index: i,
                min: 1e-14,
            });
        }
    }
    let mut matrix = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            matrix[[i, j]] =
                kernel.matrix[[i, j]] * q.principal_right[j] / (q.lambda0 * q.principal_right[i]);
        }
    }
    Ok(DiscretizedKernel {
        grid: kernel.grid.clone(),
        cells: kernel.cells.clone(),
        matrix,
        kill_column: None,
        sample_counts: None,
        sigma: kernel.sigma,
    })
}

/// Committor h(x) = P_x(tau_A < tau_B): 1 on A, 0 on B, harmonic elsewhere.
pub fn committor(kernel: &DiscretizedKernel, a: &[usize], b: &[usize]) -> Result<Array1<f64>> {
    check_set(kernel, a)?;
    check_set(kernel, b)?;
    if a.iter().any(|i| b.contains(i)) {
        return Err(Error::InvalidParameter("A and B must be disjoint".into()));
    }
    let n = kernel.n();
    let mut union: Vec<usize> = a.to_vec();
    union.extend_from_slice(b);
    let c = complement(n, &union);
    let mut h = Array1::zeros(n);
    for &i in a {
        h[i] = 1.0;
    }
    if !c.is_empty() {
        let kcc = take(&kernel.matrix, &c, &c);
        let kca = take(&kernel.matrix, &c, a);
        let mut m = Array2::eye(c.len());
        m -= &kcc;
        let rhs = kca.sum_axis(Axis(1));
        let sol = linalg::solve(&m, &rhs).ok_or(Error::SingularSystem {
            what: "committor",
        })?;
        if !sol.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularSystem { what: "committor" });
        }
        for (idx, &i) in c.iter().enumerate() {
            h[i] = sol[idx];
        }
    }
    Ok(h)
}

/// P_mu(tau^+_A < tau^+_B) by the first-step decomposition: one kernel step
/// into the committor with boundary values 1 on A, 0 on B.
pub fn return_committor(
    kernel: &DiscretizedKernel,
    mu: &Array1<f64>,
    a: &[usize],
    b: &[usize],
) -> Result<f64> {
    if mu.len() != kernel.n() {
        return Err(Error::InvalidParameter(
            "mu length does not match kernel".into(),
        ));
    }
    let h = committor(kernel, a, b)?;
    Ok(mu.dot(&kernel.matrix.dot(&h)))
}

/// Expected first-hitting times of A: zero on A, t = 1 + K_{A^c} t outside.
pub fn expected_hitting_time(kernel: &DiscretizedKernel, a: &[usize]) -> Result<Array1<f64>> {
    check_set(kernel, a)?;
    let n = kernel.n();
    let c = complement(n, a);
    let mut t = Array1::zeros(n);
    if !c.is_empty() {
        let kcc = take(&kernel.matrix, &c, &c);
        let mut m = Array2::eye(c.len());
        m -= &kcc;
        let rhs = Array1::from_elem(c.len(), 1.0);
        let sol = linalg::solve(&m, &rhs).ok_or(Error::SingularSystem {
            what: "hitting time",
        })?;
        if !sol.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::SingularSystem {
                what: "hitting time",
            });
        }
        for (idx, &i) in c.iter().enumerate() {
            t[i] = sol[idx];
        }
    }
    Ok(t)
}

/// Expected first-return times 1 + (K t)(x), where t are the first-hitting
/// times of A; meaningful for x in A (elsewhere it reproduces t).
pub fn expected_return_time(kernel: &DiscretizedKernel, a: &[usize]) -> Result<Array1<f64>> {
    let t = expected_hitting_time(kernel, a)?;
    Ok(kernel.matrix.dot(&t) + 1.0)
}

/// Expected time to absorption of a substochastic kernel: (I - K) e = 1.
pub fn expected_exit_time(kernel: &DiscretizedKernel) -> Result<Array1<f64>> {
    let n = kernel.n();
    let mut m = Array2::eye(n);
    m -= &kernel.matrix;
    let rhs = Array1::from_elem(n, 1.0);
    linalg::solve(&m, &rhs).ok_or(Error::SingularSystem { what: "exit time" })
}

/// Spectral radius of a nonnegative matrix.
///
/// Computed from the dense spectrum: sup-norm power iteration can stall on a
/// plateau when deep rows keep full mass for several steps, which silently
/// overestimates the radius of substochastic kernels.
pub fn spectral_radius_nonneg(matrix: &Array2<f64>) -> f64 {
    use ndarray_linalg::Eig;
    let n = matrix.nrows();
    if n == 0 {
        return 0.0;
    }
    match matrix.eig() {
        Ok((vals, _)) => vals.iter().map(|v| v.norm()).fold(0.0f64, f64::max),
        // fall back to the norm bound when the QR iteration fails
        Err(_) => matrix
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0f64, f64::max),
    }
}

/// Laplace-transform kernel on A:
/// K^u = K_AA + e^u K_AC (I - e^u K_CC)^{-1} K_CA, which weights each return
/// path by e^{u (tau - 1)}. At u = 0 this is the trace kernel.
pub fn laplace_kernel(kernel: &DiscretizedKernel, a: &[usize], u: f64) -> Result<DiscretizedKernel> {
    check_set(kernel, a)?;
    let n = kernel.n();
    let c = complement(n, a);
    let eu = u.exp();
    if c.is_empty() {
        let mut out = kernel.clone();
        out.sample_counts = None;
        out.kill_column = None;
        return Ok(out);
    }
    let kcc = take(&kernel.matrix, &c, &c);
    let rho = spectral_radius_nonneg(&kcc);
    if eu * rho >= 1.0 - 1e-12 {
        return Err(Error::LaplaceDivergence { value: eu * rho });
    }
    let kaa = take(&kernel.matrix, a, a);
    let kac = take(&kernel.matrix, a, &c);
    let kca = take(&kernel.matrix, &c, a);
    let mut m = Array2::eye(c.len());
    m.scaled_add(-eu, &kcc);
    let x = linalg::solve_many(&m, &kca)
        .ok_or(Error::LaplaceDivergence { value: eu * rho })?;
    let matrix = &kaa + &(kac.dot(&x) * eu);
    Ok(DiscretizedKernel {
        grid: kernel.grid.clone(),
        cells: a.iter().map(|&i| kernel.cells[i]).collect(),
        matrix,
        kill_column: None,
        sample_counts: None,
        sigma: kernel.sigma,
    })
}

/// Stationary distribution of a stochastic kernel by a direct bordered solve;
/// accurate to solver precision, which the exact-identity checks need.
pub fn stationary_distribution(kernel: &DiscretizedKernel) -> Result<Array1<f64>> {
    let n = kernel.n();
    let mut m = kernel.matrix.t().to_owned();
    for i in 0..n {
        m[[i, i]] -= 1.0;
    }
    // replace the last equation by the normalization sum pi = 1
    for j in 0..n {
        m[[n - 1, j]] = 1.0;
    }
    let mut rhs = Array1::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = linalg::solve(&m, &rhs).ok_or(Error::SingularSystem {
        what: "stationary distribution",
    })?;
    if !pi.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularSystem {
            what: "stationary distribution",
        });
    }
    Ok(pi)
}

/// Exit-time law from the QSD: P(tau = n) for n = 1..=n_max by vector-matrix
/// recursion. Matches the geometric law lambda0^{n-1} (1 - lambda0) exactly.
pub fn exit_law_from_qsd(
    kernel: &DiscretizedKernel,
    q: &QsdResult,
    n_max: usize,
) -> Vec<f64> {
    let kill: Array1<f64> = match &kernel.kill_column {
        Some(k) => k.clone(),
        None => 1.0 - kernel.row_sums(),
    };
    let mut v = q.qsd.clone();
    let mut out = Vec::with_capacity(n_max);
    for _ in 0..n_max {
        out.push(v.dot(&kill));
        v = v.dot(&kernel.matrix);
    }
    out
}
