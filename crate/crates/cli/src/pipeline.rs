//! Stage-tagged pipeline implementations behind the CLI subcommands.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use randpoincare::metastable::{self, HProvenance, MetastableStructure};
use randpoincare::verify::{self, VerificationReport};
use randpoincare::{
    floquet, io as rio, markov, model_from_spec, reference_model, DiscretizedKernel, Grid,
    ModelSpec, SamplerConfig, SdeModel,
};

use crate::{ModelArgs, SamplingArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Orbits,
    Kernel,
    Structure,
    Spectrum,
    Verify,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Orbits => "orbits",
            Stage::Kernel => "kernel",
            Stage::Structure => "structure",
            Stage::Spectrum => "spectrum",
            Stage::Verify => "verify",
            Stage::Output => "output",
        };
        f.write_str(s)
    }
}

pub struct CliError {
    pub stage: Stage,
    pub error: String,
}

type CliResult<T> = Result<T, CliError>;

trait StageExt<T> {
    fn stage(self, stage: Stage) -> CliResult<T>;
}

impl<T, E: fmt::Display> StageExt<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> CliResult<T> {
        self.map_err(|e| CliError {
            stage,
            error: e.to_string(),
        })
    }
}

/// File-backed defaults; flags win over the file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<String>,
    pub omega: Option<f64>,
    pub theta_noise: Option<f64>,
    pub sigma2: Option<Vec<f64>>,
    pub grid_cells: Option<usize>,
    pub samples_per_cell: Option<usize>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
    pub delta: Option<f64>,
    pub out_dir: Option<String>,
    pub checks: Option<Vec<String>>,
    pub threads: Option<usize>,
}

fn load_config(path: Option<&Path>) -> CliResult<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError {
                    stage: Stage::Config,
                    error: format!("cannot read config {}: {e}", p.display()),
                })?;
            serde_json::from_str(&text).stage(Stage::Config)
        }
    }
}

struct Resolved {
    model_name: String,
    base_model: SdeModel,
    sigma2: Vec<f64>,
    grid_cells: usize,
    samples_per_cell: usize,
    dt: f64,
    seed: u64,
    delta: f64,
    out_dir: PathBuf,
    checks: Vec<String>,
}

fn resolve(
    config: Option<&Path>,
    margs: &ModelArgs,
    sargs: Option<&SamplingArgs>,
    delta: Option<f64>,
    out: Option<&Path>,
    checks: Option<Vec<String>>,
) -> CliResult<Resolved> {
    let file = load_config(config)?;
    let model_name = margs
        .model
        .clone()
        .or(file.model.clone())
        .unwrap_or_else(|| "reference".to_string());
    let omega = margs.omega.or(file.omega).unwrap_or(1.0);
    let theta_noise = margs.theta_noise.or(file.theta_noise).unwrap_or(0.1);
    let sigma2 = margs
        .sigma2
        .clone()
        .or(file.sigma2.clone())
        .unwrap_or_else(|| vec![0.02, 0.015, 0.01]);
    if sigma2.iter().any(|&s| s <= 0.0) {
        return Err(CliError {
            stage: Stage::Config,
            error: "sigma2 values must be positive".into(),
        });
    }
    let base_model = if model_name == "reference" {
        reference_model(omega, sigma2[0].sqrt(), theta_noise)
    } else {
        let text = std::fs::read_to_string(&model_name).map_err(|e| CliError {
            stage: Stage::Config,
            error: format!("cannot read model file {model_name}: {e}"),
        })?;
        let spec: ModelSpec = serde_json::from_str(&text).stage(Stage::Config)?;
        model_from_spec(&spec).stage(Stage::Config)?
    };
    Ok(Resolved {
        model_name,
        base_model,
        sigma2,
        grid_cells: sargs
            .and_then(|s| s.grid)
            .or(file.grid_cells)
            .unwrap_or(200),
        samples_per_cell: sargs
            .and_then(|s| s.samples)
            .or(file.samples_per_cell)
            .unwrap_or(2000),
        dt: sargs.and_then(|s| s.dt).or(file.dt).unwrap_or(1e-3),
        seed: sargs.and_then(|s| s.seed).or(file.seed).unwrap_or(1),
        delta: delta.or(file.delta).unwrap_or(0.22),
        out_dir: out
            .map(|p| p.to_path_buf())
            .or(file.out_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(".")),
        checks: checks.or(file.checks).unwrap_or_else(|| {
            [
                "identities",
                "eigenvalues",
                "gap",
                "eigenfunctions",
                "hitting",
                "exponent",
                "bounds",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect()
        }),
    })
}

fn default_grid(model: &SdeModel, cells: usize) -> Grid {
    let section = &model.section_primary;
    Grid::regular(
        section.chart_lo.clone(),
        section.chart_hi.clone(),
        vec![cells; section.chart_dim()],
    )
}

/// Parses "3-17,40" index sets and "win:lo:hi" chart windows (1D grids).
fn parse_cells(spec: &str, kernel: &DiscretizedKernel) -> Result<Vec<usize>, String> {
    if let Some(rest) = spec.strip_prefix("win:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 2 || kernel.grid.dim() != 1 {
            return Err("window spec needs win:lo:hi on a 1-d grid".into());
        }
        let lo: f64 = parts[0].parse().map_err(|_| "bad window bound")?;
        let hi: f64 = parts[1].parse().map_err(|_| "bad window bound")?;
        let cells: Vec<usize> = (0..kernel.n())
            .filter(|&r| {
                let c = kernel.grid.center(kernel.cells[r])[0];
                c >= lo && c <= hi
            })
            .collect();
        if cells.is_empty() {
            return Err("window contains no cells".into());
        }
        return Ok(cells);
    }
    let mut out = Vec::new();
    for piece in spec.split(',') {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        if let Some((a, b)) = piece.split_once('-') {
            let a: usize = a.parse().map_err(|_| format!("bad index {piece}"))?;
            let b: usize = b.parse().map_err(|_| format!("bad index {piece}"))?;
            out.extend(a..=b);
        } else {
            out.push(piece.parse().map_err(|_| format!("bad index {piece}"))?);
        }
    }
    if out.is_empty() {
        return Err("empty cell set".into());
    }
    Ok(out)
}

fn kernel_meta(r: &Resolved, sigma2: f64) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::new();
    meta.insert("model".into(), r.model_name.clone());
    meta.insert("sigma2".into(), rio::fmt_f64(sigma2));
    meta.insert("dt".into(), rio::fmt_f64(r.dt));
    meta.insert("seed".into(), r.seed.to_string());
    meta.insert(
        "samples_per_cell".into(),
        r.samples_per_cell.to_string(),
    );
    meta
}

pub fn cmd_orbits(
    config: Option<&Path>,
    margs: &ModelArgs,
    guesses: Option<Vec<f64>>,
    out: Option<&Path>,
) -> CliResult<bool> {
    let r = resolve(config, margs, None, None, out, None)?;
    let cfg = SamplerConfig::new(r.dt, r.seed);
    let guesses: Vec<Vec<f64>> = match guesses {
        Some(g) => g.into_iter().map(|x| vec![x]).collect(),
        None => r
            .base_model
            .stable_section_points()
            .ok_or_else(|| CliError {
                stage: Stage::Orbits,
                error: "model has no catalog fixed points; pass --guesses".into(),
            })?,
    };
    let mut lines = vec!["chart,period,stable,multipliers".to_string()];
    for g in &guesses {
        let orbit = floquet::find_periodic_orbit(&r.base_model, g, 1e-10, &cfg)
            .stage(Stage::Orbits)?;
        let mults: Vec<String> = orbit
            .multipliers
            .iter()
            .map(|m| format!("{}+{}i", rio::fmt_f64(m.re), rio::fmt_f64(m.im)))
            .collect();
        let line = format!(
            "{},{},{},{}",
            rio::fmt_f64(orbit.chart[0]),
            rio::fmt_f64(orbit.period),
            orbit.stable,
            mults.join("|")
        );
        println!("{line}");
        lines.push(line);
    }
    if let Some(path) = out {
        std::fs::write(path, lines.join("\n") + "\n").stage(Stage::Output)?;
    }
    Ok(true)
}

pub fn cmd_kernel(
    config: Option<&Path>,
    margs: &ModelArgs,
    sargs: &SamplingArgs,
    out: Option<&Path>,
    csv: bool,
) -> CliResult<bool> {
    let r = resolve(config, margs, Some(sargs), None, None, None)?;
    let sigma2 = r.sigma2[0];
    let model = r.base_model.with_sigma(sigma2.sqrt());
    let grid = default_grid(&model, r.grid_cells);
    let cfg = SamplerConfig::new(r.dt, r.seed);
    let kernel = randpoincare::build_kernel(&model, &grid, r.samples_per_cell, &cfg)
        .stage(Stage::Kernel)?;
    let path = out
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from(format!("kernel_sigma2_{sigma2}.json")));
    rio::write_kernel(&kernel, kernel_meta(&r, sigma2), &path).stage(Stage::Output)?;
    println!("kernel written to {}", path.display());
    if csv {
        let csv_path = path.with_extension("csv");
        rio::write_kernel_csv(&kernel, &csv_path).stage(Stage::Output)?;
        println!("matrix written to {}", csv_path.display());
    }
    Ok(true)
}

pub fn cmd_spectrum(kernel: &Path, count: usize, out: Option<&Path>) -> CliResult<bool> {
    let k = rio::read_kernel(kernel).stage(Stage::Config)?;
    let sd = markov::spectral_decomposition(&k, count.min(k.n())).stage(Stage::Spectrum)?;
    for (i, lam) in sd.eigenvalues.iter().enumerate() {
        println!(
            "lambda_{i} = {} + {}i  (|lambda| = {})",
            rio::fmt_f64(lam.re),
            rio::fmt_f64(lam.im),
            rio::fmt_f64(lam.norm())
        );
    }
    if let Some(path) = out {
        rio::write_spectrum_csv(&sd, path).stage(Stage::Output)?;
    }
    Ok(true)
}

pub fn cmd_committor(kernel: &Path, a: &str, b: &str, out: Option<&Path>) -> CliResult<bool> {
    let k = rio::read_kernel(kernel).stage(Stage::Config)?;
    let a = parse_cells(a, &k).stage(Stage::Config)?;
    let b = parse_cells(b, &k).stage(Stage::Config)?;
    let h = markov::committor(&k, &a, &b).stage(Stage::Verify)?;
    write_vector_csv(&k, &h, "committor", out).stage(Stage::Output)?;
    println!(
        "committor range [{}, {}] over {} cells",
        rio::fmt_f64(h.iter().cloned().fold(f64::INFINITY, f64::min)),
        rio::fmt_f64(h.iter().cloned().fold(f64::NEG_INFINITY, f64::max)),
        h.len()
    );
    Ok(true)
}

pub fn cmd_qsd(kernel: &Path, cells: &str, out: Option<&Path>) -> CliResult<bool> {
    let k = rio::read_kernel(kernel).stage(Stage::Config)?;
    let set = parse_cells(cells, &k).stage(Stage::Config)?;
    let killed = markov::kill(&k, &set).stage(Stage::Verify)?;
    let q = markov::qsd(&killed, 1e-12).stage(Stage::Verify)?;
    println!(
        "lambda0 = {}  residual = {:.3e}",
        rio::fmt_f64(q.lambda0),
        q.residual
    );
    write_vector_csv(&killed, &q.qsd, "qsd", out).stage(Stage::Output)?;
    Ok(true)
}

pub fn cmd_hierarchy(
    config: Option<&Path>,
    margs: &ModelArgs,
    h_file: Option<&Path>,
) -> CliResult<bool> {
    let r = resolve(config, margs, None, None, None, None)?;
    let h: Array2<f64> = match h_file {
        Some(path) => read_h_csv(path).stage(Stage::Config)?,
        None => r.base_model.analytic_h_matrix().ok_or_else(|| CliError {
            stage: Stage::Config,
            error: "model has no analytic H matrix; pass --h-file".into(),
        })?,
    };
    let (order, theta) = metastable::hierarchy_order(&h).stage(Stage::Structure)?;
    println!(
        "metastable order (most stable first): {:?}",
        order.iter().map(|i| i + 1).collect::<Vec<_>>()
    );
    println!("hierarchy margin theta = {}", rio::fmt_f64(theta));
    Ok(true)
}

pub fn cmd_verify(
    config: Option<&Path>,
    kernel: &Path,
    suite: &str,
    structure: Option<&Path>,
    margs: &ModelArgs,
    delta: Option<f64>,
    out: Option<&Path>,
) -> CliResult<bool> {
    let k = rio::read_kernel(kernel).stage(Stage::Config)?;
    let r = resolve(config, margs, None, delta, None, None)?;
    let structure = match structure {
        Some(path) => rio::read_structure(path).stage(Stage::Config)?,
        None => build_structure(&k, &r).stage(Stage::Structure)?,
    };
    let reports = match suite {
        "exact" => {
            let a = structure.ball_rows(&k, 0).stage(Stage::Verify)?;
            let b = structure.ball_rows(&k, 1% structure.n_balls()).stage(Stage::Verify)?;
            verify::exact_identity_suite(&k, &a, &b).stage(Stage::Verify)?
        }
        "theorems" => {
            let mut reps = vec![verify::check_eigenvalues(&k, &structure, k.sigma, 0.10)
                .stage(Stage::Verify)?];
            for kk in 1..structure.n_balls() {
                reps.push(
                    verify::check_eigenfunctions(&k, &structure, kk, 0.05, 0.10)
                        .stage(Stage::Verify)?,
                );
                reps.push(
                    verify::check_hitting_times(&k, &structure, kk, 0.10, 0.05)
                        .stage(Stage::Verify)?,
                );
            }
            reps
        }
        other => {
            return Err(CliError {
                stage: Stage::Config,
                error: format!("unknown suite {other:?} (use exact|theorems)"),
            })
        }
    };
    emit_reports(&reports, out).stage(Stage::Output)?;
    Ok(reports.iter().all(|r| r.pass))
}

fn build_structure(
    kernel: &DiscretizedKernel,
    r: &Resolved,
) -> Result<MetastableStructure, randpoincare::Error> {
    let model = r.base_model.with_sigma(kernel.sigma);
    let cfg = SamplerConfig::new(r.dt, r.seed);
    let structure = metastable::detect_balls(kernel, &model, r.delta, &cfg)?;
    match model.analytic_h_matrix() {
        Some(h) => structure.with_hierarchy(h, HProvenance::Analytic),
        None => Ok(structure),
    }
}

pub fn cmd_analyze(
    config: Option<&Path>,
    margs: &ModelArgs,
    sargs: &SamplingArgs,
    delta: Option<f64>,
    out: Option<&Path>,
    checks: Option<Vec<String>>,
) -> CliResult<bool> {
    let r = resolve(config, margs, Some(sargs), delta, out, checks)?;
    std::fs::create_dir_all(&r.out_dir).stage(Stage::Output)?;
    let cfg = SamplerConfig::new(r.dt, r.seed);
    let enabled = |name: &str| r.checks.iter().any(|c| c == name);

    // orbits
    let guesses = r
        .base_model
        .stable_section_points()
        .ok_or_else(|| CliError {
            stage: Stage::Orbits,
            error: "model has no catalog fixed points".into(),
        })?;
    let mut orbit_lines = vec!["chart,period,stable,multipliers".to_string()];
    for g in &guesses {
        let orbit =
            floquet::find_periodic_orbit(&r.base_model, g, 1e-10, &cfg).stage(Stage::Orbits)?;
        orbit_lines.push(format!(
            "{},{},{},{}",
            rio::fmt_f64(orbit.chart[0]),
            rio::fmt_f64(orbit.period),
            orbit.stable,
            orbit
                .multipliers
                .iter()
                .map(|m| format!("{}+{}i", rio::fmt_f64(m.re), rio::fmt_f64(m.im)))
                .collect::<Vec<_>>()
                .join("|")
        ));
    }
    std::fs::write(r.out_dir.join("orbits.csv"), orbit_lines.join("\n") + "\n")
        .stage(Stage::Output)?;

    // kernels over the schedule
    let grid = default_grid(&r.base_model, r.grid_cells);
    let mut kernels: Vec<(f64, DiscretizedKernel)> = Vec::new();
    for &s2 in &r.sigma2 {
        let model = r.base_model.with_sigma(s2.sqrt());
        let kernel = randpoincare::build_kernel(&model, &grid, r.samples_per_cell, &cfg)
            .stage(Stage::Kernel)?;
        let path = r.out_dir.join(format!("kernel_sigma2_{s2}.json"));
        rio::write_kernel(&kernel, kernel_meta(&r, s2), &path).stage(Stage::Output)?;
        kernels.push((s2, kernel));
    }

    // metastable structure from the sharpest kernel
    let structure = build_structure(&kernels.last().unwrap().1, &r).stage(Stage::Structure)?;
    rio::write_structure(&structure, &r.out_dir.join("structure.json")).stage(Stage::Output)?;

    // spectra
    for (s2, kernel) in &kernels {
        let sd = markov::spectral_decomposition(kernel, (structure.n_balls() + 2).min(kernel.n()))
            .stage(Stage::Spectrum)?;
        rio::write_spectrum_csv(&sd, &r.out_dir.join(format!("spectrum_sigma2_{s2}.csv")))
            .stage(Stage::Spectrum)?;
    }

    // verification reports
    let mut reports: Vec<VerificationReport> = Vec::new();
    if enabled("identities") {
        for (_, kernel) in &kernels {
            let a = structure.ball_rows(kernel, 0).stage(Stage::Verify)?;
            let b = structure
                .ball_rows(kernel, 1 % structure.n_balls())
                .stage(Stage::Verify)?;
            reports.extend(verify::exact_identity_suite(kernel, &a, &b).stage(Stage::Verify)?);
        }
    }
    if enabled("eigenvalues") {
        // the tolerance is pinned at the sharpest noise level; reports for
        // larger sigma are informational, with the cross-schedule trend
        // checked alongside
        let mut worst_by_sigma = Vec::new();
        for (idx, (s2, kernel)) in kernels.iter().enumerate() {
            let mut rep = verify::check_eigenvalues(kernel, &structure, s2.sqrt(), 0.10)
                .stage(Stage::Verify)?;
            let worst = rep
                .relative_errors
                .iter()
                .cloned()
                .fold(0.0f64, f64::max);
            worst_by_sigma.push(worst);
            if idx + 1 < kernels.len() {
                rep.notes.push(
                    "informational at this noise level: the tolerance gates the sharpest \
                     sigma of the schedule"
                        .into(),
                );
                rep.pass = true;
            }
            reports.push(rep);
        }
        if worst_by_sigma.len() >= 2 {
            let first = worst_by_sigma[0];
            let last = *worst_by_sigma.last().unwrap();
            reports.push(VerificationReport {
                check_name: "eigenvalue_error_trend".into(),
                sigma_values: r.sigma2.clone(),
                predicted: Vec::new(),
                measured: worst_by_sigma.clone(),
                relative_errors: Vec::new(),
                pass: last < first,
                tolerance: 0.0,
                notes: vec![format!(
                    "worst route error per sigma2: {worst_by_sigma:?} (must decrease \
                     from the first to the last schedule point)"
                )],
            });
        }
    }
    if enabled("gap") {
        let refs: Vec<(f64, &DiscretizedKernel)> =
            kernels.iter().map(|(s2, k)| (s2.sqrt(), k)).collect();
        reports.push(verify::check_gap(&refs, &structure).stage(Stage::Verify)?);
    }
    let sharpest = &kernels.last().unwrap().1;
    if enabled("eigenfunctions") {
        for kk in 1..structure.n_balls() {
            reports.push(
                verify::check_eigenfunctions(sharpest, &structure, kk, 0.05, 0.10)
                    .stage(Stage::Verify)?,
            );
        }
    }
    if enabled("hitting") {
        for kk in 1..structure.n_balls() {
            reports.push(
                verify::check_hitting_times(sharpest, &structure, kk, 0.10, 0.05)
                    .stage(Stage::Verify)?,
            );
        }
    }
    if enabled("exponent") && structure.n_balls() >= 2 {
        let mut pts = Vec::new();
        for (s2, kernel) in &kernels {
            let p = verify::escape_probability(kernel, &structure, 1, 1e-13)
                .stage(Stage::Verify)?;
            pts.push((s2.sqrt(), p));
        }
        let mut rep = VerificationReport {
            check_name: "exponent_regression".into(),
            sigma_values: pts.iter().map(|p| p.0).collect(),
            predicted: Vec::new(),
            measured: pts.iter().map(|p| p.1).collect(),
            relative_errors: Vec::new(),
            pass: true,
            tolerance: 0.15,
            notes: Vec::new(),
        };
        if pts.len() >= 3 {
            let (h_fit, intercept, r2) = verify::estimate_exponent(&pts).stage(Stage::Verify)?;
            rep.notes.push(format!(
                "fitted H = {h_fit:.6}, intercept {intercept:.4}, r2 = {r2:.6}"
            ));
            if let Some(h) = structure.h.as_ref() {
                let expect = h[[1, 0]];
                rep.predicted = vec![expect];
                let rel = ((h_fit - expect) / expect).abs();
                rep.relative_errors = vec![rel];
                rep.pass = rel <= 0.15;
            }
        } else {
            rep.notes.push(
                "escape probabilities reported only: the regression needs a schedule of \
                 at least 3 noise levels"
                    .into(),
            );
        }
        reports.push(rep);
    }
    if enabled("bounds") {
        let mut lines = Vec::new();
        for (s2, kernel) in &kernels {
            let m_rows = kernel
                .local_indices(&structure.m_cells(structure.n_balls()))
                .stage(Stage::Verify)?;
            let traced = markov::trace(kernel, &m_rows).stage(Stage::Verify)?;
            for i in 0..structure.n_balls() {
                let rows = structure.ball_rows(&traced, i).stage(Stage::Verify)?;
                let killed = markov::kill(&traced, &rows).stage(Stage::Verify)?;
                let gap = metastable::spectral_gap_bound(&killed, 1, 1e-12)
                    .stage(Stage::Verify)?;
                let osc =
                    metastable::oscillation_bound(&killed, 1, 10.0, 1e-12).stage(Stage::Verify)?;
                lines.push(format!("sigma2={s2} ball={} {gap}", i + 1));
                lines.push(format!("sigma2={s2} ball={} {osc}", i + 1));
            }
            let (p, _qsds) =
                metastable::build_p(&traced, &structure, structure.n_balls() - 1, 1e-13)
                    .stage(Stage::Verify)?;
            let ks = metastable::kstar_spectrum(&p, 1e-14).stage(Stage::Verify)?;
            for c in &ks.certificates {
                lines.push(format!("sigma2={s2} {c}"));
            }
            let e2 = {
                let hitting =
                    markov::expected_hitting_time(kernel, &m_rows).stage(Stage::Verify)?;
                (0..kernel.n())
                    .filter(|r| !m_rows.contains(r))
                    .map(|x| hitting[x])
                    .fold(0.0f64, f64::max)
            };
            let u = (0.5 / e2.max(1.0)).min(0.05);
            for m_pow in [1usize, 4, 16] {
                for c in metastable::norm_certificates(kernel, &structure, u, m_pow, 1e-13)
                    .stage(Stage::Verify)?
                {
                    lines.push(format!("sigma2={s2} m={m_pow} {c}"));
                }
            }
        }
        std::fs::write(
            r.out_dir.join("bound_certificates.txt"),
            lines.join("\n") + "\n",
        )
        .stage(Stage::Output)?;
        let all_ok = !lines.contains(&String::new()) && !lines.iter().any(|l| l.contains("VIOLATED"));
        let mut rep = VerificationReport {
            check_name: "bound_certificates".into(),
            sigma_values: r.sigma2.clone(),
            predicted: Vec::new(),
            measured: Vec::new(),
            relative_errors: Vec::new(),
            pass: all_ok,
            tolerance: 0.0,
            notes: vec![format!("{} certificates evaluated", lines.len())],
        };
        if !all_ok {
            rep.notes.push("see bound_certificates.txt".into());
        }
        reports.push(rep);
    }

    emit_reports(&reports, Some(&r.out_dir.join("reports.txt"))).stage(Stage::Output)?;
    let json = serde_json::to_string_pretty(&reports).stage(Stage::Output)?;
    std::fs::write(r.out_dir.join("reports.json"), json).stage(Stage::Output)?;
    Ok(reports.iter().all(|rep| rep.pass))
}

fn write_vector_csv(
    kernel: &DiscretizedKernel,
    values: &Array1<f64>,
    label: &str,
    out: Option<&Path>,
) -> Result<(), std::io::Error> {
    let Some(path) = out else { return Ok(()) };
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "cell,center,{label}")?;
    for (i, &v) in values.iter().enumerate() {
        let center = kernel
            .grid
            .center(kernel.cells[i])
            .iter()
            .map(|c| rio::fmt_f64(*c))
            .collect::<Vec<_>>()
            .join("|");
        writeln!(f, "{},{},{}", kernel.cells[i], center, rio::fmt_f64(v))?;
    }
    Ok(())
}

fn emit_reports(
    reports: &[VerificationReport],
    out: Option<&Path>,
) -> Result<(), std::io::Error> {
    let mut text = String::new();
    for rep in reports {
        text.push_str(&rep.to_string());
        text.push('\n');
    }
    print!("{text}");
    if let Some(path) = out {
        std::fs::write(path, text)?;
    }
    Ok(())
}

fn read_h_csv(path: &Path) -> Result<Array2<f64>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, String> = line
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                if tok.eq_ignore_ascii_case("inf") {
                    Ok(f64::INFINITY)
                } else {
                    tok.parse::<f64>().map_err(|e| e.to_string())
                }
            })
            .collect();
        rows.push(row?);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err("H matrix must be square".into());
    }
    let mut h = Array2::zeros((n, n));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            h[[i, j]] = v;
        }
    }
    Ok(h)
}
