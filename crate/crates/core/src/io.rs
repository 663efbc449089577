//! Text-based persistence: kernels and structures as JSON containers, CSV
//! exports for matrices and spectra. Output is byte-deterministic for a given
//! input, so reruns with the same seed produce identical files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{DiscretizedKernel, Grid};
use crate::markov::SpectralDecomposition;
use crate::metastable::MetastableStructure;

#[derive(Debug, Serialize, Deserialize)]
struct KernelFile {
    format: String,
    grid: Grid,
    cells: Vec<usize>,
    matrix: Vec<Vec<f64>>,
    kill_column: Option<Vec<f64>>,
    sample_counts: Option<Vec<u64>>,
    sigma: f64,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

pub fn kernel_to_json(kernel: &DiscretizedKernel, meta: BTreeMap<String, String>) -> Result<String> {
    let file = KernelFile {
        format: "kernel.v1".into(),
        grid: kernel.grid.clone(),
        cells: kernel.cells.clone(),
        matrix: kernel
            .matrix
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect(),
        kill_column: kernel.kill_column.as_ref().map(|k| k.to_vec()),
        sample_counts: kernel.sample_counts.clone(),
        sigma: kernel.sigma,
        meta,
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn kernel_from_json(text: &str) -> Result<DiscretizedKernel> {
    let file: KernelFile = serde_json::from_str(text)?;
    if file.format != "kernel.v1" {
        return Err(Error::Serialization(format!(
            "unsupported kernel format {:?}",
            file.format
        )));
    }
    let n = file.matrix.len();
    let mut matrix = Array2::zeros((n, n));
    for (i, row) in file.matrix.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Serialization("matrix is not square".into()));
        }
        for (j, &v) in row.iter().enumerate() {
            matrix[[i, j]] = v;
        }
    }
    let kernel = DiscretizedKernel {
        grid: file.grid,
        cells: file.cells,
        matrix,
        kill_column: file.kill_column.map(Array1::from_vec),
        sample_counts: file.sample_counts,
        sigma: file.sigma,
    };
    kernel.validate(1e-9)?;
    Ok(kernel)
}

pub fn write_kernel(
    kernel: &DiscretizedKernel,
    meta: BTreeMap<String, String>,
    path: &Path,
) -> Result<()> {
    let text = kernel_to_json(kernel, meta)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_kernel(path: &Path) -> Result<DiscretizedKernel> {
    let text = std::fs::read_to_string(path)?;
    kernel_from_json(&text)
}

/// Row-major CSV: `row,center,<cell centers...>,kill`.
pub fn write_kernel_csv(kernel: &DiscretizedKernel, path: &Path) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    let centers: Vec<String> = kernel
        .cells
        .iter()
        .map(|&c| format_center(&kernel.grid.center(c)))
        .collect();
    write!(out, "row,center")?;
    for c in &centers {
        write!(out, ",to_{c}")?;
    }
    writeln!(out, ",kill")?;
    for i in 0..kernel.n() {
        write!(out, "{i},{}", centers[i])?;
        for j in 0..kernel.n() {
            write!(out, ",{}", fmt_f64(kernel.matrix[[i, j]]))?;
        }
        let kill = kernel.kill_column.as_ref().map(|k| k[i]).unwrap_or(0.0);
        writeln!(out, ",{}", fmt_f64(kill))?;
    }
    Ok(())
}

/// One row per eigenpair: Re/Im of the eigenvalue, then the right and left
/// eigenvector entries (real and imaginary parts interleaved).
pub fn write_spectrum_csv(sd: &SpectralDecomposition, path: &Path) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    let n = sd.right.first().map(|v| v.len()).unwrap_or(0);
    write!(out, "re_lambda,im_lambda")?;
    for i in 0..n {
        write!(out, ",re_phi_{i},im_phi_{i}")?;
    }
    for i in 0..n {
        write!(out, ",re_pi_{i},im_pi_{i}")?;
    }
    writeln!(out)?;
    for k in 0..sd.count() {
        write!(
            out,
            "{},{}",
            fmt_f64(sd.eigenvalues[k].re),
            fmt_f64(sd.eigenvalues[k].im)
        )?;
        for v in sd.right[k].iter() {
            write!(out, ",{},{}", fmt_f64(v.re), fmt_f64(v.im))?;
        }
        for v in sd.left[k].iter() {
            write!(out, ",{},{}", fmt_f64(v.re), fmt_f64(v.im))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_structure(structure: &MetastableStructure, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(structure)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_structure(path: &Path) -> Result<MetastableStructure> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn format_center(c: &[f64]) -> String {
    c.iter()
        .map(|v| fmt_f64(*v))
        .collect::<Vec<_>>()
        .join("|")
}

/// Shortest round-trip representation; stable across runs.
pub fn fmt_f64(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}
