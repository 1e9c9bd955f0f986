//! Ensemble quality metrics: coverage and matching score in both recall
//! and precision directions, over superposition-minimal RMSD.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{kabsch_align, rmsd, Conformation};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsConfig {
    /// Coverage threshold in the same length unit as the coordinates.
    pub delta: f64,
    /// Generated conformers per reference conformer.
    pub generation_ratio: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { delta: 0.5, generation_ratio: 2 }
    }
}

/// Reference and generated ensembles for one molecule.
#[derive(Debug, Clone)]
pub struct ConformerSet {
    pub reference: Vec<Conformation>,
    pub generated: Vec<Conformation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovMat {
    pub coverage: f64,
    pub matching: f64,
}

/// Aggregate over molecules: mean and median of each metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub cov_r_mean: f64,
    pub cov_r_median: f64,
    pub mat_r_mean: f64,
    pub mat_r_median: f64,
    pub cov_p_mean: f64,
    pub cov_p_median: f64,
    pub mat_p_mean: f64,
    pub mat_p_median: f64,
}

/// Minimal RMSD after optimal rigid superposition of `b` onto `a`.
pub fn aligned_rmsd(a: &Conformation, b: &Conformation) -> Result<f64> {
    let (_, fitted) = kabsch_align(b, a)?;
    rmsd(&fitted, a)
}

/// Full pairwise matrix, references as rows and generated as columns.
pub fn rmsd_matrix(set: &ConformerSet) -> Result<Vec<Vec<f64>>> {
    if set.reference.is_empty() {
        return Err(Error::invalid("empty reference ensemble"));
    }
    if set.generated.is_empty() {
        return Err(Error::invalid("empty generated ensemble"));
    }
    set.reference
        .iter()
        .map(|r| set.generated.iter().map(|g| aligned_rmsd(r, g)).collect())
        .collect()
}

fn cov_mat_from_minima(minima: &[f64], delta: f64) -> CovMat {
    let n = minima.len() as f64;
    let covered = minima.iter().filter(|&&m| m < delta).count() as f64;
    CovMat {
        coverage: 100.0 * covered / n,
        matching: minima.iter().sum::<f64>() / n,
    }
}

/// Recall direction: for each reference, the best generated match.
pub fn cov_mat_recall(matrix: &[Vec<f64>], delta: f64) -> Result<CovMat> {
    if matrix.is_empty() || matrix[0].is_empty() {
        return Err(Error::invalid("empty distance matrix"));
    }
    let minima: Vec<f64> = matrix
        .iter()
        .map(|row| row.iter().cloned().fold(f64::INFINITY, f64::min))
        .collect();
    Ok(cov_mat_from_minima(&minima, delta))
}

/// Precision direction: for each generated conformer, the best reference.
pub fn cov_mat_precision(matrix: &[Vec<f64>], delta: f64) -> Result<CovMat> {
    if matrix.is_empty() || matrix[0].is_empty() {
        return Err(Error::invalid("empty distance matrix"));
    }
    let cols = matrix[0].len();
    let minima: Vec<f64> = (0..cols)
        .map(|j| matrix.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min))
        .collect();
    Ok(cov_mat_from_minima(&minima, delta))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Evaluate a collection of molecules and aggregate across them.
pub fn evaluate_suite(sets: &[ConformerSet], cfg: &MetricsConfig) -> Result<SuiteReport> {
    if sets.is_empty() {
        return Err(Error::invalid("no molecules to evaluate"));
    }
    let mut cov_r = Vec::with_capacity(sets.len());
    let mut mat_r = Vec::with_capacity(sets.len());
    let mut cov_p = Vec::with_capacity(sets.len());
    let mut mat_p = Vec::with_capacity(sets.len());
    for set in sets {
        let m = rmsd_matrix(set)?;
        let r = cov_mat_recall(&m, cfg.delta)?;
        let p = cov_mat_precision(&m, cfg.delta)?;
        cov_r.push(r.coverage);
        mat_r.push(r.matching);
        cov_p.push(p.coverage);
        mat_p.push(p.matching);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(SuiteReport {
        cov_r_mean: mean(&cov_r),
        cov_r_median: median(&mut cov_r.clone()),
        mat_r_mean: mean(&mat_r),
        mat_r_median: median(&mut mat_r.clone()),
        cov_p_mean: mean(&cov_p),
        cov_p_median: median(&mut cov_p.clone()),
        mat_p_mean: mean(&mat_p),
        mat_p_median: median(&mut mat_p.clone()),
    })
}
