//! Replicate CSVs, density-grid CSVs and JSON artifacts.

use std::collections::HashMap;
use std::path::Path;

use deconv_core::deconvolver::{DensityGrid, PosteriorSummary};
use deconv_core::mixture::{GaussianMixture, MixtureState};
use deconv_core::simulation::Scenario;
use deconv_core::ReplicateDataset;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::AppError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> AppError {
    AppError::Data(format!("{}: {e}", path.display()))
}

/// Reads `subject,rep,x1..xp`. Subjects keep their first-appearance order and
/// may have different replicate counts.
pub fn read_dataset(path: &Path) -> Result<ReplicateDataset, AppError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| io_err(path, e))?;
    let header = rdr.headers().map_err(|e| io_err(path, e))?.clone();
    let p = header.len().saturating_sub(2);
    let expected: Vec<String> =
        ["subject".to_string(), "rep".to_string()].into_iter().chain((1..=p).map(|l| format!("x{l}"))).collect();
    if p == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(io_err(path, format!("header must be `{}`", expected.join(","))));
    }
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut subjects: Vec<Vec<DVector<f64>>> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| io_err(path, format!("row {line}: {msg}"));
        if rec.len() != p + 2 {
            return Err(bad(format!("expected {} fields, found {}", p + 2, rec.len())));
        }
        let subject = rec[0].to_string();
        let rep: i64 = rec[1].parse().map_err(|_| bad(format!("replicate `{}` is not an integer", &rec[1])))?;
        if !seen.insert((subject.clone(), rep)) {
            return Err(bad(format!("duplicate replicate {rep} for subject `{subject}`")));
        }
        let w = (0..p)
            .map(|l| {
                let v: f64 = rec[l + 2].parse().map_err(|_| bad(format!("x{} = `{}` is not a number", l + 1, &rec[l + 2])))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(bad(format!("x{} is not finite", l + 1)))
                }
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let i = *index.entry(subject).or_insert_with(|| {
            subjects.push(Vec::new());
            subjects.len() - 1
        });
        subjects[i].push(DVector::from_vec(w));
    }
    ReplicateDataset::new(subjects).map_err(|e| io_err(path, e))
}

pub fn write_dataset(path: &Path, data: &ReplicateDataset) -> Result<(), AppError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let mut header = vec!["subject".to_string(), "rep".to_string()];
    header.extend((1..=data.dim()).map(|l| format!("x{l}")));
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for (i, reps) in data.subjects().iter().enumerate() {
        for (j, x) in reps.iter().enumerate() {
            let mut row = vec![(i + 1).to_string(), (j + 1).to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AppError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

/// Exact description of the simulated `f_X`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruthFile {
    pub scenario: Scenario,
    pub density: MixtureState,
}

/// Anything `evaluate` can score: a fitted posterior or an exact truth.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum DensityFile {
    Posterior(PosteriorSummary),
    Truth(TruthFile),
}

impl DensityFile {
    pub fn evaluator(&self) -> Result<Box<dyn Fn(&[f64]) -> f64 + Sync>, AppError> {
        Ok(match self {
            DensityFile::Posterior(s) => {
                let d = s.density().map_err(AppError::from)?;
                Box::new(move |x: &[f64]| d.density(x))
            }
            DensityFile::Truth(t) => {
                let d = GaussianMixture::from_state(&t.density).map_err(AppError::from)?;
                Box::new(move |x: &[f64]| d.density(x))
            }
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            DensityFile::Posterior(s) => s.snapshots.first().map_or(0, |m| m.dim()),
            DensityFile::Truth(t) => t.density.dim(),
        }
    }
}

/// `marginal_x{l}.csv` per coordinate and `pairwise_x{i}_x{j}.csv` per pair,
/// in long format.
pub fn write_grid(dir: &Path, grid: &DensityGrid) -> Result<(), AppError> {
    for (l, (axis, vals)) in grid.axes.iter().zip(&grid.univariate).enumerate() {
        let path = dir.join(format!("marginal_x{}.csv", l + 1));
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        w.write_record([format!("x{}", l + 1), "density".into()]).map_err(|e| io_err(&path, e))?;
        for (x, f) in axis.iter().zip(vals) {
            w.write_record([x.to_string(), f.to_string()]).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    for (i, j, vals) in &grid.bivariate {
        let path = dir.join(format!("pairwise_x{}_x{}.csv", i + 1, j + 1));
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        w.write_record([format!("x{}", i + 1), format!("x{}", j + 1), "density".into()])
            .map_err(|e| io_err(&path, e))?;
        let nb = grid.axes[*j].len();
        for (a, xa) in grid.axes[*i].iter().enumerate() {
            for (b, xb) in grid.axes[*j].iter().enumerate() {
                w.write_record([xa.to_string(), xb.to_string(), vals[a * nb + b].to_string()])
                    .map_err(|e| io_err(&path, e))?;
            }
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}
