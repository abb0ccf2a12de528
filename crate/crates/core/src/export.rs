//! JSON form of a fitted model, with the labels needed to read it back.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::archetypes::ArchetypalModel;
use crate::data;
use crate::error::{Error, Result};
use crate::robust::LossSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelExport {
    /// `archetypes` or `archetypoids`.
    pub kind: String,
    pub k: usize,
    pub loss: LossSpec,
    pub objective: f64,
    pub record_labels: Vec<String>,
    pub column_labels: Vec<String>,
    /// Labels of the archetypoid records, in archetype order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub members: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub member_indices: Option<Vec<usize>>,
    /// `k` rows of `column_labels.len()` values.
    pub archetypes: Vec<Vec<f64>>,
    /// `n` rows of `k` mixture weights.
    pub alpha: Vec<Vec<f64>>,
    /// `k` rows of `n` builder weights.
    pub beta: Vec<Vec<f64>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if r.iter().any(|row| row.len() != ncols) {
        return Err(Error::input(format!("{what} rows must have {ncols} entries")));
    }
    Ok(DMatrix::from_fn(r.len(), ncols, |i, j| r[i][j]))
}

impl ModelExport {
    pub fn new(model: &ArchetypalModel, record_labels: &[String], column_labels: &[String]) -> Result<Self> {
        let n = model.alpha.nrows();
        if record_labels.len() != n || column_labels.len() != model.archetypes.ncols() {
            return Err(Error::input("labels do not match the model dimensions"));
        }
        let members = model
            .member_indices
            .as_ref()
            .map(|m| {
                m.iter()
                    .map(|&i| record_labels.get(i).cloned().ok_or_else(|| Error::input("member index out of range")))
                    .collect()
            })
            .transpose()?;
        Ok(ModelExport {
            kind: if model.member_indices.is_some() { "archetypoids" } else { "archetypes" }.into(),
            k: model.k,
            loss: model.loss,
            objective: model.objective,
            record_labels: record_labels.to_vec(),
            column_labels: column_labels.to_vec(),
            members,
            member_indices: model.member_indices.clone(),
            archetypes: rows(&model.archetypes),
            alpha: rows(&model.alpha),
            beta: rows(&model.beta),
        })
    }

    /// Rebuilds the model. Iteration history is not kept in the export.
    pub fn to_model(&self) -> Result<ArchetypalModel> {
        let n = self.record_labels.len();
        let k = self.k;
        if self.alpha.len() != n || self.archetypes.len() != k || self.beta.len() != k {
            return Err(Error::input("model arrays do not match k and the record count"));
        }
        if let Some(m) = &self.member_indices {
            if m.len() != k || m.iter().any(|&i| i >= n) {
                return Err(Error::input("member indices do not match k and the record count"));
            }
        }
        Ok(ArchetypalModel {
            k,
            archetypes: from_rows(&self.archetypes, self.column_labels.len(), "archetype")?,
            alpha: from_rows(&self.alpha, k, "alpha")?,
            beta: from_rows(&self.beta, n, "beta")?,
            objective: self.objective,
            loss: self.loss,
            member_indices: self.member_indices.clone(),
            history: Vec::new(),
        })
    }

    /// `A1..Ak`, or the member labels for archetypoids.
    pub fn archetype_names(&self) -> Vec<String> {
        match &self.members {
            Some(m) => m.clone(),
            None => (1..=self.k).map(|j| format!("A{j}")).collect(),
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// `record,A1,...` table of mixture weights.
    pub fn write_alpha_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let names: Vec<String> = (1..=self.k).map(|j| format!("A{j}")).collect();
        let alpha = from_rows(&self.alpha, self.k, "alpha")?;
        write_table(path.as_ref(), "record", &names, &self.record_labels, &alpha)
    }

    /// `archetype,<record labels>` table of builder weights.
    pub fn write_beta_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let names: Vec<String> = (1..=self.k).map(|j| format!("A{j}")).collect();
        let beta = from_rows(&self.beta, self.record_labels.len(), "beta")?;
        write_table(path.as_ref(), "archetype", &self.record_labels, &names, &beta)
    }

    /// `archetype,<column labels>` table of archetype coordinates.
    pub fn write_archetypes_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let z = from_rows(&self.archetypes, self.column_labels.len(), "archetype")?;
        write_table(path.as_ref(), "archetype", &self.column_labels, &self.archetype_names(), &z)
    }
}

fn write_table(path: &Path, corner: &str, cols: &[String], rows: &[String], values: &DMatrix<f64>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    data::write_labelled_matrix(file, corner, cols, rows, values)
}
