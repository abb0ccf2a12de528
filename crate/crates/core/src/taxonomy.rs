//! Threshold clustering of mixture weights, sector profiles and network export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::archetypes::ArchetypalModel;
use crate::error::{Error, Result};

/// Sums within this distance of the threshold count as reaching it, so that
/// weights like 0.8 stored as 0.7999999999999999 are not lost.
const THRESHOLD_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyConfig {
    pub threshold: f64,
}

impl Default for TaxonomyConfig {
    fn default() -> Self {
        TaxonomyConfig { threshold: 0.8 }
    }
}

impl TaxonomyConfig {
    pub fn new(threshold: f64) -> Result<Self> {
        let config = TaxonomyConfig { threshold };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.5 && self.threshold <= 1.0) {
            return Err(Error::input(format!("threshold must lie in (0.5, 1], got {}", self.threshold)));
        }
        Ok(())
    }
}

/// Cluster label of one record. Indices are 0-based archetype columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClusterLabel {
    Pure { archetype: usize },
    Pair { first: usize, second: usize },
    Mixture,
    Unassigned,
}

impl ClusterLabel {
    pub fn is_assigned(&self) -> bool {
        !matches!(self, ClusterLabel::Unassigned)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ClusterLabel::Pure { .. } => "pure",
            ClusterLabel::Pair { .. } => "pair",
            ClusterLabel::Mixture => "mixture",
            ClusterLabel::Unassigned => "unassigned",
        }
    }

    /// Short display name with 1-based archetype numbers, e.g. `A2` or `A1+A3`.
    pub fn name(&self) -> String {
        match *self {
            ClusterLabel::Pure { archetype } => format!("A{}", archetype + 1),
            ClusterLabel::Pair { first, second } => format!("A{}+A{}", first + 1, second + 1),
            ClusterLabel::Mixture => "mixture".into(),
            ClusterLabel::Unassigned => "unassigned".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub threshold: f64,
    pub labels: Vec<ClusterLabel>,
    /// Members of each pure cluster, one list per archetype.
    pub pure: Vec<Vec<usize>>,
    /// Pair clusters in lexicographic order `(0,1), (0,2), ..., (k-2,k-1)`.
    pub pairs: Vec<((usize, usize), Vec<usize>)>,
    pub mixtures: Vec<usize>,
    pub unassigned: Vec<usize>,
}

impl ClusterAssignment {
    pub fn pair_members(&self, first: usize, second: usize) -> Option<&[usize]> {
        let key = (first.min(second), first.max(second));
        self.pairs.iter().find(|(p, _)| *p == key).map(|(_, m)| m.as_slice())
    }
}

/// Labels each row of `alpha` as pure, pair, mixture or unassigned.
pub fn assign_clusters(alpha: &DMatrix<f64>, config: &TaxonomyConfig) -> Result<ClusterAssignment> {
    config.validate()?;
    let (n, k) = alpha.shape();
    if k == 0 {
        return Err(Error::input("alpha has no columns"));
    }
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("alpha contains non-finite values"));
    }
    let u = config.threshold - THRESHOLD_SLACK;

    let mut pure = vec![Vec::new(); k];
    let mut pairs: Vec<((usize, usize), Vec<usize>)> =
        (0..k).flat_map(|j| (j + 1..k).map(move |l| ((j, l), Vec::new()))).collect();
    let mut mixtures = Vec::new();
    let mut unassigned = Vec::new();
    let mut labels = Vec::with_capacity(n);

    for i in 0..n {
        let row = alpha.row(i);
        let label = if let Some(j) = (0..k).find(|&j| row[j] >= u) {
            pure[j].push(i);
            ClusterLabel::Pure { archetype: j }
        } else {
            let mut reached =
                pairs.iter().enumerate().filter(|(_, ((j, l), _))| row[*j] + row[*l] >= u).map(|(p, _)| p);
            match (reached.next(), reached.next()) {
                (None, _) => {
                    unassigned.push(i);
                    ClusterLabel::Unassigned
                }
                (Some(p), None) => {
                    pairs[p].1.push(i);
                    let (first, second) = pairs[p].0;
                    ClusterLabel::Pair { first, second }
                }
                (Some(_), Some(_)) => {
                    mixtures.push(i);
                    ClusterLabel::Mixture
                }
            }
        };
        labels.push(label);
    }
    Ok(ClusterAssignment { k, threshold: config.threshold, labels, pure, pairs, mixtures, unassigned })
}

/// Per-sector archetype profile: column sums of `alpha` over the sector's
/// records, normalized to sum 1. Sectors come out in sorted order.
pub fn sector_weights(alpha: &DMatrix<f64>, sectors: &[String]) -> Result<Vec<(String, Vec<f64>)>> {
    let (n, k) = alpha.shape();
    if sectors.len() != n {
        return Err(Error::input(format!("{} sector labels for {} records", sectors.len(), n)));
    }
    if n == 0 {
        return Err(Error::input("no records to aggregate"));
    }
    let mut sums: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (i, s) in sectors.iter().enumerate() {
        let acc = sums.entry(s.as_str()).or_insert_with(|| vec![0.0; k]);
        for j in 0..k {
            acc[j] += alpha[(i, j)];
        }
    }
    sums.into_iter()
        .map(|(s, v)| {
            let total: f64 = v.iter().sum();
            if !(total > 0.0) {
                return Err(Error::Numeric(format!("sector {s} has zero total weight")));
            }
            Ok((s.to_string(), v.into_iter().map(|w| w / total).collect()))
        })
        .collect()
}

/// Writes the sector profile table with columns `sector,<archetype names>`.
pub fn write_sector_weights(path: impl AsRef<Path>, weights: &[(String, Vec<f64>)], names: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header = vec!["sector".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (sector, row) in weights {
        if row.len() != names.len() {
            return Err(Error::input("sector weight width does not match archetype names"));
        }
        let mut rec = vec![sector.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::input(format!("{}: {other:?}", path.display())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkFormat {
    Dot,
    Json,
}

impl NetworkFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(NetworkFormat::Dot),
            "json" => Ok(NetworkFormat::Json),
            other => Err(Error::input(format!("unknown network format '{other}' (dot, json)"))),
        }
    }

    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "dot" | "gv" => Some(NetworkFormat::Dot),
            "json" => Some(NetworkFormat::Json),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkNode {
    pub id: String,
    pub sector: Option<String>,
    pub cluster: String,
    pub kind: String,
    pub archetypoid: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkEdge {
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub nodes: Vec<NetworkNode>,
    pub edges: Vec<NetworkEdge>,
}

/// Builds the membership graph. Records are nodes; pure records link to
/// their archetype, pair records to both. For archetypoid models the
/// archetype is the member record itself (self-links are dropped); for AA
/// models separate `A1..Ak` nodes stand in for the archetypes.
pub fn build_network(
    assignment: &ClusterAssignment,
    model: &ArchetypalModel,
    record_labels: &[String],
    sectors: Option<&[String]>,
) -> Result<Network> {
    let n = assignment.labels.len();
    if record_labels.len() != n {
        return Err(Error::input(format!("{} record labels for {} records", record_labels.len(), n)));
    }
    if let Some(s) = sectors {
        if s.len() != n {
            return Err(Error::input(format!("{} sector labels for {} records", s.len(), n)));
        }
    }
    if model.k != assignment.k {
        return Err(Error::input("model and assignment disagree on k"));
    }
    let members = model.member_indices.as_deref();
    if let Some(m) = members {
        if m.iter().any(|&i| i >= n) {
            return Err(Error::input("archetypoid index outside the records"));
        }
    }

    let mut nodes: Vec<NetworkNode> = (0..n)
        .map(|i| NetworkNode {
            id: record_labels[i].clone(),
            sector: sectors.map(|s| s[i].clone()),
            cluster: assignment.labels[i].name(),
            kind: assignment.labels[i].kind().into(),
            archetypoid: members.is_some_and(|m| m.contains(&i)),
        })
        .collect();
    let hub = |j: usize| match members {
        Some(m) => record_labels[m[j]].clone(),
        None => format!("A{}", j + 1),
    };
    if members.is_none() {
        nodes.extend((0..model.k).map(|j| NetworkNode {
            id: hub(j),
            sector: None,
            cluster: format!("A{}", j + 1),
            kind: "archetype".into(),
            archetypoid: false,
        }));
    }

    let mut edges = Vec::new();
    for (i, label) in assignment.labels.iter().enumerate() {
        let targets: Vec<usize> = match *label {
            ClusterLabel::Pure { archetype } => vec![archetype],
            ClusterLabel::Pair { first, second } => vec![first, second],
            ClusterLabel::Mixture | ClusterLabel::Unassigned => Vec::new(),
        };
        for j in targets {
            let target = hub(j);
            if target != record_labels[i] {
                edges.push(NetworkEdge { source: record_labels[i].clone(), target });
            }
        }
    }
    Ok(Network { nodes, edges })
}

impl Network {
    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph archetypes {\n");
        for node in &self.nodes {
            let mut attrs = vec![format!("cluster={}", quote(&node.cluster)), format!("kind={}", quote(&node.kind))];
            if let Some(s) = &node.sector {
                attrs.push(format!("sector={}", quote(s)));
            }
            if node.archetypoid {
                attrs.push("archetypoid=true".into());
                attrs.push("style=filled".into());
                attrs.push("shape=box".into());
            }
            let _ = writeln!(out, "  {} [{}];", quote(&node.id), attrs.join(", "));
        }
        for e in &self.edges {
            let _ = writeln!(out, "  {} -- {};", quote(&e.source), quote(&e.target));
        }
        out.push_str("}\n");
        out
    }

    pub fn write(&self, path: impl AsRef<Path>, format: NetworkFormat) -> Result<()> {
        let path = path.as_ref();
        let text = match format {
            NetworkFormat::Dot => self.to_dot(),
            NetworkFormat::Json => serde_json::to_string_pretty(self)? + "\n",
        };
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// [`build_network`] followed by a write in `format`.
pub fn export_network(
    assignment: &ClusterAssignment,
    model: &ArchetypalModel,
    record_labels: &[String],
    sectors: Option<&[String]>,
    path: impl AsRef<Path>,
    format: NetworkFormat,
) -> Result<Network> {
    let network = build_network(assignment, model, record_labels, sectors)?;
    network.write(path, format)?;
    Ok(network)
}
