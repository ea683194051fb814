//! JSON input files: graphs and problem descriptions.
//!
//! ```json
//! {"cartan": {"preset": "A2"},
//!  "vortices": {"points": [["a", "a"], ["b"]]}}
//! ```
//!
//! `cartan` may instead give `{"K": [[...]], "P": [...]}` with `P` optional.
//! Vortex counts are the multiset sizes; a missing `vortices` block means no
//! vortices at all.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cartan::{CartanError, CartanPreset, CartanSystem, VortexData};
use crate::graph::{GraphError, GraphFile, WeightedGraph};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("K must be a non-empty square matrix; row {row} has {found} entries, expected {expected}")]
    RaggedMatrix { row: usize, expected: usize, found: usize },
    #[error(transparent)]
    Cartan(#[from] CartanError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CartanSpec {
    Preset {
        preset: String,
    },
    Matrix {
        #[serde(rename = "K")]
        k: Vec<Vec<f64>>,
        #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
        p: Option<Vec<f64>>,
    },
}

impl CartanSpec {
    pub fn system(&self) -> Result<CartanSystem, ProblemError> {
        match self {
            Self::Preset { preset } => Ok(CartanPreset::parse(preset)?.system()),
            Self::Matrix { k, p } => {
                let n = k.len();
                for (row, r) in k.iter().enumerate() {
                    if r.len() != n {
                        return Err(ProblemError::RaggedMatrix {
                            row,
                            expected: n,
                            found: r.len(),
                        });
                    }
                }
                let km = DMatrix::from_fn(n, n, |i, j| k[i][j]);
                let pv = p.as_ref().map(|p| DVector::from_vec(p.clone()));
                Ok(CartanSystem::validate(&km, pv.as_ref())?)
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VortexSpec {
    #[serde(default)]
    pub points: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub cartan: CartanSpec,
    #[serde(default)]
    pub vortices: VortexSpec,
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self, ProblemError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Vortex points padded with empty multisets up to `rank` when none are given.
    pub fn points(&self, rank: usize) -> Vec<Vec<String>> {
        if self.vortices.points.is_empty() {
            vec![Vec::new(); rank]
        } else {
            self.vortices.points.clone()
        }
    }

    /// All vortex points in one multiset, for scalar solves.
    pub fn flat_points(&self) -> Vec<String> {
        self.vortices.points.iter().flatten().cloned().collect()
    }

    pub fn resolve(&self, graph: &WeightedGraph) -> Result<(CartanSystem, VortexData), ProblemError> {
        let sys = self.cartan.system()?;
        let vort = VortexData::from_points(&sys, graph, &self.points(sys.rank()))?;
        Ok((sys, vort))
    }
}

pub fn graph_from_json(text: &str) -> Result<WeightedGraph, ProblemError> {
    let file: GraphFile = serde_json::from_str(text)?;
    Ok(file.into_graph()?)
}

pub fn graph_to_json(g: &WeightedGraph) -> String {
    serde_json::to_string_pretty(&GraphFile::from_graph(g)).expect("graph files serialise")
}
