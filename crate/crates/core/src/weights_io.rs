//! Versioned JSON document for parameter tensors:
//! `{"version": 1, "kind": "...", "tensors": [{"shape": [r, c], "data": [...]}]}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KcotError, Result};
use crate::numerics::DenseMatrix;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl From<&DenseMatrix> for Tensor {
    fn from(m: &DenseMatrix) -> Self {
        Tensor {
            shape: [m.rows(), m.cols()],
            data: m.data().to_vec(),
        }
    }
}

impl TryFrom<Tensor> for DenseMatrix {
    type Error = KcotError;

    fn try_from(t: Tensor) -> Result<Self> {
        DenseMatrix::from_vec(t.shape[0], t.shape[1], t.data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsDocument {
    pub version: u32,
    pub kind: String,
    pub tensors: Vec<Tensor>,
}

impl WeightsDocument {
    pub fn new(kind: &str, mats: &[&DenseMatrix]) -> Self {
        WeightsDocument {
            version: FORMAT_VERSION,
            kind: kind.to_string(),
            tensors: mats.iter().map(|m| Tensor::from(*m)).collect(),
        }
    }

    pub fn into_matrices(self, expected_kind: &str) -> Result<Vec<DenseMatrix>> {
        if self.version != FORMAT_VERSION {
            return Err(KcotError::Config(format!(
                "unsupported weights version {} (expected {FORMAT_VERSION})",
                self.version
            )));
        }
        if self.kind != expected_kind {
            return Err(KcotError::Config(format!(
                "weights document holds {:?}, expected {expected_kind:?}",
                self.kind
            )));
        }
        self.tensors.into_iter().map(DenseMatrix::try_from).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self).map_err(|e| KcotError::json(path, e))?;
        fs::write(path, s).map_err(|e| KcotError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| KcotError::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| KcotError::json(path, e))
    }
}
