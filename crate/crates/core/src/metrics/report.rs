use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use crate::error::{KcotError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub train: Option<f64>,
    pub val: Option<f64>,
    pub test: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub run: u64,
    pub rng_algorithm: String,
}

/// Values beyond the fixed report keys.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub node_count: usize,
    pub edge_count: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Fitted ρ̂ ≥ 1; absent when no fit was possible.
    pub non_contractive: Option<bool>,
    pub inter_intra_features: Option<f64>,
    pub inter_intra_answer: Option<f64>,
    /// Δ trajectory of soft-k-means refinement of H⁽⁰⁾ without thoughts.
    pub kmeans_refinement_delta: Vec<f64>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub delta: Vec<f64>,
    pub rho_hat: Option<f64>,
    pub eps_hat: Option<f64>,
    pub residual: Option<f64>,
    pub accuracy: SplitAccuracy,
    pub inter_intra: Vec<f64>,
    pub kappa_hat: Option<f64>,
    pub lambda_hat: Option<f64>,
    pub config: serde_json::Value,
    pub seeds: Seeds,
    pub diagnostics: Diagnostics,
}

impl RunReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = to_json_17(self).map_err(|e| KcotError::json(path, e))?;
        std::fs::write(path, bytes).map_err(|e| KcotError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| KcotError::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| KcotError::json(path, e))
    }
}

/// Compact JSON whose floats carry 17 significant digits; non-finite
/// values become `null`.
struct SeventeenDigits;

impl Formatter for SeventeenDigits {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

pub fn write_json_17<W: io::Write, T: Serialize + ?Sized>(
    writer: W,
    value: &T,
) -> serde_json::Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(writer, SeventeenDigits);
    value.serialize(&mut ser)
}

pub fn to_json_17<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<Vec<u8>> {
    let mut out = Vec::new();
    write_json_17(&mut out, value)?;
    out.push(b'\n');
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_keys_and_precision() {
        let r = RunReport {
            delta: vec![0.1, 2.0 / 3.0],
            rho_hat: None,
            eps_hat: Some(f64::NAN),
            ..RunReport::default()
        };
        let text = String::from_utf8(to_json_17(&r).unwrap()).unwrap();
        assert!(text.contains("\"delta\":[1.0000000000000001e-1,6.6666666666666663e-1]"));
        assert!(text.contains("\"rho_hat\":null"));
        assert!(text.contains("\"eps_hat\":null"));
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        for k in [
            "delta", "rho_hat", "eps_hat", "residual", "accuracy", "inter_intra", "kappa_hat",
            "lambda_hat", "config", "seeds",
        ] {
            assert!(keys.iter().any(|x| x.as_str() == k), "missing {k}");
        }
    }

    proptest! {
        #[test]
        fn floats_round_trip_exactly(x in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
            let bytes = to_json_17(&vec![x]).unwrap();
            let back: Vec<f64> = serde_json::from_slice(&bytes).unwrap();
            prop_assert_eq!(back[0].to_bits(), x.to_bits());
        }
    }
}
