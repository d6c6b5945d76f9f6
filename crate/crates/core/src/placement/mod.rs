//! Sensor-selection strategies.
//!
//! Two data-driven methods (greedy SVR, PCA with QR pivoting) and two
//! model-based ones (maximum entropy, mutual information under a GP prior).
//! Every selection is reported as dataset sensor indices.

mod greedy_svr;
mod info;
mod pca_qr;

pub use greedy_svr::{greedy_svr_select, GreedySvrConfig, Rehearsal};
pub use info::{entropy_select, mi_select};
pub use pca_qr::{
    compression_curve, condition_number, cs_reconstruct, pca, pca_qr_select, qr_column_pivoting,
    relative_frobenius_error, smallest_sufficient_k, Pca, QrPivoting, RANK_TOLERANCE,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GreedySvr,
    PcaQr,
    Entropy,
    Mi,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::GreedySvr, Method::PcaQr, Method::Entropy, Method::Mi];

    pub fn name(&self) -> &'static str {
        match self {
            Method::GreedySvr => "greedy-svr",
            Method::PcaQr => "pca-qr",
            Method::Entropy => "entropy",
            Method::Mi => "mi",
        }
    }

    /// Whether budget K's selection is a prefix of budget K+1's.
    pub fn is_greedy(&self) -> bool {
        !matches!(self, Method::PcaQr)
    }

    pub fn is_data_driven(&self) -> bool {
        matches!(self, Method::GreedySvr | Method::PcaQr)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "greedy-svr" => Ok(Method::GreedySvr),
            "pca-qr" => Ok(Method::PcaQr),
            "entropy" => Ok(Method::Entropy),
            "mi" => Ok(Method::Mi),
            _ => Err(Error::validation(format!(
                "unknown method '{s}' (valid: greedy-svr, pca-qr, entropy, mi)"
            ))),
        }
    }
}

/// Budget and optional stopping error for a selection run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionGoal {
    pub max_budget: usize,
    /// Stop once the step score reaches this error (mm); greedy SVR only.
    pub target_error: Option<f64>,
}

impl SelectionGoal {
    pub fn budget(k: usize) -> Self {
        Self { max_budget: k, target_error: None }
    }

    pub fn validate(&self, n_candidates: usize) -> Result<()> {
        if self.max_budget == 0 {
            return Err(Error::validation("budget must be positive"));
        }
        if self.max_budget > n_candidates {
            return Err(Error::validation(format!(
                "budget {} exceeds the {} feasible candidates",
                self.max_budget, n_candidates
            )));
        }
        if let Some(d) = self.target_error {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::validation("target error must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: Method,
    pub budgets: Vec<usize>,
    /// Dataset sensor indices per budget, in pick order.
    pub selections: Vec<Vec<usize>>,
    /// One diagnostic per budget: CV error (mm), condition number,
    /// entropy of the picked site, or log variance ratio.
    pub scores: Vec<f64>,
    /// Standard error of each score across folds, where the method has folds.
    #[serde(default)]
    pub score_spread: Vec<f64>,
    /// Skipped candidates, reduced budgets and similar notes.
    pub diagnostics: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
}

impl SelectionResult {
    /// Selection for budget `k`, if it was reached.
    pub fn at_budget(&self, k: usize) -> Option<&[usize]> {
        self.budgets.iter().position(|&b| b == k).map(|i| self.selections[i].as_slice())
    }

    pub fn max_budget(&self) -> usize {
        self.budgets.last().copied().unwrap_or(0)
    }

    /// Builds the per-budget prefixes of a greedy pick order.
    pub(crate) fn from_order(
        method: Method,
        order: Vec<usize>,
        scores: Vec<f64>,
        diagnostics: Vec<String>,
        config: serde_json::Value,
        seed: u64,
    ) -> Self {
        let budgets: Vec<usize> = (1..=order.len()).collect();
        let selections = budgets.iter().map(|&k| order[..k].to_vec()).collect();
        Self { method, budgets, selections, scores, score_spread: Vec::new(), diagnostics, config, seed }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Position of the first strict maximum; exact ties go to the lower position.
pub(crate) fn argmax_first(scores: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("greedy_svr".parse::<Method>().unwrap(), Method::GreedySvr);
        let err = "bogus".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("greedy-svr") && err.contains("mi"));
    }

    #[test]
    fn goal_validation() {
        assert!(SelectionGoal::budget(0).validate(5).is_err());
        assert!(SelectionGoal::budget(6).validate(5).is_err());
        assert!(SelectionGoal::budget(5).validate(5).is_ok());
        assert!(SelectionGoal { max_budget: 2, target_error: Some(-1.0) }.validate(5).is_err());
    }

    #[test]
    fn prefixes() {
        let r = SelectionResult::from_order(Method::Entropy, vec![4, 1, 7], vec![0.0; 3], vec![], serde_json::Value::Null, 0);
        assert_eq!(r.budgets, vec![1, 2, 3]);
        assert_eq!(r.at_budget(2).unwrap(), &[4, 1]);
        assert!(r.at_budget(4).is_none());
    }

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax_first([1.0, 3.0, 3.0, 2.0]), Some(1));
        assert_eq!(argmax_first([f64::NAN, 0.0]), Some(1));
        assert_eq!(argmax_first(std::iter::empty()), None);
    }
}
