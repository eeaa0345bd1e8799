//! Log-linear score scales and HMM transition parameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScaleError {
    #[error("scale `{0}` must be finite and nonnegative")]
    Invalid(&'static str),
    #[error("training requires prior scale 0, got {0}")]
    PriorInTraining(f64),
    #[error("transition probability `{0}` must lie strictly between 0 and 1")]
    Transition(&'static str),
}

/// Exponents of the scaled log-linear score combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScaleSet {
    pub alpha_left: f64,
    pub alpha_center: f64,
    pub alpha_right: f64,
    /// Prior scale. Must be zero for training.
    pub beta: f64,
    /// Transition scale.
    pub eta: f64,
    /// Language model scale.
    pub lambda: f64,
}

impl Default for ScaleSet {
    fn default() -> Self {
        Self {
            alpha_left: 1.0,
            alpha_center: 1.0,
            alpha_right: 1.0,
            beta: 0.0,
            eta: 1.0,
            lambda: 1.0,
        }
    }
}

impl ScaleSet {
    pub fn validate(&self) -> Result<(), ScaleError> {
        let fields = [
            ("alpha_left", self.alpha_left),
            ("alpha_center", self.alpha_center),
            ("alpha_right", self.alpha_right),
            ("beta", self.beta),
            ("eta", self.eta),
            ("lambda", self.lambda),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(ScaleError::Invalid(name));
            }
        }
        Ok(())
    }

    /// Validation for training losses: additionally requires `beta == 0`.
    pub fn validate_training(&self) -> Result<(), ScaleError> {
        self.validate()?;
        if self.beta != 0.0 {
            return Err(ScaleError::PriorInTraining(self.beta));
        }
        Ok(())
    }
}

/// Global HMM transition probabilities: self-loop probability for speech
/// and silence states. The remaining mass is split evenly among a state's
/// outgoing forward arcs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransitionModel {
    pub p_loop: f64,
    pub p_sil_loop: f64,
}

impl Default for TransitionModel {
    fn default() -> Self {
        Self {
            p_loop: 0.5,
            p_sil_loop: 0.5,
        }
    }
}

impl TransitionModel {
    pub fn validate(&self) -> Result<(), ScaleError> {
        if !(self.p_loop > 0.0 && self.p_loop < 1.0) {
            return Err(ScaleError::Transition("p_loop"));
        }
        if !(self.p_sil_loop > 0.0 && self.p_sil_loop < 1.0) {
            return Err(ScaleError::Transition("p_sil_loop"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn training_rejects_prior() {
        let s = ScaleSet {
            beta: 0.3,
            ..ScaleSet::default()
        };
        assert!(s.validate().is_ok());
        assert_eq!(s.validate_training(), Err(ScaleError::PriorInTraining(0.3)));
        let bad = ScaleSet {
            eta: f64::NAN,
            ..ScaleSet::default()
        };
        assert_eq!(bad.validate(), Err(ScaleError::Invalid("eta")));
    }

    #[test]
    fn transition_bounds() {
        assert!(TransitionModel::default().validate().is_ok());
        let t = TransitionModel {
            p_loop: 1.0,
            ..Default::default()
        };
        assert!(t.validate().is_err());
    }
}
