use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Diagnostic group. AD is the positive class throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    #[serde(rename = "NC")]
    Nc,
    #[serde(rename = "AD")]
    Ad,
}

impl Class {
    pub const ALL: [Class; 2] = [Class::Nc, Class::Ad];

    pub fn index(self) -> usize {
        match self {
            Class::Nc => 0,
            Class::Ad => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Class::Nc),
            1 => Some(Class::Ad),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Class::Nc => "NC",
            Class::Ad => "AD",
        }
    }
}

/// One test-image outcome of a training session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub truth: Class,
    pub predicted: Class,
    /// Softmax probability of the AD class.
    pub score: f64,
}

impl Prediction {
    pub fn correct(&self) -> bool {
        self.truth == self.predicted
    }
}

/// Outcome of one training session: configuration, sampling and
/// initialization indices, convergence status and test predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_id: String,
    pub sampling: usize,
    pub init: usize,
    pub converged: bool,
    /// Why the session was excluded, when it was.
    pub exclusion: Option<String>,
    pub final_val_accuracy: f64,
    pub predictions: Vec<Prediction>,
    pub curves_path: Option<String>,
    pub checkpoint_path: Option<String>,
}
