use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// How the backbone is adapted in incremental sessions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Layer selection and covariance-guided decomposition redone every session.
    Ckpd,
    /// Decompose once in the first incremental session and keep that split.
    KpdStatic,
    /// Backbone never changes; only new prototypes are learned.
    Freeze,
    /// Every backbone weight is trainable.
    FullAdapt,
    /// `B = 0`, Gaussian `A`, on the selected layers.
    LoraRandom,
    /// Decomposition with identity covariance on the selected layers.
    SvdPlain,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Ckpd,
        Strategy::KpdStatic,
        Strategy::Freeze,
        Strategy::FullAdapt,
        Strategy::LoraRandom,
        Strategy::SvdPlain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Ckpd => "ckpd",
            Strategy::KpdStatic => "kpd_static",
            Strategy::Freeze => "freeze",
            Strategy::FullAdapt => "full_adapt",
            Strategy::LoraRandom => "lora_random",
            Strategy::SvdPlain => "svd_plain",
        }
    }

    pub fn uses_adapters(self) -> bool {
        matches!(
            self,
            Strategy::Ckpd | Strategy::KpdStatic | Strategy::LoraRandom | Strategy::SvdPlain
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::InvalidStrategy(s.to_string()))
    }
}
