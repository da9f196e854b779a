use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Binary normal/abnormal outcome shared by AI results and report labels.
/// The positive class is `Abnormal`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Finding {
    Normal,
    Abnormal,
}

impl Finding {
    pub fn is_abnormal(self) -> bool {
        matches!(self, Finding::Abnormal)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Finding::Normal => "normal",
            Finding::Abnormal => "abnormal",
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Finding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(Finding::Normal),
            "abnormal" => Ok(Finding::Abnormal),
            other => Err(format!("unknown finding '{other}'")),
        }
    }
}
