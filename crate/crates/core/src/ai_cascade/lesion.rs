use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

macro_rules! lesion_classes {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// The 17 lesion classes the detector was trained on.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum LesionClass {
            $(#[serde(rename = $name)] $variant),+
        }

        impl LesionClass {
            pub const ALL: [LesionClass; 17] = [$(LesionClass::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(LesionClass::$variant => $name),+
                }
            }
        }

        impl FromStr for LesionClass {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim() {
                    $($name => Ok(LesionClass::$variant),)+
                    other => Err(format!("unknown lesion class '{other}'")),
                }
            }
        }
    };
}

lesion_classes! {
    AorticEnlargement => "Aortic enlargement",
    Atelectasis => "Atelectasis",
    Calcification => "Calcification",
    Cardiomegaly => "Cardiomegaly",
    ClavicleFracture => "Clavicle fracture",
    Consolidation => "Consolidation",
    Emphysema => "Emphysema",
    EnlargedPa => "Enlarged PA",
    Infiltration => "Infiltration",
    InterstitialLungDisease => "Interstitial lung disease (ILD)",
    NoduleMass => "Nodule/Mass",
    Opacity => "Opacity",
    PleuralEffusion => "Pleural effusion",
    PleuralThickening => "Pleural thickening",
    Pneumothorax => "Pneumothorax",
    PulmonaryFibrosis => "Pulmonary fibrosis",
    RibFracture => "Rib fracture",
}

impl fmt::Display for LesionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoxError {
    #[error("coordinate {0} outside [0,1]")]
    OutOfRange(f64),
    #[error("empty box: min {min} is not below max {max}")]
    Empty { min: f64, max: f64 },
    #[error("confidence {0} outside [0,1]")]
    Confidence(f64),
}

/// A detected lesion; coordinates are normalized to the image extent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct LesionBox {
    pub lesion_class: LesionClass,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub confidence: f64,
}

#[derive(Deserialize)]
struct RawBox {
    lesion_class: LesionClass,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    confidence: f64,
}

impl TryFrom<RawBox> for LesionBox {
    type Error = BoxError;

    fn try_from(r: RawBox) -> Result<Self, Self::Error> {
        LesionBox::new(r.lesion_class, r.x_min, r.y_min, r.x_max, r.y_max, r.confidence)
    }
}

impl LesionBox {
    pub fn new(
        lesion_class: LesionClass,
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        confidence: f64,
    ) -> Result<Self, BoxError> {
        for v in [x_min, y_min, x_max, y_max] {
            if !(0.0..=1.0).contains(&v) {
                return Err(BoxError::OutOfRange(v));
            }
        }
        for (min, max) in [(x_min, x_max), (y_min, y_max)] {
            if min >= max {
                return Err(BoxError::Empty { min, max });
            }
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(BoxError::Confidence(confidence));
        }
        Ok(LesionBox { lesion_class, x_min, y_min, x_max, y_max, confidence })
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}
