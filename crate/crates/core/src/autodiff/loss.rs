use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class weights of the cross-entropy loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub background: f64,
    pub liver: f64,
    pub lesion: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        ClassWeights {
            background: 1.0,
            liver: 2.0,
            lesion: 5.0,
        }
    }
}

impl ClassWeights {
    pub fn new(background: f64, liver: f64, lesion: f64) -> Result<Self> {
        let w = ClassWeights {
            background,
            liver,
            lesion,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn uniform() -> Self {
        ClassWeights {
            background: 1.0,
            liver: 1.0,
            lesion: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|w| *w > 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::Parameter(format!("class weights must be positive: {self:?}")))
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.background, self.liver, self.lesion]
    }
}
