//! Area-level records, model parameters and response scales.

use serde::{Deserialize, Serialize};

use crate::error::{PtfhError, Result};
use crate::transform::{dpt_inv_raw, dpt_raw, log_jacobian_raw, TransformParam};

/// How the sampling variance of an area is supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SamplingVariance {
    /// Known variance on the modelling scale.
    Known(f64),
    /// Auxiliary observations `z_ik > 0`; the variance is their sample
    /// variance after transformation to the modelling scale.
    Replicates(Vec<f64>),
}

/// One area's direct estimate, covariates and sampling variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaRecord {
    pub area_id: String,
    pub y: f64,
    /// Covariate row; by convention the first entry is 1 (intercept).
    pub x: Vec<f64>,
    pub sampling: SamplingVariance,
}

impl AreaRecord {
    pub fn new(area_id: impl Into<String>, y: f64, x: Vec<f64>, sampling: SamplingVariance) -> Result<Self> {
        let rec = AreaRecord { area_id: area_id.into(), y, x, sampling };
        rec.validate()?;
        Ok(rec)
    }

    pub fn with_known_d(area_id: impl Into<String>, y: f64, x: Vec<f64>, d: f64) -> Result<Self> {
        Self::new(area_id, y, x, SamplingVariance::Known(d))
    }

    pub fn with_replicates(area_id: impl Into<String>, y: f64, x: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        Self::new(area_id, y, x, SamplingVariance::Replicates(z))
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.area_id;
        if !(self.y.is_finite() && self.y > 0.0) {
            return Err(PtfhError::Data(format!("area {id}: y must be positive and finite, got {}", self.y)));
        }
        if self.x.is_empty() || self.x.iter().any(|v| !v.is_finite()) {
            return Err(PtfhError::Data(format!("area {id}: covariates must be non-empty and finite")));
        }
        match &self.sampling {
            SamplingVariance::Known(d) => {
                if !(d.is_finite() && *d > 0.0) {
                    return Err(PtfhError::Data(format!("area {id}: D must be positive and finite, got {d}")));
                }
            }
            SamplingVariance::Replicates(z) => {
                if z.len() < 2 {
                    return Err(PtfhError::Data(format!("area {id}: need at least 2 replicates, got {}", z.len())));
                }
                if let Some(bad) = z.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                    return Err(PtfhError::Data(format!("area {id}: replicate values must be positive, got {bad}")));
                }
            }
        }
        Ok(())
    }

    /// Same area with the sampling variance replaced by a known value.
    pub fn with_d(&self, d: f64) -> AreaRecord {
        AreaRecord { sampling: SamplingVariance::Known(d), ..self.clone() }
    }
}

/// Scale on which the Fay–Herriot structure holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scale", content = "lambda", rename_all = "lowercase")]
pub enum Scale {
    /// Raw responses (classical Fay–Herriot).
    Identity,
    /// Dual power transformed responses; λ = 0 is the log scale.
    Dpt(TransformParam),
}

impl Scale {
    pub fn log() -> Scale {
        Scale::Dpt(TransformParam::LOG)
    }

    pub fn lambda(&self) -> Option<TransformParam> {
        match self {
            Scale::Identity => None,
            Scale::Dpt(l) => Some(*l),
        }
    }

    #[inline]
    pub(crate) fn forward_raw(&self, y: f64) -> f64 {
        match self {
            Scale::Identity => y,
            Scale::Dpt(l) => dpt_raw(y, l.value()),
        }
    }

    #[inline]
    pub(crate) fn inverse_raw(&self, t: f64) -> f64 {
        match self {
            Scale::Identity => t,
            Scale::Dpt(l) => dpt_inv_raw(t, l.value()),
        }
    }

    /// Jacobian summand as it enters the likelihood (zero on the raw scale).
    #[inline]
    pub(crate) fn log_jacobian_raw(&self, y: f64) -> f64 {
        match self {
            Scale::Identity => 0.0,
            Scale::Dpt(l) => log_jacobian_raw(y, l.value()),
        }
    }

    pub fn forward(&self, y: f64) -> Result<f64> {
        match self {
            Scale::Identity => Ok(y),
            Scale::Dpt(l) => crate::transform::dpt(y, *l),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Dual power transformed Fay–Herriot with estimated λ.
    Ptfh,
    /// λ fixed at 0.
    Logfh,
    /// Untransformed Fay–Herriot.
    Fh,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Ptfh => "ptfh",
            ModelKind::Logfh => "logfh",
            ModelKind::Fh => "fh",
        }
    }
}

/// φ = (β, A, λ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: Vec<f64>,
    pub a: f64,
    pub scale: Scale,
}

impl ModelParams {
    pub fn ptfh(beta: Vec<f64>, a: f64, lambda: f64) -> Result<Self> {
        if !(a.is_finite() && a >= 0.0) {
            return Err(PtfhError::Domain(format!("A must be finite and >= 0, got {a}")));
        }
        Ok(ModelParams { beta, a, scale: Scale::Dpt(TransformParam::new(lambda)?) })
    }

    pub fn lambda(&self) -> Option<f64> {
        self.scale.lambda().map(TransformParam::value)
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.beta.iter().zip(x).map(|(b, v)| b * v).sum()
    }
}

/// Design rows of `data` after checking they share one width.
pub(crate) fn covariate_width(data: &[AreaRecord]) -> Result<usize> {
    let p = data.first().map(|r| r.x.len()).ok_or_else(|| PtfhError::Data("no areas".into()))?;
    if let Some(r) = data.iter().find(|r| r.x.len() != p) {
        return Err(PtfhError::Data(format!(
            "area {} has {} covariates, expected {p}",
            r.area_id,
            r.x.len()
        )));
    }
    Ok(p)
}
