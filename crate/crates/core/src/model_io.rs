//! Versioned JSON model documents.
//!
//! Layout (format_version 1):
//! ```json
//! {
//!   "format_version": 1,
//!   "layers": [
//!     { "weights": { "rows": 20, "cols": 64, "data": [...] }, "bias": [...] }
//!   ],
//!   "adapters": { ... } | null,
//!   "residual_adapters": { ... } | null
//! }
//! ```
//! Weights are row-major (d_in×d_out). The optional sections carry an
//! in-flight masked low-rank adapter set or a residual adapter stack for
//! checkpoint/resume.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapters::AdapterSet;
use crate::backbone::ModelParams;
use crate::continual::ResidualAdapterStack;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub layers: Vec<crate::backbone::LayerParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapters: Option<AdapterSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_adapters: Option<ResidualAdapterStack>,
}

impl ModelDocument {
    pub fn new(
        model: &ModelParams,
        adapters: Option<&AdapterSet>,
        residual: Option<&ResidualAdapterStack>,
    ) -> Self {
        ModelDocument {
            format_version: FORMAT_VERSION,
            layers: model.layers.clone(),
            adapters: adapters.cloned(),
            residual_adapters: residual.cloned(),
        }
    }

    pub fn into_model(self) -> Result<(ModelParams, Option<AdapterSet>, Option<ResidualAdapterStack>)> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::domain(format!(
                "unsupported model format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let model = ModelParams::new(self.layers)?;
        for layer in &model.layers {
            if !layer.weights.is_finite() || layer.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain("model document holds non-finite values"));
            }
        }
        Ok((model, self.adapters, self.residual_adapters))
    }
}

pub fn save_model(
    path: &Path,
    model: &ModelParams,
    adapters: Option<&AdapterSet>,
    residual: Option<&ResidualAdapterStack>,
) -> Result<()> {
    let doc = ModelDocument::new(model, adapters, residual);
    std::fs::write(path, serde_json::to_string(&doc)?)?;
    Ok(())
}

pub fn load_model(
    path: &Path,
) -> Result<(ModelParams, Option<AdapterSet>, Option<ResidualAdapterStack>)> {
    let doc: ModelDocument = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    doc.into_model()
}
