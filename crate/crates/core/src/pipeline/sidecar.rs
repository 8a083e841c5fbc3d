//! The fitted visualization transform, persisted as text.
//!
//! ```text
//! vizpipe-sidecar <version>
//! sha256 <hex digest of the body>
//! <body: pretty-printed JSON>
//! ```
//!
//! Floating-point values in the body are decimal strings with 17
//! significant digits, so the bundle reloads bit-identically. The body holds
//! the schema, the cleaning model, the encoder, the correlation matrix (for
//! auditing) and the layout plan with its full channel-to-slot table.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cleaning::CleaningModel;
use crate::correlation::{CorrelationMatrix, CorrelationOptions};
use crate::dataset::{AttributeKind, AttributeSchema};
use crate::encoding::{AttributeEncoding, EncoderModel};
use crate::error::{Error, Result};
use crate::layout::LayoutPlan;

pub const FORMAT_VERSION: u32 = 1;
const HEADER: &str = "vizpipe-sidecar";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSidecar {
    pub format_version: u32,
    pub schema: AttributeSchema,
    pub cleaning: CleaningModel,
    pub correlation_options: CorrelationOptions,
    pub correlation: CorrelationMatrix,
    pub encoder: EncoderModel,
    pub layout: LayoutPlan,
}

impl PipelineSidecar {
    /// Checks that every component describes the same surviving attributes.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::format("sidecar", m));
        if self.format_version != FORMAT_VERSION {
            return bad("unsupported format version");
        }
        self.schema.validate()?;
        self.cleaning.validate()?;
        if self.cleaning.source_schema() != &self.schema {
            return bad("cleaning model was fitted on a different schema");
        }
        let rebuilt = EncoderModel::new(
            self.encoder.attribute_names().to_vec(),
            self.encoder.encodings().to_vec(),
        )?;
        if rebuilt != self.encoder {
            return bad("encoder channel table is inconsistent");
        }
        let surviving = self.cleaning.output_schema().attributes();
        if surviving.len() != self.encoder.num_attributes() {
            return bad("encoder and cleaning disagree on the surviving attributes");
        }
        for (attr, (name, enc)) in surviving.iter().zip(
            self.encoder
                .attribute_names()
                .iter()
                .zip(self.encoder.encodings()),
        ) {
            let kind_ok = matches!(
                (attr.kind, enc),
                (AttributeKind::Numeric, AttributeEncoding::Numeric { .. })
                    | (
                        AttributeKind::Categorical,
                        AttributeEncoding::Categorical { .. }
                    )
            );
            if &attr.name != name || !kind_ok {
                return bad("encoder and cleaning disagree on the surviving attributes");
            }
        }
        self.correlation.validate()?;
        if self.correlation.attribute_names() != self.encoder.attribute_names() {
            return bad("correlation matrix covers different attributes");
        }
        self.layout.validate(&self.encoder)?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let body = serde_json::to_string_pretty(self).expect("sidecar serializes");
        let digest = hex::encode(Sha256::digest(body.as_bytes()));
        format!("{HEADER} {FORMAT_VERSION}\nsha256 {digest}\n{body}\n")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::format("sidecar", m);
        let mut parts = text.splitn(3, '\n');
        let header = parts.next().unwrap_or_default();
        let checksum = parts.next().unwrap_or_default();
        let body = parts.next().unwrap_or_default();
        match header.split_once(' ') {
            Some((HEADER, v)) if v.parse() == Ok(FORMAT_VERSION) => {}
            _ => return Err(bad(format!("unrecognized header {header:?}"))),
        }
        let expected = checksum
            .strip_prefix("sha256 ")
            .ok_or_else(|| bad("missing checksum line".into()))?;
        let body = body.strip_suffix('\n').unwrap_or(body);
        let actual = hex::encode(Sha256::digest(body.as_bytes()));
        if actual != expected {
            return Err(bad("checksum mismatch".into()));
        }
        let sidecar: PipelineSidecar =
            serde_json::from_str(body).map_err(|e| bad(e.to_string()))?;
        sidecar.validate()?;
        Ok(sidecar)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
