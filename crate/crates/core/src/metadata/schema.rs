use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical {
        vocab: Vec<String>,
    },
    /// Normalized as `(v − lo) / (hi − lo)`, clipped to `[0, 1]`.
    Numeric {
        bounds: [f64; 2],
    },
    /// Never encoded.
    Identifier,
    Label {
        vocab: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

/// Column layout of a metadata CSV, loaded from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetadataSchema {
    pub columns: Vec<ColumnSpec>,
    /// Field values treated as missing in addition to the empty string.
    #[serde(default)]
    pub missing_markers: Vec<String>,
    /// Identifier column naming each sample.
    pub sample_id_column: String,
    /// Column holding the image file name; defaults to the sample id.
    #[serde(default)]
    pub image_column: Option<String>,
    /// Column grouping samples by patient.
    #[serde(default)]
    pub patient_column: Option<String>,
    /// Treat categorical values outside the vocabulary as missing instead of
    /// rejecting them.
    #[serde(default)]
    pub unknown_category_as_missing: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    OneHot,
    Numeric,
}

/// Span of the encoded vector owned by one column.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub column: String,
    pub start: usize,
    pub len: usize,
    pub kind: SegmentKind,
}

impl MetadataSchema {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: MetadataSchema = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for col in &self.columns {
            if !seen.insert(col.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", col.name)));
            }
            match &col.kind {
                ColumnKind::Categorical { vocab } | ColumnKind::Label { vocab } => {
                    let unique: HashSet<_> = vocab.iter().collect();
                    if vocab.is_empty() || unique.len() != vocab.len() {
                        return Err(Error::Schema(format!(
                            "column `{}` needs a non-empty vocabulary without duplicates",
                            col.name
                        )));
                    }
                }
                ColumnKind::Numeric { bounds: [lo, hi] } => {
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                        return Err(Error::Schema(format!(
                            "column `{}` has invalid bounds [{lo}, {hi}]",
                            col.name
                        )));
                    }
                }
                ColumnKind::Identifier => {}
            }
        }
        let labels = self
            .columns
            .iter()
            .filter(|c| matches!(c.kind, ColumnKind::Label { .. }))
            .count();
        if labels != 1 {
            return Err(Error::Schema(format!(
                "exactly one label column required, found {labels}"
            )));
        }
        for name in [
            Some(&self.sample_id_column),
            self.image_column.as_ref(),
            self.patient_column.as_ref(),
        ]
        .into_iter()
        .flatten()
        {
            match self.column(name) {
                Some(ColumnSpec {
                    kind: ColumnKind::Identifier,
                    ..
                }) => {}
                Some(_) => {
                    return Err(Error::Schema(format!(
                        "column `{name}` must be an identifier"
                    )))
                }
                None => return Err(Error::Schema(format!("unknown column `{name}`"))),
            }
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn label_column(&self) -> &ColumnSpec {
        self.columns
            .iter()
            .find(|c| matches!(c.kind, ColumnKind::Label { .. }))
            .expect("validated schema has a label column")
    }

    pub fn class_names(&self) -> &[String] {
        match &self.label_column().kind {
            ColumnKind::Label { vocab } => vocab,
            _ => unreachable!(),
        }
    }

    pub fn image_column(&self) -> &str {
        self.image_column
            .as_deref()
            .unwrap_or(&self.sample_id_column)
    }

    pub fn is_missing(&self, raw: &str) -> bool {
        raw.trim().is_empty() || self.missing_markers.iter().any(|m| m == raw)
    }

    /// Encoded layout: one span per categorical or numeric column, in schema order.
    pub fn segments(&self) -> Vec<Segment> {
        let mut start = 0;
        let mut out = Vec::new();
        for col in &self.columns {
            let (len, kind) = match &col.kind {
                ColumnKind::Categorical { vocab } => (vocab.len(), SegmentKind::OneHot),
                ColumnKind::Numeric { .. } => (1, SegmentKind::Numeric),
                _ => continue,
            };
            out.push(Segment {
                column: col.name.clone(),
                start,
                len,
                kind,
            });
            start += len;
        }
        out
    }

    pub fn encoded_len(&self) -> usize {
        self.segments().iter().map(|s| s.len).sum()
    }
}
