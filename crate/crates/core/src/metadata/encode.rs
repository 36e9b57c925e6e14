use serde::{Deserialize, Serialize};

use super::parse::{category_index, MetadataRecord};
use super::schema::{ColumnKind, MetadataSchema};
use crate::error::{Error, Result};

/// Fixed-length numeric encoding of one record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedMeta {
    pub values: Vec<f32>,
    /// `true` where the source value was missing.
    pub mask: Vec<bool>,
}

impl EncodedMeta {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn has_missing(&self) -> bool {
        self.mask.iter().any(|&m| m)
    }
}

/// One-hot for categoricals (all-zero when missing), bounded min-max scaling
/// for numerics (0 when missing). Identifier and label columns are skipped.
pub fn encode(record: &MetadataRecord, schema: &MetadataSchema) -> Result<EncodedMeta> {
    let n = schema.encoded_len();
    let mut values = vec![0.0f32; n];
    let mut mask = vec![false; n];
    for seg in schema.segments() {
        let span = seg.start..seg.start + seg.len;
        let col = schema.column(&seg.column).expect("segment column exists");
        match &col.kind {
            ColumnKind::Categorical { .. } => match category_index(schema, record, &col.name)? {
                Some(i) => values[seg.start + i] = 1.0,
                None => mask[span].iter_mut().for_each(|m| *m = true),
            },
            ColumnKind::Numeric { bounds: [lo, hi] } => match record.get(&col.name) {
                Some(raw) => {
                    let v: f64 = raw
                        .trim()
                        .parse()
                        .ok()
                        .filter(|v: &f64| v.is_finite())
                        .ok_or_else(|| Error::Parse {
                            line: record.line,
                            message: format!("`{}`: cannot parse `{raw}` as a number", col.name),
                        })?;
                    values[seg.start] = ((v - lo) / (hi - lo)).clamp(0.0, 1.0) as f32;
                }
                None => mask[seg.start] = true,
            },
            _ => unreachable!("only encoded kinds have segments"),
        }
    }
    Ok(EncodedMeta { values, mask })
}
