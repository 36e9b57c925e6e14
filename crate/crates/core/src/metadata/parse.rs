use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use super::schema::{ColumnKind, ColumnSpec, MetadataSchema};
use crate::error::{Error, Result};

/// One CSV row keyed by column name. Missing values are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetadataRecord {
    pub values: BTreeMap<String, Option<String>>,
    /// 1-based line of the row in the source file.
    pub line: u64,
}

impl MetadataRecord {
    /// Value of `column`, or `None` if missing or absent.
    pub fn get(&self, column: &str) -> Option<&str> {
        self.values.get(column).and_then(|v| v.as_deref())
    }

    pub fn sample_id(&self, schema: &MetadataSchema) -> &str {
        self.get(&schema.sample_id_column).unwrap_or_default()
    }

    /// Grouping key for splits: the patient id when configured and present,
    /// otherwise the sample id.
    pub fn group_key<'a>(&'a self, schema: &MetadataSchema) -> &'a str {
        schema
            .patient_column
            .as_deref()
            .and_then(|c| self.get(c))
            .unwrap_or_else(|| self.sample_id(schema))
    }

    pub fn image_name(&self, schema: &MetadataSchema) -> &str {
        self.get(schema.image_column()).unwrap_or_default()
    }

    /// Index of the label within the class vocabulary.
    pub fn label_index(&self, schema: &MetadataSchema) -> Result<usize> {
        let col = schema.label_column();
        let raw = self
            .get(&col.name)
            .ok_or_else(|| Error::Schema(format!("line {}: missing label", self.line)))?;
        schema
            .class_names()
            .iter()
            .position(|c| c == raw)
            .ok_or_else(|| {
                Error::Schema(format!(
                    "line {}: label `{raw}` not in {:?}",
                    self.line,
                    schema.class_names()
                ))
            })
    }
}

pub fn parse_csv(path: impl AsRef<Path>, schema: &MetadataSchema) -> Result<Vec<MetadataRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv_reader(file, schema)
}

/// Parses RFC-4180 CSV whose header contains every schema column (any order;
/// extra columns are ignored). Labels are checked against the vocabulary and
/// sample ids must be present and unique.
pub fn parse_csv_reader<R: Read>(
    reader: R,
    schema: &MetadataSchema,
) -> Result<Vec<MetadataRecord>> {
    let rows = read_rows(reader, schema, |_| true)?;
    let mut records = Vec::with_capacity(rows.len());
    let mut seen = std::collections::HashSet::new();
    for record in rows {
        let line = record.line;
        record.label_index(schema)?;
        let id = record
            .get(&schema.sample_id_column)
            .ok_or_else(|| Error::Parse {
                line,
                message: format!("missing sample id `{}`", schema.sample_id_column),
            })?;
        if !seen.insert(id.to_string()) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate sample id `{id}`"),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Parses a CSV holding exactly one record to classify. Every feature column
/// must be in the header; identifier and label columns are optional.
pub fn parse_record_reader<R: Read>(reader: R, schema: &MetadataSchema) -> Result<MetadataRecord> {
    let is_feature = |c: &ColumnSpec| {
        matches!(
            c.kind,
            ColumnKind::Categorical { .. } | ColumnKind::Numeric { .. }
        )
    };
    let mut rows = read_rows(reader, schema, is_feature)?;
    if rows.len() != 1 {
        return Err(Error::Contract(format!(
            "expected exactly one metadata row, found {}",
            rows.len()
        )));
    }
    Ok(rows.remove(0))
}

/// Reads every row; columns for which `required` holds must be present in the
/// header, the rest are recorded as missing when absent.
fn read_rows<R: Read>(
    reader: R,
    schema: &MetadataSchema,
    required: impl Fn(&ColumnSpec) -> bool,
) -> Result<Vec<MetadataRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut positions = Vec::with_capacity(schema.columns.len());
    for col in &schema.columns {
        let idx = header.iter().position(|h| h.trim() == col.name);
        if idx.is_none() && required(col) {
            return Err(Error::Schema(format!("missing column `{}`", col.name)));
        }
        positions.push(idx);
    }

    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let mut values = BTreeMap::new();
        for (col, idx) in schema.columns.iter().zip(&positions) {
            let value = match idx {
                Some(idx) => {
                    let raw = row.get(*idx).ok_or_else(|| Error::Parse {
                        line,
                        message: format!("row has no field for `{}`", col.name),
                    })?;
                    (!schema.is_missing(raw)).then(|| raw.to_string())
                }
                None => None,
            };
            values.insert(col.name.clone(), value);
        }
        records.push(MetadataRecord { values, line });
    }
    Ok(records)
}

/// Category index of a present value, or `None` if missing (or unknown and the
/// schema treats unknowns as missing).
pub(crate) fn category_index(
    schema: &MetadataSchema,
    record: &MetadataRecord,
    column: &str,
) -> Result<Option<usize>> {
    let Some(raw) = record.get(column) else {
        return Ok(None);
    };
    let Some(ColumnKind::Categorical { vocab }) = schema.column(column).map(|c| &c.kind) else {
        return Err(Error::Schema(format!("`{column}` is not categorical")));
    };
    match vocab.iter().position(|v| v == raw) {
        Some(i) => Ok(Some(i)),
        None if schema.unknown_category_as_missing => Ok(None),
        None => Err(Error::Schema(format!(
            "line {}: `{raw}` not in vocabulary of `{column}`",
            record.line
        ))),
    }
}
