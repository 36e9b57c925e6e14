//! Clinical metadata: schema-driven CSV ingestion, fixed-length encoding,
//! missing-value imputation and patient-grouped dataset splits.

mod cache;
mod encode;
mod impute;
mod parse;
mod schema;
mod split;

pub use cache::{read_cache, write_cache, CacheEntry};
pub use encode::{encode, EncodedMeta};
pub use impute::{impute, AutoencoderConfig, ImputeMode, Imputer};
pub use parse::{parse_csv, parse_csv_reader, parse_record_reader, MetadataRecord};
pub use schema::{ColumnKind, ColumnSpec, MetadataSchema, Segment, SegmentKind};
pub use split::{
    read_split_file, split, write_split_file, Partition, SplitAssignment, SplitConfig,
};
