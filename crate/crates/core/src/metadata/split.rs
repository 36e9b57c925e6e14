use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::parse::MetadataRecord;
use super::schema::MetadataSchema;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Partition::Train),
            "val" | "valid" | "validation" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            other => Err(Error::Config(format!("unknown partition `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    pub seed: u64,
    pub group_by_patient: bool,
    pub split_file: Option<PathBuf>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: [0.8, 0.1, 0.1],
            seed: 0,
            group_by_patient: true,
            split_file: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignments: BTreeMap<String, Partition>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

impl SplitAssignment {
    pub fn get(&self, sample_id: &str) -> Option<Partition> {
        self.assignments.get(sample_id).copied()
    }

    pub fn count(&self, part: Partition) -> usize {
        self.assignments.values().filter(|&&p| p == part).count()
    }

    /// Indices into `records` belonging to `part`, in record order.
    pub fn indices(
        &self,
        records: &[MetadataRecord],
        schema: &MetadataSchema,
        part: Partition,
    ) -> Vec<usize> {
        records
            .iter()
            .enumerate()
            .filter(|(_, r)| self.get(r.sample_id(schema)) == Some(part))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Deterministic train/val/test assignment. With a split file the file is
/// authoritative; otherwise groups (patients, or single samples) are shuffled
/// with the seed and each is given to the partition furthest below its
/// target size.
pub fn split(
    records: &[MetadataRecord],
    schema: &MetadataSchema,
    cfg: &SplitConfig,
) -> Result<SplitAssignment> {
    let sum: f64 = cfg.ratios.iter().sum();
    if cfg.ratios.iter().any(|&r| r.is_nan() || r <= 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "split ratios {:?} must be positive and sum to 1",
            cfg.ratios
        )));
    }
    if let Some(path) = &cfg.split_file {
        let assignments = read_split_file(path, records, schema)?;
        return Ok(SplitAssignment {
            assignments,
            seed: cfg.seed,
            ratios: cfg.ratios,
        });
    }

    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in records {
        let key = if cfg.group_by_patient {
            r.group_key(schema)
        } else {
            r.sample_id(schema)
        };
        groups.entry(key).or_default().push(r.sample_id(schema));
    }
    let mut groups: Vec<Vec<&str>> = groups.into_values().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));

    let total = records.len() as f64;
    let mut counts = [0usize; 3];
    let mut assignments = BTreeMap::new();
    for members in groups {
        let mut best = 0;
        let mut best_deficit = f64::NEG_INFINITY;
        for (p, &ratio) in cfg.ratios.iter().enumerate() {
            let deficit = ratio * total - counts[p] as f64;
            if deficit > best_deficit + 1e-9 {
                best = p;
                best_deficit = deficit;
            }
        }
        counts[best] += members.len();
        for id in members {
            assignments.insert(id.to_string(), Partition::ALL[best]);
        }
    }
    Ok(SplitAssignment {
        assignments,
        seed: cfg.seed,
        ratios: cfg.ratios,
    })
}

/// Reads `sample_id,partition` rows. Every record must be listed and every
/// listed id must exist.
pub fn read_split_file(
    path: impl AsRef<Path>,
    records: &[MetadataRecord],
    schema: &MetadataSchema,
) -> Result<BTreeMap<String, Partition>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let known: HashSet<&str> = records.iter().map(|r| r.sample_id(schema)).collect();
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let (Some(id), Some(part)) = (row.get(0), row.get(1)) else {
            return Err(Error::Parse {
                line,
                message: "expected `sample_id,partition`".into(),
            });
        };
        let part: Partition = part.parse().map_err(|e: Error| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if !known.contains(id) {
            return Err(Error::Schema(format!(
                "{}:{line}: unknown sample id `{id}`",
                path.display()
            )));
        }
        out.insert(id.to_string(), part);
    }
    if let Some(missing) = known.iter().find(|id| !out.contains_key(**id)) {
        return Err(Error::Schema(format!(
            "{}: sample `{missing}` has no partition",
            path.display()
        )));
    }
    Ok(out)
}

pub fn write_split_file(path: impl AsRef<Path>, split: &SplitAssignment) -> Result<()> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record(["sample_id", "partition"]).map_err(to_err)?;
    for (id, part) in &split.assignments {
        w.write_record([id.as_str(), part.as_str()])
            .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
