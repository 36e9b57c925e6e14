use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::{load_image, preprocess, Image, PreprocessConfig};
use crate::metadata::{
    encode, impute, EncodedMeta, ImputeMode, Imputer, MetadataRecord, MetadataSchema, Partition,
    SplitAssignment,
};

/// One training or evaluation example held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: usize,
    /// Imputed metadata encoding.
    pub meta: Vec<f32>,
    /// Preprocessed image at model input size.
    pub image: Image,
    /// File the image was read from; needed by the file SR method.
    pub source: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn meta_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.meta.len())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }
}

/// A dataset split into partitions, plus the imputer fitted on `train`.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub imputer: Imputer,
}

impl PreparedData {
    pub fn partition(&self, part: Partition) -> &Dataset {
        match part {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }
}

/// Encodes every record, fits the imputer on the training partition, loads
/// each record's image from `image_dir` (optionally preprocessing it) and
/// groups the samples by partition in record order.
pub fn prepare_data(
    records: &[MetadataRecord],
    schema: &MetadataSchema,
    split: &SplitAssignment,
    image_dir: &Path,
    impute_mode: &ImputeMode,
    preprocess_cfg: Option<&PreprocessConfig>,
    input_size: usize,
) -> Result<PreparedData> {
    let encoded: Vec<EncodedMeta> = records
        .iter()
        .map(|r| encode(r, schema))
        .collect::<Result<_>>()?;
    let parts: Vec<Partition> = records
        .iter()
        .map(|r| {
            split.get(r.sample_id(schema)).ok_or_else(|| {
                Error::Schema(format!("sample `{}` has no partition", r.sample_id(schema)))
            })
        })
        .collect::<Result<_>>()?;
    let train_idx: Vec<usize> = (0..records.len())
        .filter(|&i| parts[i] == Partition::Train)
        .collect();
    let (_, imputer) = impute(&encoded, &train_idx, schema, impute_mode)?;

    let select = |part: Partition| -> Vec<&MetadataRecord> {
        records
            .iter()
            .zip(&parts)
            .filter(|(_, &p)| p == part)
            .map(|(r, _)| r)
            .collect()
    };
    let build = |part| {
        build_dataset(
            &select(part),
            schema,
            &imputer,
            image_dir,
            preprocess_cfg,
            input_size,
        )
    };
    Ok(PreparedData {
        train: build(Partition::Train)?,
        val: build(Partition::Val)?,
        test: build(Partition::Test)?,
        imputer,
    })
}

/// Encodes and imputes `records` with an already fitted imputer and loads
/// their images.
pub fn build_dataset(
    records: &[&MetadataRecord],
    schema: &MetadataSchema,
    imputer: &Imputer,
    image_dir: &Path,
    preprocess_cfg: Option<&PreprocessConfig>,
    input_size: usize,
) -> Result<Dataset> {
    let samples = records
        .iter()
        .map(|record| {
            let meta = imputer.apply(&encode(record, schema)?)?;
            let path = image_dir.join(record.image_name(schema));
            Ok(Sample {
                id: record.sample_id(schema).to_string(),
                label: record.label_index(schema)?,
                meta: meta.values,
                image: load_sample_image(&path, preprocess_cfg, input_size)?,
                source: Some(path),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        samples,
        class_names: schema.class_names().to_vec(),
    })
}

/// Loads one image, applying `preprocess_cfg` when given, and checks that it
/// has the model's input extent.
pub fn load_sample_image(
    path: &Path,
    preprocess_cfg: Option<&PreprocessConfig>,
    input_size: usize,
) -> Result<Image> {
    let mut image = load_image(path)?;
    if let Some(cfg) = preprocess_cfg {
        image = preprocess(&image, cfg)?;
    }
    if (image.height(), image.width()) != (input_size, input_size) {
        return Err(Error::shape(format!(
            "{} is {}×{}, model expects {input_size}×{input_size} (run preprocess with size {input_size})",
            path.display(),
            image.height(),
            image.width()
        )));
    }
    Ok(image)
}
