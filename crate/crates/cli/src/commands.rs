use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use skinaux_core::evaluation::{
    evaluate, write_confusion_csv, write_embeddings_csv, write_report_json, write_roc_csv,
};
use skinaux_core::imaging::{
    batch_tensor, load_image, preprocess, save_image, sr_sibling_path, PreprocessConfig,
};
use skinaux_core::metadata::{
    encode, parse_csv, parse_record_reader, split, write_split_file, MetadataSchema, Partition,
};
use skinaux_core::model::{build_model, predict, ModelConfig};
use skinaux_core::synth::generate;
use skinaux_core::tensor::Tensor;
use skinaux_core::training::{
    build_dataset, fit, load_checkpoint, load_sample_image, prepare_data, save_checkpoint,
    CheckpointMeta,
};
use skinaux_core::Error;

use crate::args::{
    Command, Common, DataArgs, EvaluateArgs, PredictArgs, PreprocessArgs, SynthArgs, TrainArgs,
};
use crate::config::RunConfig;
use crate::CliError;

/// Written by `preprocess` into its output directory; its presence marks a
/// dataset whose images are ready for the model.
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub preprocess: PreprocessConfig,
    /// Output file name to SHA-256 of its bytes.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Option<Self>, CliError> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Some(serde_json::from_str(&text).map_err(Error::from)?))
    }
}

pub fn run(cli: crate::Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess_cmd(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Predict(a) => predict_cmd(a),
    }
}

fn base_config(common: &Common, data: Option<&DataArgs>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::from_file(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.apply_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    if let Some(d) = data {
        let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if v.is_some() {
                slot.clone_from(v);
            }
        };
        set(&mut cfg.data_dir, &d.data_dir);
        set(&mut cfg.metadata, &d.metadata);
        set(&mut cfg.schema, &d.schema);
        set(&mut cfg.split_file, &d.split_file);
    }
    if cfg.split_file.is_some() {
        cfg.split.split_file.clone_from(&cfg.split_file);
    }
    Ok(cfg)
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let mut cfg = base_config(&a.common, None)?;
    if let Some(n) = a.samples_per_class {
        cfg.synth.samples_per_class = n;
    }
    if let Some(s) = a.image_size {
        cfg.synth.image_size = s;
    }
    cfg.synth.validate()?;
    let out = cfg.out_dir()?.to_path_buf();
    cfg.persist()?;
    let samples = generate(&cfg.synth, &out)?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn preprocess_cmd(a: PreprocessArgs) -> Result<(), CliError> {
    let mut cfg = base_config(&a.common, Some(&a.data))?;
    if a.paper_scale {
        cfg.apply_paper_scale();
    }
    if let Some(size) = a.size {
        cfg.preprocess.size = size;
    }
    cfg.preprocess.skip_clahe |= a.skip_clahe;
    cfg.preprocess.skip_color_constancy |= a.skip_color_constancy;
    let out = cfg.out_dir()?.to_path_buf();
    let schema_path = cfg.schema_path()?;
    let metadata_path = cfg.metadata_path()?;
    let image_dir = cfg.image_dir()?;
    if out.join("images") == image_dir {
        return Err(CliError::Usage("--out must differ from --data-dir".into()));
    }
    cfg.persist()?;

    let schema = MetadataSchema::load(&schema_path)?;
    let records = parse_csv(&metadata_path, &schema)?;
    let out_images = out.join("images");
    std::fs::create_dir_all(&out_images).map_err(|e| Error::io(&out_images, e))?;

    let sr_cfg = PreprocessConfig {
        size: cfg.preprocess.size * cfg.model.sr_factor,
        ..cfg.preprocess.clone()
    };
    let mut files = BTreeMap::new();
    let mut failures = Vec::new();
    for record in &records {
        let name = record.image_name(&schema);
        let src = image_dir.join(name);
        let mut jobs = vec![(src.clone(), out_images.join(name), &cfg.preprocess)];
        let sr_src = sr_sibling_path(&src);
        if sr_src.exists() {
            jobs.push((sr_src, sr_sibling_path(&out_images.join(name)), &sr_cfg));
        }
        for (from, to, pcfg) in jobs {
            let result = load_image(&from)
                .and_then(|img| preprocess(&img, pcfg))
                .and_then(|img| save_image(&img, &to));
            match result {
                Ok(()) => {
                    let key = to
                        .strip_prefix(&out)
                        .unwrap_or(&to)
                        .to_string_lossy()
                        .replace('\\', "/");
                    files.insert(key, sha256_file(&to)?);
                }
                Err(e) => failures.push(format!("{}: {e}", from.display())),
            }
        }
    }
    for (from, name) in [
        (&metadata_path, "metadata.csv"),
        (&schema_path, "schema.json"),
    ] {
        let to = out.join(name);
        std::fs::copy(from, &to).map_err(|e| Error::io(&to, e))?;
    }
    let manifest = Manifest {
        preprocess: cfg.preprocess.clone(),
        files,
    };
    let path = out.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    if !failures.is_empty() {
        return Err(Error::Format(format!(
            "{} of {} images failed:\n  {}",
            failures.len(),
            records.len(),
            failures.join("\n  ")
        ))
        .into());
    }
    println!(
        "preprocessed {} images into {}",
        manifest.files.len(),
        out.display()
    );
    Ok(())
}

/// Preprocessing to apply when loading images from `data_dir`, and the
/// config that produced (or will produce) the model inputs.
fn image_pipeline(
    cfg: &RunConfig,
) -> Result<(Option<PreprocessConfig>, PreprocessConfig), CliError> {
    let size = cfg.model.input_size;
    match Manifest::load(cfg.data_dir()?)? {
        Some(m) if m.preprocess.size != size => Err(Error::Config(format!(
            "images were preprocessed at {0}×{0}, model expects {size}×{size}",
            m.preprocess.size
        ))
        .into()),
        Some(m) => Ok((None, m.preprocess)),
        None => {
            let p = PreprocessConfig {
                size,
                ..cfg.preprocess.clone()
            };
            Ok((Some(p.clone()), p))
        }
    }
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = base_config(&a.common, Some(&a.data))?;
    if a.paper_scale {
        cfg.apply_paper_scale();
    }
    if let Some(v) = &a.sr_method {
        cfg.train.sr_method = v.parse()?;
    }
    if let Some(v) = &a.fusion {
        cfg.model.fusion_mode = v.parse()?;
    }
    if let Some(v) = &a.ce_form {
        cfg.loss.ce_form = v.parse()?;
    }
    if let Some(v) = a.alpha {
        cfg.loss.alpha = v;
    }
    if let Some(v) = a.beta {
        cfg.loss.beta = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.train.base_lr = v;
    }
    if let Some(v) = a.input_size {
        cfg.model.input_size = v;
    } else if !a.paper_scale && cfg.model.input_size == ModelConfig::default().input_size {
        // an untouched default follows the preprocessed images
        if let Some(m) = Manifest::load(cfg.data_dir()?)? {
            cfg.model.input_size = m.preprocess.size;
        }
    }
    let out = cfg.out_dir()?.to_path_buf();
    let schema = MetadataSchema::load(cfg.schema_path()?)?;
    cfg.model.meta_input_dim = schema.encoded_len();
    cfg.model.n_classes = schema.class_names().len();
    cfg.model.validate()?;
    cfg.train.validate()?;
    cfg.loss.validate()?;
    cfg.persist()?;

    let records = parse_csv(cfg.metadata_path()?, &schema)?;
    let assignment = split(&records, &schema, &cfg.split)?;
    write_split_file(out.join("split.csv"), &assignment)?;
    let (on_load, used) = image_pipeline(&cfg)?;
    let data = prepare_data(
        &records,
        &schema,
        &assignment,
        &cfg.image_dir()?,
        &cfg.impute,
        on_load.as_ref(),
        cfg.model.input_size,
    )?;
    println!(
        "train {} / val {} / test {} samples",
        data.train.len(),
        data.val.len(),
        data.test.len()
    );

    let mut meta = CheckpointMeta {
        class_names: schema.class_names().to_vec(),
        schema: Some(schema.clone()),
        imputer: Some(data.imputer.clone()),
        preprocess: Some(used),
        ..Default::default()
    };
    let history_path = out.join("history.jsonl");
    let mut history = String::new();
    let bundle = build_model(&cfg.model)?;
    let result = fit(
        bundle,
        &data.train,
        &data.val,
        &cfg.train,
        &cfg.loss,
        &mut |record, model, improved| {
            history.push_str(&serde_json::to_string(record)?);
            history.push('\n');
            std::fs::write(&history_path, &history).map_err(|e| Error::io(&history_path, e))?;
            meta.epoch = Some(record.epoch);
            meta.val_bacc = Some(record.val_bacc);
            save_checkpoint(out.join("last.ckpt"), model, &meta)?;
            if improved {
                save_checkpoint(out.join("best.ckpt"), model, &meta)?;
            }
            println!(
                "epoch {:>3}  lr {:.0e}  loss {:.4} (wce {:.4}, sr {:.4})  val bacc {:.4}{}",
                record.epoch,
                record.lr,
                record.loss_final,
                record.loss_wce,
                record.loss_sr,
                record.val_bacc,
                if improved { "  *" } else { "" }
            );
            Ok(())
        },
    )?;
    println!(
        "best val bacc {:.4} at epoch {}",
        result.best_val_bacc, result.best_epoch
    );
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<(), CliError> {
    let cfg = base_config(&a.common, Some(&a.data))?;
    let part: Partition = a.partition.parse()?;
    let out = cfg.out_dir()?.to_path_buf();
    let (bundle, meta) = load_checkpoint(&a.checkpoint)?;
    let (Some(schema), Some(imputer)) = (&meta.schema, &meta.imputer) else {
        return Err(Error::Format(format!(
            "{}: checkpoint lacks schema or imputer",
            a.checkpoint.display()
        ))
        .into());
    };
    let mut cfg = cfg;
    cfg.model = bundle.config().clone();
    cfg.persist()?;

    let records = parse_csv(cfg.metadata_path()?, schema)?;
    let assignment = split(&records, schema, &cfg.split)?;
    let selected: Vec<_> = assignment
        .indices(&records, schema, part)
        .into_iter()
        .map(|i| &records[i])
        .collect();
    let on_load = match Manifest::load(cfg.data_dir()?)? {
        Some(_) => None,
        None => meta.preprocess.clone(),
    };
    let data = build_dataset(
        &selected,
        schema,
        imputer,
        &cfg.image_dir()?,
        on_load.as_ref(),
        cfg.model.input_size,
    )?;
    let (report, preds) = evaluate(&bundle, &data, cfg.train.batch_size)?;
    write_report_json(&report, out.join("report.json"))?;
    write_confusion_csv(&report.confusion, out.join("confusion.csv"))?;
    write_roc_csv(&report.roc, out.join("roc.csv"))?;
    write_embeddings_csv(&preds, &data.class_names, out.join("embeddings.csv"))?;
    println!(
        "{} {}: acc {:.4}  bacc {:.4}  auc {:.4}",
        part.as_str(),
        report.n_samples,
        report.acc,
        report.bacc,
        report.macro_auc
    );
    Ok(())
}

#[derive(Serialize)]
struct Prediction<'a> {
    class: &'a str,
    probabilities: BTreeMap<&'a str, f32>,
}

fn predict_cmd(a: PredictArgs) -> Result<(), CliError> {
    let (bundle, meta) = load_checkpoint(&a.checkpoint)?;
    let (Some(schema), Some(imputer)) = (&meta.schema, &meta.imputer) else {
        return Err(Error::Format(format!(
            "{}: checkpoint lacks schema or imputer",
            a.checkpoint.display()
        ))
        .into());
    };
    let file = std::fs::File::open(&a.record).map_err(|e| Error::io(&a.record, e))?;
    let record = parse_record_reader(file, schema)?;
    let m = imputer.apply(&encode(&record, schema)?)?;
    let cfg = bundle.config();
    let pcfg = if a.preprocessed {
        None
    } else {
        meta.preprocess.as_ref()
    };
    let image = load_sample_image(&a.image, pcfg, cfg.input_size)?;
    let x = batch_tensor::<f32>(&[&image])?;
    let m = Tensor::from_vec(&[1, m.values.len()], m.values)?;
    let out = predict(&bundle, &x, &m, false)?;
    let probs = out.probs.data();
    let best = (0..probs.len()).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
    let names = &meta.class_names;
    println!("{}", names[best]);
    for (name, p) in names.iter().zip(probs) {
        println!("  {name:<12} {p:.4}");
    }
    if let Some(out_dir) = &a.out {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let pred = Prediction {
            class: &names[best],
            probabilities: names
                .iter()
                .map(String::as_str)
                .zip(probs.iter().copied())
                .collect(),
        };
        let path = out_dir.join("prediction.json");
        let text = serde_json::to_string_pretty(&pred).map_err(Error::from)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
