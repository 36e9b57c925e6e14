//! Seeded synthetic multimodal dataset.
//!
//! Class `c` is split as `c = t·P + p`: the image shows pattern `p = c mod P`
//! and the `token` metadata column carries `t = c div P`. Pattern color
//! depends on `p` only, so neither modality determines the class on its own
//! when `P < n_classes`. Every pattern is centered and symmetric under both
//! flips, so flip augmentation preserves it.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{load_image, save_image, Image};
use crate::metadata::{parse_csv, ColumnKind, ColumnSpec, MetadataSchema};

const DEFAULT_NAMES: [&str; 6] = ["ACK", "BCC", "MEL", "NEV", "SCC", "SEK"];
const BACKGROUND: [f32; 3] = [0.78, 0.60, 0.50];
const PATTERN_COLORS: [[f32; 3]; 6] = [
    [0.30, 0.15, 0.10],
    [0.55, 0.25, 0.35],
    [0.20, 0.30, 0.45],
    [0.45, 0.40, 0.10],
    [0.10, 0.45, 0.25],
    [0.60, 0.45, 0.40],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Square,
    Cross,
    Frame,
    HorizontalBar,
    VerticalBar,
    Dot,
}

impl Shape {
    pub const ALL: [Shape; 6] = [
        Shape::Square,
        Shape::Cross,
        Shape::Frame,
        Shape::HorizontalBar,
        Shape::VerticalBar,
        Shape::Dot,
    ];

    /// Whether pixel `(y, x)` of an `s×s` image lies on the shape.
    fn covers(self, y: usize, x: usize, s: usize) -> bool {
        // distances from the center measured in doubled units so both odd
        // and even extents stay exactly symmetric
        let dy = (2 * y + 1).abs_diff(s) as f32 / s as f32;
        let dx = (2 * x + 1).abs_diff(s) as f32 / s as f32;
        match self {
            Shape::Square => dy <= 0.5 && dx <= 0.5,
            Shape::Cross => (dy <= 0.15 && dx <= 0.65) || (dx <= 0.15 && dy <= 0.65),
            Shape::Frame => dy.max(dx) <= 0.65 && dy.max(dx) >= 0.4,
            Shape::HorizontalBar => dy <= 0.2 && dx <= 0.7,
            Shape::VerticalBar => dx <= 0.2 && dy <= 0.7,
            Shape::Dot => dy * dy + dx * dx <= 0.3 * 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_classes: usize,
    /// Number of distinct image patterns `P`.
    pub patterns: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    /// Pixel noise standard deviation.
    pub noise: f32,
    /// Strength of the pattern against the background, in `[0, 1]`.
    pub intensity: f32,
    /// Probability that a distractor field is left empty.
    pub missing_rate: f64,
    /// Probability that the token is replaced by a random one, weakening the
    /// metadata's share of the label information.
    pub token_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_classes: 6,
            patterns: 3,
            samples_per_class: 60,
            image_size: 64,
            noise: 0.05,
            intensity: 1.0,
            missing_rate: 0.1,
            token_noise: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.patterns == 0 || self.patterns > Shape::ALL.len() {
            return Err(Error::Config(format!(
                "need n_classes ≥ 2 and 1 ≤ patterns ≤ {}",
                Shape::ALL.len()
            )));
        }
        if self.patterns > self.n_classes || self.samples_per_class == 0 || self.image_size < 4 {
            return Err(Error::Config(
                "patterns must not exceed n_classes; samples_per_class ≥ 1; image_size ≥ 4".into(),
            ));
        }
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(self.noise.is_finite() && self.noise >= 0.0)
            || !(0.0..=1.0).contains(&self.intensity)
            || !prob(self.missing_rate)
            || !prob(self.token_noise)
        {
            return Err(Error::Config(
                "noise ≥ 0; intensity, missing_rate, token_noise in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn n_tokens(&self) -> usize {
        self.n_classes.div_ceil(self.patterns)
    }

    pub fn class_names(&self) -> Vec<String> {
        if self.n_classes == DEFAULT_NAMES.len() {
            DEFAULT_NAMES.iter().map(|s| s.to_string()).collect()
        } else {
            (0..self.n_classes).map(|c| format!("C{c}")).collect()
        }
    }

    pub fn pattern_of(&self, class: usize) -> usize {
        class % self.patterns
    }

    pub fn token_of(&self, class: usize) -> usize {
        class / self.patterns
    }

    /// Emitted schema: three categorical columns (one informative) and one
    /// numeric distractor.
    pub fn schema(&self) -> MetadataSchema {
        let cat = |name: &str, vocab: Vec<String>| ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Categorical { vocab },
        };
        let ident = |name: &str| ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Identifier,
        };
        MetadataSchema {
            columns: vec![
                ident("patient_id"),
                ident("img_id"),
                cat(
                    "token",
                    (0..self.n_tokens()).map(|t| format!("T{t}")).collect(),
                ),
                cat("site", vec!["ARM".into(), "BACK".into(), "FACE".into()]),
                cat("itch", vec!["True".into(), "False".into()]),
                ColumnSpec {
                    name: "age".into(),
                    kind: ColumnKind::Numeric {
                        bounds: [0.0, 100.0],
                    },
                },
                ColumnSpec {
                    name: "diagnostic".into(),
                    kind: ColumnKind::Label {
                        vocab: self.class_names(),
                    },
                },
            ],
            missing_markers: vec!["UNK".into()],
            sample_id_column: "img_id".into(),
            image_column: Some("img_id".into()),
            patient_column: Some("patient_id".into()),
            unknown_category_as_missing: false,
        }
    }
}

/// Noise-free rendering of pattern `p`.
pub fn template(cfg: &SynthConfig, pattern: usize) -> Image {
    let s = cfg.image_size;
    let shape = Shape::ALL[pattern];
    let color = PATTERN_COLORS[pattern];
    let mut data = Vec::with_capacity(s * s * 3);
    for y in 0..s {
        for x in 0..s {
            let on = shape.covers(y, x, s);
            for c in 0..3 {
                let v = if on {
                    BACKGROUND[c] + cfg.intensity * (color[c] - BACKGROUND[c])
                } else {
                    BACKGROUND[c]
                };
                data.push(v);
            }
        }
    }
    Image::from_rgb(s, s, data).expect("consistent extents")
}

/// One generated example.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub id: String,
    pub patient: String,
    pub label: usize,
    pub token: usize,
    pub image: Image,
    /// Random, label-independent site, itch and age fields (`None` = missing).
    pub distractors: [Option<String>; 3],
}

/// Deterministic in-memory generation. Sample `i` draws from its own
/// ChaCha8 stream.
pub fn generate_samples(cfg: &SynthConfig) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    let templates: Vec<Image> = (0..cfg.patterns).map(|p| template(cfg, p)).collect();
    let normal = Normal::new(0.0f32, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let total = cfg.n_classes * cfg.samples_per_class;
    let mut out = Vec::with_capacity(total);
    for i in 0..total {
        let label = i % cfg.n_classes;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let mut image = templates[cfg.pattern_of(label)].clone();
        if cfg.noise > 0.0 {
            image
                .data_mut()
                .iter_mut()
                .for_each(|v| *v += normal.sample(&mut rng));
            image.clip();
        }
        let token = if rng.random_bool(cfg.token_noise) {
            rng.random_range(0..cfg.n_tokens())
        } else {
            cfg.token_of(label)
        };
        let site = ["ARM", "BACK", "FACE"][rng.random_range(0..3)].to_string();
        let itch = if rng.random_bool(0.5) {
            "True"
        } else {
            "False"
        }
        .to_string();
        let age = rng.random_range(20..80u32).to_string();
        let mut maybe = |value: String| (!rng.random_bool(cfg.missing_rate)).then_some(value);
        let distractors = [maybe(site), maybe(itch), maybe(age)];
        out.push(SynthSample {
            id: format!("SYN_{i:05}.png"),
            patient: format!("PAT_{:04}", i / 2),
            label,
            token,
            image,
            distractors,
        });
    }
    Ok(out)
}

/// Writes `images/`, `metadata.csv`, `schema.json` and `synth_config.json`
/// under `out`.
pub fn generate(cfg: &SynthConfig, out: &Path) -> Result<Vec<SynthSample>> {
    let samples = generate_samples(cfg)?;
    let images = out.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let schema = cfg.schema();
    let names = cfg.class_names();
    let csv_path = out.join("metadata.csv");
    let to_err = |e: csv::Error| Error::Format(format!("{}: {e}", csv_path.display()));
    let mut w = csv::Writer::from_path(&csv_path).map_err(to_err)?;
    w.write_record(schema.columns.iter().map(|c| c.name.as_str()))
        .map_err(to_err)?;
    for s in &samples {
        save_image(&s.image, images.join(&s.id))?;
        let [site, itch, age] = &s.distractors;
        let field = |v: &Option<String>| v.clone().unwrap_or_default();
        w.write_record([
            s.patient.clone(),
            s.id.clone(),
            format!("T{}", s.token),
            field(site),
            field(itch),
            field(age),
            names[s.label].clone(),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    schema.save(out.join("schema.json"))?;
    let cfg_path = out.join("synth_config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(cfg)? + "\n")
        .map_err(|e| Error::io(&cfg_path, e))?;
    Ok(samples)
}

/// Index of the template nearest to `image` in squared error.
pub fn nearest_pattern(cfg: &SynthConfig, templates: &[Image], image: &Image) -> usize {
    let mut best = (0, f64::INFINITY);
    for (p, t) in templates.iter().enumerate() {
        let d: f64 = t
            .data()
            .iter()
            .zip(image.data())
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum();
        if d < best.1 {
            best = (p, d);
        }
    }
    debug_assert!(best.0 < cfg.patterns);
    best.0
}

/// Brute-force classifier: nearest template for the pattern, token lookup
/// for the rest. `tokens[i] = None` gives the image-only guess with token 0.
pub fn oracle_classify(
    cfg: &SynthConfig,
    images: &[Image],
    tokens: &[Option<usize>],
) -> Vec<usize> {
    let templates: Vec<Image> = (0..cfg.patterns).map(|p| template(cfg, p)).collect();
    images
        .iter()
        .zip(tokens)
        .map(|(img, t)| {
            let p = nearest_pattern(cfg, &templates, img);
            (t.unwrap_or(0) * cfg.patterns + p).min(cfg.n_classes - 1)
        })
        .collect()
}

/// Runs the oracle over a generated directory, returning `(truth, oracle)`.
pub fn oracle_classify_dir(dir: &Path) -> Result<(Vec<usize>, Vec<usize>)> {
    let cfg_path = dir.join("synth_config.json");
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let cfg: SynthConfig = serde_json::from_str(&text)?;
    let schema = MetadataSchema::load(dir.join("schema.json"))?;
    let records = parse_csv(dir.join("metadata.csv"), &schema)?;
    let mut images = Vec::with_capacity(records.len());
    let mut tokens = Vec::with_capacity(records.len());
    let mut truth = Vec::with_capacity(records.len());
    for r in &records {
        images.push(load_image(dir.join("images").join(r.image_name(&schema)))?);
        tokens.push(
            r.get("token")
                .and_then(|t| t.strip_prefix('T'))
                .and_then(|t| t.parse().ok()),
        );
        truth.push(r.label_index(&schema)?);
    }
    Ok((truth, oracle_classify(&cfg, &images, &tokens)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{confusion, metrics};

    fn small(noise: f32) -> SynthConfig {
        SynthConfig {
            samples_per_class: 20,
            image_size: 16,
            noise,
            ..Default::default()
        }
    }

    fn oracle_bacc(cfg: &SynthConfig, with_tokens: bool) -> f64 {
        let s = generate_samples(cfg).unwrap();
        let images: Vec<Image> = s.iter().map(|x| x.image.clone()).collect();
        let tokens: Vec<Option<usize>> = s.iter().map(|x| with_tokens.then_some(x.token)).collect();
        let pred = oracle_classify(cfg, &images, &tokens);
        let labels: Vec<usize> = s.iter().map(|x| x.label).collect();
        metrics(&confusion(&labels, &pred, cfg.n_classes).unwrap()).bacc
    }

    #[test]
    fn patterns_are_flip_symmetric_and_distinct() {
        for size in [15, 16, 32] {
            let cfg = SynthConfig {
                image_size: size,
                patterns: 6,
                ..Default::default()
            };
            let ts: Vec<Image> = (0..6).map(|p| template(&cfg, p)).collect();
            for t in &ts {
                for y in 0..size {
                    for x in 0..size {
                        let v = t.get(y, x, 0);
                        assert_eq!(v, t.get(y, size - 1 - x, 0));
                        assert_eq!(v, t.get(size - 1 - y, x, 0));
                    }
                }
            }
            for a in 0..6 {
                for b in a + 1..6 {
                    assert_ne!(ts[a], ts[b]);
                }
            }
        }
    }

    #[test]
    fn noiseless_oracle_is_exact_and_image_alone_is_capped() {
        let cfg = small(0.0);
        assert_eq!(oracle_bacc(&cfg, true), 1.0);
        assert!(oracle_bacc(&cfg, false) <= 0.5 + 1e-12);
    }

    #[test]
    fn oracle_degrades_with_noise() {
        let grid = [0.0, 0.6, 1.5, 4.0];
        let accs: Vec<f64> = grid.iter().map(|&s| oracle_bacc(&small(s), true)).collect();
        assert!(accs.windows(2).all(|w| w[1] <= w[0]), "{accs:?}");
        assert!(accs[3] < accs[0]);
    }

    #[test]
    fn deterministic_bytes_and_round_trip() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            samples_per_class: 3,
            image_size: 8,
            ..Default::default()
        };
        generate(&cfg, a.path()).unwrap();
        generate(&cfg, b.path()).unwrap();
        for f in ["metadata.csv", "schema.json", "images/SYN_00004.png"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap()
            );
        }
        let schema = MetadataSchema::load(a.path().join("schema.json")).unwrap();
        let recs = parse_csv(a.path().join("metadata.csv"), &schema).unwrap();
        assert_eq!(recs.len(), 18);
        let (truth, pred) = oracle_classify_dir(a.path()).unwrap();
        assert_eq!(truth, pred);
    }
}
