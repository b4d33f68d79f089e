//! Dataset ingestion and preparation.
//!
//! Sources are IDX files (the Fashion-MNIST distribution format), numeric CSV
//! and two synthetic generators. Raw data becomes a [`DatasetBundle`] through
//! [`split_and_normalize`], which fixes the train/validation/test partition
//! and standardizes features with statistics from the training rows only.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::DistributionFamily;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Features below this standard deviation are left unscaled.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Labels {
    Classes(Vec<usize>),
    Real(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(v) => v.len(),
            Labels::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Labels {
        match self {
            Labels::Classes(v) => Labels::Classes(rows.iter().map(|&i| v[i]).collect()),
            Labels::Real(v) => Labels::Real(rows.iter().map(|&i| v[i]).collect()),
        }
    }

    pub fn classes(&self) -> Option<&[usize]> {
        match self {
            Labels::Classes(v) => Some(v),
            Labels::Real(_) => None,
        }
    }

    /// Mean-parameter target matrix: one-hot rows or a single real column.
    pub fn targets(&self, family: DistributionFamily) -> Result<Array2<f64>> {
        match (self, family) {
            (Labels::Classes(v), DistributionFamily::Categorical { classes }) => {
                let mut t = Array2::zeros((v.len(), classes));
                for (i, &c) in v.iter().enumerate() {
                    if c >= classes {
                        return Err(Error::Data(format!(
                            "label {c} out of range for {classes} classes"
                        )));
                    }
                    t[[i, c]] = 1.0;
                }
                Ok(t)
            }
            (Labels::Real(v), DistributionFamily::GaussianUnitVariance) => {
                if v.iter().any(|y| !y.is_finite()) {
                    return Err(Error::Data("non-finite regression target".into()));
                }
                Ok(Array2::from_shape_vec((v.len(), 1), v.clone()).expect("column shape"))
            }
            _ => Err(Error::InvalidConfig(
                "label kind does not match the distribution family".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub features: Array2<f64>,
    pub labels: Labels,
    pub source: String,
}

impl RawDataset {
    pub fn new(features: Array2<f64>, labels: Labels, source: impl Into<String>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Data(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        Ok(RawDataset {
            features,
            labels,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Distribution family implied by the labels.
    pub fn family(&self) -> Result<DistributionFamily> {
        match &self.labels {
            Labels::Classes(v) => {
                let k = v.iter().max().map_or(0, |m| m + 1);
                DistributionFamily::categorical(k.max(2))
            }
            Labels::Real(_) => Ok(DistributionFamily::GaussianUnitVariance),
        }
    }

    pub fn select(&self, rows: &[usize]) -> RawDataset {
        RawDataset {
            features: self.features.select(Axis(0), rows),
            labels: self.labels.select(rows),
            source: self.source.clone(),
        }
    }
}

/// One partition of a bundle. `rows` indexes the raw dataset it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub features: Array2<f64>,
    pub labels: Labels,
    pub targets: Array2<f64>,
    pub rows: Vec<usize>,
}

impl Split {
    fn build(
        raw: &RawDataset,
        rows: Vec<usize>,
        family: DistributionFamily,
        norm: &Normalization,
    ) -> Result<Split> {
        let mut features = raw.features.select(Axis(0), &rows);
        norm.apply(&mut features);
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature after normalization".into()));
        }
        let labels = raw.labels.select(&rows);
        let targets = labels.targets(family)?;
        Ok(Split {
            features,
            labels,
            targets,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Resampled copy, rows drawn by index into this split.
    pub fn resample(&self, picks: &[usize]) -> Split {
        Split {
            features: self.features.select(Axis(0), picks),
            labels: self.labels.select(picks),
            targets: self.targets.select(Axis(0), picks),
            rows: picks.iter().map(|&i| self.rows[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    /// Per-feature mean and population standard deviation.
    pub fn fit(features: &Array2<f64>) -> Normalization {
        let d = features.ncols();
        if features.nrows() == 0 {
            return Normalization {
                mean: vec![0.0; d],
                std: vec![1.0; d],
            };
        }
        let mean = features.mean_axis(Axis(0)).expect("non-empty").to_vec();
        let std = features.std_axis(Axis(0), 0.0).to_vec();
        Normalization { mean, std }
    }

    pub fn apply(&self, features: &mut Array2<f64>) {
        for mut row in features.rows_mut() {
            for ((x, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x -= m;
                if s >= STD_FLOOR {
                    *x /= s;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub split_seed: u64,
    pub validation_count: usize,
    pub test_count: usize,
    pub predefined_test: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub family: DistributionFamily,
    pub train: Split,
    pub validation: Split,
    pub test: Split,
    pub normalization: Normalization,
    pub provenance: Provenance,
}

impl DatasetBundle {
    pub fn input_dim(&self) -> usize {
        self.train.features.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub validation_count: usize,
    /// Rows held out for testing when no predefined test set is given.
    pub test_count: usize,
    pub seed: u64,
}

/// Shuffles `raw` with `cfg.seed`, carves off validation (and, without a
/// predefined `test`, test) rows, and standardizes every split with the
/// statistics of the remaining training rows. Test rows from a predefined
/// set have `rows` indexing that set.
pub fn split_and_normalize(
    raw: &RawDataset,
    test: Option<&RawDataset>,
    family: DistributionFamily,
    cfg: &SplitConfig,
) -> Result<DatasetBundle> {
    let n = raw.len();
    let held = cfg.validation_count + if test.is_some() { 0 } else { cfg.test_count };
    if held >= n {
        return Err(Error::InvalidConfig(format!(
            "holding out {held} of {n} rows leaves no training data"
        )));
    }
    if let Some(t) = test {
        if t.features.ncols() != raw.features.ncols() {
            return Err(Error::Data("test features differ in width from training".into()));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let validation_rows = order[..cfg.validation_count].to_vec();
    let (test_rows, train_rows) = if test.is_some() {
        ((0..test.map_or(0, |t| t.len())).collect(), order[cfg.validation_count..].to_vec())
    } else {
        (
            order[cfg.validation_count..held].to_vec(),
            order[held..].to_vec(),
        )
    };
    let normalization = Normalization::fit(&raw.features.select(Axis(0), &train_rows));
    let train = Split::build(raw, train_rows, family, &normalization)?;
    let validation = Split::build(raw, validation_rows, family, &normalization)?;
    let test_split = Split::build(test.unwrap_or(raw), test_rows, family, &normalization)?;
    Ok(DatasetBundle {
        family,
        train,
        validation,
        test: test_split,
        normalization,
        provenance: Provenance {
            source: raw.source.clone(),
            split_seed: cfg.seed,
            validation_count: cfg.validation_count,
            test_count: if test.is_some() { 0 } else { cfg.test_count },
            predefined_test: test.is_some(),
        },
    })
}

// ---------------------------------------------------------------------------
// IDX

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated {
            needed: offset + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = read_be_u32(bytes, 0)?;
    if found != expected {
        return Err(Error::WrongMagic { expected, found });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, dims: &[u32]) -> Result<&'a [u8]> {
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .and_then(|c| c.checked_add(header))
        .ok_or_else(|| Error::DimensionOverflow(dims.to_vec()))?;
    if bytes.len() < count {
        return Err(Error::Truncated {
            needed: count,
            found: bytes.len(),
        });
    }
    Ok(&bytes[header..count])
}

/// Parses an IDX image tensor (items × rows × cols of u8) into an
/// items × (rows·cols) matrix scaled to [0, 1].
pub fn parse_idx_images(bytes: &[u8]) -> Result<Array2<f64>> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let dims = [read_be_u32(bytes, 4)?, read_be_u32(bytes, 8)?, read_be_u32(bytes, 12)?];
    let data = payload(bytes, 16, &dims)?;
    let width = (dims[1] as usize) * (dims[2] as usize);
    let pixels = data.iter().map(|&b| b as f64 / 255.0).collect();
    Array2::from_shape_vec((dims[0] as usize, width), pixels)
        .map_err(|e| Error::Data(format!("IDX image shape: {e}")))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let n = read_be_u32(bytes, 4)?;
    Ok(payload(bytes, 8, &[n])?.iter().map(|&b| b as usize).collect())
}

pub fn encode_idx_images(images: &[u8], items: u32, rows: u32, cols: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len());
    for v in [IDX_IMAGES_MAGIC, items, rows, cols] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(images);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<RawDataset> {
    let features = parse_idx_images(&std::fs::read(images_path)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?)?;
    RawDataset::new(
        features,
        Labels::Classes(labels),
        format!("idx:{}", images_path.display()),
    )
}

// ---------------------------------------------------------------------------
// CSV

/// Numeric CSV with a header row. Every column other than `label_column` is
/// a feature. Class labels must be non-negative integers.
pub fn load_csv(path: &Path, label_column: &str, categorical: bool) -> Result<RawDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::InvalidConfig(format!("missing label column `{label_column}`")))?;
    let width = headers.len();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("row {}: {e}", row + 1)))?;
        if record.len() != width {
            return Err(Error::Data(format!(
                "row {} has {} fields, header has {width}",
                row + 1,
                record.len()
            )));
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!("non-numeric cell `{cell}` at row {}, column {col}", row + 1))
            })?;
            if col == label_idx {
                labels.push(v);
            } else {
                features.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::Empty("CSV data rows"));
    }
    let features = Array2::from_shape_vec((labels.len(), width - 1), features)
        .map_err(|e| Error::Data(e.to_string()))?;
    let labels = if categorical {
        let classes = labels
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::Data(format!("class label {v} is not a non-negative integer")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Labels::Classes(classes)
    } else {
        Labels::Real(labels)
    };
    RawDataset::new(features, labels, format!("csv:{}", path.display()))
}

// ---------------------------------------------------------------------------
// Synthetic

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Each class is a mixture of `clusters_per_class` unit-variance Gaussian
    /// clusters whose centres are drawn from N(0, separation²·I). Labels are
    /// balanced round-robin before shuffling.
    GaussianBlobs {
        classes: usize,
        dim: usize,
        separation: f64,
        #[serde(default = "one")]
        clusters_per_class: usize,
    },
    /// y = sin(x) + noise·ε with x ~ U(−π, π).
    NoisySine { noise: f64 },
}

fn one() -> usize {
    1
}

pub fn make_synthetic(kind: &SyntheticKind, n: usize, seed: u64) -> Result<RawDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match *kind {
        SyntheticKind::GaussianBlobs {
            classes,
            dim,
            separation,
            clusters_per_class,
        } => {
            if classes < 2 || dim == 0 || clusters_per_class == 0 {
                return Err(Error::InvalidConfig("degenerate blob specification".into()));
            }
            if !separation.is_finite() || separation < 0.0 {
                return Err(Error::InvalidConfig("separation must be finite and non-negative".into()));
            }
            let centres = Array2::from_shape_simple_fn((classes * clusters_per_class, dim), || {
                separation * rng.sample::<f64, _>(StandardNormal)
            });
            let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
            labels.shuffle(&mut rng);
            let mut features = Array2::zeros((n, dim));
            for (i, &c) in labels.iter().enumerate() {
                let cluster = c * clusters_per_class + rng.gen_range(0..clusters_per_class);
                for j in 0..dim {
                    features[[i, j]] = centres[[cluster, j]] + rng.sample::<f64, _>(StandardNormal);
                }
            }
            RawDataset::new(
                features,
                Labels::Classes(labels),
                format!("synthetic:blobs(K={classes},d={dim},sep={separation},c={clusters_per_class},seed={seed})"),
            )
        }
        SyntheticKind::NoisySine { noise } => {
            let mut xs = Vec::with_capacity(n);
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                let x: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                xs.push(x);
                ys.push(x.sin() + noise * rng.sample::<f64, _>(StandardNormal));
            }
            RawDataset::new(
                Array2::from_shape_vec((n, 1), xs).expect("column"),
                Labels::Real(ys),
                format!("synthetic:sine(noise={noise},seed={seed})"),
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_round_trip_2x2() {
        let pixels = [0u8, 51, 102, 255, 255, 0, 1, 128];
        let bytes = encode_idx_images(&pixels, 2, 2, 2);
        let img = parse_idx_images(&bytes).unwrap();
        assert_eq!(img.dim(), (2, 4));
        for (v, &b) in img.iter().zip(&pixels) {
            assert_eq!(*v, b as f64 / 255.0);
        }
        let labels = parse_idx_labels(&encode_idx_labels(&[3, 7])).unwrap();
        assert_eq!(labels, vec![3, 7]);
    }

    #[test]
    fn idx_errors_are_distinct() {
        let images = encode_idx_images(&[1, 2, 3, 4], 1, 2, 2);
        assert!(matches!(
            parse_idx_labels(&images),
            Err(Error::WrongMagic { expected: IDX_LABELS_MAGIC, found: IDX_IMAGES_MAGIC })
        ));
        assert!(matches!(parse_idx_images(&[]), Err(Error::Truncated { .. })));
        assert!(matches!(
            parse_idx_images(&images[..18]),
            Err(Error::Truncated { needed: 20, found: 18 })
        ));
        let huge = encode_idx_images(&[], u32::MAX, u32::MAX, u32::MAX);
        assert!(matches!(parse_idx_images(&huge), Err(Error::DimensionOverflow(_))));
    }

    #[test]
    fn normalization_uses_training_rows_only() {
        let raw = make_synthetic(
            &SyntheticKind::GaussianBlobs { classes: 3, dim: 4, separation: 3.0, clusters_per_class: 1 },
            300,
            1,
        )
        .unwrap();
        let fam = raw.family().unwrap();
        let b = split_and_normalize(&raw, None, fam, &SplitConfig { validation_count: 50, test_count: 50, seed: 2 })
            .unwrap();
        assert_eq!((b.train.len(), b.validation.len(), b.test.len()), (200, 50, 50));
        let mean = b.train.features.mean_axis(Axis(0)).unwrap();
        let std = b.train.features.std_axis(Axis(0), 0.0);
        assert!(mean.iter().all(|m| m.abs() < 1e-10));
        assert!(std.iter().all(|s| (s - 1.0).abs() < 1e-10));
        // recompute from recorded rows
        let refit = Normalization::fit(&raw.features.select(Axis(0), &b.train.rows));
        assert_eq!(refit, b.normalization);
    }

    #[test]
    fn constant_feature_is_left_unscaled() {
        let mut f = Array2::zeros((10, 2));
        for i in 0..10 {
            f[[i, 0]] = i as f64;
            f[[i, 1]] = 5.0;
        }
        let raw = RawDataset::new(f, Labels::Classes((0..10).map(|i| i % 2).collect()), "t").unwrap();
        let b = split_and_normalize(
            &raw,
            None,
            raw.family().unwrap(),
            &SplitConfig { validation_count: 0, test_count: 2, seed: 0 },
        )
        .unwrap();
        assert!(b.validation.is_empty());
        assert!(b.train.features.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn seeds_change_split_not_rows() {
        let raw = make_synthetic(&SyntheticKind::NoisySine { noise: 0.1 }, 100, 3).unwrap();
        let cfg = |seed| SplitConfig { validation_count: 20, test_count: 20, seed };
        let fam = DistributionFamily::GaussianUnitVariance;
        let a = split_and_normalize(&raw, None, fam, &cfg(1)).unwrap();
        let b = split_and_normalize(&raw, None, fam, &cfg(2)).unwrap();
        assert_ne!(a.train.rows, b.train.rows);
        let all = |x: &DatasetBundle| {
            let mut v: Vec<usize> =
                x.train.rows.iter().chain(&x.validation.rows).chain(&x.test.rows).copied().collect();
            v.sort();
            v
        };
        assert_eq!(all(&a), (0..100).collect::<Vec<_>>());
        assert_eq!(all(&a), all(&b));
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let kind = SyntheticKind::GaussianBlobs { classes: 4, dim: 3, separation: 2.0, clusters_per_class: 2 };
        let a = make_synthetic(&kind, 4000, 9).unwrap();
        let b = make_synthetic(&kind, 4000, 9).unwrap();
        assert_eq!(a, b);
        let counts = a.labels.classes().unwrap().iter().fold([0usize; 4], |mut acc, &c| {
            acc[c] += 1;
            acc
        });
        // round-robin assignment makes classes exactly balanced
        assert!(counts.iter().all(|&c| c == 1000));
    }

    #[test]
    fn label_kind_must_match_family() {
        let l = Labels::Real(vec![1.0]);
        assert!(l.targets(DistributionFamily::Categorical { classes: 2 }).is_err());
        let l = Labels::Classes(vec![2]);
        assert!(l.targets(DistributionFamily::Categorical { classes: 2 }).is_err());
    }

    #[test]
    fn holding_out_everything_is_rejected() {
        let raw = make_synthetic(&SyntheticKind::NoisySine { noise: 0.1 }, 10, 3).unwrap();
        let cfg = SplitConfig { validation_count: 5, test_count: 5, seed: 0 };
        assert!(split_and_normalize(&raw, None, DistributionFamily::GaussianUnitVariance, &cfg).is_err());
    }
}
