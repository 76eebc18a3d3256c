//! Feature records, stage datasets, synthetic streams and on-disk formats.
//!
//! Features stand in for the output of a frozen backbone. They are stored as
//! `f32` on disk and promoted to `f64` on load; the synthetic generator rounds
//! its samples to `f32` so streams survive a write/read cycle unchanged.
//!
//! # `ESNF` embedding files
//!
//! All integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "ESNF"
//! 4       4     version (u32) = 1
//! 8       4     feature dimension D (u32)
//! 12      8     record count N (u64)
//! 20      ...   N records of: stage_id (u16), label (u32), D x f32
//! ```
//!
//! # Manifests
//!
//! A line-oriented text file. `#` starts a comment; paths are relative to the
//! manifest's directory.
//!
//! ```text
//! mode cil
//! stage 1 stage1_train.esnf stage1_test.esnf
//! stage 2 stage2_train.esnf stage2_test.esnf
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FormatError, FormatErrorKind};
use crate::{ClassId, Error, Result, StageId};

pub const ESNF_MAGIC: [u8; 4] = *b"ESNF";
pub const ESNF_VERSION: u32 = 1;
pub const ESNF_HEADER_LEN: u64 = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub stage_id: StageId,
    pub label: ClassId,
    pub features: Vec<f64>,
}

/// Incremental-learning scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamMode {
    /// Class-incremental: disjoint label sets per stage.
    Cil,
    /// Domain-incremental: the same label set in every stage, shifted inputs.
    Dil,
    /// Cross-domain class-incremental: new labels and a new domain each stage.
    Xdcil,
}

impl StreamMode {
    pub fn as_str(self) -> &'static str {
        match self {
            StreamMode::Cil => "cil",
            StreamMode::Dil => "dil",
            StreamMode::Xdcil => "xdcil",
        }
    }

    /// Whether stages must have pairwise-disjoint label sets.
    pub fn disjoint_labels(self) -> bool {
        !matches!(self, StreamMode::Dil)
    }

    /// Checks the label-set relation between stages that this mode requires.
    pub fn check_label_sets<'a>(self, sets: impl IntoIterator<Item = &'a [ClassId]>) -> Result<()> {
        let sets: Vec<BTreeSet<ClassId>> = sets.into_iter().map(|s| s.iter().copied().collect()).collect();
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                let ok = if self.disjoint_labels() {
                    sets[i].is_disjoint(&sets[j])
                } else {
                    sets[i] == sets[j]
                };
                if !ok {
                    return Err(Error::contract(format!(
                        "{} stream requires {} label sets, stages {} and {} violate it",
                        self.as_str(),
                        if self.disjoint_labels() { "disjoint" } else { "identical" },
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

impl FromStr for StreamMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cil" => Ok(StreamMode::Cil),
            "dil" => Ok(StreamMode::Dil),
            "xdcil" => Ok(StreamMode::Xdcil),
            other => Err(Error::Config {
                field: "mode".into(),
                message: format!("unknown mode `{other}`, expected cil, dil or xdcil"),
            }),
        }
    }
}

/// Training and test data of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageDataset {
    stage_id: StageId,
    label_set: Vec<ClassId>,
    train: Vec<FeatureRecord>,
    test: Vec<FeatureRecord>,
    domain_tag: u32,
}

impl StageDataset {
    pub fn new(
        stage_id: StageId,
        label_set: Vec<ClassId>,
        train: Vec<FeatureRecord>,
        test: Vec<FeatureRecord>,
        domain_tag: u32,
    ) -> Result<Self> {
        if stage_id == 0 {
            return Err(Error::contract("stage ids start at 1"));
        }
        if label_set.is_empty() {
            return Err(Error::contract(format!("stage {stage_id} has an empty label set")));
        }
        let dim = train.first().or(test.first()).map(|r| r.features.len());
        for (split, records) in [("train", &train), ("test", &test)] {
            for (i, r) in records.iter().enumerate() {
                if r.stage_id != stage_id {
                    return Err(Error::contract(format!(
                        "{split} record {i} has stage id {} in stage {stage_id}",
                        r.stage_id
                    )));
                }
                if !label_set.contains(&r.label) {
                    return Err(Error::contract(format!(
                        "{split} record {i} label {} is outside stage {stage_id}'s label set",
                        r.label
                    )));
                }
                if Some(r.features.len()) != dim {
                    return Err(Error::contract(format!("{split} record {i} has a different dimension")));
                }
                if r.features.iter().any(|v| !v.is_finite()) {
                    return Err(Error::contract(format!("{split} record {i} has non-finite features")));
                }
            }
        }
        Ok(StageDataset { stage_id, label_set, train, test, domain_tag })
    }

    pub fn stage_id(&self) -> StageId {
        self.stage_id
    }

    pub fn label_set(&self) -> &[ClassId] {
        &self.label_set
    }

    pub fn train(&self) -> &[FeatureRecord] {
        &self.train
    }

    pub fn test(&self) -> &[FeatureRecord] {
        &self.test
    }

    pub fn domain_tag(&self) -> u32 {
        self.domain_tag
    }

    /// Feature dimension, if the stage has any records.
    pub fn dim(&self) -> Option<usize> {
        self.train.first().or(self.test.first()).map(|r| r.features.len())
    }

    /// Splits into the training half and the test half.
    pub fn into_splits(self) -> (TrainSplit, Vec<FeatureRecord>) {
        (
            TrainSplit { stage_id: self.stage_id, label_set: self.label_set, records: self.train },
            self.test,
        )
    }
}

/// The training records of one stage, detached from its test split.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSplit {
    pub stage_id: StageId,
    pub label_set: Vec<ClassId>,
    pub records: Vec<FeatureRecord>,
}

/// Parameters of a seeded Gaussian-cluster stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamSpec {
    pub mode: StreamMode,
    pub num_stages: usize,
    pub classes_per_stage: usize,
    pub feature_dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Radius of the sphere class means are drawn on.
    pub separation: f64,
    /// Length of the per-stage domain offset (DIL and XDCIL).
    pub domain_shift: f64,
    /// Per-coordinate standard deviation of the isotropic noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for StreamSpec {
    fn default() -> Self {
        StreamSpec {
            mode: StreamMode::Cil,
            num_stages: 5,
            classes_per_stage: 10,
            feature_dim: 32,
            train_per_class: 100,
            test_per_class: 50,
            separation: 6.0,
            domain_shift: 0.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

impl StreamSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_stages", self.num_stages),
            ("classes_per_stage", self.classes_per_stage),
            ("feature_dim", self.feature_dim),
            ("train_per_class", self.train_per_class),
            ("test_per_class", self.test_per_class),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(Error::Config { field: field.into(), message: "must be >= 1".into() });
            }
        }
        if self.num_stages > StageId::MAX as usize {
            return Err(Error::Config { field: "num_stages".into(), message: "too many stages".into() });
        }
        if !(self.separation.is_finite() && self.separation > 0.0) {
            return Err(Error::Config { field: "separation".into(), message: "must be > 0".into() });
        }
        if !(self.noise.is_finite() && self.noise > 0.0) {
            return Err(Error::Config { field: "noise".into(), message: "must be > 0".into() });
        }
        if !self.domain_shift.is_finite() {
            return Err(Error::Config { field: "domain_shift".into(), message: "must be finite".into() });
        }
        Ok(())
    }
}

fn random_direction<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Generates a seeded stream of Gaussian class clusters.
///
/// Class means lie on a sphere of radius `separation`. CIL gives each stage
/// fresh classes; DIL reuses one set of classes and offsets every stage by a
/// random vector of length `domain_shift`; XDCIL does both.
pub fn generate_stream(spec: &StreamSpec) -> Result<Vec<StageDataset>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.feature_dim;
    let c = spec.classes_per_stage;
    let total_classes = if spec.mode.disjoint_labels() { spec.num_stages * c } else { c };
    let means: Vec<Vec<f64>> = (0..total_classes)
        .map(|_| random_direction(&mut rng, d).into_iter().map(|v| v * spec.separation).collect())
        .collect();

    let mut stages = Vec::with_capacity(spec.num_stages);
    for s in 0..spec.num_stages {
        let stage_id = (s + 1) as StageId;
        let shift: Vec<f64> = match spec.mode {
            StreamMode::Cil => vec![0.0; d],
            StreamMode::Dil | StreamMode::Xdcil => {
                random_direction(&mut rng, d).into_iter().map(|v| v * spec.domain_shift).collect()
            }
        };
        let first = if spec.mode.disjoint_labels() { s * c } else { 0 };
        let label_set: Vec<ClassId> = (first..first + c).map(|l| l as ClassId).collect();
        let mut sample = |n: usize| -> Vec<FeatureRecord> {
            let mut out = Vec::with_capacity(n * c);
            for &label in &label_set {
                let mean = &means[label as usize];
                for _ in 0..n {
                    let features = (0..d)
                        .map(|j| {
                            let noise: f64 = rng.sample(StandardNormal);
                            (mean[j] + shift[j] + spec.noise * noise) as f32 as f64
                        })
                        .collect();
                    out.push(FeatureRecord { stage_id, label, features });
                }
            }
            out
        };
        let train = sample(spec.train_per_class);
        let test = sample(spec.test_per_class);
        let domain_tag = if spec.mode == StreamMode::Cil { 0 } else { s as u32 };
        stages.push(StageDataset::new(stage_id, label_set, train, test, domain_tag)?);
    }
    Ok(stages)
}

/// Serializes records into `ESNF` bytes.
pub fn encode_embeddings(records: &[FeatureRecord]) -> Result<Vec<u8>> {
    let first = records.first().ok_or_else(|| Error::contract("no records to write"))?;
    let d = first.features.len();
    if d == 0 || d > u32::MAX as usize {
        return Err(Error::contract(format!("unsupported feature dimension {d}")));
    }
    let mut buf = Vec::with_capacity(ESNF_HEADER_LEN as usize + records.len() * (6 + 4 * d));
    buf.extend_from_slice(&ESNF_MAGIC);
    buf.extend_from_slice(&ESNF_VERSION.to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for (i, r) in records.iter().enumerate() {
        if r.features.len() != d {
            return Err(Error::contract(format!(
                "record {i} has dimension {}, expected {d}",
                r.features.len()
            )));
        }
        buf.extend_from_slice(&r.stage_id.to_le_bytes());
        buf.extend_from_slice(&r.label.to_le_bytes());
        for v in &r.features {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn write_embeddings(path: impl AsRef<Path>, records: &[FeatureRecord]) -> Result<()> {
    let bytes = encode_embeddings(records)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

fn format_err(offset: u64, kind: FormatErrorKind) -> Error {
    Error::Format(FormatError { offset, kind })
}

fn read_array<const N: usize>(bytes: &[u8], offset: u64) -> Result<[u8; N]> {
    let start = offset as usize;
    bytes
        .get(start..start + N)
        .map(|s| s.try_into().expect("slice length"))
        .ok_or_else(|| {
            format_err(
                offset,
                FormatErrorKind::Truncated {
                    needed: N as u64,
                    available: (bytes.len() as u64).saturating_sub(offset),
                },
            )
        })
}

/// Parses `ESNF` bytes. When `expected_dim` is given, the header dimension must match it.
pub fn decode_embeddings(bytes: &[u8], expected_dim: Option<usize>) -> Result<Vec<FeatureRecord>> {
    let magic: [u8; 4] = read_array(bytes, 0)?;
    if magic != ESNF_MAGIC {
        return Err(format_err(0, FormatErrorKind::BadMagic(magic)));
    }
    let version = u32::from_le_bytes(read_array(bytes, 4)?);
    if version != ESNF_VERSION {
        return Err(format_err(4, FormatErrorKind::BadVersion(version)));
    }
    let dim = u32::from_le_bytes(read_array(bytes, 8)?);
    let count = u64::from_le_bytes(read_array(bytes, 12)?);
    if let Some(e) = expected_dim {
        if e as u64 != dim as u64 {
            return Err(format_err(
                8,
                FormatErrorKind::InconsistentDimension { expected: Some(e as u32), found: dim },
            ));
        }
    }
    if dim == 0 && count > 0 {
        return Err(format_err(8, FormatErrorKind::InconsistentDimension { expected: None, found: 0 }));
    }

    let record_len = 6 + 4 * dim as u64;
    let payload = bytes.len() as u64 - ESNF_HEADER_LEN;
    let present = payload / record_len.max(1);
    let remainder = payload % record_len.max(1);
    if present < count {
        let offset = ESNF_HEADER_LEN + present * record_len;
        return Err(if remainder == 0 {
            format_err(offset, FormatErrorKind::OverstatedCount { declared: count, present })
        } else {
            format_err(offset, FormatErrorKind::Truncated { needed: record_len, available: remainder })
        });
    }
    if payload != count * record_len {
        // bytes left over after the declared records: the payload was written with another D
        return Err(format_err(
            ESNF_HEADER_LEN + count * record_len,
            FormatErrorKind::InconsistentDimension { expected: None, found: dim },
        ));
    }

    let mut records = Vec::with_capacity(count as usize);
    let mut offset = ESNF_HEADER_LEN;
    for _ in 0..count {
        let stage_id = u16::from_le_bytes(read_array(bytes, offset)?);
        let label = u32::from_le_bytes(read_array(bytes, offset + 2)?);
        let mut features = Vec::with_capacity(dim as usize);
        for j in 0..dim as u64 {
            let at = offset + 6 + 4 * j;
            let v = f32::from_le_bytes(read_array(bytes, at)?);
            if !v.is_finite() {
                return Err(format_err(at, FormatErrorKind::NonFiniteFeature));
            }
            features.push(v as f64);
        }
        records.push(FeatureRecord { stage_id, label, features });
        offset += record_len;
    }
    Ok(records)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<FeatureRecord>> {
    decode_embeddings(&fs::read(path)?, None)
}

/// Reads an `ESNF` file whose dimension must equal `dim`.
pub fn read_embeddings_with_dim(path: impl AsRef<Path>, dim: usize) -> Result<Vec<FeatureRecord>> {
    decode_embeddings(&fs::read(path)?, Some(dim))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestStage {
    pub stage_id: StageId,
    pub train: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub mode: StreamMode,
    pub stages: Vec<ManifestStage>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut mode = None;
        let mut stages = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let field = |message: String| Error::Config { field: format!("manifest line {}", n + 1), message };
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["mode", m] => mode = Some(m.parse::<StreamMode>().map_err(|e| field(e.to_string()))?),
                ["stage", id, train, test] => {
                    let stage_id: StageId = id.parse().map_err(|_| field(format!("bad stage id `{id}`")))?;
                    stages.push(ManifestStage { stage_id, train: base.join(train), test: base.join(test) });
                }
                _ => return Err(field(format!("unrecognized line `{line}`"))),
            }
        }
        let mode = mode.ok_or_else(|| Error::Config {
            field: "manifest".into(),
            message: "missing `mode` line".into(),
        })?;
        Ok(Manifest { mode, stages })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Renders the manifest with paths relative to `base` where possible.
    pub fn render(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let mut out = format!("mode {}\n", self.mode.as_str());
        for s in &self.stages {
            out.push_str(&format!("stage {} {} {}\n", s.stage_id, rel(&s.train), rel(&s.test)));
        }
        out
    }

    /// Loads every stage. Label sets are the union of labels seen in each stage's files.
    pub fn load_stages(&self) -> Result<Vec<StageDataset>> {
        let mut dim = None;
        let mut out = Vec::with_capacity(self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            let read = |p: &Path, dim: Option<usize>| match dim {
                Some(d) => read_embeddings_with_dim(p, d),
                None => read_embeddings(p),
            };
            let train = read(&s.train, dim)?;
            dim = dim.or(train.first().map(|r| r.features.len()));
            let test = read(&s.test, dim)?;
            dim = dim.or(test.first().map(|r| r.features.len()));
            let labels: BTreeSet<ClassId> = train.iter().chain(&test).map(|r| r.label).collect();
            let tag = if self.mode == StreamMode::Cil { 0 } else { i as u32 };
            out.push(StageDataset::new(s.stage_id, labels.into_iter().collect(), train, test, tag)?);
        }
        self.mode.check_label_sets(out.iter().map(|s| s.label_set()))?;
        Ok(out)
    }
}

/// Writes every stage as a pair of `ESNF` files plus a `manifest.txt` in `dir`.
pub fn write_stream(dir: impl AsRef<Path>, mode: StreamMode, stages: &[StageDataset]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = Manifest { mode, stages: Vec::new() };
    for s in stages {
        let train = dir.join(format!("stage{}_train.esnf", s.stage_id()));
        let test = dir.join(format!("stage{}_test.esnf", s.stage_id()));
        write_embeddings(&train, s.train())?;
        write_embeddings(&test, s.test())?;
        manifest.stages.push(ManifestStage { stage_id: s.stage_id(), train, test });
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest.render(dir))?;
    Ok(path)
}
