//! Sequences, the synthetic frozen-backbone simulator and the on-disk dataset format.
//!
//! A dataset directory holds `manifest.json` and one CSV record file per
//! sequence. Each record file starts with a header row equal to the
//! manifest's `columns` (`frame, x0..x{F-1}, y0..y{L-1}, p0..p{L-1}`) followed
//! by one row per frame: frame index, feature vector, ground-truth labels and
//! backbone pseudo-labels. Numbers are written in shortest round-trip form.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// One video segment: per-frame features, ground truth and backbone pseudo-labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub(crate) id: String,
    pub(crate) features: Tensor,
    pub(crate) labels: Tensor,
    pub(crate) pseudo_labels: Tensor,
}

impl Sequence {
    pub fn new(id: String, features: Tensor, labels: Tensor, pseudo_labels: Tensor) -> Result<Self> {
        let (len, _) = features.expect_matrix("sequence features")?;
        let (ll, ld) = labels.expect_matrix("sequence labels")?;
        if len == 0 {
            return Err(Error::contract(format!("sequence `{id}` has no frames")));
        }
        if ll != len || pseudo_labels.shape() != labels.shape() {
            return Err(Error::Dimension {
                op: "sequence",
                lhs: vec![len, ll, pseudo_labels.rows()],
                rhs: vec![len, ld],
            });
        }
        for (what, t) in [("label", &labels), ("pseudo-label", &pseudo_labels)] {
            if let Some(v) = t.data().iter().find(|v| !(v.abs() <= 1.0)) {
                return Err(Error::contract(format!(
                    "sequence `{id}`: {what} {v} outside [-1, 1]"
                )));
            }
        }
        if !features.is_finite() {
            return Err(Error::contract(format!("sequence `{id}` has non-finite features")));
        }
        Ok(Sequence {
            id,
            features,
            labels,
            pseudo_labels,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &Tensor {
        &self.labels
    }

    pub fn pseudo_labels(&self) -> &Tensor {
        &self.pseudo_labels
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn label_dim(&self) -> usize {
        self.labels.cols()
    }

    /// Frames `[start, start + len)` as a new sequence.
    pub fn window(&self, start: usize, len: usize) -> Result<Sequence> {
        let end = start + len;
        Ok(Sequence {
            id: format!("{}[{start}..{end}]", self.id),
            features: self.features.slice_rows(start, end)?,
            labels: self.labels.slice_rows(start, end)?,
            pseudo_labels: self.pseudo_labels.slice_rows(start, end)?,
        })
    }
}

/// Parameters of the synthetic backbone simulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_sequences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub feature_dim: usize,
    pub label_dim: usize,
    /// Sinusoids per label trajectory.
    pub fourier_components: usize,
    /// Highest sinusoid frequency, in cycles per frame.
    pub max_frequency: f64,
    /// Amplitude of the pre-`tanh` trajectory.
    pub trajectory_scale: f64,
    /// Std of the per-sequence pre-`tanh` offset.
    pub sequence_offset_std: f64,
    /// Fraction of trajectory variance shared across label dimensions.
    pub label_correlation: f64,
    /// Pseudo-label noise std on informative frames.
    pub pseudo_noise_std: f64,
    /// Multiplier on the pseudo-label noise std for uninformative frames.
    pub uninformative_noise_scale: f64,
    /// Amplitude of a per-sequence constant pseudo-label bias.
    pub pseudo_bias_amplitude: f64,
    pub informative_fraction: f64,
    pub feature_noise_std: f64,
    pub feature_map_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_sequences: 200,
            min_len: 70,
            max_len: 140,
            feature_dim: 512,
            label_dim: 2,
            fourier_components: 4,
            max_frequency: 0.03,
            trajectory_scale: 0.8,
            sequence_offset_std: 0.6,
            label_correlation: 0.0,
            pseudo_noise_std: 0.3,
            uninformative_noise_scale: 2.5,
            pseudo_bias_amplitude: 0.1,
            informative_fraction: 0.5,
            feature_noise_std: 0.5,
            feature_map_seed: 1234,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_sequences == 0 || self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::contract("synthetic spec needs sequences and an ordered length range"));
        }
        if self.feature_dim == 0 || self.label_dim == 0 || self.fourier_components == 0 {
            return Err(Error::contract("synthetic dimensions must be positive"));
        }
        let non_negative = [
            ("pseudo_noise_std", self.pseudo_noise_std),
            ("uninformative_noise_scale", self.uninformative_noise_scale),
            ("pseudo_bias_amplitude", self.pseudo_bias_amplitude),
            ("feature_noise_std", self.feature_noise_std),
            ("trajectory_scale", self.trajectory_scale),
            ("sequence_offset_std", self.sequence_offset_std),
            ("max_frequency", self.max_frequency),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) {
                return Err(Error::contract(format!("{name} must be non-negative")));
            }
        }
        for (name, v) in [
            ("informative_fraction", self.informative_fraction),
            ("label_correlation", self.label_correlation),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::contract(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// A generated sequence together with which frames carried informative features.
#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub sequence: Sequence,
    pub informative: Vec<bool>,
}

/// Fixed random nonlinear map from (label, phase) to feature space.
struct FeatureMap {
    weights: Vec<f64>,
    bias: Vec<f64>,
    inputs: usize,
}

impl FeatureMap {
    fn new(spec: &SyntheticSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.feature_map_seed);
        let inputs = spec.label_dim + 2;
        let gain = 2.0 / (inputs as f64).sqrt();
        let weights = (0..spec.feature_dim * inputs)
            .map(|_| gain * normal(&mut rng))
            .collect();
        let bias = (0..spec.feature_dim)
            .map(|_| 0.1 * normal(&mut rng))
            .collect();
        FeatureMap { weights, bias, inputs }
    }

    fn embed(&self, input: &[f64], out: &mut Vec<f64>) {
        for (row, b) in self.weights.chunks(self.inputs).zip(&self.bias) {
            let z: f64 = row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>() + b;
            out.push(z.tanh());
        }
    }
}

/// Generates sequences with smooth `tanh`-squashed random-Fourier label
/// trajectories, features from a fixed nonlinear embedding (pure noise on
/// uninformative frames) and heteroscedastic pseudo-labels.
pub fn generate_synthetic_detailed<R: Rng + ?Sized>(
    spec: &SyntheticSpec,
    rng: &mut R,
) -> Result<Vec<SyntheticSequence>> {
    spec.validate()?;
    let map = FeatureMap::new(spec);
    let ld = spec.label_dim;
    let comp_std = spec.trajectory_scale / (spec.fourier_components as f64).sqrt();
    let own_w = (1.0 - spec.label_correlation).sqrt();
    let shared_w = spec.label_correlation.sqrt();

    let mut out = Vec::with_capacity(spec.num_sequences);
    for s in 0..spec.num_sequences {
        let len = rng.random_range(spec.min_len..=spec.max_len);

        // One trajectory per label dimension plus one shared trajectory.
        let trajectories: Vec<Trajectory> = (0..=ld)
            .map(|_| Trajectory::sample(spec, comp_std, rng))
            .collect();
        let offsets: Vec<f64> = (0..ld)
            .map(|_| spec.sequence_offset_std * normal(rng))
            .collect();
        let bias: Vec<f64> = (0..ld)
            .map(|_| spec.pseudo_bias_amplitude * rng.random_range(-1.0..=1.0))
            .collect();

        let mut features = Vec::with_capacity(len * spec.feature_dim);
        let mut labels = Vec::with_capacity(len * ld);
        let mut pseudo = Vec::with_capacity(len * ld);
        let mut informative = Vec::with_capacity(len);
        let mut input = vec![0.0; ld + 2];
        for t in 0..len {
            let shared = trajectories[ld].at(t);
            for d in 0..ld {
                let pre = offsets[d] + own_w * trajectories[d].at(t) + shared_w * shared;
                input[d] = pre.tanh();
            }
            let phase = std::f64::consts::TAU * t as f64 / len as f64;
            input[ld] = phase.sin();
            input[ld + 1] = phase.cos();

            let is_informative = rng.random_bool(spec.informative_fraction);
            informative.push(is_informative);
            if is_informative {
                let start = features.len();
                map.embed(&input, &mut features);
                for v in &mut features[start..] {
                    *v += spec.feature_noise_std * normal(rng);
                }
            } else {
                features.extend((0..spec.feature_dim).map(|_| normal(rng)));
            }

            let noise_std = if is_informative {
                spec.pseudo_noise_std
            } else {
                spec.pseudo_noise_std * spec.uninformative_noise_scale
            };
            for d in 0..ld {
                let y = input[d];
                labels.push(y);
                let e = normal(rng);
                pseudo.push((y + bias[d] + noise_std * e).clamp(-1.0, 1.0));
            }
        }
        let sequence = Sequence::new(
            format!("seq-{s:04}"),
            Tensor::matrix(len, spec.feature_dim, features)?,
            Tensor::matrix(len, ld, labels)?,
            Tensor::matrix(len, ld, pseudo)?,
        )?;
        out.push(SyntheticSequence {
            sequence,
            informative,
        });
    }
    Ok(out)
}

pub fn generate_synthetic<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<Vec<Sequence>> {
    Ok(generate_synthetic_detailed(spec, rng)?
        .into_iter()
        .map(|s| s.sequence)
        .collect())
}

struct Trajectory {
    amps: Vec<f64>,
    freqs: Vec<f64>,
    phases: Vec<f64>,
}

impl Trajectory {
    fn sample<R: Rng + ?Sized>(spec: &SyntheticSpec, comp_std: f64, rng: &mut R) -> Self {
        let k = spec.fourier_components;
        let normal = Normal::new(0.0, comp_std.max(f64::MIN_POSITIVE)).expect("finite std");
        Trajectory {
            amps: (0..k).map(|_| if comp_std > 0.0 { normal.sample(rng) } else { 0.0 }).collect(),
            freqs: (0..k).map(|_| rng.random_range(0.0..=spec.max_frequency)).collect(),
            phases: (0..k).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect(),
        }
    }

    fn at(&self, t: usize) -> f64 {
        self.amps
            .iter()
            .zip(&self.freqs)
            .zip(&self.phases)
            .map(|((a, f), p)| a * (std::f64::consts::TAU * f * t as f64 + p).sin())
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub num_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub label_dim: usize,
    pub feature_dim: usize,
    pub columns: Vec<String>,
    pub sequences: Vec<ManifestEntry>,
}

fn column_names(feature_dim: usize, label_dim: usize) -> Vec<String> {
    std::iter::once("frame".to_string())
        .chain((0..feature_dim).map(|i| format!("x{i}")))
        .chain((0..label_dim).map(|i| format!("y{i}")))
        .chain((0..label_dim).map(|i| format!("p{i}")))
        .collect()
}

fn sanitize_file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes a dataset directory.
pub fn save_dataset(dir: &Path, sequences: &[Sequence]) -> Result<()> {
    let first = sequences
        .first()
        .ok_or_else(|| Error::EmptyDataset(dir.display().to_string()))?;
    let (fd, ld) = (first.feature_dim(), first.label_dim());
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let columns = column_names(fd, ld);
    let header = columns.join(",");
    let mut entries = Vec::with_capacity(sequences.len());
    for (i, seq) in sequences.iter().enumerate() {
        if seq.feature_dim() != fd || seq.label_dim() != ld {
            return Err(Error::contract(format!(
                "sequence `{}` has dimensions ({}, {}), dataset has ({fd}, {ld})",
                seq.id,
                seq.feature_dim(),
                seq.label_dim()
            )));
        }
        let file = format!("{:04}_{}.csv", i, sanitize_file_stem(&seq.id));
        let mut text = String::with_capacity(seq.len() * (fd + 2 * ld) * 20);
        text.push_str(&header);
        text.push('\n');
        for t in 0..seq.len() {
            text.push_str(&t.to_string());
            for row in [&seq.features, &seq.labels, &seq.pseudo_labels] {
                for v in row.row_slice(t) {
                    text.push(',');
                    text.push_str(&v.to_string());
                }
            }
            text.push('\n');
        }
        let path = dir.join(&file);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            id: seq.id.clone(),
            file,
            num_frames: seq.len(),
        });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        label_dim: ld,
        feature_dim: fd,
        columns,
        sequences: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Numeric(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Reads and validates a dataset directory (or its manifest path).
pub fn load_dataset(path: &Path) -> Result<Vec<Sequence>> {
    let mpath = manifest_path(path);
    let dir = mpath.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    if text.trim().is_empty() {
        return Err(Error::EmptyDataset(mpath.display().to_string()));
    }
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| {
        Error::parse(
            format!("{}:{}:{}", mpath.display(), e.line(), e.column()),
            format!("malformed manifest: {e}"),
        )
    })?;
    let loc = mpath.display().to_string();
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::parse(
            loc,
            format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                manifest.schema_version
            ),
        ));
    }
    let expected_cols = column_names(manifest.feature_dim, manifest.label_dim);
    if manifest.columns != expected_cols {
        return Err(Error::parse(loc, "column list does not match feature_dim/label_dim"));
    }
    if manifest.sequences.is_empty() {
        return Err(Error::EmptyDataset(loc));
    }
    manifest
        .sequences
        .iter()
        .map(|entry| load_record(&dir, entry, &manifest))
        .collect()
}

fn load_record(dir: &Path, entry: &ManifestEntry, manifest: &Manifest) -> Result<Sequence> {
    let path = dir.join(&entry.file);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let (fd, ld) = (manifest.feature_dim, manifest.label_dim);
    let width = 1 + fd + 2 * ld;
    let mut lines = text.lines().enumerate();
    let header_ok = lines
        .next()
        .is_some_and(|(_, h)| h.split(',').map(str::trim).eq(manifest.columns.iter().map(String::as_str)));
    if !header_ok {
        return Err(Error::parse(format!("{}:1", path.display()), "missing or malformed header row"));
    }

    let mut features = Vec::with_capacity(entry.num_frames * fd);
    let mut labels = Vec::with_capacity(entry.num_frames * ld);
    let mut pseudo = Vec::with_capacity(entry.num_frames * ld);
    let mut frames = 0usize;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let locator = || format!("{}:{}", path.display(), lineno + 1);
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(Error::parse(
                locator(),
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        let frame: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(locator(), format!("bad frame index `{}`", fields[0])))?;
        if frame != frames {
            return Err(Error::parse(locator(), format!("expected frame {frames}, found {frame}")));
        }
        for (col, raw) in fields.iter().enumerate().skip(1) {
            let v: f64 = raw.trim().parse().map_err(|_| {
                Error::parse(locator(), format!("column `{}`: bad number `{raw}`", manifest.columns[col]))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(locator(), format!("column `{}`: non-finite value", manifest.columns[col])));
            }
            if col > fd && v.abs() > 1.0 {
                return Err(Error::parse(
                    locator(),
                    format!("column `{}`: label {v} outside [-1, 1]", manifest.columns[col]),
                ));
            }
            match col {
                c if c <= fd => features.push(v),
                c if c <= fd + ld => labels.push(v),
                _ => pseudo.push(v),
            }
        }
        frames += 1;
    }
    if frames != entry.num_frames {
        return Err(Error::parse(
            path.display().to_string(),
            format!("manifest lists {} frames, file has {frames}", entry.num_frames),
        ));
    }
    if frames == 0 {
        return Err(Error::parse(path.display().to_string(), "record has no frames"));
    }
    Sequence::new(
        entry.id.clone(),
        Tensor::matrix(frames, fd, features)?,
        Tensor::matrix(frames, ld, labels)?,
        Tensor::matrix(frames, ld, pseudo)?,
    )
}

/// Partition sizes by largest remainder, with every partition non-empty.
fn partition_sizes(n: usize, ratios: &[f64]) -> Result<Vec<usize>> {
    if ratios.is_empty() || ratios.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(Error::contract("split ratios must be positive"));
    }
    if n < ratios.len() {
        return Err(Error::contract(format!(
            "cannot split {n} sequences into {} partitions",
            ratios.len()
        )));
    }
    let total: f64 = ratios.iter().sum();
    let exact: Vec<f64> = ratios.iter().map(|r| n as f64 * r / total).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut remaining = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        sizes[i] += 1;
        remaining -= 1;
    }
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let largest = (0..sizes.len()).max_by_key(|&i| (sizes[i], usize::MAX - i)).unwrap_or(0);
        sizes[largest] -= 1;
        sizes[empty] += 1;
    }
    Ok(sizes)
}

#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Vec<Sequence>,
    pub val: Vec<Sequence>,
    pub test: Vec<Sequence>,
}

/// Sequence-level seeded partition into train/val/test.
pub fn split<R: Rng + ?Sized>(dataset: &[Sequence], ratios: [f64; 3], rng: &mut R) -> Result<DatasetSplit> {
    let sizes = partition_sizes(dataset.len(), &ratios)?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(rng);
    let take = |range: std::ops::Range<usize>| -> Vec<Sequence> {
        order[range].iter().map(|&i| dataset[i].clone()).collect()
    };
    let a = sizes[0];
    let b = a + sizes[1];
    Ok(DatasetSplit {
        train: take(0..a),
        val: take(a..b),
        test: take(b..dataset.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            num_sequences: 6,
            min_len: 8,
            max_len: 15,
            feature_dim: 5,
            label_dim: 2,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn noiseless_limit_copies_labels() {
        let spec = SyntheticSpec {
            pseudo_noise_std: 0.0,
            pseudo_bias_amplitude: 0.0,
            informative_fraction: 1.0,
            ..small_spec()
        };
        let data = generate_synthetic(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for s in &data {
            assert_eq!(s.labels, s.pseudo_labels);
        }
    }

    #[test]
    fn generation_is_seeded_and_bounded() {
        let spec = small_spec();
        let a = generate_synthetic(&spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = generate_synthetic(&spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        for s in &a {
            assert!((spec.min_len..=spec.max_len).contains(&s.len()));
            assert!(s.labels.data().iter().all(|v| v.abs() <= 1.0));
            assert!(s.pseudo_labels.data().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn round_trip_through_directory() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_synthetic(&small_spec(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        save_dataset(dir.path(), &data).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded, data);
    }

    #[test]
    fn out_of_range_label_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_synthetic(&small_spec(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        save_dataset(dir.path(), &data[..1]).unwrap();
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        let record = dir.path().join(&manifest.sequences[0].file);
        let text = fs::read_to_string(&record).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut fields: Vec<String> = lines[3].split(',').map(String::from).collect();
        fields[1 + 5] = "1.5".into();
        lines[3] = fields.join(",");
        fs::write(&record, lines.join("\n")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Parse { .. }));
        assert!(msg.contains(":4") && msg.contains("1.5") && msg.contains("y0"), "{msg}");
    }

    #[test]
    fn empty_manifest_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn malformed_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_synthetic(&small_spec(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        save_dataset(dir.path(), &data[..1]).unwrap();
        let mut m: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        m.feature_dim = 4;
        fs::write(dir.path().join(MANIFEST_FILE), serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let spec = SyntheticSpec {
            num_sequences: 10,
            ..small_spec()
        };
        let data = generate_synthetic(&spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let s = split(&data, [8.0, 1.0, 1.0], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        let mut ids: Vec<&str> = s.train.iter().chain(&s.val).chain(&s.test).map(|q| q.id()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 10);

        let again = split(&data, [8.0, 1.0, 1.0], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(s.test, again.test);
        assert!(split(&data[..2], [8.0, 1.0, 1.0], &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn partitions_are_never_empty() {
        assert_eq!(partition_sizes(3, &[8.0, 1.0, 1.0]).unwrap(), vec![1, 1, 1]);
        assert_eq!(partition_sizes(21, &[8.0, 1.0, 1.0]).unwrap().iter().sum::<usize>(), 21);
    }
}
