//! Labeled channel datasets: normalization into real/imaginary planes,
//! exhaustive-search labels, and a self-describing binary file format.
//!
//! Binary layout, little-endian throughout:
//!
//! ```text
//! offset size  field
//!      0    4  magic "MMWS"
//!      4    4  format version (u32, currently 1)
//!      8    4  n_samples (u32)
//!     12    4  n_users N_R (u32)
//!     16    4  n_tx N_T (u32)
//!     20    4  n_select N_r (u32)
//!     24    8  labeling noise power σ² (f64)
//!     32   16  RNG algorithm id, ASCII, NUL padded
//!     48    8  base seed (u64)
//!     56       planes: n_samples × 2 × N_R × N_T f32
//!              (per sample: real plane then imaginary plane, row-major)
//!      …       labels: n_samples × u32
//! ```
//!
//! A plain-text manifest (`<file>.manifest`, `key = value` lines) repeats the
//! header and records channel parameters and the train/test split.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::channel::{generate_channel_matrix, ArrayGeometry, ChannelConfig, ChannelError, ChannelMatrix};
use crate::cnn::InputShape;
use crate::rng::{substream, RNG_ALGORITHM};
use crate::selection::{binomial, combo_rank, exhaustive_search, ClassLabel};

pub const DATASET_MAGIC: &[u8; 4] = b"MMWS";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 56;
/// Share of samples (by leading index) used for training.
pub const TRAIN_FRACTION: f64 = 0.9;
/// Every `SPOT_CHECK_STRIDE`-th sample is relabeled on load.
pub const SPOT_CHECK_STRIDE: usize = 100;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("not a dataset file (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported dataset format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("dataset payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("sample {index}: stored label {stored} but exhaustive search gives {recomputed}")]
    LabelMismatch { index: usize, stored: u32, recomputed: u32 },
    #[error("label {label} of sample {index} is out of range for {classes} classes")]
    LabelOutOfRange { index: usize, label: u32, classes: u64 },
    #[error("too many samples: {0} exceeds the u32 range")]
    TooManySamples(usize),
    #[error("invalid dataset parameters: {0}")]
    InvalidParameters(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One normalized channel and its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `2 x N_R x N_T`: real parts, then imaginary parts.
    pub planes: Vec<f32>,
    pub label: ClassLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub n_samples: u32,
    pub n_users: u32,
    pub n_tx: u32,
    pub n_select: u32,
    pub noise_power: f64,
    pub rng_algorithm: String,
    pub base_seed: u64,
}

impl DatasetHeader {
    pub fn classes(&self) -> u64 {
        binomial(self.n_users as usize, self.n_select as usize)
    }

    pub fn input_shape(&self) -> InputShape {
        InputShape::channel_planes(self.n_users as usize, self.n_tx as usize)
    }

    fn sample_len(&self) -> usize {
        2 * self.n_users as usize * self.n_tx as usize
    }

    fn payload_len(&self) -> u64 {
        self.n_samples as u64 * (self.sample_len() as u64 * 4 + 4)
    }

    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(DATASET_MAGIC);
        out[4..8].copy_from_slice(&self.format_version.to_le_bytes());
        out[8..12].copy_from_slice(&self.n_samples.to_le_bytes());
        out[12..16].copy_from_slice(&self.n_users.to_le_bytes());
        out[16..20].copy_from_slice(&self.n_tx.to_le_bytes());
        out[20..24].copy_from_slice(&self.n_select.to_le_bytes());
        out[24..32].copy_from_slice(&self.noise_power.to_le_bytes());
        let id = self.rng_algorithm.as_bytes();
        let n = id.len().min(16);
        out[32..32 + n].copy_from_slice(&id[..n]);
        out[48..56].copy_from_slice(&self.base_seed.to_le_bytes());
        out
    }

    fn decode(bytes: &[u8; HEADER_LEN]) -> Result<Self, DatasetError> {
        let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
        if &magic != DATASET_MAGIC {
            return Err(DatasetError::BadMagic(magic));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let format_version = u32_at(4);
        if format_version != FORMAT_VERSION {
            return Err(DatasetError::VersionMismatch { found: format_version, expected: FORMAT_VERSION });
        }
        let id = &bytes[32..48];
        let id_len = id.iter().position(|&b| b == 0).unwrap_or(16);
        Ok(Self {
            format_version,
            n_samples: u32_at(8),
            n_users: u32_at(12),
            n_tx: u32_at(16),
            n_select: u32_at(20),
            noise_power: f64::from_le_bytes(bytes[24..32].try_into().expect("8 bytes")),
            rng_algorithm: String::from_utf8_lossy(&id[..id_len]).into_owned(),
            base_seed: u64::from_le_bytes(bytes[48..56].try_into().expect("8 bytes")),
        })
    }
}

/// Train/test partition by sample index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: std::ops::Range<usize>,
    pub test: std::ops::Range<usize>,
}

impl Split {
    pub fn for_samples(n: usize) -> Self {
        let n_train = (n as f64 * TRAIN_FRACTION).round() as usize;
        Self { train: 0..n_train, test: n_train..n }
    }
}

/// Sidecar text describing how a dataset file was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: DatasetHeader,
    pub channel: ChannelConfig,
    pub split: Split,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let h = &self.header;
        let c = &self.channel;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("magic", String::from_utf8_lossy(DATASET_MAGIC).into_owned());
        kv("format_version", h.format_version.to_string());
        kv("n_samples", h.n_samples.to_string());
        kv("n_users", h.n_users.to_string());
        kv("n_tx", h.n_tx.to_string());
        kv("n_select", h.n_select.to_string());
        kv("classes", h.classes().to_string());
        kv("noise_power", format!("{:e}", h.noise_power));
        kv("rng_algorithm", h.rng_algorithm.clone());
        kv("base_seed", h.base_seed.to_string());
        kv("array_rows", c.geometry.rows.to_string());
        kv("array_cols", c.geometry.cols.to_string());
        kv("spacing", c.geometry.spacing.to_string());
        kv("n_paths", c.n_paths.to_string());
        kv("path_loss", c.path_loss.to_string());
        kv("train_range", format!("{}..{}", self.split.train.start, self.split.train.end));
        kv("test_range", format!("{}..{}", self.split.test.start, self.split.test.end));
        s
    }

    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let map = parse_key_values(text).map_err(DatasetError::Manifest)?;
        let get = |k: &str| map.get(k).ok_or_else(|| DatasetError::Manifest(format!("missing key `{k}`")));
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T, DatasetError> {
            v.parse().map_err(|_| DatasetError::Manifest(format!("bad value `{v}` for `{k}`")))
        }
        let range = |k: &str| -> Result<std::ops::Range<usize>, DatasetError> {
            let v = get(k)?;
            let (a, b) = v
                .split_once("..")
                .ok_or_else(|| DatasetError::Manifest(format!("bad range `{v}` for `{k}`")))?;
            Ok(num(k, a)?..num(k, b)?)
        };
        let header = DatasetHeader {
            format_version: num("format_version", get("format_version")?)?,
            n_samples: num("n_samples", get("n_samples")?)?,
            n_users: num("n_users", get("n_users")?)?,
            n_tx: num("n_tx", get("n_tx")?)?,
            n_select: num("n_select", get("n_select")?)?,
            noise_power: num("noise_power", get("noise_power")?)?,
            rng_algorithm: get("rng_algorithm")?.clone(),
            base_seed: num("base_seed", get("base_seed")?)?,
        };
        let geometry = ArrayGeometry::with_spacing(
            num("array_rows", get("array_rows")?)?,
            num("array_cols", get("array_cols")?)?,
            num("spacing", get("spacing")?)?,
        )?;
        let channel = ChannelConfig {
            n_tx: header.n_tx as usize,
            n_users: header.n_users as usize,
            n_paths: num("n_paths", get("n_paths")?)?,
            path_loss: num("path_loss", get("path_loss")?)?,
            geometry,
            seed: header.base_seed,
        };
        Ok(Self { header, channel, split: Split { train: range("train_range")?, test: range("test_range")? } })
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`, got `{line}`", no + 1))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Loaded dataset, samples stored back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    /// `n_samples x 2 x N_R x N_T` values.
    pub planes: Vec<f32>,
    pub labels: Vec<u32>,
}

impl Dataset {
    pub fn header(&self) -> &DatasetHeader {
        &self.manifest.header
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_planes(&self, i: usize) -> &[f32] {
        let n = self.header().sample_len();
        &self.planes[i * n..(i + 1) * n]
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample { planes: self.sample_planes(i).to_vec(), label: ClassLabel(self.labels[i] as u64) }
    }

    pub fn channel(&self, i: usize) -> ChannelMatrix {
        let h = self.header();
        planes_to_channel(self.sample_planes(i), h.n_users as usize, h.n_tx as usize)
    }
}

/// Splits `H` into a real plane and an imaginary plane (`f64`, lossless).
pub fn normalize_sample(h: &ChannelMatrix) -> Vec<f64> {
    let e = h.entries();
    e.iter().map(|z| z.re).chain(e.iter().map(|z| z.im)).collect()
}

/// Inverse of [`normalize_sample`].
pub fn denormalize_sample(planes: &[f64], n_users: usize, n_tx: usize) -> ChannelMatrix {
    let n = n_users * n_tx;
    assert_eq!(planes.len(), 2 * n, "plane length mismatch");
    let data = (0..n).map(|i| num_complex::Complex64::new(planes[i], planes[n + i])).collect();
    ChannelMatrix::from_vec(n_users, n_tx, data)
}

/// Storage form of [`normalize_sample`].
pub fn channel_to_planes(h: &ChannelMatrix) -> Vec<f32> {
    normalize_sample(h).into_iter().map(|v| v as f32).collect()
}

pub fn planes_to_channel(planes: &[f32], n_users: usize, n_tx: usize) -> ChannelMatrix {
    let wide: Vec<f64> = planes.iter().map(|&v| v as f64).collect();
    denormalize_sample(&wide, n_users, n_tx)
}

/// Exhaustive-search label of `h`.
pub fn label_sample(h: &ChannelMatrix, n_select: usize, noise_power: f64) -> ClassLabel {
    let (subset, _) = exhaustive_search(h, n_select, noise_power);
    combo_rank(&subset, h.n_users(), n_select).expect("search returns a valid subset")
}

/// Channel `index` of a dataset, rounded to its stored `f32` precision so
/// the label is a function of exactly what is written to disk.
pub fn generate_sample(config: &ChannelConfig, index: u64, n_select: usize, noise_power: f64) -> Sample {
    let h = generate_channel_matrix(config, &mut substream(config.seed, index));
    let planes = channel_to_planes(&h);
    let stored = planes_to_channel(&planes, config.n_users, config.n_tx);
    Sample { planes, label: label_sample(&stored, n_select, noise_power) }
}

/// Generates, labels and writes `n_samples` samples to `path`, plus the
/// manifest next to it. Samples are independent substreams of
/// `config.seed`, so the output bytes depend only on the arguments.
pub fn build_dataset(
    config: &ChannelConfig,
    n_samples: usize,
    n_select: usize,
    noise_power: f64,
    path: &Path,
) -> Result<Manifest, DatasetError> {
    config.validate()?;
    let n_samples_u32 = u32::try_from(n_samples).map_err(|_| DatasetError::TooManySamples(n_samples))?;
    if n_select == 0 || n_select > config.n_users {
        return Err(DatasetError::InvalidParameters(format!(
            "cannot select {n_select} of {} users",
            config.n_users
        )));
    }
    if !(noise_power.is_finite() && noise_power > 0.0) {
        return Err(DatasetError::InvalidParameters(format!("noise power {noise_power} must be positive")));
    }
    let header = DatasetHeader {
        format_version: FORMAT_VERSION,
        n_samples: n_samples_u32,
        n_users: config.n_users as u32,
        n_tx: config.n_tx as u32,
        n_select: n_select as u32,
        noise_power,
        rng_algorithm: RNG_ALGORITHM.to_string(),
        base_seed: config.seed,
    };
    let samples: Vec<Sample> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| generate_sample(config, i, n_select, noise_power))
        .collect();

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&header.encode())?;
    for s in &samples {
        for v in &s.planes {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    for s in &samples {
        out.write_all(&(s.label.value() as u32).to_le_bytes())?;
    }
    out.flush()?;

    let manifest = Manifest { header, channel: config.clone(), split: Split::for_samples(n_samples) };
    fs::write(manifest_path(path), manifest.to_text())?;
    Ok(manifest)
}

/// Reads a dataset and its manifest, validating the header, payload size,
/// label range, and a 1% spot check of labels against exhaustive search.
pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let mut file = BufReader::new(File::open(path)?);
    let mut head = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match file.read(&mut head[got..])? {
            0 => break,
            n => got += n,
        }
    }
    if got >= 4 && &head[0..4] != DATASET_MAGIC {
        return Err(DatasetError::BadMagic(head[0..4].try_into().expect("4 bytes")));
    }
    if got < HEADER_LEN {
        return Err(DatasetError::TruncatedPayload { expected: HEADER_LEN as u64, found: got as u64 });
    }
    let header = DatasetHeader::decode(&head)?;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    let expected = header.payload_len();
    if (payload.len() as u64) < expected {
        return Err(DatasetError::TruncatedPayload {
            expected: expected + HEADER_LEN as u64,
            found: payload.len() as u64 + HEADER_LEN as u64,
        });
    }
    let n = header.n_samples as usize;
    let n_values = n * header.sample_len();
    let planes: Vec<f32> = payload[..n_values * 4]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let labels: Vec<u32> = payload[n_values * 4..n_values * 4 + n * 4]
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();

    let manifest = Manifest::parse(&fs::read_to_string(manifest_path(path))?)?;
    if manifest.header != header {
        return Err(DatasetError::Manifest("manifest does not match the binary header".into()));
    }
    let classes = header.classes();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as u64 >= classes) {
        return Err(DatasetError::LabelOutOfRange { index, label, classes });
    }
    let dataset = Dataset { manifest, planes, labels };
    spot_check(&dataset)?;
    Ok(dataset)
}

fn spot_check(d: &Dataset) -> Result<(), DatasetError> {
    let h = d.header();
    let checked: Vec<usize> = (0..d.len()).step_by(SPOT_CHECK_STRIDE).collect();
    let bad = checked.par_iter().find_first(|&&i| {
        label_sample(&d.channel(i), h.n_select as usize, h.noise_power).value() as u32 != d.labels[i]
    });
    match bad {
        Some(&index) => Err(DatasetError::LabelMismatch {
            index,
            stored: d.labels[index],
            recomputed: label_sample(&d.channel(index), h.n_select as usize, h.noise_power).value() as u32,
        }),
        None => Ok(()),
    }
}
