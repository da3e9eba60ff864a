//! Datasets, preprocessing, splits, synthetic generation and the NLDS
//! on-disk format.
//!
//! NLDS layout (all integers little-endian):
//!
//! ```text
//! "NLDS" | version u32 = 1 | n u32 | H u32 | W u32 | C u32 | n_classes u32
//! | label_quality u8 (0 clean, 1 noisy) | n·H·W·C f64 pixels | n u8 labels
//! ```

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const NLDS_MAGIC: &[u8; 4] = b"NLDS";
pub const NLDS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelQuality {
    Clean,
    Noisy,
}

/// Images `(n, H, W, C)` with one class index per image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub label_quality: LabelQuality,
    pub name: String,
}

impl LabeledDataset {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        n_classes: usize,
        label_quality: LabelQuality,
        name: impl Into<String>,
    ) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::Dimension(format!(
                "images must be (n, H, W, C), got {:?}",
                images.shape()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Empty("dataset has no samples".into()));
        }
        if images.batch() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} images but {} labels",
                images.batch(),
                labels.len()
            )));
        }
        if !(2..=256).contains(&n_classes) {
            return Err(Error::InvalidArgument(format!(
                "n_classes must lie in 2..=256, got {n_classes}"
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::LabelOutOfRange { label, n_classes });
        }
        if !images.is_finite() {
            return Err(Error::InvalidArgument(
                "images contain non-finite values".into(),
            ));
        }
        Ok(Self {
            images,
            labels,
            n_classes,
            label_quality,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let images = self.images.gather(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(
            images,
            labels,
            self.n_classes,
            self.label_quality,
            self.name.clone(),
        )
    }

    /// Same images under a new labelling.
    pub fn relabel(&self, labels: Vec<usize>, quality: LabelQuality) -> Result<Self> {
        Self::new(
            self.images.clone(),
            labels,
            self.n_classes,
            quality,
            self.name.clone(),
        )
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.n_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_bytes(&bytes, name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (h, w, c) = self.image_shape();
        let to_u32 = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} {v} exceeds u32")))
        };
        let mut out = Vec::with_capacity(29 + self.images.len() * 8 + self.len());
        out.extend_from_slice(NLDS_MAGIC);
        out.extend_from_slice(&NLDS_VERSION.to_le_bytes());
        for (v, what) in [
            (self.len(), "n"),
            (h, "H"),
            (w, "W"),
            (c, "C"),
            (self.n_classes, "n_classes"),
        ] {
            out.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
        }
        out.push(match self.label_quality {
            LabelQuality::Clean => 0,
            LabelQuality::Noisy => 1,
        });
        for v in self.images.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        // n_classes ≤ 256 is enforced on construction
        out.extend(self.labels.iter().map(|&l| l as u8));
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], name: impl Into<String>) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != NLDS_MAGIC {
            return Err(Error::BadMagic {
                expected: "NLDS".into(),
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        let version = r.u32("version")?;
        if version != NLDS_VERSION {
            return Err(Error::Version {
                found: version,
                expected: NLDS_VERSION,
            });
        }
        let n = r.u32("n")? as usize;
        let h = r.u32("H")? as usize;
        let w = r.u32("W")? as usize;
        let c = r.u32("C")? as usize;
        let n_classes = r.u32("n_classes")? as usize;
        let label_quality = match r.take(1, "label quality")?[0] {
            0 => LabelQuality::Clean,
            1 => LabelQuality::Noisy,
            other => return Err(Error::Parse(format!("label quality byte {other}"))),
        };
        let count = n
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| Error::Parse("image dimensions overflow".into()))?;
        let pixel_bytes = r.take(
            count
                .checked_mul(8)
                .ok_or_else(|| Error::Parse("overflow".into()))?,
            "pixels",
        )?;
        let pixels: Vec<f64> = pixel_bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        let labels: Vec<usize> = r.take(n, "labels")?.iter().map(|&b| b as usize).collect();
        if r.pos != bytes.len() {
            return Err(Error::Parse(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let images = Tensor::new(vec![n, h, w, c], pixels)?;
        Self::new(images, labels, n_classes, label_quality, name)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Truncated(format!("{what}: need {len} bytes at offset {}", self.pos))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }
}

/// Maps raw `[0, 255]` pixel values onto `[0, 1]`.
///
/// Applying it twice is not detected when all values already lie in
/// `[0, 1]`; callers own that.
pub fn normalize(raw: &Tensor) -> Result<Tensor> {
    if let Some(v) = raw.data().iter().find(|v| !(0.0..=255.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!(
            "raw pixel value {v} outside [0, 255]"
        )));
    }
    Ok(raw.map(|v| v / 255.0))
}

/// Inverse of [`normalize`] onto integer grey levels.
pub fn to_raw(images: &Tensor) -> Result<Tensor> {
    if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!(
            "pixel value {v} outside [0, 1]"
        )));
    }
    Ok(images.map(|v| (v * 255.0).round()))
}

/// Disjoint train/validation partition of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub seed: u64,
    pub fraction: f64,
}

/// Random permutation from `seed`; the first `⌊fraction·n⌋` go to train.
pub fn split(dataset: &LabeledDataset, fraction: f64, seed: u64) -> Result<SplitPair> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = dataset.len();
    let n_train = (fraction * n as f64 + 1e-9).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Empty(format!(
            "splitting {n} samples at {fraction} leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::substream(seed, &[0x7370_6c69_74]));
    let (train_idx, val_idx) = order.split_at(n_train);
    Ok(SplitPair {
        train: dataset.subset(train_idx)?,
        val: dataset.subset(val_idx)?,
        train_indices: train_idx.to_vec(),
        val_indices: val_idx.to_vec(),
        seed,
        fraction,
    })
}

/// Parameters of the template-plus-noise image generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub image_shape: (usize, usize, usize),
    pub template_contrast: f64,
    pub pixel_noise_sigma: f64,
}

impl Default for SyntheticSpec {
    /// The desk-scale benchmark: 3 classes of 16×16 grey images.
    fn default() -> Self {
        Self {
            n_classes: 3,
            samples_per_class: 1000,
            image_shape: (16, 16, 1),
            template_contrast: DEFAULT_CONTRAST,
            pixel_noise_sigma: DEFAULT_SIGMA,
        }
    }
}

pub const DEFAULT_CONTRAST: f64 = 0.5;
pub const DEFAULT_SIGMA: f64 = 0.5;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.image_shape;
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::InvalidArgument(format!(
                "image height and width must be positive multiples of 4, got {h}×{w}×{c}"
            )));
        }
        if !(2..=256).contains(&self.n_classes) {
            return Err(Error::InvalidArgument(format!(
                "n_classes must lie in 2..=256, got {}",
                self.n_classes
            )));
        }
        if self.samples_per_class == 0 {
            return Err(Error::InvalidArgument(
                "samples_per_class must be positive".into(),
            ));
        }
        if !(self.template_contrast > 0.0 && self.template_contrast <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "template_contrast must lie in (0, 1], got {}",
                self.template_contrast
            )));
        }
        if !(self.pixel_noise_sigma >= 0.0 && self.pixel_noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pixel_noise_sigma must be non-negative, got {}",
                self.pixel_noise_sigma
            )));
        }
        Ok(())
    }

    /// Noise-free class templates, one `H·W·C` image per class.
    ///
    /// Class `k` combines stripes at angle `k·π/K` with a bright quadrant
    /// `k mod 4`, centred on mid-grey and scaled by the contrast.
    pub fn templates(&self) -> Vec<Vec<f64>> {
        let (h, w, c) = self.image_shape;
        let k_total = self.n_classes as f64;
        (0..self.n_classes)
            .map(|k| {
                let theta = k as f64 * std::f64::consts::PI / k_total;
                let (s, co) = theta.sin_cos();
                let quadrant = k % 4;
                let mut img = Vec::with_capacity(h * w * c);
                for y in 0..h {
                    for x in 0..w {
                        let phase = (y as f64 + 0.5) * s + (x as f64 + 0.5) * co;
                        let stripe = if (phase / 2.0).floor() as i64 % 2 == 0 {
                            1.0
                        } else {
                            0.0
                        };
                        let q = usize::from(y >= h / 2) * 2 + usize::from(x >= w / 2);
                        let block = if q == quadrant { 1.0 } else { 0.0 };
                        let pattern = 0.5 * stripe + 0.5 * block;
                        let v = 0.5 + self.template_contrast * (pattern - 0.5);
                        img.extend(std::iter::repeat_n(v, c));
                    }
                }
                img
            })
            .collect()
    }
}

/// Balanced clean dataset: sample `i` has class `i mod K` and equals its
/// class template plus clamped Gaussian pixel noise.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    let templates = spec.templates();
    let (h, w, c) = spec.image_shape;
    let n = spec.n_classes * spec.samples_per_class;
    let mut stream = rng::substream(seed, &[0x7379_6e74_68]);
    let noise = Normal::new(0.0, spec.pixel_noise_sigma)
        .map_err(|e| Error::InvalidArgument(format!("pixel noise: {e}")))?;
    let mut data = Vec::with_capacity(n * h * w * c);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % spec.n_classes;
        labels.push(k);
        for &t in &templates[k] {
            let v = if spec.pixel_noise_sigma == 0.0 {
                t
            } else {
                t + noise.sample(&mut stream)
            };
            data.push(v.clamp(0.0, 1.0));
        }
    }
    let images = Tensor::new(vec![n, h, w, c], data)?;
    LabeledDataset::new(
        images,
        labels,
        spec.n_classes,
        LabelQuality::Clean,
        format!("synthetic-{seed}"),
    )
}
