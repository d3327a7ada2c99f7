//! Dataset ingestion and generation.
//!
//! IDX files (the MNIST/Fashion-MNIST container) are big-endian: a `u32`
//! magic (`0x00000803` images, `0x00000801` labels), the item count, and for
//! images the row and column counts, followed by one byte per pixel/label.
//! Gzip-compressed files are detected by their magic bytes and decompressed
//! transparently.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

fn check_header(bytes: &[u8], header_len: usize, magic: u32) -> Result<()> {
    if bytes.len() < 4 {
        return Err(Error::IdxLength {
            expected: header_len,
            found: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::IdxMagic { expected: magic, found });
    }
    if bytes.len() < header_len {
        return Err(Error::IdxLength {
            expected: header_len,
            found: bytes.len(),
        });
    }
    Ok(())
}

impl IdxImages {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        check_header(bytes, 16, IMAGES_MAGIC)?;
        let count = be_u32(bytes, 4) as usize;
        let rows = be_u32(bytes, 8) as usize;
        let cols = be_u32(bytes, 12) as usize;
        let expected = 16 + count * rows * cols;
        if bytes.len() != expected {
            return Err(Error::IdxLength {
                expected,
                found: bytes.len(),
            });
        }
        Ok(IdxImages {
            count,
            rows,
            cols,
            pixels: bytes[16..].to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        for v in [IMAGES_MAGIC, self.count as u32, self.rows as u32, self.cols as u32] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn image(&self, index: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[index * n..(index + 1) * n]
    }
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_header(bytes, 8, LABELS_MAGIC)?;
    let count = be_u32(bytes, 4) as usize;
    if bytes.len() != 8 + count {
        return Err(Error::IdxLength {
            expected: 8 + count,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..].to_vec())
}

pub fn idx_labels_to_bytes(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Reads a file, gunzipping it when it starts with the gzip magic.
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    IdxImages::parse(&read_maybe_gzip(path.as_ref())?)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_idx_labels(&read_maybe_gzip(path.as_ref())?)
}

/// Classification examples, each a `steps × features` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSequences {
    pub sequences: Vec<Matrix>,
    pub labels: Vec<usize>,
    pub steps: usize,
    pub features: usize,
    pub classes: usize,
}

impl LabeledSequences {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn examples(&self) -> Vec<(&Matrix, usize)> {
        self.sequences.iter().zip(self.labels.iter().copied()).collect()
    }

    /// The first `n` examples after a seeded shuffle.
    pub fn shuffled_subset(&self, n: usize, seed: u64) -> Result<LabeledSequences> {
        if n > self.len() {
            return Err(Error::InvalidArgument(format!(
                "requested {n} examples but only {} are available",
                self.len()
            )));
        }
        let order = permutation(self.len(), seed);
        Ok(LabeledSequences {
            sequences: order[..n].iter().map(|&i| self.sequences[i].clone()).collect(),
            labels: order[..n].iter().map(|&i| self.labels[i]).collect(),
            steps: self.steps,
            features: self.features,
            classes: self.classes,
        })
    }
}

/// One timestep per image row (top to bottom), pixels scaled by `1/255`.
pub fn rows_as_sequence(images: &IdxImages, labels: &[u8], classes: usize) -> Result<LabeledSequences> {
    if labels.len() != images.count {
        return Err(Error::InvalidArgument(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::TargetOutOfRange {
            target: bad as usize,
            classes,
        });
    }
    let sequences = (0..images.count)
        .map(|i| {
            let values = images.image(i).iter().map(|&p| p as f64 / 255.0).collect();
            Matrix::from_vec(images.rows, images.cols, values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledSequences {
        sequences,
        labels: labels.iter().map(|&l| l as usize).collect(),
        steps: images.rows,
        features: images.cols,
        classes,
    })
}

/// A seeded permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut Rng::new(seed));
    order
}

/// Splits a seeded permutation of `0..n` into batches; the last may be short.
pub fn make_batches(n: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    Ok(permutation(n, seed)
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub steps: usize,
    pub features: usize,
    pub signal_len: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Two-class signal detection: Gaussian noise everywhere, plus a `+1` block
/// of `signal_len` steps at a random position in feature 0 (class 0) or
/// feature 1 (class 1). Labels are exactly balanced up to parity.
pub fn synth_signal_task(cfg: &SynthConfig) -> Result<LabeledSequences> {
    if cfg.features < 2 {
        return Err(Error::InvalidArgument("signal task needs at least 2 features".into()));
    }
    if cfg.signal_len == 0 || cfg.signal_len >= cfg.steps {
        return Err(Error::InvalidArgument(format!(
            "signal_len must be in 1..{}, got {}",
            cfg.steps, cfg.signal_len
        )));
    }
    if !(cfg.noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise_sigma must be >= 0, got {}", cfg.noise_sigma)));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut labels: Vec<usize> = (0..cfg.count).map(|i| i % 2).collect();
    labels.shuffle(&mut rng);

    let mut sequences = Vec::with_capacity(cfg.count);
    for &label in &labels {
        let mut m = Matrix::zeros(cfg.steps, cfg.features);
        if cfg.noise_sigma > 0.0 {
            for v in m.as_mut_slice() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = cfg.noise_sigma * z;
            }
        }
        let positions = cfg.steps - cfg.signal_len + 1;
        let start = (rng.next_f64() * positions as f64) as usize;
        for t in start..start + cfg.signal_len {
            let v = m.get(t, label) + 1.0;
            m.set(t, label, v);
        }
        sequences.push(m);
    }
    Ok(LabeledSequences {
        sequences,
        labels,
        steps: cfg.steps,
        features: cfg.features,
        classes: 2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut b = magic.to_be_bytes().to_vec();
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b
    }

    #[test]
    fn parses_two_image_header() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 0x1c, 0, 0, 0, 0x1c];
        bytes.extend(std::iter::repeat_n(7u8, 1568));
        let imgs = IdxImages::parse(&bytes).unwrap();
        assert_eq!((imgs.count, imgs.rows, imgs.cols), (2, 28, 28));
        assert_eq!(imgs.to_bytes(), bytes);
    }

    #[test]
    fn parses_labels() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 3, 5, 0, 9];
        assert_eq!(parse_idx_labels(&bytes).unwrap(), vec![5, 0, 9]);
        assert_eq!(idx_labels_to_bytes(&[5, 0, 9]), bytes);
    }

    #[test]
    fn rejects_truncated_and_wrong_magic() {
        let mut bytes = header(IMAGES_MAGIC, &[2, 28, 28]);
        bytes.extend(vec![0u8; 1567]);
        assert!(matches!(
            IdxImages::parse(&bytes),
            Err(Error::IdxLength { expected: 1584, found: 1583 })
        ));
        let err = parse_idx_labels(&header(IMAGES_MAGIC, &[0])).unwrap_err();
        assert!(err.to_string().contains("0x00000803"), "{err}");
        assert!(matches!(parse_idx_labels(&[0, 0, 8]), Err(Error::IdxLength { .. })));
        assert!(matches!(IdxImages::parse(&header(IMAGES_MAGIC, &[1])), Err(Error::IdxLength { .. })));
        // trailing bytes are rejected as well
        assert!(parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 1, 4, 4]).is_err());
    }

    #[test]
    fn rows_become_timesteps() {
        let mut pixels = vec![0u8; 784];
        pixels[3 * 28 + 7] = 255;
        let imgs = IdxImages { count: 1, rows: 28, cols: 28, pixels };
        let data = rows_as_sequence(&imgs, &[4], 10).unwrap();
        let seq = &data.sequences[0];
        assert_eq!(seq.shape(), (28, 28));
        let nonzero: Vec<(usize, usize, f64)> = (0..28)
            .flat_map(|t| (0..28).map(move |d| (t, d)))
            .filter(|&(t, d)| seq.get(t, d) != 0.0)
            .map(|(t, d)| (t, d, seq.get(t, d)))
            .collect();
        assert_eq!(nonzero, vec![(3, 7, 1.0)]);
        assert_eq!(data.labels, vec![4]);
    }

    #[test]
    fn zero_image_is_zero_sequence() {
        let imgs = IdxImages { count: 1, rows: 28, cols: 28, pixels: vec![0; 784] };
        let data = rows_as_sequence(&imgs, &[0], 10).unwrap();
        assert!(data.sequences[0].as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkerboard_matches_pixel_indexing() {
        let pixels: Vec<u8> = (0..784).map(|k| if (k / 28 + k % 28) % 2 == 0 { 255 } else { 0 }).collect();
        let imgs = IdxImages { count: 1, rows: 28, cols: 28, pixels: pixels.clone() };
        let seq = &rows_as_sequence(&imgs, &[1], 10).unwrap().sequences[0];
        for t in 0..28 {
            for d in 0..28 {
                assert_eq!(seq.get(t, d), pixels[t * 28 + d] as f64 / 255.0);
                if d > 0 {
                    assert_ne!(seq.get(t, d), seq.get(t, d - 1));
                }
            }
        }
    }

    #[test]
    fn label_count_and_range_are_checked() {
        let imgs = IdxImages { count: 2, rows: 2, cols: 2, pixels: vec![0; 8] };
        assert!(rows_as_sequence(&imgs, &[1], 10).is_err());
        assert!(rows_as_sequence(&imgs, &[1, 10], 10).is_err());
    }

    #[test]
    fn batches_cover_a_permutation() {
        let b = make_batches(5, 2, 1).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        assert_eq!(make_batches(5, 2, 1).unwrap(), b);
        let mut all: Vec<usize> = make_batches(1000, 64, 9).unwrap().concat();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert!(make_batches(5, 0, 1).is_err());
    }

    #[test]
    fn noiseless_signal_task_is_exact() {
        let cfg = SynthConfig { count: 20, steps: 12, features: 3, signal_len: 4, noise_sigma: 0.0, seed: 5 };
        let data = synth_signal_task(&cfg).unwrap();
        for (seq, &label) in data.sequences.iter().zip(&data.labels) {
            let hot: Vec<usize> = (0..12).filter(|&t| seq.get(t, label) == 1.0).collect();
            assert_eq!(hot.len(), 4);
            assert_eq!(hot[3] - hot[0], 3);
            let ones = seq.as_slice().iter().filter(|&&v| v == 1.0).count();
            let zeros = seq.as_slice().iter().filter(|&&v| v == 0.0).count();
            assert_eq!((ones, zeros), (4, 36 - 4));
        }
    }

    #[test]
    fn signal_task_is_seeded_and_balanced() {
        let cfg = SynthConfig { count: 101, steps: 50, features: 4, signal_len: 5, noise_sigma: 0.3, seed: 7 };
        let a = synth_signal_task(&cfg).unwrap();
        assert_eq!(a, synth_signal_task(&cfg).unwrap());
        let ones = a.labels.iter().filter(|&&l| l == 1).count() as i64;
        assert!((ones * 2 - 101).abs() <= 2);
        let other = synth_signal_task(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.sequences, other.sequences);
    }

    #[test]
    fn signal_task_validates_config() {
        let cfg = SynthConfig { count: 4, steps: 5, features: 4, signal_len: 5, noise_sigma: 0.3, seed: 7 };
        assert!(synth_signal_task(&cfg).is_err());
        assert!(synth_signal_task(&SynthConfig { features: 1, signal_len: 2, ..cfg }).is_err());
    }
}
