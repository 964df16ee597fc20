//! Datasets: synthetic 2-D generators, IDX image ingestion, forget/retain
//! splitting, and label corruption.

use crate::error::{Error, Result};
use crate::nn::tags;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use std::collections::BTreeSet;
use std::path::Path;

/// Features and labels with disjoint forget/retain/test index sets.
/// `forget_idx ∪ retain_idx` covers exactly the non-test examples.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub forget_idx: Vec<usize>,
    pub retain_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    /// Fraction the split was configured with (0 before splitting).
    pub forget_fraction: f64,
    /// Set when `load_idx` was asked for more examples than the file holds.
    pub limit_clamped: bool,
}

impl SplitDataset {
    fn unsplit(features: Tensor, labels: Vec<usize>, n_classes: usize) -> Self {
        let n = labels.len();
        SplitDataset {
            features,
            labels,
            n_classes,
            forget_idx: Vec::new(),
            retain_idx: (0..n).collect(),
            test_idx: Vec::new(),
            forget_fraction: 0.0,
            limit_clamped: false,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn train_len(&self) -> usize {
        self.forget_idx.len() + self.retain_idx.len()
    }

    /// All non-test indices, ascending.
    pub fn train_idx(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .forget_idx
            .iter()
            .chain(self.retain_idx.iter())
            .copied()
            .collect();
        v.sort_unstable();
        v
    }

    /// Check the structural invariants: disjointness, coverage, and the
    /// configured forget fraction within one sample.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let mut seen = vec![0u8; n];
        for (&i, tag) in self
            .forget_idx
            .iter()
            .map(|i| (i, 1u8))
            .chain(self.retain_idx.iter().map(|i| (i, 2)))
            .chain(self.test_idx.iter().map(|i| (i, 3)))
        {
            if i >= n {
                return Err(Error::Index {
                    what: "split index".into(),
                    got: i,
                    bound: n,
                });
            }
            if seen[i] != 0 {
                return Err(Error::Contract(format!(
                    "index {i} appears in more than one split set"
                )));
            }
            seen[i] = tag;
        }
        if seen.iter().any(|&t| t == 0) {
            return Err(Error::Contract(
                "split sets do not cover the dataset".into(),
            ));
        }
        let train = self.train_len();
        if train > 0 && self.forget_fraction > 0.0 {
            let want = self.forget_fraction * train as f64;
            if (self.forget_idx.len() as f64 - want).abs() > 1.0 {
                return Err(Error::Contract(format!(
                    "forget set size {} is more than one sample away from {want:.2}",
                    self.forget_idx.len()
                )));
            }
        }
        Ok(())
    }

    /// Rows + labels for `idx`, recording the touched indices.
    pub fn batch(&self, idx: &[usize], log: &mut AccessLog) -> (Tensor, Vec<usize>) {
        log.record(idx);
        self.batch_unlogged(idx)
    }

    pub fn batch_unlogged(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.features.cols();
        let mut data = Vec::with_capacity(idx.len() * d);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        (Tensor::matrix(idx.len(), d, data), labels)
    }

    /// Batch with a replacement label vector (random-labeling paths).
    pub fn batch_with_labels(
        &self,
        idx: &[usize],
        labels: &[usize],
        log: &mut AccessLog,
    ) -> (Tensor, Vec<usize>) {
        log.record(idx);
        let (x, _) = self.batch_unlogged(idx);
        (x, idx.iter().map(|&i| labels[i]).collect())
    }
}

/// Records which example indices a training run gathered.
#[derive(Debug, Clone, Default)]
pub struct AccessLog {
    pub touched: BTreeSet<usize>,
}

impl AccessLog {
    pub fn new() -> Self {
        AccessLog::default()
    }

    pub fn record(&mut self, idx: &[usize]) {
        self.touched.extend(idx.iter().copied());
    }

    /// Indices from `set` that were touched.
    pub fn overlap(&self, set: &[usize]) -> Vec<usize> {
        set.iter()
            .copied()
            .filter(|i| self.touched.contains(i))
            .collect()
    }
}

/// Two interleaving half-circle arcs (class 0 on the unit circle at the
/// origin, class 1 on the unit circle at (1, 0.5)), plus Gaussian noise.
pub fn make_moons(n: usize, noise: f64, seed: u64) -> Result<SplitDataset> {
    if n < 4 {
        return Err(Error::Config(format!("make_moons needs n >= 4, got {n}")));
    }
    if noise < 0.0 {
        return Err(Error::Config(format!("noise must be >= 0, got {noise}")));
    }
    let n0 = n - n / 2;
    let n1 = n / 2;
    let mut rng = SplitMix64::derive(seed, tags::MOONS);
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    let arc = |count: usize, i: usize| -> f64 {
        if count == 1 {
            0.0
        } else {
            std::f64::consts::PI * i as f64 / (count - 1) as f64
        }
    };
    for i in 0..n0 {
        let t = arc(n0, i);
        let (gx, gy) = if noise > 0.0 { rng.gaussian_pair() } else { (0.0, 0.0) };
        data.push((t.cos() + noise * gx) as f32);
        data.push((t.sin() + noise * gy) as f32);
        labels.push(0);
    }
    for i in 0..n1 {
        let t = arc(n1, i);
        let (gx, gy) = if noise > 0.0 { rng.gaussian_pair() } else { (0.0, 0.0) };
        data.push((1.0 - t.cos() + noise * gx) as f32);
        data.push((0.5 - t.sin() + noise * gy) as f32);
        labels.push(1);
    }
    Ok(SplitDataset::unsplit(
        Tensor::matrix(n, 2, data),
        labels,
        2,
    ))
}

/// Isotropic Gaussian clusters with class centers on a circle of radius 3
/// at a seeded phase (maximally separated center polygon).
pub fn make_blobs(n: usize, classes: usize, spread: f64, seed: u64) -> Result<SplitDataset> {
    if classes < 2 {
        return Err(Error::Config(format!(
            "make_blobs needs classes >= 2, got {classes}"
        )));
    }
    if n < classes {
        return Err(Error::Config(format!(
            "make_blobs needs n >= classes, got n={n} classes={classes}"
        )));
    }
    let mut rng = SplitMix64::derive(seed, tags::BLOBS);
    let phase = rng.uniform(0.0, 2.0 * std::f64::consts::PI);
    let base = n / classes;
    let rem = n % classes;
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        let angle = phase + 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
        let (cx, cy) = (3.0 * angle.cos(), 3.0 * angle.sin());
        let count = base + usize::from(c < rem);
        for _ in 0..count {
            let (gx, gy) = if spread > 0.0 { rng.gaussian_pair() } else { (0.0, 0.0) };
            data.push((cx + spread * gx) as f32);
            data.push((cy + spread * gy) as f32);
            labels.push(c);
        }
    }
    let n_total = labels.len();
    Ok(SplitDataset::unsplit(
        Tensor::matrix(n_total, 2, data),
        labels,
        classes,
    ))
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    if bytes.len() < offset + 4 {
        return Err(Error::Truncated {
            offset,
            needed: offset + 4 - bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Load the first `limit` examples from an IDX image/label file pair,
/// pixels scaled to `[0,1]`. If the files hold fewer than `limit` examples
/// everything available is returned and `limit_clamped` is set.
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: usize) -> Result<SplitDataset> {
    let img = read_file(images_path)?;
    let lab = read_file(labels_path)?;

    let img_magic = be_u32(&img, 0)?;
    if img_magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad image magic {:#010x} in {} (expected {:#010x})",
            img_magic,
            images_path.display(),
            IDX_IMAGES_MAGIC
        )));
    }
    let lab_magic = be_u32(&lab, 0)?;
    if lab_magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad label magic {:#010x} in {} (expected {:#010x})",
            lab_magic,
            labels_path.display(),
            IDX_LABELS_MAGIC
        )));
    }

    let n_img = be_u32(&img, 4)? as usize;
    let rows = be_u32(&img, 8)? as usize;
    let cols = be_u32(&img, 12)? as usize;
    let n_lab = be_u32(&lab, 4)? as usize;
    if n_img != n_lab {
        return Err(Error::Format(format!(
            "image count {n_img} does not match label count {n_lab}"
        )));
    }

    let take = limit.min(n_img);
    let limit_clamped = limit > n_img;
    let pixels = rows * cols;

    let img_need = 16 + take * pixels;
    if img.len() < img_need {
        return Err(Error::Truncated {
            offset: img.len(),
            needed: img_need - img.len(),
        });
    }
    let lab_need = 8 + take;
    if lab.len() < lab_need {
        return Err(Error::Truncated {
            offset: lab.len(),
            needed: lab_need - lab.len(),
        });
    }

    let data: Vec<f32> = img[16..16 + take * pixels]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    let labels: Vec<usize> = lab[8..8 + take].iter().map(|&b| b as usize).collect();
    let n_classes = labels.iter().copied().max().map_or(2, |m| (m + 1).max(2));

    let mut ds = SplitDataset::unsplit(Tensor::matrix(take, pixels, data), labels, n_classes);
    ds.limit_clamped = limit_clamped;
    Ok(ds)
}

/// Re-partition a dataset: a seeded test split first, then a uniformly
/// random forget selection from the remaining training portion.
pub fn split_forget_retain(
    ds: &SplitDataset,
    forget_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<SplitDataset> {
    if !(forget_fraction > 0.0 && forget_fraction < 1.0) {
        return Err(Error::Config(format!(
            "forget_fraction must be in (0,1), got {forget_fraction}"
        )));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!(
            "test_fraction must be in [0,1), got {test_fraction}"
        )));
    }
    let n = ds.len();
    let mut rng = SplitMix64::derive(seed, tags::SPLIT);
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);

    let n_test = (test_fraction * n as f64).round() as usize;
    let mut test_idx: Vec<usize> = idx[..n_test].to_vec();
    let train: Vec<usize> = idx[n_test..].to_vec();
    let n_forget = ((forget_fraction * train.len() as f64).round() as usize)
        .clamp(1, train.len().saturating_sub(1));
    let mut forget_idx: Vec<usize> = train[..n_forget].to_vec();
    let mut retain_idx: Vec<usize> = train[n_forget..].to_vec();
    test_idx.sort_unstable();
    forget_idx.sort_unstable();
    retain_idx.sort_unstable();

    let out = SplitDataset {
        features: ds.features.clone(),
        labels: ds.labels.clone(),
        n_classes: ds.n_classes,
        forget_idx,
        retain_idx,
        test_idx,
        forget_fraction,
        limit_clamped: ds.limit_clamped,
    };
    out.validate()?;
    Ok(out)
}

/// Full label vector with every index in `idx_set` re-labeled uniformly
/// over the other classes (never the original). Draws happen in `idx_set`
/// order from the seed's corruption stream.
pub fn corrupt_labels(ds: &SplitDataset, idx_set: &[usize], seed: u64) -> Result<Vec<usize>> {
    if ds.n_classes < 2 {
        return Err(Error::Config(
            "corrupt_labels needs at least 2 classes".into(),
        ));
    }
    let mut rng = SplitMix64::derive(seed, tags::CORRUPT);
    let mut labels = ds.labels.clone();
    for &i in idx_set {
        if i >= labels.len() {
            return Err(Error::Index {
                what: "corrupt index".into(),
                got: i,
                bound: labels.len(),
            });
        }
        labels[i] = rng.label_excluding(ds.n_classes, ds.labels[i]);
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_noiseless_points_lie_on_the_arcs() {
        let ds = make_moons(200, 0.0, 1).unwrap();
        for i in 0..ds.len() {
            let (x, y) = (ds.features.row(i)[0] as f64, ds.features.row(i)[1] as f64);
            let r2 = if ds.labels[i] == 0 {
                x * x + y * y
            } else {
                (x - 1.0) * (x - 1.0) + (y - 0.5) * (y - 0.5)
            };
            assert!((r2 - 1.0).abs() < 1e-6, "point {i} off its arc: r2={r2}");
        }
    }

    #[test]
    fn moons_are_balanced_and_deterministic() {
        let ds = make_moons(200, 0.15, 7).unwrap();
        assert_eq!(ds.labels.iter().filter(|&&c| c == 0).count(), 100);
        assert_eq!(ds.labels.iter().filter(|&&c| c == 1).count(), 100);
        let ds2 = make_moons(200, 0.15, 7).unwrap();
        assert_eq!(ds.features.data, ds2.features.data);
        assert!(make_moons(3, 0.1, 1).is_err());
    }

    #[test]
    fn blobs_with_zero_spread_sit_on_their_centers() {
        let ds = make_blobs(90, 3, 0.0, 5).unwrap();
        for c in 0..3 {
            let rows: Vec<usize> = (0..90).filter(|&i| ds.labels[i] == c).collect();
            assert_eq!(rows.len(), 30);
            let first = ds.features.row(rows[0]).to_vec();
            for &i in &rows {
                assert_eq!(ds.features.row(i), &first[..]);
            }
            let r = (first[0] as f64).hypot(first[1] as f64);
            assert!((r - 3.0).abs() < 1e-5);
        }
    }

    #[test]
    fn blobs_remainder_spreads_counts_within_one() {
        let ds = make_blobs(91, 3, 1.0, 5).unwrap();
        let counts: Vec<usize> = (0..3)
            .map(|c| ds.labels.iter().filter(|&&l| l == c).count())
            .collect();
        assert_eq!(counts.iter().sum::<usize>(), 91);
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        assert!(make_blobs(10, 1, 1.0, 5).is_err());
    }

    #[test]
    fn split_sizes_follow_the_fraction() {
        let ds = make_moons(200, 0.1, 3).unwrap();
        let s = split_forget_retain(&ds, 0.05, 0.0, 11).unwrap();
        assert_eq!(s.forget_idx.len(), 10);
        assert_eq!(s.retain_idx.len(), 190);
        s.validate().unwrap();

        let s2 = split_forget_retain(&ds, 0.02, 0.0, 11).unwrap();
        assert_eq!(s2.forget_idx.len(), 4);

        let s3 = split_forget_retain(&ds, 0.05, 0.0, 11).unwrap();
        assert_eq!(s.forget_idx, s3.forget_idx);
        assert_eq!(s.test_idx, s3.test_idx);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let ds = make_moons(20, 0.1, 3).unwrap();
        assert!(split_forget_retain(&ds, 0.0, 0.0, 1).is_err());
        assert!(split_forget_retain(&ds, 1.0, 0.0, 1).is_err());
        assert!(split_forget_retain(&ds, 0.1, 1.0, 1).is_err());
    }

    #[test]
    fn corrupt_two_class_always_flips() {
        let ds = make_moons(40, 0.1, 9).unwrap();
        let idx: Vec<usize> = vec![0, 5, 7, 21];
        let out = corrupt_labels(&ds, &idx, 4).unwrap();
        for i in 0..40 {
            if idx.contains(&i) {
                assert_eq!(out[i], 1 - ds.labels[i]);
            } else {
                assert_eq!(out[i], ds.labels[i]);
            }
        }
    }

    #[test]
    fn corrupt_matches_replay_of_documented_generator() {
        let ds = make_blobs(30, 3, 1.0, 2).unwrap();
        let idx: Vec<usize> = vec![3, 4, 10, 29];
        let seed = 77u64;
        let out = corrupt_labels(&ds, &idx, seed).unwrap();

        // independent replay: splitmix64 restated, derive chain restated
        let next = |s: &mut u64| -> u64 {
            *s = s.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = *s;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        };
        let mut parent = seed ^ 3u64.wrapping_mul(0xA24B_AED4_963E_E407);
        let mut state = next(&mut parent);
        for &i in &idx {
            let u = (next(&mut state) >> 11) as f64 / (1u64 << 53) as f64;
            let r = ((u * 2.0) as usize).min(1); // classes-1 = 2
            let expected = if r >= ds.labels[i] { r + 1 } else { r };
            assert_eq!(out[i], expected, "index {i}");
        }
    }

    #[test]
    fn corrupt_never_keeps_original_label() {
        let ds = make_blobs(60, 4, 1.0, 8).unwrap();
        let idx: Vec<usize> = (0..60).collect();
        for seed in 0..20 {
            let out = corrupt_labels(&ds, &idx, seed).unwrap();
            for i in 0..60 {
                assert_ne!(out[i], ds.labels[i]);
            }
        }
    }

    #[test]
    fn idx_round_trip_with_tiny_files() {
        let dir = std::env::temp_dir().join(format!("mcu-idx-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let img_path = dir.join("images.idx");
        let lab_path = dir.join("labels.idx");

        // 3 images of 28x28; pixel values constant per image
        let mut img = Vec::new();
        img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img.extend_from_slice(&3u32.to_be_bytes());
        img.extend_from_slice(&28u32.to_be_bytes());
        img.extend_from_slice(&28u32.to_be_bytes());
        for v in [0u8, 128, 255] {
            img.extend(std::iter::repeat(v).take(28 * 28));
        }
        let mut lab = Vec::new();
        lab.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lab.extend_from_slice(&3u32.to_be_bytes());
        lab.extend_from_slice(&[7u8, 1, 3]);
        std::fs::write(&img_path, &img).unwrap();
        std::fs::write(&lab_path, &lab).unwrap();

        let ds = load_idx(&img_path, &lab_path, 2).unwrap();
        assert_eq!(ds.features.shape, vec![2, 784]);
        assert_eq!(ds.labels, vec![7, 1]);
        assert!(!ds.limit_clamped);

        let all = load_idx(&img_path, &lab_path, 10).unwrap();
        assert_eq!(all.len(), 3);
        assert!(all.limit_clamped);
        assert_eq!(all.features.row(2)[0], 1.0); // byte 255 -> 1.0
        assert_eq!(all.features.row(1)[0], 128.0 / 255.0);

        // corrupt the magic
        let mut bad = img.clone();
        bad[3] = 0x99;
        std::fs::write(&img_path, &bad).unwrap();
        let err = load_idx(&img_path, &lab_path, 2).unwrap_err().to_string();
        assert!(err.contains("0x00000899"), "{err}");

        // truncate the payload
        std::fs::write(&img_path, &img[..img.len() - 100]).unwrap();
        assert!(matches!(
            load_idx(&img_path, &lab_path, 3),
            Err(Error::Truncated { .. })
        ));

        std::fs::remove_dir_all(&dir).ok();
    }
}
