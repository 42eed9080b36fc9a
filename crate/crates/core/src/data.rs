//! Datasets: MNIST IDX ingestion, amplitude scaling, SNR-controlled noise and
//! synthetic Gaussian data with a known covariance.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

pub const NUM_CLASSES: usize = 10;
pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Transformations applied to a dataset since it was loaded or generated.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub amplitude: f64,
    pub snr: Option<f64>,
    pub seed: Option<u64>,
}

impl Default for DatasetMeta {
    fn default() -> Self {
        DatasetMeta {
            amplitude: 1.0,
            snr: None,
            seed: None,
        }
    }
}

/// Samples as rows of `images` with one-hot `labels` over [`NUM_CLASSES`].
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Matrix,
    pub labels: Matrix,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(images: Matrix, classes: &[usize]) -> Result<Self> {
        if images.rows() != classes.len() {
            return Err(Error::Consistency(format!(
                "{} samples but {} labels",
                images.rows(),
                classes.len()
            )));
        }
        let labels = one_hot(classes)?;
        Ok(Dataset {
            images,
            labels,
            meta: DatasetMeta::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.images.cols()
    }

    /// Class index of every sample (argmax of the one-hot row).
    pub fn classes(&self) -> Vec<usize> {
        (0..self.len())
            .map(|i| self.labels.row(i).iter().position(|&v| v == 1.0).unwrap_or(0))
            .collect()
    }

    /// Copies the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: gather_rows(&self.images, indices),
            labels: gather_rows(&self.labels, indices),
            meta: self.meta.clone(),
        }
    }

    /// Seeded class-stratified draw of `n` samples. Each class contributes in
    /// proportion to its frequency (largest remainders fill the rest); the
    /// selection keeps the original sample order.
    pub fn stratified_subset(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n > self.len() {
            return Err(Error::invalid(format!(
                "subset of {n} requested from {} samples",
                self.len()
            )));
        }
        let classes = self.classes();
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
        for (i, &c) in classes.iter().enumerate() {
            by_class[c].push(i);
        }
        let total = self.len() as f64;
        let mut quota: Vec<usize> = by_class
            .iter()
            .map(|v| (v.len() as f64 * n as f64 / total).floor() as usize)
            .collect();
        let mut remainders: Vec<(f64, usize)> = by_class
            .iter()
            .enumerate()
            .map(|(c, v)| (v.len() as f64 * n as f64 / total - quota[c] as f64, c))
            .collect();
        remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let missing = n - quota.iter().sum::<usize>();
        for &(_, c) in remainders.iter().take(missing) {
            quota[c] += 1;
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = Vec::with_capacity(n);
        for (members, &q) in by_class.iter_mut().zip(&quota) {
            members.shuffle(&mut rng);
            chosen.extend_from_slice(&members[..q]);
        }
        chosen.sort_unstable();
        Ok(self.select(&chosen))
    }
}

fn gather_rows(m: &Matrix, indices: &[usize]) -> Matrix {
    let cols = m.cols();
    let mut data = Vec::with_capacity(indices.len() * cols);
    for &i in indices {
        data.extend_from_slice(m.row(i));
    }
    Matrix::from_raw(indices.len(), cols, data)
}

pub fn one_hot(classes: &[usize]) -> Result<Matrix> {
    let mut m = Matrix::zeros(classes.len(), NUM_CLASSES);
    for (i, &c) in classes.iter().enumerate() {
        if c >= NUM_CLASSES {
            return Err(Error::invalid(format!("class {c} out of range")));
        }
        m[(i, c)] = 1.0;
    }
    Ok(m)
}

/// Header of an IDX file: the magic word and the dimension list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<u32>,
}

impl IdxHeader {
    pub fn payload_len(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len());
        out.extend_from_slice(&self.magic.to_be_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out
    }
}

/// Parses an unsigned-byte IDX buffer (big-endian magic and dimensions).
pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<(IdxHeader, Vec<u8>)> {
    let fmt_err = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| fmt_err("truncated header".into()))
    };
    let magic = word(0)?;
    if magic != IDX_IMAGES_MAGIC && magic != IDX_LABELS_MAGIC {
        return Err(fmt_err(format!("unsupported magic {magic:#010x}")));
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (1..=ndims).map(word).collect::<Result<Vec<_>>>()?;
    let header = IdxHeader { magic, dims };
    let start = 4 * (ndims + 1);
    let payload = &bytes[start..];
    let expected = header.payload_len();
    if payload.len() < expected {
        return Err(fmt_err(format!(
            "truncated payload: {} of {expected} bytes",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(fmt_err(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }
    Ok((header, payload.to_vec()))
}

pub fn read_idx(path: &Path) -> Result<(IdxHeader, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes, path)
}

pub fn write_idx(path: &Path, header: &IdxHeader, payload: &[u8]) -> Result<()> {
    if header.payload_len() != payload.len() {
        return Err(Error::Consistency(format!(
            "header describes {} bytes, payload has {}",
            header.payload_len(),
            payload.len()
        )));
    }
    let mut bytes = header.encode();
    bytes.extend_from_slice(payload);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads an MNIST image/label file pair. Pixels are scaled to `[0, 1]`.
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (ih, pixels) = read_idx(images_path)?;
    if ih.magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            path: images_path.to_path_buf(),
            msg: format!("expected image magic {IDX_IMAGES_MAGIC}, got {}", ih.magic),
        });
    }
    let (lh, labels) = read_idx(labels_path)?;
    if lh.magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            msg: format!("expected label magic {IDX_LABELS_MAGIC}, got {}", lh.magic),
        });
    }
    let n = ih.dims[0] as usize;
    let d = ih.dims[1..].iter().map(|&x| x as usize).product::<usize>();
    if lh.dims[0] as usize != n {
        return Err(Error::Consistency(format!("{n} images but {} labels", lh.dims[0])));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            msg: format!("label {bad} out of range"),
        });
    }
    let images = Matrix::from_raw(n, d, pixels.iter().map(|&p| p as f64 / 255.0).collect());
    let classes: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    Dataset::new(images, &classes)
}

/// Writes a dataset of square images as an IDX pair, quantizing pixels in
/// `[0, 1]` to bytes.
pub fn save_mnist(d: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let side = (d.dim() as f64).sqrt() as usize;
    if side * side != d.dim() {
        return Err(Error::invalid(format!("{} pixels is not a square image", d.dim())));
    }
    let pixels: Vec<u8> = d
        .images
        .data()
        .iter()
        .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let n = d.len() as u32;
    write_idx(
        images_path,
        &IdxHeader {
            magic: IDX_IMAGES_MAGIC,
            dims: vec![n, side as u32, side as u32],
        },
        &pixels,
    )?;
    let labels: Vec<u8> = d.classes().iter().map(|&c| c as u8).collect();
    write_idx(
        labels_path,
        &IdxHeader {
            magic: IDX_LABELS_MAGIC,
            dims: vec![n],
        },
        &labels,
    )
}

/// Multiplies every pixel by `a`.
pub fn scale_amplitude(d: &Dataset, a: f64) -> Result<Dataset> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::invalid(format!("amplitude must be > 0, got {a}")));
    }
    let mut out = d.clone();
    out.images.data_mut().iter_mut().for_each(|p| *p *= a);
    out.meta.amplitude *= a;
    Ok(out)
}

/// Variance of all pixel values pooled over the dataset (divide-by-N).
pub fn pooled_variance(m: &Matrix) -> f64 {
    let data = m.data();
    if data.is_empty() {
        return 0.0;
    }
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Adds i.i.d. `N(0, σ_s²/snr)` noise to every pixel, where `σ_s²` is the
/// pooled pixel variance. Noisy pixels are not clipped.
pub fn inject_noise_snr(d: &Dataset, snr: f64, seed: u64) -> Result<Dataset> {
    if !(snr > 0.0) {
        return Err(Error::invalid(format!("snr must be > 0, got {snr}")));
    }
    let signal_var = pooled_variance(&d.images);
    if !(signal_var > 0.0) {
        return Err(Error::DegenerateData("pooled pixel variance is zero".into()));
    }
    let sigma = (signal_var / snr).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = d.clone();
    for p in out.images.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *p += sigma * z;
    }
    out.meta.snr = Some(snr);
    out.meta.seed = Some(seed);
    Ok(out)
}

/// `n` samples `x = B z` with `z ~ N(0, I)` and `B = R^½`, labelled by the
/// side of a seeded random hyperplane (classes 0 and 1).
pub fn synthetic_gaussian(n: usize, d: usize, r: &Matrix, seed: u64) -> Result<Dataset> {
    if r.shape() != (d, d) {
        return Err(Error::dims(format!("{d}x{d} covariance"), format!("{:?}", r.shape())));
    }
    let b = linalg::matrix_sqrt(r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let mut data = Vec::with_capacity(n * d);
    let mut classes = Vec::with_capacity(n);
    let mut z = vec![0.0; d];
    for _ in 0..n {
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let start = data.len();
        for i in 0..d {
            data.push(linalg::dot(b.row(i), &z));
        }
        let side = linalg::dot(&data[start..], &normal);
        classes.push(usize::from(side > 0.0));
    }
    let mut ds = Dataset::new(Matrix::from_raw(n, d, data), &classes)?;
    ds.meta.seed = Some(seed);
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let images = Matrix::new(4, 4, (0..16).map(|i| i as f64 / 15.0).collect()).unwrap();
        Dataset::new(images, &[0, 1, 2, 1]).unwrap()
    }

    #[test]
    fn one_hot_rows_sum_to_one() {
        let d = tiny();
        for i in 0..d.len() {
            assert_eq!(d.labels.row(i).iter().sum::<f64>(), 1.0);
        }
        assert_eq!(d.classes(), vec![0, 1, 2, 1]);
        assert!(one_hot(&[10]).is_err());
    }

    #[test]
    fn parse_rejects_bad_magic_and_truncation() {
        let p = Path::new("mem");
        let mut bytes = IdxHeader {
            magic: 0x0805,
            dims: vec![1],
        }
        .encode();
        bytes.push(0);
        assert!(matches!(parse_idx(&bytes, p), Err(Error::Format { .. })));

        let mut bytes = IdxHeader {
            magic: IDX_LABELS_MAGIC,
            dims: vec![3],
        }
        .encode();
        bytes.extend_from_slice(&[1, 2]);
        assert!(matches!(parse_idx(&bytes, p), Err(Error::Format { .. })));

        assert!(matches!(parse_idx(&[0, 0], p), Err(Error::Format { .. })));
    }

    #[test]
    fn one_white_image() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        write_idx(
            &ip,
            &IdxHeader {
                magic: IDX_IMAGES_MAGIC,
                dims: vec![1, 28, 28],
            },
            &[255; 784],
        )
        .unwrap();
        write_idx(
            &lp,
            &IdxHeader {
                magic: IDX_LABELS_MAGIC,
                dims: vec![1],
            },
            &[7],
        )
        .unwrap();
        let d = load_mnist(&ip, &lp).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.dim(), 784);
        assert!(d.images.data().iter().all(|&p| p == 1.0));
        assert_eq!(d.classes(), vec![7]);
    }

    #[test]
    fn labels_file_with_image_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        write_idx(
            &ip,
            &IdxHeader {
                magic: IDX_IMAGES_MAGIC,
                dims: vec![1, 2, 2],
            },
            &[0; 4],
        )
        .unwrap();
        write_idx(
            &lp,
            &IdxHeader {
                magic: IDX_IMAGES_MAGIC,
                dims: vec![1, 1, 1],
            },
            &[0],
        )
        .unwrap();
        assert!(matches!(load_mnist(&ip, &lp), Err(Error::Format { .. })));
    }

    #[test]
    fn count_mismatch_is_consistency_error() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        write_idx(
            &ip,
            &IdxHeader {
                magic: IDX_IMAGES_MAGIC,
                dims: vec![2, 2, 2],
            },
            &[0; 8],
        )
        .unwrap();
        write_idx(
            &lp,
            &IdxHeader {
                magic: IDX_LABELS_MAGIC,
                dims: vec![3],
            },
            &[0, 1, 2],
        )
        .unwrap();
        assert!(matches!(load_mnist(&ip, &lp), Err(Error::Consistency(_))));
    }

    #[test]
    fn amplitude_scaling() {
        let d = tiny();
        assert_eq!(scale_amplitude(&d, 1.0).unwrap().images, d.images);
        let six = scale_amplitude(&scale_amplitude(&d, 2.0).unwrap(), 3.0).unwrap();
        let direct = scale_amplitude(&d, 6.0).unwrap();
        assert!(six.images.max_abs_diff(&direct.images).unwrap() < 1e-15);
        assert_eq!(six.meta.amplitude, 6.0);
        assert_eq!(scale_amplitude(&d, 4.0).unwrap().images.max_abs(), 4.0);
        assert!(scale_amplitude(&d, 0.0).is_err());
        assert!(scale_amplitude(&d, -1.0).is_err());
    }

    #[test]
    fn noise_injection_basics() {
        let d = tiny();
        let same = inject_noise_snr(&d, 1e12, 3).unwrap();
        assert!(same.images.max_abs_diff(&d.images).unwrap() < 1e-5);
        assert_eq!(same.labels, d.labels);
        assert_eq!(same.meta.snr, Some(1e12));
        assert_eq!(
            inject_noise_snr(&d, 2.0, 9).unwrap(),
            inject_noise_snr(&d, 2.0, 9).unwrap()
        );
        assert!(inject_noise_snr(&d, 0.0, 1).is_err());
        let flat = Dataset::new(Matrix::zeros(2, 3), &[0, 1]).unwrap();
        assert!(matches!(inject_noise_snr(&flat, 1.0, 1), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn synthetic_zero_covariance() {
        let d = synthetic_gaussian(20, 3, &Matrix::zeros(3, 3), 1).unwrap();
        assert!(d.images.data().iter().all(|&x| x == 0.0));
        assert_eq!(
            synthetic_gaussian(20, 3, &Matrix::identity(3), 5).unwrap(),
            synthetic_gaussian(20, 3, &Matrix::identity(3), 5).unwrap()
        );
        assert!(matches!(
            synthetic_gaussian(5, 2, &Matrix::from_diag(&[1.0, -1.0]), 1),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn stratified_subset_keeps_proportions() {
        let classes: Vec<usize> = (0..1000).map(|i| if i % 4 == 0 { 3 } else { i % 3 }).collect();
        let d = Dataset::new(Matrix::zeros(1000, 1), &classes).unwrap();
        let s = d.stratified_subset(100, 1).unwrap();
        assert_eq!(s.len(), 100);
        let count = |c| s.classes().iter().filter(|&&x| x == c).count();
        assert_eq!(count(3), 25);
        assert_eq!(s, d.stratified_subset(100, 1).unwrap());
        assert!(d.stratified_subset(1001, 1).is_err());
    }
}
