//! Dataset loading (IDX, CSV), IDX writing, and input/label encodings.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Grayscale images in `[0, 1]` with class labels. Images are stored
/// row-major, one flat vector of `width * height` pixels each.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub width: usize,
    pub height: usize,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(
        images: Vec<Vec<f64>>,
        labels: Vec<usize>,
        width: usize,
        height: usize,
        n_classes: usize,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::CountMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        for (k, img) in images.iter().enumerate() {
            if img.len() != width * height {
                return Err(Error::Input(format!(
                    "image {k} has {} pixels, expected {}",
                    img.len(),
                    width * height
                )));
            }
            if let Some(v) = img.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Input(format!("image {k} has pixel {v} outside [0, 1]")));
            }
        }
        if let Some((k, l)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(Error::Input(format!(
                "label {l} of sample {k} out of range for {n_classes} classes"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            width,
            height,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `n` samples (or all, if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        self.select(0..n.min(self.len()))
    }

    /// Samples reordered by `order`.
    pub fn reorder(&self, order: &[usize]) -> Dataset {
        self.select(order.iter().copied())
    }

    fn select(&self, idx: impl Iterator<Item = usize> + Clone) -> Dataset {
        Dataset {
            images: idx.clone().map(|k| self.images[k].clone()).collect(),
            labels: idx.map(|k| self.labels[k]).collect(),
            width: self.width,
            height: self.height,
            n_classes: self.n_classes,
        }
    }

    /// Re-declare the class count, checking every label against it.
    pub fn with_classes(mut self, n_classes: usize) -> Result<Self> {
        if let Some(&l) = self.labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Input(format!("label {l} out of range for {n_classes} classes")));
        }
        self.n_classes = n_classes;
        Ok(self)
    }
}

/// Seeded shuffle of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                path: self.path.to_path_buf(),
                detail: format!(
                    "{what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_magic(r: &mut Reader, expected: u32) -> Result<()> {
    let found = r.u32("magic number")?;
    if found != expected {
        return Err(Error::Magic {
            path: r.path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Load an IDX image file and its label file. The class count is taken as
/// one more than the largest label.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = read_file(images_path)?;
    let lbl_bytes = read_file(labels_path)?;

    let mut r = Reader {
        path: images_path,
        bytes: &img_bytes,
        pos: 0,
    };
    check_magic(&mut r, IDX_IMAGES_MAGIC)?;
    let count = r.u32("image count")? as usize;
    let height = r.u32("row count")? as usize;
    let width = r.u32("column count")? as usize;
    let pixels = r.take(count * width * height, "pixel data")?;
    let images: Vec<Vec<f64>> = pixels
        .chunks(width * height)
        .map(|c| c.iter().map(|&b| b as f64 / 255.0).collect())
        .collect();

    let mut r = Reader {
        path: labels_path,
        bytes: &lbl_bytes,
        pos: 0,
    };
    check_magic(&mut r, IDX_LABELS_MAGIC)?;
    let n_labels = r.u32("label count")? as usize;
    if n_labels != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: n_labels,
        });
    }
    let labels: Vec<usize> = r.take(n_labels, "label data")?.iter().map(|&b| b as usize).collect();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(images, labels, width, height, n_classes)
}

/// Write a dataset as an IDX image/label pair. Pixels are stored as
/// `round(v * 255)`.
pub fn write_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let mut img = Vec::with_capacity(16 + ds.len() * ds.width * ds.height);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [ds.len(), ds.height, ds.width] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for v in ds.images.iter().flatten() {
        img.push((v * 255.0).round() as u8);
    }
    let mut lbl = Vec::with_capacity(8 + ds.len());
    lbl.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    for &l in &ds.labels {
        let b = u8::try_from(l).map_err(|_| Error::Input(format!("label {l} does not fit in a byte")))?;
        lbl.push(b);
    }
    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, lbl).map_err(|e| Error::io(labels_path, e))
}

/// Load a CSV dataset: each row is a label followed by `width * height`
/// pixel values. Values in `[0, 255]` are rescaled when the file's maximum
/// exceeds 1. Blank lines and a non-numeric header row are skipped.
pub fn load_csv(path: &Path, width: usize, height: usize, n_classes: usize) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let csv_err = |row: usize, detail: String| Error::Csv {
        path: path.to_path_buf(),
        row,
        detail,
    };
    let n_pix = width * height;
    let mut labels = Vec::new();
    let mut raw: Vec<Vec<f64>> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let row = k + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if k == 0 && fields[0].parse::<f64>().is_err() {
            continue;
        }
        if fields.len() != n_pix + 1 {
            return Err(csv_err(
                row,
                format!(
                    "expected {} values (label + {n_pix} pixels), found {}",
                    n_pix + 1,
                    fields.len()
                ),
            ));
        }
        let label: usize = fields[0]
            .parse()
            .map_err(|_| csv_err(row, format!("label {:?} is not a class index", fields[0])))?;
        if label >= n_classes {
            return Err(csv_err(
                row,
                format!("label {label} out of range for {n_classes} classes"),
            ));
        }
        let px = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| csv_err(row, format!("pixel {f:?} is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(v) = px.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(csv_err(row, format!("pixel {v} outside [0, 255]")));
        }
        labels.push(label);
        raw.push(px);
    }
    let max = raw.iter().flatten().fold(0.0f64, |m, &v| m.max(v));
    if max > 1.0 {
        for v in raw.iter_mut().flatten() {
            *v /= 255.0;
        }
    }
    Dataset::new(raw, labels, width, height, n_classes)
}

fn check_pixel(v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Input(format!("pixel {v} outside [0, 1]")));
    }
    Ok(())
}

/// Pixel `v` becomes a two-minicolumn hypercolumn `(v, 1 - v)`.
pub fn encode_complementary(image: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * image.len());
    for &v in image {
        check_pixel(v)?;
        out.push(v);
        out.push(1.0 - v);
    }
    Ok(out)
}

/// Pixel `v` becomes a one-hot hypercolumn over `bins` intensity bins.
pub fn encode_binned(image: &[f64], bins: usize) -> Result<Vec<f64>> {
    if bins < 2 {
        return Err(Error::Config(format!("need at least 2 intensity bins, got {bins}")));
    }
    let mut out = vec![0.0; bins * image.len()];
    for (k, &v) in image.iter().enumerate() {
        check_pixel(v)?;
        let b = ((v * bins as f64) as usize).min(bins - 1);
        out[k * bins + b] = 1.0;
    }
    Ok(out)
}

/// Encoding used for `input_mc` minicolumns per pixel: complementary for 2,
/// intensity bins otherwise.
pub fn encode_input(image: &[f64], input_mc: usize) -> Result<Vec<f64>> {
    if input_mc == 2 {
        encode_complementary(image)
    } else {
        encode_binned(image, input_mc)
    }
}

pub fn encode_onehot(label: usize, n_classes: usize) -> Result<Vec<f64>> {
    if label >= n_classes {
        return Err(Error::Input(format!(
            "label {label} out of range for {n_classes} classes"
        )));
    }
    let mut v = vec![0.0; n_classes];
    v[label] = 1.0;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::hc_sums;
    use proptest::prelude::*;

    fn idx_pair(
        dir: &Path,
        imgs: &[u8],
        n: u32,
        rows: u32,
        cols: u32,
        labels: &[u8],
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("img.idx");
        let lp = dir.join("lbl.idx");
        let mut b = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for d in [n, rows, cols] {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend_from_slice(imgs);
        fs::write(&ip, b).unwrap();
        let mut b = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        fs::write(&lp, b).unwrap();
        (ip, lp)
    }

    #[test]
    fn single_white_image() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = idx_pair(dir.path(), &[255; 4], 1, 2, 2, &[1]);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.images, vec![vec![1.0; 4]]);
        assert_eq!(ds.labels, vec![1]);
        assert_eq!((ds.width, ds.height, ds.n_classes), (2, 2, 2));
    }

    #[test]
    fn corrupted_label_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = idx_pair(dir.path(), &[0; 4], 1, 2, 2, &[0]);
        let mut b = fs::read(&lp).unwrap();
        b[3] = 0x99;
        fs::write(&lp, b).unwrap();
        match load_idx(&ip, &lp).unwrap_err() {
            Error::Magic { path, found, .. } => {
                assert_eq!(path, lp);
                assert_eq!(found, 0x899);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn truncated_and_mismatched() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = idx_pair(dir.path(), &[0; 7], 2, 2, 2, &[0, 1]);
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Truncated { .. })));
        let (ip, lp) = idx_pair(dir.path(), &[0; 8], 2, 2, 2, &[0, 1, 1]);
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(Error::CountMismatch { images: 2, labels: 3 })
        ));
        assert!(matches!(
            load_idx(&dir.path().join("missing"), &lp),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let images: Vec<Vec<f64>> = (0..5)
            .map(|k| (0..12).map(|i| ((k * 31 + i * 7) % 256) as f64 / 255.0).collect())
            .collect();
        let ds = Dataset::new(images, vec![0, 3, 2, 1, 3], 4, 3, 4).unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&ds, &ip, &lp).unwrap();
        assert_eq!(load_idx(&ip, &lp).unwrap(), ds);
    }

    #[test]
    fn csv_fixtures() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "label,p0,p1,p2,p3\n0,0,255,255,0\n1,255,0,0,255\n").unwrap();
        let ds = load_csv(&p, 2, 2, 2).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.images[0], vec![0.0, 1.0, 1.0, 0.0]);

        fs::write(&p, "0,0.5,0.5,1,0\n").unwrap();
        assert_eq!(load_csv(&p, 2, 2, 2).unwrap().images[0], vec![0.5, 0.5, 1.0, 0.0]);

        fs::write(&p, "0,1,1,1,1\n1,1,1,1,1,1\n").unwrap();
        match load_csv(&p, 2, 2, 2).unwrap_err() {
            Error::Csv { row, .. } => assert_eq!(row, 2),
            e => panic!("unexpected {e}"),
        }
        fs::write(&p, "2,1,1,1,1\n").unwrap();
        assert!(matches!(load_csv(&p, 2, 2, 2), Err(Error::Csv { row: 1, .. })));
    }

    #[test]
    fn csv_breast_geometry() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("breast.csv");
        let row: Vec<String> = std::iter::once("1".to_string())
            .chain((0..64 * 64).map(|i| (i % 256).to_string()))
            .collect();
        fs::write(&p, row.join(",")).unwrap();
        let ds = load_csv(&p, 64, 64, 2).unwrap();
        assert_eq!((ds.width, ds.height, ds.n_classes, ds.len()), (64, 64, 2, 1));
    }

    #[test]
    fn complementary_endpoints() {
        assert_eq!(encode_complementary(&[0.0, 1.0]).unwrap(), vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(encode_complementary(&[0.0; 784]).unwrap().len(), 1568);
        assert!(matches!(encode_complementary(&[1.5]), Err(Error::Input(_))));
    }

    #[test]
    fn onehot() {
        assert_eq!(encode_onehot(3, 10).unwrap()[3], 1.0);
        assert_eq!(encode_onehot(0, 2).unwrap(), vec![1.0, 0.0]);
        assert!(encode_onehot(5, 2).is_err());
    }

    #[test]
    fn binned_is_one_hot() {
        let v = encode_binned(&[0.0, 0.5, 1.0], 4).unwrap();
        assert_eq!(v, vec![1., 0., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1.]);
    }

    #[test]
    fn permutation_is_seeded() {
        let a = permutation(100, 4);
        assert_eq!(a, permutation(100, 4));
        assert_ne!(a, permutation(100, 5));
        let mut s = a.clone();
        s.sort_unstable();
        assert_eq!(s, (0..100).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn encodings_normalized(img in prop::collection::vec(0.0f64..=1.0, 1..200), bins in 2usize..9) {
            for s in hc_sums(&encode_complementary(&img).unwrap(), 2) {
                prop_assert_eq!(s, 1.0);
            }
            for s in hc_sums(&encode_binned(&img, bins).unwrap(), bins) {
                prop_assert_eq!(s, 1.0);
            }
        }
    }
}
