//! Labeled datasets and their on-disk formats.
//!
//! IDX files (optionally gzip-compressed) hold MNIST-style images and labels; CSV files
//! hold one sample per line as `label,feature,feature,...`.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    pub class_names: Option<Vec<String>>,
    pub split: Split,
}

impl LabeledDataset {
    /// Checks that rows and labels agree and that labels are dense in `[0, C)`.
    pub fn new(features: Array2<f64>, labels: Vec<usize>, split: Split) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::CountMismatch {
                images: features.nrows(),
                labels: labels.len(),
            });
        }
        if labels.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; num_classes];
        labels.iter().for_each(|&l| seen[l] = true);
        let missing: Vec<usize> = seen.iter().enumerate().filter(|(_, s)| !**s).map(|(i, _)| i).collect();
        if !missing.is_empty() {
            return Err(Error::SparseLabels {
                classes: num_classes,
                missing,
            });
        }
        Ok(LabeledDataset {
            features,
            labels,
            num_classes,
            class_names: None,
            split,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Rows at `indices`, keeping the class count of the parent so labels stay valid even
    /// if a class is absent from the subset.
    pub fn subset(&self, indices: &[usize]) -> Self {
        LabeledDataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
            split: self.split,
        }
    }

    /// The first `n` rows (or all of them).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

fn open_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::TruncatedFile {
                path: path.to_path_buf(),
                detail: format!("gzip stream: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::TruncatedFile {
            path: path.to_path_buf(),
            detail: format!("header ends before byte {}", offset + 4),
        })
}

/// Reads an IDX image file and its label file (plain or gzip-compressed).
///
/// Pixels are scaled from bytes to `[0, 1]` and each image is flattened row-major.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (ipath, lpath) = (images_path.as_ref(), labels_path.as_ref());
    let images = open_maybe_gz(ipath)?;
    let labels = open_maybe_gz(lpath)?;

    let magic = be_u32(&images, 0, ipath)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: ipath.to_path_buf(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let magic = be_u32(&labels, 0, lpath)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: lpath.to_path_buf(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }

    let n_images = be_u32(&images, 4, ipath)? as usize;
    let rows = be_u32(&images, 8, ipath)? as usize;
    let cols = be_u32(&images, 12, ipath)? as usize;
    let n_labels = be_u32(&labels, 4, lpath)? as usize;
    if n_images != n_labels {
        return Err(Error::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let dim = rows * cols;
    let pixels = images
        .get(16..16 + n_images * dim)
        .ok_or_else(|| Error::TruncatedFile {
            path: ipath.to_path_buf(),
            detail: format!(
                "expected {} pixel bytes, found {}",
                n_images * dim,
                images.len().saturating_sub(16)
            ),
        })?;
    let label_bytes = labels.get(8..8 + n_labels).ok_or_else(|| Error::TruncatedFile {
        path: lpath.to_path_buf(),
        detail: format!(
            "expected {n_labels} label bytes, found {}",
            labels.len().saturating_sub(8)
        ),
    })?;

    let features = Array2::from_shape_vec((n_images, dim), pixels.iter().map(|&b| f64::from(b) / 255.0).collect())
        .expect("length checked");
    LabeledDataset::new(
        features,
        label_bytes.iter().map(|&b| usize::from(b)).collect(),
        Split::Train,
    )
}

/// Reads `label,f1,f2,...` lines. Blank lines and lines starting with `#` are skipped.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(BufReader::new(file), path)
}

pub(crate) fn parse_csv(reader: impl BufRead, path: &Path) -> Result<LabeledDataset> {
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let expected = *width.get_or_insert(fields.len());
        if fields.len() != expected || fields.iter().any(|f| f.is_empty()) {
            let found = fields.iter().filter(|f| !f.is_empty()).count();
            return Err(Error::RaggedRow {
                line: line_no,
                expected,
                found,
            });
        }
        if expected < 2 {
            return Err(Error::RaggedRow {
                line: line_no,
                expected: 2,
                found: expected,
            });
        }
        let label = fields[0].parse::<usize>().map_err(|_| Error::NonNumericField {
            line: line_no,
            field: 1,
            value: fields[0].to_string(),
        })?;
        labels.push(label);
        for (k, f) in fields[1..].iter().enumerate() {
            let v = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::NonNumericField {
                    line: line_no,
                    field: k + 2,
                    value: f.to_string(),
                })?;
            values.push(v);
        }
    }
    let width = width.ok_or(Error::Empty("CSV file has no data rows"))?;
    let features = Array2::from_shape_vec((labels.len(), width - 1), values).expect("row widths checked");
    LabeledDataset::new(features, labels, Split::Train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn csv(text: &str) -> Result<LabeledDataset> {
        parse_csv(text.as_bytes(), Path::new("inline.csv"))
    }

    #[test]
    fn csv_basic() {
        let ds = csv("# label,x,y\n0,1.0,2.0\n1,3.5,-1\n0,0,0\n").unwrap();
        assert_eq!((ds.len(), ds.feature_dim(), ds.num_classes()), (3, 2, 2));
        assert_eq!(ds.labels(), &[0, 1, 0]);
        assert_eq!(ds.features()[[1, 0]], 3.5);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(csv("0,1,2\n1,3\n"), Err(Error::RaggedRow { line: 2, .. })));
        assert!(matches!(csv("0,1,2\n1,3,\n"), Err(Error::RaggedRow { line: 2, .. })));
        assert!(matches!(
            csv("0,1,abc\n"),
            Err(Error::NonNumericField { line: 1, field: 3, .. })
        ));
        assert!(matches!(csv("x,1,2\n"), Err(Error::NonNumericField { field: 1, .. })));
        assert!(matches!(
            csv("0,1\n2,1\n"),
            Err(Error::SparseLabels { classes: 3, ref missing }) if missing == &[1]
        ));
        assert!(matches!(csv("# only a header\n"), Err(Error::Empty(_))));
    }

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [IDX_IMAGES_MAGIC, n, rows, cols] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(pixels);
        out
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let path = dir.join(name);
        File::create(&path).unwrap().write_all(bytes).unwrap();
        path
    }

    #[test]
    fn idx_round_trip_plain_and_gz() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
        let img = idx_images(3, 2, 2, &pixels);
        let lab = idx_labels(&[1, 0, 1]);
        let ip = write(dir.path(), "img", &img);
        let lp = write(dir.path(), "lab", &lab);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!((ds.len(), ds.feature_dim(), ds.num_classes()), (3, 4, 2));
        assert_eq!(ds.features()[[1, 0]], 80.0 / 255.0);

        let gz = |bytes: &[u8]| {
            let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
            enc.write_all(bytes).unwrap();
            enc.finish().unwrap()
        };
        let ip = write(dir.path(), "img.gz", &gz(&img));
        let lp = write(dir.path(), "lab.gz", &gz(&lab));
        assert_eq!(load_idx(&ip, &lp).unwrap(), ds);
    }

    #[test]
    fn idx_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = idx_images(2, 1, 2, &[1, 2, 3, 4]);
        let ip = write(dir.path(), "img", &img);
        let lp = write(dir.path(), "lab", &idx_labels(&[0, 1, 1]));
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(Error::CountMismatch { images: 2, labels: 3 })
        ));

        let lp = write(dir.path(), "lab2", &idx_labels(&[0, 1]));
        assert!(matches!(load_idx(&lp, &lp), Err(Error::BadMagic { found: 0x801, .. })));
        assert!(matches!(load_idx(&ip, &ip), Err(Error::BadMagic { found: 0x803, .. })));

        let short = write(dir.path(), "short", &img[..img.len() - 1]);
        assert!(matches!(load_idx(&short, &lp), Err(Error::TruncatedFile { .. })));
        let stub = write(dir.path(), "stub", &img[..6]);
        assert!(matches!(load_idx(&stub, &lp), Err(Error::TruncatedFile { .. })));
    }

    #[test]
    fn subset_keeps_class_count() {
        let ds = csv("0,1\n1,2\n2,3\n").unwrap();
        let sub = ds.subset(&[0, 1]);
        assert_eq!(sub.num_classes(), 3);
        assert_eq!(sub.labels(), &[0, 1]);
        assert_eq!(ds.head(10).len(), 3);
    }
}
