//! Dataset ingestion: MNIST IDX files, label-first pixel CSVs,
//! normalization, 2x downsampling, splitting and one-hot targets.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

/// Standard MNIST file names inside a data directory.
pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Labeled examples with inputs in `[0, 1]` and one-hot targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub targets: Matrix,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(x: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(Error::shape("Dataset::new", x.shape(), (labels.len(), 1)));
        }
        if x.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Range("dataset inputs must lie in [0, 1]".into()));
        }
        let targets = one_hot(&labels, n_classes)?;
        Ok(Dataset {
            x,
            labels,
            targets,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            targets: self.targets.select_rows(indices),
            n_classes: self.n_classes,
        }
    }

    /// The first `n` examples (all of them if `n` exceeds the size).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

/// Raw IDX image tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` bytes, image after image, row-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }

    /// One row per image, values still in `[0, 255]`.
    pub fn to_matrix(&self) -> Matrix {
        let data = self.pixels.iter().map(|&b| b as f64).collect();
        Matrix::new(self.count, self.rows * self.cols, data).expect("consistent IDX dimensions")
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn format_err(context: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        context: context.display().to_string(),
        msg: msg.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    source: &'a Path,
}

impl Header<'_> {
    fn u32_at(&self, offset: usize) -> Result<u32> {
        let b = self.bytes.get(offset..offset + 4).ok_or_else(|| {
            format_err(
                self.source,
                format!(
                    "truncated header at byte offset {}: file has {} bytes",
                    offset,
                    self.bytes.len()
                ),
            )
        })?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&self, expected: u32) -> Result<()> {
        let got = self.u32_at(0)?;
        if got != expected {
            return Err(format_err(
                self.source,
                format!("bad magic number: expected {expected}, found {got}"),
            ));
        }
        Ok(())
    }

    fn payload(&self, start: usize, len: usize) -> Result<&[u8]> {
        let have = self.bytes.len().saturating_sub(start);
        if have < len {
            return Err(format_err(
                self.source,
                format!(
                    "truncated payload at byte offset {}: header promises {} bytes after offset {start}, found {have}",
                    self.bytes.len(),
                    len
                ),
            ));
        }
        if have > len {
            return Err(format_err(
                self.source,
                format!(
                    "{} unexpected trailing bytes after offset {}",
                    have - len,
                    start + len
                ),
            ));
        }
        Ok(&self.bytes[start..])
    }
}

/// Parses an IDX image file already in memory; `source` only labels errors.
pub fn parse_idx_images(bytes: &[u8], source: &Path) -> Result<IdxImages> {
    let h = Header { bytes, source };
    h.magic(IDX_IMAGES_MAGIC)?;
    let count = h.u32_at(4)? as usize;
    let rows = h.u32_at(8)? as usize;
    let cols = h.u32_at(12)? as usize;
    let pixels = h.payload(16, count * rows * cols)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8], source: &Path) -> Result<Vec<u8>> {
    let h = Header { bytes, source };
    h.magic(IDX_LABELS_MAGIC)?;
    let count = h.u32_at(4)? as usize;
    Ok(h.payload(8, count)?.to_vec())
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    let path = path.as_ref();
    parse_idx_images(&read_file(path)?, path)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    parse_idx_labels(&read_file(path)?, path)
}

fn dim(n: usize) -> Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_be_bytes)
        .map_err(|_| Error::Parameter(format!("IDX dimension {n} exceeds 32 bits")))
}

pub fn encode_idx_images(images: &IdxImages) -> Result<Vec<u8>> {
    if images.pixels.len() != images.count * images.rows * images.cols {
        return Err(Error::Parameter(
            "pixel count does not match IDX dimensions".into(),
        ));
    }
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend(IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend(dim(images.count)?);
    out.extend(dim(images.rows)?);
    out.extend(dim(images.cols)?);
    out.extend(&images.pixels);
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(IDX_LABELS_MAGIC.to_be_bytes());
    out.extend(dim(labels.len())?);
    out.extend(labels);
    Ok(out)
}

pub fn write_idx_images(path: impl AsRef<Path>, images: &IdxImages) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_idx_images(images)?).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_idx_labels(labels)?).map_err(|e| Error::io(path, e))
}

/// Combines an IDX image/label pair into a normalized dataset.
pub fn idx_dataset(images: &IdxImages, labels: &[u8], n_classes: usize) -> Result<Dataset> {
    if images.count != labels.len() {
        return Err(Error::Format {
            context: "IDX pair".into(),
            msg: format!("{} images but {} labels", images.count, labels.len()),
        });
    }
    let x = normalize_255(&images.to_matrix())?;
    Dataset::new(x, labels.iter().map(|&l| l as usize).collect(), n_classes)
}

/// Loads the MNIST training and test sets from the standard file names.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let p = |name: &str| -> PathBuf { dir.join(name) };
    let train = idx_dataset(
        &load_idx_images(p(MNIST_FILES[0]))?,
        &load_idx_labels(p(MNIST_FILES[1]))?,
        10,
    )?;
    let test = idx_dataset(
        &load_idx_images(p(MNIST_FILES[2]))?,
        &load_idx_labels(p(MNIST_FILES[3]))?,
        10,
    )?;
    Ok((train, test))
}

/// Labels and raw `[0, 255]` pixels as read from a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelTable {
    pub labels: Vec<usize>,
    pub pixels: Matrix,
}

impl PixelTable {
    /// Normalizes the pixels; `n_classes` defaults to one past the largest label.
    pub fn into_dataset(self, n_classes: Option<usize>) -> Result<Dataset> {
        let k = n_classes.unwrap_or_else(|| self.labels.iter().max().map_or(0, |m| m + 1));
        Dataset::new(normalize_255(&self.pixels)?, self.labels, k)
    }
}

/// Reads `label,p0,p1,...` rows. Row and column numbers in errors are
/// 1-based positions in the file.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<PixelTable> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, has_header, path)
}

pub fn parse_csv(
    reader: impl std::io::Read,
    has_header: bool,
    source: &Path,
) -> Result<PixelTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut width: Option<usize> = None;
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(format_err(source, e.to_string())),
        }
        let row = record
            .position()
            .map_or(labels.len() + 1, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let n = record.len() - 1;
        match width {
            None if n == 0 => {
                return Err(format_err(
                    source,
                    format!("row {row} has a label but no pixels"),
                ))
            }
            None => width = Some(n),
            Some(w) if w != n => {
                return Err(format_err(
                    source,
                    format!("ragged row {row}: expected {w} pixels, found {n}"),
                ));
            }
            _ => {}
        }
        for (col, cell) in record.iter().enumerate() {
            let v: i64 = cell.parse().map_err(|_| Error::Parse {
                row,
                col: col + 1,
                msg: format!("expected an integer, found {cell:?}"),
            })?;
            if col == 0 {
                if v < 0 {
                    return Err(Error::Range(format!("row {row}: negative label {v}")));
                }
                labels.push(v as usize);
            } else {
                if !(0..=255).contains(&v) {
                    return Err(Error::Range(format!(
                        "row {row}, column {}: pixel {v} outside [0, 255]",
                        col + 1
                    )));
                }
                data.push(v as f64);
            }
        }
    }
    let pixels = Matrix::new(labels.len(), width.unwrap_or(0), data)?;
    Ok(PixelTable { labels, pixels })
}

/// Writes a label-first CSV without a header.
pub fn write_csv(path: impl AsRef<Path>, table: &PixelTable) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for (label, row) in table.labels.iter().zip(table.pixels.row_iter()) {
        write!(w, "{label}").map_err(|e| Error::io(path, e))?;
        for v in row {
            write!(w, ",{v}").map_err(|e| Error::io(path, e))?;
        }
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Divides every entry by 255.
pub fn normalize_255(x: &Matrix) -> Result<Matrix> {
    if let Some(v) = x.as_slice().iter().find(|v| !(0.0..=255.0).contains(*v)) {
        return Err(Error::Range(format!("value {v} outside [0, 255]")));
    }
    Ok(x.map(|v| v / 255.0))
}

/// Halves both image dimensions; each output pixel is the mean of a 2x2
/// input block.
pub fn bilinear_downsample_2x(image: &Matrix) -> Result<Matrix> {
    let (r, c) = image.shape();
    if r % 2 != 0 || c % 2 != 0 {
        return Err(Error::Parameter(format!(
            "downsampling needs even dimensions, got {r}x{c}"
        )));
    }
    Ok(Matrix::from_fn(r / 2, c / 2, |i, j| {
        let (y, x) = (2 * i, 2 * j);
        (image.get(y, x) + image.get(y, x + 1) + image.get(y + 1, x) + image.get(y + 1, x + 1))
            / 4.0
    }))
}

/// Side length of the square images stored one per row of width `n`.
pub fn square_side(n: usize) -> Result<usize> {
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(Error::Parameter(format!(
            "{n} pixels do not form a square image"
        )));
    }
    Ok(side)
}

/// Downsamples every row of `pixels`, each a square image.
pub fn downsample_rows(pixels: &Matrix) -> Result<Matrix> {
    let side = square_side(pixels.cols())?;
    let half = side / 2;
    let mut out = Matrix::zeros(pixels.rows(), half * half);
    for (i, row) in pixels.row_iter().enumerate() {
        let img = Matrix::new(side, side, row.to_vec())?;
        out.row_mut(i)
            .copy_from_slice(bilinear_downsample_2x(&img)?.as_slice());
    }
    Ok(out)
}

/// Shuffles with ChaCha8 seeded by `seed`, then takes `n_train` examples
/// followed by `n_test`.
pub fn train_test_split(
    ds: &Dataset,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if n_train + n_test > ds.len() {
        return Err(Error::Parameter(format!(
            "split of {n_train} + {n_test} needs more than the {} available examples",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((
        ds.subset(&order[..n_train]),
        ds.subset(&order[n_train..n_train + n_test]),
    ))
}

pub fn one_hot(labels: &[usize], n_classes: usize) -> Result<Matrix> {
    let mut y = Matrix::zeros(labels.len(), n_classes);
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::Range(format!(
                "label {l} at row {i} is not below {n_classes}"
            )));
        }
        y.set(i, l, 1.0);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn src() -> &'static Path {
        Path::new("fixture")
    }

    fn fixture_images() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        b.extend([0, 255, 17, 128, 1, 2, 3, 4]);
        b
    }

    #[test]
    fn parses_hand_built_idx() {
        let imgs = parse_idx_images(&fixture_images(), src()).unwrap();
        assert_eq!((imgs.count, imgs.rows, imgs.cols), (2, 2, 2));
        assert_eq!(imgs.image(0), &[0, 255, 17, 128]);
        assert_eq!(imgs.image(1), &[1, 2, 3, 4]);
        let labels = parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 3, 7, 0, 9], src()).unwrap();
        assert_eq!(labels, vec![7, 0, 9]);
    }

    #[test]
    fn idx_errors() {
        let mut bad = fixture_images();
        bad[3] = 1;
        let e = parse_idx_images(&bad, src()).unwrap_err().to_string();
        assert!(e.contains("2051") && e.contains("2049"), "{e}");

        let short = &fixture_images()[..20];
        let e = parse_idx_images(short, src()).unwrap_err().to_string();
        assert!(e.contains("offset"), "{e}");
        let e = parse_idx_images(&fixture_images()[..10], src())
            .unwrap_err()
            .to_string();
        assert!(e.contains("offset 8"), "{e}");
    }

    #[test]
    fn idx_roundtrip() {
        let imgs = parse_idx_images(&fixture_images(), src()).unwrap();
        assert_eq!(encode_idx_images(&imgs).unwrap(), fixture_images());
        let labels = vec![3u8, 1, 4, 1, 5];
        assert_eq!(
            parse_idx_labels(&encode_idx_labels(&labels).unwrap(), src()).unwrap(),
            labels
        );
    }

    #[test]
    fn csv_parsing() {
        let t = parse_csv(Cursor::new("3,0,255\n1,128,64\n"), false, src()).unwrap();
        assert_eq!(t.labels, vec![3, 1]);
        assert_eq!(
            t.pixels.to_rows(),
            vec![vec![0.0, 255.0], vec![128.0, 64.0]]
        );
        let t = parse_csv(Cursor::new("label,a,b\n3,0,255\n"), true, src()).unwrap();
        assert_eq!(t.labels, vec![3]);
    }

    #[test]
    fn csv_errors() {
        let e = parse_csv(Cursor::new("3,0,256\n"), false, src()).unwrap_err();
        assert!(matches!(e, Error::Range(_)));
        let e = parse_csv(Cursor::new("3,0,1\n2,x,1\n"), false, src()).unwrap_err();
        assert!(matches!(e, Error::Parse { row: 2, col: 2, .. }), "{e}");
        let e = parse_csv(Cursor::new("3,0,1\n2,1\n"), false, src()).unwrap_err();
        assert!(matches!(e, Error::Format { .. }), "{e}");
        let e = parse_csv(Cursor::new("3,0.5,1\n"), false, src()).unwrap_err();
        assert!(matches!(e, Error::Parse { .. }));
    }

    #[test]
    fn normalization() {
        let x = Matrix::row_vector(&[0.0, 255.0, 51.0]);
        assert_eq!(normalize_255(&x).unwrap().as_slice(), &[0.0, 1.0, 0.2]);
        assert!(normalize_255(&Matrix::row_vector(&[256.0])).is_err());
        let all = Matrix::from_fn(1, 256, |_, j| j as f64);
        let n = normalize_255(&all).unwrap();
        for (j, &v) in n.as_slice().iter().enumerate() {
            assert_eq!((255.0 * v + 0.5).floor() as usize, j);
        }
    }

    #[test]
    fn downsampling() {
        let c = bilinear_downsample_2x(&Matrix::filled(4, 6, 7.0)).unwrap();
        assert_eq!(c, Matrix::filled(2, 3, 7.0));
        let b = bilinear_downsample_2x(&Matrix::from_rows(&[[0.0, 255.0], [255.0, 0.0]]).unwrap())
            .unwrap();
        assert_eq!(b.as_slice(), &[127.5]);
        assert_eq!(
            bilinear_downsample_2x(&Matrix::zeros(48, 48))
                .unwrap()
                .shape(),
            (24, 24)
        );
        assert!(matches!(
            bilinear_downsample_2x(&Matrix::zeros(3, 4)),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn one_hot_targets() {
        let y = one_hot(&[3], 10).unwrap();
        assert_eq!(y.row(0)[3], 1.0);
        assert_eq!(y.sum(), 1.0);
        assert_eq!(
            one_hot(&[0, 1], 2).unwrap().to_rows(),
            vec![vec![1.0, 0.0], vec![0.0, 1.0]]
        );
        assert!(matches!(one_hot(&[10], 10), Err(Error::Range(_))));
    }

    fn tagged(m: usize) -> Dataset {
        // Row i carries a unique signature so subsets can be traced back.
        let x = Matrix::from_fn(m, 2, |i, j| if j == 0 { i as f64 / m as f64 } else { 0.5 });
        Dataset::new(x, (0..m).map(|i| i % 7).collect(), 7).unwrap()
    }

    #[test]
    fn split_counts_and_disjointness() {
        let ds = tagged(4100);
        let (tr, te) = train_test_split(&ds, 3300, 800, 42).unwrap();
        assert_eq!((tr.len(), te.len()), (3300, 800));
        let mut seen: Vec<u64> =
            tr.x.row_iter()
                .chain(te.x.row_iter())
                .map(|r| r[0].to_bits())
                .collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 4100);
        let (tr2, _) = train_test_split(&ds, 3300, 800, 42).unwrap();
        assert_eq!(tr, tr2);
        let (all, none) = train_test_split(&ds, 4100, 0, 1).unwrap();
        assert_eq!((all.len(), none.len()), (4100, 0));
        assert!(train_test_split(&ds, 4100, 1, 0).is_err());
    }
}
