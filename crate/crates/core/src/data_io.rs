//! Dataset ingestion (IDX images, synthetic sources), desk-scale reduction,
//! and CSV result files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::rng::{tags, Stream};
use crate::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
            Shape::Flat(d) => d,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Affine map applied to raw values: `stored = (raw − offset) · scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: f64,
    pub scale: f64,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization {
        offset: 0.0,
        scale: 1.0,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Vec<f64>>,
    pub shape: Shape,
    pub name: String,
    pub normalization: Normalization,
    pub labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, shape: Shape, samples: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|s| s.len() != shape.len()) {
            return Err(Error::Shape(format!(
                "sample {i} has {} values, shape needs {}",
                samples[i].len(),
                shape.len()
            )));
        }
        Ok(Dataset {
            samples,
            shape,
            name: name.into(),
            normalization: Normalization::IDENTITY,
            labels: None,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    /// Root-mean-square value per real entry, the signal level used for SNR calibration.
    pub fn signal_rms(&self) -> f64 {
        let n = self.samples.len() * self.dim();
        if n == 0 {
            return 0.0;
        }
        let ss: f64 = self.samples.iter().flatten().map(|v| v * v).sum();
        (ss / n as f64).sqrt()
    }

    /// The first `n` samples (and labels).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            samples: self.samples[..n].to_vec(),
            labels: self.labels.as_ref().map(|l| l[..n].to_vec()),
            ..self.clone()
        }
    }

    /// Split into the first `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let tail = Dataset {
            samples: self.samples[n..].to_vec(),
            labels: self.labels.as_ref().map(|l| l[n..].to_vec()),
            ..self.clone()
        };
        (self.take(n), tail)
    }
}

/// Raw contents of an IDX image file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::Parse(format!(
                "truncated header at offset {offset}: need 4 bytes for {what}, found {}",
                bytes.len().saturating_sub(offset)
            ))
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0, "magic")?;
    if magic != expected {
        return Err(Error::Parse(format!(
            "bad magic at offset 0: expected {expected:#010x}, found {magic:#010x}"
        )));
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], offset: usize, expected: usize, what: &str) -> Result<&'a [u8]> {
    let found = bytes.len() - offset;
    if found < expected {
        return Err(Error::Parse(format!(
            "truncated {what} at offset {offset}: expected {expected} bytes, found {found}"
        )));
    }
    if found > expected {
        return Err(Error::Parse(format!(
            "trailing data at offset {}: {} unexpected bytes",
            offset + expected,
            found - expected
        )));
    }
    Ok(&bytes[offset..])
}

/// Parse an IDX3 unsigned-byte image file (big-endian header).
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4, "image count")? as usize;
    let rows = read_u32(bytes, 8, "row count")? as usize;
    let cols = read_u32(bytes, 12, "column count")? as usize;
    let total = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .filter(|&v| v <= isize::MAX as usize)
        .ok_or_else(|| {
            Error::Parse(format!(
                "dimension overflow at offset 4: {count} x {rows} x {cols} pixels"
            ))
        })?;
    let pixels = payload(bytes, 16, total, "pixel data")?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

/// Parse an IDX1 unsigned-byte label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = read_u32(bytes, 4, "label count")? as usize;
    Ok(payload(bytes, 8, count, "label data")?.to_vec())
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [
        IDX_IMAGES_MAGIC,
        images.count as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Images as a dataset with pixels scaled by `1/255`.
pub fn idx_to_dataset(images: &IdxImages, name: impl Into<String>) -> Dataset {
    let per = images.rows * images.cols;
    let samples = if per == 0 {
        vec![Vec::new(); images.count]
    } else {
        images
            .pixels
            .chunks_exact(per)
            .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
            .collect()
    };
    Dataset {
        samples,
        shape: Shape::Image {
            channels: 1,
            height: images.rows,
            width: images.cols,
        },
        name: name.into(),
        normalization: Normalization {
            offset: 0.0,
            scale: 1.0 / 255.0,
        },
        labels: None,
    }
}

/// Recover the original bytes from a `1/255`-scaled sample.
pub fn to_bytes(sample: &[f64]) -> Vec<u8> {
    sample
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

pub fn load_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<Dataset> {
    let bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let images = parse_idx_images(&bytes).map_err(|e| Error::Parse(format!("{}: {e}", images_path.display())))?;
    let name = images_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut ds = idx_to_dataset(&images, name);
    if let Some(lp) = labels_path {
        let bytes = fs::read(lp).map_err(|e| Error::io(lp, e))?;
        let labels = parse_idx_labels(&bytes).map_err(|e| Error::Parse(format!("{}: {e}", lp.display())))?;
        if labels.len() != ds.len() {
            return Err(Error::Shape(format!("{} images but {} labels", ds.len(), labels.len())));
        }
        ds.labels = Some(labels);
    }
    Ok(ds)
}

fn image_dims(ds: &Dataset) -> Result<(usize, usize, usize)> {
    match ds.shape {
        Shape::Image {
            channels,
            height,
            width,
        } => Ok((channels, height, width)),
        Shape::Flat(_) => Err(Error::Shape(format!("{} is not an image dataset", ds.name))),
    }
}

/// Keep the central `height × width` window of every image.
pub fn crop_center(ds: &Dataset, height: usize, width: usize) -> Result<Dataset> {
    let (c, h, w) = image_dims(ds)?;
    if height > h || width > w {
        return Err(Error::Shape(format!("cannot crop {h}x{w} images to {height}x{width}")));
    }
    let (top, left) = ((h - height) / 2, (w - width) / 2);
    let samples = ds
        .samples
        .iter()
        .map(|img| {
            let mut out = Vec::with_capacity(c * height * width);
            for ch in 0..c {
                for r in top..top + height {
                    let start = ch * h * w + r * w + left;
                    out.extend_from_slice(&img[start..start + width]);
                }
            }
            out
        })
        .collect();
    Ok(Dataset {
        samples,
        shape: Shape::Image {
            channels: c,
            height,
            width,
        },
        ..ds.clone()
    })
}

/// Box-average pooling by `factor` in both spatial directions.
pub fn downsample(ds: &Dataset, factor: usize) -> Result<Dataset> {
    let (c, h, w) = image_dims(ds)?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Shape(format!("factor {factor} does not divide {h}x{w}")));
    }
    let (oh, ow) = (h / factor, w / factor);
    let area = (factor * factor) as f64;
    let samples = ds
        .samples
        .iter()
        .map(|img| {
            let mut out = Vec::with_capacity(c * oh * ow);
            for ch in 0..c {
                for r in 0..oh {
                    for col in 0..ow {
                        let mut acc = 0.0;
                        for dr in 0..factor {
                            let row = ch * h * w + (r * factor + dr) * w + col * factor;
                            acc += img[row..row + factor].iter().sum::<f64>();
                        }
                        out.push(acc / area);
                    }
                }
            }
            out
        })
        .collect();
    Ok(Dataset {
        samples,
        shape: Shape::Image {
            channels: c,
            height: oh,
            width: ow,
        },
        ..ds.clone()
    })
}

/// `n` i.i.d. draws from `N(mu0, sigma0² I)`.
pub fn synth_gaussian(mu0: &[f64], sigma0: f64, n: usize, seed: u64) -> Result<Dataset> {
    if !(sigma0 >= 0.0 && sigma0.is_finite()) {
        return Err(Error::Domain {
            what: "sigma0",
            value: sigma0,
            expected: "[0, inf)",
        });
    }
    let mut rng = Stream::new(seed, tags::DATA);
    let samples = (0..n)
        .map(|_| mu0.iter().map(|m| m + sigma0 * rng.normal()).collect())
        .collect();
    Dataset::new(format!("gaussian-d{}", mu0.len()), Shape::Flat(mu0.len()), samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: f64,
}

/// `n` draws from an isotropic Gaussian mixture; weights need not be normalized.
pub fn synth_gmm(components: &[GmmComponent], n: usize, seed: u64) -> Result<Dataset> {
    let first = components
        .first()
        .ok_or_else(|| Error::Config("mixture needs at least one component".into()))?;
    let dim = first.mean.len();
    if components.iter().any(|c| c.mean.len() != dim) {
        return Err(Error::Shape("mixture components differ in dimension".into()));
    }
    if components.iter().any(|c| !(c.weight >= 0.0) || !(c.std >= 0.0)) {
        return Err(Error::Config("mixture weights and stds must be nonnegative".into()));
    }
    let total: f64 = components.iter().map(|c| c.weight).sum();
    if !(total > 0.0) {
        return Err(Error::Config("mixture weights sum to zero".into()));
    }
    let mut rng = Stream::new(seed, tags::DATA);
    let samples = (0..n)
        .map(|_| {
            let mut u = rng.uniform() * total;
            let comp = components
                .iter()
                .find(|c| {
                    u -= c.weight;
                    u < 0.0
                })
                .unwrap_or_else(|| components.last().expect("non-empty"));
            comp.mean.iter().map(|m| m + comp.std * rng.normal()).collect()
        })
        .collect();
    Dataset::new(format!("gmm-d{dim}"), Shape::Flat(dim), samples)
}

/// One CSV field.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// 17 significant digits; non-finite values as `inf`, `-inf`, `nan`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.16e}")
    }
}

pub fn parse_float(s: &str) -> Result<f64> {
    match s.trim() {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        "nan" => Ok(f64::NAN),
        other => other
            .parse()
            .map_err(|_| Error::Parse(format!("`{other}` is not a number"))),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    }
}

/// Write a header and rows as UTF-8 CSV with LF line endings.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<Cell>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::Shape(format!(
                "row has {} cells, header has {}",
                row.len(),
                header.len()
            )));
        }
        w.write_record(row.iter().map(Cell::render))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a CSV file written by [`write_csv`]: header plus raw string rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = r
        .records()
        .map(|rec| {
            rec.map(|rec| rec.iter().map(str::to_string).collect())
                .map_err(|e| csv_error(path, e))
        })
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(count: usize, rows: usize, cols: usize) -> IdxImages {
        IdxImages {
            count,
            rows,
            cols,
            pixels: (0..count * rows * cols).map(|i| (i * 37 % 256) as u8).collect(),
        }
    }

    #[test]
    fn idx_fixture_round_trip() {
        let img = fixture(2, 28, 28);
        let bytes = encode_idx_images(&img);
        let parsed = parse_idx_images(&bytes).unwrap();
        assert_eq!(parsed, img);
        let ds = idx_to_dataset(&parsed, "fixture");
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 784);
        assert!(ds.samples.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        for (s, raw) in ds.samples.iter().zip(img.pixels.chunks(784)) {
            assert_eq!(to_bytes(s), raw);
        }
    }

    #[test]
    fn idx_bad_magic() {
        let mut bytes = encode_idx_images(&fixture(1, 2, 2));
        bytes[3] = 0x01;
        let err = parse_idx_images(&bytes).unwrap_err().to_string();
        assert!(err.contains("bad magic at offset 0"), "{err}");
    }

    #[test]
    fn idx_truncated_pixels() {
        let bytes = encode_idx_images(&fixture(2, 3, 3));
        let err = parse_idx_images(&bytes[..bytes.len() - 5]).unwrap_err().to_string();
        assert!(err.contains("expected 18 bytes, found 13"), "{err}");
        assert!(err.contains("offset 16"), "{err}");
    }

    #[test]
    fn idx_truncated_header_and_overflow() {
        let err = parse_idx_images(&[0, 0, 8, 3, 0, 0]).unwrap_err().to_string();
        assert!(err.contains("offset 4"), "{err}");
        let mut bytes = Vec::new();
        for v in [IDX_IMAGES_MAGIC, u32::MAX, u32::MAX, u32::MAX] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let err = parse_idx_images(&bytes).unwrap_err().to_string();
        assert!(err.contains("overflow"), "{err}");
    }

    #[test]
    fn idx_labels() {
        let labels = vec![3u8, 1, 4, 1, 5];
        assert_eq!(parse_idx_labels(&encode_idx_labels(&labels)).unwrap(), labels);
        let mut bad = encode_idx_labels(&labels);
        bad.push(9);
        assert!(parse_idx_labels(&bad).unwrap_err().to_string().contains("trailing"));
        assert!(parse_idx_labels(&encode_idx_images(&fixture(1, 1, 1))).is_err());
    }

    fn image_ds(values: Vec<f64>, h: usize, w: usize) -> Dataset {
        Dataset::new(
            "img",
            Shape::Image {
                channels: 1,
                height: h,
                width: w,
            },
            vec![values],
        )
        .unwrap()
    }

    #[test]
    fn downsample_examples() {
        let ds = image_ds((0..16).map(|v| v as f64 / 16.0).collect(), 4, 4);
        assert_eq!(downsample(&ds, 1).unwrap(), ds);

        let flat = image_ds(vec![0.3; 16], 4, 4);
        let out = downsample(&flat, 2).unwrap();
        assert!(out.samples[0].iter().all(|&v| (v - 0.3).abs() < 1e-15));
        assert_eq!(out.shape.len(), 4);

        let checker: Vec<f64> = (0..16).map(|i| ((i / 4 + i % 4) % 2) as f64).collect();
        let out = downsample(&image_ds(checker, 4, 4), 2).unwrap();
        assert_eq!(out.samples[0], vec![0.5; 4]);

        assert!(downsample(&ds, 3).is_err());
    }

    #[test]
    fn crop_keeps_the_center() {
        let ds = image_ds((0..16).map(f64::from).collect(), 4, 4);
        let out = crop_center(&ds, 2, 2).unwrap();
        assert_eq!(out.samples[0], vec![5.0, 6.0, 9.0, 10.0]);
        assert!(crop_center(&ds, 5, 2).is_err());
    }

    #[test]
    fn synth_gaussian_moments() {
        let ds = synth_gaussian(&[0.0], 1.0, 100_000, 4).unwrap();
        let xs: Vec<f64> = ds.samples.iter().map(|s| s[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        assert!((0.99..=1.01).contains(&sd), "{sd}");
        assert_eq!(ds, synth_gaussian(&[0.0], 1.0, 100_000, 4).unwrap());
    }

    #[test]
    fn synth_gmm_is_bimodal() {
        let comps = vec![
            GmmComponent {
                weight: 1.0,
                mean: vec![2.0],
                std: 0.5,
            },
            GmmComponent {
                weight: 1.0,
                mean: vec![-2.0],
                std: 0.5,
            },
        ];
        let n = 20_000;
        let ds = synth_gmm(&comps, n, 6).unwrap();
        let pos = ds.samples.iter().filter(|s| s[0] > 0.0).count() as f64;
        let sd = (n as f64 * 0.25).sqrt();
        assert!((pos - n as f64 / 2.0).abs() < 3.0 * sd, "{pos}");
        assert_eq!(ds, synth_gmm(&comps, n, 6).unwrap());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_csv(&path, &["a", "b"], &[]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "a,b\n");

        let vals = [0.1, -1.0 / 3.0, 1e-300, f64::INFINITY];
        let rows: Vec<Vec<Cell>> = vals
            .iter()
            .enumerate()
            .map(|(i, &v)| vec![Cell::from(i), Cell::Float(v)])
            .collect();
        write_csv(&path, &["i", "v"], &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(!text.contains('\r'));
        assert!(text.contains(",inf\n"));
        let (header, back) = read_csv(&path).unwrap();
        assert_eq!(header, vec!["i", "v"]);
        for (row, &v) in back.iter().zip(&vals) {
            assert_eq!(parse_float(&row[1]).unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn csv_io_errors_name_the_path() {
        let err = write_csv(Path::new("/nonexistent-dir/x.csv"), &["a"], &[]).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.csv"), "{err}");
    }
}
