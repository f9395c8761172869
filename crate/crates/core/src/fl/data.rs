//! Labelled datasets, synthetic blob generation and file ingestion.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::FlError;
use crate::ledger::ClientId;
use crate::scalar::Scalar;

/// Row-major feature matrix with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Scalar = f64> {
    features: usize,
    x: Vec<T>,
    y: Vec<usize>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(features: usize, x: Vec<T>, y: Vec<usize>) -> Result<Self, FlError> {
        if features == 0 || x.len() != features * y.len() {
            return Err(FlError::Data(format!(
                "{} values do not form {} rows of {features} features",
                x.len(),
                y.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(FlError::Data("non-finite feature value".into()));
        }
        Ok(Self { features, x, y })
    }

    pub fn empty(features: usize) -> Self {
        Self { features, x: Vec::new(), y: Vec::new() }
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> (&[T], usize) {
        (&self.x[i * self.features..(i + 1) * self.features], self.y[i])
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = (&[T], usize)> + '_ {
        self.x.chunks_exact(self.features).zip(self.y.iter().copied())
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn push(&mut self, x: &[T], y: usize) {
        assert_eq!(x.len(), self.features);
        self.x.extend_from_slice(x);
        self.y.push(y);
    }

    /// Rows `[start, end)` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            features: self.features,
            x: self.x[start * self.features..end * self.features].to_vec(),
            y: self.y[start..end].to_vec(),
        }
    }

    pub fn concat(parts: &[&Dataset<T>]) -> Self {
        let features = parts.first().map(|d| d.features).unwrap_or(1);
        let mut out = Self::empty(features);
        for p in parts {
            assert_eq!(p.features, features);
            out.x.extend_from_slice(&p.x);
            out.y.extend_from_slice(&p.y);
        }
        out
    }

    /// Canonical encoding of the feature rows, for byte-level scans.
    pub fn feature_bytes(&self) -> Vec<u8> {
        crate::codec::encode_vector(&self.x)
    }
}

/// A client's local data and its aggregation weight `w_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset<T: Scalar = f64> {
    pub client_id: ClientId,
    pub data: Dataset<T>,
    pub weight: T,
}

impl<T: Scalar> ClientDataset<T> {
    pub fn new(client_id: ClientId, data: Dataset<T>, weight: T) -> Result<Self, FlError> {
        if data.is_empty() {
            return Err(FlError::Data(format!("{client_id} has no examples")));
        }
        if !(weight.is_finite() && weight > T::zero()) {
            return Err(FlError::Data(format!("{client_id} weight must be positive")));
        }
        Ok(Self { client_id, data, weight })
    }

    /// Weight proportional to the local sample count.
    pub fn sized(client_id: ClientId, data: Dataset<T>) -> Result<Self, FlError> {
        let w = T::from_usize(data.len()).unwrap_or_else(T::one);
        Self::new(client_id, data, w)
    }
}

/// Isotropic Gaussian clusters, one centre per class.
#[derive(Debug, Clone, PartialEq)]
pub struct Blobs {
    pub centers: Vec<Vec<f64>>,
    pub spread: f64,
}

impl Blobs {
    /// Class centres spaced `separation` apart along distinct axes.
    pub fn axis_aligned(features: usize, classes: usize, separation: f64, spread: f64) -> Self {
        let centers = (0..classes)
            .map(|c| {
                let mut v = vec![0.0; features];
                v[c % features] += separation * if (c / features).is_multiple_of(2) { 1.0 } else { -1.0 };
                v
            })
            .collect();
        Self { centers, spread }
    }

    pub fn features(&self) -> usize {
        self.centers.first().map(Vec::len).unwrap_or(0)
    }

    /// `n` examples with labels drawn uniformly, features from the class
    /// cluster shifted by `offset`. `relabel` maps the class index to the
    /// emitted label.
    pub fn sample<T: Scalar, R: Rng + ?Sized>(
        &self,
        n: usize,
        offset: &[f64],
        relabel: impl Fn(usize) -> usize,
        rng: &mut R,
    ) -> Dataset<T> {
        let d = self.features();
        let mut out = Dataset::empty(d);
        let mut row = vec![T::zero(); d];
        for _ in 0..n {
            let c = rng.gen_range(0..self.centers.len());
            for (j, v) in row.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(rng);
                *v = T::lit(self.centers[c][j] + offset.get(j).copied().unwrap_or(0.0) + self.spread * z);
            }
            out.push(&row, relabel(c));
        }
        out
    }
}

/// Reads `f1,...,fd,label` rows. Lines starting with `#` are skipped.
pub fn read_delimited<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>, FlError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| FlError::Data(e.to_string()))?;
    let mut features = None;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| FlError::Data(e.to_string()))?;
        let d =
            record.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| {
                FlError::Data(format!("row {}: need at least one feature and a label", i + 1))
            })?;
        if *features.get_or_insert(d) != d {
            return Err(FlError::Data(format!("row {}: ragged row", i + 1)));
        }
        for field in record.iter().take(d) {
            let v: f64 =
                field.parse().map_err(|_| FlError::Data(format!("row {}: bad number {field:?}", i + 1)))?;
            x.push(T::lit(v));
        }
        let label = record[d]
            .parse()
            .map_err(|_| FlError::Data(format!("row {}: bad label {:?}", i + 1, &record[d])))?;
        y.push(label);
    }
    Dataset::new(features.unwrap_or(1), x, y)
}

const IDX_UBYTE: u8 = 0x08;

/// Parses an IDX file of unsigned bytes: `0 0 type ndims`, big-endian
/// `u32` dimensions, then the data. Returns `(dims, data)`.
pub fn parse_idx(bytes: &[u8]) -> Result<(Vec<usize>, Vec<u8>), FlError> {
    let bad = |m: &str| FlError::Data(format!("idx: {m}"));
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(bad("bad magic"));
    }
    if bytes[2] != IDX_UBYTE {
        return Err(bad("only unsigned-byte data is supported"));
    }
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let total: usize = dims.iter().product();
    if bytes.len() != header + total {
        return Err(bad("payload length does not match dimensions"));
    }
    Ok((dims, bytes[header..].to_vec()))
}

/// Loads an IDX image file and its label file, scaling pixels to `[0, 1]`
/// and keeping at most `limit` examples.
pub fn read_idx_pair<T: Scalar>(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<Dataset<T>, FlError> {
    let read = |p: &Path| -> Result<Vec<u8>, FlError> {
        let mut buf = Vec::new();
        std::fs::File::open(p)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| FlError::Data(format!("{}: {e}", p.display())))?;
        Ok(buf)
    };
    let (idims, pixels) = parse_idx(&read(images.as_ref())?)?;
    let (ldims, labels) = parse_idx(&read(labels.as_ref())?)?;
    if idims.is_empty() || ldims.len() != 1 || idims[0] != ldims[0] {
        return Err(FlError::Data("idx image/label counts disagree".into()));
    }
    let per: usize = idims[1..].iter().product::<usize>().max(1);
    let n = limit.map_or(idims[0], |l| l.min(idims[0]));
    let x = pixels[..n * per].iter().map(|&p| T::lit(f64::from(p) / 255.0)).collect();
    let y = labels[..n].iter().map(|&l| l as usize).collect();
    Dataset::new(per, x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::io::Write;

    #[test]
    fn dataset_shape_checks() {
        assert!(Dataset::<f64>::new(2, vec![1.0; 5], vec![0, 1]).is_err());
        assert!(Dataset::<f64>::new(2, vec![1.0, f64::NAN], vec![0]).is_err());
        let d = Dataset::<f64>::new(2, vec![1.0, 2.0, 3.0, 4.0], vec![0, 1]).unwrap();
        assert_eq!(d.row(1), (&[3.0, 4.0][..], 1));
    }

    #[test]
    fn client_dataset_rules() {
        let d = Dataset::<f64>::new(1, vec![1.0], vec![0]).unwrap();
        assert!(ClientDataset::new(ClientId(1), d.clone(), 0.0).is_err());
        assert!(ClientDataset::new(ClientId(1), Dataset::empty(1), 1.0).is_err());
        assert_eq!(ClientDataset::sized(ClientId(1), d).unwrap().weight, 1.0);
    }

    #[test]
    fn blobs_are_reproducible() {
        let blobs = Blobs::axis_aligned(3, 3, 4.0, 1.0);
        let a: Dataset<f64> = blobs.sample(20, &[], |c| c, &mut ChaCha20Rng::seed_from_u64(1));
        let b: Dataset<f64> = blobs.sample(20, &[], |c| c, &mut ChaCha20Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert!(a.labels().iter().all(|&l| l < 3));
    }

    #[test]
    fn delimited_ingestion() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# x1,x2,label\n0.5, 1.0, 1\n-2,3e-1,0").unwrap();
        let d: Dataset<f64> = read_delimited(f.path()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.row(1), (&[-2.0, 0.3][..], 0));

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "1,2,0\n1,0").unwrap();
        assert!(read_delimited::<f64>(bad.path()).is_err());
    }

    #[test]
    fn idx_ingestion() {
        let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 1];
        images.extend_from_slice(&[0, 255, 51, 102]);
        let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        let (dims, data) = parse_idx(&images).unwrap();
        assert_eq!(dims, vec![2, 2, 1]);
        assert_eq!(data, vec![0, 255, 51, 102]);

        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("img"), &images).unwrap();
        std::fs::write(dir.path().join("lbl"), &labels).unwrap();
        let d: Dataset<f64> = read_idx_pair(dir.path().join("img"), dir.path().join("lbl"), None).unwrap();
        assert_eq!(d.features(), 2);
        assert_eq!(d.row(0), (&[0.0, 1.0][..], 7));
        assert_eq!(d.row(1), (&[0.2, 0.4][..], 3));
        let one: Dataset<f64> =
            read_idx_pair(dir.path().join("img"), dir.path().join("lbl"), Some(1)).unwrap();
        assert_eq!(one.len(), 1);

        assert!(parse_idx(&[1, 0, 8, 0]).is_err());
        assert!(parse_idx(&[0, 0, 8, 1, 0, 0, 0, 5, 1]).is_err());
    }
}
