//! Synthetic datasets with controllable ambiguity, and CSV / binary
//! feature files.
//!
//! CSV files start with the header `id,label,f0,...,f{D-1}`. Labels of
//! multi-label rows are joined with `|`. Features are written in the
//! shortest decimal form that parses back to the same `f64`.
//!
//! The binary format uses little-endian integers and floats:
//!
//! ```text
//! magic        4 bytes  "IDMD"
//! version      u32      1
//! n_samples    u32
//! dim          u32
//! per sample:  id u64, n_labels u32, n_labels x u32
//! features     n_samples x dim x f64, row-major
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IdmlError, Result};
use crate::model::checkpoint::Reader;
use crate::rng::Rng;
use crate::types::{dot, norm, LabelSet, Sample, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub per_class: usize,
    pub input_dim: usize,
    /// Distance of every class mean from the origin.
    pub class_sep: f64,
    pub within_sigma: f64,
    /// Fraction of each class placed midway between its mean and another
    /// class mean of the same split.
    pub ambiguous_frac: f64,
    /// Fraction of each split whose label is replaced by another class of
    /// the same split.
    pub mislabel_frac: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_classes: 10,
            per_class: 50,
            input_dim: 16,
            class_sep: 4.0,
            within_sigma: 0.4,
            ambiguous_frac: 0.0,
            mislabel_frac: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 4 {
            return Err(IdmlError::param(format!(
                "n_classes must be >= 4 for a class-disjoint split, got {}",
                self.n_classes
            )));
        }
        if self.per_class == 0 || self.input_dim == 0 {
            return Err(IdmlError::param("per_class and input_dim must be positive"));
        }
        for (name, v) in [("class_sep", self.class_sep), ("within_sigma", self.within_sigma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(IdmlError::param(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("ambiguous_frac", self.ambiguous_frac), ("mislabel_frac", self.mislabel_frac)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(IdmlError::param(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Labelled feature vectors with integer ids.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    pub ids: Vec<u64>,
    pub features: Vec<Vector>,
    pub labels: Vec<LabelSet>,
}

impl Dataset {
    pub fn new(ids: Vec<u64>, features: Vec<Vector>, labels: Vec<LabelSet>) -> Result<Self> {
        if ids.len() != features.len() || labels.len() != features.len() {
            return Err(IdmlError::shape(format!(
                "{} ids, {} feature rows, {} label sets",
                ids.len(),
                features.len(),
                labels.len()
            )));
        }
        if let Some(f) = features.first() {
            if features.iter().any(|x| x.dim() != f.dim()) {
                return Err(IdmlError::shape("feature rows differ in dimension"));
            }
        }
        Ok(Dataset { ids, features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, |f| f.dim())
    }

    /// Distinct labels over all rows, ascending.
    pub fn classes(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.labels.iter().flat_map(|l| l.labels().iter().copied()).collect();
        set.into_iter().collect()
    }

    pub fn samples(&self) -> Vec<Sample> {
        self.features
            .iter()
            .zip(&self.labels)
            .map(|(f, l)| Sample {
                feature: f.clone(),
                labels: l.clone(),
                is_mixed: false,
            })
            .collect()
    }

    pub fn id_strings(&self) -> Vec<String> {
        self.ids.iter().map(|i| i.to_string()).collect()
    }

    fn subset(&self, keep: impl Fn(&LabelSet) -> bool) -> Dataset {
        let mut out = Dataset::default();
        for i in 0..self.len() {
            if keep(&self.labels[i]) {
                out.ids.push(self.ids[i]);
                out.features.push(self.features[i].clone());
                out.labels.push(self.labels[i].clone());
            }
        }
        out
    }

    /// Class-disjoint split: the first `ceil(C / 2)` of the `C` distinct
    /// labels (ascending) form the training classes. Rows whose labels
    /// straddle both halves are dropped.
    pub fn split(&self) -> Result<Split> {
        let classes = self.classes();
        if classes.len() < 4 {
            return Err(IdmlError::param(format!(
                "a class-disjoint split needs >= 4 classes, found {}",
                classes.len()
            )));
        }
        let train_classes: BTreeSet<u32> = classes[..classes.len().div_ceil(2)].iter().copied().collect();
        let in_train = |l: &LabelSet| l.labels().iter().all(|c| train_classes.contains(c));
        let in_test = |l: &LabelSet| l.labels().iter().all(|c| !train_classes.contains(c));
        let train = self.subset(in_train);
        let test = self.subset(in_test);
        let dropped = self.len() - train.len() - test.len();
        Ok(Split { train, test, dropped })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    /// Rows carrying labels from both halves.
    pub dropped: usize,
}

/// How a generated sample was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleTruth {
    /// Class whose mean (or half of whose midpoint) generated the sample.
    pub source_class: u32,
    /// The other class of an ambiguous sample's midpoint.
    pub partner: Option<u32>,
    pub mislabeled: bool,
}

/// Class means: `class_sep` times orthonormal directions while the input
/// dimension allows, random unit directions beyond that.
pub fn class_means(cfg: &SynthConfig, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_classes);
    while basis.len() < cfg.n_classes {
        let mut v: Vec<f64> = (0..cfg.input_dim).map(|_| rng.normal()).collect();
        if basis.len() < cfg.input_dim {
            for b in &basis {
                let p = dot(&v, b);
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= p * bi;
                }
            }
        }
        let n = norm(&v);
        if n < 1e-8 {
            continue;
        }
        basis.push(v.iter().map(|x| x / n).collect());
    }
    basis
        .into_iter()
        .map(|b| b.into_iter().map(|x| x * cfg.class_sep).collect())
        .collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    Ok(generate_with_truth(cfg)?.0)
}

/// Generates a dataset along with the provenance of every sample.
///
/// Ambiguous samples sit at the midpoint of their class mean and a partner
/// mean from the same split, plus noise orthogonal to the segment joining
/// the two means, so each is strictly nearer the midpoint than either mean.
/// They keep their own class label.
pub fn generate_with_truth(cfg: &SynthConfig) -> Result<(Dataset, Vec<SampleTruth>)> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let means = class_means(cfg, &mut rng);
    let n_train = cfg.n_classes.div_ceil(2);
    let half = |c: usize| if c < n_train { 0..n_train } else { n_train..cfg.n_classes };
    let n_amb = (cfg.ambiguous_frac * cfg.per_class as f64).round() as usize;

    let mut ds = Dataset::default();
    let mut truth = Vec::new();
    for c in 0..cfg.n_classes {
        for k in 0..cfg.per_class {
            let noise: Vec<f64> = (0..cfg.input_dim).map(|_| cfg.within_sigma * rng.normal()).collect();
            let (x, partner) = if k < n_amb {
                let r = half(c);
                let mut p = r.start + rng.below(r.len() - 1);
                if p >= c {
                    p += 1;
                }
                let axis: Vec<f64> = means[c].iter().zip(&means[p]).map(|(a, b)| a - b).collect();
                let a2 = dot(&axis, &axis);
                let proj = dot(&noise, &axis) / a2;
                let x: Vec<f64> = (0..cfg.input_dim)
                    .map(|d| 0.5 * (means[c][d] + means[p][d]) + noise[d] - proj * axis[d])
                    .collect();
                (x, Some(p as u32))
            } else {
                (means[c].iter().zip(&noise).map(|(m, e)| m + e).collect(), None)
            };
            ds.ids.push(ds.ids.len() as u64);
            ds.features.push(Vector::new(x)?);
            ds.labels.push(LabelSet::single(c as u32));
            truth.push(SampleTruth {
                source_class: c as u32,
                partner,
                mislabeled: false,
            });
        }
    }

    for r in [0..n_train, n_train..cfg.n_classes] {
        let rows: Vec<usize> = (r.start * cfg.per_class..r.end * cfg.per_class).collect();
        let n_bad = (cfg.mislabel_frac * rows.len() as f64).round() as usize;
        for pick in rng.choose_distinct(rows.len(), n_bad) {
            let i = rows[pick];
            let c = truth[i].source_class as usize;
            let mut wrong = r.start + rng.below(r.len() - 1);
            if wrong >= c {
                wrong += 1;
            }
            ds.labels[i] = LabelSet::single(wrong as u32);
            truth[i].mislabeled = true;
        }
    }
    Ok((ds, truth))
}

fn parse_labels(field: &str, line: u64) -> Result<LabelSet> {
    let labels = field
        .split('|')
        .map(|t| {
            t.trim()
                .parse::<u32>()
                .map_err(|_| IdmlError::format(line, format!("bad label '{t}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    LabelSet::new(labels).map_err(|_| IdmlError::format(line, "empty label"))
}

fn csv_error(e: csv::Error) -> IdmlError {
    let line = e.position().map_or(0, |p| p.line());
    IdmlError::format(line, e.to_string())
}

pub fn read_csv(reader: impl std::io::Read) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h.map_err(csv_error)?,
        None => return Err(IdmlError::format(1, "empty file")),
    };
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label" {
        return Err(IdmlError::format(1, "header must be id,label,f0,..."));
    }
    let dim = header.len() - 2;
    for (d, name) in header.iter().skip(2).enumerate() {
        if name != format!("f{d}") {
            return Err(IdmlError::format(1, format!("expected column f{d}, found '{name}'")));
        }
    }
    let mut ds = Dataset::default();
    for rec in records {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != dim + 2 {
            return Err(IdmlError::format(line, format!("expected {} fields, found {}", dim + 2, rec.len())));
        }
        let id = rec[0]
            .trim()
            .parse::<u64>()
            .map_err(|_| IdmlError::format(line, format!("bad id '{}'", &rec[0])))?;
        let labels = parse_labels(&rec[1], line)?;
        let x = rec
            .iter()
            .skip(2)
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| IdmlError::format(line, format!("bad feature '{f}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        ds.ids.push(id);
        ds.features.push(Vector::new(x)?);
        ds.labels.push(labels);
    }
    if ds.is_empty() {
        return Err(IdmlError::format(1, "no data rows"));
    }
    Ok(ds)
}

pub fn write_csv(ds: &Dataset, writer: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..ds.dim()).map(|d| format!("f{d}")));
    w.write_record(&header).map_err(csv_error)?;
    for i in 0..ds.len() {
        let mut row = vec![ds.ids[i].to_string(), ds.labels[i].to_string()];
        row.extend(ds.features[i].iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    read_csv(fs::File::open(path)?)
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_csv(ds, fs::File::create(path)?)
}

const MAGIC: &[u8; 4] = b"IDMD";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| IdmlError::param(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn to_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + ds.len() * (16 + 8 * ds.dim()));
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize)?;
    put_u32(&mut out, ds.len())?;
    put_u32(&mut out, ds.dim())?;
    for (id, l) in ds.ids.iter().zip(&ds.labels) {
        out.extend_from_slice(&id.to_le_bytes());
        put_u32(&mut out, l.len())?;
        for c in l.labels() {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    for f in &ds.features {
        for v in f.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    r.expect_magic(MAGIC, VERSION)?;
    let n = r.usize()?;
    let dim = r.usize()?;
    if n > 0 && dim == 0 {
        return Err(IdmlError::format(0, "zero feature dimension"));
    }
    let mut ds = Dataset::default();
    for _ in 0..n {
        ds.ids.push(r.u64()?);
        let k = r.usize()?;
        let labels = (0..k).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        ds.labels
            .push(LabelSet::new(labels).map_err(|_| IdmlError::format(0, "sample with no labels"))?);
    }
    for _ in 0..n {
        let x = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        ds.features.push(Vector::new(x)?);
    }
    r.finish()?;
    Ok(ds)
}

pub fn save_binary(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(ds)?)?;
    Ok(())
}

pub fn load_binary(path: impl AsRef<Path>) -> Result<Dataset> {
    from_bytes(&fs::read(path)?)
}

/// Loads either format, recognizing the binary one by its magic bytes.
pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(MAGIC) {
        from_bytes(&bytes)
    } else {
        read_csv(bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::diff_norm;

    fn cfg() -> SynthConfig {
        SynthConfig {
            n_classes: 6,
            per_class: 20,
            input_dim: 8,
            ambiguous_frac: 0.3,
            mislabel_frac: 0.1,
            seed: 4,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate(&cfg()).unwrap(), generate(&cfg()).unwrap());
        let other = SynthConfig { seed: 5, ..cfg() };
        assert_ne!(generate(&cfg()).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn invalid_configs() {
        for bad in [
            SynthConfig { n_classes: 3, ..cfg() },
            SynthConfig { per_class: 0, ..cfg() },
            SynthConfig { ambiguous_frac: 1.5, ..cfg() },
            SynthConfig { within_sigma: 0.0, ..cfg() },
        ] {
            assert!(matches!(generate(&bad), Err(IdmlError::Param(_))));
        }
    }

    #[test]
    fn split_is_class_disjoint() {
        let s = generate(&cfg()).unwrap().split().unwrap();
        let a: BTreeSet<u32> = s.train.classes().into_iter().collect();
        let b: BTreeSet<u32> = s.test.classes().into_iter().collect();
        assert!(a.is_disjoint(&b));
        assert_eq!(s.dropped, 0);
        assert_eq!(s.train.len() + s.test.len(), 120);
    }

    #[test]
    fn ambiguous_samples_sit_near_midpoints() {
        let c = cfg();
        let (ds, truth) = generate_with_truth(&c).unwrap();
        let means = class_means(&c, &mut Rng::new(c.seed));
        let mut seen = 0;
        for (x, t) in ds.features.iter().zip(&truth) {
            if let Some(p) = t.partner {
                let (a, b) = (&means[t.source_class as usize], &means[p as usize]);
                let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
                let to_mid = diff_norm(x, &mid);
                assert!(to_mid < diff_norm(x, a) && to_mid < diff_norm(x, b));
                let n_train = c.n_classes.div_ceil(2) as u32;
                assert_eq!(t.source_class < n_train, p < n_train);
                seen += 1;
            }
        }
        assert_eq!(seen, 6 * 6);
        assert_eq!(truth.iter().filter(|t| t.mislabeled).count(), 12);
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let ds = generate(&cfg()).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn multi_label_row() {
        let ds = read_csv("id,label,f0,f1\n3,1|2,0.5,0.25\n".as_bytes()).unwrap();
        assert_eq!(ds.ids, vec![3]);
        assert_eq!(ds.labels[0], LabelSet::new([1, 2]).unwrap());
        assert_eq!(ds.features[0].as_slice(), &[0.5, 0.25]);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let cases = [
            ("", 1),
            ("id,label,f0,f1\n0,1,0.5,0.25\n1,1,0.5\n", 3),
            ("id,label,f0\n0,1,abc\n", 2),
            ("id,label,f0\n0,x,1.0\n", 2),
            ("id,label\n", 1),
        ];
        for (text, want) in cases {
            match read_csv(text.as_bytes()) {
                Err(IdmlError::Format { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn binary_round_trip_and_corruption() {
        let mut ds = generate(&cfg()).unwrap();
        ds.labels[0] = LabelSet::new([0, 3]).unwrap();
        let bytes = to_bytes(&ds).unwrap();
        assert_eq!(&bytes[..4], b"IDMD");
        assert_eq!(from_bytes(&bytes).unwrap(), ds);
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(from_bytes(&bad).is_err());
    }

    #[test]
    fn split_drops_straddling_rows() {
        let mut ds = generate(&cfg()).unwrap();
        ds.labels[0] = LabelSet::new([0, 5]).unwrap();
        assert_eq!(ds.split().unwrap().dropped, 1);
    }
}
