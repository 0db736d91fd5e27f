//! Labeled datasets: in-memory representation, file formats, class statistics
//! and the synthetic two-Gaussian generator.
//!
//! Two text formats are supported:
//!
//! * `dense-csv`: one point per line, `label,f1,...,fd` with label in {-1, 1}.
//! * `sparse-text`: a `#d=<int>` header followed by lines `label idx:val ...`
//!   with 0-based indices and non-negative integer counts. Sparse input is
//!   densified at load and flagged as integer-valued.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecops;

/// Binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Label {
    Pos,
    Neg,
}

impl Label {
    pub const BOTH: [Label; 2] = [Label::Pos, Label::Neg];

    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Label::Pos => 1.0,
            Label::Neg => -1.0,
        }
    }

    pub fn opposite(self) -> Label {
        match self {
            Label::Pos => Label::Neg,
            Label::Neg => Label::Pos,
        }
    }

    pub fn from_value(v: f64) -> Option<Label> {
        if v == 1.0 {
            Some(Label::Pos)
        } else if v == -1.0 {
            Some(Label::Neg)
        } else {
            None
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        match l {
            Label::Pos => 1,
            Label::Neg => -1,
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = String;
    fn try_from(v: i8) -> std::result::Result<Self, String> {
        Label::from_value(v as f64).ok_or_else(|| format!("label {v} is not -1 or 1"))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", i8::from(*self))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub x: Vec<f64>,
    pub y: Label,
}

impl LabeledPoint {
    pub fn new(x: Vec<f64>, y: Label) -> Self {
        Self { x, y }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_nonneg_integer(&self) -> bool {
        self.x.iter().all(|v| *v >= 0.0 && v.fract() == 0.0)
    }
}

/// An ordered collection of points sharing one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    d: usize,
    integer_features: bool,
    points: Vec<LabeledPoint>,
}

impl Dataset {
    pub fn empty(d: usize, integer_features: bool) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        Ok(Self {
            d,
            integer_features,
            points: Vec::new(),
        })
    }

    pub fn from_points(d: usize, integer_features: bool, points: Vec<LabeledPoint>) -> Result<Self> {
        let mut ds = Self::empty(d, integer_features)?;
        ds.points.reserve(points.len());
        for p in points {
            ds.push(p)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, p: LabeledPoint) -> Result<()> {
        Error::check_dim(self.d, p.dim())?;
        if self.integer_features && !p.is_nonneg_integer() {
            return Err(Error::InvalidArgument(
                "integer-feature dataset requires non-negative integer coordinates".into(),
            ));
        }
        self.points.push(p);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn integer_features(&self) -> bool {
        self.integer_features
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledPoint> {
        self.points.iter()
    }

    pub fn count(&self, y: Label) -> usize {
        self.points.iter().filter(|p| p.y == y).count()
    }

    /// Concatenation `self ∪ other` (as multisets, order preserved).
    pub fn union(&self, other: &Dataset) -> Result<Dataset> {
        Error::check_dim(self.d, other.d)?;
        let mut out = self.clone();
        out.integer_features = self.integer_features && other.integer_features;
        out.points.extend(other.points.iter().cloned());
        Ok(out)
    }

    /// Keeps the points for which `keep` returns true.
    pub fn retain_by(&self, mut keep: impl FnMut(&LabeledPoint) -> bool) -> Dataset {
        Dataset {
            d: self.d,
            integer_features: self.integer_features,
            points: self.points.iter().filter(|p| keep(p)).cloned().collect(),
        }
    }

    /// Splits into the first `k` points and the rest.
    pub fn split_at(&self, k: usize) -> (Dataset, Dataset) {
        let k = k.min(self.len());
        let mk = |pts: &[LabeledPoint]| Dataset {
            d: self.d,
            integer_features: self.integer_features,
            points: pts.to_vec(),
        };
        (mk(&self.points[..k]), mk(&self.points[k..]))
    }

    /// Largest Euclidean norm over the points (0 for an empty set).
    pub fn max_norm(&self) -> f64 {
        self.points
            .iter()
            .map(|p| vecops::norm(&p.x))
            .fold(0.0, f64::max)
    }

    pub fn to_dense_csv(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            out.push_str(&p.y.to_string());
            for v in &p.x {
                out.push(',');
                out.push_str(&format_float(*v));
            }
            out.push('\n');
        }
        out
    }

    /// Sparse text form; only meaningful for non-negative integer features,
    /// but any value is written verbatim.
    pub fn to_sparse_text(&self) -> String {
        let mut out = format!("#d={}\n", self.d);
        for p in &self.points {
            out.push_str(&p.y.to_string());
            for (i, v) in p.x.iter().enumerate() {
                if *v != 0.0 {
                    out.push_str(&format!(" {}:{}", i, format_float(*v)));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path, format: Format) -> Result<()> {
        let text = match format {
            Format::DenseCsv => self.to_dense_csv(),
            Format::SparseText => self.to_sparse_text(),
        };
        crate::report::write_atomic(path, text.as_bytes())
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a LabeledPoint;
    type IntoIter = std::slice::Iter<'a, LabeledPoint>;
    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}

/// Shortest representation that parses back to the same `f64`.
fn format_float(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    DenseCsv,
    SparseText,
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense-csv" | "csv" => Ok(Format::DenseCsv),
            "sparse-text" | "sparse" => Ok(Format::SparseText),
            other => Err(Error::Config(format!("unknown dataset format '{other}'"))),
        }
    }
}

pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    match format {
        Format::DenseCsv => parse_dense_csv(&text),
        Format::SparseText => parse_sparse_text(&text),
    }
}

fn parse_label(tok: &str, line: usize) -> Result<Label> {
    let v: f64 = tok.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid label '{tok}'"),
    })?;
    Label::from_value(v).ok_or_else(|| Error::Parse {
        line,
        msg: format!("label {tok} is not -1 or 1"),
    })
}

pub fn parse_dense_csv(text: &str) -> Result<Dataset> {
    let mut d: Option<usize> = None;
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let mut fields = raw.split(',');
        let y = parse_label(fields.next().unwrap_or(""), line)?;
        let x = fields
            .map(|f| {
                f.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("invalid feature value '{f}'"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if x.is_empty() {
            return Err(Error::Parse {
                line,
                msg: "row has no features".into(),
            });
        }
        match d {
            None => d = Some(x.len()),
            Some(d) if d != x.len() => {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {d} features, found {}", x.len()),
                })
            }
            _ => {}
        }
        points.push(LabeledPoint::new(x, y));
    }
    let d = d.ok_or(Error::EmptyDataset)?;
    Dataset::from_points(d, false, points)
}

pub fn parse_sparse_text(text: &str) -> Result<Dataset> {
    let mut d: Option<usize> = None;
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        if let Some(h) = raw.strip_prefix("#d=") {
            let v: usize = h.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid dimension header '{raw}'"),
            })?;
            if v == 0 {
                return Err(Error::Parse {
                    line,
                    msg: "dimension must be positive".into(),
                });
            }
            d = Some(v);
            continue;
        }
        if raw.starts_with('#') {
            continue;
        }
        let d = d.ok_or_else(|| Error::Parse {
            line,
            msg: "missing '#d=<int>' header before data".into(),
        })?;
        let mut toks = raw.split_whitespace();
        let y = parse_label(toks.next().unwrap_or(""), line)?;
        let mut x = vec![0.0; d];
        let mut seen = vec![false; d];
        for tok in toks {
            let bad = || Error::Parse {
                line,
                msg: format!("invalid entry '{tok}'"),
            };
            let (idx, val) = tok.split_once(':').ok_or_else(bad)?;
            let idx: usize = idx.parse().map_err(|_| bad())?;
            let val: f64 = val.parse().map_err(|_| bad())?;
            if idx >= d {
                return Err(Error::Parse {
                    line,
                    msg: format!("index {idx} out of range for d={d}"),
                });
            }
            if !(val >= 0.0 && val.fract() == 0.0 && val.is_finite()) {
                return Err(Error::Parse {
                    line,
                    msg: format!("value {val} is not a non-negative integer count"),
                });
            }
            if seen[idx] {
                return Err(Error::Parse {
                    line,
                    msg: format!("duplicate index {idx}"),
                });
            }
            seen[idx] = true;
            x[idx] = val;
        }
        points.push(LabeledPoint::new(x, y));
    }
    let d = d.ok_or(Error::Parse {
        line: 1,
        msg: "missing '#d=<int>' header".into(),
    })?;
    Dataset::from_points(d, true, points)
}

/// Per-class centroids and fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub mu_plus: Vec<f64>,
    pub mu_minus: Vec<f64>,
    pub p_plus: f64,
    pub p_minus: f64,
    pub n_plus: usize,
    pub n_minus: usize,
    /// max ‖x‖₂ over the dataset.
    pub radius_bound: f64,
}

impl ClassStats {
    pub fn mu(&self, y: Label) -> &[f64] {
        match y {
            Label::Pos => &self.mu_plus,
            Label::Neg => &self.mu_minus,
        }
    }

    pub fn p(&self, y: Label) -> f64 {
        match y {
            Label::Pos => self.p_plus,
            Label::Neg => self.p_minus,
        }
    }

    pub fn count(&self, y: Label) -> usize {
        match y {
            Label::Pos => self.n_plus,
            Label::Neg => self.n_minus,
        }
    }

    pub fn n(&self) -> usize {
        self.n_plus + self.n_minus
    }
}

pub fn class_stats(data: &Dataset) -> Result<ClassStats> {
    let d = data.dim();
    let mut sums = [vec![0.0; d], vec![0.0; d]];
    let mut counts = [0usize; 2];
    for p in data {
        let k = (p.y == Label::Neg) as usize;
        vecops::axpy(1.0, &p.x, &mut sums[k]);
        counts[k] += 1;
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::Stats(format!(
            "both classes required (found {} positive, {} negative)",
            counts[0], counts[1]
        )));
    }
    let n = (counts[0] + counts[1]) as f64;
    let [s_pos, s_neg] = sums;
    Ok(ClassStats {
        mu_plus: vecops::scale(1.0 / counts[0] as f64, &s_pos),
        mu_minus: vecops::scale(1.0 / counts[1] as f64, &s_neg),
        p_plus: counts[0] as f64 / n,
        p_minus: counts[1] as f64 / n,
        n_plus: counts[0],
        n_minus: counts[1],
        radius_bound: data.max_norm(),
    })
}

/// Two-class Gaussian mixture: positives ~ N(λe₁, I), negatives ~ N(−λe₁, I).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub d: usize,
    pub lambda: f64,
    pub n: usize,
    pub seed: u64,
}

impl GaussianSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(Error::InvalidArgument("gaussian: d must be >= 1".into()));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument("gaussian: lambda must be > 0".into()));
        }
        if self.n < 2 {
            return Err(Error::InvalidArgument(
                "gaussian: n must be >= 2 so both classes are present".into(),
            ));
        }
        Ok(())
    }
}

/// Draws `n` points, `⌈n/2⌉` positive and `⌊n/2⌋` negative, in shuffled order.
pub fn generate_gaussian(spec: &GaussianSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_pos = spec.n.div_ceil(2);
    let mut points = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let y = if i < n_pos { Label::Pos } else { Label::Neg };
        let mut x: Vec<f64> = (0..spec.d).map(|_| StandardNormal.sample(&mut rng)).collect();
        x[0] += y.sign() * spec.lambda;
        points.push(LabeledPoint::new(x, y));
    }
    points.shuffle(&mut rng);
    Dataset::from_points(spec.d, false, points)
}

/// `⌈x⌉` that ignores floating noise just above an integer (0.7·10 → 7).
pub(crate) fn ceil_count(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

/// `⌊x⌋` that ignores floating noise just below an integer (0.3·2000 → 600).
pub(crate) fn floor_count(x: f64) -> usize {
    (x + 1e-9).floor().max(0.0) as usize
}

/// The mean-shift attack: `⌈εn/2⌉` positives at `−(√d−λ)e₁` and as many
/// negatives at `+(√d−λ)e₁`.
pub fn gaussian_attack_points(spec: &GaussianSpec, eps: f64) -> Result<Dataset> {
    spec.validate()?;
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidArgument(format!("eps must be in (0,1], got {eps}")));
    }
    let k = ceil_count(eps * spec.n as f64 / 2.0);
    let shift = (spec.d as f64).sqrt() - spec.lambda;
    let at = |c: f64| {
        let mut x = vec![0.0; spec.d];
        x[0] = c;
        x
    };
    let mut points = Vec::with_capacity(2 * k);
    for _ in 0..k {
        points.push(LabeledPoint::new(at(-shift), Label::Pos));
        points.push(LabeledPoint::new(at(shift), Label::Neg));
    }
    Dataset::from_points(spec.d, false, points)
}
