//! Multilabel datasets: libsvm text I/O, standardization, seeded splits and a
//! planted pairwise generator.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conjugate::{coordinate_ascent_box_quadratic, SolverConfig};
use crate::error::{Error, Result};
use crate::numerics::{neg_gram, seeded_rng, Matrix, Vector};
use crate::regularizers::Regularizer;

/// Feature standard deviations below this are treated as constant columns.
pub const STD_FLOOR: f64 = 1e-8;

/// Dense multilabel data: `x` is `n × d`, `y` is `n × k` with entries in `{0, 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultilabelDataset {
    pub x: Matrix,
    pub y: Matrix,
}

impl MultilabelDataset {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::contract(format!("{} feature rows but {} label rows", x.nrows(), y.nrows())));
        }
        if y.iter().any(|&t| t != 0.0 && t != 1.0) {
            return Err(Error::contract("labels must be 0 or 1"));
        }
        if !x.iter().all(|z| z.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        Ok(MultilabelDataset { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_labels(&self) -> usize {
        self.y.ncols()
    }

    pub fn features(&self, i: usize) -> Vector {
        self.x.row(i).transpose()
    }

    pub fn labels(&self, i: usize) -> Vector {
        self.y.row(i).transpose()
    }

    /// Rows in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        MultilabelDataset { x: self.x.select_rows(rows.iter()), y: self.y.select_rows(rows.iter()) }
    }

    /// Fraction of positive labels.
    pub fn positive_rate(&self) -> f64 {
        if self.y.is_empty() {
            return 0.0;
        }
        self.y.sum() / self.y.len() as f64
    }
}

/// Base of the label indices in a libsvm multilabel file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelBase {
    Zero,
    #[default]
    One,
}

impl LabelBase {
    fn offset(self) -> usize {
        match self {
            LabelBase::Zero => 0,
            LabelBase::One => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParseOptions {
    #[serde(default)]
    pub label_base: LabelBase,
    /// Declared number of labels; inferred from the data when absent.
    #[serde(default)]
    pub n_labels: Option<usize>,
    /// Declared number of features; inferred from the data when absent.
    #[serde(default)]
    pub n_features: Option<usize>,
}

struct Row {
    labels: Vec<usize>,
    features: Vec<(usize, f64)>,
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn parse_row(text: &str, line: usize, opts: &ParseOptions) -> Result<Row> {
    let mut tokens = text.split_whitespace().peekable();
    let mut labels = Vec::new();
    // The label field is absent when the line starts with whitespace or the
    // first token is already a feature.
    let has_labels = !text.starts_with(char::is_whitespace) && tokens.peek().is_some_and(|t| !t.contains(':'));
    if has_labels {
        let field = tokens.next().expect("peeked");
        for raw in field.split(',').filter(|s| !s.is_empty()) {
            let idx: usize = raw.parse().map_err(|_| parse_error(line, format!("bad label {raw:?}")))?;
            let idx = idx
                .checked_sub(opts.label_base.offset())
                .ok_or_else(|| parse_error(line, format!("label {raw} is below the label base")))?;
            if let Some(k) = opts.n_labels {
                if idx >= k {
                    return Err(parse_error(line, format!("label {raw} exceeds the declared {k} labels")));
                }
            }
            labels.push(idx);
        }
    }
    let mut features = Vec::new();
    for tok in tokens {
        let (i, val) =
            tok.split_once(':').ok_or_else(|| parse_error(line, format!("expected index:value, found {tok:?}")))?;
        let i: usize = i.parse().map_err(|_| parse_error(line, format!("bad feature index {i:?}")))?;
        if i == 0 {
            return Err(parse_error(line, "feature indices are 1-based"));
        }
        if let Some(d) = opts.n_features {
            if i > d {
                return Err(parse_error(line, format!("feature index {i} exceeds the declared {d} features")));
            }
        }
        let val: f64 = val.parse().map_err(|_| parse_error(line, format!("bad feature value {val:?}")))?;
        if !val.is_finite() {
            return Err(parse_error(line, format!("non-finite feature value {val}")));
        }
        features.push((i - 1, val));
    }
    Ok(Row { labels, features })
}

/// Parses libsvm multilabel text: `l1,l2,... i:x i:x ...` per line. Blank
/// lines and `#` comments are skipped.
pub fn parse_libsvm_multilabel(reader: impl BufRead, opts: &ParseOptions) -> Result<MultilabelDataset> {
    let mut rows = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        rows.push(parse_row(content, no + 1, opts)?);
    }
    let k = opts.n_labels.unwrap_or_else(|| rows.iter().flat_map(|r| r.labels.iter()).max().map_or(0, |m| m + 1));
    let d = opts
        .n_features
        .unwrap_or_else(|| rows.iter().flat_map(|r| r.features.iter()).map(|f| f.0 + 1).max().unwrap_or(0));
    let mut x = Matrix::zeros(rows.len(), d);
    let mut y = Matrix::zeros(rows.len(), k);
    for (i, row) in rows.iter().enumerate() {
        for &j in &row.labels {
            y[(i, j)] = 1.0;
        }
        for &(j, val) in &row.features {
            x[(i, j)] = val;
        }
    }
    MultilabelDataset::new(x, y)
}

/// Writes the dataset in the format read by [`parse_libsvm_multilabel`].
/// Zero features are omitted; values use the shortest round-trip form.
pub fn write_libsvm_multilabel(data: &MultilabelDataset, base: LabelBase, mut w: impl Write) -> Result<()> {
    for i in 0..data.len() {
        let labels: Vec<String> =
            (0..data.n_labels()).filter(|&j| data.y[(i, j)] == 1.0).map(|j| (j + base.offset()).to_string()).collect();
        let mut line = labels.join(",");
        for j in 0..data.n_features() {
            let val = data.x[(i, j)];
            if val != 0.0 {
                line.push_str(&format!(" {}:{:?}", j + 1, val));
            }
        }
        if labels.is_empty() {
            line.insert(0, ' ');
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Per-column affine standardization fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Column means and population standard deviations; constant columns get std 1.
    pub fn fit(x: &Matrix) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::contract("cannot standardize an empty dataset"));
        }
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let mu = col.sum() / n as f64;
            let var = col.iter().map(|z| (z - mu).powi(2)).sum::<f64>() / n as f64;
            let s = var.sqrt();
            mean.push(mu);
            std.push(if s < STD_FLOOR { 1.0 } else { s });
        }
        Ok(Standardizer { mean, std })
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.mean.len() {
            return Err(Error::contract(format!(
                "standardizer fitted on {} features, got {}",
                self.mean.len(),
                x.ncols()
            )));
        }
        Ok(Matrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.std[j]))
    }

    pub fn apply(&self, data: &MultilabelDataset) -> Result<MultilabelDataset> {
        Ok(MultilabelDataset { x: self.transform(&data.x)?, y: data.y.clone() })
    }
}

/// Seeded random partition into parts of the given fractions.
///
/// Part sizes are `round(n·f)`; when the fractions sum to one the last part
/// takes the remainder. An empty part is a contract violation.
pub fn split(data: &MultilabelDataset, fractions: &[f64], seed: u64) -> Result<Vec<MultilabelDataset>> {
    let total: f64 = fractions.iter().sum();
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0)) || total > 1.0 + 1e-9 {
        return Err(Error::contract("split fractions must be positive and sum to at most 1"));
    }
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    let mut sizes: Vec<usize> = fractions.iter().map(|f| (f * n as f64).round() as usize).collect();
    let used: usize = sizes[..sizes.len() - 1].iter().sum();
    if (total - 1.0).abs() <= 1e-9 {
        *sizes.last_mut().expect("nonempty") = n.saturating_sub(used);
    }
    if sizes.iter().sum::<usize>() > n {
        return Err(Error::contract("split sizes exceed the dataset"));
    }
    let mut parts = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for (i, &s) in sizes.iter().enumerate() {
        if s == 0 {
            return Err(Error::contract(format!("split part {i} would be empty (n = {n})")));
        }
        parts.push(data.subset(&order[at..at + s]));
        at += s;
    }
    Ok(parts)
}

/// Parameters of the planted pairwise generator.
///
/// `x ~ N(0, I_d)`. Unary scores depend on `x` through a `rank`-dimensional
/// projection, `u(x) = C P x + c₀`, and the pairwise factor is linear,
/// `a(x) = W x + strength·1`, so labels compete through `U = −a aᵀ`. Labels are
/// drawn as `y_j ~ Bernoulli(p_j)` where `p` maximizes
/// `⟨u, p⟩ + ½⟨p, U p⟩ − Ω(p)` over `[0, 1]^k` with the Gini regularizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub rank: usize,
    pub unary_scale: f64,
    pub unary_bias: f64,
    pub pair_strength: f64,
    pub pair_noise: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 2000,
            d: 20,
            k: 5,
            rank: 3,
            unary_scale: 2.0,
            unary_bias: 0.5,
            pair_strength: 0.5,
            pair_noise: 2.0,
            gamma: 0.05,
            seed: 0,
        }
    }
}

/// The ground-truth maps of a planted pairwise model.
#[derive(Clone, Debug)]
pub struct PlantedModel {
    pub projection: Matrix,
    pub unary: Matrix,
    pub unary_bias: Vector,
    pub pair_weights: Matrix,
    pub pair_bias: Vector,
    pub gamma: f64,
}

impl PlantedModel {
    pub fn draw(spec: &SyntheticSpec, rng: &mut crate::numerics::Rng) -> Self {
        let (d, k, r) = (spec.d, spec.k, spec.rank.max(1));
        let mut normal = |scale: f64| -> f64 { scale * rng.sample::<f64, _>(StandardNormal) };
        let projection = Matrix::from_fn(r, d, |_, _| normal(1.0 / (d as f64).sqrt()));
        let unary = Matrix::from_fn(k, r, |_, _| normal(spec.unary_scale));
        let unary_bias = Vector::from_element(k, spec.unary_bias);
        let pair_weights = Matrix::from_fn(k, d, |_, _| normal(spec.pair_noise / (d as f64).sqrt()));
        let pair_bias = Vector::from_element(k, spec.pair_strength);
        PlantedModel { projection, unary, unary_bias, pair_weights, pair_bias, gamma: spec.gamma }
    }

    pub fn scores(&self, x: &Vector) -> (Vector, Matrix) {
        let u = &self.unary * (&self.projection * x) + &self.unary_bias;
        let a = &self.pair_weights * x + &self.pair_bias;
        (u, neg_gram(&a))
    }

    /// Marginal probabilities `p(x)`.
    pub fn marginals(&self, x: &Vector) -> Result<Vector> {
        let (u, pairwise) = self.scores(x);
        let reg = Regularizer::gini_binary(self.gamma, u.len())?;
        Ok(coordinate_ascent_box_quadratic(&u, &pairwise, &reg, &SolverConfig::default())?.point)
    }
}

/// Samples a dataset from a freshly drawn planted model.
pub fn planted_pairwise(spec: &SyntheticSpec) -> Result<(MultilabelDataset, PlantedModel)> {
    if spec.n == 0 || spec.d == 0 || spec.k == 0 {
        return Err(Error::contract("synthetic dataset dimensions must be positive"));
    }
    if !(spec.gamma > 0.0) {
        return Err(Error::contract("synthetic gamma must be positive"));
    }
    let mut rng = seeded_rng(spec.seed);
    let model = PlantedModel::draw(spec, &mut rng);
    let mut x = Matrix::zeros(spec.n, spec.d);
    let mut y = Matrix::zeros(spec.n, spec.k);
    for i in 0..spec.n {
        let xi = Vector::from_fn(spec.d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let p = model.marginals(&xi)?;
        for j in 0..spec.k {
            y[(i, j)] = if rng.gen::<f64>() < p[j] { 1.0 } else { 0.0 };
        }
        x.set_row(i, &xi.transpose());
    }
    Ok((MultilabelDataset::new(x, y)?, model))
}
