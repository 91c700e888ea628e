//! Parametric maps `x ↦ v` for the multilabel architectures.
//!
//! All parameters live in one flat vector so the optimizer can treat them
//! uniformly. Layout, in order:
//!
//! * unary MLP: `W₁ (m×d)`, `b₁ (m)`, `W₂ (k×m)`, `b₂ (k)`, matrices column-major;
//! * pairwise head: `W_A (k×d)`, `b_A (k)`, giving `U = −A(x)A(x)ᵀ`;
//! * SPEN prior: the [`PriorWeights`] flattening (`w1`, `b1`, `w2`, `b2`).

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrixView;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::energies::{Energy, EnergyInput, PriorWeights};
use crate::error::{Error, Result};
use crate::numerics::{neg_gram, seeded_rng, Matrix, Vector};

const FORMAT: &str = "efy-params";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Unary,
    Pairwise,
    Spen,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Unary => "unary",
            Architecture::Pairwise => "pairwise",
            Architecture::Spen => "spen",
        }
    }
}

/// Default hidden width `min(100, ⌊d/3⌋)`, floored at 1.
pub fn default_hidden(input_dim: usize) -> usize {
    (input_dim / 3).clamp(1, 100)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: usize,
    /// Hidden width of the SPEN prior network (ignored otherwise).
    pub prior_hidden: usize,
    /// Input-concave SPEN prior.
    pub concave: bool,
}

impl ModelSpec {
    pub fn new(architecture: Architecture, input_dim: usize, output_dim: usize) -> Self {
        ModelSpec {
            architecture,
            input_dim,
            output_dim,
            hidden: default_hidden(input_dim),
            prior_hidden: output_dim.max(1),
            concave: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden == 0 {
            return Err(Error::contract("model dimensions must be positive"));
        }
        if self.architecture == Architecture::Spen && self.prior_hidden == 0 {
            return Err(Error::contract("SPEN prior width must be positive"));
        }
        Ok(())
    }

    fn unary_len(&self) -> usize {
        let (d, k, m) = (self.input_dim, self.output_dim, self.hidden);
        m * d + m + k * m + k
    }

    fn head_len(&self) -> usize {
        let (d, k, ph) = (self.input_dim, self.output_dim, self.prior_hidden);
        match self.architecture {
            Architecture::Unary => 0,
            Architecture::Pairwise => k * d + k,
            Architecture::Spen => ph * k + 2 * ph + 1,
        }
    }

    pub fn n_params(&self) -> usize {
        self.unary_len() + self.head_len()
    }

    /// Energy the model output is fed to.
    pub fn energy(&self) -> Energy {
        match self.architecture {
            Architecture::Unary => Energy::identity(self.output_dim),
            Architecture::Pairwise => Energy::pairwise(self.output_dim),
            Architecture::Spen => Energy::spen(self.output_dim, self.prior_hidden, self.concave),
        }
    }
}

/// Borrowed views of the unary MLP block.
struct Unary<'a> {
    w1: DMatrixView<'a, f64>,
    b1: &'a [f64],
    w2: DMatrixView<'a, f64>,
    b2: &'a [f64],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub theta: Vec<f64>,
    pub seed: Option<u64>,
}

impl Model {
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.n_params();
        Ok(Model { spec, theta: vec![0.0; n], seed: None })
    }

    /// Uniform `(−s, s)` initialization with `s = 1/√fan_in` per layer.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seeded_rng(seed);
        let (d, k, m, ph) = (spec.input_dim, spec.output_dim, spec.hidden, spec.prior_hidden);
        let mut blocks: Vec<(usize, usize)> = vec![(m * d + m, d), (k * m + k, m)];
        match spec.architecture {
            Architecture::Unary => {}
            Architecture::Pairwise => blocks.push((k * d + k, d)),
            Architecture::Spen => {
                blocks.push((ph * k + ph, k));
                blocks.push((ph + 1, ph));
            }
        }
        let mut theta = Vec::with_capacity(spec.n_params());
        for (len, fan_in) in blocks {
            let s = 1.0 / (fan_in as f64).sqrt();
            theta.extend((0..len).map(|_| rng.gen_range(-s..s)));
        }
        debug_assert_eq!(theta.len(), spec.n_params());
        Ok(Model { spec, theta, seed: Some(seed) })
    }

    pub fn from_theta(spec: ModelSpec, theta: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if theta.len() != spec.n_params() {
            return Err(Error::contract(format!(
                "parameter vector has length {}, architecture needs {}",
                theta.len(),
                spec.n_params()
            )));
        }
        Ok(Model { spec, theta, seed: None })
    }

    pub fn energy(&self) -> Energy {
        self.spec.energy()
    }

    fn unary(&self) -> Unary<'_> {
        let (d, k, m) = (self.spec.input_dim, self.spec.output_dim, self.spec.hidden);
        let t = &self.theta;
        let mut at = 0;
        let w1 = DMatrixView::from_slice(&t[at..at + m * d], m, d);
        at += m * d;
        let b1 = &t[at..at + m];
        at += m;
        let w2 = DMatrixView::from_slice(&t[at..at + k * m], k, m);
        at += k * m;
        let b2 = &t[at..at + k];
        Unary { w1, b1, w2, b2 }
    }

    fn head(&self) -> &[f64] {
        &self.theta[self.spec.unary_len()..]
    }

    fn check_x(&self, x: &Vector) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::contract(format!(
                "input has length {}, model expects {}",
                x.len(),
                self.spec.input_dim
            )));
        }
        Ok(())
    }

    fn hidden_pre(&self, x: &Vector) -> Vector {
        let n = self.unary();
        n.w1 * x + Vector::from_column_slice(n.b1)
    }

    fn pairwise_factor(&self, x: &Vector) -> Vector {
        let (d, k) = (self.spec.input_dim, self.spec.output_dim);
        let h = self.head();
        let wa = DMatrixView::from_slice(&h[..k * d], k, d);
        wa * x + Vector::from_column_slice(&h[k * d..k * d + k])
    }

    fn prior(&self) -> PriorWeights {
        let (k, ph) = (self.spec.output_dim, self.spec.prior_hidden);
        let h = self.head();
        PriorWeights {
            w1: Matrix::from_column_slice(ph, k, &h[..ph * k]),
            b1: Vector::from_column_slice(&h[ph * k..ph * k + ph]),
            w2: Vector::from_column_slice(&h[ph * k + ph..ph * k + 2 * ph]),
            b2: h[ph * k + 2 * ph],
        }
    }

    /// Unary scores `u = W₂ relu(W₁x + b₁) + b₂`.
    pub fn unary_scores(&self, x: &Vector) -> Result<Vector> {
        self.check_x(x)?;
        let n = self.unary();
        let h = self.hidden_pre(x).map(|z| z.max(0.0));
        Ok(n.w2 * h + Vector::from_column_slice(n.b2))
    }

    pub fn forward(&self, x: &Vector) -> Result<EnergyInput> {
        let u = self.unary_scores(x)?;
        Ok(match self.spec.architecture {
            Architecture::Unary => EnergyInput::Dense(u),
            Architecture::Pairwise => EnergyInput::Pairwise { unary: u, pairwise: neg_gram(&self.pairwise_factor(x)) },
            Architecture::Spen => EnergyInput::Spen { unary: u, prior: self.prior() },
        })
    }

    /// Gradient of `⟨grad_v, forward(x)⟩` with respect to the parameters.
    pub fn vjp(&self, x: &Vector, grad_v: &EnergyInput) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let (d, k, m) = (self.spec.input_dim, self.spec.output_dim, self.spec.hidden);
        let grad_u = match (self.spec.architecture, grad_v) {
            (Architecture::Unary, EnergyInput::Dense(g)) => g,
            (Architecture::Pairwise, EnergyInput::Pairwise { unary, .. }) => unary,
            (Architecture::Spen, EnergyInput::Spen { unary, .. }) => unary,
            _ => return Err(Error::contract("gradient shape does not match the architecture")),
        };
        if grad_u.len() != k {
            return Err(Error::contract("unary gradient has the wrong length"));
        }

        let n = self.unary();
        let pre = self.hidden_pre(x);
        let h = pre.map(|z| z.max(0.0));
        let mut out = Vec::with_capacity(self.theta.len());

        let grad_h = n.w2.transpose() * grad_u;
        let grad_pre = Vector::from_fn(m, |i, _| if pre[i] > 0.0 { grad_h[i] } else { 0.0 });
        out.extend_from_slice((&grad_pre * x.transpose()).as_slice());
        out.extend_from_slice(grad_pre.as_slice());
        out.extend_from_slice((grad_u * h.transpose()).as_slice());
        out.extend_from_slice(grad_u.as_slice());

        match grad_v {
            EnergyInput::Pairwise { pairwise: g, .. } => {
                if g.shape() != (k, k) {
                    return Err(Error::contract("pairwise gradient has the wrong shape"));
                }
                let a = self.pairwise_factor(x);
                let grad_a = -((g + g.transpose()) * &a);
                out.extend_from_slice((&grad_a * x.transpose()).as_slice());
                out.extend_from_slice(grad_a.as_slice());
            }
            EnergyInput::Spen { prior, .. } => {
                let own = self.prior();
                if prior.w1.shape() != own.w1.shape() {
                    return Err(Error::contract("prior gradient has the wrong shape"));
                }
                out.extend_from_slice(prior.w1.as_slice());
                out.extend_from_slice(prior.b1.as_slice());
                out.extend_from_slice(prior.w2.as_slice());
                out.push(prior.b2);
            }
            _ => {}
        }
        debug_assert_eq!(out.len(), self.theta.len(), "d={d}");
        Ok(out)
    }

    /// Writes the parameters: an 8-byte little-endian header length, a JSON
    /// header, then the parameters as little-endian `f64`.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = Header {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            spec: self.spec.clone(),
            seed: self.seed,
            n_params: self.theta.len(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for x in &self.theta {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len);
        if len > 1 << 20 {
            return Err(Error::contract("parameter header is implausibly large"));
        }
        let mut json = vec![0u8; len as usize];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        if header.format != FORMAT || header.version != FORMAT_VERSION {
            return Err(Error::contract(format!("unknown parameter format {} v{}", header.format, header.version)));
        }
        if header.n_params != header.spec.n_params() {
            return Err(Error::contract("header parameter count disagrees with the architecture"));
        }
        let mut bytes = vec![0u8; header.n_params * 8];
        r.read_exact(&mut bytes)?;
        let theta = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let mut model = Model::from_theta(header.spec, theta)?;
        model.seed = header.seed;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Model::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    spec: ModelSpec,
    seed: Option<u64>,
    n_params: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad_scaled, is_negative_semidefinite, relative_error};

    fn random_x(rng: &mut crate::numerics::Rng, d: usize) -> Vector {
        Vector::from_fn(d, |_, _| rng.gen_range(-1.5..1.5))
    }

    /// Straightforward loop-based evaluator used as an independent oracle.
    fn naive_forward(model: &Model, x: &[f64]) -> (Vec<f64>, Option<Vec<f64>>) {
        let s = &model.spec;
        let (d, k, m) = (s.input_dim, s.output_dim, s.hidden);
        let t = &model.theta;
        let w1 = |i: usize, j: usize| t[j * m + i];
        let b1 = |i: usize| t[m * d + i];
        let w2 = |i: usize, j: usize| t[m * d + m + j * k + i];
        let b2 = |i: usize| t[m * d + m + k * m + i];
        let h: Vec<f64> = (0..m).map(|i| ((0..d).map(|j| w1(i, j) * x[j]).sum::<f64>() + b1(i)).max(0.0)).collect();
        let u = (0..k).map(|i| (0..m).map(|j| w2(i, j) * h[j]).sum::<f64>() + b2(i)).collect();
        let a = (s.architecture == Architecture::Pairwise).then(|| {
            let off = s.unary_len();
            (0..k).map(|i| (0..d).map(|j| t[off + j * k + i] * x[j]).sum::<f64>() + t[off + k * d + i]).collect()
        });
        (u, a)
    }

    fn spec(arch: Architecture) -> ModelSpec {
        let mut s = ModelSpec::new(arch, 7, 3);
        s.prior_hidden = 4;
        s
    }

    #[test]
    fn default_hidden_width() {
        assert_eq!(default_hidden(20), 6);
        assert_eq!(default_hidden(1000), 100);
        assert_eq!(default_hidden(2), 1);
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut m = Model::zeros(spec(Architecture::Unary)).unwrap();
        let n = m.theta.len();
        m.theta[n - 3..].copy_from_slice(&[0.5, -1.0, 2.0]);
        let out = m.forward(&Vector::from_element(7, 1.0)).unwrap();
        assert_eq!(out, EnergyInput::Dense(Vector::from_row_slice(&[0.5, -1.0, 2.0])));
    }

    #[test]
    fn degenerate_pairwise_head_reduces_to_unary() {
        let unary = Model::init(spec(Architecture::Unary), 3).unwrap();
        let mut theta = unary.theta.clone();
        theta.extend(std::iter::repeat(0.0).take(spec(Architecture::Pairwise).n_params() - theta.len()));
        let pairwise = Model::from_theta(spec(Architecture::Pairwise), theta).unwrap();
        let x = Vector::from_fn(7, |i, _| i as f64 * 0.3 - 1.0);
        match pairwise.forward(&x).unwrap() {
            EnergyInput::Pairwise { unary: u, pairwise: p } => {
                assert_eq!(EnergyInput::Dense(u), unary.forward(&x).unwrap());
                assert!(p.iter().all(|&z| z == 0.0));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn forward_matches_naive_evaluator() {
        let mut rng = seeded_rng(5);
        for arch in [Architecture::Unary, Architecture::Pairwise] {
            let model = Model::init(spec(arch), 9).unwrap();
            for _ in 0..50 {
                let x = random_x(&mut rng, 7);
                let (u, a) = naive_forward(&model, x.as_slice());
                let (got_u, got_p) = match model.forward(&x).unwrap() {
                    EnergyInput::Dense(u) => (u, None),
                    EnergyInput::Pairwise { unary, pairwise } => (unary, Some(pairwise)),
                    other => panic!("{other:?}"),
                };
                assert!(relative_error(got_u.as_slice(), &u) < 1e-12);
                if let (Some(a), Some(p)) = (a, got_p) {
                    let expected = Matrix::from_fn(3, 3, |i, j| -a[i] * a[j]);
                    assert!(relative_error(p.as_slice(), expected.as_slice()) < 1e-12);
                    assert!(is_negative_semidefinite(&p, 1e-9).unwrap());
                }
            }
        }
    }

    fn away_from_kinks(model: &Model, x: &Vector) -> bool {
        model.hidden_pre(x).iter().all(|z| z.abs() > 1e-3)
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mut rng = seeded_rng(7);
        for arch in [Architecture::Unary, Architecture::Pairwise, Architecture::Spen] {
            let model = Model::init(spec(arch), 11).unwrap();
            let mut checked = 0;
            while checked < 10 {
                let x = random_x(&mut rng, 7);
                if !away_from_kinks(&model, &x) {
                    continue;
                }
                let out = model.forward(&x).unwrap();
                let g = out.with_flat(&(0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
                let analytic = model.vjp(&x, &g).unwrap();
                let fd = finite_diff_grad_scaled(
                    |t| {
                        let m = Model::from_theta(model.spec.clone(), t.as_slice().to_vec()).unwrap();
                        let o = m.forward(&x).unwrap().to_flat();
                        o.iter().zip(g.to_flat()).map(|(a, b)| a * b).sum()
                    },
                    &Vector::from_column_slice(&model.theta),
                )
                .unwrap();
                assert!(relative_error(&analytic, fd.as_slice()) < 1e-5, "{arch:?}");
                checked += 1;
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let model = Model::init(spec(Architecture::Pairwise), 1).unwrap();
        let x = Vector::from_element(7, 0.2);
        let g = model.forward(&x).unwrap().zeros_like();
        assert!(model.vjp(&x, &g).unwrap().iter().all(|&z| z == 0.0));
    }

    #[test]
    fn init_is_seeded() {
        let a = Model::init(spec(Architecture::Spen), 42).unwrap();
        let b = Model::init(spec(Architecture::Spen), 42).unwrap();
        let c = Model::init(spec(Architecture::Spen), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.theta, c.theta);
        let bound = 1.0 / (7f64).sqrt();
        assert!(a.theta[..a.spec.hidden * 7].iter().all(|z| z.abs() < bound));
    }

    #[test]
    fn binary_round_trip() {
        let model = Model::init(spec(Architecture::Spen), 8).unwrap();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        let back = Model::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        let header_len = u64::from_le_bytes(buf[..8].try_into().unwrap()) as usize;
        assert_eq!(buf.len(), 8 + header_len + 8 * model.theta.len());
    }

    #[test]
    fn truncated_file_is_an_error() {
        let model = Model::init(spec(Architecture::Unary), 8).unwrap();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 4);
        assert!(matches!(Model::read_from(buf.as_slice()), Err(Error::Io(_))));
    }

    #[test]
    fn wrong_input_length_is_rejected() {
        let model = Model::init(spec(Architecture::Unary), 8).unwrap();
        assert!(matches!(model.forward(&Vector::zeros(3)), Err(Error::ContractViolation(_))));
    }
}
