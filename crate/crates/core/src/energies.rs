//! Energy (coupling) functions `Φ(v, p)` with both partial gradients.
//!
//! Higher energy means higher compatibility between the network output `v`
//! and the candidate output `p`. Each energy also reports its structure in
//! `p` and `v`, which the conjugate oracle uses to pick a solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{symmetric_norm, symmetrize, Matrix, Vector};
use crate::regularizers::{lse, sigmoid, softmax, softplus};

/// Weights of the SPEN prior network `Ψ(w, p) = W₂ᵀ softplus(W₁ p + b₁) + b₂`.
///
/// `w2` is stored unconstrained; the input-concave variant applies
/// `softplus` to it so the effective output weights are nonnegative.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorWeights {
    pub w1: Matrix,
    pub b1: Vector,
    pub w2: Vector,
    pub b2: f64,
}

impl PriorWeights {
    pub fn zeros(hidden: usize, k: usize) -> Self {
        PriorWeights { w1: Matrix::zeros(hidden, k), b1: Vector::zeros(hidden), w2: Vector::zeros(hidden), b2: 0.0 }
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn effective_w2(&self, concave: bool) -> Vector {
        if concave {
            self.w2.map(softplus)
        } else {
            self.w2.clone()
        }
    }

    fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(self.b1.as_slice());
        out.extend_from_slice(self.w2.as_slice());
        out.push(self.b2);
    }

    fn read_from(&self, flat: &[f64]) -> (Self, usize) {
        let (m, k) = self.w1.shape();
        let mut at = 0;
        let w1 = Matrix::from_column_slice(m, k, &flat[at..at + m * k]);
        at += m * k;
        let b1 = Vector::from_column_slice(&flat[at..at + m]);
        at += m;
        let w2 = Vector::from_column_slice(&flat[at..at + m]);
        at += m;
        let b2 = flat[at];
        (PriorWeights { w1, b1, w2, b2 }, at + 1)
    }
}

/// The network output `v` fed to an energy, tagged by energy family.
///
/// The same type carries gradients with respect to `v`.
#[derive(Clone, Debug, PartialEq)]
pub enum EnergyInput {
    /// Bilinear, rectifier, maxout and log-sum-exp energies.
    Dense(Vector),
    /// `v = (A, b)` of the linear-quadratic energy.
    LinearQuadratic { a: Matrix, b: Vector },
    /// `v = (u, U)` of the pairwise multilabel energy.
    Pairwise { unary: Vector, pairwise: Matrix },
    /// `v = (u, w)` of the SPEN energy.
    Spen { unary: Vector, prior: PriorWeights },
}

impl EnergyInput {
    pub fn len(&self) -> usize {
        match self {
            EnergyInput::Dense(v) => v.len(),
            EnergyInput::LinearQuadratic { a, b } => a.len() + b.len(),
            EnergyInput::Pairwise { unary, pairwise } => unary.len() + pairwise.len(),
            EnergyInput::Spen { unary, prior } => unary.len() + prior.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Column-major flattening, matrix blocks first for `(A, b)`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        match self {
            EnergyInput::Dense(v) => out.extend_from_slice(v.as_slice()),
            EnergyInput::LinearQuadratic { a, b } => {
                out.extend_from_slice(a.as_slice());
                out.extend_from_slice(b.as_slice());
            }
            EnergyInput::Pairwise { unary, pairwise } => {
                out.extend_from_slice(unary.as_slice());
                out.extend_from_slice(pairwise.as_slice());
            }
            EnergyInput::Spen { unary, prior } => {
                out.extend_from_slice(unary.as_slice());
                prior.flatten_into(&mut out);
            }
        }
        out
    }

    /// Rebuilds a value with the same shape as `self` from a flat slice.
    pub fn with_flat(&self, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), self.len(), "with_flat: length mismatch");
        match self {
            EnergyInput::Dense(_) => EnergyInput::Dense(Vector::from_column_slice(flat)),
            EnergyInput::LinearQuadratic { a, b } => {
                let (r, c) = a.shape();
                EnergyInput::LinearQuadratic {
                    a: Matrix::from_column_slice(r, c, &flat[..r * c]),
                    b: Vector::from_column_slice(&flat[r * c..r * c + b.len()]),
                }
            }
            EnergyInput::Pairwise { unary, pairwise } => {
                let k = unary.len();
                let (r, c) = pairwise.shape();
                EnergyInput::Pairwise {
                    unary: Vector::from_column_slice(&flat[..k]),
                    pairwise: Matrix::from_column_slice(r, c, &flat[k..k + r * c]),
                }
            }
            EnergyInput::Spen { unary, prior } => {
                let k = unary.len();
                let (prior, _) = prior.read_from(&flat[k..]);
                EnergyInput::Spen { unary: Vector::from_column_slice(&flat[..k]), prior }
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        self.with_flat(&vec![0.0; self.len()])
    }

    /// `self + alpha * other` (shapes must agree).
    pub fn add_scaled(&self, alpha: f64, other: &EnergyInput) -> Self {
        let a = self.to_flat();
        let b = other.to_flat();
        assert_eq!(a.len(), b.len(), "add_scaled: shape mismatch");
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + alpha * y).collect();
        self.with_flat(&sum)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let flat: Vec<f64> = self.to_flat().iter().map(|x| alpha * x).collect();
        self.with_flat(&flat)
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|x| x.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PStructure {
    Linear,
    QuadraticConcave,
    Concave,
    Nonconcave,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VStructure {
    Linear,
    Convex,
    Nonconvex,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Energy {
    /// `⟨v, U p⟩` with `U ∈ ℝ^{d×k}`.
    Bilinear { coupling: Matrix },
    /// `½⟨p, A p⟩ + ⟨p, b⟩` with `v = (A, b)`.
    LinearQuadratic { dim: usize },
    /// `⟨u, p⟩ + ½⟨p, U p⟩` with `v = (u, U)`.
    Pairwise { dim: usize },
    /// `⟨relu(v), U p⟩` with elementwise nonnegative `U`.
    Rectifier { coupling: Matrix },
    /// `p · max(v)` for a scalar output `p`.
    Maxout { inputs: usize },
    /// `p · LSE^γ(v)` for a scalar output `p`.
    LseNet { inputs: usize, gamma: f64 },
    /// `⟨u, p⟩ − Ψ(w, p)` with a prior network `Ψ`.
    Spen { dim: usize, hidden: usize, concave: bool },
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn shape_err(what: &str) -> Error {
    Error::contract(format!("energy input shape mismatch: {what}"))
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax_lowest(v: &Vector) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

impl Energy {
    pub fn bilinear(coupling: Matrix) -> Self {
        Energy::Bilinear { coupling }
    }

    /// Bilinear energy with `U = I`, i.e. `⟨v, p⟩`.
    pub fn identity(k: usize) -> Self {
        Energy::Bilinear { coupling: Matrix::identity(k, k) }
    }

    pub fn linear_quadratic(dim: usize) -> Self {
        Energy::LinearQuadratic { dim }
    }

    pub fn pairwise(dim: usize) -> Self {
        Energy::Pairwise { dim }
    }

    pub fn rectifier(coupling: Matrix) -> Result<Self> {
        if coupling.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::contract("rectifier energy needs an elementwise nonnegative U"));
        }
        Ok(Energy::Rectifier { coupling })
    }

    pub fn maxout(inputs: usize) -> Self {
        Energy::Maxout { inputs }
    }

    pub fn lse_net(inputs: usize, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::contract("lse_net temperature must be positive"));
        }
        Ok(Energy::LseNet { inputs, gamma })
    }

    pub fn spen(dim: usize, hidden: usize, concave: bool) -> Self {
        Energy::Spen { dim, hidden, concave }
    }

    /// Dimension of the output `p`.
    pub fn p_dim(&self) -> usize {
        match self {
            Energy::Bilinear { coupling } | Energy::Rectifier { coupling } => coupling.ncols(),
            Energy::LinearQuadratic { dim } | Energy::Pairwise { dim } | Energy::Spen { dim, .. } => *dim,
            Energy::Maxout { .. } | Energy::LseNet { .. } => 1,
        }
    }

    pub fn p_structure(&self) -> PStructure {
        match self {
            Energy::Bilinear { .. } | Energy::Rectifier { .. } | Energy::Maxout { .. } | Energy::LseNet { .. } => {
                PStructure::Linear
            }
            Energy::LinearQuadratic { .. } | Energy::Pairwise { .. } => PStructure::QuadraticConcave,
            Energy::Spen { concave: true, .. } => PStructure::Concave,
            Energy::Spen { concave: false, .. } => PStructure::Nonconcave,
        }
    }

    pub fn v_structure(&self) -> VStructure {
        match self {
            Energy::Bilinear { .. } | Energy::LinearQuadratic { .. } | Energy::Pairwise { .. } => VStructure::Linear,
            Energy::Rectifier { .. } | Energy::Maxout { .. } | Energy::LseNet { .. } => VStructure::Convex,
            Energy::Spen { .. } => VStructure::Nonconvex,
        }
    }

    /// A zero input of the right shape.
    pub fn zero_input(&self) -> EnergyInput {
        match self {
            Energy::Bilinear { coupling } | Energy::Rectifier { coupling } => {
                EnergyInput::Dense(Vector::zeros(coupling.nrows()))
            }
            Energy::Maxout { inputs } | Energy::LseNet { inputs, .. } => EnergyInput::Dense(Vector::zeros(*inputs)),
            Energy::LinearQuadratic { dim } => {
                EnergyInput::LinearQuadratic { a: Matrix::zeros(*dim, *dim), b: Vector::zeros(*dim) }
            }
            Energy::Pairwise { dim } => {
                EnergyInput::Pairwise { unary: Vector::zeros(*dim), pairwise: Matrix::zeros(*dim, *dim) }
            }
            Energy::Spen { dim, hidden, .. } => {
                EnergyInput::Spen { unary: Vector::zeros(*dim), prior: PriorWeights::zeros(*hidden, *dim) }
            }
        }
    }

    pub fn check_input(&self, v: &EnergyInput) -> Result<()> {
        match (self, v) {
            (Energy::Bilinear { coupling } | Energy::Rectifier { coupling }, EnergyInput::Dense(x)) => {
                if x.len() != coupling.nrows() {
                    return Err(shape_err(&format!("v has length {}, U has {} rows", x.len(), coupling.nrows())));
                }
            }
            (Energy::Maxout { inputs } | Energy::LseNet { inputs, .. }, EnergyInput::Dense(x)) => {
                if x.len() != *inputs || x.is_empty() {
                    return Err(shape_err(&format!("v has length {}, expected {inputs}", x.len())));
                }
            }
            (Energy::LinearQuadratic { dim }, EnergyInput::LinearQuadratic { a, b }) => {
                if a.shape() != (*dim, *dim) || b.len() != *dim {
                    return Err(shape_err("(A, b) does not match the output dimension"));
                }
            }
            (Energy::Pairwise { dim }, EnergyInput::Pairwise { unary, pairwise }) => {
                if pairwise.shape() != (*dim, *dim) || unary.len() != *dim {
                    return Err(shape_err("(u, U) does not match the output dimension"));
                }
            }
            (Energy::Spen { dim, hidden, .. }, EnergyInput::Spen { unary, prior }) => {
                if unary.len() != *dim
                    || prior.w1.shape() != (*hidden, *dim)
                    || prior.b1.len() != *hidden
                    || prior.w2.len() != *hidden
                {
                    return Err(shape_err("(u, w) does not match the SPEN architecture"));
                }
            }
            _ => return Err(shape_err("input variant does not match the energy kind")),
        }
        Ok(())
    }

    fn check_p(&self, p: &Vector) -> Result<()> {
        if p.len() != self.p_dim() {
            return Err(shape_err(&format!("p has length {}, expected {}", p.len(), self.p_dim())));
        }
        Ok(())
    }

    /// `Φ(v, p)`.
    pub fn value(&self, v: &EnergyInput, p: &Vector) -> Result<f64> {
        self.check_input(v)?;
        self.check_p(p)?;
        Ok(match (self, v) {
            (Energy::Bilinear { coupling }, EnergyInput::Dense(x)) => x.dot(&(coupling * p)),
            (Energy::Rectifier { coupling }, EnergyInput::Dense(x)) => x.map(relu).dot(&(coupling * p)),
            (Energy::Maxout { .. }, EnergyInput::Dense(x)) => p[0] * x.max(),
            (Energy::LseNet { gamma, .. }, EnergyInput::Dense(x)) => p[0] * lse(x.as_slice(), *gamma),
            (Energy::LinearQuadratic { .. }, EnergyInput::LinearQuadratic { a, b }) => 0.5 * p.dot(&(a * p)) + p.dot(b),
            (Energy::Pairwise { .. }, EnergyInput::Pairwise { unary, pairwise }) => {
                unary.dot(p) + 0.5 * p.dot(&(pairwise * p))
            }
            (Energy::Spen { concave, .. }, EnergyInput::Spen { unary, prior }) => {
                unary.dot(p) - prior_value(prior, *concave, p)
            }
            _ => unreachable!("checked by check_input"),
        })
    }

    /// `∇₂Φ(v, p)`. Maxout ties resolve to the lowest index.
    pub fn grad_p(&self, v: &EnergyInput, p: &Vector) -> Result<Vector> {
        self.check_input(v)?;
        self.check_p(p)?;
        Ok(match (self, v) {
            (Energy::Bilinear { coupling }, EnergyInput::Dense(x)) => coupling.tr_mul(x),
            (Energy::Rectifier { coupling }, EnergyInput::Dense(x)) => coupling.tr_mul(&x.map(relu)),
            (Energy::Maxout { .. }, EnergyInput::Dense(x)) => Vector::from_element(1, x.max()),
            (Energy::LseNet { gamma, .. }, EnergyInput::Dense(x)) => Vector::from_element(1, lse(x.as_slice(), *gamma)),
            (Energy::LinearQuadratic { .. }, EnergyInput::LinearQuadratic { a, b }) => symmetrize(a) * p + b,
            (Energy::Pairwise { .. }, EnergyInput::Pairwise { unary, pairwise }) => unary + symmetrize(pairwise) * p,
            (Energy::Spen { concave, .. }, EnergyInput::Spen { unary, prior }) => {
                let z = &prior.w1 * p + &prior.b1;
                let w2 = prior.effective_w2(*concave);
                let inner = w2.component_mul(&z.map(sigmoid));
                unary - prior.w1.tr_mul(&inner)
            }
            _ => unreachable!("checked by check_input"),
        })
    }

    /// `∇₁Φ(v, p)`, shaped like `v`.
    pub fn grad_v(&self, v: &EnergyInput, p: &Vector) -> Result<EnergyInput> {
        self.check_input(v)?;
        self.check_p(p)?;
        Ok(match (self, v) {
            (Energy::Bilinear { coupling }, EnergyInput::Dense(_)) => EnergyInput::Dense(coupling * p),
            (Energy::Rectifier { coupling }, EnergyInput::Dense(x)) => {
                let up = coupling * p;
                EnergyInput::Dense(Vector::from_fn(x.len(), |i, _| if x[i] > 0.0 { up[i] } else { 0.0 }))
            }
            (Energy::Maxout { .. }, EnergyInput::Dense(x)) => {
                let mut g = Vector::zeros(x.len());
                g[argmax_lowest(x)] = p[0];
                EnergyInput::Dense(g)
            }
            (Energy::LseNet { gamma, .. }, EnergyInput::Dense(x)) => {
                EnergyInput::Dense(softmax(x.as_slice(), *gamma) * p[0])
            }
            (Energy::LinearQuadratic { .. }, EnergyInput::LinearQuadratic { .. }) => {
                EnergyInput::LinearQuadratic { a: (p * p.transpose()) * 0.5, b: p.clone() }
            }
            (Energy::Pairwise { .. }, EnergyInput::Pairwise { .. }) => {
                EnergyInput::Pairwise { unary: p.clone(), pairwise: (p * p.transpose()) * 0.5 }
            }
            (Energy::Spen { concave, .. }, EnergyInput::Spen { prior, .. }) => {
                let z = &prior.w1 * p + &prior.b1;
                let w2 = prior.effective_w2(*concave);
                let act = z.map(softplus);
                let slope = w2.component_mul(&z.map(sigmoid));
                let w2_chain = if *concave { prior.w2.map(sigmoid) } else { Vector::from_element(w2.len(), 1.0) };
                let grad = PriorWeights {
                    w1: -(&slope * p.transpose()),
                    b1: -slope,
                    w2: -act.component_mul(&w2_chain),
                    b2: -1.0,
                };
                EnergyInput::Spen { unary: p.clone(), prior: grad }
            }
            _ => unreachable!("checked by check_input"),
        })
    }

    /// For energies linear in `p`, the vector `z` with `Φ(v, p) = ⟨z, p⟩`.
    pub fn linear_coefficient(&self, v: &EnergyInput) -> Result<Option<Vector>> {
        if self.p_structure() != PStructure::Linear {
            return Ok(None);
        }
        let zero = Vector::zeros(self.p_dim());
        self.grad_p(v, &zero).map(Some)
    }

    /// For quadratic energies, `(linear term, symmetric quadratic term)`.
    pub fn quadratic_parts(&self, v: &EnergyInput) -> Result<Option<(Vector, Matrix)>> {
        self.check_input(v)?;
        Ok(match v {
            EnergyInput::LinearQuadratic { a, b } => Some((b.clone(), symmetrize(a))),
            EnergyInput::Pairwise { unary, pairwise } => Some((unary.clone(), symmetrize(pairwise))),
            _ => None,
        })
    }

    /// Joint smoothness constant `β` of `Φ` in `(v, p)` where it is known.
    ///
    /// For the quadratic energies with `A` held fixed this is the spectral
    /// norm of the Hessian `[[0, I], [I, A]]`, i.e. `(‖A‖ + √(‖A‖² + 4)) / 2`.
    /// For the bilinear energy it is `‖U‖₂`.
    pub fn smoothness(&self, v: &EnergyInput) -> Result<Option<f64>> {
        self.check_input(v)?;
        Ok(match (self, v) {
            (Energy::Bilinear { coupling }, _) => Some(coupling.clone().singular_values().max()),
            (_, EnergyInput::LinearQuadratic { a, .. }) | (_, EnergyInput::Pairwise { pairwise: a, .. }) => {
                let n = symmetric_norm(&symmetrize(a))?;
                Some(0.5 * (n + (n * n + 4.0).sqrt()))
            }
            _ => None,
        })
    }
}

fn prior_value(prior: &PriorWeights, concave: bool, p: &Vector) -> f64 {
    let z = &prior.w1 * p + &prior.b1;
    prior.effective_w2(concave).dot(&z.map(softplus)) + prior.b2
}
