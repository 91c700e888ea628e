//! Output sets and the regularizers defined on them, with the closed-form
//! regularized argmax `p_Ω(u) = argmax_{p ∈ C} ⟨u, p⟩ − Ω(p)` where one exists.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Vector;

/// Membership tolerance used by [`OutputSet::contains`] callers across the crate.
pub const MEMBERSHIP_TOLERANCE: f64 = 1e-9;

/// Distance kept from the boundary when an iterative solver optimizes an
/// entropic regularizer, whose gradient blows up on the boundary.
pub const ENTROPY_MARGIN: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OutputSet {
    /// Product of intervals `[lower_j, upper_j]`; `box01(k)` is the unit cube.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Probability simplex of dimension `dim`.
    Simplex { dim: usize },
    /// Unconstrained `ℝ^dim`.
    Reals { dim: usize },
}

impl OutputSet {
    pub fn box01(k: usize) -> Self {
        OutputSet::Box { lower: vec![0.0; k], upper: vec![1.0; k] }
    }

    pub fn sub_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::contract("box bounds have different lengths"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::contract("box bounds must be finite with lower <= upper"));
        }
        Ok(OutputSet::Box { lower, upper })
    }

    pub fn simplex(k: usize) -> Self {
        OutputSet::Simplex { dim: k }
    }

    pub fn reals(k: usize) -> Self {
        OutputSet::Reals { dim: k }
    }

    pub fn dim(&self) -> usize {
        match self {
            OutputSet::Box { lower, .. } => lower.len(),
            OutputSet::Simplex { dim } | OutputSet::Reals { dim } => *dim,
        }
    }

    pub fn is_compact(&self) -> bool {
        !matches!(self, OutputSet::Reals { .. })
    }

    /// True when the set is a box contained in `[0, 1]^k`.
    pub fn is_within_unit_box(&self) -> bool {
        match self {
            OutputSet::Box { lower, upper } => lower.iter().all(|&l| l >= 0.0) && upper.iter().all(|&u| u <= 1.0),
            _ => false,
        }
    }

    pub fn contains(&self, p: &Vector, tol: f64) -> bool {
        if p.len() != self.dim() || !p.iter().all(|x| x.is_finite()) {
            return false;
        }
        match self {
            OutputSet::Box { lower, upper } => {
                p.iter().zip(lower.iter().zip(upper)).all(|(&x, (&l, &u))| x >= l - tol && x <= u + tol)
            }
            OutputSet::Simplex { .. } => p.iter().all(|&x| x >= -tol) && (p.sum() - 1.0).abs() <= tol.max(1e-9),
            OutputSet::Reals { .. } => true,
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, p: &Vector) -> Vector {
        match self {
            OutputSet::Box { lower, upper } => Vector::from_fn(p.len(), |j, _| p[j].clamp(lower[j], upper[j])),
            OutputSet::Simplex { .. } => project_simplex(p),
            OutputSet::Reals { .. } => p.clone(),
        }
    }

    /// The box shrunk by `margin` on every side (identity for other kinds).
    pub fn shrink(&self, margin: f64) -> OutputSet {
        match self {
            OutputSet::Box { lower, upper } if margin > 0.0 => {
                let (lo, hi): (Vec<f64>, Vec<f64>) = lower
                    .iter()
                    .zip(upper)
                    .map(|(&l, &u)| {
                        if u - l > 2.0 * margin {
                            (l + margin, u - margin)
                        } else {
                            let mid = 0.5 * (l + u);
                            (mid, mid)
                        }
                    })
                    .unzip();
                OutputSet::Box { lower: lo, upper: hi }
            }
            other => other.clone(),
        }
    }

    /// Interval of coordinate `j` for box sets.
    pub fn bounds(&self, j: usize) -> Option<(f64, f64)> {
        match self {
            OutputSet::Box { lower, upper } => Some((lower[j], upper[j])),
            _ => None,
        }
    }

    /// Vertices of a box (2^k points, lowest index varies fastest).
    pub fn vertices(&self) -> Result<Vec<Vector>> {
        let OutputSet::Box { lower, upper } = self else {
            return Err(Error::Unsupported("vertices are only enumerated for boxes".into()));
        };
        let k = lower.len();
        if k > 20 {
            return Err(Error::contract(format!("refusing to enumerate 2^{k} vertices")));
        }
        Ok((0..1usize << k)
            .map(|mask| Vector::from_fn(k, |j, _| if mask >> j & 1 == 1 { upper[j] } else { lower[j] }))
            .collect())
    }

    /// Regular grid over a box with the given step (endpoints included).
    /// Intended for brute-force oracles at `k <= 3`.
    pub fn grid(&self, step: f64) -> Result<Vec<Vector>> {
        let OutputSet::Box { lower, upper } = self else {
            return Err(Error::Unsupported("grids are only built over boxes".into()));
        };
        if !(step > 0.0) {
            return Err(Error::contract("grid step must be positive"));
        }
        let axes: Vec<Vec<f64>> = lower
            .iter()
            .zip(upper)
            .map(|(&l, &u)| {
                let n = ((u - l) / step).round().max(0.0) as usize;
                (0..=n).map(|i| if i == n { u } else { l + i as f64 * step }).collect()
            })
            .collect();
        let total: usize = axes.iter().map(Vec::len).product();
        if total > 50_000_000 {
            return Err(Error::contract(format!("grid with {total} points is too large")));
        }
        let k = axes.len();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; k];
        for _ in 0..total {
            out.push(Vector::from_fn(k, |j, _| axes[j][idx[j]]));
            for j in 0..k {
                idx[j] += 1;
                if idx[j] < axes[j].len() {
                    break;
                }
                idx[j] = 0;
            }
        }
        Ok(out)
    }
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(p: &Vector) -> Vector {
    let mut sorted: Vec<f64> = p.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            tau = t;
        }
    }
    p.map(|x| (x - tau).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum RegularizerKind {
    /// `γ/2 ‖p‖²`.
    SquaredL2 { gamma: f64 },
    /// `γ Σ_j p_j log p_j + (1 − p_j) log(1 − p_j)`; argmax is the sigmoid.
    ShannonBinary { gamma: f64 },
    /// `γ Σ_j (p_j² − p_j)`; argmax is the hard ("sparse") sigmoid.
    GiniBinary { gamma: f64 },
    /// `γ Σ_j p_j log p_j` over the simplex; argmax is the softmax.
    ShannonSimplex { gamma: f64 },
    /// 0 on the domain, +∞ outside.
    Indicator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regularizer {
    kind: RegularizerKind,
    domain: OutputSet,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::contract(format!("regularization strength must be positive, got {gamma}")));
    }
    Ok(())
}

fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `γ log Σ_i exp(u_i / γ)` with a max shift.
pub fn lse(u: &[f64], gamma: f64) -> f64 {
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = u.iter().map(|&x| ((x - m) / gamma).exp()).sum();
    m + gamma * s.ln()
}

/// `softmax(u / γ)`, the gradient of [`lse`].
pub fn softmax(u: &[f64], gamma: f64) -> Vector {
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = u.iter().map(|&x| ((x - m) / gamma).exp()).collect();
    let s: f64 = e.iter().sum();
    Vector::from_iterator(e.len(), e.into_iter().map(|x| x / s))
}

impl Regularizer {
    pub fn new(kind: RegularizerKind, domain: OutputSet) -> Result<Self> {
        match kind {
            RegularizerKind::SquaredL2 { gamma } => check_gamma(gamma)?,
            RegularizerKind::ShannonBinary { gamma } | RegularizerKind::GiniBinary { gamma } => {
                check_gamma(gamma)?;
                if !domain.is_within_unit_box() {
                    return Err(Error::contract("binary regularizers need a box inside [0,1]^k"));
                }
            }
            RegularizerKind::ShannonSimplex { gamma } => {
                check_gamma(gamma)?;
                if !matches!(domain, OutputSet::Simplex { .. }) {
                    return Err(Error::contract("shannon_simplex needs a simplex domain"));
                }
            }
            RegularizerKind::Indicator => {}
        }
        Ok(Regularizer { kind, domain })
    }

    /// The kind over its natural domain: the simplex for simplex entropy,
    /// `ℝ^k` for the squared norm and `[0, 1]^k` otherwise.
    pub fn with_default_domain(kind: RegularizerKind, k: usize) -> Result<Self> {
        let domain = match kind {
            RegularizerKind::SquaredL2 { .. } => OutputSet::reals(k),
            RegularizerKind::ShannonSimplex { .. } => OutputSet::simplex(k),
            _ => OutputSet::box01(k),
        };
        Self::new(kind, domain)
    }

    pub fn squared_l2(gamma: f64, k: usize) -> Result<Self> {
        Self::new(RegularizerKind::SquaredL2 { gamma }, OutputSet::reals(k))
    }

    pub fn shannon_binary(gamma: f64, k: usize) -> Result<Self> {
        Self::new(RegularizerKind::ShannonBinary { gamma }, OutputSet::box01(k))
    }

    pub fn gini_binary(gamma: f64, k: usize) -> Result<Self> {
        Self::new(RegularizerKind::GiniBinary { gamma }, OutputSet::box01(k))
    }

    pub fn shannon_simplex(gamma: f64, k: usize) -> Result<Self> {
        Self::new(RegularizerKind::ShannonSimplex { gamma }, OutputSet::simplex(k))
    }

    pub fn indicator(domain: OutputSet) -> Self {
        Regularizer { kind: RegularizerKind::Indicator, domain }
    }

    /// Same regularizer restricted to a smaller output set.
    pub fn restricted_to(&self, domain: OutputSet) -> Result<Self> {
        Self::new(self.kind, domain)
    }

    pub fn kind(&self) -> RegularizerKind {
        self.kind
    }

    pub fn domain(&self) -> &OutputSet {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn gamma(&self) -> f64 {
        match self.kind {
            RegularizerKind::SquaredL2 { gamma }
            | RegularizerKind::ShannonBinary { gamma }
            | RegularizerKind::GiniBinary { gamma }
            | RegularizerKind::ShannonSimplex { gamma } => gamma,
            RegularizerKind::Indicator => 0.0,
        }
    }

    /// Strong-convexity modulus with respect to the Euclidean norm on the domain.
    pub fn strong_convexity(&self) -> f64 {
        match self.kind {
            RegularizerKind::SquaredL2 { gamma } => gamma,
            RegularizerKind::GiniBinary { gamma } => 2.0 * gamma,
            // second derivative γ/(p(1−p)) >= 4γ on [0,1]
            RegularizerKind::ShannonBinary { gamma } => 4.0 * gamma,
            RegularizerKind::ShannonSimplex { gamma } => gamma,
            RegularizerKind::Indicator => 0.0,
        }
    }

    fn is_entropic(&self) -> bool {
        matches!(self.kind, RegularizerKind::ShannonBinary { .. } | RegularizerKind::ShannonSimplex { .. })
    }

    /// Margin an iterative solver should keep from the boundary of the domain.
    pub fn interior_margin(&self) -> f64 {
        if self.is_entropic() {
            ENTROPY_MARGIN
        } else {
            0.0
        }
    }

    /// `Ω(p)`, `+∞` outside the domain. Uses `0 log 0 = 0`.
    pub fn value(&self, p: &Vector) -> f64 {
        if !self.domain.contains(p, MEMBERSHIP_TOLERANCE) {
            return f64::INFINITY;
        }
        match self.kind {
            RegularizerKind::SquaredL2 { gamma } => 0.5 * gamma * p.norm_squared(),
            RegularizerKind::ShannonBinary { gamma } => {
                gamma * p.iter().map(|&x| xlogx(x) + xlogx(1.0 - x)).sum::<f64>()
            }
            RegularizerKind::GiniBinary { gamma } => gamma * p.iter().map(|&x| x * x - x).sum::<f64>(),
            RegularizerKind::ShannonSimplex { gamma } => gamma * p.iter().map(|&x| xlogx(x)).sum::<f64>(),
            RegularizerKind::Indicator => 0.0,
        }
    }

    /// `∇Ω(p)`; the indicator returns the zero subgradient.
    pub fn gradient(&self, p: &Vector) -> Result<Vector> {
        if !self.domain.contains(p, MEMBERSHIP_TOLERANCE) {
            return Err(Error::contract("gradient requested outside the regularizer domain"));
        }
        match self.kind {
            RegularizerKind::SquaredL2 { gamma } => Ok(p * gamma),
            RegularizerKind::GiniBinary { gamma } => Ok(p.map(|x| gamma * (2.0 * x - 1.0))),
            RegularizerKind::ShannonBinary { gamma } => {
                if p.iter().any(|&x| x <= 0.0 || x >= 1.0) {
                    return Err(Error::DomainBoundary("binary entropy at 0 or 1".into()));
                }
                Ok(p.map(|x| gamma * (x / (1.0 - x)).ln()))
            }
            RegularizerKind::ShannonSimplex { gamma } => {
                if p.iter().any(|&x| x <= 0.0) {
                    return Err(Error::DomainBoundary("simplex entropy at a zero coordinate".into()));
                }
                Ok(p.map(|x| gamma * (x.ln() + 1.0)))
            }
            RegularizerKind::Indicator => Ok(Vector::zeros(p.len())),
        }
    }

    /// Per-coordinate `(curvature, slope)` when `Ω(p) = Σ_j ½ c p_j² + s p_j`.
    pub fn separable_quadratic(&self) -> Option<(f64, f64)> {
        match self.kind {
            RegularizerKind::SquaredL2 { gamma } => Some((gamma, 0.0)),
            RegularizerKind::GiniBinary { gamma } => Some((2.0 * gamma, -gamma)),
            RegularizerKind::Indicator => Some((0.0, 0.0)),
            _ => None,
        }
    }

    /// `p_Ω(u) = argmax_{p ∈ C} ⟨u, p⟩ − Ω(p)`.
    pub fn closed_form_map(&self, u: &Vector) -> Result<Vector> {
        if u.len() != self.dim() {
            return Err(Error::contract(format!(
                "closed_form_map: input has length {}, regularizer dimension is {}",
                u.len(),
                self.dim()
            )));
        }
        let clip = |p: Vector| self.domain.project(&p);
        match (self.kind, &self.domain) {
            (RegularizerKind::SquaredL2 { gamma }, OutputSet::Reals { .. } | OutputSet::Box { .. }) => {
                Ok(clip(u / gamma))
            }
            (RegularizerKind::ShannonBinary { gamma }, _) => Ok(clip(u.map(|x| sigmoid(x / gamma)))),
            (RegularizerKind::GiniBinary { gamma }, _) => Ok(clip(u.map(|x| (x + gamma) / (2.0 * gamma)))),
            (RegularizerKind::ShannonSimplex { gamma }, _) => Ok(softmax(u.as_slice(), gamma)),
            (RegularizerKind::Indicator, OutputSet::Box { lower, upper }) => {
                Ok(Vector::from_fn(u.len(), |j, _| if u[j] >= 0.0 { upper[j] } else { lower[j] }))
            }
            (RegularizerKind::Indicator, OutputSet::Simplex { .. }) => {
                let mut best = 0;
                for j in 1..u.len() {
                    if u[j] > u[best] {
                        best = j;
                    }
                }
                let mut p = Vector::zeros(u.len());
                if !u.is_empty() {
                    p[best] = 1.0;
                }
                Ok(p)
            }
            (RegularizerKind::Indicator, OutputSet::Reals { .. }) => {
                if u.iter().all(|&x| x == 0.0) {
                    Ok(Vector::zeros(u.len()))
                } else {
                    Err(Error::Divergence("linear objective over unbounded reals".into()))
                }
            }
            (kind, domain) => Err(Error::Unsupported(format!(
                "no closed-form argmax for {kind:?} over {domain:?}; use the iterative oracle"
            ))),
        }
    }

    /// Convex conjugate `Ω*(u) = max_{p ∈ C} ⟨u, p⟩ − Ω(p)`.
    pub fn conjugate_value(&self, u: &Vector) -> Result<f64> {
        match (self.kind, &self.domain) {
            (RegularizerKind::SquaredL2 { gamma }, OutputSet::Reals { .. }) => Ok(u.norm_squared() / (2.0 * gamma)),
            (RegularizerKind::ShannonBinary { gamma }, d) if *d == OutputSet::box01(u.len()) => {
                Ok(gamma * u.iter().map(|&x| softplus(x / gamma)).sum::<f64>())
            }
            (RegularizerKind::ShannonSimplex { gamma }, _) => Ok(lse(u.as_slice(), gamma)),
            _ => {
                let p = self.closed_form_map(u)?;
                Ok(u.dot(&p) - self.value(&p))
            }
        }
    }

    /// Regular Fenchel-Young loss `Ω*(u) + Ω(p) − ⟨u, p⟩`.
    pub fn fy_loss(&self, u: &Vector, p: &Vector) -> Result<f64> {
        Ok(self.conjugate_value(u)? + self.value(p) - u.dot(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;
    use rand::Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    #[test]
    fn value_examples() {
        assert_eq!(Regularizer::squared_l2(1.0, 2).unwrap().value(&v(&[3.0, 4.0])), 12.5);
        assert_eq!(Regularizer::gini_binary(1.0, 2).unwrap().value(&v(&[0.0, 1.0])), 0.0);
        let ind = Regularizer::indicator(OutputSet::box01(2));
        assert_eq!(ind.value(&v(&[0.5, 1.5])), f64::INFINITY);
        assert_eq!(ind.value(&v(&[0.5, 1.0])), 0.0);
        let sb = Regularizer::shannon_binary(1.0, 1).unwrap();
        assert_eq!(sb.value(&v(&[0.0])), 0.0);
        assert!((sb.value(&v(&[0.5])) - (0.5f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn closed_form_examples() {
        let sq = Regularizer::squared_l2(1.0, 2).unwrap();
        assert_eq!(sq.closed_form_map(&v(&[3.0, 4.0])).unwrap().as_slice(), &[3.0, 4.0]);
        let sb = Regularizer::shannon_binary(1.0, 1).unwrap();
        assert_eq!(sb.closed_form_map(&v(&[0.0])).unwrap()[0], 0.5);
        let gini = Regularizer::gini_binary(1.0, 1).unwrap();
        assert_eq!(gini.closed_form_map(&v(&[-0.5])).unwrap()[0], 0.25);
        assert_eq!(gini.closed_form_map(&v(&[2.0])).unwrap()[0], 1.0);
        let ss = Regularizer::shannon_simplex(1.0, 3).unwrap();
        let p = ss.closed_form_map(&v(&[0.0, 0.0, 0.0])).unwrap();
        for x in p.iter() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn indicator_without_closed_form_is_unsupported() {
        let sq_simplex = Regularizer::new(RegularizerKind::SquaredL2 { gamma: 1.0 }, OutputSet::simplex(3)).unwrap();
        assert!(matches!(sq_simplex.closed_form_map(&v(&[1.0, 0.0, 0.0])), Err(Error::Unsupported(_))));
        let ind = Regularizer::indicator(OutputSet::reals(1));
        assert!(matches!(ind.closed_form_map(&v(&[1.0])), Err(Error::Divergence(_))));
    }

    #[test]
    fn invalid_construction() {
        assert!(Regularizer::gini_binary(-1.0, 2).is_err());
        assert!(Regularizer::new(RegularizerKind::GiniBinary { gamma: 1.0 }, OutputSet::reals(2)).is_err());
        assert!(Regularizer::new(RegularizerKind::ShannonSimplex { gamma: 1.0 }, OutputSet::box01(2)).is_err());
    }

    #[test]
    fn lse_examples() {
        assert!((lse(&[0.0, 0.0], 1.0) - 2f64.ln()).abs() < 1e-15);
        let big = lse(&[1000.0, 0.0], 1.0);
        assert!(big.is_finite() && (big - 1000.0).abs() < 1e-12);
        let mut rng = seeded_rng(3);
        for _ in 0..200 {
            let u: Vec<f64> = (0..5).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!((lse(&u, 1e-4) - m).abs() <= 1e-3);
        }
    }

    #[test]
    fn entropy_gradient_on_boundary_is_an_error() {
        let sb = Regularizer::shannon_binary(1.0, 2).unwrap();
        assert!(matches!(sb.gradient(&v(&[0.0, 0.3])), Err(Error::DomainBoundary(_))));
        let ss = Regularizer::shannon_simplex(1.0, 2).unwrap();
        assert!(matches!(ss.gradient(&v(&[0.0, 1.0])), Err(Error::DomainBoundary(_))));
    }

    fn binary_regs(k: usize) -> Vec<Regularizer> {
        vec![
            Regularizer::shannon_binary(0.7, k).unwrap(),
            Regularizer::gini_binary(1.3, k).unwrap(),
            Regularizer::new(RegularizerKind::SquaredL2 { gamma: 0.9 }, OutputSet::box01(k)).unwrap(),
        ]
    }

    #[test]
    fn closed_forms_match_grid_maximizer() {
        let mut rng = seeded_rng(5);
        for k in 1..=2 {
            let grid = OutputSet::box01(k).grid(1e-3).unwrap();
            for reg in binary_regs(k) {
                for _ in 0..5 {
                    let u = Vector::from_fn(k, |_, _| rng.gen_range(-3.0..3.0));
                    let p = reg.closed_form_map(&u).unwrap();
                    let best = grid
                        .iter()
                        .max_by(|a, b| {
                            let fa = u.dot(a) - reg.value(a);
                            let fb = u.dot(b) - reg.value(b);
                            fa.total_cmp(&fb)
                        })
                        .unwrap();
                    assert!((&p - best).amax() <= 2e-3, "{reg:?} u={u} p={p} grid={best}");
                    let conj = reg.conjugate_value(&u).unwrap();
                    assert!((conj - (u.dot(&p) - reg.value(&p))).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn strong_convexity_along_chords() {
        let mut rng = seeded_rng(9);
        let k = 3;
        let mut regs = binary_regs(k);
        regs.push(Regularizer::squared_l2(2.0, k).unwrap());
        for reg in &regs {
            let g = reg.strong_convexity();
            for _ in 0..500 {
                let p = Vector::from_fn(k, |_, _| rng.gen_range(0.0..1.0));
                let q = Vector::from_fn(k, |_, _| rng.gen_range(0.0..1.0));
                let t = rng.gen_range(0.01..0.99);
                let mid = &p * t + &q * (1.0 - t);
                let lhs = reg.value(&mid);
                let rhs =
                    t * reg.value(&p) + (1.0 - t) * reg.value(&q) - 0.5 * g * t * (1.0 - t) * (&p - &q).norm_squared();
                assert!(lhs <= rhs + 1e-9, "{reg:?}");
            }
        }
        let ss = Regularizer::shannon_simplex(1.5, k).unwrap();
        for _ in 0..500 {
            let p = project_simplex(&Vector::from_fn(k, |_, _| rng.gen_range(0.0..1.0)));
            let q = project_simplex(&Vector::from_fn(k, |_, _| rng.gen_range(0.0..1.0)));
            let t = rng.gen_range(0.01..0.99);
            let mid = &p * t + &q * (1.0 - t);
            let rhs = t * ss.value(&p) + (1.0 - t) * ss.value(&q)
                - 0.5 * ss.strong_convexity() * t * (1.0 - t) * (&p - &q).norm_squared();
            assert!(ss.value(&mid) <= rhs + 1e-9);
        }
    }

    #[test]
    fn argmax_is_inverse_modulus_lipschitz() {
        let mut rng = seeded_rng(13);
        let k = 4;
        let mut regs = binary_regs(k);
        regs.push(Regularizer::squared_l2(0.5, k).unwrap());
        regs.push(Regularizer::shannon_simplex(0.8, k).unwrap());
        for reg in &regs {
            let l = 1.0 / reg.strong_convexity();
            for _ in 0..500 {
                let a = Vector::from_fn(k, |_, _| rng.gen_range(-4.0..4.0));
                let b = Vector::from_fn(k, |_, _| rng.gen_range(-4.0..4.0));
                let pa = reg.closed_form_map(&a).unwrap();
                let pb = reg.closed_form_map(&b).unwrap();
                assert!((&pa - &pb).norm() <= l * (&a - &b).norm() + 1e-12, "{reg:?}");
            }
        }
    }

    #[test]
    fn simplex_projection_lands_on_simplex() {
        let mut rng = seeded_rng(17);
        for _ in 0..200 {
            let p = Vector::from_fn(5, |_, _| rng.gen_range(-2.0..2.0));
            let q = project_simplex(&p);
            assert!(OutputSet::simplex(5).contains(&q, 1e-12));
        }
    }

    #[test]
    fn grid_and_vertices() {
        let g = OutputSet::box01(2).grid(0.5).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(OutputSet::box01(3).vertices().unwrap().len(), 8);
    }
}
