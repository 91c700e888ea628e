//! Generalized Fenchel-Young loss, baseline losses, generalized biconjugates
//! and generalized Bregman divergences.

use serde::{Deserialize, Serialize};

use crate::conjugate::{conjugate, ConjugateResult, SolverConfig};
use crate::energies::{Energy, EnergyInput, PStructure};
use crate::error::{Error, Result};
use crate::numerics::{default_step, Vector};
use crate::regularizers::{OutputSet, Regularizer, MEMBERSHIP_TOLERANCE};

/// Probabilities are clamped to `[XENT_CLAMP, 1 − XENT_CLAMP]` before taking logs.
pub const XENT_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Generalized Fenchel-Young loss.
    Gfy,
    /// Generalized perceptron loss (indicator regularizer).
    Perceptron,
    /// Negated energy.
    Energy,
    /// Binary cross-entropy on the regularized argmax.
    Xent,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Gfy => "gfy",
            LossKind::Perceptron => "perceptron",
            LossKind::Energy => "energy",
            LossKind::Xent => "xent",
        }
    }

    /// Regularizer used when decoding a model trained with this loss.
    pub fn inference_regularizer(self, reg: &Regularizer) -> Regularizer {
        match self {
            LossKind::Gfy | LossKind::Xent => reg.clone(),
            LossKind::Perceptron | LossKind::Energy => Regularizer::indicator(reg.domain().clone()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LossEval {
    pub value: f64,
    pub grad_v: EnergyInput,
    pub conjugate: Option<ConjugateResult>,
}

fn check_target(reg: &Regularizer, y: &Vector) -> Result<()> {
    if y.len() != reg.dim() {
        return Err(Error::contract(format!("target has length {}, expected {}", y.len(), reg.dim())));
    }
    if !reg.domain().contains(y, MEMBERSHIP_TOLERANCE) {
        return Err(Error::contract("target lies outside the output set"));
    }
    Ok(())
}

/// `L(v, y) = Ω^Φ(v) + Ω(y) − Φ(v, y)` with gradient `∇Ω^Φ(v) − ∇₁Φ(v, y)`.
pub fn gfy_loss(
    energy: &Energy,
    reg: &Regularizer,
    v: &EnergyInput,
    y: &Vector,
    cfg: &SolverConfig,
) -> Result<LossEval> {
    check_target(reg, y)?;
    let conj = conjugate(energy, reg, v, cfg)?;
    let value = conj.value + reg.value(y) - energy.value(v, y)?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss value {value}")));
    }
    let grad_v = conj.envelope_grad.add_scaled(-1.0, &energy.grad_v(v, y)?);
    Ok(LossEval { value, grad_v, conjugate: Some(conj) })
}

/// `max_{p ∈ C} Φ(v, p) − Φ(v, y)`.
pub fn perceptron_loss(
    energy: &Energy,
    set: &OutputSet,
    v: &EnergyInput,
    y: &Vector,
    cfg: &SolverConfig,
) -> Result<LossEval> {
    gfy_loss(energy, &Regularizer::indicator(set.clone()), v, y, cfg)
}

/// `−Φ(v, y)` with gradient `−∇₁Φ(v, y)`.
pub fn energy_loss(energy: &Energy, v: &EnergyInput, y: &Vector) -> Result<LossEval> {
    if y.len() != energy.p_dim() {
        return Err(Error::contract("target dimension does not match the energy"));
    }
    Ok(LossEval { value: -energy.value(v, y)?, grad_v: energy.grad_v(v, y)?.scaled(-1.0), conjugate: None })
}

/// Binary cross-entropy between `y` and `p^Φ_Ω(v)`.
pub fn xent_value(
    energy: &Energy,
    reg: &Regularizer,
    v: &EnergyInput,
    y: &Vector,
    cfg: &SolverConfig,
) -> Result<(f64, ConjugateResult)> {
    check_target(reg, y)?;
    let conj = conjugate(energy, reg, v, cfg)?;
    let value = conj
        .argmax
        .iter()
        .zip(y.iter())
        .map(|(&p, &t)| {
            let p = p.clamp(XENT_CLAMP, 1.0 - XENT_CLAMP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok((value, conj))
}

/// Cross-entropy loss; the gradient is a central difference through the argmax.
pub fn xent_loss(
    energy: &Energy,
    reg: &Regularizer,
    v: &EnergyInput,
    y: &Vector,
    cfg: &SolverConfig,
) -> Result<LossEval> {
    let (value, conj) = xent_value(energy, reg, v, y, cfg)?;
    let grad_v = finite_difference_input(v, |w| Ok(xent_value(energy, reg, w, y, cfg)?.0))?;
    Ok(LossEval { value, grad_v, conjugate: Some(conj) })
}

/// Dispatch on the loss kind. `reg` is the training regularizer; the
/// perceptron loss uses the indicator of its domain instead.
pub fn evaluate(
    kind: LossKind,
    energy: &Energy,
    reg: &Regularizer,
    v: &EnergyInput,
    y: &Vector,
    cfg: &SolverConfig,
) -> Result<LossEval> {
    match kind {
        LossKind::Gfy => gfy_loss(energy, reg, v, y, cfg),
        LossKind::Perceptron => perceptron_loss(energy, reg.domain(), v, y, cfg),
        LossKind::Energy => energy_loss(energy, v, y),
        LossKind::Xent => xent_loss(energy, reg, v, y, cfg),
    }
}

/// Loss value only (no gradient work beyond what the solver needs).
pub fn loss_value(
    kind: LossKind,
    energy: &Energy,
    reg: &Regularizer,
    v: &EnergyInput,
    y: &Vector,
    cfg: &SolverConfig,
) -> Result<f64> {
    match kind {
        LossKind::Xent => Ok(xent_value(energy, reg, v, y, cfg)?.0),
        _ => Ok(evaluate(kind, energy, reg, v, y, cfg)?.value),
    }
}

fn finite_difference_input<F>(v: &EnergyInput, mut f: F) -> Result<EnergyInput>
where
    F: FnMut(&EnergyInput) -> Result<f64>,
{
    let mut flat = v.to_flat();
    let mut grad = vec![0.0; flat.len()];
    for i in 0..flat.len() {
        let x = flat[i];
        let h = default_step(x);
        flat[i] = x + h;
        let plus = f(&v.with_flat(&flat))?;
        flat[i] = x - h;
        let minus = f(&v.with_flat(&flat))?;
        flat[i] = x;
        let g = (plus - minus) / (2.0 * h);
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("finite difference at coordinate {i}")));
        }
        grad[i] = g;
    }
    Ok(v.with_flat(&grad))
}

/// Central-difference gradient of the loss value in `v`; every probe re-solves
/// the inner maximization, so this differentiates through the argmax.
pub fn loss_grad_finite_difference(
    kind: LossKind,
    energy: &Energy,
    reg: &Regularizer,
    v: &EnergyInput,
    y: &Vector,
    cfg: &SolverConfig,
) -> Result<EnergyInput> {
    finite_difference_input(v, |w| loss_value(kind, energy, reg, w, y, cfg))
}

/// Regular Fenchel-Young loss at the linearization `∇₂Φ(v, p)`; an upper bound
/// on the generalized loss for energies concave in `p`.
pub fn linearized_fy_upper_bound(energy: &Energy, reg: &Regularizer, v: &EnergyInput, p: &Vector) -> Result<f64> {
    if matches!(energy.p_structure(), PStructure::Nonconcave) {
        return Err(Error::contract("linearized bound needs an energy concave in p"));
    }
    let z = energy.grad_p(v, p)?;
    reg.fy_loss(&z, p)
}

/// `max_{v ∈ grid} Φ(v, p) − Ω^Φ(v)`, a lower bound on `Ω(p)`.
pub fn biconjugate(
    energy: &Energy,
    reg: &Regularizer,
    p: &Vector,
    v_grid: &[EnergyInput],
    cfg: &SolverConfig,
) -> Result<f64> {
    biconjugate_with(energy, p, v_grid, |v| Ok(conjugate(energy, reg, v, cfg)?.value))
}

/// Biconjugate of an arbitrary function of `v` standing in for `Ω^Φ`.
pub fn biconjugate_with<F>(energy: &Energy, p: &Vector, v_grid: &[EnergyInput], mut conj: F) -> Result<f64>
where
    F: FnMut(&EnergyInput) -> Result<f64>,
{
    if v_grid.is_empty() {
        return Err(Error::contract("biconjugate needs a nonempty grid"));
    }
    let mut best = f64::NEG_INFINITY;
    for v in v_grid {
        best = best.max(energy.value(v, p)? - conj(v)?);
    }
    Ok(best)
}

/// How the inner maximization over `v` is solved in [`generalized_bregman`].
#[derive(Clone, Copy, Debug)]
pub enum InnerSolver<'a> {
    /// Bilinear energy with square coupling: solve `Uᵀv' = ∇Ω(p')`.
    Closed,
    /// Best point of a finite grid.
    Grid(&'a [EnergyInput]),
}

/// Maximizer over `v` of `Φ(v, p') − Ω^Φ(v)`.
pub fn dual_point(
    energy: &Energy,
    reg: &Regularizer,
    p_ref: &Vector,
    solver: InnerSolver<'_>,
    cfg: &SolverConfig,
) -> Result<EnergyInput> {
    match solver {
        InnerSolver::Closed => {
            let Energy::Bilinear { coupling } = energy else {
                return Err(Error::Unsupported("closed-form inner solve needs a bilinear energy".into()));
            };
            if !coupling.is_square() {
                return Err(Error::Unsupported("closed-form inner solve needs a square coupling".into()));
            }
            let g = reg.gradient(p_ref)?;
            let v = coupling
                .transpose()
                .lu()
                .solve(&g)
                .ok_or_else(|| Error::Infeasible("coupling matrix is singular".into()))?;
            Ok(EnergyInput::Dense(v))
        }
        InnerSolver::Grid(grid) => {
            if grid.is_empty() {
                return Err(Error::contract("inner grid is empty"));
            }
            let mut best: Option<(f64, &EnergyInput)> = None;
            for v in grid {
                let score = energy.value(v, p_ref)? - conjugate(energy, reg, v, cfg)?.value;
                if best.map_or(true, |(s, _)| score > s) {
                    best = Some((score, v));
                }
            }
            Ok(best.map(|(_, v)| v.clone()).expect("grid is nonempty"))
        }
    }
}

/// `D(p, p') = Ω(p) − Φ(v', p) − Ω(p') + Φ(v', p')` with `v'` the dual point of `p'`.
pub fn generalized_bregman(
    energy: &Energy,
    reg: &Regularizer,
    p: &Vector,
    p_ref: &Vector,
    solver: InnerSolver<'_>,
    cfg: &SolverConfig,
) -> Result<f64> {
    check_target(reg, p)?;
    check_target(reg, p_ref)?;
    let v = dual_point(energy, reg, p_ref, solver, cfg)?;
    Ok(reg.value(p) - energy.value(&v, p)? - reg.value(p_ref) + energy.value(&v, p_ref)?)
}

/// Divergence between two dual points, `Ω^Φ(v) − Φ(v, p') − Ω^Φ(v') + Φ(v', p')`
/// with `p' = p^Φ_Ω(v')`. Equal to `L(v, p')`.
pub fn dual_generalized_bregman(
    energy: &Energy,
    reg: &Regularizer,
    v: &EnergyInput,
    v_ref: &EnergyInput,
    cfg: &SolverConfig,
) -> Result<f64> {
    let at_ref = conjugate(energy, reg, v_ref, cfg)?;
    let p_ref = &at_ref.argmax;
    let at_v = conjugate(energy, reg, v, cfg)?;
    Ok(at_v.value - energy.value(v, p_ref)? - at_ref.value + energy.value(v_ref, p_ref)?)
}
