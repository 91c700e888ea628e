//! The generalized conjugate `Ω^Φ(v) = max_{p ∈ C} Φ(v, p) − Ω(p)`, its argmax
//! and its envelope gradient `∇₁Φ(v, p*)`.
//!
//! Dispatch order is closed form, then coordinate ascent (quadratic energy,
//! separable quadratic regularizer, box output set), then projected gradient
//! ascent with backtracking.

use nalgebra::LU;
use serde::{Deserialize, Serialize};

use crate::energies::{Energy, EnergyInput, PStructure};
use crate::error::{Error, Result};
use crate::numerics::{
    is_negative_semidefinite, is_symmetric, max_eigenvalue, solve_spd, Matrix, Vector, NSD_TOLERANCE,
};
use crate::regularizers::{OutputSet, Regularizer, RegularizerKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stopping tolerance: projected-gradient norm for gradient ascent,
    /// largest coordinate change per sweep for coordinate ascent.
    pub tolerance: f64,
    pub initial_step: f64,
    pub shrink: f64,
    pub sufficient_increase: f64,
    pub max_shrinks: usize,
    pub max_sweeps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 10_000,
            tolerance: 1e-8,
            initial_step: 1.0,
            shrink: 0.5,
            sufficient_increase: 0.5,
            max_shrinks: 50,
            max_sweeps: 10_000,
        }
    }
}

impl SolverConfig {
    /// Looser tolerance used inside training loops.
    pub fn loose() -> Self {
        SolverConfig { tolerance: 1e-6, ..Self::default() }
    }

    pub fn with_tolerance(self, tolerance: f64) -> Self {
        SolverConfig { tolerance, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.max_iters > 0
            && self.max_sweeps > 0
            && self.max_shrinks > 0
            && self.tolerance > 0.0
            && self.initial_step > 0.0
            && self.sufficient_increase > 0.0;
        if !positive || !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::contract(format!("invalid solver config: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum SolveStatus {
    ClosedForm,
    Converged {
        iters: usize,
        gap: f64,
    },
    MaxIters {
        iters: usize,
        gap: f64,
    },
    /// Stationary point of a nonconcave problem; not certified global.
    LocalOnly {
        iters: usize,
        gap: f64,
    },
    /// Line search could not find an increasing step.
    Stalled {
        iters: usize,
        gap: f64,
    },
}

impl SolveStatus {
    pub fn gap(&self) -> f64 {
        match *self {
            SolveStatus::ClosedForm => 0.0,
            SolveStatus::Converged { gap, .. }
            | SolveStatus::MaxIters { gap, .. }
            | SolveStatus::LocalOnly { gap, .. }
            | SolveStatus::Stalled { gap, .. } => gap,
        }
    }

    pub fn iters(&self) -> usize {
        match *self {
            SolveStatus::ClosedForm => 0,
            SolveStatus::Converged { iters, .. }
            | SolveStatus::MaxIters { iters, .. }
            | SolveStatus::LocalOnly { iters, .. }
            | SolveStatus::Stalled { iters, .. } => iters,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    CoordinateAscent,
    ProjectedGradient,
    FaceEnumeration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConjugateResult {
    pub value: f64,
    pub argmax: Vector,
    pub envelope_grad: EnergyInput,
    pub status: SolveStatus,
    pub method: Method,
}

/// Result of an inner ascent routine.
#[derive(Clone, Debug, PartialEq)]
pub struct AscentOutcome {
    pub point: Vector,
    pub value: f64,
    pub status: SolveStatus,
}

/// Projected gradient ascent with Armijo backtracking.
///
/// Starts from the projection of `start`; each iteration tries
/// `min(initial_step, 2 t_prev)` and shrinks until
/// `F(p⁺) ≥ F(p) + c ⟨∇F(p), p⁺ − p⟩` (up to round-off).
pub fn projected_gradient_ascent<F, G>(
    mut objective: F,
    mut gradient: G,
    set: &OutputSet,
    start: &Vector,
    cfg: &SolverConfig,
) -> Result<AscentOutcome>
where
    F: FnMut(&Vector) -> Result<f64>,
    G: FnMut(&Vector) -> Result<Vector>,
{
    cfg.validate()?;
    if start.len() != set.dim() {
        return Err(Error::contract("starting point does not match the output set dimension"));
    }
    let mut p = set.project(start);
    let mut f = objective(&p)?;
    if !f.is_finite() {
        return Err(Error::NonFinite("objective at the starting point".into()));
    }
    let mut step = cfg.initial_step;
    let mut gap = f64::INFINITY;
    for iter in 0..cfg.max_iters {
        let g = gradient(&p)?;
        if !g.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("objective gradient at iteration {iter}")));
        }
        gap = (set.project(&(&p + &g)) - &p).norm();
        if gap <= cfg.tolerance {
            return Ok(AscentOutcome { point: p, value: f, status: SolveStatus::Converged { iters: iter, gap } });
        }
        // Cancellation between large terms can swamp tiny true increases, so
        // below this difference the trapezoid estimate decides instead.
        let slack = 1e-10 * (1.0 + f.abs());
        let mut t = (2.0 * step).min(cfg.initial_step);
        let mut accepted = None;
        for _ in 0..=cfg.max_shrinks {
            let cand = set.project(&(&p + &g * t));
            let fc = objective(&cand)?;
            let d = &cand - &p;
            let required = cfg.sufficient_increase * g.dot(&d);
            let increase = if fc.is_finite() && (fc - f).abs() <= slack {
                // Values agree closely: estimate the increase with the trapezoid rule.
                let gc = gradient(&cand)?;
                0.5 * (&g + &gc).dot(&d)
            } else {
                fc - f
            };
            if fc.is_finite() && increase >= required {
                accepted = Some((cand, fc));
                break;
            }
            t *= cfg.shrink;
        }
        let Some((cand, fc)) = accepted else {
            return Ok(AscentOutcome { point: p, value: f, status: SolveStatus::Stalled { iters: iter, gap } });
        };
        step = t;
        p = cand;
        f = fc;
        if !set.is_compact() && p.amax() > 1e12 {
            return Err(Error::Divergence(format!("iterate norm exceeded 1e12 after {iter} iterations")));
        }
    }
    if !set.is_compact() {
        return Err(Error::Divergence(format!(
            "no convergence over an unbounded set after {} iterations (gap {gap:e})",
            cfg.max_iters
        )));
    }
    Ok(AscentOutcome { point: p, value: f, status: SolveStatus::MaxIters { iters: cfg.max_iters, gap } })
}

/// Maximizer of `α t + ½ β t²` over `[lo, hi]`, keeping `current` when flat.
fn maximize_interval_quadratic(alpha: f64, beta: f64, lo: f64, hi: f64, current: f64) -> f64 {
    if beta < 0.0 {
        return (-alpha / beta).clamp(lo, hi);
    }
    if beta == 0.0 && alpha == 0.0 {
        return current.clamp(lo, hi);
    }
    let q = |t: f64| alpha * t + 0.5 * beta * t * t;
    if q(hi) > q(lo) || (q(hi) == q(lo) && alpha > 0.0) {
        hi
    } else {
        lo
    }
}

/// Box-constrained quadratic `max ⟨c, p⟩ + ½⟨p, H p⟩ − Σ_j (½ curv p_j² + slope p_j)`.
#[derive(Clone, Debug)]
pub struct BoxQuadratic<'a> {
    pub linear: &'a Vector,
    /// Symmetric quadratic term.
    pub quad: &'a Matrix,
    pub curvature: f64,
    pub slope: f64,
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

impl BoxQuadratic<'_> {
    pub fn value(&self, p: &Vector) -> f64 {
        self.linear.dot(p) + 0.5 * p.dot(&(self.quad * p))
            - p.iter().map(|&x| 0.5 * self.curvature * x * x + self.slope * x).sum::<f64>()
    }

    pub fn gradient(&self, p: &Vector) -> Vector {
        self.linear + self.quad * p - p.map(|x| self.curvature * x + self.slope)
    }

    fn projected_gradient_norm(&self, p: &Vector) -> f64 {
        let g = self.gradient(p);
        let mut s = 0.0;
        for j in 0..p.len() {
            let d = (p[j] + g[j]).clamp(self.lower[j], self.upper[j]) - p[j];
            s += d * d;
        }
        s.sqrt()
    }

    /// Cyclic exact coordinate maximization from `start`.
    pub fn coordinate_ascent(&self, start: &Vector, cfg: &SolverConfig) -> AscentOutcome {
        let k = start.len();
        let mut p = Vector::from_fn(k, |j, _| start[j].clamp(self.lower[j], self.upper[j]));
        for sweep in 1..=cfg.max_sweeps {
            let mut max_change = 0.0f64;
            for j in 0..k {
                let mut off = 0.0;
                for i in 0..k {
                    if i != j {
                        off += self.quad[(j, i)] * p[i];
                    }
                }
                let alpha = self.linear[j] + off - self.slope;
                let beta = self.quad[(j, j)] - self.curvature;
                let next = maximize_interval_quadratic(alpha, beta, self.lower[j], self.upper[j], p[j]);
                max_change = max_change.max((next - p[j]).abs());
                p[j] = next;
            }
            if max_change <= cfg.tolerance {
                let gap = self.projected_gradient_norm(&p);
                let value = self.value(&p);
                return AscentOutcome { point: p, value, status: SolveStatus::Converged { iters: sweep, gap } };
            }
        }
        let gap = self.projected_gradient_norm(&p);
        let value = self.value(&p);
        AscentOutcome { point: p, value, status: SolveStatus::MaxIters { iters: cfg.max_sweeps, gap } }
    }

    /// Global maximum by enumerating all `3^k` faces of the box and solving the
    /// stationarity system on each face's free coordinates. Exact for any
    /// (not necessarily concave) quadratic; meant for `k <= 8`.
    pub fn global_max(&self) -> Result<(Vector, f64)> {
        let k = self.linear.len();
        if k > 10 {
            return Err(Error::contract(format!("face enumeration refused for k = {k}")));
        }
        let hess = self.quad - Matrix::identity(k, k) * self.curvature;
        let grad0 = self.linear - Vector::from_element(k, self.slope);
        let mut best: Option<(Vector, f64)> = None;
        let faces = 3usize.pow(k as u32);
        let mut state = vec![0u8; k];
        for face in 0..faces {
            let mut rem = face;
            for s in state.iter_mut() {
                *s = (rem % 3) as u8;
                rem /= 3;
            }
            let free: Vec<usize> = (0..k).filter(|&j| state[j] == 2).collect();
            let mut p = Vector::from_fn(k, |j, _| match state[j] {
                0 => self.lower[j],
                1 => self.upper[j],
                _ => 0.0,
            });
            if !free.is_empty() {
                let n = free.len();
                let h_ff = Matrix::from_fn(n, n, |a, b| hess[(free[a], free[b])]);
                let rhs = Vector::from_fn(n, |a, _| {
                    let j = free[a];
                    let mut s = grad0[j];
                    for i in 0..k {
                        if state[i] != 2 {
                            s += hess[(j, i)] * p[i];
                        }
                    }
                    -s
                });
                let Some(x) = LU::new(h_ff.clone()).solve(&rhs) else { continue };
                if (&h_ff * &x - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
                    continue;
                }
                let mut feasible = true;
                for (a, &j) in free.iter().enumerate() {
                    if x[a] < self.lower[j] - 1e-12 || x[a] > self.upper[j] + 1e-12 {
                        feasible = false;
                        break;
                    }
                    p[j] = x[a].clamp(self.lower[j], self.upper[j]);
                }
                if !feasible {
                    continue;
                }
            }
            let val = self.value(&p);
            if best.as_ref().map_or(true, |(_, b)| val > *b) {
                best = Some((p, val));
            }
        }
        best.ok_or_else(|| Error::Infeasible("no feasible face found".into()))
    }
}

fn box_bounds(reg: &Regularizer) -> Result<(&[f64], &[f64])> {
    match reg.domain() {
        OutputSet::Box { lower, upper } => Ok((lower.as_slice(), upper.as_slice())),
        other => Err(Error::contract(format!("expected a box output set, got {other:?}"))),
    }
}

/// Coordinate ascent for `max ⟨u, p⟩ + ½⟨p, U p⟩ − Ω(p)` over a box with a
/// separable quadratic `Ω` (Gini, squared ℓ2 or the indicator).
///
/// The coordinate update is `p_j ← clip((u_j + Σ_{i≠j} U_ji p_i + γ) / (2γ − U_jj), 0, 1)`
/// for Gini. `U` must be symmetric negative semi-definite.
pub fn coordinate_ascent_box_quadratic(
    u: &Vector,
    pairwise: &Matrix,
    reg: &Regularizer,
    cfg: &SolverConfig,
) -> Result<AscentOutcome> {
    cfg.validate()?;
    if !is_symmetric(pairwise) || !is_negative_semidefinite(pairwise, NSD_TOLERANCE)? {
        return Err(Error::contract("coordinate ascent needs a symmetric negative semi-definite U"));
    }
    if u.len() != reg.dim() || pairwise.nrows() != reg.dim() {
        return Err(Error::contract("coordinate ascent: dimension mismatch"));
    }
    let (curvature, slope) = reg
        .separable_quadratic()
        .ok_or_else(|| Error::Unsupported(format!("{:?} is not a separable quadratic", reg.kind())))?;
    let (lower, upper) = box_bounds(reg)?;
    let problem = BoxQuadratic { linear: u, quad: pairwise, curvature, slope, lower, upper };
    let start = reg.domain().project(&Vector::from_element(u.len(), 0.5));
    Ok(problem.coordinate_ascent(&start, cfg))
}

/// Grid maximizer of an arbitrary objective (brute-force oracle).
pub fn grid_argmax<F>(mut objective: F, candidates: &[Vector]) -> Result<(Vector, f64)>
where
    F: FnMut(&Vector) -> f64,
{
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in candidates.iter().enumerate() {
        let val = objective(p);
        if best.map_or(true, |(_, b)| val > b) {
            best = Some((i, val));
        }
    }
    let (i, val) = best.ok_or_else(|| Error::contract("empty candidate set"))?;
    Ok((candidates[i].clone(), val))
}

/// `Λ_C(v) = min_p C(v, p) − Λ(p)` over a finite candidate set.
pub fn c_transform<L, C>(mut lambda: L, mut cost: C, v: &Vector, candidates: &[Vector]) -> Result<f64>
where
    L: FnMut(&Vector) -> f64,
    C: FnMut(&Vector, &Vector) -> f64,
{
    if candidates.is_empty() {
        return Err(Error::contract("c_transform over an empty candidate set"));
    }
    Ok(candidates.iter().map(|p| cost(v, p) - lambda(p)).fold(f64::INFINITY, f64::min))
}

fn check_pair(energy: &Energy, reg: &Regularizer, v: &EnergyInput) -> Result<()> {
    energy.check_input(v)?;
    if energy.p_dim() != reg.dim() {
        return Err(Error::contract(format!(
            "energy output dimension {} differs from regularizer dimension {}",
            energy.p_dim(),
            reg.dim()
        )));
    }
    Ok(())
}

fn finish(
    energy: &Energy,
    reg: &Regularizer,
    v: &EnergyInput,
    argmax: Vector,
    status: SolveStatus,
    method: Method,
) -> Result<ConjugateResult> {
    let value = energy.value(v, &argmax)? - reg.value(&argmax);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("conjugate value {value} at the computed argmax")));
    }
    let envelope_grad = energy.grad_v(v, &argmax)?;
    Ok(ConjugateResult { value, argmax, envelope_grad, status, method })
}

/// `Ω^Φ(v)`, `p^Φ_Ω(v)` and the envelope gradient.
pub fn conjugate(energy: &Energy, reg: &Regularizer, v: &EnergyInput, cfg: &SolverConfig) -> Result<ConjugateResult> {
    check_pair(energy, reg, v)?;
    cfg.validate()?;

    if let Some(z) = energy.linear_coefficient(v)? {
        match reg.closed_form_map(&z) {
            Ok(p) => return finish(energy, reg, v, p, SolveStatus::ClosedForm, Method::ClosedForm),
            Err(Error::Unsupported(_)) => return conjugate_iterative(energy, reg, v, cfg),
            Err(e) => return Err(e),
        }
    }

    if let Some((linear, quad)) = energy.quadratic_parts(v)? {
        if let (RegularizerKind::SquaredL2 { gamma }, OutputSet::Reals { .. }) = (reg.kind(), reg.domain()) {
            let k = linear.len();
            let m = Matrix::identity(k, k) * gamma - &quad;
            let p = solve_spd(&m, &linear).map_err(|e| match e {
                Error::Singular { pivot, value } => {
                    Error::Infeasible(format!("γI − A is not positive definite (Cholesky pivot {pivot} = {value:e})"))
                }
                other => other,
            })?;
            return finish(energy, reg, v, p, SolveStatus::ClosedForm, Method::ClosedForm);
        }
        if let (Some((curvature, slope)), OutputSet::Box { lower, upper }) = (reg.separable_quadratic(), reg.domain()) {
            let problem = BoxQuadratic { linear: &linear, quad: &quad, curvature, slope, lower, upper };
            let start = reg.domain().project(&Vector::from_element(linear.len(), 0.5));
            let out = problem.coordinate_ascent(&start, cfg);
            let concave = max_eigenvalue(&quad)? <= curvature + NSD_TOLERANCE * (1.0 + quad.amax());
            let status = match out.status {
                SolveStatus::Converged { iters, gap } if !concave => SolveStatus::LocalOnly { iters, gap },
                s => s,
            };
            return finish(energy, reg, v, out.point, status, Method::CoordinateAscent);
        }
    }

    conjugate_iterative(energy, reg, v, cfg)
}

/// Same as [`conjugate`] but always solved by projected gradient ascent from
/// the projection of `½·1`.
pub fn conjugate_iterative(
    energy: &Energy,
    reg: &Regularizer,
    v: &EnergyInput,
    cfg: &SolverConfig,
) -> Result<ConjugateResult> {
    let start = Vector::from_element(reg.dim(), 0.5);
    conjugate_from(energy, reg, v, cfg, &start)
}

/// Projected gradient ascent on `Φ(v, ·) − Ω` from a given starting point.
pub fn conjugate_from(
    energy: &Energy,
    reg: &Regularizer,
    v: &EnergyInput,
    cfg: &SolverConfig,
    start: &Vector,
) -> Result<ConjugateResult> {
    check_pair(energy, reg, v)?;
    if matches!(reg.kind(), RegularizerKind::ShannonSimplex { .. }) && energy.p_structure() != PStructure::Linear {
        return Err(Error::Unsupported("simplex entropy is only solved in closed form (linear-in-p energies)".into()));
    }
    let set = reg.domain().shrink(reg.interior_margin());
    let out = projected_gradient_ascent(
        |p| Ok(energy.value(v, p)? - reg.value(p)),
        |p| Ok(energy.grad_p(v, p)? - reg.gradient(p)?),
        &set,
        start,
        cfg,
    )?;
    let status = match (energy.p_structure(), out.status) {
        (PStructure::Nonconcave, SolveStatus::Converged { iters, gap }) => SolveStatus::LocalOnly { iters, gap },
        (_, s) => s,
    };
    finish(energy, reg, v, out.point, status, Method::ProjectedGradient)
}

/// Random-restart diagnostics for nonconcave energies. The first entry is
/// always the deterministic start used by [`conjugate`].
pub fn conjugate_restarts(
    energy: &Energy,
    reg: &Regularizer,
    v: &EnergyInput,
    cfg: &SolverConfig,
    restarts: usize,
    seed: u64,
) -> Result<Vec<ConjugateResult>> {
    use rand::Rng as _;
    let mut rng = crate::numerics::seeded_rng(seed);
    let mut out = vec![conjugate_iterative(energy, reg, v, cfg)?];
    for _ in 0..restarts {
        let start = match reg.domain() {
            OutputSet::Box { lower, upper } => Vector::from_fn(reg.dim(), |j, _| rng.gen_range(lower[j]..=upper[j])),
            _ => Vector::from_fn(reg.dim(), |_, _| rng.gen_range(0.0..1.0)),
        };
        out.push(conjugate_from(energy, reg, v, cfg, &start)?);
    }
    Ok(out)
}

/// Exact global conjugate for quadratic energies with a separable quadratic
/// regularizer over a small box (face enumeration).
pub fn conjugate_exact(energy: &Energy, reg: &Regularizer, v: &EnergyInput) -> Result<ConjugateResult> {
    check_pair(energy, reg, v)?;
    let (linear, quad) = match energy.quadratic_parts(v)? {
        Some(parts) => parts,
        None => match energy.linear_coefficient(v)? {
            Some(z) => (z, Matrix::zeros(reg.dim(), reg.dim())),
            None => return Err(Error::Unsupported("exact conjugate needs a linear or quadratic energy".into())),
        },
    };
    let (curvature, slope) = reg
        .separable_quadratic()
        .ok_or_else(|| Error::Unsupported("exact conjugate needs a separable quadratic regularizer".into()))?;
    let (lower, upper) = box_bounds(reg)?;
    let problem = BoxQuadratic { linear: &linear, quad: &quad, curvature, slope, lower, upper };
    let (p, _) = problem.global_max()?;
    finish(energy, reg, v, p, SolveStatus::ClosedForm, Method::FaceEnumeration)
}

/// `∇Ω^Φ(v) = ∇₁Φ(v, p^Φ_Ω(v))`, evaluated at a previously computed argmax.
pub fn envelope_gradient(energy: &Energy, v: &EnergyInput, result: &ConjugateResult) -> Result<EnergyInput> {
    energy.grad_v(v, &result.argmax)
}
