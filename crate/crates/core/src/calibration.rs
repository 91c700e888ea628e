//! Calibrated decoding for affinely decomposable target losses, accuracy, and
//! a numerical check of the surrogate-to-target calibration inequality.

use serde::{Deserialize, Serialize};

use crate::conjugate::{conjugate, SolverConfig};
use crate::energies::{Energy, EnergyInput};
use crate::error::{Error, Result};
use crate::losses::gfy_loss;
use crate::numerics::{Matrix, Vector};
use crate::regularizers::{Regularizer, RegularizerKind};

/// Largest label count for which `{0,1}^k` is enumerated.
pub const MAX_ENUMERATED_LABELS: usize = 16;

/// `L(ŷ, y) = ⟨ŷ, V y + b⟩ + ⟨c, y⟩ + c₀` with the identity label embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineLossDecomposition {
    pub v: Matrix,
    pub b: Vector,
    pub c: Vector,
    pub c0: f64,
}

/// Normalized Hamming loss: `V = −(2/k) I`, `b = (1/k) 1`, `c(y) = (1/k) Σ y_j`.
pub fn hamming_decomposition(k: usize) -> Result<AffineLossDecomposition> {
    if k == 0 {
        return Err(Error::contract("Hamming decomposition needs k ≥ 1"));
    }
    let s = 1.0 / k as f64;
    Ok(AffineLossDecomposition {
        v: Matrix::identity(k, k) * (-2.0 * s),
        b: Vector::from_element(k, s),
        c: Vector::from_element(k, s),
        c0: 0.0,
    })
}

/// Normalized Hamming distance.
pub fn hamming_loss(y_hat: &Vector, y: &Vector) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    y_hat.iter().zip(y.iter()).filter(|(a, b)| a != b).count() as f64 / y.len() as f64
}

/// All points of `{0,1}^k`, in binary counting order.
pub fn enumerate_labels(k: usize) -> Result<Vec<Vector>> {
    if k > MAX_ENUMERATED_LABELS {
        return Err(Error::contract(format!("refusing to enumerate 2^{k} label vectors")));
    }
    Ok((0..1usize << k).map(|m| Vector::from_fn(k, |j, _| ((m >> j) & 1) as f64)).collect())
}

impl AffineLossDecomposition {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn loss(&self, y_hat: &Vector, y: &Vector) -> f64 {
        y_hat.dot(&(&self.v * y + &self.b)) + self.c.dot(y) + self.c0
    }

    /// `argmin_{ŷ ∈ {0,1}^k} ⟨ŷ, V p + b⟩`: coordinate `j` is on iff its
    /// score is negative, so ties decode to 0.
    pub fn decode(&self, p: &Vector) -> Vector {
        let score = &self.v * p + &self.b;
        score.map(|s| if s < 0.0 { 1.0 } else { 0.0 })
    }

    /// `σ = sup_y ‖Vᵀ y‖₂` by enumeration.
    pub fn sigma(&self) -> Result<f64> {
        let vt = self.v.transpose();
        Ok(enumerate_labels(self.dim())?.iter().map(|y| (&vt * y).norm()).fold(0.0, f64::max))
    }
}

/// `σ` of the Hamming decomposition in closed form, `2/√k`.
pub fn hamming_sigma(k: usize) -> f64 {
    2.0 / (k as f64).sqrt()
}

/// Mean per-label agreement between two `n × k` binary matrices.
pub fn accuracy(predictions: &Matrix, labels: &Matrix) -> Result<f64> {
    if predictions.shape() != labels.shape() {
        return Err(Error::contract("prediction and label matrices differ in shape"));
    }
    if labels.is_empty() {
        return Err(Error::contract("accuracy of an empty set"));
    }
    let agree = predictions.iter().zip(labels.iter()).filter(|(a, b)| a == b).count();
    Ok(agree as f64 / labels.len() as f64)
}

/// Finite distribution over label vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelDistribution {
    pub outcomes: Vec<(Vector, f64)>,
}

impl LabelDistribution {
    pub fn new(outcomes: Vec<(Vector, f64)>) -> Result<Self> {
        let total: f64 = outcomes.iter().map(|o| o.1).sum();
        if outcomes.is_empty() || outcomes.iter().any(|o| !(o.1 >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::contract("label distribution must be nonnegative and sum to one"));
        }
        Ok(LabelDistribution { outcomes })
    }

    pub fn point_mass(y: Vector) -> Self {
        LabelDistribution { outcomes: vec![(y, 1.0)] }
    }

    /// Independent Bernoulli labels with the given means.
    pub fn product_bernoulli(means: &[f64]) -> Result<Self> {
        if means.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::contract("Bernoulli means must lie in [0, 1]"));
        }
        let outcomes = enumerate_labels(means.len())?
            .into_iter()
            .map(|y| {
                let w = y.iter().zip(means).map(|(&t, &m)| if t == 1.0 { m } else { 1.0 - m }).product();
                (y, w)
            })
            .collect();
        Ok(LabelDistribution { outcomes })
    }

    /// Arbitrary distribution over `{0,1}^k` from unnormalized weights.
    pub fn from_weights(k: usize, weights: &[f64]) -> Result<Self> {
        let labels = enumerate_labels(k)?;
        if weights.len() != labels.len() {
            return Err(Error::contract("one weight per label vector is required"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|&w| w < 0.0) {
            return Err(Error::contract("weights must be nonnegative with a positive sum"));
        }
        LabelDistribution::new(labels.into_iter().zip(weights.iter().map(|w| w / total)).collect())
    }

    pub fn mean(&self) -> Vector {
        let k = self.outcomes[0].0.len();
        self.outcomes.iter().fold(Vector::zeros(k), |acc, (y, w)| acc + y * *w)
    }
}

/// Pointwise target risk `E_q L(ŷ, Y)`.
pub fn target_risk(decomp: &AffineLossDecomposition, y_hat: &Vector, q: &LabelDistribution) -> f64 {
    q.outcomes.iter().map(|(y, w)| w * decomp.loss(y_hat, y)).sum()
}

/// `ℓ(ŷ, q) − min_{y'} ℓ(y', q)`.
pub fn target_excess(decomp: &AffineLossDecomposition, y_hat: &Vector, q: &LabelDistribution) -> Result<f64> {
    let best = enumerate_labels(decomp.dim())?.iter().map(|y| target_risk(decomp, y, q)).fold(f64::INFINITY, f64::min);
    Ok(target_risk(decomp, y_hat, q) - best)
}

/// Pointwise surrogate risk `E_q L^Φ_Ω(v, Y)` and its gradient in `v`.
pub fn surrogate_risk(
    energy: &Energy,
    reg: &Regularizer,
    v: &EnergyInput,
    q: &LabelDistribution,
    cfg: &SolverConfig,
) -> Result<(f64, EnergyInput)> {
    let mut value = 0.0;
    let mut grad = v.zeros_like();
    for (y, w) in &q.outcomes {
        if *w == 0.0 {
            continue;
        }
        let l = gfy_loss(energy, reg, v, y, cfg)?;
        value += w * l.value;
        grad = grad.add_scaled(*w, &l.grad_v);
    }
    Ok((value, grad))
}

fn require_linear_in_v(energy: &Energy) -> Result<()> {
    match energy {
        Energy::Bilinear { .. } | Energy::Pairwise { .. } | Energy::LinearQuadratic { .. } => Ok(()),
        other => Err(Error::Unsupported(format!("calibration needs an energy of the form ⟨v, φ(p)⟩, got {other:?}"))),
    }
}

/// Points at which `ℓ(·, q)` is known or likely to be minimal.
fn analytic_minimizers(energy: &Energy, reg: &Regularizer, q: &LabelDistribution) -> Vec<EnergyInput> {
    let k = reg.dim();
    let mut out = Vec::new();
    match energy {
        Energy::Bilinear { coupling } if coupling.is_square() => {
            // p_Ω(Uᵀv) = μ(q) whenever μ(q) is interior.
            if let Ok(g) = reg.gradient(&q.mean()) {
                if let Some(v) = coupling.transpose().lu().solve(&g) {
                    out.push(EnergyInput::Dense(v));
                }
            }
        }
        Energy::Pairwise { .. } | Energy::LinearQuadratic { .. } => {
            // Ω(p) = ⟨u₀, p⟩ + ½⟨p, U₀ p⟩ makes Φ(v₀, ·) − Ω vanish identically.
            let (u0, u0_quad) = match reg.kind() {
                RegularizerKind::GiniBinary { gamma } => {
                    (Vector::from_element(k, -gamma), Matrix::identity(k, k) * (2.0 * gamma))
                }
                RegularizerKind::SquaredL2 { gamma } => (Vector::zeros(k), Matrix::identity(k, k) * gamma),
                _ => return out,
            };
            out.push(match energy {
                Energy::Pairwise { .. } => EnergyInput::Pairwise { unary: u0, pairwise: u0_quad },
                _ => EnergyInput::LinearQuadratic { a: u0_quad, b: u0 },
            });
        }
        _ => {}
    }
    out
}

/// `min_v ℓ(v, q)`: the best analytic or supplied start, refined by gradient
/// descent with backtracking (the risk is convex in `v` for these energies).
pub fn bayes_surrogate_risk(
    energy: &Energy,
    reg: &Regularizer,
    q: &LabelDistribution,
    starts: &[EnergyInput],
    cfg: &SolverConfig,
) -> Result<f64> {
    require_linear_in_v(energy)?;
    let mut candidates = analytic_minimizers(energy, reg, q);
    candidates.extend(starts.iter().cloned());
    if candidates.is_empty() {
        candidates.push(energy.zero_input());
    }
    let mut best: Option<(f64, EnergyInput)> = None;
    for v in candidates {
        let (f, _) = surrogate_risk(energy, reg, &v, q, cfg)?;
        if best.as_ref().map_or(true, |(b, _)| f < *b) {
            best = Some((f, v));
        }
    }
    let (mut f, mut v) = best.expect("at least one candidate");
    let mut step: f64 = 1.0;
    for _ in 0..500 {
        let (_, g) = surrogate_risk(energy, reg, &v, q, cfg)?;
        let gn2 = g.norm().powi(2);
        if gn2 <= 1e-24 {
            break;
        }
        let mut t = (2.0 * step).min(1e3);
        let mut moved = false;
        for _ in 0..60 {
            let cand = v.add_scaled(-t, &g);
            let (fc, _) = surrogate_risk(energy, reg, &cand, q, cfg)?;
            if fc <= f - 0.5 * t * gn2 {
                v = cand;
                f = fc;
                step = t;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(f)
}

/// Largest observed `‖∇ℓ(v) − ∇ℓ(v')‖ / ‖v − v'‖` over consecutive samples
/// and small random perturbations of each sample.
pub fn estimate_smoothness(
    energy: &Energy,
    reg: &Regularizer,
    samples: &[EnergyInput],
    cfg: &SolverConfig,
    seed: u64,
) -> Result<f64> {
    use rand::Rng as _;
    let mut rng = crate::numerics::seeded_rng(seed);
    let grad = |v: &EnergyInput| -> Result<Vec<f64>> { Ok(conjugate(energy, reg, v, cfg)?.envelope_grad.to_flat()) };
    let ratio = |a: &EnergyInput, b: &EnergyInput, ga: &[f64], gb: &[f64]| -> f64 {
        let dv = a.add_scaled(-1.0, b).norm();
        if dv == 0.0 {
            return 0.0;
        }
        let dg = ga.iter().zip(gb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        dg / dv
    };
    let mut best: f64 = 0.0;
    let grads: Vec<Vec<f64>> = samples.iter().map(grad).collect::<Result<_>>()?;
    for i in 1..samples.len() {
        best = best.max(ratio(&samples[i], &samples[i - 1], &grads[i], &grads[i - 1]));
    }
    for (v, g) in samples.iter().zip(&grads) {
        let flat: Vec<f64> = v.to_flat().iter().map(|x| x + 1e-3 * rng.gen_range(-1.0..1.0)).collect();
        let w = v.with_flat(&flat);
        best = best.max(ratio(&w, v, &grad(&w)?, g));
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothnessSource {
    Supplied,
    /// `1/μ` for a bilinear energy and a `μ`-strongly convex regularizer.
    Analytic,
    /// Sampled gradient-difference ratios, doubled.
    Estimated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub v: Vec<f64>,
    pub target_excess: f64,
    pub surrogate_excess: f64,
    pub xi: f64,
}

impl CalibrationRow {
    pub fn holds(&self, slack: f64) -> bool {
        self.xi <= self.surrogate_excess + slack
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub rows: Vec<CalibrationRow>,
    pub sigma: f64,
    pub smoothness: f64,
    pub smoothness_source: SmoothnessSource,
    pub bayes_surrogate_risk: f64,
    pub violations: usize,
    pub slack: f64,
}

impl CalibrationReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Slack allowed in `ξ(δℓ) ≤ δℓ^Φ_Ω`.
pub const CALIBRATION_SLACK: f64 = 1e-6;

/// Evaluates `ξ(δℓ(d(v), q)) ≤ δℓ^Φ_Ω(v, q)` at each sample, with
/// `ξ(ε) = ε² / (8σ²M)` and decoder `d = decode ∘ p^Φ_Ω`.
pub fn calibration_check(
    energy: &Energy,
    reg: &Regularizer,
    decomp: &AffineLossDecomposition,
    q: &LabelDistribution,
    v_samples: &[EnergyInput],
    smoothness: Option<f64>,
    cfg: &SolverConfig,
) -> Result<CalibrationReport> {
    require_linear_in_v(energy)?;
    if decomp.dim() != reg.dim() {
        return Err(Error::contract("decomposition and regularizer dimensions differ"));
    }
    if v_samples.is_empty() {
        return Err(Error::contract("calibration check needs at least one sample"));
    }
    let sigma = decomp.sigma()?;
    let (m, source) = match smoothness {
        Some(m) if m > 0.0 => (m, SmoothnessSource::Supplied),
        Some(_) => return Err(Error::contract("smoothness constant must be positive")),
        None => match energy {
            Energy::Bilinear { coupling } if reg.strong_convexity() > 0.0 => {
                let n = coupling.clone().singular_values().max();
                (n * n / reg.strong_convexity(), SmoothnessSource::Analytic)
            }
            _ => (2.0 * estimate_smoothness(energy, reg, v_samples, cfg, 0)?, SmoothnessSource::Estimated),
        },
    };
    let bayes = bayes_surrogate_risk(energy, reg, q, &[], cfg)?;
    let mut rows = Vec::with_capacity(v_samples.len());
    let mut violations = 0;
    for v in v_samples {
        let p = conjugate(energy, reg, v, cfg)?.argmax;
        let target = target_excess(decomp, &decomp.decode(&p), q)?;
        let (risk, _) = surrogate_risk(energy, reg, v, q, cfg)?;
        let row = CalibrationRow {
            v: v.to_flat(),
            target_excess: target,
            surrogate_excess: risk - bayes,
            xi: target * target / (8.0 * sigma * sigma * m),
        };
        if !row.holds(CALIBRATION_SLACK) {
            violations += 1;
        }
        rows.push(row);
    }
    Ok(CalibrationReport {
        rows,
        sigma,
        smoothness: m,
        smoothness_source: source,
        bayes_surrogate_risk: bayes,
        violations,
        slack: CALIBRATION_SLACK,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{neg_gram, seeded_rng};
    use rand::Rng as _;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    #[test]
    fn decode_examples() {
        let h = hamming_decomposition(2).unwrap();
        assert_eq!(h.decode(&v(&[0.7, 0.2])), v(&[1.0, 0.0]));
        assert_eq!(h.decode(&v(&[0.5, 0.5])), v(&[0.0, 0.0]));
    }

    #[test]
    fn decode_matches_enumeration() {
        let mut rng = seeded_rng(1);
        let h = hamming_decomposition(2).unwrap();
        let labels = enumerate_labels(2).unwrap();
        for _ in 0..1000 {
            let p = v(&[rng.gen(), rng.gen()]);
            let score = |y: &Vector| y.dot(&(&h.v * &p + &h.b));
            let best = labels.iter().map(score).fold(f64::INFINITY, f64::min);
            assert!(score(&h.decode(&p)) <= best + 1e-15);
            let threshold = p.map(|x| if x > 0.5 { 1.0 } else { 0.0 });
            assert_eq!(h.decode(&p), threshold);
        }
    }

    #[test]
    fn hamming_examples() {
        let h = hamming_decomposition(2).unwrap();
        assert_eq!(h.loss(&v(&[1.0, 0.0]), &v(&[0.0, 0.0])), 0.5);
        assert_eq!(h.loss(&v(&[1.0, 1.0]), &v(&[1.0, 1.0])), 0.0);
        let labels = enumerate_labels(2).unwrap();
        for a in &labels {
            for b in &labels {
                assert!((h.loss(a, b) - hamming_loss(a, b)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn hamming_reproduces_for_k_up_to_three() {
        for k in 1..=3 {
            let h = hamming_decomposition(k).unwrap();
            let labels = enumerate_labels(k).unwrap();
            for a in &labels {
                for b in &labels {
                    assert!((h.loss(a, b) - hamming_loss(a, b)).abs() < 1e-15);
                }
            }
            assert!((h.sigma().unwrap() - hamming_sigma(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn accuracy_examples() {
        let y = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(accuracy(&y, &y).unwrap(), 1.0);
        let one = Matrix::from_element(1, 1, 1.0);
        assert_eq!(accuracy(&one, &Matrix::zeros(1, 1)).unwrap(), 0.0);
    }

    #[test]
    fn random_baseline_accuracy() {
        let mut rng = seeded_rng(2);
        let labels = Matrix::from_fn(1000, 1, |_, _| if rng.gen::<bool>() { 1.0 } else { 0.0 });
        let preds = Matrix::from_fn(1000, 1, |_, _| if rng.gen::<bool>() { 1.0 } else { 0.0 });
        assert!((accuracy(&preds, &labels).unwrap() - 0.5).abs() <= 0.05);
    }

    #[test]
    fn point_mass_at_the_minimizer() {
        let reg = Regularizer::gini_binary(1.0, 2).unwrap();
        let e = Energy::identity(2);
        let h = hamming_decomposition(2).unwrap();
        let q = LabelDistribution::point_mass(v(&[1.0, 0.0]));
        // p_Ω(v) = y needs v outside the clipping thresholds.
        let vstar = EnergyInput::Dense(v(&[1.0, -1.0]));
        let cfg = SolverConfig::default();
        let report = calibration_check(&e, &reg, &h, &q, &[vstar], None, &cfg).unwrap();
        assert_eq!(report.rows[0].target_excess, 0.0);
        assert!(report.rows[0].surrogate_excess.abs() < 1e-12);
    }

    #[test]
    fn one_label_grid() {
        let gamma = 1.0;
        let reg = Regularizer::gini_binary(gamma, 1).unwrap();
        let e = Energy::identity(1);
        let h = hamming_decomposition(1).unwrap();
        let q = LabelDistribution::product_bernoulli(&[0.3]).unwrap();
        let grid: Vec<EnergyInput> = (0..=600).map(|i| EnergyInput::Dense(v(&[-3.0 + 0.01 * i as f64]))).collect();
        let report = calibration_check(&e, &reg, &h, &q, &grid, None, &SolverConfig::default()).unwrap();
        assert_eq!(report.smoothness_source, SmoothnessSource::Analytic);
        assert!((report.smoothness - 1.0 / (2.0 * gamma)).abs() < 1e-12);
        assert!(report.passed());
        assert!(report.bayes_surrogate_risk >= 0.0);
        // Past the decision threshold the target excess is 0.7 − 0.3.
        let last = report.rows.last().unwrap();
        assert!((last.target_excess - 0.4).abs() < 1e-12);
    }

    #[test]
    fn pairwise_bayes_risk_is_zero_for_gini() {
        let reg = Regularizer::gini_binary(0.5, 2).unwrap();
        let q = LabelDistribution::from_weights(2, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let r = bayes_surrogate_risk(&Energy::pairwise(2), &reg, &q, &[], &SolverConfig::default()).unwrap();
        assert!(r.abs() < 1e-12);
    }

    #[test]
    fn pairwise_samples_satisfy_the_bound() {
        let mut rng = seeded_rng(4);
        let reg = Regularizer::gini_binary(1.0, 2).unwrap();
        let h = hamming_decomposition(2).unwrap();
        let q = LabelDistribution::from_weights(2, &[0.5, 0.1, 0.3, 0.1]).unwrap();
        let samples: Vec<EnergyInput> = (0..100)
            .map(|_| EnergyInput::Pairwise {
                unary: Vector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0)),
                pairwise: neg_gram(&Vector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0))),
            })
            .collect();
        let report =
            calibration_check(&Energy::pairwise(2), &reg, &h, &q, &samples, None, &SolverConfig::default()).unwrap();
        assert_eq!(report.smoothness_source, SmoothnessSource::Estimated);
        assert!(report.passed());
    }

    #[test]
    fn nonlinear_energy_is_unsupported() {
        let reg = Regularizer::gini_binary(1.0, 1).unwrap();
        let h = hamming_decomposition(1).unwrap();
        let q = LabelDistribution::point_mass(v(&[1.0]));
        let e = Energy::spen(1, 2, true);
        let err = calibration_check(&e, &reg, &h, &q, &[e.zero_input()], None, &SolverConfig::default());
        assert!(matches!(err, Err(Error::Unsupported(_))));
    }
}
