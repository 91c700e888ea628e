//! Random problem instances per energy family, for benchmarks and
//! command-line checks.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::energies::{Energy, EnergyInput, PriorWeights};
use crate::error::Result;
use crate::numerics::{symmetrize, Matrix, Rng, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyFamily {
    Bilinear,
    LinearQuadratic,
    Pairwise,
    Rectifier,
    Maxout,
    LseNet,
    Spen,
}

impl EnergyFamily {
    pub const ALL: [EnergyFamily; 7] = [
        EnergyFamily::Bilinear,
        EnergyFamily::LinearQuadratic,
        EnergyFamily::Pairwise,
        EnergyFamily::Rectifier,
        EnergyFamily::Maxout,
        EnergyFamily::LseNet,
        EnergyFamily::Spen,
    ];

    /// Output dimension for a requested `k`; the scalar-output families ignore it.
    pub fn output_dim(self, k: usize) -> usize {
        match self {
            EnergyFamily::Maxout | EnergyFamily::LseNet => 1,
            _ => k,
        }
    }

    /// Random energy with outputs in `ℝ^{output_dim(k)}` and `d`-dimensional
    /// dense inputs where relevant. Concave in `p` for every family.
    pub fn energy(self, k: usize, d: usize, rng: &mut Rng) -> Result<Energy> {
        Ok(match self {
            EnergyFamily::Bilinear => Energy::bilinear(Matrix::from_fn(d, k, |_, _| rng.gen_range(-1.0..1.0))),
            EnergyFamily::LinearQuadratic => Energy::linear_quadratic(k),
            EnergyFamily::Pairwise => Energy::pairwise(k),
            EnergyFamily::Rectifier => Energy::rectifier(Matrix::from_fn(d, k, |_, _| rng.gen_range(0.0..1.0)))?,
            EnergyFamily::Maxout => Energy::maxout(d),
            EnergyFamily::LseNet => Energy::lse_net(d, 0.5)?,
            EnergyFamily::Spen => Energy::spen(k, k.max(2), true),
        })
    }

    /// Random input for `energy`, kept away from the kinks of relu and max.
    pub fn input(self, energy: &Energy, rng: &mut Rng) -> EnergyInput {
        let mut uniform = |n: usize, s: f64| Vector::from_fn(n, |_, _| rng.gen_range(-s..s));
        match energy {
            Energy::LinearQuadratic { dim } | Energy::Pairwise { dim } => {
                let b = Matrix::from_fn(*dim, *dim, |_, _| rng.gen_range(-0.8..0.8));
                let quad = symmetrize(&-(&b * b.transpose()));
                let lin = Vector::from_fn(*dim, |_, _| rng.gen_range(-2.0..2.0));
                if matches!(energy, Energy::Pairwise { .. }) {
                    EnergyInput::Pairwise { unary: lin, pairwise: quad }
                } else {
                    EnergyInput::LinearQuadratic { a: quad, b: lin }
                }
            }
            Energy::Spen { dim, hidden, .. } => {
                let unary = uniform(*dim, 2.0);
                let prior = PriorWeights {
                    w1: Matrix::from_fn(*hidden, *dim, |_, _| rng.gen_range(-1.0..1.0)),
                    b1: Vector::from_fn(*hidden, |_, _| rng.gen_range(-1.0..1.0)),
                    w2: Vector::from_fn(*hidden, |_, _| rng.gen_range(-1.0..1.0)),
                    b2: rng.gen_range(-1.0..1.0),
                };
                EnergyInput::Spen { unary, prior }
            }
            other => {
                let n = match other.zero_input() {
                    EnergyInput::Dense(z) => z.len(),
                    _ => unreachable!("remaining families take dense inputs"),
                };
                let v = uniform(n, 2.0).map(|x| if x.abs() < 0.05 { x + 0.2 } else { x });
                EnergyInput::Dense(v)
            }
        }
    }

    pub fn instance(self, k: usize, d: usize, rng: &mut Rng) -> Result<(Energy, EnergyInput)> {
        let energy = self.energy(k, d, rng)?;
        let v = self.input(&energy, rng);
        Ok((energy, v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{is_negative_semidefinite, seeded_rng};

    #[test]
    fn instances_are_well_formed() {
        let mut rng = seeded_rng(3);
        for family in EnergyFamily::ALL {
            for _ in 0..20 {
                let (energy, v) = family.instance(3, 4, &mut rng).unwrap();
                energy.check_input(&v).unwrap();
                assert_eq!(energy.p_dim(), family.output_dim(3));
                match &v {
                    EnergyInput::Pairwise { pairwise: m, .. } | EnergyInput::LinearQuadratic { a: m, .. } => {
                        assert!(is_negative_semidefinite(m, 1e-12).unwrap())
                    }
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn family_names_round_trip() {
        let json = serde_json::to_string(&EnergyFamily::LinearQuadratic).unwrap();
        assert_eq!(json, "\"linear_quadratic\"");
        assert_eq!(serde_json::from_str::<EnergyFamily>(&json).unwrap(), EnergyFamily::LinearQuadratic);
    }
}
