//! Random instance generators shared by the integration tests.
#![allow(dead_code)]

use efy_core::energies::PriorWeights;
use efy_core::numerics::{seeded_rng, symmetrize};
use efy_core::{Energy, EnergyInput, Matrix, OutputSet, Regularizer, Rng, Vector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> Rng {
    seeded_rng(seed)
}

pub fn uniform(rng: &mut Rng, n: usize, s: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.gen_range(-s..s))
}

pub fn gaussian(rng: &mut Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// `−B Bᵀ` with `B` uniform in `[−scale, scale]`.
pub fn nsd(rng: &mut Rng, k: usize, scale: f64) -> Matrix {
    let b = Matrix::from_fn(k, k, |_, _| rng.gen_range(-scale..scale));
    symmetrize(&-(&b * b.transpose()))
}

/// Pushes entries off the kinks of relu and max.
pub fn off_kinks(mut v: Vector) -> Vector {
    for x in v.iter_mut() {
        if x.abs() < 0.05 {
            *x += 0.2;
        }
    }
    v
}

pub fn point_in(rng: &mut Rng, set: &OutputSet) -> Vector {
    match set {
        OutputSet::Box { lower, upper } => Vector::from_fn(lower.len(), |j, _| rng.gen_range(lower[j]..=upper[j])),
        OutputSet::Simplex { dim } => {
            let e = Vector::from_fn(*dim, |_, _| -rng.gen_range(1e-6f64..1.0).ln());
            let s = e.sum();
            e / s
        }
        OutputSet::Reals { dim } => gaussian(rng, *dim),
    }
}

/// A vertex of `[0, 1]^k`, chosen uniformly.
pub fn vertex(rng: &mut Rng, k: usize) -> Vector {
    Vector::from_fn(k, |_, _| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
}

pub fn prior(rng: &mut Rng, hidden: usize, k: usize) -> PriorWeights {
    PriorWeights {
        w1: Matrix::from_fn(hidden, k, |_, _| rng.gen_range(-1.0..1.0)),
        b1: uniform(rng, hidden, 1.0),
        w2: uniform(rng, hidden, 1.0),
        b2: rng.gen_range(-1.0..1.0),
    }
}

/// Energy families exercised by the suites.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Bilinear,
    LinearQuadratic,
    Pairwise,
    Rectifier,
    Maxout,
    LseNet,
    Spen,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Bilinear,
        Family::LinearQuadratic,
        Family::Pairwise,
        Family::Rectifier,
        Family::Maxout,
        Family::LseNet,
        Family::Spen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Bilinear => "bilinear",
            Family::LinearQuadratic => "linear_quadratic",
            Family::Pairwise => "pairwise",
            Family::Rectifier => "rectifier",
            Family::Maxout => "maxout",
            Family::LseNet => "lse_net",
            Family::Spen => "spen",
        }
    }

    /// Output dimension used for this family.
    pub fn k(self) -> usize {
        match self {
            Family::Maxout | Family::LseNet => 1,
            _ => 3,
        }
    }

    /// Regularizers paired with the family.
    pub fn regularizers(self) -> Vec<Regularizer> {
        let k = self.k();
        let mut out = vec![Regularizer::gini_binary(0.7, k).unwrap(), Regularizer::shannon_binary(0.5, k).unwrap()];
        match self {
            Family::Bilinear => {
                out.push(Regularizer::squared_l2(1.3, k).unwrap());
                out.push(Regularizer::shannon_simplex(0.8, k).unwrap());
            }
            Family::LinearQuadratic => out.push(Regularizer::squared_l2(1.3, k).unwrap()),
            _ => {}
        }
        out
    }
}

pub struct Instance {
    pub energy: Energy,
    pub v: EnergyInput,
}

/// Random energy and input of the family, concave in `p`.
pub fn instance(rng: &mut Rng, family: Family) -> Instance {
    let k = family.k();
    let d = 4;
    match family {
        Family::Bilinear => Instance {
            energy: Energy::bilinear(Matrix::from_fn(d, k, |_, _| rng.gen_range(-1.0..1.0))),
            v: EnergyInput::Dense(uniform(rng, d, 2.0)),
        },
        Family::LinearQuadratic => Instance {
            energy: Energy::linear_quadratic(k),
            v: EnergyInput::LinearQuadratic { a: nsd(rng, k, 0.8), b: uniform(rng, k, 2.0) },
        },
        Family::Pairwise => Instance {
            energy: Energy::pairwise(k),
            v: EnergyInput::Pairwise { unary: uniform(rng, k, 2.0), pairwise: nsd(rng, k, 0.8) },
        },
        Family::Rectifier => Instance {
            energy: Energy::rectifier(Matrix::from_fn(d, k, |_, _| rng.gen_range(0.0..1.0))).unwrap(),
            v: EnergyInput::Dense(off_kinks(uniform(rng, d, 2.0))),
        },
        Family::Maxout => {
            Instance { energy: Energy::maxout(d), v: EnergyInput::Dense(off_kinks(uniform(rng, d, 2.0))) }
        }
        Family::LseNet => {
            Instance { energy: Energy::lse_net(d, 0.5).unwrap(), v: EnergyInput::Dense(uniform(rng, d, 2.0)) }
        }
        Family::Spen => {
            let hidden = 4;
            Instance {
                energy: Energy::spen(k, hidden, true),
                v: EnergyInput::Spen { unary: uniform(rng, k, 2.0), prior: prior(rng, hidden, k) },
            }
        }
    }
}
