//! Four-class synthetic dataset of jittered parametric solids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ImplicitShape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyClass {
    Sphere,
    /// Flat square box.
    Slab,
    Torus,
    /// Thin cylinder along z.
    Rod,
}

impl ToyClass {
    pub const ALL: [ToyClass; 4] = [ToyClass::Sphere, ToyClass::Slab, ToyClass::Torus, ToyClass::Rod];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ToyClass::Sphere => "sphere",
            ToyClass::Slab => "slab",
            ToyClass::Torus => "torus",
            ToyClass::Rod => "rod",
        }
    }

    /// The unjittered shape at the cube centre.
    pub fn prototype(self) -> ImplicitShape {
        self.build([0.5; 3], |v| v)
    }

    /// The class prototype with every dimension scaled by `1 + δ`, δ drawn
    /// uniformly from ±5% per dimension. The centre stays at the cube centre.
    pub fn shape(self, seed: u64) -> ImplicitShape {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7A3D_0000 ^ (self.index() as u64) << 40);
        self.build([0.5; 3], |v| v * (1.0 + rng.random_range(-0.05..0.05)))
    }

    fn build(self, c: [f64; 3], mut s: impl FnMut(f64) -> f64) -> ImplicitShape {
        let dims: Vec<f64> = match self {
            ToyClass::Sphere => vec![s(0.26)],
            ToyClass::Slab => vec![s(0.76), s(0.76), s(0.18)],
            ToyClass::Torus => vec![s(0.27), s(0.10)],
            ToyClass::Rod => vec![s(0.13), s(0.80)],
        };
        let built = match self {
            ToyClass::Sphere => ImplicitShape::sphere(c, dims[0]),
            ToyClass::Slab => ImplicitShape::cuboid(c, [dims[0], dims[1], dims[2]]),
            ToyClass::Torus => ImplicitShape::torus(c, dims[0], dims[1]),
            ToyClass::Rod => ImplicitShape::cylinder(c, dims[0], dims[1]),
        };
        built.expect("jittered prototypes stay inside the margin")
    }
}

impl std::fmt::Display for ToyClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ToyClass {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| crate::Error::Config(format!("unknown toy class {s:?}")))
    }
}
