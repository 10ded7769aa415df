use serde::{Deserialize, Serialize};

use crate::data::{TestDefinition, TestKind};
use crate::error::{Error, Result};

/// Latent means used for a reference test assumed perfect: `Φ′(±5) ≈ 0.9998`.
pub const PERFECT_MEAN: f64 = 5.0;

/// The four model variants of the DVT case study, generalised to any number
/// of tests with the reference test first in the list given to
/// [`ModelSpec::variant`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Perfect reference, conditional independence.
    M1,
    /// Perfect reference, dependence among the other tests.
    M2,
    /// Imperfect reference, conditional independence.
    M3,
    /// Imperfect reference, dependence among all tests.
    M4,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(Variant::M1),
            "M2" => Ok(Variant::M2),
            "M3" => Ok(Variant::M3),
            "M4" => Ok(Variant::M4),
            _ => Err(Error::InvalidArgument(format!("unknown variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Index of the reference ("gold standard") test.
    pub reference: usize,
    pub perfect_reference: bool,
    /// Disjoint groups of tests whose within-class results are correlated.
    /// Tests outside every group are conditionally independent.
    pub dependence: Vec<Vec<usize>>,
    /// GHK node count.
    pub ghk_nodes: usize,
    pub ghk_seed: u64,
}

impl ModelSpec {
    pub fn variant(v: Variant, num_tests: usize) -> Self {
        let others: Vec<usize> = (1..num_tests).collect();
        let (perfect, dependence) = match v {
            Variant::M1 => (true, vec![]),
            Variant::M2 => (true, vec![others]),
            Variant::M3 => (false, vec![]),
            Variant::M4 => (false, vec![(0..num_tests).collect()]),
        };
        let dependence = dependence.into_iter().filter(|g| g.len() >= 2).collect();
        ModelSpec { reference: 0, perfect_reference: perfect, dependence, ghk_nodes: 256, ghk_seed: 0 }
    }

    pub fn conditionally_independent(&self) -> bool {
        self.dependence.is_empty()
    }

    pub fn validate(&self, tests: &[TestDefinition]) -> Result<()> {
        let t = tests.len();
        if self.reference >= t {
            return Err(Error::Config(format!("reference test {} out of range", self.reference + 1)));
        }
        if self.perfect_reference && tests[self.reference].kind != TestKind::Dichotomous {
            return Err(Error::Config("a perfect reference test must be dichotomous".into()));
        }
        if self.ghk_nodes == 0 {
            return Err(Error::Config("ghk_nodes must be positive".into()));
        }
        let mut seen = vec![false; t];
        for g in &self.dependence {
            if g.len() < 2 {
                return Err(Error::Config("a dependence group needs at least two tests".into()));
            }
            for &i in g {
                if i >= t {
                    return Err(Error::Config(format!("dependence group names test {} of {t}", i + 1)));
                }
                if seen[i] {
                    return Err(Error::Config(format!("test {} appears in two dependence groups", i + 1)));
                }
                if self.perfect_reference && i == self.reference {
                    return Err(Error::Config("a perfect reference test cannot be correlated".into()));
                }
                seen[i] = true;
            }
            if g.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config("dependence groups must list tests in increasing order".into()));
            }
        }
        Ok(())
    }
}
