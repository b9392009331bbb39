//! Random and deterministic test designs.

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TestDesign;

/// Density used by [`bernoulli_design`] when none is given; each test is
/// then positive with probability close to 1/2.
pub const DEFAULT_BERNOULLI_NU: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    /// Near-constant tests-per-item.
    #[serde(alias = "near_constant")]
    Ncc,
    Bernoulli,
    Individual,
    File,
}

impl DesignKind {
    pub fn name(self) -> &'static str {
        match self {
            DesignKind::Ncc => "ncc",
            DesignKind::Bernoulli => "bernoulli",
            DesignKind::Individual => "individual",
            DesignKind::File => "file",
        }
    }
}

impl std::str::FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ncc" | "near_constant" => Ok(DesignKind::Ncc),
            "bernoulli" => Ok(DesignKind::Bernoulli),
            "individual" => Ok(DesignKind::Individual),
            "file" => Ok(DesignKind::File),
            other => Err(Error::param(format!("unknown design kind `{other}`"))),
        }
    }
}

/// Tests-per-item `L = max(1, floor(T ln 2 / k))` of the near-constant design.
pub fn tests_per_item(num_tests: usize, k: f64) -> usize {
    ((num_tests as f64 * std::f64::consts::LN_2 / k).floor() as usize).max(1)
}

/// Each item independently joins `L` tests drawn uniformly with replacement;
/// repeated draws collapse into a single incidence.
pub fn near_constant_design<R: Rng + ?Sized>(n: usize, num_tests: usize, k: f64, rng: &mut R) -> Result<TestDesign> {
    if num_tests < 1 {
        return Err(Error::param("near-constant design needs T >= 1"));
    }
    if !(k >= 1.0) {
        return Err(Error::param(format!("near-constant design needs k >= 1, got {k}")));
    }
    let l = tests_per_item(num_tests, k);
    let item_tests = (0..n)
        .map(|_| (0..l).map(|_| rng.random_range(0..num_tests)).collect())
        .collect();
    TestDesign::from_item_tests(n, num_tests, item_tests)
}

/// Every incidence independently present with probability `nu / k`.
pub fn bernoulli_design<R: Rng + ?Sized>(n: usize, num_tests: usize, k: f64, nu: f64, rng: &mut R) -> Result<TestDesign> {
    let rho = nu / k;
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::param(format!("Bernoulli inclusion probability nu/k = {rho} must lie in (0, 1]")));
    }
    let cells = (num_tests as u64) * (n as u64);
    let mut tests = vec![Vec::new(); num_tests];
    if rho == 1.0 {
        for test in tests.iter_mut() {
            test.extend(0..n);
        }
    } else {
        // Skip over runs of absent cells; the gaps of an i.i.d. Bernoulli
        // sequence are geometric.
        let gap = Geometric::new(rho).map_err(|e| Error::param(e.to_string()))?;
        let mut cell = gap.sample(rng);
        while cell < cells {
            tests[(cell / n as u64) as usize].push((cell % n as u64) as usize);
            cell = cell.saturating_add(1).saturating_add(gap.sample(rng));
        }
    }
    TestDesign::new(n, tests)
}

/// One singleton test per item.
pub fn individual_design(n: usize) -> Result<TestDesign> {
    if n < 1 {
        return Err(Error::param("individual design needs n >= 1"));
    }
    TestDesign::new(n, (0..n).map(|i| vec![i]).collect())
}
