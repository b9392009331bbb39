//! Domain types, outcome generation and defective-set samplers.
//!
//! Item indices are 0-based everywhere: the items are `0..n` and tests are
//! `0..T`. The matrix file format uses the same convention.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `T x n` 0/1 incidence structure stored as both a list of tests (each a
/// sorted item list) and a list of items (each a sorted test list). The two
/// views together are the bipartite item/test graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestDesign {
    n: usize,
    tests: Vec<Vec<usize>>,
    item_tests: Vec<Vec<usize>>,
}

impl TestDesign {
    /// Builds a design from per-test item lists. Items within a test are
    /// sorted and duplicates collapse to a single incidence.
    pub fn new(n: usize, mut tests: Vec<Vec<usize>>) -> Result<Self> {
        for (t, test) in tests.iter_mut().enumerate() {
            test.sort_unstable();
            test.dedup();
            if let Some(&bad) = test.last().filter(|&&i| i >= n) {
                return Err(Error::input(format!("test {t} contains item {bad} but n = {n}")));
            }
        }
        let mut item_tests = vec![Vec::new(); n];
        for (t, test) in tests.iter().enumerate() {
            for &i in test {
                item_tests[i].push(t);
            }
        }
        Ok(Self { n, tests, item_tests })
    }

    /// Builds a design from per-item test lists (the column view).
    pub fn from_item_tests(n: usize, num_tests: usize, mut item_tests: Vec<Vec<usize>>) -> Result<Self> {
        if item_tests.len() != n {
            return Err(Error::input(format!("{} item rows given for n = {n}", item_tests.len())));
        }
        for (i, row) in item_tests.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if let Some(&bad) = row.last().filter(|&&t| t >= num_tests) {
                return Err(Error::input(format!("item {i} is in test {bad} but T = {num_tests}")));
            }
        }
        let mut tests = vec![Vec::new(); num_tests];
        for (i, row) in item_tests.iter().enumerate() {
            for &t in row {
                tests[t].push(i);
            }
        }
        Ok(Self { n, tests, item_tests })
    }

    /// `n` items and no tests.
    pub fn empty(n: usize) -> Self {
        Self { n, tests: Vec::new(), item_tests: vec![Vec::new(); n] }
    }

    pub fn num_items(&self) -> usize {
        self.n
    }

    pub fn num_tests(&self) -> usize {
        self.tests.len()
    }

    pub fn tests(&self) -> &[Vec<usize>] {
        &self.tests
    }

    pub fn test(&self, t: usize) -> &[usize] {
        &self.tests[t]
    }

    pub fn item_tests(&self, i: usize) -> &[usize] {
        &self.item_tests[i]
    }

    pub fn test_size(&self, t: usize) -> usize {
        self.tests[t].len()
    }

    /// Total number of ones in the incidence matrix.
    pub fn incidence_count(&self) -> usize {
        self.tests.iter().map(Vec::len).sum()
    }

    pub fn contains(&self, t: usize, i: usize) -> bool {
        self.tests[t].binary_search(&i).is_ok()
    }

    pub(crate) fn check_item(&self, i: usize) -> Result<()> {
        if i >= self.n {
            return Err(Error::input(format!("item {i} out of range for n = {}", self.n)));
        }
        Ok(())
    }

    /// Removes every incidence of the given items while keeping all indices,
    /// so the stripped items become untested.
    pub fn without_items(&self, items: &[usize]) -> TestDesign {
        let mut drop = vec![false; self.n];
        for &i in items {
            if i < self.n {
                drop[i] = true;
            }
        }
        let tests = self
            .tests
            .iter()
            .map(|test| test.iter().copied().filter(|&i| !drop[i]).collect())
            .collect();
        TestDesign::new(self.n, tests).expect("subset of a valid design")
    }

    /// Checks index ranges, sortedness and dual consistency.
    pub fn validate(&self) -> Result<()> {
        if self.item_tests.len() != self.n {
            return Err(Error::InvariantViolation("item view length differs from n".into()));
        }
        for (t, test) in self.tests.iter().enumerate() {
            if test.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvariantViolation(format!("test {t} is not strictly ascending")));
            }
            for &i in test {
                if i >= self.n || self.item_tests[i].binary_search(&t).is_err() {
                    return Err(Error::InvariantViolation(format!("incidence ({t}, {i}) missing from item view")));
                }
            }
        }
        let dual: usize = self.item_tests.iter().map(Vec::len).sum();
        if dual != self.incidence_count() {
            return Err(Error::InvariantViolation("views disagree on incidence count".into()));
        }
        Ok(())
    }

    /// Serialises to the matrix text format: a `T n` header followed by one
    /// line of ascending, space-separated item indices per test.
    pub fn to_matrix_string(&self) -> String {
        let mut out = String::with_capacity(16 + 6 * self.incidence_count());
        writeln!(out, "{} {}", self.num_tests(), self.n).unwrap();
        for test in &self.tests {
            let mut first = true;
            for &i in test {
                if !first {
                    out.push(' ');
                }
                first = false;
                write!(out, "{i}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Parses the matrix text format. Lines starting with `#` are skipped
    /// everywhere; after the header every other line is one test, and an
    /// empty line is an empty test.
    pub fn parse_matrix(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#'));
        let (header_line, header) = loop {
            match lines.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some(found) => break found,
                None => return Err(Error::Parse { line: 1, msg: "missing `T n` header".into() }),
            }
        };
        let fields: Vec<&str> = header.split_whitespace().collect();
        let parse_usize = |s: &str, line: usize| {
            s.parse::<usize>()
                .map_err(|e| Error::Parse { line: line + 1, msg: format!("`{s}`: {e}") })
        };
        if fields.len() != 2 {
            return Err(Error::Parse { line: header_line + 1, msg: "header must be `T n`".into() });
        }
        let num_tests = parse_usize(fields[0], header_line)?;
        let n = parse_usize(fields[1], header_line)?;

        let mut tests = Vec::with_capacity(num_tests);
        for t in 0..num_tests {
            let Some((line, body)) = lines.next() else {
                return Err(Error::Parse {
                    line: text.lines().count() + 1,
                    msg: format!("expected {num_tests} test lines, found {t}"),
                });
            };
            let mut test = Vec::new();
            for tok in body.split_whitespace() {
                let i = parse_usize(tok, line)?;
                if i >= n {
                    return Err(Error::Parse { line: line + 1, msg: format!("item {i} out of range for n = {n}") });
                }
                test.push(i);
            }
            tests.push(test);
        }
        if let Some((line, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::Parse { line: line + 1, msg: format!("content after the {num_tests} declared tests") });
        }
        TestDesign::new(n, tests)
    }

    pub fn read_matrix(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })?;
        Self::parse_matrix(&text)
    }

    pub fn write_matrix(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_matrix_string()).map_err(|source| Error::Io { path: path.into(), source })
    }
}

/// A set of item indices, stored sorted and without duplicates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "Vec<usize>", into = "Vec<usize>")]
pub struct DefectiveSet {
    members: Vec<usize>,
}

impl From<Vec<usize>> for DefectiveSet {
    fn from(members: Vec<usize>) -> Self {
        Self::new(members)
    }
}

impl From<DefectiveSet> for Vec<usize> {
    fn from(s: DefectiveSet) -> Self {
        s.members
    }
}

impl FromIterator<usize> for DefectiveSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

impl DefectiveSet {
    pub fn new(mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        Self { members }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Set whose members are the one-bits of `mask`.
    pub fn from_mask(mask: u64) -> Self {
        Self { members: (0..64).filter(|b| mask >> b & 1 == 1).collect() }
    }

    pub fn from_indicator(indicator: &[bool]) -> Self {
        Self { members: indicator.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect() }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members.binary_search(&i).is_ok()
    }

    pub fn is_subset(&self, other: &DefectiveSet) -> bool {
        self.members.iter().all(|&i| other.contains(i))
    }

    pub fn indicator(&self, n: usize) -> Vec<bool> {
        let mut v = vec![false; n];
        for &i in &self.members {
            v[i] = true;
        }
        v
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self.members.last() {
            Some(&i) if i >= n => Err(Error::input(format!("defective item {i} out of range for n = {n}"))),
            _ => Ok(()),
        }
    }
}

/// Test results, one boolean per test.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutcomeVector(pub Vec<bool>);

impl OutcomeVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    /// `"0110"`-style rendering, one character per test.
    pub fn to_bits(&self) -> String {
        self.0.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn from_bits(bits: &str) -> Result<Self> {
        bits.trim()
            .chars()
            .map(|c| match c {
                '1' | 'T' | 't' => Ok(true),
                '0' | 'F' | 'f' => Ok(false),
                other => Err(Error::input(format!("outcome character `{other}` is not 0/1"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(OutcomeVector)
    }

    pub(crate) fn check_len(&self, design: &TestDesign) -> Result<()> {
        if self.len() != design.num_tests() {
            return Err(Error::input(format!(
                "{} outcomes given for a design with {} tests",
                self.len(),
                design.num_tests()
            )));
        }
        Ok(())
    }
}

/// Distribution of the defective set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Prior {
    /// Each item defective independently with prevalence `p`.
    Iid { p: f64 },
    /// Uniform over subsets of exactly `k` items.
    Combinatorial { k: usize },
}

impl Prior {
    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            Prior::Iid { p } => check_prevalence(p),
            Prior::Combinatorial { k } => check_cardinality(n, k),
        }
    }

    /// Expected number of defectives, `np` or `k`.
    pub fn mean_defectives(&self, n: usize) -> f64 {
        match *self {
            Prior::Iid { p } => n as f64 * p,
            Prior::Combinatorial { k } => k as f64,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<DefectiveSet> {
        match *self {
            Prior::Iid { p } => sample_iid(n, p, rng),
            Prior::Combinatorial { k } => sample_combinatorial(n, k, rng),
        }
    }

    /// Prior probability of a defective set of the given size.
    pub fn mass_of_size(&self, n: usize, size: usize) -> f64 {
        match *self {
            Prior::Iid { p } => p.powi(size as i32) * (1.0 - p).powi((n - size) as i32),
            Prior::Combinatorial { k } => {
                if size == k {
                    1.0 / binomial(n, k)
                } else {
                    0.0
                }
            }
        }
    }
}

pub(crate) fn check_prevalence(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 0.5) {
        return Err(Error::param(format!("prevalence p = {p} must lie in (0, 1/2]")));
    }
    Ok(())
}

fn check_cardinality(n: usize, k: usize) -> Result<()> {
    if k < 1 || k > n / 2 {
        return Err(Error::param(format!("defective count k = {k} must lie in [1, floor(n/2)] for n = {n}")));
    }
    Ok(())
}

/// Binomial coefficient as a float (exact for every value below 2^53).
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64).round()
}

/// Outcome of every test: positive iff it contains a defective item.
pub fn run_tests(design: &TestDesign, s: &DefectiveSet) -> Result<OutcomeVector> {
    s.validate(design.num_items())?;
    let defective = s.indicator(design.num_items());
    Ok(run_tests_indicator(design, &defective))
}

pub(crate) fn run_tests_indicator(design: &TestDesign, defective: &[bool]) -> OutcomeVector {
    OutcomeVector(design.tests().iter().map(|test| test.iter().any(|&i| defective[i])).collect())
}

pub fn sample_iid<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<DefectiveSet> {
    check_prevalence(p)?;
    Ok(sample_bernoulli_items(n, p, rng))
}

fn sample_bernoulli_items<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> DefectiveSet {
    DefectiveSet { members: (0..n).filter(|_| rng.random_bool(p)).collect() }
}

pub fn sample_combinatorial<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<DefectiveSet> {
    check_cardinality(n, k)?;
    Ok(DefectiveSet::new(index::sample(rng, n, k).into_vec()))
}

/// Result of the two-step coupled sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledSample {
    /// First-step i.i.d. draw.
    pub s0: DefectiveSet,
    /// Final set; equals `s0` when `overflow` is set.
    pub s: DefectiveSet,
    pub p0: f64,
    /// `|s0| > k`; the top-up step was skipped.
    pub overflow: bool,
}

/// First-step prevalence `(k - sqrt(k) ln n) / n` of the coupled sampler.
pub fn coupled_prevalence(n: usize, k: usize) -> Result<f64> {
    let p0 = (k as f64 - (k as f64).sqrt() * (n as f64).ln()) / n as f64;
    if !(p0 > 0.0) {
        return Err(Error::param(format!(
            "coupled sampler needs (k - sqrt(k) ln n)/n > 0 (k close to linear in n); got {p0:.6} for n = {n}, k = {k}"
        )));
    }
    Ok(p0)
}

/// Draws `S0` i.i.d. with the prevalence from [`coupled_prevalence`], then
/// tops it up with uniformly chosen items until it has exactly `k` members.
pub fn sample_coupled<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<CoupledSample> {
    check_cardinality(n, k)?;
    let p0 = coupled_prevalence(n, k)?;
    sample_coupled_with_prevalence(n, k, p0, rng)
}

/// The coupled sampler with an explicit first-step prevalence `p0 in (0, 1)`.
pub fn sample_coupled_with_prevalence<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    p0: f64,
    rng: &mut R,
) -> Result<CoupledSample> {
    check_cardinality(n, k)?;
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(Error::param(format!("first-step prevalence p0 = {p0} must lie in (0, 1)")));
    }
    let s0 = sample_bernoulli_items(n, p0, rng);
    if s0.len() > k {
        return Ok(CoupledSample { s: s0.clone(), s0, p0, overflow: true });
    }
    let indicator = s0.indicator(n);
    let rest: Vec<usize> = (0..n).filter(|&i| !indicator[i]).collect();
    let mut members = s0.members.clone();
    members.extend(index::sample(rng, rest.len(), k - s0.len()).into_iter().map(|j| rest[j]));
    Ok(CoupledSample { s0, s: DefectiveSet::new(members), p0, overflow: false })
}

/// Exact law of the coupled sampler's final set given no overflow, obtained
/// by enumerating every first-step draw and every top-up. Returns the
/// probability of each `k`-subset indexed by its bitmask.
pub fn coupled_conditional_law(n: usize, k: usize, p0: f64) -> Result<Vec<(u64, f64)>> {
    check_cardinality(n, k)?;
    if n > 20 {
        return Err(Error::Capacity { what: "items", actual: n, limit: 20 });
    }
    let full = (1u64 << n) - 1;
    let mut law = vec![0.0; 1 << n];
    let mut kept = 0.0;
    for s0 in 0..=full {
        let size = s0.count_ones() as usize;
        if size > k {
            continue;
        }
        let mass = p0.powi(size as i32) * (1.0 - p0).powi((n - size) as i32);
        kept += mass;
        let complement: Vec<usize> = (0..n).filter(|b| s0 >> b & 1 == 0).collect();
        let topups = binomial(complement.len(), k - size);
        for_each_subset_of_size(complement.len(), k - size, |pick| {
            let mut s = s0;
            for (j, &item) in complement.iter().enumerate() {
                if pick >> j & 1 == 1 {
                    s |= 1 << item;
                }
            }
            law[s as usize] += mass / topups;
        });
    }
    Ok(law
        .into_iter()
        .enumerate()
        .filter(|&(s, _)| (s as u64).count_ones() as usize == k)
        .map(|(s, m)| (s as u64, m / kept))
        .collect())
}

/// Calls `f` on every `size`-subset of `0..m` as a bitmask, in increasing
/// numeric order (Gosper's hack).
pub(crate) fn for_each_subset_of_size(m: usize, size: usize, mut f: impl FnMut(u64)) {
    if size > m {
        return;
    }
    if size == 0 {
        f(0);
        return;
    }
    let limit = 1u64 << m;
    let mut x = (1u64 << size) - 1;
    while x < limit {
        f(x);
        let c = x & x.wrapping_neg();
        let r = x + c;
        x = (((r ^ x) >> 2) / c) | r;
    }
}
