//! Totally-disguised items and the independent-set construction behind the
//! algorithm-independent lower bound.
//!
//! An item is disguised in a test when some *other* item of that test is
//! defective, and totally disguised when this holds for every test it is in.
//! Flipping the status of a totally disguised item leaves every outcome
//! unchanged, so no decoder can learn it.
//!
//! The pruning routines ([`clean`], [`extract`], [`construct_set`]) share one
//! engine that marks items and tests dead on top of a fixed base design and
//! only materialises a re-indexed [`TestDesign`] when asked.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_prevalence, run_tests, DefectiveSet, TestDesign};
use crate::stream::{self, Purpose};
use crate::thresholds::calligraphic_l;

/// Default bound on the number of item statuses enumerated by exact routines.
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

/// How [`extract`] ranks candidate items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Product of per-test disguise probabilities, a certified lower bound.
    #[default]
    ProductBound,
    /// Exact disguise probability by enumeration of the item's neighbours.
    Exact,
}

fn disguised_given(design: &TestDesign, defective: &[bool], i: usize) -> bool {
    design.item_tests(i).iter().all(|&t| design.test(t).iter().any(|&j| j != i && defective[j]))
}

/// Every test containing `i` also contains a defective other than `i`.
/// Vacuously true for an untested item.
pub fn is_totally_disguised(design: &TestDesign, s: &DefectiveSet, i: usize) -> Result<bool> {
    design.check_item(i)?;
    s.validate(design.num_items())?;
    Ok(disguised_given(design, &s.indicator(design.num_items()), i))
}

/// Indicator of total disguise for every item at once.
pub fn disguised_items(design: &TestDesign, s: &DefectiveSet) -> Result<Vec<bool>> {
    s.validate(design.num_items())?;
    let defective = s.indicator(design.num_items());
    // A test disguises i iff it holds >= 2 defectives, or exactly one that is not i.
    let counts: Vec<(usize, usize)> = design
        .tests()
        .iter()
        .map(|test| {
            let mut c = 0;
            let mut last = usize::MAX;
            for &j in test {
                if defective[j] {
                    c += 1;
                    last = j;
                }
            }
            (c, last)
        })
        .collect();
    Ok((0..design.num_items())
        .map(|i| {
            design.item_tests(i).iter().all(|&t| {
                let (c, last) = counts[t];
                c >= 2 || (c == 1 && last != i)
            })
        })
        .collect())
}

/// A conjunction of clauses over i.i.d. Bernoulli(p) item statuses; a
/// clause holds when at least one of its items is defective.
struct ClauseSystem {
    vars: Vec<usize>,
    clauses: Vec<Vec<usize>>,
}

impl ClauseSystem {
    fn new() -> Self {
        Self { vars: Vec::new(), clauses: Vec::new() }
    }

    fn var(&mut self, item: usize) -> usize {
        match self.vars.iter().position(|&v| v == item) {
            Some(pos) => pos,
            None => {
                self.vars.push(item);
                self.vars.len() - 1
            }
        }
    }

    fn add_clause(&mut self, items: impl IntoIterator<Item = usize>) {
        let clause: Vec<usize> = items.into_iter().map(|i| self.var(i)).collect();
        self.clauses.push(clause);
    }

    /// Adds the clauses of the event "`i` is totally disguised" with respect
    /// to the tests and co-members produced by `tests_of`.
    fn add_disguise_event<I, J>(&mut self, i: usize, tests_of: I)
    where
        I: IntoIterator<Item = J>,
        J: IntoIterator<Item = usize>,
    {
        for members in tests_of {
            self.add_clause(members.into_iter().filter(|&j| j != i));
        }
    }

    /// Probability that every clause holds, by walking all statuses of the
    /// variables in Gray-code order with incremental clause counters.
    fn probability(&self, p: f64, cap: usize) -> Result<f64> {
        if self.clauses.iter().any(Vec::is_empty) {
            return Ok(0.0);
        }
        let m = self.vars.len();
        if m > cap.min(62) {
            return Err(Error::Capacity { what: "enumerated item statuses", actual: m, limit: cap.min(62) });
        }
        let mut var_clauses = vec![Vec::new(); m];
        for (c, clause) in self.clauses.iter().enumerate() {
            for &v in clause {
                var_clauses[v].push(c);
            }
        }
        let q = 1.0 - p;
        let weight: Vec<f64> = (0..=m).map(|d| p.powi(d as i32) * q.powi((m - d) as i32)).collect();
        let mut hits = vec![0usize; self.clauses.len()];
        let mut unsatisfied = self.clauses.len();
        let mut state = 0u64;
        let mut defective = 0usize;
        let mut total = if unsatisfied == 0 { weight[0] } else { 0.0 };
        for step in 1u64..(1u64 << m) {
            let v = step.trailing_zeros() as usize;
            state ^= 1 << v;
            if state >> v & 1 == 1 {
                defective += 1;
                for &c in &var_clauses[v] {
                    if hits[c] == 0 {
                        unsatisfied -= 1;
                    }
                    hits[c] += 1;
                }
            } else {
                defective -= 1;
                for &c in &var_clauses[v] {
                    hits[c] -= 1;
                    if hits[c] == 0 {
                        unsatisfied += 1;
                    }
                }
            }
            if unsatisfied == 0 {
                total += weight[defective];
            }
        }
        Ok(total)
    }
}

fn design_event(system: &mut ClauseSystem, design: &TestDesign, i: usize) {
    system.add_disguise_event(i, design.item_tests(i).iter().map(|&t| design.test(t).iter().copied()));
}

/// Exact `P[D_i]` under the i.i.d. prior. Only the statuses of items sharing
/// a test with `i` matter, so those are the ones enumerated.
pub fn exact_disguise_prob(design: &TestDesign, p: f64, i: usize) -> Result<f64> {
    exact_joint_disguise_prob(design, p, &[i])
}

/// Exact probability that all listed items are totally disguised at once.
pub fn exact_joint_disguise_prob(design: &TestDesign, p: f64, items: &[usize]) -> Result<f64> {
    check_prevalence(p)?;
    let mut system = ClauseSystem::new();
    for &i in items {
        design.check_item(i)?;
        design_event(&mut system, design, i);
    }
    system.probability(p, DEFAULT_ENUMERATION_CAP)
}

/// Exact `P[i in S | D_i]`, which equals `p` whenever the conditioning
/// event has positive probability.
pub fn conditional_defectivity(design: &TestDesign, p: f64, i: usize) -> Result<f64> {
    check_prevalence(p)?;
    design.check_item(i)?;
    let mut event = ClauseSystem::new();
    design_event(&mut event, design, i);
    let disguised = event.probability(p, DEFAULT_ENUMERATION_CAP)?;
    if disguised == 0.0 {
        return Err(Error::UndefinedConditional { item: i });
    }
    event.add_clause([i]);
    Ok(event.probability(p, DEFAULT_ENUMERATION_CAP)? / disguised)
}

/// `sum over tests t containing i of ln(1 - q^(|t|-1))`; `-inf` when `i` is
/// in a singleton test.
pub fn aldridge_item_log_bound(design: &TestDesign, p: f64, i: usize) -> f64 {
    let ln_q = (1.0 - p).ln();
    design.item_tests(i).iter().map(|&t| per_test_log_disguise(ln_q, design.test_size(t))).sum()
}

fn per_test_log_disguise(ln_q: f64, size: usize) -> f64 {
    if size <= 1 {
        return f64::NEG_INFINITY;
    }
    (-((size - 1) as f64 * ln_q).exp()).ln_1p()
}

/// `prod over tests t containing i of (1 - q^(|t|-1))`, a lower bound on `P[D_i]`.
pub fn aldridge_item_bound(design: &TestDesign, p: f64, i: usize) -> Result<f64> {
    check_prevalence(p)?;
    design.check_item(i)?;
    Ok(aldridge_item_log_bound(design, p, i).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AldridgeCheck {
    /// Mean of `ln P[D_i]` over items (exact, or the product lower bound).
    pub lhs: f64,
    /// `(T/n) L(p)`.
    pub rhs: f64,
    pub holds: bool,
    pub exact: bool,
}

/// Compares the average log disguise probability with `(T/n) L(p)`. Exact
/// per-item probabilities are used when `n` is within the enumeration cap.
pub fn aldridge_avg_check(design: &TestDesign, p: f64) -> Result<AldridgeCheck> {
    check_prevalence(p)?;
    let small: Vec<usize> = (0..design.num_tests()).filter(|&t| design.test_size(t) < 2).collect();
    if let Some(&first) = small.first() {
        return Err(Error::MustCleanFirst { count: small.len(), first });
    }
    let n = design.num_items();
    if n == 0 {
        return Ok(AldridgeCheck { lhs: 0.0, rhs: 0.0, holds: true, exact: true });
    }
    let exact = n <= DEFAULT_ENUMERATION_CAP;
    let mut sum = 0.0;
    for i in 0..n {
        sum += if exact { exact_disguise_prob(design, p, i)?.ln() } else { aldridge_item_log_bound(design, p, i) };
    }
    let lhs = sum / n as f64;
    let rhs = if design.num_tests() == 0 {
        0.0
    } else {
        design.num_tests() as f64 / n as f64 * calligraphic_l(p, n)?.value
    };
    Ok(AldridgeCheck { lhs, rhs, holds: lhs >= rhs - 1e-12, exact })
}

/// Items appearing in more than `n^xi` tests.
pub fn very_present_items(design: &TestDesign, xi: f64) -> Vec<usize> {
    let threshold = (design.num_items() as f64).powf(xi);
    (0..design.num_items()).filter(|&i| design.item_tests(i).len() as f64 > threshold).collect()
}

/// `(1 - p)^n_disguised`: success probability cap when that many independent
/// items are totally disguised.
pub fn success_upper_bound(n_disguised: usize, p: f64) -> Result<f64> {
    check_prevalence(p)?;
    Ok((1.0 - p).powf(n_disguised as f64))
}

/// Exchanging a totally disguised defective `i` with a totally disguised
/// non-defective `j` leaves the outcomes unchanged.
pub fn swap_preserves_outcomes(design: &TestDesign, s: &DefectiveSet, i: usize, j: usize) -> Result<bool> {
    design.check_item(i)?;
    design.check_item(j)?;
    if !s.contains(i) {
        return Err(Error::input(format!("item {i} is not defective")));
    }
    if s.contains(j) {
        return Err(Error::input(format!("item {j} is defective")));
    }
    if !is_totally_disguised(design, s, i)? {
        return Err(Error::input(format!("defective item {i} is not totally disguised")));
    }
    if !is_totally_disguised(design, s, j)? {
        return Err(Error::input(format!("non-defective item {j} is not totally disguised")));
    }
    let swapped: DefectiveSet = s.members().iter().copied().filter(|&x| x != i).chain([j]).collect();
    Ok(run_tests(design, s)? == run_tests(design, &swapped)?)
}

/// Live view of a base design with items and tests removed.
struct Pruner<'a> {
    base: &'a TestDesign,
    item_alive: Vec<bool>,
    test_alive: Vec<bool>,
    size: Vec<usize>,
    alive_items: usize,
    alive_tests: usize,
    /// Items left out of the reference graph used for distance queries.
    unreachable: Vec<bool>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Removed {
    items: usize,
    tests: usize,
}

impl<'a> Pruner<'a> {
    fn new(base: &'a TestDesign) -> Self {
        Self {
            base,
            item_alive: vec![true; base.num_items()],
            test_alive: vec![true; base.num_tests()],
            size: base.tests().iter().map(Vec::len).collect(),
            alive_items: base.num_items(),
            alive_tests: base.num_tests(),
            unreachable: vec![false; base.num_items()],
        }
    }

    fn remove_item(&mut self, i: usize) -> bool {
        if !self.item_alive[i] {
            return false;
        }
        self.item_alive[i] = false;
        self.alive_items -= 1;
        for &t in self.base.item_tests(i) {
            self.size[t] -= 1;
        }
        true
    }

    fn remove_test(&mut self, t: usize) -> bool {
        if !self.test_alive[t] {
            return false;
        }
        self.test_alive[t] = false;
        self.alive_tests -= 1;
        true
    }

    /// One pass of Clean: drop every live test with at most one live item,
    /// together with the items in those tests.
    fn clean_pass(&mut self) -> Removed {
        let small: Vec<usize> = (0..self.base.num_tests()).filter(|&t| self.test_alive[t] && self.size[t] <= 1).collect();
        let mut removed = Removed::default();
        for &t in &small {
            let item = self.base.test(t).iter().copied().find(|&i| self.item_alive[i]);
            removed.tests += usize::from(self.remove_test(t));
            if let Some(i) = item {
                removed.items += usize::from(self.remove_item(i));
            }
        }
        removed
    }

    /// Repeats Clean until nothing changes; returns totals and the number of
    /// passes that removed something.
    fn clean_fixed_point(&mut self) -> (Removed, usize) {
        let mut total = Removed::default();
        let mut passes = 0;
        loop {
            let r = self.clean_pass();
            if r.items == 0 && r.tests == 0 {
                return (total, passes);
            }
            passes += 1;
            total.items += r.items;
            total.tests += r.tests;
        }
    }

    fn live_members(&self, t: usize) -> impl Iterator<Item = usize> + '_ {
        self.base.test(t).iter().copied().filter(|&i| self.item_alive[i])
    }

    /// Removed items keep no live tests, so a live item's tests are all live.
    fn score(&self, i: usize, p: f64, mode: ScoreMode, cap: usize) -> Result<f64> {
        match mode {
            ScoreMode::ProductBound => {
                let ln_q = (1.0 - p).ln();
                Ok(self.base.item_tests(i).iter().map(|&t| per_test_log_disguise(ln_q, self.size[t])).sum())
            }
            ScoreMode::Exact => {
                let mut system = ClauseSystem::new();
                system.add_disguise_event(i, self.base.item_tests(i).iter().map(|&t| self.live_members(t)));
                Ok(system.probability(p, cap)?.ln())
            }
        }
    }

    /// Extract: take the best-scoring live item (lowest index on ties) and
    /// remove every live test and item within distance 4 of it in the
    /// reference graph.
    fn extract(&mut self, p: f64, mode: ScoreMode, cap: usize) -> Result<Option<(usize, Removed)>> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.base.num_items() {
            if !self.item_alive[i] {
                continue;
            }
            let s = self.score(i, p, mode, cap)?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let Some((i0, _)) = best else {
            return Ok(None);
        };
        let (items, tests) = self.ball(i0, 4);
        let mut removed = Removed::default();
        for t in tests {
            removed.tests += usize::from(self.remove_test(t));
        }
        for i in items {
            removed.items += usize::from(self.remove_item(i));
        }
        Ok(Some((i0, removed)))
    }

    /// Items and tests within `radius` edges of `start` in the base graph,
    /// skipping unreachable items.
    fn ball(&self, start: usize, radius: usize) -> (Vec<usize>, Vec<usize>) {
        let mut item_seen = vec![false; self.base.num_items()];
        let mut test_seen = vec![false; self.base.num_tests()];
        let mut items = vec![start];
        let mut tests = Vec::new();
        item_seen[start] = true;
        // Frontier of (node, is_test, depth).
        let mut queue = VecDeque::from([(start, false, 0usize)]);
        while let Some((node, is_test, depth)) = queue.pop_front() {
            if depth == radius {
                continue;
            }
            if is_test {
                for &i in self.base.test(node) {
                    if !item_seen[i] && !self.unreachable[i] {
                        item_seen[i] = true;
                        items.push(i);
                        queue.push_back((i, false, depth + 1));
                    }
                }
            } else {
                for &t in self.base.item_tests(node) {
                    if !test_seen[t] {
                        test_seen[t] = true;
                        tests.push(t);
                        queue.push_back((t, true, depth + 1));
                    }
                }
            }
        }
        (items, tests)
    }

    fn materialize(&self) -> (TestDesign, Vec<usize>, Vec<usize>) {
        let item_map: Vec<usize> = (0..self.base.num_items()).filter(|&i| self.item_alive[i]).collect();
        let test_map: Vec<usize> = (0..self.base.num_tests()).filter(|&t| self.test_alive[t]).collect();
        let mut new_index = vec![usize::MAX; self.base.num_items()];
        for (new, &old) in item_map.iter().enumerate() {
            new_index[old] = new;
        }
        let tests = test_map.iter().map(|&t| self.live_members(t).map(|i| new_index[i]).collect()).collect();
        let design = TestDesign::new(item_map.len(), tests).expect("pruned design is valid");
        (design, item_map, test_map)
    }

    fn dead_items(&self) -> Vec<usize> {
        (0..self.base.num_items()).filter(|&i| !self.item_alive[i]).collect()
    }

    fn dead_tests(&self) -> Vec<usize> {
        (0..self.base.num_tests()).filter(|&t| !self.test_alive[t]).collect()
    }
}

/// A pruned design together with maps from its indices back to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Pruned {
    pub design: TestDesign,
    /// `item_map[new] = old`.
    pub item_map: Vec<usize>,
    /// `test_map[new] = old`.
    pub test_map: Vec<usize>,
    pub removed_items: Vec<usize>,
    pub removed_tests: Vec<usize>,
}

impl Pruned {
    fn from_pruner(pruner: &Pruner<'_>) -> Self {
        let (design, item_map, test_map) = pruner.materialize();
        Self { design, item_map, test_map, removed_items: pruner.dead_items(), removed_tests: pruner.dead_tests() }
    }
}

/// Drops every test with zero or one items and every item contained in
/// such a test (the whole column goes). Untested items are kept.
pub fn clean(design: &TestDesign) -> Pruned {
    let mut pruner = Pruner::new(design);
    pruner.clean_pass();
    Pruned::from_pruner(&pruner)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    pub pruned: Pruned,
    /// The chosen item, as an index of the input design.
    pub item: usize,
    /// Input `w` followed by `item`.
    pub w: Vec<usize>,
}

/// One Extract step on `design`; `w` is carried through unchanged and the
/// chosen item appended.
pub fn extract(design: &TestDesign, w: &[usize], mode: ScoreMode, p: f64) -> Result<Extracted> {
    check_prevalence(p)?;
    if design.num_items() == 0 {
        return Err(Error::input("cannot extract from a design with no items"));
    }
    let mut pruner = Pruner::new(design);
    let (item, _) = pruner.extract(p, mode, DEFAULT_ENUMERATION_CAP)?.expect("design has items");
    let mut w = w.to_vec();
    w.push(item);
    Ok(Extracted { pruned: Pruned::from_pruner(&pruner), item, w })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    RatioExceeded,
    Exhausted,
}

/// One pass of the construction loop. The last record of a run holds the
/// post-clean sizes that failed the stop test and has no extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub n_i: usize,
    pub t_i: usize,
    pub items_removed_by_clean: usize,
    pub tests_removed_by_clean: usize,
    pub clean_passes: usize,
    pub extracted: Option<usize>,
    pub items_removed_by_extract: usize,
    pub tests_removed_by_extract: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    /// Extracted items in order, as indices of the input design.
    pub w: Vec<usize>,
    pub trace: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    pub very_present_removed: Vec<usize>,
    pub n: usize,
    #[serde(rename = "T")]
    pub num_tests: usize,
    pub xi: f64,
}

impl ExtractionResult {
    /// The input design with the very-present items stripped; disguise of
    /// the items in `w` is defined with respect to this design.
    pub fn reference_design(&self, design: &TestDesign) -> TestDesign {
        design.without_items(&self.very_present_removed)
    }
}

/// Builds a set of items whose total-disguise events are mutually
/// independent.
///
/// Very-present items are removed first. Each round then cleans to a fixed
/// point and, while items remain and `T_i / n_i <= (1 + xi) T / n` with the
/// input's `(n, T)`, extracts one item. Distances for the extraction ball
/// are measured in the design with only the very-present items removed, so
/// any two extracted items are more than 4 edges apart there.
pub fn construct_set(design: &TestDesign, p: f64, xi: f64, mode: ScoreMode) -> Result<ExtractionResult> {
    check_prevalence(p)?;
    if !(xi > 0.0) {
        return Err(Error::param(format!("xi = {xi} must be positive")));
    }
    if design.num_items() == 0 {
        return Err(Error::param("construct_set needs n >= 1"));
    }
    let n = design.num_items();
    let num_tests = design.num_tests();
    let limit = (1.0 + xi) * num_tests as f64 / n as f64;

    let very_present = very_present_items(design, xi);
    let mut pruner = Pruner::new(design);
    for &i in &very_present {
        pruner.remove_item(i);
        pruner.unreachable[i] = true;
    }

    let mut w = Vec::new();
    let mut trace = Vec::new();
    let stop_reason = loop {
        let (cleaned, passes) = pruner.clean_fixed_point();
        let (n_i, t_i) = (pruner.alive_items, pruner.alive_tests);
        let mut record = IterationRecord {
            iteration: trace.len() + 1,
            n_i,
            t_i,
            items_removed_by_clean: cleaned.items,
            tests_removed_by_clean: cleaned.tests,
            clean_passes: passes,
            extracted: None,
            items_removed_by_extract: 0,
            tests_removed_by_extract: 0,
        };
        if n_i == 0 {
            trace.push(record);
            break StopReason::Exhausted;
        }
        if t_i as f64 / n_i as f64 > limit {
            trace.push(record);
            break StopReason::RatioExceeded;
        }
        let (item, removed) = pruner.extract(p, mode, DEFAULT_ENUMERATION_CAP)?.expect("items remain");
        record.extracted = Some(item);
        record.items_removed_by_extract = removed.items;
        record.tests_removed_by_extract = removed.tests;
        trace.push(record);
        w.push(item);
    };
    Ok(ExtractionResult { w, trace, stop_reason, very_present_removed: very_present, n, num_tests, xi })
}

/// Where a [`DisguiseReport`] gets its defective sets from.
#[derive(Debug, Clone, Copy)]
pub enum ReportMode<'a> {
    Realized(&'a DefectiveSet),
    MonteCarlo { p: f64, trials: usize, seed: u64 },
    Exact { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisguiseReport {
    pub mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_item_disguised: Option<Vec<bool>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_item_prob: Option<Vec<f64>>,
    /// Totally disguised defectives (realized mode).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_disguised_defective: Option<usize>,
    /// Totally disguised non-defectives (realized mode).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_disguised_nondefective: Option<usize>,
    /// Disguised items inside the designated set (realized mode).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_min_in_w: Option<usize>,
    /// Expected number of disguised items inside the designated set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected_in_w: Option<f64>,
    /// Items in no test; they are vacuously disguised.
    pub untested_items: Vec<usize>,
}

pub fn disguise_report(design: &TestDesign, mode: ReportMode<'_>, w: Option<&[usize]>) -> Result<DisguiseReport> {
    if let Some(w) = w {
        for &i in w {
            design.check_item(i)?;
        }
    }
    let n = design.num_items();
    let untested_items = (0..n).filter(|&i| design.item_tests(i).is_empty()).collect();
    let mut report = DisguiseReport {
        mode: String::new(),
        per_item_disguised: None,
        per_item_prob: None,
        n_disguised_defective: None,
        n_disguised_nondefective: None,
        n_min_in_w: None,
        expected_in_w: None,
        untested_items,
    };
    match mode {
        ReportMode::Realized(s) => {
            let flags = disguised_items(design, s)?;
            let defective = s.indicator(n);
            let ones = (0..n).filter(|&i| flags[i] && defective[i]).count();
            let total = flags.iter().filter(|&&b| b).count();
            report.mode = "realized".into();
            report.n_disguised_defective = Some(ones);
            report.n_disguised_nondefective = Some(total - ones);
            report.n_min_in_w = w.map(|w| w.iter().filter(|&&i| flags[i]).count());
            report.per_item_disguised = Some(flags);
        }
        ReportMode::MonteCarlo { p, trials, seed } => {
            check_prevalence(p)?;
            if trials == 0 {
                return Err(Error::param("Monte Carlo report needs at least one trial"));
            }
            let counts = (0..trials)
                .into_par_iter()
                .map(|t| -> Result<Vec<u64>> {
                    let mut rng = stream::derive(seed, t as u64, Purpose::Disguise);
                    let s = crate::model::sample_iid(n, p, &mut rng)?;
                    Ok(disguised_items(design, &s)?.into_iter().map(u64::from).collect())
                })
                .try_reduce(|| vec![0; n], |mut a, b| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    Ok(a)
                })?;
            let probs: Vec<f64> = counts.into_iter().map(|c| c as f64 / trials as f64).collect();
            report.mode = "monte_carlo".into();
            report.expected_in_w = w.map(|w| w.iter().map(|&i| probs[i]).sum());
            report.per_item_prob = Some(probs);
        }
        ReportMode::Exact { p } => {
            let probs = (0..n).map(|i| exact_disguise_prob(design, p, i)).collect::<Result<Vec<_>>>()?;
            report.mode = "exact".into();
            report.expected_in_w = w.map(|w| w.iter().map(|&i| probs[i]).sum());
            report.per_item_prob = Some(probs);
        }
    }
    Ok(report)
}
