//! COMP and DD decoders, plus exhaustive small-instance oracles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{for_each_subset_of_size, run_tests, DefectiveSet, OutcomeVector, Prior, TestDesign};

/// Largest item count the enumeration oracles accept by default.
pub const DEFAULT_ENUMERATION_CAP: usize = 20;
const HARD_ENUMERATION_LIMIT: usize = 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Comp,
    Dd,
    Map,
}

impl DecoderKind {
    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::Comp => "comp",
            DecoderKind::Dd => "dd",
            DecoderKind::Map => "map",
        }
    }
}

impl std::str::FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "comp" => Ok(DecoderKind::Comp),
            "dd" => Ok(DecoderKind::Dd),
            "map" => Ok(DecoderKind::Map),
            other => Err(Error::param(format!("unknown decoder `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub estimate: DefectiveSet,
    pub decoder: DecoderKind,
    /// The estimate carries a one-sided guarantee (superset for COMP,
    /// subset for DD).
    pub definite: bool,
}

/// Items that appear in no negative test.
fn possibly_defective(design: &TestDesign, outcomes: &OutcomeVector) -> Result<Vec<bool>> {
    outcomes.check_len(design)?;
    let mut pd = vec![true; design.num_items()];
    for (test, &positive) in design.tests().iter().zip(outcomes.as_slice()) {
        if !positive {
            for &i in test {
                pd[i] = false;
            }
        }
    }
    Ok(pd)
}

/// Declares defective every item that is not in a negative test.
pub fn comp_decode(design: &TestDesign, outcomes: &OutcomeVector) -> Result<DecodeResult> {
    let pd = possibly_defective(design, outcomes)?;
    Ok(DecodeResult { estimate: DefectiveSet::from_indicator(&pd), decoder: DecoderKind::Comp, definite: true })
}

/// Definite Defectives: a possibly-defective item is declared defective
/// when some positive test contains it and no other possibly-defective item.
pub fn dd_decode(design: &TestDesign, outcomes: &OutcomeVector) -> Result<DecodeResult> {
    let pd = possibly_defective(design, outcomes)?;
    let mut definite = vec![false; design.num_items()];
    for (test, &positive) in design.tests().iter().zip(outcomes.as_slice()) {
        if !positive {
            continue;
        }
        let mut only = None;
        let mut count = 0;
        for &i in test {
            if pd[i] {
                count += 1;
                only = Some(i);
                if count > 1 {
                    break;
                }
            }
        }
        if let (1, Some(i)) = (count, only) {
            definite[i] = true;
        }
    }
    Ok(DecodeResult { estimate: DefectiveSet::from_indicator(&definite), decoder: DecoderKind::Dd, definite: true })
}

fn check_cap(design: &TestDesign, cap: usize) -> Result<()> {
    let limit = cap.min(HARD_ENUMERATION_LIMIT);
    if design.num_items() > limit {
        return Err(Error::Capacity { what: "items", actual: design.num_items(), limit });
    }
    Ok(())
}

/// Visits consistent sets in order of cardinality, then lexicographically,
/// stopping early when `visit` returns false. Only possibly-defective items
/// can belong to a consistent set, so only their subsets are enumerated.
fn scan_consistent(
    design: &TestDesign,
    outcomes: &OutcomeVector,
    cardinality: Option<usize>,
    cap: usize,
    mut visit: impl FnMut(&[usize]) -> bool,
) -> Result<()> {
    check_cap(design, cap)?;
    let pd = possibly_defective(design, outcomes)?;
    let candidates: Vec<usize> = (0..design.num_items()).filter(|&i| pd[i]).collect();
    let m = candidates.len();
    // Positive tests as masks over the candidate list.
    let position: Vec<usize> = {
        let mut pos = vec![usize::MAX; design.num_items()];
        for (j, &i) in candidates.iter().enumerate() {
            pos[i] = j;
        }
        pos
    };
    let positive_masks: Vec<u64> = design
        .tests()
        .iter()
        .zip(outcomes.as_slice())
        .filter(|(_, &y)| y)
        .map(|(test, _)| test.iter().filter(|&&i| pd[i]).fold(0u64, |acc, &i| acc | 1 << position[i]))
        .collect();

    let sizes = match cardinality {
        Some(c) => c..=c,
        None => 0..=m,
    };
    let mut members = Vec::with_capacity(m);
    for size in sizes {
        if size > m {
            break;
        }
        // Gosper order is numeric, not lexicographic; collect per size and sort.
        let mut level = Vec::new();
        for_each_subset_of_size(m, size, |mask| {
            if positive_masks.iter().all(|&t| t & mask != 0) {
                level.push(mask);
            }
        });
        level.sort_unstable_by_key(|&mask| lex_key(mask, m));
        for mask in level {
            members.clear();
            members.extend((0..m).filter(|b| mask >> b & 1 == 1).map(|b| candidates[b]));
            if !visit(&members) {
                return Ok(());
            }
        }
    }
    Ok(())
}

/// Among masks of equal popcount, lexicographic order of the ascending member
/// sequence equals descending order of the bit-reversed mask.
fn lex_key(mask: u64, width: usize) -> std::cmp::Reverse<u64> {
    if width == 0 {
        return std::cmp::Reverse(0);
    }
    std::cmp::Reverse(mask.reverse_bits() >> (64 - width))
}

/// Every defective set that reproduces `outcomes`, optionally restricted to
/// one cardinality, ordered by size and then lexicographically.
pub fn enumerate_consistent_sets(
    design: &TestDesign,
    outcomes: &OutcomeVector,
    cardinality: Option<usize>,
) -> Result<Vec<DefectiveSet>> {
    enumerate_consistent_sets_capped(design, outcomes, cardinality, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_consistent_sets_capped(
    design: &TestDesign,
    outcomes: &OutcomeVector,
    cardinality: Option<usize>,
    cap: usize,
) -> Result<Vec<DefectiveSet>> {
    let mut out = Vec::new();
    scan_consistent(design, outcomes, cardinality, cap, |m| {
        out.push(DefectiveSet::new(m.to_vec()));
        true
    })?;
    Ok(out)
}

/// Posterior-maximal consistent set. Under the i.i.d. prior with `p <= 1/2`
/// the posterior is non-increasing in cardinality, and under the
/// combinatorial prior it is flat over consistent `k`-sets, so the first set
/// in size-then-lexicographic order is always a maximiser; ties therefore
/// resolve to the lexicographically smallest candidate.
pub fn map_oracle_decode(design: &TestDesign, outcomes: &OutcomeVector, prior: &Prior) -> Result<DecodeResult> {
    map_oracle_decode_capped(design, outcomes, prior, DEFAULT_ENUMERATION_CAP)
}

pub fn map_oracle_decode_capped(
    design: &TestDesign,
    outcomes: &OutcomeVector,
    prior: &Prior,
    cap: usize,
) -> Result<DecodeResult> {
    prior.validate(design.num_items())?;
    let cardinality = match *prior {
        Prior::Iid { .. } => None,
        Prior::Combinatorial { k } => Some(k),
    };
    let mut best = None;
    scan_consistent(design, outcomes, cardinality, cap, |m| {
        best = Some(DefectiveSet::new(m.to_vec()));
        false
    })?;
    let estimate = best.ok_or(Error::Infeasible)?;
    Ok(DecodeResult { estimate, decoder: DecoderKind::Map, definite: false })
}

pub fn decode(kind: DecoderKind, design: &TestDesign, outcomes: &OutcomeVector, prior: &Prior) -> Result<DecodeResult> {
    match kind {
        DecoderKind::Comp => comp_decode(design, outcomes),
        DecoderKind::Dd => dd_decode(design, outcomes),
        DecoderKind::Map => map_oracle_decode(design, outcomes, prior),
    }
}

/// Exact probability that `kind` recovers the defective set, summing prior
/// mass over every defective set of an enumerable design.
pub fn exact_success_probability(design: &TestDesign, prior: &Prior, kind: DecoderKind) -> Result<f64> {
    check_cap(design, DEFAULT_ENUMERATION_CAP)?;
    prior.validate(design.num_items())?;
    let n = design.num_items();
    let mut total = 0.0;
    for mask in 0..(1u64 << n) {
        let mass = prior.mass_of_size(n, mask.count_ones() as usize);
        if mass == 0.0 {
            continue;
        }
        let s = DefectiveSet::from_mask(mask);
        let y = run_tests(design, &s)?;
        if decode(kind, design, &y, prior)?.estimate == s {
            total += mass;
        }
    }
    Ok(total)
}

/// Per-trial counts entering the DD error analysis for one defective `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DdTrialStats {
    /// Tests containing a defective other than `i`.
    pub w_other: usize,
    /// Tests containing `i` and no other defective.
    pub m_i: usize,
    /// Non-defectives that appear in no negative test.
    pub g: usize,
}

pub fn dd_trial_stats(design: &TestDesign, s: &DefectiveSet, i: usize) -> Result<DdTrialStats> {
    s.validate(design.num_items())?;
    if !s.contains(i) {
        return Err(Error::input(format!("item {i} is not in the defective set")));
    }
    let defective = s.indicator(design.num_items());
    let mut w_other = 0;
    let mut in_negative = vec![false; design.num_items()];
    for test in design.tests() {
        let others = test.iter().any(|&j| j != i && defective[j]);
        if others {
            w_other += 1;
        }
        if !others && !test.contains(&i) {
            for &j in test {
                in_negative[j] = true;
            }
        }
    }
    let m_i = design
        .item_tests(i)
        .iter()
        .filter(|&&t| !design.test(t).iter().any(|&j| j != i && defective[j]))
        .count();
    let g = (0..design.num_items()).filter(|&j| !defective[j] && !in_negative[j]).count();
    Ok(DdTrialStats { w_other, m_i, g })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[usize]) -> DefectiveSet {
        DefectiveSet::new(v.to_vec())
    }

    fn design(n: usize, tests: &[&[usize]]) -> TestDesign {
        TestDesign::new(n, tests.iter().map(|t| t.to_vec()).collect()).unwrap()
    }

    fn identity(n: usize) -> TestDesign {
        TestDesign::new(n, (0..n).map(|i| vec![i]).collect()).unwrap()
    }

    #[test]
    fn comp_examples() {
        let id = identity(3);
        let y = run_tests(&id, &set(&[1])).unwrap();
        assert_eq!(comp_decode(&id, &y).unwrap().estimate, set(&[1]));
        let d = design(3, &[&[0, 1], &[1, 2]]);
        let y = run_tests(&d, &set(&[1])).unwrap();
        assert_eq!(y.0, vec![true, true]);
        assert_eq!(comp_decode(&d, &y).unwrap().estimate, set(&[0, 1, 2]));
        let y = OutcomeVector(vec![false, false]);
        let d3 = design(3, &[&[0, 1], &[2]]);
        assert!(comp_decode(&d3, &y).unwrap().estimate.is_empty());
    }

    #[test]
    fn dd_examples() {
        let id = identity(3);
        let y = run_tests(&id, &set(&[1])).unwrap();
        assert_eq!(dd_decode(&id, &y).unwrap().estimate, set(&[1]));
        let d = design(3, &[&[0, 1], &[1, 2]]);
        let y = run_tests(&d, &set(&[1])).unwrap();
        assert!(dd_decode(&d, &y).unwrap().estimate.is_empty());
        let d = design(3, &[&[0, 1], &[1], &[2]]);
        let y = run_tests(&d, &set(&[1])).unwrap();
        assert_eq!(y.0, vec![true, true, false]);
        assert_eq!(comp_decode(&d, &y).unwrap().estimate, set(&[0, 1]));
        assert_eq!(dd_decode(&d, &y).unwrap().estimate, set(&[1]));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let d = identity(3);
        let y = OutcomeVector(vec![true]);
        assert!(matches!(comp_decode(&d, &y), Err(Error::InvalidInput(_))));
        assert!(matches!(dd_decode(&d, &y), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn individual_design_is_always_recovered() {
        let id = identity(6);
        for mask in 0..64u64 {
            let s = DefectiveSet::from_mask(mask);
            let y = run_tests(&id, &s).unwrap();
            assert_eq!(comp_decode(&id, &y).unwrap().estimate, s);
            assert_eq!(dd_decode(&id, &y).unwrap().estimate, s);
            assert_eq!(map_oracle_decode(&id, &y, &Prior::Iid { p: 0.3 }).unwrap().estimate, s);
        }
    }

    #[test]
    fn enumeration_examples() {
        let d = design(2, &[&[0, 1]]);
        let y = OutcomeVector(vec![true]);
        assert_eq!(enumerate_consistent_sets(&d, &y, None).unwrap(), vec![set(&[0]), set(&[1]), set(&[0, 1])]);
        assert_eq!(enumerate_consistent_sets(&d, &y, Some(2)).unwrap(), vec![set(&[0, 1])]);
        let id = identity(4);
        let y = run_tests(&id, &set(&[0, 3])).unwrap();
        assert_eq!(enumerate_consistent_sets(&id, &y, None).unwrap(), vec![set(&[0, 3])]);
        let y = OutcomeVector(vec![false; 4]);
        assert_eq!(enumerate_consistent_sets(&id, &y, None).unwrap(), vec![DefectiveSet::empty()]);
    }

    #[test]
    fn enumeration_is_lexicographic_within_size() {
        // Four untested items: all 16 subsets are consistent.
        let d = TestDesign::empty(4);
        let sets = enumerate_consistent_sets(&d, &OutcomeVector(vec![]), None).unwrap();
        assert_eq!(sets.len(), 16);
        let twos: Vec<Vec<usize>> = sets.iter().filter(|s| s.len() == 2).map(|s| s.members().to_vec()).collect();
        assert_eq!(twos, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
    }

    #[test]
    fn map_examples() {
        let iid = Prior::Iid { p: 0.3 };
        let d = design(2, &[&[0, 1]]);
        assert_eq!(map_oracle_decode(&d, &OutcomeVector(vec![true]), &iid).unwrap().estimate, set(&[0]));
        let d = design(3, &[&[0, 1], &[1, 2]]);
        let y = OutcomeVector(vec![true, true]);
        assert_eq!(map_oracle_decode(&d, &y, &iid).unwrap().estimate, set(&[1]));
        let est = map_oracle_decode(&d, &y, &Prior::Combinatorial { k: 1 }).unwrap();
        assert_eq!(est.estimate, set(&[1]));
        assert!(!est.definite);
    }

    #[test]
    fn map_errors() {
        let big = TestDesign::empty(21);
        assert!(matches!(
            map_oracle_decode(&big, &OutcomeVector(vec![]), &Prior::Iid { p: 0.1 }),
            Err(Error::Capacity { .. })
        ));
        // Positive test with all members excluded by a negative test.
        let d = design(2, &[&[0], &[0]]);
        let y = OutcomeVector(vec![true, false]);
        assert!(matches!(map_oracle_decode(&d, &y, &Prior::Iid { p: 0.1 }), Err(Error::Infeasible)));
        assert!(enumerate_consistent_sets(&d, &y, None).unwrap().is_empty());
        assert!(map_oracle_decode_capped(&TestDesign::empty(5), &OutcomeVector(vec![]), &Prior::Iid { p: 0.1 }, 4).is_err());
    }

    #[test]
    fn dd_stats_examples() {
        let id = identity(3);
        assert_eq!(dd_trial_stats(&id, &set(&[1]), 1).unwrap(), DdTrialStats { w_other: 0, m_i: 1, g: 0 });
        let d = design(3, &[&[0, 1], &[1, 2]]);
        assert_eq!(dd_trial_stats(&d, &set(&[1, 2]), 1).unwrap(), DdTrialStats { w_other: 1, m_i: 1, g: 1 });
        let all = set(&[0, 1, 2]);
        assert_eq!(dd_trial_stats(&d, &all, 0).unwrap().g, 0);
        assert!(dd_trial_stats(&d, &set(&[1]), 0).is_err());
    }

    #[test]
    fn map_beats_every_decoder_exhaustively() {
        let designs = [
            design(4, &[&[0, 1], &[1, 2], &[2, 3]]),
            design(5, &[&[0, 1, 2], &[2, 3], &[3, 4], &[0, 4]]),
            design(3, &[&[0, 1, 2]]),
            design(6, &[&[0, 1], &[2, 3], &[4, 5], &[0, 2, 4], &[1, 3]]),
        ];
        for d in &designs {
            let priors = [Prior::Iid { p: 0.1 }, Prior::Iid { p: 0.5 }, Prior::Combinatorial { k: 1 }];
            for prior in priors {
                let map = exact_success_probability(d, &prior, DecoderKind::Map).unwrap();
                for other in [DecoderKind::Comp, DecoderKind::Dd] {
                    let s = exact_success_probability(d, &prior, other).unwrap();
                    assert!(map >= s - 1e-12, "{prior:?} {other:?}: map {map} < {s}");
                }
            }
        }
    }
}
