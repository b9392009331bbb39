//! Monte Carlo experiments: threshold sweeps, the converse experiment and
//! the large-negative-test statistic, with CSV and JSON output.
//!
//! Every random draw comes from a stream keyed on `(master_seed, index,
//! purpose)`, and per-trial results are combined with commutative integer
//! sums, so the emitted bytes do not depend on the number of threads.
//! Trial `t` uses the same streams at every grid point (common random
//! numbers), which keeps neighbouring points of a sweep comparable.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoders::{comp_decode, decode, dd_decode, DecoderKind};
use crate::designs::{bernoulli_design, individual_design, near_constant_design, DesignKind, DEFAULT_BERNOULLI_NU};
use crate::disguise::{construct_set, disguised_items, success_upper_bound, ScoreMode};
use crate::error::{Error, Result};
use crate::model::{run_tests, sample_coupled, sample_coupled_with_prevalence, DefectiveSet, Prior, TestDesign};
use crate::stream::{self, Purpose, Stream};
use crate::thresholds::{c_p_exact, converse_budget, max_negative_test_size, optimal_tests, t_star, DEFAULT_XI};

/// Two-sided 95% normal quantile.
pub const WILSON_Z: f64 = 1.959_963_984_540_054;

pub const CSV_HEADER: [&str; 12] = [
    "n",
    "prior_kind",
    "prior_param",
    "design",
    "decoder",
    "T",
    "trials",
    "successes",
    "success_rate",
    "ci_low",
    "ci_high",
    "master_seed",
];

/// Prior of an experiment. `coupled` draws through the two-step coupled
/// sampler; `p0` overrides its first-step prevalence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PriorConfig {
    Iid {
        p: f64,
    },
    #[serde(alias = "comb")]
    Combinatorial {
        k: usize,
    },
    Coupled {
        k: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p0: Option<f64>,
    },
}

impl PriorConfig {
    pub fn kind_name(&self) -> &'static str {
        match self {
            PriorConfig::Iid { .. } => "iid",
            PriorConfig::Combinatorial { .. } => "combinatorial",
            PriorConfig::Coupled { .. } => "coupled",
        }
    }

    pub fn param_string(&self) -> String {
        match *self {
            PriorConfig::Iid { p } => p.to_string(),
            PriorConfig::Combinatorial { k } | PriorConfig::Coupled { k, .. } => k.to_string(),
        }
    }

    /// The prior the decoders see; the coupled sampler targets uniform k-sets.
    pub fn prior(&self) -> Prior {
        match *self {
            PriorConfig::Iid { p } => Prior::Iid { p },
            PriorConfig::Combinatorial { k } | PriorConfig::Coupled { k, .. } => Prior::Combinatorial { k },
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        self.prior().validate(n)?;
        if let PriorConfig::Coupled { k, p0: None } = *self {
            crate::model::coupled_prevalence(n, k)?;
        }
        Ok(())
    }

    /// Draws a defective set; the flag reports coupled-sampler overflow.
    pub fn sample(&self, n: usize, rng: &mut Stream) -> Result<(DefectiveSet, bool)> {
        match *self {
            PriorConfig::Iid { .. } | PriorConfig::Combinatorial { .. } => Ok((self.prior().sample(n, rng)?, false)),
            PriorConfig::Coupled { k, p0 } => {
                let draw = match p0 {
                    Some(p0) => sample_coupled_with_prevalence(n, k, p0, rng)?,
                    None => sample_coupled(n, k, rng)?,
                };
                Ok((draw.s, draw.overflow))
            }
        }
    }
}

impl std::str::FromStr for PriorConfig {
    type Err = Error;

    /// Accepts `iid:P`, `comb:K` / `combinatorial:K` and `coupled:K`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| Error::param(format!("prior `{s}` must look like iid:P or comb:K")))?;
        let bad = |e: &dyn std::fmt::Display| Error::param(format!("bad prior parameter in `{s}`: {e}"));
        match kind {
            "iid" => Ok(PriorConfig::Iid { p: value.parse().map_err(|e| bad(&e))? }),
            "comb" | "combinatorial" => Ok(PriorConfig::Combinatorial { k: value.parse().map_err(|e| bad(&e))? }),
            "coupled" => Ok(PriorConfig::Coupled { k: value.parse().map_err(|e| bad(&e))?, p0: None }),
            other => Err(Error::param(format!("unknown prior kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    pub kind: DesignKind,
    /// Bernoulli density; inclusion probability is `nu / k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    /// Sparsity the design is tuned for; defaults to the prior's mean count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    /// Matrix file for `kind = file`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl DesignConfig {
    pub fn new(kind: DesignKind) -> Self {
        Self { kind, nu: None, k: None, path: None }
    }
}

/// One test budget or an increasing grid of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TValues {
    Single(usize),
    Grid(Vec<usize>),
}

impl TValues {
    pub fn values(&self) -> Vec<usize> {
        match self {
            TValues::Single(t) => vec![*t],
            TValues::Grid(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::param(format!("unknown output format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub prior: PriorConfig,
    pub design: DesignConfig,
    pub decoder: DecoderKind,
    #[serde(alias = "T")]
    pub t_values: TValues,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
    /// Reuse one design per grid point instead of drawing one per trial.
    #[serde(default)]
    pub fixed_design: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::input(format!("invalid experiment config: {e}")))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })?;
        Self::from_json(&text)
    }

    /// Sparsity used to tune the design.
    pub fn design_k(&self) -> f64 {
        self.design.k.unwrap_or_else(|| self.prior.prior().mean_defectives(self.n))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::param("n must be at least 1"));
        }
        if self.trials < 1 {
            return Err(Error::param("trials must be at least 1"));
        }
        self.prior.validate(self.n)?;
        let grid = self.t_values.values();
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("T grid must be strictly increasing"));
        }
        if let Some(xi) = self.xi {
            if !(xi > 0.0 && xi <= 0.25) {
                return Err(Error::param(format!("xi = {xi} must lie in (0, 1/4]")));
            }
        }
        if let Some(eps) = self.epsilon {
            if !(0.0..1.0).contains(&eps) {
                return Err(Error::param(format!("epsilon = {eps} must lie in [0, 1)")));
            }
        }
        let k = self.design_k();
        let positive_t = grid.iter().any(|&t| t > 0);
        match self.design.kind {
            DesignKind::Ncc if positive_t && !(k >= 1.0) => {
                return Err(Error::param(format!("near-constant design needs k >= 1, got {k}")));
            }
            DesignKind::Bernoulli if positive_t => {
                let rho = self.design.nu.unwrap_or(DEFAULT_BERNOULLI_NU) / k;
                if !(rho > 0.0 && rho <= 1.0) {
                    return Err(Error::param(format!("Bernoulli inclusion probability nu/k = {rho} must lie in (0, 1]")));
                }
            }
            DesignKind::Individual => {
                if let Some(&t) = grid.iter().find(|&&t| t != 0 && t != self.n) {
                    return Err(Error::param(format!("individual design has T = n = {}, got T = {t}", self.n)));
                }
            }
            DesignKind::File if self.design.path.is_none() => {
                return Err(Error::param("design kind `file` needs a path"));
            }
            _ => {}
        }
        Ok(())
    }
}

/// A validated config with any design file loaded.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    file_design: Option<TestDesign>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let file_design = match (&config.design.kind, &config.design.path) {
            (DesignKind::File, Some(path)) => {
                let d = TestDesign::read_matrix(path)?;
                if d.num_items() != config.n {
                    return Err(Error::param(format!("design file has n = {}, config has n = {}", d.num_items(), config.n)));
                }
                if let Some(&t) = config.t_values.values().iter().find(|&&t| t != d.num_tests()) {
                    return Err(Error::param(format!("design file has T = {}, config asks for T = {t}", d.num_tests())));
                }
                Some(d)
            }
            _ => None,
        };
        Ok(Self { config, file_design })
    }

    /// Builds the design for `T` tests; `T = 0` gives the empty design.
    pub fn build_design(&self, num_tests: usize, rng: &mut Stream) -> Result<TestDesign> {
        let c = &self.config;
        if let Some(d) = &self.file_design {
            return Ok(d.clone());
        }
        if num_tests == 0 {
            return Ok(TestDesign::empty(c.n));
        }
        match c.design.kind {
            DesignKind::Ncc => near_constant_design(c.n, num_tests, c.design_k(), rng),
            DesignKind::Bernoulli => {
                bernoulli_design(c.n, num_tests, c.design_k(), c.design.nu.unwrap_or(DEFAULT_BERNOULLI_NU), rng)
            }
            DesignKind::Individual => individual_design(c.n),
            DesignKind::File => Err(Error::param("design kind `file` needs a path")),
        }
    }

    fn fixed_design(&self, num_tests: usize) -> Result<Option<TestDesign>> {
        if !self.config.fixed_design {
            return Ok(None);
        }
        let mut rng = stream::derive(self.config.master_seed, num_tests as u64, Purpose::FixedDesign);
        self.build_design(num_tests, &mut rng).map(Some)
    }

    /// One trial at `T` tests.
    pub fn run_trial(&self, num_tests: usize, trial: u64) -> Result<TrialOutcome> {
        let fixed = self.fixed_design(num_tests)?;
        self.run_trial_with(num_tests, trial, fixed.as_ref())
    }

    fn run_trial_with(&self, num_tests: usize, trial: u64, fixed: Option<&TestDesign>) -> Result<TrialOutcome> {
        let c = &self.config;
        let mut prior_rng = stream::derive(c.master_seed, trial, Purpose::Prior);
        let (s, overflow) = c.prior.sample(c.n, &mut prior_rng)?;
        let owned;
        let design = match fixed {
            Some(d) => d,
            None => {
                let mut design_rng = stream::derive(c.master_seed, trial, Purpose::Design);
                owned = self.build_design(num_tests, &mut design_rng)?;
                &owned
            }
        };
        let outcomes = run_tests(design, &s)?;
        let comp = comp_decode(design, &outcomes)?;
        let dd = dd_decode(design, &outcomes)?;
        if !dd.estimate.is_subset(&s) || !s.is_subset(&comp.estimate) {
            return Err(Error::InvariantViolation(format!("decoder sandwich broken in trial {trial} at T = {num_tests}")));
        }
        let estimate = match c.decoder {
            DecoderKind::Comp => comp.estimate,
            DecoderKind::Dd => dd.estimate,
            DecoderKind::Map => decode(DecoderKind::Map, design, &outcomes, &c.prior.prior())?.estimate,
        };
        Ok(TrialOutcome { success: overflow || estimate == s, overflow, defectives: s.len() })
    }

    /// Success counts at one grid point, summed over trials in parallel.
    pub fn run_point(&self, num_tests: usize) -> Result<SweepRow> {
        let fixed = self.fixed_design(num_tests)?;
        let trials = self.config.trials;
        let (successes, overflows) = (0..trials as u64)
            .into_par_iter()
            .map(|t| self.run_trial_with(num_tests, t, fixed.as_ref()).map(|o| (o.success as usize, o.overflow as usize)))
            .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
        Ok(SweepRow::new(num_tests, trials, successes, overflows))
    }

    pub fn sweep(&self) -> Result<SweepResult> {
        let rows = self.config.t_values.values().into_iter().map(|t| self.run_point(t)).collect::<Result<Vec<_>>>()?;
        let c = &self.config;
        Ok(SweepResult {
            n: c.n,
            prior_kind: c.prior.kind_name().into(),
            prior_param: c.prior.param_string(),
            design: c.design.kind.name().into(),
            decoder: c.decoder.name().into(),
            master_seed: c.master_seed,
            crossing_estimate: crossing(&rows),
            overlays: overlays(c),
            rows,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub success: bool,
    pub overflow: bool,
    pub defectives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "T")]
    pub t: usize,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Coupled-sampler overflows, already counted as successes.
    pub overflows: usize,
}

impl SweepRow {
    pub fn new(t: usize, trials: usize, successes: usize, overflows: usize) -> Self {
        let (ci_low, ci_high) = wilson_interval(successes, trials);
        Self { t, trials, successes, success_rate: successes as f64 / trials as f64, ci_low, ci_high, overflows }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Overlays {
    pub t_star: Option<f64>,
    pub optimal_tests: Option<f64>,
    pub converse_budget: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub n: usize,
    pub prior_kind: String,
    pub prior_param: String,
    pub design: String,
    pub decoder: String,
    pub master_seed: u64,
    pub rows: Vec<SweepRow>,
    pub overlays: Overlays,
    /// `T` at which the success rate first reaches 1/2, interpolated
    /// linearly; absent when the grid does not bracket 1/2.
    pub crossing_estimate: Option<f64>,
}

/// Wilson score interval at 95%, clamped so it contains the point estimate.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let m = trials as f64;
    let rate = successes as f64 / m;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / m;
    let center = (rate + z2 / (2.0 * m)) / denom;
    let half = WILSON_Z / denom * (rate * (1.0 - rate) / m + z2 / (4.0 * m * m)).sqrt();
    ((center - half).max(0.0).min(rate), (center + half).min(1.0).max(rate))
}

/// First grid position where the success rate reaches 1/2 from below.
pub fn crossing(rows: &[SweepRow]) -> Option<f64> {
    if let Some(first) = rows.first() {
        if first.success_rate == 0.5 {
            return Some(first.t as f64);
        }
    }
    rows.windows(2).find_map(|w| {
        let (a, b) = (&w[0], &w[1]);
        if a.success_rate < 0.5 && b.success_rate >= 0.5 {
            let frac = (0.5 - a.success_rate) / (b.success_rate - a.success_rate);
            Some(a.t as f64 + frac * (b.t as f64 - a.t as f64))
        } else {
            None
        }
    })
}

fn overlays(c: &ExperimentConfig) -> Overlays {
    let n = c.n as f64;
    let k = c.prior.prior().mean_defectives(c.n);
    let converse = match c.prior {
        PriorConfig::Iid { p } => c_p_exact(p, c.n.max(2))
            .and_then(|cp| converse_budget(n, p, c.xi.unwrap_or(DEFAULT_XI), cp))
            .ok(),
        _ => None,
    };
    Overlays { t_star: t_star(n, k).ok(), optimal_tests: optimal_tests(n, k).ok(), converse_budget: converse }
}

/// Runs every grid point of `config` on a pool of `threads` workers
/// (all cores when `None`).
pub fn sweep(config: &ExperimentConfig, threads: Option<usize>) -> Result<SweepResult> {
    let experiment = Experiment::new(config.clone())?;
    with_threads(threads, || experiment.sweep())
}

/// Runs `f` inside a dedicated rayon pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::param("thread count must be at least 1"));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::InvariantViolation(format!("thread pool: {e}")))?;
    pool.install(f)
}

/// Base a relative T grid is scaled by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelativeTo {
    Tstar,
    N,
    Abs,
}

impl std::str::FromStr for RelativeTo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tstar" => Ok(RelativeTo::Tstar),
            "n" => Ok(RelativeTo::N),
            "abs" => Ok(RelativeTo::Abs),
            other => Err(Error::param(format!("unknown grid base `{other}`"))),
        }
    }
}

/// Expands `LO:HI:STEP` into test counts `ceil(x * base)` for
/// `x = LO, LO + STEP, ...` up to `HI`, with repeats dropped.
pub fn parse_t_grid(spec: &str, base: f64) -> Result<Vec<usize>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, step] = parts.as_slice() else {
        return Err(Error::param(format!("grid `{spec}` must look like LO:HI:STEP")));
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::param(format!("bad grid value `{s}`: {e}")));
    let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
    if !(lo >= 0.0 && hi >= lo && step > 0.0) {
        return Err(Error::param(format!("grid `{spec}` needs 0 <= LO <= HI and STEP > 0")));
    }
    if !(base > 0.0 && base.is_finite()) {
        return Err(Error::param(format!("grid base {base} must be positive")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    let mut out: Vec<usize> = Vec::with_capacity(count);
    for i in 0..count {
        // Round away float dust before the ceiling so 1.1 * 100 gives 110.
        let scaled = ((lo + i as f64 * step) * base * 1e9).round() / 1e9;
        let t = scaled.ceil() as usize;
        if out.last().is_none_or(|&last| t > last) {
            out.push(t);
        }
    }
    Ok(out)
}

/// Grid base for a config: `t_star` for its prior mean, `n`, or 1.
pub fn grid_base(relative_to: RelativeTo, n: usize, prior: &PriorConfig) -> Result<f64> {
    match relative_to {
        RelativeTo::Tstar => t_star(n as f64, prior.prior().mean_defectives(n)),
        RelativeTo::N => Ok(n as f64),
        RelativeTo::Abs => Ok(1.0),
    }
}

pub fn to_csv(result: &SweepResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let ser = |e: csv::Error| Error::Serialization(e.to_string());
    w.write_record(CSV_HEADER).map_err(ser)?;
    for row in &result.rows {
        w.write_record([
            result.n.to_string(),
            result.prior_kind.clone(),
            result.prior_param.clone(),
            result.design.clone(),
            result.decoder.clone(),
            row.t.to_string(),
            row.trials.to_string(),
            row.successes.to_string(),
            row.success_rate.to_string(),
            row.ci_low.to_string(),
            row.ci_high.to_string(),
            result.master_seed.to_string(),
        ])
        .map_err(ser)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serialization(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Serialization(e.to_string()))
}

pub fn render(result: &SweepResult, format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Csv => to_csv(result),
        OutputFormat::Json => to_json(result).map(|s| s + "\n"),
    }
}

/// Writes a sweep result to `path` in the given format.
pub fn emit(result: &SweepResult, format: OutputFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = render(result, format)?;
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.into(), source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConverseConfig {
    pub n: usize,
    pub p: f64,
    pub design: DesignConfig,
    #[serde(rename = "T")]
    pub num_tests: usize,
    pub trials: usize,
    pub master_seed: u64,
    pub xi: f64,
    /// The run is refused unless `T <= (1 - epsilon) n`.
    pub epsilon: f64,
    #[serde(default)]
    pub score_mode: ScoreMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConverseTrial {
    pub w_size: usize,
    pub disguised_in_w: usize,
    pub defective_disguised_in_w: bool,
    pub success_upper_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConverseReport {
    pub n: usize,
    pub p: f64,
    #[serde(rename = "T")]
    pub num_tests: usize,
    pub trials: usize,
    pub xi: f64,
    /// `n^xi / 2`, the count of disguised items expected in W.
    pub n_min: f64,
    pub mean_success_upper_bound: f64,
    pub mean_w_size: f64,
    pub mean_disguised_in_w: f64,
    /// Fraction of trials with a defective, totally disguised member of W.
    pub freq_defective_disguised_in_w: f64,
    pub per_trial: Vec<ConverseTrial>,
}

/// Per trial: draws a design and an i.i.d. defective set, builds W with
/// [`construct_set`], and counts members of W that are totally disguised
/// with respect to the design without its very-present items.
pub fn converse_experiment(config: &ConverseConfig) -> Result<ConverseReport> {
    let c = config;
    if c.trials < 1 {
        return Err(Error::param("trials must be at least 1"));
    }
    if !(c.epsilon >= 0.0 && c.epsilon < 1.0) {
        return Err(Error::param(format!("epsilon = {} must lie in [0, 1)", c.epsilon)));
    }
    if c.num_tests as f64 > (1.0 - c.epsilon) * c.n as f64 {
        return Err(Error::param(format!(
            "converse experiment needs T <= (1 - epsilon) n = {}, got T = {}",
            (1.0 - c.epsilon) * c.n as f64,
            c.num_tests
        )));
    }
    let experiment = Experiment::new(ExperimentConfig {
        n: c.n,
        prior: PriorConfig::Iid { p: c.p },
        design: c.design.clone(),
        decoder: DecoderKind::Dd,
        t_values: TValues::Single(c.num_tests),
        trials: c.trials,
        master_seed: c.master_seed,
        xi: None,
        epsilon: Some(c.epsilon),
        output: None,
        fixed_design: false,
    })?;
    let prior = Prior::Iid { p: c.p };
    let per_trial = (0..c.trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<ConverseTrial> {
            let design = experiment.build_design(c.num_tests, &mut stream::derive(c.master_seed, trial, Purpose::Design))?;
            let s = prior.sample(c.n, &mut stream::derive(c.master_seed, trial, Purpose::Prior))?;
            let extraction = construct_set(&design, c.p, c.xi, c.score_mode)?;
            let flags = disguised_items(&extraction.reference_design(&design), &s)?;
            let disguised: Vec<usize> = extraction.w.iter().copied().filter(|&i| flags[i]).collect();
            Ok(ConverseTrial {
                w_size: extraction.w.len(),
                disguised_in_w: disguised.len(),
                defective_disguised_in_w: disguised.iter().any(|&i| s.contains(i)),
                success_upper_bound: success_upper_bound(disguised.len(), c.p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let m = c.trials as f64;
    let mean = |f: &dyn Fn(&ConverseTrial) -> f64| per_trial.iter().map(f).sum::<f64>() / m;
    Ok(ConverseReport {
        n: c.n,
        p: c.p,
        num_tests: c.num_tests,
        trials: c.trials,
        xi: c.xi,
        n_min: 0.5 * (c.n as f64).powf(c.xi),
        mean_success_upper_bound: mean(&|t| t.success_upper_bound),
        mean_w_size: mean(&|t| t.w_size as f64),
        mean_disguised_in_w: mean(&|t| t.disguised_in_w as f64),
        freq_defective_disguised_in_w: mean(&|t| f64::from(u8::from(t.defective_disguised_in_w))),
        per_trial,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeTestReport {
    pub n: usize,
    #[serde(rename = "T")]
    pub num_tests: usize,
    pub p: f64,
    pub trials: usize,
    /// `z ln n`.
    pub threshold: f64,
    /// Trials with a negative test holding more than `threshold` items.
    pub exceedances: usize,
    pub frequency: f64,
    pub largest_negative_test: usize,
}

/// Frequency of a negative test larger than `z ln n` under the i.i.d. prior.
pub fn negative_test_experiment(
    n: usize,
    num_tests: usize,
    p: f64,
    design: DesignConfig,
    trials: usize,
    master_seed: u64,
) -> Result<NegativeTestReport> {
    let threshold = max_negative_test_size(p, n)?;
    let experiment = Experiment::new(ExperimentConfig {
        n,
        prior: PriorConfig::Iid { p },
        design,
        decoder: DecoderKind::Dd,
        t_values: TValues::Single(num_tests),
        trials,
        master_seed,
        xi: None,
        epsilon: None,
        output: None,
        fixed_design: false,
    })?;
    let (exceedances, largest) = (0..trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<(usize, usize)> {
            let d = experiment.build_design(num_tests, &mut stream::derive(master_seed, trial, Purpose::Design))?;
            let s = Prior::Iid { p }.sample(n, &mut stream::derive(master_seed, trial, Purpose::Prior))?;
            let outcomes = run_tests(&d, &s)?;
            let biggest = (0..d.num_tests()).filter(|&t| !outcomes.0[t]).map(|t| d.test_size(t)).max().unwrap_or(0);
            Ok((usize::from(biggest as f64 > threshold), biggest))
        })
        .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1.max(b.1))))?;
    Ok(NegativeTestReport {
        n,
        num_tests,
        p,
        trials,
        threshold,
        exceedances,
        frequency: exceedances as f64 / trials as f64,
        largest_negative_test: largest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(kind: DesignKind, prior: PriorConfig, decoder: DecoderKind, t: TValues) -> ExperimentConfig {
        ExperimentConfig {
            n: 60,
            prior,
            design: DesignConfig::new(kind),
            decoder,
            t_values: t,
            trials: 50,
            master_seed: 7,
            xi: None,
            epsilon: None,
            output: None,
            fixed_design: false,
        }
    }

    #[test]
    fn individual_dd_always_succeeds() {
        let mut c = config(DesignKind::Individual, PriorConfig::Iid { p: 0.1 }, DecoderKind::Dd, TValues::Single(60));
        c.trials = 200;
        let r = sweep(&c, Some(2)).unwrap();
        assert_eq!(r.rows[0].successes, 200);
    }

    #[test]
    fn zero_tests_fail_like_a_guess() {
        // With no tests, COMP declares everything and DD nothing.
        let c = config(DesignKind::Ncc, PriorConfig::Combinatorial { k: 3 }, DecoderKind::Dd, TValues::Single(0));
        assert_eq!(sweep(&c, Some(1)).unwrap().rows[0].successes, 0);
        let c = config(DesignKind::Ncc, PriorConfig::Iid { p: 0.1 }, DecoderKind::Comp, TValues::Single(0));
        let rate = sweep(&c, Some(1)).unwrap().rows[0].success_rate;
        // Failure rate is at least 1 - max prior mass = 1 - 0.9^60.
        assert!(1.0 - rate >= 1.0 - 0.9f64.powi(60));
    }

    #[test]
    fn trial_is_deterministic() {
        let c = config(DesignKind::Bernoulli, PriorConfig::Combinatorial { k: 4 }, DecoderKind::Dd, TValues::Single(30));
        let e = Experiment::new(c).unwrap();
        for t in 0..20 {
            assert_eq!(e.run_trial(30, t).unwrap(), e.run_trial(30, t).unwrap());
        }
    }

    #[test]
    fn single_point_single_trial() {
        let mut c = config(DesignKind::Ncc, PriorConfig::Combinatorial { k: 2 }, DecoderKind::Comp, TValues::Single(20));
        c.trials = 1;
        let r = sweep(&c, Some(1)).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].trials, 1);
    }

    #[test]
    fn csv_is_thread_independent() {
        let c = config(DesignKind::Ncc, PriorConfig::Combinatorial { k: 5 }, DecoderKind::Dd, TValues::Grid(vec![10, 20, 30, 40]));
        let a = to_csv(&sweep(&c, Some(1)).unwrap()).unwrap();
        let b = to_csv(&sweep(&c, Some(4)).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fixed_design_is_reused() {
        let mut c = config(DesignKind::Ncc, PriorConfig::Combinatorial { k: 5 }, DecoderKind::Dd, TValues::Single(25));
        c.fixed_design = true;
        let e = Experiment::new(c).unwrap();
        let a = e.fixed_design(25).unwrap().unwrap();
        let b = e.fixed_design(25).unwrap().unwrap();
        assert_eq!(a, b);
        e.run_point(25).unwrap();
    }

    #[test]
    fn map_decoder_runs() {
        let mut c = config(DesignKind::Ncc, PriorConfig::Combinatorial { k: 2 }, DecoderKind::Map, TValues::Single(12));
        c.n = 12;
        let r = sweep(&c, Some(1)).unwrap();
        assert!(r.rows[0].success_rate > 0.0);
    }

    #[test]
    fn coupled_prior_counts_overflow() {
        let mut c = config(
            DesignKind::Ncc,
            PriorConfig::Coupled { k: 3, p0: Some(0.3) },
            DecoderKind::Dd,
            TValues::Single(1),
        );
        c.n = 6;
        c.trials = 500;
        let r = sweep(&c, Some(1)).unwrap();
        assert!(r.rows[0].overflows > 0);
        assert!(r.rows[0].successes >= r.rows[0].overflows);
    }

    #[test]
    fn config_validation() {
        let base = config(DesignKind::Ncc, PriorConfig::Combinatorial { k: 5 }, DecoderKind::Dd, TValues::Single(10));
        let mut c = base.clone();
        c.trials = 0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.t_values = TValues::Grid(vec![10, 10]);
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.design.kind = DesignKind::Individual;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.prior = PriorConfig::Combinatorial { k: 31 };
        assert!(c.validate().is_err());
        let mut c = base;
        c.design.kind = DesignKind::File;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_field_names() {
        let text = r#"{"n": 50, "prior": {"kind": "iid", "p": 0.1}, "design": {"kind": "ncc"},
            "decoder": "dd", "T": [10, 20], "trials": 5, "master_seed": 3}"#;
        let c = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(c.t_values, TValues::Grid(vec![10, 20]));
        assert_eq!(ExperimentConfig::from_json(&to_json(&c).unwrap()).unwrap(), c);
        assert!(ExperimentConfig::from_json(r#"{"n": 5}"#).is_err());
    }

    #[test]
    fn prior_strings() {
        assert_eq!("iid:0.2".parse::<PriorConfig>().unwrap(), PriorConfig::Iid { p: 0.2 });
        assert_eq!("comb:4".parse::<PriorConfig>().unwrap(), PriorConfig::Combinatorial { k: 4 });
        assert!("poisson:3".parse::<PriorConfig>().is_err());
        assert!("iid".parse::<PriorConfig>().is_err());
    }

    #[test]
    fn wilson_known_values() {
        let (lo, hi) = wilson_interval(50, 100);
        assert!((lo - 0.403_831_4).abs() < 1e-6 && (hi - 0.596_168_6).abs() < 1e-6, "{lo} {hi}");
        let (lo, hi) = wilson_interval(0, 10);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.277_532_4).abs() < 1e-6, "{hi}");
        let (lo, hi) = wilson_interval(10, 10);
        assert_eq!(hi, 1.0);
        assert!((lo - 0.722_467_6).abs() < 1e-6);
    }

    #[test]
    fn crossing_interpolates() {
        let rows = vec![SweepRow::new(10, 10, 0, 0), SweepRow::new(20, 10, 2, 0), SweepRow::new(30, 10, 8, 0)];
        assert!((crossing(&rows).unwrap() - 25.0).abs() < 1e-12);
        assert_eq!(crossing(&rows[..2]), None);
        assert_eq!(crossing(&[SweepRow::new(5, 2, 1, 0)]), Some(5.0));
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_t_grid("0.5:1.5:0.5", 100.0).unwrap(), vec![50, 100, 150]);
        assert_eq!(parse_t_grid("1:1.2:0.1", 100.0).unwrap(), vec![100, 110, 120]);
        assert_eq!(parse_t_grid("10:12:1", 1.0).unwrap(), vec![10, 11, 12]);
        assert_eq!(parse_t_grid("0:0.001:0.0005", 10.0).unwrap(), vec![0, 1]);
        assert!(parse_t_grid("1:2", 1.0).is_err());
        assert!(parse_t_grid("2:1:1", 1.0).is_err());
        assert!(parse_t_grid("1:2:0", 1.0).is_err());
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let r = SweepResult {
            n: 1,
            prior_kind: "iid".into(),
            prior_param: "0.1".into(),
            design: "ncc".into(),
            decoder: "dd".into(),
            master_seed: 0,
            rows: vec![],
            overlays: Overlays::default(),
            crossing_estimate: None,
        };
        assert_eq!(to_csv(&r).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
    }

    #[test]
    fn converse_edge_cases() {
        let base = ConverseConfig {
            n: 40,
            p: 0.2,
            design: DesignConfig::new(DesignKind::Ncc),
            num_tests: 0,
            trials: 5,
            master_seed: 1,
            xi: 0.1,
            epsilon: 0.0,
            score_mode: ScoreMode::ProductBound,
        };
        let r = converse_experiment(&base).unwrap();
        assert!(r.per_trial.iter().all(|t| t.w_size == 40 && t.disguised_in_w == 40));
        assert!((r.mean_success_upper_bound - 0.8f64.powi(40)).abs() < 1e-15);

        let ind = ConverseConfig { design: DesignConfig::new(DesignKind::Individual), num_tests: 40, ..base.clone() };
        let r = converse_experiment(&ind).unwrap();
        assert_eq!(r.mean_success_upper_bound, 1.0);
        assert_eq!(r.mean_w_size, 0.0);

        let too_many = ConverseConfig { num_tests: 39, epsilon: 0.1, ..base };
        assert!(converse_experiment(&too_many).is_err());
    }

    #[test]
    fn negative_test_report_counts() {
        let r = negative_test_experiment(100, 100, 0.3, DesignConfig::new(DesignKind::Bernoulli), 50, 2).unwrap();
        assert_eq!(r.trials, 50);
        assert!(r.exceedances <= 50);
        assert!((r.threshold - 2.0 / (1.0f64 / 0.7).ln() * 100f64.ln()).abs() < 1e-12);
    }
}
