//! Instance generation, episode simulation, replication harnesses, and
//! trace output.
//!
//! An [`Instance`] is a ground-truth coefficient plus one context slice
//! per period. [`run_episode`] walks a policy through it, scoring each
//! period against the exact revenue oracle; [`run_replications`] runs
//! independently seeded episodes in parallel and merges them in index
//! order, so results are identical however many threads run.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mnl::{self, Assortment, Coefficient, ContextSlice, InstanceStats};
use crate::opt;
use crate::policy::{EpochUcbState, UcbState};
use crate::randv::sample_unit_vector;

/// Cap on rejection-sampling attempts per feature vector.
const REJECTION_CAP: u64 = 1_000_000;

/// How the per-period item features evolve.
///
/// Serializes as `{"mode": "changing" | "fixed" | "adversarial"}` with an
/// `epsilon` field in adversarial mode only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureModeRaw", into = "FeatureModeRaw")]
pub enum FeatureMode {
    /// Fresh features and revenues every period.
    Changing,
    /// One random slice drawn up front and reused every period.
    Fixed,
    /// A hard instance family: sparse patterns at scale `epsilon`, with
    /// `k` identical copies of each pattern in the catalog.
    Adversarial { epsilon: f64 },
}

// serde skips `deny_unknown_fields` on tagged enums, so strictness is
// enforced through this intermediate struct
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureModeRaw {
    mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
}

impl TryFrom<FeatureModeRaw> for FeatureMode {
    type Error = Error;

    fn try_from(raw: FeatureModeRaw) -> Result<Self> {
        match (raw.mode.as_str(), raw.epsilon) {
            ("changing", None) => Ok(Self::Changing),
            ("fixed", None) => Ok(Self::Fixed),
            ("adversarial", Some(epsilon)) => Ok(Self::Adversarial { epsilon }),
            ("adversarial", None) => {
                Err(Error::Config("adversarial mode requires epsilon".into()))
            }
            (mode @ ("changing" | "fixed"), Some(_)) => Err(Error::Config(format!(
                "epsilon is only valid in adversarial mode, not {mode}"
            ))),
            (other, _) => Err(Error::Config(format!(
                "unknown feature mode {other:?}; expected changing, fixed, or adversarial"
            ))),
        }
    }
}

impl From<FeatureMode> for FeatureModeRaw {
    fn from(mode: FeatureMode) -> Self {
        match mode {
            FeatureMode::Changing => Self { mode: "changing".into(), epsilon: None },
            FeatureMode::Fixed => Self { mode: "fixed".into(), epsilon: None },
            FeatureMode::Adversarial { epsilon } => {
                Self { mode: "adversarial".into(), epsilon: Some(epsilon) }
            }
        }
    }
}

fn default_revenue_range() -> (f64, f64) {
    (0.5, 0.8)
}

fn default_utility_cap() -> f64 {
    500.0
}

/// Ground-truth instance description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    /// Items per period.
    pub n: usize,
    /// Assortment capacity.
    pub k: usize,
    /// Feature dimension.
    pub d: usize,
    /// Periods per episode.
    pub horizon: usize,
    pub feature_mode: FeatureMode,
    /// Revenues are drawn uniformly from this closed range.
    #[serde(default = "default_revenue_range")]
    pub revenue_range: (f64, f64),
    /// Utility exponent clamp handed to consumers of the instance.
    #[serde(default = "default_utility_cap")]
    pub utility_cap: f64,
    /// Master seed for the whole run.
    pub seed: u64,
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let mut out: u128 = 1;
    for j in 1..=k.min(n - k) {
        out = out.saturating_mul((n - j + 1) as u128) / j as u128;
    }
    out
}

impl InstanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 || self.d == 0 || self.horizon == 0 {
            return Err(Error::Config("n, k, d, and horizon must all be >= 1".into()));
        }
        let (lo, hi) = self.revenue_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(
                "revenue_range must satisfy 0 <= lo <= hi <= 1".into(),
            ));
        }
        if !(self.utility_cap > 0.0) {
            return Err(Error::Config("utility_cap must be positive".into()));
        }
        match self.feature_mode {
            FeatureMode::Changing | FeatureMode::Fixed => {
                if self.d < 2 {
                    return Err(Error::Config(
                        "random feature modes need d >= 2".into(),
                    ));
                }
            }
            FeatureMode::Adversarial { epsilon } => {
                if self.d % 4 != 0 {
                    return Err(Error::Config(
                        "adversarial mode needs d divisible by 4".into(),
                    ));
                }
                let df = self.d as f64;
                let limit = 1.0 / (df * df.sqrt());
                if !(epsilon > 0.0 && epsilon < limit) {
                    return Err(Error::Config(format!(
                        "adversarial epsilon must lie in (0, {limit:.6})"
                    )));
                }
                let patterns = binomial(self.d, self.d / 4);
                if patterns > 100_000 {
                    return Err(Error::Config(format!(
                        "adversarial catalog would need {patterns} patterns; lower d"
                    )));
                }
                let needed = (self.k as u128).saturating_mul(patterns);
                if self.n as u128 != needed {
                    return Err(Error::Config(format!(
                        "adversarial mode needs n = k * C(d, d/4) = {needed}, got {}",
                        self.n
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generation counters worth reporting alongside results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub rejection_attempts: u64,
    pub accepted_vectors: u64,
}

impl GeneratorMeta {
    pub fn acceptance_rate(&self) -> Option<f64> {
        if self.rejection_attempts == 0 {
            None
        } else {
            Some(self.accepted_vectors as f64 / self.rejection_attempts as f64)
        }
    }
}

/// The planted structure of an adversarial instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialTruth {
    /// Coordinates carrying the true coefficient's mass.
    pub pattern: Vec<usize>,
    /// Catalog positions of that pattern's copies: the revenue-optimal
    /// assortment every period.
    pub optimal_items: Vec<usize>,
}

enum SliceStore {
    PerPeriod(Vec<ContextSlice>),
    Repeated(ContextSlice),
}

/// A fully materialized instance: the coefficient behind the data and one
/// slice per period.
pub struct Instance {
    config: InstanceConfig,
    theta0: Coefficient,
    slices: SliceStore,
    meta: GeneratorMeta,
    adversarial: Option<AdversarialTruth>,
}

/// One feature vector of norm 2 whose utility under `theta0` is below
/// -0.6, by rejection from the sphere.
fn rejection_feature(
    theta0: &Coefficient,
    rng: &mut ChaCha8Rng,
    meta: &mut GeneratorMeta,
) -> Result<Vec<f64>> {
    let d = theta0.dim();
    for _ in 0..REJECTION_CAP {
        meta.rejection_attempts += 1;
        let v = sample_unit_vector(d, rng) * 2.0;
        if v.dot(theta0.as_vector()) < -0.6 {
            meta.accepted_vectors += 1;
            return Ok(v.iter().copied().collect());
        }
    }
    Err(Error::RejectionCapExceeded(REJECTION_CAP))
}

fn random_slice(
    config: &InstanceConfig,
    theta0: &Coefficient,
    rng: &mut ChaCha8Rng,
    meta: &mut GeneratorMeta,
) -> Result<ContextSlice> {
    let (lo, hi) = config.revenue_range;
    let mut rows = Vec::with_capacity(config.n);
    let mut revenues = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        rows.push(rejection_feature(theta0, rng, meta)?);
        revenues.push(if lo == hi { lo } else { rng.random_range(lo..hi) });
    }
    ContextSlice::from_rows(&rows, revenues)
}

/// All size-`k` subsets of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut combo: Vec<usize> = (0..k).collect();
    loop {
        out.push(combo.clone());
        let mut pos = k;
        while pos > 0 && combo[pos - 1] >= n - k + pos - 1 {
            pos -= 1;
        }
        if pos == 0 {
            return out;
        }
        combo[pos - 1] += 1;
        for q in pos..k {
            combo[q] = combo[q - 1] + 1;
        }
    }
}

impl Instance {
    /// Draws an instance from `rng` under `config`. All randomness comes
    /// from `rng`, so equal seeds give equal instances.
    pub fn generate(config: &InstanceConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut meta = GeneratorMeta { rejection_attempts: 0, accepted_vectors: 0 };
        match config.feature_mode {
            FeatureMode::Changing => {
                let theta0 = Coefficient::from_vector(sample_unit_vector(config.d, rng))?;
                let slices: Vec<ContextSlice> = (0..config.horizon)
                    .map(|_| random_slice(config, &theta0, rng, &mut meta))
                    .collect::<Result<_>>()?;
                Ok(Self {
                    config: config.clone(),
                    theta0,
                    slices: SliceStore::PerPeriod(slices),
                    meta,
                    adversarial: None,
                })
            }
            FeatureMode::Fixed => {
                let theta0 = Coefficient::from_vector(sample_unit_vector(config.d, rng))?;
                let slice = random_slice(config, &theta0, rng, &mut meta)?;
                Ok(Self {
                    config: config.clone(),
                    theta0,
                    slices: SliceStore::Repeated(slice),
                    meta,
                    adversarial: None,
                })
            }
            FeatureMode::Adversarial { epsilon } => {
                let d = config.d;
                let quarter = d / 4;
                // planted pattern: a uniformly random size-d/4 coordinate set
                let mut pool: Vec<usize> = (0..d).collect();
                for i in 0..quarter {
                    let j = rng.random_range(i..d);
                    pool.swap(i, j);
                }
                let mut pattern: Vec<usize> = pool[..quarter].to_vec();
                pattern.sort_unstable();

                let mut theta = vec![0.0; d];
                for &c in &pattern {
                    theta[c] = epsilon;
                }
                let theta0 = Coefficient::new(theta)?;

                let scale = 1.0 / (d as f64).sqrt();
                let mut rows = Vec::with_capacity(config.n);
                let mut optimal_items = Vec::new();
                for (block, subset) in combinations(d, quarter).into_iter().enumerate() {
                    let mut row = vec![0.0; d];
                    for &c in &subset {
                        row[c] = scale;
                    }
                    for copy in 0..config.k {
                        if subset == pattern {
                            optimal_items.push(block * config.k + copy);
                        }
                        rows.push(row.clone());
                    }
                }
                let revenues = vec![1.0; config.n];
                let slice = ContextSlice::from_rows(&rows, revenues)?;
                Ok(Self {
                    config: config.clone(),
                    theta0,
                    slices: SliceStore::Repeated(slice),
                    meta,
                    adversarial: Some(AdversarialTruth { pattern, optimal_items }),
                })
            }
        }
    }

    pub fn config(&self) -> &InstanceConfig {
        &self.config
    }

    pub fn theta0(&self) -> &Coefficient {
        &self.theta0
    }

    pub fn slice_at(&self, period: usize) -> &ContextSlice {
        match &self.slices {
            SliceStore::PerPeriod(v) => &v[period],
            SliceStore::Repeated(s) => s,
        }
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn meta(&self) -> &GeneratorMeta {
        &self.meta
    }

    pub fn adversarial(&self) -> Option<&AdversarialTruth> {
        self.adversarial.as_ref()
    }

    /// Boundedness and conditioning diagnostics for this instance's first
    /// `exploration_horizon` periods.
    pub fn stats(&self, exploration_horizon: usize) -> Result<InstanceStats> {
        let horizon = exploration_horizon.min(self.config.horizon).max(1);
        let slices: Vec<ContextSlice> =
            (0..horizon).map(|t| self.slice_at(t).clone()).collect();
        mnl::instance_stats(&self.theta0, &slices, horizon)
    }
}

/// A sequential decision rule over context slices. `choose` and `observe`
/// alternate strictly, one pair per period.
pub trait AssortmentPolicy: Send {
    fn choose(&mut self, slice: &ContextSlice, rng: &mut ChaCha8Rng) -> Result<Assortment>;
    fn observe(&mut self, purchase: Option<usize>) -> Result<()>;
    fn id(&self) -> String;
    fn fault_count(&self) -> u64 {
        0
    }
}

impl AssortmentPolicy for UcbState {
    fn choose(&mut self, slice: &ContextSlice, rng: &mut ChaCha8Rng) -> Result<Assortment> {
        UcbState::choose(self, slice, rng)
    }

    fn observe(&mut self, purchase: Option<usize>) -> Result<()> {
        UcbState::observe(self, purchase)
    }

    fn id(&self) -> String {
        "mle-ucb".into()
    }

    fn fault_count(&self) -> u64 {
        UcbState::fault_count(self)
    }
}

impl AssortmentPolicy for EpochUcbState {
    fn choose(&mut self, slice: &ContextSlice, rng: &mut ChaCha8Rng) -> Result<Assortment> {
        EpochUcbState::choose(self, slice, rng)
    }

    fn observe(&mut self, purchase: Option<usize>) -> Result<()> {
        EpochUcbState::observe(self, purchase)
    }

    fn id(&self) -> String {
        "epoch-ucb".into()
    }

    fn fault_count(&self) -> u64 {
        EpochUcbState::fault_count(self)
    }
}

/// Clairvoyant policy: offers the exact revenue maximizer under the true
/// coefficient. Its regret is zero up to floating-point noise.
pub struct OraclePolicy {
    theta0: Coefficient,
    capacity: usize,
}

impl OraclePolicy {
    pub fn new(theta0: Coefficient, capacity: usize) -> Self {
        Self { theta0, capacity }
    }
}

impl AssortmentPolicy for OraclePolicy {
    fn choose(&mut self, slice: &ContextSlice, _rng: &mut ChaCha8Rng) -> Result<Assortment> {
        Ok(opt::exact_revenue_oracle(&self.theta0, slice, self.capacity)?.assortment)
    }

    fn observe(&mut self, _purchase: Option<usize>) -> Result<()> {
        Ok(())
    }

    fn id(&self) -> String {
        "oracle".into()
    }
}

/// One period of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodRecord {
    /// 1-based period index.
    pub period: usize,
    pub assortment: Assortment,
    pub purchase: Option<usize>,
    /// Expected revenue of the offered set under the true coefficient.
    pub expected_revenue: f64,
    /// Expected revenue of the period's exact optimum.
    pub oracle_revenue: f64,
    pub instant_regret: f64,
    pub cumulative_regret: f64,
}

/// A complete episode: per-period records plus policy accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub policy: String,
    pub replication: u64,
    pub faults: u64,
    pub records: Vec<PeriodRecord>,
}

impl EpisodeTrace {
    pub fn final_regret(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cumulative_regret)
    }
}

/// Runs `policy` through the instance, sampling purchases under the true
/// coefficient from `rng` and scoring regret against the exact per-period
/// oracle.
pub fn run_episode(
    instance: &Instance,
    policy: &mut dyn AssortmentPolicy,
    replication: u64,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeTrace> {
    let theta0 = instance.theta0();
    let k = instance.config().k;
    let fixed_slices = matches!(instance.slices, SliceStore::Repeated(_));
    let mut cached_oracle: Option<f64> = None;
    let mut records = Vec::with_capacity(instance.horizon());
    let mut cumulative = 0.0;
    for t in 0..instance.horizon() {
        let slice = instance.slice_at(t);
        let assortment = policy.choose(slice, rng)?;
        let purchase = if assortment.is_empty() {
            None
        } else {
            mnl::sample_purchase(theta0, slice, &assortment, rng)?
        };
        policy.observe(purchase)?;

        let oracle_revenue = match (fixed_slices, cached_oracle) {
            (true, Some(v)) => v,
            _ => {
                let v = opt::exact_revenue_oracle(theta0, slice, k)?.objective;
                if fixed_slices {
                    cached_oracle = Some(v);
                }
                v
            }
        };
        let expected = mnl::expected_revenue(theta0, slice, &assortment)?;
        let instant = oracle_revenue - expected;
        cumulative += instant;
        records.push(PeriodRecord {
            period: t + 1,
            assortment,
            purchase,
            expected_revenue: expected,
            oracle_revenue,
            instant_regret: instant,
            cumulative_regret: cumulative,
        });
    }
    Ok(EpisodeTrace {
        policy: policy.id(),
        replication,
        faults: policy.fault_count(),
        records,
    })
}

/// The per-replication RNG: the master seed selects the run, the stream
/// index selects the replication, so replications are independent and any
/// execution order yields the same traces.
pub fn replication_rng(master_seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replication + 1);
    rng
}

/// Generates one instance per replication and runs a fresh policy through
/// it, in parallel, merged in replication order.
pub fn run_replications<F>(
    config: &InstanceConfig,
    policy_factory: F,
    replications: u64,
) -> Result<Vec<EpisodeTrace>>
where
    F: Fn(&Instance) -> Result<Box<dyn AssortmentPolicy>> + Sync,
{
    if replications == 0 {
        return Err(Error::Config("need at least one replication".into()));
    }
    config.validate()?;
    (0..replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replication_rng(config.seed, rep);
            let instance = Instance::generate(config, &mut rng)?;
            let mut policy = policy_factory(&instance)?;
            run_episode(&instance, policy.as_mut(), rep, &mut rng)
        })
        .collect()
}

/// Mean, standard error, and range of cumulative regret per period across
/// replications.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub period: usize,
    pub mean: f64,
    pub stderr: f64,
    pub min: f64,
    pub max: f64,
}

pub fn aggregate_cumulative_regret(traces: &[EpisodeTrace]) -> Result<Vec<AggregateRow>> {
    if traces.is_empty() {
        return Err(Error::Invalid("nothing to aggregate".into()));
    }
    let horizon = traces[0].records.len();
    if traces.iter().any(|t| t.records.len() != horizon) {
        return Err(Error::Invalid("traces have unequal horizons".into()));
    }
    let reps = traces.len() as f64;
    let mut rows = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let values: Vec<f64> = traces.iter().map(|tr| tr.records[t].cumulative_regret).collect();
        let mean = values.iter().sum::<f64>() / reps;
        let stderr = if values.len() < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (reps - 1.0);
            (var / reps).sqrt()
        };
        rows.push(AggregateRow {
            period: t + 1,
            mean,
            stderr,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    }
    Ok(rows)
}

/// Nine significant digits, scientific: enough to reconstruct doubles for
/// comparison while keeping output byte-stable.
pub fn fmt_g9(x: f64) -> String {
    format!("{x:.8e}")
}

/// `period,assortment,purchase,inst_regret,cum_regret` rows; assortment
/// items are `;`-joined and a no-purchase period writes `-1`.
pub fn write_trace_csv<W: Write>(out: &mut W, trace: &EpisodeTrace) -> Result<()> {
    writeln!(out, "period,assortment,purchase,inst_regret,cum_regret")?;
    for r in &trace.records {
        let items: Vec<String> = r.assortment.items().iter().map(|i| i.to_string()).collect();
        let purchase = r.purchase.map_or(-1i64, |p| p as i64);
        writeln!(
            out,
            "{},{},{},{},{}",
            r.period,
            items.join(";"),
            purchase,
            fmt_g9(r.instant_regret),
            fmt_g9(r.cumulative_regret)
        )?;
    }
    Ok(())
}

pub fn write_aggregate_csv<W: Write>(out: &mut W, rows: &[AggregateRow]) -> Result<()> {
    writeln!(out, "period,mean_cum_regret,stderr_cum_regret,min_cum_regret,max_cum_regret")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.period,
            fmt_g9(r.mean),
            fmt_g9(r.stderr),
            fmt_g9(r.min),
            fmt_g9(r.max)
        )?;
    }
    Ok(())
}

/// Everything a reader needs to reproduce or interpret one episode's
/// trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config: InstanceConfig,
    pub replication: u64,
    pub policy: String,
    pub faults: u64,
    pub theta0: Vec<f64>,
    pub feature_acceptance_rate: Option<f64>,
    pub adversarial: Option<AdversarialTruth>,
}

impl RunMetadata {
    pub fn for_run(instance: &Instance, trace: &EpisodeTrace) -> Self {
        Self {
            config: instance.config().clone(),
            replication: trace.replication,
            policy: trace.policy.clone(),
            faults: trace.faults,
            theta0: instance.theta0().to_vec(),
            feature_acceptance_rate: instance.meta().acceptance_rate(),
            adversarial: instance.adversarial().cloned(),
        }
    }
}

pub fn write_metadata_json<W: Write>(out: &mut W, meta: &RunMetadata) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, meta)
        .map_err(|e| Error::Config(format!("metadata serialization failed: {e}")))?;
    writeln!(out)?;
    Ok(())
}

/// Solver-quality measurement: replay the adaptive policy to a chosen
/// period, capture the subproblem it is about to solve, and compare its
/// own solver's answer to exhaustive enumeration.
#[derive(Debug, Clone)]
pub struct QualityReport {
    /// One relative optimality gap per replication, in replication order.
    pub gaps: Vec<f64>,
    pub mean_gap: f64,
    /// `(percentile, gap)` pairs by the nearest-rank rule.
    pub percentile_gaps: Vec<(f64, f64)>,
}

fn nearest_rank(sorted: &[f64], percentile: f64) -> f64 {
    let n = sorted.len();
    let rank = ((percentile / 100.0) * n as f64).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

pub fn greedy_quality_experiment<F>(
    config: &InstanceConfig,
    policy_factory: F,
    harvest_period: usize,
    replications: u64,
    percentiles: &[f64],
) -> Result<QualityReport>
where
    F: Fn(&Instance) -> Result<UcbState> + Sync,
{
    if harvest_period == 0 || harvest_period > config.horizon {
        return Err(Error::Config(
            "harvest_period must lie in 1..=horizon".into(),
        ));
    }
    if replications == 0 {
        return Err(Error::Config("need at least one replication".into()));
    }
    config.validate()?;
    let gaps: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replication_rng(config.seed, rep);
            let instance = Instance::generate(config, &mut rng)?;
            let mut state = policy_factory(&instance)?;
            for t in 0..harvest_period - 1 {
                let slice = instance.slice_at(t);
                let s = UcbState::choose(&mut state, slice, &mut rng)?;
                let purchase = if s.is_empty() {
                    None
                } else {
                    mnl::sample_purchase(instance.theta0(), slice, &s, &mut rng)?
                };
                UcbState::observe(&mut state, purchase)?;
            }
            if state.is_exploring() {
                return Err(Error::Config(format!(
                    "harvest period {harvest_period} still lies in exploration"
                )));
            }
            let slice = instance.slice_at(harvest_period - 1);
            let sub = state.exploitation_subproblem(slice)?;
            UcbState::choose(&mut state, slice, &mut rng)?;
            let solver_obj = state
                .last_report()
                .expect("exploitation choose stores a report")
                .objective;
            let brute = opt::brute_force(&sub)?;
            // the solver cannot beat enumeration; tiny negatives are noise
            let gap = if brute.objective > 1e-300 {
                ((brute.objective - solver_obj) / brute.objective).max(0.0)
            } else {
                0.0
            };
            Ok(gap)
        })
        .collect::<Result<_>>()?;
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let mut sorted = gaps.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let percentile_gaps = percentiles
        .iter()
        .map(|&p| (p, nearest_rank(&sorted, p)))
        .collect();
    Ok(QualityReport { gaps, mean_gap, percentile_gaps })
}
