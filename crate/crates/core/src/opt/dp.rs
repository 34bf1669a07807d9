//! Discretized dynamic-programming solvers for the univariate objective,
//! and their lift to several sampled directions.
//!
//! For scalar directions the objective of a set depends only on four sums
//! over its items: `(sum u, sum u x, sum u x^2, sum u r)`. Rounding each
//! item's contribution to integer multiples of a step `delta` makes the
//! number of distinct sums small, so all reachable quadruples can be built
//! layer by layer. One run is anchored at an item `q` that must belong to
//! the set and must have the largest weight in it; looping the anchor over
//! all items covers every candidate set.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mnl::Assortment;
use crate::randv::sample_unit_vector;

use super::{ci, combine_objective, estr, SolveReport, Subproblem};

/// One item's rounded contributions: `mu ~ u`, `alpha ~ u x`,
/// `beta ~ u x^2`, `gamma ~ u r`, each an integer multiple of the step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscretizedItem {
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// The same four values in units of the step.
    pub units: [i64; 4],
}

/// Step size and rounded items for one anchored run.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub delta: f64,
    pub items: Vec<DiscretizedItem>,
}

/// Set size plus the four rounded sums, in units of the step.
pub type StateKey = (usize, [i64; 4]);

#[derive(Clone, Copy)]
struct Back {
    parent: StateKey,
    included: bool,
}

fn require_univariate(sub: &Subproblem) -> Result<()> {
    if sub.dim() != 1 {
        return Err(Error::RequiresUnivariate(sub.dim()));
    }
    Ok(())
}

/// Rounds every item's quadruple to integer multiples of
/// `delta = epsilon0 * max(1, u_anchor) / K`.
///
/// Items with weight above the anchor's are never includable in an
/// anchored run; their rounded values are still reported but only
/// meaningful while `|value| / delta` stays inside integer range.
pub fn discretize(sub: &Subproblem, anchor: usize, epsilon0: f64) -> Result<Discretization> {
    require_univariate(sub)?;
    if anchor >= sub.n() {
        return Err(Error::Invalid(format!("anchor {anchor} out of range")));
    }
    if !(epsilon0 > 0.0) || !epsilon0.is_finite() {
        return Err(Error::Invalid("epsilon0 must be positive and finite".into()));
    }
    let k = sub.effective_capacity();
    if k == 0 {
        return Err(Error::Invalid("discretization needs capacity >= 1".into()));
    }
    let delta = epsilon0 * sub.utility(anchor).max(1.0) / k as f64;
    let items = (0..sub.n())
        .map(|i| {
            let u = sub.utility(i);
            let x = sub.direction(i)[0];
            let raw = [u, u * x, u * x * x, u * sub.revenue(i)];
            let units = raw.map(|v| (v / delta).round() as i64);
            DiscretizedItem {
                mu: units[0] as f64 * delta,
                alpha: units[1] as f64 * delta,
                beta: units[2] as f64 * delta,
                gamma: units[3] as f64 * delta,
                units,
            }
        })
        .collect();
    Ok(Discretization { delta, items })
}

fn discretized_parts(units: &[i64; 4], delta: f64, omega: f64) -> (f64, f64, f64) {
    let mu = units[0] as f64 * delta;
    let alpha = units[1] as f64 * delta;
    let beta = units[2] as f64 * delta;
    let gamma = units[3] as f64 * delta;
    let denom = 1.0 + mu;
    let estr_hat = gamma / denom;
    let var_hat = beta / denom - (alpha / denom) * (alpha / denom);
    let ci_hat = var_hat.max(0.0).sqrt();
    (estr_hat, ci_hat, combine_objective(estr_hat, ci_hat, omega))
}

/// Rounded revenue estimate and confidence width of an explicit item set,
/// from the per-item rounded sums.
pub fn discretized_objective(
    disc: &Discretization,
    items: &[usize],
    omega: f64,
) -> (f64, f64, f64) {
    let mut units = [0i64; 4];
    for &i in items {
        for c in 0..4 {
            units[c] += disc.items[i].units[c];
        }
    }
    discretized_parts(&units, disc.delta, omega)
}

fn build_layers(
    sub: &Subproblem,
    anchor: usize,
    disc: &Discretization,
) -> Vec<BTreeMap<StateKey, Back>> {
    let n = sub.n();
    let k = sub.effective_capacity();
    let anchor_weight = sub.utility(anchor);
    let mut layers: Vec<BTreeMap<StateKey, Back>> = Vec::with_capacity(n + 1);
    let root: StateKey = (0, [0; 4]);
    let mut first = BTreeMap::new();
    first.insert(root, Back { parent: root, included: false });
    layers.push(first);
    for i in 0..n {
        let mut next: BTreeMap<StateKey, Back> = BTreeMap::new();
        let admissible = sub.utility(i) <= anchor_weight;
        for (&key, _) in layers[i].iter() {
            if i != anchor {
                next.entry(key).or_insert(Back { parent: key, included: false });
            }
            if admissible && key.0 < k {
                let mut units = key.1;
                for c in 0..4 {
                    units[c] += disc.items[i].units[c];
                }
                next.entry((key.0 + 1, units))
                    .or_insert(Back { parent: key, included: true });
            }
        }
        layers.push(next);
    }
    layers
}

fn trace(layers: &[BTreeMap<StateKey, Back>], mut key: StateKey) -> Vec<usize> {
    let mut items = Vec::new();
    for layer in (1..layers.len()).rev() {
        let back = layers[layer][&key];
        if back.included {
            items.push(layer - 1);
        }
        key = back.parent;
    }
    items.reverse();
    items
}

/// Exact maximization of the rounded objective over sets that contain
/// `anchor` and only items of weight at most the anchor's. The report
/// carries the chosen set's continuous objective; `iterations` counts the
/// stored states.
pub fn dp_with_anchor(sub: &Subproblem, anchor: usize, epsilon0: f64) -> Result<SolveReport> {
    require_univariate(sub)?;
    let start_time = Instant::now();
    if sub.effective_capacity() == 0 {
        return Ok(SolveReport {
            assortment: Assortment::empty(),
            objective: 0.0,
            estr: 0.0,
            ci: 0.0,
            iterations: 0,
            wall_time: start_time.elapsed(),
        });
    }
    let disc = discretize(sub, anchor, epsilon0)?;
    let layers = build_layers(sub, anchor, &disc);
    let n = sub.n();
    let states: u64 = layers[1..].iter().map(|l| l.len() as u64).sum();

    let mut best: Option<(f64, Vec<usize>)> = None;
    for (&key, _) in layers[n].iter() {
        let (_, _, obj_hat) = discretized_parts(&key.1, disc.delta, sub.omega());
        let replace = match &best {
            None => true,
            Some((best_obj, best_items)) => {
                obj_hat > *best_obj
                    || (obj_hat == *best_obj && trace(&layers, key) < *best_items)
            }
        };
        if replace {
            best = Some((obj_hat, trace(&layers, key)));
        }
    }
    let (_, items) = best.expect("anchored layer is nonempty");
    let assortment = Assortment::new(items)?;
    let report_estr = estr(sub, &assortment)?;
    let report_ci = ci(sub, &assortment)?;
    Ok(SolveReport {
        assortment,
        objective: combine_objective(report_estr, report_ci, sub.omega()),
        estr: report_estr,
        ci: report_ci,
        iterations: states,
        wall_time: start_time.elapsed(),
    })
}

/// Reachable state sets per layer, as produced by the forward recursion.
pub fn reachable_states(
    sub: &Subproblem,
    anchor: usize,
    epsilon0: f64,
) -> Result<Vec<BTreeSet<StateKey>>> {
    require_univariate(sub)?;
    let disc = discretize(sub, anchor, epsilon0)?;
    let layers = build_layers(sub, anchor, &disc);
    Ok(layers.iter().map(|l| l.keys().copied().collect()).collect())
}

/// Reachable state sets built directly from their defining subsets: layer
/// `i` holds the rounded sums of every `S` drawn from the first `i` items
/// with `|S| <= K`, all weights at most the anchor's, and the anchor
/// included once the first `i` items cover it. Exponential in `N`; meant
/// to cross-check [`reachable_states`] on small instances.
pub fn enumerate_reachable_states(
    sub: &Subproblem,
    anchor: usize,
    epsilon0: f64,
) -> Result<Vec<BTreeSet<StateKey>>> {
    require_univariate(sub)?;
    let n = sub.n();
    if n > 20 {
        return Err(Error::EnumerationCap { required: 1u128 << n, cap: 1 << 20 });
    }
    if anchor >= n {
        return Err(Error::Invalid(format!("anchor {anchor} out of range")));
    }
    let disc = discretize(sub, anchor, epsilon0)?;
    let k = sub.effective_capacity();
    let anchor_weight = sub.utility(anchor);
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let mut states = BTreeSet::new();
        for mask in 0u32..(1u32 << i) {
            let size = mask.count_ones() as usize;
            if size > k {
                continue;
            }
            if i > anchor && mask >> anchor & 1 == 0 {
                continue;
            }
            let mut admissible = true;
            let mut units = [0i64; 4];
            for j in 0..i {
                if mask >> j & 1 == 1 {
                    if sub.utility(j) > anchor_weight {
                        admissible = false;
                        break;
                    }
                    for c in 0..4 {
                        units[c] += disc.items[j].units[c];
                    }
                }
            }
            if admissible {
                states.insert((size, units));
            }
        }
        out.push(states);
    }
    Ok(out)
}

/// Runs the anchored program for every anchor, keeps each run's winner as
/// a candidate alongside the empty set, and returns the candidate with the
/// best continuous objective.
pub fn approx_univariate(sub: &Subproblem, epsilon0: f64) -> Result<SolveReport> {
    require_univariate(sub)?;
    let start_time = Instant::now();
    let mut best = SolveReport {
        assortment: Assortment::empty(),
        objective: 0.0,
        estr: 0.0,
        ci: 0.0,
        iterations: 0,
        wall_time: start_time.elapsed(),
    };
    if sub.effective_capacity() == 0 {
        return Ok(best);
    }
    let mut states = 0u64;
    for anchor in 0..sub.n() {
        let report = dp_with_anchor(sub, anchor, epsilon0)?;
        states += report.iterations;
        if report.objective > best.objective
            || (report.objective == best.objective && report.assortment < best.assortment)
        {
            best = report;
        }
    }
    best.iterations = states;
    best.wall_time = start_time.elapsed();
    Ok(best)
}

/// Knobs for the multi-direction lift of the univariate program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultivariateConfig {
    /// Inflation factor on the confidence term when ranking candidates.
    pub alpha: f64,
    /// Discretization accuracy passed to each univariate run.
    pub epsilon0: f64,
    /// Number of sampled directions.
    pub directions: usize,
}

impl Default for MultivariateConfig {
    fn default() -> Self {
        Self { alpha: 3.0, epsilon0: 0.01, directions: 16 }
    }
}

/// Solves the univariate program along each of several random unit
/// directions, pools the winners with the empty set, and picks the
/// candidate maximizing the inflation-adjusted objective
/// `estr + min(1, alpha * omega * ci)`. The report carries the winner's
/// plain (uninflated) objective.
pub fn approx_multivariate<R: Rng>(
    sub: &Subproblem,
    config: &MultivariateConfig,
    rng: &mut R,
) -> Result<SolveReport> {
    if !(config.alpha >= 1.0) || !config.alpha.is_finite() {
        return Err(Error::Invalid("alpha must be >= 1".into()));
    }
    if config.directions == 0 {
        return Err(Error::Invalid("need at least one direction".into()));
    }
    let start_time = Instant::now();
    if sub.effective_capacity() == 0 {
        return Ok(SolveReport {
            assortment: Assortment::empty(),
            objective: 0.0,
            estr: 0.0,
            ci: 0.0,
            iterations: 0,
            wall_time: start_time.elapsed(),
        });
    }

    let mut candidates: BTreeSet<Vec<usize>> = BTreeSet::new();
    candidates.insert(Vec::new());
    let mut states = 0u64;
    for _ in 0..config.directions {
        let y = sample_unit_vector(sub.dim(), rng);
        let projected = sub.project_onto(&y)?;
        let report = approx_univariate(&projected, config.epsilon0)?;
        states += report.iterations;
        candidates.insert(report.assortment.items().to_vec());
    }

    // rank candidates by the inflated objective on the full-dimensional
    // subproblem; BTreeSet order makes ties fall to the smallest item list
    let mut best: Option<(f64, Assortment)> = None;
    for items in candidates {
        let s = Assortment::new(items)?;
        let set_estr = estr(sub, &s)?;
        let set_ci = ci(sub, &s)?;
        let inflated = set_estr + (config.alpha * sub.omega() * set_ci).min(1.0);
        if best.as_ref().map_or(true, |(b, _)| inflated > *b) {
            best = Some((inflated, s));
        }
    }
    let (_, assortment) = best.expect("empty set is always a candidate");
    let report_estr = estr(sub, &assortment)?;
    let report_ci = ci(sub, &assortment)?;
    Ok(SolveReport {
        assortment,
        objective: combine_objective(report_estr, report_ci, sub.omega()),
        estr: report_estr,
        ci: report_ci,
        iterations: states,
        wall_time: start_time.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::random_subproblem;
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn discretize_rounds_within_half_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let sub = random_subproblem(8, 3, 1, 0.5, &mut rng);
        for anchor in 0..8 {
            let disc = discretize(&sub, anchor, 0.05).unwrap();
            let half = disc.delta / 2.0 + 1e-12;
            for i in 0..8 {
                let u = sub.utility(i);
                let x = sub.direction(i)[0];
                assert!((disc.items[i].mu - u).abs() <= half);
                assert!((disc.items[i].alpha - u * x).abs() <= half);
                assert!((disc.items[i].beta - u * x * x).abs() <= half);
                assert!((disc.items[i].gamma - u * sub.revenue(i)).abs() <= half);
                assert_abs_diff_eq!(
                    disc.items[i].mu,
                    disc.items[i].units[0] as f64 * disc.delta,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn dp_state_sets_match_direct_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for trial in 0..12 {
            let n = 5 + trial % 3;
            let k = 1 + trial % 3;
            let sub = random_subproblem(n, k, 1, 0.8, &mut rng);
            for anchor in 0..n {
                let forward = reachable_states(&sub, anchor, 0.02).unwrap();
                let direct = enumerate_reachable_states(&sub, anchor, 0.02).unwrap();
                assert_eq!(forward, direct, "trial {trial}, anchor {anchor}");
            }
        }
    }

    #[test]
    fn dp_maximizes_discretized_objective_over_anchored_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for trial in 0..10 {
            let n = 7;
            let k = 1 + trial % 4;
            let sub = random_subproblem(n, k, 1, 0.6, &mut rng);
            for anchor in 0..n {
                let report = dp_with_anchor(&sub, anchor, 0.03).unwrap();
                let disc = discretize(&sub, anchor, 0.03).unwrap();
                let (_, _, winner_hat) =
                    discretized_objective(&disc, report.assortment.items(), sub.omega());
                // enumerate anchored admissible sets and track the best
                // rounded objective
                let mut best_hat = f64::NEG_INFINITY;
                for mask in 1u32..(1 << n) {
                    if mask >> anchor & 1 == 0 || (mask.count_ones() as usize) > k {
                        continue;
                    }
                    let items: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
                    if items.iter().any(|&i| sub.utility(i) > sub.utility(anchor)) {
                        continue;
                    }
                    let (_, _, hat) = discretized_objective(&disc, &items, sub.omega());
                    best_hat = best_hat.max(hat);
                }
                assert_abs_diff_eq!(winner_hat, best_hat, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn discretization_error_respects_per_set_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for &epsilon0 in &[0.05f64, 0.01] {
            let sub = random_subproblem(7, 4, 1, 1.0, &mut rng);
            for anchor in 0..7 {
                let disc = discretize(&sub, anchor, epsilon0).unwrap();
                let nu = (0..7)
                    .filter(|&i| sub.utility(i) <= sub.utility(anchor))
                    .map(|i| sub.direction(i)[0].abs())
                    .fold(0.0f64, f64::max);
                for mask in 1u32..(1 << 7) {
                    if mask >> anchor & 1 == 0 || mask.count_ones() > 4 {
                        continue;
                    }
                    let items: Vec<usize> = (0..7).filter(|&i| mask >> i & 1 == 1).collect();
                    if items.iter().any(|&i| sub.utility(i) > sub.utility(anchor)) {
                        continue;
                    }
                    let s = Assortment::new(items.clone()).unwrap();
                    let (estr_hat, ci_hat, _) =
                        discretized_objective(&disc, &items, sub.omega());
                    let estr_err = (estr(&sub, &s).unwrap() - estr_hat).abs();
                    let ci_err = (ci(&sub, &s).unwrap() - ci_hat).abs();
                    assert!(estr_err <= 6.0 * epsilon0 + 1e-9, "estr err {estr_err}");
                    assert!(
                        ci_err <= (24.0 * epsilon0).sqrt() * (1.0 + nu) + 1e-9,
                        "ci err {ci_err} at epsilon0 {epsilon0}"
                    );
                }
            }
        }
    }

    #[test]
    fn univariate_solution_close_to_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        for trial in 0..8 {
            let sub = random_subproblem(8, 3, 1, 0.3, &mut rng);
            let epsilon0 = 1e-4;
            let brute = super::super::brute_force(&sub).unwrap();
            let approx = approx_univariate(&sub, epsilon0).unwrap();
            assert!(approx.objective <= brute.objective + 1e-9);
            let nu = (0..8).map(|i| sub.direction(i)[0].abs()).fold(0.0f64, f64::max);
            let gap = 2.0
                * (6.0 * epsilon0 + sub.omega() * (1.0 + nu) * (24.0 * epsilon0).sqrt());
            assert!(
                approx.objective >= brute.objective - gap - 1e-9,
                "trial {trial}: approx {} vs brute {} (allowed gap {gap})",
                approx.objective,
                brute.objective
            );
        }
    }

    #[test]
    fn univariate_handles_epsilon_extremes_and_empty_capacity() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let sub = random_subproblem(5, 0, 1, 0.5, &mut rng);
        let report = approx_univariate(&sub, 0.01).unwrap();
        assert!(report.assortment.is_empty());
        assert_eq!(report.objective, 0.0);

        // a very coarse grid still returns a valid set
        let sub = random_subproblem(5, 2, 1, 0.5, &mut rng);
        let coarse = approx_univariate(&sub, 0.5).unwrap();
        assert!(coarse.assortment.len() <= 2);
        assert!(coarse.objective >= 0.0);
    }

    #[test]
    fn multivariate_valid_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let sub = random_subproblem(9, 3, 3, 0.4, &mut rng);
        let config = MultivariateConfig { alpha: 2.0, epsilon0: 0.01, directions: 8 };
        let brute = super::super::brute_force(&sub).unwrap();
        let mut rng_a = ChaCha8Rng::seed_from_u64(70);
        let a = approx_multivariate(&sub, &config, &mut rng_a).unwrap();
        let mut rng_b = ChaCha8Rng::seed_from_u64(70);
        let b = approx_multivariate(&sub, &config, &mut rng_b).unwrap();
        assert_eq!(a.assortment, b.assortment);
        assert!(a.objective <= brute.objective + 1e-9);
        assert_abs_diff_eq!(
            a.objective,
            combine_objective(a.estr, a.ci, sub.omega()),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            a.objective,
            super::super::objective(&sub, &a.assortment).unwrap(),
            epsilon = 1e-12
        );
    }
}
