//! Multinomial-logit choice model with per-period contextual features.
//!
//! A period presents `N` items; item `j` carries a feature vector `v_j` and
//! a revenue `r_j` in `[0, 1]`. Under coefficient `theta`, an offered set
//! `S` induces purchase probabilities proportional to `exp(v_j . theta)`
//! for `j` in `S` and to `1` for the no-purchase option, whose feature is
//! the zero vector and whose revenue is zero. Items outside `S` have
//! probability zero.
//!
//! Utilities are exponentiated after subtracting `max(0, max_j v_j.theta)`,
//! so probabilities and log-likelihoods stay finite for any coefficient.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance for the symmetry check on externally supplied Fisher matrices.
const SYMMETRY_TOL: f64 = 1e-12;
/// A Fisher matrix is accepted as positive semidefinite down to this level.
const PSD_TOL: f64 = -1e-9;

/// Model coefficient: a finite real vector of length `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficient(DVector<f64>);

impl Coefficient {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("coefficient must have dimension >= 1".into()));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("coefficient entries must be finite".into()));
        }
        Ok(Self(DVector::from_vec(values)))
    }

    pub fn from_vector(v: DVector<f64>) -> Result<Self> {
        Self::new(v.iter().copied().collect())
    }

    pub fn zeros(d: usize) -> Self {
        Self(DVector::zeros(d))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }
}

/// One period's context: an `N x d` feature matrix (row per item) and `N`
/// revenues, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSlice {
    features: DMatrix<f64>,
    revenues: DVector<f64>,
}

impl ContextSlice {
    pub fn new(features: DMatrix<f64>, revenues: Vec<f64>) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::Invalid("context slice needs N >= 1 and d >= 1".into()));
        }
        if revenues.len() != features.nrows() {
            return Err(Error::Dimension(format!(
                "{} revenues for {} items",
                revenues.len(),
                features.nrows()
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("features must be finite".into()));
        }
        if revenues.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
            return Err(Error::Invalid("revenues must lie in [0, 1]".into()));
        }
        Ok(Self {
            features,
            revenues: DVector::from_vec(revenues),
        })
    }

    /// Builds a slice from per-item feature rows.
    pub fn from_rows(rows: &[Vec<f64>], revenues: Vec<f64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Invalid("context slice needs N >= 1".into()));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("ragged feature rows".into()));
        }
        let features = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(features, revenues)
    }

    pub fn n_items(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn feature(&self, item: usize) -> RowDVector<f64> {
        RowDVector::from_iterator(self.dim(), self.features.row(item).iter().copied())
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn revenue(&self, item: usize) -> f64 {
        self.revenues[item]
    }

    pub fn revenues(&self) -> &DVector<f64> {
        &self.revenues
    }

    /// Utility `v_item . theta`.
    pub fn utility(&self, item: usize, theta: &Coefficient) -> Result<f64> {
        self.check_theta(theta)?;
        if item >= self.n_items() {
            return Err(Error::Invalid(format!("item {item} out of range")));
        }
        Ok(self.features.row(item).dot(&theta.as_vector().transpose()))
    }

    fn check_theta(&self, theta: &Coefficient) -> Result<()> {
        if theta.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "coefficient dimension {} vs feature dimension {}",
                theta.dim(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// An offered set: strictly increasing item indices. May be empty.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Assortment {
    items: Vec<usize>,
}

impl Assortment {
    /// Sorts the given indices; duplicates are rejected.
    pub fn new(mut items: Vec<usize>) -> Result<Self> {
        items.sort_unstable();
        if items.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Invalid("assortment contains a duplicate item".into()));
        }
        Ok(Self { items })
    }

    pub fn empty() -> Self {
        Self { items: Vec::new() }
    }

    pub fn singleton(item: usize) -> Self {
        Self { items: vec![item] }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn contains(&self, item: usize) -> bool {
        self.items.binary_search(&item).is_ok()
    }

    fn check_against(&self, slice: &ContextSlice) -> Result<()> {
        if let Some(&max) = self.items.last() {
            if max >= slice.n_items() {
                return Err(Error::Invalid(format!(
                    "assortment item {max} out of range for N = {}",
                    slice.n_items()
                )));
            }
        }
        Ok(())
    }
}

/// Purchase probabilities for an offered set, including the no-purchase
/// option. Items not offered have probability zero.
#[derive(Debug, Clone)]
pub struct ChoiceProbabilities {
    items: Vec<usize>,
    item_probs: Vec<f64>,
    no_purchase: f64,
}

impl ChoiceProbabilities {
    /// Probability of `Some(item)` or of no purchase (`None`).
    pub fn prob(&self, choice: Option<usize>) -> f64 {
        match choice {
            None => self.no_purchase,
            Some(item) => match self.items.binary_search(&item) {
                Ok(pos) => self.item_probs[pos],
                Err(_) => 0.0,
            },
        }
    }

    pub fn no_purchase(&self) -> f64 {
        self.no_purchase
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn item_probs(&self) -> &[f64] {
        &self.item_probs
    }
}

/// Shifted exponential weights for one offered set.
///
/// `weights[k]` corresponds to the k-th offered row, `outside` to the
/// no-purchase option; dividing by `denom` yields probabilities. `shift`
/// is `max(0, max_k u_k)` and `log_denom` is `ln(denom)`.
struct ShiftedWeights {
    weights: Vec<f64>,
    outside: f64,
    denom: f64,
    shift: f64,
    log_denom: f64,
}

fn shifted_weights(utilities: &[f64]) -> ShiftedWeights {
    let shift = utilities.iter().fold(0.0f64, |a, &u| a.max(u));
    let outside = (-shift).exp();
    let mut denom = outside;
    let weights: Vec<f64> = utilities
        .iter()
        .map(|&u| {
            let w = (u - shift).exp();
            denom += w;
            w
        })
        .collect();
    ShiftedWeights {
        weights,
        outside,
        denom,
        shift,
        log_denom: denom.ln(),
    }
}

/// A recorded period: the offered items' features, their indices, and the
/// observed choice. Only offered rows are kept; they are all that the
/// likelihood and information matrices depend on.
#[derive(Debug, Clone)]
pub struct Observation {
    features: DMatrix<f64>,
    items: Vec<usize>,
    purchase_pos: Option<usize>,
}

impl Observation {
    /// `purchase` is the purchased item's index in the slice, or `None`.
    pub fn new(slice: &ContextSlice, assortment: &Assortment, purchase: Option<usize>) -> Result<Self> {
        assortment.check_against(slice)?;
        let purchase_pos = match purchase {
            None => None,
            Some(item) => match assortment.items().binary_search(&item) {
                Ok(pos) => Some(pos),
                Err(_) => {
                    return Err(Error::Invalid(format!(
                        "purchase of item {item} not in the offered assortment"
                    )))
                }
            },
        };
        let m = assortment.len();
        let features = DMatrix::from_fn(m, slice.dim(), |i, j| {
            slice.features()[(assortment.items()[i], j)]
        });
        Ok(Self {
            features,
            items: assortment.items().to_vec(),
            purchase_pos,
        })
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    /// Purchased item index in the original slice, or `None`.
    pub fn purchase(&self) -> Option<usize> {
        self.purchase_pos.map(|p| self.items[p])
    }

    pub fn offered_len(&self) -> usize {
        self.items.len()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Feature row of the k-th offered item.
    pub fn offered_feature(&self, pos: usize) -> RowDVector<f64> {
        RowDVector::from_iterator(self.dim(), self.features.row(pos).iter().copied())
    }

    fn utilities(&self, theta: &Coefficient) -> Vec<f64> {
        let th = theta.as_vector();
        (0..self.items.len())
            .map(|i| self.features.row(i).dot(&th.transpose()))
            .collect()
    }

    /// Log-probability of the recorded choice under `theta`.
    pub fn log_prob(&self, theta: &Coefficient) -> Result<f64> {
        if theta.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "coefficient dimension {} vs feature dimension {}",
                theta.dim(),
                self.dim()
            )));
        }
        let utils = self.utilities(theta);
        let sw = shifted_weights(&utils);
        Ok(match self.purchase_pos {
            None => -sw.shift - sw.log_denom,
            Some(pos) => utils[pos] - sw.shift - sw.log_denom,
        })
    }

    /// Adds this period's score contribution `v_choice - E[v]` to `grad`.
    pub(crate) fn add_score(&self, theta: &Coefficient, grad: &mut DVector<f64>) {
        let utils = self.utilities(theta);
        let sw = shifted_weights(&utils);
        let d = self.dim();
        for (k, &w) in sw.weights.iter().enumerate() {
            let p = w / sw.denom;
            for j in 0..d {
                grad[j] -= p * self.features[(k, j)];
            }
        }
        if let Some(pos) = self.purchase_pos {
            for j in 0..d {
                grad[j] += self.features[(pos, j)];
            }
        }
    }

    /// Adds this period's information matrix
    /// `E[v v^T] - E[v] E[v]^T` (choice-independent) to `acc`.
    /// Only the upper triangle of `acc` is touched.
    pub(crate) fn add_fisher_upper(&self, theta: &Coefficient, acc: &mut DMatrix<f64>) {
        let utils = self.utilities(theta);
        let sw = shifted_weights(&utils);
        let d = self.dim();
        let mut mean = vec![0.0f64; d];
        for (k, &w) in sw.weights.iter().enumerate() {
            let p = w / sw.denom;
            for i in 0..d {
                let vi = self.features[(k, i)];
                mean[i] += p * vi;
                for j in i..d {
                    acc[(i, j)] += p * vi * self.features[(k, j)];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                acc[(i, j)] -= mean[i] * mean[j];
            }
        }
    }
}

/// Append-only record of offered sets and observed choices.
#[derive(Debug, Clone, Default)]
pub struct ObservationLog {
    entries: Vec<Observation>,
}

impl ObservationLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(
        &mut self,
        slice: &ContextSlice,
        assortment: &Assortment,
        purchase: Option<usize>,
    ) -> Result<()> {
        self.entries.push(Observation::new(slice, assortment, purchase)?);
        Ok(())
    }

    pub fn push(&mut self, obs: Observation) {
        self.entries.push(obs);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Observation] {
        &self.entries
    }
}

/// Symmetric positive-semidefinite information matrix.
///
/// Construction from raw data checks symmetry only; use [`FisherMatrix::validate_psd`]
/// for the (eigendecomposition-based) semidefiniteness check. Consumers
/// that invert or take square roots clamp eigenvalues from below at their
/// configured ridge.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix {
    m: DMatrix<f64>,
}

impl FisherMatrix {
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension("fisher matrix must be square".into()));
        }
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                if (a - b).abs() > SYMMETRY_TOL * (1.0 + a.abs() + b.abs()) {
                    return Err(Error::Invalid(format!(
                        "fisher matrix asymmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(Self { m })
    }

    /// Mirrors the upper triangle into the lower and wraps without checks.
    pub(crate) fn from_upper(mut m: DMatrix<f64>) -> Self {
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                m[(j, i)] = m[(i, j)];
            }
        }
        Self { m }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::min_eigenvalue(&self.m)
    }

    /// Errors if the minimum eigenvalue is materially negative.
    pub fn validate_psd(&self) -> Result<f64> {
        let min = self.min_eigenvalue();
        if min < PSD_TOL {
            return Err(Error::Invalid(format!(
                "fisher matrix not positive semidefinite: min eigenvalue {min:e}"
            )));
        }
        Ok(min)
    }
}

/// Boundedness and conditioning diagnostics for a generated instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceStats {
    /// Largest feature norm across all items and periods.
    pub nu: f64,
    /// Largest probability ratio `max(p(j)/p(0), p(0)/p(j))` over singleton
    /// offers, under the given coefficient.
    pub rho: f64,
    /// Smallest eigenvalue of the feature second moment, averaged over the
    /// items and periods of the exploration prefix. Zero when the prefix is
    /// empty or the features do not span.
    pub lambda0: f64,
}

/// Purchase distribution over `s` and the no-purchase option.
pub fn choice_probabilities(
    theta: &Coefficient,
    slice: &ContextSlice,
    s: &Assortment,
) -> Result<ChoiceProbabilities> {
    slice.check_theta(theta)?;
    s.check_against(slice)?;
    let th = theta.as_vector();
    let utils: Vec<f64> = s
        .items()
        .iter()
        .map(|&j| slice.features().row(j).dot(&th.transpose()))
        .collect();
    let sw = shifted_weights(&utils);
    Ok(ChoiceProbabilities {
        items: s.items().to_vec(),
        item_probs: sw.weights.iter().map(|w| w / sw.denom).collect(),
        no_purchase: sw.outside / sw.denom,
    })
}

/// Expected revenue of offering `s` under `theta`.
pub fn expected_revenue(theta: &Coefficient, slice: &ContextSlice, s: &Assortment) -> Result<f64> {
    let probs = choice_probabilities(theta, slice, s)?;
    Ok(probs
        .items
        .iter()
        .zip(&probs.item_probs)
        .map(|(&j, &p)| slice.revenue(j) * p)
        .sum())
}

/// Samples a purchase from the choice distribution. Returns the purchased
/// item's index, or `None` for no purchase.
pub fn sample_purchase<R: Rng>(
    theta: &Coefficient,
    slice: &ContextSlice,
    s: &Assortment,
    rng: &mut R,
) -> Result<Option<usize>> {
    let probs = choice_probabilities(theta, slice, s)?;
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (&item, &p) in probs.items.iter().zip(&probs.item_probs) {
        acc += p;
        if draw < acc {
            return Ok(Some(item));
        }
    }
    Ok(None)
}

/// Sum of log choice probabilities of the recorded outcomes.
pub fn log_likelihood(theta: &Coefficient, log: &ObservationLog) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    let mut acc = 0.0;
    for obs in log.entries() {
        acc += obs.log_prob(theta)?;
    }
    Ok(acc)
}

/// Single-period information matrix `E[v v^T | S] - E[v | S] E[v | S]^T`
/// under `theta`, with the no-purchase feature fixed at zero. Independent
/// of the realized choice.
pub fn empirical_fisher_m(
    theta: &Coefficient,
    slice: &ContextSlice,
    s: &Assortment,
) -> Result<FisherMatrix> {
    slice.check_theta(theta)?;
    let obs = Observation::new(slice, s, None)?;
    Ok(fisher_of_observation(theta, &obs))
}

pub(crate) fn fisher_of_observation(theta: &Coefficient, obs: &Observation) -> FisherMatrix {
    let d = theta.dim();
    let mut acc = DMatrix::zeros(d, d);
    obs.add_fisher_upper(theta, &mut acc);
    FisherMatrix::from_upper(acc)
}

/// Sum of per-period information matrices over the log, plus `ridge` on
/// the diagonal.
pub fn cumulative_fisher(theta: &Coefficient, log: &ObservationLog, ridge: f64) -> Result<FisherMatrix> {
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    if ridge < 0.0 {
        return Err(Error::Invalid("ridge must be non-negative".into()));
    }
    let d = theta.dim();
    let mut total = DMatrix::zeros(d, d);
    let mut scratch = DMatrix::zeros(d, d);
    for obs in log.entries() {
        if obs.dim() != d {
            return Err(Error::Dimension(
                "log entry dimension differs from coefficient".into(),
            ));
        }
        scratch.fill(0.0);
        obs.add_fisher_upper(theta, &mut scratch);
        for i in 0..d {
            for j in i..d {
                total[(i, j)] += scratch[(i, j)];
            }
        }
    }
    for i in 0..d {
        total[(i, i)] += ridge;
    }
    Ok(FisherMatrix::from_upper(total))
}

/// Diagnostics under the data-generating coefficient: max feature norm,
/// singleton probability ratio, and the exploration-prefix second-moment
/// floor (averaged across the prefix's periods and items).
pub fn instance_stats(
    theta0: &Coefficient,
    slices: &[ContextSlice],
    exploration_horizon: usize,
) -> Result<InstanceStats> {
    if slices.is_empty() {
        return Err(Error::Invalid("instance stats need at least one slice".into()));
    }
    let d = theta0.dim();
    let mut nu = 0.0f64;
    let mut max_abs_u = 0.0f64;
    for slice in slices {
        slice.check_theta(theta0)?;
        for j in 0..slice.n_items() {
            let row = slice.features().row(j);
            nu = nu.max(row.norm());
            let u = row.dot(&theta0.as_vector().transpose());
            max_abs_u = max_abs_u.max(u.abs());
        }
    }
    let rho = max_abs_u.exp();
    let horizon = exploration_horizon.min(slices.len());
    let lambda0 = if horizon == 0 {
        0.0
    } else {
        let mut second = DMatrix::zeros(d, d);
        let mut count = 0usize;
        for slice in &slices[..horizon] {
            for j in 0..slice.n_items() {
                let row = slice.features().row(j);
                for a in 0..d {
                    for b in a..d {
                        second[(a, b)] += row[a] * row[b];
                    }
                }
                count += 1;
            }
        }
        for a in 0..d {
            for b in (a + 1)..d {
                second[(b, a)] = second[(a, b)];
            }
        }
        second /= count as f64;
        linalg::min_eigenvalue(&second).max(0.0)
    };
    Ok(InstanceStats { nu, rho, lambda0 })
}

/// Exact worst-case choice-probability ratio over all assortments of size
/// at most `k`: for any offered set the ratio of two choice probabilities
/// is the ratio of their exponentiated utilities (the no-purchase option
/// counting as utility zero), so the maximum is attained by pairing the
/// extreme utilities and has a closed form; no enumeration is needed.
pub fn exact_choice_ratio(theta0: &Coefficient, slices: &[ContextSlice], k: usize) -> Result<f64> {
    if slices.is_empty() {
        return Err(Error::Invalid("ratio diagnostic needs at least one slice".into()));
    }
    if k == 0 {
        return Ok(1.0);
    }
    let mut best = 1.0f64;
    for slice in slices {
        slice.check_theta(theta0)?;
        let mut u_min = f64::INFINITY;
        let mut u_max = f64::NEG_INFINITY;
        let mut abs_max = 0.0f64;
        for j in 0..slice.n_items() {
            let u = slice.features().row(j).dot(&theta0.as_vector().transpose());
            u_min = u_min.min(u);
            u_max = u_max.max(u);
            abs_max = abs_max.max(u.abs());
        }
        let ratio = if k == 1 {
            abs_max.exp()
        } else {
            (u_max.max(0.0) - u_min.min(0.0)).exp()
        };
        best = best.max(ratio);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn slice_2x2() -> ContextSlice {
        ContextSlice::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.6, 0.8]).unwrap()
    }

    #[test]
    fn zero_coefficient_uniform_weights() {
        // Two offered items with theta = 0: all weights equal one, so each
        // probability is 1/3.
        let slice = slice_2x2();
        let s = Assortment::new(vec![0, 1]).unwrap();
        let theta = Coefficient::zeros(2);
        let probs = choice_probabilities(&theta, &slice, &s).unwrap();
        for choice in [None, Some(0), Some(1)] {
            assert_abs_diff_eq!(probs.prob(choice), 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn unoffered_item_has_zero_probability() {
        let slice = slice_2x2();
        let s = Assortment::singleton(1);
        let theta = Coefficient::zeros(2);
        let probs = choice_probabilities(&theta, &slice, &s).unwrap();
        assert_eq!(probs.prob(Some(0)), 0.0);
        assert_abs_diff_eq!(probs.prob(Some(1)) + probs.no_purchase(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn empty_assortment_always_no_purchase() {
        let slice = slice_2x2();
        let s = Assortment::empty();
        let theta = Coefficient::new(vec![3.0, -2.0]).unwrap();
        let probs = choice_probabilities(&theta, &slice, &s).unwrap();
        assert_eq!(probs.no_purchase(), 1.0);
        assert_eq!(expected_revenue(&theta, &slice, &s).unwrap(), 0.0);
    }

    #[test]
    fn extreme_utilities_stay_finite() {
        let slice = ContextSlice::from_rows(&[vec![1000.0], vec![-1000.0]], vec![0.5, 0.5]).unwrap();
        let s = Assortment::new(vec![0, 1]).unwrap();
        let theta = Coefficient::new(vec![1.0]).unwrap();
        let probs = choice_probabilities(&theta, &slice, &s).unwrap();
        assert!(probs.prob(Some(0)).is_finite());
        assert_abs_diff_eq!(probs.prob(Some(0)), 1.0, epsilon = 1e-12);
        assert!(probs.prob(Some(1) ) >= 0.0);
        let total: f64 = probs.item_probs().iter().sum::<f64>() + probs.no_purchase();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn common_utility_shift_changes_probabilities() {
        // Unlike a plain softmax over items, the fixed outside option keeps
        // utility zero, so adding a constant to every item utility moves
        // probability mass between items and no-purchase.
        let slice = ContextSlice::from_rows(&[vec![0.0]], vec![0.5]).unwrap();
        let shifted = ContextSlice::from_rows(&[vec![1.0]], vec![0.5]).unwrap();
        let s = Assortment::singleton(0);
        let theta = Coefficient::new(vec![1.0]).unwrap();
        let p = choice_probabilities(&theta, &slice, &s).unwrap().prob(Some(0));
        let q = choice_probabilities(&theta, &shifted, &s).unwrap().prob(Some(0));
        assert!((p - q).abs() > 0.1);
    }

    #[test]
    fn perturbation_orthogonal_to_features_is_invariant() {
        // Features live in the first two coordinates; moving theta along the
        // third cannot change any utility.
        let slice = ContextSlice::from_rows(
            &[vec![1.0, 0.5, 0.0], vec![-0.3, 0.2, 0.0]],
            vec![0.4, 0.9],
        )
        .unwrap();
        let s = Assortment::new(vec![0, 1]).unwrap();
        let theta = Coefficient::new(vec![0.7, -0.2, 0.0]).unwrap();
        let theta_p = Coefficient::new(vec![0.7, -0.2, 5.0]).unwrap();
        let a = choice_probabilities(&theta, &slice, &s).unwrap();
        let b = choice_probabilities(&theta_p, &slice, &s).unwrap();
        for choice in [None, Some(0), Some(1)] {
            assert_abs_diff_eq!(a.prob(choice), b.prob(choice), epsilon = 1e-15);
        }
    }

    #[test]
    fn expected_revenue_zero_coefficient() {
        // theta = 0, two items: probabilities 1/3 each, revenue (0.6+0.8)/3.
        let slice = slice_2x2();
        let s = Assortment::new(vec![0, 1]).unwrap();
        let theta = Coefficient::zeros(2);
        assert_abs_diff_eq!(
            expected_revenue(&theta, &slice, &s).unwrap(),
            1.4 / 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn sample_purchase_frequency_matches_probability() {
        // Singleton with utility zero: purchase probability exactly 1/2.
        let slice = ContextSlice::from_rows(&[vec![0.0]], vec![1.0]).unwrap();
        let s = Assortment::singleton(0);
        let theta = Coefficient::new(vec![2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut bought = 0u32;
        for _ in 0..n {
            if sample_purchase(&theta, &slice, &s, &mut rng).unwrap().is_some() {
                bought += 1;
            }
        }
        let freq = f64::from(bought) / f64::from(n);
        assert!((freq - 0.5).abs() < 0.01, "frequency {freq}");
    }

    #[test]
    fn log_likelihood_matches_product_of_probabilities() {
        let slice = slice_2x2();
        let theta = Coefficient::new(vec![0.3, -0.4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut log = ObservationLog::new();
        let mut direct = 0.0;
        for t in 0..20 {
            let s = if t % 2 == 0 {
                Assortment::new(vec![0, 1]).unwrap()
            } else {
                Assortment::singleton(t % 2)
            };
            let purchase = sample_purchase(&theta, &slice, &s, &mut rng).unwrap();
            direct += choice_probabilities(&theta, &slice, &s)
                .unwrap()
                .prob(purchase)
                .ln();
            log.record(&slice, &s, purchase).unwrap();
        }
        assert_abs_diff_eq!(log_likelihood(&theta, &log).unwrap(), direct, epsilon = 1e-10);
    }

    #[test]
    fn log_likelihood_empty_log_errors() {
        let log = ObservationLog::new();
        assert!(matches!(
            log_likelihood(&Coefficient::zeros(2), &log),
            Err(Error::EmptyLog)
        ));
    }

    #[test]
    fn purchase_outside_assortment_rejected() {
        let slice = slice_2x2();
        let s = Assortment::singleton(1);
        assert!(Observation::new(&slice, &s, Some(0)).is_err());
        assert!(Observation::new(&slice, &s, Some(1)).is_ok());
    }

    #[test]
    fn fisher_singleton_closed_form() {
        // Singleton {j}: M = p(1-p) v v^T with p the purchase probability.
        let slice = ContextSlice::from_rows(&[vec![2.0, -1.0]], vec![0.5]).unwrap();
        let s = Assortment::singleton(0);
        let theta = Coefficient::new(vec![0.4, 0.1]).unwrap();
        let u: f64 = 2.0 * 0.4 - 1.0 * 0.1;
        let p = u.exp() / (1.0 + u.exp());
        let m = empirical_fisher_m(&theta, &slice, &s).unwrap();
        let v = [2.0, -1.0];
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(
                    m.as_matrix()[(i, j)],
                    p * (1.0 - p) * v[i] * v[j],
                    epsilon = 1e-12
                );
            }
        }
        m.validate_psd().unwrap();
    }

    #[test]
    fn cumulative_fisher_is_exact_sum_of_periods() {
        let slice = slice_2x2();
        let theta = Coefficient::new(vec![0.2, 0.5]).unwrap();
        let mut log = ObservationLog::new();
        let sets = [
            Assortment::new(vec![0, 1]).unwrap(),
            Assortment::singleton(0),
            Assortment::singleton(1),
            Assortment::new(vec![0, 1]).unwrap(),
        ];
        for s in &sets {
            log.record(&slice, s, None).unwrap();
        }
        let total = cumulative_fisher(&theta, &log, 0.0).unwrap();
        let mut expect = DMatrix::zeros(2, 2);
        for s in &sets {
            expect += empirical_fisher_m(&theta, &slice, s).unwrap().into_matrix();
        }
        // bit-exact: same kernels, same summation order
        assert_eq!(total.as_matrix(), &expect);

        let ridged = cumulative_fisher(&theta, &log, 1e-6).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(
                ridged.as_matrix()[(i, i)],
                expect[(i, i)] + 1e-6,
                epsilon = 1e-18
            );
        }
    }

    #[test]
    fn instance_stats_single_feature() {
        // One item, feature (1, 0), theta0 = 0: nu = 1, rho = 1, and the
        // second moment is rank-deficient so lambda0 = 0.
        let slice = ContextSlice::from_rows(&[vec![1.0, 0.0]], vec![0.5]).unwrap();
        let stats = instance_stats(&Coefficient::zeros(2), &[slice], 1).unwrap();
        assert_abs_diff_eq!(stats.nu, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(stats.rho, 1.0, epsilon = 1e-15);
        assert_eq!(stats.lambda0, 0.0);
    }

    #[test]
    fn exact_ratio_closed_form() {
        // Utilities 0.5 and -1.0 with k >= 2: worst ratio pairs them,
        // exp(0.5 - (-1.0)) = exp(1.5).
        let slice = ContextSlice::from_rows(&[vec![0.5], vec![-1.0]], vec![0.5, 0.5]).unwrap();
        let theta = Coefficient::new(vec![1.0]).unwrap();
        let r = exact_choice_ratio(&theta, std::slice::from_ref(&slice), 2).unwrap();
        assert_abs_diff_eq!(r, 1.5f64.exp(), epsilon = 1e-12);
        let r1 = exact_choice_ratio(&theta, &[slice], 1).unwrap();
        assert_abs_diff_eq!(r1, 1.0f64.exp(), epsilon = 1e-12);
    }

    #[test]
    fn assortment_sorts_and_rejects_duplicates() {
        let a = Assortment::new(vec![3, 1, 2]).unwrap();
        assert_eq!(a.items(), &[1, 2, 3]);
        assert!(Assortment::new(vec![1, 1]).is_err());
    }

    #[test]
    fn revenue_bounds_enforced() {
        assert!(ContextSlice::from_rows(&[vec![1.0]], vec![1.2]).is_err());
        assert!(ContextSlice::from_rows(&[vec![1.0]], vec![-0.1]).is_err());
    }
}
