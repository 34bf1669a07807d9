//! Maximum-likelihood coefficient fits.
//!
//! Two fits cover the policy's needs:
//!
//! * [`pilot_mle`] — unconstrained fit on pure-exploration data (one item
//!   offered per period), by damped Newton with a backtracking line search.
//! * [`local_mle`] — fit constrained to a Euclidean ball around a center,
//!   by projected ascent that takes Newton steps whenever the full step
//!   stays interior and falls back to projected gradient steps otherwise.
//!
//! Both maximize the log-likelihood, optionally ridge-penalized by
//! `-(ridge/2) ||theta||^2`. Reported objectives are always the raw
//! (unpenalized) log-likelihood at the returned coefficient. Failure to
//! converge is reported through a flag, never as an error: callers get the
//! best iterate found.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mnl::{log_likelihood, Coefficient, ObservationLog};

/// Armijo sufficient-increase fraction.
const ARMIJO_C: f64 = 1e-4;
/// Smallest line-search step before the search is abandoned.
const MIN_STEP: f64 = 1e-18;
/// With no ridge, a log-likelihood this close to its supremum of zero
/// means the maximizer lies at infinity (separable data): the iterate is
/// still returned, but not marked converged.
const SATURATION_LL: f64 = -1e-7;
/// Slack for boundary detection on the constrained fit.
const BOUNDARY_TOL: f64 = 1e-9;

/// Solver knobs shared by both fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleConfig {
    pub max_iterations: usize,
    /// Stop once the (projected) gradient norm falls to this level per log
    /// entry; the objective is a sum over the log, so the threshold scales
    /// with its length.
    pub gradient_tolerance: f64,
    /// Multiplicative backtracking factor in (0, 1).
    pub step_shrink: f64,
    /// Ridge penalty weight; zero for the plain likelihood.
    pub ridge: f64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-8,
            step_shrink: 0.5,
            ridge: 0.0,
        }
    }
}

impl MleConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Invalid("max_iterations must be >= 1".into()));
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::Invalid("gradient_tolerance must be positive".into()));
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(Error::Invalid("step_shrink must lie in (0, 1)".into()));
        }
        if self.ridge < 0.0 {
            return Err(Error::Invalid("ridge must be non-negative".into()));
        }
        Ok(())
    }
}

/// Outcome of a fit.
#[derive(Debug, Clone)]
pub struct MleResult {
    pub theta: Coefficient,
    /// Raw log-likelihood at `theta`.
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Whether the returned point sits on the constraint boundary
    /// (always `false` for the unconstrained pilot fit).
    pub active_constraint: bool,
}

/// Penalized likelihood, score, and curvature over a fixed log.
struct PenalizedObjective<'a> {
    log: &'a ObservationLog,
    ridge: f64,
    d: usize,
}

impl<'a> PenalizedObjective<'a> {
    fn new(log: &'a ObservationLog, ridge: f64, d: usize) -> Self {
        Self { log, ridge, d }
    }

    fn raw(&self, theta: &Coefficient) -> f64 {
        log_likelihood(theta, self.log).expect("log checked nonempty")
    }

    fn value(&self, theta: &Coefficient) -> f64 {
        self.raw(theta) - 0.5 * self.ridge * theta.as_vector().norm_squared()
    }

    fn grad(&self, theta: &Coefficient) -> DVector<f64> {
        let mut g = DVector::zeros(self.d);
        for obs in self.log.entries() {
            obs.add_score(theta, &mut g);
        }
        if self.ridge > 0.0 {
            g.axpy(-self.ridge, theta.as_vector(), 1.0);
        }
        g
    }

    /// Negative Hessian of the penalized log-likelihood: the summed
    /// per-period information matrices plus the ridge.
    fn curvature(&self, theta: &Coefficient) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.d, self.d);
        for obs in self.log.entries() {
            obs.add_fisher_upper(theta, &mut h);
        }
        for i in 0..self.d {
            for j in (i + 1)..self.d {
                h[(j, i)] = h[(i, j)];
            }
            h[(i, i)] += self.ridge;
        }
        h
    }
}

fn dim_of(log: &ObservationLog) -> Result<usize> {
    let first = log.entries().first().ok_or(Error::EmptyLog)?;
    let d = first.dim();
    if log.entries().iter().any(|o| o.dim() != d) {
        return Err(Error::Dimension("log entries have mixed dimensions".into()));
    }
    Ok(d)
}

/// Resolution of the objective's floating-point values near `value`:
/// improvements below this cannot be certified by comparing values.
fn value_noise(value: f64) -> f64 {
    8.0 * f64::EPSILON * (1.0 + value.abs())
}

/// Backtracking line search for a sufficient increase along `dir`.
///
/// Once the Armijo certificate falls below the objective's value
/// resolution (the quadratic-convergence endgame), the full step is taken
/// as long as it does not clearly decrease the objective; without this the
/// search stalls on rounding noise well before the gradient tolerance.
/// Returns the accepted point and value, or `None` if no step qualifies.
fn line_search(
    obj: &PenalizedObjective,
    theta: &DVector<f64>,
    value: f64,
    dir: &DVector<f64>,
    slope: f64,
    shrink: f64,
) -> Option<(DVector<f64>, f64)> {
    let noise = value_noise(value);
    if ARMIJO_C * slope <= noise {
        let cand = theta + dir;
        let cand_c = Coefficient::from_vector(cand.clone()).ok()?;
        let v = obj.value(&cand_c);
        return if v >= value - noise { Some((cand, v)) } else { None };
    }
    let mut step = 1.0;
    while step >= MIN_STEP {
        let cand = theta + dir * step;
        let cand_c = Coefficient::from_vector(cand.clone()).ok()?;
        let v = obj.value(&cand_c);
        if v >= value + ARMIJO_C * step * slope - noise {
            return Some((cand, v));
        }
        step *= shrink;
    }
    None
}

/// Unconstrained fit on a pure-exploration log: every entry must offer
/// exactly one item. Starts from zero and takes damped Newton steps,
/// falling back to gradient steps if the curvature solve fails.
pub fn pilot_mle(log: &ObservationLog, config: &MleConfig) -> Result<MleResult> {
    config.validate()?;
    let d = dim_of(log)?;
    if log.entries().iter().any(|o| o.offered_len() != 1) {
        return Err(Error::NonSingletonLog);
    }
    let obj = PenalizedObjective::new(log, config.ridge, d);
    let tol = config.gradient_tolerance * log.len() as f64;

    let mut theta = DVector::zeros(d);
    let mut value = obj.value(&Coefficient::zeros(d));
    let mut grad_ok = false;
    let mut iterations = 0;
    for _ in 0..config.max_iterations {
        let theta_c = Coefficient::from_vector(theta.clone())?;
        let g = obj.grad(&theta_c);
        if g.norm() <= tol {
            grad_ok = true;
            break;
        }
        let h = obj.curvature(&theta_c);
        let dir = match h.cholesky() {
            Some(ch) => ch.solve(&g),
            None => g.clone(),
        };
        let slope = g.dot(&dir);
        let (dir, slope) = if slope > 0.0 { (dir, slope) } else { (g.clone(), g.norm_squared()) };
        match line_search(&obj, &theta, value, &dir, slope, config.step_shrink) {
            Some((next, v)) => {
                theta = next;
                value = v;
                iterations += 1;
            }
            None => break,
        }
    }
    if !grad_ok {
        let theta_c = Coefficient::from_vector(theta.clone())?;
        grad_ok = obj.grad(&theta_c).norm() <= tol;
    }

    let theta_c = Coefficient::from_vector(theta)?;
    let raw = obj.raw(&theta_c);
    let saturated = config.ridge == 0.0 && raw >= SATURATION_LL;
    Ok(MleResult {
        theta: theta_c,
        objective: raw,
        converged: grad_ok && !saturated,
        iterations,
        active_constraint: false,
    })
}

fn project_to_ball(point: &DVector<f64>, center: &DVector<f64>, tau: f64) -> DVector<f64> {
    let offset = point - center;
    let norm = offset.norm();
    if norm <= tau {
        point.clone()
    } else {
        center + offset * (tau / norm)
    }
}

/// Backtracking search along `dir` with every candidate projected into the
/// ball; acceptance compares against the slope of the actual (projected)
/// displacement, with the same value-noise floor as the unconstrained
/// search. Returns the accepted point, value, and scale.
#[allow(clippy::too_many_arguments)]
fn projected_backtrack(
    obj: &PenalizedObjective,
    theta: &DVector<f64>,
    value: f64,
    g: &DVector<f64>,
    dir: &DVector<f64>,
    center: &DVector<f64>,
    tau: f64,
    start_scale: f64,
    shrink: f64,
) -> Option<(DVector<f64>, f64, f64)> {
    let noise = value_noise(value);
    let mut s = start_scale;
    while s >= MIN_STEP {
        let cand = project_to_ball(&(theta + dir * s), center, tau);
        let step_vec = &cand - theta;
        let slope = g.dot(&step_vec);
        if slope > 0.0 {
            let cand_c = Coefficient::from_vector(cand.clone()).ok()?;
            let v = obj.value(&cand_c);
            if v >= value + ARMIJO_C * slope - noise {
                return Some((cand, v, s));
            }
        }
        s *= shrink;
    }
    None
}

/// One tangential Newton step on the sphere `||theta - center|| = tau`,
/// for boundary iterates whose gradient points outward (so the local
/// constrained maximizer stays on the boundary). Solves the reduced system
/// `(P H P + (lambda/tau) P) u = P g` on the tangent space, where the
/// second term is the curvature of the sphere, then backtracks along the
/// retraction `center + tau * normalize(offset + s u)`.
fn boundary_newton(
    obj: &PenalizedObjective,
    theta: &DVector<f64>,
    value: f64,
    g: &DVector<f64>,
    center: &DVector<f64>,
    tau: f64,
    shrink: f64,
) -> Option<(DVector<f64>, f64)> {
    let offset = theta - center;
    let r = offset.norm();
    if r < tau * (1.0 - 1e-10) {
        return None;
    }
    let normal = &offset / r;
    let lambda = g.dot(&normal);
    if lambda <= 0.0 {
        return None;
    }
    let d = theta.len();
    let theta_c = Coefficient::from_vector(theta.clone()).ok()?;
    let projector = DMatrix::identity(d, d) - &normal * normal.transpose();
    let reduced = &projector * obj.curvature(&theta_c) * &projector
        + (lambda / tau) * &projector
        + &normal * normal.transpose();
    let g_t = &projector * g;
    let u = reduced.cholesky()?.solve(&g_t);
    let slope = g_t.dot(&u);
    if !(slope > 0.0) {
        return None;
    }
    let noise = value_noise(value);
    let mut s = 1.0f64;
    while s >= MIN_STEP {
        let stepped = &offset + &u * s;
        let norm = stepped.norm();
        if norm > 0.0 {
            let cand = center + stepped * (tau / norm);
            let cand_c = Coefficient::from_vector(cand.clone()).ok()?;
            let v = obj.value(&cand_c);
            if v >= value + ARMIJO_C * s * slope - noise {
                return Some((cand, v));
            }
        }
        s *= shrink;
    }
    None
}

/// Norm of the ascent directions still available at `theta`: the full
/// gradient in the interior, its tangential part on the boundary when the
/// gradient points outward.
fn stationarity_residual(
    theta: &DVector<f64>,
    center: &DVector<f64>,
    tau: f64,
    g: &DVector<f64>,
) -> f64 {
    let offset = theta - center;
    let r = offset.norm();
    if r < tau * (1.0 - 1e-12) {
        return g.norm();
    }
    if r == 0.0 {
        return g.norm();
    }
    let normal = offset / r;
    let outward = g.dot(&normal);
    if outward > 0.0 {
        (g - normal * outward).norm()
    } else {
        g.norm()
    }
}

/// Fit constrained to the ball `||theta - center|| <= tau`.
///
/// `warm_start` chooses the initial iterate (projected into the ball if
/// necessary); by default the search starts at `center`. `tau == 0`
/// returns the center itself.
pub fn local_mle(
    log: &ObservationLog,
    center: &Coefficient,
    tau: f64,
    warm_start: Option<&Coefficient>,
    config: &MleConfig,
) -> Result<MleResult> {
    config.validate()?;
    if tau < 0.0 {
        return Err(Error::Invalid("tau must be non-negative".into()));
    }
    let d = dim_of(log)?;
    if center.dim() != d {
        return Err(Error::Dimension("center dimension differs from log".into()));
    }
    if tau == 0.0 {
        return Ok(MleResult {
            theta: center.clone(),
            objective: log_likelihood(center, log)?,
            converged: true,
            iterations: 0,
            active_constraint: true,
        });
    }
    if let Some(w) = warm_start {
        if w.dim() != d {
            return Err(Error::Dimension("warm start dimension differs from log".into()));
        }
    }
    let obj = PenalizedObjective::new(log, config.ridge, d);
    let tol = config.gradient_tolerance * log.len() as f64;
    let center_v = center.as_vector().clone();

    let mut theta = match warm_start {
        Some(w) => project_to_ball(w.as_vector(), &center_v, tau),
        None => center_v.clone(),
    };
    let mut value = obj.value(&Coefficient::from_vector(theta.clone())?);
    let mut converged = false;
    let mut iterations = 0;
    // Adaptive scale for projected gradient steps; grows after successes.
    let mut grad_step = 1.0f64;
    // Consecutive accepted steps whose gain sits at the float noise floor.
    let mut stalled = 0u32;

    for _ in 0..config.max_iterations {
        let theta_c = Coefficient::from_vector(theta.clone())?;
        let g = obj.grad(&theta_c);
        if stationarity_residual(&theta, &center_v, tau, &g) <= tol {
            converged = true;
            break;
        }

        // On the boundary with an outward gradient, take the Newton step of
        // the sphere-restricted problem; a straight step bent back by the
        // projection loses its second-order accuracy there and crawls.
        let mut accepted =
            boundary_newton(&obj, &theta, value, &g, &center_v, tau, config.step_shrink)
                .map(|(next, v)| (next, v, 1.0));
        if accepted.is_none() {
            if let Some(ch) = obj.curvature(&theta_c).cholesky() {
                let dir = ch.solve(&g);
                if g.dot(&dir) > 0.0 {
                    accepted = projected_backtrack(
                        &obj, &theta, value, &g, &dir, &center_v, tau, 1.0,
                        config.step_shrink,
                    );
                }
            }
        }
        if accepted.is_none() {
            let start = (grad_step * 2.0).min(1e12);
            accepted = projected_backtrack(
                &obj, &theta, value, &g, &g, &center_v, tau, start,
                config.step_shrink,
            )
            .inspect(|&(_, _, s)| grad_step = s);
        }
        match accepted {
            Some((next, v, _)) => {
                // A gain inside the noise floor cannot be certified as
                // progress; a run of such steps means the value has hit
                // float resolution and further iterations only spin.
                if v - value <= value_noise(value) {
                    stalled += 1;
                } else {
                    stalled = 0;
                }
                theta = next;
                value = v;
                iterations += 1;
                if stalled >= 3 {
                    break;
                }
            }
            None => break,
        }
    }
    if !converged {
        let theta_c = Coefficient::from_vector(theta.clone())?;
        let g = obj.grad(&theta_c);
        converged = stationarity_residual(&theta, &center_v, tau, &g) <= tol;
    }

    let active = (&theta - &center_v).norm() >= tau - BOUNDARY_TOL;
    let theta_c = Coefficient::from_vector(theta)?;
    let raw = obj.raw(&theta_c);
    Ok(MleResult {
        theta: theta_c,
        objective: raw,
        converged,
        iterations,
        active_constraint: active,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mnl::{sample_purchase, Assortment, ContextSlice};
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn singleton_log(theta0: &Coefficient, n_obs: usize, seed: u64) -> ObservationLog {
        let d = theta0.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut log = ObservationLog::new();
        for _ in 0..n_obs {
            let row: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let slice = ContextSlice::from_rows(&[row], vec![0.5]).unwrap();
            let s = Assortment::singleton(0);
            let purchase = sample_purchase(theta0, &slice, &s, &mut rng).unwrap();
            log.record(&slice, &s, purchase).unwrap();
        }
        log
    }

    #[test]
    fn pilot_requires_singletons() {
        let slice = ContextSlice::from_rows(&[vec![1.0], vec![-1.0]], vec![0.5, 0.5]).unwrap();
        let mut log = ObservationLog::new();
        log.record(&slice, &Assortment::new(vec![0, 1]).unwrap(), None).unwrap();
        assert!(matches!(
            pilot_mle(&log, &MleConfig::default()),
            Err(Error::NonSingletonLog)
        ));
    }

    #[test]
    fn pilot_recovers_generator_roughly() {
        let theta0 = Coefficient::new(vec![0.8, -0.5]).unwrap();
        let log = singleton_log(&theta0, 4000, 3);
        let fit = pilot_mle(&log, &MleConfig::default()).unwrap();
        assert!(fit.converged);
        let err = (fit.theta.as_vector() - theta0.as_vector()).norm();
        assert!(err < 0.2, "estimation error {err}");
        assert_abs_diff_eq!(
            fit.objective,
            log_likelihood(&fit.theta, &log).unwrap(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn pilot_all_no_purchase_flags_divergence() {
        // Every reply is no-purchase: the likelihood supremum sits at
        // infinity, so the fit must come back unconverged but finite.
        let mut log = ObservationLog::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..7 {
            let row = vec![rng.random_range(0.5..1.5), rng.random_range(-1.5..-0.5)];
            let slice = ContextSlice::from_rows(&[row], vec![0.5]).unwrap();
            log.record(&slice, &Assortment::singleton(0), None).unwrap();
        }
        let fit = pilot_mle(&log, &MleConfig::default()).unwrap();
        assert!(!fit.converged);
        assert!(fit.theta.as_vector().iter().all(|x| x.is_finite()));

        // The same data with a ridge has an interior optimum.
        let ridged = MleConfig { ridge: 1e-6, ..MleConfig::default() };
        let fit = pilot_mle(&log, &ridged).unwrap();
        assert!(fit.converged);
    }

    #[test]
    fn pilot_monotone_in_iteration_budget() {
        let theta0 = Coefficient::new(vec![0.6, -0.3]).unwrap();
        let log = singleton_log(&theta0, 200, 9);
        let mut prev = f64::NEG_INFINITY;
        for max_iterations in 1..=8 {
            let cfg = MleConfig { max_iterations, ..MleConfig::default() };
            let fit = pilot_mle(&log, &cfg).unwrap();
            assert!(
                fit.objective >= prev - 1e-9,
                "objective decreased: {} -> {}",
                prev,
                fit.objective
            );
            prev = fit.objective;
        }
    }

    #[test]
    fn local_zero_radius_returns_center() {
        let theta0 = Coefficient::new(vec![0.4]).unwrap();
        let log = singleton_log(&theta0, 50, 13);
        let center = Coefficient::new(vec![0.1]).unwrap();
        let fit = local_mle(&log, &center, 0.0, None, &MleConfig::default()).unwrap();
        assert_eq!(fit.theta, center);
        assert!(fit.active_constraint);
        assert!(fit.converged);
        assert_eq!(fit.iterations, 0);
        assert_abs_diff_eq!(
            fit.objective,
            log_likelihood(&center, &log).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn local_stays_feasible_and_flags_boundary() {
        // Center far from the unconstrained optimum with a small radius:
        // the solution must land on the boundary.
        let theta0 = Coefficient::new(vec![1.5, 0.0]).unwrap();
        let log = singleton_log(&theta0, 2000, 17);
        let center = Coefficient::zeros(2);
        let tau = 0.3;
        let fit = local_mle(&log, &center, tau, None, &MleConfig::default()).unwrap();
        let dist = (fit.theta.as_vector() - center.as_vector()).norm();
        assert!(dist <= tau + 1e-9, "infeasible: {dist}");
        assert!(fit.active_constraint);
    }

    #[test]
    fn local_interior_matches_pilot() {
        // A radius big enough to contain the unconstrained optimum: the
        // constrained fit should match the pilot fit's likelihood.
        let theta0 = Coefficient::new(vec![0.5, -0.2]).unwrap();
        let log = singleton_log(&theta0, 1000, 21);
        let pilot = pilot_mle(&log, &MleConfig::default()).unwrap();
        let fit = local_mle(&log, &Coefficient::zeros(2), 5.0, None, &MleConfig::default()).unwrap();
        assert!(fit.converged);
        assert!(!fit.active_constraint);
        assert_abs_diff_eq!(fit.objective, pilot.objective, epsilon = 1e-7);
    }

    #[test]
    fn local_warm_start_outside_ball_is_projected() {
        let theta0 = Coefficient::new(vec![0.5]).unwrap();
        let log = singleton_log(&theta0, 100, 29);
        let center = Coefficient::zeros(1);
        let warm = Coefficient::new(vec![50.0]).unwrap();
        let fit = local_mle(&log, &center, 0.4, Some(&warm), &MleConfig::default()).unwrap();
        assert!((fit.theta.as_vector() - center.as_vector()).norm() <= 0.4 + 1e-9);
    }

    #[test]
    fn local_monotone_in_iteration_budget() {
        let theta0 = Coefficient::new(vec![0.9, -0.6]).unwrap();
        let log = singleton_log(&theta0, 300, 33);
        let center = Coefficient::zeros(2);
        let mut prev = f64::NEG_INFINITY;
        for max_iterations in 1..=8 {
            let cfg = MleConfig { max_iterations, ..MleConfig::default() };
            let fit = local_mle(&log, &center, 0.5, None, &cfg).unwrap();
            assert!(fit.objective >= prev - 1e-9);
            prev = fit.objective;
        }
    }
}
