//! Small random-vector helpers shared by the solvers and simulators.

use nalgebra::DVector;
use rand::Rng;

/// One standard normal draw via the Box-Muller transform.
pub(crate) fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // random::<f64>() is in [0, 1); shift to (0, 1] so the log is finite
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform draw from the unit sphere in `d` dimensions.
pub(crate) fn sample_unit_vector<R: Rng>(d: usize, rng: &mut R) -> DVector<f64> {
    assert!(d >= 1, "dimension must be positive");
    loop {
        let v = DVector::from_fn(d, |_, _| standard_normal(rng));
        let norm = v.norm();
        if norm > 1e-6 {
            return v / norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_vectors_have_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 1..6 {
            let v = sample_unit_vector(d, &mut rng);
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normals_have_plausible_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
