use nalgebra::{DMatrix, SMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::kalman::{kalman_filter, kalman_smooth, symmetrize, KalmanModel};
use crate::{Error, Result};

/// Largest tolerated likelihood decrease between iterations, relative to
/// `max(1, |ll|)`.
pub const LIKELIHOOD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmOptions {
    pub max_iters: usize,
    /// Stop once the relative log-likelihood improvement drops below this.
    pub tol: f64,
    /// Lower bound on every estimated variance.
    pub variance_floor: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-6,
            variance_floor: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit<const N: usize> {
    pub model: KalmanModel<N>,
    /// Log-likelihood of each model visited, starting with the initial one.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn floor_eigen<const N: usize>(p: &SMatrix<f64, N, N>, floor: f64) -> SMatrix<f64, N, N> {
    let p = symmetrize(p);
    let eig = SymmetricEigen::new(DMatrix::from_column_slice(N, N, p.as_slice()));
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return p;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    symmetrize(&SMatrix::from_column_slice(rebuilt.as_slice()))
}

/// Maximum-likelihood estimates of the diagonal process noise, the
/// observation noise and the initial state, holding `A`, `b`, `C` and `d`
/// fixed.
///
/// Each M-step maximizes the expected complete-data log-likelihood subject to
/// the variance floors, so the likelihood cannot decrease; a decrease beyond
/// [`LIKELIHOOD_TOLERANCE`] is reported as an error.
pub fn fit_em<const N: usize>(observations: &[f64], initial: &KalmanModel<N>, opts: &EmOptions) -> Result<EmFit<N>> {
    if observations.len() < 4 {
        return Err(Error::Data(format!(
            "EM needs at least 4 observations, got {}",
            observations.len()
        )));
    }
    initial.validate()?;
    let len = observations.len();
    let floor = opts.variance_floor.max(0.0);
    let mut model = *initial;
    let mut lls: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    let check = |lls: &[f64], ll: f64, it: usize| -> Result<()> {
        if let Some(&prev) = lls.last() {
            if ll < prev - LIKELIHOOD_TOLERANCE * prev.abs().max(1.0) {
                return Err(Error::Numerical(format!(
                    "EM log-likelihood decreased at iteration {it}: {prev} -> {ll}"
                )));
            }
        }
        Ok(())
    };

    for it in 0..opts.max_iters {
        let sm = kalman_smooth(observations, &model)?;
        check(&lls, sm.log_likelihood, it)?;
        if let Some(&prev) = lls.last() {
            if (sm.log_likelihood - prev).abs() <= opts.tol * prev.abs().max(1.0) {
                lls.push(sm.log_likelihood);
                converged = true;
                break;
            }
        }
        lls.push(sm.log_likelihood);

        let a = model.transition;
        let c = model.observation;
        let mut next = model;

        let mut s = SMatrix::<f64, N, N>::zeros();
        for t in 1..len {
            let r = sm.means[t] - a * sm.means[t - 1] - model.transition_offset;
            let cross = sm.lag_one_covariances[t];
            s += r * r.transpose() + sm.covariances[t]
                - a * cross.transpose()
                - cross * a.transpose()
                + a * sm.covariances[t - 1] * a.transpose();
        }
        let mut q = SMatrix::<f64, N, N>::zeros();
        for i in 0..N {
            q[(i, i)] = (s[(i, i)] / (len - 1) as f64).max(floor);
        }
        next.process_noise = q;

        let mut r_sum = 0.0;
        for t in 0..len {
            let e = observations[t] - (c * sm.means[t])[(0, 0)] - model.observation_offset;
            r_sum += e * e + (c * sm.covariances[t] * c.transpose())[(0, 0)];
        }
        next.observation_noise = (r_sum / len as f64).max(floor);

        next.initial_mean = sm.means[0];
        next.initial_covariance = floor_eigen(&sm.covariances[0], floor);

        model = next;
        iterations = it + 1;
    }

    if !converged && opts.max_iters > 0 {
        let ll = kalman_filter(observations, &model)?.log_likelihood;
        check(&lls, ll, iterations)?;
        lls.push(ll);
    }
    Ok(EmFit {
        model,
        log_likelihoods: lls,
        iterations,
        converged,
    })
}

/// Data-driven starting point for a constant-velocity fit.
pub fn constant_velocity_start(observations: &[f64], floor: f64) -> KalmanModel<2> {
    let diffs: Vec<f64> = observations.windows(2).map(|w| w[1] - w[0]).collect();
    let v = if diffs.is_empty() {
        0.0
    } else {
        diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64
    };
    let v = v.max(floor).max(f64::MIN_POSITIVE);
    let z0 = observations.first().copied().unwrap_or(0.0);
    let v0 = diffs.first().copied().unwrap_or(0.0);
    KalmanModel::constant_velocity(
        0.5 * v,
        0.1 * v,
        0.5 * v,
        [z0, v0],
        SMatrix::<f64, 2, 2>::new(v, 0.0, 0.0, v),
    )
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    fn simulate_rw(q: f64, r: f64, len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Normal::new(0.0, q.sqrt()).unwrap();
        let v = Normal::new(0.0, r.sqrt()).unwrap();
        let mut x = 0.0;
        (0..len)
            .map(|_| {
                x += w.sample(&mut rng);
                x + v.sample(&mut rng)
            })
            .collect()
    }

    #[test]
    fn zero_iterations_is_identity() {
        let m = KalmanModel::random_walk(0.3, 0.2, 0.0, 1.0);
        let fit = fit_em(&[1.0, 2.0, 1.5, 0.3], &m, &EmOptions { max_iters: 0, ..Default::default() }).unwrap();
        assert_eq!(fit.model, m);
        assert_eq!(fit.iterations, 0);
    }

    #[test]
    fn too_short() {
        let m = KalmanModel::random_walk(0.3, 0.2, 0.0, 1.0);
        assert!(matches!(fit_em(&[1.0, 2.0, 3.0], &m, &EmOptions::default()), Err(Error::Data(_))));
    }

    #[test]
    fn recovers_random_walk_noise() {
        let (q, r) = (0.5, 2.0);
        let opts = EmOptions { max_iters: 2000, tol: 1e-12, ..Default::default() };
        let (mut q_sum, mut r_sum) = (0.0, 0.0);
        let seeds = 0..8u64;
        for seed in seeds.clone() {
            let z = simulate_rw(q, r, 500, seed);
            let start = KalmanModel::random_walk(1.0, 1.0, z[0], 10.0);
            let fit = fit_em(&z, &start, &opts).unwrap();
            let (qh, rh) = (fit.model.process_noise[(0, 0)], fit.model.observation_noise);
            assert!((qh - q).abs() / q < 0.25, "seed {seed}: q = {qh}");
            assert!((rh - r).abs() / r < 0.25, "seed {seed}: r = {rh}");
            q_sum += qh;
            r_sum += rh;
        }
        let n = seeds.count() as f64;
        assert!((q_sum / n - q).abs() / q < 0.1);
        assert!((r_sum / n - r).abs() / r < 0.1);
    }

    #[test]
    fn monotone_over_fifty_iterations() {
        let z = simulate_rw(0.1, 0.3, 40, 5);
        let start = constant_velocity_start(&z, 1e-12);
        let opts = EmOptions { max_iters: 50, tol: 0.0, ..Default::default() };
        let fit = fit_em(&z, &start, &opts).unwrap();
        assert_eq!(fit.iterations, 50);
        for w in fit.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - LIKELIHOOD_TOLERANCE * w[0].abs().max(1.0));
        }
    }
}
