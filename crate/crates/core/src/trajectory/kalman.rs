use nalgebra::{DMatrix, SMatrix, SVector, SymmetricEigen};

use crate::{Error, Result};

/// Time-invariant linear-Gaussian model with an `N`-dimensional state and a
/// scalar observation:
///
/// `x_{t+1} = A x_t + b + w_t,  w_t ~ N(0, Q)`
/// `z_t     = C x_t + d + v_t,  v_t ~ N(0, R)`
/// `x_0 ~ N(m_0, P_0)`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanModel<const N: usize> {
    pub transition: SMatrix<f64, N, N>,
    pub transition_offset: SVector<f64, N>,
    pub process_noise: SMatrix<f64, N, N>,
    pub observation: SMatrix<f64, 1, N>,
    pub observation_offset: f64,
    pub observation_noise: f64,
    pub initial_mean: SVector<f64, N>,
    pub initial_covariance: SMatrix<f64, N, N>,
}

impl KalmanModel<1> {
    /// `x_{t+1} = x_t + w`, `z_t = x_t + v`.
    pub fn random_walk(q: f64, r: f64, initial_mean: f64, initial_var: f64) -> Self {
        Self {
            transition: SMatrix::identity(),
            transition_offset: SVector::zeros(),
            process_noise: SMatrix::from_element(q),
            observation: SMatrix::identity(),
            observation_offset: 0.0,
            observation_noise: r,
            initial_mean: SVector::from_element(initial_mean),
            initial_covariance: SMatrix::from_element(initial_var),
        }
    }
}

impl KalmanModel<2> {
    /// State `[position, velocity]` with `A = [[1, 1], [0, 1]]`, `C = [1, 0]`
    /// and diagonal process noise.
    pub fn constant_velocity(
        q_position: f64,
        q_velocity: f64,
        r: f64,
        initial_mean: [f64; 2],
        initial_covariance: SMatrix<f64, 2, 2>,
    ) -> Self {
        Self {
            transition: SMatrix::<f64, 2, 2>::new(1.0, 1.0, 0.0, 1.0),
            transition_offset: SVector::zeros(),
            process_noise: SMatrix::<f64, 2, 2>::new(q_position, 0.0, 0.0, q_velocity),
            observation: SMatrix::<f64, 1, 2>::new(1.0, 0.0),
            observation_offset: 0.0,
            observation_noise: r,
            initial_mean: SVector::<f64, 2>::new(initial_mean[0], initial_mean[1]),
            initial_covariance,
        }
    }
}

/// Relative tolerance for symmetry and PSD checks. Smoothed covariances of
/// nearly deterministic states lose several digits to cancellation, so this
/// sits well above machine precision.
const PSD_TOL: f64 = 1e-7;

pub(crate) fn symmetrize<const N: usize>(p: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (p + p.transpose()) * 0.5
}

/// Symmetric PSD up to a tolerance scaled by the matrix magnitude.
pub(crate) fn is_psd<const N: usize>(p: &SMatrix<f64, N, N>) -> bool {
    if p.iter().any(|x| !x.is_finite()) {
        return false;
    }
    let scale = p.amax().max(f64::MIN_POSITIVE);
    if (p - p.transpose()).amax() > PSD_TOL * scale {
        return false;
    }
    match N {
        1 => p[(0, 0)] >= -PSD_TOL * scale,
        2 => {
            let (a, b, c) = (p[(0, 0)], p[(0, 1)], p[(1, 1)]);
            let half_gap = (0.5 * (a - c)).hypot(b);
            0.5 * (a + c) - half_gap >= -PSD_TOL * scale
        }
        _ => SymmetricEigen::new(DMatrix::from_column_slice(N, N, symmetrize(p).as_slice()))
            .eigenvalues
            .iter()
            .all(|&l| l >= -PSD_TOL * scale),
    }
}

impl<const N: usize> KalmanModel<N> {
    pub fn validate(&self) -> Result<()> {
        let finite = self.transition.iter().all(|x| x.is_finite())
            && self.transition_offset.iter().all(|x| x.is_finite())
            && self.process_noise.iter().all(|x| x.is_finite())
            && self.observation.iter().all(|x| x.is_finite())
            && self.observation_offset.is_finite()
            && self.observation_noise.is_finite()
            && self.initial_mean.iter().all(|x| x.is_finite())
            && self.initial_covariance.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::Numerical("model parameters must be finite".into()));
        }
        if !is_psd(&self.process_noise) {
            return Err(Error::Numerical("process noise covariance is not symmetric PSD".into()));
        }
        if self.observation_noise < 0.0 {
            return Err(Error::Numerical("observation noise variance is negative".into()));
        }
        if !is_psd(&self.initial_covariance) {
            return Err(Error::Numerical("initial covariance is not symmetric PSD".into()));
        }
        Ok(())
    }
}

/// Forward pass: `P(x_t | z_0..z_t)` for every `t`, plus the one-step
/// predictions `P(x_t | z_0..z_{t-1})` and the total log-likelihood.
#[derive(Debug, Clone)]
pub struct FilterOutput<const N: usize> {
    pub predicted_means: Vec<SVector<f64, N>>,
    pub predicted_covariances: Vec<SMatrix<f64, N, N>>,
    pub means: Vec<SVector<f64, N>>,
    pub covariances: Vec<SMatrix<f64, N, N>>,
    pub log_likelihood: f64,
}

pub fn kalman_filter<const N: usize>(observations: &[f64], model: &KalmanModel<N>) -> Result<FilterOutput<N>> {
    model.validate()?;
    if let Some(t) = observations.iter().position(|z| !z.is_finite()) {
        return Err(Error::Data(format!("observation {t} is not finite")));
    }
    let len = observations.len();
    let mut out = FilterOutput {
        predicted_means: Vec::with_capacity(len),
        predicted_covariances: Vec::with_capacity(len),
        means: Vec::with_capacity(len),
        covariances: Vec::with_capacity(len),
        log_likelihood: 0.0,
    };
    let a = model.transition;
    let c = model.observation;
    let identity = SMatrix::<f64, N, N>::identity();
    let mut m_pred = model.initial_mean;
    let mut p_pred = model.initial_covariance;

    for (t, &z) in observations.iter().enumerate() {
        let s = (c * p_pred * c.transpose())[(0, 0)] + model.observation_noise;
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Numerical(format!(
                "step {t}: innovation variance {s} is not positive"
            )));
        }
        let gain = p_pred * c.transpose() / s;
        let innovation = z - (c * m_pred)[(0, 0)] - model.observation_offset;
        let m = m_pred + gain * innovation;
        // Joseph form keeps the update PSD under rounding.
        let ikc = identity - gain * c;
        let p = symmetrize(&(ikc * p_pred * ikc.transpose() + gain * gain.transpose() * model.observation_noise));
        if !is_psd(&p) {
            return Err(Error::Numerical(format!("step {t}: filtered covariance is not PSD")));
        }
        out.log_likelihood += -0.5 * ((2.0 * std::f64::consts::PI * s).ln() + innovation * innovation / s);
        out.predicted_means.push(m_pred);
        out.predicted_covariances.push(p_pred);
        out.means.push(m);
        out.covariances.push(p);

        m_pred = a * m + model.transition_offset;
        p_pred = symmetrize(&(a * p * a.transpose() + model.process_noise));
        if !is_psd(&p_pred) {
            return Err(Error::Numerical(format!("step {t}: predicted covariance is not PSD")));
        }
    }
    Ok(out)
}

/// Rauch–Tung–Striebel smoothed estimates `P(x_t | z_0..z_{T-1})`.
#[derive(Debug, Clone)]
pub struct KalmanSmoothed<const N: usize> {
    pub means: Vec<SVector<f64, N>>,
    pub covariances: Vec<SMatrix<f64, N, N>>,
    /// `Cov(x_t, x_{t-1} | z)` for `t >= 1`; entry 0 is zero.
    pub lag_one_covariances: Vec<SMatrix<f64, N, N>>,
    pub log_likelihood: f64,
    pub filtered: FilterOutput<N>,
}

fn inverse_or_pinv<const N: usize>(p: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    p.try_inverse().unwrap_or_else(|| {
        DMatrix::from_column_slice(N, N, p.as_slice())
            .pseudo_inverse(1e-14 * p.amax().max(f64::MIN_POSITIVE))
            .map(|m| SMatrix::from_column_slice(m.as_slice()))
            .unwrap_or_else(|_| SMatrix::zeros())
    })
}

pub fn kalman_smooth<const N: usize>(observations: &[f64], model: &KalmanModel<N>) -> Result<KalmanSmoothed<N>> {
    let filtered = kalman_filter(observations, model)?;
    let len = observations.len();
    let a = model.transition;
    let mut means = filtered.means.clone();
    let mut covs = filtered.covariances.clone();
    let mut lag = vec![SMatrix::<f64, N, N>::zeros(); len];

    for t in (0..len.saturating_sub(1)).rev() {
        let p_pred = filtered.predicted_covariances[t + 1];
        let gain = filtered.covariances[t] * a.transpose() * inverse_or_pinv(&p_pred);
        means[t] = filtered.means[t] + gain * (means[t + 1] - filtered.predicted_means[t + 1]);
        let p = symmetrize(&(filtered.covariances[t] + gain * (covs[t + 1] - p_pred) * gain.transpose()));
        if !is_psd(&p) {
            return Err(Error::Numerical(format!("step {t}: smoothed covariance is not PSD")));
        }
        covs[t] = p;
        lag[t + 1] = covs[t + 1] * gain.transpose();
    }
    Ok(KalmanSmoothed {
        means,
        covariances: covs,
        lag_one_covariances: lag,
        log_likelihood: filtered.log_likelihood,
        filtered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_observations_small_noise() {
        let m = KalmanModel::random_walk(1e-6, 1e-10, 0.0, 100.0);
        let f = kalman_filter(&[3.0; 20], &m).unwrap();
        assert!((f.means.last().unwrap()[0] - 3.0).abs() < 1e-6);
        let s = kalman_smooth(&[3.0; 20], &m).unwrap();
        assert!(s.means.iter().all(|x| (x[0] - 3.0).abs() < 1e-6));
    }

    #[test]
    fn steady_state_gain_is_golden_ratio_conjugate() {
        // Riccati fixed point for A = C = 1, Q = R: prior variance P solves
        // P = PR/(P+R) + Q, giving gain K = P/(P+R) = (√5 - 1)/2.
        let m = KalmanModel::random_walk(0.7, 0.7, 0.0, 5.0);
        let z: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
        let f = kalman_filter(&z, &m).unwrap();
        let p_pred = f.predicted_covariances[59][(0, 0)];
        let k = p_pred / (p_pred + 0.7);
        assert!((k - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-6, "{k}");
        // The filtered mean is then an exponentially weighted average.
        let expected = f.means[58][0] + k * (z[59] - f.means[58][0]);
        assert!((f.means[59][0] - expected).abs() < 1e-9);
    }

    #[test]
    fn smoother_never_increases_variance() {
        let m = KalmanModel::constant_velocity(0.1, 0.01, 0.5, [0.0, 0.0], SMatrix::identity());
        let z = [0.1, 0.4, 0.2, 0.9, 1.3, 1.0, 1.8];
        let s = kalman_smooth(&z, &m).unwrap();
        for t in 0..z.len() {
            let diff = s.filtered.covariances[t] - s.covariances[t];
            assert!(is_psd(&diff), "t={t}");
        }
    }

    #[test]
    fn rejects_bad_models() {
        let mut m = KalmanModel::random_walk(0.1, 0.1, 0.0, 1.0);
        m.process_noise[(0, 0)] = -1.0;
        assert!(matches!(kalman_filter(&[1.0, 2.0], &m), Err(Error::Numerical(_))));
        let m = KalmanModel::random_walk(0.0, 0.0, 0.0, 0.0);
        assert!(matches!(kalman_filter(&[1.0], &m), Err(Error::Numerical(_))));
        let m = KalmanModel::random_walk(0.1, 0.1, 0.0, 1.0);
        assert!(kalman_filter(&[f64::NAN], &m).is_err());
    }

    #[test]
    fn noiseless_ramp_recovers_slope() {
        let z: Vec<f64> = (0..30).map(|t| 2.0 + 0.25 * t as f64).collect();
        let m = KalmanModel::constant_velocity(1e-10, 1e-10, 1e-6, [0.0, 0.0], SMatrix::identity() * 10.0);
        let s = kalman_smooth(&z, &m).unwrap();
        for x in &s.means {
            assert!((x[1] - 0.25).abs() < 1e-3, "{}", x[1]);
        }
    }
}
