//! Brute-force Gaussian conditioning over the stacked state of a
//! linear-Gaussian model, with no recursion.

use nalgebra::{DMatrix, DVector};
use txdrift::trajectory::KalmanModel;

pub struct Posterior {
    /// Per-step state means, `n` components each.
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

pub struct JointGaussian {
    n: usize,
    len: usize,
    mu_x: DVector<f64>,
    sigma_xx: DMatrix<f64>,
    mu_z: DVector<f64>,
    sigma_zz: DMatrix<f64>,
    sigma_xz: DMatrix<f64>,
}

fn to_d<const R: usize, const C: usize>(m: &nalgebra::SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

impl JointGaussian {
    pub fn new<const N: usize>(model: &KalmanModel<N>, len: usize) -> Self {
        let a = to_d(&model.transition);
        let b = DVector::from_column_slice(model.transition_offset.as_slice());
        let q = to_d(&model.process_noise);
        let c = to_d(&model.observation);
        let p0 = to_d(&model.initial_covariance);
        let m0 = DVector::from_column_slice(model.initial_mean.as_slice());

        let mut powers = vec![DMatrix::identity(N, N)];
        for t in 1..len {
            powers.push(&a * &powers[t - 1]);
        }
        let mut mu_x = DVector::zeros(N * len);
        let mut m = m0.clone();
        for t in 0..len {
            mu_x.rows_mut(t * N, N).copy_from(&m);
            m = &a * &m + &b;
        }
        // Cov(x_t, x_u) = A^t P0 (A^u)' + sum_{s < min(t,u)} A^{t-1-s} Q (A^{u-1-s})'.
        let mut sigma_xx = DMatrix::zeros(N * len, N * len);
        for t in 0..len {
            for u in 0..len {
                let mut blk = &powers[t] * &p0 * powers[u].transpose();
                for s in 0..t.min(u) {
                    blk += &powers[t - 1 - s] * &q * powers[u - 1 - s].transpose();
                }
                sigma_xx.view_mut((t * N, u * N), (N, N)).copy_from(&blk);
            }
        }
        let mut c_blk = DMatrix::zeros(len, N * len);
        for t in 0..len {
            c_blk.view_mut((t, t * N), (1, N)).copy_from(&c);
        }
        let mu_z = &c_blk * &mu_x + DVector::from_element(len, model.observation_offset);
        let sigma_xz = &sigma_xx * c_blk.transpose();
        let sigma_zz = &c_blk * &sigma_xz + DMatrix::identity(len, len) * model.observation_noise;
        Self {
            n: N,
            len,
            mu_x,
            sigma_xx,
            mu_z,
            sigma_zz,
            sigma_xz,
        }
    }

    /// `P(x_t | z_0..z_{k-1})` for every `t`.
    pub fn condition(&self, z: &[f64], k: usize) -> Posterior {
        let n = self.n;
        let s = self.sigma_zz.view((0, 0), (k, k)).into_owned();
        let s_inv = s.try_inverse().expect("observation covariance is singular");
        let xz = self.sigma_xz.columns(0, k).into_owned();
        let resid = DVector::from_column_slice(&z[..k]) - self.mu_z.rows(0, k);
        let mean = &self.mu_x + &xz * &s_inv * resid;
        let cov = &self.sigma_xx - &xz * &s_inv * xz.transpose();
        Posterior {
            means: (0..self.len).map(|t| mean.rows(t * n, n).into_owned()).collect(),
            covariances: (0..self.len)
                .map(|t| cov.view((t * n, t * n), (n, n)).into_owned())
                .collect(),
        }
    }

    /// Filtered moments: step `t` conditioned on `z_0..z_t`.
    pub fn filtered(&self, z: &[f64]) -> Posterior {
        let mut out = Posterior {
            means: Vec::new(),
            covariances: Vec::new(),
        };
        for t in 0..self.len {
            let p = self.condition(z, t + 1);
            out.means.push(p.means[t].clone());
            out.covariances.push(p.covariances[t].clone());
        }
        out
    }

    pub fn smoothed(&self, z: &[f64]) -> Posterior {
        self.condition(z, self.len)
    }

    /// `log N(z; mu_z, Sigma_zz)`.
    pub fn log_likelihood(&self, z: &[f64]) -> f64 {
        let resid = DVector::from_column_slice(z) - &self.mu_z;
        let chol = self.sigma_zz.clone().cholesky().expect("observation covariance is not PD");
        let solved = chol.solve(&resid);
        let log_det: f64 = chol.l().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
        -0.5 * (self.len as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + resid.dot(&solved))
    }
}
