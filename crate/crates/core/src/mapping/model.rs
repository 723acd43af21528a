use statrs::function::gamma::ln_gamma;

use super::{InverseDepthEstimate, ResidualModel};
use crate::error::{Error, Result};

/// Location-scale Student's t parameters `(mu, s, nu)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StudentT {
    pub mean: f64,
    pub scale: f64,
    pub dof: f64,
}

impl StudentT {
    pub fn new(mean: f64, scale: f64, dof: f64) -> Self {
        Self { mean, scale, dof }
    }

    pub fn variance(&self) -> Result<f64> {
        if self.dof <= 2.0 {
            return Err(Error::UndefinedVariance(self.dof));
        }
        Ok(self.dof / (self.dof - 2.0) * self.scale * self.scale)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let nu = self.dof;
        let z = (x - self.mean) / self.scale;
        ln_gamma(0.5 * (nu + 1.0))
            - ln_gamma(0.5 * nu)
            - 0.5 * (nu * std::f64::consts::PI).ln()
            - self.scale.ln()
            - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p()
    }

    /// Mean negative log-likelihood of `samples`.
    pub fn nll(&self, samples: &[f64]) -> f64 {
        -samples.iter().map(|&x| self.ln_pdf(x)).sum::<f64>() / samples.len() as f64
    }
}

impl From<ResidualModel> for StudentT {
    fn from(m: ResidualModel) -> Self {
        Self::new(m.mean, m.scale, m.dof)
    }
}

/// `sigma^2 = nu / (nu - 2) * s^2`.
pub fn variance_of(e: &InverseDepthEstimate) -> Result<f64> {
    e.dist().variance()
}

/// Scale and degrees of freedom of the inverse-depth belief: `s^2 = s_r^2 / |J|^2`, `nu = nu_r`.
pub fn estimate_uncertainty(jacobian: &[f64], model: &ResidualModel) -> Result<(f64, f64)> {
    let norm2: f64 = jacobian.iter().map(|j| j * j).sum();
    if !(norm2 > 0.0) {
        return Err(Error::ZeroJacobian);
    }
    Ok((model.scale * model.scale / norm2, model.dof))
}

pub const MIN_FIT_SAMPLES: usize = 1000;

const DOF_BOUNDS: (f64, f64) = (0.2, 500.0);

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// EM for location and scale at a fixed `nu`, warm-started from `(mean, scale)`.
fn em_location_scale(x: &[f64], nu: f64, mut mean: f64, mut scale: f64) -> (f64, f64) {
    let n = x.len() as f64;
    for _ in 0..500 {
        let inv_s2 = 1.0 / (scale * scale);
        let (mut sw, mut swx) = (0.0, 0.0);
        let weights: Vec<f64> = x
            .iter()
            .map(|&v| {
                let d = v - mean;
                (nu + 1.0) / (nu + d * d * inv_s2)
            })
            .collect();
        for (w, &v) in weights.iter().zip(x) {
            sw += w;
            swx += w * v;
        }
        let new_mean = swx / sw;
        let ss: f64 = weights
            .iter()
            .zip(x)
            .map(|(w, &v)| w * (v - new_mean) * (v - new_mean))
            .sum();
        let new_scale = (ss / n).sqrt().max(f64::MIN_POSITIVE);
        let done = (new_mean - mean).abs() <= 1e-10 * scale
            && (new_scale - scale).abs() <= 1e-10 * scale;
        mean = new_mean;
        scale = new_scale;
        if done {
            break;
        }
    }
    (mean, scale)
}

/// Maximum-likelihood Student's t fit: EM for location/scale nested in a
/// golden-section search over `log(nu)`.
pub fn fit_residual_model(samples: &[f64]) -> Result<ResidualModel> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::TooFewSamples {
            got: samples.len(),
            need: MIN_FIT_SAMPLES,
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let med = median(&sorted);
    let mut dev: Vec<f64> = sorted.iter().map(|v| (v - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mut scale0 = 1.4826 * median(&dev);
    if scale0 <= 0.0 {
        let g = fit_gaussian(samples)?;
        scale0 = g.std_dev;
    }

    let profile = |log_nu: f64, start: (f64, f64)| {
        let nu = log_nu.exp();
        let (m, s) = em_location_scale(samples, nu, start.0, start.1);
        (StudentT::new(m, s, nu).nll(samples), (m, s))
    };

    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (DOF_BOUNDS.0.ln(), DOF_BOUNDS.1.ln());
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let start = (med, scale0);
    let (mut fc, mut sc) = profile(c, start);
    let (mut fd, mut sd) = profile(d, start);
    while b - a > 1e-4 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            sd = sc;
            c = b - phi * (b - a);
            (fc, sc) = profile(c, sc);
        } else {
            a = c;
            c = d;
            fc = fd;
            sc = sd;
            d = a + phi * (b - a);
            (fd, sd) = profile(d, sd);
        }
    }
    let log_nu = 0.5 * (a + b);
    let (_, (mean, scale)) = profile(log_nu, if fc < fd { sc } else { sd });
    ResidualModel::new(mean, scale, log_nu.exp().max(1.0 + 1e-9))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianFit {
    pub mean: f64,
    pub std_dev: f64,
}

pub fn fit_gaussian(samples: &[f64]) -> Result<GaussianFit> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::ZeroSpread);
    }
    Ok(GaussianFit {
        mean,
        std_dev: var.sqrt(),
    })
}

/// Mean negative log-likelihood under a normal distribution.
pub fn gaussian_nll(fit: &GaussianFit, samples: &[f64]) -> f64 {
    let ln_norm = 0.5 * (2.0 * std::f64::consts::PI).ln() + fit.std_dev.ln();
    samples
        .iter()
        .map(|&x| {
            let z = (x - fit.mean) / fit.std_dev;
            ln_norm + 0.5 * z * z
        })
        .sum::<f64>()
        / samples.len() as f64
}
