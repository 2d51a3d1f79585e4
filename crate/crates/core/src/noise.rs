//! Sensory noise on linear speed: Gaussian white noise or an Ornstein-Uhlenbeck
//! drift, added to the speed before the velocity vector is rebuilt from the
//! heading.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    None,
    Gaussian,
    Ou,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Ou => "ou",
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseKind::None),
            "gaussian" => Ok(NoiseKind::Gaussian),
            "ou" => Ok(NoiseKind::Ou),
            other => Err(Error::config(format!("unknown noise kind '{other}'"))),
        }
    }
}

/// OU discretisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OuScheme {
    /// `ξ' = ξ e^{-dt/τ} + σ sqrt(1 - e^{-2dt/τ}) N(0,1)`, stationary for any dt.
    #[default]
    Exact,
    /// Euler-Maruyama: `ξ' = ξ - ξ dt/τ + σ sqrt(2 dt/τ) N(0,1)`.
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    /// Gaussian intensity, in the units of the corrupted speed.
    pub h: f64,
    pub ou_tau: f64,
    pub ou_sigma: f64,
    pub ou_scheme: OuScheme,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKind::None,
            h: 0.0,
            ou_tau: 0.5,
            ou_sigma: 0.0,
            ou_scheme: OuScheme::Exact,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn gaussian(h: f64) -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            h,
            ..Self::default()
        }
    }

    pub fn ou(tau: f64, sigma: f64) -> Self {
        Self {
            kind: NoiseKind::Ou,
            ou_tau: tau,
            ou_sigma: sigma,
            ..Self::default()
        }
    }

    /// Config with the noise intensity set: `h` for Gaussian, `σ` for OU.
    pub fn with_intensity(mut self, noi: f64) -> Self {
        match self.kind {
            NoiseKind::Gaussian => self.h = noi,
            NoiseKind::Ou => self.ou_sigma = noi,
            NoiseKind::None => {}
        }
        self
    }

    pub fn intensity(&self) -> f64 {
        match self.kind {
            NoiseKind::Gaussian => self.h,
            NoiseKind::Ou => self.ou_sigma,
            NoiseKind::None => 0.0,
        }
    }

    pub fn is_silent(&self) -> bool {
        self.intensity() == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return Err(Error::config(format!("noise h={} must be >= 0", self.h)));
        }
        if !(self.ou_tau > 0.0 && self.ou_tau.is_finite()) {
            return Err(Error::config(format!("ou_tau={} must be > 0", self.ou_tau)));
        }
        if !(self.ou_sigma >= 0.0 && self.ou_sigma.is_finite()) {
            return Err(Error::config(format!(
                "ou_sigma={} must be >= 0",
                self.ou_sigma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisySpeeds {
    pub speeds: Vec<f64>,
    /// How many samples went negative and were clamped to 0.
    pub clamped: usize,
}

/// Per-step OU drift of length `n`, started from the stationary distribution.
pub fn ou_path<R: Rng + ?Sized>(
    n: usize,
    tau: f64,
    sigma: f64,
    dt: f64,
    scheme: OuScheme,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let mut xi = sigma * rng.sample::<f64, _>(StandardNormal);
    let (decay, kick) = match scheme {
        OuScheme::Exact => {
            let d = (-dt / tau).exp();
            (d, sigma * (-(-2.0 * dt / tau).exp_m1()).sqrt())
        }
        OuScheme::Euler => (1.0 - dt / tau, sigma * (2.0 * dt / tau).sqrt()),
    };
    out.push(xi);
    for _ in 1..n {
        let z: f64 = rng.sample(StandardNormal);
        xi = xi * decay + kick * z;
        out.push(xi);
    }
    out
}

/// Adds noise to `speeds` (sampled every `dt` seconds) and clamps at 0.
pub fn corrupt_speeds<R: Rng + ?Sized>(
    speeds: &[f64],
    config: &NoiseConfig,
    dt: f64,
    rng: &mut R,
) -> Result<NoisySpeeds> {
    config.validate()?;
    if let Some(i) = speeds.iter().position(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::config(format!(
            "speed[{i}]={} is not a finite non-negative value",
            speeds[i]
        )));
    }
    let perturbation: Vec<f64> = match config.kind {
        NoiseKind::None => return Ok(clean(speeds)),
        NoiseKind::Gaussian if config.h == 0.0 => return Ok(clean(speeds)),
        NoiseKind::Ou if config.ou_sigma == 0.0 => return Ok(clean(speeds)),
        NoiseKind::Gaussian => speeds
            .iter()
            .map(|_| config.h * rng.sample::<f64, _>(StandardNormal))
            .collect(),
        NoiseKind::Ou => ou_path(
            speeds.len(),
            config.ou_tau,
            config.ou_sigma,
            dt,
            config.ou_scheme,
            rng,
        ),
    };
    let mut clamped = 0;
    let speeds = speeds
        .iter()
        .zip(&perturbation)
        .map(|(s, e)| {
            let v = s + e;
            if v < 0.0 {
                clamped += 1;
                0.0
            } else {
                v
            }
        })
        .collect();
    Ok(NoisySpeeds { speeds, clamped })
}

fn clean(speeds: &[f64]) -> NoisySpeeds {
    NoisySpeeds {
        speeds: speeds.to_vec(),
        clamped: 0,
    }
}

/// Noise stream for one trajectory, keyed below the config seed.
pub fn noise_stream(config: &NoiseConfig, keys: &[u64]) -> StreamRng {
    let mut k = Vec::with_capacity(keys.len() + 1);
    k.push(domain::NOISE);
    k.extend_from_slice(keys);
    rng::stream(config.seed, &k)
}

pub fn rebuild_velocity(speed: f64, heading: f64) -> [f64; 2] {
    let (s, c) = heading.sin_cos();
    [speed * c, speed * s]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn speeds(n: usize) -> Vec<f64> {
        (0..n).map(|i| 0.5 + 0.25 * ((i as f64) * 0.37).sin()).collect()
    }

    #[test]
    fn silent_configs_are_identity() {
        let s = speeds(100);
        let mut rng = StreamRng::seed_from_u64(1);
        for cfg in [
            NoiseConfig::default(),
            NoiseConfig::gaussian(0.0),
            NoiseConfig::ou(0.5, 0.0),
        ] {
            let out = corrupt_speeds(&s, &cfg, 0.02, &mut rng).unwrap();
            assert_eq!(out.speeds, s);
            assert_eq!(out.clamped, 0);
        }
    }

    #[test]
    fn invalid_configs() {
        let mut rng = StreamRng::seed_from_u64(1);
        let bad = NoiseConfig::gaussian(-1.0);
        assert!(corrupt_speeds(&[1.0], &bad, 0.02, &mut rng).is_err());
        assert!(corrupt_speeds(&[-1.0], &NoiseConfig::gaussian(0.1), 0.02, &mut rng).is_err());
        assert!("brown".parse::<NoiseKind>().is_err());
        assert_eq!("ou".parse::<NoiseKind>().unwrap(), NoiseKind::Ou);
        let err = toml::from_str::<NoiseConfig>("kind = \"pink\"").unwrap_err();
        assert!(err.to_string().contains("pink"));
    }

    #[test]
    fn gaussian_moments() {
        let n = 1_000_000;
        let h = 0.3;
        let s = vec![100.0; n];
        let mut rng = StreamRng::seed_from_u64(7);
        let out = corrupt_speeds(&s, &NoiseConfig::gaussian(h), 0.02, &mut rng).unwrap();
        assert_eq!(out.clamped, 0);
        let d: Vec<f64> = out.speeds.iter().map(|v| v - 100.0).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 3.0 * h / (n as f64).sqrt());
        assert!((var.sqrt() / h - 1.0).abs() < 0.02);
    }

    #[test]
    fn clamping_is_counted() {
        let s = vec![0.0; 10_000];
        let mut rng = StreamRng::seed_from_u64(3);
        let out = corrupt_speeds(&s, &NoiseConfig::gaussian(1.0), 0.02, &mut rng).unwrap();
        assert!(out.speeds.iter().all(|v| *v >= 0.0));
        let zeros = out.speeds.iter().filter(|v| **v == 0.0).count();
        assert_eq!(zeros, out.clamped);
        assert!((out.clamped as f64 / 10_000.0 - 0.5).abs() < 0.03);
    }

    fn ou_moments(scheme: OuScheme, tol_var: f64) {
        let (n, tau, sigma, dt) = (1_000_000, 0.5, 0.05, 0.02);
        let mut rng = StreamRng::seed_from_u64(11);
        let xi = ou_path(n, tau, sigma, dt, scheme, &mut rng);
        let mean = xi.iter().sum::<f64>() / n as f64;
        let var = xi.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((var / (sigma * sigma) - 1.0).abs() < tol_var, "var {var}");
        let max_lag = (2.0 * tau / dt) as usize;
        for k in [1, 5, 10, 25, max_lag] {
            let c = xi[..n - k]
                .iter()
                .zip(&xi[k..])
                .map(|(a, b)| (a - mean) * (b - mean))
                .sum::<f64>()
                / (n - k) as f64;
            let want = (-(k as f64) * dt / tau).exp();
            assert!((c / var - want).abs() < 0.02, "lag {k}: {} vs {want}", c / var);
        }
    }

    #[test]
    fn ou_exact_stationary_moments() {
        ou_moments(OuScheme::Exact, 0.02);
    }

    #[test]
    fn ou_euler_is_close_for_small_steps() {
        // first-order scheme: stationary variance is σ²/(1 - dt/(2τ))
        ou_moments(OuScheme::Euler, 0.05);
    }

    #[test]
    fn streams_are_independent() {
        let n = 100_000;
        let cfg = NoiseConfig::gaussian(1.0);
        let s = vec![10.0; n];
        let a = corrupt_speeds(&s, &cfg, 0.02, &mut noise_stream(&cfg, &[0, 0])).unwrap();
        let b = corrupt_speeds(&s, &cfg, 0.02, &mut noise_stream(&cfg, &[0, 1])).unwrap();
        let da: Vec<f64> = a.speeds.iter().map(|v| v - 10.0).collect();
        let db: Vec<f64> = b.speeds.iter().map(|v| v - 10.0).collect();
        let dot: f64 = da.iter().zip(&db).map(|(x, y)| x * y).sum();
        let na: f64 = da.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = db.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((dot / (na * nb)).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn rebuild_cases() {
        assert_eq!(rebuild_velocity(0.0, 1.3), [0.0, 0.0]);
        let v = rebuild_velocity(1.0, std::f64::consts::FRAC_PI_2);
        assert!(v[0].abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn rebuild_preserves_norm(s in 0.0f64..100.0, th in -10.0f64..10.0) {
            let v = rebuild_velocity(s, th);
            proptest::prop_assert!((v[0].hypot(v[1]) - s).abs() < 1e-12);
        }
    }
}
