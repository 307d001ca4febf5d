//! Simulated benchmark data: block AR(1) Gaussian designs with linear or
//! nonlinear outcomes at a prescribed signal-to-noise ratio.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroundTruth};
use crate::error::{invalid, Result};
use crate::rng::RngStream;

/// Block sizes of the reference simulation (p = 124).
pub const DEFAULT_BLOCKS: [usize; 5] = [4, 8, 16, 32, 64];

const LINEAR_COEFFICIENTS: [f64; 4] = [-2.0, -1.0, 1.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Linear,
    Nonlinear,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Linear => "linear",
            Scenario::Nonlinear => "nonlinear",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Scenario::Linear),
            "nonlinear" => Ok(Scenario::Nonlinear),
            other => Err(format!("unknown scenario `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub block_sizes: Vec<usize>,
    pub rho_max: f64,
    pub scenario: Scenario,
    pub support_size: usize,
    pub snr: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 400,
            block_sizes: DEFAULT_BLOCKS.to_vec(),
            rho_max: 0.5,
            scenario: Scenario::Linear,
            support_size: 10,
            snr: 2.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn p(&self) -> usize {
        self.block_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return invalid(format!("n must be at least 2, got {}", self.n));
        }
        if self.block_sizes.is_empty() || self.block_sizes.contains(&0) {
            return invalid("block sizes must be non-empty and positive");
        }
        if !(0.0..1.0).contains(&self.rho_max) {
            return invalid(format!("rho_max must lie in [0, 1), got {}", self.rho_max));
        }
        if !(self.snr > 0.0) {
            return invalid(format!("snr must be positive, got {}", self.snr));
        }
        let p = self.p();
        match self.scenario {
            Scenario::Linear if self.support_size > p => invalid(format!(
                "support size {} exceeds p = {p}",
                self.support_size
            )),
            Scenario::Nonlinear if p < 5 => invalid(format!("nonlinear scenario needs p >= 5, got {p}")),
            _ if p < 2 => invalid("need at least 2 variables"),
            _ => Ok(()),
        }
    }
}

fn normals(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// `n × m` block whose columns follow a stationary unit-variance AR(1)
/// recursion, so `corr(x_i, x_j) = rho^|i-j|`.
pub fn gen_ar1_block(m: usize, rho: f64, n: usize, rng: &RngStream) -> Result<DMatrix<f64>> {
    if m == 0 {
        return invalid("block width must be at least 1");
    }
    if !(0.0..1.0).contains(&rho) {
        return invalid(format!("autocorrelation must lie in [0, 1), got {rho}"));
    }
    let mut r = rng.rng();
    let innovation = (1.0 - rho * rho).sqrt();
    let mut block = DMatrix::zeros(n, m);
    for j in 0..m {
        let xi = normals(&mut r, n);
        for i in 0..n {
            block[(i, j)] = if j == 0 {
                xi[i]
            } else {
                rho * block[(i, j - 1)] + innovation * xi[i]
            };
        }
    }
    Ok(block)
}

/// Design made of mutually independent AR(1) blocks sharing `rho_max`.
pub fn gen_design(cfg: &SimConfig, rng: &RngStream) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let mut x = DMatrix::zeros(cfg.n, cfg.p());
    let mut offset = 0;
    for (b, &m) in cfg.block_sizes.iter().enumerate() {
        let block = gen_ar1_block(m, cfg.rho_max, cfg.n, &rng.derive(b as u64))?;
        x.columns_mut(offset, m).copy_from(&block);
        offset += m;
    }
    Ok(x)
}

/// Noise scale giving `||y*||² / (sigma² ||eps||²) = snr` on the realized draw.
pub fn calibrate_noise(y_star: &DVector<f64>, eps: &DVector<f64>, snr: f64) -> Result<f64> {
    if !(snr > 0.0) {
        return invalid(format!("snr must be positive, got {snr}"));
    }
    let (sig, noise) = (y_star.norm(), eps.norm());
    if sig == 0.0 || noise == 0.0 {
        return invalid("signal and noise must have nonzero norm");
    }
    Ok(sig / (snr.sqrt() * noise))
}

/// `||y*||² / (sigma² ||eps||²)`.
pub fn realized_snr(y_star: &DVector<f64>, eps: &DVector<f64>, sigma: f64) -> f64 {
    y_star.norm_squared() / (sigma * sigma * eps.norm_squared())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearOutcome {
    pub y: DVector<f64>,
    pub y_star: DVector<f64>,
    pub eps: DVector<f64>,
    pub beta: DVector<f64>,
    pub sigma_noise: f64,
    /// Sorted support indices.
    pub support: Vec<usize>,
}

/// `y = X beta + sigma eps` with a uniformly placed support and coefficients
/// drawn from {-2, -1, 1, 2}. An empty support yields pure unit noise.
pub fn gen_linear_outcome(
    x: &DMatrix<f64>,
    support_size: usize,
    snr: f64,
    rng: &RngStream,
) -> Result<LinearOutcome> {
    let (n, p) = x.shape();
    if support_size > p {
        return invalid(format!("support size {support_size} exceeds p = {p}"));
    }
    let mut support = sample(&mut rng.derive(0).rng(), p, support_size).into_vec();
    support.sort_unstable();
    let mut coef_rng = rng.derive(1).rng();
    let mut beta = DVector::zeros(p);
    for &j in &support {
        beta[j] = LINEAR_COEFFICIENTS[coef_rng.random_range(0..LINEAR_COEFFICIENTS.len())];
    }
    let eps = DVector::from_vec(normals(&mut rng.derive(2).rng(), n));
    let y_star = x * &beta;
    let sigma_noise = if support.is_empty() || y_star.norm() == 0.0 {
        1.0
    } else {
        calibrate_noise(&y_star, &eps, snr)?
    };
    let y = &y_star + &eps * sigma_noise;
    Ok(LinearOutcome {
        y,
        y_star,
        eps,
        beta,
        sigma_noise,
        support,
    })
}

/// Noiseless nonlinear signal
/// `x_{j1} + 2 log(1 + 2 x_{j2}^2 + (x_{j3} + 1)^2) + x_{j4} x_{j5}`, uncentered.
pub fn nonlinear_signal(x: &DMatrix<f64>, roles: [usize; 5]) -> DVector<f64> {
    let [j1, j2, j3, j4, j5] = roles;
    DVector::from_fn(x.nrows(), |i, _| {
        let r = x.row(i);
        r[j1] + 2.0 * (1.0 + 2.0 * r[j2] * r[j2] + (r[j3] + 1.0).powi(2)).ln() + r[j4] * r[j5]
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearOutcome {
    pub y: DVector<f64>,
    /// Centered noiseless signal.
    pub y_star: DVector<f64>,
    pub eps: DVector<f64>,
    pub sigma_noise: f64,
    /// Support in role order `j1..j5`.
    pub support: [usize; 5],
}

/// Nonlinear outcome on five distinct, uniformly drawn variables. The signal
/// is centered before noise calibration.
pub fn gen_nonlinear_outcome(x: &DMatrix<f64>, snr: f64, rng: &RngStream) -> Result<NonlinearOutcome> {
    let (n, p) = x.shape();
    if p < 5 {
        return invalid(format!("nonlinear outcome needs p >= 5, got {p}"));
    }
    let drawn = sample(&mut rng.derive(0).rng(), p, 5).into_vec();
    let support = [drawn[0], drawn[1], drawn[2], drawn[3], drawn[4]];
    let raw = nonlinear_signal(x, support);
    let y_star = raw.add_scalar(-raw.mean());
    let eps = DVector::from_vec(normals(&mut rng.derive(2).rng(), n));
    let sigma_noise = if y_star.norm() == 0.0 {
        1.0
    } else {
        calibrate_noise(&y_star, &eps, snr)?
    };
    let y = &y_star + &eps * sigma_noise;
    Ok(NonlinearOutcome {
        y,
        y_star,
        eps,
        sigma_noise,
        support,
    })
}

/// A simulated dataset with the signal-to-noise ratio realized on the draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub dataset: Dataset,
    /// `None` when the signal is identically zero.
    pub realized_snr: Option<f64>,
}

fn snr_of(y_star: &DVector<f64>, eps: &DVector<f64>, sigma: f64) -> Option<f64> {
    (y_star.norm() > 0.0).then(|| realized_snr(y_star, eps, sigma))
}

/// Design plus outcome plus ground-truth sidecar for one configuration.
pub fn simulate(cfg: &SimConfig) -> Result<Dataset> {
    Ok(simulate_detailed(cfg)?.dataset)
}

/// Like [`simulate`], also reporting the realized SNR.
pub fn simulate_detailed(cfg: &SimConfig) -> Result<Simulation> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed);
    let x = gen_design(cfg, &root.derive(0))?;
    let meta = |support: Vec<usize>, beta: Option<Vec<f64>>, sigma: f64| GroundTruth {
        support,
        beta,
        sigma_noise: Some(sigma),
        blocks: Some(cfg.block_sizes.clone()),
        scenario: Some(cfg.scenario.as_str().into()),
        seed: Some(cfg.seed),
    };
    let (y, meta, snr) = match cfg.scenario {
        Scenario::Linear => {
            let out = gen_linear_outcome(&x, cfg.support_size, cfg.snr, &root.derive(1))?;
            let snr = snr_of(&out.y_star, &out.eps, out.sigma_noise);
            let m = meta(out.support.clone(), Some(out.beta.iter().copied().collect()), out.sigma_noise);
            (out.y, m, snr)
        }
        Scenario::Nonlinear => {
            let out = gen_nonlinear_outcome(&x, cfg.snr, &root.derive(1))?;
            let snr = snr_of(&out.y_star, &out.eps, out.sigma_noise);
            (out.y, meta(out.support.to_vec(), None, out.sigma_noise), snr)
        }
    };
    Ok(Simulation {
        dataset: Dataset::unnamed(x, y, Some(meta))?,
        realized_snr: snr,
    })
}

/// Outcome equal to the sum of every variable of block `active_block`, plus
/// noise at `cfg.snr`. `cfg.scenario` and `cfg.support_size` are ignored.
pub fn simulate_active_block(cfg: &SimConfig, active_block: usize) -> Result<Simulation> {
    let cfg = SimConfig {
        scenario: Scenario::Linear,
        support_size: 0,
        ..cfg.clone()
    };
    cfg.validate()?;
    if active_block >= cfg.block_sizes.len() {
        return invalid(format!(
            "active block {active_block} out of range for {} blocks",
            cfg.block_sizes.len()
        ));
    }
    let root = RngStream::new(cfg.seed);
    let x = gen_design(&cfg, &root.derive(0))?;
    let start: usize = cfg.block_sizes[..active_block].iter().sum();
    let support: Vec<usize> = (start..start + cfg.block_sizes[active_block]).collect();
    let mut beta = DVector::zeros(cfg.p());
    for &j in &support {
        beta[j] = 1.0;
    }
    let y_star = &x * &beta;
    let eps = DVector::from_vec(normals(&mut root.derive(1).rng(), cfg.n));
    let sigma = calibrate_noise(&y_star, &eps, cfg.snr)?;
    let y = &y_star + &eps * sigma;
    let meta = GroundTruth {
        support,
        beta: Some(beta.iter().copied().collect()),
        sigma_noise: Some(sigma),
        blocks: Some(cfg.block_sizes.clone()),
        scenario: Some("active_block".into()),
        seed: Some(cfg.seed),
    };
    Ok(Simulation {
        realized_snr: snr_of(&y_star, &eps, sigma),
        dataset: Dataset::unnamed(x, y, Some(meta))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    fn col(x: &DMatrix<f64>, j: usize) -> Vec<f64> {
        x.column(j).iter().copied().collect()
    }

    #[test]
    fn single_column_block_is_standard_normal() {
        let b = gen_ar1_block(1, 0.7, 20000, &RngStream::new(1)).unwrap();
        let v = col(&b, 0);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        assert!(m.abs() < 0.03);
        assert!((var - 1.0).abs() < 0.04);
    }

    #[test]
    fn independent_columns_at_zero_rho() {
        let b = gen_ar1_block(5, 0.0, 50000, &RngStream::new(2)).unwrap();
        for i in 0..5 {
            for j in (i + 1)..5 {
                assert!(corr(&col(&b, i), &col(&b, j)).abs() < 0.02);
            }
        }
    }

    #[test]
    fn high_rho_correlation() {
        let b = gen_ar1_block(2, 0.95, 50000, &RngStream::new(3)).unwrap();
        assert!((corr(&col(&b, 0), &col(&b, 1)) - 0.95).abs() < 0.01);
    }

    #[test]
    fn rho_out_of_range() {
        assert!(gen_ar1_block(3, 1.0, 10, &RngStream::new(0)).is_err());
        assert!(gen_ar1_block(0, 0.5, 10, &RngStream::new(0)).is_err());
    }

    #[test]
    fn default_design_width() {
        let cfg = SimConfig {
            n: 10,
            ..Default::default()
        };
        let x = gen_design(&cfg, &RngStream::new(0)).unwrap();
        assert_eq!(x.ncols(), 124);
    }

    #[test]
    fn blocks_are_independent() {
        let cfg = SimConfig {
            n: 50000,
            block_sizes: vec![3, 3],
            rho_max: 0.9,
            support_size: 2,
            ..Default::default()
        };
        let x = gen_design(&cfg, &RngStream::new(4)).unwrap();
        for i in 0..3 {
            for j in 3..6 {
                assert!(corr(&col(&x, i), &col(&x, j)).abs() < 0.02);
            }
        }
        // Within-block population correlation rho^|i-j|.
        assert!((corr(&col(&x, 0), &col(&x, 2)) - 0.81).abs() < 0.02);
    }

    #[test]
    fn design_is_deterministic() {
        let cfg = SimConfig {
            n: 30,
            ..Default::default()
        };
        let s = RngStream::new(8);
        assert_eq!(gen_design(&cfg, &s).unwrap(), gen_design(&cfg, &s).unwrap());
    }

    #[test]
    fn calibrate_closed_form() {
        let y = DVector::from_vec(vec![2.0, 0.0]);
        let e = DVector::from_vec(vec![0.0, 1.0]);
        let s = calibrate_noise(&y, &e, 2.0).unwrap();
        assert!((s - 2.0f64.sqrt()).abs() < 1e-15);
        assert!(calibrate_noise(&y, &e, 1e12).unwrap() < 1e-5);
        assert!(calibrate_noise(&DVector::zeros(2), &e, 1.0).is_err());
        assert!(calibrate_noise(&y, &DVector::zeros(2), 1.0).is_err());
        assert!(calibrate_noise(&y, &e, 0.0).is_err());
    }

    #[test]
    fn calibrate_plug_back() {
        let mut r = RngStream::new(12).rng();
        let y = DVector::from_vec(normals(&mut r, 200));
        let e = DVector::from_vec(normals(&mut r, 200));
        let s = calibrate_noise(&y, &e, 0.5).unwrap();
        assert!((realized_snr(&y, &e, s) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn linear_outcome_contracts() {
        let cfg = SimConfig {
            n: 200,
            ..Default::default()
        };
        let x = gen_design(&cfg, &RngStream::new(1)).unwrap();
        let empty = gen_linear_outcome(&x, 0, 2.0, &RngStream::new(2)).unwrap();
        assert!(empty.beta.iter().all(|&b| b == 0.0));
        assert_eq!(empty.y, empty.eps);

        let out = gen_linear_outcome(&x, 5, 2.0, &RngStream::new(3)).unwrap();
        assert_eq!(out.support.len(), 5);
        let nonzero: Vec<usize> = (0..124).filter(|&j| out.beta[j] != 0.0).collect();
        assert_eq!(nonzero, out.support);
        for &j in &out.support {
            assert!(LINEAR_COEFFICIENTS.contains(&out.beta[j]));
        }
        let snr = realized_snr(&(&x * &out.beta), &out.eps, out.sigma_noise);
        assert!((snr - 2.0).abs() < 1e-10);
        assert!(gen_linear_outcome(&x, 125, 2.0, &RngStream::new(3)).is_err());
    }

    #[test]
    fn nonlinear_zero_design_signal() {
        let x = DMatrix::zeros(4, 6);
        let s = nonlinear_signal(&x, [0, 1, 2, 3, 4]);
        for v in s.iter() {
            assert!((v - 2.0 * 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn nonlinear_outcome_contracts() {
        let cfg = SimConfig {
            n: 300,
            block_sizes: vec![4, 8],
            ..Default::default()
        };
        let x = gen_design(&cfg, &RngStream::new(5)).unwrap();
        let out = gen_nonlinear_outcome(&x, 2.0, &RngStream::new(6)).unwrap();
        let mut s = out.support.to_vec();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 5);
        assert!(out.y_star.mean().abs() < 1e-12);
        assert!((realized_snr(&out.y_star, &out.eps, out.sigma_noise) - 2.0).abs() < 1e-10);
        assert!(gen_nonlinear_outcome(&DMatrix::zeros(5, 4), 2.0, &RngStream::new(0)).is_err());
    }

    #[test]
    fn simulate_writes_ground_truth() {
        let cfg = SimConfig {
            n: 50,
            scenario: Scenario::Nonlinear,
            seed: 3,
            ..Default::default()
        };
        let d = simulate(&cfg).unwrap();
        let meta = d.meta().unwrap();
        assert_eq!(meta.support.len(), 5);
        assert_eq!(meta.blocks.as_deref(), Some(&DEFAULT_BLOCKS[..]));
        assert_eq!(d, simulate(&cfg).unwrap());
    }

    #[test]
    fn active_block_support_and_snr() {
        let cfg = SimConfig {
            n: 300,
            block_sizes: vec![6, 6, 6, 6],
            rho_max: 0.95,
            snr: 2.0,
            seed: 3,
            ..Default::default()
        };
        let sim = simulate_active_block(&cfg, 1).unwrap();
        let meta = sim.dataset.meta().unwrap();
        assert_eq!(meta.support, (6..12).collect::<Vec<_>>());
        assert!((sim.realized_snr.unwrap() - 2.0).abs() < 1e-10);
        assert!(simulate_active_block(&cfg, 4).is_err());
    }

    #[test]
    fn null_outcome_has_no_snr() {
        let cfg = SimConfig {
            n: 50,
            support_size: 0,
            ..Default::default()
        };
        let sim = simulate_detailed(&cfg).unwrap();
        assert!(sim.realized_snr.is_none());
        assert_eq!(sim.dataset.meta().unwrap().sigma_noise, Some(1.0));
    }
}
