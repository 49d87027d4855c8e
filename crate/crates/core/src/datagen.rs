//! Synthetic data: correlated covariates with six dichotomized columns, a
//! non-linear, non-additive treatment assignment model, and four outcome
//! models sharing an additive treatment effect.
//!
//! Random numbers come from independent ChaCha streams derived from one
//! seed: stream 0 feeds the covariates, 1 the treatment uniforms, 2 the
//! binary-outcome uniforms and 3 the optional outcome noise. Changing the
//! outcome model therefore never changes covariates or treatment.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::expit;
use crate::types::{Dataset, OutcomeModelId, BINARY_COLUMNS, NUM_COVARIATES};

const STREAM_COVARIATES: u64 = 0;
const STREAM_TREATMENT: u64 = 1;
const STREAM_OUTCOME: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Redraw budget when a draw leaves a group with fewer than two units.
pub const MAX_REDRAWS: u32 = 100;

/// An interaction `multiplier * beta[i] * X_i * X_j` of the treatment model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub i: usize,
    pub j: usize,
    pub multiplier: f64,
}

/// Coefficients of the treatment assignment model
/// `logit P[T=1|X] = A + B + C` with main effects `A`, pairwise
/// interactions `B` and squared terms `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentModelCoefficients {
    /// `beta[0]` is the intercept, `beta[k]` multiplies `X_k` for k = 1..7.
    pub beta: [f64; 8],
    pub interactions: Vec<Interaction>,
    /// Columns `k` contributing `beta[k] * X_k^2`.
    pub quadratic: Vec<usize>,
}

impl Default for TreatmentModelCoefficients {
    fn default() -> Self {
        let term = |i, j, multiplier| Interaction { i, j, multiplier };
        TreatmentModelCoefficients {
            beta: [0.0, 0.8, -0.25, 0.6, -0.4, -0.8, -0.5, 0.7],
            interactions: vec![
                term(1, 3, 0.5),
                term(2, 4, 0.7),
                term(3, 5, 0.5),
                term(4, 6, 0.7),
                term(5, 7, 0.5),
                term(1, 6, 0.5),
                term(2, 3, 0.7),
                term(3, 4, 0.5),
                term(4, 5, 0.5),
                term(5, 6, 0.5),
            ],
            quadratic: vec![2, 4, 7],
        }
    }
}

impl TreatmentModelCoefficients {
    /// Linear predictor `A + B + C` at covariate vector `x` (`x[k-1] = X_k`).
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        let b = &self.beta;
        let main: f64 = b[0] + (1..=7).map(|k| b[k] * x[k - 1]).sum::<f64>();
        let inter: f64 = self
            .interactions
            .iter()
            .map(|t| t.multiplier * b[t.i] * x[t.i - 1] * x[t.j - 1])
            .sum();
        let quad: f64 = self.quadratic.iter().map(|&k| b[k] * x[k - 1] * x[k - 1]).sum();
        main + inter + quad
    }
}

/// Coefficients shared by the four outcome models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeCoefficients {
    pub alpha: [f64; 8],
    /// True treatment effect.
    pub gamma: f64,
}

impl Default for OutcomeCoefficients {
    fn default() -> Self {
        OutcomeCoefficients {
            alpha: [-3.85, 0.3, -0.36, -0.73, -0.2, 0.71, -0.19, 0.26],
            gamma: -0.4,
        }
    }
}

/// Latent correlations `(i, j, rho)` between standard normal covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSpec {
    pub pairs: Vec<(usize, usize, f64)>,
}

impl Default for CorrelationSpec {
    fn default() -> Self {
        CorrelationSpec {
            pairs: vec![(1, 5, 0.2), (2, 6, 0.9), (3, 8, 0.2), (4, 9, 0.9)],
        }
    }
}

impl CorrelationSpec {
    pub fn uncorrelated() -> Self {
        CorrelationSpec { pairs: Vec::new() }
    }

    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::identity(NUM_COVARIATES, NUM_COVARIATES);
        for &(i, j, rho) in &self.pairs {
            if !(1..=NUM_COVARIATES).contains(&i) || !(1..=NUM_COVARIATES).contains(&j) || i == j {
                return Err(Error::Config(format!("invalid correlation pair ({i}, {j})")));
            }
            m[(i - 1, j - 1)] = rho;
            m[(j - 1, i - 1)] = rho;
        }
        Ok(m)
    }

    /// Lower-triangular factor `L` with `L L^T` equal to the correlation matrix.
    pub fn cholesky_factor(&self) -> Result<DMatrix<f64>> {
        self.matrix()?
            .cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::Config("correlation matrix is not positive definite".into()))
    }
}

/// Everything the generator needs besides `n`, the outcome model and the seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub treatment: TreatmentModelCoefficients,
    pub outcome: OutcomeCoefficients,
    pub correlation: CorrelationSpec,
    /// Standard deviation of optional Gaussian noise on continuous outcomes.
    pub noise_sd: f64,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Latent multivariate normal covariates (before dichotomization).
pub fn gen_latent_covariates(n: usize, spec: &CorrelationSpec, seed: u64) -> Result<DMatrix<f64>> {
    let l = spec.cholesky_factor()?;
    let mut rng = stream(seed, STREAM_COVARIATES);
    let mut out = DMatrix::zeros(n, NUM_COVARIATES);
    let mut e = DVector::zeros(NUM_COVARIATES);
    for i in 0..n {
        for v in e.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let z = &l * &e;
        for j in 0..NUM_COVARIATES {
            out[(i, j)] = z[j];
        }
    }
    Ok(out)
}

/// Covariate matrix with columns 1, 3, 5, 6, 8, 9 set to `1` where the
/// latent value is positive and `0` otherwise.
pub fn gen_covariates(n: usize, spec: &CorrelationSpec, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    let mut x = gen_latent_covariates(n, spec, seed)?;
    for &c in &BINARY_COLUMNS {
        for v in x.column_mut(c - 1).iter_mut() {
            *v = if *v > 0.0 { 1.0 } else { 0.0 };
        }
    }
    Ok(x)
}

/// `P[T = 1 | X = x]` under the treatment model.
pub fn true_propensity(x: &[f64], coeffs: &TreatmentModelCoefficients) -> f64 {
    expit(coeffs.linear_predictor(x))
}

pub fn draw_treatment(p: f64, u: f64) -> u8 {
    u8::from(u < p)
}

fn outcome_index(x: &[f64], a: &[f64; 8]) -> [f64; 7] {
    [
        a[1] * x[0],
        a[2] * x[1],
        a[3] * x[2],
        a[4] * x[3],
        a[5] * x[7],
        a[6] * x[8],
        a[7] * x[9],
    ]
}

/// Outcome value for one unit. For the binary model `u` decides the draw;
/// the continuous models ignore it.
pub fn gen_outcome(model: OutcomeModelId, x: &[f64], t: u8, coeffs: &OutcomeCoefficients, u: f64) -> f64 {
    let a = &coeffs.alpha;
    let effect = coeffs.gamma * f64::from(t);
    let tail = a[5] * x[7] + a[6] * x[8] + a[7] * x[9];
    match model {
        OutcomeModelId::O1 => {
            let p = outcome_probability(x, t, coeffs);
            if u < p {
                1.0
            } else {
                0.0
            }
        }
        OutcomeModelId::O2 => {
            a[0] + effect
                + (a[1] * x[0] + a[2] * x[1] + a[3] * x[2]).exp()
                + a[4] * (1.3 * x[3]).exp()
                + tail
        }
        OutcomeModelId::O3 => {
            let s: f64 = outcome_index(x, a).iter().sum();
            a[0] + effect + 4.0 * s.sin()
        }
        OutcomeModelId::O4 => {
            a[0] + effect
                + a[1] * x[0]
                + a[2] * x[1] * x[1]
                + a[3] * x[2]
                + a[4] * (1.3 * x[3]).exp()
                + tail
        }
    }
}

/// `P(Y = 1 | T, X)` of the binary outcome model.
pub fn outcome_probability(x: &[f64], t: u8, coeffs: &OutcomeCoefficients) -> f64 {
    let s: f64 = outcome_index(x, &coeffs.alpha).iter().sum();
    expit(coeffs.alpha[0] + s + coeffs.gamma * f64::from(t))
}

/// Simulates a dataset with the default coefficients.
pub fn simulate_dataset(n: usize, model: OutcomeModelId, seed: u64) -> Result<Dataset> {
    simulate_dataset_with(n, model, seed, &SimulationOptions::default())
}

pub fn simulate_dataset_with(
    n: usize,
    model: OutcomeModelId,
    seed: u64,
    opts: &SimulationOptions,
) -> Result<Dataset> {
    if n < 4 {
        return Err(Error::Config(format!("n = {n} is too small; need at least 4")));
    }
    for redraws in 0..=MAX_REDRAWS {
        let draw_seed = seed.wrapping_add(u64::from(redraws));
        let x = gen_covariates(n, &opts.correlation, draw_seed)?;
        let mut t_rng = stream(draw_seed, STREAM_TREATMENT);
        let mut y_rng = stream(draw_seed, STREAM_OUTCOME);
        let mut e_rng = stream(draw_seed, STREAM_NOISE);

        let mut treatment = Vec::with_capacity(n);
        let mut outcome = Vec::with_capacity(n);
        let mut ps = Vec::with_capacity(n);
        let mut row = [0.0; NUM_COVARIATES];
        for i in 0..n {
            for (j, v) in row.iter_mut().enumerate() {
                *v = x[(i, j)];
            }
            let p = true_propensity(&row, &opts.treatment);
            let t = draw_treatment(p, t_rng.random::<f64>());
            let u: f64 = y_rng.random();
            let noise: f64 = e_rng.sample(StandardNormal);
            let mut y = gen_outcome(model, &row, t, &opts.outcome, u);
            if !model.is_binary() {
                y += opts.noise_sd * noise;
            }
            ps.push(p);
            treatment.push(t);
            outcome.push(y);
        }
        let treated = treatment.iter().filter(|&&t| t == 1).count();
        if treated < 2 || n - treated < 2 {
            continue;
        }
        // Saturated propensities (p == 1.0 in floating point) cannot occur for
        // the default coefficients at realistic covariate values; clamp so the
        // dataset invariant holds regardless.
        for p in ps.iter_mut() {
            *p = p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
        }
        let mut ds = Dataset::new(x, treatment, outcome, Some(ps), model, seed)?;
        ds.redraws = redraws;
        return Ok(ds);
    }
    Err(Error::Generation(format!(
        "{} consecutive draws left a group with fewer than two units (n = {n}, seed = {seed})",
        MAX_REDRAWS + 1
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(k: usize) -> [f64; 10] {
        let mut x = [0.0; 10];
        x[k - 1] = 1.0;
        x
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn propensity_examples() {
        let c = TreatmentModelCoefficients::default();
        assert_eq!(true_propensity(&[0.0; 10], &c), 0.5);
        assert!((true_propensity(&unit(7), &c) - 1.0 / (1.0 + (-1.4f64).exp())).abs() < 1e-15);
        assert!((true_propensity(&unit(7), &c) - 0.802184).abs() < 1e-6);
        assert!((true_propensity(&unit(2), &c) - 0.377541).abs() < 1e-6);
    }

    #[test]
    fn default_coefficients() {
        let c = TreatmentModelCoefficients::default();
        assert_eq!(c.beta, [0.0, 0.8, -0.25, 0.6, -0.4, -0.8, -0.5, 0.7]);
        assert_eq!(c.interactions.len(), 10);
        assert!(c.interactions.iter().all(|t| t.multiplier == 0.5 || t.multiplier == 0.7));
        assert_eq!(c.quadratic, vec![2, 4, 7]);
        let o = OutcomeCoefficients::default();
        assert_eq!(o.gamma, -0.4);
        assert_eq!(o.alpha, [-3.85, 0.3, -0.36, -0.73, -0.2, 0.71, -0.19, 0.26]);
    }

    #[test]
    fn treatment_rule() {
        assert_eq!(draw_treatment(0.5, 0.3), 1);
        assert_eq!(draw_treatment(0.5, 0.7), 0);
        assert_eq!(draw_treatment(0.999, 0.5), 1);
    }

    #[test]
    fn outcome_examples() {
        let c = OutcomeCoefficients::default();
        let z = [0.0; 10];
        assert!((gen_outcome(OutcomeModelId::O2, &z, 0, &c, 0.0) - -3.05).abs() < 1e-12);
        assert!((gen_outcome(OutcomeModelId::O2, &z, 1, &c, 0.0) - -3.45).abs() < 1e-12);
        assert!((gen_outcome(OutcomeModelId::O3, &z, 1, &c, 0.0) - -4.25).abs() < 1e-12);
        assert!((outcome_probability(&z, 0, &c) - 1.0 / (1.0 + 3.85f64.exp())).abs() < 1e-15);
        assert_eq!(gen_outcome(OutcomeModelId::O1, &z, 0, &c, 0.01), 1.0);
        assert_eq!(gen_outcome(OutcomeModelId::O1, &z, 0, &c, 0.5), 0.0);
    }

    #[test]
    fn latent_correlation_matches_spec() {
        let x = gen_latent_covariates(100_000, &CorrelationSpec::default(), 11).unwrap();
        let r = correlation(x.column(1).as_slice(), x.column(5).as_slice());
        assert!((0.89..=0.91).contains(&r), "r = {r}");
    }

    #[test]
    fn uncorrelated_spec_gives_near_zero_correlations() {
        let x = gen_latent_covariates(100_000, &CorrelationSpec::uncorrelated(), 5).unwrap();
        for i in 0..10 {
            for j in i + 1..10 {
                let r = correlation(x.column(i).as_slice(), x.column(j).as_slice());
                assert!(r.abs() < 0.05, "({i},{j}) r = {r}");
            }
        }
    }

    #[test]
    fn dichotomized_columns() {
        let x = gen_covariates(1000, &CorrelationSpec::default(), 3).unwrap();
        for &c in &BINARY_COLUMNS {
            assert!(x.column(c - 1).iter().all(|&v| v == 0.0 || v == 1.0));
        }
        let r = correlation(x.column(3).as_slice(), x.column(8).as_slice());
        assert!(r > 0.0 && r < 0.9, "r = {r}");
        let big = gen_covariates(100_000, &CorrelationSpec::default(), 4).unwrap();
        let mean2 = big.column(1).mean();
        assert!(mean2.abs() < 0.02);
    }

    #[test]
    fn non_positive_definite_spec_is_rejected() {
        let spec = CorrelationSpec {
            pairs: vec![(1, 2, 0.9), (1, 3, 0.9), (2, 3, -0.9)],
        };
        assert!(matches!(gen_covariates(10, &spec, 0), Err(Error::Config(_))));
    }

    #[test]
    fn simulation_is_deterministic() {
        let a = simulate_dataset(300, OutcomeModelId::O2, 42).unwrap();
        let b = simulate_dataset(300, OutcomeModelId::O2, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_dataset(300, OutcomeModelId::O4, 42).unwrap();
        assert_eq!(a.covariates, c.covariates);
        assert_eq!(a.treatment, c.treatment);
    }

    #[test]
    fn small_samples_redraw() {
        let found = (0..500u64)
            .map(|s| simulate_dataset(4, OutcomeModelId::O2, s).unwrap())
            .find(|d| d.redraws >= 1)
            .expect("some seed needs a redraw at n = 4");
        assert!(found.n_treated() >= 2 && found.n_control() >= 2);
        assert!(simulate_dataset(3, OutcomeModelId::O2, 0).is_err());
    }

    #[test]
    fn additive_effect_on_continuous_outcomes() {
        let c = OutcomeCoefficients::default();
        let x = gen_covariates(200, &CorrelationSpec::default(), 9).unwrap();
        for model in [OutcomeModelId::O2, OutcomeModelId::O3, OutcomeModelId::O4] {
            for i in 0..200 {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                let d = gen_outcome(model, &row, 1, &c, 0.0) - gen_outcome(model, &row, 0, &c, 0.0);
                assert!((d - c.gamma).abs() < 1e-12);
            }
        }
    }
}
