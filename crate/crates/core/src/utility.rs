//! Expected utility under the Gibbs message distribution
//! `pi_T(m) ∝ exp(U(m) / T)`, its temperature derivative
//! `dE/dT = -Cov(nu, U) / T^2`, and the regularized optimal-temperature problem
//! `max_T E(T) + (lambda / L) T`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generation::{
    enumerate_message_distribution, score_table, validate_temperature, Dataset, GenerationConfig, LogitModel,
};
use crate::numeric::{log_space, log_sum_exp};

/// Default coefficient `c` in `nu = e^U + c L`.
pub const DEFAULT_LENGTH_COEF: f64 = 0.1;
/// Default temperature bracket for the solver.
pub const DEFAULT_BRACKET: (f64, f64) = (0.1, 2.0);
/// Points in the log-spaced first-order-condition scan.
pub const FOC_GRID_POINTS: usize = 256;

/// Message utility `nu(m, L)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilitySpec {
    /// `e^U + c L`.
    ExpLogitPlusLength {
        length_coef: f64,
    },
    /// `slope * U + intercept`.
    AffineInU {
        slope: f64,
        intercept: f64,
    },
    Constant {
        value: f64,
    },
    /// Explicit per-message values in lexicographic message order.
    Table {
        values: Vec<f64>,
    },
}

impl Default for UtilitySpec {
    fn default() -> Self {
        Self::ExpLogitPlusLength {
            length_coef: DEFAULT_LENGTH_COEF,
        }
    }
}

impl UtilitySpec {
    pub fn evaluate(&self, score: f64, message_index: usize, length: usize) -> Result<f64> {
        let v = match self {
            Self::ExpLogitPlusLength { length_coef } => score.exp() + length_coef * length as f64,
            Self::AffineInU { slope, intercept } => slope * score + intercept,
            Self::Constant { value } => *value,
            Self::Table { values } => *values.get(message_index).ok_or_else(|| {
                Error::Argument(format!(
                    "utility table has {} entries, message index {message_index} requested",
                    values.len()
                ))
            })?,
        };
        if !v.is_finite() {
            return Err(Error::ModelEvaluation(format!(
                "utility is not finite for message {message_index} (U = {score})"
            )));
        }
        Ok(v)
    }

    /// Whether `nu` is a nondecreasing function of `U` alone.
    pub fn is_nondecreasing_in_score(&self) -> bool {
        match self {
            Self::ExpLogitPlusLength { .. } | Self::Constant { .. } => true,
            Self::AffineInU { slope, .. } => *slope >= 0.0,
            Self::Table { .. } => false,
        }
    }
}

impl fmt::Display for UtilitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ExpLogitPlusLength { length_coef } => write!(f, "exp_logit_plus_length:{length_coef}"),
            Self::AffineInU { slope, intercept } => write!(f, "affine_in_u:{slope},{intercept}"),
            Self::Constant { value } => write!(f, "constant:{value}"),
            Self::Table { values } => {
                let v: Vec<String> = values.iter().map(f64::to_string).collect();
                write!(f, "table:{}", v.join(","))
            }
        }
    }
}

/// Parses `kind[:params]`, e.g. `exp_logit_plus_length:0.1`, `affine_in_u:1,0`,
/// `constant:2.5`, `table:1,2,3,4`.
impl FromStr for UtilitySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, params) = s.split_once(':').unwrap_or((s, ""));
        let nums = || -> Result<Vec<f64>> {
            if params.trim().is_empty() {
                return Ok(Vec::new());
            }
            params
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Argument(format!("bad utility parameter {p:?}")))
                })
                .collect()
        };
        let v = nums()?;
        let arity = |n: usize| -> Result<()> {
            if v.len() != n {
                return Err(Error::Argument(format!(
                    "utility kind {kind} takes {n} parameter(s), got {}",
                    v.len()
                )));
            }
            Ok(())
        };
        match kind {
            "exp_logit_plus_length" => {
                if v.is_empty() {
                    return Ok(Self::default());
                }
                arity(1)?;
                Ok(Self::ExpLogitPlusLength { length_coef: v[0] })
            }
            "affine_in_u" => {
                arity(2)?;
                Ok(Self::AffineInU {
                    slope: v[0],
                    intercept: v[1],
                })
            }
            "constant" => {
                arity(1)?;
                Ok(Self::Constant { value: v[0] })
            }
            "table" => {
                if v.is_empty() {
                    return Err(Error::Argument("table utility needs values".into()));
                }
                Ok(Self::Table { values: v })
            }
            other => Err(Error::Argument(format!("unknown utility kind {other:?}"))),
        }
    }
}

/// `pi_T(m) = exp(U(m)/T) / Z(T)` over all messages of one length.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsDistribution {
    scores: Vec<f64>,
    temperature: f64,
    length: usize,
    log_probs: Vec<f64>,
}

impl GibbsDistribution {
    pub fn from_scores(scores: Vec<f64>, temperature: f64, length: usize) -> Result<Self> {
        validate_temperature(temperature)?;
        if scores.is_empty() {
            return Err(Error::Argument("Gibbs distribution needs at least one message".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::ModelEvaluation("non-finite cumulative logit score".into()));
        }
        let log_probs = gibbs_log_probs(&scores, temperature);
        Ok(Self {
            scores,
            temperature,
            length,
            log_probs,
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }
}

fn gibbs_log_probs(scores: &[f64], temperature: f64) -> Vec<f64> {
    let mut lp: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let z = log_sum_exp(&lp);
    lp.iter_mut().for_each(|v| *v -= z);
    lp
}

/// Gibbs distribution of the model's cumulative logit scores.
pub fn gibbs_distribution(
    model: &LogitModel,
    dataset: &Dataset,
    config: &GenerationConfig,
) -> Result<GibbsDistribution> {
    let scores = score_table(model, dataset, config.length(), config.enum_cap())?;
    GibbsDistribution::from_scores(scores, config.temperature(), config.length())
}

/// Total variation between the autoregressive message distribution and the
/// Gibbs form of the same model. Zero whenever logits ignore history.
pub fn gibbs_autoregressive_gap(model: &LogitModel, dataset: &Dataset, config: &GenerationConfig) -> Result<f64> {
    let product = enumerate_message_distribution(model, dataset, config)?;
    let gibbs = gibbs_distribution(model, dataset, config)?;
    Ok(0.5
        * product
            .log_probs()
            .iter()
            .zip(gibbs.log_probs())
            .map(|(a, b)| (a.exp() - b.exp()).abs())
            .sum::<f64>())
}

fn utility_values(scores: &[f64], utility: &UtilitySpec, length: usize) -> Result<Vec<f64>> {
    scores
        .iter()
        .enumerate()
        .map(|(i, &u)| utility.evaluate(u, i, length))
        .collect()
}

/// First and second moments of `(nu, U)` under a distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Moments {
    pub expected_utility: f64,
    pub expected_score: f64,
    pub covariance: f64,
}

fn moments(log_probs: &[f64], utilities: &[f64], scores: &[f64]) -> Moments {
    let probs: Vec<f64> = log_probs.iter().map(|l| l.exp()).collect();
    let e_nu: f64 = probs.iter().zip(utilities).map(|(p, v)| p * v).sum();
    let e_u: f64 = probs.iter().zip(scores).map(|(p, u)| p * u).sum();
    let cov: f64 = probs
        .iter()
        .zip(utilities.iter().zip(scores))
        .map(|(p, (v, u))| p * (v - e_nu) * (u - e_u))
        .sum();
    Moments {
        expected_utility: e_nu,
        expected_score: e_u,
        covariance: cov,
    }
}

/// `E_pi[nu(m, L)]`.
pub fn expected_utility(dist: &GibbsDistribution, utility: &UtilitySpec) -> Result<f64> {
    let nu = utility_values(&dist.scores, utility, dist.length)?;
    Ok(moments(&dist.log_probs, &nu, &dist.scores).expected_utility)
}

/// `Cov_pi(nu, U) = E[nu U] - E[nu] E[U]`, computed in centered form.
pub fn utility_covariance(dist: &GibbsDistribution, utility: &UtilitySpec) -> Result<f64> {
    let nu = utility_values(&dist.scores, utility, dist.length)?;
    Ok(moments(&dist.log_probs, &nu, &dist.scores).covariance)
}

/// `dE/dT = -Cov(nu, U) / T^2`.
pub fn utility_temperature_derivative(
    model: &LogitModel,
    dataset: &Dataset,
    length: usize,
    utility: &UtilitySpec,
    temperature: f64,
) -> Result<f64> {
    let config = GenerationConfig::new(temperature, length)?;
    let dist = gibbs_distribution(model, dataset, &config)?;
    Ok(-utility_covariance(&dist, utility)? / (temperature * temperature))
}

/// Scores and utilities of every message; everything temperature-independent.
#[derive(Clone, Debug, PartialEq)]
pub struct UtilityLandscape {
    scores: Vec<f64>,
    utilities: Vec<f64>,
}

impl UtilityLandscape {
    pub fn new(scores: Vec<f64>, utility: &UtilitySpec, length: usize) -> Result<Self> {
        if scores.is_empty() || scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::ModelEvaluation("scores must be non-empty and finite".into()));
        }
        let utilities = utility_values(&scores, utility, length)?;
        Ok(Self { scores, utilities })
    }

    pub fn from_model(
        model: &LogitModel,
        dataset: &Dataset,
        length: usize,
        utility: &UtilitySpec,
        enum_cap: u64,
    ) -> Result<Self> {
        Self::new(score_table(model, dataset, length, enum_cap)?, utility, length)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn utilities(&self) -> &[f64] {
        &self.utilities
    }

    pub fn moments(&self, temperature: f64) -> Moments {
        moments(
            &gibbs_log_probs(&self.scores, temperature),
            &self.utilities,
            &self.scores,
        )
    }

    pub fn expected_utility(&self, temperature: f64) -> f64 {
        self.moments(temperature).expected_utility
    }

    pub fn covariance(&self, temperature: f64) -> f64 {
        self.moments(temperature).covariance
    }

    pub fn derivative(&self, temperature: f64) -> f64 {
        -self.covariance(temperature) / (temperature * temperature)
    }
}

/// Regularized design problem `max_{T in [lo, hi]} E(T) + (lambda / L) T`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationProblem {
    landscape: UtilityLandscape,
    length: usize,
    lambda: f64,
    bracket: (f64, f64),
}

impl OptimizationProblem {
    pub fn new(landscape: UtilityLandscape, length: usize, lambda: f64, bracket: (f64, f64)) -> Result<Self> {
        if length == 0 {
            return Err(Error::Config("message length must be at least 1".into()));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        let (lo, hi) = bracket;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Solver(format!("invalid temperature bracket ({lo}, {hi})")));
        }
        Ok(Self {
            landscape,
            length,
            lambda,
            bracket,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_model(
        model: &LogitModel,
        dataset: &Dataset,
        length: usize,
        utility: &UtilitySpec,
        lambda: f64,
        bracket: (f64, f64),
        enum_cap: u64,
    ) -> Result<Self> {
        let landscape = UtilityLandscape::from_model(model, dataset, length, utility, enum_cap)?;
        Self::new(landscape, length, lambda, bracket)
    }

    pub fn landscape(&self) -> &UtilityLandscape {
        &self.landscape
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn bracket(&self) -> (f64, f64) {
        self.bracket
    }

    fn penalty_rate(&self) -> f64 {
        self.lambda / self.length as f64
    }

    pub fn objective(&self, temperature: f64) -> f64 {
        self.landscape.expected_utility(temperature) + self.penalty_rate() * temperature
    }

    /// Objective derivative `g(T) = -Cov/T^2 + lambda/L`.
    pub fn foc(&self, temperature: f64) -> f64 {
        self.landscape.derivative(temperature) + self.penalty_rate()
    }

    /// `|lambda/L - Cov(T)/T^2|`.
    pub fn foc_residual(&self, temperature: f64) -> f64 {
        self.foc(temperature).abs()
    }
}

/// `E(T) + (lambda / L) T`.
pub fn regularized_objective(problem: &OptimizationProblem, temperature: f64) -> Result<f64> {
    validate_temperature(temperature)?;
    Ok(problem.objective(temperature))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    LowerBound,
    UpperBound,
    /// Interior root where the objective slope goes from + to -.
    LocalMax,
    /// Interior root where the objective slope goes from - to +.
    LocalMin,
    /// Interior root without a sign change across it (touching zero).
    Stationary,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Candidate {
    pub temperature: f64,
    pub objective: f64,
    pub foc: f64,
    pub kind: CandidateKind,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimalTemperature {
    pub t_star: f64,
    pub objective: f64,
    pub interior: bool,
    pub foc_residual: f64,
    pub candidates: Vec<Candidate>,
}

impl OptimalTemperature {
    pub fn stationary_points(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates
            .iter()
            .filter(|c| !matches!(c.kind, CandidateKind::LowerBound | CandidateKind::UpperBound))
    }
}

const FOC_TOL: f64 = 1e-10;
const WIDTH_TOL: f64 = 1e-9;

fn bisect<F: Fn(f64) -> f64>(g: F, mut a: f64, mut b: f64, mut ga: f64) -> f64 {
    loop {
        let mid = 0.5 * (a + b);
        let gm = g(mid);
        if gm.abs() <= FOC_TOL || (b - a) <= WIDTH_TOL {
            return mid;
        }
        if (gm > 0.0) == (ga > 0.0) {
            a = mid;
            ga = gm;
        } else {
            b = mid;
        }
    }
}

/// Global maximizer of the regularized objective over the bracket.
///
/// Scans the first-order condition on a 256-point log grid, bisects every
/// sign change, then compares the objective at every root and both endpoints.
pub fn optimal_temperature(problem: &OptimizationProblem) -> Result<OptimalTemperature> {
    let (lo, hi) = problem.bracket;
    let grid = log_space(lo, hi, FOC_GRID_POINTS);
    let g: Vec<f64> = grid.par_iter().map(|&t| problem.foc(t)).collect();
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::Solver(format!(
            "objective slope is not finite at T = {}",
            grid[i]
        )));
    }

    let mut candidates = Vec::new();
    let mut push = |t: f64, kind: CandidateKind| -> Result<()> {
        let objective = problem.objective(t);
        if !objective.is_finite() {
            return Err(Error::Solver(format!("objective is not finite at T = {t}")));
        }
        candidates.push(Candidate {
            temperature: t,
            objective,
            foc: problem.foc(t),
            kind,
        });
        Ok(())
    };
    push(lo, CandidateKind::LowerBound)?;
    for i in 0..grid.len() - 1 {
        let (ga, gb) = (g[i], g[i + 1]);
        let interior_zero = g[i + 1] == 0.0 && i + 1 < grid.len() - 1;
        if interior_zero {
            let (before, after) = (ga, g[i + 2]);
            let kind = classify(before, after);
            push(grid[i + 1], kind)?;
        } else if ga != 0.0 && gb != 0.0 && (ga > 0.0) != (gb > 0.0) {
            let root = bisect(|t| problem.foc(t), grid[i], grid[i + 1], ga);
            push(root, classify(ga, gb))?;
        }
    }
    push(hi, CandidateKind::UpperBound)?;

    let best = candidates
        .iter()
        .copied()
        .fold(None::<Candidate>, |acc, c| match acc {
            Some(b) if b.objective >= c.objective => Some(b),
            _ => Some(c),
        })
        .expect("endpoints are always candidates");
    let interior = !matches!(best.kind, CandidateKind::LowerBound | CandidateKind::UpperBound);
    Ok(OptimalTemperature {
        t_star: best.temperature,
        objective: best.objective,
        interior,
        foc_residual: problem.foc_residual(best.temperature),
        candidates,
    })
}

fn classify(before: f64, after: f64) -> CandidateKind {
    match (before > 0.0, after > 0.0) {
        (true, false) if after < 0.0 => CandidateKind::LocalMax,
        (false, true) if before < 0.0 => CandidateKind::LocalMin,
        _ => CandidateKind::Stationary,
    }
}

/// Objective sampled on a temperature grid: `(T, E(T), objective)`.
pub fn objective_curve(problem: &OptimizationProblem, temperatures: &[f64]) -> Vec<(f64, f64, f64)> {
    temperatures
        .par_iter()
        .map(|&t| {
            let e = problem.landscape.expected_utility(t);
            (t, e, e + problem.penalty_rate() * t)
        })
        .collect()
}
