//! Sampling-based leakage estimation: label projection, Laplace smoothing,
//! empirical privacy loss, total variation, Jensen-Shannon divergence, and
//! seeded temperature sweeps aggregated to mean/std curves.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generation::{message_index, GenerationConfig, LogitModel, MessageDistribution, Sampler};
use crate::numeric::{mean_std, sample_covariance};
use crate::privacy::{message_distributions, NeighborPair};
use crate::rng::{derive_rng, stream_id};
use crate::utility::UtilitySpec;

/// Largest message space the identity projection accepts.
pub const IDENTITY_LABEL_LIMIT: usize = 4096;

/// Exact CSV header emitted by [`SweepResult::to_csv`].
pub const SWEEP_CSV_HEADER: &str = "temperature,length,metric,mean,std,repeats,samples,alpha,seed";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// The whole message is the label.
    Identity,
    /// The first token is the label.
    FirstToken,
    /// Identity when `|V|^L <= 4096`, otherwise first token.
    Auto,
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Identity => "identity",
            Self::FirstToken => "first_token",
            Self::Auto => "auto",
        })
    }
}

impl FromStr for Projection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "first_token" => Ok(Self::FirstToken),
            "auto" => Ok(Self::Auto),
            other => Err(Error::Argument(format!("unknown projection {other:?}"))),
        }
    }
}

/// Finite label set `Y` and the map from messages onto it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSpace {
    projection: Projection,
    vocab_size: usize,
    length: usize,
    size: usize,
}

impl LabelSpace {
    pub fn new(projection: Projection, vocab_size: usize, length: usize) -> Result<Self> {
        if vocab_size < 2 || length == 0 {
            return Err(Error::Argument("label space needs |V| >= 2 and L >= 1".into()));
        }
        let messages = (vocab_size as u128).checked_pow(length as u32);
        let fits = messages.is_some_and(|m| m <= IDENTITY_LABEL_LIMIT as u128);
        let projection = match projection {
            Projection::Auto if fits => Projection::Identity,
            Projection::Auto => Projection::FirstToken,
            Projection::Identity if !fits => {
                return Err(Error::Argument(format!(
                    "identity projection needs |V|^L <= {IDENTITY_LABEL_LIMIT}, got {vocab_size}^{length}"
                )))
            }
            p => p,
        };
        let size = match projection {
            Projection::Identity => messages.unwrap_or(0) as usize,
            _ => vocab_size,
        };
        Ok(Self {
            projection,
            vocab_size,
            length,
            size,
        })
    }

    /// The resolved projection (never `Auto`).
    pub fn projection(&self) -> Projection {
        self.projection
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn label_of(&self, tokens: &[usize]) -> usize {
        match self.projection {
            Projection::Identity => message_index(tokens, self.vocab_size),
            _ => tokens[0],
        }
    }

    /// Push an exact message distribution through the projection.
    pub fn project(&self, dist: &MessageDistribution) -> Result<Vec<f64>> {
        if dist.vocab().len() != self.vocab_size || dist.length() != self.length {
            return Err(Error::Argument("distribution does not match the label space".into()));
        }
        let mut out = vec![0.0; self.size];
        for (i, p) in dist.probs().into_iter().enumerate() {
            out[self.label_of(dist.message_at(i).tokens())] += p;
        }
        Ok(out)
    }
}

/// `(c(y) + alpha) / (n + alpha |Y|)` for every label.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmoothedDistribution {
    probs: Vec<f64>,
    sample_count: u64,
    alpha: f64,
}

impl SmoothedDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Argument(format!("alpha must be finite and > 0, got {alpha}")));
    }
    Ok(())
}

/// Laplace smoothing of label counts. `counts[y]` is the count of label `y`.
pub fn laplace_smooth(counts: &[u64], n: u64, alpha: f64, labels: &LabelSpace) -> Result<SmoothedDistribution> {
    check_alpha(alpha)?;
    if counts.len() != labels.size() {
        return Err(Error::Argument(format!(
            "{} counts for a label space of {}",
            counts.len(),
            labels.size()
        )));
    }
    let total: u64 = counts.iter().sum();
    if total != n {
        return Err(Error::Argument(format!("counts sum to {total}, expected n = {n}")));
    }
    let denom = n as f64 + alpha * labels.size() as f64;
    Ok(SmoothedDistribution {
        probs: counts.iter().map(|&c| (c as f64 + alpha) / denom).collect(),
        sample_count: n,
        alpha,
    })
}

/// The smoothed distribution an infinite-precision sampler would converge to:
/// `(n p(y) + alpha) / (n + alpha |Y|)`.
pub fn exact_smoothed(label_probs: &[f64], n: u64, alpha: f64) -> Result<SmoothedDistribution> {
    check_alpha(alpha)?;
    let denom = n as f64 + alpha * label_probs.len() as f64;
    Ok(SmoothedDistribution {
        probs: label_probs.iter().map(|&p| (n as f64 * p + alpha) / denom).collect(),
        sample_count: n,
        alpha,
    })
}

fn same_len(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::Argument(format!(
            "label spaces differ ({} vs {} labels)",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

/// `max_y |ln(P(y) / Q(y))|`. Infinite if exactly one side has a zero.
pub fn empirical_epsilon(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    Ok(p.iter()
        .zip(q)
        .map(|(&a, &b)| if a == b { 0.0 } else { (a.ln() - b.ln()).abs() })
        .fold(0.0, f64::max))
}

/// `0.5 * sum_y |P(y) - Q(y)|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `0.5 KL(P || M) + 0.5 KL(Q || M)` with `M = (P + Q) / 2`, natural log.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    let kl_to_mid = |a: f64, m: f64| if a > 0.0 { a * (a / m).ln() } else { 0.0 };
    let js: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            0.5 * kl_to_mid(a, m) + 0.5 * kl_to_mid(b, m)
        })
        .sum();
    Ok(js.max(0.0))
}

/// Sweep metrics, in output order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Metric {
    #[serde(rename = "empirical_epsilon")]
    EmpiricalEpsilon,
    #[serde(rename = "tv")]
    Tv,
    #[serde(rename = "js")]
    Js,
    #[serde(rename = "mean_U")]
    MeanU,
    #[serde(rename = "mean_info_score")]
    MeanInfoScore,
    #[serde(rename = "cov_nu_U")]
    CovNuU,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::EmpiricalEpsilon,
        Metric::Tv,
        Metric::Js,
        Metric::MeanU,
        Metric::MeanInfoScore,
        Metric::CovNuU,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::EmpiricalEpsilon => "empirical_epsilon",
            Metric::Tv => "tv",
            Metric::Js => "js",
            Metric::MeanU => "mean_U",
            Metric::MeanInfoScore => "mean_info_score",
            Metric::CovNuU => "cov_nu_U",
        }
    }
}

/// Leakage metrics between two smoothed label distributions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Leakage {
    pub empirical_epsilon: f64,
    pub tv: f64,
    pub js: f64,
}

impl Leakage {
    pub fn between(p: &SmoothedDistribution, q: &SmoothedDistribution) -> Result<Self> {
        Ok(Self {
            empirical_epsilon: empirical_epsilon(p.probs(), q.probs())?,
            tv: total_variation(p.probs(), q.probs())?,
            js: js_divergence(p.probs(), q.probs())?,
        })
    }
}

/// Everything measured in one (T, L, repeat) cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellOutcome {
    pub leakage: Leakage,
    pub mean_u: f64,
    pub mean_info_score: f64,
    pub cov_nu_u: f64,
    pub left: SmoothedDistribution,
    pub right: SmoothedDistribution,
}

impl CellOutcome {
    pub fn metric(&self, metric: Metric) -> f64 {
        match metric {
            Metric::EmpiricalEpsilon => self.leakage.empirical_epsilon,
            Metric::Tv => self.leakage.tv,
            Metric::Js => self.leakage.js,
            Metric::MeanU => self.mean_u,
            Metric::MeanInfoScore => self.mean_info_score,
            Metric::CovNuU => self.cov_nu_u,
        }
    }
}

/// Parameters of a single sampling cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSpec<'a> {
    pub config: GenerationConfig,
    pub samples: usize,
    pub alpha: f64,
    pub labels: &'a LabelSpace,
    pub utility: &'a UtilitySpec,
    pub left_seed: (u64, u64),
    pub right_seed: (u64, u64),
}

/// Draw `samples` messages from each side of the pair, project, smooth, and
/// measure leakage plus the utility statistics of the left (D) arm.
pub fn run_cell(model: &LogitModel, pair: &NeighborPair, spec: &CellSpec<'_>) -> Result<CellOutcome> {
    if spec.samples == 0 {
        return Err(Error::Argument("samples per run must be >= 1".into()));
    }
    let length = spec.config.length();
    let n = spec.samples as u64;
    let needs_index = matches!(spec.utility, UtilitySpec::Table { .. });
    let vocab_size = model.vocab().len();

    let left = Sampler::new(model, pair.left(), spec.config)?;
    let right = Sampler::new(model, pair.right(), spec.config)?;
    let mut tokens = Vec::with_capacity(length);

    let mut rng = derive_rng(spec.left_seed.0, spec.left_seed.1);
    let mut counts = vec![0u64; spec.labels.size()];
    let mut scores = Vec::with_capacity(spec.samples);
    let mut infos = Vec::with_capacity(spec.samples);
    for _ in 0..spec.samples {
        let u = left.sample_scored(&mut rng, &mut tokens)?;
        counts[spec.labels.label_of(&tokens)] += 1;
        let idx = if needs_index {
            message_index(&tokens, vocab_size)
        } else {
            0
        };
        infos.push(spec.utility.evaluate(u, idx, length)?);
        scores.push(u);
    }
    let p = laplace_smooth(&counts, n, spec.alpha, spec.labels)?;

    let mut rng = derive_rng(spec.right_seed.0, spec.right_seed.1);
    counts.iter_mut().for_each(|c| *c = 0);
    for _ in 0..spec.samples {
        right.sample_into(&mut rng, &mut tokens)?;
        counts[spec.labels.label_of(&tokens)] += 1;
    }
    let q = laplace_smooth(&counts, n, spec.alpha, spec.labels)?;

    Ok(CellOutcome {
        leakage: Leakage::between(&p, &q)?,
        mean_u: scores.iter().sum::<f64>() / n as f64,
        mean_info_score: infos.iter().sum::<f64>() / n as f64,
        cov_nu_u: sample_covariance(&infos, &scores),
        left: p,
        right: q,
    })
}

/// Leakage between the exact projected-and-smoothed distributions of a pair.
pub fn exact_smoothed_leakage(
    model: &LogitModel,
    pair: &NeighborPair,
    config: &GenerationConfig,
    labels: &LabelSpace,
    samples: u64,
    alpha: f64,
) -> Result<(Leakage, SmoothedDistribution, SmoothedDistribution)> {
    let (p, q) = message_distributions(model, pair, config)?;
    let p = exact_smoothed(&labels.project(&p)?, samples, alpha)?;
    let q = exact_smoothed(&labels.project(&q)?, samples, alpha)?;
    Ok((Leakage::between(&p, &q)?, p, q))
}

/// Sweep configuration. `Default` mirrors the reference protocol: lengths
/// {2, 5, 10}, temperatures 0.1..=2.0 in steps of 0.1, 250 samples per arm.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepConfig {
    pub lengths: Vec<usize>,
    pub temperatures: Vec<f64>,
    pub samples: usize,
    pub repeats: usize,
    pub alpha: f64,
    pub projection: Projection,
    pub utility: UtilitySpec,
    pub root_seed: u64,
    /// Use the same stream for both arms of a repeat.
    pub shared_seed: bool,
    pub enum_cap: u64,
}

/// Inclusive decimal grid `start, start + step, ..., stop`, rounded to the
/// decimals implied by the inputs so that `0.1:2.0:0.1` yields exactly 0.3 etc.
pub fn temperature_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(start > 0.0) || stop < start {
        return Err(Error::Argument(format!("invalid grid {start}:{stop}:{step}")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    let decimals = [start, stop, step].iter().map(|v| decimals_of(*v)).max().unwrap_or(0);
    let scale = 10f64.powi(decimals as i32);
    Ok((0..count)
        .map(|i| ((start + step * i as f64) * scale).round() / scale)
        .collect())
}

fn decimals_of(v: f64) -> usize {
    let s = format!("{v}");
    s.split_once('.').map_or(0, |(_, frac)| frac.len()).min(12)
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lengths: vec![2, 5, 10],
            temperatures: temperature_grid(0.1, 2.0, 0.1).expect("static grid"),
            samples: 250,
            repeats: 10,
            alpha: 1.0,
            projection: Projection::Auto,
            utility: UtilitySpec::default(),
            root_seed: 1,
            shared_seed: false,
            enum_cap: crate::generation::DEFAULT_ENUM_CAP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub temperature: f64,
    pub length: usize,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    pub repeats: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub samples: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl SweepResult {
    /// Floats use the shortest representation that parses back to the same
    /// value, so the CSV is exact and stable.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(SWEEP_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:?},{},{},{:?},{:?},{},{},{:?},{}",
                r.temperature,
                r.length,
                r.metric.name(),
                r.mean,
                r.std,
                r.repeats,
                self.samples,
                self.alpha,
                self.seed
            );
        }
        out
    }

    /// `(T, mean, std)` for one metric and length, in temperature order.
    pub fn series(&self, metric: Metric, length: usize) -> Vec<(f64, f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.metric == metric && r.length == length)
            .map(|r| (r.temperature, r.mean, r.std))
            .collect()
    }

    pub fn lengths(&self) -> Vec<usize> {
        let mut l: Vec<usize> = self.rows.iter().map(|r| r.length).collect();
        l.sort_unstable();
        l.dedup();
        l
    }
}

/// Stream selectors for the two arms. Streams are keyed by (L, repeat, arm)
/// and reused across temperatures, so every temperature sees the same uniforms.
pub fn arm_streams(root_seed: u64, length: usize, repeat: usize, shared: bool) -> ((u64, u64), (u64, u64)) {
    let left = stream_id(&[length as u64, repeat as u64, 0]);
    let right = if shared {
        left
    } else {
        stream_id(&[length as u64, repeat as u64, 1])
    };
    ((root_seed, left), (root_seed, right))
}

/// Seeded temperature sweep. Cells run in parallel on the current rayon pool;
/// the output is identical regardless of scheduling.
pub fn run_sweep(model: &LogitModel, pair: &NeighborPair, config: &SweepConfig) -> Result<SweepResult> {
    if config.samples == 0 || config.repeats == 0 {
        return Err(Error::Argument("samples and repeats must be >= 1".into()));
    }
    if config.lengths.is_empty() || config.temperatures.is_empty() {
        return Err(Error::Argument(
            "sweep needs at least one length and one temperature".into(),
        ));
    }
    check_alpha(config.alpha)?;
    let vocab_size = model.vocab().len();
    let label_spaces = config
        .lengths
        .iter()
        .map(|&l| LabelSpace::new(config.projection, vocab_size, l))
        .collect::<Result<Vec<_>>>()?;
    let configs = config
        .temperatures
        .iter()
        .map(|&t| {
            config
                .lengths
                .iter()
                .map(|&l| Ok(GenerationConfig::new(t, l)?.with_enum_cap(config.enum_cap)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let cells: Vec<(usize, usize, usize)> = (0..config.temperatures.len())
        .flat_map(|ti| (0..config.lengths.len()).flat_map(move |li| (0..config.repeats).map(move |r| (ti, li, r))))
        .collect();

    let outcomes = cells
        .par_iter()
        .map(|&(ti, li, rep)| {
            let length = config.lengths[li];
            let (left_seed, right_seed) = arm_streams(config.root_seed, length, rep, config.shared_seed);
            let spec = CellSpec {
                config: configs[ti][li],
                samples: config.samples,
                alpha: config.alpha,
                labels: &label_spaces[li],
                utility: &config.utility,
                left_seed,
                right_seed,
            };
            run_cell(model, pair, &spec).map_err(|e| with_context(e, config.temperatures[ti], length, rep))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(config.temperatures.len() * config.lengths.len() * Metric::ALL.len());
    for (ti, &t) in config.temperatures.iter().enumerate() {
        for (li, &l) in config.lengths.iter().enumerate() {
            let base = (ti * config.lengths.len() + li) * config.repeats;
            let group = &outcomes[base..base + config.repeats];
            for metric in Metric::ALL {
                let values: Vec<f64> = group.iter().map(|o| o.metric(metric)).collect();
                let (mean, std) = mean_std(&values);
                rows.push(SweepRow {
                    temperature: t,
                    length: l,
                    metric,
                    mean,
                    std,
                    repeats: config.repeats,
                });
            }
        }
    }
    rows.sort_by(|a, b| {
        a.temperature
            .total_cmp(&b.temperature)
            .then(a.length.cmp(&b.length))
            .then(a.metric.cmp(&b.metric))
    });
    // a repeated (T, L) in the inputs would produce duplicate keys
    rows.dedup_by(|a, b| a.temperature == b.temperature && a.length == b.length && a.metric == b.metric);

    Ok(SweepResult {
        rows,
        samples: config.samples,
        alpha: config.alpha,
        seed: config.root_seed,
    })
}

fn with_context(err: Error, temperature: f64, length: usize, repeat: usize) -> Error {
    let ctx = format!("(T = {temperature}, L = {length}, repeat = {repeat})");
    match err {
        Error::Config(m) => Error::Config(format!("{m} {ctx}")),
        Error::Argument(m) => Error::Argument(format!("{m} {ctx}")),
        Error::ModelEvaluation(m) => Error::ModelEvaluation(format!("{m} {ctx}")),
        Error::Input(m) => Error::Input(format!("{m} {ctx}")),
        Error::Solver(m) => Error::Solver(format!("{m} {ctx}")),
        other => other,
    }
}
