//! Independent reference computations for the integration tests. Nothing here
//! calls into the library's probability code; everything is linear space and
//! brute force.
#![allow(dead_code)]

use dpgenlab_core::{Dataset, InfluenceRule, LogitModel, Record, Vocabulary};
use rand::Rng;

pub fn vocab(n: usize) -> Vocabulary {
    Vocabulary::new((0..n).map(|i| ((b'a' + i as u8) as char).to_string())).unwrap()
}

pub fn record(label: &str, weight: f64, tag: &str) -> Record {
    Record::new(label, weight, tag).unwrap()
}

pub fn dataset(records: &[(&str, f64, &str)]) -> Dataset {
    Dataset::new(records.iter().map(|(l, w, t)| record(l, *w, t)).collect()).unwrap()
}

/// Linear-space softmax `exp(l/T) / sum exp(l/T)`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let w: Vec<f64> = logits.iter().map(|l| (l / temperature).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|v| v / z).collect()
}

/// Plain re-statement of the logit formula from model accessors.
pub fn total_logits(model: &LogitModel, data: &Dataset, history: &[usize]) -> Vec<f64> {
    let n = model.vocab().len();
    let step = history.len() + 1;
    (0..n)
        .map(|w| {
            let mut l = model.base_logit(step, w);
            for r in &data.records {
                l += model.record_influence(r, w, step).unwrap();
            }
            if let Some(c) = model.history_coupling() {
                for &h in history {
                    l += c[h][w];
                }
            }
            l
        })
        .collect()
}

/// All token sequences of a length, lexicographic, by odometer increment.
pub fn all_messages(vocab_size: usize, length: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0; length];
    loop {
        out.push(cur.clone());
        let mut k = length;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            cur[k] += 1;
            if cur[k] < vocab_size {
                break;
            }
            cur[k] = 0;
        }
    }
}

/// Message probabilities as products of per-step softmax values.
pub fn message_probs(model: &LogitModel, data: &Dataset, temperature: f64, length: usize) -> Vec<f64> {
    all_messages(model.vocab().len(), length)
        .iter()
        .map(|m| {
            (0..length)
                .map(|k| softmax(&total_logits(model, data, &m[..k]), temperature)[m[k]])
                .product()
        })
        .collect()
}

/// `U(m)` as the sum of chosen logits.
pub fn scores(model: &LogitModel, data: &Dataset, length: usize) -> Vec<f64> {
    all_messages(model.vocab().len(), length)
        .iter()
        .map(|m| (0..length).map(|k| total_logits(model, data, &m[..k])[m[k]]).sum())
        .collect()
}

/// `max_S P(S) - e^eps Q(S)` over all subsets.
pub fn hockey_stick_by_subsets(p: &[f64], q: &[f64], epsilon: f64) -> f64 {
    let n = p.len();
    assert!(n <= 16);
    let scale = epsilon.exp();
    let mut best = 0.0_f64;
    for mask in 0u32..(1 << n) {
        let mut ps = 0.0;
        let mut qs = 0.0;
        for i in 0..n {
            if mask & (1 << i) != 0 {
                ps += p[i];
                qs += q[i];
            }
        }
        best = best.max(ps - scale * qs);
    }
    best
}

/// Random record-additive instance: label-match or tag-table influence,
/// optional history coupling, several base rows.
pub struct Instance {
    pub model: LogitModel,
    pub left: Dataset,
    pub right: Dataset,
    pub index: usize,
    pub length: usize,
}

pub fn random_instance<R: Rng>(rng: &mut R, max_vocab: usize, max_len: usize, max_beta: f64) -> Instance {
    let n = rng.gen_range(2..=max_vocab);
    let length = rng.gen_range(1..=max_len);
    let v = vocab(n);
    let rows = rng.gen_range(1..=length);
    let base: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let beta = rng.gen_range(0.0..max_beta);
    let tags = ["t0", "t1", "t2"];
    let influence = if rng.gen_bool(0.5) {
        InfluenceRule::LabelMatch { beta }
    } else {
        let table = tags
            .iter()
            .map(|t| (t.to_string(), (0..n).map(|_| rng.gen_range(-beta..=beta)).collect()))
            .collect();
        InfluenceRule::TagTable { beta, table }
    };
    let coupling = if rng.gen_bool(0.5) {
        Some(
            (0..n)
                .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
        )
    } else {
        None
    };
    let model = LogitModel::new(v.clone(), base, influence, coupling).unwrap();
    let size = rng.gen_range(1..=4);
    let random_record = |rng: &mut R| {
        record(
            v.token(rng.gen_range(0..n)),
            rng.gen_range(-1.5..1.5),
            tags[rng.gen_range(0..tags.len())],
        )
    };
    let records: Vec<Record> = (0..size).map(|_| random_record(rng)).collect();
    let index = rng.gen_range(0..size);
    let mut replaced = records.clone();
    loop {
        replaced[index] = random_record(rng);
        if replaced[index] != records[index] {
            break;
        }
    }
    Instance {
        model,
        left: Dataset::new(records).unwrap(),
        right: Dataset::new(replaced).unwrap(),
        index,
        length,
    }
}
