//! Fixtures shared by the criterion benches in `benches/`.

use dpgenlab_core::privacy::NeighborPair;
use dpgenlab_core::{Dataset, InfluenceRule, LogitModel, Record, Vocabulary};

/// A `|V| = vocab` model with a two-row base table, tag-table influence and
/// weak history coupling, plus a neighbor pair that changes one record's tag.
/// Deterministic so timings are comparable across runs.
pub fn fixture(vocab: usize) -> (LogitModel, NeighborPair) {
    let v = Vocabulary::new((0..vocab).map(|i| format!("w{i}"))).expect("vocabulary");
    let wave =
        |k: usize, phase: f64| -> Vec<f64> { (0..vocab).map(|i| ((i + k) as f64 * 0.7 + phase).sin()).collect() };
    let table = ["t0", "t1"]
        .iter()
        .enumerate()
        .map(|(j, t)| (t.to_string(), wave(j, 0.3).into_iter().map(|x| 0.5 * x).collect()))
        .collect();
    let coupling = (0..vocab)
        .map(|i| wave(i, 1.1).into_iter().map(|x| 0.2 * x).collect())
        .collect();
    let model = LogitModel::new(
        v.clone(),
        vec![wave(0, 0.0), wave(1, 0.5)],
        InfluenceRule::TagTable { beta: 0.5, table },
        Some(coupling),
    )
    .expect("model");
    let records = (0..8)
        .map(|i| {
            Record::new(
                v.token(i % vocab),
                1.0 - 0.2 * i as f64,
                if i % 2 == 0 { "t0" } else { "t1" },
            )
        })
        .collect::<Result<Vec<_>, _>>()
        .expect("records");
    let data = Dataset::new(records).expect("dataset");
    let pair = NeighborPair::replace(&data, 3, Record::new(v.token(0), 1.0, "t0").expect("record")).expect("pair");
    (model, pair)
}

/// Label-match model with a history-independent base row: the fast sampling path.
pub fn flip_fixture() -> (LogitModel, NeighborPair) {
    let v = Vocabulary::new(["a", "b"]).expect("vocabulary");
    let model = LogitModel::label_match(v, vec![0.0, 0.0], 1.0).expect("model");
    let data = Dataset::new(vec![Record::new("a", 1.0, "r0").expect("record")]).expect("dataset");
    let pair = NeighborPair::replace(&data, 0, Record::new("b", 1.0, "r0").expect("record")).expect("pair");
    (model, pair)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_valid_pairs() {
        for (model, pair) in [fixture(4), fixture(8), flip_fixture()] {
            model.bind(pair.left()).unwrap();
            model.bind(pair.right()).unwrap();
        }
    }
}
