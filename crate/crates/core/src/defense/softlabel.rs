//! Host-secret soft-label maps: construction, validation and decoding.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Each original class maps to `bins_per_class` real-valued soft labels.
/// `table[y][b]` is the value used for class `y` in bin `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelMap {
    pub class_count: usize,
    pub bins_per_class: usize,
    pub table: Vec<Vec<f64>>,
    /// Closed interval the soft values must lie in.
    pub soft_range: (f64, f64),
}

impl SoftLabelMap {
    /// Builds a map from explicit per-class values after checking its shape.
    pub fn new(table: Vec<Vec<f64>>, soft_range: (f64, f64)) -> Result<SoftLabelMap> {
        let class_count = table.len();
        let bins_per_class = table.first().map_or(0, Vec::len);
        if class_count == 0 || bins_per_class == 0 {
            return Err(Error::contract("soft-label table must be non-empty"));
        }
        if table.iter().any(|row| row.len() != bins_per_class) {
            return Err(Error::contract("every class needs the same number of soft labels"));
        }
        if table.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite soft label".into()));
        }
        if !(soft_range.0 <= soft_range.1) {
            return Err(Error::contract(format!("bad soft range {soft_range:?}")));
        }
        Ok(SoftLabelMap { class_count, bins_per_class, table, soft_range })
    }

    pub fn value(&self, class: usize, bin: usize) -> Result<f64> {
        self.table
            .get(class)
            .ok_or_else(|| Error::contract(format!("class {class} outside 0..{}", self.class_count)))?
            .get(bin)
            .copied()
            .ok_or_else(|| Error::contract(format!("bin {bin} outside 0..{}", self.bins_per_class)))
    }

    /// `(value, origin class)` for every entry, sorted by value.
    pub fn sorted_entries(&self) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> =
            self.table.iter().enumerate().flat_map(|(c, row)| row.iter().map(move |&v| (v, c))).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all
    }

    /// Org(value): the class owning an exact table value.
    pub fn origin(&self, value: f64) -> Option<usize> {
        self.table.iter().position(|row| row.contains(&value))
    }

    /// Smallest gap between consecutive sorted values.
    pub fn min_gap(&self) -> f64 {
        self.sorted_entries().windows(2).map(|w| w[1].0 - w[0].0).fold(f64::INFINITY, f64::min)
    }

    fn range_width(&self) -> f64 {
        self.soft_range.1 - self.soft_range.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    IntervalTooSmall,
    SameOriginAdjacent,
    ValueOutOfRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub values: Vec<f64>,
    pub severity: Severity,
}

/// Checks the interleaving guideline over the sorted soft values: adjacent
/// gaps of at least `|R'| / (2N)`, no two neighbours from the same class, and
/// every value inside `R'`. Never fails; `strict` only raises the severity.
pub fn validate_soft_label_map(map: &SoftLabelMap, strict: bool) -> Vec<Violation> {
    let severity = if strict { Severity::Error } else { Severity::Warning };
    let entries = map.sorted_entries();
    let min_gap = map.range_width() / (2 * entries.len()) as f64;
    let mut out = Vec::new();
    for &(v, _) in &entries {
        if v < map.soft_range.0 || v > map.soft_range.1 {
            out.push(Violation { kind: ViolationKind::ValueOutOfRange, values: vec![v], severity });
        }
    }
    for w in entries.windows(2) {
        let ((a, ca), (b, cb)) = (w[0], w[1]);
        if (b - a).abs() < min_gap {
            out.push(Violation { kind: ViolationKind::IntervalTooSmall, values: vec![a, b], severity });
        }
        if ca == cb {
            out.push(Violation { kind: ViolationKind::SameOriginAdjacent, values: vec![a, b], severity });
        }
    }
    out
}

/// Random class order per round, with the first class of each round differing
/// from the last one of the previous round.
fn interleaved_origins(class_count: usize, rounds: usize, rng: &mut Rng) -> Vec<usize> {
    let mut origins = Vec::with_capacity(class_count * rounds);
    for _ in 0..rounds {
        let mut order: Vec<usize> = (0..class_count).collect();
        order.shuffle(rng);
        if origins.last() == Some(&order[0]) {
            let j = rng.random_range(1..class_count);
            order.swap(0, j);
        }
        origins.extend(order);
    }
    origins
}

/// Lays `N = C * N_b` evenly spaced slots over `soft_range`, assigns origins
/// so that neighbours always differ, then jitters each value by less than
/// `|R'| / (4N)`. The result always validates cleanly.
pub fn generate_soft_label_map(
    class_count: usize,
    bins_per_class: usize,
    soft_range: (f64, f64),
    rng: &mut Rng,
) -> Result<SoftLabelMap> {
    if class_count < 2 || bins_per_class < 1 {
        return Err(Error::contract(format!(
            "need at least 2 classes and 1 bin, got {class_count} and {bins_per_class}"
        )));
    }
    let (lo, hi) = soft_range;
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(Error::contract(format!("soft range must be a proper interval, got {soft_range:?}")));
    }
    let n = class_count * bins_per_class;
    let width = hi - lo;
    let spacing = width / (n - 1) as f64;
    let jitter = 0.999 * width / (4 * n) as f64;
    let origins = interleaved_origins(class_count, bins_per_class, rng);
    let mut table = vec![Vec::with_capacity(bins_per_class); class_count];
    for (slot, &class) in origins.iter().enumerate() {
        let base = lo + spacing * slot as f64;
        let v = (base + rng.random_range(-jitter..=jitter)).clamp(lo, hi);
        table[class].push(v);
    }
    SoftLabelMap::new(table, soft_range)
}

/// Nearest soft value wins; scan is class-major then bin-major with a strict
/// `<` update, so ties go to the lowest class.
pub fn decode_prediction(y_hat: f64, map: &SoftLabelMap) -> usize {
    let mut best = 0;
    let mut dis_min = f64::INFINITY;
    for (class, row) in map.table.iter().enumerate() {
        for &v in row {
            let d = (y_hat - v).abs();
            if d < dis_min {
                dis_min = d;
                best = class;
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn map(table: &[&[f64]], range: (f64, f64)) -> SoftLabelMap {
        SoftLabelMap::new(table.iter().map(|r| r.to_vec()).collect(), range).unwrap()
    }

    fn kinds(v: &[Violation]) -> Vec<(ViolationKind, Vec<f64>)> {
        v.iter().map(|x| (x.kind, x.values.clone())).collect()
    }

    #[test]
    fn degenerate_two_block_map() {
        let m = map(&[&[0.0, 0.4], &[0.6, 1.0]], (0.0, 1.0));
        let v = validate_soft_label_map(&m, false);
        assert_eq!(
            kinds(&v),
            vec![
                (ViolationKind::SameOriginAdjacent, vec![0.0, 0.4]),
                (ViolationKind::SameOriginAdjacent, vec![0.6, 1.0]),
            ]
        );
        assert!(v.iter().all(|x| x.severity == Severity::Warning));
    }

    #[test]
    fn three_bin_illustration() {
        let m = map(&[&[0.2, 0.6, 0.8], &[0.3, 0.4, 0.9]], (0.0, 1.0));
        let v = validate_soft_label_map(&m, true);
        assert_eq!(
            kinds(&v),
            vec![
                (ViolationKind::SameOriginAdjacent, vec![0.3, 0.4]),
                (ViolationKind::SameOriginAdjacent, vec![0.6, 0.8]),
            ]
        );
        assert!(v.iter().all(|x| x.severity == Severity::Error));
    }

    #[test]
    fn clean_alternating_map() {
        let m = map(&[&[0.0, 0.5], &[0.25, 0.75]], (0.0, 0.75));
        assert!(validate_soft_label_map(&m, true).is_empty());
    }

    #[test]
    fn out_of_range_and_too_close() {
        let m = map(&[&[0.0, 1.2], &[0.01, 0.5]], (0.0, 1.0));
        let v = kinds(&validate_soft_label_map(&m, false));
        assert!(v.contains(&(ViolationKind::ValueOutOfRange, vec![1.2])));
        assert!(v.contains(&(ViolationKind::IntervalTooSmall, vec![0.0, 0.01])));
    }

    #[test]
    fn generated_maps_validate() {
        for seed in 0..200 {
            let mut rng = stream(seed, Stream::SoftLabels);
            let c = 2 + (seed as usize % 6);
            let nb = 1 + (seed as usize % 4);
            let m = generate_soft_label_map(c, nb, (0.0, (c - 1) as f64), &mut rng).unwrap();
            assert!(validate_soft_label_map(&m, true).is_empty(), "seed {seed}: {m:?}");
            assert_eq!(m.table.iter().map(Vec::len).sum::<usize>(), c * nb);
        }
    }

    #[test]
    fn generation_rejects_single_class() {
        assert!(generate_soft_label_map(1, 1, (0.0, 1.0), &mut stream(0, Stream::SoftLabels)).is_err());
    }

    #[test]
    fn decode_examples() {
        let m = map(&[&[0.2, 0.6, 0.8], &[0.3, 0.4, 0.9]], (0.0, 1.0));
        assert_eq!(decode_prediction(0.55, &m), 0);
        assert_eq!(decode_prediction(0.25, &m), 0);
        assert_eq!(decode_prediction(0.9, &m), 1);
        assert_eq!(decode_prediction(-5.0, &m), 0);
    }
}
