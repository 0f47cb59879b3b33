//! Subclass selection from the sum of the two parties' random attributes.

use serde::{Deserialize, Serialize};

use super::softlabel::{decode_prediction, SoftLabelMap};
use crate::error::{Error, Result};

/// Default upper bound of each random attribute.
pub const DEFAULT_ATTRIBUTE_MAX: u32 = 200;

/// Bin of a pair `(r_c, r_h)` is the number of thresholds `t <= r_c + r_h`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningRule {
    pub attribute_max: u32,
    pub thresholds: Vec<u32>,
}

impl BinningRule {
    pub fn new(attribute_max: u32, thresholds: Vec<u32>) -> Result<BinningRule> {
        let rule = BinningRule { attribute_max, thresholds };
        rule.validate()?;
        Ok(rule)
    }

    /// Quantile cuts for `bin_count` bins over attributes in `0..=attribute_max`.
    pub fn quantile(attribute_max: u32, bin_count: usize) -> Result<BinningRule> {
        BinningRule::new(attribute_max, quantile_thresholds(attribute_max, bin_count)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.attribute_max < 1 {
            return Err(Error::contract("attribute_max must be >= 1"));
        }
        let top = 2 * self.attribute_max;
        if self.thresholds.iter().any(|&t| t == 0 || t > top) {
            return Err(Error::contract(format!("thresholds {:?} must lie in 1..={top}", self.thresholds)));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract(format!("thresholds {:?} must be strictly ascending", self.thresholds)));
        }
        Ok(())
    }

    pub fn bin_count(&self) -> usize {
        self.thresholds.len() + 1
    }

    pub fn bin_index(&self, r_c: u32, r_h: u32) -> Result<usize> {
        if r_c > self.attribute_max || r_h > self.attribute_max {
            return Err(Error::contract(format!("attributes ({r_c}, {r_h}) outside 0..={}", self.attribute_max)));
        }
        let sum = r_c + r_h;
        Ok(self.thresholds.iter().filter(|&&t| t <= sum).count())
    }

    /// Fraction of all `(M+1)^2` attribute pairs landing in each bin.
    pub fn bin_masses(&self) -> Vec<f64> {
        let m = self.attribute_max;
        let mut counts = vec![0u64; self.bin_count()];
        for s in 0..=2 * m {
            let b = self.thresholds.iter().filter(|&&t| t <= s).count();
            counts[b] += pair_count(m, s);
        }
        let total = f64::from(m + 1).powi(2);
        counts.into_iter().map(|c| c as f64 / total).collect()
    }

    /// `table[y][bin]`, the regression target for one row.
    pub fn soft_target(&self, map: &SoftLabelMap, class: usize, r_c: u32, r_h: u32) -> Result<f64> {
        if map.bins_per_class != self.bin_count() {
            return Err(Error::contract(format!(
                "map has {} bins per class but the rule has {}",
                map.bins_per_class,
                self.bin_count()
            )));
        }
        map.value(class, self.bin_index(r_c, r_h)?)
    }

    pub fn decode_prediction(&self, y_hat: f64, map: &SoftLabelMap) -> usize {
        decode_prediction(y_hat, map)
    }
}

/// Number of pairs in `0..=m` squared summing to `s`.
fn pair_count(m: u32, s: u32) -> u64 {
    u64::from(m + 1) - u64::from(s.abs_diff(m))
}

/// Cut points for `bin_count` bins that make the bin masses of the triangular
/// sum distribution as close to uniform as possible (minimax).
///
/// Each cut is chosen from the two integers bracketing its ideal quantile;
/// all combinations are scored and ties prefer the larger cuts. For the
/// two-bin case with `M = 200` this gives the single threshold 201.
pub fn quantile_thresholds(attribute_max: u32, bin_count: usize) -> Result<Vec<u32>> {
    if bin_count == 0 {
        return Err(Error::contract("bin_count must be >= 1"));
    }
    if bin_count > attribute_max as usize {
        return Err(Error::contract(format!("bin_count {bin_count} exceeds attribute_max {attribute_max}")));
    }
    if bin_count == 1 {
        return Ok(Vec::new());
    }
    let m = attribute_max;
    let total = f64::from(m + 1).powi(2);
    // cdf_before[t] = P(sum < t)
    let mut cdf_before = vec![0.0; (2 * m + 2) as usize];
    for s in 0..=2 * m {
        cdf_before[s as usize + 1] = cdf_before[s as usize] + pair_count(m, s) as f64 / total;
    }
    let candidates: Vec<[u32; 2]> = (1..bin_count)
        .map(|k| {
            let q = k as f64 / bin_count as f64;
            let hi = (1..=2 * m).find(|&t| cdf_before[t as usize] >= q).unwrap_or(2 * m);
            [hi.saturating_sub(1).max(1), hi]
        })
        .collect();

    let cuts = bin_count - 1;
    let mut best: Option<(f64, Vec<u32>)> = None;
    for mask in 0..(1u32 << cuts) {
        let th: Vec<u32> = (0..cuts).map(|i| candidates[i][((mask >> i) & 1) as usize]).collect();
        if th.windows(2).any(|w| w[0] >= w[1]) {
            continue;
        }
        let mut edges = vec![0.0];
        edges.extend(th.iter().map(|&t| cdf_before[t as usize]));
        edges.push(1.0);
        let dev = edges.windows(2).map(|w| (w[1] - w[0] - 1.0 / bin_count as f64).abs()).fold(0.0, f64::max);
        let better = match &best {
            None => true,
            Some((d, b)) => dev < *d - 1e-15 || ((dev - *d).abs() <= 1e-15 && th > *b),
        };
        if better {
            best = Some((dev, th));
        }
    }
    best.map(|(_, th)| th).ok_or_else(|| Error::contract(format!("no ascending cut set for {bin_count} bins")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bin() -> BinningRule {
        BinningRule::new(200, vec![201]).unwrap()
    }

    #[test]
    fn two_bin_examples() {
        let r = two_bin();
        assert_eq!(r.bin_index(50, 100).unwrap(), 0);
        assert_eq!(r.bin_index(150, 150).unwrap(), 1);
        assert_eq!(r.bin_index(100, 100).unwrap(), 0);
        assert_eq!(r.bin_index(100, 101).unwrap(), 1);
        assert!(r.bin_index(201, 0).is_err());
    }

    #[test]
    fn two_bin_mass_by_enumeration() {
        let r = two_bin();
        let zero = (0..=200u32)
            .flat_map(|a| (0..=200u32).map(move |b| (a, b)))
            .filter(|&(a, b)| r.bin_index(a, b).unwrap() == 0)
            .count();
        assert_eq!(zero, 20301);
        assert!((r.bin_masses()[0] - 20301.0 / 40401.0).abs() < 1e-15);
    }

    #[test]
    fn quantile_defaults() {
        assert_eq!(quantile_thresholds(200, 2).unwrap(), vec![201]);
        assert!(quantile_thresholds(200, 1).unwrap().is_empty());
        assert!(quantile_thresholds(3, 4).is_err());
        for nb in 2..=4 {
            let rule = BinningRule::quantile(200, nb).unwrap();
            let worst = rule.bin_masses().iter().map(|m| (m - 1.0 / nb as f64).abs()).fold(0.0, f64::max);
            assert!(worst <= 0.01, "nb={nb} worst={worst}");
        }
    }

    #[test]
    fn validation() {
        assert!(BinningRule::new(200, vec![300, 100]).is_err());
        assert!(BinningRule::new(200, vec![0]).is_err());
        assert!(BinningRule::new(200, vec![401]).is_err());
        assert!(BinningRule::new(0, vec![]).is_err());
    }

    #[test]
    fn soft_target_lookup() {
        let map = SoftLabelMap::new(vec![vec![0.2, 0.6, 0.8], vec![0.3, 0.4, 0.9]], (0.0, 1.0)).unwrap();
        let rule = BinningRule::quantile(200, 3).unwrap();
        assert_eq!(rule.soft_target(&map, 0, 200, 200).unwrap(), 0.8);
        assert_eq!(rule.soft_target(&map, 1, 0, 0).unwrap(), 0.3);
        assert!(rule.soft_target(&map, 2, 0, 0).is_err());
        assert!(two_bin().soft_target(&map, 0, 0, 0).is_err());
    }
}
