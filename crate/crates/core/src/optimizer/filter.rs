//! Region filtering by carbon/price dominance relative to the base region.

use crate::error::{Error, Result};

/// Keeps the base region, drops candidates that are no better than the base
/// in both carbon intensity and price (and strictly worse in one), and, when
/// `conservative` is set and some candidate beats the base on both metrics,
/// also drops candidates that beat it on only one. Output keeps input order.
pub fn region_filter(base: usize, candidates: &[usize], ci: &[f64], price: &[f64], conservative: bool) -> Result<Vec<usize>> {
    if !candidates.contains(&base) {
        return Err(Error::Validation(format!("base region #{base} is not among the candidates")));
    }
    for &c in candidates {
        if c >= ci.len() || c >= price.len() || !ci[c].is_finite() || !price[c].is_finite() {
            return Err(Error::MissingData(format!("carbon intensity or price for region #{c}")));
        }
    }
    let (b_ci, b_p) = (ci[base], price[base]);
    let better = |c: usize| (ci[c] < b_ci, price[c] < b_p);
    let dominated =
        |c: usize| ci[c] >= b_ci && price[c] >= b_p && (ci[c] > b_ci || price[c] > b_p);
    let double_improver = candidates.iter().any(|&c| better(c) == (true, true));
    Ok(candidates
        .iter()
        .copied()
        .filter(|&c| {
            if c == base {
                return true;
            }
            if dominated(c) {
                return false;
            }
            let (a, b) = better(c);
            !(conservative && double_improver && a != b)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_metric_improver_dropped_next_to_double_improver() {
        // F (base), S, I
        let ci = [300.0, 40.0, 350.0];
        let price = [0.045, 0.041, 0.042];
        assert_eq!(region_filter(0, &[0, 1, 2], &ci, &price, true).unwrap(), vec![0, 1]);
    }

    #[test]
    fn identical_candidates_kept() {
        let ci = [100.0; 4];
        let price = [0.05; 4];
        assert_eq!(region_filter(0, &[0, 1, 2, 3], &ci, &price, true).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn dominated_candidate_dropped() {
        let ci = [100.0, 200.0, 100.0];
        let price = [0.05, 0.06, 0.05];
        assert_eq!(region_filter(0, &[0, 1, 2], &ci, &price, true).unwrap(), vec![0, 2]);
    }

    #[test]
    fn single_metric_improvers_survive_without_double_improver() {
        let ci = [100.0, 50.0, 150.0];
        let price = [0.05, 0.06, 0.04];
        assert_eq!(region_filter(0, &[2, 1, 0], &ci, &price, true).unwrap(), vec![2, 1, 0]);
    }

    #[test]
    fn errors() {
        assert!(region_filter(0, &[1], &[1.0, 1.0], &[1.0, 1.0], true).is_err());
        assert!(region_filter(0, &[0, 3], &[1.0, 1.0], &[1.0, 1.0], true).is_err());
    }

    /// Pairwise formulation: candidate c survives unless the base dominates
    /// it, or some other candidate beats the base on both metrics while c
    /// beats it on exactly one.
    fn oracle(base: usize, cands: &[usize], ci: &[f64], price: &[f64]) -> Vec<usize> {
        let dominates = |a: usize, b: usize| ci[a] <= ci[b] && price[a] <= price[b] && (ci[a] < ci[b] || price[a] < price[b]);
        let strictly_both = |a: usize, b: usize| ci[a] < ci[b] && price[a] < price[b];
        cands
            .iter()
            .copied()
            .filter(|&c| {
                if c == base {
                    return true;
                }
                if dominates(base, c) {
                    return false;
                }
                let one_sided = (ci[c] < ci[base]) ^ (price[c] < price[base]);
                !(one_sided && cands.iter().any(|&d| strictly_both(d, base)))
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn matches_pairwise_oracle(ci in prop::collection::vec(0u32..8, 2..8),
                                   price in prop::collection::vec(0u32..8, 8),
                                   base in any::<prop::sample::Index>()) {
            let n = ci.len();
            let ci: Vec<f64> = ci.iter().map(|&v| f64::from(v) * 50.0).collect();
            let price: Vec<f64> = price[..n].iter().map(|&v| 0.04 + f64::from(v) * 0.002).collect();
            let cands: Vec<usize> = (0..n).collect();
            let base = base.index(n);
            let out = region_filter(base, &cands, &ci, &price, true).unwrap();
            prop_assert_eq!(&out, &oracle(base, &cands, &ci, &price));
            prop_assert!(out.contains(&base));
            prop_assert_eq!(region_filter(base, &out, &ci, &price, true).unwrap(), out);
        }
    }
}
