//! Exhaustive enumeration, the reference optimum on small instances.

use crate::error::{Error, Result};

/// Largest search space enumerated.
pub const MAX_PLACEMENTS: f64 = 1e7;

pub fn search_space_log10(movable: usize, retained: usize) -> f64 {
    if retained <= 1 || movable == 0 {
        return 0.0;
    }
    movable as f64 * (retained as f64).log10()
}

/// Evaluates every genome in `0..n_alleles` ^ `n_genes` and returns the first
/// minimizer in enumeration order with the number of evaluations.
pub fn enumerate<F>(n_genes: usize, n_alleles: usize, mut fitness: F) -> Result<(Vec<usize>, f64, usize)>
where
    F: FnMut(&[usize]) -> f64,
{
    let log10 = search_space_log10(n_genes, n_alleles);
    if log10 > MAX_PLACEMENTS.log10() + 1e-12 {
        return Err(Error::SpaceTooLarge { log10 });
    }
    let mut genes = vec![0; n_genes];
    let mut best = genes.clone();
    let mut best_fit = fitness(&genes);
    let mut evaluations = 1;
    'outer: loop {
        let mut i = 0;
        loop {
            if i == n_genes {
                break 'outer;
            }
            genes[i] += 1;
            if genes[i] < n_alleles {
                break;
            }
            genes[i] = 0;
            i += 1;
        }
        let f = fitness(&genes);
        evaluations += 1;
        if f < best_fit {
            best_fit = f;
            best.copy_from_slice(&genes);
        }
    }
    Ok((best, best_fit, evaluations))
}
