use crate::error::{Error, Result};
use crate::moments::{MomentVector, Welford};

/// Output of variance-aware pooling: `(k + 2)` blocks of `dim` moments laid
/// out as `[context before | part 1 .. part k | context after]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeature {
    pub moments: MomentVector,
    pub k: usize,
    pub dim: usize,
}

impl PooledFeature {
    pub fn len(&self) -> usize {
        self.moments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moments.is_empty()
    }

    pub fn block(&self, index: usize) -> (&[f64], &[f64]) {
        let r = index * self.dim..(index + 1) * self.dim;
        (&self.moments.means[r.clone()], &self.moments.variances[r])
    }
}

/// Sizes of `k` contiguous parts covering `t` units. The remainder goes one
/// unit at a time to the earliest parts.
pub fn part_sizes(t: usize, k: usize) -> Vec<usize> {
    let (base, rem) = (t / k, t % k);
    (0..k).map(|i| base + usize::from(i < rem)).collect()
}

fn pool_rows(units: &[f64], dim: usize, rows: std::ops::Range<usize>, means: &mut [f64], vars: &mut [f64]) {
    let mut acc = vec![Welford::default(); dim];
    for r in rows {
        for (a, &x) in acc.iter_mut().zip(&units[r * dim..(r + 1) * dim]) {
            a.push(x);
        }
    }
    for ((a, m), v) in acc.iter().zip(means.iter_mut()).zip(vars.iter_mut()) {
        (*m, *v) = a.finish();
    }
}

/// Variance-aware pooling.
///
/// `units` holds `ctx_before + T + ctx_after` rows of `dim` features each
/// (row-major): the leading context, the proposal's own `T` units, then the
/// trailing context. The proposal is split into `k` parts; every part and
/// each context window is reduced to per-dimension mean and population
/// variance. Empty context windows yield zero blocks.
pub fn vap_pool(
    units: &[f64],
    dim: usize,
    k: usize,
    ctx_before: usize,
    ctx_after: usize,
) -> Result<PooledFeature> {
    if dim == 0 || k == 0 {
        return Err(Error::usage("pooling needs dim >= 1 and k >= 1"));
    }
    if !units.len().is_multiple_of(dim) {
        return Err(Error::usage(format!(
            "unit buffer of length {} is not a multiple of dim {dim}",
            units.len()
        )));
    }
    let total = units.len() / dim;
    let t = total
        .checked_sub(ctx_before + ctx_after)
        .ok_or_else(|| Error::usage("context windows exceed the unit buffer"))?;
    if t < k {
        return Err(Error::domain(format!(
            "proposal of {t} units cannot be split into {k} parts"
        )));
    }

    let blocks = k + 2;
    let mut means = vec![0.0; blocks * dim];
    let mut vars = vec![0.0; blocks * dim];
    let mut windows = Vec::with_capacity(blocks);
    windows.push(0..ctx_before);
    let mut start = ctx_before;
    for size in part_sizes(t, k) {
        windows.push(start..start + size);
        start += size;
    }
    windows.push(start..total);

    for (b, rows) in windows.into_iter().enumerate() {
        let r = b * dim..(b + 1) * dim;
        pool_rows(units, dim, rows, &mut means[r.clone()], &mut vars[r]);
    }
    Ok(PooledFeature {
        moments: MomentVector {
            means,
            variances: vars,
        },
        k,
        dim,
    })
}
