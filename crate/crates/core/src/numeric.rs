//! Deterministic reductions.

const LEAF: usize = 32;

/// Sums `values` with a fixed binary reduction tree.
///
/// The tree shape depends only on the length, so the result is reproducible
/// regardless of how callers later decide to split the work.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// `pairwise_sum` over a mapped slice, without materializing the whole map
/// at once for leaves.
pub fn pairwise_sum_by<T>(items: &[T], f: &impl Fn(&T) -> f64) -> f64 {
    if items.len() <= LEAF {
        return items.iter().map(f).sum();
    }
    let mid = items.len() / 2;
    pairwise_sum_by(&items[..mid], f) + pairwise_sum_by(&items[mid..], f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_on_small_and_large() {
        let v: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
        assert_eq!(pairwise_sum_by(&v, &|x| 2.0 * x), 1_001_000.0);
    }

    #[test]
    fn pairwise_is_more_accurate_than_naive() {
        let v = vec![0.1_f64; 1 << 20];
        let exact = 0.1 * (1u64 << 20) as f64;
        let naive: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - exact).abs() <= (naive - exact).abs());
    }
}
