//! Per-tensor uniform post-training quantization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantized {
    /// Index into `codebook` for every weight.
    pub symbols: Vec<u32>,
    /// Equally spaced levels from `min w` to `max w`. A single level when
    /// the input is constant.
    pub codebook: Vec<f64>,
    /// Number of levels requested; the alphabet size of `symbols`.
    pub levels: u32,
}

impl Quantized {
    pub fn dequantize(&self) -> Vec<f64> {
        self.symbols.iter().map(|&s| self.codebook[s as usize]).collect()
    }

    /// Distance between adjacent levels, zero for a constant tensor.
    pub fn step(&self) -> f64 {
        match self.codebook.as_slice() {
            [a, b, ..] => b - a,
            _ => 0.0,
        }
    }

    pub fn min(&self) -> f64 {
        self.codebook[0]
    }

    pub fn max(&self) -> f64 {
        *self.codebook.last().unwrap()
    }

    /// Rebuilds the codebook from its end points.
    pub fn from_parts(symbols: Vec<u32>, min: f64, max: f64, levels: u32) -> Result<Self> {
        let codebook = codebook(min, max, levels);
        if let Some(&s) = symbols.iter().find(|&&s| s as usize >= codebook.len()) {
            return Err(Error::Decode(format!(
                "symbol {s} outside a codebook of {} levels",
                codebook.len()
            )));
        }
        Ok(Self {
            symbols,
            codebook,
            levels,
        })
    }
}

fn codebook(min: f64, max: f64, levels: u32) -> Vec<f64> {
    if min == max {
        return vec![min];
    }
    let step = (max - min) / (levels - 1) as f64;
    let mut book: Vec<f64> = (0..levels).map(|i| min + step * i as f64).collect();
    book[levels as usize - 1] = max;
    book
}

/// Rounds every weight to the nearest of `levels` equally spaced values
/// spanning `[min w, max w]`; exact halfway cases go to the lower level.
pub fn quantize_uniform(weights: &[f64], levels: u32) -> Result<Quantized> {
    if levels < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 quantization levels, got {levels}"
        )));
    }
    if weights.is_empty() {
        return Err(Error::invalid("cannot quantize an empty tensor"));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
        return Err(Error::invalid(format!("non-finite weight {w}")));
    }
    let min = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let codebook = codebook(min, max, levels);
    if codebook.len() == 1 {
        return Ok(Quantized {
            symbols: vec![0; weights.len()],
            codebook,
            levels,
        });
    }
    let step = (max - min) / (levels - 1) as f64;
    let top = levels - 1;
    let symbols = weights
        .iter()
        .map(|&w| {
            let t = (w - min) / step;
            let lower = (t.floor() as u32).min(top);
            if lower < top && t - lower as f64 > 0.5 {
                lower + 1
            } else {
                lower
            }
        })
        .collect();
    Ok(Quantized {
        symbols,
        codebook,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_vector_is_single_level() {
        let q = quantize_uniform(&[2.5; 6], 16).unwrap();
        assert_eq!(q.symbols, vec![0; 6]);
        assert_eq!(q.codebook, vec![2.5]);
        assert_eq!(q.dequantize(), vec![2.5; 6]);
    }

    #[test]
    fn two_points_two_levels_exact() {
        let q = quantize_uniform(&[0.0, 1.0, 1.0, 0.0], 2).unwrap();
        assert_eq!(q.symbols, vec![0, 1, 1, 0]);
        assert_eq!(q.codebook, vec![0.0, 1.0]);
        assert_eq!(q.dequantize(), vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn halfway_ties_go_down() {
        let q = quantize_uniform(&[0.0, 0.5, 1.0], 2).unwrap();
        assert_eq!(q.symbols, vec![0, 0, 1]);
    }

    #[test]
    fn error_within_half_step_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<f64> = (0..5000).map(|_| rng.random_range(-3.0..2.0)).collect();
        let q = quantize_uniform(&w, 16).unwrap();
        let (lo, hi) = w
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let half = (hi - lo) / (2.0 * 15.0);
        for (x, y) in w.iter().zip(q.dequantize()) {
            assert!((x - y).abs() <= half * (1.0 + 1e-12));
            // nearest level, brute force over the codebook
            let best = q.codebook.iter().map(|c| (x - c).abs()).fold(f64::INFINITY, f64::min);
            assert!(((x - y).abs() - best).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(quantize_uniform(&[1.0, f64::NAN], 4).is_err());
        assert!(quantize_uniform(&[1.0], 1).is_err());
        assert!(quantize_uniform(&[], 4).is_err());
    }
}
