use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::layer::exact_sqrt;
use crate::error::{Error, Result};

/// `θ = θ0 + P·w` with `P = Q1 ⊗ Q2` and column-orthonormal `Q1`, `Q2`
/// of shape `√D × √d`.
///
/// `P·w` is computed as `vec(Q1 · W · Q2ᵀ)` on the row-major `√d × √d`
/// reshape of `w`, so `P` is never formed. When the model has fewer than
/// `D` parameters (see [`SubspaceExpansion::padded`]) the expansion is
/// truncated to the first `model_dim` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceExpansion {
    pub seed: u64,
    theta0: Vec<f64>,
    q1: DMatrix<f64>,
    q2: DMatrix<f64>,
}

fn orthonormal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

fn square_sides(full: usize, dim: usize) -> Result<(usize, usize)> {
    let (Some(sd), Some(sw)) = (exact_sqrt(full), exact_sqrt(dim)) else {
        return Err(Error::invalid(format!(
            "D = {full} and d = {dim} must both be perfect squares; pad D up to the next square \
             (e.g. {}) and choose d from 1, 4, 9, 16, …",
            ((full as f64).sqrt().ceil() as usize).pow(2)
        )));
    };
    if dim == 0 || dim > full {
        return Err(Error::invalid(format!(
            "subspace dimension {dim} must lie in 1..={full}"
        )));
    }
    Ok((sd, sw))
}

impl SubspaceExpansion {
    /// Expansion around `θ0 ~ N(0, 1/D)`; `D` and `d` must be squares.
    pub fn new(full_dim: usize, dim: usize, seed: u64) -> Result<Self> {
        let (sd, sw) = square_sides(full_dim, dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q1 = orthonormal(sd, sw, &mut rng);
        let q2 = orthonormal(sd, sw, &mut rng);
        let scale = 1.0 / (full_dim as f64).sqrt();
        let theta0 = (0..full_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        Ok(Self { seed, theta0, q1, q2 })
    }

    /// Expansion around a given origin. `θ0.len()` is padded up to the next
    /// square for the projector; `d` must be a square.
    pub fn padded(theta0: Vec<f64>, dim: usize, seed: u64) -> Result<Self> {
        let side = (theta0.len() as f64).sqrt().ceil() as usize;
        let (sd, sw) = square_sides(side * side, dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q1 = orthonormal(sd, sw, &mut rng);
        let q2 = orthonormal(sd, sw, &mut rng);
        Ok(Self { seed, theta0, q1, q2 })
    }

    pub fn model_dim(&self) -> usize {
        self.theta0.len()
    }

    pub fn subspace_dim(&self) -> usize {
        self.q1.ncols() * self.q2.ncols()
    }

    pub fn origin(&self) -> &[f64] {
        &self.theta0
    }

    fn check(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.subspace_dim() {
            return Err(Error::ShapeMismatch(format!(
                "w has length {}, subspace has dimension {}",
                w.len(),
                self.subspace_dim()
            )));
        }
        Ok(())
    }

    /// `P·w` (before truncation to the model dimension).
    pub fn project(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check(w)?;
        let side = self.q1.ncols();
        let wm = DMatrix::from_row_slice(side, side, w);
        let y = &self.q1 * wm * self.q2.transpose();
        Ok(y.transpose().as_slice().to_vec())
    }

    /// `θ0 + P·w`, truncated to the model dimension.
    pub fn expand(&self, w: &[f64]) -> Result<Vec<f64>> {
        let pw = self.project(w)?;
        Ok(self.theta0.iter().zip(&pw).map(|(t, p)| t + p).collect())
    }

    /// `Pᵀ·g` for a gradient `g` over the model parameters.
    pub fn pull_back(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.model_dim() {
            return Err(Error::ShapeMismatch(
                "gradient length differs from the model dimension".into(),
            ));
        }
        let side = self.q1.nrows();
        let mut padded = g.to_vec();
        padded.resize(side * side, 0.0);
        let gm = DMatrix::from_row_slice(side, side, &padded);
        let r = self.q1.transpose() * gm * &self.q2;
        Ok(r.transpose().as_slice().to_vec())
    }

    /// Dense `P` for small checks.
    pub fn dense_projection(&self) -> DMatrix<f64> {
        self.q1.kronecker(&self.q2)
    }
}

/// `θ = θ0 + (Q1 ⊗ Q2)·w` for a freshly seeded expansion.
pub fn subspace_expand(w: &[f64], seed: u64, full_dim: usize, dim: usize) -> Result<Vec<f64>> {
    SubspaceExpansion::new(full_dim, dim, seed)?.expand(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn zero_w_gives_origin() {
        let s = SubspaceExpansion::new(64, 4, 3).unwrap();
        assert_eq!(s.expand(&[0.0; 4]).unwrap(), s.origin());
    }

    #[test]
    fn isometry() {
        let s = SubspaceExpansion::new(400, 25, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let w: Vec<f64> = (0..25).map(|_| rng.sample(StandardNormal)).collect();
            let pw = s.project(&w).unwrap();
            let a = pw.iter().map(|x| x * x).sum::<f64>().sqrt();
            let b = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((a - b).abs() / b < 1e-12);
        }
    }

    #[test]
    fn matches_dense_projection() {
        let s = SubspaceExpansion::new(64, 4, 5).unwrap();
        let w = [0.3, -1.2, 2.0, 0.7];
        let dense = s.dense_projection() * DVector::from_column_slice(&w);
        let fast = s.project(&w).unwrap();
        for (x, y) in fast.iter().zip(dense.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
        // pull_back is the transpose
        let g: Vec<f64> = (0..64).map(|i| (i as f64).sin()).collect();
        let dense_t = s.dense_projection().transpose() * DVector::from_column_slice(&g);
        for (x, y) in s.pull_back(&g).unwrap().iter().zip(dense_t.iter()) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = subspace_expand(&[1.0; 9], 7, 81, 9).unwrap();
        assert_eq!(a, subspace_expand(&[1.0; 9], 7, 81, 9).unwrap());
        assert_ne!(a, subspace_expand(&[1.0; 9], 8, 81, 9).unwrap());
    }

    #[test]
    fn non_square_dimensions_rejected() {
        let err = SubspaceExpansion::new(60, 4, 0).unwrap_err().to_string();
        assert!(err.contains("pad"), "{err}");
        assert!(SubspaceExpansion::new(64, 5, 0).is_err());
        assert!(SubspaceExpansion::new(16, 25, 0).is_err());
        let s = SubspaceExpansion::padded(vec![0.0; 60], 4, 0).unwrap();
        assert_eq!(s.expand(&[1.0; 4]).unwrap().len(), 60);
    }
}
