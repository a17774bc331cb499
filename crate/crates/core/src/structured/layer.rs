use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape-free description of a parametrization, used to build layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Parametrization {
    Dense,
    /// `W = W0 + AB` with `A: rows × rank`, `B: rank × cols`, `W0` frozen.
    Lora {
        rank: usize,
    },
    /// `W = A ⊗ B` with `A: a1 × b1`; the second factor takes the rest.
    Kronecker {
        a1: usize,
        b1: usize,
    },
    /// `W = A R B`: `B` has `in_blocks` diagonal blocks over the input,
    /// `A` has `out_blocks` diagonal blocks over the output.
    Monarch {
        in_blocks: usize,
        out_blocks: usize,
    },
}

impl Parametrization {
    pub fn code(&self) -> u64 {
        match self {
            Parametrization::Dense => 0,
            Parametrization::Lora { .. } => 1,
            Parametrization::Kronecker { .. } => 2,
            Parametrization::Monarch { .. } => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Parametrization::Dense => "dense",
            Parametrization::Lora { .. } => "lora",
            Parametrization::Kronecker { .. } => "kronecker",
            Parametrization::Monarch { .. } => "monarch",
        }
    }

    /// The two shape arguments stored alongside the code (zero when unused).
    pub fn shape_args(&self) -> (usize, usize) {
        match *self {
            Parametrization::Dense => (0, 0),
            Parametrization::Lora { rank } => (rank, 0),
            Parametrization::Kronecker { a1, b1 } => (a1, b1),
            Parametrization::Monarch { in_blocks, out_blocks } => (in_blocks, out_blocks),
        }
    }

    pub fn from_code(code: u64, x: usize, y: usize) -> Result<Self> {
        Ok(match code {
            0 => Parametrization::Dense,
            1 => Parametrization::Lora { rank: x },
            2 => Parametrization::Kronecker { a1: x, b1: y },
            3 => Parametrization::Monarch {
                in_blocks: x,
                out_blocks: y,
            },
            _ => return Err(Error::invalid(format!("unknown parametrization code {code}"))),
        })
    }

    /// Monarch with `√rows` and `√cols` blocks.
    pub fn square_monarch(rows: usize, cols: usize) -> Result<Self> {
        let (r, c) = (exact_sqrt(rows), exact_sqrt(cols));
        match (r, c) {
            (Some(r), Some(c)) => Ok(Parametrization::Monarch {
                in_blocks: c,
                out_blocks: r,
            }),
            _ => Err(Error::invalid(format!("{rows}×{cols} is not a product of squares"))),
        }
    }
}

pub(crate) fn exact_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Dense {
        w: DMatrix<f64>,
    },
    Lora {
        w0: DMatrix<f64>,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
    },
    Kronecker {
        a: DMatrix<f64>,
        b: DMatrix<f64>,
    },
    /// `b_blocks[i]` is `out_blocks × (cols / in_blocks)`;
    /// `a_blocks[j]` is `(rows / out_blocks) × in_blocks`.
    Monarch {
        a_blocks: Vec<DMatrix<f64>>,
        b_blocks: Vec<DMatrix<f64>>,
    },
}

/// A linear map `R^cols → R^rows` under one of four parametrizations.
///
/// Trainable parameters flatten in a fixed order: each factor in
/// column-major order, `A` before `B` (LoRA, Kronecker) and the `B`
/// blocks before the `A` blocks (Monarch). The frozen LoRA base is not a
/// parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredLinear {
    rows: usize,
    cols: usize,
    kind: LayerKind,
}

fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal) * scale)
}

impl StructuredLinear {
    pub fn dense(w: DMatrix<f64>) -> Self {
        Self {
            rows: w.nrows(),
            cols: w.ncols(),
            kind: LayerKind::Dense { w },
        }
    }

    pub fn lora(w0: DMatrix<f64>, a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != w0.nrows() || b.ncols() != w0.ncols() || a.ncols() != b.nrows() || a.ncols() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "lora factors {}×{} and {}×{} do not fit a {}×{} base",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                w0.nrows(),
                w0.ncols()
            )));
        }
        Ok(Self {
            rows: w0.nrows(),
            cols: w0.ncols(),
            kind: LayerKind::Lora { w0, a, b },
        })
    }

    pub fn kronecker(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        Self {
            rows: a.nrows() * b.nrows(),
            cols: a.ncols() * b.ncols(),
            kind: LayerKind::Kronecker { a, b },
        }
    }

    pub fn monarch(rows: usize, cols: usize, a_blocks: Vec<DMatrix<f64>>, b_blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let (nb, q) = (b_blocks.len(), a_blocks.len());
        if nb == 0 || q == 0 || cols % nb != 0 || rows % q != 0 {
            return Err(Error::ShapeMismatch(format!(
                "block counts {nb} and {q} must divide {cols} and {rows}"
            )));
        }
        let (cb, ra) = (cols / nb, rows / q);
        if b_blocks.iter().any(|m| m.shape() != (q, cb)) || a_blocks.iter().any(|m| m.shape() != (ra, nb)) {
            return Err(Error::ShapeMismatch(format!(
                "monarch blocks must be {q}×{cb} and {ra}×{nb}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            kind: LayerKind::Monarch { a_blocks, b_blocks },
        })
    }

    /// Seeded initialization: factors drawn from a standard normal scaled by
    /// `1/√fan_in`. LoRA starts from a random frozen base and `B = 0`.
    pub fn init(param: Parametrization, rows: usize, cols: usize, rng: &mut impl Rng) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("layer dimensions must be positive"));
        }
        let fan = |n: usize| 1.0 / (n as f64).sqrt();
        match param {
            Parametrization::Dense => Ok(Self::dense(gaussian(rows, cols, fan(cols), rng))),
            Parametrization::Lora { rank } => {
                if rank == 0 {
                    return Err(Error::invalid("lora rank must be positive"));
                }
                let w0 = gaussian(rows, cols, fan(cols), rng);
                let a = gaussian(rows, rank, fan(rank), rng);
                Self::lora(w0, a, DMatrix::zeros(rank, cols))
            }
            Parametrization::Kronecker { a1, b1 } => {
                if a1 == 0 || b1 == 0 || rows % a1 != 0 || cols % b1 != 0 {
                    return Err(Error::ShapeMismatch(format!(
                        "kronecker factor {a1}×{b1} does not divide {rows}×{cols}"
                    )));
                }
                let (a2, b2) = (rows / a1, cols / b1);
                Ok(Self::kronecker(
                    gaussian(a1, b1, fan(b1), rng),
                    gaussian(a2, b2, fan(b2), rng),
                ))
            }
            Parametrization::Monarch { in_blocks, out_blocks } => {
                if in_blocks == 0 || out_blocks == 0 || cols % in_blocks != 0 || rows % out_blocks != 0 {
                    return Err(Error::ShapeMismatch(format!(
                        "block counts {in_blocks} and {out_blocks} must divide {cols} and {rows}"
                    )));
                }
                let (cb, ra) = (cols / in_blocks, rows / out_blocks);
                let b_blocks = (0..in_blocks).map(|_| gaussian(out_blocks, cb, fan(cb), rng)).collect();
                let a_blocks = (0..out_blocks)
                    .map(|_| gaussian(ra, in_blocks, fan(in_blocks), rng))
                    .collect();
                Self::monarch(rows, cols, a_blocks, b_blocks)
            }
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kind(&self) -> &LayerKind {
        &self.kind
    }

    pub fn kind_mut(&mut self) -> &mut LayerKind {
        &mut self.kind
    }

    pub fn parametrization(&self) -> Parametrization {
        match &self.kind {
            LayerKind::Dense { .. } => Parametrization::Dense,
            LayerKind::Lora { a, .. } => Parametrization::Lora { rank: a.ncols() },
            LayerKind::Kronecker { a, .. } => Parametrization::Kronecker {
                a1: a.nrows(),
                b1: a.ncols(),
            },
            LayerKind::Monarch { a_blocks, b_blocks } => Parametrization::Monarch {
                in_blocks: b_blocks.len(),
                out_blocks: a_blocks.len(),
            },
        }
    }

    fn factors(&self) -> Vec<&DMatrix<f64>> {
        match &self.kind {
            LayerKind::Dense { w } => vec![w],
            LayerKind::Lora { a, b, .. } | LayerKind::Kronecker { a, b } => vec![a, b],
            LayerKind::Monarch { a_blocks, b_blocks } => b_blocks.iter().chain(a_blocks).collect(),
        }
    }

    fn factors_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        match &mut self.kind {
            LayerKind::Dense { w } => vec![w],
            LayerKind::Lora { a, b, .. } | LayerKind::Kronecker { a, b } => vec![a, b],
            LayerKind::Monarch { a_blocks, b_blocks } => b_blocks.iter_mut().chain(a_blocks.iter_mut()).collect(),
        }
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let (a, b) = (self.rows, self.cols);
        match &self.kind {
            LayerKind::Dense { .. } => a * b,
            LayerKind::Lora { a: fa, .. } => fa.ncols() * (a + b),
            LayerKind::Kronecker { a: fa, b: fb } => fa.len() + fb.len(),
            LayerKind::Monarch { a_blocks, b_blocks } => a_blocks.len() * b + b_blocks.len() * a,
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for f in self.factors() {
            out.extend_from_slice(f.as_slice());
        }
        out
    }

    /// Overwrites the trainable parameters from a flat vector.
    pub fn unpack(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut at = 0;
        for f in self.factors_mut() {
            let n = f.len();
            f.as_mut_slice().copy_from_slice(&params[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// `params += scale · delta` in flattened order.
    pub fn add_scaled(&mut self, delta: &[f64], scale: f64) -> Result<()> {
        if delta.len() != self.param_count() {
            return Err(Error::ShapeMismatch(
                "update length differs from parameter count".into(),
            ));
        }
        let mut at = 0;
        for f in self.factors_mut() {
            for (p, d) in f.as_mut_slice().iter_mut().zip(&delta[at..]) {
                *p += scale * d;
            }
            at += f.len();
        }
        Ok(())
    }

    pub fn materialize(&self) -> DMatrix<f64> {
        match &self.kind {
            LayerKind::Dense { w } => w.clone(),
            LayerKind::Lora { w0, a, b } => w0 + a * b,
            LayerKind::Kronecker { a, b } => a.kronecker(b),
            LayerKind::Monarch { a_blocks, b_blocks } => {
                let (nb, q) = (b_blocks.len(), a_blocks.len());
                let (cb, ra) = (self.cols / nb, self.rows / q);
                DMatrix::from_fn(self.rows, self.cols, |row, col| {
                    let (j, r) = (row / ra, row % ra);
                    let (i, c) = (col / cb, col % cb);
                    a_blocks[j][(r, i)] * b_blocks[i][(j, c)]
                })
            }
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "input has length {}, layer expects {}",
                x.len(),
                self.cols
            )));
        }
        Ok(())
    }

    /// `W·x` without materializing `W`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let xv = DVector::from_column_slice(x);
        Ok(match &self.kind {
            LayerKind::Dense { w } => (w * xv).data.into(),
            LayerKind::Lora { w0, a, b } => (w0 * &xv + a * (b * &xv)).data.into(),
            LayerKind::Kronecker { a, b } => {
                let xm = DMatrix::from_row_slice(a.ncols(), b.ncols(), x);
                let y = a * xm * b.transpose();
                y.transpose().as_slice().to_vec()
            }
            LayerKind::Monarch { a_blocks, b_blocks } => monarch_forward(a_blocks, b_blocks, x, self.rows).0,
        })
    }

    /// Gradient of `gᵀ·W·x` with respect to the flattened parameters.
    pub fn grad(&self, x: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.param_count()];
        self.accumulate_grad(x, g, 1.0, &mut out)?;
        Ok(out)
    }

    /// `out += scale · ∂(gᵀ·W·x)/∂params`.
    pub fn accumulate_grad(&self, x: &[f64], g: &[f64], scale: f64, out: &mut [f64]) -> Result<()> {
        self.check_input(x)?;
        if g.len() != self.rows || out.len() != self.param_count() {
            return Err(Error::ShapeMismatch("gradient buffers do not match the layer".into()));
        }
        let xv = DVector::from_column_slice(x);
        let gv = DVector::from_column_slice(g);
        let mut pieces: Vec<DMatrix<f64>> = Vec::new();
        match &self.kind {
            LayerKind::Dense { .. } => pieces.push(&gv * xv.transpose()),
            LayerKind::Lora { a, b, .. } => {
                let u = b * &xv;
                pieces.push(&gv * u.transpose());
                pieces.push((a.transpose() * &gv) * xv.transpose());
            }
            LayerKind::Kronecker { a, b } => {
                let xm = DMatrix::from_row_slice(a.ncols(), b.ncols(), x);
                let dy = DMatrix::from_row_slice(a.nrows(), b.nrows(), g);
                pieces.push(&dy * b * xm.transpose());
                pieces.push(dy.transpose() * a * xm);
            }
            LayerKind::Monarch { a_blocks, b_blocks } => {
                let (nb, q) = (b_blocks.len(), a_blocks.len());
                let (cb, ra) = (self.cols / nb, self.rows / q);
                let (_, z) = monarch_forward(a_blocks, b_blocks, x, self.rows);
                let mut dz: Vec<DVector<f64>> = Vec::with_capacity(q);
                let mut da = Vec::with_capacity(q);
                for (j, aj) in a_blocks.iter().enumerate() {
                    let gj = DVector::from_column_slice(&g[j * ra..(j + 1) * ra]);
                    da.push(&gj * z[j].transpose());
                    dz.push(aj.transpose() * gj);
                }
                for i in 0..nb {
                    let dh = DVector::from_fn(q, |j, _| dz[j][i]);
                    let xi = DVector::from_column_slice(&x[i * cb..(i + 1) * cb]);
                    pieces.push(dh * xi.transpose());
                }
                pieces.extend(da);
            }
        }
        let mut at = 0;
        for p in pieces {
            for (o, v) in out[at..].iter_mut().zip(p.as_slice()) {
                *o += scale * v;
            }
            at += p.len();
        }
        Ok(())
    }
}

/// Reshape, batched block multiply, transpose, batched block multiply.
/// Also returns the permuted intermediate `z` for the backward pass.
fn monarch_forward(
    a_blocks: &[DMatrix<f64>],
    b_blocks: &[DMatrix<f64>],
    x: &[f64],
    rows: usize,
) -> (Vec<f64>, Vec<DVector<f64>>) {
    let (nb, q) = (b_blocks.len(), a_blocks.len());
    let cb = x.len() / nb;
    let h: Vec<DVector<f64>> = b_blocks
        .iter()
        .enumerate()
        .map(|(i, bi)| bi * DVector::from_column_slice(&x[i * cb..(i + 1) * cb]))
        .collect();
    let z: Vec<DVector<f64>> = (0..q).map(|j| DVector::from_fn(nb, |i, _| h[i][j])).collect();
    let mut y = Vec::with_capacity(rows);
    for (aj, zj) in a_blocks.iter().zip(&z) {
        y.extend_from_slice((aj * zj).as_slice());
    }
    (y, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den.max(1e-300)
    }

    fn random_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn kronecker_of_identities_is_identity() {
        let layer = StructuredLinear::kronecker(DMatrix::identity(3, 3), DMatrix::identity(4, 4));
        assert_eq!(layer.materialize(), DMatrix::identity(12, 12));
        let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
        assert_eq!(layer.apply(&x).unwrap(), x);
    }

    #[test]
    fn lora_with_zero_update_is_base() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = StructuredLinear::init(Parametrization::Lora { rank: 3 }, 5, 7, &mut rng).unwrap();
        let LayerKind::Lora { w0, .. } = layer.kind() else {
            unreachable!()
        };
        assert_eq!(&layer.materialize(), w0);
    }

    #[test]
    fn monarch_apply_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = StructuredLinear::init(
            Parametrization::Monarch {
                in_blocks: 4,
                out_blocks: 4,
            },
            16,
            16,
            &mut rng,
        )
        .unwrap();
        let w = layer.materialize();
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x = random_vec(16, &mut rng);
            let dense = (&w * DVector::from_column_slice(&x)).data.as_vec().clone();
            worst = worst.max(rel_err(&layer.apply(&x).unwrap(), &dense));
        }
        assert!(worst < 1e-12, "{worst}");
        assert_eq!(layer.param_count(), 128);
    }

    #[test]
    fn monarch_matches_block_product_definition() {
        // W = A·R·B with explicit block-diagonal A, B and the transpose
        // permutation R
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (rows, cols, nb, q) = (6, 8, 4, 3);
        let layer = StructuredLinear::init(
            Parametrization::Monarch {
                in_blocks: nb,
                out_blocks: q,
            },
            rows,
            cols,
            &mut rng,
        )
        .unwrap();
        let LayerKind::Monarch { a_blocks, b_blocks } = layer.kind() else {
            unreachable!()
        };
        let mut bd = DMatrix::zeros(nb * q, cols);
        for (i, bi) in b_blocks.iter().enumerate() {
            bd.view_mut((i * q, i * (cols / nb)), bi.shape()).copy_from(bi);
        }
        let mut ad = DMatrix::zeros(rows, q * nb);
        for (j, aj) in a_blocks.iter().enumerate() {
            ad.view_mut((j * (rows / q), j * nb), aj.shape()).copy_from(aj);
        }
        // row (j, i) of the permuted vector takes row (i, j) of B's output
        let perm = DMatrix::from_fn(nb * q, nb * q, |r, c| {
            let (j, i) = (r / nb, r % nb);
            if c == i * q + j {
                1.0
            } else {
                0.0
            }
        });
        let w = ad * perm * bd;
        assert!((w - layer.materialize()).abs().max() < 1e-14);
    }

    #[test]
    fn param_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lora = StructuredLinear::init(Parametrization::Lora { rank: 4 }, 64, 64, &mut rng).unwrap();
        assert_eq!(lora.param_count(), 512);
        let kron = StructuredLinear::init(Parametrization::Kronecker { a1: 8, b1: 8 }, 64, 64, &mut rng).unwrap();
        assert_eq!(kron.param_count(), 128);
        let dense = StructuredLinear::init(Parametrization::Dense, 64, 64, &mut rng).unwrap();
        assert_eq!(dense.param_count(), 4096);
        for l in [&lora, &kron, &dense] {
            assert_eq!(l.flatten().len(), l.param_count());
        }
    }

    #[test]
    fn unpack_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut layer = StructuredLinear::init(
            Parametrization::Monarch {
                in_blocks: 2,
                out_blocks: 3,
            },
            9,
            4,
            &mut rng,
        )
        .unwrap();
        let p: Vec<f64> = (0..layer.param_count()).map(|i| i as f64).collect();
        layer.unpack(&p).unwrap();
        assert_eq!(layer.flatten(), p);
        assert!(layer.unpack(&p[1..]).is_err());
    }

    #[test]
    fn shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(StructuredLinear::init(Parametrization::Kronecker { a1: 3, b1: 2 }, 8, 8, &mut rng).is_err());
        assert!(StructuredLinear::init(
            Parametrization::Monarch {
                in_blocks: 3,
                out_blocks: 2
            },
            8,
            8,
            &mut rng
        )
        .is_err());
        let layer = StructuredLinear::init(Parametrization::Dense, 2, 3, &mut rng).unwrap();
        assert!(matches!(layer.apply(&[1.0, 2.0]), Err(Error::ShapeMismatch(_))));
        assert!(Parametrization::square_monarch(12, 16).is_err());
        assert_eq!(
            Parametrization::square_monarch(16, 64).unwrap(),
            Parametrization::Monarch {
                in_blocks: 8,
                out_blocks: 4
            }
        );
    }
}
