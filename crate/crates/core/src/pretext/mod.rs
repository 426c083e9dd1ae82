//! Pre-training objectives: masked neighbor reconstruction, ego reconstruction
//! under input corruption, semantic consistency between the two encoders, and
//! prototype-guided cluster discovery.

mod cluster;
mod train;

use std::rc::Rc;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};

pub use cluster::{
    kmeans, kmeans_init, loss_cluster, soft_assignment, target_distribution, KMeans,
    PrototypeSet, KL_FLOOR,
};
pub use train::{
    pretrain, EncoderSet, EpochLosses, LossWeights, PretrainCheckpoint, PretrainConfig,
    PretrainParams, PretrainTrace,
};

/// Linear mask-rate ramp from `p_start` to `p_end` over `total_epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSchedule {
    pub p_start: f64,
    pub p_end: f64,
    pub total_epochs: usize,
}

impl MaskSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.p_start && self.p_start <= self.p_end && self.p_end <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mask schedule needs 0 <= p_start <= p_end <= 1, got {} and {}",
                self.p_start, self.p_end
            )));
        }
        if self.total_epochs == 0 {
            return Err(Error::InvalidArgument("total_epochs must be at least 1".into()));
        }
        Ok(())
    }

    /// Mask rate at a zero-based epoch.
    pub fn rate_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(Error::InvalidArgument(format!(
                "epoch {epoch} outside schedule of {} epochs",
                self.total_epochs
            )));
        }
        if self.total_epochs == 1 {
            return Ok(self.p_start);
        }
        let frac = epoch as f64 / (self.total_epochs - 1) as f64;
        Ok(self.p_start + (self.p_end - self.p_start) * frac)
    }
}

pub fn mask_rate_at(schedule: &MaskSchedule, epoch: usize) -> Result<f64> {
    schedule.rate_at(epoch)
}

/// Uniform random subset of `⌊rate·n⌋` node indices (at least one when `rate > 0`), sorted.
pub fn sample_mask<R: Rng>(n: usize, rate: f64, rng: &mut R) -> Vec<usize> {
    let mut k = (rate * n as f64).floor() as usize;
    if rate > 0.0 && n > 0 {
        k = k.max(1);
    }
    let mut picked = index::sample(rng, n, k.min(n)).into_vec();
    picked.sort_unstable();
    picked
}

/// Replaces a random subset of rows by the mask token. Returns the masked matrix and the subset.
pub fn apply_feature_mask<R: Rng>(
    x: &Matrix,
    rate: f64,
    token: &Matrix,
    rng: &mut R,
) -> Result<(Matrix, Vec<usize>)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("mask rate {rate} outside [0, 1]")));
    }
    if token.dim() != (1, x.ncols()) {
        return Err(Error::shape("mask token", format!("1×{}", x.ncols()), format!("{:?}", token.dim())));
    }
    let masked = sample_mask(x.nrows(), rate, rng);
    let mut out = x.clone();
    for &i in &masked {
        out.row_mut(i).assign(&token.row(0));
    }
    Ok((out, masked))
}

/// Independent keep/zero mask: each entry is zero with probability `p`. Survivors are not rescaled.
pub fn dropout_mask<R: Rng>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Matrix {
    Matrix::from_shape_simple_fn((rows, cols), || if rng.random::<f64>() < p { 0.0 } else { 1.0 })
}

pub fn apply_feature_dropout<R: Rng>(x: &Matrix, p: f64, rng: &mut R) -> Result<Matrix> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout probability {p} outside [0, 1)")));
    }
    let mask = dropout_mask(x.nrows(), x.ncols(), p, rng);
    Ok(x * &mask)
}

/// Mean over the masked rows of the squared reconstruction error.
pub fn neighbor_recon_tape(tape: &mut Tape, x: Var, z: Var, masked: Rc<Vec<usize>>) -> Var {
    let count = masked.len() as f64;
    let diff = tape.sub(x, z);
    let rows = tape.select_rows(diff, masked);
    let total = tape.sq_sum(rows);
    tape.scale(total, 1.0 / count)
}

/// Mean over all rows of the squared reconstruction error.
pub fn ego_recon_tape(tape: &mut Tape, x: Var, z: Var) -> Var {
    let n = tape.shape(x).0 as f64;
    let diff = tape.sub(x, z);
    let total = tape.sq_sum(diff);
    tape.scale(total, 1.0 / n)
}

/// `‖Hg − Hl‖² + ‖HgᵀHg − I‖² + ‖HlᵀHl − I‖²`, optionally on column-standardized inputs.
pub fn semantic_consistency_tape(tape: &mut Tape, hg: Var, hl: Var, standardize: bool) -> Var {
    let (hg, hl) = if standardize {
        (tape.standardize_cols(hg, 1e-8), tape.standardize_cols(hl, 1e-8))
    } else {
        (hg, hl)
    };
    let d = tape.shape(hg).1;
    let diff = tape.sub(hg, hl);
    let invariance = tape.sq_sum(diff);
    let eye = tape.leaf(Matrix::eye(d));
    let mut total = invariance;
    for h in [hg, hl] {
        let ht = tape.transpose(h);
        let gram = tape.matmul(ht, h);
        let off = tape.sub(gram, eye);
        let term = tape.sq_sum(off);
        total = tape.add(total, term);
    }
    total
}

pub fn loss_neighbor_recon(x: &Matrix, z: &Matrix, masked: &[usize]) -> Result<f64> {
    if masked.is_empty() {
        return Err(Error::InvalidArgument("empty masked node set".into()));
    }
    if x.dim() != z.dim() {
        return Err(Error::shape("reconstruction", format!("{:?}", x.dim()), format!("{:?}", z.dim())));
    }
    if let Some(&bad) = masked.iter().find(|&&i| i >= x.nrows()) {
        return Err(Error::InvalidArgument(format!("masked index {bad} out of range")));
    }
    let mut tape = Tape::new();
    let (xv, zv) = (tape.leaf(x.clone()), tape.leaf(z.clone()));
    let l = neighbor_recon_tape(&mut tape, xv, zv, Rc::new(masked.to_vec()));
    Ok(tape.scalar_value(l))
}

pub fn loss_ego_recon(x: &Matrix, z: &Matrix) -> Result<f64> {
    if x.dim() != z.dim() {
        return Err(Error::shape("reconstruction", format!("{:?}", x.dim()), format!("{:?}", z.dim())));
    }
    let mut tape = Tape::new();
    let (xv, zv) = (tape.leaf(x.clone()), tape.leaf(z.clone()));
    let l = ego_recon_tape(&mut tape, xv, zv);
    Ok(tape.scalar_value(l))
}

pub fn loss_semantic_consistency(hg: &Matrix, hl: &Matrix, standardize: bool) -> Result<f64> {
    if hg.dim() != hl.dim() {
        return Err(Error::shape("semantic consistency", format!("{:?}", hg.dim()), format!("{:?}", hl.dim())));
    }
    let mut tape = Tape::new();
    let (a, b) = (tape.leaf(hg.clone()), tape.leaf(hl.clone()));
    let l = semantic_consistency_tape(&mut tape, a, b, standardize);
    Ok(tape.scalar_value(l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let s = MaskSchedule {
            p_start: 0.2,
            p_end: 0.6,
            total_epochs: 11,
        };
        assert_eq!(s.rate_at(0).unwrap(), 0.2);
        assert_eq!(s.rate_at(10).unwrap(), 0.6);
        assert_abs_diff_eq!(s.rate_at(5).unwrap(), 0.4, epsilon = 1e-15);
        assert!(s.rate_at(11).is_err());
        let one = MaskSchedule { total_epochs: 1, ..s };
        assert_eq!(one.rate_at(0).unwrap(), 0.2);
    }

    #[test]
    fn mask_extremes_and_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]];
        let tok = array![[-1.0, -1.0]];
        let (m, set) = apply_feature_mask(&x, 0.0, &tok, &mut rng).unwrap();
        assert_eq!(m, x);
        assert!(set.is_empty());
        let (m, set) = apply_feature_mask(&x, 1.0, &tok, &mut rng).unwrap();
        assert_eq!(set, vec![0, 1, 2, 3]);
        assert!(m.rows().into_iter().all(|r| r == tok.row(0)));
        let (_, set) = apply_feature_mask(&x, 0.5, &tok, &mut rng).unwrap();
        assert_eq!(set.len(), 2);
        let (_, set) = apply_feature_mask(&x, 0.01, &tok, &mut rng).unwrap();
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn dropout_fraction_and_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::ones((1000, 100));
        assert_eq!(apply_feature_dropout(&x, 0.0, &mut rng).unwrap(), x);
        let y = apply_feature_dropout(&x, 0.5, &mut rng).unwrap();
        let zeros = y.iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        assert!((zeros - 0.5).abs() < 0.01, "{zeros}");
        assert!(y.iter().all(|&v| v == 0.0 || v == 1.0));
        let z = Matrix::zeros((10, 10));
        assert_eq!(apply_feature_dropout(&z, 0.7, &mut rng).unwrap(), z);
        assert!(apply_feature_dropout(&x, 1.0, &mut rng).is_err());
    }

    #[test]
    fn neighbor_recon_values() {
        let x = array![[0.0, 0.0], [1.0, 1.0]];
        assert_eq!(loss_neighbor_recon(&x, &x, &[0, 1]).unwrap(), 0.0);
        let z = array![[3.0, 4.0], [9.0, 9.0]];
        assert_eq!(loss_neighbor_recon(&x, &z, &[0]).unwrap(), 25.0);
        // squared errors 2 and 4
        let z = array![[1.0, 1.0], [3.0, 1.0]];
        assert_eq!(loss_neighbor_recon(&x, &z, &[0, 1]).unwrap(), 3.0);
        assert!(loss_neighbor_recon(&x, &z, &[]).is_err());
    }

    #[test]
    fn neighbor_recon_ignores_unmasked_rows() {
        let x = array![[0.0, 1.0], [1.0, 1.0], [2.0, 0.5]];
        let mut z = array![[0.5, 1.0], [1.0, 0.0], [2.0, 2.5]];
        let before = loss_neighbor_recon(&x, &z, &[0, 2]).unwrap();
        z[[1, 0]] += 100.0;
        assert_eq!(loss_neighbor_recon(&x, &z, &[0, 2]).unwrap(), before);
    }

    #[test]
    fn ego_recon_values() {
        let x = array![[1.0, 2.0, 2.0]];
        assert_eq!(loss_ego_recon(&x, &x).unwrap(), 0.0);
        assert_eq!(loss_ego_recon(&x, &Matrix::zeros((1, 3))).unwrap(), 9.0);
        let a = array![[0.5, -1.0], [2.0, 0.0]];
        let base = loss_ego_recon(&a, &Matrix::zeros((2, 2))).unwrap();
        let doubled = loss_ego_recon(&(&a * 2.0), &Matrix::zeros((2, 2))).unwrap();
        assert_abs_diff_eq!(doubled, 4.0 * base, epsilon = 1e-12);
        assert!(loss_ego_recon(&a, &Matrix::zeros((2, 3))).is_err());
    }

    #[test]
    fn semantic_consistency_values() {
        let eye = Matrix::eye(3);
        assert_eq!(loss_semantic_consistency(&eye, &eye, false).unwrap(), 0.0);
        let hg = array![[1.0, 0.0], [0.0, 1.0]];
        let hl = array![[0.0, 1.0], [1.0, 0.0]];
        assert_abs_diff_eq!(loss_semantic_consistency(&hg, &hl, false).unwrap(), 4.0, epsilon = 1e-12);
        let h = array![[0.3, 1.0], [2.0, -0.7], [0.1, 0.4]];
        let gram = h.t().dot(&h) - Matrix::eye(2);
        let decor: f64 = gram.iter().map(|v| v * v).sum();
        assert_abs_diff_eq!(loss_semantic_consistency(&h, &h, false).unwrap(), 2.0 * decor, epsilon = 1e-12);
    }

    #[test]
    fn standardized_gram_is_correlation() {
        let mut tape = Tape::new();
        let h = tape.leaf(array![[1.0, 2.0], [3.0, 1.0], [5.0, 7.0], [0.0, 1.0]]);
        let s = tape.standardize_cols(h, 0.0);
        let v = tape.value(s).clone();
        let corr = v.t().dot(&v);
        assert_abs_diff_eq!(corr[[0, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(corr[[1, 1]], 1.0, epsilon = 1e-12);
        assert!(corr[[0, 1]].abs() < 1.0);
    }
}
