//! Prototype-guided cluster discovery: k-means initialization, Student-t soft
//! assignment, the sharpened target distribution and the KL objective.

use std::rc::Rc;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape};
use crate::error::{Error, Result};

/// Lower bound applied to `q` inside the KL logarithm during training.
pub const KL_FLOOR: f64 = 1e-12;

const KMEANS_MAX_ITER: usize = 300;
const KMEANS_TOL: f64 = 1e-6;

/// `K` learnable cluster centers in the concatenated embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    #[serde(skip)]
    pub centers: Matrix,
    pub alpha: f64,
    pub update_interval: usize,
    pub initialized: bool,
}

impl PrototypeSet {
    pub fn uninitialized(k: usize, dim: usize, alpha: f64, update_interval: usize) -> Self {
        Self {
            centers: Matrix::zeros((k, dim)),
            alpha,
            update_interval,
            initialized: false,
        }
    }

    pub fn num_prototypes(&self) -> usize {
        self.centers.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct KMeans {
    pub centroids: Matrix,
    pub assignment: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    /// Fewer distinct points than clusters; some centroids are duplicates.
    pub degenerate: bool,
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assign(h: &Matrix, centroids: &Matrix) -> (Vec<usize>, f64) {
    let mut objective = 0.0;
    let assignment = h
        .rows()
        .into_iter()
        .map(|row| {
            let (best, d) = centroids
                .rows()
                .into_iter()
                .map(|c| sq_dist(row, c))
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (j, d)| if d < acc.1 { (j, d) } else { acc });
            objective += d;
            best
        })
        .collect();
    (assignment, objective)
}

/// Lloyd's algorithm with k-means++ seeding.
pub fn kmeans<R: Rng>(h: &Matrix, k: usize, rng: &mut R) -> Result<KMeans> {
    let (n, dim) = h.dim();
    if k == 0 {
        return Err(Error::InvalidArgument("k-means needs at least one cluster".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("k-means with K={k} > N={n}")));
    }
    let mut centroids = Matrix::zeros((k, dim));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&h.row(first));
    let mut nearest: Vec<f64> = h.rows().into_iter().map(|r| sq_dist(r, h.row(first))).collect();
    let mut degenerate = false;
    for j in 1..k {
        let pick = match WeightedIndex::new(&nearest) {
            Ok(dist) => dist.sample(rng),
            Err(_) => {
                degenerate = true;
                first
            }
        };
        centroids.row_mut(j).assign(&h.row(pick));
        for (i, row) in h.rows().into_iter().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(row, h.row(pick)));
        }
    }

    let (mut assignment, mut objective) = assign(h, &centroids);
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let mut sums = Matrix::zeros((k, dim));
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            let mut s = sums.row_mut(c);
            s += &h.row(i);
            counts[c] += 1;
        }
        for j in 0..k {
            // empty clusters keep their previous centroid
            if counts[j] > 0 {
                let mean = &sums.row(j) / counts[j] as f64;
                centroids.row_mut(j).assign(&mean);
            }
        }
        let (next, next_obj) = assign(h, &centroids);
        let rel = if objective > 0.0 {
            (objective - next_obj).abs() / objective
        } else {
            0.0
        };
        assignment = next;
        objective = next_obj;
        if rel < KMEANS_TOL {
            break;
        }
    }
    Ok(KMeans {
        centroids,
        assignment,
        objective,
        iterations,
        degenerate,
    })
}

/// Prototypes initialized at k-means centroids of `h`.
pub fn kmeans_init<R: Rng>(
    h: &Matrix,
    k: usize,
    alpha: f64,
    update_interval: usize,
    rng: &mut R,
) -> Result<(PrototypeSet, KMeans)> {
    let km = kmeans(h, k, rng)?;
    if km.degenerate {
        log::warn!("k-means: fewer distinct embeddings than K={k}; duplicate prototypes");
    }
    let set = PrototypeSet {
        centers: km.centroids.clone(),
        alpha,
        update_interval,
        initialized: true,
    };
    Ok((set, km))
}

pub fn soft_assignment(h: &Matrix, protos: &PrototypeSet) -> Result<Matrix> {
    if !protos.initialized {
        return Err(Error::UninitializedPrototypes);
    }
    if h.ncols() != protos.centers.ncols() {
        return Err(Error::shape("soft assignment", protos.centers.ncols(), h.ncols()));
    }
    let mut tape = Tape::new();
    let hv = tape.leaf(h.clone());
    let cv = tape.leaf(protos.centers.clone());
    let q = tape.student_t_assign(hv, cv, protos.alpha);
    Ok(tape.value(q).clone())
}

/// Sharpened self-training target `p_ij ∝ q_ij² / f_j` with soft frequencies `f_j = Σ_i q_ij`.
pub fn target_distribution(q: &Matrix) -> Result<Matrix> {
    let freq = q.sum_axis(ndarray::Axis(0));
    if let Some((j, _)) = freq.iter().enumerate().find(|(_, &f)| !(f > 0.0)) {
        return Err(Error::EmptySoftCluster(j));
    }
    let mut p = q.mapv(|v| v * v);
    for mut row in p.rows_mut() {
        for (v, f) in row.iter_mut().zip(freq.iter()) {
            *v /= f;
        }
        let total: f64 = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    Ok(p)
}

/// `KL(P ‖ Q) = Σ_i Σ_j p_ij log(p_ij / q_ij)` with `0 · log(0/q) = 0`.
pub fn loss_cluster(p: &Matrix, q: &Matrix) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::shape("cluster loss", format!("{:?}", p.dim()), format!("{:?}", q.dim())));
    }
    for ((i, j), &pv) in p.indexed_iter() {
        if pv > 0.0 && q[[i, j]] <= 0.0 {
            return Err(Error::SupportViolation { row: i, col: j });
        }
    }
    let mut tape = Tape::new();
    let qv = tape.leaf(q.clone());
    let l = tape.kl_div(Rc::new(p.clone()), qv, KL_FLOOR);
    Ok(tape.scalar_value(l))
}
