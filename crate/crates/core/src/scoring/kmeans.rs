//! Spherical k-means for cluster table construction.
//!
//! Points and centers are compared by cosine, so inputs are normalized once
//! and the objective is the mean of `1 - cos(point, nearest center)`.
//! Seeding is k-means++ on the same distance; iteration is Lloyd's: assign,
//! then recenter on the normalized cluster mean. Empty clusters are reseeded
//! from the point currently farthest from its center. All randomness comes
//! from the caller's seed, so runs are reproducible bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{dot, Matrix};
use crate::error::{Error, Result};

pub struct KmeansTrace {
    pub centers: Matrix,
    /// Objective after each completed iteration, seeding included as entry 0.
    pub objectives: Vec<f64>,
}

/// Mean distance `1 - cos` from each point to its nearest center.
pub fn kmeans_objective(points: &Matrix, centers: &Matrix) -> f64 {
    let mut total = 0.0f64;
    for i in 0..points.rows() {
        let p = unit_of(points.row(i));
        let mut best = f64::NEG_INFINITY;
        for c in 0..centers.rows() {
            let sim = dot(&p, &unit_of(centers.row(c))) as f64;
            if sim > best {
                best = sim;
            }
        }
        total += 1.0 - best;
    }
    total / points.rows().max(1) as f64
}

fn unit_of(v: &[f32]) -> Vec<f32> {
    let n = dot(v, v).sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

pub fn kmeans(points: &Matrix, k: usize, seed: u64, max_iters: usize) -> Result<Matrix> {
    kmeans_trace(points, k, seed, max_iters).map(|t| t.centers)
}

pub fn kmeans_trace(points: &Matrix, k: usize, seed: u64, max_iters: usize) -> Result<KmeansTrace> {
    let n = points.rows();
    let d = points.cols();
    if k == 0 {
        return Err(Error::InvalidConfig("k-means needs k >= 1".into()));
    }
    if n < k {
        return Err(Error::TooFewPoints { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut unit = Matrix::zeros(n, d);
    for i in 0..n {
        unit.row_mut(i).copy_from_slice(&unit_of(points.row(i)));
    }

    // k-means++ seeding on 1 - cos.
    let mut centers = Matrix::zeros(k, d);
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from_slice(unit.row(first));
    let mut min_dist = vec![0.0f64; n];
    for c in 1..k {
        let mut total = 0.0f64;
        for i in 0..n {
            let mut best = f64::NEG_INFINITY;
            for j in 0..c {
                let sim = dot(unit.row(i), centers.row(j)) as f64;
                if sim > best {
                    best = sim;
                }
            }
            min_dist[i] = (1.0 - best).max(0.0);
            total += min_dist[i];
        }
        let pick = if total > 0.0 {
            let target = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in min_dist.iter().enumerate() {
                acc += w;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(unit.row(pick));
    }

    let mut assign = vec![0usize; n];
    let mut objectives = vec![kmeans_objective_unit(&unit, &centers)];
    for _ in 0..max_iters {
        // Assignment: nearest center, ties to the lowest index.
        let mut changed = false;
        for i in 0..n {
            let mut best = 0usize;
            let mut best_sim = f32::NEG_INFINITY;
            for c in 0..k {
                let sim = dot(unit.row(i), centers.row(c));
                if sim > best_sim {
                    best_sim = sim;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed && objectives.len() > 1 {
            break;
        }

        // Update: normalized mean per cluster.
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assign[i];
            counts[c] += 1;
            let row = sums.row_mut(c);
            for (s, &v) in row.iter_mut().zip(unit.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let normed = unit_of(sums.row(c));
                if normed.iter().any(|&v| v != 0.0) {
                    centers.row_mut(c).copy_from_slice(&normed);
                }
                // A cancelled (zero) mean keeps the previous center.
            }
        }
        // Reseed each empty cluster from the globally worst-fit point.
        for c in 0..k {
            if counts[c] == 0 {
                let mut worst = 0usize;
                let mut worst_sim = f32::INFINITY;
                for i in 0..n {
                    let sim = dot(unit.row(i), centers.row(assign[i]));
                    if sim < worst_sim {
                        worst_sim = sim;
                        worst = i;
                    }
                }
                centers.row_mut(c).copy_from_slice(unit.row(worst));
                assign[worst] = c;
            }
        }
        objectives.push(kmeans_objective_unit(&unit, &centers));
    }
    Ok(KmeansTrace { centers, objectives })
}

/// Objective over already-normalized points; avoids renormalizing per call.
fn kmeans_objective_unit(unit: &Matrix, centers: &Matrix) -> f64 {
    let mut total = 0.0f64;
    for i in 0..unit.rows() {
        let mut best = f64::NEG_INFINITY;
        for c in 0..centers.rows() {
            let sim = dot(unit.row(i), centers.row(c)) as f64;
            if sim > best {
                best = sim;
            }
        }
        total += 1.0 - best;
    }
    total / unit.rows().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn blob_data(seed: u64, per_blob: usize, dirs: &[[f32; 4]], noise: f32) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        for dir in dirs {
            for _ in 0..per_blob {
                for (j, &v) in dir.iter().enumerate() {
                    let eps: f32 = StandardNormal.sample(&mut rng);
                    data.push(v + noise * eps + j as f32 * 0.0);
                }
            }
        }
        Matrix::new(per_blob * dirs.len(), 4, data).unwrap()
    }

    #[test]
    fn rejects_degenerate_arguments() {
        let pts = Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(kmeans(&pts, 0, 1, 10).is_err());
        assert!(matches!(kmeans(&pts, 3, 1, 10), Err(Error::TooFewPoints { k: 3, n: 2 })));
    }

    #[test]
    fn one_cluster_is_normalized_mean() {
        let pts = Matrix::new(2, 2, vec![2.0, 0.0, 0.0, 2.0]).unwrap();
        let centers = kmeans(&pts, 1, 7, 20).unwrap();
        let inv = 0.5f32.sqrt();
        assert!((centers.row(0)[0] - inv).abs() < 1e-6);
        assert!((centers.row(0)[1] - inv).abs() < 1e-6);
    }

    #[test]
    fn k_equal_n_reaches_zero_objective() {
        let pts =
            Matrix::new(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let trace = kmeans_trace(&pts, 3, 3, 50).unwrap();
        assert!(trace.objectives.last().unwrap() < &1e-9);
    }

    #[test]
    fn recovers_separated_blobs() {
        let dirs = [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ];
        let pts = blob_data(5, 40, &dirs, 0.05);
        let centers = kmeans(&pts, 3, 11, 100).unwrap();
        // Each direction should own exactly one center with high cosine.
        let mut taken = [false; 3];
        for c in 0..3 {
            let (best, sim) = dirs
                .iter()
                .enumerate()
                .map(|(i, d)| (i, dot(centers.row(c), d)))
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            assert!(sim > 0.99, "center {c} cos {sim}");
            assert!(!taken[best], "direction {best} claimed twice");
            taken[best] = true;
        }
        assert!(kmeans_objective(&pts, &centers) < 0.01);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let pts = blob_data(9, 30, &[[1.0, 0.2, 0.0, 0.0], [0.0, 1.0, 0.3, 0.0]], 0.2);
        let a = kmeans(&pts, 4, 123, 50).unwrap();
        let b = kmeans(&pts, 4, 123, 50).unwrap();
        let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn objective_never_increases() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let n = 80;
            let d = 6;
            let data: Vec<f32> =
                (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let pts = Matrix::new(n, d, data).unwrap();
            let trace = kmeans_trace(&pts, 5, seed, 40).unwrap();
            for w in trace.objectives.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-9,
                    "seed {seed}: objective rose {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn centers_are_unit_norm() {
        let pts = blob_data(2, 25, &[[3.0, 1.0, 0.0, 0.0], [0.0, 0.0, 5.0, 1.0]], 0.3);
        let centers = kmeans(&pts, 2, 8, 30).unwrap();
        for c in 0..2 {
            let n = dot(centers.row(c), centers.row(c)).sqrt();
            assert!((n - 1.0).abs() < 1e-5, "center {c} norm {n}");
        }
    }
}
