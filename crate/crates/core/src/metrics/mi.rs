//! Mutual information between k-means cluster ids and class labels.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{ClassPartition, LayerView};
use crate::error::{Error, Result};
use crate::metrics::cca::balanced_sample;
use crate::seed;

pub const MAX_ITER: usize = 300;
pub const TOL: f64 = 1e-6;

/// Lloyd's k-means on row-major points.
#[derive(Debug, Clone)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KMeans {
    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn assign(&self, p: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (c, centroid) in self.centroids.iter().enumerate() {
            let d = sq_dist(p, centroid);
            if d < best.1 {
                best = (c, d);
            }
        }
        best.0
    }

    fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
        let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
        while centroids.len() < k {
            let total: f64 = dist.iter().sum();
            let next = if total > 0.0 {
                let mut target = rng.random::<f64>() * total;
                let mut pick = points.len() - 1;
                for (i, &d) in dist.iter().enumerate() {
                    if target < d {
                        pick = i;
                        break;
                    }
                    target -= d;
                }
                pick
            } else {
                rng.random_range(0..points.len())
            };
            centroids.push(points[next].clone());
            for (d, p) in dist.iter_mut().zip(points) {
                *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
            }
        }
        centroids
    }

    /// Fits `k` clusters with k-means++ seeding. Stops after [`MAX_ITER`]
    /// iterations or when the total squared centroid shift falls below
    /// [`TOL`] times the mean per-feature variance of the data.
    ///
    /// Returns the fit and the sizes of the final clusters.
    pub fn fit(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (KMeans, Vec<usize>) {
        let d = points[0].len();
        let n = points.len() as f64;
        let mut var = 0.0;
        for j in 0..d {
            let m = points.iter().map(|p| p[j]).sum::<f64>() / n;
            var += points.iter().map(|p| (p[j] - m).powi(2)).sum::<f64>() / n;
        }
        let tol = TOL * var / d as f64;

        let mut model = KMeans {
            centroids: Self::plus_plus_init(points, k, rng),
        };
        let mut assignment = vec![0usize; points.len()];
        for _ in 0..MAX_ITER {
            for (a, p) in assignment.iter_mut().zip(points) {
                *a = model.assign(p);
            }
            let mut sums = vec![vec![0.0; d]; k];
            let mut counts = vec![0usize; k];
            for (&a, p) in assignment.iter().zip(points) {
                counts[a] += 1;
                for (s, v) in sums[a].iter_mut().zip(p) {
                    *s += v;
                }
            }
            let mut shift = 0.0;
            for c in 0..k {
                if counts[c] == 0 {
                    continue;
                }
                let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                shift += sq_dist(&new, &model.centroids[c]);
                model.centroids[c] = new;
            }
            if shift <= tol {
                break;
            }
        }
        let mut sizes = vec![0usize; k];
        for p in points {
            sizes[model.assign(p)] += 1;
        }
        (model, sizes)
    }
}

/// Discrete mutual information (natural log) between two label sequences.
pub fn mutual_information(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut joint = vec![0usize; ka * kb];
    let mut pa = vec![0usize; ka];
    let mut pb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1;
        pa[x] += 1;
        pb[y] += 1;
    }
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let c = joint[x * kb + y];
            if c > 0 {
                let pxy = c as f64 / n;
                mi += pxy * (pxy / (pa[x] as f64 / n * pb[y] as f64 / n)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Held-out mutual information between k-means clusters and labels.
///
/// A class-balanced sample is split 9:1; k-means with `n_clusters` runs on the
/// larger part and the held-out tenth is assigned to the nearest centroid.
pub fn mi_kmeans(view: &LayerView, part: &ClassPartition, n_clusters: usize, seed: u64) -> Result<f64> {
    if n_clusters == 0 {
        return Err(Error::InvalidArgument("n_clusters must be positive".into()));
    }
    if let Some((y, _)) = part.iter().find(|(_, g)| g.is_empty()) {
        return Err(Error::EmptyClass { class: y });
    }
    let sample = balanced_sample(part, seed, "mi/balance");
    if sample.len() < 10 * n_clusters {
        return Err(Error::InvalidDataset(format!(
            "k-means mutual information needs at least {} class-balanced rows, have {}",
            10 * n_clusters,
            sample.len()
        )));
    }
    let n_test = sample.len() / 10;
    let (test, train) = sample.split_at(n_test);
    let rows = |idx: &[usize]| -> Vec<Vec<f64>> {
        idx.iter()
            .map(|&i| view.vectors.row(i).iter().copied().collect())
            .collect()
    };
    let train_pts = rows(train);
    let mut fitted = None;
    for attempt in 0..2 {
        let mut rng = seed::rng_for(seed, &format!("mi/kmeans{attempt}"));
        let (model, sizes) = KMeans::fit(&train_pts, n_clusters, &mut rng);
        match sizes.iter().position(|&s| s == 0) {
            None => {
                fitted = Some(model);
                break;
            }
            Some(c) if attempt == 1 => return Err(Error::DegenerateClustering { cluster: c }),
            Some(_) => {}
        }
    }
    let model = fitted.expect("loop returns or fits");
    let clusters: Vec<usize> = rows(test).iter().map(|p| model.assign(p)).collect();
    let labels: Vec<usize> = test.iter().map(|&i| view.labels[i] as usize).collect();
    Ok(mutual_information(&clusters, &labels))
}
