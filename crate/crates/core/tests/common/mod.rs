//! Naive reference implementations and random instance builders shared by the
//! integration tests.
#![allow(dead_code)]

use layer_specialty::LayerView;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| gaussian(rng))
}

/// Random orthogonal matrix from the QR factors of a Gaussian matrix.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    gaussian_matrix(rng, d, d).qr().q()
}

/// Labels `0..K` with the given class sizes, classes laid out in order.
pub fn labels_for(sizes: &[usize]) -> Vec<u32> {
    sizes
        .iter()
        .enumerate()
        .flat_map(|(y, &n)| std::iter::repeat_n(y as u32, n))
        .collect()
}

/// Gaussian rows with a random offset per class.
pub fn random_view(rng: &mut ChaCha8Rng, sizes: &[usize], d: usize) -> LayerView {
    let k = sizes.len();
    let offsets = gaussian_matrix(rng, k, d) * 2.0;
    let labels = labels_for(sizes);
    let m = DMatrix::from_fn(labels.len(), d, |i, j| offsets[(labels[i] as usize, j)] + gaussian(rng));
    LayerView::new(1, m, labels, k).unwrap()
}

/// Random small instance: `2 <= K <= 3`, `1 <= D <= 5`, `N <= 50`, every class >= 2 rows.
pub fn small_instance(rng: &mut ChaCha8Rng) -> LayerView {
    let k = rng.random_range(2..=3);
    let d = rng.random_range(1..=5);
    let budget = 50 / k;
    let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(2..=budget)).collect();
    random_view(rng, &sizes, d)
}

fn rows_of(view: &LayerView, y: u32) -> Vec<Vec<f64>> {
    (0..view.n_rows())
        .filter(|&i| view.labels[i] == y)
        .map(|i| view.vectors.row(i).iter().copied().collect())
        .collect()
}

fn mean(rows: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            m[j] += r[j];
        }
    }
    m.iter().map(|v| v / rows.len() as f64).collect()
}

/// One-sided Jacobi SVD: `(U, s, V)` with `m = U diag(s) V^T`, thin in the
/// column dimension. Slow but simple and accurate for rank-deficient input.
pub fn jacobi_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(cols, cols);
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = a.column(p).norm_squared();
                let beta: f64 = a.column(q).norm_squared();
                let gamma: f64 = a.column(p).dot(&a.column(q));
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (x, y) = (a[(i, p)], a[(i, q)]);
                    a[(i, p)] = c * x - s * y;
                    a[(i, q)] = s * x + c * y;
                }
                for i in 0..cols {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sv: Vec<f64> = (0..cols).map(|j| a.column(j).norm()).collect();
    let u = DMatrix::from_fn(rows, cols, |i, j| if sv[j] > 0.0 { a[(i, j)] / sv[j] } else { 0.0 });
    (u, sv, v)
}

/// Dense SVD pseudo-inverse with a relative singular value cutoff.
pub fn svd_pinv(m: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let (u, sv, v) = jacobi_svd(m);
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (i, &s) in sv.iter().enumerate() {
        if s > rcond * smax {
            out += v.column(i) * u.column(i).transpose() / s;
        }
    }
    out
}

/// `trace(A B)` by explicit summation.
pub fn naive_trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut t = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            t += a[(i, k)] * b[(k, i)];
        }
    }
    t
}

/// Within and between scatter by double loops over samples and coordinates.
/// `strict` weights every sample equally and centres on the global mean.
pub fn naive_scatter(view: &LayerView, strict: bool) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = view.dim();
    let k = view.n_classes;
    let n = view.n_rows() as f64;
    let mut sw = DMatrix::zeros(d, d);
    let mut means = Vec::new();
    for y in 0..k as u32 {
        let rows = rows_of(view, y);
        let mu = mean(&rows, d);
        let w = if strict { 1.0 / n } else { 1.0 / (k as f64 * rows.len() as f64) };
        for r in &rows {
            for a in 0..d {
                for b in 0..d {
                    sw[(a, b)] += w * (r[a] - mu[a]) * (r[b] - mu[b]);
                }
            }
        }
        means.push(mu);
    }
    let centre = if strict {
        let all: Vec<Vec<f64>> = (0..view.n_rows()).map(|i| view.vectors.row(i).iter().copied().collect()).collect();
        mean(&all, d)
    } else {
        mean(&means, d)
    };
    let mut sb = DMatrix::zeros(d, d);
    for mu in &means {
        for a in 0..d {
            for b in 0..d {
                sb[(a, b)] += (mu[a] - centre[a]) * (mu[b] - centre[b]) / k as f64;
            }
        }
    }
    (sw, sb)
}

pub fn naive_nu(view: &LayerView, strict: bool) -> f64 {
    let (sw, sb) = naive_scatter(view, strict);
    if sw.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    if sb.iter().all(|&v| v == 0.0) {
        return f64::INFINITY;
    }
    naive_trace_product(&sw, &svd_pinv(&sb, 1e-10)) / view.n_classes as f64
}

/// Two-pass sample correlation.
pub fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best + 1
}
