//! Lloyd's k-means with greedy k-means++ seeding, used once per residual level.

use rand::Rng;

/// Output of one k-means run over `n` points of dimension `dim`.
#[derive(Debug, Clone)]
pub(crate) struct KMeansFit {
    pub centroids: Vec<f64>,
    pub iterations: usize,
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest row of `centroids` (k × dim), lowest index on ties.
pub(crate) fn nearest(centroids: &[f64], dim: usize, point: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_distance(point, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    (best, best_d)
}

fn sample_weighted(weights: &[f64], total: f64, rng: &mut impl Rng) -> usize {
    if total <= 0.0 {
        return rng.random_range(0..weights.len());
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if acc > target {
            return i;
        }
    }
    // rounding left `target` beyond the running sum; take the last positive weight
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1)
}

/// Greedy k-means++: each new center is the best of `2 + ln k` D²-sampled candidates. With
/// `zero_first` the first center is the origin instead of a sampled point.
fn greedy_plus_plus(points: &[f64], dim: usize, k: usize, zero_first: bool, rng: &mut impl Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = Vec::with_capacity(k * dim);
    if zero_first {
        centroids.resize(dim, 0.0);
    } else {
        let first = rng.random_range(0..n);
        centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    }
    let mut dist: Vec<f64> = points
        .chunks_exact(dim)
        .map(|p| squared_distance(p, &centroids[..dim]))
        .collect();
    let mut potential: f64 = dist.iter().sum();

    for _ in 1..k {
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for _ in 0..trials {
            let cand = sample_weighted(&dist, potential, rng);
            let c = &points[cand * dim..(cand + 1) * dim];
            let updated: Vec<f64> = points
                .chunks_exact(dim)
                .zip(&dist)
                .map(|(p, d)| d.min(squared_distance(p, c)))
                .collect();
            let pot: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(_, bp, _)| pot < *bp) {
                best = Some((cand, pot, updated));
            }
        }
        let (cand, pot, updated) = best.expect("at least one trial");
        centroids.extend_from_slice(&points[cand * dim..(cand + 1) * dim]);
        dist = updated;
        potential = pot;
    }
    centroids
}

/// Runs Lloyd iterations until the relative inertia improvement drops below `tol`. With
/// `zero_anchor` centroid 0 is pinned to the origin and never moves or gets repaired, so no
/// point ends up farther from its centroid than from the origin.
pub(crate) fn lloyd(
    points: &[f64],
    dim: usize,
    k: usize,
    max_iters: usize,
    tol: f64,
    zero_anchor: bool,
    rng: &mut impl Rng,
) -> KMeansFit {
    let n = points.len() / dim;
    let first_free = usize::from(zero_anchor);
    let mut centroids = greedy_plus_plus(points, dim, k, zero_anchor, rng);
    let mut assign = vec![0usize; n];
    let mut dists = vec![0.0f64; n];
    let mut prev_inertia = f64::INFINITY;
    let mut iterations = 0;

    for _ in 0..max_iters.max(1) {
        iterations += 1;
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let (j, d) = nearest(&centroids, dim, p);
            assign[i] = j;
            dists[i] = d;
        }
        let inertia: f64 = dists.iter().sum();

        let mut counts = vec![0usize; k];
        for &a in &assign {
            counts[a] += 1;
        }
        // empty clusters take the point farthest from its own centroid
        for j in first_free..k {
            if counts[j] > 0 {
                continue;
            }
            let mut far = None;
            let mut far_d = -1.0;
            for i in 0..n {
                if counts[assign[i]] > 1 && dists[i] > far_d {
                    far = Some(i);
                    far_d = dists[i];
                }
            }
            if let Some(i) = far {
                counts[assign[i]] -= 1;
                assign[i] = j;
                counts[j] = 1;
                dists[i] = 0.0;
            }
        }

        let mut sums = vec![0.0f64; k * dim];
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let row = &mut sums[assign[i] * dim..(assign[i] + 1) * dim];
            for (s, x) in row.iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in first_free..k {
            if counts[j] == 0 {
                continue;
            }
            let inv = 1.0 / counts[j] as f64;
            for t in 0..dim {
                centroids[j * dim + t] = sums[j * dim + t] * inv;
            }
        }

        let converged = prev_inertia.is_finite()
            && (prev_inertia <= 0.0 || (prev_inertia - inertia) / prev_inertia < tol);
        prev_inertia = inertia;
        if converged {
            break;
        }
    }
    KMeansFit {
        centroids,
        iterations,
    }
}
