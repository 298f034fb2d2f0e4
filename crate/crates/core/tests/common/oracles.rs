//! Independent re-computations used as test oracles.

/// Minimal-cardinality keep set by exhaustive subset search, in integer
/// arithmetic. `alpha = num / 16`.
pub fn brute_force_keep(row: &[u32], num: u32) -> Vec<usize> {
    let total: u64 = row.iter().map(|&v| u64::from(v)).sum();
    if total == 0 {
        return Vec::new();
    }
    let n = row.len();
    let mut best = usize::MAX;
    for subset in 0u32..(1 << n) {
        let sum: u64 = (0..n).filter(|&i| subset >> i & 1 == 1).map(|i| u64::from(row[i])).sum();
        if 16 * sum >= u64::from(num) * total {
            best = best.min(subset.count_ones() as usize);
        }
    }
    let mut sorted: Vec<u32> = row.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let threshold = sorted[best - 1];
    (0..n).filter(|&i| row[i] > 0 && row[i] >= threshold).collect()
}

/// ACC, BWT and AIA straight from a lower-triangular matrix.
pub struct MetricOracle {
    pub r: Vec<Vec<f64>>,
}

impl MetricOracle {
    pub fn acc(&self, t: usize) -> f64 {
        let mut s = 0.0;
        for i in 0..t {
            s += self.r[t - 1][i];
        }
        s / t as f64
    }

    /// Average drop from the diagonal to the final row.
    pub fn bwt(&self, t: usize) -> f64 {
        let diffs: Vec<f64> = (0..t - 1).map(|i| self.r[i][i] - self.r[t - 1][i]).collect();
        diffs.iter().sum::<f64>() / diffs.len() as f64
    }

    pub fn aia(&self, t: usize) -> f64 {
        let mut s = 0.0;
        for k in 1..=t {
            s += self.acc(k);
        }
        s / t as f64
    }
}

pub fn random_matrix(rng: &mut impl rand::Rng, t: usize) -> Vec<Vec<f64>> {
    (1..=t).map(|k| (0..k).map(|_| rng.random_range(0.0..=1.0)).collect()).collect()
}

/// Max absolute deviation of the library metrics from the oracle over
/// `count` random matrices of up to twelve tasks.
pub fn metric_deviation(count: usize, seed: u64) -> f64 {
    use cps::metrics::{acc, aia, bwt, EvalMatrix};
    use rand::Rng;
    let mut rng = cps::rng::seeded(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let t = rng.random_range(1..=12);
        let rows = random_matrix(&mut rng, t);
        let oracle = MetricOracle { r: rows.clone() };
        let m = EvalMatrix::from_rows(rows).unwrap();
        for k in 1..=t {
            worst = worst.max((acc(&m, k).unwrap() - oracle.acc(k)).abs());
            worst = worst.max((aia(&m, k).unwrap() - oracle.aia(k)).abs());
            if k >= 2 {
                worst = worst.max((bwt(&m, k).unwrap() - oracle.bwt(k)).abs());
            }
        }
    }
    worst
}

/// Accuracy history of a ten-task run (percent) whose mean is 98.539.
pub const AIA_HISTORY: [f64; 10] = [98.2, 98.8, 98.67, 98.5, 98.48, 98.6, 98.63, 98.63, 98.5, 98.38];
