//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use hetlb::model::{bump_surface, Bump, RateFunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A smooth, Lipschitz rate surface: a positive base plus one to four Gaussian bumps.
pub fn random_bumps(seed: u64) -> RateFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps = (0..rng.gen_range(1..=4))
        .map(|_| Bump {
            amplitude: rng.gen_range(0.2..2.0),
            x: rng.gen_range(0.0..1.0),
            y: rng.gen_range(0.0..1.0),
            width: rng.gen_range(0.1..0.4),
        })
        .collect();
    bump_surface(rng.gen_range(0.5..1.5), bumps).unwrap().into()
}

/// Optimal min-max load by brute force over the dual: by the minimax theorem
/// `min_p max_m sum_h a[h][m] p[h][m] = max_{y in simplex} sum_h min_m a[h][m] y[m]`
/// with `a = lambda / (mu * width)` over compatible cells. The dual is searched on a
/// grid of the given step; supports up to three server types.
pub fn dual_grid_minimax(lambda_h: &[f64], mu: &[Vec<f64>], widths: &[f64], step: f64) -> f64 {
    let m_count = widths.len();
    assert!((1..=3).contains(&m_count));
    let a: Vec<Vec<Option<f64>>> = lambda_h
        .iter()
        .zip(mu)
        .map(|(l, row)| {
            row.iter()
                .zip(widths)
                .map(|(u, w)| (*u > 0.0).then(|| l / (u * w)))
                .collect()
        })
        .collect();
    let value = |y: &[f64]| -> f64 {
        a.iter()
            .map(|row| {
                row.iter()
                    .zip(y)
                    .filter_map(|(c, y)| c.map(|c| c * y))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum()
    };
    let k = (1.0 / step).round() as usize;
    let mut best = f64::NEG_INFINITY;
    match m_count {
        1 => best = value(&[1.0]),
        2 => {
            for i in 0..=k {
                let y1 = i as f64 / k as f64;
                best = best.max(value(&[y1, 1.0 - y1]));
            }
        }
        _ => {
            for i in 0..=k {
                for j in 0..=(k - i) {
                    let (y1, y2) = (i as f64 / k as f64, j as f64 / k as f64);
                    best = best.max(value(&[y1, y2, (1.0 - y1 - y2).max(0.0)]));
                }
            }
        }
    }
    best
}

/// Random `(lambda_h, mu, widths)` with `H, M <= 3`, some incompatible cells and every
/// row compatible somewhere. `lambda` is scaled so that `sum_h max_m a[h][m]` lies in
/// `[0.3, 0.95]`, which keeps the dual grid error of step `1e-3` below `2e-3`.
pub fn random_lp_instance<R: Rng>(rng: &mut R) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let h_count = rng.gen_range(1..=3);
    let m_count = rng.gen_range(1..=3);
    let mut cuts: Vec<f64> = (0..m_count - 1).map(|_| rng.gen_range(0.0..1.0)).collect();
    cuts.sort_by(f64::total_cmp);
    let mut breaks = vec![0.0];
    breaks.extend(cuts);
    breaks.push(1.0);
    // Keep every width at least 0.1 by blending with the uniform partition.
    let widths: Vec<f64> = breaks
        .windows(2)
        .map(|w| 0.5 * (w[1] - w[0]) + 0.5 / m_count as f64)
        .collect();
    let mu: Vec<Vec<f64>> = (0..h_count)
        .map(|_| {
            let mut row: Vec<f64> = (0..m_count)
                .map(|_| if rng.gen_bool(0.25) { 0.0 } else { rng.gen_range(0.5..3.0) })
                .collect();
            if row.iter().all(|u| *u == 0.0) {
                row[rng.gen_range(0..m_count)] = rng.gen_range(0.5..3.0);
            }
            row
        })
        .collect();
    let raw: Vec<f64> = (0..h_count).map(|_| rng.gen_range(0.05..1.0)).collect();
    let spread: f64 = raw
        .iter()
        .zip(&mu)
        .map(|(l, row)| {
            row.iter()
                .zip(&widths)
                .filter(|(u, _)| **u > 0.0)
                .map(|(u, w)| l / (u * w))
                .fold(0.0, f64::max)
        })
        .sum();
    let scale = rng.gen_range(0.3..0.95) / spread;
    (raw.iter().map(|l| l * scale).collect(), mu, widths)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Asymptotic two-sample KS rejection threshold at level `alpha`.
pub fn ks_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n * m) as f64).sqrt()
}
