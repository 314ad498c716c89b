//! Brute-force reference implementations, written independently of the
//! library code they check.

#![allow(dead_code)]

use std::f64::consts::PI;

/// Midpoint Riemann sum of the piecewise-linear interpolant through
/// `(t, p)` points, `substeps` per interval.
pub fn riemann_energy(points: &[(f64, f64)], substeps: usize) -> f64 {
    let mut total = 0.0;
    for w in points.windows(2) {
        let ((t0, p0), (t1, p1)) = (w[0], w[1]);
        let h = (t1 - t0) / substeps as f64;
        let mut acc = 0.0;
        for k in 0..substeps {
            let frac = (k as f64 + 0.5) / substeps as f64;
            acc += p0 + (p1 - p0) * frac;
        }
        total += acc * h;
    }
    total
}

/// Kendall tau-b with tie counts taken from tie-group sizes.
pub fn kendall_pairs(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let mut c = 0i64;
    let mut d = 0i64;
    for i in 0..n {
        for j in 0..n {
            if i >= j {
                continue;
            }
            let s = (x[i] - x[j]) * (y[i] - y[j]);
            if s > 0.0 {
                c += 1;
            } else if s < 0.0 {
                d += 1;
            }
        }
    }
    let tie_pairs = |v: &[f64]| -> i64 {
        let mut sorted = v.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut total = 0i64;
        let mut run = 1i64;
        for k in 1..=sorted.len() {
            if k < sorted.len() && sorted[k] == sorted[k - 1] {
                run += 1;
            } else {
                total += run * (run - 1) / 2;
                run = 1;
            }
        }
        total
    };
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - tie_pairs(x)) as f64) * ((n0 - tie_pairs(y)) as f64);
    if denom == 0.0 {
        return None;
    }
    Some((c - d) as f64 / denom.sqrt())
}

/// Rank by counting: 1 + #smaller + (#equal - 1) / 2.
pub fn counted_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let less = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Pearson correlation straight from the definition.
pub fn pearson_def(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// Student-t CDF through the substitution `t = √ν · tan θ`, under which the
/// density becomes proportional to `cos^(ν-1) θ` on `(-π/2, π/2)`.
pub fn t_cdf(q: f64, df: f64) -> f64 {
    let f = |th: f64| th.cos().powf(df - 1.0);
    let steps = 4000;
    let total = simpson(f, -PI / 2.0, PI / 2.0, steps);
    let upper = (q / df.sqrt()).atan();
    simpson(f, -PI / 2.0, upper, steps) / total
}

pub fn normal_cdf(q: f64) -> f64 {
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    0.5 + simpson(phi, 0.0, q, 4000)
}

fn invert(cdf: impl Fn(f64) -> f64, p: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0e3);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Upper-tail quantile: `q` with `P(T > q) = tail`; infinite `df` is the
/// normal limit.
pub fn t_upper_quantile(tail: f64, df: f64) -> f64 {
    if df.is_infinite() {
        invert(normal_cdf, 1.0 - tail)
    } else {
        invert(|q| t_cdf(q, df), 1.0 - tail)
    }
}

/// The dispersion criterion evaluated with oracle quantiles.
pub fn criterion_holds(samples: &[f64], alpha: f64) -> bool {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = t_upper_quantile(alpha / 2.0, n - 1.0);
    t * var.sqrt() / (2.0 * alpha * mean) < n * (2.0 * n).sqrt()
}
