//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the library's numerics.

#![allow(dead_code)]

use std::collections::BTreeSet;

/// Columns centered and scaled to unit sample variance; constant columns
/// become zero.
pub fn standardize_columns(x: &[Vec<f64>], n: usize, p: usize) -> Vec<Vec<f64>> {
    (0..p)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| x[i][j]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let sd = var.sqrt();
            if sd <= f64::EPSILON * mean.abs().max(1.0) * 4.0 {
                vec![0.0; n]
            } else {
                col.iter().map(|v| (v - mean) / sd).collect()
            }
        })
        .collect()
}

/// Ward merges by full rescans of every active pair, with the cost computed
/// from cluster centroids: `2 |A||B| / (|A|+|B|) ‖c_A − c_B‖²`. Ties go to
/// the lexicographically smallest `(a, b)`.
pub fn ward_oracle(columns: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let p = columns.len();
    let n = columns[0].len();
    let mut clusters: Vec<Option<Vec<usize>>> = (0..p).map(|j| Some(vec![j])).collect();
    let centroid = |members: &[usize]| -> Vec<f64> {
        (0..n)
            .map(|i| members.iter().map(|&j| columns[j][i]).sum::<f64>() / members.len() as f64)
            .collect()
    };
    let mut merges = Vec::new();
    for _ in 0..p - 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            let Some(ma) = &clusters[a] else { continue };
            for b in a + 1..clusters.len() {
                let Some(mb) = &clusters[b] else { continue };
                let (ca, cb) = (centroid(ma), centroid(mb));
                let d2: f64 = ca.iter().zip(&cb).map(|(u, v)| (u - v).powi(2)).sum();
                let (na, nb) = (ma.len() as f64, mb.len() as f64);
                let cost = 2.0 * na * nb / (na + nb) * d2;
                if best.is_none_or(|(c, _, _)| cost < c) {
                    best = Some((cost, a, b));
                }
            }
        }
        let (cost, a, b) = best.unwrap();
        let mut merged = clusters[a].take().unwrap();
        merged.extend(clusters[b].take().unwrap());
        clusters.push(Some(merged));
        merges.push((a, b, cost));
    }
    merges
}

/// `Γ((ν+1)/2) / (√(νπ) Γ(ν/2))` for integer `ν` by the two-step recursion.
fn t_density_constant(df: u32) -> f64 {
    let pi = std::f64::consts::PI;
    let mut ratio = if df % 2 == 1 { 1.0 / pi.sqrt() } else { pi.sqrt() / 2.0 };
    let mut nu = if df % 2 == 1 { 1 } else { 2 };
    while nu < df {
        ratio *= (nu as f64 + 1.0) / nu as f64;
        nu += 2;
    }
    ratio / (df as f64 * pi).sqrt()
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 50)
}

/// Student-t distribution function by quadrature of the density. The tail
/// beyond `|t|` is integrated after the substitution `x = 1/u`.
pub fn t_cdf_quadrature(t: f64, df: u32) -> f64 {
    let c = t_density_constant(df);
    let nu = df as f64;
    let density = move |x: f64| c * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0);
    let a = t.abs();
    // Upper tail mass P(T > a).
    let tail = if a <= 1.0 {
        0.5 - adaptive_simpson(&density, 0.0, a, 1e-14)
    } else {
        let g = |u: f64| if u == 0.0 { 0.0 } else { density(1.0 / u) / (u * u) };
        adaptive_simpson(&g, 0.0, 1.0 / a, 1e-14)
    };
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    let m = v.iter().sum::<f64>() / k;
    let ss = v.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    (m, (ss / (k - 1.0)).sqrt())
}

/// One-sided t-test p-value with the quadrature distribution function.
pub fn t_test_oracle(psi: &[f64]) -> f64 {
    let (m, s) = mean_sd(psi);
    if s == 0.0 {
        return if m > 0.0 { 0.0 } else { 1.0 };
    }
    let t = m / (s / (psi.len() as f64).sqrt());
    t_cdf_quadrature(-t, (psi.len() - 1) as u32)
}

/// `p_h` by enumerating, for every node, every node whose member set
/// contains it.
pub fn hierarchical_oracle(members: &[Vec<usize>], p_raw: &[f64]) -> Vec<f64> {
    let sets: Vec<BTreeSet<usize>> = members.iter().map(|m| m.iter().copied().collect()).collect();
    sets.iter()
        .map(|s| {
            sets.iter()
                .zip(p_raw)
                .filter(|(other, _)| s.is_subset(other))
                .map(|(_, &p)| p)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Selected node ids: `min(1, p · p_h) ≤ α`.
pub fn selection_oracle(p_h: &[f64], p: usize, alpha: f64) -> Vec<usize> {
    (0..p_h.len()).filter(|&i| (p as f64 * p_h[i]).min(1.0) <= alpha).collect()
}

/// AUC as the share of (positive, negative) pairs ranked correctly, ties
/// counting one half.
pub fn auc_oracle(scores: &[f64], truth: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !truth[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if truth[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// The allocation rule written out for the left child:
/// `a = 1: ψ_L + b (P − ψ_L − ψ_R) / 2`, otherwise
/// `P ψ_L / (ψ_L + ψ_R) (1 − b) + b (P − ψ_R)`.
pub fn allocation_oracle(parent: f64, l: f64, r: f64, a: bool, b: bool) -> f64 {
    let (a, b) = (a as u8 as f64, b as u8 as f64);
    if a == 1.0 {
        l + b * (parent - l - r) / 2.0
    } else {
        parent * l / (l + r) * (1.0 - b) + b * (parent - r)
    }
}

/// Solves a dense linear system by Gaussian elimination with partial
/// pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Ridge weights on standardized columns:
/// `(ZᵀZ + λI) w = Zᵀ(y − ȳ)`.
pub fn ridge_oracle(z: &[Vec<f64>], y: &[f64], lambda: f64) -> Vec<f64> {
    let p = z.len();
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let a: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            (0..p)
                .map(|j| z[i].iter().zip(&z[j]).map(|(u, v)| u * v).sum::<f64>() + if i == j { lambda } else { 0.0 })
                .collect()
        })
        .collect();
    let rhs: Vec<f64> = (0..p).map(|i| z[i].iter().zip(y).map(|(u, v)| u * (v - ybar)).sum()).collect();
    gauss_solve(a, rhs)
}

/// Gradient of `Σ log(1 + e^η) − y η + λ/2 ‖w‖²` in `(c, w)`.
pub fn logistic_gradient_oracle(z: &[Vec<f64>], y: &[f64], c: f64, w: &[f64], lambda: f64) -> Vec<f64> {
    let n = y.len();
    let mut g = vec![0.0; w.len() + 1];
    for i in 0..n {
        let eta = c + (0..w.len()).map(|j| z[j][i] * w[j]).sum::<f64>();
        let r = 1.0 / (1.0 + (-eta).exp()) - y[i];
        g[0] += r;
        for j in 0..w.len() {
            g[j + 1] += r * z[j][i];
        }
    }
    for j in 0..w.len() {
        g[j + 1] += lambda * w[j];
    }
    g
}

/// Mean squared error of a one-hidden-layer ReLU network with parameters
/// laid out as `w1` (column-major `p × h`), `b1`, `w2`, `b2`.
pub fn mlp_loss_oracle(rows: &[Vec<f64>], t: &[f64], params: &[f64], p: usize, h: usize) -> f64 {
    let w1 = |j: usize, k: usize| params[k * p + j];
    let b1 = &params[p * h..p * h + h];
    let w2 = &params[p * h + h..p * h + 2 * h];
    let b2 = params[p * h + 2 * h];
    let mut total = 0.0;
    for (row, &target) in rows.iter().zip(t) {
        let mut out = b2;
        for k in 0..h {
            let pre: f64 = b1[k] + (0..p).map(|j| row[j] * w1(j, k)).sum::<f64>();
            out += w2[k] * pre.max(0.0);
        }
        total += (out - target).powi(2);
    }
    total / rows.len() as f64
}

/// Tiny deterministic generator for test inputs (SplitMix64).
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform().max(1e-300);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Random binary merge sequence over `p` leaves with increasing heights.
pub fn random_merges(p: usize, rng: &mut SplitMix) -> Vec<(usize, usize, f64)> {
    let mut active: Vec<usize> = (0..p).collect();
    let mut merges = Vec::new();
    for step in 0..p - 1 {
        let i = rng.below(active.len());
        let a = active.swap_remove(i);
        let j = rng.below(active.len());
        let b = active.swap_remove(j);
        merges.push((a, b, (step + 1) as f64));
        active.push(p + step);
    }
    merges
}
