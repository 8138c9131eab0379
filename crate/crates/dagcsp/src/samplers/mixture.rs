//! Diagonal Gaussian mixtures fitted by k-means and EM, used as proposal
//! densities for the adaptive sampler. Works in unit-cube coordinates.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const VAR_FLOOR: f64 = 1e-4;
const EM_ITERS: usize = 20;
const KMEANS_ITERS: usize = 10;

#[derive(Debug, Clone)]
pub struct DiagonalMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<Vec<f64>>,
}

impl DiagonalMixture {
    /// Fit `k` components to `points` (rows in `[0,1]^d`).
    pub fn fit<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Self {
        let n = points.len();
        let d = points[0].len();
        let k = k.min(n).max(1);
        let mut means = kmeans_pp(points, k, rng);
        let mut assign = vec![0usize; n];
        for _ in 0..KMEANS_ITERS {
            for (p, a) in points.iter().zip(assign.iter_mut()) {
                *a = nearest(&means, p);
            }
            let mut sums = vec![vec![0.0; d]; k];
            let mut counts = vec![0usize; k];
            for (p, &a) in points.iter().zip(&assign) {
                counts[a] += 1;
                for j in 0..d {
                    sums[a][j] += p[j];
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    for j in 0..d {
                        means[c][j] = sums[c][j] / counts[c] as f64;
                    }
                }
            }
        }
        // initial diagonal variances and weights from the hard assignment
        let mut vars = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for j in 0..d {
                vars[a][j] += (p[j] - means[a][j]).powi(2);
            }
        }
        let mut weights = vec![0.0; k];
        for c in 0..k {
            weights[c] = (counts[c].max(1)) as f64;
            for j in 0..d {
                vars[c][j] = (vars[c][j] / counts[c].max(1) as f64).max(VAR_FLOOR);
            }
        }
        let tot: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= tot);

        let mut mix = DiagonalMixture { weights, means, vars };
        let mut resp = vec![vec![0.0; k]; n];
        for _ in 0..EM_ITERS {
            for (p, r) in points.iter().zip(resp.iter_mut()) {
                let logs: Vec<f64> = (0..k).map(|c| mix.log_component(c, p)).collect();
                let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for c in 0..k {
                    r[c] = (logs[c] - m).exp();
                    s += r[c];
                }
                r.iter_mut().for_each(|x| *x /= s);
            }
            for c in 0..k {
                let nk: f64 = resp.iter().map(|r| r[c]).sum();
                if nk < 1e-12 {
                    continue;
                }
                mix.weights[c] = nk / n as f64;
                for j in 0..d {
                    let mu = points.iter().zip(&resp).map(|(p, r)| r[c] * p[j]).sum::<f64>() / nk;
                    let var = points
                        .iter()
                        .zip(&resp)
                        .map(|(p, r)| r[c] * (p[j] - mu).powi(2))
                        .sum::<f64>()
                        / nk;
                    mix.means[c][j] = mu;
                    mix.vars[c][j] = var.max(VAR_FLOOR);
                }
            }
        }
        let tot: f64 = mix.weights.iter().sum();
        mix.weights.iter_mut().for_each(|w| *w /= tot);
        mix
    }

    fn log_component(&self, c: usize, p: &[f64]) -> f64 {
        let mut l = self.weights[c].max(1e-300).ln();
        for j in 0..p.len() {
            let v = self.vars[c][j];
            l -= 0.5 * ((p[j] - self.means[c][j]).powi(2) / v + v.ln());
        }
        l
    }

    /// Draw one point truncated to the unit cube.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut c = self.weights.len() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                c = k;
                break;
            }
        }
        (0..self.means[c].len())
            .map(|j| {
                let sd = self.vars[c][j].sqrt();
                for _ in 0..64 {
                    let e: f64 = StandardNormal.sample(rng);
                    let x = self.means[c][j] + sd * e;
                    if (0.0..=1.0).contains(&x) {
                        return x;
                    }
                }
                self.means[c][j].clamp(0.0, 1.0)
            })
            .collect()
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(means: &[Vec<f64>], p: &[f64]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (c, m) in means.iter().enumerate() {
        let d = dist2(m, p);
        if d < bd {
            bd = d;
            best = c;
        }
    }
    best
}

fn kmeans_pp<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut means = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &means[0])).collect();
    while means.len() < k {
        let tot: f64 = d2.iter().sum();
        let pick = if tot <= 0.0 {
            rng.gen_range(0..points.len())
        } else {
            let mut t = rng.gen::<f64>() * tot;
            let mut idx = points.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                t -= w;
                if t <= 0.0 {
                    idx = i;
                    break;
                }
            }
            idx
        };
        means.push(points[pick].clone());
        let m = means.last().unwrap().clone();
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(dist2(p, &m));
        }
    }
    means
}
