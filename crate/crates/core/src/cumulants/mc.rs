use nalgebra::Matrix4;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::kernels::{psd_cholesky4, Activation, NetworkSpec};
use crate::rng::{stream, stream_rng};

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
}

impl McEstimate {
    /// Distance from `value` in standard errors.
    pub fn z_score(&self, value: f64) -> f64 {
        (self.mean - value).abs() / self.se
    }
}

const GROUPS: usize = 64;

#[derive(Clone, Copy, Default)]
struct Sums {
    count: f64,
    s4: f64,
    s4_sq: f64,
    pairs: [f64; 6],
}

impl Sums {
    fn add(&mut self, o: &Sums) {
        self.count += o.count;
        self.s4 += o.s4;
        self.s4_sq += o.s4_sq;
        for k in 0..6 {
            self.pairs[k] += o.pairs[k];
        }
    }

    fn sub(&self, o: &Sums) -> Sums {
        let mut r = *self;
        r.count -= o.count;
        r.s4 -= o.s4;
        r.s4_sq -= o.s4_sq;
        for k in 0..6 {
            r.pairs[k] -= o.pairs[k];
        }
        r
    }

    fn push(&mut self, phi: &[f64; 4]) {
        let p4 = phi[0] * phi[1] * phi[2] * phi[3];
        self.count += 1.0;
        self.s4 += p4;
        self.s4_sq += p4 * p4;
        for (k, (a, b)) in super::PAIRS.iter().enumerate() {
            self.pairs[k] += phi[*a] * phi[*b];
        }
    }

    fn cumulant(&self, readout_var: f64) -> f64 {
        let n = self.count;
        let p: Vec<f64> = self.pairs.iter().map(|v| v / n).collect();
        readout_var * readout_var * (3.0 * self.s4 / n - p[0] * p[5] - p[1] * p[4] - p[2] * p[3])
    }
}

fn grouped_sums<F>(samples: usize, seed: u64, draw: F) -> Vec<Sums>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> [f64; 4] + Sync,
{
    let per = samples.div_ceil(GROUPS);
    (0..GROUPS)
        .into_par_iter()
        .map(|g| {
            let lo = g * per;
            let hi = ((g + 1) * per).min(samples);
            let mut rng = stream_rng(seed, stream::MONTE_CARLO + g as u64);
            let mut s = Sums::default();
            for _ in lo..hi {
                s.push(&draw(&mut rng));
            }
            s
        })
        .collect()
}

fn gaussian_draw(l: &Matrix4<f64>) -> impl Fn(&mut rand_chacha::ChaCha8Rng) -> [f64; 4] + Sync {
    let (chol, _) = psd_cholesky4(l, 4);
    move |rng| {
        let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        std::array::from_fn(|i| (0..=i).map(|j| chol[(i, j)] * z[j]).sum())
    }
}

/// Plain Monte Carlo estimate of `⟨φ(h₁)φ(h₂)φ(h₃)φ(h₄)⟩`, `h ~ N(0, l)`.
pub fn mc_mu4(act: Activation, l: &Matrix4<f64>, samples: usize, seed: u64) -> McEstimate {
    let draw = gaussian_draw(l);
    let groups = grouped_sums(samples, seed, |rng| draw(rng).map(|h| act.apply(h)));
    let mut t = Sums::default();
    groups.iter().for_each(|g| t.add(g));
    let mean = t.s4 / t.count;
    let var = (t.s4_sq / t.count - mean * mean).max(0.0) * t.count / (t.count - 1.0);
    McEstimate { mean, se: (var / t.count).sqrt() }
}

/// Brute-force estimate of the O(1) fourth cumulant of the network output
/// at four input points.
///
/// Hidden units are drawn from the prior: explicit first-layer weights for
/// one hidden layer, Gaussian pre-activations of the last hidden layer for
/// deeper nets. The estimate is bias-corrected with a grouped jackknife,
/// which also provides the standard error.
pub fn mc_fourth_cumulant(spec: &NetworkSpec, points: [&[f64]; 4], samples: usize, seed: u64) -> McEstimate {
    assert!(samples >= 100_000, "at least 1e5 samples are required");
    let act = spec.activation;
    let groups = if spec.depth == 1 {
        let d = points[0].len();
        let sw = (spec.weight_var[0] / d as f64).sqrt();
        let sb = spec.bias_var[0].sqrt();
        grouped_sums(samples, seed, |rng| {
            let w: Vec<f64> = (0..d).map(|_| sw * rng.sample::<f64, _>(StandardNormal)).collect();
            let b = sb * rng.sample::<f64, _>(StandardNormal);
            points.map(|x| act.apply(x.iter().zip(&w).map(|(u, v)| u * v).sum::<f64>() + b))
        })
    } else {
        let mut l = Matrix4::zeros();
        for i in 0..4 {
            for j in 0..4 {
                l[(i, j)] = spec.last_hidden_pair(points[i], points[j]).2;
            }
        }
        let draw = gaussian_draw(&l);
        grouped_sums(samples, seed, |rng| draw(rng).map(|h| act.apply(h)))
    };
    let mut total = Sums::default();
    groups.iter().for_each(|g| total.add(g));
    let full = total.cumulant(spec.readout_var);
    let leave_out: Vec<f64> = groups
        .iter()
        .filter(|g| g.count > 0.0)
        .map(|g| total.sub(g).cumulant(spec.readout_var))
        .collect();
    let k = leave_out.len() as f64;
    let bar = leave_out.iter().sum::<f64>() / k;
    let var = (k - 1.0) / k * leave_out.iter().map(|v| (v - bar).powi(2)).sum::<f64>();
    McEstimate { mean: k * full - (k - 1.0) * bar, se: var.sqrt() }
}
