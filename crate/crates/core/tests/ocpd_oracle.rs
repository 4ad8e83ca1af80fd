//! Run-length posteriors against exhaustive enumeration of every
//! segmentation, scored with closed-form Normal-Inverse-Gamma evidence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;
use stream_etm::changepoint::{ocpd_update, OcpdPrior, RunLengthState};

fn log_evidence(xs: &[f64], mu0: f64, p: &OcpdPrior) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let kn = p.kappa0 + n;
    let an = p.alpha0 + n / 2.0;
    let bn = p.beta0 + 0.5 * ss + p.kappa0 * n * (mean - mu0).powi(2) / (2.0 * kn);
    ln_gamma(an) - ln_gamma(p.alpha0) + p.alpha0 * p.beta0.ln() - an * bn.ln() + 0.5 * (p.kappa0 / kn).ln()
        - n / 2.0 * (2.0 * std::f64::consts::PI).ln()
}

/// Posterior over the number of earlier points in the final segment.
fn enumerate(xs: &[f64], p: &OcpdPrior) -> Vec<f64> {
    let n = xs.len();
    let mu0 = p.mu0.unwrap_or(xs[0]);
    let h = 1.0 / p.hazard_lambda;
    let mut weights = vec![0.0; n];
    for mask in 0u32..(1 << (n - 1)) {
        // bit i set: x[i + 1] opens a segment
        let mut starts = vec![0];
        let mut log_w = 0.0;
        for i in 1..n {
            if mask >> (i - 1) & 1 == 1 {
                starts.push(i);
                log_w += h.ln();
            } else {
                log_w += (1.0 - h).ln();
            }
        }
        starts.push(n);
        for w in starts.windows(2) {
            log_w += log_evidence(&xs[w[0]..w[1]], mu0, p);
        }
        let last_start = starts[starts.len() - 2];
        weights[n - 1 - last_start] += log_w.exp();
    }
    let z: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / z).collect()
}

#[test]
fn recursion_matches_enumeration() {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = rng.random_range(2..=8);
        let shift = rng.random_range(0..len);
        let xs: Vec<f64> = (0..len)
            .map(|t| rng.random_range(0.0..0.2) + if t >= shift { 0.4 } else { 0.0 })
            .collect();
        let prior = OcpdPrior {
            hazard_lambda: rng.random_range(2.0..20.0),
            ..OcpdPrior::default()
        };
        let mut state = RunLengthState::new();
        for t in 0..len {
            ocpd_update(&mut state, xs[t], &prior).unwrap();
            let oracle = enumerate(&xs[..=t], &prior);
            let got = state.probs();
            assert_eq!(got.len(), oracle.len());
            for (g, o) in got.iter().zip(&oracle) {
                worst = worst.max((g - o).abs());
                assert!((g - o).abs() < 1e-8, "seed {seed} step {t}: {got:?} vs {oracle:?}");
            }
        }
    }
    eprintln!("largest deviation from enumeration: {worst:.2e}");
}
