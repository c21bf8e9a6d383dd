//! Privacy-leakage measurement.
//!
//! Mutual information between a weight matrix and its partially
//! hidden counterpart is estimated with Gaussian kernel densities,
//! reconstruction difficulty is bounded with a Bayesian Cramér-Rao
//! expression, and the permutation-noise variance argument is checked
//! empirically against its closed form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};
use crate::sensitivity::{select_subset, ChannelScores, SensitivityError};

/// Default kernel bandwidth for the density estimates.
pub const DEFAULT_BANDWIDTH: f64 = 0.2;

/// Default cap on how many points enter the density sums.
pub const DEFAULT_SAMPLE_CAP: usize = 10_000;

/// Internal seed for the subsampling draw, fixed so estimates are
/// reproducible across runs.
const SUBSAMPLE_SEED: u64 = 0x6d69_7375_6273;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("validation: {0}")]
    Validation(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
}

// ── Mutual information ───────────────────────────────────────────────

/// A kernel-density mutual information estimate, reported in bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiEstimate {
    /// Estimated mutual information in bits.
    pub value: f64,
    /// Points that actually entered the density sums.
    pub sample_count: usize,
    pub bandwidth: f64,
}

impl MiEstimate {
    /// The same estimate in natural units.
    pub fn value_nats(&self) -> f64 {
        self.value * std::f64::consts::LN_2
    }
}

/// Estimates `I(x; y)` with Gaussian kernel density estimates of the
/// marginals and the joint, all with the same bandwidth.
///
/// When more than `cap` pairs are given, a fixed-seed subsample of
/// `cap` of them is used. The estimate is the sample mean of
/// `log p(x,y) - log p(x) - log p(y)` over the retained points,
/// converted to bits.
pub fn kde_mutual_info(
    x: &[f64],
    y: &[f64],
    bandwidth: f64,
    cap: usize,
) -> Result<MiEstimate, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::Validation(format!(
            "{} x samples but {} y samples",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(MetricsError::Validation(
            "mutual information needs at least 2 samples".into(),
        ));
    }
    if cap < 2 {
        return Err(MetricsError::Validation("cap must be at least 2".into()));
    }
    if !bandwidth.is_finite() || bandwidth <= 0.0 {
        return Err(MetricsError::Validation(format!(
            "bandwidth {bandwidth} must be positive"
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(MetricsError::Validation("non-finite sample".into()));
    }

    let picked = subsample_indices(x.len(), cap);
    let xs: Vec<f64> = picked.iter().map(|&i| x[i]).collect();
    let ys: Vec<f64> = picked.iter().map(|&i| y[i]).collect();
    let n = xs.len();

    // Accumulate unnormalized kernel sums in one pass over pairs; the
    // joint kernel factors into the two marginal kernels.
    let inv_two_h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    let mut kx = vec![1.0f64; n];
    let mut ky = vec![1.0f64; n];
    let mut kxy = vec![1.0f64; n];
    for i in 0..n {
        for j in i + 1..n {
            let dx = xs[i] - xs[j];
            let dy = ys[i] - ys[j];
            let ex = (-dx * dx * inv_two_h2).exp();
            let ey = (-dy * dy * inv_two_h2).exp();
            let exy = ex * ey;
            kx[i] += ex;
            kx[j] += ex;
            ky[i] += ey;
            ky[j] += ey;
            kxy[i] += exy;
            kxy[j] += exy;
        }
    }

    let norm_1d = 1.0 / ((n as f64) * (2.0 * std::f64::consts::PI).sqrt() * bandwidth);
    let norm_2d = 1.0 / ((n as f64) * 2.0 * std::f64::consts::PI * bandwidth * bandwidth);
    let mut total = 0.0;
    for i in 0..n {
        total += (kxy[i] * norm_2d).ln() - (kx[i] * norm_1d).ln() - (ky[i] * norm_1d).ln();
    }
    let nats = total / n as f64;
    Ok(MiEstimate {
        value: nats / std::f64::consts::LN_2,
        sample_count: n,
        bandwidth,
    })
}

fn subsample_indices(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SUBSAMPLE_SEED);
    let mut pool: Vec<usize> = (0..n).collect();
    for t in 0..cap {
        let pick = rng.gen_range(t..n);
        pool.swap(t, pick);
    }
    let mut picked = pool[..cap].to_vec();
    picked.sort_unstable();
    picked
}

// ── Leakage curves ───────────────────────────────────────────────────

/// Which columns get hidden first as the encryption ratio grows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LeakageStrategy {
    /// Hide the highest-sensitivity columns first.
    Max,
    /// Hide the lowest-sensitivity columns first.
    Min,
    /// Hide a uniform random subset.
    Random { seed: u64 },
}

/// Mutual information between `w` and its masked copy as the hidden
/// fraction sweeps over `gammas` (which must be nondecreasing and in
/// `[0, 1]`). Hidden columns are zeroed; both matrices are compared
/// entrywise as paired samples.
pub fn leakage_curve(
    w: &Matrix,
    scores: &ChannelScores,
    strategy: LeakageStrategy,
    gammas: &[f64],
) -> Result<Vec<(f64, MiEstimate)>, MetricsError> {
    if scores.len() != w.cols() {
        return Err(MetricsError::Validation(format!(
            "{} scores for {} columns",
            scores.len(),
            w.cols()
        )));
    }
    if gammas.windows(2).any(|p| p[0] > p[1]) {
        return Err(MetricsError::Validation(
            "gammas must be nondecreasing".into(),
        ));
    }
    let n = w.cols();
    let mut curve = Vec::with_capacity(gammas.len());
    for (idx, &gamma) in gammas.iter().enumerate() {
        if !(0.0..=1.0).contains(&gamma) || gamma.is_nan() {
            return Err(MetricsError::Validation(format!(
                "gamma {gamma} outside [0, 1]"
            )));
        }
        let hidden = match strategy {
            LeakageStrategy::Max => select_subset(scores, gamma)?.columns,
            LeakageStrategy::Min => lowest_columns(scores, gamma),
            LeakageStrategy::Random { seed } => {
                let k = ((n as f64) * gamma + 1e-9).floor() as usize;
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(idx as u64));
                let mut pool: Vec<usize> = (0..n).collect();
                for t in 0..k.min(n) {
                    let pick = rng.gen_range(t..n);
                    pool.swap(t, pick);
                }
                pool.truncate(k.min(n));
                pool
            }
        };
        let mut masked = w.clone();
        for &c in &hidden {
            for r in 0..w.rows() {
                masked.set(r, c, 0.0);
            }
        }
        let mi = kde_mutual_info(w.data(), masked.data(), DEFAULT_BANDWIDTH, DEFAULT_SAMPLE_CAP)?;
        curve.push((gamma, mi));
    }
    Ok(curve)
}

fn lowest_columns(scores: &ChannelScores, gamma: f64) -> Vec<usize> {
    let n = scores.len();
    let k = ((n as f64) * gamma + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores.scores()[a]
            .partial_cmp(&scores.scores()[b])
            .expect("scores are finite")
            .then(a.cmp(&b))
    });
    order.truncate(k.min(n));
    order
}

// ── Reconstruction bound ─────────────────────────────────────────────

/// Inputs to the Bayesian Cramér-Rao reconstruction bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    /// Data dimension being reconstructed.
    pub d: usize,
    /// Column count of the update.
    pub n: usize,
    /// Fraction of columns encrypted.
    pub gamma: f64,
    /// Equivalent noise variance of the permutation mechanism.
    pub s2: f64,
    /// Largest squared gradient magnitude an attacker can observe.
    pub grad_max_sq: f64,
    /// Largest eigenvalue of the prior Fisher information.
    pub lambda_e: f64,
}

/// Lower bound on the expected squared reconstruction error:
/// `d^2 / ((n (1 - gamma) / s^2) * grad_max_sq + lambda_e)`.
///
/// A vanishing exposure term is resolved before the division, so a
/// zero `grad_max_sq` or `gamma = 1` never trips on `s2 = 0`; a zero
/// denominator reports the bound as infinite.
pub fn crlb_bound(inputs: &BoundInputs) -> Result<f64, MetricsError> {
    for (label, v) in [
        ("gamma", inputs.gamma),
        ("s2", inputs.s2),
        ("grad_max_sq", inputs.grad_max_sq),
        ("lambda_e", inputs.lambda_e),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(MetricsError::Validation(format!("{label} {v} out of range")));
        }
    }
    if inputs.gamma > 1.0 {
        return Err(MetricsError::Validation(format!(
            "gamma {} outside [0, 1]",
            inputs.gamma
        )));
    }
    let exposed = (inputs.n as f64) * (1.0 - inputs.gamma) * inputs.grad_max_sq;
    let exposure_term = if exposed == 0.0 { 0.0 } else { exposed / inputs.s2 };
    let denominator = exposure_term + inputs.lambda_e;
    let d2 = (inputs.d as f64) * (inputs.d as f64);
    if denominator == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(d2 / denominator)
}

// ── Permutation-noise validation ─────────────────────────────────────

/// Monte Carlo versus closed-form variance of the permuted statistic,
/// plus normality diagnostics of the standardized samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseCheck {
    pub empirical_var: f64,
    pub analytic_var: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

/// Samples `O_Q = <Q, G P - G>` over `trials` uniform random column
/// permutations `P` and compares the sample variance against the
/// closed form `sum_i SS(Q_i) SS(G_i) / (n - 1)`, where `SS` is the
/// centered sum of squares of a row.
pub fn permutation_noise_check(
    g: &Matrix,
    q: &Matrix,
    trials: usize,
    seed: u64,
) -> Result<NoiseCheck, MetricsError> {
    if g.rows() != q.rows() || g.cols() != q.cols() {
        return Err(MetricsError::Validation(format!(
            "g is {}x{} but q is {}x{}",
            g.rows(),
            g.cols(),
            q.rows(),
            q.cols()
        )));
    }
    let n = g.cols();
    if n < 3 {
        return Err(MetricsError::Validation(
            "need at least 3 columns to permute".into(),
        ));
    }
    if g.rows() == 0 {
        return Err(MetricsError::Validation("empty matrices".into()));
    }
    if trials < 2 {
        return Err(MetricsError::Validation("need at least 2 trials".into()));
    }

    let analytic_var: f64 = (0..g.rows())
        .map(|i| row_sum_squares(q, i) * row_sum_squares(g, i) / (n as f64 - 1.0))
        .sum();

    let base: f64 = (0..g.rows())
        .map(|i| (0..n).map(|k| q.get(i, k) * g.get(i, k)).sum::<f64>())
        .sum();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        for t in (1..n).rev() {
            let pick = rng.gen_range(0..=t);
            perm.swap(t, pick);
        }
        let mut o = 0.0;
        for i in 0..g.rows() {
            for k in 0..n {
                o += q.get(i, k) * g.get(i, perm[k]);
            }
        }
        samples.push(o - base);
    }

    let t = trials as f64;
    let mean = samples.iter().sum::<f64>() / t;
    let m2 = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / t;
    let empirical_var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (t - 1.0);
    let (skewness, excess_kurtosis) = if m2 == 0.0 {
        (0.0, 0.0)
    } else {
        let m3 = samples.iter().map(|s| (s - mean).powi(3)).sum::<f64>() / t;
        let m4 = samples.iter().map(|s| (s - mean).powi(4)).sum::<f64>() / t;
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };
    Ok(NoiseCheck {
        empirical_var,
        analytic_var,
        skewness,
        excess_kurtosis,
    })
}

fn row_sum_squares(m: &Matrix, i: usize) -> f64 {
    let n = m.cols();
    let mean = (0..n).map(|k| m.get(i, k)).sum::<f64>() / n as f64;
    (0..n).map(|k| (m.get(i, k) - mean).powi(2)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn normal_samples(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
        let dist = Normal::new(0.0, std).unwrap();
        (0..n).map(|_| dist.sample(rng)).collect()
    }

    // ── kde_mutual_info ──────────────────────────────────────────────

    #[test]
    fn independent_samples_have_near_zero_mi() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = normal_samples(&mut rng, 10_000, 1.0);
        let y = normal_samples(&mut rng, 10_000, 1.0);
        let mi = kde_mutual_info(&x, &y, DEFAULT_BANDWIDTH, DEFAULT_SAMPLE_CAP).unwrap();
        assert!(mi.value.abs() < 0.05, "independent MI {}", mi.value);
    }

    #[test]
    fn identical_samples_have_strong_mi() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let x = normal_samples(&mut rng, 2_000, 1.0);
        let mi = kde_mutual_info(&x, &x, DEFAULT_BANDWIDTH, DEFAULT_SAMPLE_CAP).unwrap();
        assert!(mi.value > 1.0, "self MI {}", mi.value);
    }

    #[test]
    fn constant_target_has_exactly_zero_mi() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let x = normal_samples(&mut rng, 500, 1.0);
        let y = vec![0.5; 500];
        let mi = kde_mutual_info(&x, &y, DEFAULT_BANDWIDTH, DEFAULT_SAMPLE_CAP).unwrap();
        assert!(mi.value.abs() < 1e-12, "constant-target MI {}", mi.value);
    }

    #[test]
    fn estimate_is_symmetric_in_its_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let x = normal_samples(&mut rng, 801, 1.0);
        let noise = normal_samples(&mut rng, 801, 0.3);
        let y: Vec<f64> = x.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let xy = kde_mutual_info(&x, &y, DEFAULT_BANDWIDTH, DEFAULT_SAMPLE_CAP).unwrap();
        let yx = kde_mutual_info(&y, &x, DEFAULT_BANDWIDTH, DEFAULT_SAMPLE_CAP).unwrap();
        assert!(
            (xy.value - yx.value).abs() < 1e-9,
            "asymmetry {} vs {}",
            xy.value,
            yx.value
        );
    }

    #[test]
    fn subsampling_caps_the_sample_count_deterministically() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let x = normal_samples(&mut rng, 50, 1.0);
        let y = normal_samples(&mut rng, 50, 1.0);
        let one = kde_mutual_info(&x, &y, DEFAULT_BANDWIDTH, 10).unwrap();
        let two = kde_mutual_info(&x, &y, DEFAULT_BANDWIDTH, 10).unwrap();
        assert_eq!(one.sample_count, 10);
        assert_eq!(one, two);
    }

    #[test]
    fn rejects_bad_mi_inputs() {
        assert!(kde_mutual_info(&[1.0, 2.0], &[1.0], 0.2, 100).is_err());
        assert!(kde_mutual_info(&[1.0], &[1.0], 0.2, 100).is_err());
        assert!(kde_mutual_info(&[1.0, 2.0], &[1.0, 2.0], 0.0, 100).is_err());
        assert!(kde_mutual_info(&[1.0, f64::NAN], &[1.0, 2.0], 0.2, 100).is_err());
        assert!(kde_mutual_info(&[1.0, 2.0], &[1.0, 2.0], 0.2, 1).is_err());
    }

    // ── leakage_curve ────────────────────────────────────────────────

    fn planted_matrix(seed: u64, heavy: &[usize]) -> (Matrix, ChannelScores) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (50, 20);
        let light = Normal::new(0.0, 0.3).unwrap();
        let loud = Normal::new(0.0, 3.0).unwrap();
        let mut w = Matrix::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                let dist = if heavy.contains(&j) { loud } else { light };
                w.set(i, j, dist.sample(&mut rng));
            }
        }
        let scores: Vec<f64> = (0..n)
            .map(|j| (0..m).map(|i| w.get(i, j).powi(2)).sum::<f64>().sqrt())
            .collect();
        (w, ChannelScores::new(scores).unwrap())
    }

    #[test]
    fn curve_endpoints_behave() {
        let (w, scores) = planted_matrix(7, &[0, 1]);
        let curve = leakage_curve(&w, &scores, LeakageStrategy::Max, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(curve.len(), 3);
        let values: Vec<f64> = curve.iter().map(|(_, mi)| mi.value).collect();
        assert!(values[0] >= values[1] && values[0] >= values[2]);
        assert!(values[2].abs() < 1e-12, "fully hidden MI {}", values[2]);
    }

    #[test]
    fn hiding_heavy_columns_leaks_least() {
        let heavy = [2, 5, 9, 13, 17];
        let (w, scores) = planted_matrix(11, &heavy);
        let gamma = [0.25];
        let max = leakage_curve(&w, &scores, LeakageStrategy::Max, &gamma).unwrap()[0].1;
        let min = leakage_curve(&w, &scores, LeakageStrategy::Min, &gamma).unwrap()[0].1;
        let rnd = leakage_curve(&w, &scores, LeakageStrategy::Random { seed: 3 }, &gamma)
            .unwrap()[0]
            .1;
        assert!(
            max.value < rnd.value && rnd.value < min.value,
            "ordering broke: max {} random {} min {}",
            max.value,
            rnd.value,
            min.value
        );
    }

    #[test]
    fn curve_rejects_unsorted_gammas() {
        let (w, scores) = planted_matrix(7, &[0]);
        assert!(leakage_curve(&w, &scores, LeakageStrategy::Max, &[0.5, 0.2]).is_err());
        assert!(leakage_curve(&w, &scores, LeakageStrategy::Max, &[0.5, 1.2]).is_err());
    }

    // ── crlb_bound ───────────────────────────────────────────────────

    fn base_inputs() -> BoundInputs {
        BoundInputs {
            d: 2,
            n: 10,
            gamma: 0.5,
            s2: 1.0,
            grad_max_sq: 1.0,
            lambda_e: 0.0,
        }
    }

    #[test]
    fn bound_hand_value_is_exact() {
        assert_eq!(crlb_bound(&base_inputs()).unwrap(), 0.8);
    }

    #[test]
    fn fully_encrypted_bound_uses_only_the_prior() {
        let inputs = BoundInputs {
            gamma: 1.0,
            lambda_e: 2.0,
            ..base_inputs()
        };
        assert_eq!(crlb_bound(&inputs).unwrap(), 2.0);
    }

    #[test]
    fn no_exposure_and_no_prior_is_unbounded() {
        let inputs = BoundInputs {
            grad_max_sq: 0.0,
            ..base_inputs()
        };
        assert_eq!(crlb_bound(&inputs).unwrap(), f64::INFINITY);
        let fully = BoundInputs {
            gamma: 1.0,
            s2: 0.0,
            ..base_inputs()
        };
        assert_eq!(crlb_bound(&fully).unwrap(), f64::INFINITY);
    }

    #[test]
    fn bound_is_monotone_on_grids() {
        let mut last = 0.0;
        for step in 0..=10 {
            let inputs = BoundInputs {
                gamma: step as f64 / 10.0,
                lambda_e: 0.5,
                ..base_inputs()
            };
            let bound = crlb_bound(&inputs).unwrap();
            assert!(bound >= last, "gamma grid dipped at step {step}");
            last = bound;
        }
        last = 0.0;
        for step in 1..=10 {
            let inputs = BoundInputs {
                s2: step as f64 / 2.0,
                ..base_inputs()
            };
            let bound = crlb_bound(&inputs).unwrap();
            assert!(bound >= last, "s2 grid dipped at step {step}");
            last = bound;
        }
        last = f64::INFINITY;
        for step in 1..=10 {
            let inputs = BoundInputs {
                grad_max_sq: step as f64,
                ..base_inputs()
            };
            let bound = crlb_bound(&inputs).unwrap();
            assert!(bound <= last, "gradient grid rose at step {step}");
            last = bound;
        }
    }

    #[test]
    fn bound_rejects_bad_inputs() {
        assert!(crlb_bound(&BoundInputs {
            gamma: 1.5,
            ..base_inputs()
        })
        .is_err());
        assert!(crlb_bound(&BoundInputs {
            s2: -1.0,
            ..base_inputs()
        })
        .is_err());
        assert!(crlb_bound(&BoundInputs {
            lambda_e: f64::NAN,
            ..base_inputs()
        })
        .is_err());
    }

    // ── permutation_noise_check ──────────────────────────────────────

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn constant_rows_make_the_statistic_vanish() {
        let g = Matrix::new(2, 4, vec![3.0; 8]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_matrix(&mut rng, 2, 4);
        let check = permutation_noise_check(&g, &q, 100, 9).unwrap();
        assert_eq!(check.analytic_var, 0.0);
        assert_eq!(check.empirical_var, 0.0);
        assert_eq!(check.skewness, 0.0);
        assert_eq!(check.excess_kurtosis, 0.0);
    }

    // The closed form sums per-row variances; under one shared
    // permutation the rows also covary, adding
    // sum_{i != j} <Q_i,Q_j>_c <G_i,G_j>_c / (n-1), a term of relative
    // size O(r/n). The Monte Carlo is checked tightly against the full
    // bilinear variance, and the per-row form against its known gap.
    fn exact_shared_perm_variance(q: &Matrix, g: &Matrix) -> f64 {
        let n = g.cols() as f64;
        let centered_dot = |m: &Matrix, a: usize, w: &Matrix, b: usize| -> f64 {
            let am = (0..m.cols()).map(|k| m.get(a, k)).sum::<f64>() / n;
            let bm = (0..w.cols()).map(|k| w.get(b, k)).sum::<f64>() / n;
            (0..m.cols())
                .map(|k| (m.get(a, k) - am) * (w.get(b, k) - bm))
                .sum()
        };
        let mut var = 0.0;
        for i in 0..g.rows() {
            for j in 0..g.rows() {
                var += centered_dot(q, i, q, j) * centered_dot(g, i, g, j) / (n - 1.0);
            }
        }
        var
    }

    #[test]
    fn monte_carlo_variance_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = random_matrix(&mut rng, 4, 64);
        let check = permutation_noise_check(&g, &g, 10_000, 23).unwrap();
        let exact = exact_shared_perm_variance(&g, &g);
        let ratio = check.empirical_var / exact;
        assert!(
            (ratio - 1.0).abs() < 0.05,
            "variance ratio {ratio} (empirical {} exact {})",
            check.empirical_var,
            exact
        );
        let row_form_gap = (check.analytic_var / exact - 1.0).abs();
        assert!(
            row_form_gap < 0.15,
            "per-row form strayed {row_form_gap} from the exact variance"
        );
    }

    #[test]
    fn per_row_form_is_tight_on_wide_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let g = random_matrix(&mut rng, 4, 1024);
        let check = permutation_noise_check(&g, &g, 10_000, 41).unwrap();
        let ratio = check.empirical_var / check.analytic_var;
        assert!(
            (ratio - 1.0).abs() < 0.05,
            "variance ratio {ratio} (empirical {} analytic {})",
            check.empirical_var,
            check.analytic_var
        );
    }

    #[test]
    fn analytic_variance_ignores_row_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let g = random_matrix(&mut rng, 3, 16);
        let q = random_matrix(&mut rng, 3, 16);
        let baseline = permutation_noise_check(&g, &q, 2, 1).unwrap().analytic_var;
        let mut g_shift = g.clone();
        let mut q_shift = q.clone();
        for i in 0..3 {
            for k in 0..16 {
                g_shift.set(i, k, g.get(i, k) + 10.0 * (i as f64 + 1.0));
                q_shift.set(i, k, q.get(i, k) - 4.0 * (i as f64 + 1.0));
            }
        }
        let shifted = permutation_noise_check(&g_shift, &q_shift, 2, 1)
            .unwrap()
            .analytic_var;
        assert!(
            (baseline - shifted).abs() <= 1e-9 * baseline.abs().max(1.0),
            "centering broke: {baseline} vs {shifted}"
        );
    }

    #[test]
    fn wide_instances_look_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let g = random_matrix(&mut rng, 2, 1024);
        let q = random_matrix(&mut rng, 2, 1024);
        let check = permutation_noise_check(&g, &q, 10_000, 31).unwrap();
        assert!(check.skewness.abs() < 0.1, "skewness {}", check.skewness);
        assert!(
            check.excess_kurtosis.abs() < 0.2,
            "excess kurtosis {}",
            check.excess_kurtosis
        );
    }

    #[test]
    fn noise_check_rejects_bad_inputs() {
        let g = Matrix::zeros(2, 2);
        assert!(permutation_noise_check(&g, &g, 10, 0).is_err());
        let g = Matrix::zeros(2, 4);
        let q = Matrix::zeros(2, 5);
        assert!(permutation_noise_check(&g, &q, 10, 0).is_err());
        let g = Matrix::zeros(2, 4);
        assert!(permutation_noise_check(&g, &g, 1, 0).is_err());
    }
}
