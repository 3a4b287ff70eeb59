//! Reconstruction and edit-quality metrics.
//!
//! All of these are small, deterministic folds with a fixed summation
//! order, so repeated runs on the same vectors produce identical bits.

use crate::dataset::{component_nll, MixtureSpec, SHAPE_DIM};
use crate::denoiser::DenoiserModel;
use crate::editor::{pti_edit_apply, pti_edit_stage};
use crate::error::{Error, Result};
use crate::inversion::PtiConfig;
use crate::numerics::l2_dist;
use crate::schedule::{DdimSteps, NoiseSchedule};

/// Peak value used for PSNR unless a caller knows better: the data here
/// lives in roughly `[-1, 1]`, a dynamic range of 2.
pub const DEFAULT_PSNR_MAX: f64 = 2.0;

/// Mean squared error over coordinates.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "mse: length mismatch");
    assert!(!a.is_empty(), "mse: empty input");
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc / a.len() as f64
}

/// Peak signal-to-noise ratio in decibels: `10 log10(max^2 / mse)`.
/// Identical inputs yield `f64::INFINITY`.
pub fn psnr(a: &[f64], b: &[f64], max_val: f64) -> f64 {
    psnr_of_mse(mse(a, b), max_val)
}

/// PSNR from an already-aggregated MSE (experiment reports convert each
/// cell's mean MSE this way rather than averaging per-input PSNRs, which
/// would break down at the +inf sentinel).
pub fn psnr_of_mse(e: f64, max_val: f64) -> f64 {
    assert!(max_val > 0.0, "psnr: max_val must be positive");
    if e == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / e).log10()
    }
}

/// Single-window structural similarity over an 8x8 image flattened to 64
/// values: one set of global statistics, no sliding window.
///
/// `SSIM = (2 mu_a mu_b + C1)(2 cov + C2) / ((mu_a^2 + mu_b^2 + C1)(var_a + var_b + C2))`
/// with `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2`, population (biased) moments,
/// and `L` the dynamic range.
pub fn ssim(a: &[f64], b: &[f64], dynamic_range: f64) -> Result<f64> {
    if a.len() != SHAPE_DIM || b.len() != SHAPE_DIM {
        return Err(Error::Invalid(format!(
            "ssim expects image-shaped inputs of {} values, got {} and {}",
            SHAPE_DIM,
            a.len(),
            b.len()
        )));
    }
    if !(dynamic_range > 0.0 && dynamic_range.is_finite()) {
        return Err(Error::Invalid(format!(
            "ssim: dynamic range must be positive, got {dynamic_range}"
        )));
    }
    let n = a.len() as f64;
    let mu_a: f64 = a.iter().sum::<f64>() / n;
    let mu_b: f64 = b.iter().sum::<f64>() / n;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    let mut cov = 0.0;
    for (x, y) in a.iter().zip(b) {
        let da = x - mu_a;
        let db = y - mu_b;
        var_a += da * da;
        var_b += db * db;
        cov += da * db;
    }
    var_a /= n;
    var_b /= n;
    cov /= n;
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    Ok(((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
        / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)))
}

/// Spearman rank correlation with average ranks on ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "spearman: length mismatch");
    assert!(xs.len() >= 2, "spearman: need at least two points");
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut num = 0.0;
    let mut den_x = 0.0;
    let mut den_y = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        let da = a - mean;
        let db = b - mean;
        num += da * db;
        den_x += da * da;
        den_y += db * db;
    }
    num / (den_x.sqrt() * den_y.sqrt())
}

/// 1-based ranks; tied values share the average of the ranks they span.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).expect("non-comparable value"));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Negative log-likelihood of `x` under one mixture component; lower means
/// the point sits closer to that class's mode.
pub fn alignment_nll(mix: &MixtureSpec, x: &[f64], class: usize) -> Result<f64> {
    component_nll(mix, x, class)
}

/// One point on the edit-strength tradeoff curve, averaged over inputs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TradeoffPoint {
    pub eta: f64,
    /// Mean NLL of the edited outputs under the *target* component.
    pub alignment_nll: f64,
    /// Mean L2 distance between each edited output and its input.
    pub fidelity_l2: f64,
    pub n_inputs: usize,
}

/// Sweep edit strength for the tuned editor: stage one (inversion plus
/// prompt tuning) runs once per input, stage two once per `(input, eta)`.
/// Alignment is measured against the target mixture component, fidelity
/// against the unedited input.
#[allow(clippy::too_many_arguments)]
pub fn tradeoff_sweep(
    inputs: &[Vec<f64>],
    etas: &[f64],
    target_class: usize,
    pti_cfg: &PtiConfig,
    mix: &MixtureSpec,
    steps: &DdimSteps,
    sched: &NoiseSchedule,
    model: &DenoiserModel,
) -> Result<Vec<TradeoffPoint>> {
    if inputs.is_empty() {
        return Err(Error::Invalid("tradeoff sweep: no inputs".into()));
    }
    if etas.is_empty() {
        return Err(Error::Invalid("tradeoff sweep: no edit strengths".into()));
    }
    let mut sum_nll = vec![0.0; etas.len()];
    let mut sum_l2 = vec![0.0; etas.len()];
    for x in inputs {
        let stage = pti_edit_stage(x, target_class, pti_cfg, steps, sched, model)?;
        for (k, &eta) in etas.iter().enumerate() {
            let edited = pti_edit_apply(&stage, target_class, eta, steps, sched, model)?;
            sum_nll[k] += alignment_nll(mix, &edited, target_class)?;
            sum_l2[k] += l2_dist(&edited, x);
        }
    }
    let n = inputs.len();
    Ok(etas
        .iter()
        .enumerate()
        .map(|(k, &eta)| TradeoffPoint {
            eta,
            alignment_nll: sum_nll[k] / n as f64,
            fidelity_l2: sum_l2[k] / n as f64,
            n_inputs: n,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    #[test]
    fn mse_and_psnr_hand_values() {
        let a = [1.0, 2.0, 3.0];
        let b = [1.0, 2.0, 3.0];
        assert_eq!(mse(&a, &b), 0.0);
        assert_eq!(psnr(&a, &b, 2.0), f64::INFINITY);
        let c = [0.0, 0.0, 0.0];
        let d = [1.0, 1.0, 1.0];
        assert_eq!(mse(&c, &d), 1.0);
        // mse equal to max^2 sits exactly at 0 dB.
        let e = [2.0, 2.0];
        let f = [0.0, 0.0];
        assert_eq!(psnr(&e, &f, 2.0), 0.0);
        // Every factor-of-10 drop in mse adds 10 dB.
        let p1 = psnr(&[0.1, 0.1], &[0.0, 0.0], 2.0);
        let p2 = psnr(&[0.1 / 10.0_f64.sqrt(); 2], &[0.0; 2], 2.0);
        assert!((p2 - p1 - 10.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_identity_and_hand_oracle() {
        let img: Vec<f64> = (0..SHAPE_DIM)
            .map(|i| (i as f64 / 63.0) * 2.0 - 1.0)
            .collect();
        let s = ssim(&img, &img, 2.0).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "self-similarity is 1, got {s}");

        // Constant images +1 and -1 (L = 2): means kill the luminance term,
        // variances are zero, so the direct formula collapses to
        // (2*1*(-1) + C1) * C2 / ((1 + 1 + C1) * C2) with C1 = 0.0004.
        let ones = vec![1.0; SHAPE_DIM];
        let neg = vec![-1.0; SHAPE_DIM];
        let c1 = 0.0004;
        let expected = (2.0 * 1.0 * -1.0 + c1) / (2.0 + c1);
        let got = ssim(&ones, &neg, 2.0).unwrap();
        assert!((got - expected).abs() < 1e-15, "got {got}, want {expected}");
        assert!(got < -0.99);
    }

    #[test]
    fn ssim_rejects_non_image_shapes() {
        let a = vec![0.0; 63];
        let b = vec![0.0; 63];
        assert!(ssim(&a, &b, 2.0).is_err());
        let a = vec![0.0; SHAPE_DIM];
        assert!(ssim(&a, &b, 2.0).is_err());
        let b = vec![0.0; SHAPE_DIM];
        assert!(ssim(&a, &b, 0.0).is_err());
    }

    #[test]
    fn ssim_of_independent_noise_is_near_zero() {
        let mut rng = Rng::seed_from_u64(404);
        let mut hits = 0;
        let trials = 100;
        for _ in 0..trials {
            let a = rng.gaussian(SHAPE_DIM);
            let b = rng.gaussian(SHAPE_DIM);
            let s = ssim(&a, &b, 2.0).unwrap();
            if s.abs() < 0.3 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "only {hits}/{trials} trials were near zero");
    }

    #[test]
    fn spearman_hand_values() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[5.0, 0.0, -5.0]) + 1.0).abs() < 1e-12);
        // Ranks of ys are (3, 1, 2): rho = 1 - 6 * 6 / (3 * 8) = -0.5.
        let rho = spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]);
        assert!((rho + 0.5).abs() < 1e-12);
        // Monotone but nonlinear is still a perfect rank correlation.
        let xs: [f64; 4] = [0.1, 0.5, 0.9, 2.0];
        let ys: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
        assert!((spearman(&xs, &ys) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn average_ranks_handle_ties() {
        let r = average_ranks(&[2.0, 1.0, 2.0, 5.0]);
        assert_eq!(r, vec![2.5, 1.0, 2.5, 4.0]);
    }

    proptest! {
        #[test]
        fn ssim_is_bounded_and_symmetric(
            a in proptest::collection::vec(-1.0f64..1.0, SHAPE_DIM),
            b in proptest::collection::vec(-1.0f64..1.0, SHAPE_DIM),
        ) {
            let s_ab = ssim(&a, &b, 2.0).unwrap();
            let s_ba = ssim(&b, &a, 2.0).unwrap();
            prop_assert!((s_ab - s_ba).abs() < 1e-12);
            prop_assert!(s_ab.abs() <= 1.0 + 1e-12, "out of range: {s_ab}");
        }

        #[test]
        fn psnr_decreases_with_error(scale in 0.01f64..0.5) {
            let a = vec![0.5; 16];
            let near: Vec<f64> = a.iter().map(|v| v + scale * 0.5).collect();
            let far: Vec<f64> = a.iter().map(|v| v + scale).collect();
            prop_assert!(psnr(&a, &near, 2.0) > psnr(&a, &far, 2.0));
        }
    }
}
