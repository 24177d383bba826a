//! Closed-form statistics of the FSK-MV energy detector and the convergence
//! bound of signSGD-MV trained through it, plus a Monte Carlo harness that
//! runs the actual encode → channel → detect pipeline.
//!
//! Under ideal power control and i.i.d. Rayleigh fading the pair energies
//! `e⁺, e⁻` are independent exponentials with means `μ± = E_s K± λ + σ²`, so
//! `Δ = e⁺ - e⁻` is a two-sided exponential and
//! `P[Δ <= 0] = μ⁻ / (μ⁺ + μ⁻) = ((K - K⁺) + 1/ξ) / (K + 2/ξ)` with the
//! effective SNR `ξ = E_s λ / σ²`.
//!
//! The convergence bound uses `a = (1 + 2/(ξK)) / √γ`. The per-round descent
//! term carries the reciprocal factor `1 / (1 + 2/(ξK))`, exposed as
//! [`descent_factor`]; the two are related by `a √γ = 1 / descent_factor`.

use rayon::prelude::*;

use crate::channel::{superpose_at_es, ChannelRealization, SampledProfile, TimingMode};
use crate::error::{Error, Result};
use crate::geometry::{ed_link_distances, received_power, sample_link_distance, CellConfig};
use crate::oac::{build_fsk_map, fskmv_encode, fskmv_metrics, random_sign, SignVector};
use crate::rng::{substream, Domain};
use crate::waveform::OfdmConfig;

/// Largest `K` for which [`flip_prob_mixture`] evaluates the binomial sum.
pub const MIXTURE_MAX_EDS: usize = 60;

/// Expected pair energies and the effective SNR for one vote split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorStats {
    pub mu_plus: f64,
    pub mu_minus: f64,
    pub xi: f64,
    pub k_plus: usize,
    pub k_minus: usize,
}

impl DetectorStats {
    pub fn new(
        k_plus: usize,
        k: usize,
        symbol_energy: f64,
        lambda: f64,
        noise_var: f64,
    ) -> Result<Self> {
        let (mu_plus, mu_minus) = expected_energies(k_plus, k, symbol_energy, lambda, noise_var)?;
        Ok(Self {
            mu_plus,
            mu_minus,
            xi: effective_snr(symbol_energy, lambda, noise_var),
            k_plus,
            k_minus: k - k_plus,
        })
    }

    /// `P[Δ <= 0]`, the probability of deciding `-1`.
    pub fn prob_minus(&self) -> f64 {
        self.mu_minus / (self.mu_plus + self.mu_minus)
    }
}

/// `ξ = E_s λ / σ²`; infinite when the noise vanishes.
pub fn effective_snr(symbol_energy: f64, lambda: f64, noise_var: f64) -> f64 {
    if noise_var == 0.0 {
        f64::INFINITY
    } else {
        symbol_energy * lambda / noise_var
    }
}

/// Mean pair energies `(μ⁺, μ⁻)` for `k_plus` of `k` EDs voting `+1`.
pub fn expected_energies(
    k_plus: usize,
    k: usize,
    symbol_energy: f64,
    lambda: f64,
    noise_var: f64,
) -> Result<(f64, f64)> {
    if k_plus > k {
        return Err(Error::OutOfRange(format!("k_plus {k_plus} exceeds K {k}")));
    }
    Ok((
        symbol_energy * k_plus as f64 * lambda + noise_var,
        symbol_energy * (k - k_plus) as f64 * lambda + noise_var,
    ))
}

/// Density of `Δ = e⁺ - e⁻` for independent exponential pair energies.
pub fn delta_pdf(delta: f64, mu_plus: f64, mu_minus: f64) -> Result<f64> {
    if !(mu_plus > 0.0 && mu_minus > 0.0) {
        return Err(Error::OutOfRange(format!(
            "means must be positive (got {mu_plus}, {mu_minus})"
        )));
    }
    let norm = 1.0 / (mu_plus + mu_minus);
    Ok(if delta <= 0.0 {
        norm * (delta / mu_minus).exp()
    } else {
        norm * (-delta / mu_plus).exp()
    })
}

/// CDF of [`delta_pdf`].
pub fn delta_cdf(delta: f64, mu_plus: f64, mu_minus: f64) -> Result<f64> {
    if !(mu_plus > 0.0 && mu_minus > 0.0) {
        return Err(Error::OutOfRange(format!(
            "means must be positive (got {mu_plus}, {mu_minus})"
        )));
    }
    let s = mu_plus + mu_minus;
    Ok(if delta <= 0.0 {
        mu_minus / s * (delta / mu_minus).exp()
    } else {
        1.0 - mu_plus / s * (-delta / mu_plus).exp()
    })
}

/// Probability that the detector does not output `+1` when `k_plus` of `k`
/// EDs vote `+1`: `((K - K⁺) + 1/ξ) / (K + 2/ξ)`. `ξ = ∞` is allowed.
pub fn flip_prob_given_split(k: usize, k_plus: usize, xi: f64) -> Result<f64> {
    if k_plus > k {
        return Err(Error::OutOfRange(format!("k_plus {k_plus} exceeds K {k}")));
    }
    if !(xi > 0.0) {
        return Err(Error::OutOfRange(format!(
            "effective SNR must be positive (got {xi})"
        )));
    }
    let inv = 1.0 / xi;
    Ok(((k - k_plus) as f64 + inv) / (k as f64 + 2.0 * inv))
}

/// Closed form of the binomial mixture of [`flip_prob_given_split`] when each
/// ED votes wrongly with probability `q_wrong`:
/// `p = (1/(ξK)) / (1 + 2/(Kξ)) + q / (1 + 2/(ξK))`.
pub fn flip_prob(q_wrong: f64, k: usize, xi: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&q_wrong) {
        return Err(Error::OutOfRange(format!(
            "q_i must lie in [0, 0.5] (got {q_wrong})"
        )));
    }
    if !(xi > 0.0) || k == 0 {
        return Err(Error::OutOfRange("need ξ > 0 and K >= 1".into()));
    }
    let c = 1.0 / (xi * k as f64);
    let d = 1.0 + 2.0 * c;
    Ok(c / d + q_wrong / d)
}

/// The binomial mixture `Σ_{K⁺} Binom(K⁺; K, 1-q) · P[flip | K⁺]` summed
/// term by term in log space. Only defined for `K <= 60`.
pub fn flip_prob_mixture(q_wrong: f64, k: usize, xi: f64) -> Result<f64> {
    if k > MIXTURE_MAX_EDS {
        return Err(Error::OutOfRange(format!(
            "binomial mixture limited to K <= {MIXTURE_MAX_EDS}"
        )));
    }
    if !(0.0..=0.5).contains(&q_wrong) {
        return Err(Error::OutOfRange(format!(
            "q_i must lie in [0, 0.5] (got {q_wrong})"
        )));
    }
    // ln C(K, j) via running sums of logarithms
    let mut ln_fact = vec![0.0f64; k + 1];
    for j in 1..=k {
        ln_fact[j] = ln_fact[j - 1] + (j as f64).ln();
    }
    let ln_term = |count: usize, p: f64| {
        if count == 0 {
            0.0
        } else {
            count as f64 * p.ln()
        }
    };
    let mut total = 0.0;
    for kp in 0..=k {
        let ln_w = ln_fact[k] - ln_fact[kp] - ln_fact[k - kp]
            + ln_term(kp, 1.0 - q_wrong)
            + ln_term(k - kp, q_wrong);
        let w = ln_w.exp();
        if w > 0.0 {
            total += w * flip_prob_given_split(k, kp, xi)?;
        }
    }
    Ok(total)
}

/// Upper bound on the probability that one ED's gradient sign is wrong,
/// `√2 σ_i / (3 |g_i| √n_b)`, clipped to 0.5.
pub fn q_bound(sigma: f64, grad: f64, batch_size: usize) -> f64 {
    if grad == 0.0 || batch_size == 0 {
        return 0.5;
    }
    let b = 2f64.sqrt() * sigma / (3.0 * grad.abs() * (batch_size as f64).sqrt());
    b.clamp(0.0, 0.5)
}

/// Inputs of the convergence bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    /// Number of rounds `N`.
    pub rounds: usize,
    /// Positive integer trading batch size against rounds, `n_b = N / γ`.
    pub gamma: usize,
    /// `‖L‖₁` of the smoothness constants.
    pub l1_smoothness: f64,
    /// `‖σ‖₁` of the per-coordinate gradient standard deviations.
    pub sigma1: f64,
    /// `F(w₀) - F*`.
    pub f0_minus_fstar: f64,
    pub num_eds: usize,
    pub xi: f64,
}

impl BoundInputs {
    fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.gamma == 0 || self.num_eds == 0 {
            return Err(Error::OutOfRange(
                "rounds, gamma and K must be positive".into(),
            ));
        }
        let vals = [self.l1_smoothness, self.sigma1, self.f0_minus_fstar];
        if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !(self.xi > 0.0) {
            return Err(Error::OutOfRange(
                "bound inputs must be nonnegative and ξ positive".into(),
            ));
        }
        Ok(())
    }

    /// `a = (1 + 2/(ξK)) / √γ`.
    pub fn a(&self) -> f64 {
        (1.0 + 2.0 / (self.xi * self.num_eds as f64)) / (self.gamma as f64).sqrt()
    }

    /// Batch size and learning rate the bound is stated for:
    /// `n_b = N / γ`, `η = 1 / √(‖L‖₁ n_b)`.
    pub fn schedule(&self) -> (f64, f64) {
        let nb = self.rounds as f64 / self.gamma as f64;
        (nb, 1.0 / (self.l1_smoothness * nb).sqrt())
    }
}

/// Per-round shrinkage of the expected descent, `1 / (1 + 2/(Kξ))`.
pub fn descent_factor(k: usize, xi: f64) -> f64 {
    1.0 / (1.0 + 2.0 / (k as f64 * xi))
}

/// Right-hand side of the bound on `E[(1/N) Σ ‖g_n‖₁]`:
/// `(1/√N) [ a √‖L‖₁ (F₀ - F* + γ/2) + (2√2/3) √γ ‖σ‖₁ ]`.
pub fn convergence_bound(b: &BoundInputs) -> Result<f64> {
    b.validate()?;
    let gamma = b.gamma as f64;
    let first = b.a() * b.l1_smoothness.sqrt() * (b.f0_minus_fstar + gamma / 2.0);
    let second = 2.0 * 2f64.sqrt() / 3.0 * gamma.sqrt() * b.sigma1;
    Ok((first + second) / (b.rounds as f64).sqrt())
}

/// How EDs are placed in the Monte Carlo harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// New uniform-in-area distances every trial.
    Random,
    /// The fixed distances of [`ed_link_distances`].
    Deterministic,
}

/// Fading model for the Monte Carlo harness.
#[derive(Debug, Clone, PartialEq)]
pub enum Fading {
    /// One Rayleigh coefficient per ED, equal on both subcarriers.
    Flat,
    /// Tapped delay line on the given numerology, with timing errors.
    Multipath {
        profile: SampledProfile,
        ofdm: OfdmConfig,
        t_sync: f64,
        timing: TimingMode,
        n_err: usize,
    },
}

/// System seen by a single vote in [`mc_flip_prob`].
#[derive(Debug, Clone, PartialEq)]
pub struct McSystem {
    pub cell: CellConfig,
    pub placement: Placement,
    pub fading: Fading,
}

/// Monte Carlo estimate of the flip probability with energy statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub trials: usize,
    pub flips: usize,
    pub prob: f64,
    /// Binomial standard error at the empirical probability.
    pub stderr: f64,
    pub mean_e_plus: f64,
    pub mean_e_minus: f64,
}

struct TrialOutcome {
    flip: bool,
    e_plus: f64,
    e_minus: f64,
}

/// Run the full FSK-MV pipeline for one vote coordinate with `k_plus` EDs
/// voting `+1`, and report how often the decision is not `+1`.
///
/// Trial `t` of sweep point `point` draws all its randomness from substreams
/// keyed by `(seed, domain, point, t)`, so results do not depend on the
/// number of worker threads.
pub fn mc_flip_prob(
    system: &McSystem,
    k_plus: usize,
    trials: usize,
    seed: u64,
    point: u64,
) -> Result<McEstimate> {
    let k = system.cell.num_eds;
    if k_plus > k {
        return Err(Error::OutOfRange(format!("k_plus {k_plus} exceeds K {k}")));
    }
    if trials == 0 {
        return Err(Error::OutOfRange("need at least one trial".into()));
    }
    system.cell.validate()?;
    let ofdm = match &system.fading {
        Fading::Flat => OfdmConfig {
            n_fft: 64,
            n_cp: 16,
            m_active: 2,
            subcarrier_spacing: 15e3,
            oversampling: 1,
        },
        // two adjacent subcarriers of the real numerology
        Fading::Multipath { ofdm, .. } => OfdmConfig {
            m_active: 2,
            ..ofdm.clone()
        },
    };
    let map = build_fsk_map(1, 1, 2)?;
    let votes: Vec<SignVector> = (0..k)
        .map(|e| SignVector::filled(1, if e < k_plus { 1 } else { -1 }))
        .collect();
    let fixed_powers = match system.placement {
        Placement::Deterministic => Some(
            ed_link_distances(&system.cell)
                .iter()
                .map(|&d| received_power(d, &system.cell))
                .collect::<Result<Vec<_>>>()?,
        ),
        Placement::Random => None,
    };

    let outcomes: Vec<Result<TrialOutcome>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let powers = match &fixed_powers {
                Some(p) => p.clone(),
                None => {
                    let mut rng = substream(seed, Domain::Placement, point, t);
                    (0..k)
                        .map(|_| {
                            received_power(
                                sample_link_distance(&system.cell, &mut rng),
                                &system.cell,
                            )
                        })
                        .collect::<Result<Vec<_>>>()?
                }
            };
            let mut ch_rng = substream(seed, Domain::Channel, point, t);
            let mut tm_rng = substream(seed, Domain::Timing, point, t);
            let (channels, n_err) = match &system.fading {
                Fading::Flat => {
                    let flat = SampledProfile { powers: vec![1.0] };
                    let ch = (0..k)
                        .map(|_| flat.realize(&ofdm, &mut ch_rng))
                        .collect::<Result<Vec<ChannelRealization>>>()?;
                    (ch, 0)
                }
                Fading::Multipath {
                    profile,
                    t_sync,
                    timing,
                    n_err,
                    ..
                } => {
                    let ch = (0..k)
                        .map(|_| {
                            let off = crate::channel::draw_timing_offset(
                                *t_sync,
                                ofdm.sample_rate(),
                                *timing,
                                &mut tm_rng,
                            );
                            Ok(profile.realize(&ofdm, &mut ch_rng)?.with_timing_offset(off))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    (ch, *n_err)
                }
            };
            let mut enc_rng = substream(seed, Domain::Encode, point, t);
            let grids = votes
                .iter()
                .map(|v| fskmv_encode(v, &map, &mut enc_rng))
                .collect::<Result<Vec<_>>>()?;
            let mut noise_rng = substream(seed, Domain::Noise, point, t);
            let y = superpose_at_es(
                &grids,
                &powers,
                &channels,
                system.cell.noise_var,
                n_err,
                &ofdm,
                &mut noise_rng,
            )?;
            let delta = fskmv_metrics(&y, &map)?[0];
            let mut det_rng = substream(seed, Domain::Detector, point, t);
            let decision = random_sign(delta, &mut det_rng);
            Ok(TrialOutcome {
                flip: decision != 1,
                e_plus: y.energy(0, 0),
                e_minus: y.energy(0, 1),
            })
        })
        .collect();

    let mut flips = 0usize;
    let mut sum_plus = 0.0;
    let mut sum_minus = 0.0;
    for o in outcomes {
        let o = o?;
        flips += usize::from(o.flip);
        sum_plus += o.e_plus;
        sum_minus += o.e_minus;
    }
    let n = trials as f64;
    let prob = flips as f64 / n;
    Ok(McEstimate {
        trials,
        flips,
        prob,
        stderr: (prob * (1.0 - prob) / n).sqrt(),
        mean_e_plus: sum_plus / n,
        mean_e_minus: sum_minus / n,
    })
}
