//! Multipath Rayleigh fading, timing misalignment and superposition at the ES.
//!
//! A channel is a tapped delay line whose taps are placed at the nearest
//! sample delay of the profile and drawn as independent circularly-symmetric
//! complex Gaussians. As long as the tap span, the ED's arrival offset and the
//! receiver's early DFT window all fit inside the CP, each of them acts on a
//! subcarrier as a multiplication. The fast path in [`superpose_at_es`] uses
//! that shortcut; [`superpose_time_domain`] is the sample-level reference.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::{OfdmConfig, OfdmModem, ResourceGrid};

/// Power-delay profile of a tapped delay line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TapProfile {
    pub delays_ns: Vec<f64>,
    pub powers_db: Vec<f64>,
}

impl TapProfile {
    /// Extended Pedestrian A (3GPP TS 36.101 Annex B.2).
    pub fn epa() -> Self {
        Self {
            delays_ns: vec![0.0, 30.0, 70.0, 90.0, 110.0, 190.0, 410.0],
            powers_db: vec![0.0, -1.0, -2.0, -3.0, -8.0, -17.2, -20.8],
        }
    }

    /// Single tap, i.e. frequency-flat Rayleigh fading.
    pub fn flat() -> Self {
        Self {
            delays_ns: vec![0.0],
            powers_db: vec![0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delays_ns.is_empty() || self.delays_ns.len() != self.powers_db.len() {
            return Err(Error::config(
                "channel.profile",
                "delays_ns and powers_db must be nonempty and of equal length",
            ));
        }
        if self.delays_ns[0] != 0.0 {
            return Err(Error::config(
                "channel.profile.delays_ns",
                "first delay must be 0",
            ));
        }
        if self.delays_ns.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config(
                "channel.profile.delays_ns",
                "delays must be strictly increasing",
            ));
        }
        if self
            .powers_db
            .iter()
            .chain(&self.delays_ns)
            .any(|v| !v.is_finite())
        {
            return Err(Error::config("channel.profile", "values must be finite"));
        }
        Ok(())
    }

    /// Map the profile onto the sample grid. Taps that round to the same
    /// sample index add their powers; the result sums to one.
    pub fn sampled(&self, sample_rate: f64) -> Result<SampledProfile> {
        self.validate()?;
        let idx: Vec<usize> = self
            .delays_ns
            .iter()
            .map(|d| (d * 1e-9 * sample_rate).round() as usize)
            .collect();
        let len = idx.iter().max().copied().unwrap_or(0) + 1;
        let mut powers = vec![0.0; len];
        for (&i, &db) in idx.iter().zip(&self.powers_db) {
            powers[i] += 10f64.powf(db / 10.0);
        }
        let total: f64 = powers.iter().sum();
        powers.iter_mut().for_each(|p| *p /= total);
        Ok(SampledProfile { powers })
    }
}

/// Normalised tap powers indexed by sample delay.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledProfile {
    pub powers: Vec<f64>,
}

impl SampledProfile {
    /// Delay spread in samples (index of the last tap slot).
    pub fn spread(&self) -> usize {
        self.powers.len() - 1
    }

    pub fn realize<R: Rng + ?Sized>(
        &self,
        ofdm: &OfdmConfig,
        rng: &mut R,
    ) -> Result<ChannelRealization> {
        if self.spread() > ofdm.n_cp {
            return Err(Error::OutOfRange(format!(
                "channel delay spread of {} samples exceeds the CP of {} samples",
                self.spread(),
                ofdm.n_cp
            )));
        }
        let taps: Vec<Complex64> = self
            .powers
            .iter()
            .map(|&p| {
                let s = (p / 2.0).sqrt();
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re * s, im * s)
            })
            .collect();
        let freq_response = freq_response(&taps, ofdm);
        Ok(ChannelRealization {
            taps,
            freq_response,
            timing_offset: 0.0,
        })
    }
}

/// One ED's channel for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Complex gain per sample delay.
    pub taps: Vec<Complex64>,
    /// Channel response at each active subcarrier, excluding the timing offset.
    pub freq_response: Vec<Complex64>,
    /// Arrival delay at the ES in samples.
    pub timing_offset: f64,
}

impl ChannelRealization {
    /// Ideal unit channel.
    pub fn identity(ofdm: &OfdmConfig) -> Self {
        Self::from_taps(vec![Complex64::new(1.0, 0.0)], ofdm)
    }

    pub fn from_taps(taps: Vec<Complex64>, ofdm: &OfdmConfig) -> Self {
        let freq_response = freq_response(&taps, ofdm);
        Self {
            taps,
            freq_response,
            timing_offset: 0.0,
        }
    }

    pub fn with_timing_offset(mut self, offset: f64) -> Self {
        self.timing_offset = offset;
        self
    }

    /// Response seen by the ES on each subcarrier, including this ED's arrival
    /// delay and the receiver's early window of `n_err` samples.
    pub fn effective_response(&self, ofdm: &OfdmConfig, n_err: usize) -> Vec<Complex64> {
        let delay = self.timing_offset + n_err as f64;
        if delay == 0.0 {
            return self.freq_response.clone();
        }
        self.freq_response
            .iter()
            .zip(ofdm.delay_ramp(delay))
            .map(|(h, r)| h * r)
            .collect()
    }
}

/// Draw a channel from `profile` for the numerology in `ofdm`.
pub fn realize_channel<R: Rng + ?Sized>(
    profile: &TapProfile,
    ofdm: &OfdmConfig,
    rng: &mut R,
) -> Result<ChannelRealization> {
    profile.sampled(ofdm.sample_rate())?.realize(ofdm, rng)
}

/// `n_fft`-point DFT of the zero-padded taps, read at the active subcarriers.
pub fn freq_response(taps: &[Complex64], ofdm: &OfdmConfig) -> Vec<Complex64> {
    let n = ofdm.n_fft as f64;
    (0..ofdm.m_active)
        .map(|l| {
            let lp = ofdm.signed_index(l) as f64;
            taps.iter()
                .enumerate()
                .map(|(j, g)| {
                    g * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * lp * j as f64 / n)
                })
                .sum()
        })
        .collect()
}

/// How ED arrival offsets are quantised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingMode {
    /// Offsets rounded to whole samples.
    #[default]
    Integer,
    /// Offsets kept fractional and applied as a phase ramp.
    Fractional,
}

/// Arrival offset in samples, uniform over `[0, t_sync · f_s]`.
pub fn draw_timing_offset<R: Rng + ?Sized>(
    t_sync: f64,
    sample_rate: f64,
    mode: TimingMode,
    rng: &mut R,
) -> f64 {
    let u: f64 = rng.random();
    let x = u * t_sync * sample_rate;
    match mode {
        TimingMode::Integer => x.round(),
        TimingMode::Fractional => x,
    }
}

/// Largest arrival offset `draw_timing_offset` can return, in whole samples.
pub fn max_timing_offset_samples(t_sync: f64, sample_rate: f64, mode: TimingMode) -> usize {
    let x = t_sync * sample_rate;
    match mode {
        TimingMode::Integer => x.round() as usize,
        TimingMode::Fractional => x.ceil() as usize,
    }
}

fn check_inputs(
    grids: &[ResourceGrid],
    powers: &[f64],
    channels: &[ChannelRealization],
    ofdm: &OfdmConfig,
    n_err: usize,
) -> Result<()> {
    if grids.len() != powers.len() || grids.len() != channels.len() {
        return Err(Error::Dimension(format!(
            "{} grids, {} powers, {} channels",
            grids.len(),
            powers.len(),
            channels.len()
        )));
    }
    let first = grids
        .first()
        .ok_or_else(|| Error::Dimension("no transmitters".into()))?;
    for g in grids {
        if g.num_subcarriers() != ofdm.m_active || g.num_symbols() != first.num_symbols() {
            return Err(Error::Dimension(format!(
                "grid is {}x{}, expected {}x{}",
                g.num_symbols(),
                g.num_subcarriers(),
                first.num_symbols(),
                ofdm.m_active
            )));
        }
    }
    for c in channels {
        if c.freq_response.len() != ofdm.m_active {
            return Err(Error::Dimension(
                "channel response length differs from M".into(),
            ));
        }
        let used = c.taps.len().saturating_sub(1) + c.timing_offset.ceil() as usize + n_err;
        if used > ofdm.n_cp {
            return Err(Error::OutOfRange(format!(
                "delay spread + timing offset + window offset = {used} samples exceeds the CP of {}",
                ofdm.n_cp
            )));
        }
    }
    Ok(())
}

/// Draw complex AWGN of variance `noise_var` per resource element.
pub fn awgn_grid<R: Rng + ?Sized>(
    symbols: usize,
    subcarriers: usize,
    noise_var: f64,
    rng: &mut R,
) -> ResourceGrid {
    let mut w = ResourceGrid::zeros(symbols, subcarriers);
    if noise_var > 0.0 {
        let s = (noise_var / 2.0).sqrt();
        for z in w.as_mut_slice() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *z = Complex64::new(re * s, im * s);
        }
    }
    w
}

/// Received grid `Y = Σ_k √P_k · h_k · x_k + w` with timing offsets applied
/// as per-subcarrier phase ramps. The channel is held constant over the `S`
/// OFDM symbols. Noise is drawn from `rng` before anything else, so two calls
/// that differ only in offsets see the same noise.
pub fn superpose_at_es<R: Rng + ?Sized>(
    grids: &[ResourceGrid],
    powers: &[f64],
    channels: &[ChannelRealization],
    noise_var: f64,
    n_err: usize,
    ofdm: &OfdmConfig,
    rng: &mut R,
) -> Result<ResourceGrid> {
    let s = grids.first().map_or(0, ResourceGrid::num_symbols);
    let noise = awgn_grid(s, ofdm.m_active, noise_var, rng);
    superpose_with_noise(grids, powers, channels, &noise, n_err, ofdm)
}

/// [`superpose_at_es`] with an explicit noise grid. The noise is part of the
/// received waveform, so it is rotated by the receiver window like the
/// signals are.
pub fn superpose_with_noise(
    grids: &[ResourceGrid],
    powers: &[f64],
    channels: &[ChannelRealization],
    noise: &ResourceGrid,
    n_err: usize,
    ofdm: &OfdmConfig,
) -> Result<ResourceGrid> {
    check_inputs(grids, powers, channels, ofdm, n_err)?;
    let s = grids[0].num_symbols();
    if noise.num_symbols() != s || noise.num_subcarriers() != ofdm.m_active {
        return Err(Error::Dimension(
            "noise grid does not match the resource grid".into(),
        ));
    }
    let mut y = noise.clone();
    for ((grid, &p), ch) in grids.iter().zip(powers).zip(channels) {
        let amp = p.sqrt();
        let h = ch.effective_response(ofdm, 0);
        for t in 0..s {
            for ((acc, x), hl) in y.row_mut(t).iter_mut().zip(grid.row(t)).zip(&h) {
                if x.re != 0.0 || x.im != 0.0 {
                    *acc += amp * hl * x;
                }
            }
        }
    }
    if n_err > 0 {
        let ramp = ofdm.delay_ramp(n_err as f64);
        for t in 0..s {
            for (acc, r) in y.row_mut(t).iter_mut().zip(&ramp) {
                *acc *= r;
            }
        }
    }
    Ok(y)
}

/// Sample-level reference: modulate each ED's symbols, delay by its integer
/// arrival offset, convolve with its taps, sum with the time-domain noise and
/// demodulate with the DFT window `n_err` samples early.
pub fn superpose_time_domain(
    grids: &[ResourceGrid],
    powers: &[f64],
    channels: &[ChannelRealization],
    noise: Option<&ResourceGrid>,
    n_err: usize,
    modem: &OfdmModem,
) -> Result<ResourceGrid> {
    let ofdm = modem.config();
    check_inputs(grids, powers, channels, ofdm, n_err)?;
    if channels.iter().any(|c| c.timing_offset.fract() != 0.0) {
        return Err(Error::OutOfRange(
            "time-domain reference needs integer timing offsets".into(),
        ));
    }
    let len = ofdm.n_cp + ofdm.n_fft;
    let s = grids[0].num_symbols();
    let mut rows = Vec::with_capacity(s);
    for t in 0..s {
        let mut rx = match noise {
            Some(w) => modem.modulate(w.row(t))?,
            None => vec![Complex64::new(0.0, 0.0); len],
        };
        for ((grid, &p), ch) in grids.iter().zip(powers).zip(channels) {
            let tx = modem.modulate(grid.row(t))?;
            let amp = p.sqrt();
            let delay = ch.timing_offset as usize;
            for (n, acc) in rx.iter_mut().enumerate() {
                let mut v = Complex64::new(0.0, 0.0);
                for (j, g) in ch.taps.iter().enumerate() {
                    if let Some(src) = n.checked_sub(delay + j) {
                        v += g * tx[src];
                    }
                }
                *acc += amp * v;
            }
        }
        rows.push(modem.demodulate(&rx, n_err)?);
    }
    ResourceGrid::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};

    fn lte_rate() -> f64 {
        OfdmConfig::paper().sample_rate()
    }

    fn random_grid(s: usize, m: usize, seed: u64) -> ResourceGrid {
        let mut rng = substream(seed, Domain::Encode, 0, 0);
        awgn_grid(s, m, 1.0, &mut rng)
    }

    #[test]
    fn epa_maps_to_expected_sample_delays() {
        let sp = TapProfile::epa().sampled(lte_rate()).unwrap();
        let idx: Vec<usize> = TapProfile::epa()
            .delays_ns
            .iter()
            .map(|d| (d * 1e-9 * lte_rate()).round() as usize)
            .collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 3, 6, 13]);
        assert_eq!(sp.powers.len(), 14);
        assert!((sp.powers.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // colliding 90 ns and 110 ns taps add up
        let lin = |db: f64| 10f64.powf(db / 10.0);
        let total: f64 = TapProfile::epa().powers_db.iter().map(|&d| lin(d)).sum();
        assert!((sp.powers[3] - (lin(-3.0) + lin(-8.0)) / total).abs() < 1e-12);
        assert_eq!(sp.powers[4], 0.0);
    }

    #[test]
    fn invalid_profiles_rejected() {
        let p = TapProfile {
            delays_ns: vec![0.0, 10.0, 5.0],
            powers_db: vec![0.0; 3],
        };
        assert!(p.validate().is_err());
        let p = TapProfile {
            delays_ns: vec![5.0],
            powers_db: vec![0.0],
        };
        assert!(p.validate().is_err());
        let p = TapProfile {
            delays_ns: vec![0.0, 1e5],
            powers_db: vec![0.0, 0.0],
        };
        let mut rng = substream(0, Domain::Channel, 0, 0);
        assert!(realize_channel(&p, &OfdmConfig::desk(), &mut rng).is_err());
    }

    #[test]
    fn flat_profile_is_flat() {
        let cfg = OfdmConfig::desk();
        let mut rng = substream(0, Domain::Channel, 0, 0);
        let ch = realize_channel(&TapProfile::flat(), &cfg, &mut rng).unwrap();
        let m0 = ch.freq_response[0];
        assert!(ch.freq_response.iter().all(|h| (h - m0).norm() < 1e-15));
    }

    #[test]
    fn unit_average_power() {
        let cfg = OfdmConfig::paper();
        let sp = TapProfile::epa().sampled(cfg.sample_rate()).unwrap();
        let n = 100_000;
        let mut acc = 0.0;
        for i in 0..n {
            let mut rng = substream(5, Domain::Channel, i, 0);
            let taps: f64 = sp
                .realize(&cfg, &mut rng)
                .unwrap()
                .taps
                .iter()
                .map(|t| t.norm_sqr())
                .sum();
            acc += taps;
        }
        let mean = acc / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn two_tap_response_is_analytic() {
        let cfg = OfdmConfig::desk();
        let h = freq_response(
            &[Complex64::new(1.0, 0.0); 2].map(|z| z / 2f64.sqrt()),
            &cfg,
        );
        for (l, hl) in h.iter().enumerate() {
            let lp = cfg.signed_index(l) as f64;
            let expected = 1.0 + (2.0 * std::f64::consts::PI * lp / cfg.n_fft as f64).cos();
            assert!((hl.norm_sqr() - expected).abs() < 1e-12);
        }
        let ones = freq_response(&[Complex64::new(1.0, 0.0)], &cfg);
        assert!(ones
            .iter()
            .all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn fast_path_matches_time_domain_reference() {
        let cfg = OfdmConfig::desk();
        let modem = OfdmModem::new(&cfg).unwrap();
        let sp = TapProfile::epa().sampled(cfg.sample_rate() * 8.0).unwrap();
        let k = 4;
        let grids: Vec<_> = (0..k)
            .map(|i| random_grid(2, cfg.m_active, 10 + i))
            .collect();
        let powers = vec![1.0, 0.3, 0.05, 0.7];
        let channels: Vec<_> = (0..k)
            .map(|i| {
                let mut rng = substream(3, Domain::Channel, 0, i);
                sp.realize(&cfg, &mut rng)
                    .unwrap()
                    .with_timing_offset(i as f64)
            })
            .collect();
        let noise = random_grid(2, cfg.m_active, 99);
        for n_err in [0, 3] {
            let fast =
                superpose_with_noise(&grids, &powers, &channels, &noise, n_err, &cfg).unwrap();
            let slow =
                superpose_time_domain(&grids, &powers, &channels, Some(&noise), n_err, &modem)
                    .unwrap();
            let scale = fast.as_slice().iter().map(|z| z.norm()).fold(0.0, f64::max);
            let err = fast
                .as_slice()
                .iter()
                .zip(slow.as_slice())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-9 * scale, "n_err={n_err}: {err}");
        }
    }

    #[test]
    fn single_ed_flat_unit_channel_no_noise() {
        let cfg = OfdmConfig::desk();
        let x = random_grid(1, cfg.m_active, 1);
        let mut rng = substream(0, Domain::Noise, 0, 0);
        let y = superpose_at_es(
            std::slice::from_ref(&x),
            &[0.25],
            &[ChannelRealization::identity(&cfg)],
            0.0,
            0,
            &cfg,
            &mut rng,
        )
        .unwrap();
        for (a, b) in y.as_slice().iter().zip(x.as_slice()) {
            assert!((a - 0.5 * b).norm() < 1e-15);
        }
    }

    #[test]
    fn noise_only_energy_averages_to_noise_var() {
        let cfg = OfdmConfig::desk();
        let zero = ResourceGrid::zeros(10, cfg.m_active);
        let mut rng = substream(0, Domain::Noise, 0, 0);
        let mut acc = 0.0;
        let reps = 100;
        for _ in 0..reps {
            let y = superpose_at_es(
                std::slice::from_ref(&zero),
                &[1.0],
                &[ChannelRealization::identity(&cfg)],
                0.3,
                0,
                &cfg,
                &mut rng,
            )
            .unwrap();
            acc += y.total_energy();
        }
        let mean = acc / (reps * 10 * cfg.m_active) as f64;
        assert!((mean - 0.3).abs() < 0.01, "{mean}");
    }

    #[test]
    fn receiver_window_offset_preserves_energy() {
        let cfg = OfdmConfig::desk();
        let sp = TapProfile::epa().sampled(cfg.sample_rate()).unwrap();
        let grids: Vec<_> = (0..5).map(|i| random_grid(1, cfg.m_active, i)).collect();
        let channels: Vec<_> = (0..5)
            .map(|i| {
                sp.realize(&cfg, &mut substream(1, Domain::Channel, 0, i))
                    .unwrap()
                    .with_timing_offset((i % 3) as f64)
            })
            .collect();
        let powers = vec![1.0; 5];
        let a = superpose_at_es(
            &grids,
            &powers,
            &channels,
            0.1,
            0,
            &cfg,
            &mut substream(2, Domain::Noise, 0, 0),
        )
        .unwrap();
        let b = superpose_at_es(
            &grids,
            &powers,
            &channels,
            0.1,
            3,
            &cfg,
            &mut substream(2, Domain::Noise, 0, 0),
        )
        .unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x.norm_sqr() - y.norm_sqr()).abs() < 1e-12 * x.norm_sqr().max(1.0));
        }
    }

    #[test]
    fn single_ed_timing_offset_preserves_energy() {
        let cfg = OfdmConfig::desk();
        let x = random_grid(1, cfg.m_active, 4);
        let ch = realize_channel(
            &TapProfile::epa(),
            &cfg,
            &mut substream(1, Domain::Channel, 0, 0),
        )
        .unwrap();
        let a = superpose_at_es(
            std::slice::from_ref(&x),
            &[1.0],
            std::slice::from_ref(&ch),
            0.0,
            0,
            &cfg,
            &mut substream(0, Domain::Noise, 0, 0),
        )
        .unwrap();
        let b = superpose_at_es(
            &[x],
            &[1.0],
            &[ch.with_timing_offset(2.0)],
            0.0,
            3,
            &cfg,
            &mut substream(0, Domain::Noise, 0, 0),
        )
        .unwrap();
        for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((p.norm_sqr() - q.norm_sqr()).abs() < 1e-12);
        }
    }

    #[test]
    fn cp_budget_enforced() {
        let cfg = OfdmConfig::desk();
        let x = random_grid(1, cfg.m_active, 4);
        let ch = ChannelRealization::identity(&cfg).with_timing_offset(30.0);
        let mut rng = substream(0, Domain::Noise, 0, 0);
        assert!(superpose_at_es(&[x], &[1.0], &[ch], 0.0, 3, &cfg, &mut rng).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let cfg = OfdmConfig::desk();
        let x = random_grid(1, cfg.m_active, 4);
        let mut rng = substream(0, Domain::Noise, 0, 0);
        assert!(superpose_at_es(
            std::slice::from_ref(&x),
            &[1.0, 1.0],
            &[ChannelRealization::identity(&cfg)],
            0.0,
            0,
            &cfg,
            &mut rng
        )
        .is_err());
        let bad = random_grid(1, 10, 1);
        assert!(superpose_at_es(
            &[x, bad],
            &[1.0; 2],
            &[
                ChannelRealization::identity(&cfg),
                ChannelRealization::identity(&cfg)
            ],
            0.0,
            0,
            &cfg,
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn timing_offsets_stay_in_range() {
        let fs = lte_rate();
        let mut rng = substream(0, Domain::Timing, 0, 0);
        let mut seen = [false; 3];
        for _ in 0..1000 {
            let t = draw_timing_offset(55.6e-9, fs, TimingMode::Integer, &mut rng);
            assert!(t == t.round() && (0.0..=2.0).contains(&t));
            seen[t as usize] = true;
            let f = draw_timing_offset(55.6e-9, fs, TimingMode::Fractional, &mut rng);
            assert!((0.0..=55.6e-9 * fs).contains(&f));
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(
            max_timing_offset_samples(55.6e-9, fs, TimingMode::Integer),
            2
        );
    }
}
