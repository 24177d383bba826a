//! CP-OFDM modulation and demodulation, and PMEPR measurement.
//!
//! Active subcarrier `l ∈ 0..M` sits at signed frequency index
//! `l' = l - M/2`, i.e. the band `-M/2 ..= M/2 - 1` is contiguous and
//! includes DC. Both transforms are scaled by `1/√n_fft`, so the energy of an
//! OFDM body equals the energy of its subcarrier symbols.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmConfig {
    pub n_fft: usize,
    pub n_cp: usize,
    /// Number of active subcarriers `M`.
    pub m_active: usize,
    /// Subcarrier spacing in Hz.
    pub subcarrier_spacing: f64,
    /// Oversampling factor used when measuring PMEPR.
    pub oversampling: usize,
}

impl OfdmConfig {
    /// 256-point numerology used for the fast reference experiments.
    pub fn desk() -> Self {
        Self {
            n_fft: 256,
            n_cp: 32,
            m_active: 120,
            subcarrier_spacing: 15e3,
            oversampling: 4,
        }
    }

    /// LTE-like 20 MHz numerology: 1200 subcarriers at 15 kHz.
    pub fn paper() -> Self {
        Self {
            n_fft: 2048,
            n_cp: 144,
            m_active: 1200,
            subcarrier_spacing: 15e3,
            oversampling: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft == 0 {
            return Err(Error::config("ofdm.n_fft", "must be positive"));
        }
        if self.m_active == 0 || self.m_active > self.n_fft {
            return Err(Error::config(
                "ofdm.m_active",
                format!(
                    "must lie in [1, n_fft] (got {}, n_fft {})",
                    self.m_active, self.n_fft
                ),
            ));
        }
        if self.n_cp == 0 || self.n_cp >= self.n_fft {
            return Err(Error::config("ofdm.n_cp", "must lie in [1, n_fft)"));
        }
        if self.oversampling == 0 {
            return Err(Error::config("ofdm.oversampling", "must be at least 1"));
        }
        if !(self.subcarrier_spacing > 0.0) {
            return Err(Error::config("ofdm.subcarrier_spacing", "must be positive"));
        }
        Ok(())
    }

    pub fn sample_rate(&self) -> f64 {
        self.n_fft as f64 * self.subcarrier_spacing
    }

    /// Occupied bandwidth `M × spacing`.
    pub fn bandwidth(&self) -> f64 {
        self.m_active as f64 * self.subcarrier_spacing
    }

    /// OFDM symbol duration including the CP, in seconds.
    pub fn symbol_duration(&self) -> f64 {
        (self.n_fft + self.n_cp) as f64 / self.sample_rate()
    }

    /// Signed frequency index of active subcarrier `l`.
    pub fn signed_index(&self, l: usize) -> i64 {
        l as i64 - (self.m_active / 2) as i64
    }

    /// FFT bin of active subcarrier `l` in a transform of `size` points.
    pub fn bin(&self, l: usize, size: usize) -> usize {
        self.signed_index(l).rem_euclid(size as i64) as usize
    }

    /// Per-subcarrier response of a pure delay of `delay` samples,
    /// `exp(-j 2π l' delay / n_fft)`.
    pub fn delay_ramp(&self, delay: f64) -> Vec<Complex64> {
        (0..self.m_active)
            .map(|l| {
                let ph = -2.0 * PI * self.signed_index(l) as f64 * delay / self.n_fft as f64;
                Complex64::from_polar(1.0, ph)
            })
            .collect()
    }
}

/// `S × M` frequency-domain symbols of one communication round.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceGrid {
    symbols: usize,
    subcarriers: usize,
    data: Vec<Complex64>,
}

impl ResourceGrid {
    pub fn zeros(symbols: usize, subcarriers: usize) -> Self {
        Self {
            symbols,
            subcarriers,
            data: vec![Complex64::new(0.0, 0.0); symbols * subcarriers],
        }
    }

    pub fn from_rows(rows: Vec<Vec<Complex64>>) -> Result<Self> {
        let symbols = rows.len();
        let subcarriers = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != subcarriers) {
            return Err(Error::Dimension("ragged resource grid rows".into()));
        }
        Ok(Self {
            symbols,
            subcarriers,
            data: rows.into_iter().flatten().collect(),
        })
    }

    /// Number of OFDM symbols `S`.
    pub fn num_symbols(&self) -> usize {
        self.symbols
    }

    /// Number of subcarriers `M`.
    pub fn num_subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn get(&self, t: usize, f: usize) -> Complex64 {
        self.data[t * self.subcarriers + f]
    }

    pub fn set(&mut self, t: usize, f: usize, v: Complex64) {
        self.data[t * self.subcarriers + f] = v;
    }

    pub fn energy(&self, t: usize, f: usize) -> f64 {
        self.get(t, f).norm_sqr()
    }

    pub fn row(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.subcarriers..(t + 1) * self.subcarriers]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [Complex64] {
        &mut self.data[t * self.subcarriers..(t + 1) * self.subcarriers]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Complex64]> {
        self.data.chunks_exact(self.subcarriers.max(1))
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn total_energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Cached FFT plans for one numerology.
#[derive(Clone)]
pub struct OfdmModem {
    cfg: OfdmConfig,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    inverse_os: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for OfdmModem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OfdmModem").field("cfg", &self.cfg).finish()
    }
}

impl OfdmModem {
    pub fn new(cfg: &OfdmConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg: cfg.clone(),
            forward: planner.plan_fft_forward(cfg.n_fft),
            inverse: planner.plan_fft_inverse(cfg.n_fft),
            inverse_os: planner.plan_fft_inverse(cfg.n_fft * cfg.oversampling),
        })
    }

    pub fn config(&self) -> &OfdmConfig {
        &self.cfg
    }

    fn check_row(&self, row: &[Complex64]) -> Result<()> {
        if row.len() != self.cfg.m_active {
            return Err(Error::Dimension(format!(
                "expected {} subcarrier symbols, got {}",
                self.cfg.m_active,
                row.len()
            )));
        }
        Ok(())
    }

    /// CP-free time-domain body of one OFDM symbol.
    pub fn body(&self, row: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_row(row)?;
        let n = self.cfg.n_fft;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (l, &x) in row.iter().enumerate() {
            buf[self.cfg.bin(l, n)] = x;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / (n as f64).sqrt();
        buf.iter_mut().for_each(|v| *v *= scale);
        Ok(buf)
    }

    /// One OFDM symbol with its cyclic prefix, `n_cp + n_fft` samples.
    pub fn modulate(&self, row: &[Complex64]) -> Result<Vec<Complex64>> {
        let body = self.body(row)?;
        let n = self.cfg.n_fft;
        let mut out = Vec::with_capacity(n + self.cfg.n_cp);
        out.extend_from_slice(&body[n - self.cfg.n_cp..]);
        out.extend_from_slice(&body);
        Ok(out)
    }

    /// Demodulate with the DFT window starting `window_offset` samples before
    /// the end of the CP.
    pub fn demodulate(
        &self,
        samples: &[Complex64],
        window_offset: usize,
    ) -> Result<Vec<Complex64>> {
        let n = self.cfg.n_fft;
        let cp = self.cfg.n_cp;
        if window_offset > cp {
            return Err(Error::OutOfRange(format!(
                "window offset {window_offset} outside the CP window [0, {cp}]"
            )));
        }
        if samples.len() < n + cp {
            return Err(Error::Dimension(format!(
                "expected at least {} samples, got {}",
                n + cp,
                samples.len()
            )));
        }
        let start = cp - window_offset;
        let mut buf = samples[start..start + n].to_vec();
        self.forward.process(&mut buf);
        let scale = 1.0 / (n as f64).sqrt();
        Ok((0..self.cfg.m_active)
            .map(|l| buf[self.cfg.bin(l, n)] * scale)
            .collect())
    }

    /// Peak-to-mean envelope power ratio of one OFDM symbol, measured on the
    /// `oversampling`-times interpolated body.
    pub fn pmepr(&self, row: &[Complex64]) -> Result<f64> {
        self.check_row(row)?;
        let size = self.cfg.n_fft * self.cfg.oversampling;
        let mut buf = vec![Complex64::new(0.0, 0.0); size];
        for (l, &x) in row.iter().enumerate() {
            buf[self.cfg.bin(l, size)] = x;
        }
        self.inverse_os.process(&mut buf);
        let (peak, total) = buf.iter().fold((0.0f64, 0.0f64), |(p, s), z| {
            let e = z.norm_sqr();
            (p.max(e), s + e)
        });
        if total == 0.0 {
            return Err(Error::OutOfRange(
                "PMEPR of an all-zero symbol is undefined".into(),
            ));
        }
        Ok(peak / (total / size as f64))
    }
}

pub fn ofdm_modulate(row: &[Complex64], cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    OfdmModem::new(cfg)?.modulate(row)
}

pub fn ofdm_demodulate(
    samples: &[Complex64],
    cfg: &OfdmConfig,
    window_offset: usize,
) -> Result<Vec<Complex64>> {
    OfdmModem::new(cfg)?.demodulate(samples, window_offset)
}

pub fn pmepr(row: &[Complex64], cfg: &OfdmConfig) -> Result<f64> {
    OfdmModem::new(cfg)?.pmepr(row)
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}
