use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{
    convergence_bound, effective_snr, flip_prob, flip_prob_given_split, mc_flip_prob, BoundInputs,
    McSystem,
};
use crate::cli::config::ExperimentConfig;
use crate::error::Result;
use crate::geometry::{lambda_for, lambda_param, CellConfig};
use crate::learning::run_training;
use crate::oac::{
    build_fsk_map, fskmv_encode_with, obda_encode, ObdaPrecoding, Randomization, SignVector,
    FSK_SYMBOL_ENERGY,
};
use crate::rng::{substream, Domain};
use crate::waveform::{to_db, OfdmConfig, OfdmModem};

/// Write `rows` as CSV under a `#` line carrying the command, config hash
/// and seed.
pub fn write_csv<T: Serialize>(
    path: &Path,
    command: &str,
    cfg: &ExperimentConfig,
    rows: &[T],
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut file = File::create(path)?;
    writeln!(
        file,
        "# fskmv {command} config_sha256={} seed={}",
        cfg.hash()?,
        cfg.seed
    )?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LambdaRow {
    pub r_max: f64,
    pub alpha_eff: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FlipRow {
    pub alpha_eff: f64,
    pub num_eds: usize,
    pub q_i: f64,
    pub lambda: f64,
    pub xi: f64,
    pub p_i: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BoundRow {
    pub rounds: usize,
    pub num_eds: usize,
    pub alpha_eff: f64,
    pub xi: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BudgetRow {
    pub scheme: &'static str,
    pub q: usize,
    pub m_active: usize,
    pub symbols: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeTables {
    pub lambda: Vec<LambdaRow>,
    pub flip: Vec<FlipRow>,
    pub bound: Vec<BoundRow>,
    pub budget: Vec<BudgetRow>,
}

fn xi_for(cell: &CellConfig, alpha_eff: f64) -> f64 {
    let lam = lambda_for(cell.r_min, cell.r_max, cell.r_ref, alpha_eff);
    effective_snr(FSK_SYMBOL_ENERGY, lam, cell.noise_var)
}

/// `λ` over cell size and effective path loss, flip probabilities and
/// convergence-bound curves.
pub fn analyze(cfg: &ExperimentConfig) -> Result<AnalyzeTables> {
    let c = &cfg.cell;
    let a = &cfg.analysis;
    let mut lambda = Vec::new();
    for &alpha_eff in &a.alpha_eff_values {
        for &r_max in &a.r_max_values {
            lambda.push(LambdaRow {
                r_max,
                alpha_eff,
                lambda: lambda_for(c.r_min, r_max, c.r_ref, alpha_eff),
            });
        }
    }
    let mut flip = Vec::new();
    let mut bound = Vec::new();
    for &alpha_eff in &a.alpha_eff_values {
        let lam = lambda_for(c.r_min, c.r_max, c.r_ref, alpha_eff);
        let xi = xi_for(c, alpha_eff);
        for &k in &a.k_values {
            for &q in &a.q_values {
                flip.push(FlipRow {
                    alpha_eff,
                    num_eds: k,
                    q_i: q,
                    lambda: lam,
                    xi,
                    p_i: flip_prob(q, k, xi)?,
                });
            }
            for &n in &a.rounds_values {
                let b = BoundInputs {
                    rounds: n,
                    gamma: a.gamma,
                    l1_smoothness: a.l1_smoothness,
                    sigma1: a.sigma1,
                    f0_minus_fstar: a.f0_minus_fstar,
                    num_eds: k,
                    xi,
                };
                bound.push(BoundRow {
                    rounds: n,
                    num_eds: k,
                    alpha_eff,
                    xi,
                    bound: convergence_bound(&b)?,
                });
            }
        }
    }
    let rb = cfg.resource_budget()?;
    let budget = vec![
        BudgetRow {
            scheme: "fsk_mv",
            q: rb.q,
            m_active: cfg.ofdm.m_active,
            symbols: rb.fsk_symbols,
        },
        BudgetRow {
            scheme: "obda",
            q: rb.q,
            m_active: cfg.ofdm.m_active,
            symbols: rb.obda_symbols,
        },
    ];
    Ok(AnalyzeTables {
        lambda,
        flip,
        bound,
        budget,
    })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DetectorRow {
    pub alpha_eff: f64,
    pub snr_db: f64,
    pub num_eds: usize,
    pub k_plus: usize,
    pub lambda: f64,
    pub xi: f64,
    pub trials: usize,
    pub analytic: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub mu_plus: f64,
    pub mu_minus: f64,
    pub mean_e_plus: f64,
    pub mean_e_minus: f64,
}

/// Analytic against Monte Carlo flip probability over `K⁺`, SNR and `α_eff`.
pub fn detector(cfg: &ExperimentConfig) -> Result<Vec<DetectorRow>> {
    let d = &cfg.detector;
    let fading = cfg.detector_fading()?;
    let k = cfg.cell.num_eds;
    let mut rows = Vec::new();
    let mut point = 0u64;
    for &alpha_eff in &d.alpha_eff_values {
        for &snr_db in &d.snr_db_values {
            let cell = CellConfig {
                beta: cfg.cell.alpha - alpha_eff,
                noise_var: 10f64.powf(-snr_db / 10.0),
                ..cfg.cell.clone()
            };
            let lam = lambda_param(&cell);
            let xi = effective_snr(FSK_SYMBOL_ENERGY, lam, cell.noise_var);
            let system = McSystem {
                cell: cell.clone(),
                placement: cfg.detector_placement(),
                fading: fading.clone(),
            };
            for &kp in &d.k_plus_values {
                let est = mc_flip_prob(&system, kp, d.trials, cfg.seed, point)?;
                point += 1;
                rows.push(DetectorRow {
                    alpha_eff,
                    snr_db,
                    num_eds: k,
                    k_plus: kp,
                    lambda: lam,
                    xi,
                    trials: est.trials,
                    analytic: flip_prob_given_split(k, kp, xi)?,
                    empirical: est.prob,
                    stderr: est.stderr,
                    mu_plus: FSK_SYMBOL_ENERGY * kp as f64 * lam + cell.noise_var,
                    mu_minus: FSK_SYMBOL_ENERGY * (k - kp) as f64 * lam + cell.noise_var,
                    mean_e_plus: est.mean_e_plus,
                    mean_e_minus: est.mean_e_minus,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RoundRow {
    pub round: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub disagreement: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LocalLossRow {
    pub ed: usize,
    pub distance: f64,
    pub loss: f64,
}

/// Train with the configured scheme; per-round metrics and final local
/// losses.
pub fn train(cfg: &ExperimentConfig) -> Result<(Vec<RoundRow>, Vec<LocalLossRow>)> {
    let mut tc = cfg.train.clone();
    tc.seed = cfg.seed;
    let out = run_training(&cfg.task, &tc, &cfg.air_interface()?)?;
    let rounds = out
        .history
        .iter()
        .map(|r| RoundRow {
            round: r.round,
            accuracy: r.accuracy,
            loss: r.loss,
            disagreement: r.disagreement,
        })
        .collect();
    let local = out
        .local_losses
        .iter()
        .enumerate()
        .map(|(ed, &(distance, loss))| LocalLossRow { ed, distance, loss })
        .collect();
    Ok((rounds, local))
}

/// Transmit-symbol families compared by [`pmepr`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmeprScheme {
    /// All EDs' votes equal, QPSK randomization.
    FskRandomized,
    /// All votes equal, every active tone in phase.
    FskUnrandomized,
    /// OBDA QPSK with votes biased towards `+1`.
    ObdaCorrelated,
    /// OBDA QPSK with fair votes.
    ObdaRandom,
    /// Random QPSK on as many contiguous tones as FSK-MV uses.
    QpskReference,
}

impl PmeprScheme {
    pub const ALL: [PmeprScheme; 5] = [
        PmeprScheme::FskRandomized,
        PmeprScheme::FskUnrandomized,
        PmeprScheme::ObdaCorrelated,
        PmeprScheme::ObdaRandom,
        PmeprScheme::QpskReference,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PmeprScheme::FskRandomized => "fsk_mv_randomized",
            PmeprScheme::FskUnrandomized => "fsk_mv_unrandomized",
            PmeprScheme::ObdaCorrelated => "obda_correlated",
            PmeprScheme::ObdaRandom => "obda_random",
            PmeprScheme::QpskReference => "qpsk_reference",
        }
    }
}

/// One frequency-domain OFDM symbol of `scheme`.
pub fn pmepr_symbol<R: Rng + ?Sized>(
    scheme: PmeprScheme,
    ofdm: &OfdmConfig,
    obda_bias: f64,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    let m = ofdm.m_active;
    let half = m / 2;
    Ok(match scheme {
        PmeprScheme::FskRandomized | PmeprScheme::FskUnrandomized => {
            let map = build_fsk_map(half, 1, m)?;
            let r = if scheme == PmeprScheme::FskRandomized {
                Randomization::Qpsk
            } else {
                Randomization::None
            };
            fskmv_encode_with(&SignVector::filled(half, 1), &map, r, rng)?
                .row(0)
                .to_vec()
        }
        PmeprScheme::ObdaCorrelated | PmeprScheme::ObdaRandom => {
            let p = if scheme == PmeprScheme::ObdaCorrelated {
                obda_bias
            } else {
                0.5
            };
            let v = (0..2 * m)
                .map(|_| if rng.random::<f64>() < p { 1 } else { -1 })
                .collect();
            obda_encode(&SignVector::new(v)?, 1, m, ObdaPrecoding::Blind, rng)?
                .row(0)
                .to_vec()
        }
        PmeprScheme::QpskReference => {
            let s = std::f64::consts::FRAC_1_SQRT_2 * FSK_SYMBOL_ENERGY.sqrt();
            (0..m)
                .map(|l| {
                    if l < half {
                        let re = if rng.random::<bool>() { s } else { -s };
                        let im = if rng.random::<bool>() { s } else { -s };
                        Complex64::new(re, im)
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect()
        }
    })
}

/// PMEPR samples (linear) of `symbols` OFDM symbols of one scheme.
pub fn pmepr_samples(
    scheme: PmeprScheme,
    ofdm: &OfdmConfig,
    symbols: usize,
    obda_bias: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let modem = OfdmModem::new(ofdm)?;
    let id = PmeprScheme::ALL
        .iter()
        .position(|&s| s == scheme)
        .unwrap_or(0) as u64;
    (0..symbols as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, Domain::Encode, id, i);
            modem.pmepr(&pmepr_symbol(scheme, ofdm, obda_bias, &mut rng)?)
        })
        .collect()
}

/// Smallest `x` in dB with empirical `P[PMEPR > x] <= p`.
pub fn ccdf_level_db(samples: &[f64], p: f64) -> f64 {
    let mut s: Vec<f64> = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let exceed = (p * n as f64).floor() as usize;
    to_db(s[n - 1 - exceed.min(n - 1)])
}

pub fn median_db(samples: &[f64]) -> f64 {
    let mut s: Vec<f64> = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let m = if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    };
    to_db(m)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CcdfRow {
    pub scheme: &'static str,
    pub threshold_db: f64,
    pub ccdf: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PmeprSummaryRow {
    pub scheme: &'static str,
    pub symbols: usize,
    pub median_db: f64,
    pub ccdf_1e3_db: f64,
    pub max_db: f64,
}

/// CCDF of the PMEPR per scheme, plus summary quantiles.
pub fn pmepr(cfg: &ExperimentConfig) -> Result<(Vec<CcdfRow>, Vec<PmeprSummaryRow>)> {
    let p = &cfg.pmepr;
    let ofdm = OfdmConfig {
        oversampling: p.oversampling,
        ..cfg.ofdm.clone()
    };
    let steps = (p.threshold_max_db / p.threshold_step_db).round() as usize;
    let mut ccdf = Vec::new();
    let mut summary = Vec::new();
    for scheme in PmeprScheme::ALL {
        let mut s = pmepr_samples(scheme, &ofdm, p.symbols, p.obda_bias, cfg.seed)?;
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        for i in 0..=steps {
            let th = i as f64 * p.threshold_step_db;
            let lin = 10f64.powf(th / 10.0);
            let above = s.len() - s.partition_point(|&x| x <= lin);
            ccdf.push(CcdfRow {
                scheme: scheme.name(),
                threshold_db: th,
                ccdf: above as f64 / n,
            });
        }
        summary.push(PmeprSummaryRow {
            scheme: scheme.name(),
            symbols: s.len(),
            median_db: median_db(&s),
            ccdf_1e3_db: ccdf_level_db(&s, 1e-3),
            max_db: to_db(*s.last().unwrap_or(&1.0)),
        });
    }
    Ok((ccdf, summary))
}

/// Run a subcommand and write its CSV files into `cfg.out`.
pub fn run(command: &str, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let dir = &cfg.out;
    let mut written = Vec::new();
    let mut put = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let path = dir.join(name);
        f(&path)?;
        written.push(path);
        Ok(())
    };
    match command {
        "analyze" => {
            let t = analyze(cfg)?;
            put("lambda.csv", &|p| write_csv(p, command, cfg, &t.lambda))?;
            put("flip_prob.csv", &|p| write_csv(p, command, cfg, &t.flip))?;
            put("bound.csv", &|p| write_csv(p, command, cfg, &t.bound))?;
            put("budget.csv", &|p| write_csv(p, command, cfg, &t.budget))?;
        }
        "detector" => {
            let rows = detector(cfg)?;
            put("detector.csv", &|p| write_csv(p, command, cfg, &rows))?;
        }
        "train" => {
            let (rounds, local) = train(cfg)?;
            put("train_rounds.csv", &|p| write_csv(p, command, cfg, &rounds))?;
            put("local_loss.csv", &|p| write_csv(p, command, cfg, &local))?;
        }
        "pmepr" => {
            let (ccdf, summary) = pmepr(cfg)?;
            put("pmepr_ccdf.csv", &|p| write_csv(p, command, cfg, &ccdf))?;
            put("pmepr_summary.csv", &|p| {
                write_csv(p, command, cfg, &summary)
            })?;
        }
        other => {
            return Err(crate::error::Error::config(
                "command",
                format!("unknown command {other}"),
            ));
        }
    }
    Ok(written)
}
