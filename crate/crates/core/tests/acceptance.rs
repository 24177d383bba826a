//! End-to-end acceptance checks. Each criterion runs in turn, prints one
//! PASS/FAIL line and is held to its runtime limit; the process exits with a
//! failure status if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use fskmv::analysis::{
    convergence_bound, expected_energies, flip_prob, flip_prob_given_split, flip_prob_mixture,
    mc_flip_prob, BoundInputs, Fading, McSystem, Placement,
};
use fskmv::channel::{superpose_at_es, ChannelRealization};
use fskmv::cli::commands::{ccdf_level_db, median_db, pmepr_samples, PmeprScheme};
use fskmv::cli::ExperimentConfig;
use fskmv::geometry::{lambda_param, received_power, sample_link_distance, CellConfig};
use fskmv::learning::{
    partition::ring_of, run_training, Architecture, Dataset, Model, PartitionKind, Scheme,
};
use fskmv::oac::{
    build_fsk_map, fsk_symbols_needed, fskmv_encode, fskmv_metrics, random_sign, SignVector,
};
use fskmv::rng::{substream, Domain};
use fskmv::waveform::{to_db, OfdmConfig};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn cell(alpha_eff: f64, noise_var: f64, k: usize) -> CellConfig {
    CellConfig {
        r_min: 10.0,
        r_max: 100.0,
        r_ref: 10.0,
        alpha: 4.0,
        beta: 4.0 - alpha_eff,
        noise_var,
        num_eds: k,
    }
}

fn c1_lambda() -> Outcome {
    let n = 1_000_000;
    let mut worst = 0.0f64;
    for a in [0.0, 1.0, 2.0, 3.0, 4.0] {
        let c = cell(a, 0.01, 1);
        let mut rng = substream(2024, Domain::Placement, a as u64, 0);
        let mut sum = 0.0;
        for _ in 0..n {
            sum += received_power(sample_link_distance(&c, &mut rng), &c)
                .map_err(|e| e.to_string())?;
        }
        let mc = sum / n as f64;
        let rel = (lambda_param(&c) - mc).abs() / mc;
        worst = worst.max(rel);
        if rel >= 0.01 {
            return Err(format!(
                "alpha_eff {a}: closed form {} vs MC {mc}",
                lambda_param(&c)
            ));
        }
    }
    let l0 = lambda_param(&cell(0.0, 0.01, 1));
    let l2 = lambda_param(&cell(2.0, 0.01, 1));
    let l4 = lambda_param(&cell(4.0, 0.01, 1));
    check(
        l0 == 1.0 && (l2 - 0.04652).abs() <= 1e-5 && (l4 - 0.0100).abs() <= 1e-4,
        format!("max MC rel err {worst:.2e}; lambda(0)={l0}, lambda(2)={l2:.6}, lambda(4)={l4:.6}"),
    )
}

/// Binomial mixture with Pascal's-triangle coefficients.
fn mixture_oracle(q: f64, k: usize, xi: f64) -> f64 {
    let mut row = vec![1.0f64];
    for _ in 0..k {
        let mut next = vec![1.0; row.len() + 1];
        for j in 1..row.len() {
            next[j] = row[j - 1] + row[j];
        }
        row = next;
    }
    (0..=k)
        .map(|kp| {
            let w = row[kp] * (1.0 - q).powi(kp as i32) * q.powi((k - kp) as i32);
            w * (((k - kp) as f64 + 1.0 / xi) / (k as f64 + 2.0 / xi))
        })
        .sum()
}

fn c2_flip_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for k in [1usize, 2, 5, 10, 50, 60] {
        for q in [0.0, 0.1, 0.3, 0.5] {
            for xi in [0.1, 1.0, 10.0, 1000.0] {
                let cf = flip_prob(q, k, xi).map_err(|e| e.to_string())?;
                let lib = flip_prob_mixture(q, k, xi).map_err(|e| e.to_string())?;
                worst = worst
                    .max((cf - mixture_oracle(q, k, xi)).abs())
                    .max((cf - lib).abs());
            }
        }
        if k % 2 == 0 {
            for xi in [0.1, 1.0, 10.0, 1000.0] {
                let half = flip_prob_given_split(k, k / 2, xi).map_err(|e| e.to_string())?;
                if half != 0.5 {
                    return Err(format!("K={k}, xi={xi}: P(flip | K/2) = {half:e}"));
                }
            }
        }
    }
    check(
        worst <= 1e-12,
        format!("max |closed form - mixture| = {worst:.1e}"),
    )
}

fn c3_detector() -> Outcome {
    let sys = McSystem {
        cell: cell(0.0, 0.01, 50),
        placement: Placement::Random,
        fading: Fading::Flat,
    };
    let n = 100_000;
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, kp) in [25usize, 30, 40, 50].into_iter().enumerate() {
        let est = mc_flip_prob(&sys, kp, n, 3, i as u64).map_err(|e| e.to_string())?;
        let p = flip_prob_given_split(50, kp, 200.0).map_err(|e| e.to_string())?;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let z = (est.prob - p) / se;
        ok &= z.abs() <= 3.0;
        parts.push(format!("K+={kp}: {:.5} vs {p:.5} (z={z:+.2})", est.prob));
    }
    check(ok, parts.join("; "))
}

fn c4_energies() -> Outcome {
    let n = 100_000;
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, a) in [0.0, 2.0].into_iter().enumerate() {
        let c = cell(a, 0.01, 50);
        let lam = lambda_param(&c);
        let sys = McSystem {
            cell: c,
            placement: Placement::Random,
            fading: Fading::Flat,
        };
        let est = mc_flip_prob(&sys, 30, n, 4, i as u64).map_err(|e| e.to_string())?;
        let (mp, mm) = expected_energies(30, 50, 2.0, lam, 0.01).map_err(|e| e.to_string())?;
        let rp = (est.mean_e_plus - mp).abs() / mp;
        let rm = (est.mean_e_minus - mm).abs() / mm;
        ok &= rp < 0.02 && rm < 0.02;
        parts.push(format!(
            "alpha_eff={a}: e+ {:.4}/{mp:.4}, e- {:.4}/{mm:.4}",
            est.mean_e_plus, est.mean_e_minus
        ));
    }
    check(ok, parts.join("; "))
}

fn c5_sync() -> Outcome {
    let cfg = ExperimentConfig::desk();
    let air = cfg.air_interface().map_err(|e| e.to_string())?;
    let ofdm = &air.ofdm;
    let k = air.cell.num_eds;
    let q = 170;
    let s = fsk_symbols_needed(q, ofdm.m_active);
    let q_pad = s * ofdm.m_active / 2;
    let map = build_fsk_map(q_pad, s, ofdm.m_active).map_err(|e| e.to_string())?;
    let trials = 1_000_000usize.div_ceil(q_pad) as u64;
    let seed = 5;
    let (mut compared, mut differ, mut ties) = (0u64, 0u64, 0u64);
    for t in 0..trials {
        let mut vr = substream(seed, Domain::Trial, t, 0);
        let votes: Vec<SignVector> = (0..k).map(|_| SignVector::random(q_pad, &mut vr)).collect();
        let base: Vec<ChannelRealization> = (0..k as u64)
            .map(|e| {
                air.profile
                    .realize(ofdm, &mut substream(seed, Domain::Channel, t, e))
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let shifted: Vec<ChannelRealization> = base
            .iter()
            .enumerate()
            .map(|(e, h)| {
                let mut tr = substream(seed, Domain::Timing, t, e as u64);
                let off = fskmv::channel::draw_timing_offset(
                    air.t_sync,
                    ofdm.sample_rate(),
                    air.timing,
                    &mut tr,
                );
                h.clone().with_timing_offset(off)
            })
            .collect();
        let grids: Vec<_> = votes
            .iter()
            .enumerate()
            .map(|(e, v)| fskmv_encode(v, &map, &mut substream(seed, Domain::Encode, t, e as u64)))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let p = vec![1.0; k];
        let run = |ch: &[ChannelRealization], n_err: usize| -> Result<Vec<i8>, String> {
            let y = superpose_at_es(
                &grids,
                &p,
                ch,
                air.cell.noise_var,
                n_err,
                ofdm,
                &mut substream(seed, Domain::Noise, t, 0),
            )
            .map_err(|e| e.to_string())?;
            let d = fskmv_metrics(&y, &map).map_err(|e| e.to_string())?;
            let mut dr = substream(seed, Domain::Detector, t, 0);
            Ok(d.into_iter()
                .map(|x| if x == 0.0 { 0 } else { random_sign(x, &mut dr) })
                .collect())
        };
        let ref_dec = run(&base, 0)?;
        let sync_dec = run(&shifted, air.n_err)?;
        for (a, b) in ref_dec.iter().zip(&sync_dec) {
            if *a == 0 || *b == 0 {
                ties += 1;
                continue;
            }
            compared += 1;
            differ += u64::from(a != b);
        }
    }
    let rate = differ as f64 / compared as f64;
    check(
        rate < 1e-6,
        format!("{differ} of {compared} coordinate decisions changed (rate {rate:.3e}, {ties} ties skipped)"),
    )
}

fn desk_run(
    scheme: Scheme,
    partition: PartitionKind,
    alpha_eff: f64,
    seed: u64,
) -> Result<fskmv::learning::TrainOutcome, String> {
    let mut cfg = ExperimentConfig::desk();
    cfg.cell.beta = cfg.cell.alpha - alpha_eff;
    cfg.train.scheme = scheme;
    cfg.train.partition = partition;
    cfg.train.seed = seed;
    cfg.task.eval_every = cfg.train.rounds;
    let air = cfg.air_interface().map_err(|e| e.to_string())?;
    run_training(&cfg.task, &cfg.train, &air).map_err(|e| e.to_string())
}

fn c6_learning() -> Outcome {
    let cfg = ExperimentConfig::desk();
    let q = cfg.vote_dimension().map_err(|e| e.to_string())?;
    if q != 170 || cfg.cell.num_eds != 10 || cfg.train.rounds != 200 || cfg.train.batch_size != 32 {
        return Err("desk profile does not match the reference task".into());
    }
    let (mut fsk, mut ideal) = (0.0, 0.0);
    for seed in 0..5 {
        fsk += desk_run(Scheme::FskMv, PartitionKind::Iid, 0.0, seed)?.final_accuracy / 5.0;
        ideal += desk_run(Scheme::IdealMv, PartitionKind::Iid, 0.0, seed)?.final_accuracy / 5.0;
    }
    check(
        (fsk - ideal).abs() <= 0.03 && fsk > 0.85 && ideal > 0.85,
        format!("mean accuracy fsk_mv {fsk:.4}, ideal_mv {ideal:.4}"),
    )
}

fn c7_non_iid() -> Outcome {
    let cfg = ExperimentConfig::desk();
    let mut diffs = Vec::new();
    let (mut acc_iid, mut acc_loc) = (0.0, 0.0);
    for seed in 0..5 {
        let loc = desk_run(Scheme::FskMv, PartitionKind::Location, 2.0, seed)?;
        let iid = desk_run(Scheme::FskMv, PartitionKind::Iid, 2.0, seed)?;
        acc_loc += loc.final_accuracy / 5.0;
        acc_iid += iid.final_accuracy / 5.0;
        let ring_mean = |u: usize| {
            let v: Vec<f64> = loc
                .local_losses
                .iter()
                .filter(|(d, _)| ring_of(*d, &cfg.cell).unwrap() == u)
                .map(|x| x.1)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        diffs.push(ring_mean(5) - ring_mean(1));
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = mean / (sd / n.sqrt());
    // one-sided 95% quantile of Student's t with 4 degrees of freedom
    let t_crit = 2.132;
    check(
        t > t_crit && acc_loc < acc_iid,
        format!("edge-minus-inner loss {mean:.3} (t={t:.2}); accuracy non-IID {acc_loc:.4} vs IID {acc_iid:.4}"),
    )
}

fn c8_pmepr() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, mut ofdm, symbols) in [
        ("desk", OfdmConfig::desk(), 100_000),
        ("paper", OfdmConfig::paper(), 20_000),
    ] {
        ofdm.oversampling = 8;
        let sample = |s| pmepr_samples(s, &ofdm, symbols, 0.9, 8).map_err(|e| e.to_string());
        let rnd = sample(PmeprScheme::FskRandomized)?;
        let unr = sample(PmeprScheme::FskUnrandomized)?;
        let qpsk = sample(PmeprScheme::QpskReference)?;
        let peak = to_db((ofdm.m_active / 2) as f64);
        let unr_dev = unr
            .iter()
            .map(|&x| (to_db(x) - peak).abs())
            .fold(0.0, f64::max);
        let gap = median_db(&unr) - median_db(&rnd);
        let tail = (ccdf_level_db(&rnd, 1e-3) - ccdf_level_db(&qpsk, 1e-3)).abs();
        ok &= gap >= 10.0 && unr_dev <= 0.2 && tail <= 1.0;
        parts.push(format!(
            "{name}: median gap {gap:.2} dB, unrandomized off peak by {unr_dev:.3} dB, 1e-3 CCDF vs QPSK {tail:.2} dB"
        ));
    }
    check(ok, parts.join("; "))
}

fn c9_gradients() -> Outcome {
    let (dim, classes) = (16, 10);
    let mut worst = 0.0f64;
    for m_idx in 0..10u64 {
        let mut rng = substream(9, Domain::Model, m_idx, 0);
        let n = 32;
        let features = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let data = Dataset::new(features, labels, dim, classes).map_err(|e| e.to_string())?;
        let params = (0..classes * dim + classes)
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        let model = Model::from_params(Architecture::Linear, dim, classes, params)
            .map_err(|e| e.to_string())?;
        let idx: Vec<usize> = (0..n).collect();
        let g = model.gradient(&data, &idx).map_err(|e| e.to_string())?;
        let h = 1e-5;
        for _ in 0..100 {
            let i = rng.random_range(0..model.num_params());
            let mut plus = model.clone();
            plus.params_mut()[i] += h;
            let mut minus = model.clone();
            minus.params_mut()[i] -= h;
            let fd =
                (plus.loss(&data, &idx).unwrap() - minus.loss(&data, &idx).unwrap()) / (2.0 * h);
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-4);
            worst = worst.max(rel);
        }
    }
    check(
        worst < 1e-5,
        format!("max relative error {worst:.2e} over 1000 coordinates"),
    )
}

fn c10_bound() -> Outcome {
    let base = BoundInputs {
        rounds: 1,
        gamma: 1,
        l1_smoothness: 2.0,
        sigma1: 3.0,
        f0_minus_fstar: 1.5,
        num_eds: 1,
        xi: 1.0,
    };
    let b = |x: BoundInputs| convergence_bound(&x).unwrap();
    let ns = [1usize, 10, 100, 1000, 10_000];
    let ks = [1usize, 5, 10, 50, 100];
    let xis = [0.01, 0.1, 1.0, 10.0, 1e3, 1e6];
    let gammas = [1usize, 2, 4];
    let mut ok = true;
    for &g in &gammas {
        for &n in &ns {
            for &k in &ks {
                for w in xis.windows(2) {
                    let lo = BoundInputs {
                        rounds: n,
                        num_eds: k,
                        xi: w[0],
                        gamma: g,
                        ..base
                    };
                    ok &= b(BoundInputs { xi: w[1], ..lo }) <= b(lo);
                }
            }
            for &xi in &xis {
                for w in ks.windows(2) {
                    let lo = BoundInputs {
                        rounds: n,
                        num_eds: w[0],
                        xi,
                        gamma: g,
                        ..base
                    };
                    ok &= b(BoundInputs {
                        num_eds: w[1],
                        ..lo
                    }) <= b(lo);
                }
            }
        }
        for &k in &ks {
            for &xi in &xis {
                for w in ns.windows(2) {
                    let lo = BoundInputs {
                        rounds: w[0],
                        num_eds: k,
                        xi,
                        gamma: g,
                        ..base
                    };
                    ok &= b(BoundInputs { rounds: w[1], ..lo }) <= b(lo);
                }
            }
        }
    }
    let mut worst = 0.0f64;
    for &g in &gammas {
        for &n in &ns {
            let k = 50;
            let x = BoundInputs {
                rounds: n,
                num_eds: k,
                xi: 1e12 / k as f64,
                gamma: g,
                ..base
            };
            let gf = g as f64;
            let ideal =
                ((1.0 / gf.sqrt()) * x.l1_smoothness.sqrt() * (x.f0_minus_fstar + gf / 2.0)
                    + 2.0 * 2f64.sqrt() / 3.0 * gf.sqrt() * x.sigma1)
                    / (n as f64).sqrt();
            worst = worst.max((b(x) - ideal).abs() / ideal);
        }
    }
    check(
        ok && worst < 1e-9,
        format!("monotone over grid: {ok}; limit rel err {worst:.1e}"),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        (
            "lambda closed form vs Monte Carlo",
            Duration::from_secs(10),
            c1_lambda,
        ),
        (
            "flip probability vs binomial mixture",
            Duration::from_secs(5),
            c2_flip_oracle,
        ),
        (
            "detector flip rate vs theory",
            Duration::from_secs(120),
            c3_detector,
        ),
        (
            "expected pair energies",
            Duration::from_secs(120),
            c4_energies,
        ),
        ("sync-error immunity", Duration::from_secs(120), c5_sync),
        ("desk-scale learning", Duration::from_secs(300), c6_learning),
        (
            "non-IID degradation ordering",
            Duration::from_secs(600),
            c7_non_iid,
        ),
        ("PMEPR separation", Duration::from_secs(120), c8_pmepr),
        (
            "gradient correctness",
            Duration::from_secs(10),
            c9_gradients,
        ),
        (
            "convergence bound sanity",
            Duration::from_secs(1),
            c10_bound,
        ),
    ];
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let (pass, detail) = match result {
            Ok(d) if took <= limit => (true, d),
            Ok(d) => (false, format!("{d}; exceeded {limit:?}")),
            Err(d) => (false, d),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {:>2} {}: {} ({:.2}s) {}",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            name,
            took.as_secs_f64(),
            detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
