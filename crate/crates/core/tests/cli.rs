use std::fs;
use std::path::Path;

use fskmv::cli::commands::{
    analyze, ccdf_level_db, median_db, pmepr, pmepr_samples, run, PmeprScheme,
};
use fskmv::cli::{parse_config, ExperimentConfig, Profile};
use fskmv::error::Error;
use fskmv::waveform::{to_db, OfdmConfig};

fn small(dir: &Path) -> ExperimentConfig {
    let text = format!(
        r#"
out = "{}"
seed = 11
[train]
rounds = 20
[detector]
trials = 500
[pmepr]
symbols = 400
"#,
        dir.display()
    );
    parse_config(&text, Profile::Desk).unwrap()
}

#[test]
fn empty_config_is_the_desk_profile() {
    assert_eq!(
        parse_config("", Profile::Desk).unwrap(),
        ExperimentConfig::desk()
    );
    assert_eq!(
        parse_config("", Profile::Paper).unwrap(),
        ExperimentConfig::paper()
    );
}

#[test]
fn beta_above_alpha_names_the_key() {
    let err = parse_config("[cell]\nbeta = 5.0\n", Profile::Desk).unwrap_err();
    match err {
        Error::Config { key, .. } => assert_eq!(key, "cell.beta"),
        e => panic!("unexpected error {e}"),
    }
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(parse_config("[cell]\nradius = 3.0\n", Profile::Desk).is_err());
    assert!(parse_config("bogus = 1\n", Profile::Desk).is_err());
}

#[test]
fn snr_db_sets_noise_variance() {
    let cfg = parse_config("[cell]\nsnr_db = 30\n", Profile::Desk).unwrap();
    assert!((cfg.cell.noise_var - 1e-3).abs() < 1e-15);
    assert!(parse_config("[cell]\nsnr_db = 30\nnoise_var = 0.1\n", Profile::Desk).is_err());
}

#[test]
fn paper_profile_symbol_budget() {
    let b = ExperimentConfig::paper().resource_budget().unwrap();
    assert_eq!((b.q, b.fsk_symbols, b.obda_symbols), (123_090, 206, 52));
}

#[test]
fn cp_budget_violation_is_rejected() {
    let err = parse_config("[channel]\nn_err = 40\n", Profile::Desk).unwrap_err();
    assert!(err.to_string().contains("channel"), "{err}");
}

#[test]
fn analyze_tables_have_expected_shape() {
    let t = analyze(&ExperimentConfig::desk()).unwrap();
    for r in t.lambda.iter().filter(|r| r.alpha_eff == 0.0) {
        assert_eq!(r.lambda, 1.0);
    }
    for a in [1.0, 2.0, 4.0] {
        let col: Vec<f64> = t
            .lambda
            .iter()
            .filter(|r| r.alpha_eff == a)
            .map(|r| r.lambda)
            .collect();
        assert!(
            col.windows(2).all(|w| w[1] < w[0]),
            "alpha_eff {a}: {col:?}"
        );
    }
    let mut keys: Vec<(u64, usize)> = t
        .bound
        .iter()
        .map(|r| (r.alpha_eff.to_bits(), r.num_eds))
        .collect();
    keys.dedup();
    for (a, k) in keys {
        let col: Vec<f64> = t
            .bound
            .iter()
            .filter(|r| r.alpha_eff.to_bits() == a && r.num_eds == k)
            .map(|r| r.bound)
            .collect();
        assert!(col.windows(2).all(|w| w[1] <= w[0]));
    }
    assert!(t.flip.iter().all(|r| (0.0..=0.5).contains(&r.p_i)));
    assert_eq!(t.budget.len(), 2);
}

#[test]
fn unrandomized_pmepr_is_a_point_mass() {
    let ofdm = OfdmConfig {
        oversampling: 4,
        ..OfdmConfig::desk()
    };
    let s = pmepr_samples(PmeprScheme::FskUnrandomized, &ofdm, 50, 0.9, 1).unwrap();
    let peak = to_db((ofdm.m_active / 2) as f64);
    assert!(s.iter().all(|&x| (to_db(x) - peak).abs() < 1e-6));
    assert!((median_db(&s) - peak).abs() < 1e-6);
    assert!((ccdf_level_db(&s, 1e-3) - peak).abs() < 1e-6);
}

#[test]
fn ccdf_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let (ccdf, summary) = pmepr(&small(dir.path())).unwrap();
    for s in PmeprScheme::ALL {
        let col: Vec<f64> = ccdf
            .iter()
            .filter(|r| r.scheme == s.name())
            .map(|r| r.ccdf)
            .collect();
        assert!(col.windows(2).all(|w| w[1] <= w[0]));
        assert!(col.iter().all(|p| (0.0..=1.0).contains(p)));
    }
    assert_eq!(summary.len(), PmeprScheme::ALL.len());
}

#[test]
fn outputs_carry_header_and_rerun_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let hash = cfg.hash().unwrap();
    let mut first = Vec::new();
    for cmd in ["analyze", "detector", "train", "pmepr"] {
        for path in run(cmd, &cfg).unwrap() {
            let text = fs::read_to_string(&path).unwrap();
            let header = text.lines().next().unwrap();
            assert_eq!(
                header,
                format!("# fskmv {cmd} config_sha256={hash} seed=11")
            );
            first.push((path, text));
        }
    }
    assert_eq!(first.len(), 9);
    for cmd in ["analyze", "detector", "train", "pmepr"] {
        run(cmd, &cfg).unwrap();
    }
    for (path, text) in first {
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            text,
            "{}",
            path.display()
        );
    }
}

#[test]
fn seed_changes_hash_and_results() {
    let dir = tempfile::tempdir().unwrap();
    let a = small(dir.path());
    let b = ExperimentConfig {
        seed: 12,
        ..a.clone()
    };
    assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    let ra = fskmv::cli::commands::detector(&a).unwrap();
    let rb = fskmv::cli::commands::detector(&b).unwrap();
    assert_ne!(ra, rb);
}

#[test]
fn binary_reports_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[cell]\nbeta = 5.0\n").unwrap();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_fskmv"))
        .args(["analyze", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cell.beta"));
}

#[test]
fn binary_writes_analysis_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_fskmv"))
        .args(["analyze", "--seed", "3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in ["lambda.csv", "flip_prob.csv", "bound.csv", "budget.csv"] {
        let text = fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(text.starts_with("# fskmv analyze config_sha256="));
        assert!(text.lines().next().unwrap().ends_with("seed=3"));
    }
}
