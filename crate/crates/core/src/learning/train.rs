use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    draw_timing_offset, max_timing_offset_samples, superpose_at_es, ChannelRealization,
    SampledProfile, TapProfile, TimingMode,
};
use crate::error::{Error, Result};
use crate::geometry::{ed_link_distances, received_power, CellConfig};
use crate::learning::data::{generate_blobs, BlobConfig, Dataset};
use crate::learning::idx::load_idx_dataset;
use crate::learning::model::{evaluate, Architecture, Model};
use crate::learning::partition::{partition_iid, partition_location, PartitionKind};
use crate::oac::{
    build_fsk_map, fsk_symbols_needed, fskmv_detect, fskmv_encode, ideal_mv, obda_detect,
    obda_encode, obda_symbols_needed, random_sign, ObdaPrecoding, SignVector,
};
use crate::rng::{substream, Domain};
use crate::waveform::OfdmConfig;

/// How the ES obtains the update direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    FskMv,
    ObdaTci,
    ObdaBlind,
    IdealMv,
    /// Averages the true local gradients; no signs, no channel.
    ErrorFreeSgd,
}

/// Learning-rate and batch-size rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepRule {
    /// Use `learning_rate` and `batch_size` as given.
    #[default]
    Fixed,
    /// `n_b = N / γ` and `η = 1 / √(‖L‖₁ n_b)`.
    Bound { gamma: usize, l1_smoothness: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub rounds: usize,
    pub scheme: Scheme,
    pub partition: PartitionKind,
    pub step_rule: StepRule,
    /// Master seed; set from the experiment seed rather than the config file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 32,
            rounds: 200,
            scheme: Scheme::FskMv,
            partition: PartitionKind::Iid,
            step_rule: StepRule::Fixed,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(Error::config("train.rounds", "must be at least 1"));
        }
        if let StepRule::Bound {
            gamma,
            l1_smoothness,
        } = self.step_rule
        {
            if gamma == 0 || gamma > self.rounds {
                return Err(Error::config(
                    "train.step_rule.gamma",
                    "must lie in 1..=rounds",
                ));
            }
            if !(l1_smoothness > 0.0 && l1_smoothness.is_finite()) {
                return Err(Error::config(
                    "train.step_rule.l1_smoothness",
                    "must be positive",
                ));
            }
        }
        Ok(())
    }

    /// `(η, n_b)` after applying the step rule.
    pub fn effective_step(&self) -> (f64, usize) {
        match self.step_rule {
            StepRule::Fixed => (self.learning_rate, self.batch_size),
            StepRule::Bound {
                gamma,
                l1_smoothness,
            } => {
                let nb = (self.rounds / gamma).max(1);
                (1.0 / (l1_smoothness * nb as f64).sqrt(), nb)
            }
        }
    }
}

/// Everything between the EDs' vote vectors and the ES decision.
#[derive(Debug, Clone, PartialEq)]
pub struct AirInterface {
    pub cell: CellConfig,
    pub ofdm: OfdmConfig,
    pub profile: SampledProfile,
    /// Largest ED arrival offset in seconds.
    pub t_sync: f64,
    pub timing: TimingMode,
    /// Receiver DFT window advance in samples.
    pub n_err: usize,
    pub tci_threshold: f64,
}

impl AirInterface {
    pub fn new(
        cell: CellConfig,
        ofdm: OfdmConfig,
        profile: &TapProfile,
        t_sync: f64,
        timing: TimingMode,
        n_err: usize,
        tci_threshold: f64,
    ) -> Result<Self> {
        cell.validate()?;
        ofdm.validate()?;
        profile.validate()?;
        if !(t_sync >= 0.0 && t_sync.is_finite()) {
            return Err(Error::config(
                "channel.t_sync",
                "must be finite and nonnegative",
            ));
        }
        if !(tci_threshold >= 0.0) {
            return Err(Error::config(
                "channel.tci_threshold",
                "must be nonnegative",
            ));
        }
        let sampled = profile.sampled(ofdm.sample_rate())?;
        let budget = sampled.spread()
            + max_timing_offset_samples(t_sync, ofdm.sample_rate(), timing)
            + n_err;
        if budget > ofdm.n_cp {
            return Err(Error::config(
                "channel",
                format!(
                    "delay spread + timing offset + n_err = {budget} samples exceeds the CP of {}",
                    ofdm.n_cp
                ),
            ));
        }
        Ok(Self {
            cell,
            ofdm,
            profile: sampled,
            t_sync,
            timing,
            n_err,
            tci_threshold,
        })
    }
}

/// Per-ED sampler drawing batches without replacement and reshuffling at
/// the start of each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batcher {
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    seed: u64,
    ed: u64,
}

impl Batcher {
    pub fn new(n: usize, seed: u64, ed: u64) -> Self {
        let mut b = Self {
            order: (0..n).collect(),
            cursor: 0,
            epoch: 0,
            seed,
            ed,
        };
        b.shuffle();
        b
    }

    fn shuffle(&mut self) {
        self.order.sort_unstable();
        self.order.shuffle(&mut substream(
            self.seed,
            Domain::Batch,
            self.ed,
            self.epoch,
        ));
        self.cursor = 0;
    }

    /// Next `min(nb, n)` distinct indices. A batch that would run past the
    /// end of the epoch starts a new one instead.
    pub fn next_batch(&mut self, nb: usize) -> Vec<usize> {
        let nb = nb.min(self.order.len());
        if self.cursor + nb > self.order.len() {
            self.epoch += 1;
            self.shuffle();
        }
        let out = self.order[self.cursor..self.cursor + nb].to_vec();
        self.cursor += nb;
        out
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdState {
    pub data: Dataset,
    pub distance: f64,
    pub power: f64,
    batcher: Batcher,
}

/// Model plus everything the EDs carry between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub round: usize,
    pub eds: Vec<EdState>,
}

impl TrainState {
    /// EDs placed at `distances` with received powers from the cell's power
    /// control.
    pub fn new(
        model: Model,
        local: Vec<Dataset>,
        distances: &[f64],
        cell: &CellConfig,
        seed: u64,
    ) -> Result<Self> {
        if local.len() != distances.len() || local.is_empty() {
            return Err(Error::Dimension(format!(
                "{} datasets for {} EDs",
                local.len(),
                distances.len()
            )));
        }
        let eds = local
            .into_iter()
            .zip(distances)
            .enumerate()
            .map(|(e, (data, &d))| {
                if data.is_empty() {
                    return Err(Error::InsufficientData(format!("ED {e} holds no data")));
                }
                Ok(EdState {
                    batcher: Batcher::new(data.len(), seed, e as u64),
                    power: received_power(d, cell)?,
                    distance: d,
                    data,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            round: 0,
            eds,
        })
    }
}

/// Entrywise sign with zeros replaced by a fair coin.
pub fn sign_vector<R: rand::Rng + ?Sized>(gradient: &[f64], rng: &mut R) -> Result<SignVector> {
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    SignVector::new(gradient.iter().map(|&g| random_sign(g, rng)).collect())
}

/// `w ← w - η v`.
pub fn apply_update(model: &mut Model, mv: &SignVector, eta: f64) -> Result<()> {
    if mv.len() != model.num_params() {
        return Err(Error::Dimension(format!(
            "{} votes for {} parameters",
            mv.len(),
            model.num_params()
        )));
    }
    for (w, v) in model.params_mut().iter_mut().zip(mv.iter()) {
        *w -= eta * f64::from(v);
    }
    Ok(())
}

/// What happened in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    /// Decided update direction (empty for error-free SGD).
    pub decision: SignVector,
    /// Coordinates with a strict majority among the ED votes.
    pub strict_coords: usize,
    /// How many of those the decision got wrong.
    pub disagreements: usize,
}

impl RoundReport {
    pub fn disagreement_rate(&self) -> f64 {
        if self.strict_coords == 0 {
            0.0
        } else {
            self.disagreements as f64 / self.strict_coords as f64
        }
    }
}

/// Pad votes to `target` entries with fair coin flips.
fn pad_votes(v: &SignVector, target: usize, seed: u64, round: u64, ed: u64) -> Result<SignVector> {
    if target == v.len() {
        return Ok(v.clone());
    }
    let mut rng = substream(seed, Domain::Encode, round, ed.wrapping_add(1 << 32));
    let mut out = v.as_slice().to_vec();
    out.extend((0..target - v.len()).map(|_| random_sign(0.0, &mut rng)));
    SignVector::new(out)
}

/// Per-ED channel realizations with arrival offsets for one round.
pub fn round_channels(
    air: &AirInterface,
    seed: u64,
    round: u64,
    k: usize,
) -> Result<Vec<ChannelRealization>> {
    (0..k as u64)
        .map(|e| {
            let h = air
                .profile
                .realize(&air.ofdm, &mut substream(seed, Domain::Channel, round, e))?;
            let off = draw_timing_offset(
                air.t_sync,
                air.ofdm.sample_rate(),
                air.timing,
                &mut substream(seed, Domain::Timing, round, e),
            );
            Ok(h.with_timing_offset(off))
        })
        .collect()
}

/// Decide the majority vote from `votes` with an over-the-air scheme.
pub fn aggregate_votes(
    votes: &[SignVector],
    powers: &[f64],
    scheme: Scheme,
    air: &AirInterface,
    seed: u64,
    round: u64,
) -> Result<SignVector> {
    let q = votes.first().map_or(0, SignVector::len);
    let m = air.ofdm.m_active;
    let k = votes.len();
    let mut det_rng = substream(seed, Domain::Detector, round, 0);
    let mut noise_rng = substream(seed, Domain::Noise, round, 0);
    match scheme {
        Scheme::IdealMv => ideal_mv(votes, &mut det_rng),
        Scheme::FskMv => {
            let s = fsk_symbols_needed(q, m);
            let q_pad = s * m / 2;
            let map = build_fsk_map(q_pad, s, m)?;
            let channels = round_channels(air, seed, round, k)?;
            let grids = votes
                .iter()
                .enumerate()
                .map(|(e, v)| {
                    let padded = pad_votes(v, q_pad, seed, round, e as u64)?;
                    fskmv_encode(
                        &padded,
                        &map,
                        &mut substream(seed, Domain::Encode, round, e as u64),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let y = superpose_at_es(
                &grids,
                powers,
                &channels,
                air.cell.noise_var,
                air.n_err,
                &air.ofdm,
                &mut noise_rng,
            )?;
            let mut full = fskmv_detect(&y, &map, &mut det_rng)?.into_inner();
            full.truncate(q);
            SignVector::new(full)
        }
        Scheme::ObdaTci | Scheme::ObdaBlind => {
            let s = obda_symbols_needed(q, m);
            let channels = round_channels(air, seed, round, k)?;
            let grids = votes
                .iter()
                .zip(&channels)
                .enumerate()
                .map(|(e, (v, ch))| {
                    let pre = if scheme == Scheme::ObdaTci {
                        ObdaPrecoding::Tci {
                            response: &ch.freq_response,
                            threshold: air.tci_threshold,
                        }
                    } else {
                        ObdaPrecoding::Blind
                    };
                    obda_encode(
                        v,
                        s,
                        m,
                        pre,
                        &mut substream(seed, Domain::Encode, round, e as u64),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let y = superpose_at_es(
                &grids,
                powers,
                &channels,
                air.cell.noise_var,
                air.n_err,
                &air.ofdm,
                &mut noise_rng,
            )?;
            obda_detect(&y, q, &mut det_rng)
        }
        Scheme::ErrorFreeSgd => Err(Error::OutOfRange(
            "error-free SGD does not aggregate votes".into(),
        )),
    }
}

/// One communication round: local gradients and signs at every ED, vote
/// aggregation with the configured scheme, and the common model update.
///
/// ED `e` in round `n` draws from substreams keyed `(n, e)` only, so the
/// trajectory does not depend on the number of threads.
pub fn train_round(
    state: &mut TrainState,
    cfg: &TrainConfig,
    air: &AirInterface,
) -> Result<RoundReport> {
    let (eta, nb) = cfg.effective_step();
    let round = state.round as u64;
    let model = &state.model;
    let locals: Vec<(Vec<f64>, SignVector)> = state
        .eds
        .par_iter_mut()
        .enumerate()
        .map(|(e, ed)| {
            let batch = ed.batcher.next_batch(nb);
            let g = model.gradient(&ed.data, &batch)?;
            let s = sign_vector(&g, &mut substream(cfg.seed, Domain::Model, round, e as u64))?;
            Ok((g, s))
        })
        .collect::<Result<Vec<_>>>()?;

    if cfg.scheme == Scheme::ErrorFreeSgd {
        let k = locals.len() as f64;
        let q = state.model.num_params();
        let mut avg = vec![0.0; q];
        for (g, _) in &locals {
            for (a, gi) in avg.iter_mut().zip(g) {
                *a += gi / k;
            }
        }
        for (w, a) in state.model.params_mut().iter_mut().zip(&avg) {
            *w -= eta * a;
        }
        state.round += 1;
        return Ok(RoundReport {
            round: state.round,
            decision: SignVector::new(Vec::new())?,
            strict_coords: 0,
            disagreements: 0,
        });
    }

    let votes: Vec<SignVector> = locals.into_iter().map(|(_, s)| s).collect();
    let powers: Vec<f64> = state.eds.iter().map(|e| e.power).collect();
    let decision = aggregate_votes(&votes, &powers, cfg.scheme, air, cfg.seed, round)?;
    let (strict, wrong) = compare_with_majority(&votes, &decision);
    apply_update(&mut state.model, &decision, eta)?;
    state.round += 1;
    Ok(RoundReport {
        round: state.round,
        decision,
        strict_coords: strict,
        disagreements: wrong,
    })
}

/// Count strict-majority coordinates and how many of them `decision` flips.
pub fn compare_with_majority(votes: &[SignVector], decision: &SignVector) -> (usize, usize) {
    let mut strict = 0;
    let mut wrong = 0;
    for i in 0..decision.len() {
        let sum: i64 = votes.iter().map(|v| i64::from(v.as_slice()[i])).sum();
        if sum != 0 {
            strict += 1;
            wrong += usize::from(sum.signum() as i8 != decision.as_slice()[i]);
        }
    }
    (strict, wrong)
}

/// Mean loss over each ED's full local dataset, with its distance.
pub fn local_losses(state: &TrainState) -> Result<Vec<(f64, f64)>> {
    state
        .eds
        .iter()
        .map(|ed| {
            let all: Vec<usize> = (0..ed.data.len()).collect();
            Ok((ed.distance, state.model.loss(&ed.data, &all)?))
        })
        .collect()
}

/// Where training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Blobs(BlobConfig),
    Idx {
        train_images: std::path::PathBuf,
        train_labels: std::path::PathBuf,
        test_images: std::path::PathBuf,
        test_labels: std::path::PathBuf,
        num_classes: usize,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Blobs(BlobConfig::default())
    }
}

/// Data, model and partition settings for a full run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub data: DataSource,
    /// Training samples of every class held by each ED under the IID split.
    pub per_class_per_ed: usize,
    pub model: Architecture,
    /// Evaluate on the test set every this many rounds.
    pub eval_every: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            per_class_per_ed: 50,
            model: Architecture::Linear,
            eval_every: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub accuracy: f64,
    pub loss: f64,
    /// Fraction of strict-majority coordinates decided against the majority.
    pub disagreement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<RoundRecord>,
    /// `(distance, local loss)` per ED after the last round.
    pub local_losses: Vec<(f64, f64)>,
    pub final_accuracy: f64,
    pub mean_disagreement: f64,
    pub model: Model,
}

/// Build data, partition it over the EDs and return the initial state and
/// the test set.
pub fn setup(
    task: &TaskConfig,
    cfg: &TrainConfig,
    cell: &CellConfig,
) -> Result<(TrainState, Dataset)> {
    let k = cell.num_eds;
    let (train, test) = match &task.data {
        DataSource::Blobs(b) => generate_blobs(
            b,
            k * task.per_class_per_ed,
            &mut substream(cfg.seed, Domain::Data, 0, 0),
        )?,
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            num_classes,
        } => (
            load_idx_dataset(train_images, train_labels, *num_classes)?,
            load_idx_dataset(test_images, test_labels, *num_classes)?,
        ),
    };
    let distances = ed_link_distances(cell);
    let mut prng = substream(cfg.seed, Domain::Partition, 0, 0);
    let local = match cfg.partition {
        PartitionKind::Iid => partition_iid(&train, k, task.per_class_per_ed, &mut prng)?,
        PartitionKind::Location => partition_location(&train, &distances, cell, &mut prng)?,
    };
    let model = Model::init(
        task.model,
        train.dim(),
        train.num_classes(),
        &mut substream(cfg.seed, Domain::Model, u64::MAX, 0),
    )?;
    Ok((
        TrainState::new(model, local, &distances, cell, cfg.seed)?,
        test,
    ))
}

/// Train for `cfg.rounds` rounds, evaluating on the test set along the way.
pub fn run_training(
    task: &TaskConfig,
    cfg: &TrainConfig,
    air: &AirInterface,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (mut state, test) = setup(task, cfg, &air.cell)?;
    let every = task.eval_every.max(1);
    let e0 = evaluate(&state.model, &test)?;
    let mut history = vec![RoundRecord {
        round: 0,
        accuracy: e0.accuracy,
        loss: e0.loss,
        disagreement: 0.0,
    }];
    let mut dis_total = 0.0;
    for _ in 0..cfg.rounds {
        let rep = train_round(&mut state, cfg, air)?;
        dis_total += rep.disagreement_rate();
        if rep.round % every == 0 || rep.round == cfg.rounds {
            let ev = evaluate(&state.model, &test)?;
            history.push(RoundRecord {
                round: rep.round,
                accuracy: ev.accuracy,
                loss: ev.loss,
                disagreement: rep.disagreement_rate(),
            });
        }
    }
    Ok(TrainOutcome {
        final_accuracy: history.last().map_or(0.0, |r| r.accuracy),
        local_losses: local_losses(&state)?,
        mean_disagreement: dis_total / cfg.rounds as f64,
        history,
        model: state.model,
    })
}
