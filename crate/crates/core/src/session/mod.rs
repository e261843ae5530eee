//! The two-phase rating protocol.
//!
//! Phase I: 80 loops drawn by Metropolis-Hastings from the live critic, which
//! is trained after every rating. At the boundary the critic is frozen as
//! the final model and 60 Phase II loops are generated, 30 from the initial
//! (untrained) critic and 30 from the final one, then shuffled. Phase II
//! ratings are only recorded; the like ratios of the two halves give
//! `theta_init`, `theta_final` and their difference.
//!
//! Every random draw comes from a generator derived from `(seed, stream,
//! index)`, so a session replays identically from any persisted point.

mod persist;
mod proxy;

use std::collections::HashSet;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use persist::{load_session, persist_session, RatingsFile};
pub use proxy::{run_simulation, ProxyRater, SimulationReport, TranscriptEntry};

use crate::audio::{render_bar, render_presentation, SampleLibrary, Waveform};
use crate::critic::{
    retrain_from_scratch, train_increment, CriticArch, CriticParams, Label, LabeledExample, OptimizerState,
    TrainerConfig,
};
use crate::error::{Error, Result};
use crate::features::{MfccExtractor, MfccSettings};
use crate::pattern::{DrumLoop, LoopId};
use crate::rng::derive_rng;
use crate::sampler::{sample_phase1, sample_phase2, CriticScorer, LoopSpace, SamplerConfig};

pub const PHASE1_RATINGS: usize = 80;
pub const PHASE2_PER_MODEL: usize = 30;
pub const PHASE2_RATINGS: usize = 2 * PHASE2_PER_MODEL;

const STREAM_INIT: u64 = 1;
const STREAM_PHASE1: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_QUEUE: u64 = 4;
const STREAM_SHUFFLE: u64 = 5;
pub(crate) const STREAM_PROXY: u64 = 6;

/// Fresh Phase II draws that duplicate a Phase I loop are redrawn at most
/// this many times.
const MAX_REDRAWS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "I")]
    One,
    #[serde(rename = "II")]
    Two,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionPhase {
    PhaseOne,
    /// All Phase I ratings are in; the Phase II queue is not yet installed.
    BuildingPhase2,
    PhaseTwo,
    Complete,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceModel {
    Current,
    Initial,
    Final,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    #[default]
    Incremental,
    FromScratch,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub sampler: SamplerConfig,
    pub trainer: TrainerConfig,
    pub mfcc: MfccSettings,
    pub training_mode: TrainingMode,
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.trainer.validate()?;
        self.mfcc.validate()
    }

    pub fn arch(&self) -> CriticArch {
        CriticArch::for_settings(&self.mfcc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub loop_id: String,
    pub phase: Phase,
    pub source_model: SourceModel,
    pub rating: Label,
    pub presented_at: DateTime<Utc>,
    pub rated_at: DateTime<Utc>,
}

/// Server-side record of a loop shown to the listener.
#[derive(Clone, Debug)]
pub struct PresentedLoop {
    pub drum_loop: DrumLoop,
    pub phase: Phase,
    pub source: SourceModel,
    /// Score under the critic that generated it.
    pub score: f64,
    pub below_threshold: bool,
    pub presented_at: DateTime<Utc>,
}

#[derive(Clone, Debug)]
pub struct QueueSlot {
    pub drum_loop: DrumLoop,
    pub source: SourceModel,
    pub score: f64,
    pub below_threshold: bool,
}

/// What the client gets for the next loop. Carries no source-model tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NextLoop {
    pub loop_id: LoopId,
    pub phase: Phase,
    /// Zero-based position within the phase.
    pub index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubmitOutcome {
    pub phase: SessionPhase,
    /// Ratings still expected in the current phase.
    pub remaining: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub theta_init: f64,
    pub theta_final: f64,
    pub delta_theta: f64,
}

impl ExperimentResult {
    pub fn from_likes(init_likes: usize, final_likes: usize) -> Self {
        let theta_init = init_likes as f64 / PHASE2_PER_MODEL as f64;
        let theta_final = final_likes as f64 / PHASE2_PER_MODEL as f64;
        Self {
            theta_init,
            theta_final,
            delta_theta: theta_final - theta_init,
        }
    }
}

pub struct Session {
    id: String,
    seed: u64,
    created_at: DateTime<Utc>,
    config: SessionConfig,
    library: Arc<SampleLibrary>,
    extractor: Arc<MfccExtractor>,
    phase: SessionPhase,
    ratings: Vec<RatingRecord>,
    presented: Vec<PresentedLoop>,
    /// The last presented loop awaits a rating.
    pending: bool,
    dataset: Vec<LabeledExample>,
    initial: Arc<CriticParams>,
    live: CriticParams,
    optimizer: OptimizerState,
    final_critic: Option<Arc<CriticParams>>,
    queue: Vec<QueueSlot>,
    queue_pos: usize,
}

impl Session {
    /// Fresh session: the critic is initialized from the seed and its
    /// initial snapshot taken before any training.
    pub fn create(id: impl Into<String>, config: SessionConfig, library: Arc<SampleLibrary>, seed: u64) -> Result<Self> {
        config.validate()?;
        if library.is_empty() {
            return Err(Error::Config("sample library is empty".into()));
        }
        let extractor = Arc::new(MfccExtractor::new(config.mfcc)?);
        let live = CriticParams::init(&config.arch(), &mut derive_rng(seed, STREAM_INIT, 0))?;
        let optimizer = OptimizerState::new(live.param_count());
        Ok(Self {
            id: id.into(),
            seed,
            created_at: Utc::now(),
            config,
            library,
            extractor,
            phase: SessionPhase::PhaseOne,
            ratings: Vec::new(),
            presented: Vec::new(),
            pending: false,
            dataset: Vec::new(),
            initial: Arc::new(live.clone()),
            live,
            optimizer,
            final_critic: None,
            queue: Vec::new(),
            queue_pos: 0,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn created_at(&self) -> DateTime<Utc> {
        self.created_at
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn library(&self) -> &Arc<SampleLibrary> {
        &self.library
    }

    pub fn phase(&self) -> SessionPhase {
        self.phase
    }

    pub fn ratings(&self) -> &[RatingRecord] {
        &self.ratings
    }

    pub fn presented(&self) -> &[PresentedLoop] {
        &self.presented
    }

    pub fn dataset(&self) -> &[LabeledExample] {
        &self.dataset
    }

    pub fn initial_critic(&self) -> &CriticParams {
        &self.initial
    }

    pub fn live_critic(&self) -> &CriticParams {
        &self.live
    }

    pub fn final_critic(&self) -> Option<&CriticParams> {
        self.final_critic.as_deref()
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    pub fn queue(&self) -> &[QueueSlot] {
        &self.queue
    }

    pub fn pending(&self) -> Option<&PresentedLoop> {
        self.pending.then(|| self.presented.last()).flatten()
    }

    fn phase1_count(&self) -> usize {
        self.presented.iter().filter(|p| p.phase == Phase::One).count()
    }

    fn phase_ratings(&self, phase: Phase) -> usize {
        self.ratings.iter().filter(|r| r.phase == phase).count()
    }

    fn to_next(&self, p: &PresentedLoop) -> NextLoop {
        let index = match p.phase {
            Phase::One => self.phase1_count() - 1,
            Phase::Two => self.queue_pos - 1,
        };
        NextLoop {
            loop_id: p.drum_loop.id().clone(),
            phase: p.phase,
            index,
        }
    }

    /// The loop to rate next. Asking again before rating returns the same
    /// pending loop.
    pub fn next_loop(&mut self) -> Result<NextLoop> {
        if let Some(p) = self.pending() {
            return Ok(self.to_next(p));
        }
        let now = Utc::now();
        let entry = match self.phase {
            SessionPhase::Complete => return Err(Error::Completed),
            SessionPhase::BuildingPhase2 => return Err(Error::Generating),
            SessionPhase::PhaseOne => {
                let space = LoopSpace {
                    library: &self.library,
                    perturbation: self.config.sampler.perturbation,
                    scorer: CriticScorer {
                        critic: &self.live,
                        library: &self.library,
                        extractor: &self.extractor,
                    },
                };
                let mut rng = derive_rng(self.seed, STREAM_PHASE1, self.phase1_count() as u64);
                let s = sample_phase1(&space, &self.config.sampler, &mut rng)?;
                PresentedLoop {
                    drum_loop: s.state,
                    phase: Phase::One,
                    source: SourceModel::Current,
                    score: s.score,
                    below_threshold: false,
                    presented_at: now,
                }
            }
            SessionPhase::PhaseTwo => {
                let slot = self
                    .queue
                    .get(self.queue_pos)
                    .ok_or_else(|| Error::State("phase II queue exhausted".into()))?
                    .clone();
                self.queue_pos += 1;
                PresentedLoop {
                    drum_loop: slot.drum_loop,
                    phase: Phase::Two,
                    source: slot.source,
                    score: slot.score,
                    below_threshold: slot.below_threshold,
                    presented_at: now,
                }
            }
        };
        self.presented.push(entry);
        self.pending = true;
        Ok(self.to_next(self.presented.last().unwrap()))
    }

    fn find_loop(&self, loop_id: &str) -> Option<&PresentedLoop> {
        self.presented.iter().find(|p| p.drum_loop.id().as_str() == loop_id)
    }

    /// The 9 s playback render of any loop presented in this session.
    pub fn presentation_audio(&self, loop_id: &str) -> Result<Waveform> {
        let p = self
            .find_loop(loop_id)
            .ok_or_else(|| Error::Sequencing(format!("loop {loop_id} was not presented in this session")))?;
        render_presentation(&p.drum_loop, &self.library)
    }

    /// Record a rating without generating the Phase II queue. After the
    /// last Phase I rating the session sits in
    /// [`SessionPhase::BuildingPhase2`] until [`Session::install_phase2_queue`].
    pub fn record_rating(&mut self, loop_id: &str, rating: Label) -> Result<SubmitOutcome> {
        let pending = match self.pending() {
            Some(p) if p.drum_loop.id().as_str() == loop_id => p.clone(),
            Some(p) => {
                return Err(Error::Sequencing(format!(
                    "rating for {loop_id} but {} is pending",
                    p.drum_loop.id()
                )))
            }
            None if self.phase == SessionPhase::Complete => return Err(Error::Completed),
            None => return Err(Error::Sequencing(format!("no loop is pending; got rating for {loop_id}"))),
        };
        self.ratings.push(RatingRecord {
            loop_id: loop_id.to_string(),
            phase: pending.phase,
            source_model: pending.source,
            rating,
            presented_at: pending.presented_at,
            rated_at: Utc::now(),
        });
        self.pending = false;
        match pending.phase {
            Phase::One => {
                let features = self.extractor.compute(&render_bar(&pending.drum_loop, &self.library)?)?;
                self.dataset.push(LabeledExample {
                    features,
                    label: rating,
                    loop_id: loop_id.to_string(),
                });
                self.train()?;
                let done = self.phase_ratings(Phase::One);
                if done == PHASE1_RATINGS {
                    self.final_critic = Some(Arc::new(self.live.clone()));
                    self.phase = SessionPhase::BuildingPhase2;
                    return Ok(SubmitOutcome {
                        phase: self.phase,
                        remaining: PHASE2_RATINGS,
                    });
                }
                Ok(SubmitOutcome {
                    phase: self.phase,
                    remaining: PHASE1_RATINGS - done,
                })
            }
            Phase::Two => {
                let done = self.phase_ratings(Phase::Two);
                if done == PHASE2_RATINGS {
                    self.phase = SessionPhase::Complete;
                }
                Ok(SubmitOutcome {
                    phase: self.phase,
                    remaining: PHASE2_RATINGS - done,
                })
            }
        }
    }

    fn train(&mut self) -> Result<()> {
        let k = self.dataset.len() as u64 - 1;
        let mut rng = derive_rng(self.seed, STREAM_TRAIN, k);
        match self.config.training_mode {
            TrainingMode::Incremental => {
                train_increment(&mut self.live, &mut self.optimizer, &self.dataset, &self.config.trainer, &mut rng)?;
            }
            TrainingMode::FromScratch => {
                let (params, opt, _) =
                    retrain_from_scratch(&self.config.arch(), &self.dataset, &self.config.trainer, &mut rng)?;
                self.live = params;
                self.optimizer = opt;
            }
        }
        Ok(())
    }

    /// Record a rating, generating the Phase II queue inline when Phase I
    /// completes.
    pub fn submit_rating(&mut self, loop_id: &str, rating: Label) -> Result<SubmitOutcome> {
        let out = self.record_rating(loop_id, rating)?;
        if out.phase == SessionPhase::BuildingPhase2 {
            let slots = self.phase2_job()?.run()?;
            self.install_phase2_queue(slots)?;
            return Ok(SubmitOutcome {
                phase: self.phase,
                remaining: out.remaining,
            });
        }
        Ok(out)
    }

    /// Self-contained Phase II generation work, runnable without holding
    /// the session.
    pub fn phase2_job(&self) -> Result<Phase2Job> {
        if self.phase != SessionPhase::BuildingPhase2 {
            return Err(Error::State(format!("no phase II build in phase {:?}", self.phase)));
        }
        Ok(Phase2Job {
            seed: self.seed,
            sampler: self.config.sampler.clone(),
            library: self.library.clone(),
            extractor: self.extractor.clone(),
            initial: self.initial.clone(),
            final_critic: self.final_critic.clone().expect("final critic is set at the boundary"),
            exclude: self.presented.iter().map(|p| p.drum_loop.clone()).collect(),
        })
    }

    pub fn install_phase2_queue(&mut self, slots: Vec<QueueSlot>) -> Result<()> {
        if self.phase != SessionPhase::BuildingPhase2 {
            return Err(Error::State("phase II queue already installed".into()));
        }
        let initial = slots.iter().filter(|s| s.source == SourceModel::Initial).count();
        let fin = slots.iter().filter(|s| s.source == SourceModel::Final).count();
        if initial != PHASE2_PER_MODEL || fin != PHASE2_PER_MODEL {
            return Err(Error::State(format!("phase II queue must be 30/30, got {initial}/{fin}")));
        }
        self.queue = slots;
        self.queue_pos = 0;
        self.phase = SessionPhase::PhaseTwo;
        Ok(())
    }

    /// Like ratios of the two Phase II halves.
    pub fn compute_results(&self) -> Result<ExperimentResult> {
        if self.phase != SessionPhase::Complete {
            return Err(Error::State("session is not complete".into()));
        }
        let likes = |m: SourceModel| {
            self.ratings
                .iter()
                .filter(|r| r.phase == Phase::Two && r.source_model == m && r.rating == Label::Like)
                .count()
        };
        Ok(ExperimentResult::from_likes(likes(SourceModel::Initial), likes(SourceModel::Final)))
    }
}

/// Generates the shuffled 60-slot Phase II queue from frozen critics.
pub struct Phase2Job {
    seed: u64,
    sampler: SamplerConfig,
    library: Arc<SampleLibrary>,
    extractor: Arc<MfccExtractor>,
    initial: Arc<CriticParams>,
    final_critic: Arc<CriticParams>,
    exclude: HashSet<DrumLoop>,
}

impl Phase2Job {
    fn slot(&self, i: usize) -> Result<QueueSlot> {
        let (source, critic) = if i < PHASE2_PER_MODEL {
            (SourceModel::Initial, &self.initial)
        } else {
            (SourceModel::Final, &self.final_critic)
        };
        let space = LoopSpace {
            library: &self.library,
            perturbation: self.sampler.perturbation,
            scorer: CriticScorer {
                critic,
                library: &self.library,
                extractor: &self.extractor,
            },
        };
        let mut rng = derive_rng(self.seed, STREAM_QUEUE, i as u64);
        let mut out = sample_phase2(&space, &self.sampler, &mut rng)?;
        // never recycle a Phase I loop
        for _ in 0..MAX_REDRAWS {
            if !self.exclude.contains(&out.best.state) {
                break;
            }
            out = sample_phase2(&space, &self.sampler, &mut rng)?;
        }
        Ok(QueueSlot {
            drum_loop: out.best.state,
            source,
            score: out.best.score,
            below_threshold: out.below_threshold,
        })
    }

    pub fn run(self) -> Result<Vec<QueueSlot>> {
        let mut slots = (0..PHASE2_RATINGS)
            .into_par_iter()
            .map(|i| self.slot(i))
            .collect::<Result<Vec<_>>>()?;
        slots.shuffle(&mut derive_rng(self.seed, STREAM_SHUFFLE, 0));
        Ok(slots)
    }
}

/// Mean eval-mode score of every loop under every critic, best first; ties
/// go to the smaller loop id.
pub fn ensemble_rank(
    critics: &[CriticParams],
    loops: &[DrumLoop],
    library: &SampleLibrary,
    extractor: &MfccExtractor,
) -> Result<Vec<(DrumLoop, f64)>> {
    if critics.is_empty() || loops.is_empty() {
        return Err(Error::Contract("ranking needs at least one critic and one loop".into()));
    }
    let per_loop = loops
        .par_iter()
        .map(|l| {
            let features = extractor.compute(&render_bar(l, library)?)?;
            critics.iter().map(|c| c.predict(&features)).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<Vec<f64>> = (0..critics.len())
        .map(|c| per_loop.iter().map(|s| s[c]).collect())
        .collect();
    rank_by_mean(loops, &scores)
}

/// Rank `loops` by the mean of `scores[critic][loop]`, best first; ties go
/// to the smaller loop id.
pub fn rank_by_mean(loops: &[DrumLoop], scores: &[Vec<f64>]) -> Result<Vec<(DrumLoop, f64)>> {
    if scores.is_empty() || scores.iter().any(|s| s.len() != loops.len()) {
        return Err(Error::Contract("need one score per loop for every critic".into()));
    }
    let mut ranked: Vec<(DrumLoop, f64)> = loops
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), scores.iter().map(|s| s[i]).sum::<f64>() / scores.len() as f64))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.id().cmp(b.0.id())));
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn result_arithmetic() {
        let r = ExperimentResult::from_likes(11, 15);
        assert!((r.theta_init - 0.3667).abs() < 1e-4);
        assert_eq!(r.theta_final, 0.5);
        assert!((r.delta_theta - 0.1333).abs() < 1e-4);
        let r = ExperimentResult::from_likes(30, 30);
        assert_eq!((r.theta_init, r.theta_final, r.delta_theta), (1.0, 1.0, 0.0));
        let r = ExperimentResult::from_likes(0, 0);
        assert_eq!((r.theta_init, r.theta_final, r.delta_theta), (0.0, 0.0, 0.0));
    }

    #[test]
    fn rating_record_schema_names() {
        let r = RatingRecord {
            loop_id: "a".into(),
            phase: Phase::Two,
            source_model: SourceModel::Final,
            rating: Label::Dislike,
            presented_at: DateTime::from_timestamp(0, 0).unwrap(),
            rated_at: DateTime::from_timestamp(1, 0).unwrap(),
        };
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["phase"], "II");
        assert_eq!(v["source_model"], "final");
        assert_eq!(v["rating"], "dislike");
        assert_eq!(v["presented_at"], "1970-01-01T00:00:00Z");
    }
}
