//! On-disk session layout:
//!
//! ```text
//! session.json    metadata, config, presented loops, phase II queue
//! ratings.json    {"session", "seed", "ratings": [...]}
//! loops.json      portable records of every presented loop
//! wav/<id>.wav    bar render of every presented loop
//! initial.ckpt    critic before any training
//! live.ckpt       current critic
//! final.ckpt      critic frozen at the end of phase I (once reached)
//! optimizer.bin   optimizer moments of the live critic
//! ```
//!
//! The labeled dataset is not stored; it is recomputed from the Phase I
//! loops and their ratings on load.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{
    Phase, PresentedLoop, QueueSlot, RatingRecord, Session, SessionConfig, SessionPhase, SourceModel,
};
use crate::audio::{encode_wav, render_bar, SampleLibrary};
use crate::critic::{load_checkpoint, save_checkpoint, LabeledExample, OptimizerState};
use crate::error::{Error, Result};
use crate::features::MfccExtractor;
use crate::pattern::{loop_to_record, record_to_loop, LoopRecord};

const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingsFile {
    pub session: String,
    pub seed: u64,
    pub ratings: Vec<RatingRecord>,
}

#[derive(Serialize, Deserialize)]
struct StoredPresented {
    #[serde(rename = "loop")]
    record: LoopRecord,
    phase: Phase,
    source_model: SourceModel,
    score: f64,
    below_threshold: bool,
    presented_at: DateTime<Utc>,
}

#[derive(Serialize, Deserialize)]
struct StoredSlot {
    #[serde(rename = "loop")]
    record: LoopRecord,
    source_model: SourceModel,
    score: f64,
    below_threshold: bool,
}

#[derive(Serialize, Deserialize)]
struct StoredSession {
    format_version: u32,
    id: String,
    seed: u64,
    created_at: DateTime<Utc>,
    config: SessionConfig,
    phase: SessionPhase,
    pending: bool,
    presented: Vec<StoredPresented>,
    queue: Vec<StoredSlot>,
    queue_pos: usize,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::State(e.to_string()))?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Write the whole session under `dir` (created if missing). WAVs already
/// on disk are not rewritten.
pub fn persist_session(session: &Session, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let wav_dir = dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;

    for p in &session.presented {
        let path = wav_dir.join(format!("{}.wav", p.drum_loop.id()));
        if !path.exists() {
            let audio = render_bar(&p.drum_loop, &session.library)?;
            fs::write(&path, encode_wav(&audio)).map_err(|e| Error::io(&path, e))?;
        }
    }
    save_checkpoint(&session.initial, dir.join("initial.ckpt"))?;
    save_checkpoint(&session.live, dir.join("live.ckpt"))?;
    if let Some(f) = &session.final_critic {
        save_checkpoint(f, dir.join("final.ckpt"))?;
    }
    let opt = dir.join("optimizer.bin");
    fs::write(&opt, session.optimizer.to_bytes()).map_err(|e| Error::io(&opt, e))?;

    let records: Vec<LoopRecord> = session.presented.iter().map(|p| loop_to_record(&p.drum_loop)).collect();
    write_json(&dir.join("loops.json"), &records)?;
    write_json(
        &dir.join("ratings.json"),
        &RatingsFile {
            session: session.id.clone(),
            seed: session.seed,
            ratings: session.ratings.clone(),
        },
    )?;
    let stored = StoredSession {
        format_version: FORMAT_VERSION,
        id: session.id.clone(),
        seed: session.seed,
        created_at: session.created_at,
        config: session.config.clone(),
        phase: session.phase,
        pending: session.pending,
        presented: session
            .presented
            .iter()
            .map(|p| StoredPresented {
                record: loop_to_record(&p.drum_loop),
                phase: p.phase,
                source_model: p.source,
                score: p.score,
                below_threshold: p.below_threshold,
                presented_at: p.presented_at,
            })
            .collect(),
        queue: session
            .queue
            .iter()
            .map(|s| StoredSlot {
                record: loop_to_record(&s.drum_loop),
                source_model: s.source,
                score: s.score,
                below_threshold: s.below_threshold,
            })
            .collect(),
        queue_pos: session.queue_pos,
    };
    // written last so a partially persisted directory still loads the
    // previous consistent state
    write_json(&dir.join("session.json"), &stored)
}

/// Restore a session persisted by [`persist_session`].
pub fn load_session(dir: impl AsRef<Path>, library: Arc<SampleLibrary>) -> Result<Session> {
    let dir = dir.as_ref();
    let session_path = dir.join("session.json");
    let stored: StoredSession = read_json(&session_path)?;
    let corrupt = |reason: String| Error::Load {
        path: session_path.clone(),
        reason,
    };
    if stored.format_version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format version {}", stored.format_version)));
    }
    stored.config.validate()?;
    let ratings: RatingsFile = read_json(&dir.join("ratings.json"))?;
    if ratings.session != stored.id || ratings.seed != stored.seed {
        return Err(corrupt("ratings.json belongs to a different session".into()));
    }

    let presented = stored
        .presented
        .into_iter()
        .map(|p| {
            let drum_loop = record_to_loop(&p.record)?;
            drum_loop.instruments().validate(&library)?;
            Ok(PresentedLoop {
                drum_loop,
                phase: p.phase,
                source: p.source_model,
                score: p.score,
                below_threshold: p.below_threshold,
                presented_at: p.presented_at,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let queue = stored
        .queue
        .into_iter()
        .map(|s| {
            Ok(QueueSlot {
                drum_loop: record_to_loop(&s.record)?,
                source: s.source_model,
                score: s.score,
                below_threshold: s.below_threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rated = ratings.ratings.len();
    if rated + usize::from(stored.pending) != presented.len()
        || ratings.ratings.iter().zip(&presented).any(|(r, p)| r.loop_id != p.drum_loop.id().as_str())
    {
        return Err(corrupt("ratings do not line up with presented loops".into()));
    }

    let extractor = Arc::new(MfccExtractor::new(stored.config.mfcc)?);
    let dataset = ratings
        .ratings
        .iter()
        .zip(&presented)
        .filter(|(r, _)| r.phase == Phase::One)
        .map(|(r, p)| {
            Ok(LabeledExample {
                features: extractor.compute(&render_bar(&p.drum_loop, &library)?)?,
                label: r.rating,
                loop_id: r.loop_id.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let arch = stored.config.arch();
    let load = |name: &str| {
        let c = load_checkpoint(dir.join(name))?;
        if c.arch() != &arch {
            return Err(corrupt(format!("{name} does not match the configured architecture")));
        }
        Ok(c)
    };
    let initial = load("initial.ckpt")?;
    let live = load("live.ckpt")?;
    let final_critic = match stored.phase {
        SessionPhase::PhaseOne => None,
        _ => Some(Arc::new(load("final.ckpt")?)),
    };
    let opt_path = dir.join("optimizer.bin");
    let optimizer = OptimizerState::from_bytes(&fs::read(&opt_path).map_err(|e| Error::io(&opt_path, e))?)?;
    if optimizer.len() != live.param_count() {
        return Err(corrupt("optimizer state does not match the critic".into()));
    }

    Ok(Session {
        id: stored.id,
        seed: stored.seed,
        created_at: stored.created_at,
        config: stored.config,
        library,
        extractor,
        phase: stored.phase,
        ratings: ratings.ratings,
        presented,
        pending: stored.pending,
        dataset,
        initial: Arc::new(initial),
        live,
        optimizer,
        final_critic,
        queue,
        queue_pos: stored.queue_pos,
    })
}

impl Session {
    pub fn persist(&self, dir: impl AsRef<Path>) -> Result<()> {
        persist_session(self, dir)
    }

    pub fn load(dir: impl AsRef<Path>, library: Arc<SampleLibrary>) -> Result<Self> {
        load_session(dir, library)
    }
}
