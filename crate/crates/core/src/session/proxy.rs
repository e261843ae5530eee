//! Simulated listeners and the end-to-end simulation harness.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ExperimentResult, Phase, Session, SessionConfig, SessionPhase, SourceModel, STREAM_PROXY};
use crate::audio::SampleLibrary;
use crate::critic::Label;
use crate::error::{Error, Result};
use crate::pattern::DrumLoop;
use crate::rng::derive_rng;

/// A rule standing in for a human listener. Judges the symbolic loop only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ProxyRater {
    AlwaysLike,
    AlwaysDislike,
    /// Likes a loop iff its total hit count lies in `[min_hits, max_hits]`
    /// and none of its samples is blacklisted. A blacklist entry ending in
    /// `*` matches by prefix.
    DensityRule {
        min_hits: usize,
        max_hits: usize,
        blacklist: Vec<String>,
    },
}

impl ProxyRater {
    /// The rule behind `simulate --proxy density`: medium-density patterns
    /// that avoid the synthetic kit's harsh samples.
    pub fn density_default() -> Self {
        ProxyRater::DensityRule {
            min_hits: 24,
            max_hits: 40,
            blacklist: vec!["harsh_*".into()],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "always_like" | "always-like" | "like" => Ok(ProxyRater::AlwaysLike),
            "always_dislike" | "always-dislike" | "dislike" => Ok(ProxyRater::AlwaysDislike),
            "density" | "density_rule" => Ok(Self::density_default()),
            other => Err(Error::Config(format!(
                "unknown proxy `{other}` (expected always_like, always_dislike or density)"
            ))),
        }
    }

    fn blacklisted(blacklist: &[String], id: &str) -> bool {
        blacklist.iter().any(|b| match b.strip_suffix('*') {
            Some(prefix) => id.starts_with(prefix),
            None => id == b,
        })
    }

    pub fn like_probability(&self, drum_loop: &DrumLoop) -> f64 {
        match self {
            ProxyRater::AlwaysLike => 1.0,
            ProxyRater::AlwaysDislike => 0.0,
            ProxyRater::DensityRule {
                min_hits,
                max_hits,
                blacklist,
            } => {
                let hits = drum_loop.pattern().hits();
                let clean = !drum_loop
                    .instruments()
                    .samples()
                    .iter()
                    .any(|s| Self::blacklisted(blacklist, s));
                if clean && (*min_hits..=*max_hits).contains(&hits) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn rate<R: Rng + ?Sized>(&self, drum_loop: &DrumLoop, rng: &mut R) -> Label {
        let p = self.like_probability(drum_loop);
        let like = p >= 1.0 || (p > 0.0 && rng.random::<f64>() < p);
        if like {
            Label::Like
        } else {
            Label::Dislike
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub loop_id: String,
    pub phase: Phase,
    pub source_model: SourceModel,
    pub score: f64,
    pub below_threshold: bool,
    pub rating: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub result: ExperimentResult,
    pub phase1_likes: usize,
    pub transcript: Vec<TranscriptEntry>,
}

impl SimulationReport {
    /// Phase II loops that were neither flagged nor at the threshold.
    pub fn threshold_violations(&self, threshold: f64) -> Vec<&TranscriptEntry> {
        self.transcript
            .iter()
            .filter(|t| t.phase == Phase::Two && !t.below_threshold && t.score < threshold)
            .collect()
    }
}

/// Run the full 80 + 60 protocol with `proxy` answering every request.
pub fn run_simulation(
    proxy: &ProxyRater,
    config: &SessionConfig,
    library: Arc<SampleLibrary>,
    seed: u64,
) -> Result<SimulationReport> {
    let mut session = Session::create(format!("sim-{seed}"), config.clone(), library, seed)?;
    let mut transcript = Vec::new();
    let mut k = 0;
    while session.phase() != SessionPhase::Complete {
        let next = session.next_loop()?;
        let p = session.pending().expect("a loop is pending").clone();
        let rating = proxy.rate(&p.drum_loop, &mut derive_rng(seed, STREAM_PROXY, k));
        k += 1;
        session.submit_rating(next.loop_id.as_str(), rating)?;
        transcript.push(TranscriptEntry {
            loop_id: next.loop_id.to_string(),
            phase: p.phase,
            source_model: p.source,
            score: p.score,
            below_threshold: p.below_threshold,
            rating,
        });
    }
    let phase1_likes = transcript
        .iter()
        .filter(|t| t.phase == Phase::One && t.rating == Label::Like)
        .count();
    Ok(SimulationReport {
        seed,
        result: session.compute_results()?,
        phase1_likes,
        transcript,
    })
}
