//! Search over loop space against a fixed critic: tempered
//! Metropolis-Hastings, the two sampling phases, and greedy hill climbing.
//!
//! Everything is generic over [`SearchSpace`] so the same chain code runs on
//! real drum loops and on small enumerable toy spaces.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{render_bar, SampleLibrary};
use crate::critic::CriticParams;
use crate::error::{Error, Result};
use crate::features::MfccExtractor;
use crate::pattern::{perturb, random_loop, DrumLoop, PerturbParams};

/// Scores are clamped to this before forming acceptance ratios.
pub const SCORE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub burn_in_steps: usize,
    pub temperature: f64,
    pub phase2_threshold: f64,
    pub phase2_max_steps: usize,
    pub phase2_max_restarts: usize,
    pub perturbation: PerturbParams,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            burn_in_steps: 200,
            temperature: 1.0,
            phase2_threshold: 0.95,
            phase2_max_steps: 5000,
            phase2_max_restarts: 5,
            perturbation: PerturbParams::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.phase2_threshold > 0.0 && self.phase2_threshold < 1.0) {
            return Err(Error::Config(format!(
                "phase2_threshold must lie in (0, 1), got {}",
                self.phase2_threshold
            )));
        }
        if self.phase2_max_steps == 0 || self.phase2_max_restarts == 0 {
            return Err(Error::Config("phase II step and restart caps must be at least 1".into()));
        }
        self.perturbation.validate()
    }
}

/// A chain state with its cached score.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored<S> {
    pub state: S,
    pub score: f64,
}

pub type ScoredLoop = Scored<DrumLoop>;

pub trait SearchSpace {
    type State: Clone;

    fn random_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Self::State>;
    /// Draw from a symmetric proposal kernel.
    fn propose<R: Rng + ?Sized>(&self, state: &Self::State, rng: &mut R) -> Self::State;
    fn score(&self, state: &Self::State) -> Result<f64>;

    fn scored(&self, state: Self::State) -> Result<Scored<Self::State>> {
        let score = self.score(&state)?;
        Ok(Scored { state, score })
    }
}

/// Anything that maps a loop to a like-probability.
pub trait LoopScorer {
    fn score_loop(&self, drum_loop: &DrumLoop) -> Result<f64>;
}

impl<F: Fn(&DrumLoop) -> f64> LoopScorer for F {
    fn score_loop(&self, drum_loop: &DrumLoop) -> Result<f64> {
        Ok(self(drum_loop))
    }
}

/// Render the bar, extract MFCCs, run the critic in eval mode.
pub struct CriticScorer<'a> {
    pub critic: &'a CriticParams<f32>,
    pub library: &'a SampleLibrary,
    pub extractor: &'a MfccExtractor,
}

impl LoopScorer for CriticScorer<'_> {
    fn score_loop(&self, drum_loop: &DrumLoop) -> Result<f64> {
        let audio = render_bar(drum_loop, self.library)?;
        self.critic.predict(&self.extractor.compute(&audio)?)
    }
}

/// Score a loop with a critic: render, MFCC, eval-mode forward.
pub fn score(
    critic: &CriticParams<f32>,
    drum_loop: &DrumLoop,
    library: &SampleLibrary,
    extractor: &MfccExtractor,
) -> Result<f64> {
    CriticScorer {
        critic,
        library,
        extractor,
    }
    .score_loop(drum_loop)
}

/// Full drum-loop space under the random-loop prior and perturbation kernel.
pub struct LoopSpace<'a, S> {
    pub library: &'a SampleLibrary,
    pub perturbation: PerturbParams,
    pub scorer: S,
}

impl<S: LoopScorer> SearchSpace for LoopSpace<'_, S> {
    type State = DrumLoop;

    fn random_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DrumLoop> {
        random_loop(self.library, rng)
    }

    fn propose<R: Rng + ?Sized>(&self, state: &DrumLoop, rng: &mut R) -> DrumLoop {
        perturb(state, &self.perturbation, rng, self.library)
    }

    fn score(&self, state: &DrumLoop) -> Result<f64> {
        self.scorer.score_loop(state)
    }
}

/// `min(1, (f(x') / f(x))^(1/s))` with both scores floored.
pub fn acceptance_probability(current: f64, proposed: f64, temperature: f64) -> f64 {
    let ratio = proposed.max(SCORE_FLOOR) / current.max(SCORE_FLOOR);
    ratio.powf(1.0 / temperature).min(1.0)
}

/// Accept automatically when `alpha >= 1`; otherwise draw once.
pub fn accept<R: Rng + ?Sized>(current: f64, proposed: f64, temperature: f64, rng: &mut R) -> bool {
    let alpha = acceptance_probability(current, proposed, temperature);
    alpha >= 1.0 || rng.random::<f64>() < alpha
}

/// One tempered Metropolis-Hastings transition. Returns the new state and
/// whether the proposal was accepted.
pub fn mh_step<Sp: SearchSpace, R: Rng + ?Sized>(
    space: &Sp,
    current: Scored<Sp::State>,
    temperature: f64,
    rng: &mut R,
) -> Result<(Scored<Sp::State>, bool)> {
    let proposal = space.scored(space.propose(&current.state, rng))?;
    if accept(current.score, proposal.score, temperature, rng) {
        Ok((proposal, true))
    } else {
        Ok((current, false))
    }
}

/// Random start followed by `burn_in_steps` transitions; the final state.
pub fn sample_phase1<Sp: SearchSpace, R: Rng + ?Sized>(
    space: &Sp,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Scored<Sp::State>> {
    cfg.validate()?;
    let mut cur = space.scored(space.random_state(rng)?)?;
    for _ in 0..cfg.burn_in_steps {
        cur = mh_step(space, cur, cfg.temperature, rng)?.0;
    }
    Ok(cur)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phase2Outcome<S> {
    pub best: Scored<S>,
    /// Set when every chain ran out of steps without reaching the threshold.
    pub below_threshold: bool,
    pub chains: usize,
    pub steps: usize,
}

/// Run chains until some visited state scores at least the threshold. Each
/// chain gets `phase2_max_steps` transitions from a fresh random start; after
/// `phase2_max_restarts` exhausted chains the best state seen is returned,
/// flagged.
pub fn sample_phase2<Sp: SearchSpace, R: Rng + ?Sized>(
    space: &Sp,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Phase2Outcome<Sp::State>> {
    cfg.validate()?;
    let mut best: Option<Scored<Sp::State>> = None;
    let mut steps = 0;
    for chain in 1..=cfg.phase2_max_restarts {
        let mut cur = space.scored(space.random_state(rng)?)?;
        for step in 0..=cfg.phase2_max_steps {
            if step > 0 {
                cur = mh_step(space, cur, cfg.temperature, rng)?.0;
                steps += 1;
            }
            if cur.score >= cfg.phase2_threshold {
                return Ok(Phase2Outcome {
                    best: cur,
                    below_threshold: false,
                    chains: chain,
                    steps,
                });
            }
            if best.as_ref().is_none_or(|b| cur.score > b.score) {
                best = Some(cur.clone());
            }
        }
    }
    Ok(Phase2Outcome {
        best: best.expect("at least one chain ran"),
        below_threshold: true,
        chains: cfg.phase2_max_restarts,
        steps,
    })
}

/// Greedy search from `init`: accept a proposal only when it strictly
/// improves the score. Returns the final state and the score after each
/// iteration.
pub fn hill_climb<Sp: SearchSpace, R: Rng + ?Sized>(
    space: &Sp,
    init: Sp::State,
    iterations: usize,
    rng: &mut R,
) -> Result<(Scored<Sp::State>, Vec<f64>)> {
    if iterations == 0 {
        return Err(Error::Contract("hill climbing needs at least one iteration".into()));
    }
    let mut cur = space.scored(init)?;
    let mut trajectory = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let proposal = space.scored(space.propose(&cur.state, rng))?;
        if proposal.score > cur.score {
            cur = proposal;
        }
        trajectory.push(cur.score);
    }
    Ok((cur, trajectory))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn acceptance_arithmetic() {
        assert_eq!(acceptance_probability(0.3, 0.9, 1.0), 1.0);
        assert!((acceptance_probability(0.9, 0.3, 1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((acceptance_probability(0.9, 0.3, 2.0) - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        // floor keeps zero scores finite
        assert_eq!(acceptance_probability(0.0, 0.0, 1.0), 1.0);
        assert!((acceptance_probability(1e-3, 0.0, 1.0) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn acceptance_frequency_one_third() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 100_000;
        let hits = (0..n).filter(|_| accept(0.9, 0.3, 1.0, &mut rng)).count();
        assert!((hits as f64 / n as f64 - 1.0 / 3.0).abs() < 0.005);
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::default().validate().is_ok());
        for bad in [
            SamplerConfig {
                temperature: 0.0,
                ..Default::default()
            },
            SamplerConfig {
                phase2_threshold: 1.0,
                ..Default::default()
            },
            SamplerConfig {
                phase2_max_steps: 0,
                ..Default::default()
            },
            SamplerConfig {
                phase2_max_restarts: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
