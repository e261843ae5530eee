//! Interactive drum-loop preference learning.
//!
//! A listener rates randomly generated one-bar drum loops; a small CNN
//! critic over MFCC features learns their taste; a Metropolis-Hastings
//! sampler then proposes loops the critic expects them to like.

pub mod audio;
pub mod critic;
pub mod error;
pub mod features;
pub mod pattern;
pub mod rng;
pub mod sampler;
pub mod session;

pub use audio::{
    decode_wav, encode_wav, load_library, render_bar, render_presentation, SampleLibrary, Waveform,
    BAR_SAMPLES, PRESENTATION_SAMPLES, SAMPLE_RATE,
};
pub use critic::{
    forward, init_critic, load_checkpoint, loss_and_gradients, retrain_from_scratch, save_checkpoint,
    train_increment, CriticArch, CriticParams, Label, LabeledExample, Mode, OptimizerState, TrainerConfig,
};
pub use error::{Error, Result};
pub use features::{compute_mfcc, MfccMatrix, MfccSettings};
pub use pattern::{
    loop_to_record, perturb, random_loop, record_to_loop, DrumLoop, DrumPattern, InstrumentAssignment, LoopId,
    LoopRecord, PerturbParams,
};
