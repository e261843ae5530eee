//! Symbolic drum loops: a 4-track, 16-step hit grid plus one one-shot
//! sample per track.
//!
//! Generation is uniform (every cell a fair coin, every instrument a
//! uniform draw with replacement) and the perturbation kernel is symmetric,
//! which is what lets the Metropolis-Hastings sampler drop the proposal
//! terms from its acceptance ratio.

use std::fmt;
use std::hash::{Hash, Hasher};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::SampleLibrary;
use crate::error::{Error, Result};

pub const TRACKS: usize = 4;
pub const STEPS: usize = 16;

/// Hit grid, track-major: `grid[track][step]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct DrumPattern {
    grid: [[bool; STEPS]; TRACKS],
}

impl DrumPattern {
    pub fn new(grid: [[bool; STEPS]; TRACKS]) -> Self {
        Self { grid }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn full() -> Self {
        Self {
            grid: [[true; STEPS]; TRACKS],
        }
    }

    pub fn grid(&self) -> &[[bool; STEPS]; TRACKS] {
        &self.grid
    }

    pub fn get(&self, track: usize, step: usize) -> bool {
        self.grid[track][step]
    }

    pub fn set(&mut self, track: usize, step: usize, hit: bool) {
        self.grid[track][step] = hit;
    }

    /// Total number of hits across all tracks.
    pub fn hits(&self) -> usize {
        self.grid.iter().flatten().filter(|&&c| c).count()
    }

    pub fn complement(&self) -> Self {
        let mut grid = self.grid;
        grid.iter_mut().flatten().for_each(|c| *c = !*c);
        Self { grid }
    }

    /// Iterate `(track, step)` for every hit.
    pub fn hit_positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.grid.iter().enumerate().flat_map(|(t, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, &hit)| hit)
                .map(move |(s, _)| (t, s))
        })
    }
}

/// One sample identifier per track.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct InstrumentAssignment {
    samples: [String; TRACKS],
}

impl InstrumentAssignment {
    pub fn new(samples: [String; TRACKS]) -> Self {
        Self { samples }
    }

    pub fn samples(&self) -> &[String; TRACKS] {
        &self.samples
    }

    pub fn get(&self, track: usize) -> &str {
        &self.samples[track]
    }

    /// Every identifier must resolve in `library`.
    pub fn validate(&self, library: &SampleLibrary) -> Result<()> {
        for (track, id) in self.samples.iter().enumerate() {
            if !library.contains(id) {
                return Err(Error::Render(format!(
                    "track {track} references unknown sample `{id}`"
                )));
            }
        }
        Ok(())
    }
}

/// Opaque loop identity. Content equality of loops ignores it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LoopId(String);

impl LoopId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    /// UUID-formatted id drawn from `rng`, so id sequences replay under a seed.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let bytes: [u8; 16] = rng.random();
        Self(uuid::Builder::from_random_bytes(bytes).into_uuid().to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LoopId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A drum loop in symbolic form.
///
/// `PartialEq`/`Hash` compare content (pattern and instruments) only; two
/// loops with different ids but identical content are the same loop
/// musically. Compare `id()` explicitly when identity matters.
#[derive(Clone, Debug)]
pub struct DrumLoop {
    id: LoopId,
    pattern: DrumPattern,
    instruments: InstrumentAssignment,
}

impl DrumLoop {
    pub fn new(id: LoopId, pattern: DrumPattern, instruments: InstrumentAssignment) -> Self {
        Self {
            id,
            pattern,
            instruments,
        }
    }

    pub fn id(&self) -> &LoopId {
        &self.id
    }

    pub fn pattern(&self) -> &DrumPattern {
        &self.pattern
    }

    pub fn instruments(&self) -> &InstrumentAssignment {
        &self.instruments
    }

    pub fn with_id(mut self, id: LoopId) -> Self {
        self.id = id;
        self
    }
}

impl PartialEq for DrumLoop {
    fn eq(&self, other: &Self) -> bool {
        self.pattern == other.pattern && self.instruments == other.instruments
    }
}

impl Eq for DrumLoop {}

impl Hash for DrumLoop {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.pattern.hash(state);
        self.instruments.hash(state);
    }
}

/// Parameters of the symmetric perturbation kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbParams {
    pub cell_flip_prob: f64,
    pub instrument_redraw_prob: f64,
}

impl Default for PerturbParams {
    fn default() -> Self {
        Self {
            cell_flip_prob: 0.05,
            instrument_redraw_prob: 0.1,
        }
    }
}

impl PerturbParams {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("cell_flip_prob", self.cell_flip_prob),
            ("instrument_redraw_prob", self.instrument_redraw_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// Uniform random loop: every cell a fair coin flip, every track's sample
/// drawn uniformly (with replacement) from the library.
pub fn random_loop<R: Rng + ?Sized>(library: &SampleLibrary, rng: &mut R) -> Result<DrumLoop> {
    let ids = library.ids();
    if ids.is_empty() {
        return Err(Error::Config("sample library is empty".into()));
    }
    let mut grid = [[false; STEPS]; TRACKS];
    grid.iter_mut()
        .flatten()
        .for_each(|c| *c = rng.random_bool(0.5));
    let samples = std::array::from_fn(|_| ids[rng.random_range(0..ids.len())].clone());
    Ok(DrumLoop::new(
        LoopId::random(rng),
        DrumPattern::new(grid),
        InstrumentAssignment::new(samples),
    ))
}

/// Flip each cell independently with probability `p`.
pub fn flip_cells<R: Rng + ?Sized>(cells: &mut [bool], p: f64, rng: &mut R) {
    for c in cells {
        if rng.random_bool(p) {
            *c = !*c;
        }
    }
}

/// With probability `p` per slot, redraw uniformly from `choices`
/// (the current value included, which keeps the kernel symmetric).
pub fn redraw_choices<R: Rng + ?Sized>(slots: &mut [String], choices: &[String], p: f64, rng: &mut R) {
    for slot in slots {
        if rng.random_bool(p) {
            *slot = choices[rng.random_range(0..choices.len())].clone();
        }
    }
}

/// Symmetric proposal q(x'|x) = q(x|x'). Assigns a fresh id.
pub fn perturb<R: Rng + ?Sized>(
    drum_loop: &DrumLoop,
    params: &PerturbParams,
    rng: &mut R,
    library: &SampleLibrary,
) -> DrumLoop {
    let mut grid = *drum_loop.pattern.grid();
    flip_cells(grid.as_flattened_mut(), params.cell_flip_prob, rng);
    let mut samples = drum_loop.instruments.samples.clone();
    redraw_choices(&mut samples, library.ids(), params.instrument_redraw_prob, rng);
    DrumLoop::new(
        LoopId::random(rng),
        DrumPattern::new(grid),
        InstrumentAssignment::new(samples),
    )
}

/// Portable record: `{"id", "grid": [[bool;16];4], "samples": [string;4]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub id: String,
    pub grid: Vec<Vec<bool>>,
    pub samples: Vec<String>,
}

pub fn loop_to_record(drum_loop: &DrumLoop) -> LoopRecord {
    LoopRecord {
        id: drum_loop.id.0.clone(),
        grid: drum_loop.pattern.grid.iter().map(|r| r.to_vec()).collect(),
        samples: drum_loop.instruments.samples.to_vec(),
    }
}

pub fn record_to_loop(record: &LoopRecord) -> Result<DrumLoop> {
    if record.id.is_empty() {
        return Err(Error::parse("id", "must be a non-empty string"));
    }
    if record.grid.len() != TRACKS {
        return Err(Error::parse(
            "grid",
            format!("expected {TRACKS} rows, found {}", record.grid.len()),
        ));
    }
    let mut grid = [[false; STEPS]; TRACKS];
    for (t, row) in record.grid.iter().enumerate() {
        if row.len() != STEPS {
            return Err(Error::parse(
                format!("grid[{t}]"),
                format!("expected {STEPS} steps, found {}", row.len()),
            ));
        }
        grid[t].copy_from_slice(row);
    }
    let samples: [String; TRACKS] = record.samples.clone().try_into().map_err(|v: Vec<String>| {
        Error::parse(
            "samples",
            format!("expected {TRACKS} sample ids, found {}", v.len()),
        )
    })?;
    if let Some(t) = samples.iter().position(|s| s.is_empty()) {
        return Err(Error::parse(format!("samples[{t}]"), "empty sample id"));
    }
    Ok(DrumLoop::new(
        LoopId(record.id.clone()),
        DrumPattern::new(grid),
        InstrumentAssignment::new(samples),
    ))
}

/// Parse a record from JSON, reporting the offending field on failure.
pub fn record_from_json(text: &str) -> Result<DrumLoop> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::parse("<record>", e.to_string()))?;
    let record: LoopRecord = serde_json::from_value(value).map_err(|e| {
        let msg = e.to_string();
        let field = ["id", "grid", "samples"]
            .into_iter()
            .find(|f| msg.contains(&format!("`{f}`")))
            .unwrap_or("<record>");
        Error::parse(field, msg)
    })?;
    record_to_loop(&record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{SampleLibrary, Waveform};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn library(n: usize) -> SampleLibrary {
        SampleLibrary::from_entries(
            (0..n).map(|i| (i.to_string(), Waveform::new(vec![1.0]))),
        )
        .unwrap()
    }

    #[test]
    fn random_loop_shape_and_range() {
        let lib = library(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let l = random_loop(&lib, &mut rng).unwrap();
            assert_eq!(l.pattern().grid().len(), 4);
            assert!(l.pattern().grid().iter().all(|r| r.len() == 16));
            for s in l.instruments().samples() {
                assert!(["0", "1", "2", "3"].contains(&s.as_str()));
            }
            l.instruments().validate(&lib).unwrap();
        }
    }

    #[test]
    fn random_loop_rejects_empty_library() {
        let lib = SampleLibrary::from_entries(Vec::new());
        assert!(matches!(lib, Err(Error::Config(_))));
    }

    #[test]
    fn random_loop_density_is_half() {
        let lib = library(4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let hits: usize = (0..draws)
            .map(|_| random_loop(&lib, &mut rng).unwrap().pattern().hits())
            .sum();
        let density = hits as f64 / (draws * 64) as f64;
        assert!((density - 0.5).abs() < 0.02, "density {density}");
    }

    #[test]
    fn instrument_draws_are_uniform_chi_square() {
        let lib = library(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 4];
        let draws = 10_000;
        for _ in 0..draws {
            let l = random_loop(&lib, &mut rng).unwrap();
            for s in l.instruments().samples() {
                counts[s.parse::<usize>().unwrap()] += 1;
            }
        }
        let expected = (draws * TRACKS) as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // chi-square, 3 dof, upper 1% point
        assert!(chi2 < 11.345, "chi2 {chi2} counts {counts:?}");
    }

    #[test]
    fn perturb_identity_and_complement() {
        let lib = library(4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let l = random_loop(&lib, &mut rng).unwrap();
        let none = PerturbParams {
            cell_flip_prob: 0.0,
            instrument_redraw_prob: 0.0,
        };
        let same = perturb(&l, &none, &mut rng, &lib);
        assert_eq!(same, l);
        assert_ne!(same.id(), l.id());

        let flip_all = PerturbParams {
            cell_flip_prob: 1.0,
            instrument_redraw_prob: 0.0,
        };
        let flipped = perturb(&l, &flip_all, &mut rng, &lib);
        assert_eq!(*flipped.pattern(), l.pattern().complement());
        assert_eq!(flipped.instruments(), l.instruments());
    }

    #[test]
    fn perturb_params_bounds() {
        assert!(PerturbParams::default().validate().is_ok());
        let bad = PerturbParams {
            cell_flip_prob: 1.5,
            instrument_redraw_prob: 0.1,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn record_round_trip_edges() {
        let ids: [String; 4] = std::array::from_fn(|_| "0".to_string());
        for pattern in [DrumPattern::empty(), DrumPattern::full()] {
            let l = DrumLoop::new(
                LoopId::new("abc"),
                pattern,
                InstrumentAssignment::new(ids.clone()),
            );
            let back = record_to_loop(&loop_to_record(&l)).unwrap();
            assert_eq!(back, l);
            assert_eq!(back.id(), l.id());
        }
    }

    #[test]
    fn malformed_records_name_the_field() {
        let cases = [
            (r#"{"id":"a","grid":[[true]],"samples":["a","b","c","d"]}"#, "grid"),
            (
                r#"{"id":"a","grid":[[false,false,false,false,false,false,false,false,false,false,false,false,false,false,false,false],[true],[false,false,false,false,false,false,false,false,false,false,false,false,false,false,false,false],[false,false,false,false,false,false,false,false,false,false,false,false,false,false,false,false]],"samples":["a","b","c","d"]}"#,
                "grid[1]",
            ),
            (r#"{"id":"a","samples":["a","b","c","d"]}"#, "grid"),
            (
                r#"{"id":"a","grid":[[false,false,false,false,false,false,false,false,false,false,false,false,false,false,false,false]],"samples":[]}"#,
                "grid",
            ),
            (r#"{"grid":[],"samples":[]}"#, "id"),
        ];
        for (json, field) in cases {
            match record_from_json(json) {
                Err(Error::Parse { field: f, .. }) => assert_eq!(f, field, "{json}"),
                other => panic!("expected parse error for {json}, got {other:?}"),
            }
        }
        let short = loop_to_record(&DrumLoop::new(
            LoopId::new("x"),
            DrumPattern::empty(),
            InstrumentAssignment::new(std::array::from_fn(|_| "k".into())),
        ));
        let mut bad = short.clone();
        bad.samples.pop();
        assert!(matches!(
            record_to_loop(&bad),
            Err(Error::Parse { ref field, .. }) if field == "samples"
        ));
    }
}
