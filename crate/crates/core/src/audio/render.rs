use super::{SampleLibrary, Waveform};
use crate::error::{Error, Result};
use crate::pattern::{DrumLoop, STEPS};

/// One bar at 120 bpm: 2 s.
pub const BAR_SAMPLES: usize = 88_200;
/// Four bars plus one second of tail.
pub const PRESENTATION_SAMPLES: usize = 4 * BAR_SAMPLES + 44_100;
const REPEATS: usize = 4;

/// Onset of step `k` within a bar: `floor(k * 88200 / 16)`.
pub fn step_onset(step: usize) -> usize {
    step * BAR_SAMPLES / STEPS
}

fn resolve<'a>(drum_loop: &DrumLoop, library: &'a SampleLibrary) -> Result<[&'a [f32]; 4]> {
    let ids = drum_loop.instruments().samples();
    let mut out: [&[f32]; 4] = [&[]; 4];
    for (slot, id) in out.iter_mut().zip(ids) {
        *slot = library
            .get(id)
            .ok_or_else(|| Error::Render(format!("unknown sample `{id}`")))?
            .samples();
    }
    Ok(out)
}

fn mix(drum_loop: &DrumLoop, library: &SampleLibrary, repeats: usize, len: usize) -> Result<Waveform> {
    let samples = resolve(drum_loop, library)?;
    let mut buf = vec![0.0f32; len];
    for rep in 0..repeats {
        for (track, step) in drum_loop.pattern().hit_positions() {
            let onset = rep * BAR_SAMPLES + step_onset(step);
            if onset >= len {
                continue;
            }
            let src = samples[track];
            let n = src.len().min(len - onset);
            for (dst, s) in buf[onset..onset + n].iter_mut().zip(&src[..n]) {
                *dst += s;
            }
        }
    }
    let peak = buf.iter().fold(0.0f32, |m, s| m.max(s.abs()));
    if peak > 1.0 {
        buf.iter_mut().for_each(|s| *s /= peak);
    }
    Ok(Waveform::new(buf))
}

/// The critic-facing render: one 2 s bar, tails truncated at the bar edge,
/// overlapping hits summed, then peak-normalized if the peak exceeds 1.
pub fn render_bar(drum_loop: &DrumLoop, library: &SampleLibrary) -> Result<Waveform> {
    mix(drum_loop, library, 1, BAR_SAMPLES)
}

/// Playback render: four bar repetitions on a 9 s timeline, tails ringing
/// across repetition boundaries.
pub fn render_presentation(drum_loop: &DrumLoop, library: &SampleLibrary) -> Result<Waveform> {
    mix(drum_loop, library, REPEATS, PRESENTATION_SAMPLES)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::{DrumPattern, InstrumentAssignment, LoopId};

    fn impulse_library() -> SampleLibrary {
        SampleLibrary::from_entries(vec![
            ("imp".to_string(), Waveform::new(vec![1.0])),
            ("half".to_string(), Waveform::new(vec![0.5, 0.25])),
        ])
        .unwrap()
    }

    fn single(track: usize, steps: &[usize], sample: &str) -> DrumLoop {
        let mut p = DrumPattern::empty();
        for &s in steps {
            p.set(track, s, true);
        }
        DrumLoop::new(
            LoopId::new("t"),
            p,
            InstrumentAssignment::new(std::array::from_fn(|_| sample.to_string())),
        )
    }

    #[test]
    fn single_impulse_at_origin() {
        let w = render_bar(&single(0, &[0], "imp"), &impulse_library()).unwrap();
        assert_eq!(w.len(), 88_200);
        assert_eq!(w.samples()[0], 1.0);
        assert!(w.samples()[1..].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn onsets_use_floor_of_exact_product() {
        let w = render_bar(&single(0, &[0, 1, 2, 3], "imp"), &impulse_library()).unwrap();
        let nz: Vec<usize> = w
            .samples()
            .iter()
            .enumerate()
            .filter(|(_, &s)| s != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(nz, vec![0, 5512, 11025, 16537]);
    }

    #[test]
    fn coincident_hits_normalize_to_unit_peak() {
        let mut l = single(0, &[4], "imp");
        let mut p = *l.pattern();
        p.set(2, 4, true);
        l = DrumLoop::new(l.id().clone(), p, l.instruments().clone());
        let w = render_bar(&l, &impulse_library()).unwrap();
        assert_eq!(w.peak(), 1.0);
        assert_eq!(w.samples()[step_onset(4)], 1.0);
    }

    #[test]
    fn presentation_repeats_four_times() {
        let w = render_presentation(&single(1, &[0], "imp"), &impulse_library()).unwrap();
        assert_eq!(w.len(), 396_900);
        let nz: Vec<usize> = w
            .samples()
            .iter()
            .enumerate()
            .filter(|(_, &s)| s != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(nz, vec![0, 88_200, 176_400, 264_600]);
    }

    #[test]
    fn empty_pattern_is_silent() {
        let l = DrumLoop::new(
            LoopId::new("e"),
            DrumPattern::empty(),
            InstrumentAssignment::new(std::array::from_fn(|_| "imp".to_string())),
        );
        let w = render_presentation(&l, &impulse_library()).unwrap();
        assert_eq!(w.len(), PRESENTATION_SAMPLES);
        assert!(w.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn tails_truncate_at_bar_edge_but_ring_in_presentation() {
        let lib = SampleLibrary::from_entries(vec![(
            "long".to_string(),
            Waveform::new(vec![0.1; 10_000]),
        )])
        .unwrap();
        let l = single(0, &[15], "long");
        let bar = render_bar(&l, &lib).unwrap();
        assert_eq!(bar.len(), BAR_SAMPLES);
        assert_eq!(bar.samples()[BAR_SAMPLES - 1], 0.1);
        let pres = render_presentation(&l, &lib).unwrap();
        // the last repetition's tail rings into the extra second
        let start = 3 * BAR_SAMPLES + step_onset(15);
        assert_eq!(pres.samples()[start + 9_999], 0.1);
        assert_eq!(pres.samples()[start + 10_000], 0.0);
        // and the first repetition's tail overlaps the second bar
        assert_eq!(pres.samples()[BAR_SAMPLES + 10], 0.1);
    }

    #[test]
    fn unresolved_sample_is_render_error() {
        let l = single(0, &[0], "missing");
        assert!(matches!(render_bar(&l, &impulse_library()), Err(Error::Render(_))));
    }
}
