#![allow(clippy::needless_range_loop)]

use drumcritic::audio::synth::synth_library;
use drumcritic::features::default_extractor;
use drumcritic::pattern::{flip_cells, PerturbParams};
use drumcritic::sampler::{
    accept, hill_climb, mh_step, sample_phase1, sample_phase2, score, LoopSpace, SamplerConfig, Scored, SearchSpace,
};
use drumcritic::{init_critic, random_loop, DrumLoop, LoopId, Result};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One track of four steps with a single sample: 16 states, bit i = step i.
struct Toy {
    table: [f64; 16],
    flip: f64,
    single_flip: bool,
}

impl Toy {
    fn new(table: [f64; 16]) -> Self {
        Self {
            table,
            flip: PerturbParams::default().cell_flip_prob,
            single_flip: false,
        }
    }
}

fn to_bits(s: u8) -> [bool; 4] {
    std::array::from_fn(|i| s >> i & 1 == 1)
}

fn from_bits(b: [bool; 4]) -> u8 {
    b.iter().enumerate().map(|(i, &x)| (x as u8) << i).sum()
}

impl SearchSpace for Toy {
    type State = u8;

    fn random_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<u8> {
        Ok(rng.random_range(0..16))
    }

    fn propose<R: Rng + ?Sized>(&self, s: &u8, rng: &mut R) -> u8 {
        if self.single_flip {
            return s ^ (1 << rng.random_range(0..4));
        }
        let mut b = to_bits(*s);
        flip_cells(&mut b, self.flip, rng);
        from_bits(b)
    }

    fn score(&self, s: &u8) -> Result<f64> {
        Ok(self.table[*s as usize])
    }
}

fn table() -> [f64; 16] {
    [
        0.05, 0.9, 0.3, 0.6, 0.12, 0.45, 0.8, 0.2, 0.7, 0.33, 0.01, 0.5, 0.95, 0.25, 0.4, 0.65,
    ]
}

fn visit_frequencies(space: &Toy, steps: usize, seed: u64) -> [f64; 16] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cur = space.scored(0).unwrap();
    for _ in 0..200 {
        cur = mh_step(space, cur, 1.0, &mut rng).unwrap().0;
    }
    let mut counts = [0usize; 16];
    for _ in 0..steps {
        cur = mh_step(space, cur, 1.0, &mut rng).unwrap().0;
        counts[cur.state as usize] += 1;
    }
    counts.map(|c| c as f64 / steps as f64)
}

fn tv(a: &[f64; 16], b: &[f64; 16]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[test]
fn chain_targets_normalized_scores() {
    let t = table();
    let total: f64 = t.iter().sum();
    let target = t.map(|x| x / total);
    let freq = visit_frequencies(&Toy::new(t), 1_000_000, 1);
    let d = tv(&freq, &target);
    assert!(d < 0.02, "TV distance {d}");
}

#[test]
fn constant_scores_give_uniform_visits() {
    let freq = visit_frequencies(&Toy::new([0.4; 16]), 1_000_000, 2);
    let d = tv(&freq, &[1.0 / 16.0; 16]);
    assert!(d < 0.02, "TV distance {d}");
}

#[test]
fn detailed_balance_flows_agree() {
    let space = Toy::new(table());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cur = space.scored(0).unwrap();
    for _ in 0..200 {
        cur = mh_step(&space, cur, 1.0, &mut rng).unwrap().0;
    }
    let mut flow = [[0f64; 16]; 16];
    for _ in 0..1_000_000 {
        let (next, _) = mh_step(&space, cur.clone(), 1.0, &mut rng).unwrap();
        flow[cur.state as usize][next.state as usize] += 1.0;
        cur = next;
    }
    for a in 0..16 {
        for b in a + 1..16 {
            let (ab, ba) = (flow[a][b], flow[b][a]);
            let sigma = (ab + ba).sqrt().max(1.0);
            assert!((ab - ba).abs() <= 3.0 * sigma, "{a}->{b}: {ab} vs {ba}");
        }
    }
}

#[test]
fn proposal_kernel_is_symmetric() {
    // q(x'|x) for every ordered pair, estimated per source state
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 200_000;
    let p = PerturbParams::default().cell_flip_prob;
    let mut q = [[0f64; 16]; 16];
    for x in 0..16u8 {
        for _ in 0..n {
            let mut b = to_bits(x);
            flip_cells(&mut b, p, &mut rng);
            q[x as usize][from_bits(b) as usize] += 1.0;
        }
    }
    for a in 0..16 {
        for b in 0..16 {
            let (pa, pb) = (q[a][b] / n as f64, q[b][a] / n as f64);
            let pm = (pa + pb) / 2.0;
            let sigma = (2.0 * pm * (1.0 - pm) / n as f64).sqrt().max(1.0 / n as f64);
            assert!((pa - pb).abs() <= 3.0 * sigma, "{a}<->{b}: {pa} vs {pb}");
        }
    }
}

fn acceptance_rate(space: &Toy, s: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cur = space.scored(0).unwrap();
    let n = 200_000;
    let mut moved = 0;
    for _ in 0..n {
        let proposal = space.propose(&cur.state, &mut rng);
        let proposal = space.scored(proposal).unwrap();
        if accept(cur.score, proposal.score, s, &mut rng) {
            moved += 1;
            cur = proposal;
        }
    }
    moved as f64 / n as f64
}

#[test]
fn higher_temperature_accepts_more() {
    let space = Toy::new(table());
    let rates: Vec<f64> = [0.25, 0.5, 1.0, 2.0, 4.0]
        .iter()
        .map(|&s| acceptance_rate(&space, s, 5))
        .collect();
    for w in rates.windows(2) {
        assert!(w[1] > w[0], "{rates:?}");
    }
}

#[test]
fn acceptance_frequency_matches_exact_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 100_000;
    for (cur, prop, s) in [(0.9f64, 0.3f64, 1.0f64), (0.8, 0.2, 2.0), (0.5, 0.45, 0.5), (0.3, 0.9, 1.0)] {
        let p: f64 = (prop / cur).powf(1.0 / s).min(1.0);
        let hits = (0..n).filter(|_| accept(cur, prop, s, &mut rng)).count() as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits / n as f64 - p).abs() <= 3.0 * sigma + 1e-12, "{cur} {prop} {s}");
    }
}

#[test]
fn constant_critic_accepts_everything() {
    let space = Toy::new([0.3; 16]);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cur = space.scored(5).unwrap();
    for _ in 0..1000 {
        let (next, accepted) = mh_step(&space, cur, 1.0, &mut rng).unwrap();
        assert!(accepted);
        cur = next;
    }
}

#[test]
fn phase2_returns_initial_state_when_threshold_met() {
    let space = Toy::new([0.96; 16]);
    let out = sample_phase2(&space, &SamplerConfig::default(), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let first = space.random_state(&mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    assert_eq!(out.best.state, first);
    assert_eq!((out.steps, out.chains, out.below_threshold), (0, 1, false));
}

#[test]
fn phase2_falls_back_after_restarts() {
    let space = Toy::new([0.5; 16]);
    let cfg = SamplerConfig {
        phase2_max_steps: 100,
        ..Default::default()
    };
    let out = sample_phase2(&space, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert!(out.below_threshold);
    assert_eq!(out.chains, 5);
    assert_eq!(out.steps, 500);
    assert_eq!(out.best.score, 0.5);
}

#[test]
fn phase2_finds_the_single_good_state() {
    let mut t = [0.01; 16];
    t[11] = 0.99;
    let space = Toy::new(t);
    for seed in 0..20 {
        let out = sample_phase2(&space, &SamplerConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(out.best.state, 11);
        assert!(!out.below_threshold);
    }
}

#[test]
fn phase2_output_meets_threshold_unless_flagged() {
    let space = Toy::new(table());
    for seed in 0..50 {
        let cfg = SamplerConfig {
            phase2_max_steps: 3,
            phase2_max_restarts: 2,
            ..Default::default()
        };
        let out = sample_phase2(&space, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert!(out.below_threshold || out.best.score >= 0.95);
    }
}

#[test]
fn hill_climb_constant_critic_keeps_init() {
    let space = Toy::new([0.2; 16]);
    let (out, traj) = hill_climb(&space, 6, 100, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    assert_eq!(out.state, 6);
    assert!(traj.iter().all(|&s| s == 0.2));
    assert!(hill_climb(&space, 6, 0, &mut ChaCha8Rng::seed_from_u64(10)).is_err());
}

#[test]
fn hill_climb_ends_at_local_maximum() {
    let t = table();
    let space = Toy {
        single_flip: true,
        ..Toy::new(t)
    };
    for start in 0..16u8 {
        let (out, _) = hill_climb(&space, start, 200, &mut ChaCha8Rng::seed_from_u64(start as u64)).unwrap();
        for bit in 0..4 {
            let neighbor = out.state ^ (1 << bit);
            assert!(t[neighbor as usize] <= out.score, "{start}: {} not a local max", out.state);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hill_climb_trajectory_never_decreases(seed in any::<u64>(), start in 0u8..16, vals in prop::array::uniform16(0.0f64..1.0)) {
        let space = Toy::new(vals);
        let (out, traj) = hill_climb(&space, start, 50, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(traj.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(traj[0] >= vals[start as usize]);
        prop_assert_eq!(*traj.last().unwrap(), out.score);
    }

    #[test]
    fn samplers_are_deterministic(seed in any::<u64>()) {
        let space = Toy::new(table());
        let cfg = SamplerConfig::default();
        let a = sample_phase1(&space, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = sample_phase1(&space, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
        let a = sample_phase2(&space, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = sample_phase2(&space, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn critic_scores_are_pure_and_in_range() {
    let lib = synth_library(1, 2, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let critic = init_critic(&mut rng);
    let ex = default_extractor();
    for _ in 0..1000 {
        let l = random_loop(&lib, &mut rng).unwrap();
        let s = score(&critic, &l, &lib, ex).unwrap();
        assert!((0.0..=1.0).contains(&s));
    }
    let l = random_loop(&lib, &mut rng).unwrap();
    let twin = l.clone().with_id(LoopId::new("other"));
    assert_eq!(score(&critic, &l, &lib, ex).unwrap(), score(&critic, &twin, &lib, ex).unwrap());
}

#[test]
fn zeroed_head_scores_every_loop_one_half() {
    let lib = synth_library(1, 2, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut critic = init_critic(&mut rng);
    critic.set_constant_output(0.5);
    for _ in 0..20 {
        let l = random_loop(&lib, &mut rng).unwrap();
        assert_eq!(score(&critic, &l, &lib, default_extractor()).unwrap(), 0.5);
    }
}

#[test]
fn loop_space_chain_runs_against_a_closure_scorer() {
    let lib = synth_library(1, 2, 2).unwrap();
    let density = |l: &DrumLoop| l.pattern().hits() as f64 / 64.0;
    let space = LoopSpace {
        library: &lib,
        perturbation: PerturbParams::default(),
        scorer: density,
    };
    let cfg = SamplerConfig {
        // target ~ C(64, k) * (k / 64)^100, which peaks near k = 52
        temperature: 0.01,
        burn_in_steps: 2000,
        ..Default::default()
    };
    let out = sample_phase1(&space, &cfg, &mut ChaCha8Rng::seed_from_u64(13)).unwrap();
    // a cold chain climbs toward dense patterns
    assert!(out.score > 0.7, "{}", out.score);
    let Scored { state, .. } = out;
    assert!(state.instruments().validate(&lib).is_ok());
}
