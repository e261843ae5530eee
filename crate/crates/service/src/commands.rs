//! Batch operations behind the CLI subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use drumcritic::features::MfccExtractor;
use drumcritic::session::{ensemble_rank, run_simulation, ProxyRater, SimulationReport};
use drumcritic::{encode_wav, load_checkpoint, record_to_loop, render_bar, CriticParams, DrumLoop, LoopRecord, SampleLibrary};
use serde::Serialize;

use crate::config::ServiceConfig;
use crate::error::{ServiceError, ServiceResult};

#[derive(Clone, Debug, Serialize)]
pub struct SeedRow {
    pub seed: u64,
    pub theta_init: f64,
    pub theta_final: f64,
    pub delta_theta: f64,
    pub phase1_likes: usize,
    /// Phase II loops flagged as fallbacks.
    pub flagged: usize,
    /// Non-flagged Phase II loops scoring under the threshold; always 0
    /// for a correct sampler.
    pub threshold_violations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Aggregate {
    pub mean_delta_theta: f64,
    pub median_delta_theta: f64,
    pub fraction_positive: f64,
    pub fraction_non_negative: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulationSummary {
    pub proxy: ProxyRater,
    pub seeds: Vec<SeedRow>,
    pub aggregate: Aggregate,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

fn row(report: &SimulationReport, threshold: f64) -> SeedRow {
    SeedRow {
        seed: report.seed,
        theta_init: report.result.theta_init,
        theta_final: report.result.theta_final,
        delta_theta: report.result.delta_theta,
        phase1_likes: report.phase1_likes,
        flagged: report.transcript.iter().filter(|t| t.below_threshold).count(),
        threshold_violations: report.threshold_violations(threshold).len(),
    }
}

pub fn summarize(proxy: &ProxyRater, rows: Vec<SeedRow>) -> SimulationSummary {
    let deltas: Vec<f64> = rows.iter().map(|r| r.delta_theta).collect();
    let n = deltas.len() as f64;
    let aggregate = Aggregate {
        mean_delta_theta: deltas.iter().sum::<f64>() / n,
        median_delta_theta: median(&deltas),
        fraction_positive: deltas.iter().filter(|&&d| d > 0.0).count() as f64 / n,
        fraction_non_negative: rows.iter().filter(|r| r.theta_final >= r.theta_init).count() as f64 / n,
    };
    SimulationSummary {
        proxy: proxy.clone(),
        seeds: rows,
        aggregate,
    }
}

/// Full proxy-driven sessions for each seed, reported as they finish.
pub fn simulate(
    config: &ServiceConfig,
    proxy: &ProxyRater,
    seeds: &[u64],
    mut on_seed: impl FnMut(&SimulationReport, &SeedRow),
) -> ServiceResult<SimulationSummary> {
    if seeds.is_empty() {
        return Err(ServiceError::Invalid("at least one seed is required".into()));
    }
    let library = config.library()?;
    let threshold = config.session.sampler.phase2_threshold;
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let report = run_simulation(proxy, &config.session, library.clone(), seed)?;
        let r = row(&report, threshold);
        on_seed(&report, &r);
        rows.push(r);
    }
    Ok(summarize(proxy, rows))
}

pub fn format_table(summary: &SimulationSummary) -> String {
    let mut out = String::from("seed   theta_init  theta_final  delta_theta  flagged  violations\n");
    for r in &summary.seeds {
        out += &format!(
            "{:<6} {:>10.3}  {:>11.3}  {:>+11.3}  {:>7}  {:>10}\n",
            r.seed, r.theta_init, r.theta_final, r.delta_theta, r.flagged, r.threshold_violations
        );
    }
    let a = &summary.aggregate;
    out += &format!(
        "mean delta {:+.3}  median delta {:+.3}  positive {:.0}%  non-negative {:.0}%\n",
        a.mean_delta_theta,
        a.median_delta_theta,
        100.0 * a.fraction_positive,
        100.0 * a.fraction_non_negative
    );
    out
}

fn sorted_files(dir: &Path, ext: &str) -> ServiceResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| ServiceError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case(ext)))
        .collect();
    files.sort();
    Ok(files)
}

/// Loops from every `*.json` in `dir`; each file holds one record or an
/// array of them (a session's `loops.json` works as is).
pub fn read_loops(dir: &Path) -> ServiceResult<Vec<DrumLoop>> {
    let mut loops = Vec::new();
    for path in sorted_files(dir, "json")? {
        let text = fs::read_to_string(&path).map_err(|e| ServiceError::io(&path, e))?;
        let bad = |e: String| ServiceError::Invalid(format!("{}: {e}", path.display()));
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let records: Vec<LoopRecord> = match value {
            serde_json::Value::Array(_) => serde_json::from_value(value),
            _ => serde_json::from_value(value).map(|r| vec![r]),
        }
        .map_err(|e| bad(e.to_string()))?;
        for r in &records {
            loops.push(record_to_loop(r).map_err(|e| bad(e.to_string()))?);
        }
    }
    Ok(loops)
}

pub fn read_checkpoints(dir: &Path) -> ServiceResult<Vec<CriticParams>> {
    let found = sorted_files(dir, "ckpt")?;
    if found.is_empty() {
        return Err(ServiceError::Invalid(format!("no *.ckpt files in {}", dir.display())));
    }
    found.iter().map(|p| Ok(load_checkpoint(p)?)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct RankedLoop {
    pub rank: usize,
    pub loop_id: String,
    pub mean_score: f64,
    pub wav: Option<PathBuf>,
}

fn write_wav(library: &SampleLibrary, l: &DrumLoop, path: &Path) -> ServiceResult<()> {
    let audio = render_bar(l, library)?;
    fs::write(path, encode_wav(&audio)).map_err(|e| ServiceError::io(path, e))
}

/// Ensemble-rank the loops and export the best `top` and worst `bottom`
/// as `best_<k>_<id>.wav` / `worst_<k>_<id>.wav` under `out`.
pub fn rank(
    config: &ServiceConfig,
    checkpoints: &Path,
    loops: &Path,
    top: usize,
    bottom: usize,
    out: &Path,
) -> ServiceResult<Vec<RankedLoop>> {
    let critics = read_checkpoints(checkpoints)?;
    let candidates = read_loops(loops)?;
    let library = config.library()?;
    let extractor = MfccExtractor::new(config.session.mfcc)?;
    let arch = config.session.arch();
    if let Some(c) = critics.iter().find(|c| c.arch() != &arch) {
        return Err(ServiceError::Invalid(format!(
            "checkpoint architecture {:?} does not match the configured MFCC settings ({:?})",
            c.arch(),
            arch
        )));
    }
    let ranked = ensemble_rank(&critics, &candidates, &library, &extractor)?;
    fs::create_dir_all(out).map_err(|e| ServiceError::io(out, e))?;
    let n = ranked.len();
    let mut rows = Vec::with_capacity(n);
    for (i, (l, score)) in ranked.iter().enumerate() {
        let name = if i < top {
            Some(format!("best_{}_{}.wav", i + 1, l.id()))
        } else if i >= n.saturating_sub(bottom) {
            Some(format!("worst_{}_{}.wav", n - i, l.id()))
        } else {
            None
        };
        let wav = match name {
            Some(name) => {
                let path = out.join(name);
                write_wav(&library, l, &path)?;
                Some(path)
            }
            None => None,
        };
        rows.push(RankedLoop {
            rank: i + 1,
            loop_id: l.id().to_string(),
            mean_score: *score,
            wav,
        });
    }
    Ok(rows)
}

/// Re-render every loop of a persisted session to `<out>/<id>.wav`.
pub fn export(config: &ServiceConfig, session_dir: &Path, out: Option<&Path>) -> ServiceResult<Vec<PathBuf>> {
    let loops_path = session_dir.join("loops.json");
    let text = fs::read_to_string(&loops_path).map_err(|e| ServiceError::io(&loops_path, e))?;
    let records: Vec<LoopRecord> = serde_json::from_str(&text)
        .map_err(|e| ServiceError::Invalid(format!("{}: {e}", loops_path.display())))?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| session_dir.join("wav"));
    fs::create_dir_all(&out).map_err(|e| ServiceError::io(&out, e))?;
    let library = config.library()?;
    records
        .iter()
        .map(|r| {
            let l = record_to_loop(r)?;
            let path = out.join(format!("{}.wav", l.id()));
            write_wav(&library, &l, &path)?;
            Ok(path)
        })
        .collect()
}
