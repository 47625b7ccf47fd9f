//! Single-threaded throughput measurement of the tracking hot path.
//!
//! The run is phase-instrumented with telescoping timestamps, so the four
//! phase totals partition the measured event-loop time and their sum stays
//! within instrumentation noise of the end-to-end wall time.

use std::time::Instant;

use crate::camera::{CameraCalib, Event, Segment3D};
use crate::config::{FilterVariant, ParamKind};
use crate::filter::{run_tracker, RunStats, TrackError, TrackerOutput, WindowConfig};
use crate::matcher::MatcherConfig;
use crate::motion::{BlockCov, FilterState, NoiseParams};

/// Runs a variant over a prepared stream, dispatching on parameterization.
#[allow(clippy::too_many_arguments)]
pub fn run_variant(
    variant: &FilterVariant,
    events: &[Event],
    t_start_us: i64,
    duration_us: i64,
    map: &[Segment3D],
    calib: &CameraCalib,
    wcfg: WindowConfig,
    mcfg: MatcherConfig,
    noise: NoiseParams,
    init_pos: nalgebra::Vector3<f64>,
    init_quat: &[f64; 4],
    p0_stds: &[f64; 6],
    timing: bool,
) -> Result<TrackerOutput, TrackError> {
    let rot = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        init_quat[0],
        init_quat[1],
        init_quat[2],
        init_quat[3],
    ))
    .to_rotation_matrix()
    .into_inner();
    let cov = BlockCov::from_diag_stds(variant.model, p0_stds);
    match variant.param {
        ParamKind::Lie => {
            let state = FilterState::<crate::motion::LieRotation>::new(
                init_pos,
                &rot,
                variant.model,
                t_start_us,
            );
            run_tracker(
                events,
                t_start_us,
                duration_us,
                map,
                calib,
                variant.mode,
                wcfg,
                mcfg,
                noise,
                state,
                cov,
                timing,
            )
        }
        ParamKind::Classic => {
            let state = FilterState::<crate::motion::QuatRotation>::new(
                init_pos,
                &rot,
                variant.model,
                t_start_us,
            );
            run_tracker(
                events,
                t_start_us,
                duration_us,
                map,
                calib,
                variant.mode,
                wcfg,
                mcfg,
                noise,
                state,
                cov,
                timing,
            )
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub total_events: u64,
    pub skipped: u64,
    pub updated: u64,
    pub elapsed_s: f64,
    /// Events consumed per second of wall time.
    pub events_per_s: f64,
    /// Per-event (match + update) cost percentiles in µs.
    pub mean_us: f64,
    pub median_us: f64,
    pub p99_us: f64,
    /// Amortized per-event phase cost in µs: predict, project+grid, match,
    /// update.
    pub phase_us_per_event: [f64; 4],
    /// Sum of phase totals over end-to-end wall time.
    pub phase_sum_ratio: f64,
    pub n_events_pct: f64,
    /// Power-of-two histogram of per-event cost: (upper bound ns, count).
    pub histogram: Vec<(u32, u64)>,
}

fn percentile(sorted: &[u32], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx] as f64
}

fn build_histogram(samples: &[u32]) -> Vec<(u32, u64)> {
    let mut buckets: Vec<(u32, u64)> = Vec::new();
    let mut bound = 32u32;
    while bound < 1 << 24 {
        buckets.push((bound, 0));
        bound = bound.saturating_mul(2);
    }
    buckets.push((u32::MAX, 0));
    for &s in samples {
        let slot = buckets
            .iter_mut()
            .find(|(b, _)| s <= *b)
            .expect("last bucket is unbounded");
        slot.1 += 1;
    }
    buckets.retain(|&(_, count)| count > 0);
    buckets
}

fn summarize(stats: &RunStats, elapsed_s: f64) -> BenchReport {
    let total = stats.received.max(1);
    let consumed = stats.received;
    let mut samples = stats.event_cost_ns.clone();
    samples.sort_unstable();
    let mean_us = if samples.is_empty() {
        0.0
    } else {
        samples.iter().map(|&s| s as f64).sum::<f64>() / samples.len() as f64 / 1e3
    };
    let per_event = |ns: u64| ns as f64 / 1e3 / total as f64;
    let phase_total = stats.phase_total_ns();
    BenchReport {
        total_events: stats.received,
        skipped: stats.skipped,
        updated: stats.updated,
        elapsed_s,
        events_per_s: consumed as f64 / elapsed_s,
        mean_us,
        median_us: percentile(&samples, 0.5) / 1e3,
        p99_us: percentile(&samples, 0.99) / 1e3,
        phase_us_per_event: [
            per_event(stats.predict_ns),
            per_event(stats.project_ns),
            per_event(stats.match_ns),
            per_event(stats.update_ns),
        ],
        phase_sum_ratio: phase_total as f64 / (elapsed_s * 1e9),
        n_events_pct: stats.events_processed_pct(),
        histogram: build_histogram(&samples),
    }
}

/// Times a full tracking run after a warm-up pass over the head of the
/// stream. Single-threaded; pin the process externally for stable numbers.
#[allow(clippy::too_many_arguments)]
pub fn bench_run(
    variant: &FilterVariant,
    events: &[Event],
    t_start_us: i64,
    duration_us: i64,
    map: &[Segment3D],
    calib: &CameraCalib,
    wcfg: WindowConfig,
    mcfg: MatcherConfig,
    noise: NoiseParams,
    init_pos: nalgebra::Vector3<f64>,
    init_quat: &[f64; 4],
    p0_stds: &[f64; 6],
) -> Result<BenchReport, TrackError> {
    // Warm-up: first tenth of the stream, result discarded.
    let warm = events.len() / 10;
    if warm > 0 {
        let warm_duration = (events[warm - 1].t_us - t_start_us + 1).max(wcfg.dt_us);
        let _ = run_variant(
            variant,
            &events[..warm],
            t_start_us,
            warm_duration,
            map,
            calib,
            wcfg,
            mcfg,
            noise,
            init_pos,
            init_quat,
            p0_stds,
            false,
        )?;
    }
    let begin = Instant::now();
    let out = run_variant(
        variant,
        events,
        t_start_us,
        duration_us,
        map,
        calib,
        wcfg,
        mcfg,
        noise,
        init_pos,
        init_quat,
        p0_stds,
        true,
    )?;
    let elapsed_s = begin.elapsed().as_secs_f64();
    Ok(summarize(&out.stats, elapsed_s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_covers_all_samples() {
        let samples = vec![10, 100, 1000, 100_000, 5_000_000];
        let hist = build_histogram(&samples);
        let total: u64 = hist.iter().map(|&(_, c)| c).sum();
        assert_eq!(total, samples.len() as u64);
    }

    #[test]
    fn percentile_endpoints() {
        let s = vec![1, 2, 3, 4, 100];
        assert_eq!(percentile(&s, 0.0), 1.0);
        assert_eq!(percentile(&s, 1.0), 100.0);
        assert_eq!(percentile(&s, 0.5), 3.0);
    }
}
