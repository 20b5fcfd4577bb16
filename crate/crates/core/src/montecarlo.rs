//! Event-level simulation of the link.
//!
//! Cycles are grouped into blocks of `block_size`. Each block is an
//! independent substream: its randomness is addressed by Philox counters
//! keyed on the seed plus block, cycle and draw indices, and detector dead
//! time starts fresh at every block boundary. Tallies therefore depend only
//! on `(config, seed, block_size, cycles)` and merge by plain addition, so
//! any number of workers produce identical results.
//!
//! Empty cycles are skipped geometrically: per cycle the number of candidate
//! events is Poisson with mean `Λ`, so the gap to the next non-empty cycle is
//! geometric. That makes the cost proportional to the number of clicks, not
//! to the number of clock cycles, and long-distance points stay cheap.

use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{link_rates, total_qber};
use crate::error::{invalid, Error, Result};
use crate::model::{dead_time_throttle, raw_click_rate, SystemConfig};
use crate::protocol::{conclusive_probability, Bit, Detector};
use crate::rng::{CounterStream, Philox4x32, RNG_ALGORITHM};

const DOMAIN_BIT: u32 = 1;
const DOMAIN_SKIP: u32 = 2;
const DOMAIN_EVENT: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub config: SystemConfig,
    pub cycles: u64,
    pub seed: u64,
    /// Cycles per independent substream.
    pub block_size: u64,
}

impl RunSpec {
    pub fn block_count(&self) -> u64 {
        self.cycles.div_ceil(self.block_size.max(1))
    }

    fn block_range(&self, block: u64) -> Range<u64> {
        let start = block * self.block_size;
        start..(start + self.block_size).min(self.cycles)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TallyCounts {
    pub cycles: u64,
    pub sifted: u64,
    pub errors_total: u64,
    pub errors_optical: u64,
    pub errors_dark: u64,
    pub errors_isi: u64,
    /// Sifted bits whose first event was a dark count.
    pub darks_accepted: u64,
    /// Sifted bits whose first event came from a neighbouring cycle.
    pub leaked: u64,
    pub deadtime_losses: u64,
    /// Windows with clicks on both detectors, discarded as ambiguous.
    pub multiclick_discards: u64,
}

impl TallyCounts {
    pub fn merge(&mut self, other: &TallyCounts) {
        self.cycles += other.cycles;
        self.sifted += other.sifted;
        self.errors_total += other.errors_total;
        self.errors_optical += other.errors_optical;
        self.errors_dark += other.errors_dark;
        self.errors_isi += other.errors_isi;
        self.darks_accepted += other.darks_accepted;
        self.leaked += other.leaked;
        self.deadtime_losses += other.deadtime_losses;
        self.multiclick_discards += other.multiclick_discards;
    }

    pub fn merged(mut self, other: &TallyCounts) -> Self {
        self.merge(other);
        self
    }

    pub fn is_consistent(&self) -> bool {
        self.errors_total == self.errors_optical + self.errors_dark + self.errors_isi
            && self.sifted >= self.errors_total
            && self.sifted >= self.darks_accepted + self.leaked
    }
}

/// Per-cycle quantities shared by every block of a run.
#[derive(Debug, Clone)]
struct Plan {
    gen: Philox4x32,
    period_ps: f64,
    window_lo: f64,
    window_hi: f64,
    ungated: bool,
    sigma_ps: [f64; 2],
    center_ps: f64,
    dead_time_ps: [f64; 2],
    /// Mean conclusive clicks per cycle when detector `d` is the reporting one.
    correct_mean: [f64; 2],
    /// Mean leakage clicks per cycle on detector `d` when it is the wrong one.
    wrong_mean: [f64; 2],
    dark_mean: [f64; 2],
    /// Uniformization rate: the largest total mean over the two bit values.
    lambda: f64,
}

impl Plan {
    fn new(spec: &RunSpec) -> Result<Self> {
        let cfg = &spec.config;
        cfg.validate()?;
        if spec.cycles == 0 {
            return Err(invalid("cycles", "must be >= 1"));
        }
        if spec.block_size == 0 {
            return Err(invalid("block_size", "must be >= 1"));
        }
        let period_ps = cfg.clock.period_ps();
        let window_lo = cfg.receiver.window.offset_ps();
        let width = cfg.receiver.window.width_ps(period_ps);
        let eps = cfg.receiver.leakage();
        let per_pulse = cfg.arrival_mean() * conclusive_probability(cfg.receiver.state_separation_deg);
        let mut plan = Plan {
            gen: Philox4x32::new(spec.seed),
            period_ps,
            window_lo,
            window_hi: window_lo + width,
            ungated: width >= period_ps,
            sigma_ps: [cfg.response(0).sigma_ps, cfg.response(1).sigma_ps],
            center_ps: period_ps / 2.0,
            dead_time_ps: [cfg.detector0.dead_time_ps, cfg.detector1.dead_time_ps],
            correct_mean: [0.0; 2],
            wrong_mean: [0.0; 2],
            dark_mean: [0.0; 2],
            lambda: 0.0,
        };
        for d in 0..2 {
            let eff = cfg.detector(d).efficiency;
            plan.correct_mean[d] = per_pulse * eff;
            plan.wrong_mean[d] = per_pulse * eff * eps;
            plan.dark_mean[d] = cfg.detector(d).dark_rate_hz * width * 1e-12;
        }
        let darks = plan.dark_mean[0] + plan.dark_mean[1];
        plan.lambda = (0..2)
            .map(|reporting| plan.correct_mean[reporting] + plan.wrong_mean[1 - reporting] + darks)
            .fold(0.0, f64::max);
        let expected = spec.cycles as f64 * plan.lambda;
        if expected * 16.0 >= u64::MAX as f64 {
            return Err(Error::TallyOverflow(expected));
        }
        Ok(plan)
    }

    fn bit(&self, cycle: i64) -> Bit {
        let [w, _] = self.gen.words(DOMAIN_BIT, cycle as u64, 0);
        Bit::from_bool(w & 1 == 1)
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    /// Picoseconds since the start of the block's first cycle.
    time_ps: f64,
    detector: Detector,
    home: i64,
    dark: bool,
}

/// Number of candidate events in a cycle known to hold at least one.
fn zero_truncated_poisson(mean: f64, u: f64) -> u32 {
    // P(K = 1 | K >= 1) = mean·e^-mean / (1 - e^-mean)
    let mut p = mean * (-mean).exp() / -(-mean).exp_m1();
    let mut cumulative = p;
    let mut k = 1;
    while u > cumulative && k < 10_000 {
        k += 1;
        p *= mean / k as f64;
        if p == 0.0 {
            break;
        }
        cumulative += p;
    }
    k
}

fn cycle_events(plan: &Plan, block_start: u64, cycle: u64, out: &mut Vec<Event>) {
    let bit = plan.bit(cycle as i64);
    let reporting = bit.reporting_detector();
    let wrong = reporting.other();
    let mut draws = CounterStream::new(plan.gen, DOMAIN_EVENT, cycle);
    let count = zero_truncated_poisson(plan.lambda, draws.uniform());
    let epoch = (cycle - block_start) as f64 * plan.period_ps;
    let correct = plan.correct_mean[reporting.index()];
    let leak = plan.wrong_mean[wrong.index()];
    for _ in 0..count {
        let mut pick = draws.uniform() * plan.lambda;
        let signal_on = if pick < correct {
            Some(reporting)
        } else {
            pick -= correct;
            if pick < leak {
                Some(wrong)
            } else {
                pick -= leak;
                None
            }
        };
        if let Some(detector) = signal_on {
            let sigma = plan.sigma_ps[detector.index()];
            let offset = if sigma > 0.0 {
                plan.center_ps + sigma * draws.normal()
            } else {
                plan.center_ps
            };
            out.push(Event {
                time_ps: epoch + offset,
                detector,
                home: cycle as i64,
                dark: false,
            });
            continue;
        }
        let detector = if pick < plan.dark_mean[0] {
            Detector::D0
        } else if pick < plan.dark_mean[0] + plan.dark_mean[1] {
            Detector::D1
        } else {
            // Thinned candidate: this bit value has a lower total rate than `lambda`.
            continue;
        };
        let offset = plan.window_lo + (plan.window_hi - plan.window_lo) * draws.uniform();
        out.push(Event {
            time_ps: epoch + offset,
            detector,
            home: cycle as i64,
            dark: true,
        });
    }
}

fn simulate_block(plan: &Plan, spec: &RunSpec, block: u64) -> TallyCounts {
    let range = spec.block_range(block);
    let mut tally = TallyCounts {
        cycles: range.end - range.start,
        ..Default::default()
    };
    let mut events = Vec::new();
    if plan.lambda > 0.0 {
        let mut skips = CounterStream::new(plan.gen, DOMAIN_SKIP, block);
        let mut pos = range.start;
        loop {
            let gap = (-skips.uniform().ln() / plan.lambda).floor();
            if gap >= (range.end - pos) as f64 {
                break;
            }
            let cycle = pos + gap as u64;
            cycle_events(plan, range.start, cycle, &mut events);
            pos = cycle + 1;
        }
    }
    events.sort_by(|a, b| a.time_ps.total_cmp(&b.time_ps));

    let mut last_registered = [f64::NEG_INFINITY; 2];
    let mut window: Option<(i64, Vec<Event>)> = None;
    for ev in events {
        let d = ev.detector.index();
        if ev.time_ps - last_registered[d] < plan.dead_time_ps[d] {
            tally.deadtime_losses += 1;
            continue;
        }
        last_registered[d] = ev.time_ps;

        let slot = (ev.time_ps / plan.period_ps).floor();
        let phase = ev.time_ps - slot * plan.period_ps;
        if !plan.ungated && !(phase >= plan.window_lo && phase < plan.window_hi) {
            continue;
        }
        let landing = range.start as i64 + slot as i64;
        match &mut window {
            Some((cycle, group)) if *cycle == landing => group.push(ev),
            _ => {
                if let Some((cycle, group)) = window.take() {
                    score_window(plan, cycle, &group, &mut tally);
                }
                window = Some((landing, vec![ev]));
            }
        }
    }
    if let Some((cycle, group)) = window {
        score_window(plan, cycle, &group, &mut tally);
    }
    tally
}

fn score_window(plan: &Plan, cycle: i64, group: &[Event], tally: &mut TallyCounts) {
    let first = group[0];
    if group.iter().any(|e| e.detector != first.detector) {
        tally.multiclick_discards += 1;
        return;
    }
    tally.sifted += 1;
    let leaked = first.home != cycle;
    if first.dark {
        tally.darks_accepted += 1;
    } else if leaked {
        tally.leaked += 1;
    }
    if first.detector.inferred_bit() != plan.bit(cycle) {
        tally.errors_total += 1;
        if first.dark {
            tally.errors_dark += 1;
        } else if leaked {
            tally.errors_isi += 1;
        } else {
            tally.errors_optical += 1;
        }
    }
}

/// Tally of the blocks in `blocks`, in order; sums of disjoint ranges equal the full run.
pub fn run_blocks(spec: &RunSpec, blocks: Range<u64>) -> Result<TallyCounts> {
    let plan = Plan::new(spec)?;
    let end = blocks.end.min(spec.block_count());
    Ok((blocks.start..end)
        .into_par_iter()
        .map(|b| simulate_block(&plan, spec, b))
        .reduce(TallyCounts::default, |a, b| a.merged(&b)))
}

pub fn run(spec: &RunSpec) -> Result<TallyCounts> {
    run_blocks(spec, 0..spec.block_count())
}

/// Runs on a dedicated pool with exactly `workers` threads.
pub fn run_with_workers(spec: &RunSpec, workers: usize) -> Result<TallyCounts> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| invalid("workers", e.to_string()))?;
    pool.install(|| run(spec))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub qber: f64,
    pub qber_stderr: f64,
    pub rate_hz: f64,
    pub optical_fraction: f64,
    pub dark_fraction: f64,
    pub isi_fraction: f64,
    /// Nothing was sifted; all fractions are reported as 0.
    pub degenerate: bool,
}

pub fn estimate(tally: &TallyCounts, frequency_hz: f64) -> Estimate {
    let rate_hz = if tally.cycles > 0 {
        tally.sifted as f64 / tally.cycles as f64 * frequency_hz
    } else {
        0.0
    };
    if tally.sifted == 0 {
        return Estimate {
            qber: 0.0,
            qber_stderr: 0.0,
            rate_hz,
            optical_fraction: 0.0,
            dark_fraction: 0.0,
            isi_fraction: 0.0,
            degenerate: true,
        };
    }
    let n = tally.sifted as f64;
    let q = tally.errors_total as f64 / n;
    Estimate {
        qber: q,
        qber_stderr: (q * (1.0 - q) / n).sqrt(),
        rate_hz,
        optical_fraction: tally.errors_optical as f64 / n,
        dark_fraction: tally.errors_dark as f64 / n,
        isi_fraction: tally.errors_isi as f64 / n,
        degenerate: false,
    }
}

/// Number of standard errors beyond which a cross-check term is flagged.
pub const CROSS_CHECK_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub term: String,
    pub observed: f64,
    pub expected: f64,
    pub stderr: f64,
    pub z: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub rows: Vec<CheckRow>,
    pub flags: Vec<String>,
}

impl CrossCheck {
    pub fn passed(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn row(&self, term: &str) -> Option<&CheckRow> {
        self.rows.iter().find(|r| r.term == term)
    }
}

/// Closed-form expectations for the counts a run should produce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Expected {
    /// Sifted bits per cycle.
    pub sifted_per_cycle: f64,
    /// Sifted bits per cycle that are own-cycle conclusive signal clicks.
    pub own_signal_per_cycle: f64,
}

/// Expected sifted yield after dead time and multi-click rejection.
///
/// Each detector's accepted stream is thinned by the non-paralyzable dead
/// time factor; a window yields a bit when exactly one detector has fired.
pub fn expected_counts(config: &SystemConfig) -> Expected {
    let rates = link_rates(config);
    let f = config.clock.frequency_hz;
    let mut mean = [0.0; 2];
    let mut throttle = [1.0; 2];
    for d in 0..2 {
        let events = rates.detector_event_hz[d];
        if events > 0.0 {
            throttle[d] = dead_time_throttle(events, config.detector(d).dead_time_ps) / events;
        }
        mean[d] = throttle[d] * rates.accepted_by_detector_hz[d] / f;
    }
    let alone = |d: usize| -(-mean[d]).exp_m1() * (-mean[1 - d]).exp();
    let sifted_per_cycle = alone(0) + alone(1);
    let own_signal_per_cycle = (0..2)
        .filter(|&d| mean[d] > 0.0)
        .map(|d| alone(d) * (throttle[d] * rates.signal_own_by_detector_hz[d] / f) / mean[d])
        .sum();
    Expected {
        sifted_per_cycle,
        own_signal_per_cycle,
    }
}

fn fraction_row(term: &str, count: u64, n: u64, p: f64) -> CheckRow {
    let observed = if n > 0 { count as f64 / n as f64 } else { 0.0 };
    let stderr = if n > 0 { (p * (1.0 - p) / n as f64).sqrt() } else { 0.0 };
    finish_row(term, observed, p, stderr)
}

fn count_row(term: &str, count: u64, expected: f64) -> CheckRow {
    finish_row(term, count as f64, expected, expected.sqrt())
}

fn finish_row(term: &str, observed: f64, expected: f64, stderr: f64) -> CheckRow {
    let diff = observed - expected;
    let z = if stderr > 0.0 {
        diff / stderr
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    };
    CheckRow {
        term: term.to_string(),
        observed,
        expected,
        stderr,
        z,
        flagged: z.abs() > CROSS_CHECK_SIGMAS,
    }
}

/// Compares a tally against the closed forms term by term: total QBER, each
/// cause's error fraction, the sifted count, and the own-cycle signal count
/// derived from `raw_click_rate`.
pub fn cross_check(config: &SystemConfig, tally: &TallyCounts) -> Result<CrossCheck> {
    let breakdown = total_qber(config)?;
    let expected = expected_counts(config);
    let n = tally.sifted;
    let cycles = tally.cycles as f64;

    let own_rate_per_cycle = raw_click_rate(config) / config.clock.frequency_hz;
    let rates = link_rates(config);
    // `own_signal_per_cycle` is built from the same per-detector capture as raw_click_rate.
    debug_assert!((rates.signal_own_hz / config.clock.frequency_hz - own_rate_per_cycle).abs()
        <= 1e-12 * own_rate_per_cycle.max(1e-300));
    let own_observed = tally.sifted - tally.darks_accepted - tally.leaked - tally.errors_optical;

    let rows = vec![
        fraction_row("qber_total", tally.errors_total, n, breakdown.total),
        fraction_row("qber_opt", tally.errors_optical, n, breakdown.qber_opt),
        fraction_row("qber_det", tally.errors_dark, n, breakdown.qber_det),
        fraction_row("qber_int", tally.errors_isi, n, breakdown.qber_int),
        count_row("sifted", tally.sifted, expected.sifted_per_cycle * cycles),
        count_row("raw_click", own_observed, expected.own_signal_per_cycle * cycles),
    ];
    let flags = rows
        .iter()
        .filter(|r| r.flagged)
        .map(|r| {
            format!(
                "{}: observed {:.6e} vs expected {:.6e} ({:+.2} sigma)",
                r.term, r.observed, r.expected, r.z
            )
        })
        .collect();
    Ok(CrossCheck { rows, flags })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub rng_algorithm: String,
    pub seed: u64,
    pub block_size: u64,
    pub cycles: u64,
    pub config: SystemConfig,
    pub tally: TallyCounts,
    pub estimate: Estimate,
    pub wall_time_s: f64,
}

/// Runs the simulation and wraps the tally with the metadata needed to reproduce it.
pub fn run_with_metadata(spec: &RunSpec) -> Result<RunMetadata> {
    let start = Instant::now();
    let tally = run(spec)?;
    Ok(RunMetadata {
        rng_algorithm: RNG_ALGORITHM.to_string(),
        seed: spec.seed,
        block_size: spec.block_size,
        cycles: spec.cycles,
        config: spec.config,
        estimate: estimate(&tally, spec.config.clock.frequency_hz),
        tally,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
