//! Arrival-time response, coincidence-window math and TCSPC histograms.
//!
//! Each clock period carries a Gaussian arrival-time response (source and
//! detector jitter in quadrature). Mass that falls outside `[0, period)`
//! lands in a neighbouring slot and shows up as intersymbol interference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::analysis::{qber_det, secrecy_efficiency};
use crate::error::{invalid, Result};
use crate::model::ClockConfig;

/// Standard normal CDF, accurate in both tails.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingResponse {
    pub sigma_ps: f64,
    /// Mean arrival time within the period.
    pub center_ps: f64,
    pub period_ps: f64,
}

impl TimingResponse {
    pub fn new(sigma_ps: f64, center_ps: f64, period_ps: f64) -> Result<Self> {
        if !(sigma_ps.is_finite() && sigma_ps >= 0.0) {
            return Err(invalid("sigma_ps", "must be finite and >= 0"));
        }
        if !(period_ps.is_finite() && period_ps > 0.0) {
            return Err(invalid("period_ps", "must be finite and > 0"));
        }
        if !(0.0..=period_ps).contains(&center_ps) {
            return Err(invalid("center_ps", "must lie within the period"));
        }
        Ok(Self {
            sigma_ps,
            center_ps,
            period_ps,
        })
    }

    pub fn centered(sigma_ps: f64, period_ps: f64) -> Self {
        Self {
            sigma_ps,
            center_ps: period_ps / 2.0,
            period_ps,
        }
    }

    /// Mass of the response shifted by `shift_ps` that falls in `[lo, hi)`.
    fn mass_between(&self, lo: f64, hi: f64, shift_ps: f64) -> f64 {
        let c = self.center_ps + shift_ps;
        if hi <= lo {
            return 0.0;
        }
        if self.sigma_ps == 0.0 {
            return if (lo..hi).contains(&c) { 1.0 } else { 0.0 };
        }
        let a = (lo - c) / self.sigma_ps;
        let b = (hi - c) / self.sigma_ps;
        // Subtract upper tails when both bounds sit right of the center to keep precision.
        if a > 0.0 {
            std_normal_cdf(-a) - std_normal_cdf(-b)
        } else {
            std_normal_cdf(b) - std_normal_cdf(a)
        }
    }

    /// Number of neighbouring periods on each side carrying non-negligible mass.
    fn image_reach(&self) -> i64 {
        (10.0 * self.sigma_ps / self.period_ps).ceil() as i64 + 1
    }
}

/// Probability that an arrival from the current period lands in the window.
///
/// A zero-width response is a point mass at the center; the window is
/// half-open, except that a window closing exactly at the center still
/// counts a full-period window as capturing it.
pub fn window_capture(response: &TimingResponse, window_offset_ps: f64, window_width_ps: f64) -> f64 {
    if response.sigma_ps == 0.0 {
        let c = response.center_ps;
        let inside = c >= window_offset_ps && c <= window_offset_ps + window_width_ps;
        return if inside && window_width_ps > 0.0 { 1.0 } else { 0.0 };
    }
    response.mass_between(window_offset_ps, window_offset_ps + window_width_ps, 0.0)
}

/// Probability mass of the response outside `[0, period]`.
pub fn isi_leak_fraction(response: &TimingResponse) -> f64 {
    if response.sigma_ps == 0.0 {
        return 0.0;
    }
    let s = response.sigma_ps;
    std_normal_cdf(-response.center_ps / s)
        + std_normal_cdf(-(response.period_ps - response.center_ps) / s)
}

/// Expected number of arrivals from neighbouring periods landing in this
/// period's window, per pulse sent in each neighbour.
pub fn window_leak_in(response: &TimingResponse, window_offset_ps: f64, window_width_ps: f64) -> f64 {
    let reach = response.image_reach();
    (1..=reach)
        .flat_map(|k| [k, -k])
        .map(|k| {
            response.mass_between(
                window_offset_ps,
                window_offset_ps + window_width_ps,
                k as f64 * response.period_ps,
            )
        })
        .sum()
}

/// A leaked count is scored against an uncorrelated bit, so half are errors.
pub fn qber_int(leak: f64) -> f64 {
    0.5 * leak
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width_ps: f64,
    pub period_ps: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bin_start(&self, i: usize) -> f64 {
        i as f64 * self.bin_width_ps
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start_ps,counts\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{:.3},{}\n", self.bin_start(i), c));
        }
        out
    }
}

fn bin_edges(period_ps: f64, bin_width_ps: f64) -> Result<Vec<(f64, f64)>> {
    if !(bin_width_ps.is_finite() && bin_width_ps > 0.0 && bin_width_ps <= period_ps) {
        return Err(invalid("bin_width_ps", "must lie in (0, period]"));
    }
    let n = (period_ps / bin_width_ps - 1e-9).ceil().max(1.0) as usize;
    Ok((0..n)
        .map(|i| {
            let lo = i as f64 * bin_width_ps;
            (lo, ((i + 1) as f64 * bin_width_ps).min(period_ps))
        })
        .collect())
}

/// Expected counts per bin of a clock-folded TCSPC histogram.
///
/// Arrival times are folded modulo the period, so signal that leaks out of
/// one period wraps into the histogram edges and the grand total equals
/// `(signal + dark) × duration`.
pub fn expected_histogram(
    response: &TimingResponse,
    signal_rate_hz: f64,
    dark_rate_total_hz: f64,
    clock: &ClockConfig,
    duration_s: f64,
    bin_width_ps: f64,
) -> Result<Vec<f64>> {
    let period = clock.period_ps();
    let edges = bin_edges(period, bin_width_ps)?;
    let folded = TimingResponse {
        period_ps: period,
        ..*response
    };
    let reach = folded.image_reach();
    Ok(edges
        .into_iter()
        .map(|(lo, hi)| {
            let signal_mass: f64 = if folded.sigma_ps == 0.0 {
                let c = folded.center_ps.rem_euclid(period);
                if (lo..hi).contains(&c) {
                    1.0
                } else {
                    0.0
                }
            } else {
                (-reach..=reach)
                    .map(|k| folded.mass_between(lo, hi, k as f64 * period))
                    .sum()
            };
            signal_rate_hz * duration_s * signal_mass
                + dark_rate_total_hz * duration_s * (hi - lo) / period
        })
        .collect())
}

/// Poisson-sampled TCSPC histogram; identical seeds give identical counts.
pub fn synth_histogram(
    response: &TimingResponse,
    signal_rate_hz: f64,
    dark_rate_total_hz: f64,
    clock: &ClockConfig,
    duration_s: f64,
    bin_width_ps: f64,
    seed: u64,
) -> Result<Histogram> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(invalid("duration_s", "must be > 0"));
    }
    if !(signal_rate_hz >= 0.0 && dark_rate_total_hz >= 0.0) {
        return Err(invalid("rate", "rates must be >= 0"));
    }
    let expected = expected_histogram(
        response,
        signal_rate_hz,
        dark_rate_total_hz,
        clock,
        duration_s,
        bin_width_ps,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = expected
        .into_iter()
        .map(|lambda| match Poisson::new(lambda) {
            Ok(p) => p.sample(&mut rng) as u64,
            Err(_) => 0,
        })
        .collect();
    Ok(Histogram {
        bin_width_ps,
        period_ps: clock.period_ps(),
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "objective", rename_all = "snake_case")]
pub enum WindowObjective {
    MaxNbr { i_ae: f64 },
    MinQber,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowChoice {
    pub offset_ps: f64,
    pub width_ps: f64,
    pub capture: f64,
    pub qber_det: f64,
    pub nbr_hz: f64,
    /// Set when no window is distinguishable from the empty one.
    pub degenerate: bool,
}

impl WindowChoice {
    pub fn is_full_period(&self, period_ps: f64) -> bool {
        self.offset_ps == 0.0 && self.width_ps == period_ps
    }
}

fn evaluate_window(
    response: &TimingResponse,
    signal_rate_hz: f64,
    dark_rate_total_hz: f64,
    period_ps: f64,
    offset_ps: f64,
    width_ps: f64,
    i_ae: f64,
) -> WindowChoice {
    let capture = window_capture(response, offset_ps, width_ps);
    let signal = signal_rate_hz * capture;
    let dark = dark_rate_total_hz * width_ps / period_ps;
    let q = qber_det(signal, dark);
    let nbr_hz = secrecy_efficiency(q, i_ae)
        .map(|se| se.max(0.0) * signal)
        .unwrap_or(0.0);
    WindowChoice {
        offset_ps,
        width_ps,
        capture,
        qber_det: q,
        nbr_hz,
        degenerate: false,
    }
}

/// Exhaustive grid search over gating windows at `step_ps` resolution.
///
/// The objective trades signal capture against accepted dark counts; ties go
/// to the narrower window, then the smaller offset. The full period is always
/// a candidate even when it is not a whole number of steps.
pub fn optimize_window(
    response: &TimingResponse,
    signal_rate_hz: f64,
    dark_rate_total_hz: f64,
    clock: &ClockConfig,
    objective: WindowObjective,
) -> WindowChoice {
    optimize_window_with_step(response, signal_rate_hz, dark_rate_total_hz, clock, objective, 1.0)
}

pub fn optimize_window_with_step(
    response: &TimingResponse,
    signal_rate_hz: f64,
    dark_rate_total_hz: f64,
    clock: &ClockConfig,
    objective: WindowObjective,
    step_ps: f64,
) -> WindowChoice {
    let period = clock.period_ps();
    let response = TimingResponse {
        period_ps: period,
        ..*response
    };
    let i_ae = match objective {
        WindowObjective::MaxNbr { i_ae } => i_ae,
        WindowObjective::MinQber => crate::model::DEFAULT_I_AE,
    };
    let empty = evaluate_window(&response, signal_rate_hz, dark_rate_total_hz, period, 0.0, 0.0, i_ae);
    if signal_rate_hz <= 0.0 {
        return WindowChoice {
            degenerate: true,
            ..empty
        };
    }

    let steps = (period / step_ps + 1e-9).floor() as usize;
    let mut candidates = (0..=steps).flat_map(|wi| {
        let width = wi as f64 * step_ps;
        let offsets = ((period - width) / step_ps + 1e-9).floor() as usize;
        (0..=offsets).map(move |oi| (oi as f64 * step_ps, width))
    });
    let full = std::iter::once((0.0, period));

    let better = |cand: &WindowChoice, best: &WindowChoice| match objective {
        WindowObjective::MaxNbr { .. } => cand.nbr_hz > best.nbr_hz,
        WindowObjective::MinQber => cand.qber_det < best.qber_det,
    };

    let mut best: Option<WindowChoice> = None;
    for (offset, width) in candidates.by_ref().chain(full) {
        if width <= 0.0 && matches!(objective, WindowObjective::MinQber) {
            continue;
        }
        let cand = evaluate_window(
            &response,
            signal_rate_hz,
            dark_rate_total_hz,
            period,
            offset,
            width,
            i_ae,
        );
        if best.as_ref().is_none_or(|b| better(&cand, b)) {
            best = Some(cand);
        }
    }
    let best = best.unwrap_or(empty);
    let degenerate = match objective {
        WindowObjective::MaxNbr { .. } => best.nbr_hz <= 0.0,
        WindowObjective::MinQber => best.capture <= 0.0,
    };
    WindowChoice { degenerate, ..best }
}
