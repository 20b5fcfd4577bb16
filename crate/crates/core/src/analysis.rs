//! Closed-form QBER budget, secrecy efficiency and everything built on them:
//! distance sweeps, the secure-distance search and parameter calibration.
//!
//! The QBER is split into three additive parts: optical (analyzer
//! extinction), dark counts, and intersymbol interference. All three are
//! expressed as error counts over the same pool of accepted events, so they
//! add up to the fraction a receiver would actually measure.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{dead_time_throttle, GateWindow, SystemConfig};
use crate::protocol::conclusive_probability;
use crate::timing::{optimize_window, qber_int, window_capture, window_leak_in, WindowChoice, WindowObjective};

/// Relative residual above which a calibration is reported as infeasible.
pub const CALIBRATION_TOLERANCE: f64 = 0.05;

/// Upper end of the secure-distance search, km.
pub const DISTANCE_HORIZON_KM: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QberBreakdown {
    pub qber_opt: f64,
    pub qber_det: f64,
    pub qber_int: f64,
    pub total: f64,
    /// No accepted events at all; every term is reported as 0.
    pub degenerate: bool,
}

impl QberBreakdown {
    fn from_terms(qber_opt: f64, qber_det: f64, qber_int: f64, degenerate: bool) -> Result<Self> {
        let total = qber_opt + qber_det + qber_int;
        if total > 1.0 {
            return Err(Error::QberExceedsOne(total));
        }
        Ok(Self {
            qber_opt,
            qber_det,
            qber_int,
            total,
            degenerate,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecrecyReport {
    pub qber: f64,
    pub secrecy_efficiency: f64,
    pub raw_rate_hz: f64,
    pub net_bit_rate_hz: f64,
    pub secure: bool,
}

/// Accepted event rates at the receiver, all in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkRates {
    /// Conclusive clicks on the reporting detector, landing in their own window.
    pub signal_own_hz: f64,
    /// Wrong-detector clicks from analyzer leakage, landing in their own window.
    pub optical_error_hz: f64,
    /// Clicks from neighbouring clock periods landing in this window (both detectors).
    pub leaked_in_hz: f64,
    /// Dark counts inside the window, summed over detectors.
    pub dark_accepted_hz: f64,
    /// Every click each detector sees, windowed or not; drives dead time.
    pub detector_event_hz: [f64; 2],
    /// `signal_own_hz` split by detector.
    pub signal_own_by_detector_hz: [f64; 2],
    /// Everything accepted inside the window, split by detector.
    pub accepted_by_detector_hz: [f64; 2],
}

impl LinkRates {
    pub fn signal_hz(&self) -> f64 {
        self.signal_own_hz + self.optical_error_hz + self.leaked_in_hz
    }

    pub fn accepted_hz(&self) -> f64 {
        self.signal_hz() + self.dark_accepted_hz
    }
}

pub fn link_rates(config: &SystemConfig) -> LinkRates {
    let period = config.clock.period_ps();
    let offset = config.receiver.window.offset_ps();
    let width = config.receiver.window.width_ps(period);
    let duty = width / period;
    let eps = config.receiver.leakage();
    let per_pulse = config.clock.frequency_hz
        * config.arrival_mean()
        * conclusive_probability(config.receiver.state_separation_deg);

    let mut own = [0.0; 2];
    let mut leaked = [0.0; 2];
    let mut events = [0.0; 2];
    let mut accepted = [0.0; 2];
    for d in 0..2 {
        let det = config.detector(d);
        let response = config.response(d);
        // Each detector reports one bit value, so it is the reporting detector for half the pulses.
        let half = 0.5 * per_pulse * det.efficiency;
        own[d] = half * window_capture(&response, offset, width);
        leaked[d] = half * (1.0 + eps) * window_leak_in(&response, offset, width);
        events[d] = half * (1.0 + eps) + det.dark_rate_hz;
        accepted[d] = own[d] * (1.0 + eps) + leaked[d] + det.dark_rate_hz * duty;
    }
    let signal_own_hz = own[0] + own[1];
    LinkRates {
        signal_own_hz,
        optical_error_hz: eps * signal_own_hz,
        leaked_in_hz: leaked[0] + leaked[1],
        dark_accepted_hz: (config.detector0.dark_rate_hz + config.detector1.dark_rate_hz) * duty,
        detector_event_hz: events,
        signal_own_by_detector_hz: own,
        accepted_by_detector_hz: accepted,
    }
}

/// Distance-independent floor from finite analyzer extinction, `ε/(1+ε)`.
pub fn qber_opt(extinction_db: f64) -> f64 {
    let eps = crate::model::db_to_linear(extinction_db);
    eps / (1.0 + eps)
}

/// Dark-count contribution: half of the accepted darks are errors.
/// Returns 0 when there are no events at all.
pub fn qber_det(signal_rate_hz: f64, accepted_dark_rate_total_hz: f64) -> f64 {
    let total = signal_rate_hz + accepted_dark_rate_total_hz;
    if total <= 0.0 {
        return 0.0;
    }
    0.5 * accepted_dark_rate_total_hz / total
}

pub fn total_qber(config: &SystemConfig) -> Result<QberBreakdown> {
    config.validate()?;
    qber_from_rates(&link_rates(config), config.receiver.extinction_db)
}

fn qber_from_rates(rates: &LinkRates, extinction_db: f64) -> Result<QberBreakdown> {
    let signal = rates.signal_hz();
    let accepted = rates.accepted_hz();
    if accepted <= 0.0 {
        return QberBreakdown::from_terms(0.0, 0.0, 0.0, true);
    }
    let signal_share = signal / accepted;
    let (opt, int) = if signal > 0.0 {
        let own_share = (rates.signal_own_hz + rates.optical_error_hz) / signal;
        let leak_share = rates.leaked_in_hz / signal;
        (
            qber_opt(extinction_db) * own_share * signal_share,
            qber_int(leak_share) * signal_share,
        )
    } else {
        (0.0, 0.0)
    };
    QberBreakdown::from_terms(opt, qber_det(signal, rates.dark_accepted_hz), int, false)
}

/// Key distillation efficiency after error correction and privacy
/// amplification:
///
/// `1 + Q·log2(Q) − 3.5Q − I_AE·(1 − (1−Q)·log2(1−Q) − 3.5Q)`
pub fn secrecy_efficiency(q: f64, i_ae: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::QberOutOfRange(q));
    }
    if !(0.0..=1.0).contains(&i_ae) {
        return Err(invalid("i_ae", "must lie in [0, 1]"));
    }
    let q_log_q = if q == 0.0 { 0.0 } else { q * q.log2() };
    let p = 1.0 - q;
    let p_log_p = p * p.log2();
    Ok(1.0 + q_log_q - 3.5 * q - i_ae * (1.0 - p_log_p - 3.5 * q))
}

/// Bisection on a bracketing interval, stopping when it is narrower than `tol`.
pub fn bisect(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return Err(Error::NoSignChange { lo, hi });
    }
    while b - a > tol {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Smallest QBER at which the secrecy efficiency reaches zero.
pub fn security_threshold(i_ae: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&i_ae) {
        return Err(invalid("i_ae", "must lie in [0, 1)"));
    }
    const LO: f64 = 1e-6;
    const HI: f64 = 0.5;
    const SCAN: usize = 500;
    let se = |q: f64| secrecy_efficiency(q, i_ae).unwrap_or(f64::NAN);
    // Locate the first sign change so the returned root is the smallest one.
    let mut a = LO;
    let mut fa = se(a);
    for k in 1..=SCAN {
        let b = LO + (HI - LO) * k as f64 / SCAN as f64;
        let fb = se(b);
        if fa.signum() != fb.signum() || fb == 0.0 {
            return bisect(se, a, b, 1e-13);
        }
        a = b;
        fa = fb;
    }
    Err(Error::NoSignChange { lo: LO, hi: HI })
}

pub fn net_bit_rate(secrecy_efficiency: f64, raw_rate_hz: f64) -> f64 {
    secrecy_efficiency.max(0.0) * raw_rate_hz
}

/// Conclusive signal rate after dead-time loss on each detector.
pub fn detected_raw_rate(config: &SystemConfig, rates: &LinkRates) -> f64 {
    (0..2)
        .map(|d| {
            let events = rates.detector_event_hz[d];
            let throttle = if events > 0.0 {
                dead_time_throttle(events, config.detector(d).dead_time_ps) / events
            } else {
                1.0
            };
            rates.signal_own_by_detector_hz[d] * throttle
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub breakdown: QberBreakdown,
    pub report: SecrecyReport,
}

pub fn evaluate(config: &SystemConfig) -> Result<OperatingPoint> {
    config.validate()?;
    let rates = link_rates(config);
    let breakdown = qber_from_rates(&rates, config.receiver.extinction_db)?;
    let raw_rate_hz = detected_raw_rate(config, &rates);
    let se = secrecy_efficiency(breakdown.total, config.i_ae)?;
    Ok(OperatingPoint {
        breakdown,
        report: SecrecyReport {
            qber: breakdown.total,
            secrecy_efficiency: se,
            raw_rate_hz,
            net_bit_rate_hz: net_bit_rate(se, raw_rate_hz),
            secure: se > 0.0,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub distance_km: f64,
    pub breakdown: QberBreakdown,
    pub report: SecrecyReport,
}

pub const SWEEP_CSV_HEADER: &str =
    "distance_km,raw_rate_hz,qber_opt,qber_det,qber_int,qber_total,secrecy_eff,nbr_hz,secure_flag";

impl SweepRow {
    pub fn csv_fields(&self) -> [String; 9] {
        let b = &self.breakdown;
        let r = &self.report;
        [
            format!("{:.3}", self.distance_km),
            format!("{:.9e}", r.raw_rate_hz),
            format!("{:.9e}", b.qber_opt),
            format!("{:.9e}", b.qber_det),
            format!("{:.9e}", b.qber_int),
            format!("{:.9e}", b.total),
            format!("{:.9e}", r.secrecy_efficiency),
            format!("{:.9e}", r.net_bit_rate_hz),
            u8::from(r.secure).to_string(),
        ]
    }
}

pub fn sweep(config: &SystemConfig, distances_km: &[f64]) -> Result<Vec<SweepRow>> {
    let ordered = distances_km.windows(2).all(|w| w[0] <= w[1]);
    if !ordered || distances_km.iter().any(|&d| !(d >= 0.0 && d.is_finite())) {
        return Err(Error::UnsortedDistances);
    }
    distances_km
        .iter()
        .map(|&d| {
            let point = evaluate(&config.with_distance(d))?;
            Ok(SweepRow {
                distance_km: d,
                breakdown: point.breakdown,
                report: point.report,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_fields().join(","));
        out.push('\n');
    }
    out
}

/// Two whitespace-separated columns, distance and one quantity, for gnuplot.
pub fn gnuplot_columns(rows: &[SweepRow], value: impl Fn(&SweepRow) -> f64) -> String {
    rows.iter()
        .map(|r| format!("{:.3} {:.9e}\n", r.distance_km, value(r)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "km", rename_all = "snake_case")]
pub enum SecureDistance {
    Within(f64),
    BeyondHorizon,
}

/// Distance at which the total QBER crosses the security threshold.
pub fn secure_distance(config: &SystemConfig) -> Result<SecureDistance> {
    let threshold = security_threshold(config.i_ae)?;
    let qber_at = |d: f64| total_qber(&config.with_distance(d)).map(|b| b.total);
    let q0 = qber_at(0.0)?;
    if q0 >= threshold {
        return Err(Error::InsecureAtOrigin { qber: q0, threshold });
    }
    if qber_at(DISTANCE_HORIZON_KM)? < threshold {
        return Ok(SecureDistance::BeyondHorizon);
    }
    let root = bisect(
        |d| qber_at(d).map(|q| q - threshold).unwrap_or(f64::NAN),
        0.0,
        DISTANCE_HORIZON_KM,
        0.01,
    )?;
    Ok(SecureDistance::Within(root))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Observed {
    Qber(f64),
    RawRateHz(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub distance_km: f64,
    pub observed: Observed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub distance_km: f64,
    pub observed: f64,
    pub model: f64,
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub config: SystemConfig,
    pub residuals: Vec<Residual>,
    /// Sum of squared relative residuals.
    pub objective: f64,
    pub passes: usize,
}

impl Calibration {
    pub fn max_relative_residual(&self) -> f64 {
        self.residuals
            .iter()
            .map(|r| r.relative.abs())
            .fold(0.0, f64::max)
    }
}

/// Grid for one free parameter: `lo + k·step` for every k that stays within bounds.
#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    step: f64,
}

impl Axis {
    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        (0..=n).map(move |k| self.lo + k as f64 * self.step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FreeParam {
    CouplingLoss,
    DarkRate,
    Extinction,
}

impl FreeParam {
    const ORDER: [FreeParam; 3] = [FreeParam::CouplingLoss, FreeParam::DarkRate, FreeParam::Extinction];

    fn axis(self) -> Axis {
        match self {
            FreeParam::CouplingLoss => Axis { lo: 0.0, hi: 10.0, step: 0.1 },
            // Dark rate is strictly positive: (0, 10] Hz per channel.
            FreeParam::DarkRate => Axis { lo: 0.1, hi: 10.0, step: 0.1 },
            FreeParam::Extinction => Axis { lo: 15.0, hi: 30.0, step: 0.1 },
        }
    }

    fn apply(self, config: &mut SystemConfig, value: f64) {
        match self {
            FreeParam::CouplingLoss => config.receiver.coupling_loss_db = value,
            FreeParam::DarkRate => {
                config.detector0.dark_rate_hz = value;
                config.detector1.dark_rate_hz = value;
            }
            FreeParam::Extinction => config.receiver.extinction_db = value,
        }
    }
}

pub fn residuals(config: &SystemConfig, observations: &[Observation]) -> Result<Vec<Residual>> {
    observations
        .iter()
        .map(|obs| {
            let point = evaluate(&config.with_distance(obs.distance_km))?;
            let (observed, model) = match obs.observed {
                Observed::Qber(q) => (q, point.report.qber),
                Observed::RawRateHz(r) => (r, point.report.raw_rate_hz),
            };
            let relative = if observed != 0.0 {
                (model - observed) / observed
            } else {
                model
            };
            Ok(Residual {
                distance_km: obs.distance_km,
                observed,
                model,
                relative,
            })
        })
        .collect()
}

fn objective(config: &SystemConfig, observations: &[Observation]) -> f64 {
    residuals(config, observations)
        .map(|rs| rs.iter().map(|r| r.relative * r.relative).sum())
        .unwrap_or(f64::INFINITY)
}

/// Fits receiver coupling loss, per-channel dark rate and analyzer extinction
/// to observed QBER / raw-rate points by coordinate descent on a fixed grid.
///
/// Each pass scans every grid value of one parameter with the others held
/// fixed and moves only on strict improvement, so the result is bit-exactly
/// reproducible and a config that already fits is returned unchanged.
pub fn calibrate(config: &SystemConfig, observations: &[Observation]) -> Result<Calibration> {
    const MAX_PASSES: usize = 100;
    if observations.is_empty() {
        return Err(Error::NoObservations);
    }
    config.validate()?;
    let mut best = *config;
    let mut best_obj = objective(&best, observations);
    let mut passes = 0;
    while passes < MAX_PASSES && best_obj > 0.0 {
        passes += 1;
        let mut moved = false;
        for param in FreeParam::ORDER {
            for value in param.axis().values() {
                let mut trial = best;
                param.apply(&mut trial, value);
                let obj = objective(&trial, observations);
                if obj < best_obj {
                    best = trial;
                    best_obj = obj;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    let calibration = Calibration {
        config: best,
        residuals: residuals(&best, observations)?,
        objective: best_obj,
        passes,
    };
    let worst = calibration.max_relative_residual();
    if worst > CALIBRATION_TOLERANCE {
        return Err(Error::CalibrationInfeasible {
            best_residual: worst,
        });
    }
    Ok(calibration)
}

/// Best gating window for the configured link, maximizing net bit rate.
///
/// The search uses detector 0's timing response and the total conclusive
/// signal arriving at the receiver before any gating.
pub fn auto_window(config: &SystemConfig) -> Result<WindowChoice> {
    config.validate()?;
    let per_pulse = config.clock.frequency_hz
        * config.arrival_mean()
        * conclusive_probability(config.receiver.state_separation_deg);
    let mean_eff = 0.5 * (config.detector0.efficiency + config.detector1.efficiency);
    let signal = per_pulse * mean_eff * (1.0 + config.receiver.leakage());
    let darks = config.detector0.dark_rate_hz + config.detector1.dark_rate_hz;
    Ok(optimize_window(
        &config.response(0),
        signal,
        darks,
        &config.clock,
        WindowObjective::MaxNbr { i_ae: config.i_ae },
    ))
}

/// Applies a window choice; the full period maps back to an ungated receiver.
pub fn with_window(mut config: SystemConfig, choice: &WindowChoice) -> SystemConfig {
    config.receiver.window = if choice.is_full_period(config.clock.period_ps()) {
        GateWindow::Ungated
    } else {
        GateWindow::Gated {
            offset_ps: choice.offset_ps,
            width_ps: choice.width_ps,
        }
    };
    config
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;

    /// Printed secrecy-efficiency formula, written with natural logs as a
    /// separate code path.
    fn se_oracle(q: f64, i_ae: f64) -> f64 {
        let ln2 = std::f64::consts::LN_2;
        let a = if q > 0.0 { q * q.ln() / ln2 } else { 0.0 };
        let b = (1.0 - q) * (1.0 - q).ln() / ln2;
        1.0 + a - 3.5 * q - i_ae * (1.0 - b - 3.5 * q)
    }

    fn ideal() -> SystemConfig {
        let mut c = SystemConfig::sspd_3g3();
        c.receiver.extinction_db = f64::INFINITY;
        c.detector0.dark_rate_hz = 0.0;
        c.detector1.dark_rate_hz = 0.0;
        c.detector0.jitter_fwhm_ps = 0.0;
        c.detector1.jitter_fwhm_ps = 0.0;
        c.source.pulse_fwhm_ps = 0.0;
        c
    }

    #[test]
    fn qber_opt_examples() {
        assert_eq!(qber_opt(f64::INFINITY), 0.0);
        assert_eq!(qber_opt(0.0), 0.5);
        assert!((qber_opt(21.0) - 0.007_880_683_850_330_283).abs() < 1e-15);
    }

    #[test]
    fn qber_det_examples() {
        assert_eq!(qber_det(100.0, 0.0), 0.0);
        assert_eq!(qber_det(0.0, 3.0), 0.5);
        assert_eq!(qber_det(0.0, 0.0), 0.0);
        assert!((qber_det(11.7, 1.25) - 0.048_262_548_262_548_26).abs() < 1e-15);
    }

    #[test]
    fn secrecy_efficiency_examples() {
        assert_eq!(secrecy_efficiency(0.0, 0.29).unwrap(), 0.71);
        let v = secrecy_efficiency(0.036, 0.29).unwrap();
        assert!((v - 0.433_101_754_020_403_1).abs() < 1e-12);
        assert!((v - se_oracle(0.036, 0.29)).abs() < 1e-14);
        let v = secrecy_efficiency(0.01, 0.29).unwrap();
        assert!((v - 0.614_548_611_642_785_2).abs() < 1e-12);
        assert!(secrecy_efficiency(1.0, 0.29).is_err());
        assert!(secrecy_efficiency(-0.1, 0.29).is_err());
    }

    #[test]
    fn threshold_examples() {
        let q = security_threshold(0.29).unwrap();
        assert!((q - 0.119_478_137_400_612_4).abs() < 1e-11);
        assert!((q - 0.1198).abs() < 1e-3);
        let q0 = security_threshold(0.0).unwrap();
        assert!((q0 - 0.163_625_021_749_077_1).abs() < 1e-11);
        let q_hi = security_threshold(0.999).unwrap();
        assert!(q_hi > 0.0 && q_hi < 1e-3, "{q_hi}");
        assert!(security_threshold(1.0).is_err());
    }

    #[test]
    fn net_bit_rate_examples() {
        assert_eq!(net_bit_rate(-0.2, 1000.0), 0.0);
        assert_eq!(net_bit_rate(0.0, 1000.0), 0.0);
        assert!((net_bit_rate(0.71, 1000.0) - 710.0).abs() < 1e-12);
        assert!((net_bit_rate(0.4331, 13.04) - 5.65).abs() < 5e-3);
    }

    #[test]
    fn total_qber_ideal_is_zero() {
        let b = total_qber(&ideal().with_distance(10.0)).unwrap();
        assert_eq!(b.total, 0.0);
        assert!(!b.degenerate);
    }

    #[test]
    fn total_qber_sspd_10km_is_extinction_dominated() {
        let b = total_qber(&SystemConfig::sspd_3g3().with_distance(10.0)).unwrap();
        assert!((b.total - 0.008).abs() < 1e-3, "{b:?}");
        assert!(b.qber_det < 1e-3 && b.qber_int < 1e-3);
        assert!((b.qber_opt - qber_opt(21.0)).abs() < 1e-3);
        assert_eq!(b.total, b.qber_opt + b.qber_det + b.qber_int);
    }

    #[test]
    fn degenerate_point_is_flagged() {
        let mut c = ideal();
        c.source.mean_photon_number = 0.0;
        let b = total_qber(&c).unwrap();
        assert!(b.degenerate);
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn sweep_single_row_uses_extra_loss_only() {
        let mut reference = SystemConfig::sspd_3g3();
        reference.detector0.dead_time_ps = 0.0;
        reference.detector1.dead_time_ps = 0.0;
        let mut c = reference;
        c.channel.extra_loss_db = 3.0;
        let rows = sweep(&c, &[0.0]).unwrap();
        assert_eq!(rows.len(), 1);
        let unattenuated = evaluate(&reference).unwrap();
        let ratio = rows[0].report.raw_rate_hz / unattenuated.report.raw_rate_hz;
        assert!((ratio - 10f64.powf(-0.3)).abs() < 1e-12, "{ratio}");
        assert!(sweep(&c, &[2.0, 1.0]).is_err());
        assert!(sweep(&c, &[-1.0]).is_err());
    }

    #[test]
    fn sweep_csv_format() {
        let rows = sweep(&SystemConfig::sspd_3g3(), &[1.0, 2.0]).unwrap();
        let csv = sweep_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(SWEEP_CSV_HEADER));
        assert!(lines.next().unwrap().starts_with("1.000,"));
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv, sweep_csv(&rows));
    }

    #[test]
    fn sweep_qber_non_decreasing() {
        for preset in Preset::ALL {
            let d: Vec<f64> = (0..=60).map(|k| k as f64 * 0.5).collect();
            let rows = sweep(&preset.config(), &d).unwrap();
            for w in rows.windows(2) {
                assert!(w[1].breakdown.total >= w[0].breakdown.total);
                assert!(w[1].report.raw_rate_hz < w[0].report.raw_rate_hz);
            }
        }
    }

    #[test]
    fn secure_distance_examples() {
        assert_eq!(
            secure_distance(&ideal()).unwrap(),
            SecureDistance::BeyondHorizon
        );
        match secure_distance(&SystemConfig::sispad_2g()).unwrap() {
            SecureDistance::Within(km) => assert!((8.0..=16.0).contains(&km), "{km}"),
            other => panic!("{other:?}"),
        }
        let mut bad = SystemConfig::sspd_3g3();
        bad.receiver.extinction_db = 5.0;
        assert!(matches!(
            secure_distance(&bad),
            Err(Error::InsecureAtOrigin { .. })
        ));
    }

    #[test]
    fn calibrate_exact_fit_is_unchanged() {
        let c = SystemConfig::sspd_3g3();
        let q = evaluate(&c.with_distance(12.0)).unwrap().report.qber;
        let obs = [Observation {
            distance_km: 12.0,
            observed: Observed::Qber(q),
        }];
        let fit = calibrate(&c, &obs).unwrap();
        assert_eq!(fit.config, c);
        assert_eq!(fit.objective, 0.0);
    }

    #[test]
    fn calibrate_reaches_reference_point() {
        let obs = [Observation {
            distance_km: 25.0,
            observed: Observed::Qber(0.036),
        }];
        let fit = calibrate(&SystemConfig::sspd_3g3(), &obs).unwrap();
        let q = total_qber(&fit.config.with_distance(25.0)).unwrap().total;
        assert!((q - 0.036).abs() < 1e-3, "{q} {:?}", fit.config);
        assert!(fit.config.detector0.dark_rate_hz <= 10.0);
        assert!((0.0..=10.0).contains(&fit.config.receiver.coupling_loss_db));
        // Deterministic.
        assert_eq!(calibrate(&SystemConfig::sspd_3g3(), &obs).unwrap(), fit);
    }

    #[test]
    fn calibrate_rejects_contradiction() {
        let obs = [Observation {
            distance_km: 1.0,
            observed: Observed::Qber(0.5),
        }];
        assert!(matches!(
            calibrate(&SystemConfig::sspd_3g3(), &obs),
            Err(Error::CalibrationInfeasible { .. })
        ));
        assert!(matches!(
            calibrate(&SystemConfig::sspd_3g3(), &[]),
            Err(Error::NoObservations)
        ));
    }

    #[test]
    fn calibrate_raw_rate_observation() {
        let mut target = SystemConfig::sspd_3g3();
        target.receiver.coupling_loss_db = 3.0;
        let r = evaluate(&target.with_distance(5.0)).unwrap().report.raw_rate_hz;
        let obs = [Observation {
            distance_km: 5.0,
            observed: Observed::RawRateHz(r),
        }];
        let fit = calibrate(&SystemConfig::sspd_3g3(), &obs).unwrap();
        assert!((fit.config.receiver.coupling_loss_db - 3.0).abs() < 1e-9);
    }

    #[test]
    fn gated_window_reduces_dark_term() {
        let mut c = SystemConfig::sspd_3g3().with_distance(25.0);
        let ungated = total_qber(&c).unwrap();
        let period = c.clock.period_ps();
        c.receiver.window = GateWindow::Gated {
            offset_ps: period / 2.0 - 60.0,
            width_ps: 120.0,
        };
        let gated = total_qber(&c).unwrap();
        assert!(gated.qber_det < ungated.qber_det);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn breakdown_sums_exactly(d in 0.0f64..40.0, ext in 10.0f64..35.0, dark in 0.0f64..1000.0) {
                for preset in Preset::ALL {
                    let mut c = preset.config().with_distance(d);
                    c.receiver.extinction_db = ext;
                    c.detector0.dark_rate_hz = dark;
                    c.detector1.dark_rate_hz = dark;
                    let b = total_qber(&c).unwrap();
                    prop_assert_eq!(b.total, b.qber_opt + b.qber_det + b.qber_int);
                    prop_assert!(b.qber_opt >= 0.0 && b.qber_det >= 0.0 && b.qber_int >= 0.0);
                    let p = evaluate(&c).unwrap();
                    prop_assert!(p.report.net_bit_rate_hz >= 0.0);
                    prop_assert_eq!(p.report.secure, p.report.secrecy_efficiency > 0.0);
                }
            }

            #[test]
            fn secrecy_efficiency_matches_oracle(q in 0.0f64..0.99, i in 0.0f64..=1.0) {
                let v = secrecy_efficiency(q, i).unwrap();
                prop_assert!((v - se_oracle(q, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn secrecy_efficiency_decreasing_below_threshold() {
        let q_star = security_threshold(0.29).unwrap();
        let mut prev = secrecy_efficiency(0.0, 0.29).unwrap();
        let mut k = 1;
        loop {
            let q = k as f64 * 1e-4;
            if q > 0.5 {
                break;
            }
            let v = secrecy_efficiency(q, 0.29).unwrap();
            // Continuous: no jumps bigger than the local slope allows.
            assert!((v - prev).abs() < 2e-3);
            if q <= q_star {
                assert!(v < prev);
            }
            prev = v;
            k += 1;
        }
    }

    #[test]
    fn threshold_decreasing_in_i_ae() {
        let mut prev = security_threshold(0.0).unwrap();
        for k in 1..=90 {
            let t = security_threshold(k as f64 * 0.01).unwrap();
            assert!(t < prev);
            prev = t;
        }
    }

    #[test]
    fn auto_window_gates_noisy_long_link() {
        let mut c = SystemConfig::sspd_3g3().with_distance(25.0);
        let ungated = evaluate(&c).unwrap();
        let choice = auto_window(&c).unwrap();
        c = with_window(c, &choice);
        assert!(matches!(c.receiver.window, GateWindow::Gated { .. }));
        let gated = evaluate(&c).unwrap();
        assert!(gated.breakdown.qber_det < ungated.breakdown.qber_det);

        let near = SystemConfig::sispad_2g().with_distance(1.0);
        let full = with_window(near, &WindowChoice { offset_ps: 0.0, width_ps: 500.0, ..choice });
        assert_eq!(full.receiver.window, GateWindow::Ungated);
    }
}
