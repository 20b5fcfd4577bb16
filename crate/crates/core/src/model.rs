//! Physical parameters of the link and the deterministic link-budget chain.
//!
//! Every rate in this crate is derived from a [`SystemConfig`]: clock, source,
//! fibre, receiver optics and the two detectors. Times are in picoseconds,
//! rates in hertz, losses in dB.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::protocol::conclusive_probability;
use crate::timing::{window_capture, TimingResponse};

/// Gaussian FWHM = `FWHM_PER_SIGMA` × σ.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Maximum Alice/Eve mutual information assumed for B92.
pub const DEFAULT_I_AE: f64 = 0.29;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockConfig {
    pub frequency_hz: f64,
}

impl ClockConfig {
    pub fn new(frequency_hz: f64) -> Result<Self> {
        let clock = Self { frequency_hz };
        clock.validate()?;
        Ok(clock)
    }

    pub fn period_ps(&self) -> f64 {
        1e12 / self.frequency_hz
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_hz.is_finite() && self.frequency_hz > 0.0) {
            return Err(invalid("clock_hz", "must be finite and > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    /// Mean photon number per pulse (μ).
    pub mean_photon_number: f64,
    pub pulse_fwhm_ps: f64,
    pub wavelength_nm: f64,
}

impl SourceModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_photon_number.is_finite() && self.mean_photon_number >= 0.0) {
            return Err(invalid("mu", "must be finite and >= 0"));
        }
        if !(self.pulse_fwhm_ps.is_finite() && self.pulse_fwhm_ps >= 0.0) {
            return Err(invalid("pulse_fwhm_ps", "must be finite and >= 0"));
        }
        if !(self.wavelength_nm.is_finite() && self.wavelength_nm > 0.0) {
            return Err(invalid("wavelength_nm", "must be finite and > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FibreChannel {
    pub loss_db_per_km: f64,
    pub length_km: f64,
    /// Lumped connector / attenuator offset.
    pub extra_loss_db: f64,
}

impl FibreChannel {
    pub fn total_loss_db(&self) -> f64 {
        self.loss_db_per_km * self.length_km + self.extra_loss_db
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.loss_db_per_km.is_finite() && self.loss_db_per_km >= 0.0) {
            return Err(invalid("loss_db_per_km", "must be finite and >= 0"));
        }
        if !(self.length_km.is_finite() && self.length_km >= 0.0) {
            return Err(invalid("distance_km", "must be finite and >= 0"));
        }
        if !(self.extra_loss_db.is_finite() && self.extra_loss_db >= 0.0) {
            return Err(invalid("extra_loss_db", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    pub jitter_fwhm_ps: f64,
    pub dead_time_ps: f64,
}

impl DetectorModel {
    pub fn validate(&self, which: usize) -> Result<()> {
        let field = |name: &'static str, other: &'static str| if which == 0 { name } else { other };
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(invalid(field("det0_efficiency", "det1_efficiency"), "must lie in [0, 1]"));
        }
        if !(self.dark_rate_hz.is_finite() && self.dark_rate_hz >= 0.0) {
            return Err(invalid(field("det0_dark_hz", "det1_dark_hz"), "must be finite and >= 0"));
        }
        if !(self.jitter_fwhm_ps.is_finite() && self.jitter_fwhm_ps >= 0.0) {
            return Err(invalid(
                field("det0_jitter_fwhm_ps", "det1_jitter_fwhm_ps"),
                "must be finite and >= 0",
            ));
        }
        if !(self.dead_time_ps.is_finite() && self.dead_time_ps >= 0.0) {
            return Err(invalid(field("det0_dead_ns", "det1_dead_ns"), "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Acceptance window inside each clock period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GateWindow {
    /// The whole period is accepted.
    Ungated,
    Gated { offset_ps: f64, width_ps: f64 },
}

impl GateWindow {
    pub fn offset_ps(&self) -> f64 {
        match *self {
            GateWindow::Ungated => 0.0,
            GateWindow::Gated { offset_ps, .. } => offset_ps,
        }
    }

    pub fn width_ps(&self, period_ps: f64) -> f64 {
        match *self {
            GateWindow::Ungated => period_ps,
            GateWindow::Gated { width_ps, .. } => width_ps,
        }
    }

    /// Fraction of the period covered by the window.
    pub fn duty(&self, period_ps: f64) -> f64 {
        self.width_ps(period_ps) / period_ps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverModel {
    /// Angle between Alice's two polarization states.
    pub state_separation_deg: f64,
    /// Polarization extinction ratio of the analyzers; `f64::INFINITY` is an ideal analyzer.
    pub extinction_db: f64,
    pub coupling_loss_db: f64,
    pub window: GateWindow,
}

impl ReceiverModel {
    /// Leakage of the wrong state through an analyzer, 10^(-extinction/10).
    pub fn leakage(&self) -> f64 {
        db_to_linear(self.extinction_db)
    }

    pub fn coupling_transmittance(&self) -> f64 {
        db_to_linear(self.coupling_loss_db)
    }

    pub fn validate(&self, period_ps: f64) -> Result<()> {
        if !(self.state_separation_deg > 0.0 && self.state_separation_deg < 90.0) {
            return Err(invalid("angle_deg", "must lie strictly between 0 and 90 degrees"));
        }
        if self.extinction_db.is_nan() || self.extinction_db < 0.0 {
            return Err(invalid("extinction_db", "must be >= 0"));
        }
        if !(self.coupling_loss_db.is_finite() && self.coupling_loss_db >= 0.0) {
            return Err(invalid("coupling_loss_db", "must be finite and >= 0"));
        }
        if let GateWindow::Gated { offset_ps, width_ps } = self.window {
            if !(width_ps.is_finite() && width_ps >= 0.0 && width_ps <= period_ps) {
                return Err(invalid(
                    "window_width_ps",
                    format!("must lie in [0, period = {period_ps} ps]"),
                ));
            }
            if !(offset_ps.is_finite() && offset_ps >= 0.0 && offset_ps <= period_ps - width_ps) {
                return Err(invalid(
                    "window_offset_ps",
                    format!("must lie in [0, period - width = {} ps]", period_ps - width_ps),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub clock: ClockConfig,
    pub source: SourceModel,
    pub channel: FibreChannel,
    pub receiver: ReceiverModel,
    pub detector0: DetectorModel,
    pub detector1: DetectorModel,
    pub i_ae: f64,
}

/// Named parameter sets for the two receivers being compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    /// NbN nanowire detectors at a 3.3 GHz clock.
    #[serde(rename = "SSPD_3G3")]
    Sspd3G3,
    /// Thick-junction silicon SPADs at a 2 GHz clock.
    #[serde(rename = "SISPAD_2G")]
    SiSpad2G,
}

impl Preset {
    pub const ALL: [Preset; 2] = [Preset::Sspd3G3, Preset::SiSpad2G];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Sspd3G3 => "SSPD_3G3",
            Preset::SiSpad2G => "SISPAD_2G",
        }
    }

    pub fn config(&self) -> SystemConfig {
        match self {
            Preset::Sspd3G3 => SystemConfig::sspd_3g3(),
            Preset::SiSpad2G => SystemConfig::sispad_2g(),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown preset `{s}` (known: SSPD_3G3, SISPAD_2G)"))
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

const SHARED_SOURCE: SourceModel = SourceModel {
    mean_photon_number: 0.1,
    pulse_fwhm_ps: 50.0,
    wavelength_nm: 850.0,
};

const SHARED_CHANNEL: FibreChannel = FibreChannel {
    loss_db_per_km: 2.2,
    length_km: 0.0,
    extra_loss_db: 0.0,
};

const SHARED_RECEIVER: ReceiverModel = ReceiverModel {
    state_separation_deg: 45.0,
    extinction_db: 21.0,
    coupling_loss_db: 0.0,
    window: GateWindow::Ungated,
};

impl SystemConfig {
    pub fn sspd_3g3() -> Self {
        let detector = DetectorModel {
            efficiency: 0.05,
            dark_rate_hz: 10.0,
            jitter_fwhm_ps: 68.0,
            dead_time_ps: 10_000.0,
        };
        Self {
            clock: ClockConfig { frequency_hz: 3.3e9 },
            source: SHARED_SOURCE,
            channel: SHARED_CHANNEL,
            receiver: SHARED_RECEIVER,
            detector0: detector,
            detector1: detector,
            i_ae: DEFAULT_I_AE,
        }
    }

    pub fn sispad_2g() -> Self {
        let detector = DetectorModel {
            efficiency: 0.40,
            dark_rate_hz: 500.0,
            jitter_fwhm_ps: 400.0,
            dead_time_ps: 50_000.0,
        };
        Self {
            clock: ClockConfig { frequency_hz: 2.0e9 },
            source: SHARED_SOURCE,
            channel: SHARED_CHANNEL,
            receiver: SHARED_RECEIVER,
            detector0: detector,
            detector1: detector,
            i_ae: DEFAULT_I_AE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.clock.validate()?;
        self.source.validate()?;
        self.channel.validate()?;
        self.receiver.validate(self.clock.period_ps())?;
        self.detector0.validate(0)?;
        self.detector1.validate(1)?;
        if !(0.0..=1.0).contains(&self.i_ae) {
            return Err(invalid("i_ae", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn detector(&self, index: usize) -> &DetectorModel {
        match index {
            0 => &self.detector0,
            _ => &self.detector1,
        }
    }

    pub fn with_distance(mut self, length_km: f64) -> Self {
        self.channel.length_km = length_km;
        self
    }

    /// Arrival-time response seen by one detector, centered in the period.
    pub fn response(&self, detector: usize) -> TimingResponse {
        let sigma = combined_sigma(&self.source, self.detector(detector));
        TimingResponse::centered(sigma, self.clock.period_ps())
    }

    /// Mean number of photons per pulse reaching the analyzers.
    pub fn arrival_mean(&self) -> f64 {
        self.source.mean_photon_number
            * transmittance(&self.channel)
            * self.receiver.coupling_transmittance()
    }
}

pub fn db_to_linear(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

pub fn transmittance(channel: &FibreChannel) -> f64 {
    db_to_linear(channel.total_loss_db())
}

pub fn fwhm_to_sigma(fwhm_ps: f64) -> f64 {
    fwhm_ps / FWHM_PER_SIGMA
}

/// Source and detector jitter added in quadrature.
pub fn combined_sigma(source: &SourceModel, detector: &DetectorModel) -> f64 {
    fwhm_to_sigma(source.pulse_fwhm_ps).hypot(fwhm_to_sigma(detector.jitter_fwhm_ps))
}

/// Conclusive signal click rate at the detector pair, before dead-time loss.
///
/// Counts clicks on the correct analyzer whose timestamps land inside their
/// own cycle's window; the two detectors are averaged since each bit value
/// routes its conclusive outcome to a different one.
pub fn raw_click_rate(config: &SystemConfig) -> f64 {
    let per_pulse = config.arrival_mean()
        * conclusive_probability(config.receiver.state_separation_deg);
    let period = config.clock.period_ps();
    let offset = config.receiver.window.offset_ps();
    let width = config.receiver.window.width_ps(period);
    let detected: f64 = (0..2)
        .map(|d| {
            let capture = window_capture(&config.response(d), offset, width);
            config.detector(d).efficiency * capture
        })
        .sum::<f64>()
        / 2.0;
    config.clock.frequency_hz * per_pulse * detected
}

/// Non-paralyzable dead-time loss: `rate / (1 + rate·τ)`.
pub fn dead_time_throttle(true_rate_hz: f64, dead_time_ps: f64) -> f64 {
    true_rate_hz / (1.0 + true_rate_hz * dead_time_ps * 1e-12)
}
