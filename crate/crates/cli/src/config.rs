//! Flat `key = value` configuration documents.
//!
//! Blank lines and `#` comments are ignored. Keys not set by the document keep
//! the values of the base preset. Unknown and repeated keys are errors.

use std::collections::HashMap;

use gqkd_core::model::GateWindow;
use gqkd_core::{Error as CoreError, SystemConfig};

use crate::error::CliError;

pub const KEYS: [&str; 24] = [
    "clock_hz",
    "mu",
    "pulse_fwhm_ps",
    "wavelength_nm",
    "loss_db_per_km",
    "distance_km",
    "extra_loss_db",
    "angle_deg",
    "extinction_db",
    "coupling_loss_db",
    "window_offset_ps",
    "window_width_ps",
    "det0_efficiency",
    "det0_dark_hz",
    "det0_jitter_fwhm_ps",
    "det0_dead_ns",
    "det1_efficiency",
    "det1_dark_hz",
    "det1_jitter_fwhm_ps",
    "det1_dead_ns",
    "i_ae",
    "seed",
    "cycles",
    "block_size",
];

fn is_key(key: &str) -> bool {
    KEYS.contains(&key)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSettings {
    pub seed: u64,
    pub cycles: u64,
    pub block_size: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            seed: 1,
            cycles: 10_000_000,
            block_size: 1 << 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowWidth {
    Full,
    Auto,
    Ps(f64),
}

/// Everything a config document can express.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Document {
    /// The window here is only meaningful once `width` has been resolved.
    pub config: SystemConfig,
    pub window_offset_ps: f64,
    pub width: WindowWidth,
    pub run: RunSettings,
}

impl Document {
    pub fn from_config(config: SystemConfig) -> Self {
        let (window_offset_ps, width) = match config.receiver.window {
            GateWindow::Ungated => (0.0, WindowWidth::Full),
            GateWindow::Gated { offset_ps, width_ps } => (offset_ps, WindowWidth::Ps(width_ps)),
        };
        Self {
            config,
            window_offset_ps,
            width,
            run: RunSettings::default(),
        }
    }

    pub fn auto_window(&self) -> bool {
        self.width == WindowWidth::Auto
    }
}

/// Key/value assignments collected with their source location, applied in order.
#[derive(Debug, Default)]
pub struct Assignments {
    items: Vec<(String, String, Option<usize>)>,
    lines: HashMap<String, Option<usize>>,
}

impl Assignments {
    pub fn push(&mut self, key: &str, value: &str, line: Option<usize>) -> Result<(), CliError> {
        if !is_key(key) {
            return Err(CliError::config(Some(key), line, format!("unknown config key `{key}`")));
        }
        if self.lines.contains_key(key) {
            return Err(CliError::config(Some(key), line, format!("key `{key}` set twice")));
        }
        self.lines.insert(key.to_string(), line);
        self.items.push((key.to_string(), value.to_string(), line));
        Ok(())
    }

    /// Later sources win: a command-line override replaces the document's value.
    pub fn overlay(&mut self, other: Assignments) {
        for (key, value, line) in other.items {
            self.items.retain(|(k, _, _)| *k != key);
            self.lines.insert(key.clone(), line);
            self.items.push((key, value, line));
        }
    }

    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let mut out = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(CliError::config(None, Some(line), format!("expected `key = value`, got `{content}`")));
            };
            let (key, value) = (key.trim(), value.trim());
            if value.is_empty() {
                return Err(CliError::config(Some(key), Some(line), "missing value"));
            }
            out.push(key, value, Some(line))?;
        }
        Ok(out)
    }

    pub fn apply(&self, base: Document) -> Result<Document, CliError> {
        let mut doc = base;
        for (key, value, line) in &self.items {
            set(&mut doc, key, value).map_err(|msg| CliError::config(Some(key), *line, msg))?;
        }
        resolve_window(&mut doc);
        doc.config.validate().map_err(|e| match &e {
            CoreError::InvalidParameter { field, .. } => {
                let line = self.lines.get(*field).copied().flatten();
                CliError::config(Some(field), line, e.to_string())
            }
            _ => CliError::from(e),
        })?;
        if doc.width == WindowWidth::Full && doc.window_offset_ps != 0.0 {
            let line = self.lines.get("window_offset_ps").copied().flatten();
            return Err(CliError::config(
                Some("window_offset_ps"),
                line,
                "an ungated window (width = full) must have offset 0",
            ));
        }
        if doc.run.cycles == 0 || doc.run.block_size == 0 {
            let key = if doc.run.cycles == 0 { "cycles" } else { "block_size" };
            let line = self.lines.get(key).copied().flatten();
            return Err(CliError::config(Some(key), line, "must be >= 1"));
        }
        Ok(doc)
    }
}

fn resolve_window(doc: &mut Document) {
    doc.config.receiver.window = match doc.width {
        WindowWidth::Full | WindowWidth::Auto => GateWindow::Ungated,
        WindowWidth::Ps(width_ps) => GateWindow::Gated {
            offset_ps: doc.window_offset_ps,
            width_ps,
        },
    };
}

/// Parses a document on top of `base`.
pub fn parse_config(text: &str, base: Document) -> Result<Document, CliError> {
    Assignments::from_text(text)?.apply(base)
}

fn number(value: &str) -> Result<f64, String> {
    match value.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        v => v
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| format!("`{value}` is not a number")),
    }
}

fn finite(value: &str) -> Result<f64, String> {
    number(value).and_then(|x| {
        if x.is_finite() {
            Ok(x)
        } else {
            Err(format!("`{value}` must be finite"))
        }
    })
}

fn integer(value: &str) -> Result<u64, String> {
    value
        .replace('_', "")
        .parse::<u64>()
        .or_else(|_| {
            // Accept scientific notation for whole numbers, e.g. 1e7.
            let x: f64 = value.parse().map_err(|_| ())?;
            if x >= 0.0 && x.fract() == 0.0 && x < 1.8e19 {
                Ok(x as u64)
            } else {
                Err(())
            }
        })
        .map_err(|_| format!("`{value}` is not a non-negative integer"))
}

fn set(doc: &mut Document, key: &str, value: &str) -> Result<(), String> {
    let c = &mut doc.config;
    match key {
        "clock_hz" => c.clock.frequency_hz = finite(value)?,
        "mu" => c.source.mean_photon_number = finite(value)?,
        "pulse_fwhm_ps" => c.source.pulse_fwhm_ps = finite(value)?,
        "wavelength_nm" => c.source.wavelength_nm = finite(value)?,
        "loss_db_per_km" => c.channel.loss_db_per_km = finite(value)?,
        "distance_km" => c.channel.length_km = finite(value)?,
        "extra_loss_db" => c.channel.extra_loss_db = finite(value)?,
        "angle_deg" => c.receiver.state_separation_deg = finite(value)?,
        "extinction_db" => c.receiver.extinction_db = number(value)?,
        "coupling_loss_db" => c.receiver.coupling_loss_db = finite(value)?,
        "window_offset_ps" => doc.window_offset_ps = finite(value)?,
        "window_width_ps" => {
            doc.width = match value.to_ascii_lowercase().as_str() {
                "full" => WindowWidth::Full,
                "auto" => WindowWidth::Auto,
                _ => WindowWidth::Ps(finite(value)?),
            }
        }
        "det0_efficiency" => c.detector0.efficiency = finite(value)?,
        "det0_dark_hz" => c.detector0.dark_rate_hz = finite(value)?,
        "det0_jitter_fwhm_ps" => c.detector0.jitter_fwhm_ps = finite(value)?,
        "det0_dead_ns" => c.detector0.dead_time_ps = finite(value)? * 1000.0,
        "det1_efficiency" => c.detector1.efficiency = finite(value)?,
        "det1_dark_hz" => c.detector1.dark_rate_hz = finite(value)?,
        "det1_jitter_fwhm_ps" => c.detector1.jitter_fwhm_ps = finite(value)?,
        "det1_dead_ns" => c.detector1.dead_time_ps = finite(value)? * 1000.0,
        "i_ae" => c.i_ae = finite(value)?,
        "seed" => doc.run.seed = integer(value)?,
        "cycles" => doc.run.cycles = integer(value)?,
        "block_size" => doc.run.block_size = integer(value)?,
        _ => return Err(format!("unknown config key `{key}`")),
    }
    Ok(())
}

fn fmt(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".to_string()
    } else {
        // Rust's Display is the shortest string that parses back to `x`.
        format!("{x}")
    }
}

/// Dead time is stored in ps but written in ns. Pick the ns value whose
/// product with 1000 reproduces the stored ps exactly, when one exists.
fn fmt_dead_ns(ps: f64) -> String {
    let guess = ps / 1000.0;
    let step = |x: f64, up: bool| {
        let bits = x.to_bits() as i64;
        let delta = if (x >= 0.0) == up { 1 } else { -1 };
        f64::from_bits((bits + delta) as u64)
    };
    let mut candidates = vec![guess];
    let (mut lo, mut hi) = (guess, guess);
    for _ in 0..4 {
        lo = step(lo, false);
        hi = step(hi, true);
        candidates.extend([lo, hi]);
    }
    let exact = candidates.into_iter().find(|ns| ns.is_finite() && ns * 1000.0 == ps);
    fmt(exact.unwrap_or(guess))
}

/// Writes every key, so a document is a complete, self-contained record.
pub fn emit_config(doc: &Document) -> String {
    let c = &doc.config;
    let width = match doc.width {
        WindowWidth::Full => "full".to_string(),
        WindowWidth::Auto => "auto".to_string(),
        WindowWidth::Ps(w) => fmt(w),
    };
    let lines: Vec<(&str, String)> = vec![
        ("clock_hz", fmt(c.clock.frequency_hz)),
        ("mu", fmt(c.source.mean_photon_number)),
        ("pulse_fwhm_ps", fmt(c.source.pulse_fwhm_ps)),
        ("wavelength_nm", fmt(c.source.wavelength_nm)),
        ("loss_db_per_km", fmt(c.channel.loss_db_per_km)),
        ("distance_km", fmt(c.channel.length_km)),
        ("extra_loss_db", fmt(c.channel.extra_loss_db)),
        ("angle_deg", fmt(c.receiver.state_separation_deg)),
        ("extinction_db", fmt(c.receiver.extinction_db)),
        ("coupling_loss_db", fmt(c.receiver.coupling_loss_db)),
        ("window_offset_ps", fmt(doc.window_offset_ps)),
        ("window_width_ps", width),
        ("det0_efficiency", fmt(c.detector0.efficiency)),
        ("det0_dark_hz", fmt(c.detector0.dark_rate_hz)),
        ("det0_jitter_fwhm_ps", fmt(c.detector0.jitter_fwhm_ps)),
        ("det0_dead_ns", fmt_dead_ns(c.detector0.dead_time_ps)),
        ("det1_efficiency", fmt(c.detector1.efficiency)),
        ("det1_dark_hz", fmt(c.detector1.dark_rate_hz)),
        ("det1_jitter_fwhm_ps", fmt(c.detector1.jitter_fwhm_ps)),
        ("det1_dead_ns", fmt_dead_ns(c.detector1.dead_time_ps)),
        ("i_ae", fmt(c.i_ae)),
        ("seed", doc.run.seed.to_string()),
        ("cycles", doc.run.cycles.to_string()),
        ("block_size", doc.run.block_size.to_string()),
    ];
    let mut out = String::from("# gqkd link configuration\n");
    for (k, v) in lines {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}
