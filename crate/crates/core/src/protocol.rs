//! B92 kernel: two non-orthogonal polarization states, a passive 50/50 split
//! to two analyzers, and sifting of conclusive outcomes.
//!
//! Detector 0 sits behind the analyzer that blocks state 0, so a click there
//! conclusively reports bit 1; detector 1 likewise reports bit 0.

use serde::{Deserialize, Serialize};

use crate::model::ReceiverModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bit {
    Zero,
    One,
}

impl Bit {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Bit::One
        } else {
            Bit::Zero
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Bit::Zero => Bit::One,
            Bit::One => Bit::Zero,
        }
    }

    /// Detector whose click conclusively reports this bit.
    pub fn reporting_detector(self) -> Detector {
        match self {
            Bit::One => Detector::D0,
            Bit::Zero => Detector::D1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Detector {
    D0,
    D1,
}

impl Detector {
    pub fn index(self) -> usize {
        match self {
            Detector::D0 => 0,
            Detector::D1 => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Detector::D0
        } else {
            Detector::D1
        }
    }

    /// Bit Bob infers from a click on this detector.
    pub fn inferred_bit(self) -> Bit {
        match self {
            Detector::D0 => Bit::One,
            Detector::D1 => Bit::Zero,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Detector::D0 => Detector::D1,
            Detector::D1 => Detector::D0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct B92State {
    pub bit: Bit,
    pub polarization_deg: f64,
}

impl B92State {
    pub fn encode(bit: Bit, separation_deg: f64) -> Self {
        let polarization_deg = match bit {
            Bit::Zero => 0.0,
            Bit::One => separation_deg,
        };
        Self {
            bit,
            polarization_deg,
        }
    }
}

/// Per-pulse click probabilities for one transmitted state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClickProbabilities {
    /// Conclusive click on detector 0 (reports bit 1).
    pub p_click0: f64,
    /// Conclusive click on detector 1 (reports bit 0).
    pub p_click1: f64,
    /// Wrong-state leakage into detector 0.
    pub p_error0: f64,
    /// Wrong-state leakage into detector 1.
    pub p_error1: f64,
}

impl ClickProbabilities {
    pub fn total(&self) -> f64 {
        self.p_click0 + self.p_click1 + self.p_error0 + self.p_error1
    }
}

/// Probability that an arriving photon is routed to the analyzer that blocks
/// the state Alice did not send and passes it: `0.5·sin²(angle)`.
pub fn conclusive_probability(state_separation_deg: f64) -> f64 {
    0.5 * state_separation_deg.to_radians().sin().powi(2)
}

pub fn click_probabilities(
    sent: B92State,
    receiver: &ReceiverModel,
    arrival_prob: f64,
    detector_eff: f64,
) -> ClickProbabilities {
    let conclusive =
        arrival_prob * detector_eff * conclusive_probability(receiver.state_separation_deg);
    let error = conclusive * receiver.leakage();
    match sent.bit.reporting_detector() {
        Detector::D0 => ClickProbabilities {
            p_click0: conclusive,
            p_error1: error,
            ..Default::default()
        },
        Detector::D1 => ClickProbabilities {
            p_click1: conclusive,
            p_error0: error,
            ..Default::default()
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiftRecord {
    pub alice_bit: Bit,
    pub bob_detector: Option<Detector>,
}

impl SiftRecord {
    pub fn conclusive(&self) -> bool {
        self.bob_detector.is_some()
    }

    pub fn error(&self) -> bool {
        self.bob_detector
            .is_some_and(|d| d.inferred_bit() != self.alice_bit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SiftCounts {
    pub key_bits: u64,
    pub error_bits: u64,
}

impl SiftCounts {
    /// `None` when no bit survived sifting.
    pub fn qber(&self) -> Option<f64> {
        (self.key_bits > 0).then(|| self.error_bits as f64 / self.key_bits as f64)
    }
}

pub fn sift<'a>(records: impl IntoIterator<Item = &'a SiftRecord>) -> SiftCounts {
    records
        .into_iter()
        .fold(SiftCounts::default(), |mut acc, r| {
            if r.conclusive() {
                acc.key_bits += 1;
                acc.error_bits += u64::from(r.error());
            }
            acc
        })
}
