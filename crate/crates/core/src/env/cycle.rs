use super::{GRIP_CLOSED, STROKE_HIGH, STROKE_LOW};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
enum Band {
    /// Not yet seen the wrist below the low threshold.
    #[default]
    Unarmed,
    Low,
    Stroke {
        peaked: bool,
        gripped: bool,
    },
}

/// Streaming ratchet-stroke counter.
///
/// A stroke starts when the wrist leaves the low band (`< STROKE_LOW`),
/// must pass `STROKE_HIGH`, and completes when the wrist re-enters the low
/// band. The grip must exceed `GRIP_CLOSED` on every sample from the first
/// sample outside the low band to the returning one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CycleDetector {
    band: Band,
    count: u32,
}

impl CycleDetector {
    pub fn push(&mut self, wrist: f64, grip: f64) {
        let low = wrist < STROKE_LOW;
        let closed = grip > GRIP_CLOSED;
        self.band = match self.band {
            Band::Unarmed if low => Band::Low,
            Band::Unarmed => Band::Unarmed,
            Band::Low if low => Band::Low,
            Band::Low => Band::Stroke {
                peaked: wrist > STROKE_HIGH,
                gripped: closed,
            },
            Band::Stroke { peaked, gripped } if low => {
                if peaked && gripped && closed {
                    self.count += 1;
                }
                Band::Low
            }
            Band::Stroke { peaked, gripped } => Band::Stroke {
                peaked: peaked || wrist > STROKE_HIGH,
                gripped: gripped && closed,
            },
        };
    }

    pub fn count(&self) -> u32 {
        self.count
    }
}

pub fn detect_cycle(wrist_history: &[f64], grip_history: &[f64]) -> u32 {
    let mut d = CycleDetector::default();
    for (&w, &g) in wrist_history.iter().zip(grip_history) {
        d.push(w, g);
    }
    d.count()
}
