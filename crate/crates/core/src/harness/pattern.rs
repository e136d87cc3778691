use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// How slot ids are assigned to a packet sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AccessPattern {
    /// Every packet names `slot` (reduced modulo the bank size).
    Fixed {
        slot: u32,
    },
    RoundRobin,
    Random {
        seed: u64,
    },
    /// `hot_slot` with probability `hot_fraction`, otherwise one of the
    /// other slots uniformly.
    Hotspot {
        hot_slot: u32,
        hot_fraction: f64,
        seed: u64,
    },
}

pub const DEFAULT_HOT_FRACTION: f64 = 0.9;

impl AccessPattern {
    /// The four patterns with default parameters.
    pub fn standard(seed: u64) -> [AccessPattern; 4] {
        [
            AccessPattern::Fixed { slot: 3 },
            AccessPattern::RoundRobin,
            AccessPattern::Random { seed },
            AccessPattern::Hotspot {
                hot_slot: 0,
                hot_fraction: DEFAULT_HOT_FRACTION,
                seed,
            },
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            AccessPattern::Fixed { .. } => "fixed",
            AccessPattern::RoundRobin => "round_robin",
            AccessPattern::Random { .. } => "random",
            AccessPattern::Hotspot { .. } => "hotspot",
        }
    }

    /// Slot-id sequence of length `n` for a bank of `slots` slots. Deterministic.
    pub fn generate(&self, slots: usize, n: usize) -> Vec<u32> {
        assert!(slots > 0, "pattern needs at least one slot");
        let k = slots as u32;
        match *self {
            AccessPattern::Fixed { slot } => vec![slot % k; n],
            AccessPattern::RoundRobin => (0..n).map(|i| (i % slots) as u32).collect(),
            AccessPattern::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| rng.gen_range(0..k)).collect()
            }
            AccessPattern::Hotspot {
                hot_slot,
                hot_fraction,
                seed,
            } => {
                let hot = hot_slot % k;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n)
                    .map(|_| {
                        if k == 1 || rng.gen_bool(hot_fraction.clamp(0.0, 1.0)) {
                            hot
                        } else {
                            let other = rng.gen_range(0..k - 1);
                            if other >= hot {
                                other + 1
                            } else {
                                other
                            }
                        }
                    })
                    .collect()
            }
        }
    }
}

impl fmt::Display for AccessPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AccessPattern::Fixed { slot } => write!(f, "fixed:{slot}"),
            AccessPattern::RoundRobin => write!(f, "round_robin"),
            AccessPattern::Random { seed } => write!(f, "random:{seed}"),
            AccessPattern::Hotspot {
                hot_slot,
                hot_fraction,
                seed,
            } => write!(f, "hotspot:{hot_slot}:{hot_fraction}:{seed}"),
        }
    }
}

/// Parses `fixed:3`, `round_robin`, `random[:seed]`, `hotspot[:slot[:fraction[:seed]]]`.
impl FromStr for AccessPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or_default();
        let rest: Vec<&str> = parts.collect();
        let num = |i: usize, default: &str| -> Result<String, String> {
            Ok(rest.get(i).copied().unwrap_or(default).to_string())
        };
        let bad = |what: &str| format!("bad {what} in access pattern `{s}`");
        let p = match kind.replace('-', "_").as_str() {
            "fixed" => AccessPattern::Fixed {
                slot: num(0, "3")?.parse().map_err(|_| bad("slot"))?,
            },
            "round_robin" | "rr" => AccessPattern::RoundRobin,
            "random" => AccessPattern::Random {
                seed: num(0, "1")?.parse().map_err(|_| bad("seed"))?,
            },
            "hotspot" => {
                let hot_fraction: f64 = num(1, "0.9")?.parse().map_err(|_| bad("fraction"))?;
                if !(0.0..=1.0).contains(&hot_fraction) {
                    return Err(bad("fraction"));
                }
                AccessPattern::Hotspot {
                    hot_slot: num(0, "0")?.parse().map_err(|_| bad("slot"))?,
                    hot_fraction,
                    seed: num(2, "1")?.parse().map_err(|_| bad("seed"))?,
                }
            }
            _ => return Err(format!("unknown access pattern `{s}`")),
        };
        Ok(p)
    }
}
