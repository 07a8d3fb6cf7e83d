//! Event send schedules in simulated time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use crate::event::Event;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ScheduleMode {
    /// Fixed periods, merged by timestamp; ties go to the earlier stream.
    Deterministic,
    /// Exponential gaps per virtual user.
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledEvent {
    /// Simulated time since start, in ns.
    pub offset_ns: i64,
    pub stream: usize,
    /// Virtual user of the stream that sends this event.
    pub user: usize,
}

const MINUTE_NS: f64 = 60e9;

/// Every event of `scenario`, sorted by simulated send time.
///
/// Deterministic mode: the i-th event (1-based) of a stream at rate r per
/// minute is due at `i * 60s / r`, so a stream produces exactly
/// `floor(r * duration / 60s)` events and streams whose periods divide each
/// other line up exactly.
pub fn build(scenario: &Scenario, mode: ScheduleMode, seed: u64) -> Vec<ScheduledEvent> {
    let horizon = (scenario.duration_seconds * 1e9).round() as i64;
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (si, stream) in scenario.event_streams.iter().enumerate() {
        let rate = stream.rate_per_minute;
        if rate <= 0.0 {
            continue;
        }
        let users = stream.virtual_users.max(1);
        match mode {
            ScheduleMode::Deterministic => {
                let mut i = 1u64;
                loop {
                    let t = (i as f64 * MINUTE_NS / rate).round() as i64;
                    if t > horizon {
                        break;
                    }
                    out.push(ScheduledEvent {
                        offset_ns: t,
                        stream: si,
                        user: (i as usize - 1) % users,
                    });
                    i += 1;
                }
            }
            ScheduleMode::Stochastic => {
                let mean_gap = MINUTE_NS * users as f64 / rate;
                for user in 0..users {
                    let mut t = 0.0f64;
                    loop {
                        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                        t += -u.ln() * mean_gap;
                        if t > horizon as f64 {
                            break;
                        }
                        out.push(ScheduledEvent {
                            offset_ns: t.round() as i64,
                            stream: si,
                            user,
                        });
                    }
                }
            }
        }
    }
    out.sort_by_key(|e| (e.offset_ns, e.stream, e.user));
    out
}

/// The schedule as synthetic events (ids `e0`, `e1`, ... in send order,
/// created at their simulated offsets).
pub fn synthetic_events(scenario: &Scenario, schedule: &[ScheduledEvent]) -> Vec<Event> {
    schedule
        .iter()
        .enumerate()
        .map(|(i, s)| {
            Event::new(
                format!("e{i}"),
                scenario.event_streams[s.stream].event_type.clone(),
            )
            .created_at(s.offset_ns)
        })
        .collect()
}

/// Random printable payload of `len` bytes.
pub fn random_payload(rng: &mut impl Rng, len: usize) -> Vec<u8> {
    const CHARS: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
    (0..len)
        .map(|_| CHARS[rng.gen_range(0..CHARS.len())])
        .collect()
}
