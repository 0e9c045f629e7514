//! Event and IMU sample types and the rolling event buffer.
//!
//! Timestamps are nanoseconds since the stream epoch, stored as u64.
//! Math downstream works in seconds relative to the buffer start t0.

use crate::geometry::Vec3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A single brightness-change event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    /// Time in nanoseconds since stream epoch.
    pub t: u64,
    /// Pixel column.
    pub x: u16,
    /// Pixel row.
    pub y: u16,
    /// Sign of the brightness change, -1 or +1.
    pub polarity: i8,
}

/// Angular rate measurement in the body frame, rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: u64,
    pub omega: Vec3,
}

#[derive(Debug, Error, PartialEq)]
pub enum EventBufferError {
    #[error("event at t={t} outside window [{t0}, {t1}]")]
    OutOfWindow { t: u64, t0: u64, t1: u64 },
    #[error("events not sorted: t={t} after t={prev}")]
    NotSorted { prev: u64, t: u64 },
    #[error("event pixel ({x}, {y}) outside sensor {width}x{height}")]
    OutOfBounds {
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },
}

/// Time-windowed rolling buffer of events, sorted non-decreasing in t.
#[derive(Debug, Clone)]
pub struct EventBuffer {
    events: Vec<Event>,
    t0: u64,
    window_ns: u64,
}

impl EventBuffer {
    pub fn new(t0: u64, window_ns: u64) -> Self {
        Self {
            events: Vec::new(),
            t0,
            window_ns,
        }
    }

    /// Builds a buffer from a sorted slice, validating the window invariant.
    pub fn from_events(
        events: Vec<Event>,
        t0: u64,
        window_ns: u64,
    ) -> Result<Self, EventBufferError> {
        let mut prev = t0;
        for e in &events {
            if e.t < prev {
                return Err(EventBufferError::NotSorted { prev, t: e.t });
            }
            if e.t < t0 || e.t > t0 + window_ns {
                return Err(EventBufferError::OutOfWindow {
                    t: e.t,
                    t0,
                    t1: t0 + window_ns,
                });
            }
            prev = e.t;
        }
        Ok(Self {
            events,
            t0,
            window_ns,
        })
    }

    pub fn push(&mut self, e: Event) -> Result<(), EventBufferError> {
        if let Some(last) = self.events.last() {
            if e.t < last.t {
                return Err(EventBufferError::NotSorted {
                    prev: last.t,
                    t: e.t,
                });
            }
        }
        if e.t < self.t0 || e.t > self.t0 + self.window_ns {
            return Err(EventBufferError::OutOfWindow {
                t: e.t,
                t0: self.t0,
                t1: self.t0 + self.window_ns,
            });
        }
        self.events.push(e);
        Ok(())
    }

    /// Advances the window start, dropping events that fell out.
    pub fn advance(&mut self, new_t0: u64) {
        self.t0 = new_t0;
        self.events.retain(|e| e.t >= new_t0);
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn t0(&self) -> u64 {
        self.t0
    }

    pub fn window_ns(&self) -> u64 {
        self.window_ns
    }

    pub fn window_s(&self) -> f64 {
        self.window_ns as f64 * 1e-9
    }

    pub fn end(&self) -> u64 {
        self.t0 + self.window_ns
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    /// Relative timestamp of an event in seconds since t0.
    pub fn rel_t(&self, e: &Event) -> f64 {
        (e.t - self.t0) as f64 * 1e-9
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_enforces_order_and_window() {
        let mut buf = EventBuffer::new(1_000, 10_000_000);
        buf.push(Event {
            t: 2_000,
            x: 1,
            y: 1,
            polarity: 1,
        })
        .unwrap();
        let err = buf
            .push(Event {
                t: 1_500,
                x: 1,
                y: 1,
                polarity: 1,
            })
            .unwrap_err();
        assert!(matches!(err, EventBufferError::NotSorted { .. }));
        let err = buf
            .push(Event {
                t: 20_000_000,
                x: 1,
                y: 1,
                polarity: 1,
            })
            .unwrap_err();
        assert!(matches!(err, EventBufferError::OutOfWindow { .. }));
    }

    #[test]
    fn advance_drops_stale_events() {
        let mut buf = EventBuffer::new(0, 10_000);
        for t in [100u64, 5_000, 9_000] {
            buf.push(Event {
                t,
                x: 0,
                y: 0,
                polarity: -1,
            })
            .unwrap();
        }
        buf.advance(5_000);
        assert_eq!(buf.len(), 2);
        assert_eq!(buf.t0(), 5_000);
    }
}
