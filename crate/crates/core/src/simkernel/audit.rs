//! Online invariant checker fed by the kernel while it executes actions.

use std::collections::{HashMap, HashSet};

use crate::protocol::{OriginId, Seq};
use crate::time::SimTime;

const MAX_RECORDED: usize = 32;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub events: u64,
    pub data_transmissions: u64,
    pub deliveries: u64,
    pub timers_set: u64,
    pub timers_cancelled: u64,
    pub timers_fired: u64,
    pub timers_pending_at_end: u64,
    pub violation_count: u64,
    /// First few violations, in detection order.
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violation_count == 0
    }
}

#[derive(Debug)]
pub struct Audit {
    max_transmissions: u32,
    attempts: HashMap<(usize, Seq), u32>,
    delivered: HashSet<OriginId>,
    last_time: SimTime,
    report: AuditReport,
}

impl Audit {
    pub fn new(max_transmissions: u32) -> Self {
        Audit {
            max_transmissions,
            attempts: HashMap::new(),
            delivered: HashSet::new(),
            last_time: SimTime::ZERO,
            report: AuditReport::default(),
        }
    }

    pub(crate) fn violation(&mut self, msg: impl FnOnce() -> String) {
        self.report.violation_count += 1;
        if self.report.violations.len() < MAX_RECORDED {
            self.report.violations.push(msg());
        }
    }

    pub(crate) fn on_event(&mut self, time: SimTime) {
        self.report.events += 1;
        if time < self.last_time {
            let last = self.last_time;
            self.violation(|| format!("clock went backwards: {time} after {last}"));
        }
        self.last_time = time;
    }

    pub(crate) fn on_data_transmit(&mut self, link: usize, seq: Seq) {
        self.report.data_transmissions += 1;
        let count = self.attempts.entry((link, seq)).or_insert(0);
        *count += 1;
        let count = *count;
        if count > self.max_transmissions {
            let n = self.max_transmissions;
            self.violation(|| format!("link {link} seq {seq}: attempt {count} exceeds limit {n}"));
        }
    }

    pub(crate) fn on_delivery(&mut self, origin: OriginId) {
        self.report.deliveries += 1;
        if !self.delivered.insert(origin) {
            self.violation(|| format!("origin {origin} delivered more than once"));
        }
    }

    pub(crate) fn on_timer_set(&mut self) {
        self.report.timers_set += 1;
    }

    pub(crate) fn on_timer_cancel(&mut self, effective: bool, station: usize, seq: Seq) {
        if effective {
            self.report.timers_cancelled += 1;
        } else {
            self.violation(|| {
                format!("station {station} cancelled seq {seq} with no pending timer")
            });
        }
    }

    pub(crate) fn on_timer_fire(&mut self) {
        self.report.timers_fired += 1;
    }

    pub(crate) fn on_buffer(&mut self, station: usize, occupied: usize, capacity: usize) {
        if occupied > capacity {
            self.violation(|| {
                format!("station {station}: {occupied} slots occupied, capacity {capacity}")
            });
        }
    }

    pub(crate) fn finish(mut self, pending_timers: u64) -> AuditReport {
        self.report.timers_pending_at_end = pending_timers;
        let r = &self.report;
        if r.timers_set != r.timers_cancelled + r.timers_fired + pending_timers {
            let (s, c, f) = (r.timers_set, r.timers_cancelled, r.timers_fired);
            self.violation(|| {
                format!(
                    "timer imbalance: {s} set, {c} cancelled, {f} fired, {pending_timers} pending"
                )
            });
        }
        self.report
    }
}
