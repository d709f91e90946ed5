use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use crate::protocol::{Direction, Frame, Seq, StationId};
use crate::time::SimTime;

use super::KernelFault;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    ArrivalComplete {
        link: usize,
        direction: Direction,
        frame: Frame,
    },
    TransmitComplete {
        station: StationId,
        direction: Direction,
    },
    TimerFire {
        station: StationId,
        seq: Seq,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub time: SimTime,
    /// Insertion counter; breaks ties between equal times.
    pub tiebreak: u64,
    pub kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap.
        (other.time, other.tiebreak).cmp(&(self.time, self.tiebreak))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Future event list ordered by `(time, tiebreak)`.
///
/// Timers are cancelled lazily: the pending map remembers the live timer id
/// for each `(station, seq)` and a fire whose id no longer matches is
/// discarded when popped.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    now: SimTime,
    counter: u64,
    pending_timers: HashMap<(StationId, Seq), u64>,
    stale_cancels: u64,
    suppressed_fires: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn schedule(&mut self, time: SimTime, kind: EventKind) -> Result<u64, KernelFault> {
        if time < self.now {
            return Err(KernelFault::EventInPast {
                time,
                now: self.now,
            });
        }
        let tiebreak = self.counter;
        self.counter += 1;
        self.heap.push(Event {
            time,
            tiebreak,
            kind,
        });
        Ok(tiebreak)
    }

    pub fn schedule_timer(
        &mut self,
        station: StationId,
        seq: Seq,
        time: SimTime,
    ) -> Result<(), KernelFault> {
        if self.pending_timers.contains_key(&(station, seq)) {
            return Err(KernelFault::TimerAlreadyArmed { station, seq });
        }
        let id = self.schedule(time, EventKind::TimerFire { station, seq })?;
        self.pending_timers.insert((station, seq), id);
        Ok(())
    }

    /// Idempotent. Returns whether a pending timer was actually cancelled.
    pub fn cancel_timer(&mut self, station: StationId, seq: Seq) -> bool {
        let cancelled = self.pending_timers.remove(&(station, seq)).is_some();
        if !cancelled {
            self.stale_cancels += 1;
        }
        cancelled
    }

    pub fn timer_pending(&self, station: StationId, seq: Seq) -> bool {
        self.pending_timers.contains_key(&(station, seq))
    }

    pub fn pending_timer_count(&self) -> usize {
        self.pending_timers.len()
    }

    pub fn stale_cancels(&self) -> u64 {
        self.stale_cancels
    }

    pub fn suppressed_fires(&self) -> u64 {
        self.suppressed_fires
    }

    pub fn peek_time(&mut self) -> Option<SimTime> {
        self.skip_cancelled();
        self.heap.peek().map(|e| e.time)
    }

    /// Next live event; advances the clock.
    pub fn pop(&mut self) -> Option<Event> {
        self.skip_cancelled();
        let event = self.heap.pop()?;
        if let EventKind::TimerFire { station, seq } = event.kind {
            self.pending_timers.remove(&(station, seq));
        }
        self.now = event.time;
        Some(event)
    }

    fn skip_cancelled(&mut self) {
        while let Some(top) = self.heap.peek() {
            let live = match top.kind {
                EventKind::TimerFire { station, seq } => {
                    self.pending_timers.get(&(station, seq)) == Some(&top.tiebreak)
                }
                _ => true,
            };
            if live {
                return;
            }
            self.heap.pop();
            self.suppressed_fires += 1;
        }
    }

    pub fn is_empty(&mut self) -> bool {
        self.peek_time().is_none()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(station: StationId) -> EventKind {
        EventKind::TransmitComplete {
            station,
            direction: Direction::Downstream,
        }
    }

    fn t(us: u64) -> SimTime {
        SimTime::from_micros(us)
    }

    #[test]
    fn pops_in_time_order() {
        let mut q = EventQueue::new();
        q.schedule(t(5), tx(0)).unwrap();
        q.schedule(t(3), tx(1)).unwrap();
        assert_eq!(q.pop().unwrap().time, t(3));
        assert_eq!(q.pop().unwrap().time, t(5));
        assert!(q.pop().is_none());
    }

    #[test]
    fn equal_times_pop_in_insertion_order() {
        let mut q = EventQueue::new();
        q.schedule(t(3), tx(7)).unwrap();
        q.schedule(t(3), tx(8)).unwrap();
        q.schedule(t(3), tx(9)).unwrap();
        let order: Vec<_> = std::iter::from_fn(|| q.pop())
            .map(|e| match e.kind {
                EventKind::TransmitComplete { station, .. } => station,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(order, vec![7, 8, 9]);
    }

    #[test]
    fn past_events_are_rejected() {
        let mut q = EventQueue::new();
        q.schedule(t(10), tx(0)).unwrap();
        q.pop();
        assert!(matches!(
            q.schedule(t(9), tx(0)),
            Err(KernelFault::EventInPast { .. })
        ));
        q.schedule(t(10), tx(0)).unwrap();
    }

    #[test]
    fn cancelled_timer_never_fires() {
        let mut q = EventQueue::new();
        q.schedule_timer(1, 4, t(10)).unwrap();
        q.schedule(t(20), tx(0)).unwrap();
        assert!(q.cancel_timer(1, 4));
        let e = q.pop().unwrap();
        assert_eq!(e.time, t(20));
        assert!(q.pop().is_none());
        assert_eq!(q.suppressed_fires(), 1);
    }

    #[test]
    fn cancel_is_idempotent_and_counts_stale() {
        let mut q = EventQueue::new();
        q.schedule_timer(1, 4, t(10)).unwrap();
        assert!(q.cancel_timer(1, 4));
        assert!(!q.cancel_timer(1, 4));
        assert_eq!(q.stale_cancels(), 1);
    }

    #[test]
    fn cancel_after_fire_is_noop() {
        let mut q = EventQueue::new();
        q.schedule_timer(1, 4, t(10)).unwrap();
        assert!(matches!(
            q.pop().unwrap().kind,
            EventKind::TimerFire { station: 1, seq: 4 }
        ));
        assert!(!q.cancel_timer(1, 4));
        assert_eq!(q.stale_cancels(), 1);
    }

    #[test]
    fn rearmed_timer_supersedes_cancelled_one() {
        let mut q = EventQueue::new();
        q.schedule_timer(1, 4, t(10)).unwrap();
        q.cancel_timer(1, 4);
        q.schedule_timer(1, 4, t(30)).unwrap();
        let e = q.pop().unwrap();
        assert_eq!(e.time, t(30));
        assert!(q.pop().is_none());
    }

    #[test]
    fn double_arm_is_fault() {
        let mut q = EventQueue::new();
        q.schedule_timer(1, 4, t(10)).unwrap();
        assert!(q.schedule_timer(1, 4, t(11)).is_err());
    }
}
