//! Deterministic discrete-event kernel for a linear relay chain.
//!
//! A world is SRC, `N` relays and DST joined by `N + 1` full-duplex links.
//! Events are processed in `(time, insertion)` order, every link direction
//! draws corruption from its own seeded substream, and protocol actions are
//! turned into events here. Same seed and config give the same trace.

mod audit;
mod channel;
mod queue;
mod trace;

use std::io::{self, Write};

use thiserror::Error;

use crate::experiments::{ConfigError, ScenarioConfig, StopRule};
use crate::protocol::{
    Action, Direction, DropReason, FrameKind, OriginId, ProtocolFault, Role, Seq, Station,
    StationConfig, StationId,
};
use crate::time::SimTime;

pub use audit::{Audit, AuditReport};
pub use channel::{ChannelModel, Link, LinkDirection, RandomStream, SamplingMode};
pub use queue::{Event, EventKind, EventQueue};
pub use trace::TraceSink;

#[derive(Debug, Error)]
pub enum KernelFault {
    #[error("event scheduled at {time}, before the clock at {now}")]
    EventInPast { time: SimTime, now: SimTime },
    #[error("link {link} {direction:?} busy until {busy_until}, transmit requested at {now}")]
    LinkBusy {
        link: usize,
        direction: Direction,
        busy_until: SimTime,
        now: SimTime,
    },
    #[error("station {station} armed a second timer for seq {seq}")]
    TimerAlreadyArmed { station: StationId, seq: Seq },
    #[error("no station {station} on the {direction:?} side")]
    NoLink {
        station: StationId,
        direction: Direction,
    },
    #[error("event queue drained at {at} while the source was still saturating")]
    Livelock { at: SimTime },
    #[error(transparent)]
    Protocol(#[from] ProtocolFault),
    #[error("trace output: {0}")]
    Trace(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation fault: {0}")]
    Kernel(#[from] KernelFault),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stop {
    /// Until no events remain. Needs a finite SRC budget.
    Drained,
    AtTime(SimTime),
    AfterDeliveries(u64),
}

#[derive(Debug, Clone, Copy, Default)]
struct PacketTrack {
    first_tx: Option<SimTime>,
    copies: u32,
    delivered: bool,
    /// The most recent arrival was turned away by a full buffer.
    overflow_last: bool,
}

/// Raw tallies from one run; see `experiments::Metrics` for derived values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutcome {
    pub generated: u64,
    pub delivered_unique: u64,
    pub duplicates_suppressed: u64,
    /// Permanently lost packets whose final failure was corruption or lost control frames.
    pub dropped_retx_limit: u64,
    /// Permanently lost packets whose final attempt was refused by a full buffer.
    pub dropped_buffer_overflow: u64,
    pub in_flight_at_end: u64,
    /// DATA frames put on any link, retransmissions included.
    pub total_transmissions: u64,
    pub retransmissions: u64,
    /// Per-hop entries: first attempts of a DATA frame on some link.
    pub link_entries: u64,
    /// Frames discarded by a sender after its last attempt (per hop, not per packet).
    pub retx_limit_events: u64,
    pub overflow_rejections: u64,
    pub stale_acks: u64,
    pub stale_cancels: u64,
    pub events_processed: u64,
    pub end_time: SimTime,
    /// Whether the run ended by `Stop::AtTime`.
    pub stopped_at_time: bool,
    /// DST delivery times, in delivery order.
    pub delivery_times: Vec<SimTime>,
    /// Delivery minus first departure from SRC, per delivered packet.
    pub latencies: Vec<SimTime>,
}

impl RunOutcome {
    pub fn first_delivery(&self) -> Option<SimTime> {
        self.delivery_times.first().copied()
    }

    pub fn permanently_lost(&self) -> u64 {
        self.dropped_retx_limit + self.dropped_buffer_overflow
    }
}

/// A full simulation: stations, links, channel and event queue.
#[derive(Debug)]
pub struct World {
    stations: Vec<Station>,
    links: Vec<Link>,
    queue: EventQueue,
    channel: ChannelModel,
    check_delay: SimTime,
    packets: Vec<PacketTrack>,
    out: RunOutcome,
    trace: Option<TraceSink>,
    audit: Option<Audit>,
    scratch: Vec<Action>,
    started: bool,
}

impl World {
    pub fn new(config: &ScenarioConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let path = config.path;
        let link = config.link;
        let timeout = SimTime::from_secs_f64(config.ack_timeout());
        let budget = match config.stop {
            StopRule::SrcPackets(k) => Some(k),
            StopRule::SimSeconds(_) => None,
        };
        let num_stations = path.num_relays as usize + 2;
        let stations = (0..num_stations)
            .map(|id| {
                let role = match id {
                    0 => Role::Src,
                    i if i == num_stations - 1 => Role::Dst,
                    _ => Role::Relay,
                };
                let capacity = match role {
                    Role::Src => config.buffer_slots.max(1),
                    Role::Relay => config.buffer_slots,
                    Role::Dst => 0,
                };
                Station::new(
                    id,
                    role,
                    StationConfig {
                        capacity,
                        max_transmissions: path.max_transmissions,
                        ack_timeout: timeout,
                        packet_len: link.packet_len,
                        ack_len: link.ack_len,
                        dup_window: config.dup_window,
                        src_budget: if role == Role::Src { budget } else { None },
                    },
                )
            })
            .collect();
        let prop = SimTime::from_secs_f64(link.prop_delay);
        let links = (0..num_stations - 1)
            .map(|i| Link::new(i, link.bandwidth, prop, config.seed))
            .collect();
        let channel = ChannelModel::new(link.ber, config.sampling, config.ideal_acks)
            .with_length(link.packet_len)
            .with_length(link.ack_len);
        Ok(World {
            stations,
            links,
            queue: EventQueue::new(),
            channel,
            check_delay: SimTime::from_secs_f64(config.check_delay),
            packets: Vec::new(),
            out: RunOutcome::default(),
            trace: None,
            audit: None,
            scratch: Vec::new(),
            started: false,
        })
    }

    pub fn set_trace(&mut self, out: Box<dyn Write + Send>) {
        self.trace = Some(TraceSink::new(out));
    }

    pub fn enable_audit(&mut self) {
        let n = self.stations[0].config().max_transmissions;
        self.audit = Some(Audit::new(n));
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    /// Process events until `stop`, then hand back the tallies and, if
    /// enabled, the audit report.
    pub fn run(mut self, stop: Stop) -> Result<(RunOutcome, Option<AuditReport>), KernelFault> {
        self.start()?;
        loop {
            if let Stop::AtTime(limit) = stop {
                match self.queue.peek_time() {
                    Some(t) if t <= limit => {}
                    Some(_) => {
                        self.out.end_time = limit;
                        self.out.stopped_at_time = true;
                        break;
                    }
                    None => {
                        let at = self.queue.now();
                        return Err(KernelFault::Livelock { at });
                    }
                }
            }
            let Some(event) = self.queue.pop() else {
                self.out.end_time = self.queue.now();
                break;
            };
            self.step(event)?;
            if let Stop::AfterDeliveries(k) = stop {
                if self.out.delivered_unique >= k {
                    self.out.end_time = self.queue.now();
                    break;
                }
            }
        }
        self.finish()
    }

    fn start(&mut self) -> Result<(), KernelFault> {
        if self.started {
            return Ok(());
        }
        self.started = true;
        let mut actions = std::mem::take(&mut self.scratch);
        self.stations[0].src_offer(SimTime::ZERO, &mut actions)?;
        self.execute(0, &mut actions)?;
        self.scratch = actions;
        Ok(())
    }

    fn step(&mut self, event: Event) -> Result<(), KernelFault> {
        let now = event.time;
        self.out.events_processed += 1;
        if let Some(audit) = &mut self.audit {
            audit.on_event(now);
        }
        let mut actions = std::mem::take(&mut self.scratch);
        let station = match event.kind {
            EventKind::ArrivalComplete {
                link,
                direction,
                frame,
            } => {
                let station = self.links[link].receiver(direction);
                if let Some(trace) = &mut self.trace {
                    let detail = format!(
                        "{} {} origin={}",
                        frame.kind.as_str(),
                        if frame.corrupted { "corrupt" } else { "ok" },
                        frame.origin_id
                    );
                    trace.record(now, station, "arrival", frame.seq, frame.attempt, &detail)?;
                }
                self.stations[station].on_frame_arrival(frame, now, &mut actions)?;
                station
            }
            EventKind::TransmitComplete { station, direction } => {
                let link = self.link_index(station, direction)?;
                let finished = self.links[link].finish(direction);
                if let (Some(trace), Some((kind, seq, attempt))) = (&mut self.trace, finished) {
                    let dir = match direction {
                        Direction::Downstream => "down",
                        Direction::Upstream => "up",
                    };
                    trace.record(
                        now,
                        station,
                        "tx_complete",
                        seq,
                        attempt,
                        &format!("{} {dir}", kind.as_str()),
                    )?;
                }
                self.stations[station].on_transmit_complete(direction, now, &mut actions)?;
                station
            }
            EventKind::TimerFire { station, seq } => {
                if let Some(audit) = &mut self.audit {
                    audit.on_timer_fire();
                }
                if let Some(trace) = &mut self.trace {
                    let attempt = self.stations[station]
                        .slot(seq)
                        .map_or(0, |s| s.attempts_used);
                    trace.record(now, station, "timeout", seq, attempt, "")?;
                }
                self.stations[station].on_timeout(seq, now, &mut actions)?;
                station
            }
        };
        self.execute(station, &mut actions)?;
        self.scratch = actions;
        if let Some(audit) = &mut self.audit {
            let st = &self.stations[station];
            audit.on_buffer(station, st.occupied(), st.config().capacity);
        }
        Ok(())
    }

    fn link_index(&self, station: StationId, direction: Direction) -> Result<usize, KernelFault> {
        let idx = match direction {
            Direction::Downstream => Some(station),
            Direction::Upstream => station.checked_sub(1),
        };
        idx.filter(|&i| i < self.links.len())
            .ok_or(KernelFault::NoLink { station, direction })
    }

    fn track(&mut self, origin: OriginId) -> &mut PacketTrack {
        let idx = origin as usize;
        if idx >= self.packets.len() {
            self.packets.resize(idx + 1, PacketTrack::default());
        }
        &mut self.packets[idx]
    }

    fn execute(
        &mut self,
        station: StationId,
        actions: &mut Vec<Action>,
    ) -> Result<(), KernelFault> {
        let now = self.queue.now();
        for action in actions.drain(..) {
            match action {
                Action::StartTransmit { frame, direction } => {
                    let link = self.link_index(station, direction)?;
                    match frame.kind {
                        FrameKind::Data => {
                            self.out.total_transmissions += 1;
                            if frame.attempt == 1 {
                                self.out.link_entries += 1;
                            } else {
                                self.out.retransmissions += 1;
                            }
                            if station == 0 {
                                let track = self.track(frame.origin_id);
                                track.first_tx.get_or_insert(now);
                            }
                            if let Some(audit) = &mut self.audit {
                                audit.on_data_transmit(link, frame.seq);
                            }
                        }
                        FrameKind::Ack | FrameKind::Nack => {
                            // The receiver answered, so this arrival was not refused.
                            self.track(frame.origin_id).overflow_last = false;
                        }
                    }
                    self.links[link].transmit(
                        direction,
                        frame,
                        now,
                        &self.channel,
                        self.check_delay,
                        &mut self.queue,
                    )?;
                }
                Action::SetTimer { seq, fire_at } => {
                    self.queue.schedule_timer(station, seq, fire_at)?;
                    if let Some(audit) = &mut self.audit {
                        audit.on_timer_set();
                    }
                }
                Action::CancelTimer { seq } => {
                    let effective = self.queue.cancel_timer(station, seq);
                    if let Some(audit) = &mut self.audit {
                        audit.on_timer_cancel(effective, station, seq);
                    }
                }
                Action::DeliverToApp { origin_id, at } => {
                    if let Some(audit) = &mut self.audit {
                        audit.on_delivery(origin_id);
                    }
                    let track = self.track(origin_id);
                    if !track.delivered {
                        track.delivered = true;
                        let first_tx = track.first_tx;
                        self.out.delivered_unique += 1;
                        self.out.delivery_times.push(at);
                        if let Some(t0) = first_tx {
                            self.out.latencies.push(at - t0);
                        }
                    }
                }
                Action::Drop { origin_id, reason } => match reason {
                    DropReason::Duplicate => self.out.duplicates_suppressed += 1,
                    DropReason::BufferOverflow => {
                        self.out.overflow_rejections += 1;
                        self.track(origin_id).overflow_last = true;
                    }
                    DropReason::RetxLimit => {
                        self.out.retx_limit_events += 1;
                        let track = self.track(origin_id);
                        let held = track.copies > 0;
                        track.copies = track.copies.saturating_sub(1);
                        if !held {
                            if let Some(audit) = &mut self.audit {
                                audit.violation(|| {
                                    format!("origin {origin_id} dropped with no copy held")
                                });
                            }
                        }
                    }
                },
                Action::Stored { origin_id } => {
                    let track = self.track(origin_id);
                    track.copies += 1;
                    track.overflow_last = false;
                    if station == 0 {
                        self.out.generated += 1;
                    }
                }
                Action::Released { origin_id } => {
                    // A duplicate's ACK can release the last copy of a packet
                    // already lost further down, so reaching zero here is legal.
                    let track = self.track(origin_id);
                    track.copies = track.copies.saturating_sub(1);
                }
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<(RunOutcome, Option<AuditReport>), KernelFault> {
        if let Some(trace) = &mut self.trace {
            trace.flush()?;
        }
        let mut out = self.out;
        for p in &self.packets {
            if p.delivered {
                continue;
            }
            if p.copies > 0 {
                out.in_flight_at_end += 1;
            } else if p.overflow_last {
                out.dropped_buffer_overflow += 1;
            } else {
                out.dropped_retx_limit += 1;
            }
        }
        for st in &self.stations {
            out.stale_acks += st.counters().stale_acks;
        }
        out.stale_cancels = self.queue.stale_cancels();

        let report = self.audit.take().map(|mut audit| {
            let src_generated = self.stations[0].counters().generated;
            if src_generated != out.generated || self.packets.len() as u64 != out.generated {
                let (a, b, c) = (src_generated, out.generated, self.packets.len());
                audit.violation(|| {
                    format!("generated mismatch: source {a}, stored {b}, tracked {c}")
                });
            }
            let accounted = out.delivered_unique
                + out.dropped_retx_limit
                + out.dropped_buffer_overflow
                + out.in_flight_at_end;
            if accounted != out.generated {
                let g = out.generated;
                audit.violation(|| format!("conservation: generated {g}, accounted {accounted}"));
            }
            // In-flight count from the ledger must match what the buffers hold.
            let mut held = std::collections::BTreeSet::new();
            for st in &self.stations {
                for slot in st.slots() {
                    if !self.packets[slot.frame.origin_id as usize].delivered {
                        held.insert(slot.frame.origin_id);
                    }
                }
            }
            if held.len() as u64 != out.in_flight_at_end {
                let (h, f) = (held.len(), out.in_flight_at_end);
                audit
                    .violation(|| format!("in-flight mismatch: buffers hold {h}, ledger says {f}"));
            }
            for st in &self.stations {
                if st.occupied() > st.config().capacity {
                    let id = st.id();
                    audit.violation(|| format!("station {id} over capacity at end"));
                }
            }
            audit.finish(self.queue.pending_timer_count() as u64)
        });
        Ok((out, report))
    }
}
