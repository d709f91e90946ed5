//! Per-station state machine for hop-by-hop ARQ.
//!
//! Each station owns a bounded buffer of frames bound for its downstream
//! neighbour and answers every DATA frame from upstream with an ACK or NACK
//! as soon as it has been received and checked. The transmitter is
//! pipelined: once a frame has been serialized the station moves straight
//! on to the next queued one while the previous frame waits for its
//! acknowledgement. A NACK or an expired timer puts the frame back at the
//! tail of the transmit queue, so it goes out after whatever is already
//! queued.
//!
//! Stations never touch the clock or the channel. Every stimulus appends
//! [`Action`]s to a caller-supplied sink and the simulation kernel carries
//! them out.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::time::SimTime;

pub type Seq = u64;
pub type OriginId = u64;
pub type StationId = usize;

pub const DEFAULT_DUP_WINDOW: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    Data,
    Ack,
    Nack,
}

impl FrameKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameKind::Data => "DATA",
            FrameKind::Ack => "ACK",
            FrameKind::Nack => "NACK",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameKind,
    /// Per-link sequence number. For ACK / NACK, the DATA seq being answered.
    pub seq: Seq,
    /// Bytes on the wire.
    pub length: u32,
    pub corrupted: bool,
    /// Identity assigned at the source; ACK / NACK echo the answered frame's.
    pub origin_id: OriginId,
    /// 1-based attempt index on the current link.
    pub attempt: u32,
}

impl Frame {
    pub fn data(seq: Seq, origin_id: OriginId, length: u32) -> Self {
        Frame {
            kind: FrameKind::Data,
            seq,
            length,
            corrupted: false,
            origin_id,
            attempt: 0,
        }
    }

    fn control(kind: FrameKind, answering: &Frame, length: u32) -> Self {
        Frame {
            kind,
            seq: answering.seq,
            length,
            corrupted: false,
            origin_id: answering.origin_id,
            attempt: answering.attempt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotState {
    Queued,
    InFlight,
    AwaitingAck,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferSlot {
    pub frame: Frame,
    pub state: SlotState,
    pub attempts_used: u32,
    /// Fire time of the pending acknowledgement timer.
    pub timer: Option<SimTime>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Src,
    Relay,
    Dst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// DATA towards DST.
    Downstream,
    /// ACK / NACK back towards SRC.
    Upstream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DropReason {
    RetxLimit,
    BufferOverflow,
    Duplicate,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::RetxLimit => "RETX_LIMIT",
            DropReason::BufferOverflow => "BUFFER_OVERFLOW",
            DropReason::Duplicate => "DUPLICATE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    StartTransmit {
        frame: Frame,
        direction: Direction,
    },
    SetTimer {
        seq: Seq,
        fire_at: SimTime,
    },
    CancelTimer {
        seq: Seq,
    },
    DeliverToApp {
        origin_id: OriginId,
        at: SimTime,
    },
    Drop {
        origin_id: OriginId,
        reason: DropReason,
    },
    /// The station now holds a buffered copy of `origin_id`.
    Stored {
        origin_id: OriginId,
    },
    /// The station handed its copy on (ACK received) and freed the slot.
    Released {
        origin_id: OriginId,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolFault {
    #[error("station {station}: transmit complete on {direction:?} with nothing in flight")]
    NothingInFlight {
        station: StationId,
        direction: Direction,
    },
    #[error("station {station}: timeout for seq {seq} which has no armed timer")]
    TimeoutWithoutTimer { station: StationId, seq: Seq },
    #[error("station {station} ({role:?}) cannot accept a {kind:?} frame")]
    UnexpectedFrame {
        station: StationId,
        role: Role,
        kind: FrameKind,
    },
    #[error("station {station} is not a source")]
    NotSource { station: StationId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StationConfig {
    /// Buffer slots (queued + in flight + awaiting ACK).
    pub capacity: usize,
    pub max_transmissions: u32,
    pub ack_timeout: SimTime,
    pub packet_len: u32,
    pub ack_len: u32,
    pub dup_window: usize,
    /// Packets a source generates before going quiet; `None` saturates forever.
    pub src_budget: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StationCounters {
    pub generated: u64,
    pub transmissions: u64,
    pub retransmissions: u64,
    pub acks_sent: u64,
    pub nacks_sent: u64,
    pub stale_acks: u64,
    pub corrupted_controls: u64,
    pub dropped_retx_limit: u64,
    pub overflow_rejections: u64,
    pub duplicates: u64,
}

/// Receiver-side record of upstream sequence numbers already accepted.
///
/// Anything more than `size` below the highest seq seen is reported as
/// already seen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DupWindow {
    size: usize,
    highest: Option<Seq>,
    seen: BTreeSet<Seq>,
}

impl DupWindow {
    pub fn new(size: usize) -> Self {
        DupWindow {
            size: size.max(1),
            highest: None,
            seen: BTreeSet::new(),
        }
    }

    fn floor(&self) -> Option<Seq> {
        self.highest.map(|h| h.saturating_sub(self.size as Seq - 1))
    }

    pub fn contains(&self, seq: Seq) -> bool {
        match self.floor() {
            Some(floor) if seq < floor => true,
            _ => self.seen.contains(&seq),
        }
    }

    pub fn insert(&mut self, seq: Seq) {
        self.seen.insert(seq);
        if self.highest.is_none_or(|h| seq > h) {
            self.highest = Some(seq);
            if let Some(floor) = self.floor() {
                while let Some(&low) = self.seen.first() {
                    if low >= floor {
                        break;
                    }
                    self.seen.pop_first();
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Station {
    id: StationId,
    role: Role,
    config: StationConfig,
    slots: BTreeMap<Seq, BufferSlot>,
    queue: VecDeque<Seq>,
    in_flight: Option<Seq>,
    next_seq: Seq,
    next_origin: OriginId,
    dup: DupWindow,
    control_queue: VecDeque<Frame>,
    control_busy: bool,
    counters: StationCounters,
}

impl Station {
    pub fn new(id: StationId, role: Role, config: StationConfig) -> Self {
        let dup = DupWindow::new(config.dup_window);
        Station {
            id,
            role,
            config,
            slots: BTreeMap::new(),
            queue: VecDeque::new(),
            in_flight: None,
            next_seq: 0,
            next_origin: 0,
            dup,
            control_queue: VecDeque::new(),
            control_busy: false,
            counters: StationCounters::default(),
        }
    }

    pub fn id(&self) -> StationId {
        self.id
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn config(&self) -> &StationConfig {
        &self.config
    }

    pub fn counters(&self) -> &StationCounters {
        &self.counters
    }

    pub fn occupied(&self) -> usize {
        self.slots.len()
    }

    pub fn slot(&self, seq: Seq) -> Option<&BufferSlot> {
        self.slots.get(&seq)
    }

    pub fn slots(&self) -> impl Iterator<Item = &BufferSlot> {
        self.slots.values()
    }

    pub fn in_flight(&self) -> Option<Seq> {
        self.in_flight
    }

    pub fn queued(&self) -> impl Iterator<Item = Seq> + '_ {
        self.queue.iter().copied()
    }

    pub fn dup_window(&self) -> &DupWindow {
        &self.dup
    }

    /// A fully received frame from a neighbour.
    pub fn on_frame_arrival(
        &mut self,
        frame: Frame,
        now: SimTime,
        out: &mut Vec<Action>,
    ) -> Result<(), ProtocolFault> {
        match (frame.kind, self.role) {
            (FrameKind::Data, Role::Relay | Role::Dst) => self.receive_data(frame, now, out),
            (FrameKind::Ack | FrameKind::Nack, Role::Src | Role::Relay) => {
                self.receive_control(frame, now, out);
            }
            (kind, role) => {
                return Err(ProtocolFault::UnexpectedFrame {
                    station: self.id,
                    role,
                    kind,
                })
            }
        }
        Ok(())
    }

    fn receive_data(&mut self, frame: Frame, now: SimTime, out: &mut Vec<Action>) {
        if frame.corrupted {
            self.send_control(FrameKind::Nack, &frame, out);
            return;
        }
        if self.dup.contains(frame.seq) {
            self.counters.duplicates += 1;
            self.send_control(FrameKind::Ack, &frame, out);
            out.push(Action::Drop {
                origin_id: frame.origin_id,
                reason: DropReason::Duplicate,
            });
            return;
        }
        match self.role {
            Role::Dst => {
                self.dup.insert(frame.seq);
                self.send_control(FrameKind::Ack, &frame, out);
                out.push(Action::DeliverToApp {
                    origin_id: frame.origin_id,
                    at: now,
                });
            }
            _ => {
                if self.admit_to_buffer(&frame) {
                    self.dup.insert(frame.seq);
                    self.send_control(FrameKind::Ack, &frame, out);
                    out.push(Action::Stored {
                        origin_id: frame.origin_id,
                    });
                    self.try_start(out);
                } else {
                    // Silent: the sender retries when its timer expires.
                    self.counters.overflow_rejections += 1;
                    out.push(Action::Drop {
                        origin_id: frame.origin_id,
                        reason: DropReason::BufferOverflow,
                    });
                }
            }
        }
    }

    fn receive_control(&mut self, frame: Frame, now: SimTime, out: &mut Vec<Action>) {
        if frame.corrupted {
            self.counters.corrupted_controls += 1;
            return;
        }
        let seq = frame.seq;
        let awaiting = matches!(
            self.slots.get(&seq),
            Some(slot) if slot.state == SlotState::AwaitingAck
        );
        if !awaiting {
            self.counters.stale_acks += 1;
            return;
        }
        out.push(Action::CancelTimer { seq });
        match frame.kind {
            FrameKind::Ack => {
                let slot = self.slots.remove(&seq).expect("slot checked above");
                out.push(Action::Released {
                    origin_id: slot.frame.origin_id,
                });
            }
            _ => {
                let exhausted = {
                    let slot = self.slots.get_mut(&seq).expect("slot checked above");
                    slot.timer = None;
                    slot.attempts_used >= self.config.max_transmissions
                };
                if exhausted {
                    self.drop_exhausted(seq, out);
                } else {
                    self.requeue(seq);
                }
            }
        }
        self.try_start(out);
        self.refill(now, out);
    }

    /// The transmitter in `direction` finished serializing its frame.
    pub fn on_transmit_complete(
        &mut self,
        direction: Direction,
        now: SimTime,
        out: &mut Vec<Action>,
    ) -> Result<(), ProtocolFault> {
        match direction {
            Direction::Upstream => {
                if !self.control_busy {
                    return Err(ProtocolFault::NothingInFlight {
                        station: self.id,
                        direction,
                    });
                }
                match self.control_queue.pop_front() {
                    Some(frame) => out.push(Action::StartTransmit {
                        frame,
                        direction: Direction::Upstream,
                    }),
                    None => self.control_busy = false,
                }
            }
            Direction::Downstream => {
                let seq = self
                    .in_flight
                    .take()
                    .ok_or(ProtocolFault::NothingInFlight {
                        station: self.id,
                        direction,
                    })?;
                let fire_at = now + self.config.ack_timeout;
                let slot = self
                    .slots
                    .get_mut(&seq)
                    .expect("in-flight seq always has a slot");
                slot.state = SlotState::AwaitingAck;
                slot.timer = Some(fire_at);
                out.push(Action::SetTimer { seq, fire_at });
                self.try_start(out);
            }
        }
        Ok(())
    }

    /// The acknowledgement timer for `seq` expired.
    pub fn on_timeout(
        &mut self,
        seq: Seq,
        now: SimTime,
        out: &mut Vec<Action>,
    ) -> Result<(), ProtocolFault> {
        let slot = match self.slots.get_mut(&seq) {
            Some(slot) if slot.state == SlotState::AwaitingAck && slot.timer.is_some() => slot,
            _ => {
                return Err(ProtocolFault::TimeoutWithoutTimer {
                    station: self.id,
                    seq,
                })
            }
        };
        slot.timer = None;
        if slot.attempts_used < self.config.max_transmissions {
            self.requeue(seq);
        } else {
            self.drop_exhausted(seq, out);
        }
        self.try_start(out);
        self.refill(now, out);
        Ok(())
    }

    /// Fill every free source slot with a fresh frame and start sending.
    pub fn src_offer(&mut self, now: SimTime, out: &mut Vec<Action>) -> Result<(), ProtocolFault> {
        if self.role != Role::Src {
            return Err(ProtocolFault::NotSource { station: self.id });
        }
        self.refill(now, out);
        Ok(())
    }

    /// Buffer a clean, previously unseen DATA frame for forwarding under a
    /// fresh downstream seq. Returns `false` when every slot is taken.
    pub fn admit_to_buffer(&mut self, frame: &Frame) -> bool {
        if self.slots.len() >= self.config.capacity {
            return false;
        }
        let seq = self.take_seq();
        self.slots.insert(
            seq,
            BufferSlot {
                frame: Frame::data(seq, frame.origin_id, self.config.packet_len),
                state: SlotState::Queued,
                attempts_used: 0,
                timer: None,
            },
        );
        self.queue.push_back(seq);
        true
    }

    fn refill(&mut self, _now: SimTime, out: &mut Vec<Action>) {
        if self.role != Role::Src {
            return;
        }
        while self.slots.len() < self.config.capacity
            && self
                .config
                .src_budget
                .is_none_or(|budget| self.counters.generated < budget)
        {
            let origin_id = self.next_origin;
            self.next_origin += 1;
            self.counters.generated += 1;
            let seq = self.take_seq();
            self.slots.insert(
                seq,
                BufferSlot {
                    frame: Frame::data(seq, origin_id, self.config.packet_len),
                    state: SlotState::Queued,
                    attempts_used: 0,
                    timer: None,
                },
            );
            self.queue.push_back(seq);
            out.push(Action::Stored { origin_id });
        }
        self.try_start(out);
    }

    fn take_seq(&mut self) -> Seq {
        let seq = self.next_seq;
        self.next_seq += 1;
        seq
    }

    fn requeue(&mut self, seq: Seq) {
        if let Some(slot) = self.slots.get_mut(&seq) {
            slot.state = SlotState::Queued;
            self.queue.push_back(seq);
        }
    }

    fn drop_exhausted(&mut self, seq: Seq, out: &mut Vec<Action>) {
        if let Some(slot) = self.slots.remove(&seq) {
            self.counters.dropped_retx_limit += 1;
            out.push(Action::Drop {
                origin_id: slot.frame.origin_id,
                reason: DropReason::RetxLimit,
            });
        }
    }

    fn try_start(&mut self, out: &mut Vec<Action>) {
        if self.in_flight.is_some() {
            return;
        }
        let Some(seq) = self.queue.pop_front() else {
            return;
        };
        let slot = self
            .slots
            .get_mut(&seq)
            .expect("queued seq always has a slot");
        slot.state = SlotState::InFlight;
        slot.attempts_used += 1;
        slot.frame.attempt = slot.attempts_used;
        self.counters.transmissions += 1;
        if slot.attempts_used > 1 {
            self.counters.retransmissions += 1;
        }
        self.in_flight = Some(seq);
        out.push(Action::StartTransmit {
            frame: slot.frame.clone(),
            direction: Direction::Downstream,
        });
    }

    fn send_control(&mut self, kind: FrameKind, answering: &Frame, out: &mut Vec<Action>) {
        match kind {
            FrameKind::Ack => self.counters.acks_sent += 1,
            _ => self.counters.nacks_sent += 1,
        }
        let frame = Frame::control(kind, answering, self.config.ack_len);
        if self.control_busy {
            self.control_queue.push_back(frame);
        } else {
            self.control_busy = true;
            out.push(Action::StartTransmit {
                frame,
                direction: Direction::Upstream,
            });
        }
    }
}
