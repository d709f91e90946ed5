use rand::{Rng, RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use sha2::{Digest, Sha256};

use crate::analytic::per_hop_loss;
use crate::protocol::{Direction, Frame, FrameKind, Seq, StationId};
use crate::time::SimTime;

use super::queue::{EventKind, EventQueue};
use super::KernelFault;

/// Seeded generator for one named substream.
///
/// The state is a hash of the master seed and a stable label, so a
/// stream's draws never depend on what other streams exist.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: Xoshiro256PlusPlus,
}

impl RandomStream {
    pub fn new(master_seed: u64, label: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(master_seed.to_le_bytes());
        hasher.update(label.as_bytes());
        let seed: [u8; 32] = hasher.finalize().into();
        RandomStream {
            rng: Xoshiro256PlusPlus::from_seed(seed),
        }
    }

    pub fn for_link(master_seed: u64, link: usize, direction: Direction) -> Self {
        let dir = match direction {
            Direction::Downstream => "fwd",
            Direction::Upstream => "rev",
        };
        Self::new(master_seed, &format!("link/{link}/{dir}"))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn next_f64(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// One uniform draw.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// `bits` independent Bernoulli(`p`) draws; true if any fired. Always
    /// consumes exactly `bits` words.
    pub fn any_bit_error(&mut self, p: f64, bits: u64) -> bool {
        let threshold = (p * 18_446_744_073_709_551_616.0) as u64;
        let mut hit = false;
        for _ in 0..bits {
            hit |= self.rng.next_u64() < threshold;
        }
        hit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingMode {
    /// One draw per frame against the frame loss probability.
    #[default]
    Packet,
    /// One draw per bit.
    PerBit,
}

impl SamplingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingMode::Packet => "packet",
            SamplingMode::PerBit => "perbit",
        }
    }
}

impl std::str::FromStr for SamplingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "packet" => Ok(SamplingMode::Packet),
            "perbit" => Ok(SamplingMode::PerBit),
            other => Err(format!(
                "unknown sampling mode {other:?} (expected packet or perbit)"
            )),
        }
    }
}

/// i.i.d. bit-error channel shared by every link.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    pub ber: f64,
    pub mode: SamplingMode,
    /// ACK / NACK frames are never corrupted.
    pub ideal_acks: bool,
    loss_cache: Vec<(u32, f64)>,
}

impl ChannelModel {
    pub fn new(ber: f64, mode: SamplingMode, ideal_acks: bool) -> Self {
        ChannelModel {
            ber,
            mode,
            ideal_acks,
            loss_cache: Vec::new(),
        }
    }

    /// Precompute the frame loss probability for a frame length.
    pub fn with_length(mut self, length: u32) -> Self {
        if !self.loss_cache.iter().any(|&(l, _)| l == length) {
            let w = per_hop_loss(self.ber, length).map_or(1.0, |p| p.value());
            self.loss_cache.push((length, w));
        }
        self
    }

    fn frame_loss(&self, length: u32) -> f64 {
        self.loss_cache
            .iter()
            .find(|&&(l, _)| l == length)
            .map(|&(_, w)| w)
            .unwrap_or_else(|| per_hop_loss(self.ber, length).map_or(1.0, |p| p.value()))
    }

    pub fn sample_corruption(&self, length: u32, rng: &mut RandomStream) -> bool {
        if self.ber == 0.0 {
            return false;
        }
        match self.mode {
            SamplingMode::Packet => rng.bernoulli(self.frame_loss(length)),
            SamplingMode::PerBit => rng.any_bit_error(self.ber, 8 * length as u64),
        }
    }

    fn corrupts(&self, kind: FrameKind) -> bool {
        kind == FrameKind::Data || !self.ideal_acks
    }
}

#[derive(Debug, Clone)]
pub struct LinkDirection {
    /// End of the current (or last) serialization.
    pub busy_until: SimTime,
    pub rng: RandomStream,
    /// `(kind, seq, attempt)` of the frame on the wire.
    pub current: Option<(FrameKind, Seq, u32)>,
    pub frames_sent: u64,
}

/// Full-duplex point-to-point link between stations `index` and `index + 1`.
#[derive(Debug, Clone)]
pub struct Link {
    pub index: usize,
    pub bandwidth: f64,
    pub prop_delay: SimTime,
    pub forward: LinkDirection,
    pub reverse: LinkDirection,
}

impl Link {
    pub fn new(index: usize, bandwidth: f64, prop_delay: SimTime, master_seed: u64) -> Self {
        let dir = |d| LinkDirection {
            busy_until: SimTime::ZERO,
            rng: RandomStream::for_link(master_seed, index, d),
            current: None,
            frames_sent: 0,
        };
        Link {
            index,
            bandwidth,
            prop_delay,
            forward: dir(Direction::Downstream),
            reverse: dir(Direction::Upstream),
        }
    }

    pub fn sender(&self, direction: Direction) -> StationId {
        match direction {
            Direction::Downstream => self.index,
            Direction::Upstream => self.index + 1,
        }
    }

    pub fn receiver(&self, direction: Direction) -> StationId {
        match direction {
            Direction::Downstream => self.index + 1,
            Direction::Upstream => self.index,
        }
    }

    pub fn serialization(&self, length: u32) -> SimTime {
        SimTime::from_secs_f64(8.0 * length as f64 / self.bandwidth)
    }

    pub fn side(&self, direction: Direction) -> &LinkDirection {
        match direction {
            Direction::Downstream => &self.forward,
            Direction::Upstream => &self.reverse,
        }
    }

    fn side_mut(&mut self, direction: Direction) -> &mut LinkDirection {
        match direction {
            Direction::Downstream => &mut self.forward,
            Direction::Upstream => &mut self.reverse,
        }
    }

    /// Put `frame` on the wire at `now`: samples corruption once and
    /// schedules the sender's TransmitComplete and the receiver's
    /// ArrivalComplete (`check_delay` after the last bit lands).
    pub fn transmit(
        &mut self,
        direction: Direction,
        mut frame: Frame,
        now: SimTime,
        channel: &ChannelModel,
        check_delay: SimTime,
        queue: &mut EventQueue,
    ) -> Result<(), KernelFault> {
        let serialization = self.serialization(frame.length);
        let prop = self.prop_delay;
        let sender = self.sender(direction);
        let index = self.index;
        let side = self.side_mut(direction);
        if side.current.is_some() || side.busy_until > now {
            return Err(KernelFault::LinkBusy {
                link: index,
                direction,
                busy_until: side.busy_until,
                now,
            });
        }
        if channel.corrupts(frame.kind) {
            frame.corrupted = channel.sample_corruption(frame.length, &mut side.rng);
        }
        let done = now + serialization;
        side.busy_until = done;
        side.current = Some((frame.kind, frame.seq, frame.attempt));
        side.frames_sent += 1;
        let arrival = done
            + prop
            + if frame.kind == FrameKind::Data {
                check_delay
            } else {
                SimTime::ZERO
            };
        queue.schedule(
            done,
            EventKind::TransmitComplete {
                station: sender,
                direction,
            },
        )?;
        queue.schedule(
            arrival,
            EventKind::ArrivalComplete {
                link: index,
                direction,
                frame,
            },
        )?;
        Ok(())
    }

    /// Frees the direction; returns what was on the wire.
    pub fn finish(&mut self, direction: Direction) -> Option<(FrameKind, Seq, u32)> {
        self.side_mut(direction).current.take()
    }
}
