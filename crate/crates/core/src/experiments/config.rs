use thiserror::Error;

use crate::analytic::{self, LinkParams, PathParams};
use crate::protocol::DEFAULT_DUP_WINDOW;
use crate::simkernel::SamplingMode;

/// Default SRC packet budget for reproduction runs.
pub const DEFAULT_STOP_PACKETS: u64 = 50_000;
pub const DEFAULT_BUFFER_SLOTS: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid `{key}`: {message}")]
pub struct ConfigError {
    /// Config-file key the problem belongs to.
    pub key: &'static str,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: &'static str, message: impl Into<String>) -> Self {
        ConfigError {
            key,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// SRC generates this many packets; the run ends once the network drains.
    SrcPackets(u64),
    /// SRC saturates forever; the run ends at this virtual time.
    SimSeconds(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WarmupPolicy {
    /// Measure utilization from the first DST delivery on.
    #[default]
    FirstDelivery,
    /// Measure from t = 0.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub link: LinkParams,
    pub path: PathParams,
    /// Slots per relay; the source gets `max(buffer_slots, 1)`.
    pub buffer_slots: usize,
    pub seed: u64,
    pub stop: StopRule,
    pub sampling: SamplingMode,
    pub ideal_acks: bool,
    /// Seconds between the last bit of a DATA frame and its ACK / NACK.
    pub check_delay: f64,
    /// Overrides `2 * prop_delay` in the timeout formula.
    pub rtt: Option<f64>,
    /// Overrides `8 * ack_len / bandwidth` in the timeout formula.
    pub t_ack: Option<f64>,
    pub dup_window: usize,
    pub warmup: WarmupPolicy,
}

impl ScenarioConfig {
    /// Reproduction defaults with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        ScenarioConfig {
            link: LinkParams::default(),
            path: PathParams::default(),
            buffer_slots: DEFAULT_BUFFER_SLOTS,
            seed,
            stop: StopRule::SrcPackets(DEFAULT_STOP_PACKETS),
            sampling: SamplingMode::Packet,
            ideal_acks: false,
            check_delay: 0.0,
            rtt: None,
            t_ack: None,
            dup_window: DEFAULT_DUP_WINDOW,
            warmup: WarmupPolicy::FirstDelivery,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let l = &self.link;
        if !(0.0..1.0).contains(&l.ber) {
            return Err(ConfigError::new(
                "ber",
                format!("{} is not in [0, 1)", l.ber),
            ));
        }
        if l.packet_len < 1 {
            return Err(ConfigError::new("packet_len", "must be at least 1 byte"));
        }
        if l.ack_len < 1 {
            return Err(ConfigError::new("ack_len", "must be at least 1 byte"));
        }
        if !(l.bandwidth > 0.0 && l.bandwidth.is_finite()) {
            return Err(ConfigError::new(
                "bandwidth_bps",
                format!("{} is not positive", l.bandwidth),
            ));
        }
        if !(l.prop_delay >= 0.0 && l.prop_delay.is_finite()) {
            return Err(ConfigError::new(
                "prop_delay_s",
                format!("{} is negative", l.prop_delay),
            ));
        }
        if self.path.max_transmissions < 1 {
            return Err(ConfigError::new("max_transmissions", "must be at least 1"));
        }
        if !(self.check_delay >= 0.0 && self.check_delay.is_finite()) {
            return Err(ConfigError::new(
                "check_delay_s",
                format!("{} is negative", self.check_delay),
            ));
        }
        match self.stop {
            StopRule::SrcPackets(0) => {
                return Err(ConfigError::new("stop_packets", "must be positive"));
            }
            StopRule::SimSeconds(s) if !(s > 0.0 && s.is_finite()) => {
                return Err(ConfigError::new(
                    "stop_seconds",
                    format!("{s} is not positive"),
                ));
            }
            _ => {}
        }
        if let Some(rtt) = self.rtt {
            if !(rtt >= 0.0) {
                return Err(ConfigError::new("rtt_s", format!("{rtt} is negative")));
            }
        }
        if let Some(t) = self.t_ack {
            if !(t >= 0.0) {
                return Err(ConfigError::new("t_ack_s", format!("{t} is negative")));
            }
        }
        if self.dup_window == 0 {
            return Err(ConfigError::new("dup_window", "must be positive"));
        }
        Ok(())
    }

    pub fn rtt(&self) -> f64 {
        self.rtt.unwrap_or_else(|| self.link.rtt())
    }

    pub fn t_ack(&self) -> f64 {
        self.t_ack.unwrap_or_else(|| self.link.ack_time())
    }

    /// Acknowledgement timeout in seconds.
    pub fn ack_timeout(&self) -> f64 {
        analytic::ack_timeout(self.rtt(), self.t_ack()).unwrap_or(0.0)
    }

    /// `key=value` pairs describing every field, for CSV metadata lines.
    pub fn describe(&self) -> Vec<(&'static str, String)> {
        let l = &self.link;
        let mut v = vec![
            ("ber", format!("{:e}", l.ber)),
            ("packet_len", l.packet_len.to_string()),
            ("ack_len", l.ack_len.to_string()),
            ("bandwidth_bps", format!("{}", l.bandwidth)),
            ("prop_delay_s", format!("{:e}", l.prop_delay)),
            ("relays", self.path.num_relays.to_string()),
            ("max_transmissions", self.path.max_transmissions.to_string()),
            ("buffer_slots", self.buffer_slots.to_string()),
            ("seed", self.seed.to_string()),
        ];
        match self.stop {
            StopRule::SrcPackets(k) => v.push(("stop_packets", k.to_string())),
            StopRule::SimSeconds(s) => v.push(("stop_seconds", format!("{s}"))),
        }
        v.push(("sampling_mode", self.sampling.as_str().to_string()));
        v.push(("ideal_acks", self.ideal_acks.to_string()));
        v.push(("check_delay_s", format!("{:e}", self.check_delay)));
        v.push(("rtt_s", format!("{:e}", self.rtt())));
        v.push(("t_ack_s", format!("{:e}", self.t_ack())));
        v.push(("ack_timeout_s", format!("{:e}", self.ack_timeout())));
        v.push(("dup_window", self.dup_window.to_string()));
        v.push((
            "warmup",
            match self.warmup {
                WarmupPolicy::FirstDelivery => "first_delivery",
                WarmupPolicy::None => "none",
            }
            .to_string(),
        ));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = ScenarioConfig::with_seed(1);
        c.validate().unwrap();
        // 2 * 2us + 3 * 6.4us
        assert!((c.ack_timeout() - 23.2e-6).abs() < 1e-15);
    }

    #[test]
    fn validation_names_the_key() {
        let mut c = ScenarioConfig::with_seed(1);
        c.link.ber = 1.5;
        assert_eq!(c.validate().unwrap_err().key, "ber");
        let mut c = ScenarioConfig::with_seed(1);
        c.path.max_transmissions = 0;
        assert_eq!(c.validate().unwrap_err().key, "max_transmissions");
        let mut c = ScenarioConfig::with_seed(1);
        c.stop = StopRule::SimSeconds(-1.0);
        assert_eq!(c.validate().unwrap_err().key, "stop_seconds");
    }

    #[test]
    fn overrides_feed_timeout() {
        let mut c = ScenarioConfig::with_seed(1);
        c.rtt = Some(0.010);
        c.t_ack = Some(0.001);
        assert!((c.ack_timeout() - 0.023).abs() < 1e-15);
    }
}
