//! Scenario runs, parameter sweeps and Monte-Carlo checks against the
//! closed-form models.

mod config;
pub mod csv_out;

use std::io::Write;

use rayon::prelude::*;

use crate::analytic::{self, AnalyticError, Probability};
use crate::simkernel::{AuditReport, RunOutcome, SimError, Stop, World};
use crate::time::SimTime;

pub use config::{
    ConfigError, ScenarioConfig, StopRule, WarmupPolicy, DEFAULT_BUFFER_SLOTS, DEFAULT_STOP_PACKETS,
};

/// Batches used for the within-run standard error of utilization.
const UTILIZATION_BATCHES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub generated: u64,
    pub delivered_unique: u64,
    pub duplicates_suppressed: u64,
    pub dropped_retx_limit: u64,
    pub dropped_buffer_overflow: u64,
    pub in_flight_at_end: u64,
    pub total_transmissions: u64,
    pub retransmissions: u64,
    pub stale_acks: u64,
    pub overflow_rejections: u64,
    /// Packet-link pairs: how many times some packet started on some link.
    pub link_entries: u64,
    /// Per-hop discards after the last attempt.
    pub retx_limit_events: u64,
    pub utilization: f64,
    /// Batch-means standard error of `utilization`.
    pub utilization_stderr: f64,
    pub end_to_end_loss: f64,
    pub mean_latency: f64,
    pub max_latency: f64,
    /// Latency of the first packet to reach DST.
    pub first_latency: Option<SimTime>,
    pub measurement_window: f64,
    /// Nothing measurable reached DST.
    pub starved: bool,
    pub sim_time: f64,
    pub events_processed: u64,
}

impl Metrics {
    pub fn from_outcome(config: &ScenarioConfig, out: &RunOutcome) -> Self {
        let window_start = match config.warmup {
            WarmupPolicy::FirstDelivery => out.first_delivery(),
            WarmupPolicy::None => Some(SimTime::ZERO),
        };
        // The first delivery opens the window, so it is not counted in it.
        let skip = usize::from(config.warmup == WarmupPolicy::FirstDelivery);
        let window_end = if out.stopped_at_time {
            Some(out.end_time)
        } else {
            out.delivery_times.last().copied()
        };
        let bits = 8.0 * config.link.packet_len as f64;
        let (utilization, stderr, window) = match (window_start, window_end) {
            (Some(start), Some(end)) if end > start => {
                let window = (end - start).as_secs_f64();
                let counted = &out.delivery_times[skip.min(out.delivery_times.len())..];
                let u = counted.len() as f64 * bits / (config.link.bandwidth * window);
                let se = batch_stderr(counted, start, end, bits, config.link.bandwidth);
                (u, se, window)
            }
            _ => (0.0, 0.0, 0.0),
        };
        let settled = out.generated - out.in_flight_at_end;
        let end_to_end_loss = if settled == 0 {
            0.0
        } else {
            out.permanently_lost() as f64 / settled as f64
        };
        let (mean_latency, max_latency) = if out.latencies.is_empty() {
            (0.0, 0.0)
        } else {
            let sum: f64 = out.latencies.iter().map(|t| t.as_secs_f64()).sum();
            let max = out.latencies.iter().max().map_or(0.0, |t| t.as_secs_f64());
            (sum / out.latencies.len() as f64, max)
        };
        Metrics {
            generated: out.generated,
            delivered_unique: out.delivered_unique,
            duplicates_suppressed: out.duplicates_suppressed,
            dropped_retx_limit: out.dropped_retx_limit,
            dropped_buffer_overflow: out.dropped_buffer_overflow,
            in_flight_at_end: out.in_flight_at_end,
            total_transmissions: out.total_transmissions,
            retransmissions: out.retransmissions,
            stale_acks: out.stale_acks,
            overflow_rejections: out.overflow_rejections,
            link_entries: out.link_entries,
            retx_limit_events: out.retx_limit_events,
            utilization,
            utilization_stderr: stderr,
            end_to_end_loss,
            mean_latency,
            max_latency,
            first_latency: out.latencies.first().copied(),
            measurement_window: window,
            starved: window == 0.0,
            sim_time: out.end_time.as_secs_f64(),
            events_processed: out.events_processed,
        }
    }

    /// Settled packets: generated minus still in flight.
    pub fn settled(&self) -> u64 {
        self.generated - self.in_flight_at_end
    }

    pub fn delivery_ratio(&self) -> f64 {
        match self.settled() {
            0 => 0.0,
            s => self.delivered_unique as f64 / s as f64,
        }
    }

    /// Fraction of per-hop entries that ended in a discard after the last attempt.
    pub fn per_hop_drop_rate(&self) -> f64 {
        match self.link_entries {
            0 => 0.0,
            e => self.retx_limit_events as f64 / e as f64,
        }
    }
}

fn batch_stderr(times: &[SimTime], start: SimTime, end: SimTime, bits: f64, bandwidth: f64) -> f64 {
    let span = (end - start).as_picos();
    if times.len() < 2 || span == 0 {
        return 0.0;
    }
    let k = UTILIZATION_BATCHES;
    let mut counts = vec![0u64; k];
    for t in times {
        let offset = t.saturating_sub(start).as_picos() as u128;
        let idx = ((offset * k as u128) / span as u128) as usize;
        counts[idx.min(k - 1)] += 1;
    }
    let width = (end - start).as_secs_f64() / k as f64;
    let us: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 * bits / (bandwidth * width))
        .collect();
    let mean = us.iter().sum::<f64>() / k as f64;
    let var = us.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (var / k as f64).sqrt()
}

fn kernel_stop(config: &ScenarioConfig) -> Stop {
    match config.stop {
        StopRule::SrcPackets(_) => Stop::Drained,
        StopRule::SimSeconds(s) => Stop::AtTime(SimTime::from_secs_f64(s)),
    }
}

/// One simulation with optional trace output and invariant audit.
pub fn run_scenario_with(
    config: &ScenarioConfig,
    trace: Option<Box<dyn Write + Send>>,
    audit: bool,
) -> Result<(Metrics, RunOutcome, Option<AuditReport>), SimError> {
    let mut world = World::new(config)?;
    if let Some(out) = trace {
        world.set_trace(out);
    }
    if audit {
        world.enable_audit();
    }
    let (outcome, report) = world.run(kernel_stop(config))?;
    Ok((Metrics::from_outcome(config, &outcome), outcome, report))
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<Metrics, SimError> {
    run_scenario_with(config, None, false).map(|(m, _, _)| m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: u64,
    pub metrics: Metrics,
}

/// Run `configs` in parallel; results come back in input order. Every point
/// keeps the base seed, so the points share random streams.
fn run_points(points: Vec<(u64, ScenarioConfig)>) -> Result<Vec<SweepRow>, SimError> {
    points
        .into_par_iter()
        .map(|(value, cfg)| run_scenario(&cfg).map(|metrics| SweepRow { value, metrics }))
        .collect()
}

/// One run per total-attempt count `n`, in the order given.
pub fn sweep_retransmissions(
    base: &ScenarioConfig,
    n_values: &[u32],
) -> Result<Vec<SweepRow>, SimError> {
    if n_values.is_empty() {
        return Err(ConfigError::new("n_values", "at least one value required").into());
    }
    let points = n_values
        .iter()
        .map(|&n| {
            let mut cfg = base.clone();
            cfg.path.max_transmissions = n;
            (n as u64, cfg)
        })
        .collect();
    run_points(points)
}

/// One run per buffer size, ascending.
pub fn sweep_buffer(base: &ScenarioConfig, b_values: &[usize]) -> Result<Vec<SweepRow>, SimError> {
    if b_values.is_empty() {
        return Err(ConfigError::new("b_values", "at least one value required").into());
    }
    let mut sorted = b_values.to_vec();
    sorted.sort_unstable();
    let points = sorted
        .into_iter()
        .map(|b| {
            let mut cfg = base.clone();
            cfg.buffer_slots = b;
            (b as u64, cfg)
        })
        .collect();
    run_points(points)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize)]
pub struct GridPoint {
    pub ber: f64,
    pub packet_len: u32,
    pub relays: u32,
    pub max_transmissions: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRow {
    pub point: GridPoint,
    /// Settled packets the delivery estimate is based on.
    pub trials: u64,
    pub simulated_delivery: f64,
    /// `(1 - W^n)^(N+1)`.
    pub exact_delivery: f64,
    /// Linearized model; `None` where `8 * ber * L >= 1`.
    pub approx_delivery: Option<f64>,
    pub z_exact: f64,
    pub z_approx: Option<f64>,
    /// The linearized model sits more than 3 sigma from the simulation.
    pub approx_deviates: bool,
    pub per_hop_drop_rate: f64,
    pub per_hop_exact: f64,
    pub per_hop_approx: Option<f64>,
}

/// `(observed - predicted) / sigma` with binomial sigma at the prediction.
pub fn binomial_z(observed: f64, predicted: f64, trials: u64) -> f64 {
    let sigma = (predicted * (1.0 - predicted) / trials.max(1) as f64).sqrt();
    if sigma == 0.0 {
        if observed == predicted {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (observed - predicted) / sigma
    }
}

/// Simulate each grid point with ideal ACKs and an overflow-free buffer and
/// compare delivery with both delivery models.
pub fn validate_against_analytic(
    base: &ScenarioConfig,
    grid: &[GridPoint],
) -> Result<Vec<ValidationRow>, SimError> {
    let analytic_err = |e: AnalyticError| SimError::Config(ConfigError::new("ber", e.to_string()));
    grid.par_iter()
        .map(|p| {
            let mut cfg = base.clone();
            cfg.link.ber = p.ber;
            cfg.link.packet_len = p.packet_len;
            cfg.path.num_relays = p.relays;
            cfg.path.max_transmissions = p.max_transmissions;
            cfg.ideal_acks = true;
            cfg.buffer_slots = cfg.buffer_slots.max(64);
            let m = run_scenario(&cfg)?;
            let n = p.max_transmissions;
            let exact = analytic::end_to_end_delivery_exact(p.ber, p.packet_len, n, p.relays)
                .map_err(analytic_err)?
                .value();
            let approx = analytic::end_to_end_delivery_approx(p.ber, p.packet_len, n, p.relays)
                .ok()
                .map(Probability::value);
            let w = analytic::per_hop_loss(p.ber, p.packet_len).map_err(analytic_err)?;
            let per_hop_exact = analytic::residual_hop_loss_exact(w, n)
                .map_err(analytic_err)?
                .value();
            let per_hop_approx = analytic::residual_hop_loss_approx(p.ber, p.packet_len, n)
                .ok()
                .map(Probability::value);
            let trials = m.settled();
            let sim = m.delivery_ratio();
            let z_approx = approx.map(|a| binomial_z(sim, a, trials));
            Ok(ValidationRow {
                point: *p,
                trials,
                simulated_delivery: sim,
                exact_delivery: exact,
                approx_delivery: approx,
                z_exact: binomial_z(sim, exact, trials),
                z_approx,
                approx_deviates: z_approx.is_some_and(|z| z.abs() > 3.0),
                per_hop_drop_rate: m.per_hop_drop_rate(),
                per_hop_exact,
                per_hop_approx,
            })
        })
        .collect()
}
