//! CSV tables. Each starts with `#`-prefixed `key=value` metadata lines,
//! then a header row, then data rows. Column order is fixed.

use std::io::{self, Write};

use crate::analytic::LossRow;

use super::{Metrics, ScenarioConfig, SweepRow, ValidationRow};

pub const SWEEP_COLUMNS: [&str; 6] = [
    "utilization",
    "end_to_end_loss",
    "delivered_unique",
    "dropped_retx_limit",
    "dropped_buffer_overflow",
    "total_transmissions",
];

pub const RUN_COLUMNS: [&str; 18] = [
    "generated",
    "delivered_unique",
    "duplicates_suppressed",
    "dropped_retx_limit",
    "dropped_buffer_overflow",
    "in_flight_at_end",
    "total_transmissions",
    "retransmissions",
    "stale_acks",
    "overflow_rejections",
    "utilization",
    "utilization_stderr",
    "end_to_end_loss",
    "mean_latency_s",
    "max_latency_s",
    "measurement_window_s",
    "starved",
    "sim_time_s",
];

fn to_io(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

pub fn write_metadata<W: Write + ?Sized>(w: &mut W, pairs: &[(&str, String)]) -> io::Result<()> {
    for (k, v) in pairs {
        writeln!(w, "# {k}={v}")?;
    }
    Ok(())
}

fn table<W: Write + ?Sized>(w: &mut W, header: &[&str], rows: Vec<Vec<String>>) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header).map_err(to_io)?;
    for row in rows {
        out.write_record(&row).map_err(to_io)?;
    }
    out.flush()
}

fn config_meta(table_name: &str, config: &ScenarioConfig) -> Vec<(&'static str, String)> {
    let mut meta = vec![("table", table_name.to_string())];
    meta.extend(config.describe());
    meta
}

pub fn write_loss_curve<W: Write + ?Sized>(
    w: &mut W,
    packet_len: u32,
    rows: &[LossRow],
) -> io::Result<()> {
    write_metadata(
        w,
        &[
            ("table", "loss_curve".to_string()),
            ("packet_len", packet_len.to_string()),
        ],
    )?;
    let data = rows
        .iter()
        .map(|r| {
            vec![
                r.ber.to_string(),
                r.num_relays.to_string(),
                r.loss.value().to_string(),
            ]
        })
        .collect();
    table(w, &["ber", "relays", "loss"], data)
}

fn metric_cells(m: &Metrics) -> Vec<String> {
    vec![
        m.generated.to_string(),
        m.delivered_unique.to_string(),
        m.duplicates_suppressed.to_string(),
        m.dropped_retx_limit.to_string(),
        m.dropped_buffer_overflow.to_string(),
        m.in_flight_at_end.to_string(),
        m.total_transmissions.to_string(),
        m.retransmissions.to_string(),
        m.stale_acks.to_string(),
        m.overflow_rejections.to_string(),
        m.utilization.to_string(),
        m.utilization_stderr.to_string(),
        m.end_to_end_loss.to_string(),
        m.mean_latency.to_string(),
        m.max_latency.to_string(),
        m.measurement_window.to_string(),
        m.starved.to_string(),
        m.sim_time.to_string(),
    ]
}

pub fn write_run<W: Write + ?Sized>(
    w: &mut W,
    config: &ScenarioConfig,
    m: &Metrics,
) -> io::Result<()> {
    write_metadata(w, &config_meta("run", config))?;
    table(w, &RUN_COLUMNS, vec![metric_cells(m)])
}

/// `param` names the swept column, e.g. `max_transmissions` or `buffer_slots`.
pub fn write_sweep<W: Write + ?Sized>(
    w: &mut W,
    param: &str,
    base: &ScenarioConfig,
    rows: &[SweepRow],
) -> io::Result<()> {
    write_metadata(w, &config_meta(&format!("sweep_{param}"), base))?;
    let mut header = vec![param];
    header.extend(SWEEP_COLUMNS);
    header.push("utilization_stderr");
    let data = rows
        .iter()
        .map(|r| {
            let m = &r.metrics;
            vec![
                r.value.to_string(),
                m.utilization.to_string(),
                m.end_to_end_loss.to_string(),
                m.delivered_unique.to_string(),
                m.dropped_retx_limit.to_string(),
                m.dropped_buffer_overflow.to_string(),
                m.total_transmissions.to_string(),
                m.utilization_stderr.to_string(),
            ]
        })
        .collect();
    table(w, &header, data)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_validation<W: Write + ?Sized>(
    w: &mut W,
    base: &ScenarioConfig,
    rows: &[ValidationRow],
) -> io::Result<()> {
    write_metadata(w, &config_meta("validate", base))?;
    let header = [
        "ber",
        "packet_len",
        "relays",
        "max_transmissions",
        "trials",
        "simulated_delivery",
        "exact_delivery",
        "approx_delivery",
        "z_exact",
        "z_approx",
        "approx_deviates",
        "per_hop_drop_rate",
        "per_hop_exact",
        "per_hop_approx",
    ];
    let data = rows
        .iter()
        .map(|r| {
            vec![
                r.point.ber.to_string(),
                r.point.packet_len.to_string(),
                r.point.relays.to_string(),
                r.point.max_transmissions.to_string(),
                r.trials.to_string(),
                r.simulated_delivery.to_string(),
                r.exact_delivery.to_string(),
                opt(r.approx_delivery),
                r.z_exact.to_string(),
                opt(r.z_approx),
                r.approx_deviates.to_string(),
                r.per_hop_drop_rate.to_string(),
                r.per_hop_exact.to_string(),
                opt(r.per_hop_approx),
            ]
        })
        .collect();
    table(w, &header, data)
}
