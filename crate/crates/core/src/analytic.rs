//! Closed-form loss and timing models for a chain of relays running
//! per-link ARQ over an i.i.d. bit-error channel.
//!
//! Every function here is pure. Exponentials of `(1 - p)` are evaluated in
//! the log domain (`ln_1p` / `exp_m1`) so that tiny bit error ratios keep
//! full relative precision instead of cancelling to zero.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("{param} = {value} is outside its domain ({expected})")]
    Domain {
        param: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error(
        "8 * ber * packet_len = {0} is >= 1; the linearized residual-loss model does not apply"
    )]
    LinearizationInvalid(f64),
    #[error("grid point ber={ber}, relays={relays}: {source}")]
    GridPoint {
        ber: f64,
        relays: u32,
        #[source]
        source: Box<AnalyticError>,
    },
}

fn domain(param: &'static str, value: f64, expected: &'static str) -> AnalyticError {
    AnalyticError::Domain {
        param,
        value,
        expected,
    }
}

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Probability(f64);

impl Probability {
    pub const ZERO: Probability = Probability(0.0);
    pub const ONE: Probability = Probability(1.0);

    pub fn new(value: f64) -> Result<Self, AnalyticError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Probability(value))
        } else {
            Err(domain("probability", value, "0 <= p <= 1"))
        }
    }

    /// Clamps round-off excursions just outside `[0, 1]`.
    pub(crate) fn saturating(value: f64) -> Self {
        Probability(value.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn complement(self) -> Self {
        Probability(1.0 - self.0)
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Physical parameters of one link, shared by every link of the chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    /// Bit error ratio.
    pub ber: f64,
    /// DATA frame length in bytes.
    pub packet_len: u32,
    /// ACK / NACK frame length in bytes.
    pub ack_len: u32,
    /// Bits per second.
    pub bandwidth: f64,
    /// One-way propagation delay in seconds.
    pub prop_delay: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            ber: 1e-5,
            packet_len: 1000,
            ack_len: 8,
            bandwidth: 10e6,
            prop_delay: 1e-6,
        }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<(), AnalyticError> {
        check_ber(self.ber)?;
        if self.packet_len < 1 {
            return Err(domain(
                "packet_len",
                self.packet_len as f64,
                "packet_len >= 1",
            ));
        }
        if self.ack_len < 1 {
            return Err(domain("ack_len", self.ack_len as f64, "ack_len >= 1"));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(domain("bandwidth", self.bandwidth, "bandwidth > 0"));
        }
        if !(self.prop_delay >= 0.0 && self.prop_delay.is_finite()) {
            return Err(domain("prop_delay", self.prop_delay, "prop_delay >= 0"));
        }
        Ok(())
    }

    /// Round-trip propagation time between adjacent stations.
    pub fn rtt(&self) -> f64 {
        2.0 * self.prop_delay
    }

    /// Time to serialize one ACK frame.
    pub fn ack_time(&self) -> f64 {
        8.0 * self.ack_len as f64 / self.bandwidth
    }

    /// Time to serialize one DATA frame.
    pub fn frame_time(&self) -> f64 {
        8.0 * self.packet_len as f64 / self.bandwidth
    }

    pub fn per_hop_loss(&self) -> Result<Probability, AnalyticError> {
        per_hop_loss(self.ber, self.packet_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathParams {
    /// Intermediate stations between SRC and DST.
    pub num_relays: u32,
    /// Total transmission attempts per frame per hop, the first send included.
    pub max_transmissions: u32,
}

impl Default for PathParams {
    fn default() -> Self {
        PathParams {
            num_relays: 100,
            max_transmissions: 3,
        }
    }
}

impl PathParams {
    pub fn validate(&self) -> Result<(), AnalyticError> {
        if self.max_transmissions < 1 {
            return Err(domain(
                "max_transmissions",
                self.max_transmissions as f64,
                "max_transmissions >= 1",
            ));
        }
        Ok(())
    }

    pub fn num_links(&self) -> u32 {
        self.num_relays + 1
    }
}

fn check_ber(ber: f64) -> Result<(), AnalyticError> {
    if (0.0..1.0).contains(&ber) {
        Ok(())
    } else {
        Err(domain("ber", ber, "0 <= ber < 1"))
    }
}

/// `1 - (1 - p)^k`, evaluated as `-expm1(k * ln1p(-p))`.
fn one_minus_pow_complement(p: f64, k: f64) -> f64 {
    if p == 0.0 {
        return 0.0;
    }
    if p == 1.0 {
        return if k > 0.0 { 1.0 } else { 0.0 };
    }
    -(k * (-p).ln_1p()).exp_m1()
}

/// Probability that a `packet_len`-byte frame suffers at least one bit error.
pub fn per_hop_loss(ber: f64, packet_len: u32) -> Result<Probability, AnalyticError> {
    check_ber(ber)?;
    if packet_len == 0 {
        return Err(domain("packet_len", 0.0, "packet_len >= 1"));
    }
    let bits = 8.0 * packet_len as f64;
    Ok(Probability::saturating(one_minus_pow_complement(ber, bits)))
}

/// Loss across `num_relays + 1` independent links without retransmission.
pub fn end_to_end_loss(per_hop: Probability, num_relays: u32) -> Probability {
    let links = num_relays as f64 + 1.0;
    Probability::saturating(one_minus_pow_complement(per_hop.value(), links))
}

/// Acknowledgement timeout: two round trips plus three ACK serializations.
pub fn ack_timeout(rtt: f64, t_ack: f64) -> Result<f64, AnalyticError> {
    if !(rtt >= 0.0) {
        return Err(domain("rtt", rtt, "rtt >= 0"));
    }
    if !(t_ack >= 0.0) {
        return Err(domain("t_ack", t_ack, "t_ack >= 0"));
    }
    Ok(2.0 * rtt + 3.0 * t_ack)
}

fn linearized_loss(ber: f64, packet_len: u32) -> Result<f64, AnalyticError> {
    check_ber(ber)?;
    if packet_len == 0 {
        return Err(domain("packet_len", 0.0, "packet_len >= 1"));
    }
    let x = 8.0 * ber * packet_len as f64;
    if x >= 1.0 {
        return Err(AnalyticError::LinearizationInvalid(x));
    }
    Ok(x)
}

fn check_attempts(n: u32) -> Result<(), AnalyticError> {
    if n < 1 {
        return Err(domain("n", n as f64, "n >= 1"));
    }
    Ok(())
}

/// `(8 * ber * packet_len)^n`: the union-bound approximation of residual
/// per-hop loss after `n` attempts. Rejects `8 * ber * packet_len >= 1`.
pub fn residual_hop_loss_approx(
    ber: f64,
    packet_len: u32,
    n: u32,
) -> Result<Probability, AnalyticError> {
    check_attempts(n)?;
    let x = linearized_loss(ber, packet_len)?;
    Ok(Probability::saturating(x.powi(n as i32)))
}

/// Probability that all `n` independent attempts on one hop fail.
pub fn residual_hop_loss_exact(per_hop: Probability, n: u32) -> Result<Probability, AnalyticError> {
    check_attempts(n)?;
    Ok(Probability::saturating(per_hop.value().powi(n as i32)))
}

/// `(1 - (8εL)^n)^N * (1 - 8εL)` taken verbatim. Despite the usual "loss"
/// label this tends to 1 as the BER vanishes, so it is exposed as a delivery
/// probability.
pub fn end_to_end_delivery_approx(
    ber: f64,
    packet_len: u32,
    n: u32,
    num_relays: u32,
) -> Result<Probability, AnalyticError> {
    check_attempts(n)?;
    let x = linearized_loss(ber, packet_len)?;
    let residual = x.powi(n as i32);
    let relays = num_relays as f64 * (-residual).ln_1p();
    Ok(Probability::saturating(relays.exp() * (1.0 - x)))
}

/// Delivery probability with exact residual loss on every one of the
/// `num_relays + 1` links: `(1 - W^n)^(N+1)`.
pub fn end_to_end_delivery_exact(
    ber: f64,
    packet_len: u32,
    n: u32,
    num_relays: u32,
) -> Result<Probability, AnalyticError> {
    let w = per_hop_loss(ber, packet_len)?;
    residual_hop_loss_exact(w, n)?;
    // Work from the frame survival probability s = 1 - W so that neither
    // 1 - W^n nor the final product cancels when W or the loss is near 1.
    let survival = (8.0 * packet_len as f64 * (-ber).ln_1p()).exp();
    let hop_delivery = -(n as f64 * (-survival).ln_1p()).exp_m1();
    let links = num_relays as f64 + 1.0;
    Ok(Probability::saturating((links * hop_delivery.ln()).exp()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub ber: f64,
    pub num_relays: u32,
    pub loss: Probability,
}

/// End-to-end loss over the cross product of `ber_grid` and `relay_counts`.
/// Rows come out relay-count major, BER ascending within each block.
pub fn loss_curve(
    ber_grid: &[f64],
    packet_len: u32,
    relay_counts: &[u32],
) -> Result<Vec<LossRow>, AnalyticError> {
    let mut bers = ber_grid.to_vec();
    bers.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(bers.len() * relay_counts.len());
    for &num_relays in relay_counts {
        for &ber in &bers {
            let w = per_hop_loss(ber, packet_len).map_err(|e| AnalyticError::GridPoint {
                ber,
                relays: num_relays,
                source: Box::new(e),
            })?;
            rows.push(LossRow {
                ber,
                num_relays,
                loss: end_to_end_loss(w, num_relays),
            });
        }
    }
    Ok(rows)
}

/// `points` values spaced evenly in log10 between `min` and `max`, inclusive.
pub fn log_grid(min: f64, max: f64, points: usize) -> Result<Vec<f64>, AnalyticError> {
    if !(min > 0.0) {
        return Err(domain("ber_min", min, "ber_min > 0"));
    }
    if !(max >= min) {
        return Err(domain("ber_max", max, "ber_max >= ber_min"));
    }
    if points == 0 {
        return Err(domain("points", 0.0, "points >= 1"));
    }
    if points == 1 {
        return Ok(vec![min]);
    }
    let (lo, hi) = (min.log10(), max.log10());
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points)
        .map(|i| {
            if i == points - 1 {
                max
            } else {
                10f64.powf(lo + step * i as f64)
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Reference values from a 60-digit evaluation.
    const W_1E5: f64 = 0.076_884_022_862_290_58;
    const W_1E6: f64 = 0.007_968_089_131_069_666;

    fn p(v: f64) -> Probability {
        Probability::new(v).unwrap()
    }

    #[test]
    fn per_hop_loss_examples() {
        assert_eq!(per_hop_loss(0.0, 1000).unwrap().value(), 0.0);
        assert!((per_hop_loss(1e-5, 1000).unwrap().value() - 0.076884).abs() < 1e-6);
        assert!((per_hop_loss(1e-6, 1000).unwrap().value() - 0.0079681).abs() < 1e-6);
        assert!((per_hop_loss(1e-5, 1000).unwrap().value() / W_1E5 - 1.0).abs() < 1e-13);
        assert!((per_hop_loss(1e-6, 1000).unwrap().value() / W_1E6 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn per_hop_loss_tiny_ber_keeps_precision() {
        let w = per_hop_loss(1e-12, 1000).unwrap().value();
        assert!(w > 0.0);
        assert!((w / 8e-9 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn per_hop_loss_rejects_bad_inputs() {
        assert!(per_hop_loss(1.0, 1000).is_err());
        assert!(per_hop_loss(-1e-9, 1000).is_err());
        assert!(per_hop_loss(f64::NAN, 1000).is_err());
        assert!(per_hop_loss(1e-5, 0).is_err());
    }

    #[test]
    fn end_to_end_loss_examples() {
        assert_eq!(end_to_end_loss(Probability::ZERO, 100).value(), 0.0);
        for w in [0.0, 0.3, 0.076884, 1.0] {
            assert!((end_to_end_loss(p(w), 0).value() - w).abs() < 1e-15);
        }
        let e2e = end_to_end_loss(p(0.076884), 100).value();
        assert!((e2e - 0.99969).abs() < 1e-4);
    }

    #[test]
    fn ack_timeout_examples() {
        assert_eq!(ack_timeout(0.0, 0.0).unwrap(), 0.0);
        assert!((ack_timeout(0.010, 0.001).unwrap() - 0.023).abs() < 1e-15);
        assert!((ack_timeout(0.002, 0.0005).unwrap() - 0.0055).abs() < 1e-15);
        assert!(ack_timeout(-1.0, 0.0).is_err());
        assert!(ack_timeout(0.0, -1e-3).is_err());
    }

    #[test]
    fn residual_approx_examples() {
        assert!((residual_hop_loss_approx(1e-5, 1000, 1).unwrap().value() - 0.08).abs() < 1e-15);
        assert!((residual_hop_loss_approx(1e-5, 1000, 3).unwrap().value() - 5.12e-4).abs() < 1e-15);
        assert_eq!(residual_hop_loss_approx(0.0, 1000, 3).unwrap().value(), 0.0);
    }

    #[test]
    fn residual_approx_rejects_outside_linear_region() {
        assert!(matches!(
            residual_hop_loss_approx(1.25e-4, 1000, 2),
            Err(AnalyticError::LinearizationInvalid(_))
        ));
        assert!(residual_hop_loss_approx(1e-5, 1000, 0).is_err());
    }

    #[test]
    fn residual_exact_examples() {
        let cube = residual_hop_loss_exact(p(W_1E5), 3).unwrap().value();
        assert!((cube - 4.5448e-4).abs() < 1e-7);
        assert_eq!(
            residual_hop_loss_exact(Probability::ZERO, 5)
                .unwrap()
                .value(),
            0.0
        );
        assert_eq!(residual_hop_loss_exact(p(0.37), 1).unwrap().value(), 0.37);
    }

    #[test]
    fn delivery_approx_examples() {
        assert_eq!(
            end_to_end_delivery_approx(0.0, 1000, 3, 100)
                .unwrap()
                .value(),
            1.0
        );
        let v = end_to_end_delivery_approx(1e-5, 1000, 3, 100)
            .unwrap()
            .value();
        assert!((v - 0.8741).abs() < 1e-3);
        let single = end_to_end_delivery_approx(1e-5, 1000, 1, 0)
            .unwrap()
            .value();
        assert!((single - 0.92).abs() < 1e-12);
        assert!(end_to_end_delivery_approx(2e-4, 1000, 3, 1).is_err());
    }

    #[test]
    fn delivery_exact_matches_reference() {
        let v = end_to_end_delivery_exact(1e-5, 1000, 3, 5).unwrap().value();
        assert!((v - 0.997_276_256_990_651_5).abs() < 1e-12);
    }

    #[test]
    fn loss_curve_examples() {
        let rows = loss_curve(&[1e-5], 1000, &[100]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].ber, rows[0].num_relays), (1e-5, 100));
        assert!((rows[0].loss.value() - 0.99969).abs() < 1e-4);

        let rows = loss_curve(&[0.0], 1000, &[1, 10]).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.loss.value() == 0.0));

        let rows = loss_curve(&[1e-6], 1000, &[0]).unwrap();
        assert!((rows[0].loss.value() - 0.0079681).abs() < 1e-6);
    }

    #[test]
    fn loss_curve_order_and_errors() {
        let rows = loss_curve(&[1e-4, 1e-6, 1e-5], 1000, &[10, 1]).unwrap();
        let keys: Vec<_> = rows.iter().map(|r| (r.num_relays, r.ber)).collect();
        assert_eq!(
            keys,
            vec![
                (10, 1e-6),
                (10, 1e-5),
                (10, 1e-4),
                (1, 1e-6),
                (1, 1e-5),
                (1, 1e-4)
            ]
        );
        match loss_curve(&[1e-5, 1.5], 1000, &[3]) {
            Err(AnalyticError::GridPoint { ber, relays, .. }) => {
                assert_eq!((ber, relays), (1.5, 3));
            }
            other => panic!("expected grid error, got {other:?}"),
        }
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-8, 1e-4, 50).unwrap();
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 1e-8);
        assert_eq!(g[49], 1e-4);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(log_grid(0.0, 1e-4, 5).is_err());
    }

    fn valid_link() -> impl Strategy<Value = (f64, u32)> {
        (-12.0f64..-1.0, 1u32..4000).prop_map(|(e, l)| (10f64.powf(e), l))
    }

    proptest! {
        #[test]
        fn outputs_are_probabilities((ber, len) in valid_link(), n in 1u32..8, relays in 0u32..300) {
            let w = per_hop_loss(ber, len).unwrap().value();
            prop_assert!((0.0..=1.0).contains(&w));
            let e2e = end_to_end_loss(Probability::saturating(w), relays).value();
            prop_assert!((0.0..=1.0).contains(&e2e));
            let exact = residual_hop_loss_exact(Probability::saturating(w), n).unwrap().value();
            prop_assert!((0.0..=1.0).contains(&exact));
            if 8.0 * ber * (len as f64) < 1.0 {
                let approx = residual_hop_loss_approx(ber, len, n).unwrap().value();
                prop_assert!((0.0..=1.0).contains(&approx));
                let d = end_to_end_delivery_approx(ber, len, n, relays).unwrap().value();
                prop_assert!((0.0..=1.0).contains(&d));
            }
        }

        #[test]
        fn union_bound_holds((ber, len) in valid_link(), n in 1u32..8) {
            let x = 8.0 * ber * len as f64;
            let w = per_hop_loss(ber, len).unwrap();
            prop_assert!(x >= w.value() * (1.0 - 1e-12));
            if x < 1.0 {
                let approx = residual_hop_loss_approx(ber, len, n).unwrap().value();
                let exact = residual_hop_loss_exact(w, n).unwrap().value();
                prop_assert!(approx >= exact * (1.0 - 1e-12));
            }
        }

        #[test]
        fn composition_matches_single_exponent((ber, len) in valid_link(), relays in 0u32..300) {
            let composed = end_to_end_loss(per_hop_loss(ber, len).unwrap(), relays).value();
            let bits = 8.0 * len as f64 * (relays as f64 + 1.0);
            let direct = -(bits * (-ber).ln_1p()).exp_m1();
            prop_assert!((composed - direct).abs() <= 1e-12 * direct.abs().max(f64::MIN_POSITIVE));
        }

        #[test]
        fn single_attempt_delivery_degenerates((ber, len) in valid_link(), relays in 0u32..300) {
            let x = 8.0 * ber * len as f64;
            prop_assume!(x < 1.0);
            let d = end_to_end_delivery_approx(ber, len, 1, relays).unwrap().value();
            let direct = (1.0 - x).powi(relays as i32 + 1);
            prop_assert!((d - direct).abs() <= 1e-12 * direct);
        }

        #[test]
        fn monotone_in_ber_and_length((ber, len) in valid_link(), relays in 0u32..200) {
            let w = per_hop_loss(ber, len).unwrap().value();
            prop_assume!(w < 1.0 - 1e-9);
            prop_assert!(per_hop_loss(ber * 1.01, len).unwrap().value() > w);
            prop_assert!(per_hop_loss(ber, len + 1).unwrap().value() > w);
            let pw = Probability::saturating(w);
            let e = end_to_end_loss(pw, relays).value();
            prop_assert!(end_to_end_loss(pw, relays + 1).value() >= e);
            prop_assert!(end_to_end_loss(Probability::saturating((w * 1.01).min(1.0)), relays).value() >= e);
        }
    }
}
