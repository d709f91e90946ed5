#![allow(dead_code)]

use std::path::Path;

use num_bigint::BigInt;
use num_traits::{One, ToPrimitive, Zero};

/// Fractional bits of the fixed-point oracle.
const SCALE: u32 = 4096;

/// Fixed-point real with `SCALE` fractional bits, used as an exact-enough
/// reference for the closed-form loss models.
#[derive(Clone, Debug)]
pub struct Fixed(BigInt);

impl Fixed {
    pub fn one() -> Self {
        Fixed(BigInt::one() << SCALE)
    }

    /// Exact conversion (truncated below 2^-SCALE) of a finite non-negative f64.
    pub fn from_f64(x: f64) -> Self {
        assert!(x.is_finite() && x >= 0.0);
        if x == 0.0 {
            return Fixed(BigInt::zero());
        }
        let bits = x.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mantissa, e) = if exp == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), exp - 1075)
        };
        let m = BigInt::from(mantissa);
        let shift = e + SCALE as i64;
        if shift >= 0 {
            Fixed(m << shift as usize)
        } else {
            Fixed(m >> (-shift) as usize)
        }
    }

    pub fn to_f64(&self) -> f64 {
        // Keep 64 significant bits, then scale by an exact power of two.
        let bits = self.0.bits() as i64;
        let drop = (bits - 64).max(0);
        let top = (&self.0 >> drop as usize).to_f64().unwrap();
        top * 2f64.powi((drop - SCALE as i64) as i32)
    }

    pub fn sub(&self, other: &Fixed) -> Fixed {
        Fixed(&self.0 - &other.0)
    }

    pub fn mul(&self, other: &Fixed) -> Fixed {
        Fixed((&self.0 * &other.0) >> SCALE as usize)
    }

    pub fn pow(&self, mut k: u64) -> Fixed {
        let mut base = self.clone();
        let mut acc = Fixed::one();
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            k >>= 1;
        }
        acc
    }
}

/// `1 - (1 - ber)^(8 * len)`.
pub fn oracle_hop_loss(ber: f64, len: u32) -> Fixed {
    let q = Fixed::one().sub(&Fixed::from_f64(ber));
    Fixed::one().sub(&q.pow(8 * len as u64))
}

/// `1 - (1 - ber)^(8 * len * (relays + 1))`.
pub fn oracle_end_to_end_loss(ber: f64, len: u32, relays: u32) -> Fixed {
    let q = Fixed::one().sub(&Fixed::from_f64(ber));
    Fixed::one().sub(&q.pow(8 * len as u64 * (relays as u64 + 1)))
}

/// `(1 - W^n)^(relays + 1)`.
pub fn oracle_delivery(ber: f64, len: u32, n: u32, relays: u32) -> Fixed {
    let w = oracle_hop_loss(ber, len);
    Fixed::one().sub(&w.pow(n as u64)).pow(relays as u64 + 1)
}

pub fn rel_err(actual: f64, expected: f64) -> f64 {
    if expected == 0.0 {
        actual.abs()
    } else {
        ((actual - expected) / expected).abs()
    }
}

/// Run the CLI in-process; returns (exit code, stdout, stderr).
pub fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("hoparq").chain(args.iter().copied());
    let code = hoparq::cli::dispatch(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

pub fn write_file(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

/// Data rows of a CSV table: no `#` metadata, no header.
pub fn data_rows(text: &str) -> Vec<&str> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .collect()
}

/// Cloneable in-memory sink so a trace can be read back after a run.
#[derive(Clone, Default)]
pub struct SharedBuf(std::sync::Arc<std::sync::Mutex<Vec<u8>>>);

impl SharedBuf {
    pub fn contents(&self) -> String {
        String::from_utf8(self.0.lock().unwrap().clone()).unwrap()
    }
}

impl std::io::Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// Run a scenario with a trace capture; returns metrics, outcome, audit and trace text.
pub fn traced_run(
    config: &hoparq::experiments::ScenarioConfig,
    audit: bool,
) -> (
    hoparq::experiments::Metrics,
    hoparq::simkernel::RunOutcome,
    Option<hoparq::simkernel::AuditReport>,
    String,
) {
    let buf = SharedBuf::default();
    let (m, out, report) =
        hoparq::experiments::run_scenario_with(config, Some(Box::new(buf.clone())), audit).unwrap();
    (m, out, report, buf.contents())
}
