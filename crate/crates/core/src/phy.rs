//! SINR model, power / carrier-sense threshold assignment, interference
//! bounds and the solver for the minimum received power `P̄`.
//!
//! `N1` and `N2` are written for unit transmit power: they bound the
//! interference from unit-power transmitters that keep a pairwise distance of
//! at least `d`. A class transmitting at power `P` scales them by `P`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{param, Error, Result};
use crate::spatial::{NodeId, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TxClass {
    Low,
    High,
}

impl TxClass {
    pub const ALL: [TxClass; 2] = [TxClass::Low, TxClass::High];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TxClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TxClass::Low => "LOW",
            TxClass::High => "HIGH",
        })
    }
}

impl std::str::FromStr for TxClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "LOW" => Ok(TxClass::Low),
            "HIGH" => Ok(TxClass::High),
            _ => Err(Error::Usage(format!("unknown tx class {s:?}"))),
        }
    }
}

/// Resolved physical-layer parameters for one network size.
#[derive(Debug, Clone, PartialEq)]
pub struct PhyParams {
    pub alpha: f64,
    pub beta: f64,
    pub n0: f64,
    pub c: f64,
    pub c1: f64,
    /// Network size; only `ln n` enters (HIGH power and range).
    pub n: f64,
    pub pbar: f64,
    pub p_low: f64,
    pub p_high: f64,
    pub t_low: f64,
    pub t_high: f64,
    pub w: f64,
}

impl PhyParams {
    /// Derives powers, thresholds and rate from a given `P̄`.
    pub fn with_pbar(alpha: f64, beta: f64, n0: f64, c: f64, c1: f64, n: f64, pbar: f64) -> Result<Self> {
        if !(alpha > 2.0) {
            return param(format!("alpha must exceed 2, got {alpha}"));
        }
        if !(beta > 0.0) {
            return param(format!("beta must be positive, got {beta}"));
        }
        if !(n0 >= 0.0) {
            return param(format!("n0 must be non-negative, got {n0}"));
        }
        if !(c > 0.0 && c1 > 0.0) {
            return param(format!("c and c1 must be positive, got {c}, {c1}"));
        }
        if !(n > std::f64::consts::E) {
            return param(format!("n must exceed e, got {n}"));
        }
        if !(pbar > 0.0 && pbar.is_finite()) {
            return param(format!("pbar must be positive, got {pbar}"));
        }
        let p_low = pbar * low_range(c).powf(alpha);
        let p_high = pbar * high_range(c1, n).powf(alpha);
        Ok(Self {
            alpha,
            beta,
            n0,
            c,
            c1,
            n,
            pbar,
            p_low,
            p_high,
            t_low: pbar / p_low,
            t_high: pbar / p_high,
            w: link_rate(beta),
        })
    }

    /// Parameters with `P̄` from [`solve_pbar`].
    pub fn resolve(alpha: f64, beta: f64, n0: f64, c: f64, c1: f64, n: f64) -> Result<Self> {
        let pbar = solve_pbar(alpha, beta, c)?;
        Self::with_pbar(alpha, beta, n0, c, c1, n, pbar)
    }

    pub fn log_n(&self) -> f64 {
        self.n.ln()
    }

    pub fn power(&self, class: TxClass) -> f64 {
        match class {
            TxClass::Low => self.p_low,
            TxClass::High => self.p_high,
        }
    }

    pub fn threshold(&self, class: TxClass) -> f64 {
        match class {
            TxClass::Low => self.t_low,
            TxClass::High => self.t_high,
        }
    }

    /// Longest hop a class is meant to cover: `√5 c` or `√2 c1 ln n`.
    pub fn max_range(&self, class: TxClass) -> f64 {
        match class {
            TxClass::Low => low_range(self.c),
            TxClass::High => high_range(self.c1, self.n),
        }
    }

    /// Distance below which transmitters of the two classes sense each other.
    pub fn sensing_radius(&self, a: TxClass, b: TxClass) -> f64 {
        (self.power(a) * self.power(b) / self.pbar).powf(1.0 / self.alpha)
    }

    pub fn profile(&self, node: NodeId, class: TxClass) -> TxProfile {
        assign_profile(node, class, self)
    }

    /// Flat `key=value` listing, one parameter per line.
    pub fn write_kv<W: Write>(&self, mut out: W) -> Result<()> {
        for (k, v) in self.entries() {
            writeln!(out, "{k}={v}")?;
        }
        Ok(())
    }

    fn entries(&self) -> [(&'static str, f64); 12] {
        [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("c", self.c),
            ("c1", self.c1),
            ("n", self.n),
            ("n0", self.n0),
            ("pbar", self.pbar),
            ("p_low", self.p_low),
            ("p_high", self.p_high),
            ("t_low", self.t_low),
            ("t_high", self.t_high),
            ("w", self.w),
        ]
    }

    /// Reads a `key=value` listing. Derived entries, when present, must agree
    /// with the ones recomputed from the base parameters.
    pub fn read_kv<R: BufRead>(input: R) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in input.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Usage(format!("expected key=value, got {line:?}")))?;
            let v: f64 = v.trim().parse().map_err(|e| Error::Usage(format!("bad value for {k}: {e}")))?;
            map.insert(k.trim().to_string(), v);
        }
        let get = |k: &str| map.get(k).copied().ok_or_else(|| Error::Usage(format!("missing key {k}")));
        let params = Self::with_pbar(
            get("alpha")?,
            get("beta")?,
            map.get("n0").copied().unwrap_or(0.0),
            get("c")?,
            get("c1")?,
            get("n")?,
            get("pbar")?,
        )?;
        for (k, v) in params.entries() {
            if let Some(&stored) = map.get(k) {
                if (stored - v).abs() > 1e-9 * v.abs().max(f64::MIN_POSITIVE) {
                    return Err(Error::Usage(format!("{k}={stored} disagrees with derived {v}")));
                }
            }
        }
        Ok(params)
    }
}

pub fn low_range(c: f64) -> f64 {
    5f64.sqrt() * c
}

pub fn high_range(c1: f64, n: f64) -> f64 {
    2f64.sqrt() * c1 * n.ln()
}

/// Transmit power and carrier-sense threshold a node uses for one hop class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxProfile {
    pub node: NodeId,
    pub class: TxClass,
    pub power: f64,
    pub threshold: f64,
}

pub fn assign_profile(node: NodeId, class: TxClass, params: &PhyParams) -> TxProfile {
    TxProfile { node, class, power: params.power(class), threshold: params.threshold(class) }
}

/// Two transmitters sense each other iff their distance is below `(P̄ / (T_i T_j))^{1/α}`.
pub fn mutual_sense(a: (&TxProfile, Point), b: (&TxProfile, Point), pbar: f64, alpha: f64) -> bool {
    let radius = (pbar / (a.0.threshold * b.0.threshold)).powf(1.0 / alpha);
    a.1.dist(&b.1) < radius
}

/// Signal-to-interference-plus-noise ratio at `receiver`.
///
/// Zero interference and zero noise give `+∞`.
pub fn sinr(receiver: &Point, tx: (Point, f64), others: &[(Point, f64)], n0: f64, alpha: f64) -> Result<f64> {
    let gain = |p: &Point, power: f64| -> Result<f64> {
        let d2 = receiver.dist2(p);
        if d2 == 0.0 {
            return Err(Error::Domain("receiver coincides with a transmitter".into()));
        }
        Ok(power * d2.powf(-0.5 * alpha))
    };
    let signal = gain(&tx.0, tx.1)?;
    let mut noise = n0;
    for (p, power) in others {
        noise += gain(p, *power)?;
    }
    Ok(if noise == 0.0 { f64::INFINITY } else { signal / noise })
}

pub fn link_rate(beta: f64) -> f64 {
    beta.ln_1p() / std::f64::consts::LN_2
}

/// The four summands of `N1(d, r0)`.
pub fn n1_terms(d: f64, r0: f64, alpha: f64) -> Result<[f64; 4]> {
    if !(alpha > 2.0) {
        return Err(Error::Domain(format!("alpha must exceed 2, got {alpha}")));
    }
    if !(r0 > 0.0 && d > r0) {
        return Err(Error::Domain(format!("need 0 < r0 < d, got r0={r0}, d={d}")));
    }
    let s3 = 3f64.sqrt();
    let bases = [5.0 * s3 / 4.0 * d - r0, s3 / 4.0 * (3.0 * alpha - 1.0) * d - r0, d - r0, s3 * d - r0, 1.5 * d - r0];
    if let Some(b) = bases.iter().find(|&&b| !(b > 0.0)) {
        return Err(Error::Domain(format!("N1 base {b} is not positive (d={d}, r0={r0})")));
    }
    let a1 = alpha - 1.0;
    Ok([
        4.0 * bases[0].powf(-a1) * bases[1] / (d * d * a1 * (alpha - 2.0)),
        3.0 * bases[2].powf(-alpha),
        3.0 * bases[3].powf(-alpha),
        3.0 * bases[4].powf(-a1) / (a1 * d),
    ])
}

pub fn n1_bound(d: f64, r0: f64, alpha: f64) -> Result<f64> {
    Ok(n1_terms(d, r0, alpha)?.iter().sum())
}

pub fn n2_bound(d: f64, alpha: f64) -> f64 {
    assert!(d > 0.0 && alpha > 2.0, "n2_bound needs d > 0 and alpha > 2");
    let a1 = alpha - 1.0;
    let s3d = (3f64.sqrt() * d).powf(-alpha);
    3.0 * d.powf(-alpha)
        + 3.0 * 1.5f64.powf(-a1) / a1 * d.powf(-alpha)
        + 3.0 * s3d
        + 3.0 * 1.25f64.powf(-a1) * (3.0 * alpha - 1.0) / (a1 * (alpha - 2.0)) * s3d
}

/// `(N1 + N2)` for a class with exclusion distance `d` and range `r0`.
pub fn unit_interference(d: f64, r0: f64, alpha: f64) -> Result<f64> {
    Ok(n1_bound(d, r0, alpha)? + n2_bound(d, alpha))
}

/// Distance between LOW transmitters that sense each other, as a function of `P̄`.
fn low_exclusion(pbar: f64, alpha: f64, c: f64) -> f64 {
    pbar.powf(1.0 / alpha) * 5.0 * c * c
}

/// Solves for the `P̄` at which the worst-case LOW interference leaves exactly
/// SINR `β`: `P̄ = β · Pˡ · (N1 + N2)(P̄^{1/α} 5c², √5 c)` with `Pˡ = P̄ (√5 c)^α`.
pub fn solve_pbar(alpha: f64, beta: f64, c: f64) -> Result<f64> {
    let r = low_range(c);
    solve_fixed_point(alpha, beta, c, |pbar| pbar * r.powf(alpha))
}

/// Same equation with the interfering power taken as 1 instead of `Pˡ`.
///
/// Kept for comparison: with real transmit powers this `P̄` leaves
/// carrier-sense-legal configurations below SINR `β`.
pub fn solve_pbar_unit_power(alpha: f64, beta: f64, c: f64) -> Result<f64> {
    solve_fixed_point(alpha, beta, c, |_| 1.0)
}

fn solve_fixed_point(alpha: f64, beta: f64, c: f64, power: impl Fn(f64) -> f64) -> Result<f64> {
    if !(alpha > 2.0 && beta > 0.0 && c > 0.0) {
        return param(format!("solve_pbar needs alpha > 2, beta > 0, c > 0 (got {alpha}, {beta}, {c})"));
    }
    let r = low_range(c);
    let f = |pbar: f64| -> Result<f64> {
        let d = low_exclusion(pbar, alpha, c);
        Ok(pbar - beta * power(pbar) * unit_interference(d, r, alpha)?)
    };
    // Below this the exclusion distance no longer exceeds the hop range.
    let floor = r.powf(-alpha) * (1.0 + 1e-9);
    let (lo_lim, hi_lim) = (1e-12f64.max(floor), 1e12);
    if lo_lim >= hi_lim {
        return Err(Error::Solver(format!("empty bracket [{lo_lim}, {hi_lim}]")));
    }
    let f_lo = f(lo_lim)?;
    let mut lo = lo_lim;
    let mut hi = lo_lim;
    let mut f_hi = f_lo;
    while f_hi.signum() == f_lo.signum() {
        lo = hi;
        hi *= 2.0;
        if hi > hi_lim {
            return Err(Error::Solver(format!(
                "no sign change in [{lo_lim:e}, {hi_lim:e}]: residual sign {} at both ends",
                if f_lo < 0.0 { "negative" } else { "positive" }
            )));
        }
        f_hi = f(hi)?;
    }
    let neg_at_lo = f(lo)? < 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid)? < 0.0) == neg_at_lo {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let root = 0.5 * (lo + hi);
    let residual = f(root)? / root;
    if residual.abs() > 1e-9 {
        return Err(Error::Solver(format!("relative residual {residual:e} at {root}")));
    }
    Ok(root)
}

/// Worst-case interference split by the class of the interferers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterferenceBound {
    pub high: f64,
    pub low: f64,
}

impl InterferenceBound {
    pub fn total(&self) -> f64 {
        self.high + self.low
    }
}

/// `Pʰ (N1 + N2)(dʰ, √2 c1 ln n) + Pˡ (N1 + N2)(dˡ, √5 c)` with `d = (P/T)^{1/α}`.
pub fn max_interference_bound(params: &PhyParams) -> Result<InterferenceBound> {
    let a = params.alpha;
    let term = |class: TxClass| -> Result<f64> {
        let d = params.sensing_radius(class, class);
        Ok(params.power(class) * unit_interference(d, params.max_range(class), a)?)
    };
    Ok(InterferenceBound { high: term(TxClass::High)?, low: term(TxClass::Low)? })
}
