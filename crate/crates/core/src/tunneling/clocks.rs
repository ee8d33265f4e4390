//! Stationary scattering off a square barrier and the traversal-time
//! clocks built on it. `T` is the transmitted amplitude at `x = d` for a
//! unit plane wave incident at `x = 0`, so `T = exp(i k d)` without a
//! barrier.

use serde::{Deserialize, Serialize};

use super::BarrierConfig;
use crate::error::{Error, Result};
use crate::model::{Units, C64};

fn check_energy(e: f64) -> Result<()> {
    if !(e > 0.0) || !e.is_finite() {
        return Err(Error::InvalidArgument(format!("energy must be > 0, got {e}")));
    }
    Ok(())
}

/// `cos(sqrt(u) d)`, `sin(sqrt(u) d) / sqrt(u)` and their `u`-derivatives,
/// analytic through `u = 0`.
struct Trig {
    c: C64,
    s: C64,
    dc: C64,
    ds: C64,
}

fn trig(u: C64, d: f64) -> Trig {
    let z = u * d * d;
    if z.norm() < 1e-2 {
        // c = sum (-1)^n z^n / (2n)!, s = d sum (-1)^n z^n / (2n+1)!,
        // ds/du = d^3 sum_{n>=1} (-1)^n n z^(n-1) / (2n+1)!
        let mut c = C64::new(0.0, 0.0);
        let mut s = C64::new(0.0, 0.0);
        let mut ds = C64::new(0.0, 0.0);
        let mut zn = C64::new(1.0, 0.0);
        let mut zprev = C64::new(0.0, 0.0);
        let mut fact = 1.0; // (2n)!
        for n in 0..10 {
            let nf = n as f64;
            if n > 0 {
                fact *= (2.0 * nf - 1.0) * (2.0 * nf);
            }
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let odd = fact * (2.0 * nf + 1.0);
            c += zn * (sign / fact);
            s += zn * (sign * d / odd);
            ds += zprev * (sign * nf * d * d * d / odd);
            zprev = zn;
            zn *= z;
        }
        let dc = -s * (d / 2.0);
        Trig { c, s, dc, ds }
    } else {
        let q = u.sqrt();
        let c = (q * d).cos();
        let s = (q * d).sin() / q;
        let dc = -s * (d / 2.0);
        let ds = (c * d - s) / (u * 2.0);
        Trig { c, s, dc, ds }
    }
}

/// `D` with `T = 1 / D`, plus `dD/dE` and `dD/dV0`.
struct Denominator {
    d: C64,
    d_e: C64,
    d_v: C64,
    refl_num: C64,
}

fn denominator(e: f64, b: &BarrierConfig, units: Units) -> Denominator {
    let c0 = units.kinetic;
    let k = (e / c0).sqrt();
    let u = C64::new((e - b.v0) / c0, 0.0);
    let t = if b.d == 0.0 {
        Trig {
            c: C64::new(1.0, 0.0),
            s: C64::new(0.0, 0.0),
            dc: C64::new(0.0, 0.0),
            ds: C64::new(0.0, 0.0),
        }
    } else {
        trig(u, b.d)
    };
    let i = C64::new(0.0, 1.0);
    let k2 = k * k;
    // D = C - i (k^2 + u) S / (2k)
    let d = t.c - i * (u + k2) * t.s / (2.0 * k);
    // E-derivative: du/dE = dk^2/dE = 1/c0, dk/dE = 1/(2 c0 k)
    let d_e = t.dc / c0
        - i * ((2.0 / c0) * t.s / (2.0 * k) + (u + k2) * t.ds / (c0 * 2.0 * k)
            - (u + k2) * t.s / (2.0 * k2) / (2.0 * c0 * k));
    // V0-derivative: du/dV0 = -1/c0
    let d_v = -t.dc / c0 - i * (-(1.0 / c0) * t.s / (2.0 * k) - (u + k2) * t.ds / (c0 * 2.0 * k));
    let refl_num = i * (u - k2) * t.s / (2.0 * k);
    Denominator { d, d_e, d_v, refl_num }
}

/// Transmitted amplitude `T(E)`.
pub fn transmission_amplitude(e: f64, b: &BarrierConfig, units: Units) -> Result<C64> {
    check_energy(e)?;
    Ok(1.0 / denominator(e, b, units).d)
}

/// Reflected amplitude `R(E)` at `x = 0`.
pub fn reflection_amplitude(e: f64, b: &BarrierConfig, units: Units) -> Result<C64> {
    check_energy(e)?;
    let den = denominator(e, b, units);
    Ok(den.refl_num / den.d)
}

pub fn velocity(e: f64, units: Units) -> f64 {
    units.velocity(units.wave_number(e))
}

/// `hbar d(arg T)/dE` (fs), analytic.
pub fn phase_delay(e: f64, b: &BarrierConfig, units: Units) -> Result<f64> {
    check_energy(e)?;
    let den = denominator(e, b, units);
    Ok(-units.hbar * (den.d_e / den.d).im)
}

/// `(d arg T/dV0, d ln|T|/dV0)` in 1/eV, analytic.
pub fn v0_derivatives(e: f64, b: &BarrierConfig, units: Units) -> Result<(f64, f64)> {
    check_energy(e)?;
    let den = denominator(e, b, units);
    let r = den.d_v / den.d;
    Ok((-r.im, -r.re))
}

fn free_outside(e: f64, b: &BarrierConfig, x1: f64, x2: f64, units: Units) -> Result<f64> {
    if !(x1 <= 0.0 && x2 >= b.d) {
        return Err(Error::InvalidArgument(format!(
            "interval [{x1}, {x2}] must enclose the barrier [0, {}]",
            b.d
        )));
    }
    Ok((x2 - x1 - b.d) / velocity(e, units))
}

/// Phase time over `[x1, x2]`: the barrier's phase delay plus free flight
/// over the rest of the interval.
pub fn phase_time(e: f64, b: &BarrierConfig, x1: f64, x2: f64, units: Units) -> Result<f64> {
    Ok(phase_delay(e, b, units)? + free_outside(e, b, x1, x2, units)?)
}

/// Classical flight over `[x1, x2]`; inside the barrier at the local
/// speed `hbar q / m` above the barrier, or `m d / (hbar kappa)` below it.
pub fn semiclassical_time(e: f64, b: &BarrierConfig, x1: f64, x2: f64, units: Units) -> Result<f64> {
    check_energy(e)?;
    let outside = free_outside(e, b, x1, x2, units)?;
    if b.d == 0.0 || b.v0 == 0.0 {
        return Ok(outside + b.d / velocity(e, units));
    }
    let gap = e - b.v0;
    if gap.abs() <= 1e-12 * e.max(b.v0.abs()) {
        return Err(Error::InvalidArgument(format!(
            "semiclassical time diverges at E = V0 = {e}"
        )));
    }
    let q = (gap.abs() / units.kinetic).sqrt();
    Ok(outside + b.d / units.velocity(q))
}

/// Büttiker–Larmor time of the barrier region `[0, d]`.
pub fn buttiker_larmor_time(e: f64, b: &BarrierConfig, units: Units) -> Result<f64> {
    let (dphi, dlog) = v0_derivatives(e, b, units)?;
    let ty = -units.hbar * dphi;
    let tz = -units.hbar * dlog;
    Ok(ty.hypot(tz))
}

/// Büttiker–Larmor time plus free flight over the rest of `[x1, x2]`.
pub fn buttiker_larmor_interval(
    e: f64,
    b: &BarrierConfig,
    x1: f64,
    x2: f64,
    units: Units,
) -> Result<f64> {
    Ok(buttiker_larmor_time(e, b, units)? + free_outside(e, b, x1, x2, units)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `|phi(k)|^2`
    Momentum,
    /// `|T(k) phi(k)|^2`
    Transmitted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketAverage {
    pub value: f64,
    /// Weight share of quadrature nodes where the clock was undefined and
    /// which were left out (renormalized over the rest).
    pub excluded_weight: f64,
}

/// Average of `clock(E)` over a Gaussian packet with mean energy `e0` and
/// position spread `eta` (momentum spread `1 / (2 eta)`). Nodes within
/// `exclusion` eV of a point where the clock fails are dropped.
pub fn packet_average(
    clock: impl Fn(f64) -> Result<f64>,
    e0: f64,
    eta: f64,
    weighting: Weighting,
    barrier: &BarrierConfig,
    units: Units,
    exclusion: f64,
) -> Result<PacketAverage> {
    check_energy(e0)?;
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("eta must be > 0, got {eta}")));
    }
    let k0 = units.wave_number(e0);
    let sk = 1.0 / (2.0 * eta);
    let lo = (k0 - 8.0 * sk).max(1e-6 * k0);
    let hi = k0 + 8.0 * sk;
    let n = 4001;
    let h = (hi - lo) / (n - 1) as f64;
    let (mut num, mut den, mut dropped) = (0.0, 0.0, 0.0);
    for j in 0..n {
        let k = lo + j as f64 * h;
        let simpson = if j == 0 || j == n - 1 {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let e = units.kinetic * k * k;
        let mut w = simpson * (-(k - k0).powi(2) / (2.0 * sk * sk)).exp();
        if weighting == Weighting::Transmitted {
            w *= transmission_amplitude(e, barrier, units)?.norm_sqr();
        }
        den += w;
        let near = (e - barrier.v0).abs() < exclusion;
        match (near, clock(e)) {
            (false, Ok(v)) if v.is_finite() => num += w * v,
            _ => dropped += w,
        }
    }
    if !(den > 0.0) || dropped >= den {
        return Err(Error::InvalidArgument("packet weight vanishes".into()));
    }
    Ok(PacketAverage {
        value: num / (den - dropped),
        excluded_weight: dropped / den,
    })
}
