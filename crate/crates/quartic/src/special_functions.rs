//! Bessel functions of order 0 and 1 on the positive real axis and the
//! Hankel amplitudes `ω±(z) = e^{∓iz} H₁^±(z)`.
//!
//! Regimes: ascending series for `x < 5` (J, Y) and `x ≤ 2` (K); Steed's
//! continued fractions for `5 ≤ x < 25` (J, Y) and `x > 2` (K); the
//! Hankel asymptotic expansion for `x ≥ 25` (J, Y).

use core::f64::consts::{FRAC_2_PI, FRAC_PI_4, PI};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

const EULER: f64 = 0.577_215_664_901_532_9;
pub const JY_SERIES_SWITCH: f64 = 5.0;
const JY_ASYMPTOTIC_SWITCH: f64 = 25.0;
pub const K_SERIES_SWITCH: f64 = 2.0;

/// Boundary-value branch of a resolvent (`+` outgoing, `−` incoming).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }
}

/// `ω₊(z)` and `ω₋(z)` at one argument.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplitudePair {
    pub z: f64,
    pub omega_plus: Complex64,
    pub omega_minus: Complex64,
}

impl AmplitudePair {
    pub fn new(z: f64) -> Result<Self> {
        Ok(AmplitudePair {
            z,
            omega_plus: hankel_amplitude(z, Branch::Plus)?,
            omega_minus: hankel_amplitude(z, Branch::Minus)?,
        })
    }
}

/// J₀, J₁, Y₀, Y₁ evaluated together.
#[derive(Clone, Copy, Debug)]
pub struct JY {
    pub j0: f64,
    pub j1: f64,
    pub y0: f64,
    pub y1: f64,
}

fn check_nonneg(x: f64, name: &str) -> Result<()> {
    if !x.is_finite() || x < 0.0 {
        return domain(format!("{name}: argument must be finite and nonnegative, got {x}"));
    }
    Ok(())
}

fn check_pos(x: f64, name: &str) -> Result<()> {
    if !x.is_finite() || x <= 0.0 {
        return domain(format!("{name}: argument must be finite and positive, got {x}"));
    }
    Ok(())
}

pub fn bessel_j1(x: f64) -> Result<f64> {
    check_nonneg(x, "bessel_j1")?;
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok(jy_unchecked(x).j1)
}

pub fn bessel_j0(x: f64) -> Result<f64> {
    check_nonneg(x, "bessel_j0")?;
    if x == 0.0 {
        return Ok(1.0);
    }
    Ok(jy_unchecked(x).j0)
}

pub fn bessel_y1(x: f64) -> Result<f64> {
    check_pos(x, "bessel_y1")?;
    Ok(jy_unchecked(x).y1)
}

pub fn bessel_y0(x: f64) -> Result<f64> {
    check_pos(x, "bessel_y0")?;
    Ok(jy_unchecked(x).y0)
}

pub fn bessel_k1(x: f64) -> Result<f64> {
    check_pos(x, "bessel_k1")?;
    Ok(k01_unchecked(x).1)
}

pub fn bessel_k0(x: f64) -> Result<f64> {
    check_pos(x, "bessel_k0")?;
    Ok(k01_unchecked(x).0)
}

/// All four of J₀, J₁, Y₀, Y₁ at `x > 0`.
pub fn bessel_jy(x: f64) -> Result<JY> {
    check_pos(x, "bessel_jy")?;
    Ok(jy_unchecked(x))
}

/// Derivatives by recurrence: J₁' = J₀ − J₁/x, Y₁' = Y₀ − Y₁/x.
pub fn bessel_j1_y1_prime(x: f64) -> Result<(f64, f64)> {
    let b = bessel_jy(x)?;
    Ok((b.j0 - b.j1 / x, b.y0 - b.y1 / x))
}

/// K₁' = −K₀ − K₁/x.
pub fn bessel_k1_prime(x: f64) -> Result<f64> {
    check_pos(x, "bessel_k1_prime")?;
    let (k0, k1) = k01_unchecked(x);
    Ok(-k0 - k1 / x)
}

/// `ω±(z) = e^{∓iz}(J₁(z) ± iY₁(z))`.
pub fn hankel_amplitude(z: f64, branch: Branch) -> Result<Complex64> {
    check_pos(z, "hankel_amplitude")?;
    let w = if z >= JY_ASYMPTOTIC_SWITCH {
        let (p, q) = hankel_pq(1.0, z);
        let amp = (FRAC_2_PI / z).sqrt();
        // e^{-3iπ/4}(P + iQ)
        Complex64::new(p, q) * Complex64::from_polar(amp, -3.0 * FRAC_PI_4)
    } else {
        let b = jy_unchecked(z);
        Complex64::new(b.j1, b.y1) * Complex64::from_polar(1.0, -z)
    };
    Ok(match branch {
        Branch::Plus => w,
        Branch::Minus => w.conj(),
    })
}

pub(crate) fn jy_unchecked(x: f64) -> JY {
    if x < JY_SERIES_SWITCH {
        jy_series(x)
    } else if x < JY_ASYMPTOTIC_SWITCH {
        jy_steed(x)
    } else {
        jy_asymptotic(x)
    }
}

fn jy_series(x: f64) -> JY {
    let y = 0.25 * x * x;
    let l = (0.5 * x).ln();
    // k-th terms: y^k/(k!)^2 and y^k/(k!(k+1)!)
    let mut t0 = 1.0;
    let mut t1 = 1.0;
    let mut h = 0.0; // harmonic number H_k
    let mut s_j0 = 0.0;
    let mut s_j1 = 0.0;
    let mut s_y0 = 0.0;
    let mut s_y1 = 0.0;
    let mut sign = 1.0;
    let mut k = 0usize;
    loop {
        let kf = k as f64;
        let p = 2.0 * h - 2.0 * EULER + 1.0 / (kf + 1.0);
        s_j0 += sign * t0;
        s_j1 += sign * t1;
        s_y0 -= sign * h * t0;
        s_y1 += sign * p * t1;
        k += 1;
        let kf = k as f64;
        t0 *= y / (kf * kf);
        t1 *= y / (kf * (kf + 1.0));
        h += 1.0 / kf;
        sign = -sign;
        if t0 * (1.0 + h.abs()) < 1e-18 * s_j0.abs().max(1e-30) && t0 < 1e-17 && k > 2 {
            break;
        }
        if k > 200 {
            break;
        }
    }
    let j0 = s_j0;
    let j1 = 0.5 * x * s_j1;
    let y0 = FRAC_2_PI * ((l + EULER) * j0 + s_y0);
    let y1 = -FRAC_2_PI / x + FRAC_2_PI * l * j1 - 0.5 * x * s_y1 / PI;
    JY { j0, j1, y0, y1 }
}

/// Steed's method with order 1 (CF1 for J₁'/J₁, CF2 for p + iq).
fn jy_steed(x: f64) -> JY {
    const FPMIN: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let nu = 1.0;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;
    let w = xi2 / PI;
    let mut isign = 1.0;
    let mut h = (nu * xi).max(FPMIN);
    let mut b = xi2 * nu;
    let mut d = 0.0;
    let mut c = h;
    for _ in 0..100_000 {
        b += xi2;
        d = b - d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b - 1.0 / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = c * d;
        h *= del;
        if d < 0.0 {
            isign = -isign;
        }
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    let f = h;
    let a0 = 0.25 - nu * nu;
    let mut a = a0;
    let mut p = -0.5 * xi;
    let mut q = 1.0;
    let br = 2.0 * x;
    let mut bi = 2.0;
    let mut fact = a * xi / (p * p + q * q);
    let mut cr = br + q * fact;
    let mut ci = bi + p * fact;
    let mut den = br * br + bi * bi;
    let mut dr = br / den;
    let mut di = -bi / den;
    let mut dlr = cr * dr - ci * di;
    let mut dli = cr * di + ci * dr;
    let mut temp = p * dlr - q * dli;
    q = p * dli + q * dlr;
    p = temp;
    for i in 2..100_000 {
        a += 2.0 * (i as f64 - 1.0);
        bi += 2.0;
        dr = a * dr + br;
        di = a * di + bi;
        if dr.abs() + di.abs() < FPMIN {
            dr = FPMIN;
        }
        fact = a / (cr * cr + ci * ci);
        cr = br + cr * fact;
        ci = bi - ci * fact;
        if cr.abs() + ci.abs() < FPMIN {
            cr = FPMIN;
        }
        den = dr * dr + di * di;
        dr /= den;
        di = -di / den;
        dlr = cr * dr - ci * di;
        dli = cr * di + ci * dr;
        temp = p * dlr - q * dli;
        q = p * dli + q * dlr;
        p = temp;
        if (dlr - 1.0).abs() + dli.abs() < EPS {
            break;
        }
    }
    let gam = (p - f) / q;
    let mut j1 = (w / ((p - f) * gam + q)).sqrt();
    if isign < 0.0 {
        j1 = -j1;
    }
    let y1 = j1 * gam;
    let j1p = f * j1;
    let y1p = y1 * (p + q / gam);
    JY { j0: j1p + j1 * xi, j1, y0: y1p + y1 * xi, y1 }
}

/// Hankel asymptotic series P(ν,x), Q(ν,x), truncated at the smallest term.
fn hankel_pq(nu: f64, x: f64) -> (f64, f64) {
    let mu = 4.0 * nu * nu;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..60 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        let next = term * (mu - odd * odd) / (kf * 8.0 * x);
        if next.abs() >= last && k > 2 {
            break;
        }
        last = next.abs();
        term = next;
        match k % 4 {
            1 => q += term,
            2 => p -= term,
            3 => q -= term,
            _ => p += term,
        }
        if term.abs() < 1e-18 {
            break;
        }
    }
    (p, q)
}

fn jy_asymptotic(x: f64) -> JY {
    let amp = (FRAC_2_PI / x).sqrt();
    let (p0, q0) = hankel_pq(0.0, x);
    let (p1, q1) = hankel_pq(1.0, x);
    let (s0, c0) = (x - FRAC_PI_4).sin_cos();
    let (s1, c1) = (x - 3.0 * FRAC_PI_4).sin_cos();
    JY {
        j0: amp * (p0 * c0 - q0 * s0),
        y0: amp * (p0 * s0 + q0 * c0),
        j1: amp * (p1 * c1 - q1 * s1),
        y1: amp * (p1 * s1 + q1 * c1),
    }
}

/// (K₀(x), K₁(x)) for `x > 0`.
pub(crate) fn k01_unchecked(x: f64) -> (f64, f64) {
    if x <= K_SERIES_SWITCH {
        k01_series(x)
    } else {
        let (k0, k1) = k01_steed_scaled(x);
        let e = (-x).exp();
        (k0 * e, k1 * e)
    }
}

/// (eˣK₀(x), eˣK₁(x)) for `x > 0`; finite for large x.
pub fn bessel_k01_scaled(x: f64) -> Result<(f64, f64)> {
    check_pos(x, "bessel_k01_scaled")?;
    Ok(if x <= K_SERIES_SWITCH {
        let (k0, k1) = k01_series(x);
        let e = x.exp();
        (k0 * e, k1 * e)
    } else {
        k01_steed_scaled(x)
    })
}

fn k01_series(x: f64) -> (f64, f64) {
    let y = 0.25 * x * x;
    let l = (0.5 * x).ln();
    let mut t0 = 1.0;
    let mut t1 = 1.0;
    let mut h = 0.0;
    let mut s_i0 = 0.0;
    let mut s_i1 = 0.0;
    let mut s_k0 = 0.0;
    let mut s_k1 = 0.0;
    let mut k = 0usize;
    loop {
        let kf = k as f64;
        let p = 2.0 * h - 2.0 * EULER + 1.0 / (kf + 1.0);
        s_i0 += t0;
        s_i1 += t1;
        s_k0 += h * t0;
        s_k1 += p * t1;
        k += 1;
        let kf = k as f64;
        t0 *= y / (kf * kf);
        t1 *= y / (kf * (kf + 1.0));
        h += 1.0 / kf;
        if t0 * (1.0 + h) < 1e-18 * s_i0 || k > 200 {
            break;
        }
    }
    let i1 = 0.5 * x * s_i1;
    let k0 = -(l + EULER) * s_i0 + s_k0;
    let k1 = 1.0 / x + l * i1 - 0.25 * x * s_k1;
    (k0, k1)
}

/// Steed's CF2 for eˣK₀ and eˣK₁ (order μ = 0, then one upward step).
fn k01_steed_scaled(x: f64) -> (f64, f64) {
    const EPS: f64 = 1e-17;
    let xi = 1.0 / x;
    let a1 = 0.25;
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..100_000 {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < EPS {
            break;
        }
    }
    h *= a1;
    let k0 = (PI / (2.0 * x)).sqrt() / s;
    let k1 = k0 * (x + 0.5 - h) * xi;
    (k0, k1)
}

/// `J_0(x)..J_nmax(x)` for `x ≥ 0`.
pub fn bessel_j_array(nmax: usize, x: f64) -> Result<Vec<f64>> {
    check_nonneg(x, "bessel_j_array")?;
    Ok(j_array_unchecked(nmax, x))
}

pub(crate) fn j_array_unchecked(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    if x > nmax as f64 {
        let b = jy_unchecked(x);
        out[0] = b.j0;
        if nmax >= 1 {
            out[1] = b.j1;
        }
        for n in 1..nmax {
            out[n + 1] = 2.0 * n as f64 / x * out[n] - out[n - 1];
        }
        return out;
    }
    // Miller: downward from an even start, normalised by J₀ + 2ΣJ_{2k} = 1
    let top = (nmax as f64).max(x);
    let mut m = (top + 20.0 + (40.0 * top).sqrt()) as usize;
    m += m % 2;
    let (mut jp, mut j) = (0.0, 1e-300);
    let mut norm = 0.0;
    for k in (1..=m).rev() {
        let jm = 2.0 * k as f64 / x * j - jp;
        jp = j;
        j = jm;
        if k - 1 <= nmax {
            out[k - 1] = j;
        }
        if (k - 1) % 2 == 0 && k > 1 {
            norm += 2.0 * j;
        }
        if j.abs() > 1e250 {
            j *= 1e-250;
            jp *= 1e-250;
            norm *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    norm += j;
    for v in out.iter_mut() {
        *v /= norm;
    }
    out
}

/// `Y_0(x)..Y_nmax(x)` for `x > 0`, by upward recurrence.
pub fn bessel_y_array(nmax: usize, x: f64) -> Result<Vec<f64>> {
    check_pos(x, "bessel_y_array")?;
    Ok(y_array_unchecked(nmax, x))
}

pub(crate) fn y_array_unchecked(nmax: usize, x: f64) -> Vec<f64> {
    let b = jy_unchecked(x);
    let mut out = vec![b.y0; nmax + 1];
    if nmax >= 1 {
        out[1] = b.y1;
    }
    for n in 1..nmax {
        out[n + 1] = 2.0 * n as f64 / x * out[n] - out[n - 1];
    }
    out
}

/// `e^{−x}I_0(x)..e^{−x}I_nmax(x)` for `x ≥ 0`.
pub fn bessel_i_scaled_array(nmax: usize, x: f64) -> Result<Vec<f64>> {
    check_nonneg(x, "bessel_i_scaled_array")?;
    Ok(i_scaled_array_unchecked(nmax, x))
}

pub(crate) fn i_scaled_array_unchecked(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    // Miller, normalised by e^{−x}(I₀ + 2ΣI_k) = 1
    let top = (nmax as f64).max(x);
    let m = (top + 20.0 + (40.0 * top).sqrt()) as usize;
    let (mut ip, mut i) = (0.0, 1e-300);
    let mut norm = 0.0;
    for k in (1..=m).rev() {
        let im = 2.0 * k as f64 / x * i + ip;
        ip = i;
        i = im;
        if k - 1 <= nmax {
            out[k - 1] = i;
        }
        if k > 1 {
            norm += 2.0 * i;
        }
        if i > 1e250 {
            i *= 1e-250;
            ip *= 1e-250;
            norm *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    norm += i;
    for v in out.iter_mut() {
        *v /= norm;
    }
    out
}

/// `eˣK_0(x)..eˣK_nmax(x)` for `x > 0`, by upward recurrence.
pub fn bessel_k_scaled_array(nmax: usize, x: f64) -> Result<Vec<f64>> {
    check_pos(x, "bessel_k_scaled_array")?;
    Ok(k_scaled_array_unchecked(nmax, x))
}

pub(crate) fn k_scaled_array_unchecked(nmax: usize, x: f64) -> Vec<f64> {
    let (k0, k1) = if x <= K_SERIES_SWITCH {
        let (k0, k1) = k01_series(x);
        let e = x.exp();
        (k0 * e, k1 * e)
    } else {
        k01_steed_scaled(x)
    };
    let mut out = vec![k0; nmax + 1];
    if nmax >= 1 {
        out[1] = k1;
    }
    for n in 1..nmax {
        out[n + 1] = out[n - 1] + 2.0 * n as f64 / x * out[n];
    }
    out
}
