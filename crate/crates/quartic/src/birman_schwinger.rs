//! Birman–Schwinger operators `U + v K v` on a grid, their inversion, and
//! perturbed resolvent kernels via the symmetric resolvent identity.

use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::discretization::{
    nystrom_matrix, sector_reduce_all, Grid, Kernel, OperatorMatrix, PointCloud, RadialSectorGrid, SingularityPolicy,
};
use crate::error::{QuarticError, Result};
use crate::special_functions::Branch;
use crate::free_kernels::{
    expansion_remainder, fourth_order_resolvent, ExpansionCoefficients, SpectralPoint,
};

/// Shape of `V` up to the overall amplitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialFamily {
    /// `exp(−|x−c|²/w²)`.
    GaussianBump {
        width: f64,
        #[serde(default)]
        center: [f64; 4],
    },
    /// `exp(1 − 1/(1 − |x−c|²/R²))` inside the ball of radius `R`, zero outside.
    CompactBump {
        radius: f64,
        #[serde(default)]
        center: [f64; 4],
    },
    /// `⟨x⟩^{−β}`, `β > 4`.
    InversePower { beta: f64 },
    /// `exp(−|x|²/w²)(1 + δ·tanh(x₁/w))`, `|δ| < 1`.
    SectorModulated { width: f64, depth: f64 },
    /// `V = −Δ²ψ/ψ` for `ψ = H_ℓ(x)⟨x⟩^{−p}`; see [`PsiFamily`].
    InverseConstructed { ell: usize, exponent: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignPattern {
    Zero,
    Nonnegative,
    Nonpositive,
    Indefinite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub family: PotentialFamily,
    /// Coupling multiplying the family profile.
    pub amplitude: f64,
}

/// `ψ = H_ℓ(x)⟨x⟩^{−p}` with `H_0 = 1, H_1 = x₁, H_2 = x₁x₂, H_3 = x₁x₂x₃`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiFamily {
    pub ell: usize,
    pub exponent: f64,
}

/// Representative harmonic polynomial of degree `ell ≤ 3`.
pub fn harmonic_polynomial(ell: usize, x: &[f64; 4]) -> f64 {
    match ell {
        0 => 1.0,
        1 => x[0],
        2 => x[0] * x[1],
        _ => x[0] * x[1] * x[2],
    }
}

/// `∫_{S³} H_ℓ(ω)² dω`.
pub fn harmonic_norm_sq(ell: usize) -> f64 {
    let s3 = 2.0 * PI * PI;
    match ell {
        0 => s3,
        1 => s3 / 4.0,
        2 => s3 / 24.0,
        _ => s3 / 192.0,
    }
}

impl PsiFamily {
    pub fn validate(&self) -> Result<()> {
        if self.ell > 3 {
            return Err(QuarticError::Construction(format!("harmonic degree {} not available (0..=3)", self.ell)));
        }
        if !(self.exponent.is_finite() && self.exponent > 0.0) {
            return Err(QuarticError::Construction(format!("psi exponent must be positive, got {}", self.exponent)));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64; 4]) -> f64 {
        let r2: f64 = x.iter().map(|c| c * c).sum();
        harmonic_polynomial(self.ell, x) * (1.0 + r2).powf(-0.5 * self.exponent)
    }

    /// `(c₂, c₃, c₄)` with `V = −16[c₂u⁻² − c₃u⁻³ + c₄u⁻⁴]`, `u = 1 + |x|²`.
    pub fn potential_coefficients(&self) -> [f64; 3] {
        let a = 0.5 * self.exponent;
        let n = 2.0 + self.ell as f64;
        [
            a * (a + 1.0) * (a + 1.0 - n) * (a + 2.0 - n),
            2.0 * a * (a + 1.0) * (a + 2.0) * (a + 2.0 - n),
            a * (a + 1.0) * (a + 2.0) * (a + 3.0),
        ]
    }

    /// `−Δ²ψ/ψ` as a function of `|x|`.
    pub fn potential(&self, r: f64) -> f64 {
        let [c2, c3, c4] = self.potential_coefficients();
        let w = 1.0 / (1.0 + r * r);
        -16.0 * w * w * (c2 - c3 * w + c4 * w * w)
    }

    /// Leading power of `|x|` in `ψ` at infinity.
    pub fn tail_exponent(&self) -> f64 {
        self.ell as f64 - self.exponent
    }
}

impl PotentialSpec {
    pub fn new(family: PotentialFamily, amplitude: f64) -> Result<Self> {
        let p = PotentialSpec { family, amplitude };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(QuarticError::Config(m));
        if !self.amplitude.is_finite() {
            return bad(format!("potential amplitude must be finite, got {}", self.amplitude));
        }
        match &self.family {
            PotentialFamily::GaussianBump { width, center } => {
                if !(width.is_finite() && *width > 0.0) || center.iter().any(|c| !c.is_finite()) {
                    return bad("gaussian-bump needs a positive width and a finite center".into());
                }
            }
            PotentialFamily::CompactBump { radius, center } => {
                if !(radius.is_finite() && *radius > 0.0) || center.iter().any(|c| !c.is_finite()) {
                    return bad("compact-bump needs a positive radius and a finite center".into());
                }
            }
            PotentialFamily::InversePower { beta } => {
                if !(beta.is_finite() && *beta > 4.0) {
                    return bad(format!("inverse-power needs beta > 4, got {beta}"));
                }
            }
            PotentialFamily::SectorModulated { width, depth } => {
                if !(width.is_finite() && *width > 0.0) || !(depth.abs() < 1.0) {
                    return bad("sector-modulated needs a positive width and |depth| < 1".into());
                }
            }
            PotentialFamily::InverseConstructed { ell, exponent } => {
                PsiFamily { ell: *ell, exponent: *exponent }.validate()?;
            }
        }
        Ok(())
    }

    /// Profile without the amplitude.
    pub fn profile(&self, x: &[f64; 4]) -> f64 {
        let dist2 = |c: &[f64; 4]| -> f64 { (0..4).map(|k| (x[k] - c[k]).powi(2)).sum() };
        match &self.family {
            PotentialFamily::GaussianBump { width, center } => (-dist2(center) / (width * width)).exp(),
            PotentialFamily::CompactBump { radius, center } => {
                let t = dist2(center) / (radius * radius);
                if t >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - t)).exp()
                }
            }
            PotentialFamily::InversePower { beta } => (1.0 + dist2(&[0.0; 4])).powf(-0.5 * beta),
            PotentialFamily::SectorModulated { width, depth } => {
                (-dist2(&[0.0; 4]) / (width * width)).exp() * (1.0 + depth * (x[0] / width).tanh())
            }
            PotentialFamily::InverseConstructed { ell, exponent } => {
                PsiFamily { ell: *ell, exponent: *exponent }.potential(dist2(&[0.0; 4]).sqrt())
            }
        }
    }

    pub fn eval(&self, x: &[f64; 4]) -> f64 {
        self.amplitude * self.profile(x)
    }

    pub fn is_radial(&self) -> bool {
        match &self.family {
            PotentialFamily::GaussianBump { center, .. } | PotentialFamily::CompactBump { center, .. } => {
                center.iter().all(|c| *c == 0.0)
            }
            PotentialFamily::SectorModulated { depth, .. } => *depth == 0.0,
            _ => true,
        }
    }

    /// `V(|x| = r)` for radial potentials.
    pub fn eval_radial(&self, r: f64) -> Option<f64> {
        if self.is_radial() {
            Some(self.eval(&[r, 0.0, 0.0, 0.0]))
        } else {
            None
        }
    }

    pub fn sign_pattern(&self) -> SignPattern {
        if self.amplitude == 0.0 {
            return SignPattern::Zero;
        }
        let profile_nonneg = match &self.family {
            PotentialFamily::InverseConstructed { ell, exponent } => {
                let [c2, c3, c4] = PsiFamily { ell: *ell, exponent: *exponent }.potential_coefficients();
                // sign of −(c₂ − c₃w + c₄w²) over w ∈ (0, 1]
                let q = |w: f64| c2 - c3 * w + c4 * w * w;
                let mut lo = q(1e-12).min(q(1.0));
                let mut hi = q(1e-12).max(q(1.0));
                if c4 != 0.0 {
                    let w = c3 / (2.0 * c4);
                    if w > 0.0 && w < 1.0 {
                        lo = lo.min(q(w));
                        hi = hi.max(q(w));
                    }
                }
                if lo >= 0.0 {
                    Some(false)
                } else if hi <= 0.0 {
                    Some(true)
                } else {
                    None
                }
            }
            _ => Some(true),
        };
        match profile_nonneg {
            None => SignPattern::Indefinite,
            Some(nonneg) => {
                if nonneg == (self.amplitude > 0.0) {
                    SignPattern::Nonnegative
                } else {
                    SignPattern::Nonpositive
                }
            }
        }
    }
}

/// Owned grid for a [`BSContext`].
#[derive(Clone, Debug)]
pub enum GridData {
    Full(PointCloud),
    Sector(RadialSectorGrid),
}

impl GridData {
    pub fn view(&self) -> Grid<'_> {
        match self {
            GridData::Full(c) => Grid::Full(c),
            GridData::Sector(s) => Grid::Sector(s),
        }
    }
}

/// Discretised `v = |V|^{1/2}`, `U = sign V`, `P`, `Q` on a fixed grid.
#[derive(Clone, Debug)]
pub struct BSContext {
    pub grid: GridData,
    pub potential: PotentialSpec,
    pub v: Vec<f64>,
    /// `sign V`, with `+1` where `V = 0`.
    pub u: Vec<f64>,
    pub norm_v1: f64,
    /// Basis coordinates of `v` (`|ṽ|² = ‖V‖₁`); zero in sectors `ℓ ≥ 1`.
    pub vtilde: DVector<f64>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl BSContext {
    pub fn new(grid: GridData, potential: PotentialSpec) -> Result<Self> {
        potential.validate()?;
        let values: Vec<f64> = match &grid {
            GridData::Full(c) => c.nodes.iter().map(|x| potential.eval(x)).collect(),
            GridData::Sector(s) => {
                if !potential.is_radial() {
                    return Err(QuarticError::Config("sector grids need a radial potential".into()));
                }
                s.rnodes.iter().map(|&r| potential.eval_radial(r).unwrap_or(0.0)).collect()
            }
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(QuarticError::Config("potential is not finite on every node".into()));
        }
        let v: Vec<f64> = values.iter().map(|x| x.abs().sqrt()).collect();
        let u: Vec<f64> = values.iter().map(|&x| if x < 0.0 { -1.0 } else { 1.0 }).collect();
        let w = grid.view().weights().to_vec();
        let n = v.len();
        let (norm_v1, vtilde) = match &grid {
            GridData::Full(_) => {
                let vt = DVector::from_fn(n, |i, _| w[i].sqrt() * v[i]);
                (vt.norm_squared(), vt)
            }
            GridData::Sector(s) => {
                let s3 = 2.0 * PI * PI;
                let norm: f64 = s3 * (0..n).map(|i| w[i] * v[i] * v[i]).sum::<f64>();
                let vt = if s.ell == 0 {
                    DVector::from_fn(n, |i, _| s3.sqrt() * w[i].sqrt() * v[i])
                } else {
                    DVector::zeros(n)
                };
                (norm, vt)
            }
        };
        let p = if vtilde.norm_squared() > 0.0 {
            let e = &vtilde / vtilde.norm();
            &e * e.transpose()
        } else {
            DMatrix::zeros(n, n)
        };
        let q = DMatrix::identity(n, n) - &p;
        Ok(BSContext { grid, potential, v, u, norm_v1, vtilde, p, q })
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn grid(&self) -> Grid<'_> {
        self.grid.view()
    }

    pub fn ell(&self) -> Option<usize> {
        match &self.grid {
            GridData::Full(_) => None,
            GridData::Sector(s) => Some(s.ell),
        }
    }

    /// Diagonal handling used for every operator on this context.
    pub fn policy(&self) -> SingularityPolicy {
        match &self.grid {
            GridData::Full(_) => SingularityPolicy::CellAverage,
            GridData::Sector(_) => SingularityPolicy::Direct,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.v.iter().all(|&x| x == 0.0)
    }

    /// `v K v` in the Nyström basis.
    pub fn sandwich(&self, kernel: &Kernel, policy: SingularityPolicy) -> Result<OperatorMatrix> {
        nystrom_matrix(kernel, self.grid(), &self.v, &self.v, policy)
    }

    /// `√w_i v_i`, the weights that turn node samples of `K(x, ·)` into the
    /// vector `v K(x, ·)` in the Nyström basis.
    pub fn sqrt_wv(&self) -> Vec<f64> {
        self.grid().weights().iter().zip(&self.v).map(|(w, v)| w.sqrt() * v).collect()
    }
}

/// Real part of an operator known to be real.
pub fn real_part(m: &OperatorMatrix) -> DMatrix<f64> {
    m.entries.map(|z| z.re)
}

/// `T = U + vG₁v`.
#[allow(non_snake_case)]
pub fn assemble_T(ctx: &BSContext) -> Result<OperatorMatrix> {
    if ctx.is_degenerate() {
        return Err(QuarticError::DegeneratePotential);
    }
    let mut t = ctx.sandwich(&Kernel::G(1), ctx.policy())?;
    for (i, u) in ctx.u.iter().enumerate() {
        t.entries[(i, i)] += *u;
    }
    // symmetrise away rounding in the kernel evaluation order
    let adj = t.entries.adjoint();
    t.entries = (&t.entries + adj) * Complex64::new(0.5, 0.0);
    Ok(t)
}

/// `M^±(λ) = U + vR^±(λ⁴)v`; the minus branch is the conjugate of the plus branch.
#[allow(non_snake_case)]
pub fn assemble_M(ctx: &BSContext, sp: SpectralPoint) -> Result<OperatorMatrix> {
    if ctx.is_degenerate() {
        return Err(QuarticError::DegeneratePotential);
    }
    let plus = SpectralPoint { lambda: sp.lambda, branch: Branch::Plus };
    let mut m = ctx.sandwich(&Kernel::Fourth(plus), ctx.policy())?;
    for (i, u) in ctx.u.iter().enumerate() {
        m.entries[(i, i)] += *u;
    }
    let tr = m.entries.transpose();
    m.entries = (&m.entries + tr) * Complex64::new(0.5, 0.0);
    Ok(if sp.branch == Branch::Minus { m.conj() } else { m })
}

/// Truncation levels of the low-energy expansion of `M^±(λ)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpansionLevel {
    /// `g̃₁‖V‖₁P + T`.
    Leading,
    /// adds `c^±λ² vG₂v`.
    Second,
    /// adds `g̃₃ vG₄v + λ⁴ vG₅v`.
    Fourth,
}

impl ExpansionLevel {
    fn nterms(self) -> usize {
        match self {
            ExpansionLevel::Leading => 2,
            ExpansionLevel::Second => 3,
            ExpansionLevel::Fourth => 5,
        }
    }
}

/// The expansion of `M^±(λ)` truncated at `level`.
pub fn m_expansion(ctx: &BSContext, sp: SpectralPoint, level: ExpansionLevel) -> Result<OperatorMatrix> {
    let coef = ExpansionCoefficients::frozen();
    let mut m = assemble_T(ctx)?;
    let g1 = coef.g_tilde(1, sp)? * ctx.norm_v1;
    m.entries += ctx.p.map(|x| g1 * x);
    let lam2 = sp.lambda * sp.lambda;
    let policy = ctx.policy();
    if level != ExpansionLevel::Leading {
        m.entries += ctx.sandwich(&Kernel::G(2), policy)?.entries * (coef.c(sp.branch) * lam2);
    }
    if level == ExpansionLevel::Fourth {
        m.entries += ctx.sandwich(&Kernel::G(4), policy)?.entries * coef.g_tilde(3, sp)?;
        m.entries += ctx.sandwich(&Kernel::G(5), policy)?.entries * Complex64::new(lam2 * lam2, 0.0);
    }
    Ok(m)
}

/// `M^±(λ) − m_expansion(level)`, assembled directly from the kernel
/// remainder so that it stays accurate far below f64 rounding of `M`.
pub fn m_expansion_remainder(ctx: &BSContext, sp: SpectralPoint, level: ExpansionLevel) -> Result<OperatorMatrix> {
    let n = level.nterms();
    let kernel = Kernel::custom(move |r| expansion_remainder(sp, r, n).unwrap_or(Complex64::new(0.0, 0.0)), false);
    let policy = match &ctx.grid {
        GridData::Full(_) => SingularityPolicy::CellAverage,
        GridData::Sector(_) => SingularityPolicy::Direct,
    };
    // the remainder vanishes at r = 0, so its ball average needs no special care
    ctx.sandwich(&kernel, policy)
}

fn inverse(m: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| QuarticError::Numerical("matrix is singular to working precision".into()))
}

/// Jensen–Nenciu inversion `M⁻¹ = (M+S)⁻¹ + (M+S)⁻¹ S B⁻¹ S (M+S)⁻¹`,
/// `B = S − S(M+S)⁻¹S` inverted on `range(S)`.
pub fn jn_invert(m: &DMatrix<Complex64>, s: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let n = m.nrows();
    if m.ncols() != n || s.nrows() != n || s.ncols() != n {
        return Err(QuarticError::Domain("jn_invert: shape mismatch".into()));
    }
    let a = m + s;
    let sv = a.clone().singular_values();
    let smax = sv.max();
    if !(sv.min() > 1e-13 * smax) {
        return Err(QuarticError::Numerical(format!("jn_invert: M + S is not invertible (sigma_min {:e})", sv.min())));
    }
    let ainv = inverse(&a)?;
    if s.norm() == 0.0 {
        return Ok(ainv);
    }
    let eig = s.clone().symmetric_eigen();
    let cols: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > 0.5).collect();
    let e = DMatrix::from_fn(n, cols.len(), |i, j| eig.eigenvectors[(i, cols[j])]);
    let b = DMatrix::<Complex64>::identity(cols.len(), cols.len()) - e.adjoint() * &ainv * &e;
    let bs = b.clone().singular_values();
    let bmin = bs.min();
    if !(bmin > 1e-12 * bs.max().max(1.0)) {
        return Err(QuarticError::NotInvertible { sigma_min: bmin });
    }
    let binv = inverse(&b)?;
    let left = &ainv * &e;
    let right = e.adjoint() * &ainv;
    Ok(&ainv + left * binv * right)
}

/// Which `T` the Feshbach parts were built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeshbachVariant {
    /// `T`, zero regular.
    Regular,
    /// `T + S₁`, used to invert `M + S₁`.
    ShiftedByS1,
}

/// λ-independent parts of `h_±(λ)⁻¹S + QD₀Q`.
#[derive(Clone, Debug)]
pub struct FeshbachParts {
    pub variant: FeshbachVariant,
    /// `trace(PTP − PTQD₀QTP)`.
    pub trace_part: f64,
    pub s: DMatrix<f64>,
    pub qd0q: DMatrix<f64>,
}

/// `Q(QTQ + P)⁻¹Q`, the inverse of `QTQ` on `range(Q)`.
pub fn q_inverse(ctx: &BSContext, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let qtq = &ctx.q * t * &ctx.q + &ctx.p;
    let inv = qtq
        .try_inverse()
        .ok_or_else(|| QuarticError::NotInvertible { sigma_min: 0.0 })?;
    Ok(&ctx.q * inv * &ctx.q)
}

/// `S = (I − DT)P(I − TD)` with `D = QD₀Q`, and the trace term of `h`.
pub fn feshbach_parts(ctx: &BSContext, t: &DMatrix<f64>, qd0q: &DMatrix<f64>, variant: FeshbachVariant) -> FeshbachParts {
    let n = ctx.len();
    let id = DMatrix::<f64>::identity(n, n);
    let left = &id - qd0q * t;
    let right = &id - t * qd0q;
    let s = &left * &ctx.p * &right;
    let ptp = &ctx.p * t * &ctx.p;
    let corr = &ctx.p * t * qd0q * t * &ctx.p;
    FeshbachParts { variant, trace_part: (ptp - corr).trace(), s, qd0q: qd0q.clone() }
}

impl FeshbachParts {
    /// `h_±(λ) = ‖V‖₁ g̃₁^±(λ) + trace(PTP − PTQD₀QTP)`.
    pub fn h(&self, ctx: &BSContext, sp: SpectralPoint) -> Result<Complex64> {
        Ok(ExpansionCoefficients::frozen().g_tilde(1, sp)? * ctx.norm_v1 + self.trace_part)
    }

    /// `h_±(λ)⁻¹S + QD₀Q`.
    pub fn inverse(&self, ctx: &BSContext, sp: SpectralPoint) -> Result<DMatrix<Complex64>> {
        let hinv = Complex64::new(1.0, 0.0) / self.h(ctx, sp)?;
        Ok(DMatrix::from_fn(self.s.nrows(), self.s.ncols(), |i, j| hinv * self.s[(i, j)] + self.qd0q[(i, j)]))
    }
}

/// Options for perturbed-resolvent solves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Shift `εI` added to `M` (decay experiments only).
    pub tikhonov: f64,
    /// Largest admissible `σ_max/σ_min` of `M`.
    pub cond_limit: f64,
    pub check_condition: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tikhonov: 0.0, cond_limit: 1e12, check_condition: true }
    }
}

/// Factorised `M^±(λ)` on one context.
pub struct ResolventSolve<'a> {
    ctx: &'a BSContext,
    pub sp: SpectralPoint,
    lu: nalgebra::linalg::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub regularized: bool,
}

impl<'a> ResolventSolve<'a> {
    pub fn new(ctx: &'a BSContext, sp: SpectralPoint, opts: SolveOptions) -> Result<Self> {
        let mut m = assemble_M(ctx, sp)?.entries;
        let regularized = opts.tikhonov > 0.0;
        if regularized {
            for i in 0..m.nrows() {
                m[(i, i)] += opts.tikhonov;
            }
        }
        let (mut smin, mut smax) = (f64::NAN, f64::NAN);
        if opts.check_condition {
            let sv = m.clone().singular_values();
            smin = sv.min();
            smax = sv.max();
            if !(smin * opts.cond_limit > smax) {
                return Err(QuarticError::NearThreshold { lambda: sp.lambda, sigma_min: smin });
            }
        }
        let lu = m.lu();
        Ok(ResolventSolve { ctx, sp, lu, sigma_min: smin, sigma_max: smax, regularized })
    }

    /// `v R(·, x)` in the Nyström basis (full cloud; `x` off the nodes).
    pub fn probe(&self, x: &[f64; 4]) -> Result<DVector<Complex64>> {
        let GridData::Full(cloud) = &self.ctx.grid else {
            return Err(QuarticError::Config("probe: use probe_radial on sector contexts".into()));
        };
        let sw = self.ctx.sqrt_wv();
        let mut out = DVector::zeros(cloud.len());
        for (i, y) in cloud.nodes.iter().enumerate() {
            if sw[i] == 0.0 {
                continue;
            }
            let d = dist(x, y);
            if d == 0.0 {
                return Err(QuarticError::SingularDiagonal);
            }
            out[i] = fourth_order_resolvent(self.sp, d)? * sw[i];
        }
        Ok(out)
    }

    /// Sector analogue of [`Self::probe`]: `√w_i v_i k_ℓ(r, r_i)`.
    pub fn probe_radial(&self, r: f64) -> Result<DVector<Complex64>> {
        let GridData::Sector(sg) = &self.ctx.grid else {
            return Err(QuarticError::Config("probe_radial needs a sector context".into()));
        };
        let sw = self.ctx.sqrt_wv();
        let kern = Kernel::Fourth(self.sp);
        let mut out = DVector::zeros(sg.len());
        for (i, &ri) in sg.rnodes.iter().enumerate() {
            if sw[i] == 0.0 {
                continue;
            }
            out[i] = sector_reduce_all(&kern, sg.ell, r, ri)?[sg.ell] * sw[i];
        }
        Ok(out)
    }

    /// `b_xᵀ M⁻¹ b_y`.
    pub fn correction(&self, bx: &DVector<Complex64>, by: &DVector<Complex64>) -> Result<Complex64> {
        let z = self
            .lu
            .solve(by)
            .ok_or_else(|| QuarticError::Numerical("M is singular to working precision".into()))?;
        Ok(bx.iter().zip(z.iter()).map(|(a, b)| a * b).sum())
    }

    /// `R_V^±(λ⁴)(x, y)` on a full-cloud context, `x ≠ y`.
    pub fn kernel(&self, x: &[f64; 4], y: &[f64; 4]) -> Result<Complex64> {
        let d = dist(x, y);
        let free = fourth_order_resolvent(self.sp, d)?;
        Ok(free - self.correction(&self.probe(x)?, &self.probe(y)?)?)
    }
}

fn dist(x: &[f64; 4], y: &[f64; 4]) -> f64 {
    (0..4).map(|k| (x[k] - y[k]).powi(2)).sum::<f64>().sqrt()
}

/// `R_V^±(λ⁴)(x, y)` by one dense solve (full-cloud context).
pub fn perturbed_resolvent(ctx: &BSContext, sp: SpectralPoint, x: &[f64; 4], y: &[f64; 4]) -> Result<Complex64> {
    ResolventSolve::new(ctx, sp, SolveOptions::default())?.kernel(x, y)
}

/// `(1/2πi)(R⁺ − R⁻)(λ⁴)` of the free kernel at distance `d`, which is real.
pub fn free_stone_density(lambda: f64, d: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(QuarticError::Domain(format!("stone density needs lambda > 0, got {lambda}")));
    }
    if d == 0.0 {
        return Ok(1.0 / (32.0 * PI * PI));
    }
    Ok(fourth_order_resolvent(SpectralPoint::plus(lambda)?, d)?.im / PI)
}

/// `(1/2πi)[R_V⁺ − R_V⁻](λ⁴)(x, y)` on a full-cloud context, from both branches.
pub fn stone_density(ctx: &BSContext, lambda: f64, x: &[f64; 4], y: &[f64; 4]) -> Result<Complex64> {
    let plus = ResolventSolve::new(ctx, SpectralPoint::plus(lambda)?, SolveOptions::default())?;
    let minus = ResolventSolve::new(ctx, SpectralPoint::minus(lambda)?, SolveOptions::default())?;
    let cp = plus.correction(&plus.probe(x)?, &plus.probe(y)?)?;
    let cm = minus.correction(&minus.probe(x)?, &minus.probe(y)?)?;
    let jump = Complex64::new(free_stone_density(lambda, dist(x, y))?, 0.0);
    Ok(jump - (cp - cm) / Complex64::new(0.0, 2.0 * PI))
}

/// Chebyshev polynomials of the second kind `U_0(c) … U_lmax(c)`.
pub fn chebyshev_u(lmax: usize, c: f64) -> Vec<f64> {
    let mut u = vec![1.0; lmax + 1];
    if lmax >= 1 {
        u[1] = 2.0 * c;
    }
    for l in 2..=lmax {
        u[l] = 2.0 * c * u[l - 1] - u[l - 2];
    }
    u
}

/// Radial potential acting on the sectors `ℓ = 0..=lmax`; the perturbed
/// kernel is the free kernel minus the sum of sector corrections.
#[derive(Clone, Debug)]
pub struct SectorStack {
    pub ctxs: Vec<BSContext>,
}

impl SectorStack {
    pub fn new(potential: PotentialSpec, lmax: usize, nr: usize, rmax: f64) -> Result<Self> {
        let ctxs = (0..=lmax)
            .map(|l| {
                let g = crate::discretization::build_sector_grid(l, nr, rmax)?;
                BSContext::new(GridData::Sector(g), potential.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SectorStack { ctxs })
    }

    pub fn lmax(&self) -> usize {
        self.ctxs.len() - 1
    }

    /// `R_V^±(λ⁴)(x, y)` for several point pairs at one spectral point.
    pub fn resolvent_many(
        &self,
        sp: SpectralPoint,
        pairs: &[([f64; 4], [f64; 4])],
        opts: SolveOptions,
    ) -> Result<Vec<Complex64>> {
        let mut out: Vec<Complex64> = pairs
            .iter()
            .map(|(x, y)| {
                let d = dist(x, y);
                if d == 0.0 {
                    Err(QuarticError::SingularDiagonal)
                } else {
                    fourth_order_resolvent(sp, d)
                }
            })
            .collect::<Result<_>>()?;
        self.subtract_corrections(sp, pairs, opts, &mut out)?;
        Ok(out)
    }

    /// `(1/2πi)[R_V⁺ − R_V⁻](λ⁴)(x, y)` for several point pairs.
    ///
    /// For real `V` the minus branch is the conjugate of the plus branch, so
    /// only the plus branch is solved and the density is `Im R_V⁺ / π`.
    pub fn stone_density_many(&self, lambda: f64, pairs: &[([f64; 4], [f64; 4])], opts: SolveOptions) -> Result<Vec<f64>> {
        let sp = SpectralPoint::plus(lambda)?;
        let mut out: Vec<Complex64> = pairs
            .iter()
            .map(|(x, y)| free_stone_density(lambda, dist(x, y)).map(|v| Complex64::new(0.0, PI * v)))
            .collect::<Result<_>>()?;
        self.subtract_corrections(sp, pairs, opts, &mut out)?;
        Ok(out.iter().map(|z| z.im / PI).collect())
    }

    /// Both-branch version of [`Self::stone_density_many`] for one pair.
    pub fn stone_density(&self, lambda: f64, x: &[f64; 4], y: &[f64; 4], opts: SolveOptions) -> Result<Complex64> {
        let pair = [(*x, *y)];
        let mut cp = vec![Complex64::new(0.0, 0.0)];
        let mut cm = vec![Complex64::new(0.0, 0.0)];
        self.subtract_corrections(SpectralPoint::plus(lambda)?, &pair, opts, &mut cp)?;
        self.subtract_corrections(SpectralPoint::minus(lambda)?, &pair, opts, &mut cm)?;
        let jump = free_stone_density(lambda, dist(x, y))?;
        Ok(Complex64::new(jump, 0.0) + (cp[0] - cm[0]) / Complex64::new(0.0, 2.0 * PI))
    }

    fn subtract_corrections(
        &self,
        sp: SpectralPoint,
        pairs: &[([f64; 4], [f64; 4])],
        opts: SolveOptions,
        out: &mut [Complex64],
    ) -> Result<()> {
        for (l, ctx) in self.ctxs.iter().enumerate() {
            if ctx.is_degenerate() {
                continue;
            }
            let solve = ResolventSolve::new(ctx, sp, opts)?;
            let factor = (l + 1) as f64 / (2.0 * PI * PI);
            for (k, (x, y)) in pairs.iter().enumerate() {
                let (rx, ry) = (norm(x), norm(y));
                if l > 0 && (rx == 0.0 || ry == 0.0) {
                    continue;
                }
                let c = if rx > 0.0 && ry > 0.0 {
                    (0..4).map(|i| x[i] * y[i]).sum::<f64>() / (rx * ry)
                } else {
                    1.0
                };
                let ul = chebyshev_u(l, c.clamp(-1.0, 1.0))[l];
                if ul == 0.0 {
                    continue;
                }
                let corr = solve.correction(&solve.probe_radial(rx)?, &solve.probe_radial(ry)?)?;
                out[k] -= corr * (factor * ul);
            }
        }
        Ok(())
    }
}

fn norm(x: &[f64; 4]) -> f64 {
    x.iter().map(|c| c * c).sum::<f64>().sqrt()
}
