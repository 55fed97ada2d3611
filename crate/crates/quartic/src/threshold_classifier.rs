//! Zero-energy classification: the projection chain `S₁ ⊇ S₂ ⊇ S₃ ⊇ S₄`,
//! moment functionals of null vectors, resonance functions and the
//! zero-eigenspace projection.

use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::birman_schwinger::{
    assemble_T, harmonic_norm_sq, harmonic_polynomial, real_part, BSContext, GridData, PotentialFamily, PotentialSpec,
    PsiFamily,
};
use crate::discretization::{gauss_legendre, sector_reduce_all, Kernel, OperatorMatrix, SingularityPolicy};
use crate::error::{QuarticError, Result};
use crate::free_kernels::linear_fit;
use crate::linalg::sym_eigen;

/// Orthonormal basis of an approximate null space.
#[derive(Clone, Debug)]
pub struct NullSpace {
    /// Columns span the null space.
    pub basis: DMatrix<f64>,
    /// All singular values, ascending.
    pub singular_values: Vec<f64>,
    /// Reference scale the tolerance is relative to.
    pub scale: f64,
    /// No gap of a factor 10 around the threshold.
    pub ambiguous: bool,
}

impl NullSpace {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

fn sign_fix(mut v: DVector<f64>) -> DVector<f64> {
    let m = v.amax();
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-8 * m) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
    v
}

/// Null space of a real symmetric matrix: eigenvectors with `|λ| < tol·scale`.
/// `scale` defaults to the largest `|λ|`.
pub fn symmetric_null_space(m: &DMatrix<f64>, tol: f64, scale: Option<f64>) -> NullSpace {
    let n = m.nrows();
    if n == 0 {
        return NullSpace { basis: DMatrix::zeros(0, 0), singular_values: vec![], scale: 0.0, ambiguous: false };
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym_eigen(&sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].abs().total_cmp(&eig.eigenvalues[b].abs()).then(a.cmp(&b)));
    let sv: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].abs()).collect();
    let scale = scale.unwrap_or_else(|| sv.last().copied().unwrap_or(0.0));
    let thr = tol * scale;
    let keep: Vec<usize> = order.iter().copied().filter(|&k| eig.eigenvalues[k].abs() <= thr).collect();
    let ambiguous = scale > 0.0 && sv.iter().any(|&s| s > thr / 10.0 && s < thr * 10.0);
    let cols: Vec<DVector<f64>> = keep.iter().map(|&k| sign_fix(eig.eigenvectors.column(k).into_owned())).collect();
    let basis = if cols.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&cols) };
    NullSpace { basis, singular_values: sv, scale, ambiguous }
}

/// Null space of a Hermitian operator with real entries (chain operators
/// for real potentials); `|λ| < tol·σ_max`.
pub fn null_space(m: &OperatorMatrix, tol: f64) -> Result<NullSpace> {
    let im = m.entries.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let re = m.entries.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    if im > 1e-14 * re.max(1e-300) {
        return Err(QuarticError::Domain("null_space expects an operator with real entries".into()));
    }
    if m.hermitian_defect() > 1e-10 {
        return Err(QuarticError::Domain("null_space expects a Hermitian operator".into()));
    }
    Ok(symmetric_null_space(&real_part(m), tol, None))
}

/// Columns `2..n` of the Householder reflector taking `e₁` to `e`: an
/// orthonormal basis of `e^⊥`.
fn complement_basis(e: &DVector<f64>) -> DMatrix<f64> {
    let n = e.len();
    let mut w = e.clone();
    // reflect e onto −sign(e₀)e₁ to avoid cancellation
    let s = if e[0] >= 0.0 { 1.0 } else { -1.0 };
    w[0] += s;
    let wn = w.norm_squared();
    let mut h = DMatrix::<f64>::identity(n, n);
    h -= (&w * w.transpose()) * (2.0 / wn);
    h.columns(1, n - 1).into_owned()
}

/// Zero-energy type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Regular,
    Kind1,
    Kind2,
    Kind3,
    Kind4,
}

impl Verdict {
    pub fn from_kind(k: usize) -> Verdict {
        match k {
            0 => Verdict::Regular,
            1 => Verdict::Kind1,
            2 => Verdict::Kind2,
            3 => Verdict::Kind3,
            _ => Verdict::Kind4,
        }
    }

    pub fn kind(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassifyOptions {
    /// Rank tolerance relative to the operator scale.
    pub tol: f64,
    /// Moments below `moment_tol·‖vφ‖₁` count as zero.
    pub moment_tol: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions { tol: 1e-8, moment_tol: 1e-6 }
    }
}

/// `S₁ ⊇ S₂ ⊇ S₃ ⊇ S₄` with the inverses `D₀ … D₃`, all as `n×n` matrices.
#[derive(Clone, Debug)]
pub struct ProjectionChain {
    /// Orthonormal bases of `range(S_k)`, `k = 1..4`.
    pub bases: [DMatrix<f64>; 4],
    /// `(ℓ+1)²` on sector contexts, 1 on the full cloud.
    pub multiplicity: usize,
    /// `D₀ = (QTQ+S₁)⁻¹` on `QL²`, `D_k = (T_k+S_{k+1})⁻¹` on `S_k`.
    pub d: [DMatrix<f64>; 4],
    /// `‖D_k(op + S_{k+1}) − I‖` on the respective subspace.
    pub inverse_defects: [f64; 4],
    /// Smallest singular values of `QTQ|Q, T₁|S₁, T₂|S₂, T₃|S₃` (up to 6 each).
    pub sigma_history: [Vec<f64>; 4],
    /// Scale used for each rank decision.
    pub scales: [f64; 4],
    /// Smallest eigenvalue of `S₄vG₅vS₄` on `range(S₄)`.
    pub t4_min_eigenvalue: Option<f64>,
    pub ambiguous: bool,
    pub tol: f64,
    /// The real matrix `T` the chain was built from.
    pub t: DMatrix<f64>,
}

impl ProjectionChain {
    /// Raw subspace dimensions `(d₁, d₂, d₃, d₄)` in the discretised sector.
    pub fn raw_dims(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|k| self.bases[k].ncols())
    }

    /// Dimensions counted with the angular multiplicity.
    pub fn dims(&self) -> [usize; 4] {
        self.raw_dims().map(|d| d * self.multiplicity)
    }

    /// `S_k` as an `n×n` projection (`k = 1..=4`).
    pub fn projection(&self, k: usize) -> DMatrix<f64> {
        let e = &self.bases[k - 1];
        e * e.transpose()
    }

    /// Verdict from the deepest nonzero `S_k`.
    pub fn verdict(&self) -> Verdict {
        let dims = self.raw_dims();
        Verdict::from_kind(dims.iter().rposition(|&d| d > 0).map(|k| k + 1).unwrap_or(0))
    }

    /// `‖S_{k+1} − S_k S_{k+1}‖` for `k = 1..3` and `‖S₁ − QS₁‖`.
    pub fn nesting_defects(&self, q: &DMatrix<f64>) -> [f64; 4] {
        let s: Vec<DMatrix<f64>> = (1..=4).map(|k| self.projection(k)).collect();
        [
            (&s[0] - q * &s[0]).norm(),
            (&s[1] - &s[0] * &s[1]).norm(),
            (&s[2] - &s[1] * &s[2]).norm(),
            (&s[3] - &s[2] * &s[3]).norm(),
        ]
    }
}

fn restricted(op: &DMatrix<f64>, e: &DMatrix<f64>) -> DMatrix<f64> {
    let a = e.transpose() * op * e;
    (&a + a.transpose()) * 0.5
}

fn smallest(sv: &[f64]) -> Vec<f64> {
    sv.iter().take(6).copied().collect()
}

/// `D = (A + NNᵀ)⁻¹` in subspace coordinates, lifted back with `E`.
fn lifted_inverse(a: &DMatrix<f64>, null: &DMatrix<f64>, e: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let k = a.nrows();
    if k == 0 {
        return Ok((DMatrix::zeros(e.nrows(), e.nrows()), 0.0));
    }
    let shifted = a + null * null.transpose();
    let inv = shifted.clone().try_inverse().ok_or(QuarticError::NotInvertible { sigma_min: 0.0 })?;
    let defect = (&inv * &shifted - DMatrix::<f64>::identity(k, k)).norm();
    Ok((e * inv * e.transpose(), defect))
}

/// Nyström matrix `vKv` with the diagonal appropriate for polynomial kernels.
fn poly_sandwich(ctx: &BSContext, j: usize) -> Result<DMatrix<f64>> {
    let policy = match ctx.grid {
        GridData::Full(_) => SingularityPolicy::Direct,
        GridData::Sector(_) => SingularityPolicy::Direct,
    };
    Ok(real_part(&ctx.sandwich(&Kernel::G(j), policy)?))
}

/// Build the chain; dimension caps `1/4/10` on `d₁−d₂, d₂−d₃, d₃−d₄`
/// (with angular multiplicity) are enforced.
pub fn build_chain(ctx: &BSContext, opts: ClassifyOptions) -> Result<ProjectionChain> {
    let tol = opts.tol;
    let t = real_part(&assemble_T(ctx)?);
    let n = ctx.len();
    let multiplicity = match &ctx.grid {
        GridData::Full(_) => 1,
        GridData::Sector(s) => s.multiplicity,
    };
    // range(Q)
    let bq = if ctx.vtilde.norm() > 0.0 { complement_basis(&(&ctx.vtilde / ctx.vtilde.norm())) } else { DMatrix::identity(n, n) };
    let a0 = restricted(&t, &bq);
    let ns0 = symmetric_null_space(&a0, tol, None);
    let e1 = &bq * &ns0.basis;
    let (d0, def0) = lifted_inverse(&a0, &ns0.basis, &bq)?;

    let mut bases = [e1, DMatrix::zeros(n, 0), DMatrix::zeros(n, 0), DMatrix::zeros(n, 0)];
    let mut d = [d0, DMatrix::zeros(n, n), DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
    let mut defects = [def0, 0.0, 0.0, 0.0];
    let mut hist = [smallest(&ns0.singular_values), vec![], vec![], vec![]];
    let mut scales = [ns0.scale, 0.0, 0.0, 0.0];
    let mut ambiguous = ns0.ambiguous;

    // T₁ = S₁TPTS₁, T₂ = S₂vG₂vS₂, T₃ = S₃vG₄vS₃
    for k in 1..4 {
        let e = bases[k - 1].clone();
        if e.ncols() == 0 {
            break;
        }
        let op = match k {
            1 => &t * &ctx.p * &t,
            2 => poly_sandwich(ctx, 2)?,
            _ => poly_sandwich(ctx, 4)?,
        };
        let scale = op.norm();
        let a = restricted(&op, &e);
        let ns = symmetric_null_space(&a, tol, Some(scale));
        bases[k] = &e * &ns.basis;
        let (dk, def) = lifted_inverse(&a, &ns.basis, &e)?;
        d[k] = dk;
        defects[k] = def;
        hist[k] = smallest(&ns.singular_values);
        scales[k] = scale;
        ambiguous |= ns.ambiguous;
    }
    let t4_min_eigenvalue = if bases[3].ncols() > 0 {
        let a = restricted(&poly_sandwich(ctx, 5)?, &bases[3]);
        Some(sym_eigen(&a).eigenvalues.min())
    } else {
        None
    };
    let chain = ProjectionChain {
        bases,
        multiplicity,
        d,
        inverse_defects: defects,
        sigma_history: hist,
        scales,
        t4_min_eigenvalue,
        ambiguous,
        tol,
        t,
    };
    check_dimension_caps(chain.dims())?;
    Ok(chain)
}

/// `d₁−d₂ ≤ 1`, `d₂−d₃ ≤ 4`, `d₃−d₄ ≤ 10` and `d₁ ≥ d₂ ≥ d₃ ≥ d₄`.
pub fn check_dimension_caps(dims: [usize; 4]) -> Result<()> {
    let caps = [1usize, 4, 10];
    for k in 0..3 {
        if dims[k] < dims[k + 1] || dims[k] - dims[k + 1] > caps[k] {
            return Err(QuarticError::Discretization(format!(
                "chain dimensions {dims:?} violate d{}-d{} <= {} (grid too coarse or tolerance too loose)",
                k + 1,
                k + 2,
                caps[k]
            )));
        }
    }
    Ok(())
}

/// `c₀ = ⟨v, Tφ⟩/‖V‖₁`, `m_i = ∫y_i vφ`, `Q_ij = ∫y_i y_j vφ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MomentVector {
    pub c0: f64,
    pub m: [f64; 4],
    #[serde(rename = "Q")]
    pub q: [[f64; 4]; 4],
    /// `‖vφ‖₁` (an upper bound on sector contexts).
    pub l1: f64,
    /// `⟨v, φ⟩`.
    pub v_dot: f64,
}

impl MomentVector {
    pub fn label(&self, moment_tol: f64) -> usize {
        let thr = moment_tol * self.l1;
        let mnorm = self.m.iter().map(|x| x * x).sum::<f64>().sqrt();
        let qnorm = self.q.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        if self.c0.abs() > thr {
            1
        } else if mnorm > thr {
            2
        } else if qnorm > thr {
            3
        } else {
            4
        }
    }
}

/// Linear moment functionals of a basis vector `u` (Nyström coordinates):
/// returns `(c₀, m, Q, ‖vφ‖₁, ⟨v,φ⟩)`.
pub fn moments(ctx: &BSContext, t: &DMatrix<f64>, u: &DVector<f64>) -> MomentVector {
    let sw = ctx.sqrt_wv();
    let v_dot = ctx.vtilde.dot(u);
    let c0 = if ctx.norm_v1 > 0.0 { ctx.vtilde.dot(&(t * u)) / ctx.norm_v1 } else { 0.0 };
    let mut m = [0.0; 4];
    let mut q = [[0.0; 4]; 4];
    let l1: f64;
    match &ctx.grid {
        GridData::Full(cloud) => {
            for (j, y) in cloud.nodes.iter().enumerate() {
                let f = sw[j] * u[j];
                for a in 0..4 {
                    m[a] += y[a] * f;
                    for b in 0..4 {
                        q[a][b] += y[a] * y[b] * f;
                    }
                }
            }
            l1 = (0..u.len()).map(|j| sw[j] * u[j].abs()).sum();
        }
        GridData::Sector(sg) => {
            let radial = |k: i32| -> f64 { (0..u.len()).map(|j| sw[j] * sg.rnodes[j].powi(k) * u[j]).sum() };
            let nrm = harmonic_norm_sq(sg.ell.min(3)).sqrt();
            match sg.ell {
                0 => {
                    // ∫ω_i² Y₀ = (2π²/4)/√(2π²)
                    let r2 = radial(2) * (2.0 * PI * PI / 4.0) / nrm;
                    for (a, row) in q.iter_mut().enumerate() {
                        row[a] = r2;
                    }
                }
                1 => m[0] = radial(1) * nrm,
                2 => {
                    q[0][1] = radial(2) * nrm;
                    q[1][0] = q[0][1];
                }
                _ => {}
            }
            l1 = (2.0 * PI * PI).sqrt() * (0..u.len()).map(|j| sw[j] * u[j].abs()).sum::<f64>();
        }
    }
    MomentVector { c0, m, q, l1, v_dot }
}

/// Orthonormal directions in `R^d` split by the rank of a linear map `A`
/// (rows = functionals): `(rank part, kernel part)`.
fn split_by_functional(a: &DMatrix<f64>, thr: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = a.ncols();
    if d == 0 {
        return (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0));
    }
    let g = a.transpose() * a;
    let eig = sym_eigen(&g);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    let (mut on, mut off) = (vec![], vec![]);
    for k in order {
        let col = sign_fix(eig.eigenvectors.column(k).into_owned());
        if eig.eigenvalues[k].max(0.0).sqrt() > thr {
            on.push(col);
        } else {
            off.push(col);
        }
    }
    let mk = |c: &Vec<DVector<f64>>| if c.is_empty() { DMatrix::zeros(d, 0) } else { DMatrix::from_columns(c) };
    (mk(&on), mk(&off))
}

/// Per-vector kinds of `range(S₁)` from moments alone: the basis is rotated
/// so that `c₀`, then `m`, then `Q` are diagonalised on successive kernels.
pub fn moment_route(ctx: &BSContext, chain: &ProjectionChain, moment_tol: f64) -> Vec<(DVector<f64>, MomentVector, usize)> {
    let e1 = &chain.bases[0];
    let d = e1.ncols();
    if d == 0 {
        return vec![];
    }
    let mv: Vec<MomentVector> = (0..d).map(|k| moments(ctx, &chain.t, &e1.column(k).into_owned())).collect();
    let scale = mv.iter().map(|m| m.l1).fold(0.0, f64::max);
    let thr = moment_tol * scale;
    let c0_row = DMatrix::from_fn(1, d, |_, k| mv[k].c0);
    let (k1, rest) = split_by_functional(&c0_row, thr);
    let m_rows = DMatrix::from_fn(4, d, |i, k| mv[k].m[i]);
    let (k2, rest) = split_by_functional(&(m_rows * &rest), thr).map_with(&rest);
    let q_rows = DMatrix::from_fn(10, d, |row, k| {
        let (i, j) = UPPER[row];
        let w = if i == j { 1.0 } else { 2f64.sqrt() };
        mv[k].q[i][j] * w
    });
    let (k3, k4) = split_by_functional(&(q_rows * &rest), thr).map_with(&rest);
    let mut out = Vec::new();
    for (coords, _) in [(k1, 1), (k2, 2), (k3, 3), (k4, 4)] {
        for c in coords.column_iter() {
            let u = e1 * c;
            let m = moments(ctx, &chain.t, &u);
            let label = m.label(moment_tol);
            out.push((u, m, label));
        }
    }
    out
}

const UPPER: [(usize, usize); 10] =
    [(0, 0), (0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)];

trait MapWith {
    fn map_with(self, rest: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>);
}

impl MapWith for (DMatrix<f64>, DMatrix<f64>) {
    /// Express split coordinates (relative to `rest`) in the original coordinates.
    fn map_with(self, rest: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        if rest.ncols() == 0 {
            return (DMatrix::zeros(rest.nrows(), 0), DMatrix::zeros(rest.nrows(), 0));
        }
        (rest * self.0, rest * self.1)
    }
}

/// Chain-route kind of each stratum vector: `range(S_k) ⊖ range(S_{k+1})`.
pub fn chain_route(chain: &ProjectionChain) -> Vec<(DVector<f64>, usize)> {
    let mut out = Vec::new();
    for k in 0..4 {
        let e = &chain.bases[k];
        if e.ncols() == 0 {
            continue;
        }
        let next = if k < 3 { chain.bases[k + 1].clone() } else { DMatrix::zeros(e.nrows(), 0) };
        // orthogonal complement of `next` inside range(e)
        let coords = e.transpose() * &next;
        let proj = DMatrix::<f64>::identity(e.ncols(), e.ncols()) - &coords * coords.transpose();
        let eig = sym_eigen(&proj);
        for (j, val) in eig.eigenvalues.iter().enumerate() {
            if *val > 0.5 {
                out.push((e * eig.eigenvectors.column(j), k + 1));
            }
        }
    }
    out
}

/// Samples of `ψ = c₀ − G₁vφ` along a ray.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResonanceFunction {
    pub direction: [f64; 4],
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub c0: f64,
    /// Slope of `log|ψ − c₀|` against `log|x|` on `|x| ∈ [10, 10³]`.
    pub tail_exponent: f64,
    /// `‖Tφ − c₀ṽ‖ / (‖T‖‖φ‖)`: the discrete form of `Hψ = 0`.
    pub equation_residual: f64,
}

fn default_direction(ctx: &BSContext) -> [f64; 4] {
    let d: [f64; 4] = match ctx.ell() {
        None | Some(0) | Some(1) => [1.0, 0.0, 0.0, 0.0],
        Some(2) => [1.0, 1.0, 0.0, 0.0],
        _ => [1.0, 1.0, 1.0, 0.0],
    };
    let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    d.map(|x| x / n)
}

/// Ray along which the leading tail term of `ψ` is nonzero: `m/|m|`, else
/// the dominant eigenvector of `Q`, else the sector harmonic direction.
pub fn tail_direction(ctx: &BSContext, mv: &MomentVector, moment_tol: f64) -> [f64; 4] {
    if let GridData::Sector(_) = ctx.grid {
        return default_direction(ctx);
    }
    let thr = moment_tol * mv.l1;
    let mn = mv.m.iter().map(|x| x * x).sum::<f64>().sqrt();
    if mn > thr {
        return mv.m.map(|x| x / mn);
    }
    let q = DMatrix::from_fn(4, 4, |i, j| mv.q[i][j]);
    let eig = sym_eigen(&q);
    let k = eig.eigenvalues.iamax();
    if eig.eigenvalues[k].abs() > thr {
        let c = eig.eigenvectors.column(k);
        return [c[0], c[1], c[2], c[3]];
    }
    default_direction(ctx)
}

/// `(G₁vφ)(x)` for a Nyström vector `u`.
pub fn g1_v_phi(ctx: &BSContext, u: &DVector<f64>, x: &[f64; 4]) -> Result<f64> {
    let sw = ctx.sqrt_wv();
    match &ctx.grid {
        GridData::Full(cloud) => {
            let mut s = 0.0;
            for (j, y) in cloud.nodes.iter().enumerate() {
                let d = (0..4).map(|k| (x[k] - y[k]).powi(2)).sum::<f64>().sqrt();
                if d == 0.0 {
                    return Err(QuarticError::SingularDiagonal);
                }
                s += -d.ln() / (8.0 * PI * PI) * sw[j] * u[j];
            }
            Ok(s)
        }
        GridData::Sector(sg) => {
            let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
            let ell = sg.ell;
            let y = if r > 0.0 {
                let xh = x.map(|c| c / r);
                harmonic_polynomial(ell.min(3), &xh) / harmonic_norm_sq(ell.min(3)).sqrt()
            } else if ell == 0 {
                1.0 / (2.0 * PI * PI).sqrt()
            } else {
                0.0
            };
            Ok(y * sector_g1_profile(ctx, u, r)?)
        }
    }
}

/// Radial profile `g(r)` with `G₁vφ = g(r)Y(x̂)` on a sector context.
fn sector_g1_profile(ctx: &BSContext, u: &DVector<f64>, r: f64) -> Result<f64> {
    let GridData::Sector(sg) = &ctx.grid else { unreachable!() };
    let sw = ctx.sqrt_wv();
    let mut s = 0.0;
    for (j, &rj) in sg.rnodes.iter().enumerate() {
        if sw[j] == 0.0 {
            continue;
        }
        s += sector_reduce_all(&Kernel::G(1), sg.ell, r, rj)?[sg.ell].re * sw[j] * u[j];
    }
    Ok(s)
}

/// `ψ = c₀ − G₁vφ` on the log-spaced ray `|x| ∈ [1, 10³]`.
pub fn resonance_function(ctx: &BSContext, u: &DVector<f64>, direction: Option<[f64; 4]>) -> Result<ResonanceFunction> {
    let t = real_part(&assemble_T(ctx)?);
    let mv = moments(ctx, &t, u);
    let c0 = mv.c0;
    let dir = direction.unwrap_or_else(|| default_direction(ctx));
    let radii: Vec<f64> = (0..=60).map(|k| 10f64.powf(3.0 * k as f64 / 60.0)).collect();
    let mut values = Vec::with_capacity(radii.len());
    for &r in &radii {
        let x = dir.map(|c| c * r);
        values.push(c0 - g1_v_phi(ctx, u, &x)?);
    }
    let (lx, ly): (Vec<f64>, Vec<f64>) = radii
        .iter()
        .zip(&values)
        .filter(|(r, v)| **r >= 10.0 - 1e-9 && (**v - c0).abs() > 0.0)
        .map(|(r, v)| (r.ln(), (v - c0).abs().ln()))
        .unzip();
    let peak = values.iter().map(|v| (v - c0).abs()).fold(0.0, f64::max);
    let floor = 1e-12 * (peak + c0.abs());
    if lx.len() < 8 || ly.iter().any(|&y| y.exp() <= floor) {
        return Err(QuarticError::Fit("resonance function vanishes on the tail window".into()));
    }
    let (tail_exponent, _) = linear_fit(&lx, &ly);
    let resid = &t * u - &ctx.vtilde * c0;
    let tnorm = t.norm();
    Ok(ResonanceFunction {
        direction: dir,
        radii,
        values,
        c0,
        tail_exponent,
        equation_residual: resid.norm() / (tnorm * u.norm()).max(1e-300),
    })
}

/// One `S₁` vector in a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VectorReport {
    pub c0: f64,
    pub m: [f64; 4],
    #[serde(rename = "Q")]
    pub q: [[f64; 4]; 4],
    pub kind: usize,
    pub tail_exponent: Option<f64>,
    pub equation_residual: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResonanceReport {
    pub verdict: Verdict,
    /// `(d₁, d₂, d₃, d₄)` with angular multiplicity.
    pub dims: [usize; 4],
    /// Potential amplitude (coupling).
    pub beta: f64,
    pub ell: Option<usize>,
    pub multiplicity: usize,
    /// Smallest singular value of each chain operator on its subspace.
    pub sigma_min: Vec<f64>,
    pub sigma_history: Vec<Vec<f64>>,
    pub vectors: Vec<VectorReport>,
    pub moment_verdict: Verdict,
    pub routes_agree: bool,
    pub ambiguous_rank: bool,
    pub t4_min_eigenvalue: Option<f64>,
    pub warnings: Vec<String>,
}

impl ResonanceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Run the chain, the moment route and the resonance functions.
pub fn classify(ctx: &BSContext, opts: ClassifyOptions) -> Result<ResonanceReport> {
    let chain = build_chain(ctx, opts)?;
    classify_with_chain(ctx, &chain, opts)
}

pub fn classify_with_chain(ctx: &BSContext, chain: &ProjectionChain, opts: ClassifyOptions) -> Result<ResonanceReport> {
    let verdict = chain.verdict();
    let by_moments = moment_route(ctx, chain, opts.moment_tol);
    let by_chain = chain_route(chain);
    let mut warnings = Vec::new();
    let count = |labels: &mut dyn Iterator<Item = usize>| {
        let mut c = [0usize; 5];
        for l in labels {
            c[l] += 1;
        }
        c
    };
    let cm = count(&mut by_moments.iter().map(|x| x.2));
    let cc = count(&mut by_chain.iter().map(|x| x.1));
    let moment_verdict = Verdict::from_kind(by_moments.iter().map(|x| x.2).max().unwrap_or(0));
    let routes_agree = cm == cc && moment_verdict == verdict;
    if !routes_agree {
        warnings.push(format!("route disagreement: chain strata {cc:?}, moment labels {cm:?}"));
    }
    if chain.ambiguous {
        warnings.push("ambiguous rank: no factor-10 gap around the tolerance".into());
    }
    if let Some(e) = chain.t4_min_eigenvalue {
        if e <= 0.0 {
            warnings.push(format!("S4 vG5 v S4 is not positive on range(S4): {e:e}"));
        }
    }
    let mut vectors = Vec::new();
    for (u, mv, label) in &by_moments {
        let dir = tail_direction(ctx, mv, opts.moment_tol);
        let rf = resonance_function(ctx, u, Some(dir)).ok();
        vectors.push(VectorReport {
            c0: mv.c0,
            m: mv.m,
            q: mv.q,
            kind: *label,
            tail_exponent: rf.as_ref().map(|r| r.tail_exponent),
            equation_residual: rf.as_ref().map(|r| r.equation_residual),
        });
    }
    let sigma_min = chain.sigma_history.iter().filter(|h| !h.is_empty()).map(|h| h[0]).collect();
    Ok(ResonanceReport {
        verdict,
        dims: chain.dims(),
        beta: ctx.potential.amplitude,
        ell: ctx.ell(),
        multiplicity: chain.multiplicity,
        sigma_min,
        sigma_history: chain.sigma_history.to_vec(),
        vectors,
        moment_verdict,
        routes_agree,
        ambiguous_rank: chain.ambiguous,
        t4_min_eigenvalue: chain.t4_min_eigenvalue,
        warnings,
    })
}

/// Radial evaluation grid for sector functions: Gauss–Legendre panels with
/// breakpoints at the node radii, and `r = R/u` beyond the last node.
pub fn sector_evaluation_grid(ctx: &BSContext) -> Result<(Vec<f64>, Vec<f64>)> {
    let GridData::Sector(sg) = &ctx.grid else {
        return Err(QuarticError::Config("evaluation grid needs a sector context".into()));
    };
    let (x, w) = gauss_legendre(12);
    let mut brk = vec![0.0];
    brk.extend(sg.rnodes.iter().copied());
    let mut r = Vec::new();
    let mut wt = Vec::new();
    for p in brk.windows(2) {
        let (a, b) = (p[0], p[1]);
        for (xi, wi) in x.iter().zip(&w) {
            let t = a + 0.5 * (b - a) * (xi + 1.0);
            r.push(t);
            wt.push(0.5 * (b - a) * wi * t.powi(3));
        }
    }
    let big = *brk.last().unwrap();
    for (xi, wi) in x.iter().zip(&w) {
        let u = 0.5 * (xi + 1.0);
        let t = big / u;
        r.push(t);
        wt.push(0.5 * wi * big / (u * u) * t.powi(3));
    }
    Ok((r, wt))
}

/// `⟨S₄vG₅vS₄φ, φ⟩` and `‖G₁vφ‖²` for each basis vector of `range(S₄)`.
pub fn t4_identity(ctx: &BSContext, chain: &ProjectionChain) -> Result<Vec<(f64, f64)>> {
    let e4 = &chain.bases[3];
    if e4.ncols() == 0 {
        return Ok(vec![]);
    }
    let g5 = poly_sandwich(ctx, 5)?;
    let (r, w) = sector_evaluation_grid(ctx)?;
    let mut out = Vec::new();
    for c in e4.column_iter() {
        let u = c.into_owned();
        let form = u.dot(&(&g5 * &u));
        let mut nrm = 0.0;
        for (ri, wi) in r.iter().zip(&w) {
            let g = sector_g1_profile(ctx, &u, *ri)?;
            nrm += wi * g * g;
        }
        out.push((form, nrm));
    }
    Ok(out)
}

/// `P_e = G₁vS₄[S₄vG₅vS₄]⁻¹S₄vG₁` on the sector evaluation grid, in the
/// weighted basis `√W_i P_e(r_i, r_j) √W_j`.
#[derive(Clone, Debug)]
pub struct EigenProjection {
    pub radii: Vec<f64>,
    pub weights: Vec<f64>,
    pub matrix: DMatrix<f64>,
    /// `ψ_k = −G₁vφ_k` in the weighted basis.
    pub psi: Vec<DVector<f64>>,
    pub rank: usize,
}

pub fn eigen_projection(chain: &ProjectionChain, ctx: &BSContext) -> Result<EigenProjection> {
    let (r, w) = sector_evaluation_grid(ctx)?;
    let m = r.len();
    let e4 = &chain.bases[3];
    let k = e4.ncols();
    if k == 0 {
        return Ok(EigenProjection { radii: r, weights: w, matrix: DMatrix::zeros(m, m), psi: vec![], rank: 0 });
    }
    let g5 = poly_sandwich(ctx, 5)?;
    let gram = e4.transpose() * &g5 * e4;
    let ginv = gram.try_inverse().ok_or(QuarticError::NotInvertible { sigma_min: 0.0 })?;
    let mut cols = Vec::new();
    for c in e4.column_iter() {
        let u = c.into_owned();
        let mut v = DVector::zeros(m);
        for i in 0..m {
            v[i] = -sector_g1_profile(ctx, &u, r[i])? * w[i].sqrt();
        }
        cols.push(v);
    }
    let psi_mat = DMatrix::from_columns(&cols);
    let matrix = &psi_mat * ginv * psi_mat.transpose();
    Ok(EigenProjection { radii: r, weights: w, matrix, psi: cols, rank: k })
}

/// `V = −Δ²ψ/ψ` for `ψ = H_ℓ(x)⟨x⟩^{−p}` as a potential with amplitude 1.
pub fn inverse_construct(psi: PsiFamily) -> Result<PotentialSpec> {
    psi.validate()?;
    PotentialSpec::new(PotentialFamily::InverseConstructed { ell: psi.ell, exponent: psi.exponent }, 1.0)
}

/// One β sample of a coupling sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SweepSample {
    pub beta: f64,
    /// Smallest `|λ|` of `QTQ` on `range(Q)`.
    pub sigma_min: f64,
    /// Number of negative eigenvalues of `QTQ` on `range(Q)`.
    pub negative: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CriticalCoupling {
    pub beta: f64,
    pub sigma_min: f64,
    pub report: ResonanceReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SweepResult {
    pub samples: Vec<SweepSample>,
    pub critical: Vec<CriticalCoupling>,
}

/// `QTQ(β)` on `range(Q)` for `V = β·profile`, from pieces computed once.
struct SweepFamily {
    base: BSContext,
    /// `B_Qᵀ U B_Q` for `β > 0`.
    u: DMatrix<f64>,
    /// `B_Qᵀ v₀G₁v₀ B_Q` for the unit-amplitude profile.
    k: DMatrix<f64>,
}

impl SweepFamily {
    fn new(grid: &GridData, potential: &PotentialSpec) -> Result<Self> {
        let mut unit = potential.clone();
        unit.amplitude = 1.0;
        let base = BSContext::new(grid.clone(), unit)?;
        if base.is_degenerate() {
            return Err(QuarticError::DegeneratePotential);
        }
        let n = base.len();
        let bq = if base.vtilde.norm() > 0.0 {
            complement_basis(&(&base.vtilde / base.vtilde.norm()))
        } else {
            DMatrix::identity(n, n)
        };
        let t1 = real_part(&assemble_T(&base)?);
        let udiag = DMatrix::from_diagonal(&DVector::from_vec(base.u.clone()));
        let k = restricted(&(t1 - &udiag), &bq);
        let u = restricted(&udiag, &bq);
        Ok(SweepFamily { base, u, k })
    }

    /// `(A(β), dA/dβ)`.
    fn operator(&self, beta: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let s = beta.signum();
        (&self.u * s + &self.k * beta.abs(), &self.k * s)
    }

    fn sample(&self, beta: f64) -> SweepSample {
        let eig = sym_eigen(&self.operator(beta).0);
        SweepSample {
            beta,
            sigma_min: eig.eigenvalues.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min),
            negative: eig.eigenvalues.iter().filter(|&&x| x < 0.0).count(),
        }
    }

    /// All inertia changes in `[l, r]`, bisected to relative width `1e-7`.
    fn bisect(&self, l: &SweepSample, r: &SweepSample, roots: &mut Vec<f64>) {
        if l.negative == r.negative {
            return;
        }
        let mid = 0.5 * (l.beta + r.beta);
        if (r.beta - l.beta).abs() <= 1e-7 * mid.abs() {
            roots.push(self.polish(mid));
            return;
        }
        let m = self.sample(mid);
        self.bisect(l, &m, roots);
        self.bisect(&m, r, roots);
    }

    /// Newton on the eigenvalue nearest zero (Hellmann–Feynman slope).
    fn polish(&self, mut beta: f64) -> f64 {
        for _ in 0..12 {
            let (a, da) = self.operator(beta);
            let eig = sym_eigen(&a);
            let (kmin, lam) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
                .map(|(k, l)| (k, *l))
                .unwrap();
            let y = eig.eigenvectors.column(kmin);
            let slope = y.dot(&(&da * y));
            if slope == 0.0 {
                break;
            }
            let step = lam / slope;
            beta -= step;
            if step.abs() <= 1e-15 * beta.abs() {
                break;
            }
        }
        beta
    }
}

/// Critical couplings in `[lo, hi]` (same sign) where an eigenvalue of
/// `QTQ` on `range(Q)` crosses zero: inertia bisection to 6 digits, Newton
/// polish, then [`classify`] at each root.
pub fn coupling_sweep(
    grid: &GridData,
    potential: &PotentialSpec,
    lo: f64,
    hi: f64,
    steps: usize,
    opts: ClassifyOptions,
) -> Result<SweepResult> {
    if !(lo < hi) || lo * hi <= 0.0 || steps < 2 {
        return Err(QuarticError::Config(format!(
            "coupling_sweep needs lo < hi of one sign and steps >= 2, got [{lo}, {hi}], {steps}"
        )));
    }
    let fam = SweepFamily::new(grid, potential)?;
    let betas: Vec<f64> = (0..steps).map(|k| lo + (hi - lo) * k as f64 / (steps - 1) as f64).collect();
    let samples: Vec<SweepSample> = {
        use rayon::prelude::*;
        betas.par_iter().map(|&b| fam.sample(b)).collect()
    };
    let mut critical = Vec::new();
    for pair in samples.windows(2) {
        let mut roots = Vec::new();
        fam.bisect(&pair[0], &pair[1], &mut roots);
        for beta in roots {
            let mut p = fam.base.potential.clone();
            p.amplitude = beta;
            let ctx = BSContext::new(grid.clone(), p)?;
            let report = classify(&ctx, opts)?;
            critical.push(CriticalCoupling { beta, sigma_min: fam.sample(beta).sigma_min, report });
        }
    }
    Ok(SweepResult { samples, critical })
}

/// Critical couplings of a sign-definite potential directly from the
/// spectrum of `QK₀Q` (`K₀ = v₀G₁v₀`): `β* = ±1/μ`.
pub fn critical_couplings_definite(grid: &GridData, potential: &PotentialSpec, lo: f64, hi: f64) -> Result<Vec<f64>> {
    let fam = SweepFamily::new(grid, potential)?;
    let eig = sym_eigen(&fam.k);
    let sign = lo.signum();
    // U on range(Q) is ±I for sign-definite V
    let s = fam.u[(0, 0)].signum() * sign;
    let mut out: Vec<f64> = eig
        .eigenvalues
        .iter()
        .filter(|&&mu| mu != 0.0)
        .map(|&mu| -s / mu * sign)
        .filter(|&b| b >= lo && b <= hi)
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs());
    Ok(out)
}
