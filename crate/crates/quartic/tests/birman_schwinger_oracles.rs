use core::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use quartic::birman_schwinger::*;
use quartic::discretization::*;
use quartic::free_kernels::{fourth_order_resolvent, linear_fit, ExpansionCoefficients, SpectralPoint};
use quartic::QuarticError;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gaussian(amplitude: f64, width: f64) -> PotentialSpec {
    PotentialSpec::new(PotentialFamily::GaussianBump { width, center: [0.0; 4] }, amplitude).unwrap()
}

fn full_ctx(p: PotentialSpec, nr: usize, nang: usize, rmax: f64) -> BSContext {
    BSContext::new(GridData::Full(build_full_grid(nr, nang, rmax).unwrap()), p).unwrap()
}

fn sector_ctx(p: PotentialSpec, ell: usize, nr: usize, rmax: f64) -> BSContext {
    BSContext::new(GridData::Sector(build_sector_grid(ell, nr, rmax).unwrap()), p).unwrap()
}

fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| a * (b / a).powf(k as f64 / (n - 1) as f64)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn projections_are_complementary(amp in -5.0f64..5.0, width in 0.5f64..2.5) {
        prop_assume!(amp.abs() > 1e-3);
        let ctx = full_ctx(gaussian(amp, width), 4, 98, 5.0);
        let n = ctx.len();
        let p = &ctx.p;
        let q = &ctx.q;
        prop_assert!((p * p - p).norm() < 1e-12);
        prop_assert!((q * q - q).norm() < 1e-12);
        prop_assert!((p * q).norm() < 1e-12);
        prop_assert!((q * &ctx.vtilde).norm() <= 1e-12 * ctx.vtilde.norm());
        let direct: f64 = match &ctx.grid {
            GridData::Full(c) => c.nodes.iter().zip(&c.weights).map(|(x, w)| w * ctx.potential.eval(x).abs()).sum(),
            _ => unreachable!(),
        };
        prop_assert!((ctx.norm_v1 - direct).abs() <= 1e-12 * direct);
        prop_assert_eq!(n, 4 * 98);
    }
}

#[test]
fn sector_projection_lives_in_the_radial_sector() {
    let p = gaussian(-2.0, 1.0);
    let s0 = sector_ctx(p.clone(), 0, 24, 6.0);
    let s1 = sector_ctx(p.clone(), 1, 24, 6.0);
    assert!((s0.vtilde.norm_squared() - s0.norm_v1).abs() < 1e-12 * s0.norm_v1);
    // ‖V‖₁ = 2π² ∫ 2 e^{−r²} r³ dr = 2π²
    assert!((s0.norm_v1 - 2.0 * PI * PI).abs() < 1e-8);
    assert_eq!(s1.p.norm(), 0.0);
    assert!((s1.norm_v1 - s0.norm_v1).abs() < 1e-14 * s0.norm_v1);
    let off = PotentialSpec::new(PotentialFamily::GaussianBump { width: 1.0, center: [0.5, 0.0, 0.0, 0.0] }, 1.0).unwrap();
    let g = build_sector_grid(0, 8, 3.0).unwrap();
    assert!(matches!(BSContext::new(GridData::Sector(g), off), Err(QuarticError::Config(_))));
}

#[test]
fn t_is_hermitian_and_repulsive_tiny_coupling_is_diagonal_dominant() {
    let ctx = full_ctx(gaussian(1e-6, 1.0), 5, 98, 5.0);
    assert!(ctx.u.iter().all(|&u| u == 1.0));
    let t = assemble_T(&ctx).unwrap();
    assert!(t.hermitian_defect() < 1e-12);
    for i in 0..ctx.len() {
        let off: f64 = (0..ctx.len()).filter(|&j| j != i).map(|j| t.entries[(i, j)].norm()).sum();
        assert!(t.entries[(i, i)].re > off);
    }
    let zero = PotentialSpec::new(PotentialFamily::GaussianBump { width: 1.0, center: [0.0; 4] }, 0.0).unwrap();
    let z = full_ctx(zero, 4, 98, 3.0);
    assert_eq!(assemble_T(&z).unwrap_err(), QuarticError::DegeneratePotential);
}

#[test]
fn quadratic_form_of_t_at_v_matches_monte_carlo() {
    // V = −e^{−|x|²}: ⟨Tv, v⟩ = ∫V + ∫∫V(x)G₁(x−y)V(y)
    let ctx = full_ctx(gaussian(-1.0, 1.0), 10, 98, 6.0);
    let t = real_part(&assemble_T(&ctx).unwrap());
    let form = ctx.vtilde.dot(&(&t * &ctx.vtilde));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let nsamp = 400_000;
    let mut acc = 0.0;
    for _ in 0..nsamp {
        // x − y with x, y ~ e^{−|x|²}/π² is standard normal in R⁴
        let mut d2 = 0.0;
        for _ in 0..4 {
            let (a, b): (f64, f64) = (rng.gen(), rng.gen());
            let z = (-2.0 * (1.0 - a).ln()).sqrt() * (2.0 * PI * b).cos();
            d2 += z * z;
        }
        acc += -0.5 * d2.ln() / (8.0 * PI * PI);
    }
    let oracle = -PI * PI + PI.powi(4) * acc / nsamp as f64;
    assert!((form - oracle).abs() < 0.02 * oracle.abs(), "form {form} vs MC {oracle}");
}

#[test]
fn m_branches_are_conjugate() {
    let ctx = full_ctx(gaussian(-1.0, 1.0), 5, 98, 5.0);
    let plus = assemble_M(&ctx, SpectralPoint::plus(0.3).unwrap()).unwrap();
    let minus = assemble_M(&ctx, SpectralPoint::minus(0.3).unwrap()).unwrap();
    assert!((&minus.entries - plus.conj().entries).norm() <= 1e-13 * plus.entries.norm());
    // the minus branch assembled from its own kernel agrees too
    let direct = ctx.sandwich(&Kernel::Fourth(SpectralPoint::minus(0.3).unwrap()), ctx.policy()).unwrap();
    let mut d = direct.entries.clone();
    for i in 0..ctx.len() {
        d[(i, i)] += ctx.u[i];
    }
    assert!((&minus.entries - d).norm() <= 1e-13 * plus.entries.norm());
    assert!(matches!(SpectralPoint::plus(0.0), Err(QuarticError::Domain(_))));
}

#[test]
fn m_expansion_remainder_is_consistent_and_decays_at_each_level() {
    let levels = [(ExpansionLevel::Leading, 9.0, 0.5), (ExpansionLevel::Second, 13.0, 2.0), (ExpansionLevel::Fourth, 17.0, 4.0)];
    for (level, beta, min_rate) in levels {
        let p = PotentialSpec::new(PotentialFamily::InversePower { beta }, -1.0).unwrap();
        let ctx = full_ctx(p, 6, 98, 8.0);
        let sp = SpectralPoint::plus(0.1).unwrap();
        let m = assemble_M(&ctx, sp).unwrap().entries;
        let e = m_expansion(&ctx, sp, level).unwrap().entries;
        let rem = m_expansion_remainder(&ctx, sp, level).unwrap().entries;
        assert!((&m - &e - &rem).norm() < 1e-11 * m.norm(), "{level:?}");
        let lams = logspace(1e-3, 1e-1, 7);
        let norms: Vec<f64> = lams
            .iter()
            .map(|&l| m_expansion_remainder(&ctx, SpectralPoint::plus(l).unwrap(), level).unwrap().entries.norm())
            .collect();
        let lx: Vec<f64> = lams.iter().map(|l| l.ln()).collect();
        let ly: Vec<f64> = norms.iter().map(|n| n.ln()).collect();
        let (slope, _) = linear_fit(&lx, &ly);
        assert!(slope >= min_rate, "{level:?}: rate {slope}");
    }
}

fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<Complex64> {
    let a = DMatrix::from_fn(n, n, |_, _| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
    (&a + a.adjoint()) * Complex64::new(0.5, 0.0)
}

fn unitary(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<Complex64> {
    random_hermitian(rng, n).symmetric_eigen().eigenvectors
}

#[test]
fn jn_inverse_reduces_to_plain_inverse_and_matches_direct() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 8;
    let m = random_hermitian(&mut rng, n) + DMatrix::identity(n, n) * Complex64::new(3.0, 0.0);
    let direct = m.clone().try_inverse().unwrap();
    let zero = DMatrix::zeros(n, n);
    let jn = jn_invert(&m, &zero).unwrap();
    assert!((&jn - &direct).norm() <= 1e-10 * direct.norm());
    // a rank-2 projection that is not aligned with anything in M
    let u = unitary(&mut rng, n);
    let e = u.columns(0, 2).into_owned();
    let s = &e * e.adjoint();
    let jn = jn_invert(&m, &s).unwrap();
    assert!((&jn - &direct).norm() <= 1e-8 * direct.norm());
}

#[test]
fn jn_signals_a_null_space_and_inverts_on_the_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 8;
    let u = unitary(&mut rng, n);
    let eig = [0.0, 0.0, 1.0, -2.0, 0.5, 3.0, -1.5, 2.5];
    let d = DMatrix::from_fn(n, n, |i, j| if i == j { Complex64::new(eig[i], 0.0) } else { Complex64::new(0.0, 0.0) });
    let m = &u * d * u.adjoint();
    let null = u.columns(0, 2).into_owned();
    let s = &null * null.adjoint();
    match jn_invert(&m, &s) {
        Err(QuarticError::NotInvertible { sigma_min }) => assert!(sigma_min < 1e-12),
        other => panic!("expected a not-invertible signal, got {other:?}"),
    }
    // (M + S)⁻¹ inverts M on range(M)
    let a = (&m + &s).try_inverse().unwrap();
    let range = u.columns(2, n - 2).into_owned();
    let prod = &m * &a * &range;
    assert!((prod - &range).norm() < 1e-10);
}

#[test]
fn feshbach_form_approaches_the_inverse_of_m() {
    let ctx = full_ctx(gaussian(-1.0, 1.0), 5, 98, 5.0);
    let t = real_part(&assemble_T(&ctx).unwrap());
    let qd0q = q_inverse(&ctx, &t).unwrap();
    let parts = feshbach_parts(&ctx, &t, &qd0q, FeshbachVariant::Regular);
    let lams = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4];
    let mut errs = Vec::new();
    for &l in &lams {
        let sp = SpectralPoint::plus(l).unwrap();
        let minv = assemble_M(&ctx, sp).unwrap().entries.try_inverse().unwrap();
        let f = parts.inverse(&ctx, sp).unwrap();
        errs.push((&minv - f).norm());
    }
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    let lx: Vec<f64> = lams.iter().map(|l| l.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (rate, _) = linear_fit(&lx, &ly);
    assert!(rate > 0.5, "rate {rate}");
    // the Feshbach form is the exact inverse of g̃₁‖V‖₁P + T
    let sp = SpectralPoint::minus(1e-3).unwrap();
    let a = m_expansion(&ctx, sp, ExpansionLevel::Leading).unwrap().entries;
    let f = parts.inverse(&ctx, sp).unwrap();
    let id = DMatrix::<Complex64>::identity(ctx.len(), ctx.len());
    assert!((a * f - id).norm() < 1e-8);
    let h = parts.h(&ctx, sp).unwrap();
    let g1 = ExpansionCoefficients::frozen().g_tilde(1, sp).unwrap();
    assert!((h - g1 * ctx.norm_v1).im.abs() < 1e-14);
}

#[test]
fn perturbed_resolvent_limits_and_symmetry() {
    let x: [f64; 4] = [0.3, -0.2, 0.5, 0.1];
    let y = [-0.6, 0.4, 0.2, 0.7];
    let sp = SpectralPoint::plus(0.7).unwrap();
    let free = fourth_order_resolvent(sp, (0..4).map(|k| (x[k] - y[k]).powi(2)).sum::<f64>().sqrt()).unwrap();
    let tiny = full_ctx(gaussian(-1e-8, 1.0), 5, 98, 5.0);
    let r = perturbed_resolvent(&tiny, sp, &x, &y).unwrap();
    assert!((r - free).norm() <= 1e-6 * free.norm());
    let ctx = full_ctx(gaussian(-2.0, 1.0), 5, 98, 5.0);
    let a = perturbed_resolvent(&ctx, sp, &x, &y).unwrap();
    let b = perturbed_resolvent(&ctx, sp, &y, &x).unwrap();
    assert!((a - b).norm() <= 1e-10 * a.norm());
    assert!((a - free).norm() > 1e-3 * free.norm());
}

#[test]
fn born_remainder_is_second_order_in_the_amplitude() {
    let x: [f64; 4] = [0.3, -0.2, 0.5, 0.1];
    let y = [-0.6, 0.4, 0.2, 0.7];
    let sp = SpectralPoint::plus(0.5).unwrap();
    let dist = |a: &[f64; 4], b: &[f64; 4]| (0..4).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt();
    let free = fourth_order_resolvent(sp, dist(&x, &y)).unwrap();
    let remainder = |amp: f64| {
        let ctx = full_ctx(gaussian(amp, 1.0), 5, 98, 5.0);
        let GridData::Full(cloud) = &ctx.grid else { unreachable!() };
        let born: Complex64 = cloud
            .nodes
            .iter()
            .zip(&cloud.weights)
            .map(|(z, w)| {
                fourth_order_resolvent(sp, dist(&x, z)).unwrap()
                    * (w * ctx.potential.eval(z))
                    * fourth_order_resolvent(sp, dist(z, &y)).unwrap()
            })
            .sum();
        (perturbed_resolvent(&ctx, sp, &x, &y).unwrap() - free + born).norm()
    };
    let (r1, r2, r3) = (remainder(0.4), remainder(0.2), remainder(0.1));
    let o1 = (r1 / r2).log2();
    let o2 = (r2 / r3).log2();
    assert!((o1 - 2.0).abs() < 0.15 && (o2 - 2.0).abs() < 0.1, "orders {o1} {o2}");
}

#[test]
fn stone_density_free_limit_realness_and_positivity() {
    let ctx = full_ctx(gaussian(-1.0, 1.0), 5, 98, 5.0);
    let e1 = [1.0, 0.0, 0.0, 0.0];
    let e2 = [0.0, 2.0, 0.0, 0.0];
    let rho = stone_density(&ctx, 0.4, &e1, &e2).unwrap();
    assert!(rho.im.abs() <= 1e-10 * rho.norm(), "{rho}");
    // free jump at small λr: Im g̃₁ / π
    let im_b1 = ExpansionCoefficients::frozen().b(1).im;
    let f = free_stone_density(1e-4, 1.0).unwrap();
    assert!((f - im_b1 / PI).abs() < 1e-8 * f);
    assert_eq!(free_stone_density(0.3, 0.0).unwrap(), 1.0 / (32.0 * PI * PI));
    let tiny = full_ctx(gaussian(-1e-9, 1.0), 4, 98, 5.0);
    let t = stone_density(&tiny, 0.8, &e1, &e2).unwrap();
    let free = free_stone_density(0.8, 5f64.sqrt()).unwrap();
    assert!((t.re - free).abs() < 1e-6 * free.abs());
    // positivity of the sampled spectral density
    let pts: Vec<[f64; 4]> = vec![
        [0.1, 0.2, -0.1, 0.3],
        [0.9, -0.4, 0.2, 0.0],
        [-0.5, 0.6, 0.3, -0.2],
        [0.0, 0.0, 1.3, 0.4],
        [1.7, 0.1, -0.3, 0.2],
    ];
    for &lam in &[0.3, 0.9] {
        let n = pts.len();
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = stone_density(&ctx, lam, &pts[i], &pts[j]).unwrap().re;
            }
        }
        let sym = (&m + m.transpose()) * 0.5;
        assert!((&m - &sym).norm() < 1e-10 * m.norm());
        let ev = sym.symmetric_eigen().eigenvalues;
        assert!(ev.min() >= -1e-8, "λ={lam}: {ev}");
    }
}

#[test]
fn sector_stack_conjugation_shortcut_and_free_limit() {
    let stack = SectorStack::new(gaussian(-3.0, 1.0), 3, 24, 6.0).unwrap();
    let x: [f64; 4] = [0.8, 0.3, 0.0, 0.0];
    let y = [0.2, -0.9, 0.4, 0.0];
    let opts = SolveOptions::default();
    for &lam in &[0.2, 1.1] {
        let both = stack.stone_density(lam, &x, &y, opts).unwrap();
        let fast = stack.stone_density_many(lam, &[(x, y), ([0.0; 4], [0.0; 4])], opts).unwrap();
        assert!(both.im.abs() < 1e-12 * both.norm());
        assert!((both.re - fast[0]).abs() < 1e-12 * both.norm());
        assert!(fast[1].is_finite());
    }
    let tiny = SectorStack::new(gaussian(-1e-9, 1.0), 2, 16, 6.0).unwrap();
    let v = tiny.stone_density_many(0.5, &[(x, y)], opts).unwrap()[0];
    let d = (0..4).map(|k| (x[k] - y[k]).powi(2)).sum::<f64>().sqrt();
    let free = free_stone_density(0.5, d).unwrap();
    assert!((v - free).abs() < 1e-6 * free.abs());
}

#[test]
fn sector_kernels_with_one_radius_at_the_origin() {
    let sp = SpectralPoint::plus(0.7).unwrap();
    let k = sector_reduce_all(&Kernel::Fourth(sp), 3, 0.0, 1.5).unwrap();
    let f = fourth_order_resolvent(sp, 1.5).unwrap();
    assert!((k[0] - f * (2.0 * PI * PI)).norm() < 1e-14);
    assert!(k[1..].iter().all(|z| z.norm() == 0.0));
    assert!(sector_reduce_all(&Kernel::G(1), 2, 0.0, 0.0).is_err());
}

/// `Δ_h f` with the 9-point 4D stencil.
fn lap(f: &dyn Fn(&[f64; 4]) -> f64, x: &[f64; 4], h: f64) -> f64 {
    let mut s = -8.0 * f(x);
    for k in 0..4 {
        let mut a = *x;
        a[k] += h;
        let mut b = *x;
        b[k] -= h;
        s += f(&a) + f(&b);
    }
    s / (h * h)
}

fn bilap(f: &dyn Fn(&[f64; 4]) -> f64, x: &[f64; 4], h: f64) -> f64 {
    let g = |y: &[f64; 4]| lap(f, y, h);
    lap(&g, x, h)
}

#[test]
fn inverse_constructed_potentials_solve_the_zero_energy_equation() {
    let points = [[0.3, 0.7, -0.4, 0.2], [1.1, 0.5, 0.9, -0.6], [2.0, -1.3, 0.8, 0.4]];
    for (ell, p) in [(0usize, 3.0), (0, 2.0), (1, 2.0), (2, 4.0), (3, 6.0)] {
        let psi = PsiFamily { ell, exponent: p };
        let f = move |x: &[f64; 4]| psi.eval(x);
        for x in &points {
            // two Richardson levels on h, h/2, h/4 remove the O(h²) and O(h⁴) stencil errors
            let b: Vec<f64> = [0.08, 0.04, 0.02].iter().map(|&h| bilap(&f, x, h)).collect();
            let (c1, c2) = ((4.0 * b[1] - b[0]) / 3.0, (4.0 * b[2] - b[1]) / 3.0);
            let b = (16.0 * c2 - c1) / 15.0;
            let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
            let res = (b + psi.potential(r) * psi.eval(x)).abs() / b.abs().max((psi.potential(r) * psi.eval(x)).abs());
            assert!(res < 1e-6, "ell={ell} p={p} x={x:?}: residual {res:e}");
        }
    }
    // frozen values from the computer-algebra derivation
    let v = |ell: usize, p: f64, r: f64| PsiFamily { ell, exponent: p }.potential(r);
    let u = |r: f64| 1.0 + r * r;
    assert!((v(0, 2.0, 0.7) - 192.0 * (0.49 - 1.0) / u(0.7).powi(4)).abs() < 1e-12);
    assert!((v(3, 6.0, 1.3) + 5760.0 / u(1.3).powi(4)).abs() < 1e-12);
    assert!((v(1, 2.0, 0.4) + 384.0 / u(0.4).powi(4)).abs() < 1e-12);
    let s = 0.25f64;
    assert!((v(0, 3.0, 0.5) + 45.0 * (s * s - 12.0 * s + 8.0) / u(0.5).powi(4)).abs() < 1e-12);
    assert_eq!(PsiFamily { ell: 3, exponent: 6.0 }.tail_exponent(), -3.0);
}

#[test]
fn potential_specs_validate_and_round_trip() {
    assert!(PotentialSpec::new(PotentialFamily::InversePower { beta: 4.0 }, 1.0).is_err());
    assert!(PotentialSpec::new(PotentialFamily::SectorModulated { width: 1.0, depth: 1.0 }, 1.0).is_err());
    assert!(PotentialSpec::new(PotentialFamily::InverseConstructed { ell: 4, exponent: 8.0 }, 1.0).is_err());
    let p = PotentialSpec::new(PotentialFamily::CompactBump { radius: 2.0, center: [0.0, 1.0, 0.0, 0.0] }, -0.5).unwrap();
    let s = serde_json::to_string(&p).unwrap();
    let back: PotentialSpec = serde_json::from_str(&s).unwrap();
    assert_eq!(back, p);
    assert!(!p.is_radial());
    assert_eq!(p.sign_pattern(), SignPattern::Nonpositive);
    let bad = r#"{"family":{"type":"inverse-power","beta":6.0,"gamma":1.0},"amplitude":1.0}"#;
    assert!(serde_json::from_str::<PotentialSpec>(bad).is_err());
    let ic = PotentialSpec::new(PotentialFamily::InverseConstructed { ell: 0, exponent: 2.0 }, 1.0).unwrap();
    assert_eq!(ic.sign_pattern(), SignPattern::Indefinite);
    let k4 = PotentialSpec::new(PotentialFamily::InverseConstructed { ell: 3, exponent: 6.0 }, 1.0).unwrap();
    assert_eq!(k4.sign_pattern(), SignPattern::Nonpositive);
    assert_eq!(gaussian(0.0, 1.0).sign_pattern(), SignPattern::Zero);
}
