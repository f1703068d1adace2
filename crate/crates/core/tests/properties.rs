//! Randomized invariants of assembly, spectra, subspaces and moment tools.

use std::f64::consts::PI;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;
use snapspan::moments::{
    dn_gram, dn_infinity_product, finite_biorth_norm, widder_table, Arithmetic, ExponentSequence, Horizon,
    MomentSequence, Tail,
};
use snapspan::snapshot::{add_noise, assemble, SpaceGrid, TimeGrid, DEFAULT_SERIES_TOL};
use snapspan::spectral::{CoefficientFamily, EigenFamily};
use snapspan::subspace::build_subspace;

fn explicit(values: &[f64]) -> CoefficientFamily {
    CoefficientFamily::ExplicitList {
        values: values.to_vec(),
    }
}

/// Ascending exponents with relative gaps of at least 5%.
fn separated_exponents(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    (0.1f64..5.0, prop::collection::vec(0.05f64..1.5, 1..max_len)).prop_map(|(first, steps)| {
        let mut out = vec![first];
        for s in steps {
            let last = *out.last().unwrap();
            out.push(last * (1.0 + s));
        }
        out
    })
}

fn brute_force_levels(family: &EigenFamily, cutoff: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let s2 = 2f64.sqrt();
    for m in 1..200usize {
        for n in 1..200usize {
            let (m, n) = (m as f64, n as f64);
            let mu = match family {
                EigenFamily::Rect2D => PI * PI * (m * m + s2 * n * n),
                EigenFamily::FourthOrder2D => PI * PI * (m.powi(4) + s2 * n.powi(4)),
                _ => unreachable!(),
            };
            if mu <= cutoff {
                out.push(mu);
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn assembly_is_linear(
        a in prop::collection::vec(-1.0f64..1.0, 12),
        b in prop::collection::vec(-1.0f64..1.0, 12),
        alpha in -3.0f64..3.0,
    ) {
        let family = EigenFamily::Dirichlet1D;
        let space = SpaceGrid::for_family(&family, 65).unwrap();
        let times = TimeGrid::logarithmic(1e-3, 1.0, 9).unwrap();
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + alpha * y).collect();
        let run = |c: &[f64]| assemble(&family, &explicit(c), &space, &times, DEFAULT_SERIES_TOL).unwrap().values().clone();
        let lhs = run(&combo);
        let rhs = run(&a) + run(&b) * alpha;
        let scale = 1.0 + lhs.amax();
        prop_assert!((lhs - rhs).amax() <= 1e-13 * scale);
    }

    #[test]
    fn dirichlet_spectrum_is_n_squared(cutoff_n in 1usize..300) {
        let cutoff = PI * PI * (cutoff_n * cutoff_n) as f64 * (1.0 + 1e-9);
        let levels = EigenFamily::Dirichlet1D.sorted_spectrum(cutoff);
        prop_assert_eq!(levels.len(), cutoff_n);
        for (i, l) in levels.iter().enumerate() {
            let n = (i + 1) as f64;
            prop_assert!((l.value - PI * PI * n * n).abs() <= 1e-12 * l.value);
            prop_assert_eq!(l.multiplicity, 1);
        }
    }

    #[test]
    fn grid_spectra_match_brute_force(units in 5.0f64..600.0, fourth in any::<bool>()) {
        let family = if fourth { EigenFamily::FourthOrder2D } else { EigenFamily::Rect2D };
        let cutoff = units * PI * PI;
        let expected = brute_force_levels(&family, cutoff);
        let levels = family.sorted_spectrum(cutoff);
        let listed: Vec<f64> = levels.iter().flat_map(|l| std::iter::repeat_n(l.value, l.multiplicity)).collect();
        prop_assert_eq!(listed.len(), expected.len());
        for (x, y) in listed.iter().zip(&expected) {
            prop_assert!((x - y).abs() <= 1e-12 * y);
        }
        prop_assert!(levels.windows(2).all(|w| w[0].value < w[1].value));
    }

    #[test]
    fn subspaces_are_orthonormal_projectors(
        coeffs in prop::collection::vec(-1.0f64..1.0, 3..30),
        probe in prop::collection::vec(-1.0f64..1.0, 5),
        seed in any::<u64>(),
    ) {
        let family = EigenFamily::Dirichlet1D;
        let space = SpaceGrid::for_family(&family, 201).unwrap();
        let times = TimeGrid::logarithmic(1e-4, 1.0, 60).unwrap();
        let clean = assemble(&family, &explicit(&coeffs), &space, &times, DEFAULT_SERIES_TOL).unwrap();
        let m = add_noise(&clean, 1e-6, seed).unwrap();
        let s = build_subspace(&[&m], 1e-10).unwrap();
        let w = space.weights();
        let b = s.basis();
        for i in 0..s.dim() {
            for j in 0..s.dim() {
                let g: f64 = (0..b.nrows()).map(|r| w[r] * b[(r, i)] * b[(r, j)]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                prop_assert!((g - target).abs() <= 1e-10);
            }
        }
        let field = space.sample(|p| probe.iter().enumerate().map(|(k, c)| c * (p[0] * (k + 1) as f64 * 2.3).cos()).sum());
        let once = s.project(&field).unwrap();
        let twice = s.project(&once).unwrap();
        let size = 1.0 + space.norm(&field);
        for (x, y) in once.iter().zip(&twice) {
            prop_assert!((x - y).abs() <= 1e-12 * size);
        }
        // The residual is orthogonal to the subspace.
        let residual: Vec<f64> = field.iter().zip(&once).map(|(f, p)| f - p).collect();
        for c in s.coordinates(&residual).unwrap() {
            prop_assert!(c.abs() <= 1e-12 * size);
        }
    }

    #[test]
    fn gram_and_product_agree_on_finite_sets(values in separated_exponents(10), pick in any::<prop::sample::Index>()) {
        let e = ExponentSequence::new(values.clone()).unwrap();
        let n = pick.index(values.len()) + 1;
        let product = dn_infinity_product(&e, n, values.len(), Tail::None).unwrap().value;
        let gram = dn_gram(&e, n, Horizon::Infinite, 80).unwrap();
        prop_assert!((product - gram).abs() <= 1e-10 * gram, "product {product:e} gram {gram:e}");
        // Distance times bi-orthogonal norm is one.
        let b = finite_biorth_norm(&e, n).unwrap().value;
        prop_assert!((b * gram - 1.0).abs() <= 1e-10);
        // Never farther than the function's own norm.
        prop_assert!(gram <= (2.0 * values[n - 1]).sqrt().recip() * (1.0 + 1e-12));
    }

    #[test]
    fn distance_shrinks_as_exponents_are_added(values in separated_exponents(12)) {
        let e = ExponentSequence::new(values.clone()).unwrap();
        let mut last = f64::INFINITY;
        for len in 1..=values.len() {
            let d = dn_gram(&e.prefix(len).unwrap(), 1, Horizon::Infinite, 80).unwrap();
            prop_assert!(d <= last * (1.0 + 1e-12));
            last = d;
        }
    }

    #[test]
    fn finite_horizon_never_exceeds_infinite(values in separated_exponents(6), horizon in 0.5f64..20.0) {
        let e = ExponentSequence::new(values).unwrap();
        let inf = dn_gram(&e, 1, Horizon::Infinite, 80).unwrap();
        let fin = dn_gram(&e, 1, Horizon::Finite(horizon), 80).unwrap();
        prop_assert!(fin <= inf * (1.0 + 1e-10));
    }

    #[test]
    fn point_mass_moments_give_bernstein_weights(num in 0i64..=16, kmax in 1usize..16) {
        // m_n = r^{n-1} are the moments of a point mass at r = num / 16.
        // Keep r^k exact in binary floating point.
        prop_assume!((num as f64).powi(kmax as i32) < 2f64.powi(53));
        let r = num as f64 / 16.0;
        let values = (0..=kmax).map(|n| r.powi(n as i32)).collect();
        let t = widder_table(&MomentSequence::Explicit { values }, kmax, Arithmetic::Exact).unwrap();
        let r_exact = BigRational::new(BigInt::from(num), BigInt::from(16));
        let q_exact = BigRational::one() - &r_exact;
        for row in &t.rows {
            let lambda = row.lambda_exact.as_ref().unwrap();
            let mut total = BigRational::zero();
            let mut binom = BigInt::one();
            for (kp, l) in lambda.iter().enumerate() {
                let expected = BigRational::from_integer(binom.clone())
                    * pow(&r_exact, kp)
                    * pow(&q_exact, row.k - kp);
                prop_assert_eq!(l, &expected);
                total += l;
                binom = binom * BigInt::from(row.k - kp) / BigInt::from(kp + 1);
            }
            prop_assert!(total.is_one());
        }
    }
}

fn pow(x: &BigRational, k: usize) -> BigRational {
    (0..k).fold(BigRational::one(), |acc, _| acc * x)
}

#[test]
fn noise_is_bounded_and_reproducible() {
    let family = EigenFamily::Dirichlet1D;
    let space = SpaceGrid::for_family(&family, 51).unwrap();
    let times = TimeGrid::uniform(0.01, 0.1, 20).unwrap();
    let m = assemble(
        &family,
        &explicit(&[1.0, 0.5]),
        &space,
        &times,
        DEFAULT_SERIES_TOL,
    )
    .unwrap();
    let a = add_noise(&m, 1e-3, 9).unwrap();
    let b = add_noise(&m, 1e-3, 9).unwrap();
    let c = add_noise(&m, 1e-3, 10).unwrap();
    assert_eq!(a.values(), b.values());
    assert_ne!(a.values(), c.values());
    let e = a.values() - m.values();
    assert!(e.amax() <= 1e-3);
    assert!(e.amax() > 5e-4);
}
