use affdim_core::attractor::{
    cylinder_diameter_bound, falconer_weights, partial_sum, project, ProjectionConfig,
};
use affdim_core::dimension::{affinity_dimension, sk_sequence};
use affdim_core::estimators::{transversality_check, transversality_z, Continuations};
use affdim_core::ifs::{pressure_sum_exact, pressure_sum_mc, AffineMap, IfsSpec, Word};
use affdim_core::linalg::{approx_le, singular_values, svf, Matrix, SingularSpectrum};
use affdim_core::randomness::{
    stream_rng, uniform_f64, uniform_index, DistributionSpec, FieldModel, PerturbationField,
};
use proptest::prelude::*;

fn scaled(dim: usize, entries: Vec<f64>, norm: f64) -> Matrix {
    let raw = Matrix::new(dim, entries).unwrap();
    let n = raw.operator_norm();
    let data = raw.as_slice().iter().map(|v| v * norm / n).collect();
    Matrix::new(dim, data).unwrap()
}

/// Contracting matrix with operator norm in `[0.05, 0.95]`.
fn contracting(dim: usize) -> impl Strategy<Value = Matrix> {
    (prop::collection::vec(-1.0f64..1.0, dim * dim), 0.05f64..0.95).prop_filter_map(
        "near-singular",
        move |(e, norm)| {
            let m = Matrix::new(dim, e).ok()?;
            let sp = singular_values(&m).ok()?;
            (sp.largest() > 1e-3 && sp.smallest() > 1e-3 * sp.largest()).then(|| scaled(dim, m.as_slice().to_vec(), norm))
        },
    )
}

fn rotation2(a: f64) -> Matrix {
    Matrix::from_rows(&[vec![a.cos(), -a.sin()], vec![a.sin(), a.cos()]]).unwrap()
}

/// Orthogonal 3×3 from three Givens rotations and a sign flip.
fn orthogonal3(a: f64, b: f64, c: f64, flip: bool) -> Matrix {
    let rz = Matrix::from_rows(&[vec![a.cos(), -a.sin(), 0.0], vec![a.sin(), a.cos(), 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
    let rx = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, b.cos(), -b.sin()], vec![0.0, b.sin(), b.cos()]]).unwrap();
    let ry = Matrix::from_rows(&[vec![c.cos(), 0.0, c.sin()], vec![0.0, 1.0, 0.0], vec![-c.sin(), 0.0, c.cos()]]).unwrap();
    let f = Matrix::diag(&[1.0, 1.0, if flip { -1.0 } else { 1.0 }]).unwrap();
    rz.mul(&rx).mul(&ry).mul(&f)
}

fn phi(t: &Matrix, s: f64) -> f64 {
    svf(&singular_values(t).unwrap(), s).unwrap()
}

fn small_system(dim: usize, max_maps: usize) -> impl Strategy<Value = IfsSpec> {
    prop::collection::vec((contracting(dim), prop::collection::vec(-1.0f64..1.0, dim)), 1..=max_maps)
        .prop_map(|maps| IfsSpec::new(maps.into_iter().map(|(t, a)| AffineMap::new(t, a)).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn svf_submultiplicative(a in contracting(2), b in contracting(2), s in 0.0f64..4.0) {
        prop_assert!(approx_le(phi(&a.mul(&b), s), phi(&a, s) * phi(&b, s)));
    }

    #[test]
    fn svf_submultiplicative_3d(a in contracting(3), b in contracting(3), s in 0.0f64..6.0) {
        prop_assert!(approx_le(phi(&a.mul(&b), s), phi(&a, s) * phi(&b, s)));
    }

    #[test]
    fn svf_exponent_shift(t in contracting(3), s in 0.01f64..5.0, h in 0.01f64..3.0) {
        let sp = singular_values(&t).unwrap();
        prop_assert!(approx_le(svf(&sp, s + h).unwrap(), svf(&sp, s).unwrap() * sp.largest().powf(h)));
    }

    #[test]
    fn svf_non_increasing(t in contracting(3), s in 0.0f64..6.0, ds in 0.0f64..1.0) {
        let sp = singular_values(&t).unwrap();
        prop_assert!(approx_le(svf(&sp, s + ds).unwrap(), svf(&sp, s).unwrap()));
    }

    #[test]
    fn svf_continuous_at_integers(t in contracting(3), r in 1usize..=3) {
        let sp = singular_values(&t).unwrap();
        let at = svf(&sp, r as f64).unwrap();
        let below = svf(&sp, r as f64 - 1e-10).unwrap();
        let above = svf(&sp, r as f64 + 1e-10).unwrap();
        prop_assert!((at - below).abs() <= 1e-8 * at.max(1e-300));
        prop_assert!((at - above).abs() <= 1e-8 * at.max(1e-300));
    }

    #[test]
    fn orthogonal_invariance_2d(t in contracting(2), a in 0.0f64..6.3, b in 0.0f64..6.3) {
        let moved = rotation2(a).mul(&t).mul(&rotation2(b));
        let (x, y) = (singular_values(&t).unwrap(), singular_values(&moved).unwrap());
        for (u, v) in x.values().iter().zip(y.values()) {
            prop_assert!((u - v).abs() <= 1e-12 * x.largest());
        }
    }

    #[test]
    fn orthogonal_invariance_3d(t in contracting(3), a in 0.0f64..6.3, b in 0.0f64..6.3, c in 0.0f64..6.3, f in any::<bool>()) {
        let moved = orthogonal3(a, b, c, f).mul(&t).mul(&orthogonal3(c, a, b, !f));
        let (x, y) = (singular_values(&t).unwrap(), singular_values(&moved).unwrap());
        for (u, v) in x.values().iter().zip(y.values()) {
            prop_assert!((u - v).abs() <= 1e-12 * x.largest());
        }
    }

    #[test]
    fn singular_values_square_to_gram_eigenvalues(t in contracting(2)) {
        // Trace and determinant of TᵀT give the eigenvalues in closed form.
        let g = t.transpose().mul(&t);
        let (tr, det) = (g.get(0, 0) + g.get(1, 1), g.determinant());
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        let sp = singular_values(&t).unwrap();
        prop_assert!((sp.values()[0].powi(2) - (tr / 2.0 + disc)).abs() <= 1e-12);
        prop_assert!((sp.values()[1].powi(2) - (tr / 2.0 - disc)).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pressure_submultiplicative(spec in small_system(2, 3), s in 0.0f64..4.0, n in 1usize..4, k in 1usize..4) {
        let a = pressure_sum_exact(&spec, s, n).unwrap().value;
        let b = pressure_sum_exact(&spec, s, k).unwrap().value;
        let ab = pressure_sum_exact(&spec, s, n + k).unwrap().value;
        prop_assert!(approx_le(ab, a * b));
    }

    #[test]
    fn pressure_non_increasing_in_s(spec in small_system(3, 3), s in 0.0f64..5.0, ds in 0.0f64..1.0, n in 1usize..5) {
        let a = pressure_sum_exact(&spec, s, n).unwrap().value;
        let b = pressure_sum_exact(&spec, s + ds, n).unwrap().value;
        prop_assert!(approx_le(b, a));
    }

    #[test]
    fn pressure_level_one_direct(spec in small_system(3, 4), s in 0.0f64..6.0) {
        let direct: f64 = (0..spec.num_maps()).map(|i| svf(spec.spectrum(i), s).unwrap()).sum();
        let sum = pressure_sum_exact(&spec, s, 1).unwrap().value;
        prop_assert!((sum - direct).abs() <= 1e-12 * direct);
    }

    #[test]
    fn truncation_sound(spec in small_system(2, 3), seed in any::<u64>(), sigma in 0.01f64..0.5, word_seed in any::<u64>()) {
        let theta = 0.5 * (spec.norm_t() + 1.0);
        let cfg = ProjectionConfig::new(&spec, 1e-6, theta).unwrap();
        let field = PerturbationField::new(seed, DistributionSpec::gaussian(sigma, 2).unwrap(), FieldModel::FullWordIid);
        let m = spec.num_maps();
        let mut rng = stream_rng(word_seed, 0);
        let symbols: Vec<u32> = (0..cfg.max_depth + 5).map(|_| uniform_index(&mut rng, m) as u32).collect();
        let p = project(&spec, &field, &mut |r| symbols[r], &cfg).unwrap();
        let deeper = partial_sum(&spec, &field, &symbols[..p.word.len() + 5]).unwrap();
        let moved = p.point.iter().zip(&deeper).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(moved <= p.truncation_bound, "{moved} > {}", p.truncation_bound);
        prop_assert!(p.truncation_bound <= 1e-6);
    }

    #[test]
    fn cylinder_nesting(spec in small_system(2, 3), word in prop::collection::vec(0u32..3, 0..8), child in 0u32..3) {
        let m = spec.num_maps() as u32;
        let word: Vec<u32> = word.into_iter().map(|s| s % m).collect();
        let theta = 0.5 * (spec.norm_t() + 1.0);
        let parent = cylinder_diameter_bound(&spec, theta, &word).unwrap();
        let mut longer = word.clone();
        longer.push(child % m);
        let kid = cylinder_diameter_bound(&spec, theta, &longer).unwrap();
        prop_assert!(approx_le(kid, parent * spec.norm_t() / theta));
    }

    #[test]
    fn word_measure_inequality(spec in small_system(2, 3), s in 0.0f64..2.0, n in 0usize..5) {
        let mu = falconer_weights(&spec, s, n).unwrap();
        let total: f64 = mu.weights.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        for idx in 0..mu.len() {
            let w = mu.word(idx);
            let bound = mu.c_prime * svf(&spec.word_spectrum(&w).unwrap(), s).unwrap();
            prop_assert!(approx_le(mu.weights[idx], bound));
        }
    }

    #[test]
    fn z_properties(a in 0.01f64..1.0, b in 0.01f64..1.0, c in 0.01f64..1.0, rho in 0.0f64..2.0, drho in 0.0f64..1.0) {
        let sp = SingularSpectrum::new(vec![a, b, c]).unwrap();
        let z = transversality_z(&sp, rho);
        prop_assert!((0.0..=1.0).contains(&z));
        prop_assert!(z <= transversality_z(&sp, rho + drho));
        let vol = sp.volume();
        prop_assert!(approx_le(z, rho.powi(3) / vol));
        if rho <= sp.smallest() {
            prop_assert!((z - rho.powi(3) / vol).abs() <= 1e-12 * z.max(1e-300));
        }
        if rho >= sp.largest() {
            prop_assert_eq!(z, 1.0);
        }
        prop_assert_eq!(transversality_z(&sp, 0.0), 0.0);
    }

    #[test]
    fn layer_cake_identity(t in 0.2f64..0.9, seed in any::<u64>()) {
        // X uniform on the unit disc: P(|X| < ρ) = min(ρ, 1)², so
        // t ∫ P(|X| < ρ) ρ^{−t−1} dρ = t/(2 − t) + 1.
        // t < 1 keeps the variance finite.
        let mut rng = stream_rng(seed, 0);
        let n = 20_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        let mut k = 0;
        while k < n {
            let (x, y) = (2.0 * uniform_f64(&mut rng) - 1.0, 2.0 * uniform_f64(&mut rng) - 1.0);
            let r2: f64 = x * x + y * y;
            if r2 > 1.0 || r2 == 0.0 {
                continue;
            }
            let v = r2.sqrt().powf(-t);
            sum += v;
            sq += v * v;
            k += 1;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        // Quadrature of the layer-cake integral on [0, 1] (with r = u⁴ to tame
        // the endpoint) plus the closed tail.
        let steps = 200_000;
        let h = 1.0 / steps as f64;
        let inner: f64 = (0..steps)
            .map(|i| {
                let u = (i as f64 + 0.5) * h;
                let r = u.powi(4);
                r * r * r.powf(-t - 1.0) * 4.0 * u.powi(3) * h
            })
            .sum();
        let layer = t * inner + 1.0;
        prop_assert!((layer - (t / (2.0 - t) + 1.0)).abs() < 1e-4);
        prop_assert!((mean - layer).abs() <= 5.0 * se + 1e-4, "{mean} vs {layer} (se {se})");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn similarity_dimension_oracle(ratios in prop::collection::vec(0.1f64..0.6, 2..=4), angles in prop::collection::vec(0.0f64..6.3, 4)) {
        let maps: Vec<AffineMap> = ratios
            .iter()
            .zip(&angles)
            .enumerate()
            .map(|(i, (&r, &a))| {
                let rot = rotation2(a);
                let t = Matrix::new(2, rot.as_slice().iter().map(|v| v * r).collect()).unwrap();
                AffineMap::new(t, vec![i as f64, 0.0])
            })
            .collect();
        let spec = IfsSpec::new(maps).unwrap();
        // Σ r_i^s = 1 by bisection in the test itself.
        let f = |s: f64| ratios.iter().map(|r| r.powf(s)).sum::<f64>() - 1.0;
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 { lo = mid } else { hi = mid }
        }
        let oracle = 0.5 * (lo + hi);
        prop_assume!(oracle <= 2.0);
        let r = affinity_dimension(&spec, 1e-3, 8).unwrap();
        prop_assert!((r.value - oracle).abs() <= 1e-3 + 1e-9, "{} vs {oracle}", r.value);
        prop_assert!(r.bracket.0 <= r.value && r.value <= r.bracket.1);
    }

    #[test]
    fn sk_non_increasing(spec in small_system(2, 3)) {
        let t0 = spec.norm_t();
        let thetas: Vec<f64> = [0.3, 0.6, 0.9, 1.0].iter().map(|f| t0 + (1.0 - t0) * f).collect();
        let s = sk_sequence(&spec, &thetas, 1e-10, 6).unwrap();
        prop_assert!(s.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{s:?}");
    }

    #[test]
    fn transversality_passes(spec in small_system(2, 3), uniform in any::<bool>(), seed in any::<u64>()) {
        prop_assume!(spec.num_maps() >= 2);
        let dist = if uniform {
            DistributionSpec::uniform_ball(0.3, 2).unwrap()
        } else {
            DistributionSpec::gaussian(0.1, 2).unwrap()
        };
        let theta = 0.5 * (spec.norm_t() + 1.0);
        let cfg = ProjectionConfig::new(&spec, 1e-6, theta).unwrap();
        let mut rng = stream_rng(seed, 0);
        let m = spec.num_maps();
        let i: Vec<u32> = (0..3).map(|_| uniform_index(&mut rng, m) as u32).collect();
        let mut j = i.clone();
        j[2] = (j[2] + 1) % m as u32;
        let seeds: Vec<u64> = (0..400).map(|k| seed.wrapping_add(k)).collect();
        let rho: Vec<f64> = (0..8).map(|k| 1e-3 * 3f64.powi(k)).collect();
        let rep = transversality_check(&spec, &dist, FieldModel::FullWordIid, &Word::new(i), &Word::new(j), &rho, &seeds, Continuations::PerSeed, &cfg).unwrap();
        prop_assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn mc_agrees_with_exact(spec in small_system(2, 3), s in 0.2f64..2.0) {
        let exact = pressure_sum_exact(&spec, s, 6).unwrap().value;
        let mut outside = 0;
        for seed in 0..100u64 {
            let mc = pressure_sum_mc(&spec, s, 6, 512, seed).unwrap();
            if (mc.value - exact).abs() > 4.0 * mc.stderr + 1e-12 * exact {
                outside += 1;
            }
        }
        prop_assert!(outside <= 1, "{outside} of 100 seeds outside 4 stderr");
    }
}

#[test]
fn gaussian_field_moments() {
    let f = PerturbationField::new(17, DistributionSpec::gaussian(1.0, 2).unwrap(), FieldModel::FullWordIid);
    let n = 100_000usize;
    let (mut m0, mut m1, mut c00, mut c01, mut c11) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for k in 0..n {
        let word: Vec<u32> = (0..6).map(|b| ((k >> (3 * b)) & 7) as u32).chain([(k >> 18) as u32]).collect();
        let y = f.perturbation(&word).unwrap();
        m0 += y[0];
        m1 += y[1];
        c00 += y[0] * y[0];
        c01 += y[0] * y[1];
        c11 += y[1] * y[1];
    }
    let nf = n as f64;
    let tol = 4.0 / nf.sqrt();
    assert!((m0 / nf).abs() < tol && (m1 / nf).abs() < tol);
    assert!((c00 / nf - 1.0).abs() < 0.05);
    assert!((c11 / nf - 1.0).abs() < 0.05);
    assert!((c01 / nf).abs() < 0.05);
}
