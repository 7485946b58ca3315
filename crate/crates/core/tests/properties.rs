use phasefield_core::models::{clip_to_K, eval_b_eta, make_model, validate_invariance, EtaCutoff, ParamMap, Preset};
use phasefield_core::noise::{spectral_sums, NoiseSampler};
use phasefield_core::{build_spectrum, grad_cap, mean_integral, NoiseLedger, NoiseSpec, ScalarField, Spectral, TorusGrid, VectorField};
use proptest::prelude::*;

const N: usize = 16;

fn grid() -> TorusGrid {
    TorusGrid::new(2, N).unwrap()
}

fn scalar(values: Vec<f64>) -> ScalarField {
    ScalarField::new(grid(), values).unwrap()
}

fn values(lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, N * N)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transform_round_trip(v in values(-10.0, 10.0)) {
        let mut ws = Spectral::new(grid());
        let f = scalar(v);
        let c = ws.transform(&f);
        let back = ws.synthesize(&c);
        prop_assert!(max_abs_diff(back.values(), f.values()) <= 1e-12 * f.sup_norm().max(1.0));
    }

    #[test]
    fn parseval_and_real_symmetry(v in values(-3.0, 3.0)) {
        let mut ws = Spectral::new(grid());
        let f = scalar(v);
        let c = ws.transform(&f);
        let energy: f64 = c.coeffs().iter().map(|z| z.norm_sqr()).sum();
        let mean_sq = f.norm_sq();
        prop_assert!((energy - mean_sq).abs() <= 1e-12 * mean_sq.max(1.0));
        prop_assert!(c.hermitian_defect() <= 1e-12 * f.sup_norm().max(1.0));
        prop_assert!((c.mean() - mean_integral(&f)).abs() <= 1e-13 * f.sup_norm().max(1.0));
    }

    #[test]
    fn laplacian_has_zero_mean(v in values(-1.0, 1.0)) {
        let mut ws = Spectral::new(grid());
        let lap = ws.laplacian(&scalar(v)).unwrap();
        prop_assert!(mean_integral(&lap).abs() <= 1e-12 * lap.sup_norm().max(1.0));
    }

    #[test]
    fn divergence_of_gradient_is_laplacian(v in values(-1.0, 1.0)) {
        let mut ws = Spectral::new(grid());
        let f = scalar(v);
        let grad = ws.gradient(&f).unwrap();
        let a = ws.divergence(&grad).unwrap();
        let b = ws.laplacian(&f).unwrap();
        // the Nyquist row is dropped by the first derivative
        let ca = ws.transform(&a);
        let cb = ws.transform(&b);
        let g = grid();
        let mut worst: f64 = 0.0;
        for i in 0..g.len() {
            let k = g.wavevector(i);
            if k[0].unsigned_abs() as usize * 2 == N || k[1].unsigned_abs() as usize * 2 == N {
                continue;
            }
            worst = worst.max((ca.coeffs()[i] - cb.coeffs()[i]).norm());
        }
        prop_assert!(worst <= 1e-10 * b.sup_norm().max(1.0), "{}", worst);
    }

    #[test]
    fn grad_cap_bounds_and_fixes(a in values(-5.0, 5.0), b in values(-5.0, 5.0), tau in 0.1f64..10.0) {
        let v = VectorField::new(grid(), vec![a, b]).unwrap();
        let capped = grad_cap(&v, tau).unwrap();
        prop_assert!(capped.magnitude().values().iter().all(|&m| m <= tau * (1.0 + 1e-15)));
        let mag = v.magnitude();
        for j in 0..grid().len() {
            let m = mag.values()[j];
            for i in 0..2 {
                let (x, y) = (v.comp(i)[j], capped.comp(i)[j]);
                if m <= tau {
                    prop_assert_eq!(x, y);
                } else {
                    // same direction, shorter
                    prop_assert!(x * y >= 0.0 && y.abs() <= x.abs());
                }
            }
        }
        let big = v.sup_norm().max(tau) * 2.0;
        prop_assert_eq!(grad_cap(&v, big).unwrap(), v);
    }

    #[test]
    fn clip_is_idempotent_and_nonexpansive(a in values(-0.5, 1.5), b in values(-0.5, 1.5)) {
        let m = make_model("abs", &ParamMap::new()).unwrap();
        let x = VectorField::new(grid(), vec![a]).unwrap();
        let y = VectorField::new(grid(), vec![b]).unwrap();
        let cx = clip_to_K(&x, &m);
        prop_assert_eq!(clip_to_K(&cx, &m), cx.clone());
        let cy = clip_to_K(&y, &m);
        for j in 0..grid().len() {
            prop_assert!((cx.comp(0)[j] - cy.comp(0)[j]).abs() <= (x.comp(0)[j] - y.comp(0)[j]).abs());
            prop_assert!(cx.comp(0)[j] >= m.lower()[0] && cx.comp(0)[j] <= m.upper()[0]);
        }
    }

    #[test]
    fn eta_is_a_unit_cutoff(c in prop::collection::vec(-0.5f64..1.5, 3), margin in 0.01f64..0.2) {
        let eta = EtaCutoff::new(margin).unwrap();
        let lo = [0.0; 3];
        let hi = [1.0; 3];
        let e = eta.eval(&c, &lo, &hi);
        prop_assert!((0.0..=1.0).contains(&e));
        let outside = c.iter().any(|&x| !(0.0..=1.0).contains(&x));
        let inset = c.iter().all(|&x| x >= margin && x <= 1.0 - margin);
        if outside {
            prop_assert_eq!(e, 0.0);
        }
        if inset {
            prop_assert_eq!(e, 1.0);
        }
    }

    #[test]
    fn amplitude_vanishes_outside_the_box(phi in values(0.0, 1.0), c in values(-0.5, 1.5)) {
        let m = make_model("abs", &ParamMap::new()).unwrap();
        let f = scalar(phi);
        let cv = VectorField::new(grid(), vec![c.clone()]).unwrap();
        let b = eval_b_eta(&m, &m.eta(), &f, &cv).unwrap();
        for j in 0..grid().len() {
            if !(0.0..=1.0).contains(&c[j]) {
                prop_assert_eq!(b.comp(0)[j], 0.0);
            }
        }
    }

    #[test]
    fn nonlocal_threshold_is_truncated(phi in values(-0.2, 1.2), c in values(-0.5, 1.5)) {
        let m = make_model("abs", &ParamMap::new()).unwrap();
        let nl = m.nonlocal(&phi, &[c]);
        let dt = m.delta_tilde(&nl).unwrap();
        prop_assert!((0.05..=0.95).contains(&dt));
    }

    #[test]
    fn bessel_weights_are_positive_and_symmetric(s in 1.2f64..4.0, k_max in 1usize..12) {
        let spec = NoiseSpec { s, k_max, ..NoiseSpec::new(1, 0) };
        let spectrum = build_spectrum(&spec, TorusGrid::new(2, 32).unwrap()).unwrap();
        prop_assert!(spectrum.modes().iter().all(|m| m.lambda > 0.0));
        let (tr, hs) = spectral_sums(2, spec.r, s, k_max);
        prop_assert!(tr > 0.0 && hs >= tr);
    }

    #[test]
    fn noise_is_reproducible_and_refines(seed in any::<u64>(), step in 0usize..1000, refine in 2usize..6) {
        let g = TorusGrid::new(2, 32).unwrap();
        let spec = NoiseSpec::new(2, seed);
        let mut ws = Spectral::new(g);
        let dt = 1e-3;
        let a = NoiseLedger::lazy(spec, g, dt, 2000).increment(step, &mut ws).unwrap();
        let b = NoiseLedger::lazy(spec, g, dt, 2000).increment(step, &mut ws).unwrap();
        prop_assert_eq!(&a, &b);
        let coarse = NoiseLedger::lazy_refined(spec, g, dt, 2000, refine).increment(step, &mut ws).unwrap();
        let fine = NoiseLedger::lazy(spec, g, dt / refine as f64, 2000 * refine);
        let mut sum = vec![vec![0.0; g.len()]; 2];
        for j in 0..refine {
            let inc = fine.increment(step * refine + j, &mut ws).unwrap();
            for (s, c) in sum.iter_mut().zip(inc.comps()) {
                s.iter_mut().zip(c).for_each(|(x, y)| *x += y);
            }
        }
        for i in 0..2 {
            prop_assert!(max_abs_diff(coarse.comp(i), &sum[i]) <= 1e-14);
        }
    }
}

#[test]
fn quadrature_weights_sum_to_one() {
    for (dim, n) in [(1, 64), (2, 16), (2, 32), (3, 8)] {
        let g = TorusGrid::new(dim, n).unwrap();
        assert!((g.node_weight() * g.len() as f64 - 1.0).abs() < 1e-14);
        assert!((mean_integral(&ScalarField::constant(g, 1.0)) - 1.0).abs() < 1e-14);
    }
}

#[test]
fn presets_keep_the_box_invariant() {
    for p in Preset::ALL {
        let m = make_model(p.name(), &ParamMap::new()).unwrap();
        let report = validate_invariance(&m, 2000, 7).unwrap();
        assert!(report.violations.is_empty(), "{}: {:?}", p.name(), &report.violations[..1]);
    }
}

#[test]
fn sampler_matches_ledger() {
    let g = TorusGrid::new(2, 32).unwrap();
    let spec = NoiseSpec::new(1, 99);
    let mut ws = Spectral::new(g);
    let mut sampler = NoiseSampler::new(build_spectrum(&spec, g).unwrap());
    let mut out = vec![vec![0.0; g.len()]];
    sampler.increment_into(&mut ws, 2e-3, 17, &mut out).unwrap();
    let inc = NoiseLedger::lazy(spec, g, 2e-3, 100).increment(17, &mut ws).unwrap();
    assert_eq!(inc.comp(0), &out[0][..]);
}
