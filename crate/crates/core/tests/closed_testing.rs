use pconj_core::{
    build_lattice, check_shortcut_equivalence, lower_bound_umax, pc_curve, resolve_selection, Alpha, CombinerKind,
    Combiner, IntersectionLattice, PValueVector, SelectionSet,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use testkit::BruteClosedTest;

/// A mix of null-looking and signal-looking p-values.
fn random_pvalues(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = 1.0 - rng.random::<f64>();
            match rng.random_range(0..3) {
                0 => u,
                1 => u.powf(4.0),
                _ => u.powf(12.0),
            }
        })
        .collect()
}

fn selection_from_mask(v: &PValueVector, mask: u64) -> SelectionSet {
    let ids: Vec<&str> = (0..v.len())
        .filter(|i| mask >> i & 1 == 1)
        .map(|i| v.hypotheses()[i].id.as_str())
        .collect();
    resolve_selection(v, ids).unwrap()
}

#[test]
fn lattice_matches_brute_force_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..60 {
        let n = 1 + trial % 8;
        let ps = random_pvalues(&mut rng, n);
        let v = PValueVector::from_pvalues(&ps).unwrap();
        for c in CombinerKind::ALL {
            for a in [0.01, 0.05, 0.2] {
                let lattice = build_lattice(&v, Alpha::new(a).unwrap(), c).unwrap();
                let brute = BruteClosedTest::new(&ps, a, |m| c.combine(m).unwrap().value);
                for mask in 1u64..(1 << n) {
                    assert_eq!(
                        lattice.is_rejected(mask).unwrap(),
                        brute.is_rejected(mask as usize),
                        "{c} alpha={a} ps={ps:?} mask={mask:b}"
                    );
                    let bound = lattice.selection_bound(&selection_from_mask(&v, mask)).unwrap();
                    assert_eq!(bound.f_alpha, brute.bound(mask as usize));
                }
            }
        }
    }
}

#[test]
fn three_hypothesis_fixture_against_enumeration() {
    let ps = [1e-6, 0.5, 0.6];
    let v = PValueVector::from_pvalues(&ps).unwrap();
    let lattice = build_lattice(&v, Alpha::new(0.05).unwrap(), CombinerKind::Fisher).unwrap();
    let brute = BruteClosedTest::new(&ps, 0.05, |m| pconj_core::fisher_combine(m).unwrap().value);
    let r = resolve_selection(&v, ["h2", "h3"]).unwrap();
    assert_eq!(lattice.selection_bound(&r).unwrap().f_alpha, 0);
    assert_eq!(brute.bound(0b110), 0);
}

fn closure_violations(lattice: &IntersectionLattice) -> usize {
    let n = lattice.n();
    let full = (1u64 << n) - 1;
    let mut bad = 0;
    for mask in 1..=full {
        if !lattice.is_rejected(mask).unwrap() {
            continue;
        }
        let rest = full & !mask;
        let mut s = rest;
        loop {
            if !lattice.is_rejected(mask | s).unwrap() {
                bad += 1;
            }
            if s == 0 {
                break;
            }
            s = (s - 1) & rest;
        }
    }
    bad
}

#[test]
fn closure_exhaustive_n10() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..4 {
        let v = PValueVector::from_pvalues(&random_pvalues(&mut rng, 10)).unwrap();
        for c in CombinerKind::ALL {
            let lattice = build_lattice(&v, Alpha::new(0.05).unwrap(), c).unwrap();
            assert!(lattice.closure_holds());
            assert_eq!(closure_violations(&lattice), 0);
        }
    }
}

#[test]
fn selection_monotone_exhaustive_n8() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..3 {
        let v = PValueVector::from_pvalues(&random_pvalues(&mut rng, 8)).unwrap();
        let lattice = build_lattice(&v, Alpha::new(0.1).unwrap(), CombinerKind::Fisher).unwrap();
        let f: Vec<usize> = (0u64..256)
            .map(|m| {
                if m == 0 {
                    0
                } else {
                    lattice.selection_bound(&selection_from_mask(&v, m)).unwrap().f_alpha
                }
            })
            .collect();
        for r in 1u64..256 {
            let size = r.count_ones() as usize;
            assert!(f[r as usize] <= size);
            let all_sub_rejected = {
                let mut s = r;
                let mut ok = true;
                while s != 0 {
                    ok &= lattice.is_rejected(s).unwrap();
                    s = (s - 1) & r;
                }
                ok
            };
            assert_eq!(f[r as usize] == size, all_sub_rejected);
            for j in 0..8 {
                let bigger = r | 1 << j;
                assert!(f[r as usize] <= f[bigger as usize], "R={r:b} R'={bigger:b}");
            }
        }
    }
}

#[test]
fn witness_is_largest_unrejected_subset() {
    let v = PValueVector::from_pvalues(&[0.001, 0.02, 0.3, 0.04, 0.7]).unwrap();
    let lattice = build_lattice(&v, Alpha::new(0.05).unwrap(), CombinerKind::Fisher).unwrap();
    let b = lattice.selection_bound(&SelectionSet::full(&v)).unwrap();
    let w = b.witness.expect("not everything is rejected");
    assert_eq!(w.len(), 5 - b.f_alpha);
    let w_sel = resolve_selection(&v, &w).unwrap();
    let mask = w_sel.indices().iter().fold(0u64, |m, &i| m | 1 << i);
    assert!(!lattice.is_rejected(mask).unwrap());
}

#[test]
fn equivalence_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    for i in 0..500 {
        let n = 1 + i % 10;
        let ps = random_pvalues(&mut rng, n);
        let v = PValueVector::from_pvalues(&ps).unwrap();
        for c in CombinerKind::ALL {
            for a in [0.01, 0.05, 0.2] {
                let e = check_shortcut_equivalence(&v, Alpha::new(a).unwrap(), c).unwrap();
                assert!(e.holds, "{c} alpha={a}: {e:?}");
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 3000);
}

#[test]
fn bonferroni_is_conservative() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let v = PValueVector::from_pvalues(&random_pvalues(&mut rng, 6)).unwrap();
        let curve = pc_curve(&v, &CombinerKind::Fisher);
        for k in 1..5 {
            let a = Alpha::new(0.05).unwrap();
            assert!(lower_bound_umax(&curve, a.split(k)).u_max <= lower_bound_umax(&curve, a).u_max);
        }
    }
}

#[test]
fn twenty_hypothesis_lattice() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let v = PValueVector::from_pvalues(&random_pvalues(&mut rng, 20)).unwrap();
    let a = Alpha::new(0.05).unwrap();
    let lattice = build_lattice(&v, a, CombinerKind::Fisher).unwrap();
    assert_eq!(
        lattice.full_set_bound(),
        lower_bound_umax(&pc_curve(&v, &CombinerKind::Fisher), a).u_max
    );
}
