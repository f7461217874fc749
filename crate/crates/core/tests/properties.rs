use proptest::prelude::*;
use varlex_core::*;

fn grid1(n: usize) -> DomainGrid {
    DomainGrid::new(1, 1.0, n).unwrap()
}

fn field(g: DomainGrid, vals: &[f64]) -> GridField {
    GridField::new(g, vals.to_vec()).unwrap()
}

fn exps(g: DomainGrid, vals: &[f64]) -> ExponentField {
    ExponentField::new(field(g, vals), ExponentClass::P1).unwrap()
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

fn positive(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..4.0, n)
}

fn exponents(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1.2f64..4.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn luxemburg_homogeneity(f in values(32), p in exponents(32), c in -5.0f64..5.0) {
        let g = grid1(32);
        let (f, p) = (field(g, &f), exps(g, &p));
        let a = luxemburg_norm(&f.scale(c), &p).unwrap().norm;
        let b = c.abs() * luxemburg_norm(&f, &p).unwrap().norm;
        prop_assert!((a - b).abs() <= 1e-9 * b.max(1e-300));
    }

    #[test]
    fn luxemburg_triangle(f in values(32), h in values(32), p in exponents(32)) {
        let g = grid1(32);
        let (f, h, p) = (field(g, &f), field(g, &h), exps(g, &p));
        let sum = f.zip_map(&h, |a, b| a + b).unwrap();
        let lhs = luxemburg_norm(&sum, &p).unwrap().norm;
        let rhs = luxemburg_norm(&f, &p).unwrap().norm + luxemburg_norm(&h, &p).unwrap().norm;
        prop_assert!(lhs <= rhs * (1.0 + 1e-9));
    }

    #[test]
    fn unit_ball_matches_modular(f in values(32), p in exponents(32), s in 0.2f64..3.0) {
        let g = grid1(32);
        let (f, p) = (field(g, &f).scale(s), exps(g, &p));
        let norm = luxemburg_norm(&f, &p).unwrap().norm;
        let rho = modular(&f, &p).unwrap();
        let tol = 1e-9;
        prop_assert_eq!(norm <= 1.0 + tol, rho <= 1.0 + 1e3 * tol, "norm {} modular {}", norm, rho);
    }

    #[test]
    fn constant_exponent_is_lp(f in values(32), p0 in 1.0f64..6.0) {
        let g = grid1(32);
        let f = field(g, &f);
        let p = ExponentField::constant(g, p0).unwrap();
        let want = (f.values().iter().map(|v| v.abs().powf(p0)).sum::<f64>() * g.cell_volume()).powf(p0.recip());
        let got = luxemburg_norm(&f, &p).unwrap().norm;
        prop_assert!((got - want).abs() <= 1e-8 * want.max(1e-300));
    }

    #[test]
    fn monotone_convergence(f in positive(32), p in exponents(32)) {
        let g = grid1(32);
        let (f, p) = (field(g, &f), exps(g, &p));
        let full = luxemburg_norm(&f, &p).unwrap().norm;
        let mut prev = 0.0;
        for k in 1..=12 {
            let t = 1.0 - 0.5f64.powi(k);
            let fk = f.map(|v| v * t);
            let nk = luxemburg_norm(&fk, &p).unwrap().norm;
            prop_assert!(nk >= prev * (1.0 - 1e-12) && nk <= full * (1.0 + 1e-12));
            prev = nk;
        }
        prop_assert!((full - prev) <= 1e-3 * full);
    }

    #[test]
    fn conjugate_involution(p in exponents(32)) {
        let p = exps(grid1(32), &p);
        let back = p.conjugate().unwrap().conjugate().unwrap();
        for (a, b) in p.values().iter().zip(back.values()) {
            prop_assert!((a - b).abs() <= 1e-12 * a);
        }
    }

    #[test]
    fn derive_q_round_trip(p in prop::collection::vec(1.05f64..3.0, 32), alpha in 0.0f64..0.3) {
        let p = exps(grid1(32), &p);
        let q = derive_q(&p, alpha, 1, 1).unwrap();
        for (pv, qv) in p.values().iter().zip(q.values()) {
            let back = 1.0 / (1.0 / qv + alpha);
            prop_assert!((back - pv).abs() <= 1e-12 * pv);
        }
    }

    #[test]
    fn delta_chain(p1 in prop::collection::vec(2.0f64..4.0, 32), p2 in prop::collection::vec(2.0f64..4.0, 32), alpha in 0.0f64..0.5) {
        let g = grid1(32);
        let ps = [exps(g, &p1), exps(g, &p2)];
        let q = derive_q(&reciprocal_sum(&ps).unwrap(), alpha, 1, 1).unwrap();
        for c in dyadic_family(&g, 5).unwrap().iter() {
            let ce = cube_exponents(&ps, alpha, c).unwrap();
            let b = c.cell_box(&g);
            let (q_lo, q_hi) = q.range_on(&b).unwrap();
            prop_assert!(ce.delta <= q_lo * (1.0 + 1e-12) && q_lo <= q_hi);
        }
    }

    #[test]
    fn maximal_sublinear(f in values(32), h in values(32), k in values(32), alpha in 0.0f64..1.5) {
        let g = grid1(32);
        let (f, h, k) = (field(g, &f), field(g, &h), field(g, &k));
        let fam = dyadic_family(&g, 5).unwrap();
        let sum = f.zip_map(&h, |a, b| a + b).unwrap();
        let m = |a: &GridField| fractional_maximal(&[a.clone(), k.clone()], alpha, &fam).unwrap().field;
        let (ms, mf, mh) = (m(&sum), m(&f), m(&h));
        for i in 0..32 {
            prop_assert!(ms.values()[i] <= (mf.values()[i] + mh.values()[i]) * (1.0 + 1e-12) + 1e-300);
        }
    }

    #[test]
    fn maximal_monotone_in_family(f in values(32), alpha in 0.0f64..0.9) {
        let g = grid1(32);
        let f = field(g, &f);
        let small = fractional_maximal(std::slice::from_ref(&f), alpha, &dyadic_family(&g, 3).unwrap()).unwrap().field;
        let big = fractional_maximal(std::slice::from_ref(&f), alpha, &dyadic_family(&g, 5).unwrap()).unwrap().field;
        let shifted = fractional_maximal(std::slice::from_ref(&f), alpha, &enumerate_cubes(&g, &Shift::all(1), 5).unwrap()).unwrap().field;
        for i in 0..32 {
            prop_assert!(small.values()[i] <= big.values()[i]);
            prop_assert!(big.values()[i] <= shifted.values()[i]);
        }
    }

    #[test]
    fn averages_below_maximal_below_integral(f in positive(32), h in positive(32), alpha in 0.1f64..1.5) {
        let g = grid1(32);
        let fs = [field(g, &f), field(g, &h)];
        let fam = dyadic_family(&g, 5).unwrap();
        let m = fractional_maximal(&fs, alpha, &fam).unwrap().field;
        for c in fam.iter().step_by(5) {
            let a = fractional_average(&fs, alpha, c).unwrap().field;
            for i in 0..32 {
                prop_assert!(a.values()[i] <= m.values()[i]);
            }
        }
        let full = full_fractional_maximal(&fs, alpha).unwrap().field;
        let integral = fractional_integral(&fs, alpha, None).unwrap().field;
        for i in 0..32 {
            prop_assert!(m.values()[i] <= full.values()[i] * (1.0 + 1e-12));
            prop_assert!(integral.values()[i] > 0.0);
        }
    }

    #[test]
    fn ap_scale_invariance(w in positive(32), c in 0.01f64..100.0, p in 1.2f64..5.0) {
        let g = grid1(32);
        let w = field(g, &w);
        let fam = dyadic_family(&g, 5).unwrap();
        let a = classical_ap(&w, p, &fam).unwrap().constant;
        let b = classical_ap(&w.scale(c), p, &fam).unwrap().constant;
        prop_assert!((a - b).abs() <= 1e-10 * a);
    }

    #[test]
    fn constant_exponent_coherence(w1 in positive(32), w2 in positive(32), p1 in 1.5f64..4.0, p2 in 1.5f64..4.0, alpha in 0.0f64..0.4) {
        let g = grid1(32);
        let ws = [field(g, &w1), field(g, &w2)];
        let ps = [ExponentField::constant(g, p1).unwrap(), ExponentField::constant(g, p2).unwrap()];
        let q = derive_q(&reciprocal_sum(&ps).unwrap(), alpha, 1, 2).unwrap();
        let fam = dyadic_family(&g, 5).unwrap();
        let var = multi_apq_constant(&ws, &ps, &q, alpha, &fam).unwrap().constant;
        let con = multi_apq_constant_const(&ws, &[p1, p2], alpha, &fam).unwrap().constant;
        prop_assert!((var - con).abs() <= 1e-8 * con);
    }

    #[test]
    fn weight_constants_monotone_in_family(w in positive(32), p in exponents(32)) {
        let g = grid1(32);
        let (w, p) = (field(g, &w), exps(g, &p));
        let small = variable_ap(&w, &p, &dyadic_family(&g, 2).unwrap()).unwrap().constant;
        let big = variable_ap(&w, &p, &dyadic_family(&g, 5).unwrap()).unwrap().constant;
        let shifted = variable_ap(&w, &p, &enumerate_cubes(&g, &Shift::all(1), 5).unwrap()).unwrap().constant;
        prop_assert!(small <= big && big <= shifted);
    }

    #[test]
    fn weight_vector_consistency(w1 in positive(32), w2 in positive(32), p in exponents(32)) {
        let g = grid1(32);
        let ps = [exps(g, &p), ExponentField::constant(g, 3.0).unwrap()];
        let q = derive_q(&reciprocal_sum(&ps).unwrap(), 0.1, 1, 2).unwrap();
        let v = WeightVector::new(vec![field(g, &w1), field(g, &w2)], &ps, &q).unwrap();
        prop_assert!(v.consistency_error(&ps, &q).unwrap() <= 1e-12);
    }

    #[test]
    fn cz_residual_partition(f in positive(64), h in positive(64), a_extra in 0.0f64..8.0) {
        let g = grid1(64);
        let fs = [field(g, &f), field(g, &h)];
        let sigmas = [GridField::constant(g, 1.0), GridField::constant(g, 1.0)];
        let alpha = 0.5;
        let a = 2f64.powf(2.0 - alpha) + 0.5 + a_extra;
        let dec = cz_decompose(&fs, &sigmas, alpha, a, None).unwrap();
        let mut seen = [false; 64];
        for sc in dec.levels.iter().flat_map(|l| &l.cubes) {
            for &i in &sc.residual_cells {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
        }
        prop_assert!(dec.residual_cells() <= 64);
        let rep = sparse_domination_check(&dec, &fs, &sigmas, alpha).unwrap();
        prop_assert!(rep.uncovered_cells.is_empty());
        prop_assert!(rep.max_ratio <= a * 2f64.powf(2.0 - alpha) * (1.0 + 1e-12));
    }

    #[test]
    fn matrix_scalar_collapse(w in positive(16), p in prop::collection::vec(1.5f64..3.0, 16), alpha in 0.0f64..0.3) {
        let g = grid1(16);
        let wf = field(g, &w);
        let p = exps(g, &p);
        let q = derive_q(&p, alpha, 1, 1).unwrap();
        let fam = dyadic_family(&g, 4).unwrap();
        let mw = MatrixWeightField::from_scalar(&wf).unwrap();
        let scalar = apq_constant(&wf, &p, &q, alpha, &fam).unwrap().constant;
        let direct = matrix_apq_direct(&mw, &p, &q, alpha, &fam, None).unwrap().constant;
        let reduced = matrix_apq_reduced(&mw, &p, &q, alpha, &fam, &ReducingOptions::default()).unwrap();
        prop_assert!((direct - scalar).abs() <= 1e-9 * scalar);
        prop_assert!((reduced.report.constant - scalar).abs() <= 1e-6 * scalar);
    }
}

#[test]
fn depth_slices_tile_the_domain() {
    for g in [grid1(32), DomainGrid::new(2, 2.0, 16).unwrap()] {
        let fam = enumerate_cubes(&g, &Shift::all(g.dim()), g.levels()).unwrap();
        for &shift in &fam.shifts {
            for depth in 0..=g.levels() as i32 {
                let mut count = vec![0u32; g.n_cells()];
                for c in fam.iter().filter(|c| c.shift == shift && c.depth == depth) {
                    for i in c.cell_box(&g).cells(&g) {
                        count[i] += 1;
                    }
                }
                assert!(count.iter().all(|&k| k == 1), "shift {shift} depth {depth}");
            }
        }
    }
}

#[test]
fn integrals_add_over_children() {
    let g = DomainGrid::new(2, 1.5, 16).unwrap();
    let f = GridField::from_fn(g, |x: [f64; 2]| (3.0 * x[0]).sin() + x[1] * x[1]);
    for c in dyadic_family(&g, 3).unwrap().iter() {
        let whole = integrate_over(c, &f);
        let parts: f64 = c.children().iter().map(|k| integrate_over(k, &f)).sum();
        assert!((whole - parts).abs() <= 1e-12 * whole.abs().max(1.0));
    }
}

#[test]
fn reducing_operators_commute_in_norm() {
    let g = grid1(16);
    let p = ExponentField::from_fn(g, |x: [f64; 2]| 2.2 + 0.3 * x[0]).unwrap();
    let w = MatrixWeightField::from_fn(g, 2, |x: [f64; 2]| {
        let (c, s) = (x[0].cos(), x[0].sin());
        nalgebra::DMatrix::from_row_slice(2, 2, &[2.0 + c, s, s, 1.0 + x[0] * x[0]])
    })
    .unwrap();
    let q = derive_q(&p, 0.2, 1, 1).unwrap();
    let fam = dyadic_family(&g, 3).unwrap();
    let r = matrix_apq_reduced(&w, &p, &q, 0.2, &fam, &ReducingOptions::default()).unwrap();
    assert!(r.commutation_gap <= 1e-10, "{}", r.commutation_gap);
    assert!(r.max_sandwich <= 2f64.sqrt() * 1.01);
}
