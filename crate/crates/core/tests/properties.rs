use kg_core::diagnostics::{decay_fit, decay_model, flat_energy, DiagnosticsRecord, SpeciesRecord};
use kg_core::harness::{decode_snapshot, encode_snapshot, RunConfig};
use kg_core::integrator::{linear_propagator, strang_step, StepParams};
use kg_core::model::{make_initial_data, BumpSpec, CouplingTensors, FieldState, T0};
use kg_core::spectral::{Grid, GridSpec, ScalarField};
use proptest::prelude::*;

fn grid16() -> Grid {
    Grid::new(GridSpec::new(16, GridSpec::min_box_length(16, T0, 5.0)).unwrap())
}

fn data(m: f64, e0: f64, e1: f64) -> FieldState {
    make_initial_data(&grid16(), &BumpSpec::uniform(2, e0, e1).unwrap(), m, 5.0)
        .unwrap()
        .band_limited()
}

fn system() -> CouplingTensors {
    let mut c = CouplingTensors::new(2);
    c.add_n(0, 0, 1, 1.0).unwrap();
    c.add_n(1, 1, 1, -0.5).unwrap();
    c.add_m(0, 1, 1, 0, 2, 0.8).unwrap();
    c.add_m(1, 0, 1, 1, 3, -0.6).unwrap();
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn linear_flow_reverses(m in 0.0f64..=1.0, dt in -3.0f64..3.0, e0 in -0.1f64..0.1, e1 in -0.1f64..0.1) {
        let s = data(m, e0, e1);
        let back = linear_propagator(&linear_propagator(&s, dt).unwrap(), -dt).unwrap();
        let scale = s.max_abs().max(s.max_abs_rate()).max(1e-300);
        prop_assert!(back.max_abs_diff(&s).unwrap() <= 1e-12 * scale);
    }

    #[test]
    fn linear_flow_conserves_energy(m in 0.0f64..=1.0, dt in 0.0f64..3.0, e1 in 1e-4f64..0.1) {
        let s = data(m, 0.3 * e1, e1);
        let out = linear_propagator(&s, dt).unwrap();
        for i in 0..2 {
            let (a, b) = (flat_energy(&s, i).unwrap(), flat_energy(&out, i).unwrap());
            prop_assert!((a - b).abs() <= 1e-12 * a);
        }
    }

    #[test]
    fn bracket_entries_are_antisymmetric(a in 0usize..4, b in 0usize..4, v in -2.0f64..2.0) {
        let mut x = CouplingTensors::new(2);
        let mut y = CouplingTensors::new(2);
        x.add_m(0, 1, 0, a, b, v).unwrap();
        y.add_m(0, 1, 0, b, a, -v).unwrap();
        prop_assert_eq!(x.m_entries().collect::<Vec<_>>(), y.m_entries().collect::<Vec<_>>());
        prop_assert!(x.m_entries().all(|e| e.alpha < e.beta));
    }

    #[test]
    fn snapshot_round_trip(seed in any::<u64>(), t in 2.0f64..100.0, m in 0.0f64..=1.0) {
        let g = Grid::from_size(8, 7.5).unwrap();
        let mut k = seed;
        let mut next = || {
            k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (k >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut field = || ScalarField::from_values(&g, (0..g.len()).map(|_| next()).collect()).unwrap();
        let s = FieldState::new(&g, t, m, vec![field()], vec![field()]).unwrap();
        let bytes = encode_snapshot(&s);
        prop_assert_eq!(encode_snapshot(&decode_snapshot(&bytes).unwrap()), bytes);
    }

    #[test]
    fn config_text_round_trip(
        n in prop::sample::select(vec![16usize, 32]),
        m in 0.0f64..=1.0,
        saves in 1usize..20,
        e in -0.1f64..0.1,
        c in -3.0f64..3.0,
    ) {
        let text = format!(
            "grid.n = {n}\ngrid.box_length = 40\nsystem.species = 2\nsystem.mass = {m}\nbump.v0 = {e}, 0\n\
             N 1 0 1 {c}\nM 0 1 1 3 0 {c}\ntime.t_end = {}\ntime.dt = 0.125\ntime.save_dt = 0.5\n\
             diagnostics.hyperboloids = 2.5, 3\n",
            T0 + 0.5 * saves as f64
        );
        let cfg = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn decay_fit_recovers_model(c in 0.01f64..100.0, m in 0.0f64..=1.0) {
        let recs: Vec<_> = (0..40)
            .map(|k| {
                let t = 5.0 + 0.625 * k as f64;
                DiagnosticsRecord {
                    t,
                    species: vec![SpeciesRecord { energy: 1.0, l2: 1.0, sup: c * decay_model(t, m), support_radius: 1.0 }],
                    source_l2: None,
                }
            })
            .collect();
        let f = decay_fit(&recs, 0, (5.0, 30.0), m).unwrap();
        prop_assert!((f.c_fit / c - 1.0).abs() < 1e-10);
        prop_assert!(f.residual < 1e-10);
        prop_assert!(f.max_ratio <= 1.25);
    }

    /// Linear in the couplings: scaling data by `s` scales the quadratic
    /// part of one step by `s^2`.
    #[test]
    fn strang_step_quadratic_scaling(e in 1e-3f64..1e-2) {
        let params = StepParams::new(0.1, 2).unwrap();
        let s = data(0.5, 0.5 * e, e);
        let lin = linear_propagator(&s, 0.1).unwrap();
        let quad = |st: &FieldState| {
            let out = strang_step(st, &system(), params).unwrap();
            let l = linear_propagator(st, 0.1).unwrap();
            out.max_abs_diff(&l).unwrap()
        };
        let (q1, q2) = (quad(&s), quad(&s.scaled(2.0)));
        prop_assert!(lin.max_abs() > 0.0);
        prop_assert!((q2 / q1 - 4.0).abs() < 0.05);
    }
}

/// Final states for `m` and `m + 1e-4` differ by `O(1e-4)` relative.
#[test]
fn mass_continuity() {
    let params = StepParams::new(0.1, 2).unwrap();
    let run = |m: f64| {
        let mut s = data(m, 1e-3, 1e-3);
        for _ in 0..20 {
            s = strang_step(&s, &system(), params).unwrap();
        }
        s
    };
    for m in [0.0, 0.3, 0.9] {
        let (a, b) = (run(m), run(m + 1e-4));
        let rel = (0..2)
            .map(|i| a.v[i].sub(&b.v[i]).unwrap().l2_norm() / a.v[i].l2_norm())
            .fold(0.0, f64::max);
        assert!(rel < 1e-3 && rel > 0.0, "m = {m}: {rel:e}");
    }
}
