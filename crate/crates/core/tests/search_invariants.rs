use jd3net::archmodel::flops;
use jd3net::search::{enumerate_feasible, solve, sweep, unconstrained_d_probe, Rho, SearchConstraints};
use proptest::prelude::*;

fn constraints(budget: f64, tenths: u64, d_max: usize) -> SearchConstraints {
    let mut c = SearchConstraints::new(budget, Rho::new(tenths, 10).unwrap());
    c.d_max = d_max;
    c.w_max = 128;
    c.b_max = 128;
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn best_respects_every_bound(budget in 1.0f64..60.0, tenths in 3u64..=20, d_max in 1usize..=4) {
        let c = constraints(budget, tenths, d_max);
        let r = solve(&c).unwrap();
        if let Some(best) = &r.best {
            let cfg = best.config;
            prop_assert!(cfg.blocks as u64 * 10 <= cfg.width as u64 * tenths);
            prop_assert_eq!(cfg.width % c.grid, 0);
            prop_assert_eq!(cfg.blocks % c.grid, 0);
            prop_assert!((c.d_min..=c.d_max).contains(&cfg.downsample));
            prop_assert!(flops(&cfg, 256, 256).unwrap().flops <= c.flops_budget);
        }
    }

    #[test]
    fn best_dominates_feasible_set(budget in 1.0f64..30.0, tenths in 3u64..=20) {
        let c = constraints(budget, tenths, 4);
        let all = enumerate_feasible(&c).unwrap();
        let r = solve(&c).unwrap();
        prop_assert_eq!(r.feasible_count, all.len());
        if let Some(best) = r.best {
            prop_assert!(all.iter().all(|x| x.entropy.entropy <= best.entropy.entropy));
        } else {
            prop_assert!(all.is_empty());
        }
    }

    #[test]
    fn larger_budget_never_scores_lower(budget in 1.0f64..30.0, extra in 0.0f64..30.0, tenths in 3u64..=20) {
        let small = solve(&constraints(budget, tenths, 4)).unwrap();
        let large = solve(&constraints(budget + extra, tenths, 4)).unwrap();
        if let Some(s) = small.best {
            prop_assert!(large.best.unwrap().entropy.entropy >= s.entropy.entropy);
        }
    }
}

#[test]
fn relaxing_d_never_lowers_entropy_or_d() {
    for budget in [25.0, 128.0] {
        let c = SearchConstraints::new(budget, "1.2".parse().unwrap());
        let base = solve(&c).unwrap();
        let relaxed = unconstrained_d_probe(&c).unwrap();
        let (b, r) = (base.optimum().unwrap(), relaxed.optimum().unwrap());
        assert!(r.entropy.entropy >= b.entropy.entropy);
        assert!(r.config.downsample >= b.config.downsample);
    }
}

#[test]
fn single_cell_sweep_matches_solve() {
    let c = SearchConstraints::new(25.0, "1.0".parse().unwrap());
    let t = sweep(&[25.0], &[c.rho], &c, 1).unwrap();
    assert_eq!(t.rows.len(), 1);
    assert_eq!(
        t.rows[0].triple(),
        Some(solve(&c).unwrap().optimum().unwrap().config.triple())
    );
}

#[test]
fn infeasible_cells_are_marked_not_fatal() {
    let c = SearchConstraints::new(0.001, "1.0".parse().unwrap());
    let t = sweep(&[0.001, 25.0], &[c.rho], &c, 1).unwrap();
    assert_eq!(t.rows[0].triple(), None);
    assert!(t.rows[1].triple().is_some());
}
