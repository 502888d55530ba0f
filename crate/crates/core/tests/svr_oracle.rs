mod common;

use common::{dual_value, duality_gap, grid_oracle_2, qp_oracle, random_problem, Problem};
use tuberegress::svr::{kkt_violation, svr_fit, SvrModel};

const N_PROBLEMS: u64 = 120;

fn fit(p: &Problem) -> SvrModel {
    svr_fit(&p.x, &p.y, &p.params).expect("fit")
}

#[test]
fn matches_constrained_qp_oracle() {
    for seed in 0..N_PROBLEMS {
        let p = random_problem(seed, 5, 3);
        let y = p.y.as_slice().unwrap();
        let (c, eps) = (p.params.c, p.params.epsilon);
        let oracle = qp_oracle(&p.k, y, eps, c);
        let certificate = duality_gap(&p.k, y, eps, c, &oracle);
        assert!(certificate < 1e-7, "oracle not optimal on problem {seed}: gap {certificate:e}");

        let m = fit(&p);
        assert!(m.converged, "problem {seed} hit the iteration cap");
        let beta = m.full_beta(p.x.nrows());
        let ours = dual_value(&p.k, y, eps, &beta);
        let best = dual_value(&p.k, y, eps, &oracle);
        assert!((ours - best).abs() <= 1e-5, "problem {seed}: {ours} vs oracle {best}");
        assert!((m.dual_objective - ours).abs() <= 1e-9 * (1.0 + ours.abs()), "stored objective drifted on {seed}");
    }
}

#[test]
fn dual_feasibility_and_kkt() {
    for seed in 0..N_PROBLEMS {
        let p = random_problem(seed, 5, 3);
        let m = fit(&p);
        let beta = m.full_beta(p.x.nrows());
        let sum: f64 = beta.iter().sum();
        assert!(sum.abs() < 1e-10, "problem {seed}: sum of beta {sum:e}");
        for b in &beta {
            assert!(b.abs() <= p.params.c * (1.0 + 1e-12), "problem {seed}: |beta| {b} > C");
        }
        let gap = kkt_violation(&m, &p.x, &p.y, &p.params);
        assert!(gap < p.params.tol, "problem {seed}: KKT gap {gap:e}");
    }
}

/// Points strictly inside the tube carry no weight; free multipliers sit on
/// its edge; multipliers at the box bound sit on or outside it, on the side
/// matching their sign.
#[test]
fn tube_and_box_invariants() {
    let slack = 1e-6;
    for seed in 0..N_PROBLEMS {
        let p = random_problem(seed, 5, 3);
        let m = fit(&p);
        let (c, eps) = (p.params.c, p.params.epsilon);
        let beta = m.full_beta(p.x.nrows());
        let f = m.predict(&p.x).unwrap();
        for i in 0..beta.len() {
            let r = p.y[i] - f[i];
            let b = beta[i];
            if r.abs() < eps - slack {
                assert_eq!(b, 0.0, "problem {seed} row {i}: inside tube but beta {b}");
            }
            if b > 0.0 {
                assert!(r >= eps - slack, "problem {seed} row {i}: beta {b} with residual {r}");
            }
            if b < 0.0 {
                assert!(r <= -eps + slack, "problem {seed} row {i}: beta {b} with residual {r}");
            }
            if b != 0.0 && b.abs() < c {
                assert!((r.abs() - eps).abs() <= slack, "problem {seed} row {i}: free beta off the tube edge");
            }
        }
    }
}

#[test]
fn two_point_problems_match_grid_oracle() {
    let mut done = 0;
    let mut seed = 10_000;
    while done < 40 {
        seed += 1;
        let p = random_problem(seed, 2, 3);
        if p.x.nrows() != 2 {
            continue;
        }
        let y = p.y.as_slice().unwrap();
        let best = grid_oracle_2(&p.k, y, p.params.epsilon, p.params.c);
        let m = fit(&p);
        let ours = dual_value(&p.k, y, p.params.epsilon, &m.full_beta(2));
        assert!((ours - best).abs() <= 1e-5, "seed {seed}: {ours} vs grid {best}");
        done += 1;
    }
}

#[test]
fn shrinking_does_not_change_the_optimum() {
    for seed in 0..40 {
        let mut p = random_problem(seed, 5, 3);
        let a = fit(&p);
        p.params.shrinking = false;
        let b = fit(&p);
        let y = p.y.as_slice().unwrap();
        let da = dual_value(&p.k, y, p.params.epsilon, &a.full_beta(p.x.nrows()));
        let db = dual_value(&p.k, y, p.params.epsilon, &b.full_beta(p.x.nrows()));
        assert!((da - db).abs() <= 1e-6, "seed {seed}: {da} vs {db}");
    }
}
