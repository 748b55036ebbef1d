use plapvisc::calculus::gradient_field;
use plapvisc::envelope::{
    argmin_distance_bound_check, inf_convolve_fast, inf_convolve_oracle, EnvelopeParams,
};
use plapvisc::field::sample;
use plapvisc::gallery;
use plapvisc::verify::{
    eps_gap_sweep, lemma_suite, monotonicity_check, semiconcavity_check, usc_refinement,
    Tolerances,
};
use plapvisc::{Grid, ScalarField};

const SCHEDULE: [f64; 4] = [0.4, 0.2, 0.1, 0.05];

#[test]
fn neg_cone_envelope_values() {
    let g = Grid::line(-1.0, 1.0, 257).unwrap();
    let u = ScalarField::from_fn(&g, |x| -x[0].abs()).unwrap();
    let env = inf_convolve_oracle(&u, EnvelopeParams::new(0.1, 2.0).unwrap());
    // Brute-force values: the grid minimiser sits 13 cells outward.
    let a = env.argmin(150);
    assert_eq!(a.nodes, vec![163]);
    assert_eq!(a.min, -0.22186279296875);
    assert_eq!(env.max_argmin_distance(150), 0.1015625);
    // Both sides tie at the apex.
    assert_eq!(env.argmin(128).nodes, vec![115, 141]);

    let tols = Tolerances::default();
    let h = g.h_max();
    let grads = gradient_field(env.u_eps(), tols.grad_tol(h));
    let rep = argmin_distance_bound_check(&env, &grads, tols.first(h));
    assert!(rep.pass, "{rep:?}");
    assert_eq!(rep.params["skipped_kinks"], 1.0);
}

#[test]
fn quadratic_argmin_bound_on_fine_grid() {
    let e = gallery::get("quad-2d").unwrap();
    let tols = Tolerances::default();
    for q in [2.0, 4.0] {
        let h = 1.0 / 128.0;
        let u = sample(e, &e.reference_grid(h).unwrap()).unwrap();
        let env = inf_convolve_fast(&u, EnvelopeParams::new(0.1, q).unwrap());
        let grads = gradient_field(env.u_eps(), tols.grad_tol(h));
        let rep = argmin_distance_bound_check(&env, &grads, tols.first(h));
        assert_eq!(rep.violation_count, 0, "q = {q}: {:?}", rep.worst);
    }
}

#[test]
fn lemma_suite_passes_on_gallery() {
    let tols = Tolerances::default();
    for e in gallery::entries() {
        for q in [2.0, 4.0] {
            let u = sample(e, &e.reference_grid(1.0 / 32.0).unwrap()).unwrap();
            for r in lemma_suite(&u, e.lipschitz, q, &SCHEDULE, &tols).unwrap() {
                assert!(r.pass, "{} q={q} {}: {:?}", e.name, r.name, r.worst);
            }
        }
    }
}

#[test]
fn lipschitz_gap_is_first_order_in_eps() {
    let e = gallery::get("neg-cone-1d").unwrap();
    let u = sample(e, &e.reference_grid(1.0 / 256.0).unwrap()).unwrap();
    let mut rep = eps_gap_sweep(&u, 1.0, 2.0, &SCHEDULE, &Tolerances::default()).unwrap();
    assert!(rep.pass);
    let order = rep.fit_order().unwrap();
    assert!((order - 1.0).abs() < 0.05, "order {order}");
    // Continuum gap of -|x| with q = 2 is exactly ε/2.
    for row in &rep.table {
        assert!((row.residual - row.param / 2.0).abs() < 1.0 / 256.0, "{row:?}");
    }
}

#[test]
fn monotone_chain_on_random_field() {
    let g = Grid::square(-1.0, 1.0, 40).unwrap();
    let u = ScalarField::from_fn(&g, |x| (7.0 * x[0]).sin() * (5.0 * x[1]).cos() + x[0] * x[1]).unwrap();
    for q in [2.0, 3.2, 4.0] {
        let rep = monotonicity_check(&u, q, &SCHEDULE).unwrap();
        assert!(rep.pass, "q = {q}: {:?}", rep.worst);
    }
}

#[test]
fn semiconcavity_constant_matches_closed_form() {
    let e = gallery::get("step-1d").unwrap();
    let u = sample(e, &e.reference_grid(1.0 / 64.0).unwrap()).unwrap();
    let env = inf_convolve_fast(&u, EnvelopeParams::new(0.2, 4.0).unwrap());
    let r = env.r_eps();
    assert!((env.semiconcavity() - 3.0 / (2.0 * 0.008) * r * r).abs() < 1e-12);
    assert!(semiconcavity_check(&env, &Tolerances::default()).pass);
}

#[test]
fn usc_modulus_under_refinement() {
    let hs = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0];
    let p2 = EnvelopeParams::new(0.1, 2.0).unwrap();

    let cone = usc_refinement(gallery::get("neg-cone-1d").unwrap(), p2, &hs).unwrap();
    assert!(cone.pass);
    assert!(cone.table.iter().all(|r| r.residual == 0.0));

    // The upward cone has an argmin-distance map that ramps up from 0; its
    // one-cell jump halves with h.
    let mut up = usc_refinement(gallery::get("pos-cone-1d").unwrap(), p2, &hs).unwrap();
    assert!(up.pass);
    assert!((up.fit_order().unwrap() - 1.0).abs() < 1e-12);

    let step = usc_refinement(gallery::get("step-1d").unwrap(), p2, &hs).unwrap();
    assert!(step.pass);
    let vals: Vec<f64> = step.table.iter().map(|r| r.residual).collect();
    assert_eq!(vals, vec![0.4375, 0.4375, 0.4375, 0.4453125, 0.4453125]);
}
