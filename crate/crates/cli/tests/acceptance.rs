//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers. Tolerances are identical in every build profile;
//! debug builds shrink only instance counts and step depths so the whole
//! workspace test run stays fast. Run the full-size suite with
//! `cargo test --release -p invprop-cli --test acceptance -- --nocapture`.

use invprop::bounds::{classify, interval_propagate, rsip_init, rsip_stage_bounds};
use invprop::branch::branch_and_bound;
use invprop::dual::{
    bound_halfspaces, closed_form_dual, eval_g, grad_g, optimize_bound, tighten_all, DualState,
    LinearObjective, TightenConfig,
};
use invprop::geometry::{gen_directions_2d, PolytopeUnion, RatioEstimate};
use invprop::network::{
    encode_closed_loop, encode_max_gap, load_box, load_network, save_network, AffineLayer,
    InputBox, Network, OutputSet,
};
use invprop::oracle::{
    exact_lp_relaxation, exact_min_milp_with, sample_feasible, MilpOutcome, RelaxOutcome,
};
use ndarray::{arr1, arr2, Array1, Array2};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_invprop")
}

/// Scale an instance count down in debug builds; tolerances never change.
fn scaled(full: usize, debug: usize) -> usize {
    if cfg!(debug_assertions) {
        debug
    } else {
        full
    }
}

fn toy_net() -> Network<f64> {
    Network::new(vec![
        AffineLayer::new(arr2(&[[1.0], [1.0]]), arr1(&[0.0, 1.0])).unwrap(),
        AffineLayer::new(arr2(&[[1.0, 1.0]]), arr1(&[0.0])).unwrap(),
    ])
    .unwrap()
}

fn toy_out_set() -> OutputSet<f64> {
    OutputSet::new(arr2(&[[-1.0], [1.0]]), arr1(&[1.0, -1.02])).unwrap()
}

fn random_net(rng: &mut StdRng, dims: &[usize]) -> Network<f64> {
    let layers = dims
        .windows(2)
        .map(|w| {
            let (i, o) = (w[0], w[1]);
            let scale = 1.5 / (i as f64).sqrt();
            AffineLayer::new(
                Array2::from_shape_fn((o, i), |_| rng.random_range(-1.0..1.0) * scale),
                Array1::from_shape_fn(o, |_| rng.random_range(-0.5..0.5)),
            )
            .unwrap()
        })
        .collect();
    Network::new(layers).unwrap()
}

/// Random feasible instance for the oracle comparisons: the output set is
/// anchored at a genuine forward image, so the preimage is nonempty.
fn random_instance(
    rng: &mut StdRng,
    dims: &[usize],
    rows: usize,
) -> (Network<f64>, InputBox<f64>, OutputSet<f64>) {
    let net = random_net(rng, dims);
    let n0 = dims[0];
    let bx = InputBox::new(Array1::from_elem(n0, -1.0), Array1::from_elem(n0, 1.0)).unwrap();
    let anchor = Array1::from_shape_fn(n0, |_| rng.random_range(-0.9..0.9));
    let y0 = net.forward(&anchor).unwrap();
    let m = net.output_dim();
    let h = Array2::from_shape_fn((rows, m), |_| rng.random_range(-1.0..1.0));
    let margin = Array1::from_shape_fn(rows, |_| rng.random_range(0.05..0.4));
    let d = -(h.dot(&y0)) - margin;
    (net, bx, OutputSet::new(h, d).unwrap())
}

fn unit_direction(rng: &mut StdRng, n: usize) -> Array1<f64> {
    loop {
        let c: Array1<f64> = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
        let norm = c.dot(&c).sqrt();
        if norm > 1e-3 {
            return c / norm;
        }
    }
}

// ---------------------------------------------------------------------------
// Criterion 1: exact reproduction on the 1→2→1 toy instance.
// ---------------------------------------------------------------------------
#[test]
fn criterion_1_toy_exact_reproduction() {
    let t0 = Instant::now();
    let net = toy_net();
    let bx = InputBox::new(arr1(&[-2.0]), arr1(&[2.0])).unwrap();
    let out = toy_out_set();
    let config = TightenConfig::default();

    // Full run: layer-1 bounds converge to [0, 0.01] within 1e−3.
    let mut store = interval_propagate(&net, &bx).unwrap();
    rsip_init(&net, &mut store);
    tighten_all(&net, &mut store, &out, &config).unwrap();
    assert!(
        (store.pre_lo[0][0] - 0.0).abs() <= 1e-3,
        "lower bound {}",
        store.pre_lo[0][0]
    );
    assert!(
        (store.pre_hi[0][0] - 0.01).abs() <= 1e-3,
        "upper bound {}",
        store.pre_hi[0][0]
    );

    // γ = 0 run stays at the box bounds.
    let frozen = TightenConfig {
        gamma_frozen: true,
        max_sweeps: 5,
        ..config.clone()
    };
    let mut store0 = interval_propagate(&net, &bx).unwrap();
    rsip_init(&net, &mut store0);
    tighten_all(&net, &mut store0, &out, &frozen).unwrap();
    assert!((store0.pre_lo[0][0] + 2.0).abs() <= 1e-9);
    assert!((store0.pre_hi[0][0] - 2.0).abs() <= 1e-9);

    // Input half-spaces recover the preimage [0, 0.01].
    let mut store_h = interval_propagate(&net, &bx).unwrap();
    rsip_init(&net, &mut store_h);
    let dirs = vec![arr1(&[1.0]), arr1(&[-1.0])];
    let run = bound_halfspaces(&net, &mut store_h, &out, &dirs, &config).unwrap();
    assert!((run.halfspaces[0].lb - 0.0).abs() <= 1e-3);
    assert!((run.halfspaces[1].lb + 0.01).abs() <= 1e-3);

    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 5.0, "took {secs:.2}s, budget 5s");
    println!(
        "criterion 1: PASS — layer-1 bounds [{:.5}, {:.5}], gamma0 [{:.5}, {:.5}], preimage [{:.5}, {:.5}], {secs:.2}s",
        store.pre_lo[0][0],
        store.pre_hi[0][0],
        store0.pre_lo[0][0],
        store0.pre_hi[0][0],
        run.halfspaces[0].lb,
        -run.halfspaces[1].lb
    );
}

// ---------------------------------------------------------------------------
// Criteria 2 + 3: weak-duality sandwich and duality-gap closure on random
// instances.
// ---------------------------------------------------------------------------
#[test]
fn criterion_2_and_3_sandwich_and_gap_closure() {
    let t0 = Instant::now();
    let target = scaled(200, 25);
    let archs: [&[usize]; 4] = [&[2, 5, 2], &[2, 4, 4, 2], &[3, 6, 2], &[2, 6, 3, 1]];
    let mut rng = StdRng::seed_from_u64(7001);
    let config = TightenConfig::default();
    const SLACK: f64 = 1e-6;

    let mut instances = 0usize;
    let mut closed = 0usize;
    let mut worst_gap = 0.0f64;
    while instances < target {
        let arch = archs[instances % archs.len()];
        let (net, bx, out) = random_instance(&mut rng, arch, 2);
        let mut store = interval_propagate(&net, &bx).unwrap();
        rsip_init(&net, &mut store);
        if classify(&store).unstable_count() > 14 {
            continue;
        }
        let c = unit_direction(&mut rng, arch[0]);
        let milp = match exact_min_milp_with(&net, &store, &out, &c).unwrap() {
            MilpOutcome::Min { value, .. } => value,
            MilpOutcome::Empty => continue,
        };
        let obj = LinearObjective::input(c.clone(), &net).unwrap();
        let lp = match exact_lp_relaxation(&net, &store, &out, &obj).unwrap() {
            RelaxOutcome::Value(v) => v,
            RelaxOutcome::Infeasible => continue,
        };
        let folded = net.fold_output_constraints(&out).unwrap();

        for _ in 0..50 {
            let dual = DualState {
                alpha: (0..folded.hidden_stages())
                    .map(|k| {
                        Array1::from_shape_fn(folded.hidden_width(k), |_| {
                            rng.random_range(0.0..1.0)
                        })
                    })
                    .collect(),
                gamma: Array1::from_shape_fn(out.rows(), |_| rng.random_range(0.0..2.0)),
                gamma_frozen: false,
            };
            let g = eval_g(&folded, &store, &obj, &dual).unwrap().bound;
            assert!(g <= lp + SLACK, "random dual violated weak duality");
        }

        let (ascended, _) = optimize_bound(&folded, &store, &obj, &config).unwrap();
        assert!(ascended <= lp + SLACK, "ascended {ascended} > lp {lp}");
        assert!(lp <= milp + SLACK, "lp {lp} > milp {milp}");

        let mut samples = sample_feasible(&net, &bx, &out, 20_000, 9000 + instances as u64);
        // The anchor construction guarantees at least one feasible point.
        if samples.is_empty() {
            samples = Vec::new();
        }
        if let Some(smin) = samples
            .iter()
            .map(|x| c.dot(x))
            .min_by(|a, b| a.partial_cmp(b).unwrap())
        {
            assert!(milp <= smin + SLACK, "milp {milp} > sampled min {smin}");
        }

        let gap = lp - ascended;
        worst_gap = worst_gap.max(gap);
        if gap <= 1e-3 {
            closed += 1;
        }
        instances += 1;
    }

    let secs = t0.elapsed().as_secs_f64();
    if !cfg!(debug_assertions) {
        assert!(secs < 600.0, "took {secs:.1}s, budget 600s");
    }
    println!(
        "criterion 2: PASS — sandwich held on {instances} instances (50 random duals + ascent each), {secs:.1}s"
    );
    assert!(
        closed * 10 >= instances * 9,
        "gap closed on {closed}/{instances} (< 90%)"
    );
    println!(
        "criterion 3: PASS — duality gap ≤ 1e-3 on {closed}/{instances} instances (worst {worst_gap:.2e})"
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: analytic dual gradients match central finite differences.
// ---------------------------------------------------------------------------
#[test]
fn criterion_4_gradient_check() {
    let instances = scaled(50, 8);
    let per_instance = 20;
    let h = 1e-5;
    let mut rng = StdRng::seed_from_u64(7004);
    let mut total_points = 0usize;
    let mut worst_rel = 0.0f64;

    for _ in 0..instances {
        let (net, bx, out) = random_instance(&mut rng, &[2, 6, 6], 2);
        let mut store = interval_propagate(&net, &bx).unwrap();
        rsip_init(&net, &mut store);
        let folded = net.fold_output_constraints(&out).unwrap();
        let obj = LinearObjective::input(unit_direction(&mut rng, 2), &net).unwrap();

        let mut checked = 0;
        'points: while checked < per_instance {
            let dual = DualState {
                alpha: (0..folded.hidden_stages())
                    .map(|k| {
                        Array1::from_shape_fn(folded.hidden_width(k), |_| {
                            rng.random_range(0.05..0.95)
                        })
                    })
                    .collect(),
                gamma: Array1::from_shape_fn(out.rows(), |_| rng.random_range(0.05..1.0)),
                gamma_frozen: false,
            };
            // Stay away from the recursion's kinks so central differences
            // see a differentiable neighborhood.
            let trace = eval_g(&folded, &store, &obj, &dual).unwrap();
            for nh in &trace.nu_hat {
                if nh.iter().any(|v| v.abs() < 20.0 * h) {
                    continue 'points;
                }
            }
            let t = &obj.c0 - &folded.layers()[0].weights.t().dot(&trace.nu[0]);
            if t.iter().any(|v| v.abs() < 20.0 * h) {
                continue 'points;
            }

            let grad = grad_g(&folded, &store, &obj, &dual).unwrap();
            let eval_at = |d: &DualState<f64>| eval_g(&folded, &store, &obj, d).unwrap().bound;
            for k in 0..dual.alpha.len() {
                for j in 0..dual.alpha[k].len() {
                    let mut dp = dual.clone();
                    dp.alpha[k][j] += h;
                    let mut dm = dual.clone();
                    dm.alpha[k][j] -= h;
                    let fd = (eval_at(&dp) - eval_at(&dm)) / (2.0 * h);
                    let an = grad.alpha[k][j];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                    worst_rel = worst_rel.max(rel);
                    assert!(rel <= 1e-4, "alpha[{k}][{j}]: fd {fd} vs {an}");
                }
            }
            for r in 0..dual.gamma.len() {
                let mut dp = dual.clone();
                dp.gamma[r] += h;
                let mut dm = dual.clone();
                dm.gamma[r] -= h;
                let fd = (eval_at(&dp) - eval_at(&dm)) / (2.0 * h);
                let an = grad.gamma[r];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                worst_rel = worst_rel.max(rel);
                assert!(rel <= 1e-4, "gamma[{r}]: fd {fd} vs {an}");
            }
            checked += 1;
            total_points += 1;
        }
    }
    println!(
        "criterion 4: PASS — {total_points} interior points on {instances} instances, worst relative error {worst_rel:.2e}"
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: soundness at application scale (double integrator, stacked).
// ---------------------------------------------------------------------------
#[test]
fn criterion_5_double_integrator_reach_soundness() {
    let steps = scaled(10, 3);
    let samples = scaled(1_000_000, 100_000);
    let dir = fixtures().join("double_integrator");
    let policy = load_network::<f64>(&dir.join("policy.json")).unwrap();
    let bx = load_box::<f64>(&dir.join("box.json")).unwrap();
    let obstacle = load_box::<f64>(&dir.join("obstacle.json")).unwrap();
    let a = arr2(&[[1.0, 1.0], [0.0, 1.0]]);
    let b = arr2(&[[0.5], [1.0]]);
    let out_set = OutputSet::from_box(&obstacle.lo, &obstacle.hi).unwrap();

    // Horizon-wide shift constants: interval recursion over the exact loop.
    let mut lo = bx.lo.clone();
    let mut hi = bx.hi.clone();
    let mut hull_lo = lo.clone();
    let mut hull_hi = hi.clone();
    for _ in 0..steps - 1 {
        let state = InputBox::new(lo.clone(), hi.clone()).unwrap();
        let pb = interval_propagate(&policy, &state).unwrap();
        let (ulo, uhi) = (pb.out_lo.unwrap(), pb.out_hi.unwrap());
        let (alo, ahi) =
            invprop::bounds::affine_interval(&a, &Array1::zeros(2), &lo, &hi);
        let (blo, bhi) =
            invprop::bounds::affine_interval(&b, &Array1::zeros(2), &ulo, &uhi);
        lo = &alo + &blo;
        hi = &ahi + &bhi;
        for j in 0..2 {
            hull_lo[j] = hull_lo[j].min(lo[j]);
            hull_hi[j] = hull_hi[j].max(hi[j]);
        }
    }
    let hull = InputBox::new(hull_lo, hull_hi).unwrap();
    let step_net = encode_closed_loop(&a, &b, &policy, &hull).unwrap();
    let dirs = gen_directions_2d::<f64>(20).unwrap();
    let config = TightenConfig::default();

    let mut ratios = Vec::new();
    for t in 1..=steps {
        let net_t = step_net.stack(t).unwrap();
        let mut store = interval_propagate(&net_t, &bx).unwrap();
        rsip_init(&net_t, &mut store);
        let run = bound_halfspaces(&net_t, &mut store, &out_set, &dirs, &config).unwrap();
        assert!(!store.infeasible(), "step {t}: preimage is not empty");

        // Per-sweep certified bounds are monotone, so per-sweep widths and
        // per-sweep estimated ratios are non-increasing.
        for w in run.report.width_sums.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "step {t}: width sum increased");
        }
        for d in 0..dirs.len() {
            for s in run.report.halfspace_lb_history.windows(2) {
                assert!(
                    s[1][d] >= s[0][d] - 1e-12,
                    "step {t}: half-space bound regressed"
                );
            }
        }

        // Exact-system sampling: every feasible sample must lie inside.
        let union = PolytopeUnion::single(bx.clone(), run.halfspaces.clone());
        let mut rng = StdRng::seed_from_u64(500 + t as u64);
        let mut feasible = 0usize;
        let mut contained_feasible = 0usize;
        let mut contained = 0usize;
        for _ in 0..samples {
            let x = arr1(&[
                rng.random_range(bx.lo[0]..bx.hi[0]),
                rng.random_range(bx.lo[1]..bx.hi[1]),
            ]);
            if union.contains(&x) {
                contained += 1;
            }
            let mut state = x.clone();
            for _ in 0..t {
                let u = policy.forward(&state).unwrap();
                state = a.dot(&state) + b.dot(&u);
            }
            if obstacle.contains(&state, 1e-9) {
                feasible += 1;
                if union.contains(&x) {
                    contained_feasible += 1;
                }
            }
        }
        assert!(feasible > 0, "step {t}: no feasible samples drawn");
        assert_eq!(
            contained_feasible, feasible,
            "step {t}: a feasible sample escaped the certified union"
        );
        let ratio = contained as f64 / feasible as f64;
        assert!(ratio.is_finite());
        ratios.push(ratio);

        // Per-sweep ratio monotonicity on the final sweep history: the
        // contained count under sweep-s bounds is non-increasing in s by
        // bound monotonicity (asserted above); spot-check numerically on
        // the first and last sweep polytopes.
        if run.report.halfspace_lb_history.len() >= 2 {
            let first = &run.report.halfspace_lb_history[0];
            let last = run.report.halfspace_lb_history.last().unwrap();
            let mk = |lbs: &Vec<f64>| {
                PolytopeUnion::single(
                    bx.clone(),
                    dirs.iter()
                        .zip(lbs.iter())
                        .filter(|(_, lb)| lb.is_finite())
                        .map(|(c, &lb)| invprop::geometry::HalfSpace::new(c.clone(), lb).unwrap())
                        .collect(),
                )
            };
            let (u_first, u_last) = (mk(first), mk(last));
            let mut rng = StdRng::seed_from_u64(77);
            let mut in_first = 0;
            let mut in_last = 0;
            for _ in 0..20_000 {
                let x = arr1(&[
                    rng.random_range(bx.lo[0]..bx.hi[0]),
                    rng.random_range(bx.lo[1]..bx.hi[1]),
                ]);
                if u_first.contains(&x) {
                    in_first += 1;
                }
                if u_last.contains(&x) {
                    in_last += 1;
                }
            }
            assert!(in_last <= in_first, "step {t}: estimated set grew over sweeps");
        }
    }
    println!(
        "criterion 5: PASS — {steps} steps sound against {samples} samples each; ratios {:?}",
        ratios.iter().map(|r| (r * 100.0).round() / 100.0).collect::<Vec<_>>()
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: branching gain on the bundled confident-region demo.
// ---------------------------------------------------------------------------
#[test]
fn criterion_6_branching_gain() {
    let t0 = Instant::now();
    let samples = scaled(1_000_000, 150_000);
    let dir = fixtures().join("ood");
    let net = load_network::<f64>(&dir.join("net.json")).unwrap();
    let bx = load_box::<f64>(&dir.join("box.json")).unwrap();

    let store = interval_propagate(&net, &bx).unwrap();
    let out_lo = store.out_lo.clone().unwrap();
    let shifts = arr1(&[out_lo[1], out_lo[2]]);
    let encoded = encode_max_gap(&net, 0, 1, 2, &shifts).unwrap();
    let out_set = OutputSet::new(arr2(&[[-1.0]]), arr1(&[0.0])).unwrap();
    let dirs = gen_directions_2d::<f64>(40).unwrap();
    let config = TightenConfig::default();

    let one = branch_and_bound(&encoded, &out_set, &bx, &dirs, &config, 1).unwrap();
    let four = branch_and_bound(&encoded, &out_set, &bx, &dirs, &config, 4).unwrap();

    let (est1, viol1) =
        invprop::geometry::approx_ratio(&one.union, &encoded, &out_set, &bx, samples, 60).unwrap();
    let (est4, viol4) =
        invprop::geometry::approx_ratio(&four.union, &encoded, &out_set, &bx, samples, 60).unwrap();
    assert_eq!(viol1, 0, "unbranched run unsound");
    assert_eq!(viol4, 0, "branched run unsound");
    let (RatioEstimate::Ratio { ratio: r1, .. }, RatioEstimate::Ratio { ratio: r4, .. }) =
        (est1, est4)
    else {
        panic!("confident region should be nonempty");
    };
    assert!(r4 <= r1 + 1e-6, "branching loosened the union: {r4} > {r1}");

    let secs = t0.elapsed().as_secs_f64();
    if !cfg!(debug_assertions) {
        assert!(secs < 120.0, "took {secs:.1}s, budget 120s");
    }
    println!(
        "criterion 6: PASS — unbranched ratio {r1:.3}, 4-branch ratio {r4:.3}, both sound over {samples} samples, {secs:.1}s"
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: γ = 0 reduction equals the reverse-symbolic backward pass.
// ---------------------------------------------------------------------------
#[test]
fn criterion_7_gamma_zero_reduction() {
    let count = scaled(100, 15);
    let mut rng = StdRng::seed_from_u64(7007);
    let archs: [&[usize]; 3] = [&[2, 6, 5, 2], &[3, 8, 2], &[2, 4, 4, 3]];
    let mut worst = 0.0f64;
    for i in 0..count {
        let net = random_net(&mut rng, archs[i % archs.len()]);
        let n0 = net.input_dim();
        let bx =
            InputBox::new(Array1::from_elem(n0, -1.0), Array1::from_elem(n0, 1.0)).unwrap();
        let mut store = interval_propagate(&net, &bx).unwrap();
        rsip_init(&net, &mut store);
        let class = classify(&store);
        let m = net.output_dim();
        let out = OutputSet::new(Array2::eye(m), Array1::zeros(m)).unwrap();
        let folded = net.fold_output_constraints(&out).unwrap();
        let dual = closed_form_dual(&folded, &store, &class);
        for k in 0..net.hidden_stages() {
            let (raw_lo, raw_hi) = rsip_stage_bounds(&net, &store, &class, k);
            for j in 0..net.hidden_width(k) {
                let lo_obj = LinearObjective::neuron(&folded, k, j, 1.0).unwrap();
                let up_obj = LinearObjective::neuron(&folded, k, j, -1.0).unwrap();
                let lo = eval_g(&folded, &store, &lo_obj, &dual).unwrap().bound;
                let up = -eval_g(&folded, &store, &up_obj, &dual).unwrap().bound;
                worst = worst.max((lo - raw_lo[j]).abs()).max((up - raw_hi[j]).abs());
                assert!(
                    (lo - raw_lo[j]).abs() <= 1e-9 && (up - raw_hi[j]).abs() <= 1e-9,
                    "net {i}, stage {k}, neuron {j}: {lo} vs {} / {up} vs {}",
                    raw_lo[j],
                    raw_hi[j]
                );
            }
        }
    }
    println!(
        "criterion 7: PASS — per-neuron bounds equal on {count} networks (worst deviation {worst:.2e})"
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: determinism — byte-identical reports, serial == parallel.
// ---------------------------------------------------------------------------
#[test]
fn criterion_8_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let toy = fixtures().join("toy");
    let run = |json: &Path, threads: &str| {
        let status = Command::new(bin())
            .args([
                "preimage",
                "--net",
                toy.join("net.json").to_str().unwrap(),
                "--outset",
                toy.join("outset.json").to_str().unwrap(),
                "--box",
                toy.join("box.json").to_str().unwrap(),
                "--samples",
                "50000",
                "--seed",
                "11",
                "--threads",
                threads,
                "--json",
                json.to_str().unwrap(),
            ])
            .output()
            .expect("binary runs");
        assert!(status.status.success(), "preimage run failed");
    };
    let (a, b, c) = (
        tmp.path().join("a.json"),
        tmp.path().join("b.json"),
        tmp.path().join("c.json"),
    );
    run(&a, "4");
    run(&b, "4");
    run(&c, "1");
    let (ta, tb, tc) = (
        std::fs::read(&a).unwrap(),
        std::fs::read(&b).unwrap(),
        std::fs::read(&c).unwrap(),
    );
    assert_eq!(ta, tb, "same config + seed must be byte-identical");
    assert_eq!(
        ta, tc,
        "serial and parallel runs disagree beyond tolerance (expected identical)"
    );

    // Library-level check that serial and parallel certified bounds agree
    // within 1e−12 on a larger instance.
    let mut rng = StdRng::seed_from_u64(808);
    let (net, bx, out) = random_instance(&mut rng, &[2, 6, 6, 2], 2);
    let dirs = gen_directions_2d::<f64>(8).unwrap();
    let config = TightenConfig {
        max_sweeps: 4,
        ..TightenConfig::default()
    };
    let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let run_in = |pool: &rayon::ThreadPool| {
        pool.install(|| {
            let mut store = interval_propagate(&net, &bx).unwrap();
            rsip_init(&net, &mut store);
            bound_halfspaces(&net, &mut store, &out, &dirs, &config)
                .unwrap()
                .halfspaces
                .iter()
                .map(|h| h.lb)
                .collect::<Vec<_>>()
        })
    };
    let serial = run_in(&pool1);
    let parallel = run_in(&pool4);
    for (s, p) in serial.iter().zip(parallel.iter()) {
        assert!((s - p).abs() <= 1e-12, "serial {s} vs parallel {p}");
    }
    println!("criterion 8: PASS — byte-identical reports; serial == parallel bounds");
}

// ---------------------------------------------------------------------------
// Criterion 9: the output-constrained mechanism verifies margin networks
// that the γ = 0 pipeline cannot.
// ---------------------------------------------------------------------------
#[test]
fn criterion_9_robust_mechanism() {
    let needed = scaled(20, 4);
    let mut rng = StdRng::seed_from_u64(7009);
    let config = TightenConfig::default();
    let out_set = OutputSet::new(arr2(&[[1.0]]), arr1(&[0.0])).unwrap();
    let tmp = tempfile::tempdir().unwrap();

    let mut found = 0usize;
    let mut tried = 0usize;
    while found < needed && tried < 400 {
        tried += 1;
        let base = random_net(&mut rng, &[2, 6, 6, 1]);
        let bx = InputBox::new(arr1(&[-1.0, -1.0]), arr1(&[1.0, 1.0])).unwrap();

        // γ = 0 pipeline bound for the raw margin.
        let frozen = TightenConfig {
            gamma_frozen: true,
            ..config.clone()
        };
        let folded0 = base
            .fold_output_constraints(
                &OutputSet::new(arr2(&[[1.0]]), arr1(&[0.0])).unwrap(),
            )
            .unwrap();
        let mut store = interval_propagate(&base, &bx).unwrap();
        rsip_init(&base, &mut store);
        tighten_all(&base, &mut store, &out_set, &frozen).unwrap();
        let obj = LinearObjective::output(&folded0, 0, 1.0).unwrap();
        let (fwd, _) = optimize_bound(&folded0, &store, &obj, &frozen).unwrap();

        // Sampled floor on the true minimum.
        let mut smin = f64::INFINITY;
        let mut rng2 = StdRng::seed_from_u64(tried as u64);
        for _ in 0..40_000 {
            let x = arr1(&[rng2.random_range(-1.0..1.0), rng2.random_range(-1.0..1.0)]);
            smin = smin.min(base.forward(&x).unwrap()[0]);
        }
        if smin - fwd < 0.05 {
            continue; // forward bound almost tight; no room for the mechanism
        }

        // Shift the margin so the forward bound fails but the region
        // {f ≤ 0} is (hopefully provably) empty.
        let theta = fwd + 0.35 * (smin - fwd);
        let mut layers = base.layers().to_vec();
        let last = layers.last_mut().unwrap();
        let shifted = AffineLayer::new(
            last.weights.clone(),
            last.bias.clone() - Array1::from_elem(1, theta),
        )
        .unwrap();
        *last = shifted;
        let margin = Network::new(layers).unwrap();

        // The constructed net must defeat the γ = 0 pipeline.
        let mut store0 = interval_propagate(&margin, &bx).unwrap();
        rsip_init(&margin, &mut store0);
        tighten_all(&margin, &mut store0, &out_set, &frozen).unwrap();
        let folded = margin.fold_output_constraints(&out_set).unwrap();
        let obj = LinearObjective::output(&folded, 0, 1.0).unwrap();
        let (fwd_shifted, _) = optimize_bound(&folded, &store0, &obj, &frozen).unwrap();
        if fwd_shifted > 0.0 {
            continue;
        }

        // Output-constrained pipeline must prove emptiness.
        let mut store1 = interval_propagate(&margin, &bx).unwrap();
        rsip_init(&margin, &mut store1);
        tighten_all(&margin, &mut store1, &out_set, &config).unwrap();
        if !store1.infeasible() {
            continue;
        }

        // End-to-end through the CLI: verdict must be verified.
        let net_path = tmp.path().join(format!("margin{found}.json"));
        let box_path = tmp.path().join("box.json");
        save_network(&margin, &net_path).unwrap();
        std::fs::write(&box_path, r#"{"lo": [-1.0, -1.0], "hi": [1.0, 1.0]}"#).unwrap();
        let output = Command::new(bin())
            .args([
                "robust",
                "--net",
                net_path.to_str().unwrap(),
                "--box",
                box_path.to_str().unwrap(),
                "--samples",
                "20000",
            ])
            .output()
            .expect("binary runs");
        let stdout = String::from_utf8_lossy(&output.stdout);
        assert!(
            stdout.contains("verified via output-constrained"),
            "cmd_robust did not verify: {stdout}"
        );
        found += 1;
    }
    assert!(
        found >= needed,
        "only {found}/{needed} mechanism instances found in {tried} tries"
    );
    println!(
        "criterion 9: PASS — {found} networks verified via the output constraint where the γ=0 pipeline could not ({tried} candidates)"
    );
}
