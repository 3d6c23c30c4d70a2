//! `invprop reach`: backward reachability of a neural feedback loop.
//!
//! Encodes `x ↦ A·x + B·π(x)` as a plain affine/ReLU network, stacks it `t`
//! times (fusing seams), and certifies, for every step `1..=t`, an
//! over-approximation of the states that enter the obstacle after `t` steps.
//! Passthrough shift constants come from an interval recursion over the
//! whole horizon, so one encoded step network is exact for every stacking
//! depth used.

use crate::report::RunReport;
use crate::{load_config, write_svg_scene, CmdError};
use clap::Args;
use invprop::bounds::{affine_interval, interval_propagate, rsip_init, BoundStore};
use invprop::dual::bound_halfspaces;
use invprop::branch::{BranchNode, BranchOutcome, NodeStatus};
use invprop::geometry::{gen_directions_2d, gen_directions_box, PolytopeUnion, RatioEstimate};
use invprop::network::{encode_closed_loop, load_box, load_network, InputBox, Network, OutputSet};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Args, Debug)]
pub struct ReachArgs {
    /// Dynamics JSON file `{"A": [[...]], "B": [[...]]}`.
    #[arg(long)]
    pub dynamics: PathBuf,
    /// Policy network JSON file.
    #[arg(long)]
    pub policy: PathBuf,
    /// Obstacle box JSON file (in state space).
    #[arg(long)]
    pub obstacle: PathBuf,
    /// Analysis box JSON file (initial-state domain).
    #[arg(long = "box")]
    pub bx: PathBuf,
    /// Number of backward steps.
    #[arg(long)]
    pub steps: usize,
    #[arg(long, default_value_t = 40)]
    pub planes: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// SVG output prefix; per-step files get `_step<t>.svg` appended (2D).
    #[arg(long)]
    pub svg: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Directory for per-step serialized bound stores (reused across steps
    /// when provably sound).
    #[arg(long)]
    pub bounds_dir: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct DynamicsJson {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
pub struct ReachReport {
    pub steps: Vec<RunReport>,
    /// Per-step count of hidden stages whose bounds were warm-started from
    /// the previous step's store.
    pub reused_stages: Vec<usize>,
}

fn load_matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>, CmdError> {
    let r = rows.len();
    let c = rows.first().map(|x| x.len()).unwrap_or(0);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((r, c), flat)
        .map_err(|e| CmdError::Parse(format!("ragged matrix: {e}")))
}

/// Interval hull of the state trajectory over `steps` steps starting from
/// `bx`, via per-step interval propagation of the exact closed loop.
fn horizon_hull(
    a: &Array2<f64>,
    b: &Array2<f64>,
    policy: &Network<f64>,
    bx: &InputBox<f64>,
    steps: usize,
) -> Result<InputBox<f64>, CmdError> {
    let mut lo = bx.lo.clone();
    let mut hi = bx.hi.clone();
    let mut hull_lo = lo.clone();
    let mut hull_hi = hi.clone();
    for _ in 0..steps.saturating_sub(1) {
        let state = InputBox::new(lo.clone(), hi.clone()).map_err(CmdError::run)?;
        let policy_bounds = interval_propagate(policy, &state).map_err(CmdError::run)?;
        let (u_lo, u_hi) = (
            policy_bounds.out_lo.expect("outputs filled"),
            policy_bounds.out_hi.expect("outputs filled"),
        );
        let (ax_lo, ax_hi) = affine_interval(a, &Array1::zeros(a.nrows()), &lo, &hi);
        let (bu_lo, bu_hi) = affine_interval(b, &Array1::zeros(b.nrows()), &u_lo, &u_hi);
        lo = &ax_lo + &bu_lo;
        hi = &ax_hi + &bu_hi;
        for j in 0..lo.len() {
            hull_lo[j] = hull_lo[j].min(lo[j]);
            hull_hi[j] = hull_hi[j].max(hi[j]);
        }
    }
    InputBox::new(hull_lo, hull_hi).map_err(CmdError::run)
}

/// Is the one-step interval image of the box contained in the box? When it
/// is, bounds computed for the (t−1)-step suffix remain sound for the same
/// suffix of the t-step network and may be reused.
fn reuse_is_sound(step_net: &Network<f64>, bx: &InputBox<f64>) -> Result<bool, CmdError> {
    let store = interval_propagate(step_net, bx).map_err(CmdError::run)?;
    let lo = store.out_lo.expect("outputs filled");
    let hi = store.out_hi.expect("outputs filled");
    Ok((0..bx.dim()).all(|j| lo[j] >= bx.lo[j] && hi[j] <= bx.hi[j]))
}

/// Transfer suffix-stage bounds from the previous step's store: stage `r`
/// of the (t−1)-net corresponds to stage `r + stages_per_step` of the t-net.
fn warm_start_suffix(
    store: &mut BoundStore<f64>,
    prev: &BoundStore<f64>,
    stages_per_step: usize,
) -> usize {
    let mut reused = 0;
    for r in 0..prev.stages() {
        let target = r + stages_per_step;
        if target >= store.stages() {
            break;
        }
        if prev.pre_lo[r].len() != store.pre_lo[target].len() {
            continue; // seam-fused stage, shapes differ
        }
        for j in 0..prev.pre_lo[r].len() {
            store.tighten_pre_lo(target, j, prev.pre_lo[r][j]);
            store.tighten_pre_hi(target, j, prev.pre_hi[r][j]);
        }
        reused += 1;
    }
    reused
}

pub fn run(args: &ReachArgs) -> Result<u8, CmdError> {
    if args.steps < 1 {
        return Err(CmdError::Run("steps must be at least 1".into()));
    }
    let dyn_json: DynamicsJson = serde_json::from_str(
        &std::fs::read_to_string(&args.dynamics).map_err(CmdError::io)?,
    )
    .map_err(|e| CmdError::Parse(format!("{}: {e}", args.dynamics.display())))?;
    let a = load_matrix(&dyn_json.a)?;
    let b = load_matrix(&dyn_json.b)?;
    let policy = load_network::<f64>(&args.policy).map_err(CmdError::parse)?;
    let obstacle = load_box::<f64>(&args.obstacle).map_err(CmdError::parse)?;
    let bx = load_box::<f64>(&args.bx).map_err(CmdError::parse)?;
    let config = load_config(args.config.as_deref())?;
    let out_set = OutputSet::from_box(&obstacle.lo, &obstacle.hi).map_err(CmdError::run)?;

    // One encoding valid for the whole horizon: the shift constants must
    // lower-bound the state along every intermediate step.
    let hull = horizon_hull(&a, &b, &policy, &bx, args.steps)?;
    let step_net = encode_closed_loop(&a, &b, &policy, &hull).map_err(CmdError::run)?;
    let stages_per_step = step_net.hidden_stages();
    let reuse_ok = reuse_is_sound(&step_net, &bx)?;
    if reuse_ok {
        println!("bound reuse: enabled (one-step image stays inside the box)");
    } else {
        println!("bound reuse: disabled (one-step image leaves the box)");
    }

    let directions = if bx.dim() == 2 {
        gen_directions_2d::<f64>(args.planes).map_err(CmdError::run)?
    } else {
        gen_directions_box::<f64>(bx.dim()).map_err(CmdError::run)?
    };

    let mut steps_report = Vec::new();
    let mut reused_stages = Vec::new();
    let mut prev_store: Option<BoundStore<f64>> = None;
    let mut worst_exit = 0u8;

    for t in 1..=args.steps {
        let t0 = Instant::now();
        let net_t = step_net.stack(t).map_err(CmdError::run)?;
        let mut store = interval_propagate(&net_t, &bx).map_err(CmdError::run)?;
        rsip_init(&net_t, &mut store);
        let mut reused = 0;
        if reuse_ok {
            if let Some(prev) = &prev_store {
                reused = warm_start_suffix(&mut store, prev, stages_per_step);
            }
        }
        reused_stages.push(reused);

        let run = bound_halfspaces(&net_t, &mut store, &out_set, &directions, &config)
            .map_err(CmdError::run)?;
        let tighten_secs = t0.elapsed().as_secs_f64();

        let status = if store.infeasible() {
            NodeStatus::PrunedInfeasible
        } else {
            NodeStatus::Done
        };
        let node = BranchNode {
            bx: bx.clone(),
            status,
            halfspaces: (status == NodeStatus::Done).then(|| run.halfspaces.clone()),
            depth: 0,
        };
        let union = if status == NodeStatus::Done {
            PolytopeUnion::single(bx.clone(), run.halfspaces.clone())
        } else {
            PolytopeUnion { leaves: vec![] }
        };
        let outcome = BranchOutcome {
            union: union.clone(),
            leaves: vec![node],
            reports: vec![Some(run.report.clone())],
            root_report: None,
        };
        let mut report = RunReport::from_outcome(
            &format!("reach step {t}"),
            &outcome,
            &bx,
            &out_set,
            &config,
            1,
            args.seed,
            args.samples,
        );
        report.timings.push(("tighten".into(), tighten_secs));

        // Soundness and ratio against the exact system dynamics, not the
        // encoded network, so the encoding itself is under test too.
        let t1 = Instant::now();
        if status == NodeStatus::Done {
            let (estimate, violations, samples) =
                sample_reach(&a, &b, &policy, &obstacle, &bx, t, &union, args.samples, args.seed);
            report.ratio = Some(estimate);
            report.soundness_violations = Some(violations);
            if let Some(prefix) = &args.svg {
                if bx.dim() == 2 {
                    let path = svg_step_path(prefix, t);
                    write_svg_scene(
                        &path,
                        &bx,
                        &samples,
                        &union,
                        Some((&obstacle.lo, &obstacle.hi)),
                    )
                    .map_err(CmdError::io)?;
                }
            }
        }
        report.timings.push(("sample".into(), t1.elapsed().as_secs_f64()));

        report.exit = match status {
            NodeStatus::PrunedInfeasible => {
                worst_exit = worst_exit.max(3);
                "infeasible".into()
            }
            _ if report.any_unconverged() => {
                worst_exit = worst_exit.max(4);
                "budget-exhausted".into()
            }
            _ => "ok".into(),
        };
        println!("--- step {t} ---");
        report.print_summary();
        steps_report.push(report);

        if let Some(dir) = &args.bounds_dir {
            std::fs::create_dir_all(dir).map_err(CmdError::io)?;
            store
                .save(&dir.join(format!("bounds_step{t}.json")))
                .map_err(CmdError::run)?;
        }
        prev_store = Some(store);
    }

    if let Some(path) = &args.json {
        let report = ReachReport {
            steps: steps_report,
            reused_stages,
        };
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(path, text).map_err(CmdError::io)?;
    }
    Ok(worst_exit)
}

fn svg_step_path(prefix: &Path, t: usize) -> PathBuf {
    let stem = prefix
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "reach".into());
    let mut path = prefix.to_path_buf();
    path.set_file_name(format!("{stem}_step{t}.svg"));
    path
}

/// Sample the true t-step preimage of the obstacle under the exact closed
/// loop; count containment violations against the certified union.
#[allow(clippy::too_many_arguments)]
fn sample_reach(
    a: &Array2<f64>,
    b: &Array2<f64>,
    policy: &Network<f64>,
    obstacle: &InputBox<f64>,
    bx: &InputBox<f64>,
    t: usize,
    union: &PolytopeUnion<f64>,
    n: usize,
    seed: u64,
) -> (RatioEstimate, usize, Vec<Array1<f64>>) {
    let dim = bx.dim();
    let shard = 65_536usize;
    let shards: Vec<(u64, usize)> = (0..n.div_ceil(shard))
        .map(|s| (s as u64, shard.min(n - s * shard)))
        .collect();
    let (contained, feasible, violations, kept) = shards
        .par_iter()
        .map(|&(s, count)| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(s + 1)));
            let mut contained = 0usize;
            let mut feasible = 0usize;
            let mut violations = 0usize;
            let mut kept = Vec::new();
            for _ in 0..count {
                let x = Array1::from_shape_fn(dim, |j| {
                    let u: f64 = rng.random();
                    bx.lo[j] + (bx.hi[j] - bx.lo[j]) * u
                });
                let inside = union.contains(&x);
                if inside {
                    contained += 1;
                }
                let mut state = x.clone();
                for _ in 0..t {
                    let u = policy.forward(&state).expect("dims fixed");
                    state = a.dot(&state) + b.dot(&u);
                }
                if obstacle.contains(&state, 1e-9) {
                    feasible += 1;
                    kept.push(x);
                    if !inside {
                        violations += 1;
                    }
                }
            }
            (contained, feasible, violations, kept)
        })
        .reduce(
            || (0, 0, 0, Vec::new()),
            |mut acc, mut item| {
                acc.0 += item.0;
                acc.1 += item.1;
                acc.2 += item.2;
                acc.3.append(&mut item.3);
                acc
            },
        );
    let estimate = if feasible == 0 {
        RatioEstimate::EmpiricallyEmptyPreimage { samples: n, seed }
    } else {
        RatioEstimate::Ratio {
            ratio: contained as f64 / feasible as f64,
            contained,
            feasible,
            samples: n,
            seed,
        }
    };
    (estimate, violations, kept)
}
