//! `invprop verify --oracle`: the sandwich self-check on one instance.
//!
//! Checks, at 50 random dual points and at the ascent optimum, that
//! `g(α, γ) ≤ LP relaxation ≤ exact minimum ≤ sampled feasible minimum`,
//! every inequality within 1e−6 slack.

use crate::{load_config, CmdError};
use clap::Args;
use invprop::bounds::{classify, interval_propagate, rsip_init};
use invprop::dual::{eval_g, optimize_bound, DualState, LinearObjective};
use invprop::network::{load_box, load_network, load_output_set};
use invprop::oracle::{
    exact_lp_relaxation, exact_min_milp_with, sample_feasible, MilpOutcome, RelaxOutcome,
};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Run the exact-oracle sandwich check (the only mode).
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub outset: PathBuf,
    #[arg(long = "box")]
    pub bx: PathBuf,
    /// Objective direction, comma separated (default: first axis).
    #[arg(long, allow_hyphen_values = true)]
    pub direction: Option<String>,
    #[arg(long, default_value_t = 200_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

const SLACK: f64 = 1e-6;

pub fn run(args: &VerifyArgs) -> Result<u8, CmdError> {
    if !args.oracle {
        return Err(CmdError::Run(
            "verify currently supports only --oracle".into(),
        ));
    }
    let net = load_network::<f64>(&args.net).map_err(CmdError::parse)?;
    let out_set = load_output_set::<f64>(&args.outset).map_err(CmdError::parse)?;
    let bx = load_box::<f64>(&args.bx).map_err(CmdError::parse)?;
    let config = load_config(args.config.as_deref())?;

    let c: Array1<f64> = match &args.direction {
        Some(text) => {
            let vals: Result<Vec<f64>, _> = text.split(',').map(|v| v.trim().parse()).collect();
            Array1::from(vals.map_err(|e| CmdError::Parse(format!("--direction: {e}")))?)
        }
        None => {
            let mut e0 = Array1::zeros(net.input_dim());
            e0[0] = 1.0;
            e0
        }
    };
    if c.len() != net.input_dim() {
        return Err(CmdError::Run("--direction length != input dim".into()));
    }

    let mut store = interval_propagate(&net, &bx).map_err(CmdError::run)?;
    rsip_init(&net, &mut store);
    let class = classify(&store);
    println!(
        "instance: {} layers, {} unstable neurons",
        net.depth(),
        class.unstable_count()
    );

    let milp = match exact_min_milp_with(&net, &store, &out_set, &c).map_err(CmdError::run)? {
        MilpOutcome::Min { value, .. } => value,
        MilpOutcome::Empty => {
            println!("exact check: preimage is empty within the box; nothing to sandwich");
            return Ok(0);
        }
    };
    let obj = LinearObjective::input(c.clone(), &net).map_err(CmdError::run)?;
    let lp = match exact_lp_relaxation(&net, &store, &out_set, &obj).map_err(CmdError::run)? {
        RelaxOutcome::Value(v) => v,
        RelaxOutcome::Infeasible => {
            return Err(CmdError::Run(
                "relaxation infeasible but exact problem was not".into(),
            ))
        }
    };
    let folded = net.fold_output_constraints(&out_set).map_err(CmdError::run)?;
    let (ascended, _) = optimize_bound(&folded, &store, &obj, &config).map_err(CmdError::run)?;

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut dual_max = f64::NEG_INFINITY;
    for _ in 0..50 {
        let dual = DualState {
            alpha: (0..folded.hidden_stages())
                .map(|k| {
                    Array1::from_shape_fn(folded.hidden_width(k), |_| rng.random_range(0.0..1.0))
                })
                .collect(),
            gamma: Array1::from_shape_fn(out_set.rows(), |_| rng.random_range(0.0..2.0)),
            gamma_frozen: false,
        };
        let g = eval_g(&folded, &store, &obj, &dual)
            .map_err(CmdError::run)?
            .bound;
        dual_max = dual_max.max(g);
    }

    let sampled_min = sample_feasible(&net, &bx, &out_set, args.samples, args.seed)
        .iter()
        .map(|x| c.dot(x))
        .fold(f64::INFINITY, f64::min);

    println!("dual (50 random points, max) : {dual_max:.9}");
    println!("dual (ascended)              : {ascended:.9}");
    println!("LP relaxation (exact)        : {lp:.9}");
    println!("exact minimum (patterns)     : {milp:.9}");
    println!("sampled feasible minimum     : {sampled_min:.9}");

    let mut ok = true;
    let mut check = |name: &str, lhs: f64, rhs: f64| {
        let pass = lhs <= rhs + SLACK;
        println!("{}: {name}", if pass { "PASS" } else { "FAIL" });
        ok &= pass;
    };
    check("random duals ≤ LP relaxation", dual_max, lp);
    check("ascended dual ≤ LP relaxation", ascended, lp);
    check("LP relaxation ≤ exact minimum", lp, milp);
    if sampled_min.is_finite() {
        check("exact minimum ≤ sampled minimum", milp, sampled_min);
    } else {
        println!("NOTE: no feasible samples drawn; sampled bound skipped");
    }
    Ok(if ok { 0 } else { 1 })
}
