//! `invprop preimage`: certify an over-approximation of the preimage of a
//! linearly constrained output set, with optional input branching.

use crate::report::RunReport;
use crate::{load_config, write_svg_scene, CmdError};
use clap::Args;
use invprop::branch::branch_and_bound;
use invprop::bounds::interval_propagate;
use invprop::geometry::{approx_ratio, gen_directions_2d, gen_directions_box, write_halfspace_csv};
use invprop::network::{encode_max_gap, load_box, load_network, load_output_set, OutputSet};
use ndarray::{arr1, arr2};
use invprop::oracle::sample_feasible;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Args, Debug)]
pub struct PreimageArgs {
    /// Network JSON file.
    #[arg(long)]
    pub net: PathBuf,
    /// Output set JSON file (H, d); omit when using --max-gap.
    #[arg(long)]
    pub outset: Option<PathBuf>,
    /// Three output indices `a,b,ood`: analyze the confident-region
    /// preimage `max(y_a, y_b) ≥ y_ood` via the max-gap encoding.
    #[arg(long)]
    pub max_gap: Option<String>,
    /// Input box JSON file.
    #[arg(long = "box")]
    pub bx: PathBuf,
    /// Number of cutting planes (2D inputs: equally spaced angles;
    /// otherwise the 2d axis directions are used and this is ignored).
    #[arg(long, default_value_t = 40)]
    pub planes: usize,
    /// Input-space branches.
    #[arg(long, default_value_t = 1)]
    pub branches: usize,
    /// Monte-Carlo samples for the approximation ratio.
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Tightening config JSON file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pin γ = 0 (ignore output constraints when tightening).
    #[arg(long, default_value_t = false)]
    pub gamma0: bool,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn run(args: &PreimageArgs) -> Result<u8, CmdError> {
    let base_net = load_network::<f64>(&args.net).map_err(CmdError::parse)?;
    let bx = load_box::<f64>(&args.bx).map_err(CmdError::parse)?;
    let mut config = load_config(args.config.as_deref())?;
    config.gamma_frozen = args.gamma0;

    // Either a plain (H, d) output set, or the max-gap encoding for the
    // confident-region query max(y_a, y_b) ≥ y_ood.
    let (net, out_set) = match (&args.outset, &args.max_gap) {
        (Some(path), None) => (
            base_net.clone(),
            load_output_set::<f64>(path).map_err(CmdError::parse)?,
        ),
        (None, Some(spec)) => {
            let idx: Vec<usize> = spec
                .split(',')
                .map(|v| v.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|e| CmdError::Parse(format!("--max-gap: {e}")))?;
            if idx.len() != 3 {
                return Err(CmdError::Parse("--max-gap needs three indices".into()));
            }
            let store = interval_propagate(&base_net, &bx).map_err(CmdError::run)?;
            let out_lo = store.out_lo.expect("outputs filled");
            let shifts = arr1(&[out_lo[idx[1]], out_lo[idx[2]]]);
            let encoded = encode_max_gap(&base_net, idx[0], idx[1], idx[2], &shifts)
                .map_err(CmdError::run)?;
            // Encoded scalar m = max(y_a, y_b) − y_ood; demand m ≥ 0.
            let out = OutputSet::new(arr2(&[[-1.0]]), arr1(&[0.0])).map_err(CmdError::run)?;
            (encoded, out)
        }
        _ => {
            return Err(CmdError::Parse(
                "pass exactly one of --outset or --max-gap".into(),
            ))
        }
    };

    let directions = if net.input_dim() == 2 {
        gen_directions_2d::<f64>(args.planes).map_err(CmdError::run)?
    } else {
        gen_directions_box::<f64>(net.input_dim()).map_err(CmdError::run)?
    };

    let t0 = Instant::now();
    let outcome = branch_and_bound(&net, &out_set, &bx, &directions, &config, args.branches)
        .map_err(CmdError::run)?;
    let tighten_secs = t0.elapsed().as_secs_f64();

    let mut report = RunReport::from_outcome(
        "preimage",
        &outcome,
        &bx,
        &out_set,
        &config,
        args.branches,
        args.seed,
        args.samples,
    );
    report.timings.push(("tighten".into(), tighten_secs));

    let t1 = Instant::now();
    if !outcome.all_pruned() {
        let (estimate, violations) =
            approx_ratio(&outcome.union, &net, &out_set, &bx, args.samples, args.seed)
                .map_err(CmdError::run)?;
        report.ratio = Some(estimate);
        report.soundness_violations = Some(violations);
    }
    report.timings.push(("sample".into(), t1.elapsed().as_secs_f64()));

    let exit = if outcome.all_pruned() {
        report.exit = "infeasible".into();
        3
    } else if report.any_unconverged() {
        report.exit = "budget-exhausted".into();
        4
    } else {
        report.exit = "ok".into();
        0
    };

    if let Some(path) = &args.svg {
        if net.input_dim() == 2 {
            let samples = sample_feasible(&net, &bx, &out_set, args.samples.min(200_000), args.seed);
            write_svg_scene(path, &bx, &samples, &outcome.union, None).map_err(CmdError::io)?;
        } else {
            eprintln!("--svg skipped: input dimension is not 2");
        }
    }
    if let Some(path) = &args.csv {
        let file = std::fs::File::create(path).map_err(CmdError::io)?;
        write_halfspace_csv(&outcome.union, file).map_err(CmdError::io)?;
    }
    if let Some(path) = &args.json {
        report.write_json(path).map_err(CmdError::io)?;
    }
    report.print_summary();
    Ok(exit)
}
