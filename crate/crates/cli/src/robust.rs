//! `invprop robust`: robustness verification through the preimage engine.
//!
//! The property is the canonical scalar-margin form: the network is robust
//! on the box iff `f(x) > 0` everywhere. The command first looks for a
//! sampled counterexample, then tries a plain forward lower bound (γ pinned
//! at zero), and finally analyzes the region `{x : f(x) ≤ 0}` with the
//! output constraint active — if the tightened bounds cross, that region is
//! certifiably empty and the property holds even when the forward bound
//! alone could not show it.

use crate::{load_config, CmdError};
use clap::Args;
use invprop::bounds::{interval_propagate, rsip_init};
use invprop::dual::{optimize_bound, tighten_all, LinearObjective, TightenConfig};
use invprop::network::{
    encode_margin_min, fuse_affine, load_box, load_network, AffineLayer, Network, OutputSet,
};
use invprop::oracle::sample_feasible;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Args, Debug)]
pub struct RobustArgs {
    /// Network JSON file; either a scalar margin or a classifier with
    /// `--label`.
    #[arg(long)]
    pub net: PathBuf,
    /// Input box JSON file.
    #[arg(long = "box")]
    pub bx: PathBuf,
    /// Correct class; margins become `min_j (y_label − y_j)`.
    #[arg(long)]
    pub label: Option<usize>,
    #[arg(long, default_value_t = 200_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub enum Verdict {
    Verified,
    Falsified,
    Unknown,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RobustReport {
    pub verdict: Verdict,
    /// What produced the verdict: `forward-bound`, `output-constrained`,
    /// or `sample` for falsification.
    pub mechanism: Option<String>,
    pub witness: Option<Vec<f64>>,
    /// Plain γ = 0 lower bound of the margin over the box.
    pub forward_bound: f64,
    pub seed: u64,
    pub samples: usize,
    pub config: TightenConfig,
}

/// Build the scalar margin network for a verification query.
pub fn margin_network(
    net: &Network<f64>,
    label: Option<usize>,
    bx: &invprop::network::InputBox<f64>,
) -> Result<Network<f64>, CmdError> {
    if net.output_dim() == 1 {
        return Ok(net.clone());
    }
    let label = label.ok_or_else(|| {
        CmdError::Run("network has multiple outputs; pass --label".into())
    })?;
    let m = net.output_dim();
    if label >= m {
        return Err(CmdError::Run(format!("label {label} out of range for {m} outputs")));
    }
    if m == 2 {
        let other = 1 - label;
        let mut row = Array2::zeros((1, 2));
        row[(0, label)] = 1.0;
        row[(0, other)] = -1.0;
        let read = AffineLayer::new(row, Array1::zeros(1)).map_err(CmdError::run)?;
        let mut layers = net.layers().to_vec();
        let last = layers.pop().unwrap();
        layers.push(fuse_affine(&last, &read).map_err(CmdError::run)?);
        return Network::new(layers).map_err(CmdError::run);
    }
    // Diff-space lower bounds for the pairwise-max cascade: interval
    // propagation through a copy of the net with appended rows y_j − y_label.
    let mut diff_w = Array2::zeros((m, m));
    for j in 0..m {
        diff_w[(j, j)] += 1.0;
        diff_w[(j, label)] -= 1.0;
    }
    let diff = AffineLayer::new(diff_w, Array1::zeros(m)).map_err(CmdError::run)?;
    let mut layers = net.layers().to_vec();
    let last = layers.pop().unwrap();
    layers.push(fuse_affine(&last, &diff).map_err(CmdError::run)?);
    let diff_net = Network::new(layers).map_err(CmdError::run)?;
    let store = interval_propagate(&diff_net, bx).map_err(CmdError::run)?;
    let shifts = store.out_lo.expect("outputs filled");
    encode_margin_min(net, label, &shifts).map_err(CmdError::run)
}

pub fn run(args: &RobustArgs) -> Result<u8, CmdError> {
    let net = load_network::<f64>(&args.net).map_err(CmdError::parse)?;
    let bx = load_box::<f64>(&args.bx).map_err(CmdError::parse)?;
    let config = load_config(args.config.as_deref())?;
    let margin = margin_network(&net, args.label, &bx)?;
    let out_set =
        OutputSet::new(Array2::from_elem((1, 1), 1.0), Array1::zeros(1)).map_err(CmdError::run)?;

    let report = analyze(&margin, &bx, &out_set, &config, args.samples, args.seed)?;
    match &report.verdict {
        Verdict::Verified => println!(
            "verified via {} (forward bound {:.6})",
            report.mechanism.as_deref().unwrap_or("?"),
            report.forward_bound
        ),
        Verdict::Falsified => println!(
            "falsified: witness {:?}",
            report.witness.as_ref().unwrap()
        ),
        Verdict::Unknown => println!(
            "unknown (forward bound {:.6}, no crossing found)",
            report.forward_bound
        ),
    }
    if let Some(path) = &args.json {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(path, text).map_err(CmdError::io)?;
    }
    Ok(0)
}

/// The three-stage analysis on an already-scalar margin network.
pub fn analyze(
    margin: &Network<f64>,
    bx: &invprop::network::InputBox<f64>,
    out_set: &OutputSet<f64>,
    config: &TightenConfig,
    samples: usize,
    seed: u64,
) -> Result<RobustReport, CmdError> {
    // Stage 1: sampled counterexample (f(x) ≤ 0 falsifies).
    let hits = sample_feasible(margin, bx, out_set, samples, seed);
    if let Some(witness) = hits.first() {
        return Ok(RobustReport {
            verdict: Verdict::Falsified,
            mechanism: Some("sample".into()),
            witness: Some(witness.to_vec()),
            forward_bound: f64::NAN,
            seed,
            samples,
            config: config.clone(),
        });
    }

    // Stage 2: plain forward bound with γ pinned at zero.
    let frozen = TightenConfig {
        gamma_frozen: true,
        ..config.clone()
    };
    let folded = margin.fold_output_constraints(out_set).map_err(CmdError::run)?;
    let mut store = interval_propagate(margin, bx).map_err(CmdError::run)?;
    rsip_init(margin, &mut store);
    tighten_all(margin, &mut store, out_set, &frozen).map_err(CmdError::run)?;
    let obj = LinearObjective::output(&folded, 0, 1.0).map_err(CmdError::run)?;
    let (forward_bound, _) =
        optimize_bound(&folded, &store, &obj, &frozen).map_err(CmdError::run)?;
    if forward_bound > 0.0 {
        return Ok(RobustReport {
            verdict: Verdict::Verified,
            mechanism: Some("forward-bound".into()),
            witness: None,
            forward_bound,
            seed,
            samples,
            config: config.clone(),
        });
    }

    // Stage 3: analyze {f(x) ≤ 0} with the output constraint active; a
    // bound crossing certifies the region is empty.
    let mut store = interval_propagate(margin, bx).map_err(CmdError::run)?;
    rsip_init(margin, &mut store);
    tighten_all(margin, &mut store, out_set, config).map_err(CmdError::run)?;
    if store.infeasible() {
        return Ok(RobustReport {
            verdict: Verdict::Verified,
            mechanism: Some("output-constrained".into()),
            witness: None,
            forward_bound,
            seed,
            samples,
            config: config.clone(),
        });
    }

    Ok(RobustReport {
        verdict: Verdict::Unknown,
        mechanism: None,
        witness: None,
        forward_bound,
        seed,
        samples,
        config: config.clone(),
    })
}
