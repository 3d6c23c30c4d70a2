//! Run reports: everything needed to re-verify a result offline.
//!
//! The JSON report is deterministic for a fixed config and seed (wall-clock
//! timings are printed to the console, never serialized), and it carries the
//! analysis box, the output set, and every certified half-space, so an
//! independent pass can re-check soundness from the report plus the network
//! file alone.

use invprop::branch::{BranchOutcome, NodeStatus};
use invprop::dual::{TightenConfig, TightenReport};
use invprop::geometry::{HalfSpace, PolytopeUnion, RatioEstimate};
use invprop::network::{InputBox, Network, OutputSet};
use invprop::oracle::sample_feasible;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutSetJson {
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub d: Vec<f64>,
}

impl OutSetJson {
    pub fn from(set: &OutputSet<f64>) -> Self {
        Self {
            h: set.h.rows().into_iter().map(|r| r.to_vec()).collect(),
            d: set.d.to_vec(),
        }
    }

    pub fn to_output_set(&self) -> OutputSet<f64> {
        let rows = self.h.len();
        let cols = self.h.first().map(|r| r.len()).unwrap_or(0);
        let flat: Vec<f64> = self.h.iter().flatten().copied().collect();
        OutputSet::new(
            Array2::from_shape_vec((rows, cols), flat).expect("rectangular H"),
            Array1::from(self.d.clone()),
        )
        .expect("valid output set")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeafJson {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub status: String,
    pub depth: usize,
    /// Certified half-spaces `c·x ≥ lb` as `[c..., lb]` rows.
    pub halfspaces: Vec<Vec<f64>>,
    pub sweeps: usize,
    pub converged: bool,
    pub width_sums: Vec<f64>,
    /// Certified bound per tracked direction after each sweep.
    pub halfspace_lb_history: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub seed: u64,
    pub samples: usize,
    pub branches: usize,
    pub config: TightenConfig,
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    pub out_set: OutSetJson,
    pub leaves: Vec<LeafJson>,
    pub root_sweeps: Option<usize>,
    pub ratio: Option<RatioEstimate>,
    pub soundness_violations: Option<usize>,
    pub exit: String,
    /// Wall-clock (phase, seconds); console output only, never serialized,
    /// so identical config + seed gives byte-identical reports.
    #[serde(skip, default)]
    pub timings: Vec<(String, f64)>,
}

impl RunReport {
    pub fn from_outcome(
        command: &str,
        outcome: &BranchOutcome<f64>,
        bx: &InputBox<f64>,
        out_set: &OutputSet<f64>,
        config: &TightenConfig,
        branches: usize,
        seed: u64,
        samples: usize,
    ) -> Self {
        let leaves = outcome
            .leaves
            .iter()
            .zip(outcome.reports.iter())
            .map(|(node, report)| leaf_json(node, report))
            .collect();
        Self {
            command: command.to_string(),
            seed,
            samples,
            branches,
            config: config.clone(),
            box_lo: bx.lo.to_vec(),
            box_hi: bx.hi.to_vec(),
            out_set: OutSetJson::from(out_set),
            leaves,
            root_sweeps: outcome.root_report.as_ref().map(|r| r.sweeps),
            ratio: None,
            soundness_violations: None,
            exit: String::new(),
            timings: Vec::new(),
        }
    }

    /// Rebuild the certified union from the serialized leaves.
    pub fn union(&self) -> PolytopeUnion<f64> {
        let mut leaves = Vec::new();
        for leaf in &self.leaves {
            if leaf.status != "done" {
                continue;
            }
            let bx = InputBox::new(
                Array1::from(leaf.lo.clone()),
                Array1::from(leaf.hi.clone()),
            )
            .expect("leaf box");
            let hs = leaf
                .halfspaces
                .iter()
                .map(|row| {
                    let (c, lb) = row.split_at(row.len() - 1);
                    HalfSpace::new(Array1::from(c.to_vec()), lb[0]).expect("half-space")
                })
                .collect();
            leaves.push((bx, hs));
        }
        PolytopeUnion { leaves }
    }

    pub fn all_pruned(&self) -> bool {
        self.leaves.iter().all(|l| l.status == "pruned-infeasible")
    }

    pub fn any_unconverged(&self) -> bool {
        self.leaves
            .iter()
            .any(|l| l.status == "done" && !l.converged)
    }

    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text)
    }

    pub fn print_summary(&self) {
        println!("command: {}", self.command);
        println!(
            "box: {:?} .. {:?}  branches: {}",
            self.box_lo, self.box_hi, self.branches
        );
        for (i, leaf) in self.leaves.iter().enumerate() {
            match leaf.status.as_str() {
                "done" => println!(
                    "  leaf {i}: done in {} sweeps (converged: {}), {} half-spaces",
                    leaf.sweeps,
                    leaf.converged,
                    leaf.halfspaces.len()
                ),
                s => println!("  leaf {i}: {s}"),
            }
        }
        match &self.ratio {
            Some(RatioEstimate::Ratio {
                ratio,
                contained,
                feasible,
                samples,
                ..
            }) => println!(
                "ratio: {ratio:.4} ({contained} contained / {feasible} feasible of {samples})"
            ),
            Some(RatioEstimate::EmpiricallyEmptyPreimage { samples, .. }) => {
                println!("preimage empirically empty over {samples} samples")
            }
            None => {}
        }
        if let Some(v) = self.soundness_violations {
            println!("soundness violations: {v}");
        }
        for (phase, secs) in &self.timings {
            println!("time: {phase}: {secs:.2}s");
        }
        println!("exit: {}", self.exit);
    }
}

fn leaf_json(node: &invprop::branch::BranchNode<f64>, report: &Option<TightenReport<f64>>) -> LeafJson {
    LeafJson {
        lo: node.bx.lo.to_vec(),
        hi: node.bx.hi.to_vec(),
        status: match node.status {
            NodeStatus::Pending => "pending".into(),
            NodeStatus::Done => "done".into(),
            NodeStatus::PrunedInfeasible => "pruned-infeasible".into(),
        },
        depth: node.depth,
        halfspaces: node
            .halfspaces
            .as_ref()
            .map(|hs| {
                hs.iter()
                    .map(|h| {
                        let mut row = h.c.to_vec();
                        row.push(h.lb);
                        row
                    })
                    .collect()
            })
            .unwrap_or_default(),
        sweeps: report.as_ref().map(|r| r.sweeps).unwrap_or(0),
        converged: report.as_ref().map(|r| r.converged).unwrap_or(false),
        width_sums: report
            .as_ref()
            .map(|r| r.width_sums.clone())
            .unwrap_or_default(),
        halfspace_lb_history: report
            .as_ref()
            .map(|r| r.halfspace_lb_history.clone())
            .unwrap_or_default(),
    }
}

/// Independent re-check of an emitted report: sample the preimage with the
/// report's own seed and verify every feasible sample lies in the certified
/// union. Returns the number of violations (0 = pass).
pub fn recheck(report: &RunReport, net: &Network<f64>) -> usize {
    let bx = InputBox::new(
        Array1::from(report.box_lo.clone()),
        Array1::from(report.box_hi.clone()),
    )
    .expect("report box");
    let out_set = report.out_set.to_output_set();
    let union = report.union();
    let samples = sample_feasible(net, &bx, &out_set, report.samples, report.seed);
    samples.iter().filter(|x| !union.contains(x)).count()
}
