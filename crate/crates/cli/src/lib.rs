//! Command-line drivers for the preimage over-approximation engine:
//! argument types, run functions, and the self-certifying run reports.
//! The `invprop` binary is a thin wrapper over [`run_cli`].

pub mod preimage;
pub mod reach;
pub mod report;
pub mod robust;
pub mod verify;

use clap::{Parser, Subcommand};
use invprop::dual::TightenConfig;
use invprop::geometry::{render_svg, PolytopeUnion, SvgScene};
use invprop::network::InputBox;
use ndarray::Array1;
use std::path::Path;
use std::process::ExitCode;
#[derive(Parser)]
#[command(
    name = "invprop",
    about = "Certified preimage over-approximation for feed-forward ReLU networks"
)]
pub struct Cli {
    /// Worker threads (0 = rayon default). Results are identical for any
    /// thread count.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand)]
pub enum Cmd {
    Preimage(preimage::PreimageArgs),
    Reach(reach::ReachArgs),
    Robust(robust::RobustArgs),
    Verify(verify::VerifyArgs),
}

#[derive(Debug)]
pub enum CmdError {
    Parse(String),
    Io(std::io::Error),
    Run(String),
}

impl CmdError {
    pub(crate) fn parse(e: invprop::Error) -> Self {
        CmdError::Parse(e.to_string())
    }

    pub(crate) fn run(e: invprop::Error) -> Self {
        CmdError::Run(e.to_string())
    }

    pub(crate) fn io(e: std::io::Error) -> Self {
        CmdError::Io(e)
    }
}

pub fn load_config(path: Option<&Path>) -> Result<TightenConfig, CmdError> {
    match path {
        None => Ok(TightenConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(CmdError::io)?;
            serde_json::from_str(&text)
                .map_err(|e| CmdError::Parse(format!("{}: {e}", p.display())))
        }
    }
}

pub fn write_svg_scene(
    path: &Path,
    frame: &InputBox<f64>,
    samples: &[Array1<f64>],
    union: &PolytopeUnion<f64>,
    obstacle: Option<(&Array1<f64>, &Array1<f64>)>,
) -> std::io::Result<()> {
    let scene = SvgScene {
        frame,
        samples,
        union,
        obstacle,
    };
    std::fs::write(path, render_svg(&scene))
}

pub fn run_cli() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .expect("thread pool not yet initialized");
    }
    let result = match &cli.cmd {
        Cmd::Preimage(args) => preimage::run(args),
        Cmd::Reach(args) => reach::run(args),
        Cmd::Robust(args) => robust::run(args),
        Cmd::Verify(args) => verify::run(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(CmdError::Parse(msg)) => {
            eprintln!("parse error: {msg}");
            ExitCode::from(2)
        }
        Err(CmdError::Io(e)) => {
            eprintln!("io error: {e}");
            ExitCode::from(2)
        }
        Err(CmdError::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
