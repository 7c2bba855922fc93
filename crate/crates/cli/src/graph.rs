//! `graph dump`: topology, mixing matrix and spectral report as JSON.

use clap::Args;
use gossipbench_core::{
    build_topology, mixing_matrix, spectral_report, MixingMatrix64, TopologyKind,
};

use crate::CliError;

#[derive(Args, Debug)]
pub struct DumpArgs {
    /// ring | torus | ring_lattice | exponential | complete
    #[arg(long)]
    kind: String,
    #[arg(long)]
    n: usize,
    /// Coordination number (ring lattice only).
    #[arg(long)]
    k: Option<usize>,
    /// Torus grid as `RxC`, e.g. 3x4.
    #[arg(long)]
    torus_dims: Option<String>,
}

fn parse_dims(text: &str) -> Result<(usize, usize), CliError> {
    let parts: Vec<&str> = text.split(['x', ',']).collect();
    if parts.len() == 2 {
        if let (Ok(r), Ok(c)) = (parts[0].parse(), parts[1].parse()) {
            return Ok((r, c));
        }
    }
    Err(CliError::Config(format!(
        "cannot parse torus dims `{text}`; expected RxC"
    )))
}

pub fn execute(args: DumpArgs) -> Result<(), CliError> {
    let kind: TopologyKind = args
        .kind
        .parse()
        .map_err(|e: gossipbench_core::TopologyError| CliError::Config(e.to_string()))?;
    let dims = args.torus_dims.as_deref().map(parse_dims).transpose()?;
    let topology =
        build_topology(kind, args.n, args.k, dims).map_err(|e| CliError::Config(e.to_string()))?;
    let mix: MixingMatrix64 = mixing_matrix(&topology);
    let spectral = spectral_report(&mix).map_err(|e| CliError::Config(e.to_string()))?;

    let rows: Vec<Vec<f64>> = (0..mix.n).map(|i| mix.row(i).to_vec()).collect();
    let doc = serde_json::json!({
        "topology": topology,
        "edge_count": topology.edge_count(),
        "mixing_matrix": { "n": mix.n, "rows": rows },
        "spectral": spectral,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("serializable");
    text.push('\n');
    crate::print_stdout(&text)
}
