use anyhow::{Context, Result};
use bitgnn_cli::args::{Command, ConvertArgs, GenGraphArgs, PartitionArgs};
use bitgnn_cli::{emit_csv, run, Cli};
use bitgnn_core::graph::{export_partition, load_graph, partition, save_graph, SyntheticGraph};
use clap::Parser;

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => {
            let report = run(&args)?;
            println!("{report}");
            if let Some(path) = &args.csv {
                emit_csv(std::slice::from_ref(&report), path)?;
                println!("wrote {}", path.display());
            }
        }
        Command::GenGraph(a) => gen_graph(&a)?,
        Command::Convert(a) => convert(&a)?,
        Command::Partition(a) => write_partition(&a)?,
    }
    Ok(())
}

fn gen_graph(a: &GenGraphArgs) -> Result<()> {
    let g = SyntheticGraph {
        nodes: a.nodes,
        clusters: a.clusters,
        intra_degree: a.intra_degree,
        inter_degree: a.inter_degree,
        feature_dim: 0,
    }
    .generate(a.seed)?;
    save_graph(&g, &a.out, a.format.into())
        .with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "{} nodes, {} edges -> {}",
        g.num_nodes(),
        g.num_edges(),
        a.out.display()
    );
    Ok(())
}

fn convert(a: &ConvertArgs) -> Result<()> {
    let g = load_graph(&a.input, a.from.into())
        .with_context(|| format!("loading {}", a.input.display()))?;
    save_graph(&g, &a.output, a.to.into())
        .with_context(|| format!("writing {}", a.output.display()))?;
    Ok(())
}

fn write_partition(a: &PartitionArgs) -> Result<()> {
    let g = load_graph(&a.graph, a.format.into())
        .with_context(|| format!("loading {}", a.graph.display()))?;
    let assign = partition(&g, a.num_parts, a.seed)?;
    export_partition(&a.out, &assign)?;
    println!("{} parts, sizes {:?}", assign.num_parts(), assign.sizes());
    Ok(())
}
