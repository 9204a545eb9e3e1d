use addnet::cli::{
    cmd_gen_data, cmd_prune, cmd_report, cmd_train, GenDataArgs, PruneArgs, ReportArgs, TrainArgs,
};
use clap::{Parser, Subcommand};

/// Multiplication-free neural networks for gas-sensor time series.
#[derive(Parser)]
#[command(name = "addnet", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic infrared leak/clean datasets.
    GenData(GenDataArgs),
    /// Train a classifier for one of the three tasks.
    Train(TrainArgs),
    /// Sweep sign-retention pruning rates over a trained model.
    Prune(PruneArgs),
    /// Merge metrics files from several runs into one comparison table.
    Report(ReportArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(args) => cmd_gen_data(args).map(|path| {
            println!("wrote {}", path.display());
        }),
        Command::Train(args) => cmd_train(args).map(|out| {
            println!("model: {}", out.model_file.display());
            for f in &out.metrics_files {
                println!("wrote {}", f.display());
            }
            println!("total accuracy: {:.4}", out.report.total_accuracy);
        }),
        Command::Prune(args) => cmd_prune(args).map(|out| {
            for (rate, fraction, acc) in &out.rows {
                println!("rate {rate:.4} (fraction {fraction:.4}): accuracy {acc:.4}");
            }
            if let Some(agreement) = out.quantized_agreement {
                println!("int8/float prediction agreement: {agreement:.4}");
            }
            println!("wrote {}", out.sweep_csv.display());
        }),
        Command::Report(args) => cmd_report(args).map(|path| {
            println!("wrote {}", path.display());
        }),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
