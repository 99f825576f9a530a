//! Library side of the `bcpnn` command; each subcommand is one module.

pub mod args;
pub mod bench;
pub mod data;
pub mod eval;
pub mod manifest;
pub mod rf;
pub mod roofline;
pub mod train;

use args::Command;
use bcpnn_core::Result;

pub fn dispatch(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Train(a) => {
            let o = train::run(a)?;
            println!("model {}", o.model_path.display());
            println!("manifest {}", o.manifest_path.display());
            for key in ["train_accuracy", "test_accuracy"] {
                if let Some(v) = o.manifest.metrics.get(key) {
                    println!("{key} {v}");
                }
            }
        }
        Command::Eval(a) => {
            let (m, path) = eval::run(a)?;
            println!("accuracy {}", m.metrics["accuracy"]);
            println!("manifest {}", path.display());
        }
        Command::Roofline(a) => {
            let (_, path) = roofline::run(a)?;
            println!("roofline {}", path.display());
        }
        Command::ExportRf(a) => {
            for p in rf::run(a)?.1 {
                println!("{}", p.display());
            }
        }
        Command::Bench(a) => {
            let (_, path) = bench::run(a)?;
            println!("bench {}", path.display());
        }
    }
    Ok(())
}
