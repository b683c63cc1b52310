use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use jetvar::{parse_str, render, ParseError, ProblemFile, Session};
use jetvar_core::notation::Style;

#[derive(Parser)]
#[command(name = "jetvar", version, about = "Run derivations on jet-space problem files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Latex,
}

#[derive(Subcommand)]
enum Command {
    /// Run one task or every task of a problem file.
    Run {
        file: PathBuf,
        #[arg(long)]
        task: Option<String>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// Compare the output with a golden file instead of printing it.
        #[arg(long)]
        golden: Option<PathBuf>,
    },
    /// Parse a problem file and build its systems.
    Check { file: PathBuf },
    /// List the tasks of a problem file.
    ListTasks { file: PathBuf },
}

const DOMAIN: u8 = 1;
const PARSE: u8 = 2;

fn load(path: &PathBuf) -> Result<ProblemFile, ExitCode> {
    let src = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        ExitCode::from(DOMAIN)
    })?;
    parse_str(&src).map_err(|e| {
        eprintln!("{}:{e}", path.display());
        ExitCode::from(match e {
            ParseError::Domain { .. } => DOMAIN,
            _ => PARSE,
        })
    })
}

fn run(cli: Cli) -> Result<(), ExitCode> {
    match cli.command {
        Command::Run {
            file,
            task,
            format,
            golden,
        } => {
            let pf = load(&file)?;
            let style = match format {
                Format::Text => Style::Text,
                Format::Latex => Style::Latex,
            };
            let tasks: Vec<_> = match &task {
                Some(t) => vec![pf.task(t).ok_or_else(|| {
                    eprintln!("no task named `{t}`");
                    ExitCode::from(DOMAIN)
                })?],
                None => pf.tasks.iter().collect(),
            };
            let mut session = Session::new(&pf);
            let mut out = String::new();
            for (i, t) in tasks.iter().enumerate() {
                let r = session.run(t).map_err(|e| {
                    eprintln!("task {}: {e}", t.name);
                    ExitCode::from(DOMAIN)
                })?;
                if i > 0 {
                    out.push('\n');
                }
                out.push_str(&render(&r, style));
            }
            match golden {
                Some(g) => {
                    let expected = std::fs::read_to_string(&g).map_err(|e| {
                        eprintln!("{}: {e}", g.display());
                        ExitCode::from(DOMAIN)
                    })?;
                    if expected != out {
                        eprintln!("output differs from {}", g.display());
                        for (n, (a, b)) in expected.lines().zip(out.lines()).enumerate() {
                            if a != b {
                                eprintln!("line {}:\n- {a}\n+ {b}", n + 1);
                                break;
                            }
                        }
                        return Err(ExitCode::from(DOMAIN));
                    }
                    println!("matches {}", g.display());
                }
                None => print!("{out}"),
            }
        }
        Command::Check { file } => {
            let pf = load(&file)?;
            Session::new(&pf).check().map_err(|e| {
                eprintln!("{e}");
                ExitCode::from(DOMAIN)
            })?;
            println!("ok: {} systems, {} coverings, {} tasks", pf.systems.len(), pf.coverings.len(), pf.tasks.len());
        }
        Command::ListTasks { file } => {
            let pf = load(&file)?;
            for t in &pf.tasks {
                println!("{} {}", t.name, t.pipeline.name());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(c) => c,
    }
}
