use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use remat_cli::curves::{self, CurveRequest, Figure, DEFAULT_BETAS};
use remat_cli::{check_cap, CliError, Result};
use remat_core::executor::{count_execution, trace_execution, Event};
use remat_core::hetero::{solve_hetero_with, ChainSpec, DEFAULT_MAX_LAYERS};
use remat_core::{solve, Algorithm, CostModel, MemoryBudget, PolicyTable, SolveRequest};

#[derive(Parser)]
#[command(
    name = "remat",
    version,
    about = "Optimal memory-budgeted checkpointing schedules for backpropagation through time"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Alg {
    Hsm,
    Ism,
    Msm,
}

#[derive(Subcommand)]
enum Command {
    /// Build a policy table and write it as JSON.
    Solve {
        #[arg(long, value_enum)]
        alg: Alg,
        /// Longest sequence the table covers.
        #[arg(long)]
        t: usize,
        /// Largest budget the table covers, in the algorithm's memory units.
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 5)]
        alpha: u32,
        #[arg(long, default_value_t = 4)]
        beta: u32,
        /// Charge beta for internal states pushed right after their entry state.
        #[arg(long)]
        dedup: bool,
        #[arg(long, default_value_t = CostModel::DEFAULT_BACKWARD_RATIO)]
        backward_ratio: f64,
        /// Output file; standard output when omitted.
        #[arg(short = 'o', long)]
        output: Option<PathBuf>,
    },
    /// Dry-run a policy and report operation counts.
    Simulate {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        t: usize,
        #[arg(long)]
        m: usize,
        /// Defaults to the policy's own ratio, or 2.
        #[arg(long)]
        backward_ratio: Option<f64>,
        /// Write the event log as CSV.
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Emit CSV data for one of the cost figures.
    Curves {
        #[arg(long, value_enum)]
        figure: Figure,
        /// Largest sequence length.
        #[arg(long, default_value_t = 1000)]
        t: usize,
        #[arg(long, default_value_t = 1)]
        t_min: usize,
        #[arg(long, default_value_t = 1)]
        t_step: usize,
        /// Comma-separated budgets.
        #[arg(long, value_delimiter = ',')]
        m: Option<Vec<usize>>,
        #[arg(long, default_value_t = 5)]
        alpha: u32,
        #[arg(long, default_value_t = 4)]
        beta: u32,
        /// Comma-separated beta values for the Chen figures.
        #[arg(long = "betas", value_delimiter = ',')]
        betas: Option<Vec<u32>>,
        #[arg(long)]
        dedup: bool,
        #[arg(long, default_value_t = CostModel::DEFAULT_BACKWARD_RATIO)]
        backward_ratio: f64,
        #[arg(short = 'o', long)]
        output: Option<PathBuf>,
    },
    /// Compare the mixed strategy with Chen's sqrt(t) scheme.
    CompareChen {
        /// Comma-separated sequence lengths.
        #[arg(long, value_delimiter = ',', required = true)]
        t: Vec<usize>,
        #[arg(long, default_value_t = 4)]
        beta: u32,
        #[arg(long, default_value_t = CostModel::DEFAULT_BACKWARD_RATIO)]
        backward_ratio: f64,
        #[arg(short = 'o', long)]
        output: Option<PathBuf>,
    },
    /// Solve a heterogeneous chain read from a `u,s,p` CSV file.
    Hetero {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        m: usize,
        /// Allow chains longer than the default layer cap.
        #[arg(long)]
        force: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn model(alpha: u32, beta: u32, ratio: f64) -> Result<CostModel> {
    CostModel::with_backward_ratio(alpha, beta, ratio).map_err(|e| CliError::Usage(e.to_string()))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Solve {
            alg,
            t,
            m,
            alpha,
            beta,
            dedup,
            backward_ratio,
            output: path,
        } => {
            if t == 0 || m == 0 {
                return Err(CliError::Usage("--t and --m must be at least 1".into()));
            }
            check_cap(t)?;
            let algorithm = match alg {
                Alg::Hsm => Algorithm::Hsm,
                Alg::Ism => Algorithm::Ism,
                Alg::Msm if dedup => Algorithm::MsmDedup,
                Alg::Msm => Algorithm::Msm,
            };
            let mut req = SolveRequest::new(algorithm, t, m);
            if algorithm.is_mixed() {
                req = req.with_model(model(alpha, beta, backward_ratio)?);
            }
            let policy = solve(&req)?;
            let summary = format!(
                "{} t_max={t} m_max={m} cost={} forwards_per_step={:.6}",
                algorithm,
                policy.cost(t, m),
                policy.cost(t, m).get() as f64 / t as f64
            );
            match &path {
                Some(p) => {
                    std::fs::write(p, policy.serialize())?;
                    println!("{summary}");
                }
                None => {
                    let mut out = io::stdout().lock();
                    out.write_all(&policy.serialize())?;
                    writeln!(out)?;
                    eprintln!("{summary}");
                }
            }
            Ok(())
        }
        Command::Simulate {
            policy,
            t,
            m,
            backward_ratio,
            events,
        } => {
            let table = PolicyTable::deserialize(&std::fs::read(&policy)?)?;
            let budget = MemoryBudget::new(m).map_err(|e| CliError::Usage(e.to_string()))?;
            let trace = if events.is_some() {
                trace_execution(&table, t, budget)?
            } else {
                count_execution(&table, t, budget)?
            };
            let ratio = backward_ratio
                .or(table.cost_model().map(|c| c.backward_ratio))
                .unwrap_or(CostModel::DEFAULT_BACKWARD_RATIO);
            println!(
                "algorithm={} t={t} m={m} forwards={} backwards={} peak_memory={} simulated_time={:.6}",
                table.algorithm(),
                trace.forward_ops,
                trace.backward_ops,
                trace.peak_memory_units,
                trace.simulated_time(ratio)
            );
            if let Some(p) = events {
                let mut w = csv::Writer::from_writer(BufWriter::new(File::create(p)?));
                w.write_record(["index", "event", "pos", "dedup"])?;
                for (i, e) in trace.events.iter().enumerate() {
                    let (name, pos, dedup) = match *e {
                        Event::Forward(p) => ("forward", p, false),
                        Event::Backward(p) => ("backward", p, false),
                        Event::PushHidden(p) => ("push_hidden", p, false),
                        Event::PushInternal(p, d) => ("push_internal", p, d),
                        Event::Pop(p) => ("pop", p, false),
                    };
                    w.write_record([
                        i.to_string(),
                        name.to_owned(),
                        pos.to_string(),
                        dedup.to_string(),
                    ])?;
                }
                w.flush()?;
            }
            Ok(())
        }
        Command::Curves {
            figure,
            t,
            t_min,
            t_step,
            m,
            alpha,
            beta,
            betas,
            dedup,
            backward_ratio,
            output: path,
        } => {
            let req = CurveRequest {
                figure,
                ts: curves::t_range(t_min, t, t_step)?,
                memories: m,
                betas: betas.unwrap_or_else(|| DEFAULT_BETAS.to_vec()),
                model: model(alpha, beta, backward_ratio)?,
                dedup,
            };
            let rows = curves::curves(&req)?;
            curves::write_csv(&rows, output(path.as_ref())?)
        }
        Command::CompareChen {
            t,
            beta,
            backward_ratio,
            output: path,
        } => {
            let rows = curves::compare_chen(&t, beta, backward_ratio)?;
            curves::write_csv(&rows, output(path.as_ref())?)
        }
        Command::Hetero { chain, m, force } => {
            let spec = ChainSpec::from_path(&chain)?;
            let cap = if force {
                usize::MAX
            } else {
                DEFAULT_MAX_LAYERS
            };
            let policy = solve_hetero_with(&spec, m, cap)?;
            let n = spec.len();
            let mut out = io::stdout().lock();
            writeln!(out, "m,cost,first_split")?;
            for mm in 1..=m {
                writeln!(
                    out,
                    "{mm},{},{}",
                    policy.cost(n, mm as i64, 0),
                    policy.split(n, mm, 0)
                )?;
            }
            Ok(())
        }
    }
}
