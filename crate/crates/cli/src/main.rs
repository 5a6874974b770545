use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use qpbc::bench::{brute_force_optimum, generate_instance, run_benchmark, GenKind, GenSpec, SuiteEntry};
use qpbc::bnc::{solve_bnc, BnCConfig};
use qpbc::bounds::{solve_bound, solve_relaxation, BoundVariant};
use qpbc::model::QpInstance;
use qpbc::QpError;

#[derive(Parser)]
#[command(name = "qpbc", version, about = "Semidefinite bounds and branch and cut for quadratic programs over polytopes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lower bound from the affine-multiplier program.
    Bound {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "L")]
        variant: BoundVariant,
        /// Upper bound added as the constraint `l <= cap`.
        #[arg(long)]
        cap: Option<f64>,
    },
    /// Dual semidefinite relaxation.
    Relax {
        #[arg(long)]
        input: PathBuf,
        /// Also impose the lifted constraints `Ax <= b`.
        #[arg(long)]
        with_linear: bool,
    },
    /// Global solve of a concave instance by branch and cut.
    Solve {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        /// Write the node event log as JSON lines.
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Exact optimum by enumeration.
    Oracle {
        #[arg(long)]
        input: PathBuf,
    },
    /// Generate a random instance.
    Gen {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print every bound that applies next to the relaxation and the oracle.
    Compare {
        #[arg(long)]
        input: PathBuf,
    },
    /// Solve a suite of instance files or generated seeds and write a report.
    Bench {
        /// Instance files; when empty, `--count` instances are generated.
        #[arg(long, num_args = 0..)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        spec: SpecArgs,
        /// First generator seed.
        #[arg(long, default_value_t = 1)]
        gen_seed: u64,
        /// Number of generated instances, seeds `gen_seed..gen_seed+count`.
        #[arg(long, default_value_t = 0)]
        count: u64,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    #[arg(long, default_value_t = 100.0)]
    time_limit: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    max_nodes: Option<usize>,
    #[arg(long)]
    parallel: bool,
    #[arg(long, default_value = "L")]
    variant: BoundVariant,
}

impl SolverArgs {
    fn config(&self) -> BnCConfig {
        let mut cfg = BnCConfig {
            eps: self.eps,
            time_limit_sec: self.time_limit,
            seed: self.seed,
            bound_variant: self.variant,
            parallel: self.parallel,
            ..Default::default()
        };
        if let Some(m) = self.max_nodes {
            cfg.max_nodes = m;
        }
        cfg
    }
}

#[derive(Args)]
struct SpecArgs {
    #[arg(long, default_value = "dense_concave")]
    kind: GenKind,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    equalities: Option<usize>,
    /// Box `[lo, hi]^n` for norm_max.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    r#box: Option<Vec<f64>>,
}

impl SpecArgs {
    fn spec(&self, seed: u64) -> GenSpec {
        let mut s = GenSpec::new(self.kind, self.n, seed);
        s.params.rows = self.rows;
        s.params.equalities = self.equalities;
        s.params.box_range = self.r#box.as_ref().map(|v| (v[0], v[1]));
        s
    }
}

fn exit_code(e: &QpError) -> u8 {
    match e {
        QpError::Numerical(_) | QpError::SingularBasis => 3,
        _ => 2,
    }
}

fn vec_json(v: &nalgebra::DVector<f64>) -> Value {
    json!(v.as_slice())
}

fn write_out(path: Option<&PathBuf>, text: &str) -> qpbc::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| QpError::Io(format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cmd: Command) -> qpbc::Result<()> {
    match cmd {
        Command::Bound { input, variant, cap } => {
            let inst = QpInstance::load(&input)?;
            let r = solve_bound(&inst, variant, cap)?;
            let out = json!({
                "variant": r.variant.to_string(),
                "value": r.value,
                "status": format!("{:?}", r.status),
                "iterations": r.iterations,
                "reduced": r.reduced,
            });
            println!("{}", serde_json::to_string_pretty(&out).unwrap());
        }
        Command::Relax { input, with_linear } => {
            let inst = QpInstance::load(&input)?;
            let r = solve_relaxation(&inst, with_linear)?;
            let out = json!({
                "value": r.value,
                "x": vec_json(&r.x),
                "status": format!("{:?}", r.status),
                "iterations": r.iterations,
            });
            println!("{}", serde_json::to_string_pretty(&out).unwrap());
        }
        Command::Solve { input, solver, events } => {
            let inst = QpInstance::load(&input)?;
            let r = solve_bnc(&inst, &solver.config())?;
            if let Some(path) = events {
                let lines: Vec<String> = r.events.iter().map(|e| serde_json::to_string(e).unwrap()).collect();
                write_out(Some(&path), &lines.join("\n"))?;
            }
            let out = json!({
                "status": r.status.to_string(),
                "lower": r.lower,
                "upper": r.upper,
                "incumbent": vec_json(&r.incumbent),
                "nodes": r.nodes_processed,
                "cuts": r.cuts_added,
                "time_sec": r.wall_time,
            });
            println!("{}", serde_json::to_string_pretty(&out).unwrap());
        }
        Command::Oracle { input } => {
            let inst = QpInstance::load(&input)?;
            let o = brute_force_optimum(&inst)?;
            let out = json!({
                "value": o.value,
                "argmin": vec_json(&o.argmin),
                "method": o.method,
            });
            println!("{}", serde_json::to_string_pretty(&out).unwrap());
        }
        Command::Gen { spec, seed, out } => {
            let inst = generate_instance(&spec.spec(seed))?;
            write_out(out.as_ref(), &inst.to_json_string())?;
        }
        Command::Compare { input } => {
            let inst = QpInstance::load(&input)?;
            let show = |name: &str, r: qpbc::Result<f64>| match r {
                Ok(v) => println!("{name:<8}{v:.10}"),
                Err(e) => println!("{name:<8}n/a ({e})"),
            };
            show("L", solve_bound(&inst, BoundVariant::L, None).map(|r| r.value));
            show("L1", solve_bound(&inst, BoundVariant::L1, None).map(|r| r.value));
            match solve_bound(&inst, BoundVariant::Box, None) {
                Err(QpError::InvalidInput(_)) => {}
                r => show("BOX", r.map(|r| r.value)),
            }
            show("DD0", solve_relaxation(&inst, false).map(|r| r.value));
            show("oracle", brute_force_optimum(&inst).map(|o| o.value));
        }
        Command::Bench {
            inputs,
            spec,
            gen_seed,
            count,
            solver,
            csv,
            json,
        } => {
            let suite: Vec<SuiteEntry> = if inputs.is_empty() {
                (0..count).map(|k| SuiteEntry::Spec(spec.spec(gen_seed + k))).collect()
            } else {
                inputs.into_iter().map(SuiteEntry::File).collect()
            };
            let report = run_benchmark(&suite, &solver.config());
            let text = report.to_csv()?;
            if let Some(p) = json {
                write_out(Some(&p), &report.to_json())?;
            }
            write_out(csv.as_ref(), text.trim_end())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
