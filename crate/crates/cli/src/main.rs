mod commands;
mod csv_import;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use output::{Failure, Format};

#[derive(Parser, Debug)]
#[command(
    name = "lakekit",
    version,
    about = "Versioned tables, typed pipelines and transactional runs"
)]
pub struct Cli {
    /// Repository root.
    #[arg(long, global = true, env = "LAKEKIT_REPO", default_value = "./.lakekit")]
    pub repo: PathBuf,

    /// Output mode; `json` prints exactly one document per invocation.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,

    #[command(flatten)]
    pub policy: PolicyFlags,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Copy, Default)]
pub struct PolicyFlags {
    /// Allow creating branches from aborted run branches.
    #[arg(long, global = true)]
    pub allow_branch_from_aborted: bool,
    /// Allow merging aborted run branches.
    #[arg(long, global = true)]
    pub allow_merge_from_aborted: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Create an empty repository with a `main` branch.
    Init,
    /// Write a CSV file with a typed header as a table.
    Import {
        table: String,
        csv: PathBuf,
        #[arg(long, default_value = "main")]
        branch: String,
    },
    #[command(subcommand)]
    Branch(BranchCommand),
    /// Tag a commit.
    Tag {
        name: String,
        #[arg(default_value = "main")]
        target: String,
    },
    /// First-parent history of a ref.
    Log {
        #[arg(default_value = "main")]
        target: String,
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
    /// Table-level difference between two refs.
    Diff { from: String, to: String },
    /// Merge a ref into a branch.
    Merge {
        source: String,
        #[arg(long, default_value = "main")]
        into: String,
    },
    /// Print the rows of a table.
    Query {
        target: String,
        table: String,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Plan-time check of a manifest against the schemas at a ref.
    Check {
        manifest: PathBuf,
        #[arg(long = "ref", default_value = "main")]
        at: String,
    },
    /// Run a manifest transactionally against a branch.
    Run {
        manifest: PathBuf,
        #[arg(long = "ref", default_value = "main")]
        target: String,
        #[command(flatten)]
        run: RunFlags,
    },
    #[command(subcommand)]
    Runs(RunsCommand),
    /// Re-execute a run's archived manifest from its start commit.
    Reproduce {
        run_id: String,
        #[arg(long)]
        branch: String,
    },
    /// Continue an aborted run from its retained branch with a fixed manifest.
    Resume {
        run_id: String,
        manifest: PathBuf,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Column lineage of a node output.
    Lineage {
        manifest: PathBuf,
        node: String,
        column: String,
    },
    #[command(subcommand)]
    Model(ModelCommand),
}

#[derive(Args, Debug, Clone, Default)]
pub struct RunFlags {
    /// Inject a failure before this node executes.
    #[arg(long)]
    pub fail_at: Option<String>,
    /// Re-validate every column, even those the plan proves conformant.
    #[arg(long)]
    pub validate_all: bool,
}

#[derive(Subcommand, Debug)]
pub enum BranchCommand {
    Create {
        name: String,
        #[arg(long, default_value = "main")]
        from: String,
    },
    List,
    Delete {
        name: String,
    },
}

#[derive(Subcommand, Debug)]
pub enum RunsCommand {
    Show { run_id: String },
    List,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct BoundsArgs {
    #[arg(long, default_value_t = 3)]
    pub tables: usize,
    #[arg(long, default_value_t = 3)]
    pub snapshots: usize,
    #[arg(long, default_value_t = 6)]
    pub commits: usize,
    #[arg(long, default_value_t = 4)]
    pub branches: usize,
    #[arg(long, default_value_t = 2)]
    pub runs: usize,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = Guardrail::On)]
    pub guardrail: Guardrail,
    /// Give up above this many states.
    #[arg(long, default_value_t = lakekit::model::DEFAULT_STATE_CAP)]
    pub cap: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Guardrail {
    On,
    Off,
    Open,
}

#[derive(Subcommand, Debug)]
pub enum ModelCommand {
    /// Count the states reachable within the bounds.
    Enumerate {
        #[command(flatten)]
        bounds: BoundsArgs,
    },
    /// Check an invariant; prints a shortest counterexample if there is one.
    Check {
        invariant: String,
        #[command(flatten)]
        bounds: BoundsArgs,
        /// Also write the counterexample script here.
        #[arg(long)]
        script_out: Option<PathBuf>,
    },
    /// Replay a trace script against a fresh repository.
    Replay { script: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 2 } else { 0 });
        }
    };
    let format = cli.format;
    match commands::dispatch(cli) {
        Ok(out) => {
            out.print(format);
            ExitCode::from(out.exit)
        }
        Err(f) => {
            f.print(format);
            ExitCode::from(f.exit)
        }
    }
}

impl From<lakekit::Error> for Failure {
    fn from(e: lakekit::Error) -> Self {
        Failure::from_core(&e)
    }
}
