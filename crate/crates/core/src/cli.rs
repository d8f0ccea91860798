//! Command-line front end.
//!
//! Exit status: 0 when every scenario passes, 1 when any scenario fails or
//! cannot be evaluated, 2 for usage, configuration and output errors.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::classic::PosKind;
use crate::equivalence::{
    build_scenario, compare_tensors, regression_grid, run_scenario, EquivalenceReport,
    OperatorSpec, DEFAULT_TOLERANCE,
};
use crate::io::write_kernel;
use crate::kernel::{ev_apply, Family};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "evolution",
    about = "Check classic operators against the unified evolution operator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run equivalence scenarios from a config file, the built-in grid, or flags.
    Verify(VerifyArgs),
    /// Time the classic and unified paths of one scenario.
    Bench(BenchArgs),
    /// Write the generated kernel of one scenario as a tensor file.
    DumpKernel(DumpArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PosArg {
    None,
    Absolute,
    Relative,
}

impl From<PosArg> for PosKind {
    fn from(p: PosArg) -> Self {
        match p {
            PosArg::None => PosKind::None,
            PosArg::Absolute => PosKind::Absolute,
            PosArg::Relative => PosKind::Relative,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SpecArgs {
    /// conv | sa | msa | involution | conv_as_msa | relpos_const | channelwise
    #[arg(long)]
    pub family: Option<Family>,
    #[arg(long, default_value_t = 4)]
    pub h: usize,
    #[arg(long, default_value_t = 4)]
    pub w: usize,
    #[arg(long, default_value_t = 2)]
    pub din: usize,
    #[arg(long)]
    pub dout: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    #[arg(long, default_value_t = 1)]
    pub g: usize,
    #[arg(long, default_value_t = 1)]
    pub r: usize,
    #[arg(long)]
    pub dk: Option<usize>,
    #[arg(long)]
    pub dp: Option<usize>,
    #[arg(long)]
    pub dh: Option<usize>,
    #[arg(long, value_enum, default_value_t = PosArg::None)]
    pub pos: PosArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tol: f64,
}

impl SpecArgs {
    pub fn to_spec(&self) -> Option<OperatorSpec> {
        Some(OperatorSpec {
            family: self.family?,
            h: self.h,
            w: self.w,
            d_in: self.din,
            d_out: self.dout,
            k: self.k,
            m: self.m,
            g: self.g,
            r: self.r,
            d_k: self.dk,
            d_p: self.dp,
            d_h: self.dh,
            pos_kind: self.pos.into(),
            seed: self.seed,
            tolerance: self.tol,
            expected_kernel: None,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// JSON config: {"scenarios": [...]}.
    #[arg(long, conflicts_with_all = ["family", "grid"])]
    pub config: Option<PathBuf>,
    /// Run the built-in desk-scale regression grid.
    #[arg(long)]
    pub grid: bool,
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    pub repeats: u32,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct DumpArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// Config file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenarios: Vec<OperatorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

impl RunConfig {
    /// Loads a config, resolving fixture paths against the config's directory.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| format!("invalid config {}: {e}", path.display()))?;
        if cfg.scenarios.is_empty() {
            return Err(format!("config {} has no scenarios", path.display()));
        }
        let base = path.parent().unwrap_or(Path::new(""));
        for s in &mut cfg.scenarios {
            if let Some(p) = &s.expected_kernel {
                if p.is_relative() {
                    s.expected_kernel = Some(base.join(p));
                }
            }
        }
        Ok(cfg)
    }
}

/// One entry of the report stream: a report, or the reason the scenario
/// could not be evaluated.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioOutcome {
    Report(EquivalenceReport),
    Error { spec: OperatorSpec, error: String },
}

impl ScenarioOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, ScenarioOutcome::Report(r) if r.pass)
    }

    fn text_line(&self) -> String {
        match self {
            ScenarioOutcome::Report(r) => format!(
                "{} {} {} max_abs_diff={:.3e} tol={:e}",
                if r.pass { "PASS" } else { "FAIL" },
                r.spec.family,
                r.spec.describe(),
                r.max_abs_diff,
                r.tolerance
            ),
            ScenarioOutcome::Error { spec, error } => {
                format!("ERROR {} {} {error}", spec.family, spec.describe())
            }
        }
    }
}

/// Runs scenarios on scoped worker threads; results keep input order.
pub fn run_all(specs: &[OperatorSpec]) -> Vec<ScenarioOutcome> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(specs.len().max(1));
    let chunk = specs.len().div_ceil(workers).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = specs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|spec| match run_scenario(spec) {
                            Ok(r) => ScenarioOutcome::Report(r),
                            Err(e) => ScenarioOutcome::Error {
                                spec: spec.clone(),
                                error: e.to_string(),
                            },
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("scenario worker panicked"))
            .collect()
    })
}

fn render(outcomes: &[ScenarioOutcome], format: Format) -> String {
    match format {
        Format::Text => {
            let mut s: String = outcomes.iter().map(|o| o.text_line() + "\n").collect();
            let passed = outcomes.iter().filter(|o| o.passed()).count();
            s += &format!("{passed}/{} scenarios passed\n", outcomes.len());
            s
        }
        Format::Json => serde_json::to_string_pretty(outcomes).expect("reports serialize") + "\n",
    }
}

fn verify(args: &VerifyArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let (specs, cfg_out, cfg_format) = if let Some(path) = &args.config {
        match RunConfig::load(path) {
            Ok(cfg) => (cfg.scenarios, cfg.output_path, cfg.format),
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                return EXIT_USAGE;
            }
        }
    } else if args.grid {
        (regression_grid(), None, None)
    } else if let Some(spec) = args.spec.to_spec() {
        (vec![spec], None, None)
    } else {
        let _ = writeln!(err, "error: verify needs --config, --grid or --family");
        return EXIT_USAGE;
    };

    for spec in &specs {
        if let Err(e) = spec.validate() {
            let _ = writeln!(
                err,
                "error: scenario {} {}: {e}",
                spec.family,
                spec.describe()
            );
            return EXIT_USAGE;
        }
    }

    let outcomes = run_all(&specs);
    let format = args.format.or(cfg_format).unwrap_or_default();
    let text = render(&outcomes, format);
    match args.out.as_ref().or(cfg_out.as_ref()) {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &text) {
                let _ = writeln!(err, "error: cannot write {}: {e}", path.display());
                return EXIT_USAGE;
            }
        }
        None => {
            let _ = out.write_all(text.as_bytes());
        }
    }
    if outcomes.iter().all(ScenarioOutcome::passed) {
        EXIT_OK
    } else {
        EXIT_FAIL
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub min_nanos: u64,
    pub median_nanos: u64,
}

impl Timing {
    fn from_samples(mut samples: Vec<u64>) -> Self {
        samples.sort_unstable();
        Self {
            min_nanos: samples[0],
            median_nanos: samples[samples.len() / 2],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub spec: OperatorSpec,
    pub repeats: u32,
    pub classic: Timing,
    pub evolution: Timing,
    pub kernel_bytes: usize,
    pub max_abs_diff: f64,
    pub pass: bool,
}

fn elapsed(start: Instant) -> u64 {
    u64::try_from(start.elapsed().as_nanos()).unwrap_or(u64::MAX)
}

fn bench(args: &BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some(spec) = args.spec.to_spec() else {
        let _ = writeln!(err, "error: bench needs --family");
        return EXIT_USAGE;
    };
    let data = match build_scenario(&spec) {
        Ok(d) => d,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let run = || -> crate::Result<BenchReport> {
        let mut classic_t = Vec::new();
        let mut evo_t = Vec::new();
        let mut classic = None;
        let mut unified = None;
        let kernel = data.kernel(spec.k)?;
        for _ in 0..args.repeats {
            let start = Instant::now();
            classic = Some(data.classic(spec.k)?);
            classic_t.push(elapsed(start));
            let start = Instant::now();
            unified = Some(ev_apply(&data.x, &kernel)?);
            evo_t.push(elapsed(start));
        }
        let (diff, pass) = compare_tensors(
            classic.as_ref().expect("repeats >= 1"),
            unified.as_ref().expect("repeats >= 1"),
            spec.tolerance,
        )?;
        Ok(BenchReport {
            spec: spec.clone(),
            repeats: args.repeats,
            classic: Timing::from_samples(classic_t),
            evolution: Timing::from_samples(evo_t),
            kernel_bytes: kernel.memory_bytes(),
            max_abs_diff: diff,
            pass,
        })
    };
    let report = match run() {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_FAIL;
        }
    };
    let text = match args.format {
        Format::Json => serde_json::to_string_pretty(&report).expect("bench serializes") + "\n",
        Format::Text => format!(
            "bench {} {} repeats={}\n\
             classic   min_ns={} median_ns={}\n\
             evolution min_ns={} median_ns={}\n\
             kernel_bytes={}\n\
             {} max_abs_diff={:.3e} tol={:e}\n",
            spec.family,
            spec.describe(),
            report.repeats,
            report.classic.min_nanos,
            report.classic.median_nanos,
            report.evolution.min_nanos,
            report.evolution.median_nanos,
            report.kernel_bytes,
            if report.pass { "PASS" } else { "FAIL" },
            report.max_abs_diff,
            spec.tolerance
        ),
    };
    let _ = out.write_all(text.as_bytes());
    if report.pass {
        EXIT_OK
    } else {
        EXIT_FAIL
    }
}

fn dump_kernel(args: &DumpArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some(spec) = args.spec.to_spec() else {
        let _ = writeln!(err, "error: dump-kernel needs --family");
        return EXIT_USAGE;
    };
    let kernel = match build_scenario(&spec).and_then(|d| d.kernel(spec.k)) {
        Ok(k) => k,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    match write_kernel(&args.out, &kernel) {
        Ok(meta) => {
            let _ = writeln!(
                out,
                "wrote {} ({:?}, G={}, N={}) and {}",
                args.out.display(),
                kernel.tensor().shape(),
                kernel.groups(),
                kernel.n(),
                meta.display()
            );
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_USAGE;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    match &cli.command {
        Command::Verify(a) => verify(a, out, err),
        Command::Bench(a) => bench(a, out, err),
        Command::DumpKernel(a) => dump_kernel(a, out, err),
    }
}
