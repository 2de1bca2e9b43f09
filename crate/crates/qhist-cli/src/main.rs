use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use qhist::family::CompletenessMode;
use qhist::report::{run, selected_checks, Command, RunOptions, VariantFilter};
use qhist::scenario::Scenario;

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum Completeness {
    Exact,
    Physical,
}

/// Runs the checks of a history-state scenario and reports the outcome.
///
/// Exit code 0 means every selected check passed, 1 means at least one
/// failed, and 2 means the invocation or the scenario itself was unusable.
#[derive(Parser)]
#[command(name = "qhist", version)]
struct Cli {
    /// Path to a scenario file, or the name of a bundled scenario
    #[arg(long)]
    scenario: String,

    /// Which checks to run: one check kind, or report-all for everything
    #[arg(long, default_value = "report-all")]
    cmd: String,

    /// Comparison tolerance; a check's own "tol" field overrides it
    #[arg(long, default_value_t = qhist::DEFAULT_TOL)]
    tol: f64,

    /// Output format
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,

    /// Seed for the randomized parts of spectral constructions
    #[arg(long, default_value_t = qhist::DEFAULT_SEED)]
    seed: u64,

    /// Completeness mode for checks that do not pin one
    #[arg(long, value_enum, default_value_t = Completeness::Exact)]
    completeness: Completeness,

    /// Variant tag to select; untagged checks always run
    #[arg(long, default_value = "all")]
    variant: String,
}

const BUNDLED: [(&str, &str); 4] = [
    ("spin3", include_str!("../../../scenarios/spin3.json")),
    (
        "twotime-observables",
        include_str!("../../../scenarios/twotime-observables.json"),
    ),
    ("mach-zehnder", include_str!("../../../scenarios/mach-zehnder.json")),
    ("zfamily", include_str!("../../../scenarios/zfamily.json")),
];

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let Some(command) = Command::parse(&cli.cmd) else {
        let names: Vec<&str> = Command::ALL.iter().map(|c| c.name()).collect();
        return usage_error(&format!(
            "unknown command {:?} (expected one of {})",
            cli.cmd,
            names.join(", ")
        ));
    };
    if !(cli.tol.is_finite() && cli.tol > 0.0) {
        return usage_error("tolerance must be a positive finite number");
    }

    let loaded = if Path::new(&cli.scenario).exists() {
        Scenario::load_path(Path::new(&cli.scenario))
    } else if let Some((_, text)) = BUNDLED.iter().find(|(n, _)| *n == cli.scenario) {
        Scenario::load_str(text)
    } else {
        let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
        return usage_error(&format!(
            "{:?} is neither a file nor a bundled scenario (bundled: {})",
            cli.scenario,
            names.join(", ")
        ));
    };
    let scenario = match loaded {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    let opts = RunOptions {
        tol: cli.tol,
        seed: cli.seed,
        completeness: match cli.completeness {
            Completeness::Exact => CompletenessMode::Exact,
            Completeness::Physical => CompletenessMode::Physical,
        },
        variant: VariantFilter::parse(&cli.variant),
    };

    if selected_checks(&scenario, command, &opts.variant).is_empty() {
        return usage_error(&format!(
            "scenario {:?} has no checks matching command {:?} and variant {:?}",
            scenario.id, cli.cmd, cli.variant
        ));
    }

    let report = run(&scenario, command, &opts);
    match cli.format {
        Format::Json => print!("{}", report.to_json()),
        Format::Text => print!("{}", report.to_text()),
    }
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
