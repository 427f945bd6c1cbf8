//! The `ipcsim` command-line front end.
//!
//! Exit codes: 0 on success, 1 when a run fails or an expectation does
//! not hold, 2 on usage errors (bad flags, unknown scenario, bad config).

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use crate::auth::{AuthProperty, CellProvenance, Mechanism, PropertyMatrix};
use crate::device::PlatformPolicy;
use crate::registry::{ClockMode, PartnerRegistry};
use crate::registry_http::spawn_registry_server;
use crate::report::{render_markdown, success_rate, ScenarioReport};
use crate::scenario::{
    run_scenario, ScenarioConfig, ScenarioError, ScenarioRequest, SCENARIOS, SECURE_SDK_PKG,
    VULNERABLE_SDK_PKG,
};

/// Expected mechanism/property grid. Regenerate with `matrix --emit`
/// when a probe legitimately changes.
const MATRIX_FIXTURE: &str = include_str!("../fixtures/table1.json");

#[derive(Parser)]
#[command(name = "ipcsim", version, about = "Deterministic simulator of inter-app IPC authentication")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Md,
}

#[derive(Subcommand)]
enum Command {
    /// List every scenario with a one-line description.
    List,
    /// Run one scenario and print (or write) its report.
    Run {
        /// Scenario name, as printed by `list`.
        scenario: String,
        /// Trial count (each scenario has its own default).
        #[arg(long)]
        trials: Option<u32>,
        /// Seed for the deterministic random stream (default 42).
        #[arg(long)]
        seed: Option<u64>,
        /// Platform policy: android14 or android15.
        #[arg(long, value_parser = parse_platform)]
        platform: Option<PlatformPolicy>,
        /// Report format.
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Write the report to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON file with overrides; explicit flags beat the file.
        /// Schema: {"trials": N, "seed": N, "platform": "...", "extra_apps": [...]}.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Probe every mechanism and compare the observed grid to the fixture.
    Matrix {
        /// Compare against this file instead of the built-in fixture.
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// Print the computed grid as JSON and skip the comparison.
        #[arg(long)]
        emit: bool,
    },
    /// Run the token-replay attack against both provider builds and
    /// check the headline rates (100% vs 0%).
    Table3 {
        /// Attack attempts per build.
        #[arg(long, default_value_t = 50)]
        trials: u32,
        /// Seed for the deterministic random stream.
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Serve the partner registry over HTTP until the process is killed.
    ServeRegistry {
        /// Port to bind on 127.0.0.1 (0 picks a free one).
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Registry database file; loaded if present, written after every change.
        #[arg(long)]
        db: PathBuf,
        /// File holding the shared provider credential.
        #[arg(long)]
        provider_credential_file: PathBuf,
    },
}

fn parse_platform(s: &str) -> Result<PlatformPolicy, String> {
    PlatformPolicy::parse(s).ok_or_else(|| format!("expected android14 or android15, got {s:?}"))
}

pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = err.print();
            return code;
        }
    };
    match cli.command {
        Command::List => cmd_list(),
        Command::Run { scenario, trials, seed, platform, format, out, config } => {
            cmd_run(&scenario, trials, seed, platform, format, out, config)
        }
        Command::Matrix { fixture, emit } => cmd_matrix(fixture, emit),
        Command::Table3 { trials, seed } => cmd_table3(trials, seed),
        Command::ServeRegistry { port, db, provider_credential_file } => {
            cmd_serve_registry(port, &db, &provider_credential_file)
        }
    }
}

fn cmd_list() -> i32 {
    for (name, blurb) in SCENARIOS {
        println!("{name:<22} {blurb}");
    }
    0
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    scenario: &str,
    trials: Option<u32>,
    seed: Option<u64>,
    platform: Option<PlatformPolicy>,
    format: Format,
    out: Option<PathBuf>,
    config: Option<PathBuf>,
) -> i32 {
    let mut request = ScenarioRequest::new(scenario);
    if let Some(path) = config {
        let text = match fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) => {
                eprintln!("cannot read config {}: {e}", path.display());
                return 2;
            }
        };
        match ScenarioConfig::from_json(&text) {
            Ok(parsed) => request = request.apply_config(&parsed),
            Err(e) => {
                eprintln!("malformed config {}: {e}", path.display());
                return 2;
            }
        }
    }
    if let Some(t) = trials {
        request.trials = Some(t);
    }
    if let Some(s) = seed {
        request.seed = s;
    }
    if let Some(p) = platform {
        request.platform = Some(p);
    }

    let report = match run_scenario(&request) {
        Ok(report) => report,
        Err(e @ ScenarioError::UnknownScenario(_)) => {
            eprintln!("{e}");
            return 2;
        }
        Err(e) => {
            eprintln!("{scenario} failed: {e}");
            return 1;
        }
    };
    let rendered = match format {
        Format::Json => report.to_json(),
        Format::Md => render_markdown(&report),
    };
    match out {
        Some(path) => {
            if let Err(e) = fs::write(&path, rendered) {
                eprintln!("cannot write {}: {e}", path.display());
                return 1;
            }
            println!("wrote {}", path.display());
        }
        None => print!("{rendered}"),
    }
    0
}

fn computed_matrix() -> Result<PropertyMatrix, ScenarioError> {
    let request = ScenarioRequest::new("mechanism_matrix");
    let report = run_scenario(&request)?;
    Ok(report.matrix.expect("matrix scenario always carries the grid"))
}

fn cmd_matrix(fixture: Option<PathBuf>, emit: bool) -> i32 {
    let computed = match computed_matrix() {
        Ok(matrix) => matrix,
        Err(e) => {
            eprintln!("mechanism probes failed: {e}");
            return 1;
        }
    };
    if emit {
        print!("{}", computed.to_json());
        return 0;
    }
    let fixture_text = match &fixture {
        Some(path) => match fs::read_to_string(path) {
            Ok(text) => text,
            Err(e) => {
                eprintln!("cannot read fixture {}: {e}", path.display());
                return 2;
            }
        },
        None => MATRIX_FIXTURE.to_string(),
    };
    let expected = match PropertyMatrix::from_json(&fixture_text) {
        Ok(matrix) => matrix,
        Err(e) => {
            eprintln!("malformed fixture: {e}");
            return 1;
        }
    };
    if computed == expected {
        let scenario_backed = Mechanism::ALL
            .iter()
            .flat_map(|&m| AuthProperty::ALL.iter().map(move |&p| (m, p)))
            .filter(|&(m, p)| {
                computed.cell(m, p).is_some_and(|c| c.provenance == CellProvenance::Scenario)
            })
            .count();
        println!(
            "matrix matches fixture: {} mechanisms x {} properties, {scenario_backed} cells scenario-backed",
            Mechanism::ALL.len(),
            AuthProperty::ALL.len(),
        );
        0
    } else {
        for m in Mechanism::ALL {
            for p in AuthProperty::ALL {
                let got = computed.cell(m, p);
                let want = expected.cell(m, p);
                if got != want {
                    println!(
                        "{} / {}: computed {:?}, fixture {:?}",
                        m.display_name(),
                        p.display_name(),
                        got,
                        want
                    );
                }
            }
        }
        eprintln!("matrix does not match fixture");
        1
    }
}

fn cmd_table3(trials: u32, seed: u64) -> i32 {
    let run_build = |name: &str| -> Result<ScenarioReport, ScenarioError> {
        let mut request = ScenarioRequest::new(name);
        request.trials = Some(trials);
        request.seed = seed;
        run_scenario(&request)
    };
    let vulnerable = match run_build("table3_vulnerable") {
        Ok(report) => report,
        Err(e) => {
            eprintln!("table3_vulnerable failed: {e}");
            return 1;
        }
    };
    let secure = match run_build("table3_secure") {
        Ok(report) => report,
        Err(e) => {
            eprintln!("table3_secure failed: {e}");
            return 1;
        }
    };

    let row = |package: &str, auth: &str, report: &ScenarioReport| {
        let effective = if report.successes == 0 { "\u{2713}" } else { "\u{2717}" };
        println!(
            "| {package} ({auth}) | {}/{} ({}) | {effective} |",
            report.successes,
            report.trials,
            success_rate(report.successes, report.trials),
        );
    };
    println!("| SDK implementation | Attack success | Defense effective |");
    println!("|---|---|---|");
    row(VULNERABLE_SDK_PKG, "token-creator auth", &vulnerable);
    row(SECURE_SDK_PKG, "three-layer auth", &secure);

    let as_expected = trials > 0 && vulnerable.successes == trials && secure.successes == 0;
    println!();
    if as_expected {
        println!("attack rates as expected: 100% against the creator-trusting build, 0% against the layered one");
        0
    } else {
        println!(
            "UNEXPECTED attack rates: {}/{trials} vulnerable, {}/{trials} secure",
            vulnerable.successes, secure.successes
        );
        1
    }
}

fn cmd_serve_registry(port: u16, db: &PathBuf, credential_file: &PathBuf) -> i32 {
    let credential = match fs::read_to_string(credential_file) {
        Ok(text) => text.trim_end().to_string(),
        Err(e) => {
            eprintln!("cannot read credential file {}: {e}", credential_file.display());
            return 1;
        }
    };
    if credential.is_empty() {
        eprintln!("credential file {} is empty", credential_file.display());
        return 1;
    }
    let registry = if db.exists() {
        match PartnerRegistry::load(db, &credential, ClockMode::WallClockMs) {
            Ok(registry) => registry,
            Err(e) => {
                eprintln!("cannot load registry db {}: {e}", db.display());
                return 1;
            }
        }
    } else {
        PartnerRegistry::with_clock(&credential, ClockMode::WallClockMs)
    };
    let handle = match spawn_registry_server(
        &format!("127.0.0.1:{port}"),
        registry,
        credential,
        Some(db.clone()),
    ) {
        Ok(handle) => handle,
        Err(e) => {
            eprintln!("cannot start registry server: {e}");
            return 1;
        }
    };
    println!("registry listening on http://{}", handle.addr());
    use std::io::Write as _;
    let _ = std::io::stdout().flush();
    loop {
        // Runs until killed; the handle keeps the accept loop alive.
        std::thread::park();
    }
}
