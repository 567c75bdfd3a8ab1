//! `semstream` binary: run the pipeline from a config file, or drive the
//! individual stages through the utility subcommands.

use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use semstream::apps::export_omop;
use semstream::bus::{topics, Bus, ComponentRole, Topic};
use semstream::clock::{Timestamp, VirtualClock};
use semstream::encoder::{decode_payload, encode_record, InputFormat};
use semstream::query::evaluate;
use semstream::simgen::{run_feed, Condition, FeedPacing, ScenarioConfig};
use semstream_cli::{
    load_config, run, store_from_journal, validate, CliError, ClockMode, Overrides,
};

#[derive(Parser)]
#[command(name = "semstream", about = "Streaming semantic enrichment engine for healthcare data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClockArg {
    Virtual,
    Wall,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Pipe,
    Fhirjson,
    Hl7v2,
}

#[derive(Args, Default)]
struct OverrideArgs {
    /// Scenario seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Scenario condition override.
    #[arg(long)]
    scenario: Option<String>,
    /// Scenario duration override, seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Clock mode override.
    #[arg(long, value_enum)]
    clock: Option<ClockArg>,
    /// Store journal path override.
    #[arg(long)]
    journal: Option<PathBuf>,
}

impl OverrideArgs {
    fn into_overrides(self) -> Overrides {
        Overrides {
            seed: self.seed,
            scenario: self.scenario,
            duration: self.duration,
            clock: self.clock.map(|c| match c {
                ClockArg::Virtual => ClockMode::Virtual,
                ClockArg::Wall => ClockMode::Wall,
            }),
            journal: self.journal,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Generate the simulated feed only, printing wire messages.
    Simulate {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "normal")]
        scenario: String,
        #[arg(long, default_value_t = 2)]
        patients: u32,
        #[arg(long, default_value_t = 1.0)]
        rate: f64,
        #[arg(long, default_value_t = 3.0)]
        duration: f64,
    },
    /// Convert one wire message on stdin to Turtle on stdout.
    Convert {
        #[arg(long, value_enum)]
        format: FormatArg,
    },
    /// One-shot query evaluation against a journal file.
    Query {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        journal: PathBuf,
        /// Evaluate only this query (default: all configured queries).
        #[arg(long)]
        name: Option<String>,
    },
    /// Export a journal to OMOP-CDM CSV files.
    ExportOmop {
        #[arg(long)]
        journal: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a journal as one canonical Turtle document.
    Dump {
        #[arg(long)]
        journal: PathBuf,
    },
}

fn cmd_run(config: PathBuf, overrides: Overrides) -> Result<(), CliError> {
    let parsed = load_config(&config)?;
    let pipeline = validate(&parsed, &overrides)?;
    let report = run(&pipeline)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?
    );
    if !report.conserved() {
        return Err(CliError::Runtime(
            "run report failed conservation check".into(),
        ));
    }
    Ok(())
}

fn cmd_simulate(scenario: ScenarioConfig) -> Result<(), CliError> {
    scenario
        .validate()
        .map_err(|e| CliError::config("scenario", e))?;
    let clock = Arc::new(VirtualClock::new(Timestamp(0)));
    let bus = Bus::new(clock.clone());
    let mut subs = Vec::new();
    for name in [
        topics::PATIENT_PIPE,
        topics::ENCOUNTER_FHIRJSON,
        topics::OBSERVATION_HL7V2,
    ] {
        let topic = Topic::new(name).map_err(|e| CliError::Runtime(e.to_string()))?;
        subs.push(
            bus.subscribe(ComponentRole::Output, &topic, move |m| {
                println!("--- {} {}", m.topic.name(), m.message_id);
                println!("{}", String::from_utf8_lossy(&m.payload));
            })
            .map_err(|e| CliError::Runtime(e.to_string()))?,
        );
    }
    run_feed(&scenario, &bus, FeedPacing::Virtual(&clock), |_| {})?;
    bus.shutdown();
    Ok(())
}

fn cmd_convert(format: FormatArg) -> Result<(), CliError> {
    let format = match format {
        FormatArg::Pipe => InputFormat::Pipe,
        FormatArg::Fhirjson => InputFormat::FhirJson,
        FormatArg::Hl7v2 => InputFormat::Hl7v2,
    };
    let mut payload = Vec::new();
    std::io::stdin()
        .read_to_end(&mut payload)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let records =
        decode_payload(format, &payload).map_err(|e| CliError::Runtime(e.to_string()))?;
    for (i, record) in records.iter().enumerate() {
        let graph = encode_record(record, Timestamp(i as i64));
        print!("{}", graph.to_turtle());
        if i + 1 < records.len() {
            println!();
        }
    }
    Ok(())
}

fn cmd_query(config: PathBuf, journal: PathBuf, name: Option<String>) -> Result<(), CliError> {
    let parsed = load_config(&config)?;
    let pipeline = validate(&parsed, &Overrides::default())?;
    let queries: Vec<_> = pipeline
        .queries
        .iter()
        .filter(|q| name.as_ref().map_or(true, |n| &q.name == n))
        .collect();
    if queries.is_empty() {
        return Err(CliError::config(
            "query",
            match name {
                Some(n) => format!("no query named `{n}` in config"),
                None => "config defines no queries".to_string(),
            },
        ));
    }
    let store = store_from_journal(&journal)?;
    let snapshot = store.snapshot();
    for query in queries {
        let results = evaluate(query, &snapshot, None);
        println!("{}", results.to_json());
    }
    Ok(())
}

fn cmd_export_omop(journal: PathBuf, out: PathBuf) -> Result<(), CliError> {
    let store = store_from_journal(&journal)?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::Runtime(e.to_string()))?;
    let report =
        export_omop(&store.snapshot(), &out).map_err(|e| CliError::Runtime(e.to_string()))?;
    eprintln!(
        "PERSON: {} VISIT_OCCURRENCE: {} MEASUREMENT: {} (unmapped codes: {})",
        report.person_rows, report.visit_rows, report.measurement_rows, report.unmapped_codes
    );
    Ok(())
}

fn cmd_dump(journal: PathBuf) -> Result<(), CliError> {
    let store = store_from_journal(&journal)?;
    print!("{}", store.dump_turtle());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, overrides } => cmd_run(config, overrides.into_overrides()),
        Command::Simulate {
            seed,
            scenario,
            patients,
            rate,
            duration,
        } => match Condition::parse(&scenario) {
            Some(condition) => cmd_simulate(ScenarioConfig {
                seed,
                patient_count: patients,
                rate_per_entity: rate,
                condition,
                duration_s: duration,
            }),
            None => Err(CliError::config(
                "scenario",
                format!("unknown condition `{scenario}`"),
            )),
        },
        Command::Convert { format } => cmd_convert(format),
        Command::Query {
            config,
            journal,
            name,
        } => cmd_query(config, journal, name),
        Command::ExportOmop { journal, out } => cmd_export_omop(journal, out),
        Command::Dump { journal } => cmd_dump(journal),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
