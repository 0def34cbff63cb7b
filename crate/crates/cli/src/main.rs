mod args;
mod commands;
mod config;
mod error;
mod manifest;

use std::process::ExitCode;

use clap::{ArgMatches, CommandFactory, FromArgMatches};
use serde::de::DeserializeOwned;
use serde::Serialize;

use args::{Cli, Common, ProfileListArgs};
use commands::{Ctx, OutputLocation};
use error::{CliError, CliResult};
use manifest::{manifest_path, Recorder};

trait HasCommon {
    fn common(&self) -> &Common;
}

macro_rules! has_common {
    ($($t:ty => $($field:ident).+;)*) => {
        $(impl HasCommon for $t {
            fn common(&self) -> &Common {
                &self.$($field).+
            }
        })*
    };
}

has_common! {
    args::FitArgs => common;
    args::QuantitiesArgs => common;
    args::LboArgs => common;
    args::EigenArgs => common;
    args::HeatArgs => flow.common;
    args::McfArgs => flow.common;
    args::BaselineArgs => common;
    args::SampleArgs => common;
    args::ExportArgs => common;
}

fn init_logging(verbose: bool) {
    let level = if verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

fn configure_threads(requested: Option<usize>) -> CliResult<()> {
    let n = match requested {
        Some(n) => Some(n),
        None => match std::env::var("SNS_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| CliError::parse(format!("SNS_THREADS must be a count, got `{v}`")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::parse("thread count must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::contract(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run<T>(name: &str, matches: &ArgMatches, body: fn(&T, &mut Ctx) -> CliResult<OutputLocation>) -> CliResult<Option<CliError>>
where
    T: FromArgMatches + Serialize + DeserializeOwned + HasCommon,
{
    let parsed = T::from_arg_matches(matches).map_err(|e| CliError::parse(e.to_string()))?;
    let config_path = parsed.common().config.clone();
    let args = match &config_path {
        Some(path) => config::overlay(&parsed, matches, &config::load(path)?)?,
        None => parsed,
    };
    let common = args.common().clone();
    init_logging(common.verbose);
    configure_threads(common.threads)?;
    let (seed, generated) = match common.seed {
        Some(s) => (s, false),
        None => {
            let s = rand::random::<u32>() as u64;
            eprintln!("seed {s}");
            (s, true)
        }
    };

    let mut ctx = Ctx { seed, rec: Recorder::new(), failure: None };
    let location = body(&args, &mut ctx)?;
    let mut snapshot = serde_json::to_value(&args)?;
    if let (Some(obj), Some(path)) = (snapshot.as_object_mut(), &config_path) {
        obj.insert("config".into(), serde_json::Value::String(path.display().to_string()));
    }
    let manifest = ctx.rec.finish(name, snapshot, Some(seed), generated, rayon::current_num_threads());
    let path = match &location {
        OutputLocation::File(p) => manifest_path(p, false),
        OutputLocation::Dir(p) => manifest_path(p, true),
    };
    manifest.write(&path)?;
    Ok(ctx.failure)
}

fn dispatch(matches: &ArgMatches) -> CliResult<Option<CliError>> {
    match matches.subcommand() {
        Some(("fit", m)) => run("fit", m, commands::fit_cmd),
        Some(("quantities", m)) => run("quantities", m, commands::quantities_cmd),
        Some(("lbo", m)) => run("lbo", m, commands::lbo_cmd),
        Some(("eigen", m)) => run("eigen", m, commands::eigen_cmd),
        Some(("flow", m)) => match m.subcommand() {
            Some(("heat", h)) => run("flow heat", h, commands::heat_cmd),
            Some(("mcf", h)) => run("flow mcf", h, commands::mcf_cmd),
            _ => Err(CliError::parse("expected `flow heat` or `flow mcf`")),
        },
        Some(("baseline", m)) => run("baseline", m, commands::baseline_cmd),
        Some(("sample", m)) => run("sample", m, commands::sample_cmd),
        Some(("export", m)) => run("export", m, commands::export_cmd),
        Some(("profile-list", m)) => {
            let a = ProfileListArgs::from_arg_matches(m).map_err(|e| CliError::parse(e.to_string()))?;
            commands::profile_list(&a).map(|_| None)
        }
        _ => Err(CliError::parse("no command given; see `sns --help`")),
    }
}

fn main() -> ExitCode {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let failure = match dispatch(&matches) {
        Ok(None) => return ExitCode::SUCCESS,
        Ok(Some(e)) | Err(e) => e,
    };
    eprintln!("error: {failure}");
    ExitCode::from(failure.exit_code())
}
