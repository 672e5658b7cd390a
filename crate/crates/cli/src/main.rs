use std::process::ExitCode;

use clap::Parser;
use trajstat_core::error::Error;

mod args;
mod commands;
mod output;

use args::Cli;

struct JsonLogger;

impl log::Log for JsonLogger {
    fn enabled(&self, metadata: &log::Metadata) -> bool {
        metadata.level() <= log::Level::Info
    }

    fn log(&self, record: &log::Record) {
        if self.enabled(record.metadata()) {
            output::diagnostic(
                &record.level().as_str().to_lowercase(),
                record.target(),
                serde_json::json!({ "message": record.args().to_string() }),
            );
        }
    }

    fn flush(&self) {}
}

static LOGGER: JsonLogger = JsonLogger;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Parse(_) | Error::Validation(_) => 1,
        Error::Io(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let _ = log::set_logger(&LOGGER).map(|()| log::set_max_level(log::LevelFilter::Info));
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    faer::set_global_parallelism(faer::Par::Seq);
    let workers = cli.resolved_workers();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
        output::diagnostic("warn", "workers", serde_json::json!({ "message": e.to_string() }));
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            output::diagnostic(
                "error",
                "run",
                serde_json::json!({
                    "message": e.to_string(),
                    "numerical": e.is_numerical(),
                    "exit_code": exit_code(&e),
                }),
            );
            ExitCode::from(exit_code(&e))
        }
    }
}
