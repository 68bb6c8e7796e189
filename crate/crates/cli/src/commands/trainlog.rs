use pod_sentry::trainlog::{
    default_expectations, emit_training_log, emit_training_report, parse_training_log, SeriesExpectation,
};
use serde::Deserialize;

use crate::error::{CliError, EXIT_DATA, EXIT_OK};
use crate::io::{read_text, read_toml, write_text};
use crate::TrainlogCmd;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpectationsFile {
    expectations: Vec<SeriesExpectation>,
}

pub fn run(cmd: TrainlogCmd) -> Result<u8, CliError> {
    let TrainlogCmd::Report { log, out, csv, expectations } = cmd;
    let expectations = match &expectations {
        Some(p) => read_toml::<ExpectationsFile>(p)?.expectations,
        None => default_expectations(),
    };
    let parsed = parse_training_log(&read_text(&log)?)?;
    for c in &parsed.ignored_columns {
        eprintln!("note: ignoring column {c:?}");
    }
    let report = emit_training_report(&parsed.records, &expectations);
    write_text(&out, &report.to_json())?;
    if let Some(p) = csv {
        write_text(&p, &emit_training_log(&parsed.records))?;
    }
    print!("{}", report.summary());
    Ok(if report.all_passed() { EXIT_OK } else { EXIT_DATA })
}
