//! `guidevos` command-line driver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, Command};

use config::{Key, RunConfig};

/// Errors grouped by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration (exit 1).
    Usage(String),
    /// Missing or malformed input data (exit 2).
    Data(String),
    /// NaN or infinite values during training (exit 3).
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<guidevos::Error> for CliError {
    fn from(e: guidevos::Error) -> Self {
        match e {
            guidevos::Error::Numeric(_) => CliError::Numeric(e.to_string()),
            guidevos::Error::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub const THREADS_ENV: &str = "GVOS_THREADS";

struct Spec {
    name: &'static str,
    about: &'static str,
    keys: &'static [Key],
    run: fn(&RunConfig) -> Result<(), CliError>,
}

const SPECS: [Spec; 5] = [
    Spec {
        name: "synth",
        about: "Write a synthetic dataset and print each sequence's guide J",
        keys: commands::SYNTH_KEYS,
        run: commands::synth,
    },
    Spec {
        name: "train",
        about: "Pretrain the encoders and train a network; writes checkpoints and a learning curve",
        keys: commands::TRAIN_KEYS,
        run: commands::train,
    },
    Spec {
        name: "infer",
        about: "Predict masks for one sequence or a dataset with a trained checkpoint",
        keys: commands::INFER_KEYS,
        run: commands::infer,
    },
    Spec {
        name: "eval",
        about: "Score prediction directories against ground truth (J, F, T)",
        keys: commands::EVAL_KEYS,
        run: commands::eval,
    },
    Spec {
        name: "ablate",
        about: "Train guided and both non-guided variants on one synthetic split and compare",
        keys: commands::ABLATE_KEYS,
        run: commands::ablate,
    },
];

fn cli() -> Command {
    let mut root = Command::new("guidevos")
        .about("Guided video object segmentation: data, training, inference and evaluation")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .after_help(format!(
            "Every command also reads `key = value` lines from --config FILE; flags win over the file.\n\
             {THREADS_ENV} sets the worker count for infer and eval when --threads is not given."
        ));
    for spec in &SPECS {
        let mut sub = Command::new(spec.name).about(spec.about).args_override_self(true).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key = value file applied before the flags"),
        );
        for k in spec.keys {
            let help = match k.default {
                None => format!("{} (required)", k.help),
                Some("") => k.help.to_string(),
                Some(d) => format!("{} [default: {d}]", k.help),
            };
            sub = sub.arg(Arg::new(k.name).long(k.name).value_name("VALUE").action(ArgAction::Set).help(help));
        }
        root = root.subcommand(sub);
    }
    root
}

fn run() -> Result<(), CliError> {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            let text = e.render().to_string();
            return Err(CliError::Usage(text.trim_start_matches("error: ").trim_end().to_string()));
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let spec = SPECS.iter().find(|s| s.name == name).expect("registered subcommand");
    let flags: Vec<(String, String)> = spec
        .keys
        .iter()
        .filter_map(|k| sub.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone())))
        .collect();
    let file = sub.get_one::<String>("config").map(PathBuf::from);
    let config = RunConfig::resolve(name, spec.keys, file.as_deref(), &flags)?;
    (spec.run)(&config)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
