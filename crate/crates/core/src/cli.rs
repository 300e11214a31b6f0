//! Command-line front end.
//!
//! Exit codes: 0 after a completed analysis (whatever the verdict), 1 on
//! usage, parse or analysis errors, 2 on timeout (partial bounds are still
//! printed), 3 when the model uses an unsupported operator.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use clap::error::ErrorKind;
use clap::{ArgAction, Parser};

use crate::alpha::OptimizerConfig;
use crate::analysis::{analyze, Method, RunReport, Verdict};
use crate::config::{Configuration, Device, OutputFormat};
use crate::engine::{preprocess_c, CrownVariant, SpecMatrix};
use crate::error::{Error, Result};
use crate::onnx::parse_onnx;
use crate::tensor::{BoundedTensor, Tensor};
use crate::vnnlib::read_vnnlib;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_TIMEOUT: i32 = 2;
pub const EXIT_UNSUPPORTED: i32 = 3;

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

fn parse_seconds(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(format!("timeout must be a non-negative number of seconds, got {s}"));
    }
    Ok(v)
}

#[derive(Parser, Debug)]
#[command(name = "crownprop", version, about = "Sound output bounds for ReLU networks (IBP, CROWN, alpha-CROWN)")]
struct Cli {
    /// ONNX model
    #[arg(long, value_name = "MODEL")]
    input: PathBuf,

    /// VNN-LIB property giving the input box and output constraints
    #[arg(long, value_name = "FILE")]
    vnnlib: Option<PathBuf>,

    /// ibp, crown or alpha-crown
    #[arg(long, default_value = "crown", value_parser = parse_method)]
    method: Method,

    /// Intermediate bounds from extra backward passes (default)
    #[arg(long, conflicts_with = "crown_ibp")]
    standard_crown: bool,

    /// Intermediate bounds from IBP
    #[arg(long)]
    crown_ibp: bool,

    #[arg(long, overrides_with = "no_optimize_lower")]
    optimize_lower: bool,
    #[arg(long, overrides_with = "optimize_lower")]
    no_optimize_lower: bool,
    #[arg(long, overrides_with = "no_optimize_upper")]
    optimize_upper: bool,
    #[arg(long, overrides_with = "optimize_upper")]
    no_optimize_upper: bool,

    #[arg(long, default_value_t = 20)]
    iterations: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 0.98)]
    lr_decay: f64,
    #[arg(long, default_value_t = 5)]
    patience: usize,

    /// Report the last iterate instead of the best one
    #[arg(long)]
    no_best_restore: bool,

    /// Run every iteration regardless of patience
    #[arg(long)]
    no_early_stop: bool,

    /// Wall-clock limit in seconds
    #[arg(long, value_name = "SECONDS", value_parser = parse_seconds)]
    timeout: Option<f64>,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[arg(short, long, action = ArgAction::Count, conflicts_with = "quiet")]
    verbose: u8,
    #[arg(short, long)]
    quiet: bool,
    #[arg(long, value_name = "LEVEL", conflicts_with_all = ["verbose", "quiet"])]
    verbosity: Option<u8>,

    #[arg(long, conflicts_with = "cuda")]
    cpu: bool,
    /// Accepted for compatibility; analysis always runs on the CPU
    #[arg(long)]
    cuda: bool,

    /// Print a single JSON object instead of text
    #[arg(long)]
    json: bool,

    /// Input lower bounds without --vnnlib (comma separated, one value is broadcast)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-1")]
    lower: Vec<f64>,
    /// Input upper bounds without --vnnlib
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "1")]
    upper: Vec<f64>,
}

impl Cli {
    fn into_config(self) -> Configuration {
        let verbosity = match (self.quiet, self.verbosity) {
            (true, _) => 0,
            (false, Some(v)) => v,
            (false, None) => 1 + self.verbose,
        };
        if self.cuda && verbosity > 0 {
            eprintln!("warning: CUDA is not available in this build, running on the CPU");
        }
        Configuration {
            model: self.input,
            vnnlib: self.vnnlib,
            method: self.method,
            variant: if self.crown_ibp { CrownVariant::CrownIbp } else { CrownVariant::Standard },
            optimizer: OptimizerConfig {
                iterations: self.iterations,
                lr: self.lr,
                lr_decay: self.lr_decay,
                patience: self.patience,
                early_stop: !self.no_early_stop,
                best_restore: !self.no_best_restore,
                optimize_lower: !self.no_optimize_lower,
                optimize_upper: !self.no_optimize_upper,
                seed: self.seed,
            },
            timeout: self.timeout.map(Duration::from_secs_f64),
            verbosity,
            device: Device::Cpu,
            format: if self.json { OutputFormat::Json } else { OutputFormat::Text },
            lower: self.lower,
            upper: self.upper,
        }
    }
}

pub fn parse_config<I, T>(argv: I) -> std::result::Result<Configuration, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Cli::try_parse_from(argv).map(Cli::into_config)
}

fn broadcast(values: &[f64], n: usize, what: &str) -> Result<Tensor> {
    match values.len() {
        1 => Ok(Tensor::full(&[n], values[0])),
        k if k == n => Ok(Tensor::from_vec(values.to_vec())),
        k => Err(Error::Config(format!("{what} has {k} values for a network with {n} inputs"))),
    }
}

/// Load the model and spec named by `config` and run the analysis.
pub fn run_analysis(config: &Configuration) -> Result<RunReport> {
    config.validate()?;
    let graph = parse_onnx(&config.model)?;
    let (n, m) = (graph.input_size(), graph.output_size());
    let (input, specs): (BoundedTensor, Vec<SpecMatrix>) = match &config.vnnlib {
        Some(path) => {
            let spec = read_vnnlib(path, n, m)?;
            let specs = preprocess_c(spec.output.as_ref(), m)?;
            (spec.input, specs)
        }
        None => {
            let input = BoundedTensor::new(broadcast(&config.lower, n, "--lower")?, broadcast(&config.upper, n, "--upper")?)?;
            (input, preprocess_c(None, m)?)
        }
    };
    log::info!(
        "{} inputs, {} outputs, {} branches, method {}",
        n,
        m,
        specs.len(),
        config.method
    );
    analyze(&graph, &input, &specs, &config.analysis_options())
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::UnsupportedOperator(_) => EXIT_UNSUPPORTED,
        Error::Timeout { .. } => EXIT_TIMEOUT,
        _ => EXIT_ERROR,
    }
}

/// Run and print the report to `out`; errors go to stderr.
pub fn run_cli(config: &Configuration, out: &mut impl Write) -> i32 {
    match run_analysis(config) {
        Ok(report) => {
            let text = match config.format {
                OutputFormat::Json => report.to_json() + "\n",
                OutputFormat::Text => report.to_text(),
            };
            if let Err(e) = out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
                eprintln!("error: cannot write report: {e}");
                return EXIT_ERROR;
            }
            if report.verdict == Verdict::Timeout { EXIT_TIMEOUT } else { EXIT_OK }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Full entry point: parse `argv`, set up logging, run.
pub fn main_with_args<I, T>(argv: I, out: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let config = match parse_config(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_ERROR,
            };
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(config.log_level())
        .target(env_logger::Target::Stderr)
        .try_init();
    run_cli(&config, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Configuration, clap::Error> {
        parse_config(std::iter::once("crownprop").chain(args.iter().copied()))
    }

    #[test]
    fn appendix_example_line() {
        let c = parse(&[
            "--input", "m.onnx", "--method", "alpha-crown", "--optimize-lower", "--optimize-upper", "--lr", "0.5",
            "--iterations", "20",
        ])
        .unwrap();
        assert_eq!(c.method, Method::AlphaCrown);
        assert_eq!(c.optimizer.lr, 0.5);
        assert_eq!(c.optimizer.iterations, 20);
        assert!(c.optimizer.optimize_lower && c.optimizer.optimize_upper);
    }

    #[test]
    fn defaults() {
        let c = parse(&["--input", "m.onnx"]).unwrap();
        assert_eq!(c.method, Method::Crown);
        assert_eq!(c.variant, CrownVariant::Standard);
        assert_eq!(c.optimizer, OptimizerConfig::default());
        assert_eq!(c.format, OutputFormat::Text);
        assert_eq!(c.verbosity, 1);
        assert_eq!(c.timeout, None);
    }

    #[test]
    fn cuda_falls_back() {
        let c = parse(&["--input", "m.onnx", "--cuda", "--quiet"]).unwrap();
        assert_eq!(c.device, Device::Cpu);
    }

    #[test]
    fn side_toggles() {
        let c = parse(&["--input", "m", "--no-optimize-lower"]).unwrap();
        assert!(!c.optimizer.optimize_lower && c.optimizer.optimize_upper);
        let c = parse(&["--input", "m", "--no-optimize-upper", "--optimize-upper"]).unwrap();
        assert!(c.optimizer.optimize_upper);
        let c = parse(&["--input", "m", "--crown-ibp", "--no-best-restore", "--json", "--timeout", "2.5"]).unwrap();
        assert_eq!(c.variant, CrownVariant::CrownIbp);
        assert!(!c.optimizer.best_restore);
        assert_eq!(c.format, OutputFormat::Json);
        assert_eq!(c.timeout, Some(Duration::from_secs_f64(2.5)));
    }

    #[test]
    fn usage_errors() {
        assert!(parse(&[]).is_err());
        assert!(parse(&["--input", "m", "--verbose", "--quiet"]).is_err());
        assert!(parse(&["--input", "m", "--lr", "fast"]).is_err());
        assert!(parse(&["--input", "m", "--frobnicate"]).is_err());
        assert!(parse(&["--input", "m", "--method", "newton"]).is_err());
        assert!(parse(&["--input", "m", "--cpu", "--cuda"]).is_err());
        assert!(parse(&["--input", "m", "--standard-crown", "--crown-ibp"]).is_err());
        assert!(parse(&["--input", "m", "--timeout", "-1"]).is_err());
    }

    #[test]
    fn verbosity_levels() {
        assert_eq!(parse(&["--input", "m", "-vv"]).unwrap().verbosity, 3);
        assert_eq!(parse(&["--input", "m", "--verbosity", "4"]).unwrap().verbosity, 4);
        assert_eq!(parse(&["--input", "m", "-q"]).unwrap().verbosity, 0);
    }

    #[test]
    fn default_box_values() {
        let c = parse(&["--input", "m", "--lower", "-2,-3", "--upper", "0.5"]).unwrap();
        assert_eq!(c.lower, [-2.0, -3.0]);
        assert_eq!(c.upper, [0.5]);
        assert_eq!(broadcast(&c.upper, 3, "u").unwrap().data(), &[0.5; 3]);
        assert!(broadcast(&c.lower, 3, "l").is_err());
    }

    #[test]
    fn missing_model_exits_one() {
        let c = parse(&["--input", "/nonexistent.onnx", "-q"]).unwrap();
        assert_eq!(run_cli(&c, &mut Vec::new()), EXIT_ERROR);
    }
}
