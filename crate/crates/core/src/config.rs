//! Run configuration shared by the command line and the bindings.

use std::path::PathBuf;
use std::time::Duration;

use crate::alpha::OptimizerConfig;
use crate::analysis::{AnalysisOptions, Method};
use crate::engine::CrownVariant;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Device {
    #[default]
    Cpu,
    Cuda,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OutputFormat {
    #[default]
    Text,
    Json,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    pub model: PathBuf,
    pub vnnlib: Option<PathBuf>,
    pub method: Method,
    pub variant: CrownVariant,
    pub optimizer: OptimizerConfig,
    pub timeout: Option<Duration>,
    /// 0 quiet, 1 warnings, 2 info, 3 debug, 4 and up trace.
    pub verbosity: u8,
    pub device: Device,
    pub format: OutputFormat,
    /// Input box used when no VNN-LIB file is given; one value is broadcast.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Configuration {
    pub fn new(model: impl Into<PathBuf>) -> Self {
        Configuration {
            model: model.into(),
            vnnlib: None,
            method: Method::Crown,
            variant: CrownVariant::Standard,
            optimizer: OptimizerConfig::default(),
            timeout: None,
            verbosity: 1,
            device: Device::Cpu,
            format: OutputFormat::Text,
            lower: vec![-1.0],
            upper: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.lower.is_empty() || self.upper.is_empty() {
            return Err(Error::Config("input box bounds must not be empty".into()));
        }
        Ok(())
    }

    pub fn analysis_options(&self) -> AnalysisOptions {
        AnalysisOptions {
            method: self.method,
            variant: self.variant,
            optimizer: self.optimizer.clone(),
            timeout: self.timeout,
        }
    }

    pub fn log_level(&self) -> log::LevelFilter {
        match self.verbosity {
            0 => log::LevelFilter::Error,
            1 => log::LevelFilter::Warn,
            2 => log::LevelFilter::Info,
            3 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    }
}
