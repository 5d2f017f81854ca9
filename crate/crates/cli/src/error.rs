use std::fmt;

use kgfuse::data::DataError;
use kgfuse::embed::EmbedError;
use kgfuse::harness::HarnessError;
use kgfuse::kg::KgError;
use kgfuse::model::ModelError;
use kgfuse::trainer::TrainError;

/// Exit 1: the inputs were rejected. Exit 2: something failed while running.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "run failed: {m}"),
        }
    }
}

fn data_is_runtime(e: &DataError) -> bool {
    matches!(e, DataError::Io(_))
}

fn embed_is_runtime(e: &EmbedError) -> bool {
    matches!(e, EmbedError::Io(_) | EmbedError::ZeroVector)
}

fn model_is_runtime(e: &ModelError) -> bool {
    matches!(e, ModelError::Tensor(_))
}

fn train_is_runtime(e: &TrainError) -> bool {
    match e {
        TrainError::Io(_) | TrainError::Tensor(_) => true,
        TrainError::Model(m) => model_is_runtime(m),
        TrainError::Embed(m) => embed_is_runtime(m),
        TrainError::Data(m) => data_is_runtime(m),
        _ => false,
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        let runtime = match &e {
            HarnessError::Io(_) => true,
            HarnessError::Kg(k) => matches!(k, KgError::Io(_)),
            HarnessError::Embed(m) => embed_is_runtime(m),
            HarnessError::Model(m) => model_is_runtime(m),
            HarnessError::Train(m) => train_is_runtime(m),
            HarnessError::Data(m) => data_is_runtime(m),
            _ => false,
        };
        if runtime {
            CliError::Runtime(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

macro_rules! via_harness {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                HarnessError::from(e).into()
            }
        }
    )*};
}

via_harness!(DataError, EmbedError, KgError, ModelError, TrainError, std::io::Error);

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}
