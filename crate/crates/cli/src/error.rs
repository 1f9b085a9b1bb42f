use std::fmt;
use std::path::Path;

use netloc::analysis::AnalysisError;
use netloc::eval::EvalError;
use netloc::models::ModelError;
use netloc::scenario::ScenarioError;
use netloc::train::TrainError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Usage,
    Io,
    Config,
    Numeric,
}

impl Category {
    pub fn code(self) -> i32 {
        match self {
            Category::Usage => 2,
            Category::Io => 3,
            Category::Config => 4,
            Category::Numeric => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Usage => "usage",
            Category::Io => "io",
            Category::Config => "config",
            Category::Numeric => "numeric",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

impl CliError {
    pub fn new(category: Category, message: impl Into<String>) -> Self {
        Self { category, message: message.into() }
    }

    pub fn usage(m: impl Into<String>) -> Self {
        Self::new(Category::Usage, m)
    }

    pub fn config(m: impl Into<String>) -> Self {
        Self::new(Category::Config, m)
    }

    pub fn numeric(m: impl Into<String>) -> Self {
        Self::new(Category::Numeric, m)
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self::new(Category::Io, format!("{}: {e}", path.display()))
    }

    pub fn code(&self) -> i32 {
        self.category.code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.category.name(), self.message.replace('\n', " "))
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Config(_) => Self::config(e.to_string()),
            ScenarioError::Parse { .. } => Self::new(Category::Io, e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Num(_) => Self::numeric(e.to_string()),
            ModelError::Checkpoint(_) => Self::new(Category::Io, e.to_string()),
            _ => Self::config(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => Self::config(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::NonFinite { .. } | TrainError::Num(_) => Self::numeric(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Invalid(_) | AnalysisError::EmptyNeighborhood(_) | AnalysisError::Graph(_) => {
                Self::config(e.to_string())
            }
            AnalysisError::Num(_) => Self::numeric(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(_) => Self::config(e.to_string()),
            EvalError::Scenario(s) => s.into(),
            EvalError::Train(t) => t.into(),
            EvalError::Model(m) => m.into(),
            EvalError::Io { .. } | EvalError::Json(_) => Self::new(Category::Io, e.to_string()),
        }
    }
}
