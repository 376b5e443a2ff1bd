use delaycast::design::DesignError;
use delaycast::estimate::EstimateError;
use delaycast::evaluate::EvaluateError;
use delaycast::predict::PredictError;
use delaycast::synth::SynthError;

pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_USAGE: i32 = 4;

#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn design(e: &DesignError) -> i32 {
    match e {
        DesignError::RankDeficient(_) | DesignError::DegenerateKnots(_) => EXIT_NUMERICAL,
        DesignError::InvalidSpec(_) => EXIT_USAGE,
        DesignError::EmptyWindow(_) => EXIT_DATA,
    }
}

fn estimate(e: &EstimateError) -> i32 {
    match e {
        EstimateError::Diverged(_) | EstimateError::RankDeficient(_) | EstimateError::NoSignal => EXIT_NUMERICAL,
        EstimateError::InvalidInput(_) => EXIT_USAGE,
        EstimateError::Version { .. } | EstimateError::Json(_) => EXIT_DATA,
    }
}

fn predict(e: &PredictError) -> i32 {
    match e {
        PredictError::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Exit code for an error chain: 2 data, 3 numerical, 4 usage.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<DesignError>() {
            return design(e);
        }
        if let Some(e) = cause.downcast_ref::<EstimateError>() {
            return estimate(e);
        }
        if let Some(e) = cause.downcast_ref::<PredictError>() {
            return predict(e);
        }
        if let Some(e) = cause.downcast_ref::<EvaluateError>() {
            return match e {
                EvaluateError::Design(e) => design(e),
                EvaluateError::Estimate(e) => estimate(e),
                EvaluateError::Predict(e) => predict(e),
                _ => EXIT_DATA,
            };
        }
        if let Some(SynthError::InvalidScenario(_)) = cause.downcast_ref::<SynthError>() {
            return EXIT_USAGE;
        }
    }
    EXIT_DATA
}

pub fn category(code: i32) -> &'static str {
    match code {
        EXIT_USAGE => "usage",
        EXIT_NUMERICAL => "numerical",
        _ => "data",
    }
}
