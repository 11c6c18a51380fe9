use thiserror::Error;

#[derive(Error, Debug)]
pub enum GraphError {
    #[error("duplicate registration of '{name}' on component '{scope}'")]
    DuplicateRegistration { scope: String, name: String },
    #[error("component name collision: '{name}' under '{scope}'")]
    NameCollision { scope: String, name: String },
    #[error("invalid component name '{0}'")]
    InvalidName(String),
    #[error("unknown API method '{name}' on component '{scope}'")]
    UnknownApi { scope: String, name: String },
    #[error("unknown graph function '{name}' on component '{scope}'")]
    UnknownGraphFn { scope: String, name: String },
    #[error("unknown subcomponent '{name}' of '{scope}'")]
    UnknownSubcomponent { scope: String, name: String },
    #[error("no space known for parameter '{param}' of API '{api}' and no default declared")]
    UnknownParamSpace { api: String, param: String },
    #[error("op record crossed from '{from}' into '{to}' without an API call")]
    EncapsulationViolation { from: String, to: String },
    #[error("API '{api}' called with {given} arguments, expected {expected}")]
    ArityMismatch { api: String, given: usize, expected: usize },
    #[error("space conflict on {what}: {left} vs {right}")]
    SpaceConflict { what: String, left: String, right: String },
    #[error("build stalled; incomplete components: {diagnostics}")]
    BuildStall { diagnostics: String },
    #[error("cyclic space dependency between components: {0}")]
    CyclicSpaceDependency(String),
    #[error("create_variables called twice on '{0}'")]
    VariablesAlreadyCreated(String),
    #[error("create_variables called on '{0}' before input-completeness")]
    BarrierViolation(String),
    #[error("unknown variable '{0}'")]
    UnknownVariable(String),
    #[error("variable '{name}': {problem}")]
    VariableShape { name: String, problem: String },
    #[error("device map already has a rule for pattern '{0}'")]
    DuplicateDeviceRule(String),
    #[error("argument {index} of API '{api}' violates its space: {problem}")]
    ArgSpaceViolation { api: String, index: usize, problem: String },
    #[error("runtime check failed in '{scope}': {msg}")]
    RuntimeAssert { scope: String, msg: String },
    #[error("numeric error in '{scope}': {source}")]
    Numeric { scope: String, source: rlstage_core::CoreError },
    #[error(transparent)]
    Core(#[from] rlstage_core::CoreError),
    #[error("{0}")]
    Invalid(String),
}

pub type GraphResult<T> = std::result::Result<T, GraphError>;
