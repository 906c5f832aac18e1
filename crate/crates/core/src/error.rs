use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("a {requested}-qubit register exceeds the budget of {limit} qubits")]
    Capacity { requested: usize, limit: usize },

    #[error("qubit {index} is out of range for a {num_qubits}-qubit register")]
    QubitOutOfRange { index: usize, num_qubits: usize },

    #[error("control and target are both qubit {0}")]
    ControlIsTarget(usize),

    #[error("qubit set is empty")]
    EmptyQubitSet,

    #[error("amplitude buffer of length {0} is not 2^n for n >= 1")]
    BadLength(usize),

    #[error("outcome {outcome} on qubit {qubit} has probability {probability:e}")]
    ImpossibleOutcome {
        qubit: usize,
        outcome: u8,
        probability: f64,
    },

    #[error("unsupported lattice: {0}")]
    UnsupportedLattice(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("ancilla qubit {0} overlaps a link qubit")]
    AncillaOverlap(usize),

    #[error("register too small: need {needed} qubits, have {have}")]
    InsufficientQubits { needed: usize, have: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("phase wrap: norm bound {bound} times t = {t} reaches pi/2")]
    PhaseWrap { bound: f64, t: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no transition: {0}")]
    NoTransition(String),

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("run aborted after step {last_completed_step}: {source}")]
    Aborted {
        last_completed_step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
