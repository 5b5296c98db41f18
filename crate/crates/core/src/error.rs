use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid rate: {0}")]
    InvalidRate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dispatcher {dispatcher} has no compatible server")]
    NoCompatibleServer { dispatcher: usize },

    #[error("task band {row} has zero service rate in every cell")]
    ZeroRow { row: usize },

    #[error("routing mass p[{h}][{m}] > 0 on an incompatible cell (rate 0)")]
    IncompatibleRouting { h: usize, m: usize },

    #[error("load is not subcritical: capacity slack of server type {m} is {slack}")]
    NotSubcritical { m: usize, slack: f64 },

    #[error(
        "reservation overflow in server group {m}: blocks need {required} servers, \
         group has {available}; shrink eps and retry"
    )]
    ReservationOverflow {
        m: usize,
        required: usize,
        available: usize,
    },

    #[error("routing to empty server group {m}")]
    EmptyGroup { m: usize },

    #[error("linear program: {0}")]
    Lp(String),

    #[error("coupling precondition violated: {0}")]
    Coupling(String),

    #[error("simulator invariant broken: {0}")]
    Invariant(String),
}
