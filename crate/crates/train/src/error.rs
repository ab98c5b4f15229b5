use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad training config: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Core(#[from] pdp_core::Error),
    #[error(transparent)]
    Net(#[from] pdp_nn::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint state: {0}")]
    State(String),
}

pub type Result<T> = std::result::Result<T, Error>;
