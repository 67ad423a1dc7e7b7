use thiserror::Error;

#[derive(Debug, Error)]
pub enum RtError {
    #[error("invalid service config: {0}")]
    Config(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("handshake rejected: {0}")]
    Handshake(String),

    #[error("server reported {code}: {msg}")]
    Server { code: String, msg: String },

    #[error("connection closed by peer")]
    Closed,

    #[error(transparent)]
    Model(#[from] ankle_msk::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RtError>;
