use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("stopping threshold k = {k} is outside [1, n = {n}]")]
    ThresholdOutOfRange { k: usize, n: usize },

    #[error("ratio alpha = {0} must lie strictly inside (0, 1)")]
    AlphaOutOfDomain(f64),

    #[error("second moment {second_moment} is smaller than the squared mean {mean}^2")]
    InconsistentMoments { mean: f64, second_moment: f64 },

    #[error("delivery at wall time {delivery_wall} (generated {gen_timestamp}) precedes the node's last delivery at {last_delivery_wall} (generated {last_gen_timestamp})")]
    TimeTravel {
        delivery_wall: f64,
        gen_timestamp: f64,
        last_delivery_wall: f64,
        last_gen_timestamp: f64,
    },

    #[error("node {node} received no update after warmup; its average age is undefined")]
    NoDeliveries { node: usize },

    #[error("replication {index} failed: {source}")]
    Replication {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid sweep: {0}")]
    InvalidSweep(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_rate(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be finite and positive",
        })
    }
}

pub(crate) fn check_shift(value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "shift",
            value,
            reason: "must be finite and non-negative",
        })
    }
}

pub(crate) fn check_threshold(k: usize, n: usize) -> Result<()> {
    if k >= 1 && k <= n {
        Ok(())
    } else {
        Err(Error::ThresholdOutOfRange { k, n })
    }
}

pub(crate) fn check_nodes(n: usize) -> Result<()> {
    if n >= 1 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "n",
            value: 0.0,
            reason: "at least one receiver is required",
        })
    }
}
