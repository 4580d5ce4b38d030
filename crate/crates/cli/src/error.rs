use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid configuration: exit code 2.
    #[error("{0}")]
    Config(String),
    /// Failure while running: exit code 3.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {err}", path.display()))
    }
}

/// Rounds `x` down to two significant digits.
fn round_down(x: f64) -> f64 {
    let scale = 10f64.powi(x.log10().floor() as i32 - 1);
    (x / scale).floor() * scale
}

impl From<gshs::Error> for CliError {
    fn from(e: gshs::Error) -> Self {
        use gshs::Error as E;
        match e {
            E::Stability { dt, bound } => CliError::Config(format!(
                "time step {dt} exceeds the stability bound {bound:.4e} of this grid; try --dt {:.1e}",
                round_down(0.9 * bound)
            )),
            E::UnknownScenario(_)
            | E::InvalidParameter { .. }
            | E::InvalidArgument(_)
            | E::Unsupported(_)
            | E::InvalidSpace(_)
            | E::InvalidModel(_)
            | E::SupportExceedsTruncation => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suggested_step_is_below_the_bound() {
        assert!((round_down(0.9 * 0.00041649) - 3.7e-4).abs() < 1e-18);
        let e: CliError = gshs::Error::Stability { dt: 1e-3, bound: 4.1649e-4 }.into();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("--dt 3.7e-4"), "{e}");
    }
}
