use std::fmt;

/// Bad flag values or config contents. Exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

/// A verification check reported FAIL. Exit code 2.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}
impl std::error::Error for CheckFailed {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CHECK: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Everything that is neither a usage error nor a failed check is a runtime failure.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        EXIT_USAGE
    } else if err.downcast_ref::<CheckFailed>().is_some() {
        EXIT_CHECK
    } else {
        EXIT_RUNTIME
    }
}
