use serde::Serialize;
use shiftweigh::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Input,
    Domain,
    Usage,
    Numerical,
    Io,
    Internal,
}

/// An error bound for stderr, with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Input, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Usage, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Io, message: message.into() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Internal, message: message.into() }
    }

    /// 2 for anything the caller can fix by changing the input, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Input | ErrorKind::Domain | ErrorKind::Usage => 2,
            ErrorKind::Numerical | ErrorKind::Io | ErrorKind::Internal => 1,
        }
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: ErrorKind,
            message: &'a str,
            exit_code: i32,
        }
        #[derive(Serialize)]
        struct Envelope<'a> {
            error: Body<'a>,
        }
        serde_json::to_string(&Envelope {
            error: Body { kind: self.kind, message: &self.message, exit_code: self.exit_code() },
        })
        .expect("error envelope serialises")
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (kind, message) = match e {
            Error::Input(m) => (ErrorKind::Input, m),
            Error::Domain(m) => (ErrorKind::Domain, m),
            Error::Usage(m) => (ErrorKind::Usage, m),
            Error::Numerical(m) => (ErrorKind::Numerical, m),
        };
        Self { kind, message }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}
