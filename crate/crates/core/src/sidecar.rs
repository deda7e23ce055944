//! Client for the interpreter sidecar.
//!
//! The sidecar is a small Python script (shipped in `sidecar/sidecar.py` and
//! embedded into this crate) that executes corpus programs under resource
//! limits and disassembles them into opcode sequences. It speaks one JSON
//! object per line in each direction; see `docs/sidecar-protocol.md`.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Source of the sidecar script, passed to the interpreter with `-c`.
pub const SIDECAR_SCRIPT: &str = include_str!("../sidecar/sidecar.py");

#[derive(Debug, Error)]
pub enum SidecarError {
    #[error("failed to start sidecar with `{python}`: {source}")]
    Spawn {
        python: String,
        #[source]
        source: std::io::Error,
    },
    #[error("sidecar unreachable: {0}")]
    Transport(String),
    #[error("sidecar error: {0}")]
    Remote(String),
    #[error("malformed sidecar response: {0}")]
    Protocol(String),
}

impl SidecarError {
    /// Transport failures mean the sidecar process itself is gone; every
    /// other error concerns a single request only.
    pub fn is_transport(&self) -> bool {
        matches!(self, SidecarError::Transport(_) | SidecarError::Spawn { .. })
    }
}

/// Resource limits for a single `run` request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutionLimits {
    pub timeout_secs: f64,
    pub memory_cap_bytes: u64,
}

impl Default for ExecutionLimits {
    fn default() -> Self {
        Self {
            timeout_secs: 5.0,
            memory_cap_bytes: 256 * 1024 * 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub stdout: String,
    pub exit_status: i64,
    pub wall_time: f64,
    pub timed_out: bool,
}

impl ExecutionResult {
    /// A result can stand in for `f_p(x)` only if the program finished in
    /// time, exited cleanly and printed something.
    pub fn is_usable(&self) -> bool {
        !self.timed_out && self.exit_status == 0 && !self.stdout.trim_end().is_empty()
    }

    /// Observable behaviour used for the determinism check; wall time is
    /// deliberately excluded.
    pub fn same_behaviour(&self, other: &ExecutionResult) -> bool {
        self.stdout == other.stdout
            && self.exit_status == other.exit_status
            && self.timed_out == other.timed_out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(u16, String)", into = "(u16, String)")]
pub struct Opcode {
    pub id: u16,
    pub name: String,
}

impl From<(u16, String)> for Opcode {
    fn from((id, name): (u16, String)) -> Self {
        Opcode { id, name }
    }
}

impl From<Opcode> for (u16, String) {
    fn from(op: Opcode) -> Self {
        (op.id, op.name)
    }
}

/// Opcodes of every code object in a program, module first, nested code
/// objects in definition order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpcodeSequence {
    pub ops: Vec<Opcode>,
}

impl OpcodeSequence {
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        OpcodeSequence {
            ops: names
                .into_iter()
                .map(|n| Opcode { id: 0, name: n.into() })
                .collect(),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.ops.iter().map(|op| op.name.as_str())
    }
}

/// Executes programs. Implemented by [`Sidecar`]; tests substitute fakes.
pub trait Executor {
    fn run(
        &mut self,
        code: &str,
        stdin: &str,
        limits: &ExecutionLimits,
    ) -> Result<ExecutionResult, SidecarError>;
}

/// Compiles programs to opcode sequences without running them.
pub trait Disassembler {
    fn disassemble(&mut self, code: &str) -> Result<OpcodeSequence, SidecarError>;
}

#[derive(Debug, Serialize)]
pub(crate) struct RequestEnvelope<'a> {
    pub id: u64,
    #[serde(flatten)]
    pub body: RequestBody<'a>,
}

#[derive(Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub(crate) enum RequestBody<'a> {
    Version,
    Run {
        code: &'a str,
        stdin: &'a str,
        timeout: f64,
        memory_cap: u64,
    },
    Disassemble {
        code: &'a str,
    },
}

#[derive(Debug, Deserialize)]
pub(crate) struct ResponseEnvelope {
    pub id: Option<u64>,
    pub ok: bool,
    #[serde(default)]
    pub result: Option<serde_json::Value>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Deserialize)]
struct VersionPayload {
    version: String,
}

#[derive(Debug, Clone)]
pub struct SidecarOptions {
    /// Interpreter used to host the sidecar (and to run programs).
    pub python: String,
    /// Reject `run` requests; used to check that feature extraction never
    /// depends on execution.
    pub disable_run: bool,
}

impl Default for SidecarOptions {
    fn default() -> Self {
        SidecarOptions {
            python: "python3".to_string(),
            disable_run: false,
        }
    }
}

/// A live sidecar process. Single-threaded; one per worker.
pub struct Sidecar {
    child: Child,
    writer: BufWriter<ChildStdin>,
    reader: BufReader<ChildStdout>,
    next_id: u64,
}

impl Sidecar {
    pub fn spawn(options: &SidecarOptions) -> Result<Self, SidecarError> {
        let mut cmd = Command::new(&options.python);
        cmd.arg("-u").arg("-c").arg(SIDECAR_SCRIPT);
        if options.disable_run {
            cmd.arg("--disable-run");
        }
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| SidecarError::Spawn {
                python: options.python.clone(),
                source,
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Sidecar {
            child,
            writer: BufWriter::new(stdin),
            reader: BufReader::new(stdout),
            next_id: 1,
        })
    }

    /// `major.minor` of the hosting interpreter. Opcode tables are only
    /// comparable within one minor version.
    pub fn interpreter_version(&mut self) -> Result<String, SidecarError> {
        let value = self.call(RequestBody::Version)?;
        let payload: VersionPayload =
            serde_json::from_value(value).map_err(|e| SidecarError::Protocol(e.to_string()))?;
        Ok(payload.version)
    }

    fn call(&mut self, body: RequestBody<'_>) -> Result<serde_json::Value, SidecarError> {
        let id = self.next_id;
        self.next_id += 1;
        let line = serde_json::to_string(&RequestEnvelope { id, body })
            .map_err(|e| SidecarError::Protocol(e.to_string()))?;
        let io_err = |e: std::io::Error| SidecarError::Transport(e.to_string());
        self.writer.write_all(line.as_bytes()).map_err(io_err)?;
        self.writer.write_all(b"\n").map_err(io_err)?;
        self.writer.flush().map_err(io_err)?;

        let mut response = String::new();
        let n = self.reader.read_line(&mut response).map_err(io_err)?;
        if n == 0 {
            return Err(SidecarError::Transport("sidecar closed its output".into()));
        }
        parse_response(&response, id)
    }
}

pub(crate) fn parse_response(line: &str, expected_id: u64) -> Result<serde_json::Value, SidecarError> {
    let envelope: ResponseEnvelope =
        serde_json::from_str(line.trim_end()).map_err(|e| SidecarError::Protocol(e.to_string()))?;
    if envelope.id != Some(expected_id) {
        return Err(SidecarError::Protocol(format!(
            "response id {:?} does not match request id {expected_id}",
            envelope.id
        )));
    }
    if envelope.ok {
        envelope
            .result
            .ok_or_else(|| SidecarError::Protocol("ok response without result".into()))
    } else {
        Err(SidecarError::Remote(
            envelope.error.unwrap_or_else(|| "unspecified error".into()),
        ))
    }
}

impl Executor for Sidecar {
    fn run(
        &mut self,
        code: &str,
        stdin: &str,
        limits: &ExecutionLimits,
    ) -> Result<ExecutionResult, SidecarError> {
        let value = self.call(RequestBody::Run {
            code,
            stdin,
            timeout: limits.timeout_secs,
            memory_cap: limits.memory_cap_bytes,
        })?;
        serde_json::from_value(value).map_err(|e| SidecarError::Protocol(e.to_string()))
    }
}

impl Disassembler for Sidecar {
    fn disassemble(&mut self, code: &str) -> Result<OpcodeSequence, SidecarError> {
        let value = self.call(RequestBody::Disassemble { code })?;
        serde_json::from_value(value).map_err(|e| SidecarError::Protocol(e.to_string()))
    }
}

impl Drop for Sidecar {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
