//! Newline-delimited JSON protocol for black-box oracles run as child
//! processes.
//!
//! ```text
//! {"op":"generate","seed":<u64>}                      -> {"rows":[[f64,...],...]}
//! {"op":"evaluate","rows":[[...]],"seed":<u64>}       -> {"output":[f64,...]}
//! {"op":"proposal","index":<usize>,"seed":<u64>}      -> {"cov":[[...]]}
//! ```
//!
//! A response may instead carry `{"error":"..."}`. A worker that exits,
//! closes stdout, or prints malformed JSON is an oracle error. Workers are
//! pooled; each worker has at most one request in flight.

use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::{json, Value};

use super::Dataset;
use crate::error::{Error, Result};
use crate::seed::StreamSeed;

pub struct SubprocessOracle {
    command: Vec<String>,
    idle: Mutex<Vec<Worker>>,
}

struct Worker {
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
    stderr: Arc<Mutex<Vec<u8>>>,
    drain: Option<JoinHandle<()>>,
}

impl Worker {
    fn spawn(command: &[String]) -> Result<Worker> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::input("subprocess command is empty"))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::oracle(format!("cannot spawn {program:?}: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut err_pipe = child.stderr.take().expect("piped stderr");
        let stderr = Arc::new(Mutex::new(Vec::new()));
        let sink = Arc::clone(&stderr);
        // keep the pipe drained so a chatty child cannot block on stderr
        let drain = std::thread::spawn(move || {
            let mut buf = [0u8; 4096];
            while let Ok(n) = err_pipe.read(&mut buf) {
                if n == 0 {
                    break;
                }
                sink.lock().unwrap().extend_from_slice(&buf[..n]);
            }
        });
        Ok(Worker {
            child,
            stdin,
            stdout,
            stderr,
            drain: Some(drain),
        })
    }

    fn round_trip(&mut self, line: &str) -> std::result::Result<String, String> {
        let stdin = self.stdin.as_mut().ok_or("stdin closed")?;
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.write_all(b"\n"))
            .and_then(|_| stdin.flush())
            .map_err(|e| format!("write failed: {e}"))?;
        let mut response = String::new();
        let n = self
            .stdout
            .read_line(&mut response)
            .map_err(|e| format!("read failed: {e}"))?;
        if n == 0 {
            return Err("worker closed stdout without responding".into());
        }
        Ok(response)
    }

    /// Shuts the worker down and returns whatever it wrote to stderr.
    fn finish(mut self) -> (Option<std::process::ExitStatus>, String) {
        drop(self.stdin.take());
        let _ = self.child.kill();
        let status = self.child.wait().ok();
        if let Some(h) = self.drain.take() {
            let _ = h.join();
        }
        let text = String::from_utf8_lossy(&self.stderr.lock().unwrap()).into_owned();
        (status, text)
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        drop(self.stdin.take());
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl SubprocessOracle {
    pub fn new(command: Vec<String>) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::input("subprocess command is empty"));
        }
        Ok(Self {
            command,
            idle: Mutex::new(Vec::new()),
        })
    }

    pub fn command(&self) -> &[String] {
        &self.command
    }

    /// Sends one request and returns the parsed response object.
    pub fn request(&self, request: &Value) -> Result<Value> {
        let line = serde_json::to_string(request)?;
        let pooled = self.idle.lock().unwrap().pop();
        let mut worker = match pooled {
            Some(w) => w,
            None => Worker::spawn(&self.command)?,
        };
        match worker.round_trip(&line) {
            Ok(text) => {
                let parsed: Value = match serde_json::from_str(text.trim_end()) {
                    Ok(v) => v,
                    Err(e) => {
                        let (_, stderr) = worker.finish();
                        return Err(Error::Oracle {
                            trial: None,
                            message: format!("malformed JSON response {:?}: {e}", truncate(&text)),
                            stderr: Some(stderr),
                        });
                    }
                };
                self.idle.lock().unwrap().push(worker);
                if let Some(err) = parsed.get("error") {
                    return Err(Error::oracle(format!("oracle reported error: {err}")));
                }
                Ok(parsed)
            }
            Err(msg) => {
                let (status, stderr) = worker.finish();
                let status = status.map(|s| s.to_string()).unwrap_or_else(|| "unknown".into());
                Err(Error::Oracle {
                    trial: None,
                    message: format!("{msg} (exit {status})"),
                    stderr: Some(stderr),
                })
            }
        }
    }

    pub fn generate(&self, seed: StreamSeed) -> Result<Dataset> {
        let resp = self.request(&json!({"op": "generate", "seed": seed.0}))?;
        let rows = field_matrix(&resp, "rows")?;
        Dataset::from_rows(&rows, None).map_err(|e| Error::oracle(e.to_string()))
    }

    pub fn evaluate(&self, data: &Dataset, seed: u64, extra: Option<(&[u64], &[Vec<f64>])>) -> Result<Vec<f64>> {
        let mut req = json!({"op": "evaluate", "rows": data.to_rows(), "seed": seed});
        if let Some((joint, history)) = extra {
            req["joint_seed"] = json!(joint);
            req["history"] = json!(history);
        }
        let resp = self.request(&req)?;
        field_vector(&resp, "output")
    }

    pub fn proposal(&self, index: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let resp = self.request(&json!({"op": "proposal", "index": index, "seed": seed}))?;
        field_matrix(&resp, "cov")
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(120).collect()
}

fn field_vector(v: &Value, key: &str) -> Result<Vec<f64>> {
    let arr = v
        .get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| Error::oracle(format!("response lacks array field {key:?}")))?;
    arr.iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| Error::oracle(format!("non-numeric entry {x} in {key:?}")))
        })
        .collect()
}

fn field_matrix(v: &Value, key: &str) -> Result<Vec<Vec<f64>>> {
    let arr = v
        .get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| Error::oracle(format!("response lacks array field {key:?}")))?;
    arr.iter()
        .map(|row| {
            let row = row
                .as_array()
                .ok_or_else(|| Error::oracle(format!("{key:?} rows must be arrays")))?;
            row.iter()
                .map(|x| {
                    x.as_f64()
                        .ok_or_else(|| Error::oracle(format!("non-numeric entry {x} in {key:?}")))
                })
                .collect()
        })
        .collect()
}
