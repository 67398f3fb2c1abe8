use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{AgentMessage, HarnessMessage};
use super::{Agent, AgentError, Observation};
use crate::action::Action;

struct Session {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

/// Agent served by a subprocess speaking the JSON-lines protocol over stdio.
///
/// The process is started lazily and restarted on the next `reset` after it
/// crashes, times out or violates the protocol.
pub struct ExternalAgent {
    command: String,
    timeout: Duration,
    session: Option<Session>,
}

impl ExternalAgent {
    /// `command` is run through `sh -c`.
    pub fn new(command: impl Into<String>, timeout_s: f64) -> Self {
        ExternalAgent { command: command.into(), timeout: Duration::from_secs_f64(timeout_s), session: None }
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    fn spawn(&self) -> Result<Session, AgentError> {
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg(&self.command);
        // own process group, so the whole tree can be signalled
        #[cfg(unix)]
        std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| AgentError::Spawn { command: self.command.clone(), message: e.to_string() })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Session { child, stdin, lines: rx })
    }

    fn kill(&mut self) {
        if let Some(mut s) = self.session.take() {
            kill_tree(&mut s.child);
        }
    }

    /// Closes stdin and gives the process a moment to exit on its own.
    fn shutdown(&mut self) {
        if let Some(Session { mut child, stdin, .. }) = self.session.take() {
            drop(stdin);
            let deadline = Instant::now() + Duration::from_millis(500);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = child.try_wait() {
                    break;
                }
                thread::sleep(Duration::from_millis(5));
            }
            kill_tree(&mut child);
        }
    }

    fn session(&mut self) -> Result<&mut Session, AgentError> {
        if self.session.is_none() {
            self.session = Some(self.spawn()?);
        }
        Ok(self.session.as_mut().unwrap())
    }

    fn send(&mut self, msg: &HarnessMessage) -> Result<(), AgentError> {
        let line = msg.to_line();
        let result = self.session().and_then(|s| {
            s.stdin
                .write_all(line.as_bytes())
                .and_then(|_| s.stdin.flush())
                .map_err(|e| AgentError::Exited(format!("write failed: {e}")))
        });
        if result.is_err() {
            self.kill();
        }
        result
    }

    fn receive(&mut self) -> Result<AgentMessage, AgentError> {
        let timeout = self.timeout;
        let got = self.session()?.lines.recv_timeout(timeout);
        let line = match got {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => {
                self.kill();
                return Err(AgentError::Io(e));
            }
            Err(RecvTimeoutError::Timeout) => {
                self.kill();
                return Err(AgentError::Timeout { seconds: timeout.as_secs_f64() });
            }
            Err(RecvTimeoutError::Disconnected) => {
                let status = self
                    .session
                    .as_mut()
                    .and_then(|s| s.child.wait().ok())
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| "unknown status".into());
                self.kill();
                return Err(AgentError::Exited(status));
            }
        };
        match serde_json::from_str::<AgentMessage>(&line) {
            Ok(AgentMessage::Error { message }) => {
                self.kill();
                Err(AgentError::Protocol { message: format!("agent reported error: {message}"), raw: line })
            }
            Ok(msg) => Ok(msg),
            Err(e) => {
                self.kill();
                Err(AgentError::Protocol { message: e.to_string(), raw: line })
            }
        }
    }
}

impl Drop for ExternalAgent {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn kill_tree(child: &mut Child) {
    #[cfg(unix)]
    if let Ok(pid) = libc::pid_t::try_from(child.id()) {
        // SAFETY: signalling a process group we created; no memory is touched.
        unsafe {
            libc::kill(-pid, libc::SIGKILL);
        }
    }
    let _ = child.kill();
    let _ = child.wait();
}

impl Agent for ExternalAgent {
    fn id(&self) -> String {
        format!("external[{}]", self.command)
    }

    fn reset(&mut self, episode_id: &str, instruction: &str) -> Result<(), AgentError> {
        self.send(&HarnessMessage::Reset { episode_id: episode_id.to_owned(), instruction: instruction.to_owned() })
    }

    fn act(&mut self, observation: &Observation) -> Result<BTreeMap<Action, f64>, AgentError> {
        self.send(&HarnessMessage::Observe { observation: observation.clone() })?;
        match self.receive()? {
            AgentMessage::ActionDist { probs } => {
                let parsed: BTreeMap<Action, f64> = probs.iter().map(|(k, &v)| (Action::from(k.as_str()), v)).collect();
                if parsed.len() != probs.len() {
                    return Err(AgentError::Protocol {
                        message: "duplicate action keys".into(),
                        raw: serde_json::to_string(&probs).unwrap_or_default(),
                    });
                }
                Ok(parsed)
            }
            other => Err(AgentError::Protocol {
                message: "expected action_dist".into(),
                raw: serde_json::to_string(&other).unwrap_or_default(),
            }),
        }
    }

    fn force(&mut self, next_node: &str) -> Result<(), AgentError> {
        self.send(&HarnessMessage::Force { next_node: next_node.to_owned() })
    }

    fn finish(&mut self) -> Result<(), AgentError> {
        self.send(&HarnessMessage::Done)
    }
}
