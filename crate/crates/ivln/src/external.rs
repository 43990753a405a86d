//! Policies living in another process, spoken to with line-delimited JSON.
//!
//! Harness to policy:
//!
//! ```text
//! {"type":"reset","tour_id":"..."}
//! {"type":"episode","episode_id":"...","instruction":"...","episode_index":0}
//! {"type":"observe","pose":[x,y,z,heading],"steps_remaining":N,"crop":[...]|null,"passive":false,"neighbors":[...]}
//! ```
//!
//! Policy to harness: `{"type":"act","action":"forward|left|right|stop"}`,
//! `{"type":"act","action":"goto","node":"id"}`, or `{"type":"ack"}` after a
//! passive observation. Every reply must arrive within the step timeout.

use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use ivln_core::harness::{AgentAction, EpisodeContext, Observation, Policy};
use ivln_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum HarnessMessage {
    Reset {
        tour_id: String,
    },
    Episode {
        episode_id: String,
        instruction: String,
        episode_index: usize,
    },
    Observe {
        pose: [f64; 4],
        steps_remaining: usize,
        crop: Option<Vec<f32>>,
        passive: bool,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        neighbors: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PolicyMessage {
    Act {
        action: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        node: Option<String>,
    },
    Ack,
}

impl HarnessMessage {
    pub fn observe(obs: &Observation) -> Self {
        let p = obs.pose.position;
        HarnessMessage::Observe {
            pose: [p.x, p.y, p.z, obs.pose.heading()],
            steps_remaining: obs.steps_remaining,
            crop: obs.crop.as_ref().map(|c| c.data.clone()),
            passive: obs.passive,
            neighbors: obs.neighbors.clone(),
        }
    }
}

pub fn parse_action(line: &str) -> Result<AgentAction> {
    let violation = || Error::ProtocolViolation(format!("expected an act message, got: {line}"));
    match serde_json::from_str::<PolicyMessage>(line).map_err(|_| violation())? {
        PolicyMessage::Act { action, node } => match (action.as_str(), node) {
            ("forward", None) => Ok(AgentAction::Forward),
            ("left", None) => Ok(AgentAction::Left),
            ("right", None) => Ok(AgentAction::Right),
            ("stop", None) => Ok(AgentAction::Stop),
            ("goto", Some(n)) => Ok(AgentAction::GotoNode(n)),
            _ => Err(violation()),
        },
        PolicyMessage::Ack => Err(violation()),
    }
}

/// A bidirectional line channel with a receive timeout.
pub struct LineChannel {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
}

impl LineChannel {
    pub fn new<R: Read + Send + 'static>(reader: R, writer: Box<dyn Write + Send>, timeout: Duration) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Self {
            writer,
            lines: rx,
            timeout,
        }
    }

    pub fn send(&mut self, msg: &HarnessMessage) -> Result<()> {
        let mut text = serde_json::to_string(msg).expect("messages serialize");
        text.push('\n');
        self.writer
            .write_all(text.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::ProtocolViolation(format!("cannot write to policy: {e}")))
    }

    pub fn recv(&mut self) -> Result<String> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::ProtocolViolation(format!("cannot read from policy: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::PolicyTimeout {
                millis: self.timeout.as_millis() as u64,
            }),
            Err(RecvTimeoutError::Disconnected) => Err(Error::ProtocolViolation("policy closed its output".into())),
        }
    }
}

/// Bridges the harness to a policy over a [`LineChannel`].
pub struct ExternalPolicy {
    channel: LineChannel,
    child: Option<Child>,
}

impl ExternalPolicy {
    pub fn over(channel: LineChannel) -> Self {
        Self { channel, child: None }
    }

    /// Spawns `command` through the shell and talks over its stdin/stdout.
    pub fn spawn(command: &str, timeout: Duration) -> std::io::Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self {
            channel: LineChannel::new(stdout, Box::new(stdin), timeout),
            child: Some(child),
        })
    }

    /// Connects to a policy listening on a Unix socket.
    #[cfg(unix)]
    pub fn connect(path: &std::path::Path, timeout: Duration) -> std::io::Result<Self> {
        let stream = std::os::unix::net::UnixStream::connect(path)?;
        let reader = stream.try_clone()?;
        Ok(Self::over(LineChannel::new(reader, Box::new(stream), timeout)))
    }

    fn expect_ack(&mut self) -> Result<()> {
        let line = self.channel.recv()?;
        match serde_json::from_str::<PolicyMessage>(&line) {
            Ok(PolicyMessage::Ack) => Ok(()),
            _ => Err(Error::ProtocolViolation(format!("expected ack, got: {line}"))),
        }
    }
}

impl Drop for ExternalPolicy {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Policy for ExternalPolicy {
    fn reset(&mut self, tour_id: &str) -> Result<()> {
        self.channel.send(&HarnessMessage::Reset {
            tour_id: tour_id.into(),
        })
    }

    fn begin_episode(&mut self, ctx: &EpisodeContext<'_>) -> Result<()> {
        self.channel.send(&HarnessMessage::Episode {
            episode_id: ctx.episode.episode_id.clone(),
            instruction: ctx.episode.instruction.clone(),
            episode_index: ctx.index_in_tour,
        })
    }

    fn act(&mut self, obs: &Observation) -> Result<AgentAction> {
        self.channel.send(&HarnessMessage::observe(obs))?;
        let line = self.channel.recv()?;
        parse_action(&line)
    }

    fn observe_passive(&mut self, obs: &Observation) -> Result<()> {
        self.channel.send(&HarnessMessage::observe(obs))?;
        self.expect_ack()
    }
}
