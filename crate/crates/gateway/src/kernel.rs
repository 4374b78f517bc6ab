use std::sync::mpsc::{self, RecvTimeoutError, TryRecvError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use nin_dsm::sim::{LogRecord, VirtualTime};
use nin_dsm::testbed::{Command, CommandError, StateSnapshot, Testbed};
use serde::Serialize;
use tokio::sync::{broadcast, oneshot, watch};

/// Log records carried in each published snapshot.
pub const SNAPSHOT_LOG_TAIL: usize = 50;

/// Frames buffered per stream subscriber before the oldest are dropped.
pub const FRAME_BUFFER: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelOptions {
    /// Virtual milliseconds per wall-clock millisecond; `None` runs as fast
    /// as possible.
    pub pace: Option<f64>,
}

impl KernelOptions {
    pub const AS_FAST_AS_POSSIBLE: KernelOptions = KernelOptions { pace: None };
    pub const REALTIME: KernelOptions = KernelOptions { pace: Some(1.0) };
}

/// One item of the live stream. `seq` numbers every frame a kernel
/// publishes, so subscribers can line their streams up.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Frame {
    pub seq: u64,
    #[serde(flatten)]
    pub body: FrameBody,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum FrameBody {
    Record(LogRecord),
    Snapshot {
        t: VirtualTime,
        plan_version: u32,
        log_len: usize,
    },
}

impl FrameBody {
    pub fn event_name(&self) -> &'static str {
        match self {
            FrameBody::Record(_) => "log",
            FrameBody::Snapshot { .. } => "snapshot",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Accepted {
    /// Virtual time the resulting event is scheduled for; absent for
    /// shutdown.
    pub at: Option<VirtualTime>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Rejected {
    Invalid(CommandError),
    Finished,
    Stopped,
}

impl std::fmt::Display for Rejected {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejected::Invalid(e) => write!(f, "{e}"),
            Rejected::Finished => f.write_str("the run has reached its duration"),
            Rejected::Stopped => f.write_str("the kernel has stopped"),
        }
    }
}

pub type CommandReply = Result<Accepted, Rejected>;

struct CommandRequest {
    command: Command,
    reply: oneshot::Sender<CommandReply>,
}

/// Cheap, cloneable access to a running kernel.
#[derive(Clone)]
pub struct KernelLink {
    commands: mpsc::Sender<CommandRequest>,
    snapshots: watch::Receiver<Arc<StateSnapshot>>,
    frames: Arc<broadcast::Receiver<Frame>>,
}

impl KernelLink {
    pub fn snapshot(&self) -> Arc<StateSnapshot> {
        self.snapshots.borrow().clone()
    }

    pub fn watch_snapshots(&self) -> watch::Receiver<Arc<StateSnapshot>> {
        self.snapshots.clone()
    }

    /// A fresh stream subscription that starts with the next frame.
    pub fn subscribe(&self) -> broadcast::Receiver<Frame> {
        self.frames.resubscribe()
    }

    /// Queues a command for the kernel and waits for its verdict.
    pub async fn command(&self, command: Command) -> CommandReply {
        let (reply, verdict) = oneshot::channel();
        if self
            .commands
            .send(CommandRequest { command, reply })
            .is_err()
        {
            return Err(Rejected::Stopped);
        }
        verdict.await.unwrap_or(Err(Rejected::Stopped))
    }
}

pub struct KernelHandle {
    pub link: KernelLink,
    thread: JoinHandle<Testbed>,
    done: watch::Receiver<bool>,
}

impl KernelHandle {
    /// A future that resolves once the kernel thread has stopped.
    pub fn stopped(&self) -> impl std::future::Future<Output = ()> + Send + 'static {
        let mut done = self.done.clone();
        async move {
            let _ = done.wait_for(|d| *d).await;
        }
    }

    /// Waits for the kernel thread and hands back the final testbed.
    pub fn join(self) -> Testbed {
        self.thread.join().expect("kernel thread panicked")
    }
}

/// Starts the kernel loop on its own thread. The loop runs the scenario to
/// its duration, then keeps answering commands (with a rejection) until a
/// shutdown command arrives or every [`KernelLink`] is dropped.
pub fn spawn(testbed: Testbed, options: KernelOptions) -> KernelHandle {
    let (commands, inbox) = mpsc::channel();
    let (snap_tx, snapshots) = watch::channel(Arc::new(testbed.snapshot(SNAPSHOT_LOG_TAIL)));
    let (frame_tx, frames) = broadcast::channel(FRAME_BUFFER);
    let (done_tx, done) = watch::channel(false);
    let link = KernelLink {
        commands,
        snapshots,
        frames: Arc::new(frames),
    };
    let thread = thread::Builder::new()
        .name("kernel".into())
        .spawn(move || {
            let mut kernel = Kernel {
                tb: testbed,
                options,
                start: Instant::now(),
                snap_tx,
                frame_tx,
                seq: 0,
                published: 0,
            };
            kernel.run(inbox);
            let _ = done_tx.send(true);
            kernel.tb
        })
        .expect("spawn kernel thread");
    KernelHandle { link, thread, done }
}

struct Kernel {
    tb: Testbed,
    options: KernelOptions,
    start: Instant,
    snap_tx: watch::Sender<Arc<StateSnapshot>>,
    frame_tx: broadcast::Sender<Frame>,
    seq: u64,
    /// Log records already sent as frames.
    published: usize,
}

impl Kernel {
    fn run(&mut self, inbox: mpsc::Receiver<CommandRequest>) {
        let mut inbox_open = true;
        loop {
            let next = self.next_due();
            let request = match (next, inbox_open) {
                (None, false) => break,
                (None, true) => match inbox.recv() {
                    Ok(r) => Some(r),
                    Err(_) => break,
                },
                (Some(_), false) => None,
                (Some(t), true) => match self.wall_wait(t) {
                    None => match inbox.try_recv() {
                        Ok(r) => Some(r),
                        Err(TryRecvError::Empty) => None,
                        Err(TryRecvError::Disconnected) => {
                            inbox_open = false;
                            None
                        }
                    },
                    Some(wait) => match inbox.recv_timeout(wait) {
                        Ok(r) => Some(r),
                        Err(RecvTimeoutError::Timeout) => continue,
                        Err(RecvTimeoutError::Disconnected) => {
                            inbox_open = false;
                            continue;
                        }
                    },
                },
            };
            match request {
                Some(CommandRequest {
                    command: Command::Shutdown,
                    reply,
                }) => {
                    let _ = reply.send(Ok(Accepted { at: None }));
                    break;
                }
                Some(CommandRequest { command, reply }) => {
                    let verdict = self.apply(command);
                    let _ = reply.send(verdict);
                }
                None => match self.tb.next_event_time() {
                    Some(t) if t <= self.tb.duration_ms() => {
                        self.tb.step();
                        self.publish();
                    }
                    _ => {
                        // Nothing left before the end: park the clock on it.
                        self.tb.run_until(self.tb.duration_ms());
                        self.publish();
                    }
                },
            }
        }
    }

    /// Virtual time of the next thing the loop has to do, or `None` once
    /// the run is over.
    fn next_due(&self) -> Option<VirtualTime> {
        let end = self.tb.duration_ms();
        match self.tb.next_event_time() {
            Some(t) if t <= end => Some(t),
            _ if self.tb.now() < end => Some(end),
            _ => None,
        }
    }

    /// How long to sleep before virtual time `t` is due on the wall clock.
    fn wall_wait(&self, t: VirtualTime) -> Option<Duration> {
        let pace = self.options.pace?;
        let due = Duration::from_secs_f64(t as f64 / pace / 1000.0);
        due.checked_sub(self.start.elapsed())
            .filter(|d| !d.is_zero())
    }

    fn wall_now(&self) -> Option<VirtualTime> {
        let pace = self.options.pace?;
        Some((self.start.elapsed().as_secs_f64() * 1000.0 * pace) as VirtualTime)
    }

    fn apply(&mut self, command: Command) -> CommandReply {
        if self.tb.now() >= self.tb.duration_ms() {
            return Err(Rejected::Finished);
        }
        // In paced mode the kernel may be idle between events; catch the
        // clock up so the command lands at the operator's moment.
        if let Some(wall) = self.wall_now() {
            let target = wall.min(self.tb.duration_ms());
            while self.tb.next_event_time().is_some_and(|t| t <= target) {
                self.tb.step();
                self.publish();
            }
            self.tb.run_until(target);
            if self.tb.now() >= self.tb.duration_ms() {
                return Err(Rejected::Finished);
            }
        }
        let ev = self.tb.inject(command).map_err(Rejected::Invalid)?;
        self.publish();
        Ok(Accepted { at: Some(ev.time) })
    }

    fn publish(&mut self) {
        let records = self.tb.log().records();
        let logged = records.len() > self.published;
        if !logged && self.snap_tx.borrow().t == self.tb.now() {
            return;
        }
        for record in &records[self.published..] {
            self.seq += 1;
            let _ = self.frame_tx.send(Frame {
                seq: self.seq,
                body: FrameBody::Record(record.clone()),
            });
        }
        self.published = records.len();
        let snapshot = Arc::new(self.tb.snapshot(SNAPSHOT_LOG_TAIL));
        // Only announce snapshots that carry something new; clock-only
        // moves just refresh the cell.
        if logged {
            self.seq += 1;
            let _ = self.frame_tx.send(Frame {
                seq: self.seq,
                body: FrameBody::Snapshot {
                    t: snapshot.t,
                    plan_version: snapshot.plan.version,
                    log_len: snapshot.log_len,
                },
            });
        }
        self.snap_tx.send_replace(snapshot);
    }
}
