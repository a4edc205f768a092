//! TCP telemetry service.
//!
//! Each client gets one duplex connection. The scheduler thread broadcasts
//! every `decimation`-th frame and all command acks; each subscriber has a
//! bounded queue drained by its own writer thread, and the oldest record is
//! dropped when the queue is full so the flight loop never waits on a
//! client. A writer blocked for longer than the write timeout drops its
//! subscriber. Lines read from a client are parsed as commands and passed to
//! the scheduler over a single channel; a malformed line closes that
//! connection only.

use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, Sender, TrySendError};

use crate::log::FlightLogWriter;
use crate::protocol::{OperatorCommand, ServerRecord};
use crate::runtime::{ExitReport, Runtime};

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Frames per streamed record; the runtime default is 100 (10 Hz).
    pub decimation: u64,
    /// Records buffered per subscriber before the oldest is dropped.
    pub queue_len: usize,
    pub write_timeout: Duration,
    /// Simulated seconds per wall second; 0 runs as fast as possible.
    pub realtime_factor: f64,
    /// Subscribers to wait for before the first tick.
    pub wait_for_clients: usize,
    /// Give up waiting for clients after this long.
    pub wait_timeout: Duration,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            decimation: 100,
            queue_len: 256,
            write_timeout: Duration::from_secs(1),
            realtime_factor: 0.0,
            wait_for_clients: 0,
            wait_timeout: Duration::from_secs(30),
        }
    }
}

struct Subscriber {
    id: u64,
    tx: Sender<Arc<str>>,
    // Second receiver handle used to evict the oldest record.
    rx: Receiver<Arc<str>>,
    alive: Arc<AtomicBool>,
}

#[derive(Default)]
struct Hub {
    subscribers: Vec<Subscriber>,
    next_id: u64,
    threads: Vec<JoinHandle<()>>,
}

impl Hub {
    fn broadcast(&mut self, line: Arc<str>) {
        self.subscribers.retain(|s| s.alive.load(Ordering::Acquire));
        for s in &self.subscribers {
            let mut msg = line.clone();
            loop {
                match s.tx.try_send(msg) {
                    Ok(()) => break,
                    Err(TrySendError::Full(m)) => {
                        let _ = s.rx.try_recv();
                        msg = m;
                    }
                    Err(TrySendError::Disconnected(_)) => break,
                }
            }
        }
    }

    fn live(&self) -> usize {
        self.subscribers.iter().filter(|s| s.alive.load(Ordering::Acquire)).count()
    }
}

/// Telemetry server bound to a socket. Dropping it stops accepting clients.
pub struct TelemetryServer {
    addr: SocketAddr,
    hub: Arc<Mutex<Hub>>,
    commands: Receiver<OperatorCommand>,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    options: ServeOptions,
}

impl TelemetryServer {
    pub fn bind(addr: &str, options: ServeOptions) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let hub = Arc::new(Mutex::new(Hub::default()));
        let (cmd_tx, commands) = unbounded();
        let stop = Arc::new(AtomicBool::new(false));
        let acceptor = {
            let (hub, stop, options) = (hub.clone(), stop.clone(), options.clone());
            std::thread::Builder::new()
                .name("telemetry-accept".into())
                .spawn(move || accept_loop(listener, hub, cmd_tx, stop, options))?
        };
        Ok(Self { addr, hub, commands, stop, acceptor: Some(acceptor), options })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn subscribers(&self) -> usize {
        self.hub.lock().expect("hub lock").live()
    }

    fn broadcast(&self, record: &ServerRecord) {
        let line: Arc<str> = match serde_json::to_string(record) {
            Ok(s) => s.into(),
            Err(_) => return,
        };
        self.hub.lock().expect("hub lock").broadcast(line);
    }

    /// Runs the scenario to completion while streaming telemetry and taking
    /// commands. Optionally logs every frame.
    pub fn run(&self, runtime: &mut Runtime, mut log: Option<&mut FlightLogWriter>) -> ExitReport {
        let deadline = Instant::now() + self.options.wait_timeout;
        while self.subscribers() < self.options.wait_for_clients && Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(5));
        }
        let start = Instant::now();
        let decimation = self.options.decimation.max(1);
        while !runtime.finished() {
            while let Ok(mut cmd) = self.commands.try_recv() {
                cmd.t_received = Some(runtime.time());
                let ack = runtime.handle_command(&cmd);
                self.broadcast(&ServerRecord::Ack(ack));
            }
            let frame = runtime.tick();
            if let Some(log) = log.as_deref_mut() {
                log.write_frame(&frame);
                runtime.set_logging_disabled(log.disabled());
            }
            if frame.tick % decimation == 0 {
                self.broadcast(&ServerRecord::Telemetry(frame.clone()));
            }
            if self.options.realtime_factor > 0.0 {
                let due = Duration::from_secs_f64(frame.t / self.options.realtime_factor);
                if let Some(wait) = due.checked_sub(start.elapsed()) {
                    std::thread::sleep(wait);
                }
            }
        }
        if let Some(log) = log {
            log.finish();
        }
        runtime.report()
    }

    /// Stops accepting, lets writers drain their queues and closes all
    /// connections.
    pub fn shutdown(mut self) {
        self.close();
    }

    fn close(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        let threads = {
            let mut hub = self.hub.lock().expect("hub lock");
            hub.subscribers.clear();
            std::mem::take(&mut hub.threads)
        };
        for t in threads {
            let _ = t.join();
        }
    }
}

impl Drop for TelemetryServer {
    fn drop(&mut self) {
        self.close();
    }
}

fn accept_loop(listener: TcpListener, hub: Arc<Mutex<Hub>>, commands: Sender<OperatorCommand>, stop: Arc<AtomicBool>, options: ServeOptions) {
    while !stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, _)) => {
                if let Err(e) = register(stream, &hub, &commands, &stop, &options) {
                    eprintln!("telemetry: dropping client: {e}");
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(2)),
            Err(e) => {
                eprintln!("telemetry: accept failed: {e}");
                std::thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn register(
    stream: TcpStream,
    hub: &Arc<Mutex<Hub>>,
    commands: &Sender<OperatorCommand>,
    stop: &Arc<AtomicBool>,
    options: &ServeOptions,
) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_write_timeout(Some(options.write_timeout))?;
    let reader_stream = stream.try_clone()?;
    let (tx, rx) = bounded::<Arc<str>>(options.queue_len.max(1));
    let alive = Arc::new(AtomicBool::new(true));
    let mut h = hub.lock().expect("hub lock");
    let id = h.next_id;
    h.next_id += 1;

    let writer = {
        let (rx, alive) = (rx.clone(), alive.clone());
        let mut stream = stream;
        std::thread::Builder::new().name(format!("telemetry-write-{id}")).spawn(move || {
            let mut out = std::io::BufWriter::new(&stream);
            for line in rx.iter() {
                let res = out.write_all(line.as_bytes()).and_then(|_| out.write_all(b"\n"));
                let res = res.and_then(|_| if rx.is_empty() { out.flush() } else { Ok(()) });
                if res.is_err() || !alive.load(Ordering::Acquire) {
                    break;
                }
            }
            let _ = out.flush();
            drop(out);
            alive.store(false, Ordering::Release);
            let _ = stream.flush();
            let _ = stream.shutdown(Shutdown::Both);
        })?
    };
    let reader = {
        let (alive, commands, stop) = (alive.clone(), commands.clone(), stop.clone());
        std::thread::Builder::new().name(format!("telemetry-read-{id}")).spawn(move || {
            let _ = reader_stream.set_read_timeout(Some(Duration::from_millis(100)));
            let mut input = BufReader::new(&reader_stream);
            let mut line = String::new();
            loop {
                if stop.load(Ordering::Acquire) || !alive.load(Ordering::Acquire) {
                    break;
                }
                match input.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        let text = line.trim();
                        if !text.is_empty() {
                            match OperatorCommand::parse(text) {
                                Ok(cmd) => {
                                    let _ = commands.send(cmd);
                                }
                                Err(_) => {
                                    alive.store(false, Ordering::Release);
                                    let _ = reader_stream.shutdown(Shutdown::Both);
                                    break;
                                }
                            }
                        }
                        line.clear();
                    }
                    Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
                    Err(_) => break,
                }
            }
        })?
    };
    h.subscribers.push(Subscriber { id, tx, rx, alive });
    h.threads.push(writer);
    h.threads.push(reader);
    Ok(())
}

impl std::fmt::Debug for TelemetryServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let ids: Vec<u64> = self.hub.lock().map(|h| h.subscribers.iter().map(|s| s.id).collect()).unwrap_or_default();
        f.debug_struct("TelemetryServer").field("addr", &self.addr).field("subscribers", &ids).finish()
    }
}
