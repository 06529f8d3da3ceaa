//! Child-process execution with a wall-clock deadline and a memory cap.
//!
//! Each child runs in its own process group; on timeout or memory overrun
//! the whole group receives SIGKILL so forked grandchildren die too.
//!
//! Two memory-limit modes exist because sanitizer runtimes reserve terabytes
//! of virtual address space for shadow memory: `RLIMIT_AS` works for plain
//! processes (the compiler) but would kill every instrumented binary at
//! startup, so those are watched by resident-set sampling instead.

use std::ffi::OsString;
use std::io::{self, BufRead, BufReader, Read};
use std::os::unix::process::CommandExt;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

const POLL_INTERVAL: Duration = Duration::from_millis(5);

/// Default cap on captured child output per run.
pub const DEFAULT_OUTPUT_CAP: usize = 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryLimit {
    Unlimited,
    /// `RLIMIT_AS` applied before exec.
    AddressSpace(u64),
    /// Parent samples the child's resident set and kills the group above it.
    ResidentSet(u64),
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub program: PathBuf,
    pub args: Vec<OsString>,
    pub cwd: PathBuf,
    pub env: Vec<(String, String)>,
    pub timeout: Duration,
    pub memory: MemoryLimit,
    pub output_cap: usize,
}

impl RunSpec {
    pub fn new(program: impl Into<PathBuf>, cwd: impl Into<PathBuf>) -> Self {
        RunSpec {
            program: program.into(),
            args: Vec::new(),
            cwd: cwd.into(),
            env: Vec::new(),
            timeout: Duration::from_secs(60),
            memory: MemoryLimit::Unlimited,
            output_cap: DEFAULT_OUTPUT_CAP,
        }
    }

    pub fn arg(mut self, arg: impl Into<OsString>) -> Self {
        self.args.push(arg.into());
        self
    }

    pub fn args<I, S>(mut self, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<OsString>,
    {
        self.args.extend(args.into_iter().map(Into::into));
        self
    }

    pub fn env(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.env.push((key.into(), value.into()));
        self
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn memory(mut self, memory: MemoryLimit) -> Self {
        self.memory = memory;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Exited(i32),
    Signaled(i32),
    TimedOut,
    MemoryExceeded,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub termination: Termination,
    /// stdout and stderr interleaved in arrival order; a `[stdout]` or
    /// `[stderr]` line marks each switch of stream.
    pub transcript: String,
    pub stdout: String,
    pub stderr: String,
    pub output_truncated: bool,
    pub wall_time: Duration,
    pub peak_rss_bytes: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Stream {
    Stdout,
    Stderr,
}

struct Capture {
    transcript: String,
    stdout: String,
    stderr: String,
    last: Option<Stream>,
    cap: usize,
    truncated: bool,
}

impl Capture {
    fn push(&mut self, stream: Stream, line: &[u8]) {
        if self.transcript.len() + line.len() > self.cap {
            self.truncated = true;
            return;
        }
        let mut text = String::from_utf8_lossy(line).into_owned();
        if !text.ends_with('\n') {
            text.push('\n');
        }
        if self.last != Some(stream) {
            self.transcript.push_str(match stream {
                Stream::Stdout => "[stdout]\n",
                Stream::Stderr => "[stderr]\n",
            });
            self.last = Some(stream);
        }
        self.transcript.push_str(&text);
        match stream {
            Stream::Stdout => self.stdout.push_str(&text),
            Stream::Stderr => self.stderr.push_str(&text),
        }
    }
}

fn spawn_reader<R: Read + Send + 'static>(
    pipe: R,
    stream: Stream,
    capture: Arc<Mutex<Capture>>,
) -> thread::JoinHandle<()> {
    thread::spawn(move || {
        let mut reader = BufReader::new(pipe);
        let mut line = Vec::new();
        loop {
            line.clear();
            match reader.read_until(b'\n', &mut line) {
                Ok(0) | Err(_) => break,
                Ok(_) => capture.lock().unwrap().push(stream, &line),
            }
        }
    })
}

/// Runs a child to completion (or until killed). Spawn failures, such as a
/// missing executable, surface as `Err`.
pub fn run(spec: &RunSpec) -> io::Result<RunOutput> {
    let mut command = Command::new(&spec.program);
    command
        .args(&spec.args)
        .current_dir(&spec.cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    for (key, value) in &spec.env {
        command.env(key, value);
    }
    let address_limit = match spec.memory {
        MemoryLimit::AddressSpace(bytes) => Some(bytes),
        _ => None,
    };
    // SAFETY: the closure only calls async-signal-safe setrlimit.
    unsafe {
        command.pre_exec(move || {
            let no_core = libc::rlimit {
                rlim_cur: 0,
                rlim_max: 0,
            };
            libc::setrlimit(libc::RLIMIT_CORE, &no_core);
            if let Some(bytes) = address_limit {
                let limit = libc::rlimit {
                    rlim_cur: bytes as libc::rlim_t,
                    rlim_max: bytes as libc::rlim_t,
                };
                if libc::setrlimit(libc::RLIMIT_AS, &limit) != 0 {
                    return Err(io::Error::last_os_error());
                }
            }
            Ok(())
        });
    }

    let start = Instant::now();
    let mut child = command.spawn()?;
    let pid = child.id() as libc::pid_t;
    let capture = Arc::new(Mutex::new(Capture {
        transcript: String::new(),
        stdout: String::new(),
        stderr: String::new(),
        last: None,
        cap: spec.output_cap,
        truncated: false,
    }));
    let readers = [
        spawn_reader(
            child.stdout.take().expect("piped"),
            Stream::Stdout,
            capture.clone(),
        ),
        spawn_reader(
            child.stderr.take().expect("piped"),
            Stream::Stderr,
            capture.clone(),
        ),
    ];

    let rss_limit = match spec.memory {
        MemoryLimit::ResidentSet(bytes) => Some(bytes),
        _ => None,
    };
    let mut sampled_peak = 0u64;
    let (termination, rusage) = loop {
        if let Some((status, usage)) = wait4(pid, libc::WNOHANG)? {
            break (decode_status(status), Some(usage));
        }
        if start.elapsed() >= spec.timeout {
            kill_group(pid);
            let usage = wait4(pid, 0)?.map(|(_, u)| u);
            break (Termination::TimedOut, usage);
        }
        if let Some(limit) = rss_limit {
            if let Some(rss) = resident_bytes(pid) {
                sampled_peak = sampled_peak.max(rss);
                if rss > limit {
                    kill_group(pid);
                    let usage = wait4(pid, 0)?.map(|(_, u)| u);
                    break (Termination::MemoryExceeded, usage);
                }
            }
        }
        thread::sleep(POLL_INTERVAL);
    };
    let wall_time = start.elapsed();
    // Reap stragglers that might still hold the pipes open.
    kill_group(pid);
    for reader in readers {
        let _ = reader.join();
    }
    drop(child);

    let peak_rss_bytes = rusage
        .map(|u| u.ru_maxrss.max(0) as u64 * 1024)
        .map(|p| p.max(sampled_peak))
        .filter(|p| *p > 0);
    let capture = Arc::try_unwrap(capture)
        .ok()
        .expect("reader threads joined")
        .into_inner()
        .unwrap();
    Ok(RunOutput {
        termination,
        transcript: capture.transcript,
        stdout: capture.stdout,
        stderr: capture.stderr,
        output_truncated: capture.truncated,
        wall_time,
        peak_rss_bytes,
    })
}

fn wait4(pid: libc::pid_t, flags: libc::c_int) -> io::Result<Option<(libc::c_int, libc::rusage)>> {
    let mut status: libc::c_int = 0;
    // SAFETY: rusage is plain old data; zeroed is a valid initial value.
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    loop {
        // SAFETY: valid pointers to local stack storage.
        let rc = unsafe { libc::wait4(pid, &mut status, flags, &mut usage) };
        if rc == pid {
            return Ok(Some((status, usage)));
        }
        if rc == 0 {
            return Ok(None);
        }
        let err = io::Error::last_os_error();
        if err.kind() != io::ErrorKind::Interrupted {
            return Err(err);
        }
    }
}

fn decode_status(status: libc::c_int) -> Termination {
    if libc::WIFEXITED(status) {
        Termination::Exited(libc::WEXITSTATUS(status))
    } else if libc::WIFSIGNALED(status) {
        Termination::Signaled(libc::WTERMSIG(status))
    } else {
        Termination::Exited(-1)
    }
}

fn kill_group(pgid: libc::pid_t) {
    // SAFETY: signalling a process group we created; ESRCH is harmless.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
}

fn resident_bytes(pid: libc::pid_t) -> Option<u64> {
    let status = std::fs::read_to_string(format!("/proc/{pid}/status")).ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

pub fn signal_name(signal: i32) -> &'static str {
    match signal {
        libc::SIGSEGV => "SIGSEGV",
        libc::SIGBUS => "SIGBUS",
        libc::SIGILL => "SIGILL",
        libc::SIGFPE => "SIGFPE",
        libc::SIGABRT => "SIGABRT",
        libc::SIGKILL => "SIGKILL",
        libc::SIGTERM => "SIGTERM",
        _ => "signal",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str) -> RunSpec {
        RunSpec::new("/bin/sh", std::env::temp_dir())
            .arg("-c")
            .arg(script)
    }

    #[test]
    fn captures_exit_code_and_streams() {
        let out = run(&sh("echo out; echo err 1>&2; exit 3")).unwrap();
        assert_eq!(out.termination, Termination::Exited(3));
        assert_eq!(out.stdout, "out\n");
        assert_eq!(out.stderr, "err\n");
        assert!(out.transcript.contains("[stdout]\nout\n"));
        assert!(out.transcript.contains("[stderr]\nerr\n"));
    }

    #[test]
    fn timeout_kills_the_whole_group() {
        let spec = sh("sleep 30 & sleep 30; echo never").timeout(Duration::from_millis(300));
        let started = Instant::now();
        let out = run(&spec).unwrap();
        assert_eq!(out.termination, Termination::TimedOut);
        assert!(out.wall_time >= Duration::from_millis(300));
        // The backgrounded sleep would keep stdout open if it survived.
        assert!(started.elapsed() < Duration::from_secs(10));
        assert!(!out.stdout.contains("never"));
    }

    #[test]
    fn missing_program_is_spawn_error() {
        let spec = RunSpec::new("/definitely/not/here", std::env::temp_dir());
        assert!(run(&spec).is_err());
    }

    #[test]
    fn stdin_is_closed() {
        let out = run(&sh("cat; echo done")).unwrap();
        assert_eq!(out.stdout, "done\n");
    }

    #[test]
    fn output_cap_truncates() {
        let mut spec = sh("yes | head -n 10000");
        spec.output_cap = 1000;
        let out = run(&spec).unwrap();
        assert!(out.output_truncated);
        assert!(out.transcript.len() <= 1000);
    }

    #[test]
    fn signal_death_is_reported() {
        let out = run(&sh("kill -SEGV $$")).unwrap();
        assert_eq!(out.termination, Termination::Signaled(libc::SIGSEGV));
    }
}
