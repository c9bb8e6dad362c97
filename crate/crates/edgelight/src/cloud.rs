//! Cloud configuration stub and the edge-side sync client.
//!
//! The cloud's only job is to hand out the config document, so the stub is
//! a minimal HTTP/1.1 file server: any GET returns the current bytes of the
//! configured file. The edge fetches it with an equally minimal client,
//! validates the document, and atomically replaces its local copy; any
//! failure leaves the local configuration in force. Serving never waits on
//! the cloud.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::config::ConfigDoc;
use crate::{Error, Result};

/// Running cloud stub.
pub struct CloudStub {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl CloudStub {
    /// Binds and serves `config_path` until stopped or dropped.
    pub fn start(listen: &str, config_path: &Path) -> Result<CloudStub> {
        let listener = TcpListener::bind(listen)
            .map_err(|e| Error::internal(format!("cloud bind {listen}: {e}")))?;
        listener
            .set_nonblocking(true)
            .map_err(|e| Error::internal(format!("cloud listener: {e}")))?;
        let addr = listener.local_addr().map_err(|e| Error::internal(e.to_string()))?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_thread = stop.clone();
        let path: PathBuf = config_path.to_path_buf();
        let join = std::thread::spawn(move || {
            while !stop_thread.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let _ = serve_one(stream, &path);
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(10));
                    }
                    Err(_) => break,
                }
            }
        });
        log::info!("cloud stub listening on {addr}");
        Ok(CloudStub { addr, stop, join: Some(join) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

impl Drop for CloudStub {
    fn drop(&mut self) {
        self.stop();
    }
}

fn serve_one(stream: TcpStream, path: &Path) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_millis(2_000)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    // Drain headers until the blank line; the request body is irrelevant.
    loop {
        let mut header = String::new();
        if reader.read_line(&mut header)? == 0 || header == "\r\n" || header == "\n" {
            break;
        }
    }
    let mut stream = stream;
    if !request_line.starts_with("GET ") {
        let resp = "HTTP/1.1 405 Method Not Allowed\r\ncontent-length: 0\r\nconnection: close\r\n\r\n";
        return stream.write_all(resp.as_bytes());
    }
    match std::fs::read(path) {
        Ok(body) => {
            let head = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
                body.len()
            );
            stream.write_all(head.as_bytes())?;
            stream.write_all(&body)
        }
        Err(_) => {
            let resp = "HTTP/1.1 404 Not Found\r\ncontent-length: 0\r\nconnection: close\r\n\r\n";
            stream.write_all(resp.as_bytes())
        }
    }
}

/// Byte counts for one sync attempt, the basis of the bandwidth accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CloudTraffic {
    pub bytes_tx: u64,
    pub bytes_rx: u64,
}

/// Fetches the config document from the stub. Network errors come back as
/// `Internal`, malformed documents as `Validation`; traffic is reported
/// either way so callers can account for failed attempts too.
pub fn fetch_config(endpoint: &str, timeout: Duration, traffic: &mut CloudTraffic) -> Result<ConfigDoc> {
    let addr = endpoint
        .to_socket_addrs()
        .map_err(|e| Error::validation(format!("cloud endpoint {endpoint}: {e}")))?
        .next()
        .ok_or_else(|| Error::validation(format!("cloud endpoint {endpoint}: no address")))?;
    let mut stream = TcpStream::connect_timeout(&addr, timeout)
        .map_err(|e| Error::internal(format!("cloud {endpoint}: {e}")))?;
    stream.set_read_timeout(Some(timeout)).map_err(|e| Error::internal(e.to_string()))?;
    stream.set_write_timeout(Some(timeout)).map_err(|e| Error::internal(e.to_string()))?;
    let request = format!("GET /config HTTP/1.1\r\nhost: {endpoint}\r\nconnection: close\r\n\r\n");
    stream
        .write_all(request.as_bytes())
        .map_err(|e| Error::internal(format!("cloud {endpoint}: {e}")))?;
    traffic.bytes_tx += request.len() as u64;

    let mut raw = Vec::new();
    stream
        .read_to_end(&mut raw)
        .map_err(|e| Error::internal(format!("cloud {endpoint}: {e}")))?;
    traffic.bytes_rx += raw.len() as u64;

    let text = String::from_utf8_lossy(&raw);
    let (head, body) = text
        .split_once("\r\n\r\n")
        .ok_or_else(|| Error::internal(format!("cloud {endpoint}: truncated response")))?;
    let status = head.lines().next().unwrap_or_default();
    if !status.contains(" 200 ") {
        return Err(Error::internal(format!("cloud {endpoint}: {status}")));
    }
    ConfigDoc::parse(body)
}

/// Outcome of one configuration sync attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum SyncOutcome {
    /// No cloud endpoint configured; local config is authoritative.
    Disabled,
    /// Cloud delivered a valid document; the local file was replaced.
    Synced { changed: bool },
    /// Cloud unreachable or its document invalid; local config retained.
    SkippedOffline { reason: String },
}

/// Tries to refresh `local_path` from the cloud. Always returns a usable
/// configuration: the fetched one on success, the local one otherwise.
pub fn config_sync(
    endpoint: Option<&str>,
    local_path: &Path,
    timeout: Duration,
    traffic: &mut CloudTraffic,
) -> Result<(ConfigDoc, SyncOutcome)> {
    let local = ConfigDoc::load(local_path)?;
    let Some(endpoint) = endpoint else {
        return Ok((local, SyncOutcome::Disabled));
    };
    match fetch_config(endpoint, timeout, traffic) {
        Ok(remote) => {
            let changed = remote != local;
            if changed {
                remote.save(local_path)?;
            }
            Ok((remote, SyncOutcome::Synced { changed }))
        }
        Err(e) => Ok((local, SyncOutcome::SkippedOffline { reason: e.to_string() })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, name: &str, doc: &ConfigDoc) -> PathBuf {
        let path = dir.join(name);
        doc.save(&path).unwrap();
        path
    }

    #[test]
    fn stub_serves_and_client_fetches() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "config.json", &ConfigDoc::default());
        let stub = CloudStub::start("127.0.0.1:0", &path).unwrap();
        let mut traffic = CloudTraffic::default();
        let doc =
            fetch_config(&stub.addr().to_string(), Duration::from_millis(500), &mut traffic).unwrap();
        assert_eq!(doc, ConfigDoc::default());
        assert!(traffic.bytes_tx > 0 && traffic.bytes_rx > 0);
    }

    #[test]
    fn sync_offline_keeps_local() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "config.json", &ConfigDoc::default());
        let mut traffic = CloudTraffic::default();
        // Port 1 on localhost refuses connections.
        let (doc, outcome) = config_sync(
            Some("127.0.0.1:1"),
            &path,
            Duration::from_millis(200),
            &mut traffic,
        )
        .unwrap();
        assert_eq!(doc, ConfigDoc::default());
        assert!(matches!(outcome, SyncOutcome::SkippedOffline { .. }));
    }

    #[test]
    fn sync_rejects_invalid_remote_and_keeps_local() {
        let dir = tempfile::tempdir().unwrap();
        let local_path = write_config(dir.path(), "local.json", &ConfigDoc::default());
        // Remote document violates the threshold ordering invariant.
        let bad = dir.path().join("remote.json");
        std::fs::write(&bad, r#"{"schema":1,"controller":{"c1":0.5,"c3":0.2}}"#).unwrap();
        let stub = CloudStub::start("127.0.0.1:0", &bad).unwrap();
        let mut traffic = CloudTraffic::default();
        let (doc, outcome) = config_sync(
            Some(&stub.addr().to_string()),
            &local_path,
            Duration::from_millis(500),
            &mut traffic,
        )
        .unwrap();
        assert_eq!(doc, ConfigDoc::default());
        assert!(matches!(outcome, SyncOutcome::SkippedOffline { .. }));
        // Local file untouched.
        assert_eq!(ConfigDoc::load(&local_path).unwrap(), ConfigDoc::default());
    }

    #[test]
    fn sync_applies_valid_remote_update() {
        let dir = tempfile::tempdir().unwrap();
        let local_path = write_config(dir.path(), "local.json", &ConfigDoc::default());
        let mut remote = ConfigDoc::default();
        remote.controller.c3 = 0.30;
        let remote_path = write_config(dir.path(), "remote.json", &remote);
        let stub = CloudStub::start("127.0.0.1:0", &remote_path).unwrap();
        let mut traffic = CloudTraffic::default();
        let (doc, outcome) = config_sync(
            Some(&stub.addr().to_string()),
            &local_path,
            Duration::from_millis(500),
            &mut traffic,
        )
        .unwrap();
        assert_eq!(doc.controller.c3, 0.30);
        assert_eq!(outcome, SyncOutcome::Synced { changed: true });
        assert_eq!(ConfigDoc::load(&local_path).unwrap(), remote);
    }
}
