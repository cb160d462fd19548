//! The trusted directory server: private nodes register over TCP with a
//! heartbeat and outside machines ask it for the list of live node
//! addresses. The registry is soft state, rebuilt from heartbeats, so
//! nothing is persisted.

use crate::protocol::{self, DirectoryRequest, DirectoryResponse, NodeDescriptor};
use std::io::{BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

#[derive(Debug)]
struct Entry {
    node: NodeDescriptor,
    last_seen: Instant,
}

/// Registration-ordered registry with TTL-based liveness.
#[derive(Debug, Default)]
pub struct Registry {
    entries: Mutex<Vec<Entry>>,
}

impl Registry {
    pub fn register(&self, node: NodeDescriptor) {
        let mut entries = self.entries.lock().unwrap();
        match entries.iter_mut().find(|e| e.node == node) {
            Some(entry) => entry.last_seen = Instant::now(),
            None => entries.push(Entry {
                node,
                last_seen: Instant::now(),
            }),
        }
    }

    /// Live entries in registration order; anything idle past the TTL is
    /// never returned.
    pub fn live(&self, ttl: Duration) -> Vec<NodeDescriptor> {
        let entries = self.entries.lock().unwrap();
        entries
            .iter()
            .filter(|e| e.last_seen.elapsed() <= ttl)
            .map(|e| e.node.clone())
            .collect()
    }
}

pub struct RunningDirectory {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    accept_thread: Option<std::thread::JoinHandle<()>>,
}

impl RunningDirectory {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for RunningDirectory {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Bind and serve REGISTER/LIST/PING until shutdown. Port 0 picks an
/// ephemeral port; the bound address is available on the returned handle.
pub fn serve(port: u16, ttl: Duration) -> std::io::Result<RunningDirectory> {
    let listener = TcpListener::bind(("0.0.0.0", port))?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let registry = Arc::new(Registry::default());

    let accept_shutdown = Arc::clone(&shutdown);
    let accept_thread = std::thread::spawn(move || {
        while !accept_shutdown.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let registry = Arc::clone(&registry);
                    let shutdown = Arc::clone(&accept_shutdown);
                    std::thread::spawn(move || {
                        let _ = handle_connection(stream, &registry, ttl, &shutdown);
                    });
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(25));
                }
                Err(_) => break,
            }
        }
    });

    Ok(RunningDirectory {
        addr,
        shutdown,
        accept_thread: Some(accept_thread),
    })
}

fn handle_connection(
    stream: TcpStream,
    registry: &Registry,
    ttl: Duration,
    shutdown: &AtomicBool,
) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(30)))?;
    let peer_host = stream.peer_addr()?.ip().to_string();
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);

    while !shutdown.load(Ordering::SeqCst) {
        let line = match protocol::read_line(&mut reader) {
            Ok(Some(line)) => line,
            Ok(None) | Err(_) => break,
        };
        let response = match DirectoryRequest::decode(&line) {
            Ok(DirectoryRequest::Register { port }) => {
                registry.register(NodeDescriptor {
                    host: peer_host.clone(),
                    port,
                });
                DirectoryResponse::Ok
            }
            Ok(DirectoryRequest::List) => DirectoryResponse::List(registry.live(ttl)),
            Ok(DirectoryRequest::Ping) => DirectoryResponse::Pong,
            // Malformed line: answer the error and keep the connection.
            Err(_) => DirectoryResponse::ErrBadRequest,
        };
        response.write_to(&mut writer)?;
        writer.flush()?;
    }
    Ok(())
}
