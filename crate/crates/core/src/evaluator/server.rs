//! Newline-delimited JSON assessment service.
//!
//! One request line in, exactly one response line out, per session:
//!
//! ```text
//! -> {"type":"assess","app_id":"x","permissions":["SEND_SMS"],"intents":[],"hardware_features":[]}
//! <- {"type":"assessment","app_id":"x","risk":"high","score":0.93,"model_id":"naive_bayes-..."}
//! ```
//!
//! Malformed lines get an in-band `{"type":"error",...}` response and the
//! session stays open. Sessions run on independent threads over a shared,
//! immutable model bundle.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::corpus::AppManifest;
use crate::evaluator::{assess, ModelBundle};

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum Request {
    Assess {
        app_id: String,
        #[serde(default)]
        permissions: Vec<String>,
        #[serde(default)]
        intents: Vec<String>,
        #[serde(default)]
        hardware_features: Vec<String>,
    },
}

#[derive(Debug, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Response {
    Assessment {
        app_id: String,
        risk: &'static str,
        score: f64,
        model_id: String,
    },
    Error {
        code: &'static str,
        message: String,
    },
}

/// Computes the single response line for a single request line. Shared by
/// the TCP server and by in-process tests.
pub fn respond_to_line(bundle: &ModelBundle, line: &str, clock: &AtomicU64) -> String {
    let response = match serde_json::from_str::<Request>(line) {
        Err(e) => Response::Error {
            code: "parse",
            message: e.to_string(),
        },
        Ok(Request::Assess {
            app_id,
            permissions,
            intents,
            hardware_features,
        }) => {
            let manifest = AppManifest {
                app_id,
                package_name: String::new(),
                permissions: permissions.into_iter().collect::<BTreeSet<_>>(),
                intents: intents.into_iter().collect::<BTreeSet<_>>(),
                hardware_features: hardware_features.into_iter().collect::<BTreeSet<_>>(),
            };
            let at = clock.fetch_add(1, Ordering::Relaxed);
            match assess(&manifest, bundle, at) {
                Ok(a) => Response::Assessment {
                    app_id: a.app_id,
                    risk: a.risk.as_str(),
                    score: a.score,
                    model_id: a.model_id,
                },
                Err(e) => Response::Error {
                    code: "model",
                    message: e.to_string(),
                },
            }
        }
    };
    serde_json::to_string(&response)
        .unwrap_or_else(|e| format!(r#"{{"type":"error","code":"internal","message":"{e}"}}"#))
}

pub struct ServerHandle {
    local_addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    accept_thread: Option<thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Stops accepting new sessions. Established sessions end when their
    /// clients disconnect.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.local_addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.accept_thread.is_some() {
            self.stop();
        }
    }
}

fn handle_session(bundle: &ModelBundle, stream: TcpStream, clock: &AtomicU64) {
    let reader = BufReader::new(match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return,
    });
    let mut writer = BufWriter::new(stream);
    for line in reader.lines() {
        let line = match line {
            Ok(l) => l,
            Err(_) => break,
        };
        let response = respond_to_line(bundle, &line, clock);
        if writer
            .write_all(response.as_bytes())
            .and_then(|_| writer.write_all(b"\n"))
            .and_then(|_| writer.flush())
            .is_err()
        {
            break;
        }
    }
}

/// Binds `endpoint` and serves the bundle until the handle shuts down.
pub fn serve<A: ToSocketAddrs>(
    bundle: Arc<ModelBundle>,
    endpoint: A,
) -> std::io::Result<ServerHandle> {
    let listener = TcpListener::bind(endpoint)?;
    let local_addr = listener.local_addr()?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let clock = Arc::new(AtomicU64::new(0));

    let accept_shutdown = Arc::clone(&shutdown);
    let accept_thread = thread::spawn(move || {
        for stream in listener.incoming() {
            if accept_shutdown.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let bundle = Arc::clone(&bundle);
            let clock = Arc::clone(&clock);
            thread::spawn(move || handle_session(&bundle, stream, &clock));
        }
    });

    Ok(ServerHandle {
        local_addr,
        shutdown,
        accept_thread: Some(accept_thread),
    })
}
