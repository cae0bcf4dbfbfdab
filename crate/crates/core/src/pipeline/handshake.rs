//! File-based request/response exchange with an external process.
//!
//! For each request with key `K` the client writes `req_K.*` payload files and
//! then `req_K.json` (the JSON file appears last and signals that the request is
//! complete). The external process answers by writing `resp_K.p4dt`. Writes go
//! through a temporary name followed by a rename. When the session ends the
//! client creates an empty `DONE` file.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Serialize;

use super::tensor::{Tensor, read_tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct HandshakeConfig {
    pub dir: PathBuf,
    pub timeout: Duration,
    pub retries: u32,
    pub poll_interval: Duration,
}

impl HandshakeConfig {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        HandshakeConfig {
            dir: dir.into(),
            timeout: Duration::from_secs(600),
            retries: 2,
            poll_interval: Duration::from_millis(20),
        }
    }
}

/// Client side of the protocol.
#[derive(Debug)]
pub struct HandshakeClient {
    config: HandshakeConfig,
}

/// Writes `bytes` to `path` via a temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl HandshakeClient {
    pub fn new(config: HandshakeConfig) -> Result<Self> {
        std::fs::create_dir_all(&config.dir).map_err(|e| Error::io(&config.dir, e))?;
        let done = config.dir.join("DONE");
        if done.exists() {
            std::fs::remove_file(&done).map_err(|e| Error::io(&done, e))?;
        }
        Ok(HandshakeClient { config })
    }

    pub fn dir(&self) -> &Path {
        &self.config.dir
    }

    pub fn request_path(&self, key: &str, ext: &str) -> PathBuf {
        self.config.dir.join(format!("req_{key}.{ext}"))
    }

    pub fn response_path(&self, key: &str) -> PathBuf {
        self.config.dir.join(format!("resp_{key}.p4dt"))
    }

    /// Sends one request and blocks until its response tensor arrives.
    ///
    /// `payloads` are `(extension, bytes)` pairs written before the metadata.
    pub fn exchange<M: Serialize>(
        &self,
        key: &str,
        payloads: &[(&str, Vec<u8>)],
        metadata: &M,
    ) -> Result<Tensor> {
        let resp = self.response_path(key);
        if resp.exists() {
            std::fs::remove_file(&resp).map_err(|e| Error::io(&resp, e))?;
        }
        let meta = serde_json::to_vec_pretty(metadata)
            .map_err(|e| Error::InvalidInput(format!("metadata: {e}")))?;
        for attempt in 0..=self.config.retries {
            for (ext, bytes) in payloads {
                write_atomic(&self.request_path(key, ext), bytes)?;
            }
            write_atomic(&self.request_path(key, "json"), &meta)?;
            if let Some(t) = self.wait_for(&resp)? {
                return Ok(t);
            }
            log::warn!("handshake {key}: no response (attempt {})", attempt + 1);
        }
        Err(Error::Timeout(resp))
    }

    fn wait_for(&self, path: &Path) -> Result<Option<Tensor>> {
        let start = Instant::now();
        loop {
            if path.exists() {
                match read_tensor(path) {
                    Ok(t) => return Ok(Some(t)),
                    Err(Error::Format { .. }) | Err(Error::Io { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            if start.elapsed() >= self.config.timeout {
                return Ok(None);
            }
            std::thread::sleep(self.config.poll_interval);
        }
    }

    /// Signals the external process that no further requests will come.
    pub fn finish(&self) -> Result<()> {
        let done = self.config.dir.join("DONE");
        std::fs::write(&done, b"").map_err(|e| Error::io(&done, e))
    }
}

/// Minimal server loop used by tests and examples: answers every `req_*.json`
/// it sees with `respond(key, dir)` until `DONE` appears.
pub fn serve_requests(
    dir: &Path,
    poll: Duration,
    mut respond: impl FnMut(&str, &Path) -> Option<Tensor>,
) -> Result<usize> {
    let mut answered = std::collections::BTreeSet::new();
    loop {
        let mut pending: Vec<String> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let key = name.strip_prefix("req_")?.strip_suffix(".json")?.to_string();
                Some(key)
            })
            .filter(|k| !answered.contains(k))
            .collect();
        pending.sort();
        for key in pending {
            if let Some(t) = respond(&key, dir) {
                write_atomic(&dir.join(format!("resp_{key}.p4dt")), &t.to_bytes())?;
            }
            answered.insert(key);
        }
        if dir.join("DONE").exists() {
            return Ok(answered.len());
        }
        std::thread::sleep(poll);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_times_out_without_server() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = HandshakeConfig::new(dir.path());
        cfg.timeout = Duration::from_millis(30);
        cfg.retries = 1;
        let client = HandshakeClient::new(cfg).unwrap();
        let err = client.exchange("0_0", &[], &serde_json::json!({})).unwrap_err();
        assert_eq!(err.kind(), "timeout");
        assert!(client.request_path("0_0", "json").exists());
    }

    #[test]
    fn exchange_with_threaded_server() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().to_path_buf();
        let server = std::thread::spawn(move || {
            serve_requests(&path, Duration::from_millis(5), |key, dir| {
                let payload = std::fs::read(dir.join(format!("req_{key}.bin"))).ok()?;
                Tensor::new(vec![payload.len()], payload.iter().map(|&b| b as f32).collect()).ok()
            })
            .unwrap()
        });
        let client = HandshakeClient::new(HandshakeConfig::new(dir.path())).unwrap();
        let t = client
            .exchange("3_1", &[("bin", vec![7, 9])], &serde_json::json!({"step": 3}))
            .unwrap();
        assert_eq!(t.data(), &[7.0, 9.0]);
        client.finish().unwrap();
        assert_eq!(server.join().unwrap(), 1);
    }
}
