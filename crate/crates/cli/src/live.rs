//! Live mode: UDP force and keypoint records in, raw recording, online
//! alignment and fusion, broadcast out.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context};
use harness_core::ingest::{OnlineAligner, DEFAULT_REORDER_WINDOW_S, DEFAULT_STALENESS_S};
use harness_core::session::{read_calibration, read_taps, Recorder, SessionEvents};
use harness_core::{parse_force_record, parse_keypoint_record, Calibration, Fuser, SessionRecord, StreamStats, TimeMapping};
use tokio::net::UdpSocket;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::server::{Server, Shared};

const MAX_DATAGRAM: usize = 64 * 1024;
const FLUSH_INTERVAL: Duration = Duration::from_millis(500);

/// Parses `udp://HOST:PORT`; an empty host (`udp://:9000`) binds all interfaces.
pub fn parse_udp_url(url: &str) -> anyhow::Result<SocketAddr> {
    let Some(rest) = url.strip_prefix("udp://") else {
        bail!("expected udp://HOST:PORT, got {url:?}");
    };
    let rest = if rest.starts_with(':') { format!("0.0.0.0{rest}") } else { rest.to_owned() };
    rest.parse().with_context(|| format!("invalid UDP address {url:?}"))
}

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub force: SocketAddr,
    pub keypoints: SocketAddr,
    pub session: PathBuf,
    pub serve: SocketAddr,
    pub staleness_s: f64,
    pub reorder_window_s: f64,
}

impl LiveConfig {
    pub fn new(force: SocketAddr, keypoints: SocketAddr, session: PathBuf, serve: SocketAddr) -> Self {
        Self {
            force,
            keypoints,
            session,
            serve,
            staleness_s: DEFAULT_STALENESS_S,
            reorder_window_s: DEFAULT_REORDER_WINDOW_S,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LiveSummary {
    pub force: StreamStats,
    pub keypoints: StreamStats,
    pub fused: u64,
    pub record: SessionRecord,
}

/// A running live pipeline.
pub struct Live {
    pub force_addr: SocketAddr,
    pub keypoint_addr: SocketAddr,
    pub http_addr: SocketAddr,
    pub shared: Shared,
    stop: watch::Sender<bool>,
    task: JoinHandle<anyhow::Result<LiveSummary>>,
}

impl Live {
    pub async fn start(cfg: LiveConfig) -> anyhow::Result<Self> {
        let recorder = Recorder::create(&cfg.session)?;
        let record = recorder.record().clone();
        let mapping = record.mapping.unwrap_or_else(TimeMapping::identity);
        let calibration = match &record.calibration_path {
            Some(p) => read_calibration(&cfg.session.join(p))?,
            None => Calibration::default(),
        };
        let sensor_taps = match &record.tap_paths.sensor {
            Some(p) => read_taps(&cfg.session.join(p))?,
            None => Vec::new(),
        };
        let events = SessionEvents {
            sensor_taps: sensor_taps.clone(),
            ..SessionEvents::default()
        };
        let shared = Shared::new(record, events);

        let force_sock = UdpSocket::bind(cfg.force)
            .await
            .with_context(|| format!("binding force socket {}", cfg.force))?;
        let kp_sock = UdpSocket::bind(cfg.keypoints)
            .await
            .with_context(|| format!("binding keypoint socket {}", cfg.keypoints))?;
        let server = Server::start(cfg.serve, shared.clone())
            .await
            .with_context(|| format!("binding {}", cfg.serve))?;

        let (stop, stop_rx) = watch::channel(false);
        let producer = Producer {
            recorder,
            aligner: OnlineAligner::new(mapping, cfg.staleness_s, cfg.reorder_window_s),
            fuser: Fuser::new(calibration, sensor_taps.iter().map(|t| t.t).collect()),
            shared: shared.clone(),
            fused: 0,
        };
        let live = Self {
            force_addr: force_sock.local_addr()?,
            keypoint_addr: kp_sock.local_addr()?,
            http_addr: server.addr,
            shared,
            stop,
            task: tokio::spawn(async move {
                let result = producer.run(force_sock, kp_sock, stop_rx).await;
                server.stop().await?;
                result
            }),
        };
        tracing::info!(force = %live.force_addr, keypoints = %live.keypoint_addr, "listening");
        Ok(live)
    }

    /// Stops ingest, drains the aligner, finishes the recording.
    pub async fn shutdown(self) -> anyhow::Result<LiveSummary> {
        let _ = self.stop.send(true);
        self.task.await?
    }

    /// Runs until the process receives Ctrl-C.
    pub async fn run_until_ctrl_c(self) -> anyhow::Result<LiveSummary> {
        tokio::select! {
            r = tokio::signal::ctrl_c() => r.context("installing Ctrl-C handler")?,
            _ = self.stop.closed() => {}
        }
        self.shutdown().await
    }
}

struct Producer {
    recorder: Recorder,
    aligner: OnlineAligner,
    fuser: Fuser,
    shared: Shared,
    fused: u64,
}

fn trim_record(buf: &[u8]) -> &[u8] {
    buf.trim_ascii_end()
}

impl Producer {
    async fn run(
        mut self,
        force_sock: UdpSocket,
        kp_sock: UdpSocket,
        mut stop: watch::Receiver<bool>,
    ) -> anyhow::Result<LiveSummary> {
        let rated = self.recorder.record().rated_load;
        let mut fbuf = vec![0u8; MAX_DATAGRAM];
        let mut kbuf = vec![0u8; MAX_DATAGRAM];
        let mut flush = tokio::time::interval(FLUSH_INTERVAL);
        loop {
            tokio::select! {
                r = force_sock.recv(&mut fbuf) => {
                    let line = trim_record(&fbuf[..r?]);
                    self.recorder.force_line(line)?;
                    match parse_force_record(line, &rated) {
                        Ok(s) => self.aligner.push_force(s),
                        Err(e) => {
                            self.aligner.force_stats.drop_one();
                            tracing::warn!("force record rejected: {e}");
                        }
                    }
                    self.publish_ready(false);
                }
                r = kp_sock.recv(&mut kbuf) => {
                    let line = trim_record(&kbuf[..r?]);
                    self.recorder.keypoint_line(line)?;
                    match parse_keypoint_record(line) {
                        Ok(f) => self.aligner.push_keypoints(f),
                        Err(e) => {
                            self.aligner.keypoint_stats.drop_one();
                            tracing::warn!("keypoint record rejected: {e}");
                        }
                    }
                    self.publish_ready(false);
                }
                _ = flush.tick() => self.recorder.flush()?,
                _ = stop.wait_for(|v| *v) => break,
            }
        }
        self.publish_ready(true);
        let record = self.recorder.finish()?;
        *self.shared.manifest.write().expect("manifest lock") = record.clone();
        Ok(LiveSummary {
            force: self.aligner.force_stats,
            keypoints: self.aligner.keypoint_stats,
            fused: self.fused,
            record,
        })
    }

    fn publish_ready(&mut self, flush: bool) {
        let ready = if flush { self.aligner.flush() } else { self.aligner.drain_ready() };
        if ready.is_empty() {
            return;
        }
        let stops_before = self.fuser.stop_events().len();
        for a in &ready {
            let sample = self.fuser.fuse(a);
            self.shared.hub.publish(sample.to_message());
            self.fused += 1;
        }
        if self.fuser.stop_events().len() != stops_before {
            self.shared.events.write().expect("events lock").stops = self.fuser.stop_events().to_vec();
        }
    }
}
