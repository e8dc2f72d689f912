//! The `harness` command: session sync, analysis, replay and live serving,
//! keypoint evaluation and synthetic session generation.

pub mod live;
pub mod server;

use std::fs::File;
use std::future::Future;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use harness_core::analysis::DEFAULT_CONF_THRESHOLD;
use harness_core::ingest::read_keypoint_lines;
use harness_core::session::{read_taps, write_synth_session, AnalysisOptions, SyncOptions};
use harness_core::{evaluate_keypoints, generate, session, FusedSample, KeypointFrame, Session, SynthSpec};

use crate::live::{parse_udp_url, Live, LiveConfig};
use crate::server::{Server, Shared};

#[derive(Debug, Parser)]
#[command(name = "harness", version, about = "Guide-dog harness handle telemetry")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect sensor taps and estimate the camera-to-sensor clock mapping.
    Sync(SyncArgs),
    /// Emit fused samples for a synced session.
    Replay(ReplayArgs),
    /// Ingest UDP streams, record them and serve fused samples.
    Live(LiveArgs),
    /// Compare predicted keypoints with labels.
    Eval(EvalArgs),
    /// Generate a synthetic session with ground truth.
    Synth(SynthArgs),
    /// Gait and stop analysis of a session's force record.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct SyncArgs {
    #[arg(long)]
    pub session: PathBuf,
    #[arg(long, default_value_t = harness_core::time_sync::DEFAULT_TAP_THRESHOLD_N)]
    pub threshold_n: f64,
    #[arg(long, default_value_t = harness_core::time_sync::DEFAULT_REFRACTORY_S * 1000.0)]
    pub refractory_ms: f64,
    /// Seconds at the start of the force record searched for taps (0 = all).
    #[arg(long, default_value_t = SyncOptions::default().tap_window_s)]
    pub window_s: f64,
    #[arg(long, default_value_t = harness_core::time_sync::DEFAULT_MAX_OFFSET_S)]
    pub max_offset_s: f64,
    /// Camera tap list; defaults to the one named in the manifest.
    #[arg(long)]
    pub camera_taps: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub session: PathBuf,
    /// Playback speed; 0 emits as fast as possible.
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
    /// Serve `/stream`, `/session` and `/events` on this address.
    #[arg(long)]
    pub serve: Option<SocketAddr>,
    /// Write fused messages here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// With --serve, hold playback until a `/stream` client connects.
    #[arg(long)]
    pub wait_for_client: bool,
}

#[derive(Debug, Args)]
pub struct LiveArgs {
    #[arg(long, value_parser = parse_udp_url)]
    pub force: SocketAddr,
    #[arg(long, value_parser = parse_udp_url)]
    pub kp: SocketAddr,
    #[arg(long)]
    pub session: PathBuf,
    #[arg(long)]
    pub serve: SocketAddr,
    #[arg(long, default_value_t = harness_core::ingest::DEFAULT_STALENESS_S)]
    pub staleness_s: f64,
    #[arg(long, default_value_t = harness_core::ingest::DEFAULT_REORDER_WINDOW_S)]
    pub reorder_window_s: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub json: bool,
    #[arg(long, default_value_t = DEFAULT_CONF_THRESHOLD)]
    pub conf_threshold: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub cadence: f64,
    #[arg(long, default_value_t = 20.0)]
    pub amp: f64,
    /// Sensor time of a stop pulse; repeatable.
    #[arg(long = "stop-at")]
    pub stop_at: Vec<f64>,
    #[arg(long, default_value_t = 32.0)]
    pub stop_peak: f64,
    #[arg(long, default_value_t = 30.0)]
    pub duration: f64,
    /// Camera clock lag behind the sensor clock, seconds.
    #[arg(long, default_value_t = 0.5)]
    pub offset: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub noise_px: Option<f64>,
    #[arg(long)]
    pub tap_jitter_ms: Option<f64>,
    #[arg(long)]
    pub handle_yaw_deg: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub session: PathBuf,
    #[arg(long, default_value_t = harness_core::analysis::DETREND_WINDOW_S)]
    pub window_s: f64,
    #[arg(long, default_value_t = harness_core::analysis::DEFAULT_STOP_THRESHOLD_N)]
    pub stop_threshold_n: f64,
}

/// Process exit status for an error: 3 sync, 4 I/O, 2 everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<harness_core::Error>() {
            return e.exit_code();
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return 4;
        }
    }
    2
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Sync(a) => sync(a),
        Command::Replay(a) => replay(a),
        Command::Live(a) => live(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
        Command::Analyze(a) => analyze(a),
    }
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

pub fn sync(a: SyncArgs) -> anyhow::Result<()> {
    let mut s = Session::open(&a.session)?;
    let camera = match &a.camera_taps {
        Some(p) => read_taps(p)?,
        None => s.camera_taps()?,
    };
    let opts = SyncOptions {
        threshold_n: a.threshold_n,
        refractory_s: a.refractory_ms / 1000.0,
        max_offset_s: a.max_offset_s,
        tap_window_s: a.window_s,
    };
    let mapping = s.sync(&camera, &opts)?;
    print_json(&mapping)
}

pub fn analyze(a: AnalyzeArgs) -> anyhow::Result<()> {
    let mut s = Session::open(&a.session)?;
    let opts = AnalysisOptions {
        detrend_window_s: a.window_s,
        stop_threshold_n: a.stop_threshold_n,
        ..AnalysisOptions::default()
    };
    print_json(&s.analyze(&opts)?)
}

fn read_frames(path: &Path) -> anyhow::Result<Vec<KeypointFrame>> {
    let file = File::open(path).map_err(|e| harness_core::Error::io(path, e))?;
    let parsed = read_keypoint_lines(BufReader::new(file)).map_err(|e| harness_core::Error::io(path, e))?;
    if let Some((line, msg)) = parsed.errors.first() {
        return Err(harness_core::Error::Validation(format!("{}:{line}: {msg}", path.display())).into());
    }
    Ok(parsed.records)
}

pub fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let pred = read_frames(&a.pred)?;
    let gt = read_frames(&a.gt)?;
    let report = evaluate_keypoints(&pred, &gt, a.conf_threshold)?;
    if a.json {
        print_json(&report)
    } else {
        print!("{}", report.to_table());
        Ok(())
    }
}

pub fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let base = SynthSpec::default();
    let spec = SynthSpec {
        duration_s: a.duration,
        cadence_hz: a.cadence,
        gait_amp_n: a.amp,
        stop_times_s: a.stop_at,
        stop_peak_n: a.stop_peak,
        clock_offset_s: a.offset,
        seed: a.seed,
        keypoint_noise_px: a.noise_px.unwrap_or(base.keypoint_noise_px),
        tap_jitter_s: a.tap_jitter_ms.map_or(base.tap_jitter_s, |ms| ms / 1000.0),
        handle_yaw_deg: a.handle_yaw_deg.unwrap_or(base.handle_yaw_deg),
        ..base
    };
    let output = generate(&spec)?;
    write_synth_session(&a.out, &output)?;
    eprintln!(
        "wrote {} force samples and {} keypoint frames to {}",
        output.force.len(),
        output.keypoints.len(),
        a.out.display()
    );
    Ok(())
}

fn open_output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write + Send>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| harness_core::Error::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

/// Paces `fused` out through `out` and, when given, the broadcaster.
fn play(
    fused: &[FusedSample],
    speed: f64,
    out: &mut dyn Write,
    hub: Option<&harness_core::broadcast::Broadcaster>,
) -> anyhow::Result<()> {
    let mut err = None;
    session::replay(fused, speed, |s| {
        let msg = s.to_message();
        if let Err(e) = writeln!(out, "{msg}") {
            err = Some(e);
            return false;
        }
        if let Some(hub) = hub {
            hub.publish(msg);
        }
        true
    })?;
    let result = match err {
        Some(e) => Err(e),
        None => out.flush(),
    };
    match result {
        // a closed downstream pipe (e.g. `| head`) ends output normally
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(harness_core::Error::io("<output>", e).into()),
        _ => Ok(()),
    }
}

pub fn replay(a: ReplayArgs) -> anyhow::Result<()> {
    let session = Session::open(&a.session)?;
    let fused = session.fuse()?;
    let out = open_output(a.out.as_deref())?;
    match a.serve {
        None => {
            let mut out = out;
            play(&fused, a.speed, &mut out, None)
        }
        Some(addr) => runtime()?.block_on(async {
            serve_replay(&session, fused, a.speed, addr, a.wait_for_client, out, async {
                eprintln!("replay finished; Ctrl-C to stop serving");
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
        }),
    }
}

/// Serves a replay. After playback completes the server keeps running until
/// `linger` resolves.
pub async fn serve_replay(
    session: &Session,
    fused: Vec<FusedSample>,
    speed: f64,
    bind: SocketAddr,
    wait_for_client: bool,
    mut out: Box<dyn Write + Send>,
    linger: impl Future<Output = ()>,
) -> anyhow::Result<()> {
    let shared = Shared::new(session.record.clone(), session.events()?);
    let server = Server::start(bind, shared.clone())
        .await
        .with_context(|| format!("binding {bind}"))?;
    eprintln!("serving on http://{}", server.addr);
    if wait_for_client {
        while shared.hub.subscriber_count() == 0 {
            tokio::time::sleep(std::time::Duration::from_millis(10)).await;
        }
    }
    let hub = shared.hub.clone();
    tokio::task::spawn_blocking(move || play(&fused, speed, &mut out, Some(&hub))).await??;
    linger.await;
    server.stop().await?;
    Ok(())
}

pub fn live(a: LiveArgs) -> anyhow::Result<()> {
    let cfg = LiveConfig {
        staleness_s: a.staleness_s,
        reorder_window_s: a.reorder_window_s,
        ..LiveConfig::new(a.force, a.kp, a.session, a.serve)
    };
    let summary = runtime()?.block_on(async {
        let live = Live::start(cfg).await?;
        eprintln!(
            "live: force udp {} keypoints udp {} http {}",
            live.force_addr, live.keypoint_addr, live.http_addr
        );
        live.run_until_ctrl_c().await
    })?;
    eprintln!(
        "recorded {} force ({} dropped), {} keypoint frames ({} dropped), {} fused",
        summary.force.samples_seen,
        summary.force.samples_dropped,
        summary.keypoints.samples_seen,
        summary.keypoints.samples_dropped,
        summary.fused
    );
    Ok(())
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}
