use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use biogap_core::afe::{AfeConfig, NUM_CHANNELS, SAMPLE_RATES};
use biogap_core::power::{power_report, Battery, Preset};
use biogap_core::proto::{LinkModel, DEFAULT_BUFFER_BITS};
use biogap_core::runtime::{Device, DeviceConfig, Mode, SynthSource};
use biogap_core::ssvep::{latency_curve, SsvepConfig, ONLINE_HOP_S, ONLINE_WINDOW_S};
use biogap_core::synth::{ground_truth, StimulusSegment, SynthSpec};
use biogap_gateway::analyze::{analyze, AnalyzeOptions};
use biogap_gateway::classify::{host_classify, segment_outcomes};
use biogap_gateway::console::{LiveOptions, LiveSession};
use biogap_gateway::export::{export_csv, export_packets, CsvStream};
use biogap_gateway::reassembly::Reassembler;
use biogap_gateway::recording::Recording;
use biogap_gateway::server::{serve, ServeOptions};
use biogap_gateway::session::{run_session, run_session_with, SessionConfig, SessionRunner};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "biogap", version, about = "Wearable biosignal platform twin")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct SimArgs {
    #[arg(long, default_value = "headband")]
    preset: Preset,
    /// `ble`, `ideal`, or e.g. `1.4M,latency=5,drop=10-20`.
    #[arg(long, default_value = "ble")]
    link: LinkModel,
    /// Simulated seconds.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Acquisition mode: streaming or edge_ai.
    #[arg(long, default_value = "streaming")]
    mode: Mode,
    /// Device buffer size, bits.
    #[arg(long, default_value_t = DEFAULT_BUFFER_BITS)]
    buffer_bits: u64,
    /// AFE input with no electrode contact; repeatable.
    #[arg(long = "open-lead")]
    open_leads: Vec<usize>,
}

impl SimArgs {
    fn config(&self) -> Result<SessionConfig> {
        let mut cfg = SessionConfig::new(self.preset, self.link.clone(), self.duration, self.seed);
        cfg.mode = self.mode;
        cfg.buffer_bits = self.buffer_bits;
        if !self.open_leads.is_empty() {
            let mut coupling = [1.0; NUM_CHANNELS];
            for &c in &self.open_leads {
                *coupling.get_mut(c).with_context(|| format!("no input {c}"))? = 0.0;
            }
            cfg.coupling = Some(coupling);
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PowerFormat {
    Table,
    Json,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Csv,
    Packets,
}

#[derive(Subcommand)]
enum Cmd {
    /// Record a device fed by a declarative signal spec.
    Synth {
        /// JSON signal spec (see README).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the ground-truth annotations here.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, default_value = "ideal")]
        link: LinkModel,
    },
    /// Simulate a preset device over a link and record the session.
    Sim {
        #[command(flatten)]
        args: SimArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write the ground-truth annotations of the signal template.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Run a session in real time and serve the console websocket.
    Stream {
        #[command(flatten)]
        args: SimArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Run until interrupted instead of for --duration.
        #[arg(long)]
        forever: bool,
        /// Also classify SSVEP on the gateway.
        #[arg(long)]
        host_ssvep: bool,
        /// Hold the clock until a console connects.
        #[arg(long)]
        wait: bool,
    },
    /// Filtered traces, R-peaks, PTT and EMG RMS bins as JSON.
    Analyze {
        recording: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_traces: bool,
        /// ExG input carrying the ECG.
        #[arg(long)]
        ecg_channel: Option<usize>,
    },
    /// SSVEP window decisions, per-segment outcomes and latency curves as JSON.
    Ssvep {
        recording: PathBuf,
        /// Annotation file with `ssvep_segments`.
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value_t = ONLINE_WINDOW_S)]
        window: f64,
        #[arg(long, default_value_t = ONLINE_HOP_S)]
        hop: f64,
        /// Window lengths for the latency curves, s.
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,2.5,3,3.5,4,4.5,5")]
        windows: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Power budget and battery life of a form factor.
    Power {
        #[arg(long, default_value = "headband")]
        preset: Preset,
        #[arg(long, default_value = "150mAh@3.7V")]
        battery: Battery,
        #[arg(long, value_enum, default_value = "both")]
        format: PowerFormat,
    },
    /// Convert a recording to CSV (µV) or a clean packet copy.
    Export {
        recording: PathBuf,
        #[arg(long, value_enum)]
        format: ExportFormat,
        #[arg(long)]
        out: PathBuf,
        /// Stream for CSV output: exg, ppg or imu.
        #[arg(long, default_value = "exg")]
        stream: CsvStream,
    },
}

/// `synth --spec` document: a signal spec plus the device it feeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SynthDocument {
    preset: Preset,
    #[serde(default)]
    gain: Option<u8>,
    #[serde(default)]
    channel_mask: Option<u16>,
    #[serde(default)]
    noise: Option<bool>,
    #[serde(default = "default_mode")]
    mode: Mode,
    #[serde(flatten)]
    signal: SynthSpec,
}

fn default_mode() -> Mode {
    Mode::Streaming
}

#[derive(Deserialize)]
struct AnnotationFile {
    #[serde(default)]
    ssvep_segments: Vec<StimulusSegment>,
}

fn write_json(value: &impl Serialize, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
            serde_json::to_writer(&mut w, value)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, value)?;
            writeln!(lock)?;
        }
    }
    Ok(())
}

fn open_recording(path: &Path) -> Result<Recording> {
    Recording::open(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_synth(spec: &Path, out: &Path, annotations: Option<&Path>, link: LinkModel) -> Result<()> {
    let text = std::fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let doc: SynthDocument = serde_json::from_str(&text).context("parsing the spec")?;
    doc.signal.validate()?;
    let rate = doc.signal.sample_rate as u32;
    if !SAMPLE_RATES.contains(&rate) || rate as f64 != doc.signal.sample_rate {
        bail!("sample_rate {} is not an AFE rate {SAMPLE_RATES:?}", doc.signal.sample_rate);
    }
    let mut dev_cfg = DeviceConfig::for_preset(doc.preset, doc.signal.seed);
    dev_cfg.afe = AfeConfig {
        sample_rate: rate,
        gain: doc.gain.unwrap_or(dev_cfg.afe.gain),
        channels_enabled: doc.channel_mask.unwrap_or(dev_cfg.afe.channels_enabled),
        noise_enabled: doc.noise.unwrap_or(dev_cfg.afe.noise_enabled),
        ..dev_cfg.afe
    };
    let device = Device::new(dev_cfg, Box::new(SynthSource::new(doc.signal.clone())?))?;
    let mut cfg = SessionConfig::new(doc.preset, link, doc.signal.duration, doc.signal.seed);
    cfg.mode = doc.mode;
    let file = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    let (session, _) = run_session_with(&cfg, device, file)?;
    if let Some(p) = annotations {
        write_json(&ground_truth(&doc.signal)?, Some(p))?;
    }
    report_session(&session)
}

fn report_session(session: &biogap_gateway::session::Session) -> Result<()> {
    write_json(session, None)?;
    if session.partial {
        bail!("session aborted, recording is partial: {}", session.error.as_deref().unwrap_or("storage failure"));
    }
    Ok(())
}

fn cmd_ssvep(recording: &Path, annotations: &Path, window: f64, hop: f64, windows: &[f64], out: Option<&Path>) -> Result<()> {
    let rec = open_recording(recording)?;
    let ann: AnnotationFile = serde_json::from_str(&std::fs::read_to_string(annotations)?).context("parsing annotations")?;
    let mut r = Reassembler::new(rec.header.afe);
    for p in rec.packets() {
        r.push(p);
    }
    let (block, filled) = r.streams().exg_dense().context("recording has no ExG")?;
    let fs = block.sample_rate as f64;
    let config = SsvepConfig::default();
    let decisions = host_classify(&block, window, hop, &config)?;
    let outcomes = segment_outcomes(&decisions, fs, block.ticks[0], window, &ann.ssvep_segments);
    // latency windows start at segment onsets, on the block's time origin
    let t0 = block.ticks[0] as f64 / biogap_core::runtime::TICK_RATE as f64;
    let local: Vec<StimulusSegment> = ann
        .ssvep_segments
        .iter()
        .map(|s| StimulusSegment { start: s.start - t0, end: s.end - t0, freq: s.freq })
        .filter(|s| s.start >= 0.0)
        .collect();
    let latency = latency_curve(&block.data, fs, &local, windows, &config)?;
    let correct = outcomes.iter().filter(|o| o.correct()).count();

    #[derive(Serialize)]
    struct Report<'a> {
        sample_rate: f64,
        channels: &'a [usize],
        filled_samples: usize,
        window_s: f64,
        hop_s: f64,
        decisions: Vec<serde_json::Value>,
        segments: &'a [biogap_gateway::classify::SegmentOutcome],
        segments_correct: usize,
        latency: &'a biogap_core::ssvep::LatencyCurves,
    }
    let decisions_json = decisions
        .iter()
        .map(|d| {
            serde_json::json!({
                "end_s": t0 + d.end_sample as f64 / fs,
                "decision_hz": d.result.decision,
                "scores": d.result.scores,
            })
        })
        .collect();
    write_json(
        &Report {
            sample_rate: fs,
            channels: &block.channels,
            filled_samples: filled,
            window_s: window,
            hop_s: hop,
            decisions: decisions_json,
            segments: &outcomes,
            segments_correct: correct,
            latency: &latency,
        },
        out,
    )
}

fn cmd_export(recording: &Path, format: ExportFormat, out: &Path, stream: CsvStream) -> Result<()> {
    let rec = open_recording(recording)?;
    let file = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    let summary = match format {
        ExportFormat::Csv => export_csv(&rec, stream, file)?,
        ExportFormat::Packets => export_packets(&rec, file)?,
    };
    if summary.warnings() > 0 {
        eprintln!(
            "warning: {} corrupt packet(s) skipped, {} malformed payload(s){}",
            summary.corrupt_packets,
            summary.payload_errors,
            if summary.truncated { ", recording ends mid-packet" } else { "" }
        );
    }
    write_json(&summary, None)
}

async fn cmd_stream(args: &SimArgs, out: &Path, listen: &str, speed: f64, forever: bool, host_ssvep: bool, wait: bool) -> Result<()> {
    let cfg = args.config()?;
    let runner = SessionRunner::create(&cfg.id, cfg.device()?, cfg.link.clone(), cfg.buffer_bits, out, 0)?;
    let mut live = LiveSession::new(runner, LiveOptions { host_ssvep: host_ssvep.then(SsvepConfig::default), ..Default::default() })?;
    for m in live.handle(biogap_gateway::console::ClientMessage::Command {
        id: 0,
        command: biogap_core::runtime::Command::SetMode { mode: cfg.mode },
    }) {
        tracing::info!("{}", m.to_json());
    }
    let listener = tokio::net::TcpListener::bind(listen).await.with_context(|| format!("binding {listen}"))?;
    let opts = ServeOptions { speed, duration_s: (!forever).then_some(cfg.duration_s), wait_for_client: wait, ..Default::default() };
    let server = serve(live, listener, opts).await?;
    eprintln!("console websocket at ws://{}/ws", server.addr);
    let stop = server.stop_handle();
    tokio::spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            stop.stop();
        }
    });
    let session = server.join().await?;
    report_session(&session)
}

fn main() -> Result<()> {
    tracing_subscriber::fmt().with_writer(io::stderr).init();
    match run(Cli::parse()) {
        // stdout closed early, e.g. piped into `head`
        Err(e) if e.chain().any(is_broken_pipe) => Ok(()),
        other => other,
    }
}

fn is_broken_pipe(e: &(dyn std::error::Error + 'static)) -> bool {
    let kind = e.downcast_ref::<io::Error>().map(io::Error::kind).or_else(|| e.downcast_ref::<serde_json::Error>().and_then(serde_json::Error::io_error_kind));
    kind == Some(io::ErrorKind::BrokenPipe)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Synth { spec, out, annotations, link } => cmd_synth(&spec, &out, annotations.as_deref(), link),
        Cmd::Sim { args, out, annotations } => {
            let cfg = args.config()?;
            let session = run_session(&cfg, &out)?;
            if let Some(p) = annotations {
                write_json(&ground_truth(&cfg.synth_spec())?, Some(&p))?;
            }
            report_session(&session)
        }
        Cmd::Stream { args, out, listen, speed, forever, host_ssvep, wait } => tokio::runtime::Runtime::new()?
            .block_on(cmd_stream(&args, &out, &listen, speed, forever, host_ssvep, wait)),
        Cmd::Analyze { recording, out, no_traces, ecg_channel } => {
            let rec = open_recording(&recording)?;
            let opts = AnalyzeOptions { include_traces: !no_traces, ecg_channel, ..Default::default() };
            write_json(&analyze(&rec, &opts)?, out.as_deref())
        }
        Cmd::Ssvep { recording, annotations, window, hop, windows, out } => {
            cmd_ssvep(&recording, &annotations, window, hop, &windows, out.as_deref())
        }
        Cmd::Power { preset, battery, format } => {
            let report = power_report(preset, battery)?;
            if matches!(format, PowerFormat::Table | PowerFormat::Both) {
                println!("{}", report.to_table());
            }
            if matches!(format, PowerFormat::Json | PowerFormat::Both) {
                println!("{}", serde_json::to_string(&report)?);
            }
            Ok(())
        }
        Cmd::Export { recording, format, out, stream } => cmd_export(&recording, format, &out, stream),
    }
}
