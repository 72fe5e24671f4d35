mod keys;
mod record;

use std::fs;
use std::io::{self, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Deserialize;
use sva::arc::{self, ArcConfig, ArcContext, ArchiveStore};
use sva::chain::parse_sdp_rtpmap;
use sva::chain::PayloadMapping;
use sva::envelope::tsa::LocalTsa;
use sva::envelope::TsaClient;
use sva::harness::{self, traffic};
use sva::time::{SystemClock, Timestamp};
use sva::verify;
use sva::vsec::transport::serve_tsa_request;
use sva::vsec::{CallSetup, QosPolicy, RecorderConfig, TcpTsaClient};

const EXIT_USAGE: u8 = 64;
const EXIT_FAILURE: u8 = 70;

#[derive(Parser)]
#[command(name = "sva", version, about = "Tamper-evident archiving of RTP voice calls")]
struct Cli {
    /// TOML file with defaults for pki, store, arc, tsa, listen,
    /// interval_ms and loss_threshold. Flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Key material for a test deployment.
    #[command(subcommand)]
    Pki(PkiCmd),
    /// Time-stamping authority.
    #[command(subcommand)]
    Tsa(TsaCmd),
    /// Archive service.
    #[command(subcommand)]
    Arc(ArcCmd),
    /// Recorder.
    #[command(subcommand)]
    Vsec(VsecCmd),
    /// Verify a stored call file. Exit 0 complete, 2 incomplete, 1 rejected.
    Verify(FileArgs),
    /// List the envelopes of a stored call file.
    Inspect(FileArgs),
    /// Write both RTP directions of a call file to a directory.
    Extract(ExtractArgs),
    /// Attack scenarios.
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Periodic hash-tree anchors over closed calls.
    #[command(subcommand)]
    Anchor(AnchorCmd),
    /// Synthetic traffic captures.
    #[command(subcommand)]
    Capture(CaptureCmd),
}

#[derive(Subcommand)]
enum PkiCmd {
    /// Create a root, recorder identity and two authorities.
    Init {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PkiArg {
    /// PKI directory (see `pki init`).
    #[arg(long)]
    pki: Option<PathBuf>,
}

#[derive(Args)]
struct TimingArgs {
    /// Interval duration in milliseconds [default: 1000].
    #[arg(long)]
    interval_ms: Option<u64>,
    /// Packet-loss fraction above which a call is terminated [default: 0.01].
    #[arg(long)]
    loss_threshold: Option<f64>,
}

#[derive(Subcommand)]
enum TsaCmd {
    Serve {
        #[command(flatten)]
        pki: PkiArg,
        /// Listen address [default: 127.0.0.1:7301].
        #[arg(long)]
        listen: Option<String>,
        /// Which authority key to use: t1 (call start) or t2 (anchors).
        #[arg(long, default_value = "t1")]
        authority: String,
    },
}

#[derive(Subcommand)]
enum ArcCmd {
    Serve {
        #[command(flatten)]
        pki: PkiArg,
        /// Listen address [default: 127.0.0.1:7300].
        #[arg(long)]
        listen: Option<String>,
        /// Store directory.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Upper bound on the total size of call files, in bytes.
        #[arg(long)]
        capacity_bytes: Option<u64>,
        #[command(flatten)]
        timing: TimingArgs,
    },
}

#[derive(Subcommand)]
enum VsecCmd {
    /// Record one call and stream it to the archive.
    Record {
        #[command(flatten)]
        pki: PkiArg,
        /// Archive address [default: 127.0.0.1:7300].
        #[arg(long)]
        arc: Option<String>,
        /// Time-stamping authority address [default: 127.0.0.1:7301].
        #[arg(long)]
        tsa: Option<String>,
        /// Replay a capture file in real time instead of listening.
        #[arg(long, conflicts_with_all = ["port_a", "port_b"])]
        replay: Option<PathBuf>,
        /// UDP port receiving the A->B direction.
        #[arg(long, requires = "port_b")]
        port_a: Option<u16>,
        /// UDP port receiving the B->A direction.
        #[arg(long, requires = "port_a")]
        port_b: Option<u16>,
        /// Seconds without RTP after which a live call is closed.
        #[arg(long, default_value_t = 10)]
        idle_secs: u64,
        /// SDP file whose rtpmap lines define the payload map
        /// [default: 0 PCMU/8000].
        #[arg(long)]
        sdp: Option<PathBuf>,
        #[arg(long, default_value = "sip:a@localhost")]
        from: String,
        #[arg(long, default_value = "sip:b@localhost")]
        to: String,
        #[command(flatten)]
        timing: TimingArgs,
    },
}

#[derive(Args)]
struct FileArgs {
    file: PathBuf,
    #[command(flatten)]
    pki: PkiArg,
    #[command(flatten)]
    timing: TimingArgs,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    file: FileArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Names of all scenarios.
    List,
    Run {
        name: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    All {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Run scenarios concurrently.
        #[arg(long)]
        parallel: bool,
        /// Also write a machine-readable summary (JSON lines).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AnchorCmd {
    /// Anchor all calls closed in [start, end).
    Run {
        #[arg(long)]
        store: Option<PathBuf>,
        #[command(flatten)]
        pki: PkiArg,
        /// Remote periodic authority; without it the t2 key in the PKI
        /// directory signs locally.
        #[arg(long)]
        tsa: Option<String>,
        /// Period start, microseconds since the epoch [default: 0].
        #[arg(long, default_value_t = 0)]
        start: u64,
        /// Period end, microseconds since the epoch [default: now].
        #[arg(long)]
        end: Option<u64>,
    },
    Verify {
        #[arg(long)]
        store: Option<PathBuf>,
        #[command(flatten)]
        pki: PkiArg,
        /// Anchor record written by `anchor run`.
        anchor: PathBuf,
    },
}

#[derive(Subcommand)]
enum CaptureCmd {
    /// Write a synthetic call as a capture file.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        seconds: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        loss: f64,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    pki: Option<PathBuf>,
    store: Option<PathBuf>,
    arc: Option<String>,
    tsa: Option<String>,
    listen: Option<String>,
    interval_ms: Option<u64>,
    loss_threshold: Option<f64>,
}

/// A problem with how the command was invoked.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

struct Ctx {
    file: FileConfig,
}

impl Ctx {
    fn pki(&self, arg: &PkiArg) -> Result<PathBuf> {
        arg.pki
            .clone()
            .or_else(|| self.file.pki.clone())
            .ok_or_else(|| usage("--pki is required (or `pki` in the config file)"))
    }

    fn store(&self, arg: &Option<PathBuf>) -> Result<PathBuf> {
        arg.clone()
            .or_else(|| self.file.store.clone())
            .ok_or_else(|| usage("--store is required (or `store` in the config file)"))
    }

    fn interval(&self, t: &TimingArgs) -> Result<Duration> {
        let ms = t.interval_ms.or(self.file.interval_ms).unwrap_or(1000);
        if ms == 0 {
            return Err(usage("interval must be positive"));
        }
        Ok(Duration::from_millis(ms))
    }

    fn qos(&self, t: &TimingArgs) -> Result<QosPolicy> {
        let v = t.loss_threshold.or(self.file.loss_threshold).unwrap_or(0.01);
        QosPolicy::new(v).ok_or_else(|| usage("loss threshold must lie strictly between 0 and 1"))
    }

    fn arc_config(&self, t: &TimingArgs) -> Result<ArcConfig> {
        Ok(ArcConfig {
            interval: self.interval(t)?,
            qos: self.qos(t)?,
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    // Scenarios reject on purpose; their warnings are noise.
    let quiet = matches!(cli.command, Command::Scenario(_));
    let level = match cli.verbose {
        0 if quiet => "error",
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_FAILURE)
            }
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<u8> {
    let ctx = Ctx {
        file: load_config(cli.config.as_deref())?,
    };
    match cli.command {
        Command::Pki(PkiCmd::Init { out }) => {
            keys::init(&out)?;
            println!("PKI written to {}", out.display());
            Ok(0)
        }
        Command::Tsa(TsaCmd::Serve { pki, listen, authority }) => {
            let dir = ctx.pki(&pki)?;
            let name = match authority.as_str() {
                "t1" => keys::TSA_INITIAL,
                "t2" => keys::TSA_PERIODIC,
                other => return Err(usage(format!("unknown authority {other:?}, expected t1 or t2"))),
            };
            let identity = Arc::new(keys::identity(&dir, name)?);
            let addr = listen.or(ctx.file.listen.clone()).unwrap_or_else(|| "127.0.0.1:7301".into());
            serve_tsa(&addr, identity)?;
            Ok(0)
        }
        Command::Arc(ArcCmd::Serve {
            pki,
            listen,
            store,
            capacity_bytes,
            timing,
        }) => {
            let dir = ctx.pki(&pki)?;
            let store = ArchiveStore::open(ctx.store(&store)?, capacity_bytes)?;
            let actx = Arc::new(ArcContext {
                store,
                trust_root: keys::root(&dir)?,
                tsa_cert: keys::leaf(&dir, keys::TSA_INITIAL)?,
                config: ctx.arc_config(&timing)?,
                clock: Arc::new(SystemClock),
            });
            let addr = listen.or(ctx.file.listen.clone()).unwrap_or_else(|| "127.0.0.1:7300".into());
            let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            println!("archive listening on {}", listener.local_addr()?);
            arc::serve(listener, actx)?;
            Ok(0)
        }
        Command::Vsec(VsecCmd::Record {
            pki,
            arc,
            tsa,
            replay,
            port_a,
            port_b,
            idle_secs,
            sdp,
            from,
            to,
            timing,
        }) => {
            let dir = ctx.pki(&pki)?;
            let payload_map = match sdp {
                Some(p) => parse_sdp_rtpmap(&fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?,
                None => vec![PayloadMapping {
                    payload_type: 0,
                    codec_name: "PCMU".into(),
                    clock_rate: 8000,
                    channels: 1,
                }],
            };
            let source = match (replay, port_a, port_b) {
                (Some(path), _, _) => {
                    let mut f = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
                    record::Source::Replay(traffic::read_capture(&mut f)?)
                }
                (None, Some(a), Some(b)) => record::Source::Udp {
                    port_a: a,
                    port_b: b,
                    idle: Duration::from_secs(idle_secs),
                },
                _ => return Err(usage("give either --replay or both --port-a and --port-b")),
            };
            let args = record::RecordArgs {
                setup: CallSetup {
                    call_id: traffic::random_call_id(&mut rand::thread_rng()),
                    from_uri: from,
                    to_uri: to,
                    payload_map,
                },
                identity: keys::identity(&dir, keys::RECORDER)?,
                arc_addr: arc.or(ctx.file.arc.clone()).unwrap_or_else(|| "127.0.0.1:7300".into()),
                tsa_addr: tsa.or(ctx.file.tsa.clone()).unwrap_or_else(|| "127.0.0.1:7301".into()),
                config: RecorderConfig {
                    interval: ctx.interval(&timing)?,
                    qos: ctx.qos(&timing)?,
                    ..RecorderConfig::default()
                },
            };
            let state = record::run(args, source)?;
            println!("call ended: {state:?}");
            Ok(0)
        }
        Command::Verify(args) => {
            let (bytes, root, t1, config) = file_inputs(&ctx, &args)?;
            let result = verify::verify_archive(&bytes, &root, &t1, &config);
            println!("{}: {}", args.file.display(), result.status);
            if let Some(s) = &result.summary {
                println!(
                    "  {} -> {}, {} voice intervals, {}/{} packets, {:.3} s, termination {}",
                    s.from_uri,
                    s.to_uri,
                    s.voice_intervals,
                    s.packets[0],
                    s.packets[1],
                    s.duration_micros as f64 / 1e6,
                    s.termination.map_or("none".to_owned(), |r| r.to_string())
                );
            }
            if let Some(r) = result.reports.last() {
                if let Some((code, detail)) = r.failure() {
                    println!("  {code}: {detail}");
                }
            }
            Ok(result.status.exit_code() as u8)
        }
        Command::Inspect(args) => {
            let (bytes, root, t1, config) = file_inputs(&ctx, &args)?;
            print!("{}", verify::inspect(&bytes, &root, &t1, &config));
            Ok(0)
        }
        Command::Extract(ExtractArgs { file, out_dir }) => {
            let (bytes, root, t1, config) = file_inputs(&ctx, &file)?;
            let x = verify::extract_streams(&bytes, &root, &t1, &config)?;
            for w in &x.warnings {
                eprintln!("warning: {w:?}");
            }
            verify::write_extraction(&x, &out_dir)?;
            println!(
                "{}: {} A->B and {} B->A packets written to {}",
                x.status,
                x.channels[0].len(),
                x.channels[1].len(),
                out_dir.display()
            );
            Ok(0)
        }
        Command::Scenario(cmd) => scenario(cmd),
        Command::Anchor(AnchorCmd::Run {
            store,
            pki,
            tsa,
            start,
            end,
        }) => {
            let store = ArchiveStore::open(ctx.store(&store)?, None)?;
            let end = end.map_or_else(Timestamp::now, Timestamp::from_micros);
            let mut client: Box<dyn TsaClient> = match tsa.or(ctx.file.tsa.clone()) {
                Some(addr) => Box::new(TcpTsaClient::new(addr)),
                None => {
                    let dir = ctx.pki(&pki)?;
                    Box::new(LocalTsa::new(
                        Arc::new(keys::identity(&dir, keys::TSA_PERIODIC)?),
                        Arc::new(SystemClock),
                    ))
                }
            };
            let (record, path) = arc::period_anchor(&store, Timestamp::from_micros(start), end, client.as_mut())?;
            println!("anchored {} files, root {} -> {}", record.files.len(), record.merkle_root, path.display());
            Ok(0)
        }
        Command::Anchor(AnchorCmd::Verify { store, pki, anchor }) => {
            let dir = ctx.pki(&pki)?;
            let store = ArchiveStore::open(ctx.store(&store)?, None)?;
            let record = arc::anchor::load_anchor(&anchor)?;
            match arc::verify_anchor(&store, &record, &keys::leaf(&dir, keys::TSA_PERIODIC)?) {
                Ok(t) => {
                    println!("anchor valid, stamped at {t}");
                    Ok(0)
                }
                Err(e) => {
                    println!("anchor invalid: {e}");
                    Ok(1)
                }
            }
        }
        Command::Capture(CaptureCmd::Gen {
            out,
            seconds,
            seed,
            loss,
        }) => {
            if !(0.0..1.0).contains(&loss) {
                return Err(usage("loss must lie in [0, 1)"));
            }
            let profile = harness::TrafficProfile {
                loss,
                ..harness::TrafficProfile::default().with_duration(Duration::from_secs(seconds))
            };
            let call = harness::generate_call(&profile, seed);
            let mut f = io::BufWriter::new(fs::File::create(&out)?);
            traffic::write_capture(&mut f, &call.packets)?;
            println!("{} packets written to {}", call.packets.len(), out.display());
            Ok(0)
        }
    }
}

type FileInputs = (Vec<u8>, sva::envelope::Certificate, sva::envelope::Certificate, ArcConfig);

fn file_inputs(ctx: &Ctx, args: &FileArgs) -> Result<FileInputs> {
    let dir = ctx.pki(&args.pki)?;
    let bytes = fs::read(&args.file).with_context(|| format!("reading {}", args.file.display()))?;
    Ok((
        bytes,
        keys::root(&dir)?,
        keys::leaf(&dir, keys::TSA_INITIAL)?,
        ctx.arc_config(&args.timing)?,
    ))
}

fn serve_tsa(addr: &str, identity: Arc<sva::envelope::SignerIdentity>) -> Result<()> {
    let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    println!("time-stamping authority listening on {}", listener.local_addr()?);
    for stream in listener.incoming() {
        let mut stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let identity = Arc::clone(&identity);
        thread::spawn(move || {
            let _ = stream.set_read_timeout(Some(Duration::from_secs(5)));
            match serve_tsa_request(&mut stream, &identity, Timestamp::now()) {
                Ok(()) => info!("issued token"),
                Err(e) => warn!("time-stamp request failed: {e}"),
            }
        });
    }
    Ok(())
}

fn scenario(cmd: ScenarioCmd) -> Result<u8> {
    let row = |o: &harness::ScenarioOutcome| {
        format!(
            "{:<22} {:<28} {:<28} {:<36} {}",
            o.name,
            o.expected.to_string(),
            o.actual.to_string(),
            o.offline.to_string(),
            if o.passed { "PASS" } else { "FAIL" }
        )
    };
    let header = format!(
        "{:<22} {:<28} {:<28} {:<36} {}",
        "scenario", "expected", "actual", "offline", "result"
    );
    match cmd {
        ScenarioCmd::List => {
            for s in harness::scenarios() {
                println!("{:<22} {:?} -> {}", s.name, s.attack, s.expected);
            }
            Ok(0)
        }
        ScenarioCmd::Run { name, seed } => {
            let s = harness::scenario_by_name(&name).ok_or_else(|| usage(format!("no scenario named {name:?}")))?;
            let o = harness::run_scenario(&s, seed)?;
            println!("{header}\n{}", row(&o));
            Ok(if o.passed { 0 } else { 1 })
        }
        ScenarioCmd::All { seed, parallel, summary } => {
            let results = harness::run_all(seed, parallel);
            let mut out = io::stdout().lock();
            writeln!(out, "{header}")?;
            let mut failed = 0;
            let mut lines = Vec::new();
            for (s, r) in harness::scenarios().iter().zip(results) {
                match r {
                    Ok(o) => {
                        failed += usize::from(!o.passed);
                        writeln!(out, "{}", row(&o))?;
                        lines.push(format!(
                            "{{\"name\":\"{}\",\"seed\":{},\"expected\":\"{}\",\"actual\":\"{}\",\"passed\":{}}}",
                            o.name, o.seed, o.expected, o.actual, o.passed
                        ));
                    }
                    Err(e) => {
                        failed += 1;
                        writeln!(out, "{:<22} error: {e}", s.name)?;
                        lines.push(format!("{{\"name\":\"{}\",\"passed\":false}}", s.name));
                    }
                }
            }
            writeln!(out, "{} scenarios, {failed} failed", lines.len())?;
            if let Some(path) = summary {
                fs::write(&path, lines.join("\n") + "\n")?;
            }
            if failed > 0 {
                bail!("{failed} scenarios failed");
            }
            Ok(0)
        }
    }
}
