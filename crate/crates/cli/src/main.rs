//! `tdcsim`: runs the simulator's experiments and writes plot-ready CSV or
//! JSON.
//!
//! Exit codes: 0 on success, 2 when the spec or arguments are invalid, 3 when
//! a run fails.

mod output;

use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tdcsim_core::analysis::LinearityReport;
use tdcsim_core::calib::{build_table, histogram};
use tdcsim_core::delayline::COARSE_MASK;
use tdcsim_core::experiment::{
    run_calib_compare, run_jitter, run_linearity, run_qkd, run_stream_bench, run_tempsweep, ExperimentError,
    ExperimentSpec, Provenance, SweepOrder, TdcChannel,
};
use tdcsim_core::sources::{SourceConfig, SourceRegistry};
use tdcsim_core::stream::{
    capture_continuous, capture_requests, decode_record, encode_record, serve, CaptureReader, CaptureWriter,
    RecordSource, ServeMode, StreamError, FLAG_VALID,
};

use output::{Format, Output};

#[derive(Parser)]
#[command(
    name = "tdcsim",
    version,
    about = "Tapped-delay-line TDC simulator and calibration experiments"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment spec; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Master seed for every random source.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Temperature sweep comparing calibration strategies.
    Tempsweep(SweepArgs),
    /// χ² between RO and laser/SPD code-density histograms.
    CalibCompare,
    /// HVDD scenario: pulse shape and gated QBER.
    Qkd(QkdArgs),
    /// Loopback streaming benchmark plus buffer model.
    StreamBench(BenchArgs),
    /// Time-tags a source on line A and writes a capture file.
    Simulate(SimulateArgs),
    /// Linearity of a capture file, or the default line's DNL and
    /// two-channel jitter when no input is given.
    Analyze(AnalyzeArgs),
    /// Serves simulated tags on a TCP endpoint.
    Serve(ServeArgs),
    /// Connects to a server and writes what it sends to a capture file.
    Capture(CaptureArgs),
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    start: Option<f64>,
    #[arg(long)]
    stop: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    /// Comma-separated strategy names.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    /// Detections per channel per temperature.
    #[arg(long)]
    events: Option<usize>,
    #[arg(long)]
    descending: bool,
}

#[derive(Args)]
struct QkdArgs {
    #[arg(long)]
    routing_error: Option<f64>,
    /// Background clicks per second.
    #[arg(long)]
    background_rate: Option<f64>,
    #[arg(long)]
    events: Option<usize>,
    #[arg(long)]
    gate_width_ps: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Continuous,
    Request,
}

#[derive(Args)]
struct ModeArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Continuous)]
    mode: ModeArg,
    /// Request period in request mode.
    #[arg(long, default_value_t = 50)]
    period_ms: u64,
}

impl ModeArgs {
    fn serve_mode(&self) -> ServeMode {
        match self.mode {
            ModeArg::Continuous => ServeMode::Continuous,
            ModeArg::Request => ServeMode::Request {
                period_ms: self.period_ms,
            },
        }
    }
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    records: Option<u64>,
    #[command(flatten)]
    mode: ModeArgs,
    #[arg(long)]
    buffer_records: Option<usize>,
    /// Records per second; unpaced when omitted.
    #[arg(long)]
    rate: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Source kind; defaults to the spec's laser/SPD source.
    #[arg(long)]
    source: Option<String>,
    #[arg(long, default_value_t = 1 << 17)]
    events: usize,
    /// Line temperature in °C; defaults to the spec's jitter temperature.
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, default_value = "simulate.ttag")]
    output: String,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Capture file to analyze.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7400")]
    endpoint: String,
    #[command(flatten)]
    mode: ModeArgs,
    #[arg(long)]
    buffer_records: Option<usize>,
    /// Records per second; unpaced when omitted.
    #[arg(long)]
    rate: Option<f64>,
    /// Stop after this many records; runs until killed when omitted.
    #[arg(long)]
    events: Option<usize>,
    /// Line temperature in °C; defaults to the spec's jitter temperature.
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Args)]
struct CaptureArgs {
    #[arg(long, default_value = "127.0.0.1:7400")]
    endpoint: String,
    #[command(flatten)]
    mode: ModeArgs,
    #[arg(long, default_value = "capture.ttag")]
    output: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}

fn load_spec(common: &Common) -> Result<ExperimentSpec, ExperimentError> {
    let mut spec = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
            ExperimentSpec::from_toml(&text)?
        }
        None => ExperimentSpec::default(),
    };
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    if let Some(dir) = &common.out_dir {
        spec.out_dir = dir.clone();
    }
    Ok(spec)
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    let mut spec = load_spec(&cli.common)?;
    match cli.command {
        Command::Tempsweep(a) => {
            let s = &mut spec.sweep;
            s.start = a.start.unwrap_or(s.start);
            s.stop = a.stop.unwrap_or(s.stop);
            s.step = a.step.unwrap_or(s.step);
            s.events_per_step = a.events.unwrap_or(s.events_per_step);
            if a.descending {
                s.order = SweepOrder::Descending;
            }
            if let Some(names) = a.strategies {
                spec.strategies = names;
            }
            spec.validate()?;
            let out = Output::new(&spec.out_dir, cli.common.format)?;
            let r = run_tempsweep(&spec)?;
            match out.format {
                Format::Csv => r.write_csv(out.create("tempsweep.csv")?)?,
                Format::Json => out.json("tempsweep", &r)?,
            }
        }
        Command::CalibCompare => {
            let out = Output::new(&spec.out_dir, cli.common.format)?;
            let r = run_calib_compare(&spec)?;
            log::info!("chi-square {:.5}", r.chi_square);
            match out.format {
                Format::Csv => r.write_csv(out.create("calib_compare.csv")?)?,
                Format::Json => out.json("calib_compare", &r)?,
            }
        }
        Command::Qkd(a) => {
            let q = &mut spec.qkd;
            q.routing_error = a.routing_error.unwrap_or(q.routing_error);
            q.background_rate = a.background_rate.unwrap_or(q.background_rate);
            q.events = a.events.unwrap_or(q.events);
            q.gate_width_ps = a.gate_width_ps.unwrap_or(q.gate_width_ps);
            spec.validate()?;
            let out = Output::new(&spec.out_dir, cli.common.format)?;
            let r = run_qkd(&spec)?;
            log::info!(
                "QBER {:.4} over {} gated events, pulse FWHM {:.1} ps",
                r.qber.qber,
                r.qber.gated,
                r.pulse.fwhm
            );
            match out.format {
                Format::Csv => {
                    r.write_scan_csv(out.create("qkd_scan.csv")?)?;
                    out.histogram("qkd_pulse", &r.provenance, &r.pulse.histogram)?;
                }
                Format::Json => out.json("qkd", &r)?,
            }
        }
        Command::StreamBench(a) => {
            let st = &mut spec.stream;
            st.records = a.records.unwrap_or(st.records);
            st.server.mode = a.mode.serve_mode();
            st.server.buffer_records = a.buffer_records.unwrap_or(st.server.buffer_records);
            st.server.rate = a.rate.or(st.server.rate);
            let out = Output::new(&spec.out_dir, cli.common.format)?;
            let r = run_stream_bench(&spec)?;
            log::info!(
                "{} of {} records in {:.3} s ({:.3e} records/s), {} out of order",
                r.records_received,
                r.records_sent,
                r.seconds,
                r.records_per_second,
                r.out_of_order
            );
            match out.format {
                Format::Csv => out.csv(
                    "stream_bench",
                    &r.provenance,
                    &[
                        "records_sent",
                        "records_received",
                        "out_of_order",
                        "seconds",
                        "records_per_second",
                        "server_dropped",
                        "model_overflow_events",
                        "model_effective_throughput",
                    ],
                    [vec![
                        r.records_sent.to_string(),
                        r.records_received.to_string(),
                        r.out_of_order.to_string(),
                        r.seconds.to_string(),
                        r.records_per_second.to_string(),
                        r.server_dropped.to_string(),
                        r.buffer_model.overflow_events.to_string(),
                        r.buffer_model.effective_throughput.to_string(),
                    ]],
                )?,
                Format::Json => out.json("stream_bench", &r)?,
            }
            if !r.lossless() {
                return Err(ExperimentError::Runtime("stream was not lossless".into()));
            }
        }
        Command::Simulate(a) => simulate(&spec, cli.common.format, a)?,
        Command::Analyze(a) => analyze(&spec, cli.common.format, a)?,
        Command::Serve(a) => serve_tags(&spec, a)?,
        Command::Capture(a) => capture(&spec, a)?,
    }
    Ok(())
}

fn tag_source(spec: &ExperimentSpec, kind: Option<&str>, purpose: &str) -> SourceConfig {
    let base = match kind {
        Some("ring_oscillator") => &spec.ro,
        _ => &spec.spd,
    };
    SourceConfig {
        kind: kind.map_or(base.kind.clone(), String::from),
        seed: spec.derive_seed(purpose),
        sampling_frequency: spec.line.profile.f_s,
        ..base.clone()
    }
}

/// Endless stream of encoded tags of `cfg` on line A at `temperature`.
fn record_stream(
    spec: &ExperimentSpec,
    cfg: &SourceConfig,
    temperature: f64,
) -> Result<impl Iterator<Item = u64> + Send, ExperimentError> {
    let mut source = SourceRegistry::with_builtin().build(cfg)?;
    let mut tdc = TdcChannel::new(&spec.line_a()?, temperature, 0)?;
    Ok(std::iter::from_fn(move || source.next_event()).map(move |e| {
        let mut tag = tdc.tag(e.time_ps);
        tag.coarse &= COARSE_MASK;
        encode_record(&tag, FLAG_VALID).expect("tag fields fit the record")
    }))
}

#[derive(Serialize)]
struct SimulateSummary {
    provenance: Provenance,
    source: String,
    temperature: f64,
    n_c: usize,
    records: u64,
    capture: PathBuf,
}

fn simulate(spec: &ExperimentSpec, format: Format, a: SimulateArgs) -> Result<(), ExperimentError> {
    spec.validate()?;
    let out = Output::new(&spec.out_dir, format)?;
    let t = a.temperature.unwrap_or(spec.jitter_temperature);
    let cfg = tag_source(spec, a.source.as_deref(), "simulate");
    let n_c = spec.line_a()?.n_c(t)?;
    let records: Vec<u64> = record_stream(spec, &cfg, t)?.take(a.events).collect();
    let path = out.path(&a.output);
    let mut w = CaptureWriter::new(File::create(&path)?, spec.line.profile.f_s)?;
    w.write(&records)?;
    w.finish()?;
    println!("{}", path.display());
    let summary = SimulateSummary {
        provenance: spec.provenance(),
        source: cfg.kind,
        temperature: t,
        n_c,
        records: records.len() as u64,
        capture: path,
    };
    match format {
        Format::Csv => out.csv(
            "simulate",
            &summary.provenance,
            &["source", "temperature_c", "n_c", "records", "capture"],
            [vec![
                summary.source.clone(),
                t.to_string(),
                n_c.to_string(),
                summary.records.to_string(),
                summary.capture.display().to_string(),
            ]],
        ),
        Format::Json => out.json("simulate", &summary),
    }
}

#[derive(Serialize)]
struct CaptureAnalysis {
    provenance: Provenance,
    input: PathBuf,
    records: u64,
    sampling_hz: f64,
    n_c: usize,
    report: LinearityReport,
}

fn analyze(spec: &ExperimentSpec, format: Format, a: AnalyzeArgs) -> Result<(), ExperimentError> {
    let out = Output::new(&spec.out_dir, format)?;
    let Some(input) = a.input else {
        let lin = run_linearity(spec)?;
        let jit = run_jitter(spec)?;
        log::info!(
            "N_c {}, DNL [{:.2}, {:.2}] with {} bins above 1, jitter FWHM {:.2} ps",
            lin.table.n_c(),
            lin.report.dnl_range.0,
            lin.report.dnl_range.1,
            lin.report.bins_above_one,
            jit.report.fwhm
        );
        return match format {
            Format::Csv => {
                out.linearity("linearity", &lin.provenance, &lin.table, &lin.report)?;
                out.histogram("jitter", &jit.provenance, &jit.report.histogram)
            }
            Format::Json => {
                out.json("linearity", &lin)?;
                out.json("jitter", &jit)
            }
        };
    };
    let reader = CaptureReader::new(File::open(&input)?)?;
    let sampling_hz = reader.header().sampling_hz;
    let mut fines = Vec::new();
    for word in reader {
        fines.push(decode_record(word?)?.0.fine as usize);
    }
    let table = build_table(&histogram(fines.iter().copied()), 1e12 / sampling_hz)?;
    let report = LinearityReport::from_table(&table);
    let prov = spec.provenance();
    match format {
        Format::Csv => out.linearity("capture_linearity", &prov, &table, &report),
        Format::Json => out.json(
            "capture_linearity",
            &CaptureAnalysis {
                provenance: prov,
                input,
                records: fines.len() as u64,
                sampling_hz,
                n_c: table.n_c(),
                report,
            },
        ),
    }
}

fn serve_tags(spec: &ExperimentSpec, a: ServeArgs) -> Result<(), ExperimentError> {
    spec.validate()?;
    let mut cfg = spec.stream.server.clone();
    cfg.endpoint = a.endpoint;
    cfg.mode = a.mode.serve_mode();
    cfg.buffer_records = a.buffer_records.unwrap_or(cfg.buffer_records);
    cfg.rate = a.rate.or(cfg.rate);
    let t = a.temperature.unwrap_or(spec.jitter_temperature);
    let records = record_stream(spec, &tag_source(spec, None, "serve"), t)?;
    let source: RecordSource = match a.events {
        Some(n) => Box::new(records.take(n)),
        None => Box::new(records),
    };
    let mut handle = serve(&cfg, source)?;
    println!("{}", handle.local_addr());
    handle.wait_source();
    while handle.active_clients() > 0 {
        std::thread::sleep(Duration::from_millis(20));
    }
    let stats = handle.shutdown();
    log::info!("published {} records, dropped {}", stats.published, stats.dropped);
    Ok(())
}

fn capture(spec: &ExperimentSpec, a: CaptureArgs) -> Result<(), ExperimentError> {
    let out = Output::new(&spec.out_dir, Format::Csv)?;
    let path = out.path(&a.output);
    let mut w = CaptureWriter::new(File::create(&path)?, spec.line.profile.f_s)?;
    let mut sink = |records: &[u64]| -> Result<(), StreamError> { w.write(records) };
    let records = match a.mode.serve_mode() {
        ServeMode::Continuous => capture_continuous(a.endpoint.as_str(), &mut sink)?.records,
        ServeMode::Request { period_ms } => {
            capture_requests(a.endpoint.as_str(), Duration::from_millis(period_ms), &mut sink)?.records
        }
    };
    w.finish()?;
    println!("{}", path.display());
    log::info!("captured {records} records");
    Ok(())
}
