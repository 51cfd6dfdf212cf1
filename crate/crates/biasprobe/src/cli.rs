use std::collections::BTreeSet;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use biasprobe_backend::{serve_mock, BiasTable, ClientConfig, HttpBackend};
use biasprobe_core::RunManifest;
use clap::{Args, Parser, Subcommand};

use crate::classify_audit::audit_classify;
use crate::dataset::{generate_dataset, load_images};
use crate::edit_audit::audit_edits;
use crate::error::AuditError;
use crate::layout::{new_run_id, RunDir};
use crate::report::{build_summary, emit_reports, emit_soft_sensitivity, Format};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_BACKEND: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "biasprobe", version, about = "Bias audits for text-to-image models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a manifest and print it with defaults filled in.
    ValidateManifest {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Generate an image set per identity through the backend.
    GenerateDataset {
        #[command(flatten)]
        backend: BackendArgs,
        /// Output directory; receives `<identity>/<index>.png` and index.jsonl.
        #[arg(long)]
        out: PathBuf,
        /// Images per identity (default: images_per_identity_generation).
        #[arg(long)]
        count: Option<u32>,
        /// Image width and height requested from the backend.
        #[arg(long, num_args = 2, value_names = ["WIDTH", "HEIGHT"])]
        size: Option<Vec<u32>>,
    },
    /// Edit each identity's images towards professions and measure drift.
    AuditEdit(AuditArgs),
    /// Run the diffusion-classifier association audit.
    AuditClassify(AuditArgs),
    /// Rebuild tables, summary and HTML from a run directory.
    Report {
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
        #[arg(long)]
        run_id: String,
        /// Comma-separated subset of csv, json, html.
        #[arg(long, value_delimiter = ',', default_value = "csv,json,html")]
        formats: Vec<Format>,
        /// Also write association scores under a soft indicator with this
        /// temperature (sensitivity analysis; not part of the tables).
        #[arg(long)]
        soft_temperature: Option<f64>,
    },
    /// Serve the deterministic mock backend.
    MockServe {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// 0 picks a free port.
        #[arg(long, default_value_t = 8700)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// JSON file with label_rules and loss_rules.
        #[arg(long)]
        bias_table: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Backend URL; overrides the manifest's backend_endpoint.
    #[arg(long, env = "BIASPROBE_BACKEND")]
    pub backend: Option<String>,
    /// Maximum requests in flight.
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    /// Retries per request on transport or server errors.
    #[arg(long, default_value_t = 3)]
    pub retries: u32,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Dataset directory: `<identity>/*.png`, optionally with index.jsonl.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long, default_value = "runs")]
    pub runs_dir: PathBuf,
    /// Reuse or resume a run; a new id is derived otherwise.
    #[arg(long)]
    pub run_id: Option<String>,
}

fn read_manifest(path: &Path) -> Result<(RunManifest, Vec<u8>), AuditError> {
    let bytes = std::fs::read(path).map_err(AuditError::io(path))?;
    let manifest = RunManifest::from_json(&bytes)?;
    Ok((manifest, bytes))
}

fn client(args: &BackendArgs, manifest: &RunManifest) -> Result<HttpBackend, AuditError> {
    let endpoint = args.backend.clone().unwrap_or_else(|| manifest.backend_endpoint.clone());
    let config = ClientConfig {
        max_in_flight: args.concurrency.max(1),
        max_retries: args.retries,
        ..ClientConfig::new(endpoint)
    };
    Ok(HttpBackend::new(config)?)
}

fn open_run(args: &AuditArgs, bytes: &[u8]) -> Result<RunDir, AuditError> {
    let run_id = args.run_id.clone().unwrap_or_else(|| new_run_id(bytes));
    RunDir::create(&args.runs_dir, &run_id, bytes)
}

async fn execute(cmd: Command) -> Result<(), AuditError> {
    match cmd {
        Command::ValidateManifest { manifest } => {
            let (m, _) = read_manifest(&manifest)?;
            println!("{}", m.to_json_pretty());
        }
        Command::GenerateDataset { backend, out, count, size } => {
            let (m, _) = read_manifest(&backend.manifest)?;
            let http = client(&backend, &m)?;
            let size = size.map(|v| (v[0], v[1]));
            let sets = generate_dataset(&m, &http, &out, count, size).await?;
            let total: usize = sets.values().map(Vec::len).sum();
            println!("wrote {total} images to {}", out.display());
        }
        Command::AuditEdit(args) => {
            let (m, bytes) = read_manifest(&args.backend.manifest)?;
            let images = load_images(&args.images, &m)?;
            let run = open_run(&args, &bytes)?;
            let http = client(&args.backend, &m)?;
            let rows = audit_edits(&m, &images, &http, &run, args.backend.concurrency).await?;
            println!("{} edit rows; run directory {}", rows.len(), run.root().display());
            println!("run_id {}", run.run_id());
        }
        Command::AuditClassify(args) => {
            let (m, bytes) = read_manifest(&args.backend.manifest)?;
            let images = load_images(&args.images, &m)?;
            let run = open_run(&args, &bytes)?;
            let http = client(&args.backend, &m)?;
            let out = audit_classify(&m, &images, &http, &run, args.backend.concurrency).await?;
            println!("{} association rows; run directory {}", out.table2.rows.len(), run.root().display());
            println!("run_id {}", run.run_id());
        }
        Command::Report { runs_dir, run_id, formats, soft_temperature } => {
            let run = RunDir::open(&runs_dir, &run_id)?;
            let (summary, manifest, faces) = build_summary(&run)?;
            let formats: BTreeSet<Format> = formats.into_iter().collect();
            let mut written = emit_reports(&summary, &manifest, &faces, &formats, &run.report_dir())?;
            if let Some(t) = soft_temperature {
                written.push(emit_soft_sensitivity(&run, &manifest, t, &run.report_dir())?);
            }
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::MockServe { seed, port, host, bias_table } => {
            let bias = match bias_table {
                Some(p) => BiasTable::load(&p).map_err(|e| AuditError::Io {
                    path: p.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
                })?,
                None => BiasTable::default(),
            };
            let server = serve_mock(seed, SocketAddr::new(host, port), bias).await.map_err(|e| AuditError::Io {
                path: PathBuf::from(format!("{host}:{port}")),
                source: std::io::Error::new(std::io::ErrorKind::AddrInUse, e.to_string()),
            })?;
            println!("listening on {}", server.url());
            use std::io::Write;
            let _ = std::io::stdout().flush();
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = server.wait() => {}
            }
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
/// Usage errors exit 1 like validation errors; `--help` exits 0.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime");
    match rt.block_on(execute(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
