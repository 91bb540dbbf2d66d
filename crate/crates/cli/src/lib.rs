//! Command-line surface for the `ftct` crawler.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use ftct_core::api_client::{ApiClient, RequestLimiter, UreqTransport};
use ftct_core::clock::{Clock, Shutdown, SystemClock};
use ftct_core::collector::{resolve_boards, Collector, CollectorConfig};
use ftct_core::config::{Settings, ENV_PREFIX};
use ftct_core::extract::{extract_archive_links, verify_archive};
use ftct_core::logging::init_logging;
use ftct_core::storage::ArchiveLayout;
use ftct_core::EndpointSet;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATIONS: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "ftct",
    version,
    about = "Text-only imageboard archival crawler"
)]
pub struct Cli {
    /// `key = value` config file (also FTCT_CONFIG)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Crawl continuously until interrupted
    Run(CrawlArgs),
    /// Print the boards advertised upstream and exit
    Boards(CrawlArgs),
    /// Derive media links from an archive, one URL per line
    ExtractLinks {
        /// Archive root directory
        #[arg(long = "in", value_name = "ARCHIVE")]
        input: PathBuf,
        /// Output text file
        #[arg(long, value_name = "TXT")]
        out: PathBuf,
        #[arg(long)]
        media_host: Option<String>,
        #[arg(long)]
        scheme: Option<String>,
    },
    /// Check file names, payloads and timestamp order of an archive
    VerifyArchive {
        /// Archive root directory
        root: PathBuf,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct CrawlArgs {
    /// Only monitor these boards (comma separated)
    #[arg(long, value_name = "LIST")]
    pub boards: Option<String>,
    /// Monitor every board except these (comma separated)
    #[arg(long, value_name = "LIST")]
    pub exclude_boards: Option<String>,
    /// Archive root; `logs/` and `saves/` are created inside it
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<String>,
    /// Minimum gap between any two requests
    #[arg(long, value_name = "MS")]
    pub min_interval_ms: Option<String>,
    #[arg(long, value_name = "N")]
    pub burst: Option<String>,
    /// Pause between cycles
    #[arg(long, value_name = "SECONDS")]
    pub cycle_pause_s: Option<String>,
    /// When to fetch catalogs: `jit` (before each board) or `upfront`
    #[arg(long, value_name = "MODE")]
    pub mode: Option<String>,
    /// Re-download every live thread each cycle
    #[arg(long)]
    pub refetch_unchanged: bool,
    /// Treat unknown board codes as an error
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub user_agent: Option<String>,
    #[arg(long)]
    pub api_host: Option<String>,
    #[arg(long)]
    pub media_host: Option<String>,
    #[arg(long)]
    pub scheme: Option<String>,
}

impl CrawlArgs {
    fn to_settings(&self) -> Result<Settings, Failure> {
        let mut s = Settings::new();
        let pairs = [
            ("boards", &self.boards),
            ("exclude_boards", &self.exclude_boards),
            ("data_dir", &self.data_dir),
            ("min_interval_ms", &self.min_interval_ms),
            ("burst", &self.burst),
            ("cycle_pause_s", &self.cycle_pause_s),
            ("mode", &self.mode),
            ("user_agent", &self.user_agent),
            ("api_host", &self.api_host),
            ("media_host", &self.media_host),
            ("scheme", &self.scheme),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                s.set(key, v.clone()).map_err(Failure::config)?;
            }
        }
        if self.refetch_unchanged {
            s.set("refetch_unchanged", "true")
                .map_err(Failure::config)?;
        }
        if self.strict {
            s.set("strict", "true").map_err(Failure::config)?;
        }
        Ok(s)
    }
}

/// A failed command: exit code plus a one-line diagnostic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn config(e: impl fmt::Display) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: e.to_string(),
        }
    }

    pub fn io(e: impl fmt::Display) -> Self {
        Self {
            code: EXIT_IO,
            message: e.to_string(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Debug)]
pub struct Invocation {
    pub command: Command,
    /// Present for `run` and `boards`.
    pub config: Option<CollectorConfig>,
}

/// Parses arguments and layers flags over `FTCT_*` variables over the config
/// file over defaults.
pub fn parse_cli<I, T>(argv: I, env: &HashMap<String, String>) -> Result<Invocation, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    let config = match &cli.command {
        Command::Run(args) | Command::Boards(args) => {
            Some(layered_config(args, cli.config.as_ref(), env).map_err(|f| {
                clap::Error::raw(clap::error::ErrorKind::ValueValidation, f.message + "\n")
            })?)
        }
        _ => None,
    };
    Ok(Invocation {
        command: cli.command,
        config,
    })
}

fn layered_config(
    args: &CrawlArgs,
    config_file: Option<&PathBuf>,
    env: &HashMap<String, String>,
) -> Result<CollectorConfig, Failure> {
    let flags = args.to_settings()?;
    let env_layer = Settings::from_env(env.iter().map(|(k, v)| (k.as_str(), v.clone())));
    let file_path = config_file
        .cloned()
        .or_else(|| env.get(&format!("{ENV_PREFIX}CONFIG")).map(PathBuf::from));
    let file_layer = match file_path {
        Some(p) => {
            let text = fs::read_to_string(&p)
                .map_err(|e| Failure::config(format!("cannot read {}: {e}", p.display())))?;
            Settings::parse_file(&text).map_err(Failure::config)?
        }
        None => Settings::new(),
    };
    flags
        .over(&env_layer.over(&file_layer))
        .to_config()
        .map_err(Failure::config)
}

pub fn execute(inv: Invocation, shutdown: Shutdown) -> Result<(), Failure> {
    match inv.command {
        Command::Run(_) => run(inv.config.expect("parsed with config"), shutdown),
        Command::Boards(_) => boards(inv.config.expect("parsed with config"), shutdown),
        Command::ExtractLinks {
            input,
            out,
            media_host,
            scheme,
        } => extract_links(input, out, media_host, scheme),
        Command::VerifyArchive { root } => verify(root),
    }
}

fn run(config: CollectorConfig, shutdown: Shutdown) -> Result<(), Failure> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let layout = ArchiveLayout::new(&config.storage_root);
    let logs = init_logging(&layout, clock.utc_now()).map_err(Failure::io)?;
    log::info!(
        "starting: root={} min_interval_ms={} mode={:?} cycle_pause_s={}",
        config.storage_root.display(),
        config.budget.min_interval().as_millis(),
        config.scheduling_mode,
        config.cycle_pause.as_secs_f64()
    );
    let mut collector = Collector::new(config, Arc::new(UreqTransport::new()), clock, shutdown)
        .map_err(Failure::config)?;
    let result = collector.run();
    logs.flush();
    result.map_err(|e| Failure {
        code: e.exit_code(),
        message: e.to_string(),
    })
}

fn boards(config: CollectorConfig, shutdown: Shutdown) -> Result<(), Failure> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let limiter = Arc::new(RequestLimiter::new(
        config.budget,
        clock.clone(),
        shutdown.clone(),
    ));
    let client = ApiClient::new(
        config.endpoints.clone(),
        Arc::new(UreqTransport::new()),
        limiter,
        clock,
        shutdown,
    )
    .with_retry(config.retry.clone())
    .with_user_agent(config.user_agent.clone());
    let list = client.fetch_board_list().map_err(Failure::io)?;
    if !config.include_boards.is_empty() {
        let available = list.ids().cloned().collect();
        let selection = resolve_boards(&available, &config.include_boards, &config.exclude_boards);
        match selection {
            Ok(s) if config.strict && !s.unknown.is_empty() => {
                return Err(Failure::config(format!(
                    "unknown boards: {}",
                    s.unknown
                        .iter()
                        .map(|b| b.as_str())
                        .collect::<Vec<_>>()
                        .join(",")
                )))
            }
            Err(e) if config.strict => return Err(Failure::config(e)),
            _ => {}
        }
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for info in &list.boards {
        writeln!(
            out,
            "{}\t{}",
            info.board,
            info.title.as_deref().unwrap_or("")
        )
        .map_err(Failure::io)?;
    }
    Ok(())
}

fn extract_links(
    input: PathBuf,
    out: PathBuf,
    media_host: Option<String>,
    scheme: Option<String>,
) -> Result<(), Failure> {
    if !input.is_dir() {
        return Err(Failure::io(format!(
            "{} is not a directory",
            input.display()
        )));
    }
    let defaults = EndpointSet::default();
    let endpoints = EndpointSet::new(
        scheme.as_deref().unwrap_or(&defaults.scheme),
        &defaults.api_host,
        media_host.as_deref().unwrap_or(&defaults.media_host),
    )
    .map_err(Failure::config)?;
    let links = extract_archive_links(&input, &endpoints);
    let mut text = links.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(&out, text).map_err(|e| Failure::io(format!("{}: {e}", out.display())))?;
    eprintln!("{} links written to {}", links.len(), out.display());
    Ok(())
}

fn verify(root: PathBuf) -> Result<(), Failure> {
    if !root.is_dir() {
        return Err(Failure::io(format!(
            "{} is not a directory",
            root.display()
        )));
    }
    let report = verify_archive(&root);
    print!("{report}");
    if report.is_clean() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VIOLATIONS,
            message: format!("{} violations", report.violations.len()),
        })
    }
}
