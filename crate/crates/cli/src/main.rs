//! `i3`: run the registry and department services, deploy descriptors,
//! seed stores, verify students and issue certificates.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use i3_core::broker;
use i3_core::depts::{seed_store, ServiceKind};
use i3_core::domain::{Department, DeptStatus, Overall, VerificationResult};
use i3_core::emis::{
    broker_probes, EmisError, FanOutMode, GatewayClient, GatewayError, Orchestrator, DEFAULT_CALL_TIMEOUT,
};
use i3_core::engine::{remote_deploy, remote_undeploy};
use i3_core::node::{open_store, start_node, start_registry, NodeConfig};
use i3_core::storage::StorageFormat;
use i3_core::wsdd::parse_wsdd;

use config::FileConfig;

/// `println!` that ignores a closed stdout instead of panicking.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

const DEFAULT_REGISTRY_URL: &str = "http://127.0.0.1:7000";
const DEFAULT_DATA_DIR: &str = "i3-data";

#[derive(Parser, Debug)]
#[command(name = "i3", version, about = "Operate the i3 university service stack")]
struct Cli {
    /// Base URL of the service registry.
    #[arg(long, global = true, env = "I3_REGISTRY_URL")]
    registry_url: Option<String>,
    /// Config file (flat `key = "value"` lines).
    #[arg(long, global = true, env = "I3_CONFIG")]
    config: Option<PathBuf>,
    /// Directory holding each service's store.
    #[arg(long, global = true, env = "I3_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Log filter, e.g. `info` or `i3_core=debug`.
    #[arg(long, global = true, env = "I3_LOG_LEVEL")]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the service registry.
    Registry {
        /// Listen address (`:7000` means 127.0.0.1:7000).
        #[arg(long, env = "I3_LISTEN")]
        listen: Option<String>,
        /// Journal file; defaults to <data-dir>/registry/journal.jsonl.
        #[arg(long)]
        journal: Option<PathBuf>,
    },
    /// Run one department service (or the EMIS gateway).
    Service {
        /// amis, lmis, hmis, campus or emis. A comma list (or `all`) hosts
        /// several department services in one engine.
        kind: String,
        /// Listen address.
        #[arg(long, env = "I3_LISTEN")]
        listen: Option<String>,
        /// Storage format: tabular-text, json-lines or binary-log.
        #[arg(long, env = "I3_FORMAT")]
        format: Option<StorageFormat>,
        /// Seed the store from this directory before serving.
        #[arg(long)]
        seed: Option<PathBuf>,
        /// Descriptor to deploy from instead of the built-in one.
        #[arg(long)]
        wsdd: Option<PathBuf>,
        /// Start with nothing deployed; use `i3 deploy` afterwards.
        #[arg(long)]
        no_deploy: bool,
        /// Delay every call by this many milliseconds (testing aid).
        #[arg(long, hide = true)]
        delay_ms: Option<u64>,
    },
    /// Deploy the services of a descriptor onto a running host.
    Deploy {
        /// Base URL of the host, e.g. http://127.0.0.1:7101.
        #[arg(long)]
        host: String,
        /// Deployment descriptor file.
        file: PathBuf,
    },
    /// Undeploy the services named in an undeployment descriptor.
    Undeploy {
        /// Base URL of the host.
        #[arg(long)]
        host: String,
        /// Undeployment descriptor file.
        file: PathBuf,
    },
    /// Load fixture records into a service's store.
    Seed {
        /// amis, lmis, hmis, emis, or all.
        target: String,
        /// Fixture directory.
        #[arg(long)]
        from: Option<PathBuf>,
        /// Storage format of the target store(s); defaults per service.
        #[arg(long)]
        format: Option<StorageFormat>,
    },
    /// Check a student's standing with every department.
    Verify {
        student_id: String,
        /// Ask a running gateway instead of verifying in-process.
        #[arg(long, env = "I3_GATEWAY_URL")]
        gateway: Option<String>,
        /// Query departments one at a time (testing aid).
        #[arg(long, hide = true, conflicts_with = "gateway")]
        sequential: bool,
    },
    /// Issue a degree certificate after a fresh verification.
    Issue {
        student_id: String,
        programme_id: String,
        /// Ask a running gateway instead of issuing in-process.
        #[arg(long, env = "I3_GATEWAY_URL")]
        gateway: Option<String>,
    },
    /// Print the WSDL-lite document of a registered service.
    Wsdl {
        /// Service name, e.g. AdmissionDataBaseManagerService.
        service: String,
    },
    /// Run the EMIS JSON gateway.
    Gateway {
        /// Listen address.
        #[arg(long, env = "I3_LISTEN")]
        listen: Option<String>,
    },
    /// Run registry, all department services and the gateway, seeded.
    Demo {
        /// Fixture directory.
        #[arg(long)]
        seed: Option<PathBuf>,
        /// Gateway listen address.
        #[arg(long, default_value = ":8080")]
        gateway_listen: String,
        /// Registry listen address.
        #[arg(long, default_value = ":7000")]
        registry_listen: String,
        /// Bind every server to a free port instead of the defaults.
        #[arg(long)]
        ephemeral: bool,
    },
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
    /// Outcome already printed; exit 1 quietly.
    #[error("blocked")]
    Blocked,
}

impl Failure {
    fn domain(e: impl std::fmt::Display) -> Self {
        Failure::Domain(e.to_string())
    }
}

struct Settings {
    registry_url: String,
    data_dir: PathBuf,
    file: FileConfig,
}

impl Settings {
    fn listen(&self, flag: Option<String>, default: &str) -> String {
        flag.or_else(|| self.file.listen.clone()).unwrap_or_else(|| default.to_string())
    }

    fn format(&self, flag: Option<StorageFormat>, kind: ServiceKind) -> Result<StorageFormat, Failure> {
        match (flag, &self.file.format) {
            (Some(f), _) => Ok(f),
            (None, Some(s)) => s.parse().map_err(Failure::Usage),
            (None, None) => Ok(kind.default_format()),
        }
    }

    fn seed_dir(&self, flag: Option<PathBuf>) -> Option<PathBuf> {
        flag.or_else(|| self.file.seed_dir.clone())
    }

    fn gateway(&self, flag: Option<String>) -> Option<String> {
        flag.or_else(|| self.file.gateway_url.clone())
    }
}

fn default_listen(kind: ServiceKind) -> &'static str {
    match kind {
        ServiceKind::Amis => ":7101",
        ServiceKind::Lmis => ":7102",
        ServiceKind::Hmis => ":7103",
        ServiceKind::Campus => ":7104",
        ServiceKind::Emis => ":8080",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let file = match &cli.config {
        Some(p) => match FileConfig::load(p) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => FileConfig::default(),
    };
    let level = cli
        .log_level
        .clone()
        .or_else(|| file.log_level.clone())
        .unwrap_or_else(|| "warn".to_string());
    let filter = match tracing_subscriber::EnvFilter::try_new(&level) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: bad log level {level:?}: {e}");
            return ExitCode::from(2);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();

    let settings = Settings {
        registry_url: cli
            .registry_url
            .clone()
            .or_else(|| file.registry_url.clone())
            .unwrap_or_else(|| DEFAULT_REGISTRY_URL.to_string()),
        data_dir: cli
            .data_dir
            .clone()
            .or_else(|| file.data_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR)),
        file,
    };

    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match rt.block_on(run(cli.command, settings)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Blocked) => ExitCode::from(1),
        Err(Failure::Domain(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

async fn run(command: Command, s: Settings) -> Result<(), Failure> {
    match command {
        Command::Registry { listen, journal } => {
            let listen = s.listen(listen, ":7000");
            let journal = journal
                .or_else(|| s.file.journal.clone())
                .unwrap_or_else(|| s.data_dir.join("registry").join("journal.jsonl"));
            let node = start_registry(&listen, Some(&journal)).await.map_err(Failure::domain)?;
            say!("listening on {}", node.url);
            shutdown_signal().await;
            node.shutdown().await;
            Ok(())
        }
        Command::Service {
            kind,
            listen,
            format,
            seed,
            wsdd,
            no_deploy,
            delay_ms,
        } => {
            let kinds = parse_kinds(&kind)?;
            let kind = kinds[0];
            let mut cfg = NodeConfig::new(kind, &s.data_dir, &s.registry_url);
            cfg.also = kinds[1..].to_vec();
            cfg.listen = s.listen(listen, default_listen(kind));
            cfg.format = s.format(format, kind)?;
            cfg.seed_dir = s.seed_dir(seed);
            cfg.delay = delay_ms.map(Duration::from_millis);
            cfg.deploy = if no_deploy {
                None
            } else {
                match wsdd.or_else(|| s.file.wsdd.clone()) {
                    Some(p) => Some(parse_wsdd(&read_file(&p)?).map_err(|e| Failure::Usage(e.to_string()))?),
                    None => cfg.deploy,
                }
            };
            let node = start_node(cfg).await.map_err(Failure::domain)?;
            say!("listening on {}", node.url);
            if let Some(host) = node.host() {
                for name in host.list_services() {
                    say!("deployed {name}");
                }
            }
            shutdown_signal().await;
            node.shutdown().await;
            Ok(())
        }
        Command::Gateway { listen } => {
            let mut cfg = NodeConfig::new(ServiceKind::Emis, &s.data_dir, &s.registry_url);
            cfg.listen = s.listen(listen, default_listen(ServiceKind::Emis));
            cfg.format = s.format(None, ServiceKind::Emis)?;
            cfg.seed_dir = s.seed_dir(None);
            let node = start_node(cfg).await.map_err(Failure::domain)?;
            say!("listening on {}", node.url);
            shutdown_signal().await;
            node.shutdown().await;
            Ok(())
        }
        Command::Deploy { host, file } => {
            let body = read_file(&file)?;
            parse_wsdd(&body).map_err(|e| Failure::Usage(format!("{}: {e}", file.display())))?;
            let names = remote_deploy(&host, &body).await.map_err(Failure::domain)?;
            for n in names {
                say!("{n}");
            }
            Ok(())
        }
        Command::Undeploy { host, file } => {
            let body = read_file(&file)?;
            let report = remote_undeploy(&host, &body).await.map_err(Failure::domain)?;
            for n in &report.undeployed {
                say!("undeployed {n}");
            }
            for n in &report.not_deployed {
                say!("not deployed {n}");
            }
            if report.not_deployed.is_empty() {
                Ok(())
            } else {
                Err(Failure::Blocked)
            }
        }
        Command::Seed { target, from, format } => {
            let dir = s
                .seed_dir(from)
                .ok_or_else(|| Failure::Usage("no fixture directory; pass --from".into()))?;
            let kinds: Vec<ServiceKind> = if target == "all" {
                vec![ServiceKind::Amis, ServiceKind::Lmis, ServiceKind::Hmis, ServiceKind::Emis]
            } else {
                vec![target.parse().map_err(Failure::Usage)?]
            };
            for kind in kinds {
                let fmt = s.format(format, kind)?;
                let store = open_store(fmt, &s.data_dir.join(kind.as_str())).map_err(Failure::domain)?;
                let n = seed_store(kind, &store, &dir).map_err(Failure::domain)?;
                say!(
                    "{kind} ({fmt}): {} students, {} departments, {} programmes, {} books, {} rooms, {} exams, {} registrations",
                    n.students, n.departments, n.programmes, n.books, n.rooms, n.exams, n.registrations
                );
            }
            Ok(())
        }
        Command::Verify {
            student_id,
            gateway,
            sequential,
        } => {
            let mode = if sequential {
                FanOutMode::Sequential
            } else {
                FanOutMode::Concurrent
            };
            let result = match s.gateway(gateway).filter(|_| !sequential) {
                Some(url) => GatewayClient::new(url).verify(&student_id).await.map_err(gateway_failure)?,
                None => local_orchestrator(&s, mode)?
                    .verify_student(&student_id)
                    .await
                    .map_err(Failure::domain)?,
            };
            print_verification(&result);
            match result.overall {
                Overall::Clear => Ok(()),
                Overall::Blocked => Err(Failure::Blocked),
            }
        }
        Command::Issue {
            student_id,
            programme_id,
            gateway,
        } => {
            let cert = match s.gateway(gateway) {
                Some(url) => GatewayClient::new(url)
                    .issue(&student_id, &programme_id)
                    .await
                    .map_err(|e| match e {
                        GatewayError::Api(api) if api.code == "VerificationBlocked" => {
                            if let Ok(r) = serde_json::from_value::<VerificationResult>(api.detail) {
                                print_verification(&r);
                            }
                            Failure::Domain(api.message)
                        }
                        other => gateway_failure(other),
                    })?,
                None => local_orchestrator(&s, FanOutMode::Concurrent)?
                    .issue_certificate(&student_id, &programme_id)
                    .await
                    .map_err(|e| {
                        if let EmisError::VerificationBlocked(r) = &e {
                            print_verification(r);
                        }
                        Failure::domain(e)
                    })?,
            };
            say!("certificate {}", cert.certificate_id);
            say!("student {} programme {} issued {}", cert.student_id, cert.programme_id, cert.issued_at);
            Ok(())
        }
        Command::Wsdl { service } => {
            let proxy = broker::bind(&s.registry_url, &service).await.map_err(Failure::domain)?;
            say!("{}", proxy.wsdl().to_xml());
            Ok(())
        }
        Command::Demo {
            seed,
            gateway_listen,
            registry_listen,
            ephemeral,
        } => demo(&s, seed, &gateway_listen, &registry_listen, ephemeral).await,
    }
}

fn parse_kinds(arg: &str) -> Result<Vec<ServiceKind>, Failure> {
    if arg == "all" {
        return Ok(vec![ServiceKind::Amis, ServiceKind::Lmis, ServiceKind::Hmis, ServiceKind::Campus]);
    }
    let kinds = arg
        .split(',')
        .map(|k| k.trim().parse::<ServiceKind>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::Usage)?;
    if kinds.len() > 1 && kinds.contains(&ServiceKind::Emis) {
        return Err(Failure::Usage("emis runs on its own, not alongside department services".into()));
    }
    Ok(kinds)
}

fn gateway_failure(e: GatewayError) -> Failure {
    Failure::domain(e)
}

fn local_orchestrator(s: &Settings, mode: FanOutMode) -> Result<Arc<Orchestrator>, Failure> {
    let fmt = s.format(None, ServiceKind::Emis)?;
    let store = open_store(fmt, &s.data_dir.join(ServiceKind::Emis.as_str())).map_err(Failure::domain)?;
    Ok(Arc::new(
        Orchestrator::builder(store)
            .registry(&s.registry_url)
            .probes(broker_probes(&s.registry_url, &Department::ALL, DEFAULT_CALL_TIMEOUT))
            .mode(mode)
            .build(),
    ))
}

fn print_verification(r: &VerificationResult) {
    for dept in Department::ALL {
        let line = match r.status(dept) {
            Some(DeptStatus::Clear) => "CLEAR".to_string(),
            Some(DeptStatus::Defaulter { reason }) => format!("DEFAULTER ({reason})"),
            Some(DeptStatus::Unreachable) | None => "UNREACHABLE".to_string(),
        };
        say!("{dept}: {line}");
    }
    say!(
        "{}",
        match r.overall {
            Overall::Clear => "CLEAR",
            Overall::Blocked => "BLOCKED",
        }
    );
}

async fn demo(
    s: &Settings,
    seed: Option<PathBuf>,
    gateway_listen: &str,
    registry_listen: &str,
    ephemeral: bool,
) -> Result<(), Failure> {
    let seed = s
        .seed_dir(seed)
        .or_else(|| Some(PathBuf::from("fixtures/seed")).filter(|p| p.is_dir()));
    let pick = |addr: &str| if ephemeral { "127.0.0.1:0".to_string() } else { addr.to_string() };
    let registry = start_registry(&pick(registry_listen), Some(&s.data_dir.join("registry").join("journal.jsonl")))
        .await
        .map_err(Failure::domain)?;
    say!("registry listening on {}", registry.url);
    let mut nodes = Vec::new();
    for kind in [
        ServiceKind::Amis,
        ServiceKind::Lmis,
        ServiceKind::Hmis,
        ServiceKind::Campus,
        ServiceKind::Emis,
    ] {
        let mut cfg = NodeConfig::new(kind, &s.data_dir, &registry.url);
        cfg.listen = pick(if kind == ServiceKind::Emis {
            gateway_listen
        } else {
            default_listen(kind)
        });
        cfg.seed_dir = seed.clone();
        let node = start_node(cfg).await.map_err(Failure::domain)?;
        let label = if kind == ServiceKind::Emis { "gateway" } else { kind.as_str() };
        say!("{label} listening on {}", node.url);
        nodes.push(node);
    }
    say!("ready");
    shutdown_signal().await;
    for n in nodes {
        n.shutdown().await;
    }
    registry.shutdown().await;
    Ok(())
}
