//! Boots a complete service process: store, implementation, engine,
//! deployment of the service's slice of the descriptor, and publication.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use crate::broker::{BrokerError, Registry, RegistryClient};
use crate::depts::{
    seed_store, Admission, BrokerDirectory, Campus, Delayed, Hostel, Library, SeedCounts, SeedError, ServiceKind,
    StudentDirectory,
};
use crate::emis::{serve_gateway, Orchestrator};
use crate::engine::{serve, EngineError, InvocationLog, ServiceHost, ServiceImpl, DEFAULT_LOG_CAPACITY};
use crate::net::{bind, BindFailed, ServerHandle};
use crate::storage::{StorageError, StorageFormat, Store};
use crate::wsdd::{parse_wsdd, DeploymentDescriptor, WsddError};

/// The three-service descriptor shipped with the system.
pub const BUILTIN_WSDD: &str = include_str!("../../../fixtures/i3.wsdd");
/// Descriptor for the campus registration service.
pub const CAMPUS_WSDD: &str = include_str!("../../../fixtures/campus.wsdd");

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error(transparent)]
    Bind(#[from] BindFailed),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Descriptor(#[from] WsddError),
    #[error(transparent)]
    Deploy(#[from] EngineError),
    #[error(transparent)]
    Seed(#[from] SeedError),
    #[error("cannot publish {service}: {source}")]
    Publish {
        service: String,
        #[source]
        source: BrokerError,
    },
    #[error(transparent)]
    Registry(#[from] BrokerError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("no service of kind {0} in the descriptor")]
    NotInDescriptor(ServiceKind),
}

/// Every service the built-in descriptors declare.
pub fn builtin_descriptor() -> DeploymentDescriptor {
    let mut d = parse_wsdd(BUILTIN_WSDD.as_bytes()).expect("built-in descriptor parses");
    let campus = parse_wsdd(CAMPUS_WSDD.as_bytes()).expect("campus descriptor parses");
    d.services.extend(campus.services);
    d
}

/// The part of `d` implemented by any of `kinds`.
pub fn slice_for(d: &DeploymentDescriptor, kinds: &[ServiceKind]) -> DeploymentDescriptor {
    let classes: Vec<&str> = kinds.iter().filter_map(|k| class_for(*k)).collect();
    d.filtered(|s| classes.contains(&s.class_name.as_str()))
}

fn class_for(kind: ServiceKind) -> Option<&'static str> {
    use crate::depts::{AMIS_CLASS, CAMPUS_CLASS, HMIS_CLASS, LMIS_CLASS};
    match kind {
        ServiceKind::Amis => Some(AMIS_CLASS),
        ServiceKind::Lmis => Some(LMIS_CLASS),
        ServiceKind::Hmis => Some(HMIS_CLASS),
        ServiceKind::Campus => Some(CAMPUS_CLASS),
        ServiceKind::Emis => None,
    }
}

/// Turns a bound address into the URL other processes should use.
pub fn advertised_url(addr: SocketAddr) -> String {
    if addr.ip().is_unspecified() {
        format!("http://127.0.0.1:{}", addr.port())
    } else {
        format!("http://{addr}")
    }
}

#[derive(Clone)]
pub struct NodeConfig {
    pub kind: ServiceKind,
    pub listen: String,
    pub data_dir: PathBuf,
    pub format: StorageFormat,
    pub registry_url: String,
    /// Deploy this service's slice of the descriptor at startup.
    pub deploy: Option<DeploymentDescriptor>,
    pub seed_dir: Option<PathBuf>,
    /// Latency added to every call; for tests.
    pub delay: Option<Duration>,
    /// Replaces the AMIS lookup used by registration services.
    pub directory: Option<Arc<dyn StudentDirectory>>,
    /// Further department kinds hosted by the same engine, each over its own
    /// store in its default format.
    pub also: Vec<ServiceKind>,
}

impl NodeConfig {
    pub fn new(kind: ServiceKind, data_dir: impl Into<PathBuf>, registry_url: impl Into<String>) -> Self {
        Self {
            kind,
            listen: "127.0.0.1:0".to_string(),
            data_dir: data_dir.into(),
            format: kind.default_format(),
            registry_url: registry_url.into(),
            deploy: Some(builtin_descriptor()),
            seed_dir: None,
            delay: None,
            directory: None,
            also: Vec::new(),
        }
    }

    pub fn store_dir(&self) -> PathBuf {
        self.data_dir.join(self.kind.as_str())
    }
}

pub enum NodeParts {
    Service { host: ServiceHost },
    Gateway { orchestrator: Arc<Orchestrator> },
}

/// A running service or gateway.
pub struct Node {
    pub kind: ServiceKind,
    pub url: String,
    pub store: Arc<Store>,
    pub parts: NodeParts,
    pub seeded: SeedCounts,
    /// Stores of the kinds in [`NodeConfig::also`].
    pub extra_stores: Vec<(ServiceKind, Arc<Store>)>,
    server: ServerHandle,
}

impl Node {
    pub fn addr(&self) -> SocketAddr {
        self.server.addr()
    }

    pub fn host(&self) -> Option<&ServiceHost> {
        match &self.parts {
            NodeParts::Service { host } => Some(host),
            NodeParts::Gateway { .. } => None,
        }
    }

    pub fn orchestrator(&self) -> Option<&Arc<Orchestrator>> {
        match &self.parts {
            NodeParts::Gateway { orchestrator } => Some(orchestrator),
            NodeParts::Service { .. } => None,
        }
    }

    pub async fn shutdown(self) {
        self.server.shutdown().await;
    }

    /// Stops without waiting for open connections, as a crash would.
    pub fn abort(self) {
        self.server.abort();
    }

    pub async fn wait(self) {
        self.server.wait().await;
    }
}

pub fn open_store(format: StorageFormat, dir: &Path) -> Result<Arc<Store>, StorageError> {
    Ok(Arc::new(Store::open(format, dir)?))
}

/// Publishes with a few retries, so services may start moments before the
/// registry does.
async fn publish_with_retry(client: &RegistryClient, host: &ServiceHost, name: &str) -> Result<(), NodeError> {
    let record = host.service_record(name);
    let mut attempt = 0;
    loop {
        match client.publish(&record).await {
            Ok(_) => return Ok(()),
            Err(BrokerError::RegistryUnreachable(_)) if attempt < 25 => {
                attempt += 1;
                tokio::time::sleep(Duration::from_millis(200)).await;
            }
            Err(source) => {
                return Err(NodeError::Publish {
                    service: name.to_string(),
                    source,
                })
            }
        }
    }
}

fn department_impl(
    kind: ServiceKind,
    store: &Arc<Store>,
    directory: &Arc<dyn StudentDirectory>,
    delay: Option<Duration>,
) -> Arc<dyn ServiceImpl> {
    let imp: Arc<dyn ServiceImpl> = match kind {
        ServiceKind::Amis => Arc::new(Admission::new(store.clone())),
        ServiceKind::Lmis => Arc::new(Library::new(store.clone(), directory.clone())),
        ServiceKind::Hmis => Arc::new(Hostel::new(store.clone(), directory.clone())),
        ServiceKind::Campus => Arc::new(Campus::new(store.clone(), directory.clone())),
        ServiceKind::Emis => unreachable!("EMIS hosts no service implementation"),
    };
    match delay {
        Some(d) => Arc::new(Delayed::new(imp, d)),
        None => imp,
    }
}

pub async fn start_node(cfg: NodeConfig) -> Result<Node, NodeError> {
    let store = open_store(cfg.format, &cfg.store_dir())?;
    let seeded = match &cfg.seed_dir {
        Some(dir) => seed_store(cfg.kind, &store, dir)?,
        None => SeedCounts::default(),
    };
    let listener = bind(&cfg.listen).await?;
    let url = advertised_url(listener.local_addr()?);

    if cfg.kind == ServiceKind::Emis {
        let orchestrator = Arc::new(Orchestrator::with_broker(store.clone(), &cfg.registry_url));
        let server = serve_gateway(orchestrator.clone(), &cfg.registry_url, listener);
        tracing::info!(%url, "gateway listening");
        return Ok(Node {
            kind: cfg.kind,
            url,
            store,
            parts: NodeParts::Gateway { orchestrator },
            seeded,
            extra_stores: Vec::new(),
            server,
        });
    }

    let directory = cfg
        .directory
        .clone()
        .unwrap_or_else(|| Arc::new(BrokerDirectory::new(cfg.registry_url.clone())));
    let mut builder = ServiceHost::builder(url.clone());
    builder = builder.implementation(department_impl(cfg.kind, &store, &directory, cfg.delay));
    let mut extra_stores = Vec::new();
    for kind in cfg.also.iter().copied().filter(|k| *k != cfg.kind && *k != ServiceKind::Emis) {
        let extra = open_store(kind.default_format(), &cfg.data_dir.join(kind.as_str()))?;
        if let Some(dir) = &cfg.seed_dir {
            seed_store(kind, &extra, dir)?;
        }
        builder = builder.implementation(department_impl(kind, &extra, &directory, cfg.delay));
        extra_stores.push((kind, extra));
    }
    let log = InvocationLog::with_file(DEFAULT_LOG_CAPACITY, cfg.store_dir().join("handler.log"))?;
    let host = builder.log(Arc::new(log)).build();

    let client = RegistryClient::new(cfg.registry_url.clone());
    if let Some(d) = &cfg.deploy {
        let mut kinds = vec![cfg.kind];
        kinds.extend(extra_stores.iter().map(|(k, _)| *k));
        let slice = slice_for(d, &kinds);
        if slice.services.is_empty() {
            return Err(NodeError::NotInDescriptor(cfg.kind));
        }
        host.deploy(&slice)?;
    }
    let server = serve(host.clone(), listener, Some(client.clone()));
    for name in host.list_services() {
        publish_with_retry(&client, &host, &name).await?;
    }
    tracing::info!(%url, kind = %cfg.kind, "service listening");
    Ok(Node {
        kind: cfg.kind,
        url,
        store,
        parts: NodeParts::Service { host },
        seeded,
        extra_stores,
        server,
    })
}

/// A running registry.
pub struct RegistryNode {
    pub url: String,
    pub registry: Registry,
    server: ServerHandle,
}

impl RegistryNode {
    pub async fn shutdown(self) {
        self.server.shutdown().await;
    }

    pub fn abort(self) {
        self.server.abort();
    }

    pub async fn wait(self) {
        self.server.wait().await;
    }
}

/// Starts a registry journalled at `journal`, or in memory when `None`.
pub async fn start_registry(listen: &str, journal: Option<&Path>) -> Result<RegistryNode, NodeError> {
    let registry = match journal {
        Some(p) => Registry::open(p)?,
        None => Registry::in_memory(),
    };
    let listener = bind(listen).await?;
    let url = advertised_url(listener.local_addr()?);
    let server = crate::broker::serve_registry(registry.clone(), listener);
    tracing::info!(%url, "registry listening");
    Ok(RegistryNode { url, registry, server })
}
