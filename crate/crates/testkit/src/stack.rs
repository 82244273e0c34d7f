//! In-process stacks: a registry plus department services and, optionally,
//! the EMIS gateway, each on an ephemeral port over a temporary directory.

use std::path::{Path, PathBuf};
use std::time::Duration;

use i3_core::depts::ServiceKind;
use i3_core::node::{start_node, start_registry, Node, NodeConfig, RegistryNode};
use i3_core::storage::StorageFormat;

use crate::fixtures::seed_dir;

pub struct Stack {
    pub registry: RegistryNode,
    pub amis: Node,
    pub lmis: Node,
    pub hmis: Node,
    pub emis: Option<Node>,
    pub dir: tempfile::TempDir,
    pub opts: StackOptions,
}

#[derive(Clone)]
pub struct StackOptions {
    /// AMIS, LMIS and HMIS storage formats.
    pub formats: [StorageFormat; 3],
    pub seed: Option<PathBuf>,
    pub delay: Option<Duration>,
    pub gateway: bool,
}

impl Default for StackOptions {
    fn default() -> Self {
        Self {
            formats: [
                ServiceKind::Amis.default_format(),
                ServiceKind::Lmis.default_format(),
                ServiceKind::Hmis.default_format(),
            ],
            seed: Some(seed_dir()),
            delay: None,
            gateway: true,
        }
    }
}

pub fn node_config(kind: ServiceKind, dir: &Path, registry_url: &str, opts: &StackOptions) -> NodeConfig {
    let mut cfg = NodeConfig::new(kind, dir, registry_url);
    cfg.seed_dir = opts.seed.clone();
    cfg.delay = opts.delay;
    cfg.format = match kind {
        ServiceKind::Amis => opts.formats[0],
        ServiceKind::Lmis => opts.formats[1],
        ServiceKind::Hmis => opts.formats[2],
        other => other.default_format(),
    };
    cfg
}

pub async fn start_stack(opts: StackOptions) -> Stack {
    let dir = tempfile::tempdir().unwrap();
    let registry = start_registry("127.0.0.1:0", Some(&dir.path().join("registry/journal.jsonl")))
        .await
        .unwrap();
    let start = |kind| start_node(node_config(kind, dir.path(), &registry.url, &opts));
    let amis = start(ServiceKind::Amis).await.unwrap();
    let lmis = start(ServiceKind::Lmis).await.unwrap();
    let hmis = start(ServiceKind::Hmis).await.unwrap();
    let emis = if opts.gateway {
        Some(start(ServiceKind::Emis).await.unwrap())
    } else {
        None
    };
    Stack {
        registry,
        amis,
        lmis,
        hmis,
        emis,
        dir,
        opts,
    }
}

impl Stack {
    pub fn store_dir(&self, kind: ServiceKind) -> PathBuf {
        self.dir.path().join(kind.as_str())
    }

    pub fn orchestrator(&self) -> &std::sync::Arc<i3_core::emis::Orchestrator> {
        self.emis
            .as_ref()
            .and_then(Node::orchestrator)
            .expect("stack started with a gateway")
    }

    pub fn gateway_url(&self) -> &str {
        &self.emis.as_ref().expect("stack started with a gateway").url
    }

    pub async fn shutdown(self) {
        if let Some(e) = self.emis {
            e.shutdown().await;
        }
        self.hmis.shutdown().await;
        self.lmis.shutdown().await;
        self.amis.shutdown().await;
        self.registry.shutdown().await;
    }
}
