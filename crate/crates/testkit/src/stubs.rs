use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use i3_core::domain::{Department, DeptStatus};
use i3_core::emis::DepartmentProbe;

/// What a stub department does when asked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StubOutcome {
    Answer(DeptStatus),
    /// The call fails outright.
    Fail,
    /// The call never returns.
    Hang,
}

/// The three cell states of the fault-injection grid.
pub fn grid_states() -> [StubOutcome; 3] {
    [
        StubOutcome::Answer(DeptStatus::Clear),
        StubOutcome::Answer(DeptStatus::Defaulter {
            reason: "injected".into(),
        }),
        StubOutcome::Fail,
    ]
}

pub struct StubProbe {
    department: Department,
    outcome: StubOutcome,
    delay: Duration,
    calls: AtomicUsize,
}

impl StubProbe {
    pub fn new(department: Department, outcome: StubOutcome) -> Arc<Self> {
        Self::delayed(department, outcome, Duration::ZERO)
    }

    pub fn delayed(department: Department, outcome: StubOutcome, delay: Duration) -> Arc<Self> {
        Arc::new(Self {
            department,
            outcome,
            delay,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl DepartmentProbe for StubProbe {
    fn department(&self) -> Department {
        self.department
    }

    async fn probe(&self, _student_id: &str) -> Result<DeptStatus, String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        match &self.outcome {
            StubOutcome::Answer(s) => Ok(s.clone()),
            StubOutcome::Fail => Err("injected failure".into()),
            StubOutcome::Hang => std::future::pending().await,
        }
    }
}
