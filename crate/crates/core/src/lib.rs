//! Text-only imageboard archival crawler.
//!
//! Polls per-board thread catalogs, tracks each thread through its
//! new/live/dead lifecycle, fetches changed threads under one global request
//! budget, and stores the verbatim JSON in a date-partitioned archive that
//! can be rescanned after a crash.

pub mod api_client;
pub mod clock;
pub mod collector;
pub mod config;
pub mod extract;
pub mod lifecycle;
pub mod logging;
pub mod mock_board;
pub mod storage;

pub use api_client::{ApiClient, BoardId, EndpointSet, FetchKind, FetchOutcome, RequestBudget};
pub use clock::{Clock, Shutdown, SystemClock, VirtualClock};
pub use collector::{Collector, CollectorConfig, CollectorError, CycleReport, SchedulingMode};
pub use storage::{ArchiveLayout, ThreadSnapshot};
