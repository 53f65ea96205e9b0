#![allow(dead_code)]

use std::path::{Path, PathBuf};

use pdv_core::simhome::HomeFixture;
use pdv_core::{Period, Stream, StreamId, Timestamp};
use pdv_gateway::config::Config;
use pdv_gateway::service::Gateway;

pub mod http;

pub const QUERY_15S: &str =
    r#"GET energy.consumption RANGE 2024-01-01T00:00:00Z..2024-01-02T00:00:00Z SAMPLE 15s PURPOSE "targeted offers""#;

pub fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn t(s: &str) -> Timestamp {
    s.parse().unwrap()
}

pub fn now() -> Timestamp {
    t("2024-01-02T00:00:00Z")
}

pub fn energy() -> StreamId {
    StreamId::new("energy.consumption").unwrap()
}

pub fn alice_config(store: &Path, auto_accept: bool) -> Config {
    let mut config = Config::from_file(&repo().join("fixtures/alice/gateway.json")).unwrap();
    config.store_root = store.to_path_buf();
    config.state_dir = None;
    config.auto_accept = auto_accept;
    config
}

pub fn alice_home() -> HomeFixture {
    serde_json::from_str(&std::fs::read_to_string(repo().join("fixtures/homes/alice_home.json")).unwrap()).unwrap()
}

/// Gateway over a fresh store holding the seeded alice_home trace.
pub fn alice_gateway(store: &Path, auto_accept: bool) -> Gateway {
    let mut gw = Gateway::open(alice_config(store, auto_accept).load().unwrap()).unwrap();
    let home = alice_home();
    let trace = home.trace(home.seed);
    let stream = Stream::numeric("energy.consumption", "kW", Period::secs(15)).unwrap();
    gw.ingest_readings(&energy(), Some(stream), &trace.readings, now()).unwrap();
    gw
}
