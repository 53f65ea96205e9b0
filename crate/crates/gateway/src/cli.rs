//! The `pdv` admin CLI. Every command except `serve` loads the gateway from
//! its state directory, performs one operation, persists, and prints JSON.

use std::fs;
use std::io;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use pdv_core::context::ContextEvent;
use pdv_core::simhome::HomeFixture;
use pdv_core::{BenefitCategory, BenefitOffer, ConsumerId, Period, Reading, Stream, StreamId, Timestamp, ValueKind};
use serde::Serialize;
use serde_json::{json, Value};

use crate::api::{self, AppState};
use crate::config::{Config, ConfigError};
use crate::service::{ConsumerAction, Gateway, GatewayError, OwnerAction, RequestState};

#[derive(Debug, Parser)]
#[command(name = "pdv", about = "Personal data vault gateway")]
pub struct Cli {
    /// Gateway configuration file.
    #[arg(long, global = true, env = "PDV_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the config's store root (state is kept there too).
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Clock override, RFC 3339.
    #[arg(long, global = true)]
    pub now: Option<Timestamp>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DecideAction {
    Accept,
    Deny,
    Counter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RespondAction {
    AcceptCounter,
    RaiseOffer,
    Withdraw,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP API.
    Serve,
    /// Append a JSON-lines file of readings to a stream, registering it if new.
    Ingest {
        file: PathBuf,
        #[arg(long)]
        stream: StreamId,
        #[arg(long, default_value = "kW")]
        unit: String,
        #[arg(long, default_value = "15s")]
        period: Period,
    },
    /// Generate a synthetic household trace from a fixture.
    GenHome {
        fixture: PathBuf,
        /// Readings output (JSON lines); ground truth goes to stdout.
        #[arg(long)]
        out: PathBuf,
        /// Jitter seed; the fixture's own seed when absent.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Submit a consumer request from a file holding the query text.
    Request {
        query: PathBuf,
        #[arg(long)]
        consumer: ConsumerId,
        #[arg(long)]
        offer: f64,
        #[arg(long, default_value = "financial")]
        category: BenefitCategory,
    },
    /// Owner decision on a request; lists open requests when no id is given.
    Decide {
        id: Option<u64>,
        #[arg(value_enum)]
        action: Option<DecideAction>,
        /// Explicit counter period.
        #[arg(long)]
        period: Option<Period>,
    },
    /// Consumer response to a counter-offer.
    Respond {
        id: u64,
        #[arg(value_enum)]
        action: RespondAction,
        #[arg(long)]
        consumer: ConsumerId,
        #[arg(long)]
        offer: Option<f64>,
    },
    /// Fetch the released result of an accepted request.
    Fetch {
        id: u64,
        #[arg(long)]
        consumer: ConsumerId,
    },
    /// Apply a JSON-lines file of context events.
    ReplayEvents { file: PathBuf },
    /// Print the audit log.
    Audit,
    /// Print owner notifications.
    Notifications,
    /// Print all grants.
    Grants,
    /// Owner what-if evaluation of a request at another accuracy.
    Preview {
        id: u64,
        #[arg(long)]
        period: Option<Period>,
    },
    /// Record a feedback rating for a consumer.
    Rate { consumer: ConsumerId, rating: f64 },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("--config is required for this command")]
    MissingConfig,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Usage(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Gateway(e) => e.code(),
            CliError::Config(_) | CliError::MissingConfig => "config",
            CliError::Usage(_) => "usage",
            CliError::Read { .. } | CliError::Parse { .. } | CliError::Io(_) => "input",
        }
    }

    /// Process exit status: 2 for refusals by the gateway, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Gateway(_) => 2,
            _ => 1,
        }
    }
}

fn read(path: &PathBuf) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.clone(),
        source,
    })
}

fn json_lines<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<Vec<T>, CliError> {
    read(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| CliError::Parse {
                path: path.clone(),
                line: i + 1,
                source,
            })
        })
        .collect()
}

fn to_json<T: Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("outputs serialize")
}

impl Cli {
    fn config(&self) -> Result<Config, CliError> {
        let path = self.config.as_ref().ok_or(CliError::MissingConfig)?;
        let mut config = Config::from_file(path)?;
        if let Some(store) = &self.store {
            config.store_root = store.clone();
            config.state_dir = None;
        }
        Ok(config)
    }

    fn gateway(&self) -> Result<Gateway, CliError> {
        Ok(Gateway::open(self.config()?.load()?)?)
    }

    fn now(&self) -> Timestamp {
        self.now.unwrap_or_else(chrono::Utc::now)
    }
}

/// Runs one command and returns what it prints.
pub fn run(cli: &Cli) -> Result<Value, CliError> {
    let now = cli.now();
    match &cli.command {
        Command::Serve => {
            let gw = cli.gateway()?;
            let listen = gw.config().listen;
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on {listen}");
            rt.block_on(api::serve(AppState::new(gw), listen))?;
            Ok(Value::Null)
        }
        Command::GenHome { fixture, out, seed } => {
            let home: HomeFixture = serde_json::from_str(&read(fixture)?).map_err(|source| CliError::Parse {
                path: fixture.clone(),
                line: 0,
                source,
            })?;
            let trace = home.trace(seed.unwrap_or(home.seed));
            let mut buf = Vec::new();
            for r in &trace.readings {
                serde_json::to_writer(&mut buf, r).expect("readings serialize");
                buf.push(b'\n');
            }
            fs::write(out, buf)?;
            Ok(json!({
                "readings": trace.readings.len(),
                "period": home.period,
                "ground_truth": trace.ground_truth,
            }))
        }
        Command::Ingest {
            file,
            stream,
            unit,
            period,
        } => {
            let readings: Vec<Reading> = json_lines(file)?;
            let mut gw = cli.gateway()?;
            let register = Stream {
                id: stream.clone(),
                unit: unit.clone(),
                native_period: *period,
                value_kind: ValueKind::Numeric,
            };
            let register = (!gw.store().streams().contains_key(stream)).then_some(register);
            let n = gw.ingest_readings(stream, register, &readings, now)?;
            Ok(json!({"stream": stream, "appended": n}))
        }
        Command::Request {
            query,
            consumer,
            offer,
            category,
        } => {
            let text = read(query)?;
            let mut gw = cli.gateway()?;
            let offer = BenefitOffer {
                category: *category,
                declared_value: *offer,
                description: String::new(),
            };
            Ok(to_json(gw.submit_request(consumer, text.trim(), offer, now)?))
        }
        Command::Decide { id: None, .. } => {
            let gw = cli.gateway()?;
            let open: Vec<Value> = gw
                .state()
                .requests
                .values()
                .filter(|r| matches!(r.state, RequestState::Assessed | RequestState::Countered))
                .map(|r| {
                    json!({
                        "id": r.id,
                        "consumer": r.consumer_id,
                        "query": r.query_text,
                        "state": r.state,
                        "recommendation": r.assessment.as_ref().map(|a| a.outcome),
                        "utility": r.assessment.as_ref().map(|a| a.utility),
                        "proposed": r.proposed(),
                    })
                })
                .collect();
            Ok(Value::Array(open))
        }
        Command::Decide {
            id: Some(id),
            action,
            period,
        } => {
            let action = match action.ok_or(CliError::Usage("decide <id> needs an action"))? {
                DecideAction::Accept => OwnerAction::Accept { allowed_items: None },
                DecideAction::Deny => OwnerAction::Deny,
                DecideAction::Counter => OwnerAction::Counter { period: *period },
            };
            let mut gw = cli.gateway()?;
            Ok(to_json(gw.owner_decide(*id, action, now)?))
        }
        Command::Respond {
            id,
            action,
            consumer,
            offer,
        } => {
            let action = match action {
                RespondAction::AcceptCounter => ConsumerAction::AcceptCounter,
                RespondAction::Withdraw => ConsumerAction::Withdraw,
                RespondAction::RaiseOffer => ConsumerAction::RaiseOffer {
                    offer: BenefitOffer::financial(offer.ok_or(CliError::Usage("raise-offer needs --offer"))?),
                },
            };
            let mut gw = cli.gateway()?;
            Ok(to_json(gw.consumer_respond(*id, consumer, action, now)?))
        }
        Command::Fetch { id, consumer } => {
            let mut gw = cli.gateway()?;
            Ok(to_json(gw.fetch_result(*id, consumer, now)?))
        }
        Command::ReplayEvents { file } => {
            let events: Vec<ContextEvent> = json_lines(file)?;
            let mut gw = cli.gateway()?;
            Ok(to_json(gw.ingest_events(&events, now)?))
        }
        Command::Audit => Ok(to_json(cli.gateway()?.audit_log()?)),
        Command::Notifications => Ok(to_json(cli.gateway()?.owner_notifications())),
        Command::Grants => Ok(to_json(cli.gateway()?.state().grants.values().collect::<Vec<_>>())),
        Command::Preview { id, period } => Ok(to_json(cli.gateway()?.preview(*id, *period, None, now)?)),
        Command::Rate { consumer, rating } => {
            let mut gw = cli.gateway()?;
            Ok(to_json(gw.rate_consumer(consumer, *rating, now)?))
        }
    }
}
