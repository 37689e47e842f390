//! The `enclave` command line: `serve` runs the gateway, everything else is
//! a thin client over the REST API.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use enclave_harness::{emit_report, ExperimentConfig};
use reqwest::blocking::{Client as Http, RequestBuilder};
use reqwest::StatusCode;
use serde_json::{json, Value};

use crate::error::{ErrorBody, ErrorDetail};
use crate::service::{ExperimentRecord, GatewayConfig};

/// Exit status for a read that has to wait on an archive restore.
pub const EXIT_RESTORING: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "enclave", version, about = "Data enclave gateway and client")]
pub struct Cli {
    /// Gateway base URL.
    #[arg(long, global = true, env = "ENCLAVE_ENDPOINT", default_value = "http://127.0.0.1:8080")]
    pub endpoint: String,
    /// Where `login` stores the session token. Defaults to ~/.enclave/token.
    #[arg(long, global = true, env = "ENCLAVE_TOKEN_FILE")]
    pub token_file: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Output::Json)]
    pub output: Output,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Output {
    Json,
    Text,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the gateway with its embedded workers.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Log in as a user, or as a service account with --service.
    Login {
        #[arg(required_unless_present = "service", conflicts_with = "service")]
        user: Option<String>,
        #[arg(long, requires = "secret")]
        service: Option<String>,
        #[arg(long, env = "ENCLAVE_SECRET", hide_env_values = true)]
        secret: Option<String>,
    },
    Whoami,
    /// List buckets, or the objects in one.
    Ls {
        bucket: Option<String>,
        #[arg(long)]
        prefix: Option<String>,
        #[arg(long)]
        cursor: Option<String>,
        #[arg(long)]
        limit: Option<usize>,
        /// Follow cursors until the listing is exhausted.
        #[arg(long)]
        all: bool,
    },
    Put {
        bucket: String,
        key: String,
        file: PathBuf,
        #[arg(long)]
        private: bool,
    },
    Get {
        bucket: String,
        key: String,
        /// Write bytes here instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Make a time-limited download link.
    Sign {
        bucket: String,
        key: String,
        #[arg(long, default_value_t = 3600)]
        ttl_secs: u64,
    },
    /// Download through a signed link; needs no login.
    Fetch {
        url: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Submit a job description file (JSON or TOML). A missing owner is
    /// filled in with the logged-in user.
    Submit { file: PathBuf },
    Status { id: String },
    Jobs {
        #[arg(long)]
        state: Option<String>,
        #[arg(long)]
        cursor: Option<String>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        all: bool,
    },
    Logs { id: String },
    /// Export audit records (admin service accounts only). NDJSON, or
    /// `seq|time|actor|action|resource|outcome` lines with `--output text`.
    Audit {
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        user: Option<String>,
        #[arg(long)]
        service: Option<String>,
        /// ISO-8601 or epoch milliseconds.
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
    },
    #[command(subcommand)]
    Template(TemplateCmd),
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    /// Worker and queue status, or a recorded provisioning timeline.
    Pool {
        #[arg(long)]
        timeline: bool,
        #[arg(long)]
        experiment: Option<u64>,
        #[arg(long)]
        strategy: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum TemplateCmd {
    List,
    Show { name: String },
    /// Create or replace a template from a JSON or TOML file.
    Put { name: String, file: PathBuf },
    Submit {
        name: String,
        /// NAME=VALUE, repeatable.
        #[arg(short = 'p', long = "param", value_parser = parse_kv)]
        params: Vec<(String, String)>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCmd {
    /// Run an experiment config on the gateway and write its reports here.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "reports")]
        out_dir: PathBuf,
    },
    List,
    Show { id: u64 },
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .ok_or_else(|| format!("expected NAME=VALUE, got {s:?}"))
}

/// A failure, printed as the same JSON shape the gateway uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: String,
    pub message: String,
}

impl CliError {
    fn new(code: &str, message: impl Into<String>) -> Self {
        CliError { code: code.to_owned(), message: message.into() }
    }

    fn to_json(&self) -> String {
        let body = ErrorBody { error: ErrorDetail { code: self.code.clone(), message: self.message.clone() } };
        serde_json::to_string(&body).expect("error body serializes")
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("IO", format!("{}: {e}", path.display()))
}

fn default_token_file() -> PathBuf {
    match std::env::var_os("HOME") {
        Some(h) => Path::new(&h).join(".enclave").join("token"),
        None => PathBuf::from(".enclave-token"),
    }
}

struct Client {
    http: Http,
    base: String,
    token_file: PathBuf,
}

/// What a call produced, before rendering.
enum Reply {
    Json(Value),
    Text(String),
    Bytes(Vec<u8>),
    Empty,
}

impl Client {
    fn url(&self, path: &str) -> String {
        format!("{}/v1{path}", self.base.trim_end_matches('/'))
    }

    fn token(&self) -> Result<String, CliError> {
        let t = std::fs::read_to_string(&self.token_file)
            .map_err(|_| CliError::new("NOT_LOGGED_IN", format!("no token at {}; run `enclave login`", self.token_file.display())))?;
        Ok(t.trim().to_owned())
    }

    fn authed(&self, rb: RequestBuilder) -> Result<RequestBuilder, CliError> {
        Ok(rb.bearer_auth(self.token()?))
    }

    fn send(&self, rb: RequestBuilder) -> Result<reqwest::blocking::Response, CliError> {
        let resp = rb.send().map_err(|e| CliError::new("UNREACHABLE", e.to_string()))?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status();
        let text = resp.text().unwrap_or_default();
        Err(match serde_json::from_str::<ErrorBody>(&text) {
            Ok(b) => CliError { code: b.error.code, message: b.error.message },
            Err(_) => CliError::new(&format!("HTTP_{}", status.as_u16()), text),
        })
    }

    fn json(&self, rb: RequestBuilder) -> Result<Value, CliError> {
        let resp = self.send(rb)?;
        resp.json().map_err(|e| CliError::new("BAD_RESPONSE", e.to_string()))
    }

    fn get(&self, path: &str) -> Result<Value, CliError> {
        self.json(self.authed(self.http.get(self.url(path)))?)
    }

    /// Follows `next_cursor` and concatenates every page's items.
    fn all_pages(&self, path: &str, mut query: Vec<(&str, String)>) -> Result<Value, CliError> {
        let mut items = Vec::new();
        loop {
            let page = self.json(self.authed(self.http.get(self.url(path)).query(&query))?)?;
            items.extend(page["items"].as_array().cloned().unwrap_or_default());
            match page["next_cursor"].as_str() {
                Some(c) => {
                    query.retain(|(k, _)| *k != "cursor");
                    query.push(("cursor", c.to_owned()));
                }
                None => return Ok(json!({ "items": items, "next_cursor": null })),
            }
        }
    }
}

/// JSON or TOML, chosen by extension (TOML for `.toml`).
fn read_doc(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    if path.extension().is_some_and(|e| e == "toml") {
        let v: toml::Value = toml::from_str(&text).map_err(|e| CliError::new("INVALID_FILE", e.to_string()))?;
        serde_json::to_value(v).map_err(|e| CliError::new("INVALID_FILE", e.to_string()))
    } else {
        serde_json::from_str(&text).map_err(|e| CliError::new("INVALID_FILE", e.to_string()))
    }
}

fn opt_query<'a>(pairs: &[(&'a str, Option<String>)]) -> Vec<(&'a str, String)> {
    pairs.iter().filter_map(|(k, v)| v.clone().map(|v| (*k, v))).collect()
}

fn write_bytes(out: Option<&Path>, bytes: &[u8]) -> Result<Reply, CliError> {
    match out {
        Some(p) => {
            std::fs::write(p, bytes).map_err(|e| io_err(p, e))?;
            Ok(Reply::Json(json!({ "written": p, "bytes": bytes.len() })))
        }
        None => Ok(Reply::Bytes(bytes.to_vec())),
    }
}

/// Object reads: 200 carries bytes, 202 means an archive restore is under
/// way, 204 means the object has no stored payload.
fn object_reply(resp: reqwest::blocking::Response, out: Option<&Path>) -> Result<Reply, CliError> {
    match resp.status() {
        StatusCode::ACCEPTED => {
            let body: Value = resp.json().map_err(|e| CliError::new("BAD_RESPONSE", e.to_string()))?;
            Err(CliError::new("RESTORING", format!("available at {}", body["available_at"])))
        }
        StatusCode::NO_CONTENT => Ok(Reply::Json(json!({ "status": "metadata-only" }))),
        _ => {
            let bytes = resp.bytes().map_err(|e| CliError::new("BAD_RESPONSE", e.to_string()))?;
            write_bytes(out, &bytes)
        }
    }
}

fn run_experiment(c: &Client, config: &Path, out_dir: &Path) -> Result<Reply, CliError> {
    // resolve trace paths here so the gateway sees absolute ones
    let mut cfg = ExperimentConfig::load(config).map_err(|e| CliError::new("INVALID_CONFIG", e.to_string()))?;
    cfg.formats.dedup();
    let rb = c.http.post(c.url("/experiments")).json(&cfg);
    let rec: ExperimentRecord = serde_json::from_value(c.json(c.authed(rb)?)?)
        .map_err(|e| CliError::new("BAD_RESPONSE", e.to_string()))?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let mut files = Vec::new();
    let emit_err = |e: enclave_harness::HarnessError| CliError::new("IO", e.to_string());
    for &fmt in &cfg.formats {
        if let Some(r) = &rec.outputs.scaling {
            files.push(emit_report(r, fmt, out_dir).map_err(emit_err)?);
        }
        if let Some(r) = &rec.outputs.throughput {
            files.push(emit_report(r, fmt, out_dir).map_err(emit_err)?);
        }
        if let Some(r) = &rec.outputs.cost_aware {
            files.push(emit_report(r, fmt, out_dir).map_err(emit_err)?);
        }
    }
    Ok(Reply::Json(json!({ "id": rec.id, "files": files })))
}

fn execute(cli: &Cli) -> Result<Reply, CliError> {
    let c = Client {
        http: Http::new(),
        base: cli.endpoint.clone(),
        token_file: cli.token_file.clone().unwrap_or_else(default_token_file),
    };
    match &cli.command {
        Command::Serve { config } => {
            let cfg = GatewayConfig::load(config).map_err(|e| CliError::new("INVALID_CONFIG", e))?;
            crate::server::serve(cfg).map_err(|e| CliError::new("SERVE", e))?;
            Ok(Reply::Empty)
        }
        Command::Login { user, service, secret } => {
            let body = match service {
                Some(s) => json!({ "service": s, "secret": secret }),
                None => json!({ "user": user }),
            };
            let v = c.json(c.http.post(c.url("/login")).json(&body))?;
            let token = v["token"].as_str().ok_or_else(|| CliError::new("BAD_RESPONSE", "login reply has no token"))?;
            if let Some(dir) = c.token_file.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
            std::fs::write(&c.token_file, token).map_err(|e| io_err(&c.token_file, e))?;
            Ok(Reply::Json(json!({ "principal": v["principal"], "expires_at": v["expires_at"] })))
        }
        Command::Whoami => c.get("/whoami").map(Reply::Json),
        Command::Ls { bucket: None, .. } => c.get("/buckets").map(Reply::Json),
        Command::Ls { bucket: Some(b), prefix, cursor, limit, all } => {
            let path = format!("/objects/{b}");
            let q = opt_query(&[("prefix", prefix.clone()), ("cursor", cursor.clone()), ("limit", limit.map(|l| l.to_string()))]);
            if *all {
                c.all_pages(&path, q).map(Reply::Json)
            } else {
                c.json(c.authed(c.http.get(c.url(&path)).query(&q))?).map(Reply::Json)
            }
        }
        Command::Put { bucket, key, file, private } => {
            let bytes = std::fs::read(file).map_err(|e| io_err(file, e))?;
            let rb = c.http.put(c.url(&format!("/objects/{bucket}/{key}"))).query(&[("private", private)]).body(bytes);
            c.json(c.authed(rb)?).map(Reply::Json)
        }
        Command::Get { bucket, key, out } => {
            let resp = c.send(c.authed(c.http.get(c.url(&format!("/objects/{bucket}/{key}"))))?)?;
            object_reply(resp, out.as_deref())
        }
        Command::Sign { bucket, key, ttl_secs } => {
            let rb = c.http.post(c.url(&format!("/objects/{bucket}/{key}/sign"))).json(&json!({ "ttl_secs": ttl_secs }));
            c.json(c.authed(rb)?).map(Reply::Json)
        }
        Command::Fetch { url, out } => {
            let resp = c.send(c.http.get(c.url("/fetch")).query(&[("url", url)]))?;
            object_reply(resp, out.as_deref())
        }
        Command::Submit { file } => {
            let mut desc = read_doc(file)?;
            if desc.get("owner").is_none() {
                let me = c.get("/whoami")?;
                desc["owner"] = me["user"].clone();
            }
            c.json(c.authed(c.http.post(c.url("/jobs")).json(&desc))?).map(Reply::Json)
        }
        Command::Status { id } => c.get(&format!("/jobs/{id}")).map(Reply::Json),
        Command::Jobs { state, cursor, limit, all } => {
            let q = opt_query(&[("state", state.clone()), ("cursor", cursor.clone()), ("limit", limit.map(|l| l.to_string()))]);
            if *all {
                c.all_pages("/jobs", q).map(Reply::Json)
            } else {
                c.json(c.authed(c.http.get(c.url("/jobs")).query(&q))?).map(Reply::Json)
            }
        }
        Command::Logs { id } => {
            let v = c.get(&format!("/jobs/{id}/logs"))?;
            let lines: Vec<&str> = v["lines"].as_array().into_iter().flatten().filter_map(Value::as_str).collect();
            match cli.output {
                Output::Json => Ok(Reply::Json(v)),
                Output::Text => Ok(Reply::Text(lines.join("\n"))),
            }
        }
        Command::Audit { dataset, user, service, from, to } => {
            let q = opt_query(&[
                ("dataset", dataset.clone()),
                ("user", user.clone()),
                ("service", service.clone()),
                ("from", from.clone()),
                ("to", to.clone()),
                ("format", matches!(cli.output, Output::Text).then(|| "lines".to_owned())),
            ]);
            let resp = c.send(c.authed(c.http.get(c.url("/audit")).query(&q))?)?;
            let text = resp.text().map_err(|e| CliError::new("BAD_RESPONSE", e.to_string()))?;
            Ok(Reply::Text(text.trim_end().to_owned()))
        }
        Command::Template(TemplateCmd::List) => c.get("/templates").map(Reply::Json),
        Command::Template(TemplateCmd::Show { name }) => c.get(&format!("/templates/{name}")).map(Reply::Json),
        Command::Template(TemplateCmd::Put { name, file }) => {
            let mut body = read_doc(file)?;
            if let Some(m) = body.as_object_mut() {
                // the name comes from the command line
                m.remove("name");
            }
            c.json(c.authed(c.http.put(c.url(&format!("/templates/{name}"))).json(&body))?).map(Reply::Json)
        }
        Command::Template(TemplateCmd::Submit { name, params }) => {
            let params: BTreeMap<&str, &str> = params.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
            let rb = c.http.post(c.url(&format!("/templates/{name}/jobs"))).json(&json!({ "params": params }));
            c.json(c.authed(rb)?).map(Reply::Json)
        }
        Command::Experiment(ExperimentCmd::Run { config, out_dir }) => run_experiment(&c, config, out_dir),
        Command::Experiment(ExperimentCmd::List) => c.get("/experiments").map(Reply::Json),
        Command::Experiment(ExperimentCmd::Show { id }) => c.get(&format!("/experiments/{id}")).map(Reply::Json),
        Command::Pool { timeline: false, .. } => c.get("/pool").map(Reply::Json),
        Command::Pool { experiment, strategy, .. } => {
            let q = opt_query(&[("experiment", experiment.map(|e| e.to_string())), ("strategy", strategy.clone())]);
            c.json(c.authed(c.http.get(c.url("/pool/timeline")).query(&q))?).map(Reply::Json)
        }
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

/// Flat rendering: one line per list item, `key: value` for objects.
fn render_text(v: &Value) -> String {
    let line = |v: &Value| match v {
        Value::Object(m) => m.iter().filter(|(_, x)| !x.is_object() && !x.is_array()).map(|(k, x)| format!("{k}={}", scalar(x))).collect::<Vec<_>>().join(" "),
        other => scalar(other),
    };
    match v {
        Value::Array(a) => a.iter().map(line).collect::<Vec<_>>().join("\n"),
        Value::Object(m) if m.get("items").is_some_and(Value::is_array) => {
            let mut out: Vec<String> = m["items"].as_array().into_iter().flatten().map(line).collect();
            if let Some(c) = m.get("next_cursor").and_then(Value::as_str) {
                out.push(format!("next_cursor={c}"));
            }
            out.join("\n")
        }
        Value::Object(m) => m.iter().map(|(k, x)| format!("{k}: {}", if x.is_object() || x.is_array() { x.to_string() } else { scalar(x) })).collect::<Vec<_>>().join("\n"),
        other => scalar(other),
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(&cli) {
        Ok(reply) => {
            let mut out = std::io::stdout().lock();
            let res = match reply {
                Reply::Json(v) => match cli.output {
                    Output::Json => writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("value serializes")),
                    Output::Text => writeln!(out, "{}", render_text(&v)),
                },
                Reply::Text(t) if t.is_empty() => Ok(()),
                Reply::Text(t) => writeln!(out, "{t}"),
                Reply::Bytes(b) => out.write_all(&b),
                Reply::Empty => Ok(()),
            };
            if res.is_err() {
                return 1;
            }
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            if e.code == "RESTORING" {
                EXIT_RESTORING
            } else {
                1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_params() {
        assert_eq!(parse_kv("a=b=c"), Ok(("a".into(), "b=c".into())));
        assert!(parse_kv("=x").is_err());
        assert!(parse_kv("novalue").is_err());
    }

    #[test]
    fn text_rendering() {
        let v = json!({ "items": [{ "id": "job-000001", "state": "pending" }], "next_cursor": "job-000001" });
        assert_eq!(render_text(&v), "id=job-000001 state=pending\nnext_cursor=job-000001");
        assert_eq!(render_text(&json!({ "a": 1, "b": null })), "a: 1\nb: -");
    }

    #[test]
    fn cli_parses() {
        Cli::try_parse_from(["enclave", "login", "ann"]).unwrap();
        Cli::try_parse_from(["enclave", "login", "--service", "admin", "--secret", "s"]).unwrap();
        assert!(Cli::try_parse_from(["enclave", "login"]).is_err());
        let c = Cli::try_parse_from(["enclave", "--output", "text", "template", "submit", "t", "-p", "x=1"]).unwrap();
        assert_eq!(c.output, Output::Text);
    }
}
