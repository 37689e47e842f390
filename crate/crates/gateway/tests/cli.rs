use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;
use std::time::{Duration, Instant};

use enclave_core::SimTime;
use enclave_gateway::api::AppState;
use enclave_gateway::server::serve_on;
use enclave_gateway::service::{GatewayConfig, Service, WallClock};
use serde_json::Value;

const CONFIG: &str = r#"
worker_poll_ms = 20

[enclave.storage]
signing_secret = "cli-secret"
[[enclave.storage.bucket]]
name = "scratch"
default_tier = "hot"

[[enclave.security.policy]]
id = "scratch-all"
actions = ["read", "write", "list"]
resource = "scratch"
[[enclave.security.policy]]
id = "jobs-submit"
actions = ["write"]
resource = "jobs"
[[enclave.security.role]]
id = "analyst"
policies = ["scratch-all", "jobs-submit"]
[[enclave.security.user]]
id = "alice"
roles = ["analyst"]
[[enclave.security.service]]
id = "auditor"
role = "admin"
secret = "hunter2"

[[template]]
name = "quick"
params = { input = {} }
[template.description]
owner = "${owner}"
queue = "dev"
inputs = ["${input}"]
script = "sleep 0.05"
max_walltime_secs = 60
"#;

/// Starts a gateway on an ephemeral port; it lives until the test exits.
fn start_server() -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let cfg = GatewayConfig::from_toml_str(CONFIG).unwrap();
            let svc = Service::new(cfg, SimTime::wall_clock()).unwrap();
            let state = AppState::new(svc, Arc::new(WallClock));
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            serve_on(listener, state, Duration::from_millis(20), std::future::pending()).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

struct Cli {
    endpoint: String,
    token_file: PathBuf,
}

impl Cli {
    fn cmd(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_enclave"))
            .args(["--endpoint", &self.endpoint, "--token-file"])
            .arg(&self.token_file)
            .args(args)
            .env("RUST_LOG", "off")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.cmd(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    }

    fn json(&self, args: &[&str]) -> Value {
        serde_json::from_slice(&self.ok(args).stdout).unwrap()
    }

    /// Runs a command expected to fail; returns the error code printed.
    fn err(&self, args: &[&str]) -> (i32, String) {
        let out = self.cmd(args);
        assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
        let body: Value = serde_json::from_slice(&out.stderr).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)));
        (out.status.code().unwrap(), body["error"]["code"].as_str().unwrap().to_owned())
    }
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn cli_against_a_live_gateway() {
    let addr = start_server();
    let dir = tempfile::tempdir().unwrap();
    let user = Cli { endpoint: format!("http://{addr}"), token_file: dir.path().join("alice.token") };
    let anon = Cli { endpoint: user.endpoint.clone(), token_file: dir.path().join("missing.token") };

    assert_eq!(anon.err(&["whoami"]), (1, "NOT_LOGGED_IN".into()));
    assert_eq!(anon.err(&["login", "mallory"]), (1, "INVALID_TOKEN".into()));

    let who = user.json(&["login", "alice"]);
    assert_eq!(who["principal"], "user:alice");
    assert!(user.token_file.exists());
    assert_eq!(user.json(&["whoami"])["user"], "alice");

    let data = write(dir.path(), "in.dat", "some words here\n");
    assert_eq!(user.json(&["put", "scratch", "in/words.dat", &data])["key"], "in/words.dat");
    assert_eq!(user.ok(&["get", "scratch", "in/words.dat"]).stdout, b"some words here\n");
    let listing = String::from_utf8(user.ok(&["--output", "text", "ls", "scratch", "--all"]).stdout).unwrap();
    assert!(listing.contains("key=in/words.dat"), "{listing}");
    assert_eq!(user.err(&["get", "scratch", "in/none"]), (1, "NOT_FOUND".into()));

    let signed = user.json(&["sign", "scratch", "in/words.dat", "--ttl-secs", "300"]);
    let url = signed["url"].as_str().unwrap();
    let saved = dir.path().join("fetched");
    anon.ok(&["fetch", url, "--out", saved.to_str().unwrap()]);
    assert_eq!(std::fs::read(&saved).unwrap(), b"some words here\n");

    // owner comes from the session
    let job = write(dir.path(), "job.toml", "queue = \"dev\"\ninputs = [\"scratch/in/words.dat\"]\nscript = \"sleep 0.1\"\noutputs = [\"out.txt\"]\nmax_walltime_secs = 60\n");
    let id = user.json(&["submit", &job])["id"].as_str().unwrap().to_owned();
    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        let st = user.json(&["status", &id]);
        if st["state"] == "completed" {
            break;
        }
        assert!(Instant::now() < deadline, "job stuck: {st}");
        std::thread::sleep(Duration::from_millis(50));
    }
    let jobs = user.json(&["jobs", "--state", "completed"]);
    assert_eq!(jobs["items"][0]["id"], id.as_str());
    let logs = String::from_utf8(user.ok(&["--output", "text", "logs", &id]).stdout).unwrap();
    assert!(logs.lines().last().unwrap().ends_with("completed"), "{logs}");

    let (code, err) = user.err(&["status", "job-999999"]);
    assert_eq!((code, err.as_str()), (1, "NOT_FOUND"));

    let templated = user.json(&["template", "submit", "quick", "-p", "input=scratch/in/words.dat"]);
    assert_eq!(templated["state"], "pending");
    assert_eq!(user.err(&["template", "submit", "quick"]).1, "INVALID_BODY");
    assert_eq!(user.json(&["template", "list"])[0]["name"], "quick");

    let cfg = write(dir.path(), "exp.toml", "formats = [\"json\", \"csv\"]\n[throughput]\nworker_counts = [1, 4]\ntask_count = 40\n");
    let out_dir = dir.path().join("reports");
    let ran = user.json(&["experiment", "run", &cfg, "--out-dir", out_dir.to_str().unwrap()]);
    let files = ran["files"].as_array().unwrap();
    assert_eq!(files.len(), 2);
    assert!(files.iter().all(|f| Path::new(f.as_str().unwrap()).exists()));
    assert_eq!(user.json(&["experiment", "show", "1"])["outputs"]["throughput"]["points"].as_array().unwrap().len(), 2);
    // nothing has produced a scaling run yet
    assert_eq!(user.err(&["pool", "--timeline"]).1, "NOT_FOUND");
    assert_eq!(user.json(&["pool"])["workers"].as_array().unwrap().len(), 2);

    assert_eq!(user.err(&["audit"]).1, "ACCESS_DENIED");
    let admin = Cli { endpoint: user.endpoint.clone(), token_file: dir.path().join("admin.token") };
    admin.ok(&["login", "--service", "auditor", "--secret", "hunter2"]);
    let audit = String::from_utf8(admin.ok(&["audit", "--user", "alice"]).stdout).unwrap();
    let recs: Vec<Value> = audit.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(recs.iter().any(|r| r["resource"] == "scratch/in/words.dat"));
    let piped = String::from_utf8(admin.ok(&["--output", "text", "audit", "--user", "alice"]).stdout).unwrap();
    assert_eq!(piped.lines().count(), recs.len());
    // workers acting for alice show up as `service:...>user:alice`
    assert!(piped.lines().all(|l| l.split('|').nth(2).is_some_and(|a| a.ends_with("user:alice"))), "{piped}");
    assert!(piped.lines().any(|l| l.contains(">user:alice|read|scratch/in/words.dat|allowed")), "{piped}");

    let down = Cli { endpoint: "http://127.0.0.1:9".into(), token_file: user.token_file.clone() };
    assert_eq!(down.err(&["whoami"]).1, "UNREACHABLE");
}
