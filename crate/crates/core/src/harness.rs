//! Concurrent evaluation of computational models, built-in or external,
//! with per-request fault isolation and structured result reporting.
//!
//! A batch of [`EvaluationRequest`]s runs against one [`ModelSpec`] on a
//! pool of worker threads; records come back in request order no matter
//! which worker finished first, and one failing request never poisons the
//! rest. External executables receive parameters through `{p0} {p1} ...`
//! placeholders (and `{c0} ...` for configuration coordinates) rendered
//! into the argument list or a templated input file, and report results
//! on stdout (last non-empty line of comma- or whitespace-separated
//! reals) or through a named output file.
//!
//! Built-in models (closed forms, inputs are the request parameters
//! followed by any configuration coordinates):
//!
//! - `affine`: `offset + sum_i coefficients[i] * x[i]`
//! - `quadratic`: `offset + scale * sum_i (x[i] - center[i])^2`;
//!   defaults `scale = 1`, `offset = 0`
//! - `sum_of_squares`: `sum_i x[i]^2`
//! - `rosenbrock_density`: log-density `-((a - x)^2 + b (y - x^2)^2)`,
//!   peaking at `(a, a^2)`; defaults `a = 1`, `b = 100`
//! - `ishigami`: `sin x1 + a sin^2 x2 + b x3^4 sin x1`; defaults
//!   `a = 7`, `b = 0.1`
//! - `four_branch`: series-system limit state, the minimum of four
//!   branch margins; default `k = 6`
//! - `step`: `low` for `x < threshold`, else `high`; defaults
//!   `threshold = 0.5`, `low = 0`, `high = 1`
//! - `slow`: wraps another builtin and sleeps `delay_ms` per call

use std::collections::HashSet;
use std::io::{BufRead, Read, Write as IoWrite};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Schema tag written into every reporting artifact.
pub const SCHEMA_VERSION: u32 = 1;

/// One model evaluation to perform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRequest {
    /// Unique within a batch.
    pub request_id: u64,
    pub parameters: Vec<f64>,
    /// Experimental configuration row for calibration runs; rendered as
    /// `{c0} {c1} ...` for external models and appended after the
    /// parameters for builtins.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub configuration: Option<Vec<f64>>,
}

impl EvaluationRequest {
    pub fn new(request_id: u64, parameters: Vec<f64>) -> Self {
        Self { request_id, parameters, configuration: None }
    }

    pub fn with_configuration(mut self, configuration: Vec<f64>) -> Self {
        self.configuration = Some(configuration);
        self
    }

    fn builtin_input(&self) -> Vec<f64> {
        match &self.configuration {
            Some(c) => self.parameters.iter().chain(c.iter()).copied().collect(),
            None => self.parameters.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Ok,
    Failed,
    Timeout,
}

/// Outcome of one request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub request_id: u64,
    /// Empty unless status is `ok`; ok outputs are finite.
    pub outputs: Vec<f64>,
    pub status: EvalStatus,
    /// Seconds spent on this request.
    pub wall_time: f64,
    pub worker_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Where an external model writes its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum OutputRule {
    /// Last non-empty stdout line, comma- or whitespace-separated reals.
    Stdout,
    /// A file the command writes; the path template may use `{id}` and
    /// the parameter placeholders.
    File { path: String },
}

/// External executable description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSpec {
    /// Argument vector; first entry is the program. Placeholders `{p0}`,
    /// `{c0}`, `{id}`, and `{input}` are substituted per request.
    pub command: Vec<String>,
    /// When set, written (with placeholders substituted) to a per-request
    /// temp file whose path replaces `{input}` in the command.
    #[serde(default)]
    pub input_template: Option<String>,
    #[serde(default = "default_output_rule")]
    pub output: OutputRule,
    /// Seconds before the process is killed and the record marked
    /// `timeout`.
    #[serde(default)]
    pub timeout: Option<f64>,
    /// When set, the child environment is cleared except these variables
    /// (copied from the parent). Unset means full inheritance.
    #[serde(default)]
    pub env_passthrough: Option<Vec<String>>,
}

fn default_output_rule() -> OutputRule {
    OutputRule::Stdout
}

/// What to run: a registry closed form or an external command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Builtin {
        name: String,
        #[serde(default)]
        params: serde_json::Value,
    },
    External(ExternalSpec),
}

pub const BUILTIN_NAMES: &[&str] = &[
    "affine",
    "quadratic",
    "sum_of_squares",
    "rosenbrock_density",
    "ishigami",
    "four_branch",
    "step",
    "slow",
];

impl ModelSpec {
    pub fn builtin(name: &str) -> Self {
        ModelSpec::Builtin { name: name.into(), params: serde_json::Value::Null }
    }

    pub fn builtin_with(name: &str, params: serde_json::Value) -> Self {
        ModelSpec::Builtin { name: name.into(), params }
    }

    pub fn validate(&self) -> Result<(), Error> {
        match self {
            ModelSpec::Builtin { name, params } => {
                if !BUILTIN_NAMES.contains(&name.as_str()) {
                    return Err(Error::InvalidConfig(format!(
                        "unknown builtin model '{name}' (available: {})",
                        BUILTIN_NAMES.join(", ")
                    )));
                }
                check_builtin_params(name, params)
            }
            ModelSpec::External(ext) => {
                if ext.command.is_empty() {
                    return Err(Error::InvalidConfig("external command is empty".into()));
                }
                if let Some(t) = ext.timeout {
                    if !(t > 0.0) {
                        return Err(Error::InvalidConfig(format!(
                            "external timeout must be positive, got {t}"
                        )));
                    }
                }
                let templated = ext
                    .command
                    .iter()
                    .map(String::as_str)
                    .chain(ext.input_template.as_deref())
                    .any(|s| s.contains("{p") || s.contains("{c") || s.contains("{input}"));
                if !templated {
                    return Err(Error::InvalidConfig(
                        "external command never receives the parameters: no {p*}, {c*}, \
                         or {input} placeholder in the command or input template"
                            .into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

fn allowed_keys(name: &str) -> &'static [&'static str] {
    match name {
        "affine" => &["coefficients", "offset"],
        "quadratic" => &["center", "scale", "offset"],
        "rosenbrock_density" => &["a", "b"],
        "ishigami" => &["a", "b"],
        "four_branch" => &["k"],
        "step" => &["threshold", "low", "high"],
        "slow" => &["inner", "inner_params", "delay_ms"],
        _ => &[],
    }
}

fn check_builtin_params(name: &str, params: &serde_json::Value) -> Result<(), Error> {
    match params {
        serde_json::Value::Null => Ok(()),
        serde_json::Value::Object(map) => {
            for key in map.keys() {
                if !allowed_keys(name).contains(&key.as_str()) {
                    return Err(Error::InvalidConfig(format!(
                        "builtin '{name}' does not accept parameter '{key}'"
                    )));
                }
            }
            if name == "slow" {
                let inner = map
                    .get("inner")
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| {
                        Error::InvalidConfig("slow wrapper needs an 'inner' model name".into())
                    })?;
                if inner == "slow" {
                    return Err(Error::InvalidConfig("slow wrapper cannot nest itself".into()));
                }
                let inner_params =
                    map.get("inner_params").cloned().unwrap_or(serde_json::Value::Null);
                ModelSpec::Builtin { name: inner.into(), params: inner_params }.validate()?;
            }
            if name == "affine" && !map.contains_key("coefficients") {
                return Err(Error::InvalidConfig("affine needs 'coefficients'".into()));
            }
            if name == "quadratic" && !map.contains_key("center") {
                return Err(Error::InvalidConfig("quadratic needs 'center'".into()));
            }
            Ok(())
        }
        _ => Err(Error::InvalidConfig(format!(
            "builtin '{name}' parameters must be a table/object"
        ))),
    }
}

fn param_f64(params: &serde_json::Value, key: &str, default: f64) -> Result<f64, Error> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v.as_f64().ok_or_else(|| {
            Error::InvalidConfig(format!("parameter '{key}' must be a number"))
        }),
    }
}

fn param_vec(params: &serde_json::Value, key: &str) -> Result<Vec<f64>, Error> {
    let arr = params
        .get(key)
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::InvalidConfig(format!("parameter '{key}' must be an array")))?;
    arr.iter()
        .map(|v| {
            v.as_f64().ok_or_else(|| {
                Error::InvalidConfig(format!("parameter '{key}' must hold numbers"))
            })
        })
        .collect()
}

fn need_dim(name: &str, x: &[f64], dim: usize) -> Result<(), Error> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "builtin '{name}' expects {dim} inputs, got {}",
            x.len()
        )));
    }
    Ok(())
}

/// Evaluates a registry model at `x`. Exposed so callers can wire
/// builtins directly into samplers without batch plumbing.
pub fn evaluate_builtin(
    name: &str,
    params: &serde_json::Value,
    x: &[f64],
) -> Result<Vec<f64>, Error> {
    let value = match name {
        "affine" => {
            let coeff = param_vec(params, "coefficients")?;
            let offset = param_f64(params, "offset", 0.0)?;
            need_dim(name, x, coeff.len())?;
            offset + coeff.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
        }
        "quadratic" => {
            let center = param_vec(params, "center")?;
            let scale = param_f64(params, "scale", 1.0)?;
            let offset = param_f64(params, "offset", 0.0)?;
            need_dim(name, x, center.len())?;
            offset + scale * center.iter().zip(x).map(|(c, v)| (v - c) * (v - c)).sum::<f64>()
        }
        "sum_of_squares" => {
            if x.is_empty() {
                return Err(Error::EmptyData("sum_of_squares input".into()));
            }
            x.iter().map(|v| v * v).sum()
        }
        "rosenbrock_density" => {
            need_dim(name, x, 2)?;
            let a = param_f64(params, "a", 1.0)?;
            let b = param_f64(params, "b", 100.0)?;
            -((a - x[0]).powi(2) + b * (x[1] - x[0] * x[0]).powi(2))
        }
        "ishigami" => {
            need_dim(name, x, 3)?;
            let a = param_f64(params, "a", 7.0)?;
            let b = param_f64(params, "b", 0.1)?;
            x[0].sin() + a * x[1].sin().powi(2) + b * x[2].powi(4) * x[0].sin()
        }
        "four_branch" => {
            need_dim(name, x, 2)?;
            let k = param_f64(params, "k", 6.0)?;
            let (x1, x2) = (x[0], x[1]);
            let s = std::f64::consts::SQRT_2;
            let branches = [
                3.0 + 0.1 * (x1 - x2).powi(2) - (x1 + x2) / s,
                3.0 + 0.1 * (x1 - x2).powi(2) + (x1 + x2) / s,
                (x1 - x2) + k / s,
                (x2 - x1) + k / s,
            ];
            branches.into_iter().fold(f64::INFINITY, f64::min)
        }
        "step" => {
            need_dim(name, x, 1)?;
            let threshold = param_f64(params, "threshold", 0.5)?;
            let low = param_f64(params, "low", 0.0)?;
            let high = param_f64(params, "high", 1.0)?;
            if x[0] < threshold {
                low
            } else {
                high
            }
        }
        "slow" => {
            let delay = param_f64(params, "delay_ms", 10.0)?;
            let inner = params
                .get("inner")
                .and_then(|v| v.as_str())
                .ok_or_else(|| Error::InvalidConfig("slow wrapper needs 'inner'".into()))?;
            let inner_params =
                params.get("inner_params").cloned().unwrap_or(serde_json::Value::Null);
            std::thread::sleep(Duration::from_micros((delay * 1000.0) as u64));
            return evaluate_builtin(inner, &inner_params, x);
        }
        other => {
            return Err(Error::InvalidConfig(format!("unknown builtin model '{other}'")))
        }
    };
    Ok(vec![value])
}

fn render(template: &str, request: &EvaluationRequest, input_path: Option<&str>) -> String {
    let mut out = template.to_string();
    for (i, p) in request.parameters.iter().enumerate() {
        out = out.replace(&format!("{{p{i}}}"), &format!("{p}"));
    }
    if let Some(config) = &request.configuration {
        for (i, c) in config.iter().enumerate() {
            out = out.replace(&format!("{{c{i}}}"), &format!("{c}"));
        }
    }
    out = out.replace("{id}", &request.request_id.to_string());
    if let Some(path) = input_path {
        out = out.replace("{input}", path);
    }
    out
}

fn parse_reals(text: &str) -> Result<Vec<f64>, Error> {
    let values: Result<Vec<f64>, _> = text
        .split(|ch: char| ch == ',' || ch.is_whitespace())
        .filter(|tok| !tok.is_empty())
        .map(str::parse::<f64>)
        .collect();
    let values =
        values.map_err(|e| Error::ModelEvaluation(format!("output parse: {e} in '{text}'")))?;
    if values.is_empty() {
        return Err(Error::ModelEvaluation("model produced no numeric output".into()));
    }
    Ok(values)
}

fn check_finite(outputs: Vec<f64>) -> Result<Vec<f64>, Error> {
    if let Some(i) = outputs.iter().position(|v| !v.is_finite()) {
        return Err(Error::ModelEvaluation(format!(
            "output {i} is not finite ({})",
            outputs[i]
        )));
    }
    Ok(outputs)
}

fn drain(stream: Option<impl Read + Send + 'static>) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut buf = String::new();
        if let Some(mut s) = stream {
            let _ = s.read_to_string(&mut buf);
        }
        buf
    })
}

enum ExternalOutcome {
    Done(Vec<f64>),
    TimedOut,
}

fn run_external(
    ext: &ExternalSpec,
    request: &EvaluationRequest,
    workdir: &std::path::Path,
) -> Result<ExternalOutcome, Error> {
    let input_path = match &ext.input_template {
        Some(template) => {
            let path = workdir.join(format!("input_{}.txt", request.request_id));
            std::fs::write(&path, render(template, request, None))?;
            Some(path.to_string_lossy().into_owned())
        }
        None => None,
    };
    let argv: Vec<String> = ext
        .command
        .iter()
        .map(|part| render(part, request, input_path.as_deref()))
        .collect();
    let mut command = std::process::Command::new(&argv[0]);
    command
        .args(&argv[1..])
        .stdin(std::process::Stdio::null())
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped());
    // Own process group, so a timeout kill reaches grandchildren that
    // would otherwise keep the output pipes open.
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        command.process_group(0);
    }
    if let Some(keep) = &ext.env_passthrough {
        command.env_clear();
        for name in keep {
            if let Ok(value) = std::env::var(name) {
                command.env(name, value);
            }
        }
    }
    let mut child = command
        .spawn()
        .map_err(|e| Error::ModelEvaluation(format!("spawn '{}': {e}", argv[0])))?;
    let stdout = drain(child.stdout.take());
    let stderr = drain(child.stderr.take());
    let started = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if let Some(limit) = ext.timeout {
            if started.elapsed().as_secs_f64() > limit {
                #[cfg(unix)]
                unsafe {
                    libc::killpg(child.id() as libc::pid_t, libc::SIGKILL);
                }
                let _ = child.kill();
                let _ = child.wait();
                let _ = stdout.join();
                let _ = stderr.join();
                return Ok(ExternalOutcome::TimedOut);
            }
        }
        std::thread::sleep(Duration::from_millis(2));
    };
    let stdout = stdout.join().unwrap_or_default();
    let stderr = stderr.join().unwrap_or_default();
    if !status.success() {
        let detail: String = stderr.trim().chars().take(300).collect();
        return Err(Error::ModelEvaluation(format!("exit {status}; stderr: {detail}")));
    }
    let outputs = match &ext.output {
        OutputRule::Stdout => {
            let line = stdout
                .lines()
                .rev()
                .find(|l| !l.trim().is_empty())
                .ok_or_else(|| {
                    Error::ModelEvaluation("model produced no stdout output".into())
                })?;
            parse_reals(line)?
        }
        OutputRule::File { path } => {
            let path = render(path, request, input_path.as_deref());
            let text = std::fs::read_to_string(&path).map_err(|e| {
                Error::ModelEvaluation(format!("output file '{path}': {e}"))
            })?;
            parse_reals(&text)?
        }
    };
    Ok(ExternalOutcome::Done(check_finite(outputs)?))
}

fn evaluate_one(
    model: &ModelSpec,
    request: &EvaluationRequest,
    worker_id: usize,
    workdir: &std::path::Path,
) -> EvaluationRecord {
    let started = Instant::now();
    let (status, outputs, message) = match model {
        ModelSpec::Builtin { name, params } => {
            let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
                evaluate_builtin(name, params, &request.builtin_input()).and_then(check_finite)
            }));
            match result {
                Ok(Ok(outputs)) => (EvalStatus::Ok, outputs, None),
                Ok(Err(e)) => (EvalStatus::Failed, vec![], Some(e.to_string())),
                Err(_) => (EvalStatus::Failed, vec![], Some("model panicked".into())),
            }
        }
        ModelSpec::External(ext) => match run_external(ext, request, workdir) {
            Ok(ExternalOutcome::Done(outputs)) => (EvalStatus::Ok, outputs, None),
            Ok(ExternalOutcome::TimedOut) => (
                EvalStatus::Timeout,
                vec![],
                Some(format!("killed after {:.3}s", ext.timeout.unwrap_or(0.0))),
            ),
            Err(e) => (EvalStatus::Failed, vec![], Some(e.to_string())),
        },
    };
    EvaluationRecord {
        request_id: request.request_id,
        outputs,
        status,
        wall_time: started.elapsed().as_secs_f64(),
        worker_id,
        message,
    }
}

/// Runs every request against the model on up to `max_concurrency` worker
/// threads. Records come back in request order; failures and timeouts are
/// per-record statuses, never batch errors.
pub fn evaluate_batch(
    model: &ModelSpec,
    requests: &[EvaluationRequest],
    max_concurrency: usize,
) -> Result<Vec<EvaluationRecord>, Error> {
    if max_concurrency == 0 {
        return Err(Error::InvalidConfig("max_concurrency must be at least 1".into()));
    }
    model.validate()?;
    let mut seen = HashSet::new();
    for request in requests {
        if !seen.insert(request.request_id) {
            return Err(Error::InvalidConfig(format!(
                "duplicate request_id {} in batch",
                request.request_id
            )));
        }
    }
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    let workdir = tempfile::tempdir()?;
    let n = requests.len();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<EvaluationRecord>>> =
        Mutex::new((0..n).map(|_| None).collect());
    let workers = max_concurrency.min(n);
    std::thread::scope(|scope| {
        for worker_id in 0..workers {
            let next = &next;
            let results = &results;
            let workdir = workdir.path();
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let record = evaluate_one(model, &requests[i], worker_id, workdir);
                results.lock().expect("poisoned results")[i] = Some(record);
            });
        }
    });
    Ok(results
        .into_inner()
        .expect("poisoned results")
        .into_iter()
        .map(|r| r.expect("worker filled every slot"))
        .collect())
}

#[derive(Serialize, Deserialize)]
struct StreamHeader {
    schema_version: u32,
    kind: String,
}

/// Appends nothing and overwrites: one header line, then one JSON record
/// per line. While the write is in flight a `<path>.partial` marker file
/// exists; it is removed on success, so a surviving marker flags a
/// truncated artifact.
pub fn write_records_jsonl(
    path: &std::path::Path,
    records: &[EvaluationRecord],
) -> Result<(), Error> {
    let marker = partial_marker(path);
    std::fs::write(&marker, b"write in progress\n")?;
    let write = || -> Result<(), Error> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(
            &mut file,
            &StreamHeader { schema_version: SCHEMA_VERSION, kind: "evaluation_records".into() },
        )?;
        file.write_all(b"\n")?;
        for record in records {
            serde_json::to_writer(&mut file, record)?;
            file.write_all(b"\n")?;
        }
        file.flush()?;
        Ok(())
    };
    write()?;
    std::fs::remove_file(&marker)?;
    Ok(())
}

/// Sidecar marker for the atomic-write protocol: created before a file is
/// written, removed after the write completes. Readers must treat any file
/// with a surviving marker as incomplete.
pub fn partial_marker(path: &std::path::Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

pub fn read_records_jsonl(path: &std::path::Path) -> Result<Vec<EvaluationRecord>, Error> {
    if partial_marker(path).exists() {
        return Err(Error::CorruptFile(format!(
            "'{}' has a .partial marker: the writing run did not finish",
            path.display()
        )));
    }
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = file.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::CorruptFile("record stream is empty".into()))??;
    let header: StreamHeader = serde_json::from_str(&header_line)?;
    if header.schema_version > SCHEMA_VERSION {
        return Err(Error::VersionMismatch {
            found: header.schema_version,
            supported: SCHEMA_VERSION,
        });
    }
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

/// Batch-level totals for the summary artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTotals {
    pub requests: usize,
    pub ok: usize,
    pub failed: usize,
    pub timeout: usize,
    /// Sum of per-record wall times, seconds.
    pub total_wall_time: f64,
}

/// Final run summary: schema tag, the configuration that produced the
/// run, the seed, and the totals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub totals: RunTotals,
}

pub fn summarize(
    records: &[EvaluationRecord],
    seed: Option<u64>,
    config: serde_json::Value,
) -> RunSummary {
    let count = |s: EvalStatus| records.iter().filter(|r| r.status == s).count();
    RunSummary {
        schema_version: SCHEMA_VERSION,
        seed,
        config,
        totals: RunTotals {
            requests: records.len(),
            ok: count(EvalStatus::Ok),
            failed: count(EvalStatus::Failed),
            timeout: count(EvalStatus::Timeout),
            total_wall_time: records.iter().map(|r| r.wall_time).sum(),
        },
    }
}

pub fn write_summary(path: &std::path::Path, summary: &RunSummary) -> Result<(), Error> {
    let marker = partial_marker(path);
    std::fs::write(&marker, b"write in progress\n")?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut file, summary)?;
    file.write_all(b"\n")?;
    file.flush()?;
    std::fs::remove_file(&marker)?;
    Ok(())
}

pub fn read_summary(path: &std::path::Path) -> Result<RunSummary, Error> {
    let summary: RunSummary =
        serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
    if summary.schema_version > SCHEMA_VERSION {
        return Err(Error::VersionMismatch {
            found: summary.schema_version,
            supported: SCHEMA_VERSION,
        });
    }
    Ok(summary)
}
