//! Argument handling and subcommand dispatch.

use std::fs;
use std::path::{Path, PathBuf};

use gqkd_core::analysis::{
    auto_window, calibrate, evaluate, secure_distance, security_threshold, sweep, sweep_csv, with_window,
    Observation, Observed, SweepRow, SWEEP_CSV_HEADER,
};
use gqkd_core::montecarlo::{cross_check, run_with_metadata, RunSpec};
use gqkd_core::{Error as CoreError, Preset, SystemConfig};
use serde_json::json;

use crate::config::{emit_config, Assignments, Document};
use crate::error::CliError;

pub const USAGE: &str = "\
usage: gqkd <command> [--preset NAME] [--config FILE] [--out DIR] [--<config_key> VALUE ...]

commands:
  analyze      single operating point, JSON
  sweep        QBER and rates over distance (--distances 1:25:1 or 1,5,10)
  montecarlo   event-level simulation plus cross-check (--workers N)
  window-opt   best gating window for the configured link
  calibrate    fit coupling, dark rate and extinction (--observe 25:qber=0.036)
  compare      SSPD_3G3 and SISPAD_2G sweeps side by side
  threshold    QBER at which secrecy efficiency reaches zero (--i-ae 0.29)

presets: SSPD_3G3 (default), SISPAD_2G
GQKD_OUTPUT_DIR sets the output directory when --out is not given.";

const COMMANDS: [&str; 7] = [
    "analyze",
    "sweep",
    "montecarlo",
    "window-opt",
    "calibrate",
    "compare",
    "threshold",
];

/// A parsed command line.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub command: String,
    pub preset: Option<Preset>,
    pub config_path: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
    pub distances: Option<String>,
    pub observations: Vec<String>,
    pub workers: Option<usize>,
    pub i_ae: Option<f64>,
}

impl Manifest {
    pub fn parse(args: &[String]) -> Result<Self, CliError> {
        let mut it = args.iter();
        let command = it.next().ok_or_else(|| CliError::usage("missing command"))?;
        if !COMMANDS.contains(&command.as_str()) {
            return Err(CliError::usage(format!("unknown command `{command}`")));
        }
        let mut m = Manifest {
            command: command.clone(),
            ..Default::default()
        };
        while let Some(flag) = it.next() {
            let Some(name) = flag.strip_prefix("--") else {
                return Err(CliError::usage(format!("unexpected argument `{flag}`")));
            };
            let value = it
                .next()
                .ok_or_else(|| CliError::usage(format!("--{name} needs a value")))?
                .clone();
            match name {
                "preset" => m.preset = Some(value.parse().map_err(CliError::usage)?),
                "config" => m.config_path = Some(PathBuf::from(value)),
                "out" => m.out_dir = Some(PathBuf::from(value)),
                "distances" => m.distances = Some(value),
                "observe" => m.observations.push(value),
                "workers" => {
                    let n = value
                        .parse::<usize>()
                        .ok()
                        .filter(|&n| n > 0)
                        .ok_or_else(|| CliError::usage("--workers needs a positive integer"))?;
                    m.workers = Some(n);
                }
                "i-ae" => {
                    let x = value
                        .parse::<f64>()
                        .map_err(|_| CliError::usage(format!("--i-ae: `{value}` is not a number")))?;
                    m.i_ae = Some(x);
                }
                key => m.overrides.push((key.replace('-', "_"), value)),
            }
        }
        Ok(m)
    }

    fn document(&self, preset: Preset) -> Result<Document, CliError> {
        let mut assignments = match &self.config_path {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                Assignments::from_text(&text).map_err(|e| CliError {
                    message: format!("{}: {}", path.display(), e.message),
                    ..e
                })?
            }
            None => Assignments::default(),
        };
        let mut cli = Assignments::default();
        for (key, value) in &self.overrides {
            cli.push(key, value, None).map_err(|e| CliError {
                message: format!("--{key}: {}", e.message),
                ..e
            })?;
        }
        assignments.overlay(cli);
        assignments.apply(Document::from_config(preset.config()))
    }

    fn out_dir(&self, env_dir: Option<&Path>) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| env_dir.map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

/// What a successful command produced.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub stdout: String,
    pub artifacts: Vec<PathBuf>,
}

struct Writer {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Self { dir, written: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }
}

fn pretty(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    s.push('\n');
    s
}

/// Parses `a:b:step` (inclusive) or a comma-separated list.
pub fn parse_distances(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::usage(format!("--distances: cannot parse `{spec}`"));
    let num = |s: &str| s.trim().parse::<f64>().ok().filter(|x| x.is_finite());
    let parts: Vec<&str> = spec.split(':').collect();
    let out = match parts.as_slice() {
        [lo, hi, step] => {
            let (lo, hi, step) = (num(lo).ok_or_else(bad)?, num(hi).ok_or_else(bad)?, num(step).ok_or_else(bad)?);
            if step <= 0.0 || hi < lo {
                return Err(bad());
            }
            let n = ((hi - lo) / step + 1e-9).floor() as usize;
            (0..=n).map(|k| lo + k as f64 * step).collect()
        }
        [list] => list.split(',').map(|s| num(s).ok_or_else(bad)).collect::<Result<Vec<_>, _>>()?,
        _ => return Err(bad()),
    };
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

/// Parses `25:qber=0.036` or `10:raw_rate_hz=2.1e4`.
pub fn parse_observation(spec: &str) -> Result<Observation, CliError> {
    let bad = || CliError::usage(format!("--observe: expected DIST:qber=X or DIST:raw_rate_hz=X, got `{spec}`"));
    let (dist, rest) = spec.split_once(':').ok_or_else(bad)?;
    let (kind, value) = rest.split_once('=').ok_or_else(bad)?;
    let distance_km: f64 = dist.trim().parse().map_err(|_| bad())?;
    let value: f64 = value.trim().parse().map_err(|_| bad())?;
    let observed = match kind.trim() {
        "qber" => Observed::Qber(value),
        "raw_rate_hz" | "raw_rate" => Observed::RawRateHz(value),
        _ => return Err(bad()),
    };
    Ok(Observation { distance_km, observed })
}

/// Resolves `window_width_ps = auto` into a concrete window.
fn resolved(doc: &Document) -> Result<SystemConfig, CliError> {
    if doc.auto_window() {
        let choice = auto_window(&doc.config)?;
        Ok(with_window(doc.config, &choice))
    } else {
        Ok(doc.config)
    }
}

fn secure_distance_json(config: &SystemConfig) -> serde_json::Value {
    match secure_distance(config) {
        Ok(d) => json!(d),
        Err(CoreError::InsecureAtOrigin { qber, threshold }) => {
            json!({ "kind": "insecure_at_origin", "qber": qber, "threshold": threshold })
        }
        Err(e) => json!({ "kind": "error", "message": e.to_string() }),
    }
}

pub fn run(args: &[String], env_out_dir: Option<&Path>) -> Result<Outcome, CliError> {
    if args.first().is_some_and(|a| a == "--help" || a == "-h" || a == "help") {
        return Ok(Outcome {
            stdout: format!("{USAGE}\n"),
            artifacts: Vec::new(),
        });
    }
    let m = Manifest::parse(args)?;
    let preset = m.preset.unwrap_or(Preset::Sspd3G3);

    if m.command == "threshold" {
        let i_ae = match m.i_ae {
            Some(x) => x,
            None => m.document(preset)?.config.i_ae,
        };
        let q = security_threshold(i_ae)?;
        return Ok(Outcome {
            stdout: format!("{q:.9}\n"),
            artifacts: Vec::new(),
        });
    }

    let mut out = Writer::new(m.out_dir(env_out_dir))?;
    let stdout = match m.command.as_str() {
        "analyze" => {
            let doc = m.document(preset)?;
            let config = resolved(&doc)?;
            let point = evaluate(&config)?;
            let body = pretty(&json!({
                "distance_km": config.channel.length_km,
                "window": config.receiver.window,
                "breakdown": point.breakdown,
                "report": point.report,
                "secure_distance": secure_distance_json(&config),
            }));
            out.write("analyze.json", &body)?;
            body
        }
        "sweep" => {
            let doc = m.document(preset)?;
            let config = resolved(&doc)?;
            let distances = parse_distances(m.distances.as_deref().unwrap_or("1:25:1"))?;
            let rows = sweep(&config, &distances)?;
            let csv = sweep_csv(&rows);
            out.write("sweep.csv", &csv)?;
            type Column = (&'static str, fn(&SweepRow) -> f64);
            let columns: [Column; 3] = [
                ("sweep_qber_total.dat", |r| r.breakdown.total),
                ("sweep_nbr_hz.dat", |r| r.report.net_bit_rate_hz),
                ("sweep_raw_rate_hz.dat", |r| r.report.raw_rate_hz),
            ];
            for (name, value) in columns {
                out.write(name, &gqkd_core::analysis::gnuplot_columns(&rows, value))?;
            }
            csv
        }
        "compare" => {
            let distances = parse_distances(m.distances.as_deref().unwrap_or("1:25:1"))?;
            let mut tables = Vec::new();
            for p in Preset::ALL {
                let doc = m.document(p)?;
                tables.push((p, sweep(&resolved(&doc)?, &distances)?));
            }
            let csv = compare_csv(&tables);
            out.write("compare.csv", &csv)?;
            csv
        }
        "montecarlo" => {
            let doc = m.document(preset)?;
            let config = resolved(&doc)?;
            let spec = RunSpec {
                config,
                cycles: doc.run.cycles,
                seed: doc.run.seed,
                block_size: doc.run.block_size,
            };
            let meta = match m.workers {
                Some(n) => {
                    let pool = rayon_pool(n)?;
                    pool.install(|| run_with_metadata(&spec))?
                }
                None => run_with_metadata(&spec)?,
            };
            let check = cross_check(&config, &meta.tally)?;
            let body = pretty(&json!({
                "run": meta,
                "cross_check": { "passed": check.passed(), "rows": check.rows, "flags": check.flags },
            }));
            out.write("montecarlo.json", &body)?;
            body
        }
        "window-opt" => {
            let doc = m.document(preset)?;
            let choice = auto_window(&doc.config)?;
            let gated = with_window(doc.config, &choice);
            let mut ungated = doc.config;
            ungated.receiver.window = gqkd_core::model::GateWindow::Ungated;
            let body = pretty(&json!({
                "period_ps": doc.config.clock.period_ps(),
                "choice": choice,
                "window": gated.receiver.window,
                "gated": evaluate(&gated)?.report,
                "ungated": evaluate(&ungated)?.report,
            }));
            out.write("window.json", &body)?;
            body
        }
        "calibrate" => {
            if m.observations.is_empty() {
                return Err(CliError::usage("calibrate needs at least one --observe DIST:qber=X"));
            }
            let observations = m
                .observations
                .iter()
                .map(|s| parse_observation(s))
                .collect::<Result<Vec<_>, _>>()?;
            let doc = m.document(preset)?;
            let fit = calibrate(&resolved(&doc)?, &observations)?;
            let mut fitted = Document::from_config(fit.config);
            fitted.run = doc.run;
            out.write("calibrated.cfg", &emit_config(&fitted))?;
            let body = pretty(&json!({
                "config": fit.config,
                "residuals": fit.residuals,
                "objective": fit.objective,
                "max_relative_residual": fit.max_relative_residual(),
                "passes": fit.passes,
            }));
            out.write("calibration.json", &body)?;
            body
        }
        other => unreachable!("command `{other}` validated in Manifest::parse"),
    };
    Ok(Outcome {
        stdout,
        artifacts: out.written,
    })
}

fn rayon_pool(n: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| CliError::usage(format!("--workers: {e}")))
}

/// One row per distance; each preset contributes every sweep column under its own prefix.
fn compare_csv(tables: &[(Preset, Vec<SweepRow>)]) -> String {
    let columns: Vec<&str> = SWEEP_CSV_HEADER.split(',').skip(1).collect();
    let mut header = vec!["distance_km".to_string()];
    for (p, _) in tables {
        header.extend(columns.iter().map(|c| format!("{}_{c}", p.name())));
    }
    let mut out = header.join(",");
    out.push('\n');
    let n = tables.first().map_or(0, |(_, rows)| rows.len());
    for i in 0..n {
        let mut fields = vec![tables[0].1[i].csv_fields()[0].clone()];
        for (_, rows) in tables {
            fields.extend(rows[i].csv_fields().into_iter().skip(1));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}
