//! Commands behind the `tbsim` binary: single runs, stride profiling,
//! policy sweeps and file validation. Each returns its artifacts so tests
//! and examples can drive them without a subprocess.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::batching::{plan_kernel, sharing_histogram, BatchPlan, Formation, PlanFile, ProfileOptions, SharingHistogram};
use crate::engine::{run_with, write_traces, MetricsReport, RunConfig, RunOptions, Simulator};
use crate::error::{Result, SimError};
use crate::workload::WorkloadFile;

/// Default output directory when `--out` is absent.
pub const OUT_DIR_ENV: &str = "TBSIM_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "tbsim-out";
pub const EXPERIMENT_SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: u8 = 0;
pub const EXIT_TRUNCATED: u8 = 2;
pub const EXIT_FAULT: u8 = 3;

/// `--out` wins, then a directory named in the input file, then the
/// environment, then `tbsim-out`.
pub fn resolve_out_dir(flag: Option<&Path>, from_file: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_owned();
    }
    if let Some(p) = from_file {
        return p.to_owned();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUT_DIR),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| SimError::Parse {
        path: path.to_owned(),
        source,
    })
}

// ---------------------------------------------------------------- run

#[derive(Debug)]
pub struct RunArtifacts {
    pub report: MetricsReport,
    pub report_path: PathBuf,
}

impl RunArtifacts {
    pub fn exit_code(&self) -> u8 {
        if self.report.truncated {
            EXIT_TRUNCATED
        } else {
            EXIT_OK
        }
    }
}

pub fn cmd_run(config: &Path, out: &Path, seed: Option<u64>, trace: bool) -> Result<RunArtifacts> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let output = run_with(&cfg, RunOptions { trace_issue: trace })?;
    create_dir(out)?;
    let report_path = out.join("report.json");
    output.report.save(&report_path)?;
    if trace {
        write_traces(&output, out)?;
    }
    Ok(RunArtifacts {
        report: output.report,
        report_path,
    })
}

pub fn summary_line(r: &MetricsReport) -> String {
    format!(
        "{}: cycles={}{} ipc={:.3} blp={:.2} rbhr={:.3} local={:.3} delay={:.1} reply_stalls={} energy={:.1}",
        r.kernel,
        r.cycles,
        if r.truncated { " (truncated)" } else { "" },
        r.ipc,
        r.blp,
        r.rbhr,
        r.local_ratio,
        r.mean_access_delay,
        r.reply_stalls,
        r.energy.total,
    )
}

// ---------------------------------------------------------------- profile

#[derive(Debug)]
pub struct ProfileArtifacts {
    pub plan: BatchPlan,
    pub histogram: SharingHistogram,
    pub plan_path: PathBuf,
    pub histogram_path: PathBuf,
    /// Set when no grouping met the sharing threshold.
    pub warning: Option<String>,
}

/// Profiles the kernel in `input`, which is either a workload file or a run
/// config. Without `page_size` the config's GDDR page size (or 4KB) is used.
pub fn cmd_profile(input: &Path, page_size: Option<u64>, out: &Path) -> Result<ProfileArtifacts> {
    let raw = read_json(input)?;
    let (wl, cfg_page, opts) = if raw.get("kernel").is_some() {
        (WorkloadFile::load(input)?, 4096, ProfileOptions::default())
    } else {
        let cfg = RunConfig::load(input)?;
        let page = cfg.gddr.layout.page_size();
        (cfg.load_workload()?, page, cfg.batching.profile)
    };
    let page_size = page_size.unwrap_or(cfg_page);
    if !page_size.is_power_of_two() {
        return Err(SimError::invalid("page_size", format!("{page_size} is not a power of two")));
    }
    let plan = plan_kernel(&wl.kernel, page_size, &opts)?;
    let histogram = sharing_histogram(&plan);
    let warning = (plan.formation == Formation::Fallback).then(|| {
        format!(
            "no grouping of '{}' keeps shared pages under {:.0}%; fell back to stride {}",
            wl.kernel.name,
            opts.fallback_threshold * 100.0,
            plan.stride
        )
    });

    create_dir(out)?;
    let plan_path = out.join("plan.json");
    plan.save(&plan_path)?;
    let histogram_path = out.join("sharing.csv");
    let mut w = csv::Writer::from_path(&histogram_path)?;
    w.write_record(["distance", "pages", "fraction"])?;
    for (d, n) in &histogram.bins {
        let frac = *n as f64 / histogram.total_pages.max(1) as f64;
        w.write_record([d.to_string(), n.to_string(), format!("{frac:.6}")])?;
    }
    w.flush().map_err(|e| SimError::io(&histogram_path, e))?;
    Ok(ProfileArtifacts {
        plan,
        histogram,
        plan_path,
        histogram_path,
        warning,
    })
}

// ---------------------------------------------------------------- compare

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaseConfig {
    Path(PathBuf),
    Inline(Value),
}

/// One sweep dimension: a dotted path into the run config and its values.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub path: String,
    pub values: Vec<Value>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    #[serde(default = "experiment_schema")]
    pub schema_version: u32,
    pub name: String,
    pub base: BaseConfig,
    #[serde(default)]
    pub axes: Vec<Axis>,
    /// Axis assignments naming the normalization cell. Defaults to the
    /// first cell running `Ccws`, else the first cell.
    #[serde(default)]
    pub baseline: Option<BTreeMap<String, Value>>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_max_cells")]
    pub max_cells: usize,
    /// Directory relative paths resolve against; set on load.
    #[serde(skip)]
    pub origin: PathBuf,
}

fn experiment_schema() -> u32 {
    EXPERIMENT_SCHEMA_VERSION
}
fn default_max_cells() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub assignments: Vec<(String, Value)>,
}

impl Cell {
    /// `path=value` pairs joined by `;`, values in compact JSON minus quotes.
    pub fn key(&self) -> String {
        if self.assignments.is_empty() {
            return "base".into();
        }
        self.assignments
            .iter()
            .map(|(p, v)| format!("{p}={}", value_label(v)))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn report_file(&self) -> String {
        format!("cells/cell_{:03}.json", self.index)
    }
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Writes `v` at a dotted path, creating objects along the way.
pub fn set_path(root: &mut Value, path: &str, v: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(SimError::invalid("experiment", format!("bad axis path '{path}'")));
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| {
            SimError::invalid("experiment", format!("'{path}' descends into a non-object"))
        })?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_owned(), v);
            return Ok(());
        }
        cur = obj.entry(*part).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!()
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        let mut exp: Experiment = serde_json::from_str(&text).map_err(|source| SimError::Parse {
            path: path.to_owned(),
            source,
        })?;
        exp.origin = path.parent().unwrap_or(Path::new(".")).to_owned();
        if let BaseConfig::Path(p) = &mut exp.base {
            if p.is_relative() {
                *p = exp.origin.join(&*p);
            }
        }
        if let Some(p) = &mut exp.out_dir {
            if p.is_relative() {
                *p = exp.origin.join(&*p);
            }
        }
        exp.validate()?;
        Ok(exp)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SimError::invalid("experiment", msg));
        if self.schema_version != EXPERIMENT_SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}", self.schema_version));
        }
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return bad(format!("name '{}' must be non-empty [A-Za-z0-9._-]", self.name));
        }
        for (i, a) in self.axes.iter().enumerate() {
            if a.values.is_empty() {
                return bad(format!("axis '{}' has no values", a.path));
            }
            if self.axes[..i].iter().any(|b| b.path == a.path) {
                return bad(format!("axis '{}' listed twice", a.path));
            }
        }
        let n = self.cell_count();
        if n > self.max_cells {
            return bad(format!("{n} cells exceed max_cells {}", self.max_cells));
        }
        if let Some(b) = &self.baseline {
            for (k, v) in b {
                match self.axes.iter().find(|a| &a.path == k) {
                    None => return bad(format!("baseline names '{k}', which is not an axis")),
                    Some(a) if !a.values.contains(v) => {
                        return bad(format!("baseline value {v} is not on axis '{k}'"))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    /// Cross product, last axis varying fastest.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = vec![Vec::new()];
        for a in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|prefix: Vec<(String, Value)>| {
                    a.values.iter().map(move |v| {
                        let mut c = prefix.clone();
                        c.push((a.path.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        cells
            .into_iter()
            .enumerate()
            .map(|(index, assignments)| Cell { index, assignments })
            .collect()
    }

    pub fn baseline_index(&self, cells: &[Cell]) -> usize {
        let matches = |c: &Cell, want: &BTreeMap<String, Value>| {
            want.iter()
                .all(|(k, v)| c.assignments.iter().any(|(p, x)| p == k && x == v))
        };
        if let Some(b) = &self.baseline {
            return cells.iter().position(|c| matches(c, b)).unwrap_or(0);
        }
        let ccws: BTreeMap<String, Value> =
            [("scheduler.policy".to_owned(), Value::from("Ccws"))].into();
        cells.iter().position(|c| matches(c, &ccws)).unwrap_or(0)
    }

    fn base_value(&self) -> Result<(Value, PathBuf)> {
        match &self.base {
            BaseConfig::Path(p) => Ok((read_json(p)?, p.clone())),
            // Relative paths inside an inline base resolve next to the experiment.
            BaseConfig::Inline(v) => Ok((v.clone(), self.origin.join("experiment.json"))),
        }
    }

    /// Run config for one cell, validated.
    pub fn cell_config(&self, cell: &Cell) -> Result<RunConfig> {
        let (mut v, at) = self.base_value()?;
        for (p, x) in &cell.assignments {
            set_path(&mut v, p, x.clone())?;
        }
        let cfg = RunConfig::from_json(&v.to_string(), &at)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CellStatus {
    Ok,
    Truncated,
    Failed(String),
}

impl CellStatus {
    fn label(&self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Truncated => "truncated",
            CellStatus::Failed(_) => "failed",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub cell: Cell,
    pub status: CellStatus,
    pub report: Option<MetricsReport>,
}

#[derive(Debug)]
pub struct CompareOutcome {
    pub results: Vec<CellResult>,
    pub baseline: usize,
    pub summary_path: PathBuf,
    pub long_path: PathBuf,
}

impl CompareOutcome {
    pub fn baseline_failed(&self) -> bool {
        self.results[self.baseline].report.is_none()
    }

    pub fn exit_code(&self) -> u8 {
        if self.baseline_failed() {
            EXIT_FAULT
        } else {
            EXIT_OK
        }
    }
}

fn run_cell(exp: &Experiment, cell: &Cell, seed: Option<u64>, dir: &Path) -> CellResult {
    let attempt = || -> Result<MetricsReport> {
        let mut cfg = exp.cell_config(cell)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let report = run_with(&cfg, RunOptions::default())?.report;
        report.save(dir.join(cell.report_file()))?;
        Ok(report)
    };
    match attempt() {
        Ok(r) => CellResult {
            cell: cell.clone(),
            status: if r.truncated { CellStatus::Truncated } else { CellStatus::Ok },
            report: Some(r),
        },
        Err(e) => CellResult {
            cell: cell.clone(),
            status: CellStatus::Failed(e.to_string()),
            report: None,
        },
    }
}

fn ratio(v: f64, base: f64) -> String {
    if base == 0.0 || !base.is_finite() || !v.is_finite() {
        String::new()
    } else {
        format!("{:.6}", v / base)
    }
}

/// Runs every cell (in parallel), writes `cells/cell_NNN.json`,
/// `summary.csv` (one row per cell) and `long.csv` (one row per cell and
/// metric). Ordering follows the cell index, independent of completion order.
pub fn cmd_compare(experiment: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<CompareOutcome> {
    let exp = Experiment::load(experiment)?;
    let dir = resolve_out_dir(out, exp.out_dir.as_deref()).join(&exp.name);
    create_dir(&dir.join("cells"))?;
    let cells = exp.cells();
    let baseline = exp.baseline_index(&cells);
    let results: Vec<CellResult> = cells.par_iter().map(|c| run_cell(&exp, c, seed, &dir)).collect();

    let names: Vec<&str> = crate::engine::MetricsReport::metric_names();
    let base_metrics: Option<Vec<f64>> = results[baseline]
        .report
        .as_ref()
        .map(|r| r.metrics().into_iter().map(|(_, v)| v).collect());

    let summary_path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path)?;
    let mut header = vec!["cell".to_owned(), "key".to_owned()];
    header.extend(exp.axes.iter().map(|a| a.path.clone()));
    header.extend(["status", "baseline", "report", "error"].map(String::from));
    header.extend(names.iter().map(|n| n.to_string()));
    header.extend(names.iter().map(|n| format!("{n}_norm")));
    w.write_record(&header)?;
    for r in &results {
        let mut row = vec![r.cell.index.to_string(), r.cell.key()];
        row.extend(r.cell.assignments.iter().map(|(_, v)| value_label(v)));
        row.push(r.status.label().into());
        row.push((r.cell.index == baseline).to_string());
        match (&r.report, &r.status) {
            (Some(rep), _) => {
                row.push(r.cell.report_file());
                row.push(String::new());
                let vals: Vec<f64> = rep.metrics().into_iter().map(|(_, v)| v).collect();
                row.extend(vals.iter().map(|v| v.to_string()));
                match &base_metrics {
                    Some(b) => row.extend(vals.iter().zip(b).map(|(v, b)| ratio(*v, *b))),
                    None => row.extend(names.iter().map(|_| String::new())),
                }
            }
            (None, status) => {
                row.push(String::new());
                row.push(match status {
                    CellStatus::Failed(m) => m.clone(),
                    _ => String::new(),
                });
                row.extend((0..2 * names.len()).map(|_| String::new()));
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| SimError::io(&summary_path, e))?;

    let long_path = dir.join("long.csv");
    let mut w = csv::Writer::from_path(&long_path)?;
    w.write_record(["cell", "key", "metric", "value", "normalized"])?;
    for r in &results {
        let Some(rep) = &r.report else { continue };
        for (i, (name, v)) in rep.metrics().into_iter().enumerate() {
            let norm = base_metrics.as_ref().map(|b| ratio(v, b[i])).unwrap_or_default();
            w.write_record([r.cell.index.to_string(), r.cell.key(), name.into(), v.to_string(), norm])?;
        }
    }
    w.flush().map_err(|e| SimError::io(&long_path, e))?;

    Ok(CompareOutcome {
        results,
        baseline,
        summary_path,
        long_path,
    })
}

// ---------------------------------------------------------------- validate

/// What `cmd_validate` recognised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileKind {
    RunConfig,
    Workload,
    Experiment,
    Plan,
}

/// Checks a file of any supported kind. Run configs are taken as far as
/// building the simulator, so layout and placement problems surface too.
pub fn cmd_validate(path: &Path) -> Result<(FileKind, String)> {
    let raw = read_json(path)?;
    if raw.get("axes").is_some() || raw.get("base").is_some() {
        let exp = Experiment::load(path)?;
        let cells = exp.cells();
        for c in &cells {
            let cfg = exp.cell_config(c)?;
            cfg.load_workload()?;
        }
        return Ok((FileKind::Experiment, format!("experiment '{}' with {} cells", exp.name, cells.len())));
    }
    if raw.get("kernel").is_some() {
        let wl = WorkloadFile::load(path)?;
        return Ok((
            FileKind::Workload,
            format!("workload '{}' with {} blocks", wl.kernel.name, wl.kernel.total_blocks()),
        ));
    }
    if raw.get("plan").is_some() {
        let _: PlanFile = serde_json::from_value(raw).map_err(|source| SimError::Parse {
            path: path.to_owned(),
            source,
        })?;
        let plan = BatchPlan::load(path)?;
        return Ok((FileKind::Plan, format!("plan with stride {} and {} batches", plan.stride, plan.batches.len())));
    }
    let cfg = RunConfig::load(path)?;
    let sim = Simulator::new(&cfg, RunOptions::default())?;
    Ok((
        FileKind::RunConfig,
        format!("run config, {} batches at stride {}", sim.plan().batches.len(), sim.plan().stride),
    ))
}
