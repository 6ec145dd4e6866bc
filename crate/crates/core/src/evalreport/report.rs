use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use super::metrics::{OverlapResult, VerdictCounts};
use crate::error::{Error, Result};
use crate::intervene::ConditionKind;
use crate::model::HeadId;
use crate::patching::AsymmetryStats;

pub const REPORT_FORMAT_VERSION: u32 = 1;
const ROWS_HEADER: &str = "path,type,value";
const PLOT_HEADER: &str = "series,x,y,seed";

/// Outcomes of one ablation condition on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub label: String,
    pub kind: ConditionKind,
    pub heads: Vec<HeadId>,
    pub seed: Option<u64>,
    /// Verdicts on conflict inputs.
    pub conflict: VerdictCounts,
    /// Verdicts on clean inputs.
    pub clean: VerdictCounts,
    pub hall_rate: f64,
    pub clean_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub lambda: f64,
    pub tau: f64,
    pub train_auroc: f64,
    pub val_auroc: f64,
    pub val_f1: f64,
    pub nonzero_weights: usize,
    /// Validation AUROC of the same probe recipe on driving-head features.
    pub driving_val_auroc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaciSummary {
    pub hall_rate: f64,
    pub clean_acc: f64,
    pub fire_rate_conflict: f64,
    pub fire_rate_clean: f64,
    pub conflict: VerdictCounts,
    pub clean: VerdictCounts,
}

/// One point of a plotted series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub series: String,
    pub x: f64,
    pub y: f64,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub hashes: BTreeMap<String, String>,
    pub eval_split: String,
    pub conditions: Vec<ConditionResult>,
    pub random_mean_hall_rate: Option<f64>,
    pub asymmetry: Option<AsymmetryStats>,
    pub probe: Option<ProbeSummary>,
    pub maci: Option<MaciSummary>,
    pub overlaps: Vec<OverlapResult>,
    pub plots: Vec<PlotRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    /// `report.csv` with one flattened field per row, plus `plots.csv`.
    Rows,
    /// Human-readable `report.txt`.
    Document,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rows" => Ok(Self::Rows),
            "document" | "doc" => Ok(Self::Document),
            _ => Err(Error::Config(format!("unknown report format `{s}` (expected rows or document)"))),
        }
    }
}

fn unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Format(format!("{name} = {v} is not a fraction")));
    }
    Ok(())
}

impl Report {
    pub fn new(config_hash: &str) -> Self {
        Self { format_version: REPORT_FORMAT_VERSION, config_hash: config_hash.to_string(), ..Default::default() }
    }

    pub fn condition(&self, label: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.label == label)
    }

    /// Folds a partial result into `self`. Conditions replace any with the
    /// same label; plots and overlaps are appended; present summaries win.
    pub fn merge(&mut self, other: Report) -> Result<()> {
        if other.format_version != REPORT_FORMAT_VERSION {
            return Err(Error::Format(format!("result format version {} unsupported", other.format_version)));
        }
        if self.config_hash.is_empty() {
            self.config_hash = other.config_hash;
        } else if self.config_hash != other.config_hash {
            return Err(Error::Format(format!(
                "results come from different configurations ({} vs {})",
                self.config_hash, other.config_hash
            )));
        }
        self.format_version = REPORT_FORMAT_VERSION;
        self.seeds.extend(other.seeds);
        self.hashes.extend(other.hashes);
        if !other.eval_split.is_empty() {
            self.eval_split = other.eval_split;
        }
        for c in other.conditions {
            match self.conditions.iter_mut().find(|x| x.label == c.label) {
                Some(slot) => *slot = c,
                None => self.conditions.push(c),
            }
        }
        self.random_mean_hall_rate = other.random_mean_hall_rate.or(self.random_mean_hall_rate);
        self.asymmetry = other.asymmetry.or(self.asymmetry.take());
        self.probe = other.probe.or(self.probe.take());
        self.maci = other.maci.or(self.maci.take());
        self.overlaps.extend(other.overlaps);
        self.plots.extend(other.plots);
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_slice(&text)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(self)?;
        text.push(b'\n');
        fs::write(path, text)?;
        Ok(())
    }

    /// Rejects reports that cannot be emitted.
    pub fn check(&self) -> Result<()> {
        if self.config_hash.is_empty() {
            return Err(Error::Format("report has no config hash".into()));
        }
        if self.conditions.is_empty() {
            return Err(Error::Format("report has no condition results".into()));
        }
        for c in &self.conditions {
            unit(&format!("{} hall_rate", c.label), c.hall_rate)?;
            unit(&format!("{} clean_acc", c.label), c.clean_acc)?;
        }
        if let Some(m) = &self.maci {
            for (n, v) in [
                ("maci hall_rate", m.hall_rate),
                ("maci clean_acc", m.clean_acc),
                ("fire rate", m.fire_rate_conflict),
                ("fire rate", m.fire_rate_clean),
            ] {
                unit(n, v)?;
            }
        }
        if let Some(p) = &self.probe {
            unit("probe val_auroc", p.val_auroc)?;
            unit("probe train_auroc", p.train_auroc)?;
        }
        if self.plots.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::Format("non-finite plot value".into()));
        }
        Ok(())
    }

    pub fn to_rows(&self) -> Result<String> {
        self.check()?;
        let mut fields = Vec::new();
        flatten("", &serde_json::to_value(self)?, &mut fields);
        let mut out = format!("# conflict-heads report format_version={REPORT_FORMAT_VERSION}\n{ROWS_HEADER}\n");
        for (path, ty, value) in fields {
            let _ = writeln!(out, "{path},{ty},{}", csv_field(&value));
        }
        Ok(out)
    }

    pub fn from_rows(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if !header.starts_with('#') || !header.contains(&format!("format_version={REPORT_FORMAT_VERSION}")) {
            return Err(Error::Format(format!("unsupported report header `{header}`")));
        }
        if lines.next() != Some(ROWS_HEADER) {
            return Err(Error::Format("missing report column header".into()));
        }
        let mut root = Value::Object(Map::new());
        for line in lines.filter(|l| !l.is_empty()) {
            let bad = || Error::Format(format!("bad report row `{line}`"));
            let mut parts = line.splitn(3, ',');
            let (path, ty, raw) =
                (parts.next().ok_or_else(bad)?, parts.next().ok_or_else(bad)?, parts.next().ok_or_else(bad)?);
            let raw = csv_unquote(raw);
            let value = match ty {
                "num" => Value::Number(Number::from_str(&raw).map_err(|_| bad())?),
                "str" => Value::String(raw),
                "bool" => Value::Bool(raw == "true"),
                "null" => Value::Null,
                "empty_list" => Value::Array(Vec::new()),
                "empty_map" => Value::Object(Map::new()),
                _ => return Err(bad()),
            };
            insert(&mut root, path, value).map_err(|_| bad())?;
        }
        Ok(serde_json::from_value(root)?)
    }

    pub fn plot_rows(&self) -> String {
        let mut out = format!(
            "# conflict-heads plot data format_version={REPORT_FORMAT_VERSION} config_hash={}\n{PLOT_HEADER}\n",
            self.config_hash
        );
        for p in &self.plots {
            let seed = p.seed.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{:?},{:?},{seed}", csv_field(&p.series), p.x, p.y);
        }
        out
    }

    pub fn to_document(&self) -> Result<String> {
        self.check()?;
        let mut d = String::new();
        let _ = writeln!(d, "conflict-heads report (format {})", self.format_version);
        let _ = writeln!(d, "config hash: {}", self.config_hash);
        for (k, v) in &self.seeds {
            let _ = writeln!(d, "seed {k}: {v}");
        }
        for (k, v) in &self.hashes {
            let _ = writeln!(d, "hash {k}: {v}");
        }
        let _ = writeln!(d, "\nAblation conditions on the {} split", self.eval_split);
        let _ = writeln!(d, "{:<12} {:>9} {:>9}  heads", "condition", "hall", "clean");
        for c in &self.conditions {
            let heads: Vec<String> = c.heads.iter().map(|h| h.to_string()).collect();
            let _ = writeln!(d, "{:<12} {:>9.4} {:>9.4}  {}", c.label, c.hall_rate, c.clean_acc, heads.join(" "));
        }
        if let Some(m) = self.random_mean_hall_rate {
            let _ = writeln!(d, "random mean hall rate: {m:.4}");
        }
        if let Some(a) = &self.asymmetry {
            let _ = writeln!(
                d,
                "\nAsymmetry: aggregate ratio {:.4}, top-{} share driving {:.4}, resisting {:.4}",
                a.aggregate_ratio, a.top_n, a.top_share_driving, a.top_share_resisting
            );
        }
        if let Some(p) = &self.probe {
            let _ = writeln!(
                d,
                "\nProbe: lambda {}, tau {:.4}, validation AUROC {:.4}, F1 {:.4}, train AUROC {:.4}, {} nonzero weights",
                p.lambda, p.tau, p.val_auroc, p.val_f1, p.train_auroc, p.nonzero_weights
            );
            if let Some(a) = p.driving_val_auroc {
                let _ = writeln!(d, "driving-head feature probe, validation AUROC {a:.4}");
            }
        }
        if let Some(m) = &self.maci {
            let _ = writeln!(
                d,
                "\nMACI: hall {:.4}, clean {:.4}, fired on {:.4} of conflict and {:.4} of clean inputs",
                m.hall_rate, m.clean_acc, m.fire_rate_conflict, m.fire_rate_clean
            );
        }
        if !self.overlaps.is_empty() {
            let _ = writeln!(d, "\nSplit-half overlap");
            for o in &self.overlaps {
                let _ =
                    writeln!(d, "seed {} k {}: driving {:.4}, resisting {:.4}", o.seed, o.k, o.driving, o.resisting);
            }
        }
        Ok(d)
    }
}

/// Writes `report` in `format` under `dir`; returns the files written.
pub fn emit_report(report: &Report, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    match format {
        ReportFormat::Rows => {
            let rows = dir.join("report.csv");
            let plots = dir.join("plots.csv");
            fs::write(&rows, report.to_rows()?)?;
            fs::write(&plots, report.plot_rows())?;
            Ok(vec![rows, plots])
        }
        ReportFormat::Document => {
            let doc = dir.join("report.txt");
            fs::write(&doc, report.to_document()?)?;
            Ok(vec![doc])
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, &'static str, String)>) {
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(m) if m.is_empty() => out.push((prefix.to_string(), "empty_map", String::new())),
        Value::Object(m) => m.iter().for_each(|(k, v)| flatten(&join(k), v, out)),
        Value::Array(a) if a.is_empty() => out.push((prefix.to_string(), "empty_list", String::new())),
        Value::Array(a) => a.iter().enumerate().for_each(|(i, v)| flatten(&join(&format!("[{i}]")), v, out)),
        Value::Number(n) => out.push((prefix.to_string(), "num", n.to_string())),
        Value::String(s) => out.push((prefix.to_string(), "str", s.clone())),
        Value::Bool(b) => out.push((prefix.to_string(), "bool", b.to_string())),
        Value::Null => out.push((prefix.to_string(), "null", String::new())),
    }
}

fn insert(root: &mut Value, path: &str, value: Value) -> std::result::Result<(), ()> {
    let mut cur = root;
    let segs: Vec<&str> = path.split('.').collect();
    for (i, seg) in segs.iter().enumerate() {
        let last = i + 1 == segs.len();
        if let Some(idx) = seg.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let idx: usize = idx.parse().map_err(|_| ())?;
            if cur.is_null() {
                *cur = Value::Array(Vec::new());
            }
            let arr = cur.as_array_mut().ok_or(())?;
            if idx > arr.len() {
                return Err(());
            }
            if idx == arr.len() {
                arr.push(Value::Null);
            }
            cur = &mut arr[idx];
        } else {
            if cur.is_null() {
                *cur = Value::Object(Map::new());
            }
            cur = cur.as_object_mut().ok_or(())?.entry(seg.to_string()).or_insert(Value::Null);
        }
        if last {
            *cur = value;
            return Ok(());
        }
    }
    Err(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_unquote(s: &str) -> String {
    match s.strip_prefix('"').and_then(|s| s.strip_suffix('"')) {
        Some(inner) => inner.replace("\"\"", "\""),
        None => s.to_string(),
    }
}
