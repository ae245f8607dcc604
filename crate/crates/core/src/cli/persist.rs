//! Output directory layout, manifest, incremental replicate table and lock file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationState, HeldOutPrediction};
use crate::engine::{AnalysisPlan, RawReplicate};
use crate::error::{PbaError, Result};

pub const REPLICATES_HEADER: &str = "replicateId,classId,memberId,analysisValue,y";

#[derive(Debug, Clone)]
pub struct OutputDir {
    pub root: PathBuf,
}

impl OutputDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn create(&self) -> Result<()> {
        std::fs::create_dir_all(self.chains()).map_err(PbaError::io(self.chains()))
    }

    pub fn config_lock(&self) -> PathBuf {
        self.root.join("config.lock")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn chains(&self) -> PathBuf {
        self.root.join("chains")
    }
    pub fn replicates(&self) -> PathBuf {
        self.root.join("replicates.csv")
    }
    pub fn result(&self) -> PathBuf {
        self.root.join("result.json")
    }
    pub fn report_txt(&self) -> PathBuf {
        self.root.join("report.txt")
    }
    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn observed(&self) -> PathBuf {
        self.chains().join("observed.json")
    }
    fn lock(&self) -> PathBuf {
        self.root.join(".lock")
    }

    /// Takes the directory lock; released when the guard drops.
    pub fn lock_dir(&self) -> Result<DirLock> {
        let path = self.lock();
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PbaError::Config(format!(
                "{} is in use by another command (remove {} if that process is gone)",
                self.root.display(),
                path.display()
            ))),
            Err(e) => Err(PbaError::Io { path, source: e }),
        }
    }
}

pub struct DirLock {
    path: PathBuf,
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Running,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Manifest {
    pub config_hash: String,
    pub planned_replicates: usize,
    /// Analysis ids in replicate-row order, baseline first.
    pub analyses: Vec<String>,
    pub completed: BTreeSet<u64>,
    pub status: RunStatus,
}

/// Writes JSON through a temporary file so readers never see a torn file.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PbaError::Artifact { path: path.into(), reason: e.to_string() })?;
    write_atomic(path, text.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(PbaError::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(PbaError::io(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| PbaError::Artifact { path: path.into(), reason: e.to_string() })?;
    serde_json::from_str(&text).map_err(|e| PbaError::Artifact { path: path.into(), reason: e.to_string() })
}

fn format_value(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| x.to_string())
}

/// Long-format rows of one replicate.
pub fn replicate_rows(row: &RawReplicate, plan: &AnalysisPlan) -> String {
    let mut s = String::new();
    for ((label, _), v) in plan.analyses.iter().zip(&row.values) {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            row.replicate_id,
            label.class_id,
            label.member_id,
            format_value(*v),
            row.y
        ));
    }
    s
}

/// Append-only replicate table plus manifest, updated after every replicate.
pub struct ReplicateLog<'a> {
    out: &'a OutputDir,
    plan: &'a AnalysisPlan,
    state: Mutex<(File, Manifest)>,
    /// Stop accepting replicates after this many new ones (simulated interruption).
    budget: Option<usize>,
    written: Mutex<usize>,
}

impl<'a> ReplicateLog<'a> {
    pub fn open(out: &'a OutputDir, plan: &'a AnalysisPlan, manifest: Manifest, budget: Option<usize>) -> Result<Self> {
        let path = out.replicates();
        let fresh = !path.exists();
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(PbaError::io(&path))?;
        if fresh {
            writeln!(file, "{REPLICATES_HEADER}").map_err(PbaError::io(&path))?;
        }
        write_json_atomic(&out.manifest(), &manifest)?;
        Ok(Self {
            out,
            plan,
            state: Mutex::new((file, manifest)),
            budget,
            written: Mutex::new(0),
        })
    }

    /// Reserves a slot for one more replicate; `false` once the budget is spent.
    pub fn admit(&self) -> bool {
        let mut w = self.written.lock().expect("lock poisoned");
        match self.budget {
            Some(b) if *w >= b => false,
            _ => {
                *w += 1;
                true
            }
        }
    }

    pub fn record(&self, row: &RawReplicate) -> Result<()> {
        let mut guard = self.state.lock().expect("lock poisoned");
        let (file, manifest) = &mut *guard;
        let path = self.out.replicates();
        file.write_all(replicate_rows(row, self.plan).as_bytes()).map_err(PbaError::io(&path))?;
        file.flush().map_err(PbaError::io(&path))?;
        manifest.completed.insert(row.replicate_id);
        write_json_atomic(&self.out.manifest(), manifest)
    }

    pub fn manifest(&self) -> Manifest {
        self.state.lock().expect("lock poisoned").1.clone()
    }
}

/// Reads the replicate table, keeping only replicates listed as completed in the
/// manifest with a row for every planned analysis, and rewrites the table to
/// exactly those rows.
pub fn load_replicates(out: &OutputDir, plan: &AnalysisPlan, manifest: &mut Manifest) -> Result<Vec<RawReplicate>> {
    let path = out.replicates();
    if !path.exists() {
        manifest.completed.clear();
        return Ok(Vec::new());
    }
    let corrupt = |reason: String| PbaError::Artifact { path: path.clone(), reason };
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| corrupt(e.to_string()))?;
    let header: Vec<String> = rdr.headers().map_err(|e| corrupt(e.to_string()))?.iter().map(String::from).collect();
    if header.join(",") != REPLICATES_HEADER {
        return Err(corrupt(format!("unexpected header `{}`", header.join(","))));
    }
    let index: BTreeMap<(usize, usize), usize> =
        plan.analyses.iter().enumerate().map(|(a, (l, _))| ((l.class_id, l.member_id), a)).collect();
    let mut partial: BTreeMap<u64, (f64, Vec<Option<Option<f64>>>)> = BTreeMap::new();
    for rec in rdr.records() {
        // a torn final line from an interrupted write is dropped with its replicate
        let Ok(rec) = rec else { continue };
        if rec.len() != 5 {
            continue;
        }
        let parsed = (|| -> Option<(u64, usize, usize, Option<f64>, f64)> {
            let v: f64 = rec[3].parse().ok()?;
            Some((rec[0].parse().ok()?, rec[1].parse().ok()?, rec[2].parse().ok()?, v.is_finite().then_some(v), rec[4].parse().ok()?))
        })();
        let Some((id, c, m, v, y)) = parsed else { continue };
        let Some(&a) = index.get(&(c, m)) else {
            return Err(corrupt(format!("analysis C{c}-M{m} is not part of this run")));
        };
        let entry = partial.entry(id).or_insert_with(|| (y, vec![None; plan.analyses.len()]));
        entry.1[a] = Some(v);
    }
    let rows: Vec<RawReplicate> = partial
        .into_iter()
        .filter(|(id, (_, vals))| manifest.completed.contains(id) && vals.iter().all(|v| v.is_some()))
        .map(|(id, (y, vals))| RawReplicate {
            replicate_id: id,
            y,
            values: vals.into_iter().map(|v| v.expect("filtered complete")).collect(),
        })
        .collect();
    manifest.completed = rows.iter().map(|r| r.replicate_id).collect();
    let mut text = format!("{REPLICATES_HEADER}\n");
    for r in &rows {
        text.push_str(&replicate_rows(r, plan));
    }
    write_atomic(&path, text.as_bytes())?;
    Ok(rows)
}

/// One row per retained state with the held-out conditional mean.
pub fn write_chain_csv(path: &Path, states: &[CalibrationState], prediction: &HeldOutPrediction) -> Result<()> {
    let r = states.first().map_or(0, |s| s.x_star.len());
    let mut text = String::from("index");
    for i in 1..=r {
        text.push_str(&format!(",x{i}"));
    }
    text.push_str(",sigmaEtaSq,zeta,heldOutMean,heldOutVariance\n");
    for (k, s) in states.iter().enumerate() {
        text.push_str(&k.to_string());
        for v in &s.x_star {
            text.push_str(&format!(",{v}"));
        }
        text.push_str(&format!(
            ",{},{},{},{}\n",
            s.sigma_eta_sq, s.zeta, prediction.conditional_means[k], prediction.conditional_vars[k]
        ));
    }
    write_atomic(path, text.as_bytes())
}
