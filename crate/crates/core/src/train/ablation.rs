use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{train, TrainConfig};
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::Ablation;
use crate::objectives::MetricsReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationTable {
    Module,
    Task,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub table: AblationTable,
    pub name: String,
    pub use_csem: bool,
    pub use_febr: bool,
    pub use_footprint_stream: bool,
}

impl AblationRun {
    fn new(table: AblationTable, name: &str, csem: bool, febr: bool, fp: bool) -> Self {
        Self {
            table,
            name: name.to_string(),
            use_csem: csem,
            use_febr: febr,
            use_footprint_stream: fp,
        }
    }

    pub fn ablation(&self) -> Ablation {
        Ablation {
            use_csem: self.use_csem,
            use_febr: self.use_febr,
            use_footprint_stream: self.use_footprint_stream,
        }
    }

    fn slug(&self) -> String {
        let f = |b: bool| if b { '1' } else { '0' };
        format!("csem{}_febr{}_fp{}", f(self.use_csem), f(self.use_febr), f(self.use_footprint_stream))
    }

    pub fn module_rows() -> Vec<Self> {
        use AblationTable::Module;
        vec![
            Self::new(Module, "Baseline", false, false, true),
            Self::new(Module, "Baseline+CSEM", true, false, true),
            Self::new(Module, "Baseline+FEBR", false, true, true),
            Self::new(Module, "Baseline+CSEM+FEBR", true, true, true),
        ]
    }

    /// The footprint task brings the exchange module with it.
    pub fn task_rows() -> Vec<Self> {
        use AblationTable::Task;
        vec![
            Self::new(Task, "Height", false, false, false),
            Self::new(Task, "Height+Bins", false, true, false),
            Self::new(Task, "Height+Footprint", true, false, true),
            Self::new(Task, "Height+Bins+Footprint", true, true, true),
        ]
    }
}

/// `default`, `module`, `task`, or a path to a JSON list of runs.
pub fn parse_matrix(spec: &str) -> Result<Vec<AblationRun>> {
    match spec {
        "default" => Ok([AblationRun::module_rows(), AblationRun::task_rows()].concat()),
        "module" => Ok(AblationRun::module_rows()),
        "task" => Ok(AblationRun::task_rows()),
        path => {
            let p = Path::new(path);
            let text = fs::read_to_string(p).map_err(|_| Error::Config(format!("unknown ablation matrix {path:?}")))?;
            let runs: Vec<AblationRun> =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{path}: {e}")))?;
            for r in &runs {
                r.ablation().validate()?;
            }
            Ok(runs)
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    #[serde(flatten)]
    pub run: AblationRun,
    pub best_epoch: usize,
    pub val: MetricsReport,
    pub test: Option<MetricsReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl AblationReport {
    /// One markdown table per ablation family, test metrics when a test
    /// split exists and validation metrics otherwise.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        for (table, title) in [(AblationTable::Module, "Module ablation"), (AblationTable::Task, "Task ablation")] {
            let rows: Vec<_> = self.rows.iter().filter(|r| r.run.table == table).collect();
            if rows.is_empty() {
                continue;
            }
            out.push_str(&format!("## {title}\n\n| Method | Split | MAE | RMSE | REL | IoU | Recall | F1 |\n"));
            out.push_str("|---|---|---|---|---|---|---|---|\n");
            for r in rows {
                let (split, m) = match &r.test {
                    Some(t) => ("test", t),
                    None => ("val", &r.val),
                };
                out.push_str(&format!(
                    "| {} | {split} | {} | {} | {} | {:.4} | {:.4} | {:.4} |\n",
                    r.run.name,
                    cell(m.mae),
                    cell(m.rmse),
                    cell(m.rel),
                    m.iou,
                    m.recall,
                    m.f1
                ));
            }
            out.push('\n');
        }
        out
    }

    /// Writes `ablation.json` and `ablation.md` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let json = dir.join("ablation.json");
        fs::write(&json, serde_json::to_string_pretty(self).expect("report serialises")).map_err(Error::io(&json))?;
        let md = dir.join("ablation.md");
        fs::write(&md, self.to_markdown()).map_err(Error::io(&md))
    }
}

/// Trains every distinct flag combination once with the base config's seed
/// and evaluates its best checkpoint. Each run's artefacts go under
/// `out/<flags>/`.
pub fn run_ablation(base: &TrainConfig, matrix: &[AblationRun], out: &Path) -> Result<AblationReport> {
    let dataset = Dataset::open(&base.data_dir)?;
    let val = dataset.load(Split::Val)?;
    let test = dataset.load(Split::Test)?;
    let mut done: HashMap<String, (usize, MetricsReport, Option<MetricsReport>)> = HashMap::new();
    let mut rows = Vec::with_capacity(matrix.len());
    for run in matrix {
        let slug = run.slug();
        if !done.contains_key(&slug) {
            let mut cfg = base.clone();
            cfg.set_ablation(run.ablation());
            cfg.out_dir = Some(out.join(&slug));
            log::info!("ablation run {} ({slug})", run.name);
            let trained = train(&cfg)?;
            let val_report = trained.best.evaluate(&val)?;
            let test_report = if test.is_empty() { None } else { Some(trained.best.evaluate(&test)?) };
            done.insert(slug.clone(), (trained.best.epoch, val_report, test_report));
        }
        let (best_epoch, val_report, test_report) = done[&slug].clone();
        rows.push(AblationRow {
            run: run.clone(),
            best_epoch,
            val: val_report,
            test: test_report,
        });
    }
    let report = AblationReport { seed: base.seed, rows };
    report.save(out)?;
    Ok(report)
}
