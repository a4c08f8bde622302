use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::train::{RunRecord, Spread, Summary, SUMMARY_FILE};

pub const RSD_ARMS: [&str; 3] = ["baseline", "rsd-corr", "rsd-decorr"];
pub const AAD_ARMS: [&str; 2] = ["rsd-decorr", "rsd-decorr-no-aad"];
const NO_AAD: &str = "-no-aad";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRow {
    pub arm: String,
    /// Final test accuracy across seeds.
    pub final_test_acc: Spread,
    /// Median minus the baseline median, when a baseline row exists.
    pub gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmTable {
    pub title: String,
    pub rows: Vec<ArmRow>,
    /// Expected arms with no records.
    pub missing: Vec<String>,
}

/// Effect-of-RSD and effect-of-AAD tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rsd: ArmTable,
    pub aad: ArmTable,
}

fn table(title: &str, arms: &[&str], records: &[RunRecord], key: impl Fn(&RunRecord) -> String) -> ArmTable {
    let mut rows: Vec<ArmRow> = Vec::new();
    let mut missing = Vec::new();
    for &arm in arms {
        let accs: Vec<f64> = records
            .iter()
            .filter(|r| key(r) == arm)
            .map(|r| r.final_test_acc)
            .collect();
        match Spread::of(&accs) {
            Some(final_test_acc) => rows.push(ArmRow {
                arm: arm.to_string(),
                final_test_acc,
                gain: None,
            }),
            None => missing.push(arm.to_string()),
        }
    }
    let base = rows
        .iter()
        .find(|r| r.arm == arms[0])
        .map(|r| r.final_test_acc.median);
    for r in rows.iter_mut().skip_while(|r| r.arm == arms[0]) {
        r.gain = base.map(|b| r.final_test_acc.median - b);
    }
    ArmTable {
        title: title.to_string(),
        rows,
        missing,
    }
}

/// Groups records by arm tag. The RSD table pools runs with and without the
/// decoupler; the AAD table keeps them apart.
pub fn ablation_report(records: &[RunRecord]) -> AblationReport {
    AblationReport {
        rsd: table("effect of RSD", &RSD_ARMS, records, |r| {
            r.arm.strip_suffix(NO_AAD).unwrap_or(&r.arm).to_string()
        }),
        aad: table("effect of AAD", &AAD_ARMS, records, |r| r.arm.clone()),
    }
}

/// Every `summary.json` below `dir`, in path order.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut paths = Vec::new();
    collect_summaries(dir, &mut paths)?;
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let s: Summary<serde_json::Value> = serde_json::from_slice(&fs::read(p)?)?;
            Ok(s.record)
        })
        .collect()
}

fn collect_summaries(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_summaries(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == SUMMARY_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

impl ArmTable {
    fn csv_rows(&self, out: &mut String) {
        for r in &self.rows {
            let s = r.final_test_acc;
            let gain = r.gain.map(|g| g.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.title, r.arm, s.n, s.median, s.min, s.max, gain
            ));
        }
        for m in &self.missing {
            out.push_str(&format!("{},{m},0,,,,\n", self.title));
        }
    }
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("table,arm,seeds,median,min,max,gain\n");
        self.rsd.csv_rows(&mut s);
        self.aad.csv_rows(&mut s);
        s
    }
}

impl fmt::Display for ArmTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.title)?;
        writeln!(f, "  {:<20} {:>5} {:>8} {:>8} {:>8} {:>8}", "arm", "seeds", "median", "min", "max", "gain")?;
        for r in &self.rows {
            let s = r.final_test_acc;
            let gain = r.gain.map(|g| format!("{:+.2}", 100.0 * g)).unwrap_or_else(|| "-".into());
            writeln!(
                f,
                "  {:<20} {:>5} {:>8.2} {:>8.2} {:>8.2} {:>8}",
                r.arm,
                s.n,
                100.0 * s.median,
                100.0 * s.min,
                100.0 * s.max,
                gain
            )?;
        }
        for m in &self.missing {
            writeln!(f, "  {m:<20} {:>5} {:>8} {:>8} {:>8} {:>8}", 0, "-", "-", "-", "-")?;
        }
        Ok(())
    }
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\n{}", self.rsd, self.aad)
    }
}
