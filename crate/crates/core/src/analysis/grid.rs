use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use rsd_autograd::{Graph, Tensor};
use serde::{Deserialize, Serialize};

use super::cka::linear_cka;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::train::write_atomic;

const PROBE_CHUNK: usize = 128;
const PGM_CELL: usize = 16;

/// Eval-mode activations `[N, D]` at every tap point over one probe set,
/// block outputs flattened per example.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDump {
    pub names: Vec<String>,
    pub activations: Vec<Tensor>,
}

impl ActivationDump {
    pub fn capture(model: &Model, probe: &Dataset) -> Result<Self> {
        let names = model.tap_names();
        let n = probe.len();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        let mut widths = vec![0; names.len()];
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(PROBE_CHUNK) {
            let g = Graph::new();
            let mut taps = Vec::new();
            let out = model.forward_taps(&g, &g.constant(probe.gather(chunk)), &mut taps)?;
            taps.push(out.penultimate);
            for (k, v) in taps.iter().enumerate() {
                let t = v.value();
                widths[k] = t.numel() / chunk.len();
                columns[k].extend_from_slice(t.data());
            }
        }
        let activations = columns
            .into_iter()
            .zip(&widths)
            .map(|(data, &w)| Tensor::from_vec(&[n, w], data))
            .collect();
        Ok(Self { names, activations })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.activations[i])
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown tap `{name}`; available: {}",
                    self.names.join(", ")
                ))
            })
    }
}

/// Linear CKA between every teacher tap (rows) and student tap (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkaGrid {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub degenerate: Vec<Vec<bool>>,
}

fn pick(dump: &ActivationDump, wanted: &[String]) -> Result<Vec<String>> {
    if wanted.is_empty() {
        return Ok(dump.names.clone());
    }
    for w in wanted {
        dump.get(w)?;
    }
    Ok(wanted.to_vec())
}

/// `%.17g`: 17 significant digits, trailing zeros removed.
pub fn format_g17(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..17).contains(&exp) {
        trim(&format!("{v:.*}", (16 - exp) as usize))
    } else {
        format!("{}e{}{:02}", trim(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

impl CkaGrid {
    /// Grid over `teacher_taps` × `student_taps`; empty selections take
    /// every tap.
    pub fn compute(
        teacher: &ActivationDump,
        student: &ActivationDump,
        teacher_taps: &[String],
        student_taps: &[String],
    ) -> Result<Self> {
        let rows = pick(teacher, teacher_taps)?;
        let cols = pick(student, student_taps)?;
        let pairs: Vec<(usize, usize)> = (0..rows.len()).flat_map(|i| (0..cols.len()).map(move |j| (i, j))).collect();
        let cells = pairs
            .par_iter()
            .map(|&(i, j)| linear_cka(teacher.get(&rows[i])?, student.get(&cols[j])?))
            .collect::<Result<Vec<_>>>()?;
        let mut values = vec![vec![0.0; cols.len()]; rows.len()];
        let mut degenerate = vec![vec![false; cols.len()]; rows.len()];
        for (&(i, j), c) in pairs.iter().zip(cells) {
            values[i][j] = c.value;
            degenerate[i][j] = c.degenerate;
        }
        Ok(Self {
            rows,
            cols,
            values,
            degenerate,
        })
    }

    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        let i = self.rows.iter().position(|r| r == row)?;
        let j = self.cols.iter().position(|c| c == col)?;
        Some(self.values[i][j])
    }

    /// Header `teacher\student,<cols>`, one row per teacher tap, values in `%.17g`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("teacher\\student");
        for c in &self.cols {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for (r, row) in self.rows.iter().zip(&self.values) {
            s.push_str(r);
            for v in row {
                let _ = write!(s, ",{}", format_g17(*v));
            }
            s.push('\n');
        }
        s
    }

    /// Parses [`CkaGrid::to_csv`] output. Degenerate flags are not stored
    /// and come back false.
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Format {
            path: "<cka grid>".into(),
            offset: line as u64,
            msg: msg.to_string(),
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(0, "empty grid"))?;
        let cols: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        let mut values = Vec::new();
        for (k, line) in lines.enumerate() {
            let mut fields = line.split(',');
            rows.push(fields.next().unwrap_or_default().to_string());
            let row = fields
                .map(|f| f.parse::<f64>().map_err(|_| bad(k + 1, "non-numeric cell")))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != cols.len() {
                return Err(bad(k + 1, "row length differs from header"));
            }
            values.push(row);
        }
        let degenerate = vec![vec![false; cols.len()]; rows.len()];
        Ok(Self {
            rows,
            cols,
            values,
            degenerate,
        })
    }

    /// Binary PGM, one 16×16 gray block per cell, brighter = more similar.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (h, w) = (self.rows.len() * PGM_CELL, self.cols.len() * PGM_CELL);
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        for y in 0..h {
            for x in 0..w {
                let v = self.values[y / PGM_CELL][x / PGM_CELL].clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
        out
    }

    /// Writes the CSV to `csv` and, if given, the image to `pgm`.
    pub fn save(&self, csv: &Path, pgm: Option<&Path>) -> Result<()> {
        write_atomic(csv, self.to_csv().as_bytes())?;
        if let Some(p) = pgm {
            write_atomic(p, &self.to_pgm())?;
        }
        Ok(())
    }

    pub fn load(csv: &Path) -> Result<Self> {
        Self::from_csv(&fs::read_to_string(csv)?)
    }
}

/// Captures both models over `probe` and computes the grid.
pub fn cka_grid(
    teacher: &Model,
    student: &Model,
    probe: &Dataset,
    teacher_taps: &[String],
    student_taps: &[String],
) -> Result<CkaGrid> {
    let t = ActivationDump::capture(teacher, probe)?;
    let s = ActivationDump::capture(student, probe)?;
    CkaGrid::compute(&t, &s, teacher_taps, student_taps)
}
