use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rsd_autograd::gradcheck::{primitive_suite, GradCheck};
use rsd_core::analysis::{ablation_report, cka_grid, format_g17, load_records};
use rsd_core::data::{DataSource, SplitDataset};
use rsd_core::models::Model;
use rsd_core::rsd::{objective_gradcheck, DEFAULT_LAMBDA};
use rsd_core::train::{
    accuracy_from_logits, aggregate, distill, predict_all, sweep, train_teacher, write_atomic, write_json_atomic,
    AggregateRow, RunDir, RunRecord, SweepGrid,
};
use rsd_core::{Error, Result};

use crate::args::{CkaArgs, EvalArgs, GradcheckArgs, ReportArgs, RunArgs, SplitArg, SweepArgs};
use crate::resolve::{resolve, RunKind, DEFAULT_DATA};

/// Kappa values the objective check runs at.
pub const GRADCHECK_KAPPAS: [f64; 3] = [5e-3, 0.0, 1.0];

/// Failure that is not a library error: a sweep with failing cells or a
/// gradient check over tolerance.
#[derive(Debug)]
pub struct Failed(pub String);

pub enum Outcome {
    Ok,
    Failed(Failed),
}

fn load_data(uri: Option<&str>) -> Result<(String, SplitDataset)> {
    let source: DataSource = uri.unwrap_or(DEFAULT_DATA).parse()?;
    let data = source.load()?;
    Ok((source.to_string(), data))
}

fn load_teacher(path: &Path) -> Result<rsd_core::models::FrozenModel> {
    Ok(Model::load(path)?.freeze())
}

fn print_record(record: &RunRecord, out: &Path) {
    println!("run {}", record.content_id);
    println!("arm {}", record.arm);
    println!("final_test_acc {}", format_g17(record.final_test_acc));
    println!("best_test_acc {} (epoch {})", format_g17(record.best_test_acc), record.best_epoch);
    println!("param_overhead {}", record.param_overhead_count);
    println!("out {}", out.display());
}

pub fn train_teacher_cmd(args: &RunArgs) -> Result<Outcome> {
    let r = resolve(RunKind::Teacher, args)?;
    let job = rsd_core::train::Job {
        data: &r.data,
        data_uri: &r.spec.data,
        out: Some(&args.out),
    };
    let (_, record) = train_teacher(&r.spec.model, job, &r.spec.train)?;
    rsd_core::train::finalize_run_dir(&RunDir { root: args.out.clone() }, &r.spec, &record)?;
    print_record(&record, &args.out);
    Ok(Outcome::Ok)
}

pub fn distill_cmd(args: &RunArgs) -> Result<Outcome> {
    let r = resolve(RunKind::Distill, args)?;
    let teacher = load_teacher(r.spec.teacher.as_deref().expect("resolved distill has a teacher"))?;
    let job = rsd_core::train::Job {
        data: &r.data,
        data_uri: &r.spec.data,
        out: Some(&args.out),
    };
    let (_, record) = distill(&teacher, &r.spec.model, job, &r.spec.train)?;
    rsd_core::train::finalize_run_dir(&RunDir { root: args.out.clone() }, &r.spec, &record)?;
    print_record(&record, &args.out);
    Ok(Outcome::Ok)
}

pub fn eval_cmd(args: &EvalArgs) -> Result<Outcome> {
    if !args.ckpt.is_file() {
        return Err(Error::Config(format!("--ckpt {}: no such file", args.ckpt.display())));
    }
    let model = Model::load(&args.ckpt)?;
    let (_, data) = load_data(args.data.as_deref())?;
    let ds = match args.split {
        SplitArg::Train => &data.train,
        SplitArg::Test => &data.test,
    };
    let (logits, _) = predict_all(&model, ds)?;
    let acc = accuracy_from_logits(&logits, &ds.labels);
    println!("accuracy {}", format_g17(acc));
    println!("examples {}", ds.len());
    if let Some(path) = &args.logits {
        let classes = logits.shape()[1];
        let mut s = String::from("label");
        for c in 0..classes {
            let _ = write!(s, ",logit{c}");
        }
        s.push('\n');
        for (row, label) in logits.data().chunks(classes).zip(&ds.labels) {
            let _ = write!(s, "{label}");
            for v in row {
                let _ = write!(s, ",{}", format_g17(*v));
            }
            s.push('\n');
        }
        write_atomic(path, s.as_bytes())?;
    }
    Ok(Outcome::Ok)
}

fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from("lambda,kappa,expansion,seeds,median,min,max,failures\n");
    for r in rows {
        let (n, med, min, max) = match r.final_test_acc {
            Some(sp) => (sp.n.to_string(), format_g17(sp.median), format_g17(sp.min), format_g17(sp.max)),
            None => ("0".into(), String::new(), String::new(), String::new()),
        };
        let _ = writeln!(
            s,
            "{},{},{},{n},{med},{min},{max},{}",
            format_g17(r.lambda),
            format_g17(r.kappa),
            format_g17(r.expansion),
            r.failures
        );
    }
    s
}

pub fn sweep_cmd(args: &SweepArgs) -> Result<Outcome> {
    let r = resolve(RunKind::Distill, &args.run)?;
    let teacher = load_teacher(r.spec.teacher.as_deref().expect("resolved distill has a teacher"))?;
    let or_base = |v: &[f64], base: f64| if v.is_empty() { vec![base] } else { v.to_vec() };
    let grid = SweepGrid {
        lambdas: args.lambdas.clone(),
        kappas: or_base(&args.kappas, r.spec.train.rsd.kappa),
        expansions: or_base(&args.expansions, r.spec.train.rsd.expansion_factor),
        seeds: if args.seeds.is_empty() {
            vec![r.spec.train.seed]
        } else {
            args.seeds.clone()
        },
    };
    let out = &args.run.out;
    fs::create_dir_all(out)?;
    let job = rsd_core::train::Job {
        data: &r.data,
        data_uri: &r.spec.data,
        out: Some(out),
    };
    let cells = sweep(&teacher, job, &r.spec, &grid)?;
    let rows = aggregate(&cells);
    write_json_atomic(&out.join("aggregate.json"), &rows)?;
    let csv = aggregate_csv(&rows);
    write_atomic(&out.join("aggregate.csv"), csv.as_bytes())?;
    print!("{csv}");
    let failed: Vec<String> = cells
        .iter()
        .filter_map(|c| c.error.as_ref().map(|e| format!("{}: {e}", c.point.dir_name())))
        .collect();
    if failed.is_empty() {
        Ok(Outcome::Ok)
    } else {
        Ok(Outcome::Failed(Failed(format!(
            "{} of {} sweep cells failed:\n  {}",
            failed.len(),
            cells.len(),
            failed.join("\n  ")
        ))))
    }
}

/// Primitive ops followed by the full objective at each of
/// [`GRADCHECK_KAPPAS`].
pub fn gradcheck_results(seed: u64, trials: usize) -> Result<Vec<GradCheck>> {
    let mut out = primitive_suite(seed, trials)?;
    for (k, &kappa) in GRADCHECK_KAPPAS.iter().enumerate() {
        let parts = (0..trials as u64)
            .map(|t| objective_gradcheck(seed.wrapping_add(1000 * k as u64 + t), kappa, DEFAULT_LAMBDA))
            .collect::<Result<Vec<_>>>()?;
        out.push(GradCheck::merge(format!("objective(kappa={kappa})"), &parts));
    }
    Ok(out)
}

pub fn gradcheck_cmd(args: &GradcheckArgs) -> Result<Outcome> {
    let results = gradcheck_results(args.seed, args.trials)?;
    let mut failed = Vec::new();
    for r in &results {
        let ok = r.passed(args.tolerance);
        println!(
            "{:<26} max_rel_err {:.3e} checked {:>5} {}",
            r.name,
            r.max_rel_err,
            r.checked,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(Outcome::Ok)
    } else {
        Ok(Outcome::Failed(Failed(format!(
            "gradient check over tolerance {}: {}",
            args.tolerance,
            failed.join(", ")
        ))))
    }
}

pub fn cka_cmd(args: &CkaArgs) -> Result<Outcome> {
    for (flag, p) in [("--teacher", &args.teacher), ("--student", &args.student)] {
        if !p.is_file() {
            return Err(Error::Config(format!("{flag} {}: no such file", p.display())));
        }
    }
    let teacher = Model::load(&args.teacher)?;
    let student = Model::load(&args.student)?;
    let (_, data) = load_data(args.data.as_deref())?;
    let grid = cka_grid(&teacher, &student, &data.test, &args.teacher_taps, &args.student_taps)?;
    grid.save(&args.out[0], args.out.get(1).map(|p| p.as_path()))?;
    print!("{}", grid.to_csv());
    Ok(Outcome::Ok)
}

pub fn report_cmd(args: &ReportArgs) -> Result<Outcome> {
    if !args.runs.is_dir() {
        return Err(Error::Config(format!("--runs {}: not a directory", args.runs.display())));
    }
    let records = load_records(&args.runs)?;
    let report = ablation_report(&records);
    write_atomic(&args.out, report.to_csv().as_bytes())?;
    print!("{report}");
    Ok(Outcome::Ok)
}
