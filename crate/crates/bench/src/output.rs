use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mmfilter::format_float;

use crate::error::Result;
use crate::runner::Report;
use crate::spec::{ExperimentSpec, SCHEMA_VERSION};

pub const RUNS_CSV: &str = "runs.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const BOXPLOT_CSV: &str = "boxplot.csv";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const VELOCITY_CSV: &str = "velocity.csv";
pub const FAILURES_CSV: &str = "failures.csv";
pub const SPEC_JSON: &str = "spec.json";

/// Opens `path` and writes the schema line that heads every CSV file.
fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# mmfilter-bench schema_version={SCHEMA_VERSION}")?;
    Ok(csv::Writer::from_writer(out))
}

/// Writes all report files into `dir`, creating it if needed. Returns the paths written.
pub fn write_report(spec: &ExperimentSpec, report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join(SPEC_JSON);
    fs::write(&path, spec.to_json()?)?;
    written.push(path);

    let path = dir.join(RUNS_CSV);
    write_runs(spec, report, &path)?;
    written.push(path);

    let path = dir.join(SUMMARY_CSV);
    write_summary(report, &path)?;
    written.push(path);

    let path = dir.join(BOXPLOT_CSV);
    write_boxplot(report, &path)?;
    written.push(path);

    if let Some(axes) = &spec.plot {
        if let Some(first) = report.runs.iter().find(|r| r.trajectory.is_some()) {
            let traj = first.trajectory.as_ref().expect("checked above");
            let series = || {
                std::iter::once(("truth", &traj.states)).chain(
                    spec.filters
                        .iter()
                        .zip(&first.filters)
                        .filter_map(|(f, run)| run.estimates.as_ref().map(|e| (f.label.as_str(), e))),
                )
            };
            let path = dir.join(TRAJECTORY_CSV);
            let mut w = csv_writer(&path)?;
            w.write_record(["k", "series", "x", "y"])?;
            for (name, xs) in series() {
                for (k, x) in xs.iter().enumerate() {
                    let k = (k + 1).to_string();
                    let (a, b) = (format_float(x[axes.position[0]]), format_float(x[axes.position[1]]));
                    w.write_record([k.as_str(), name, &a, &b])?;
                }
            }
            w.flush()?;
            written.push(path);

            if let Some(vel) = axes.velocity {
                let path = dir.join(VELOCITY_CSV);
                let mut w = csv_writer(&path)?;
                w.write_record(["k", "series", "x", "y", "vx", "vy"])?;
                for (name, xs) in series() {
                    for (k, x) in xs.iter().enumerate() {
                        let mut rec = vec![(k + 1).to_string(), name.to_string()];
                        rec.extend(
                            [axes.position[0], axes.position[1], vel[0], vel[1]]
                                .iter()
                                .map(|&i| format_float(x[i])),
                        );
                        w.write_record(&rec)?;
                    }
                }
                w.flush()?;
                written.push(path);
            }
        }
    }

    if !report.failed.is_empty() {
        let path = dir.join(FAILURES_CSV);
        let mut w = csv_writer(&path)?;
        w.write_record(["run", "error"])?;
        for (run, msg) in &report.failed {
            w.write_record([run.to_string(), msg.clone()])?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

fn write_runs(spec: &ExperimentSpec, report: &Report, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["run".to_string(), "seed".into(), "filter".into()];
    header.extend(spec.rmse_groups.iter().map(|g| format!("rmse_{}", g.name)));
    header.extend(["wall_ns", "mm_iters", "descent_violations", "g_max"].map(String::from));
    w.write_record(&header)?;
    for run in &report.runs {
        for (f, fr) in spec.filters.iter().zip(&run.filters) {
            let mut rec = vec![run.run.to_string(), run.seed.to_string(), f.label.clone()];
            rec.extend(fr.rmse.iter().map(|v| format_float(*v)));
            rec.push(fr.wall_ns.to_string());
            rec.push(fr.mm_iters.iter().sum::<usize>().to_string());
            rec.push(fr.descent_violations.to_string());
            rec.push(format_float(fr.worst_constraint));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_summary(report: &Report, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "filter",
        "group",
        "n_runs",
        "mean_rmse",
        "std_rmse",
        "mean_cpu_s",
        "median_mm_iters",
        "descent_violations",
    ])?;
    for f in &report.filters {
        for g in &f.groups {
            w.write_record([
                f.label.clone(),
                g.name.clone(),
                g.values.len().to_string(),
                format_float(g.mean),
                format_float(g.std_dev),
                format_float(f.mean_cpu_s),
                format_float(f.median_mm_iters),
                f.descent_violations.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_boxplot(report: &Report, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["filter", "group", "run", "rmse"])?;
    for f in &report.filters {
        for g in &f.groups {
            for (run, v) in report.runs.iter().zip(&g.values) {
                w.write_record([f.label.clone(), g.name.clone(), run.run.to_string(), format_float(*v)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
