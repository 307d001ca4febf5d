//! Command implementations. Each returns the lines to print on success.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use hcpi::bench::{run_benchmark, BenchReport};
use hcpi::data::{write_file, write_json, Dataset};
use hcpi::export::{dendrogram_csv, dendrogram_rows, text_tree};
use hcpi::fixtures::regenerate_fixtures;
use hcpi::report::{analyze, AnalysisReport};
use hcpi::simgen::simulate_detailed;

use crate::config::{Command, RunConfig};

/// Process exit status for an error: 1 for invalid input or a failed
/// check, 2 for file-system and serialization failures.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<hcpi::Error>() {
        Some(hcpi::Error::Io { .. } | hcpi::Error::Csv { .. } | hcpi::Error::Json { .. }) => 2,
        _ => 1,
    }
}

fn create_out_dir(dir: &Path) -> hcpi::Result<()> {
    fs::create_dir_all(dir).map_err(|source| hcpi::Error::Io {
        path: dir.display().to_string(),
        source,
    })
}

fn commented(comment: &str, body: &str) -> String {
    format!("# {comment}\n{body}")
}

pub fn run(cfg: &RunConfig) -> anyhow::Result<Vec<String>> {
    cfg.validate()?;
    create_out_dir(&cfg.out_dir)?;
    match cfg.task.expect("validated") {
        Command::Simulate => simulate(cfg),
        Command::Analyze => analyze_cmd(cfg),
        Command::Bench => bench(cfg),
        Command::Export => export(cfg),
        Command::Fixtures => fixtures(cfg),
    }
}

fn simulate(cfg: &RunConfig) -> anyhow::Result<Vec<String>> {
    let sim = simulate_detailed(&cfg.sim_config())?;
    let path = cfg.out_dir.join("data.csv");
    sim.dataset.write_csv(&path, Some(&cfg.header()))?;
    let snr = sim.realized_snr.map_or("none".to_string(), |s| format!("{s:.4}"));
    Ok(vec![
        format!("p={} n={} realized_snr={snr}", sim.dataset.p(), sim.dataset.n()),
        format!("wrote {}", path.display()),
    ])
}

fn analyze_cmd(cfg: &RunConfig) -> anyhow::Result<Vec<String>> {
    let input = cfg.input.as_ref().expect("validated");
    let mut dataset = Dataset::read_csv(input)?;
    if let Some(task) = cfg.problem {
        dataset = dataset.with_task(task)?;
    }
    let opts = cfg.analysis_options(dataset.task())?;
    let config = serde_json::to_value(cfg)?;
    let report = analyze(&dataset, &opts, config)?;

    let results = cfg.out_dir.join("results.json");
    write_json(&results, &report)?;
    let importance = cfg.out_dir.join("importance.csv");
    report.importance.write_csv(&importance, Some(&cfg.header()))?;
    let inference = cfg.out_dir.join("inference.csv");
    write_file(&inference, commented(&cfg.header(), &report.inference_csv()).as_bytes())?;

    let mut lines = vec![format!(
        "p={} n={} task={:?} nodes={} evaluations={}",
        report.p,
        report.n,
        report.task,
        report.inference.nodes.len(),
        report.evaluations
    )];
    lines.push(format!("selected={:?} frontier={:?}", report.inference.selected_nodes(), report.inference.frontier));
    if let Some(c) = &report.conserved {
        lines.push(format!("conserved: selected={:?} frontier={:?}", c.selected_nodes(), c.frontier));
    }
    lines.extend([&results, &importance, &inference].map(|p| format!("wrote {}", p.display())));
    Ok(lines)
}

#[derive(Serialize)]
struct BenchOutput<'a> {
    run_config: &'a RunConfig,
    #[serde(flatten)]
    report: &'a BenchReport,
}

fn bench(cfg: &RunConfig) -> anyhow::Result<Vec<String>> {
    let report = run_benchmark(&cfg.bench_config())?;
    let rows = cfg.out_dir.join("bench_rows.csv");
    write_file(&rows, &report.rows_csv(Some(&cfg.header()))?)?;
    let summary = cfg.out_dir.join("bench_summary.json");
    write_json(
        &summary,
        &BenchOutput {
            run_config: cfg,
            report: &report,
        },
    )?;
    let mut lines: Vec<String> = report
        .summary
        .iter()
        .map(|s| {
            let auc = s.auc_mean.map_or("n/a".to_string(), |a| format!("{a:.3}"));
            format!(
                "{:<8} rho={} snr={} reps={} failed={} auc={auc} fwer={:.3} group_fwer={:.3} time={:.2}s",
                s.method.as_str(),
                s.rho_max,
                s.snr,
                s.completed,
                s.failed,
                s.fwer,
                s.group_fwer,
                s.mean_wall_time_seconds
            )
        })
        .collect();
    lines.extend([&rows, &summary].map(|p| format!("wrote {}", p.display())));
    Ok(lines)
}

fn export(cfg: &RunConfig) -> anyhow::Result<Vec<String>> {
    let input = cfg.input.as_ref().expect("validated");
    let text = fs::read_to_string(input).map_err(|source| hcpi::Error::Io {
        path: input.display().to_string(),
        source,
    })?;
    let report = AnalysisReport::from_json_str(&text)?;
    let rows = dendrogram_rows(&report, cfg.conserved)?;
    let csv = cfg.out_dir.join("dendrogram.csv");
    write_file(&csv, &dendrogram_csv(&rows, Some(&cfg.header()))?)?;
    let tree = cfg.out_dir.join("tree.txt");
    write_file(&tree, commented(&cfg.header(), &text_tree(&report, cfg.conserved)?).as_bytes())?;
    Ok([&csv, &tree].map(|p| format!("wrote {}", p.display())).to_vec())
}

fn fixtures(cfg: &RunConfig) -> anyhow::Result<Vec<String>> {
    let written: Vec<PathBuf> = regenerate_fixtures(cfg.seed, &cfg.out_dir)?;
    Ok(written.iter().map(|p| format!("wrote {}", p.display())).collect())
}
