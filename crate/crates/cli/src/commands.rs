use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use aiswatch_core::bench::{generate as generate_traffic, run_benchmark, BenchConfig, BenchReport, SyntheticScenario};
use aiswatch_core::domain::AisMessage;
use aiswatch_core::ingest::{read_records, render_json, render_record, CSV_HEADER};
use aiswatch_core::normalcy::{load_model, save_model, Decision, DetectionRule, NormalcyError, NormalcyModel, Verdict};
use aiswatch_core::pipeline;
use aiswatch_core::preprocess::{PipelineCounts, PreprocessConfig};
use anyhow::Context;

use crate::config::Config;
use crate::{CliError, Format};

pub fn read_inputs(paths: &[PathBuf]) -> Result<Vec<AisMessage>, CliError> {
    let mut all = Vec::new();
    for p in paths {
        let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        let (msgs, errors) = read_records(BufReader::new(f)).with_context(|| format!("reading {}", p.display()))?;
        if let Some(first) = errors.first() {
            eprintln!(
                "{}: skipped {} malformed line(s), first at line {}: {}",
                p.display(),
                errors.len(),
                first.line_no,
                first.error
            );
        }
        all.extend(msgs);
    }
    Ok(all)
}

fn model_error(path: &Path, e: NormalcyError) -> CliError {
    CliError::Model(format!("{}: {e}", path.display()))
}

/// Loads the model and the preprocessing settings to score with it. A region
/// set in the config must match the model's.
pub fn load_for_detection(cfg: &Config) -> Result<(NormalcyModel, PreprocessConfig, DetectionRule), CliError> {
    let path = &cfg.paths.model;
    let model = load_model(path).map_err(|e| model_error(path, e))?;
    if let Some(roi) = cfg.roi()? {
        if roi != model.roi {
            return Err(CliError::Model(format!(
                "{} covers {:?}, config asks for {:?}",
                path.display(),
                model.roi,
                roi
            )));
        }
    }
    let pre = cfg.preprocess_config(Some(model.roi))?;
    let rule = DetectionRule::new(&model.params, pre.min_points());
    Ok((model, pre, rule))
}

fn print_counts(c: &PipelineCounts) {
    println!("built {} rejected {} tested {}", c.built, c.rejected, c.tested);
}

pub fn train(cfg: &Config, inputs: &[PathBuf]) -> Result<(), CliError> {
    let pre = cfg.preprocess_config(None)?;
    let messages = read_inputs(inputs)?;
    let (model, batch) = match pipeline::train(&messages, &pre, cfg.grid, cfg.normalcy) {
        Err(NormalcyError::EmptyTrainingSet) => {
            print_counts(&aiswatch_core::preprocess::build_tracks(&messages, &pre).counts);
            return Err(CliError::EmptyTraining);
        }
        Err(e) => return Err(CliError::Config(e.to_string())),
        Ok(r) => r,
    };
    print_counts(&batch.counts);
    save_model(&model, &cfg.paths.model).map_err(|e| model_error(&cfg.paths.model, e))?;
    eprintln!(
        "wrote {} ({} validated cells)",
        cfg.paths.model.display(),
        aiswatch_core::normalcy::Scorer::validated_cells(&model)
    );
    Ok(())
}

pub const VERDICT_HEADER: &str = "track_id,mmsi,n,k,nfa,decision";

fn verdict_line(v: &Verdict, format: Format) -> String {
    match format {
        Format::Csv => format!("{},{},{},{},{:e},{}", v.track_id, v.mmsi, v.n, v.k, v.nfa, v.decision),
        Format::Json => serde_json::json!({
            "track_id": v.track_id,
            "mmsi": v.mmsi,
            "n": v.n,
            "k": v.k,
            "nfa": v.nfa,
            "decision": v.decision,
        })
        .to_string(),
    }
}

fn open_out(out: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

pub fn detect(cfg: &Config, input: &Path, out: Option<&Path>, format: Option<Format>) -> Result<(), CliError> {
    let format = format.unwrap_or(Format::Csv);
    let (model, pre, rule) = load_for_detection(cfg)?;
    let messages = read_inputs(&[input.to_path_buf()])?;
    let (verdicts, batch) =
        pipeline::detect_batch(&model, &messages, &pre, &rule).map_err(|e| anyhow::anyhow!("detection failed: {e}"))?;
    let mut w = open_out(out)?;
    let write = |w: &mut dyn Write| -> std::io::Result<()> {
        if format == Format::Csv {
            writeln!(w, "{VERDICT_HEADER}")?;
        }
        for v in &verdicts {
            writeln!(w, "{}", verdict_line(v, format))?;
        }
        w.flush()
    };
    write(&mut *w).context("writing verdicts")?;
    let abnormal = verdicts.iter().filter(|v| v.decision == Decision::Abnormal).count();
    eprintln!(
        "built {} rejected {} tested {}; {} abnormal",
        batch.counts.built, batch.counts.rejected, batch.counts.tested, abnormal
    );
    Ok(())
}

pub fn load_scenario(path: Option<&Path>, seed: Option<u64>) -> Result<SyntheticScenario, CliError> {
    let mut s = match path {
        None => SyntheticScenario::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            let parsed = if p.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).map_err(|e| e.to_string())
            } else {
                toml::from_str(&text).map_err(|e| e.message().to_string())
            };
            parsed.map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    s.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(s)
}

pub fn generate(
    scenario: Option<&Path>,
    out: Option<&Path>,
    truth: Option<&Path>,
    seed: Option<u64>,
    format: Option<Format>,
) -> Result<(), CliError> {
    let s = load_scenario(scenario, seed)?;
    let traffic = generate_traffic(&s).map_err(|e| CliError::Config(e.to_string()))?;
    let format = format.unwrap_or(Format::Csv);
    let mut w = open_out(out)?;
    let write = |w: &mut dyn Write| -> std::io::Result<()> {
        if format == Format::Csv {
            writeln!(w, "{CSV_HEADER}")?;
        }
        for m in &traffic.messages {
            let line = match format {
                Format::Csv => render_record(m),
                Format::Json => render_json(m),
            };
            writeln!(w, "{line}")?;
        }
        w.flush()
    };
    write(&mut *w).context("writing messages")?;
    let truth_path = match (truth, out) {
        (Some(t), _) => Some(t.to_path_buf()),
        (None, Some(o)) => Some(PathBuf::from(format!("{}.truth.csv", o.display()))),
        (None, None) => None,
    };
    if let Some(t) = truth_path {
        std::fs::write(&t, traffic.ground_truth_csv()).with_context(|| format!("writing {}", t.display()))?;
    }
    eprintln!(
        "{} messages from {} vessels, {} anomalous",
        traffic.messages.len(),
        traffic.vessels.len(),
        traffic.anomalous().count()
    );
    Ok(())
}

pub fn bench(
    cfg: &Config,
    scenario: Option<&Path>,
    out_dir: Option<&Path>,
    seed: Option<u64>,
    use_model: bool,
) -> Result<(), CliError> {
    cfg.check_bench()?;
    let s = load_scenario(scenario, seed)?;
    let traffic = generate_traffic(&s).map_err(|e| CliError::Config(e.to_string()))?;
    let (model, pre, rule) = if use_model {
        load_for_detection(cfg)?
    } else {
        // fit on the vessels without injected anomalies
        let pre = cfg.preprocess_config(Some(s.roi))?;
        let clean = traffic.messages_of(|v| v.anomaly.is_none());
        let (model, _) = pipeline::train(&clean, &pre, cfg.grid, cfg.normalcy).map_err(|e| match e {
            NormalcyError::EmptyTrainingSet => CliError::EmptyTraining,
            other => CliError::Config(other.to_string()),
        })?;
        let rule = DetectionRule::new(&model.params, pre.min_points());
        (model, pre, rule)
    };
    let dir = out_dir.unwrap_or(&cfg.paths.out_dir);
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let scorer: Arc<dyn aiswatch_core::normalcy::Scorer> = Arc::new(model);
    let write = |name: String, body: String| -> Result<(), CliError> {
        let p = dir.join(name);
        std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
        Ok(())
    };
    write("ground_truth.csv".into(), traffic.ground_truth_csv())?;
    println!("replicas  tracks/s  mean_s  median_s  max_s  cores  built  rejected  tested");
    for &replicas in &cfg.bench.replicas {
        let bc = BenchConfig {
            preprocess: pre,
            rule,
            n_partitions: cfg.stream.n_partitions,
            replica_counts: vec![replicas],
            window_s: cfg.bench.window_s,
        };
        let report = run_benchmark(&traffic.messages, Arc::clone(&scorer), &bc).context("benchmark run")?;
        write(format!("report-r{replicas}.json"), report.to_json())?;
        write(format!("report-r{replicas}.csv"), report.to_csv())?;
        write("cdf.csv".into(), report.cdf.to_csv())?;
        let tp = report.throughput[0];
        let t = report.timing;
        let c = report.counts;
        println!(
            "{:>8}  {:>8.1}  {:>6}  {:>8}  {:>5}  {:>5}  {:>5}  {:>8}  {:>6}",
            replicas,
            tp.tracks_per_second,
            t.map_or("-".into(), |t| format!("{:.1e}", t.mean)),
            t.map_or("-".into(), |t| format!("{:.1e}", t.median)),
            t.map_or("-".into(), |t| format!("{:.1e}", t.max)),
            report.capacity_cores.map_or("-".into(), |c| c.to_string()),
            c.built,
            c.rejected,
            c.tested
        );
    }
    eprintln!("reports in {}", dir.display());
    Ok(())
}

fn describe(r: &BenchReport) -> String {
    let mut s = String::new();
    match &r.timing {
        Some(t) => {
            s.push_str("detection time (s)\n");
            for (k, v) in [
                ("mean", t.mean),
                ("std", t.std),
                ("min", t.min),
                ("q1", t.q1),
                ("median", t.median),
                ("q3", t.q3),
                ("max", t.max),
            ] {
                s.push_str(&format!("  {k:<7}{v:.6e}\n"));
            }
            s.push_str(&format!("  samples {}\n", t.count));
        }
        None => s.push_str("no track was scored\n"),
    }
    s.push_str(&format!(
        "peak unique MMSIs per {} s window: {}\n",
        r.cdf.window_s, r.peak_unique_mmsi
    ));
    for reading in &r.readings {
        s.push_str(&format!("  {reading}\n"));
    }
    if let Some(c) = r.capacity_cores {
        s.push_str(&format!("cores needed at peak: {c}\n"));
    }
    let c = &r.counts;
    s.push_str(&format!(
        "tracks built {} = rejected {} + tested {}\nmessages processed {}, dropped {}\n",
        c.built,
        c.rejected,
        c.tested,
        c.processed,
        c.dropped()
    ));
    for tp in &r.throughput {
        s.push_str(&format!(
            "{} replica(s): {} tracks scored in {:.3} s ({:.1} tracks/s)\n",
            tp.replicas, tp.tracks_scored, tp.wall_seconds, tp.tracks_per_second
        ));
    }
    s
}

pub fn report(path: &Path, cdf: Option<&Path>, format: Option<Format>) -> Result<(), CliError> {
    let read = |p: &Path| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
    let text = read(path)?;
    let parsed = if text.trim_start().starts_with('{') {
        BenchReport::from_json(&text)
    } else {
        let cdf_path = cdf
            .map(Path::to_path_buf)
            .unwrap_or_else(|| path.with_file_name("cdf.csv"));
        BenchReport::from_csv(&text, &read(&cdf_path)?)
    };
    let r = parsed.map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let text = match format {
        None => describe(&r),
        Some(Format::Json) => r.to_json() + "\n",
        Some(Format::Csv) => r.to_csv(),
    };
    // a closed pipe (`| head`) is not an error
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
    Ok(())
}
