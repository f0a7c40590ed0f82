use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Map, Value};

use csalign::pmf::{association_count, reset_association_count};
use csalign::properties::{run_property_suite, PropertyConfig};
use csalign::train::{ablation_run, generate_synthetic, init_encoders, train_run, AblationTable, TrainTrace};
use csalign::{
    coral_loss, cs_divergence, gcs_divergence, gcs_ring_loss, kl_alignment, mmd_squared, pairwise_sum_loss,
    AlignConfig, Bandwidth, DivergenceValue, EmbeddingBatch, KlConfig, MmdConfig, ModalityRing, PairMeasure, PmfKind,
    PmfMatrix, Strategy,
};

use crate::args::{BenchArgs, Cli, Command, DivergenceArgs, Fault, Measure, PropsArgs, TrainArgs};
use crate::config::RunConfig;
use crate::error::{exit, CliError, CliResult};
use crate::formats::{read_embeddings, read_pmf};
use crate::report::{fmt_f64, num, to_pretty, write_json, RunManifest};

/// Runs one command and returns the process exit code. Errors are printed
/// to stderr here.
pub fn run(cli: Cli) -> i32 {
    if !cli.deterministic {
        eprintln!("note: only the single-threaded path is implemented; running it");
    }
    let manifest = cli.manifest.clone();
    let result = match &cli.command {
        Command::Divergence(a) => divergence(a, manifest.as_deref()),
        Command::Props(a) => props(a, manifest.as_deref()),
        Command::Train(a) => train(a, manifest.as_deref()),
        Command::Ablate(a) => ablate(a, manifest.as_deref()),
        Command::Bench(a) => bench(a, manifest.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn emit(out: Option<&Path>, report: &Value, manifest: &mut RunManifest) -> CliResult<()> {
    print!("{}", to_pretty(report));
    if let Some(p) = out {
        write_json(p, report)?;
        manifest.outputs.push(p.to_path_buf());
    }
    Ok(())
}

fn paths(files: &[PathBuf]) -> Value {
    files.iter().map(|p| p.display().to_string()).collect()
}

fn parse_bandwidth(raw: &str) -> CliResult<Bandwidth> {
    if raw.eq_ignore_ascii_case("median") {
        return Ok(Bandwidth::MedianHeuristic);
    }
    match raw.parse::<f64>() {
        Ok(s) if s > 0.0 && s.is_finite() => Ok(Bandwidth::Fixed(s)),
        _ => Err(CliError::Config(format!("bandwidth must be a positive number or `median`, got {raw:?}"))),
    }
}

fn exactly_two<'a>(measure: Measure, files: &'a [PathBuf]) -> CliResult<(&'a Path, &'a Path)> {
    match files {
        [a, b] => Ok((a, b)),
        _ => Err(CliError::Config(format!("{} takes exactly 2 files, got {}", measure.name(), files.len()))),
    }
}

fn one_row(p: Vec<f64>) -> CliResult<PmfMatrix> {
    let k = p.len();
    Ok(PmfMatrix::new(Array2::from_shape_vec((1, k), p).expect("1 x k"), PmfKind::Association)?)
}

pub fn divergence(args: &DivergenceArgs, manifest_path: Option<&Path>) -> CliResult<i32> {
    let mut manifest = RunManifest::start("divergence");
    manifest.set("measure", args.measure.name());
    manifest.set("files", paths(&args.files));
    manifest.set("label_col", args.label_col);
    manifest.set("epsilon", num(args.epsilon));
    manifest.set("bandwidth", args.bandwidth.as_str());

    let ratio = |v: DivergenceValue| (v.value, Some((v.numerator, v.denominator)));
    let (value, parts) = match args.measure {
        Measure::Cs => {
            let (a, b) = exactly_two(args.measure, &args.files)?;
            ratio(cs_divergence(&read_pmf(a)?, &read_pmf(b)?)?)
        }
        Measure::Gcs => {
            let pmfs = args.files.iter().map(|f| read_pmf(f)).collect::<CliResult<Vec<_>>>()?;
            let refs: Vec<&[f64]> = pmfs.iter().map(Vec::as_slice).collect();
            ratio(gcs_divergence(&refs)?)
        }
        Measure::Kl => {
            let (a, b) = exactly_two(args.measure, &args.files)?;
            let (p, q) = (one_row(read_pmf(a)?)?, one_row(read_pmf(b)?)?);
            (kl_alignment(&p, &q, &KlConfig { epsilon: args.epsilon })?, None)
        }
        Measure::Mmd | Measure::Coral => {
            let (a, b) = exactly_two(args.measure, &args.files)?;
            let (x, _) = read_embeddings(a, args.label_col)?;
            let (y, _) = read_embeddings(b, args.label_col)?;
            let v = if args.measure == Measure::Mmd {
                let cfg = MmdConfig { bandwidth: parse_bandwidth(&args.bandwidth)? };
                mmd_squared(x.view(), y.view(), &cfg)?
            } else {
                coral_loss(x.view(), y.view())?
            };
            (v, None)
        }
    };
    let report = json!({
        "measure": args.measure.name(),
        "value": num(value),
        "numerator": parts.map_or(Value::Null, |(n, _)| num(n)),
        "denominator": parts.map_or(Value::Null, |(_, d)| num(d)),
        "finite": value.is_finite(),
    });
    emit(args.out.as_deref(), &report, &mut manifest)?;
    manifest.finish(manifest_path)?;
    Ok(exit::OK)
}

pub fn props(args: &PropsArgs, manifest_path: Option<&Path>) -> CliResult<i32> {
    let mut manifest = RunManifest::start("props");
    manifest.seed = Some(args.seed);
    manifest.set("trials", args.trials);
    manifest.set("inject_fault", args.inject_fault.map(|_| "flip-gcs-sign"));
    if args.trials == 0 {
        return Err(CliError::Config("trials must be >= 1".into()));
    }
    let cfg = PropertyConfig {
        trials: args.trials,
        seed: args.seed,
        flip_gcs_sign: args.inject_fault == Some(Fault::FlipGcsSign),
    };
    let summary = run_property_suite(&cfg)?;
    let properties: Vec<Value> = summary
        .outcomes
        .iter()
        .map(|o| {
            json!({
                "name": o.name,
                "trials": o.trials,
                "failures": o.failures,
                "worst": num(o.worst),
                "passed": o.passed(),
            })
        })
        .collect();
    let report = json!({
        "seed": args.seed,
        "trials": args.trials,
        "passed": summary.passed(),
        "failed": summary.failed_count(),
        "properties": properties,
    });
    emit(args.out.as_deref(), &report, &mut manifest)?;
    for o in summary.outcomes.iter().filter(|o| !o.passed()) {
        eprintln!("property {} failed in {} of {} trials", o.name, o.failures, o.trials);
    }
    manifest.finish(manifest_path)?;
    Ok(if summary.passed() { exit::OK } else { exit::PROPERTY_FAILURE })
}

fn load_config(args: &TrainArgs) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn manifest_for(command: &str, cfg: &RunConfig, args: &TrainArgs) -> RunManifest {
    let mut m = RunManifest::start(command);
    m.seed = Some(cfg.train.seed);
    for (k, v) in cfg.resolved() {
        m.set(k, v);
    }
    if let Some(p) = &args.config {
        m.set("config_file", p.display().to_string());
    }
    m
}

fn default_manifest(explicit: Option<&Path>, out_dir: &Path) -> PathBuf {
    explicit.map_or_else(|| out_dir.join("manifest.json"), Path::to_path_buf)
}

fn modality_names(data: &[EmbeddingBatch]) -> Vec<String> {
    data.iter().map(|b| b.modality().to_string()).collect()
}

fn direction_labels(names: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for a in names {
        for b in names {
            if a != b {
                out.push(csalign::losses::direction_label(a, b));
            }
        }
    }
    out
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io(std::io::Error::other(e)))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

/// Per-epoch trace: epoch, loss, finite, learning_rate, then `<dir>_p@<k>`
/// for each k and `<dir>_map` for every ordered modality pair. Aborted
/// epochs leave the metric cells empty.
fn write_trace(path: &Path, trace: &TrainTrace, dirs: &[String], ks: &[usize]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = ["epoch", "loss", "finite", "learning_rate"].map(String::from).to_vec();
    for d in dirs {
        header.extend(ks.iter().map(|k| format!("{d}_p@{k}")));
        header.push(format!("{d}_map"));
    }
    w.write_record(&header).map_err(csv_err)?;
    for e in &trace.epochs {
        let mut row = vec![e.epoch.to_string(), fmt_f64(e.loss), e.finite.to_string(), fmt_f64(e.learning_rate)];
        for d in dirs {
            match e.metrics.iter().find(|m| &m.direction == d) {
                Some(m) => {
                    row.extend(ks.iter().map(|k| fmt_f64(m.p_at[k])));
                    row.push(fmt_f64(m.map_score));
                }
                None => row.extend(std::iter::repeat_n(String::new(), ks.len() + 1)),
            }
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn p_at_json(p_at: &std::collections::BTreeMap<usize, f64>) -> Value {
    Value::Object(p_at.iter().map(|(k, v)| (k.to_string(), num(*v))).collect::<Map<_, _>>())
}

pub fn train(args: &TrainArgs, manifest_path: Option<&Path>) -> CliResult<i32> {
    let cfg = load_config(args)?;
    let mut manifest = manifest_for("train", &cfg, args);
    let data = generate_synthetic(&cfg.synth)?;
    let mut encoders = init_encoders(&data, cfg.synth.embed_dim, &cfg.train);
    let trace = train_run(&data, &mut encoders, &cfg.train)?;

    std::fs::create_dir_all(&args.out_dir)?;
    let dirs = direction_labels(&modality_names(&data));
    let trace_path = args.out_dir.join("trace.csv");
    write_trace(&trace_path, &trace, &dirs, &cfg.train.eval_ks)?;

    let ks = &cfg.train.eval_ks;
    let directions: Vec<Value> = trace
        .final_metrics()
        .iter()
        .map(|m| json!({ "direction": m.direction, "p_at": p_at_json(&m.p_at), "map": num(m.map_score) }))
        .collect();
    let mean_p_at: Map<String, Value> = ks
        .iter()
        .map(|&k| (k.to_string(), num(csalign::train::mean_precision(trace.final_metrics(), k))))
        .collect();
    let metrics = json!({
        "loss": cfg.train.loss.name(),
        "strategy": cfg.train.strategy.name(),
        "epochs_run": trace.epochs.len(),
        "aborted_at": trace.aborted_at,
        "finite": trace.is_finite(),
        "first_loss": trace.first_loss().map_or(Value::Null, num),
        "final_loss": trace.last_loss().map_or(Value::Null, num),
        "mean_p_at": mean_p_at,
        "directions": directions,
    });
    let metrics_path = args.out_dir.join("metrics.json");
    write_json(&metrics_path, &metrics)?;
    manifest.outputs.extend([trace_path, metrics_path]);
    manifest.finish(Some(&default_manifest(manifest_path, &args.out_dir)))?;

    trace.check()?;
    Ok(exit::OK)
}

fn write_ablation_csv(path: &Path, table: &AblationTable, ks: &[usize]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["strategy".to_string()];
    header.extend(ks.iter().map(|k| format!("avg_p@{k}")));
    header.extend(["avg_map", "first_loss", "final_loss", "finite", "unsupervised"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for r in &table.rows {
        let mut row = vec![r.strategy.name().to_string()];
        row.extend(ks.iter().map(|k| fmt_f64(r.avg_p_at[k])));
        row.extend([
            fmt_f64(r.avg_map),
            fmt_f64(r.first_loss),
            fmt_f64(r.final_loss),
            r.finite.to_string(),
            r.unsupervised().collect::<Vec<_>>().join(";"),
        ]);
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn ablate(args: &TrainArgs, manifest_path: Option<&Path>) -> CliResult<i32> {
    let cfg = load_config(args)?;
    let mut manifest = manifest_for("ablate", &cfg, args);
    let data = generate_synthetic(&cfg.synth)?;
    let table = ablation_run(&data, cfg.synth.embed_dim, &cfg.train)?;

    std::fs::create_dir_all(&args.out_dir)?;
    let csv_path = args.out_dir.join("ablation.csv");
    write_ablation_csv(&csv_path, &table, &cfg.train.eval_ks)?;
    let rows: Vec<Value> = table
        .rows
        .iter()
        .map(|r| {
            json!({
                "strategy": r.strategy.name(),
                "avg_p_at": p_at_json(&r.avg_p_at),
                "avg_map": num(r.avg_map),
                "first_loss": num(r.first_loss),
                "final_loss": num(r.final_loss),
                "finite": r.finite,
                "unsupervised": r.unsupervised().collect::<Vec<_>>(),
                "directions": r.directions.iter().map(|d| json!({
                    "direction": d.metrics.direction,
                    "supervised": d.supervised,
                    "p_at": p_at_json(&d.metrics.p_at),
                    "map": num(d.metrics.map_score),
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    let json_path = args.out_dir.join("ablation.json");
    write_json(&json_path, &json!({ "rows": rows }))?;
    manifest.outputs.extend([csv_path, json_path]);
    manifest.finish(Some(&default_manifest(manifest_path, &args.out_dir)))?;

    if let Some(r) = table.rows.iter().find(|r| !r.finite) {
        return Err(CliError::Numeric(format!("strategy {} produced a non-finite loss", r.strategy.name())));
    }
    Ok(exit::OK)
}

fn random_ring(m: usize, n: usize, d: usize, rng: &mut ChaCha8Rng) -> CliResult<ModalityRing> {
    let labels: Vec<usize> = (0..n).collect();
    let batches = (0..m)
        .map(|i| {
            let data = Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(rng));
            EmbeddingBatch::new(data, labels.clone(), format!("m{i}"))
        })
        .collect::<csalign::Result<Vec<_>>>()?;
    Ok(ModalityRing::new(batches, Strategy::Mixed)?)
}

fn mean_seconds(reps: usize, mut f: impl FnMut() -> csalign::Result<()>) -> CliResult<f64> {
    f()?;
    let t = Instant::now();
    for _ in 0..reps {
        f()?;
    }
    Ok(t.elapsed().as_secs_f64() / reps as f64)
}

/// Columns: m, circular_pmfs, pairwise_pmfs, circular_ms, pairwise_ms,
/// ratio. Counts are exact; timings are wall-clock per loss evaluation.
pub fn bench(args: &BenchArgs, manifest_path: Option<&Path>) -> CliResult<i32> {
    if args.min_m < 2 || args.max_m < args.min_m || args.n < 2 || args.d == 0 || args.reps == 0 {
        return Err(CliError::Config("need 2 <= min_m <= max_m, n >= 2, d >= 1, reps >= 1".into()));
    }
    let mut manifest = RunManifest::start("bench");
    manifest.seed = Some(args.seed);
    for (k, v) in [("min_m", args.min_m), ("max_m", args.max_m), ("n", args.n), ("d", args.d), ("reps", args.reps)] {
        manifest.set(k, v);
    }
    let cfg = AlignConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["m", "circular_pmfs", "pairwise_pmfs", "circular_ms", "pairwise_ms", "ratio"])
        .map_err(csv_err)?;
    let mut rows = Vec::new();
    let mut counts_ok = true;
    for m in args.min_m..=args.max_m {
        let ring = random_ring(m, args.n, args.d, &mut rng)?;
        reset_association_count();
        gcs_ring_loss(&ring, &cfg)?;
        let circular = association_count();
        reset_association_count();
        pairwise_sum_loss(&ring, &cfg, PairMeasure::Cs)?;
        let pairwise = association_count();
        counts_ok &= circular == 2 * m as u64 && pairwise == (m * (m - 1)) as u64;

        let t_gcs = mean_seconds(args.reps, || gcs_ring_loss(&ring, &cfg).map(drop))?;
        let t_pair = mean_seconds(args.reps, || pairwise_sum_loss(&ring, &cfg, PairMeasure::Cs).map(drop))?;
        let ratio = t_pair / t_gcs;
        out.write_record([
            m.to_string(),
            circular.to_string(),
            pairwise.to_string(),
            fmt_f64(t_gcs * 1e3),
            fmt_f64(t_pair * 1e3),
            fmt_f64(ratio),
        ])
        .map_err(csv_err)?;
        rows.push(json!({
            "m": m,
            "circular_pmfs": circular,
            "pairwise_pmfs": pairwise,
            "circular_ms": num(t_gcs * 1e3),
            "pairwise_ms": num(t_pair * 1e3),
            "ratio": num(ratio),
        }));
    }
    let csv_bytes = out.into_inner().map_err(|e| CliError::Io(std::io::Error::other(e.to_string())))?;
    print!("{}", String::from_utf8(csv_bytes.clone()).expect("csv output is utf-8"));
    match &args.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let csv_path = dir.join("bench.csv");
            let json_path = dir.join("bench.json");
            std::fs::write(&csv_path, &csv_bytes)?;
            write_json(&json_path, &json!({ "counts_ok": counts_ok, "rows": rows }))?;
            manifest.outputs.extend([csv_path, json_path]);
            manifest.finish(Some(&default_manifest(manifest_path, dir)))?;
        }
        None => manifest.finish(manifest_path)?,
    }
    if !counts_ok {
        eprintln!("PMF construction counts differ from 2M / M(M-1)");
        return Ok(exit::PROPERTY_FAILURE);
    }
    Ok(exit::OK)
}
