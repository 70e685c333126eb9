mod svg;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use npad_core::data::{generate_dataset, render_sample, to_ppm, DatasetSpec, LabData, Manifest, SplitData, SplitTag};
use npad_core::metrics::{confusions_from_csv, MetricValue, MetricsReport, ReportProvenance};
use npad_core::pipeline::{
    baseline_config, evaluate_groups, hex_digest, load_model, run_variant, save_model, select_for, train_bmt,
    ExperimentConfig, TrainedModel, Variant,
};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

const THREADS_VAR: &str = "NPAD_LAB_THREADS";

#[derive(Debug)]
enum CliError {
    /// Bad input, configuration or validation: exit code 2.
    Config(String),
    /// Numeric or I/O failure while running: exit code 3.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<npad_core::Error> for CliError {
    fn from(e: npad_core::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn read_input(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

fn write_output(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

#[derive(Parser)]
#[command(name = "npad-lab", version, about = "Debiasing experiments on synthetic biased data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: manifest.json and one CSV per split.
    Generate(GenerateArgs),
    /// Rank non-protected attributes by baseline disparity and select them.
    Select(SelectArgs),
    /// Train one variant and write checkpoint, log and provenance.
    Train(TrainArgs),
    /// Evaluate a checkpoint, or a confusion-matrix CSV, and write report.json and charts.
    Evaluate(EvaluateArgs),
    /// Tabulate several evaluated runs into comparison.csv.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// TOML dataset spec; defaults apply to missing keys.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write every rendered sample as a binary PPM.
    #[arg(long)]
    export_ppm: bool,
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    data: PathBuf,
    /// TOML experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    baseline_epochs: Option<usize>,
    #[arg(long)]
    stage1_epochs: Option<usize>,
    #[arg(long)]
    stage2_epochs: Option<usize>,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long, default_value_t = 1)]
    n: usize,
    /// Skip the pairwise independence test.
    #[arg(long)]
    no_independence: bool,
    /// Baseline checkpoint; trained on the fly when absent.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long)]
    variant: Option<String>,
    /// Protected attribute PAD groups by.
    #[arg(long)]
    protected: Option<String>,
    /// Number of attributes to select, overriding the variant's.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    no_independence: bool,
    /// Baseline checkpoint to reuse instead of retraining it.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint written by `train`.
    #[arg(long, required_unless_present = "from_confusions")]
    model: Option<PathBuf>,
    #[arg(long, required_unless_present = "from_confusions")]
    data: Option<PathBuf>,
    /// One or two comma-separated grouping attributes.
    #[arg(long, value_delimiter = ',')]
    protected: Vec<String>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Confusion counts in the `algorithm,truth,<g> pred_pos,<g> pred_neg` layout.
    #[arg(long, conflicts_with_all = ["model", "data"])]
    from_confusions: Option<PathBuf>,
    /// Output directory; defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Run directories holding report.json.
    #[arg(long, num_args = 1..)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn threads() -> CliResult<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Config(format!("{THREADS_VAR} = `{v}` must be a positive integer"))),
        },
    }
}

fn load_manifest(dir: &Path) -> CliResult<Manifest> {
    let path = dir.join("manifest.json");
    Ok(Manifest::from_json(&read_input(&path)?)?)
}

fn parse_split(name: &str) -> CliResult<SplitTag> {
    SplitTag::ALL
        .into_iter()
        .find(|t| t.as_str() == name)
        .ok_or_else(|| CliError::Config(format!("unknown split `{name}`; expected train, val or test")))
}

fn cmd_generate(args: GenerateArgs) -> CliResult<()> {
    let mut spec: DatasetSpec = match &args.spec {
        Some(p) => toml::from_str(&read_input(p)?)
            .map_err(|e| CliError::Config(format!("{}: {}", p.display(), e.message())))?,
        None => DatasetSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let manifest = generate_dataset(&spec)?;
    write_output(&args.out.join("manifest.json"), manifest.to_json()?)?;
    for tag in SplitTag::ALL {
        let table = manifest.table(tag)?;
        write_output(&args.out.join(format!("{}.csv", tag.as_str())), table.to_csv())?;
    }
    if args.export_ppm {
        for r in &manifest.records {
            let ppm = to_ppm(&render_sample(r, &manifest.spec))?;
            write_output(&args.out.join("ppm").join(format!("{}.ppm", r.id)), ppm)?;
        }
    }
    println!(
        "wrote {} samples to {}",
        manifest.records.len(),
        args.out.display()
    );
    Ok(())
}

/// Config file, then flags, then the image shape of the data.
fn resolve_config(exp: &ExperimentArgs, manifest: &Manifest) -> CliResult<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &exp.config {
        Some(p) => toml::from_str(&read_input(p)?)
            .map_err(|e| CliError::Config(format!("{}: {}", p.display(), e.message())))?,
        None => ExperimentConfig::default(),
    };
    if let Some(t) = &exp.target {
        cfg.target = t.clone();
    }
    if let Some(s) = exp.seed {
        cfg.seed = s;
    }
    if let Some(a) = exp.alpha {
        cfg.alpha = a;
    }
    if let Some(e) = exp.baseline_epochs {
        cfg.baseline.epochs = e;
    }
    if let Some(e) = exp.stage1_epochs {
        cfg.stage1.epochs = e;
    }
    if let Some(e) = exp.stage2_epochs {
        cfg.stage2.epochs = e;
    }
    let [h, w] = manifest.spec.image_size;
    cfg.model.input = [npad_core::data::CHANNELS, h, w];
    if !manifest.attribute_names.contains(&cfg.target) {
        return Err(CliError::Config(format!("target `{}` is not an attribute of the dataset", cfg.target)));
    }
    if manifest.protected.contains(&cfg.target) {
        return Err(CliError::Config(format!("target `{}` is a protected attribute", cfg.target)));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn provenance_record(command: &str, cfg: &ExperimentConfig, data: &Path, manifest: &Manifest) -> CliResult<serde_json::Value> {
    Ok(json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": cfg.hash(),
        "config": cfg,
        "data": data.display().to_string(),
        "manifest_hash": hex_digest(manifest.to_json()?.as_bytes()),
        "threads": threads()?,
    }))
}

fn load_baseline(path: &Path, cfg: &ExperimentConfig) -> CliResult<TrainedModel> {
    let file = fs::File::open(path).map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
    let model = load_model(BufReader::new(file))?;
    if model.model.spec != cfg.model {
        return Err(CliError::Config(format!(
            "baseline {} was trained with a different model spec",
            path.display()
        )));
    }
    Ok(model)
}

fn cmd_select(args: SelectArgs) -> CliResult<()> {
    threads()?;
    let manifest = load_manifest(&args.exp.data)?;
    let mut cfg = resolve_config(&args.exp, &manifest)?;
    if args.n == 0 {
        return Err(CliError::Config("--n must be at least 1".into()));
    }
    cfg.select_n = Some(args.n);
    let data = LabData::from_manifest(&manifest)?;
    let baseline = match &args.baseline {
        Some(p) => load_baseline(p, &cfg)?,
        None => train_bmt(&baseline_config(&cfg), &data.train.training_set())?,
    };
    let selection = select_for(&cfg, &baseline, &data.val, args.n, !args.no_independence)?;
    write_output(&args.out.join("selection.json"), to_json(&selection))?;
    let mut prov = provenance_record("select", &cfg, &args.exp.data, &manifest)?;
    prov["independence_gate"] = json!(!args.no_independence);
    prov["baseline_hash"] = json!(baseline.parameter_hash());
    write_output(&args.out.join("provenance.json"), to_json(&prov))?;
    println!("selected {}", selection.selected.join(", "));
    for w in &selection.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    threads()?;
    let manifest = load_manifest(&args.exp.data)?;
    let mut cfg = resolve_config(&args.exp, &manifest)?;
    if let Some(v) = &args.variant {
        cfg.variant = Variant::parse(v)?;
    }
    if args.no_independence {
        match cfg.variant {
            Variant::Npad2 | Variant::NpadDependent => cfg.variant = Variant::NpadDependent,
            v => {
                return Err(CliError::Config(format!(
                    "--no-independence applies to two-attribute selection, not `{v}`"
                )))
            }
        }
    }
    if let Some(p) = &args.protected {
        cfg.protected = p.clone();
    }
    if args.n.is_some() {
        cfg.select_n = args.n;
    }
    cfg.validate()?;
    let data = LabData::from_manifest(&manifest)?;
    let baseline = match &args.baseline {
        Some(p) => Some(load_baseline(p, &cfg)?),
        None => None,
    };
    let run = run_variant(&cfg, &data, baseline.as_ref())?;

    let mut ckpt = Vec::new();
    save_model(&run.trained, &mut ckpt)?;
    write_output(&args.out.join("model.ckpt"), ckpt)?;
    write_output(&args.out.join("log.jsonl"), run.trained.log.to_jsonl())?;
    write_output(&args.out.join("report.json"), to_json(&run.report))?;
    if let Some(sel) = &run.selection {
        write_output(&args.out.join("selection.json"), to_json(sel))?;
    }
    let mut prov = provenance_record("train", &cfg, &args.exp.data, &manifest)?;
    prov["model_hash"] = json!(run.trained.parameter_hash());
    if let Some(g) = &run.grouping {
        prov["grouping"] = json!({
            "attributes": g.attributes,
            "active_classes": g.active(),
            "assignment_hash": hex_digest(&serde_json::to_vec(&g.class_ids).expect("ids serialize")),
        });
    }
    write_output(&args.out.join("provenance.json"), to_json(&prov))?;
    write_output(
        &args.out.join("config.toml"),
        toml::to_string(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?,
    )?;
    write_charts(&args.out, &[(cfg.variant.name().to_string(), &run.report)])?;
    print_summary(cfg.variant.name(), &run.report);
    Ok(())
}

fn metric(v: &MetricValue) -> Option<f64> {
    v.value().map(|x| x * 100.0)
}

fn write_charts(out: &Path, reports: &[(String, &MetricsReport)]) -> CliResult<()> {
    let bars = |f: &dyn Fn(&MetricsReport) -> Option<f64>| -> Vec<(String, Option<f64>)> {
        let mut bars = Vec::new();
        for (name, r) in reports {
            bars.push((name.clone(), f(r)));
        }
        bars
    };
    let attr = reports
        .first()
        .and_then(|(_, r)| r.protected.first())
        .map(|p| p.attribute.clone())
        .unwrap_or_default();
    let dob = bars(&|r| r.protected.first().and_then(|p| metric(&p.dob)));
    let ope = bars(&|r| r.protected.first().and_then(|p| metric(&p.ope)));
    write_output(
        &out.join("charts").join("dob.svg"),
        svg::bar_chart(&format!("DoB across {attr}"), "%", &dob),
    )?;
    write_output(
        &out.join("charts").join("ope.svg"),
        svg::bar_chart(&format!("OPE across {attr}"), "%", &ope),
    )
}

fn print_summary(name: &str, r: &MetricsReport) {
    println!("{name}: accuracy {:.2}%", r.overall_accuracy * 100.0);
    for p in &r.protected {
        println!(
            "  {}: DoB {}  OPE {}  DEO {}  PPV parity {}",
            p.attribute, p.dob, p.ope, p.deo, p.ppv_parity
        );
    }
    if let Some(i) = &r.intersectional {
        println!("  {} x {}: mean OPE {}", i.attributes[0], i.attributes[1], i.aggregate_ope);
    }
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> CliResult<()> {
    if let Some(csv) = &args.from_confusions {
        return evaluate_confusions(csv, &args);
    }
    let model_path = args.model.as_ref().expect("required by clap");
    let data_dir = args.data.as_ref().expect("required by clap");
    let file = fs::File::open(model_path)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", model_path.display())))?;
    let trained = load_model(BufReader::new(file))?;
    let manifest = load_manifest(data_dir)?;
    let tag = parse_split(&args.split)?;
    let [h, w] = manifest.spec.image_size;
    if trained.model.spec.input != [npad_core::data::CHANNELS, h, w] {
        return Err(CliError::Config(format!(
            "model input {:?} does not match {h}×{w} images",
            trained.model.spec.input
        )));
    }
    let (images, [_, c, h, w]) = npad_core::data::render_split(&manifest, tag);
    let split = SplitData {
        images,
        image_shape: [c, h, w],
        table: manifest.table(tag)?,
    };
    let protected: Vec<&str> = if args.protected.is_empty() {
        manifest.protected.iter().map(String::as_str).collect()
    } else {
        args.protected.iter().map(String::as_str).collect()
    };
    let report = evaluate_groups(&trained, &split, tag.as_str(), &protected)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| model_path.parent().map(Path::to_path_buf).unwrap_or_default());
    write_output(&out.join("report.json"), to_json(&report))?;
    write_charts(&out, &[(trained.provenance.variant.clone(), &report)])?;
    print_summary(&trained.provenance.variant, &report);
    Ok(())
}

#[derive(Serialize)]
struct ConfusionReports {
    source: String,
    reports: Vec<NamedReport>,
}

#[derive(Serialize)]
struct NamedReport {
    algorithm: String,
    report: MetricsReport,
}

fn evaluate_confusions(path: &Path, args: &EvaluateArgs) -> CliResult<()> {
    let rows = confusions_from_csv(&read_input(path)?)?;
    let attribute = args.protected.first().cloned().unwrap_or_else(|| "protected".into());
    let source = path.display().to_string();
    let mut reports = Vec::new();
    for (name, groups) in rows {
        let report = MetricsReport::from_sections(
            "from-confusions",
            vec![(attribute.clone(), groups)],
            None,
            ReportProvenance {
                model_hash: String::new(),
                split: source.clone(),
                variant: name.clone(),
                config_hash: String::new(),
            },
        )?;
        reports.push(NamedReport {
            algorithm: name,
            report,
        });
    }
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let named: Vec<(String, &MetricsReport)> = reports.iter().map(|r| (r.algorithm.clone(), &r.report)).collect();
    write_charts(&out, &named)?;
    for (name, r) in &named {
        print_summary(name, r);
    }
    write_output(&out.join("report.json"), to_json(&ConfusionReports { source, reports }))
}

#[derive(Debug)]
struct RunRow {
    run: String,
    variant: String,
    target: String,
    accuracy: f64,
    dob: Option<f64>,
    ope: Option<f64>,
}

fn read_run(dir: &Path) -> CliResult<RunRow> {
    let path = dir.join("report.json");
    let report: MetricsReport = serde_json::from_str(&read_input(&path)?)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let first = report.protected.first();
    Ok(RunRow {
        run: dir.display().to_string(),
        variant: report.provenance.variant.clone(),
        target: report.target.clone(),
        accuracy: report.overall_accuracy * 100.0,
        dob: first.and_then(|p| metric(&p.dob)),
        ope: first.and_then(|p| metric(&p.ope)),
    })
}

fn read_runs(dirs: &[PathBuf], threads: usize) -> CliResult<Vec<RunRow>> {
    let per = dirs.len().div_ceil(threads.max(1));
    let chunks: Vec<CliResult<Vec<RunRow>>> = std::thread::scope(|s| {
        let handles: Vec<_> = dirs
            .chunks(per.max(1))
            .map(|chunk| s.spawn(move || chunk.iter().map(|d| read_run(d)).collect::<CliResult<Vec<_>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("reader thread")).collect()
    });
    let mut rows = Vec::new();
    for c in chunks {
        rows.extend(c?);
    }
    Ok(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("undefined".into(), |x| format!("{x:.2}"))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cmd_compare(args: CompareArgs) -> CliResult<()> {
    if args.runs.len() < 2 {
        return Err(CliError::Config(format!("compare needs at least two runs, got {}", args.runs.len())));
    }
    let rows = read_runs(&args.runs, threads()?)?;
    let target = &rows[0].target;
    if let Some(r) = rows.iter().find(|r| &r.target != target) {
        return Err(CliError::Config(format!(
            "runs predict different targets: `{target}` and `{}` ({})",
            r.target, r.run
        )));
    }
    let best_acc = rows.iter().map(|r| r.accuracy).fold(f64::MIN, f64::max);
    let best = |f: fn(&RunRow) -> Option<f64>| rows.iter().filter_map(f).fold(f64::MAX, f64::min);
    let best_dob = best(|r| r.dob);
    let best_ope = best(|r| r.ope);
    let mut csv = String::from("run,variant,accuracy,dob,ope,best\n");
    for r in &rows {
        let mut marks = Vec::new();
        if r.accuracy == best_acc {
            marks.push("accuracy");
        }
        if r.dob == Some(best_dob) {
            marks.push("dob");
        }
        if r.ope == Some(best_ope) {
            marks.push("ope");
        }
        csv.push_str(&format!(
            "{},{},{:.2},{},{},{}\n",
            csv_field(&r.run),
            csv_field(&r.variant),
            r.accuracy,
            fmt_opt(r.dob),
            fmt_opt(r.ope),
            marks.join(";")
        ));
    }
    write_output(&args.out.join("comparison.csv"), &csv)?;
    let bars = |f: fn(&RunRow) -> Option<f64>| rows.iter().map(|r| (r.variant.clone(), f(r))).collect::<Vec<_>>();
    write_output(
        &args.out.join("charts").join("comparison_dob.svg"),
        svg::bar_chart(&format!("DoB, target {target}"), "%", &bars(|r| r.dob)),
    )?;
    write_output(
        &args.out.join("charts").join("comparison_ope.svg"),
        svg::bar_chart(&format!("OPE, target {target}"), "%", &bars(|r| r.ope)),
    )?;
    print!("{csv}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Select(a) => cmd_select(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Config(msg) | CliError::Runtime(msg)) = &e;
            eprintln!("error: {msg}");
            ExitCode::from(e.code())
        }
    }
}
