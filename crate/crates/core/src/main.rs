use std::fs::{self, File};
use std::io::{self, Read as _, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ecg_contrast::config::{parse_assignment, RunConfig};
use ecg_contrast::data::{
    generate, inspect, load_downstream, load_noise_bank, load_pretrain, read_metadata_csv, save_downstream,
    save_pretrain, score_records, write_metadata_csv, write_scores_csv, DownstreamSet, TaskKind,
};
use ecg_contrast::diagnostics::{gradient_suite, SuiteConfig};
use ecg_contrast::encoder::Encoder;
use ecg_contrast::error::{exit, Error, Result};
use ecg_contrast::eval::{auroc, auroc_macro_ovr, mae, write_metrics_csv, MetricReport};
use ecg_contrast::loss::Objective;
use ecg_contrast::numeric::median;
use ecg_contrast::signal::{LeadMode, NoiseBank};
use ecg_contrast::train::{
    ablate, finetune, pretrain, probe_features, probe_on_features, AblationConfig, Checkpoint, DownstreamConfig,
    DownstreamOutcome, RunControl, RunDir,
};

#[derive(Parser)]
#[command(name = "ecg-contrast", version, about = "Risk-weighted contrastive pretraining for single-lead ECG encoders")]
struct Cli {
    /// Run configuration (TOML). Flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Set any configuration key, e.g. `--set pretrain.tau=0.1`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Start from the desk-scale defaults instead of the full-scale ones [config: profile]
    #[arg(long, global = true)]
    desk: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute SCORE2 risk and missingness for a metadata CSV.
    Score2(Score2Args),
    /// Write a synthetic pretraining set, downstream set and metadata sidecar.
    GenData(GenDataArgs),
    /// Contrastive pretraining of an encoder.
    Pretrain(PretrainArgs),
    /// Linear probe on frozen embeddings, one run per evaluation seed.
    Probe(DownstreamArgs),
    /// Fine-tune encoder and head end to end, one run per evaluation seed.
    Finetune(DownstreamArgs),
    /// Pretrain once per objective variant and probe each result.
    Ablate(AblateArgs),
    /// Finite-difference check of every analytic gradient.
    Gradcheck(GradcheckArgs),
    /// Score a predictions CSV.
    Eval(EvalArgs),
    /// Summarize a checkpoint or dataset container.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct Score2Args {
    /// Metadata CSV with columns age,gender,smoking,sbp,diabetes,tchol,hdl.
    input: PathBuf,
    /// Output CSV; standard output when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Imputation seed [config: pretrain.seed]
    #[arg(long)]
    seed: Option<u64>,
    /// Impute cholesterol at the population mean without jitter [config: pretrain.impute.deterministic]
    #[arg(long)]
    deterministic: bool,
    /// Emit only the r,m columns instead of echoing the input.
    #[arg(long)]
    scores_only: bool,
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
    /// Pretraining subjects [config: synthetic.n_subjects]
    #[arg(long)]
    subjects: Option<usize>,
    /// Downstream subjects [config: synthetic.downstream_n]
    #[arg(long)]
    downstream: Option<usize>,
    /// Generator seed [config: synthetic.seed]
    #[arg(long)]
    seed: Option<u64>,
    /// Risk-to-morphology coupling, 0 for label-independent signals [config: synthetic.coupling]
    #[arg(long)]
    coupling: Option<f64>,
    /// binary, regression or categorical:K [config: synthetic.task]
    #[arg(long)]
    task: Option<TaskKind>,
    /// Record length in seconds [config: synthetic.duration_s]
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args)]
struct EncoderArgs {
    /// Encoder preset: tiny, s, m or l [config: encoder.preset]
    #[arg(long)]
    encoder: Option<String>,
    /// Encoder initialization seed [config: encoder.seed]
    #[arg(long)]
    encoder_seed: Option<u64>,
}

#[derive(Args)]
struct PretrainArgs {
    /// Pretraining container; relative paths also resolve against the data root.
    #[arg(long, default_value = "pretrain.ecgc")]
    data: PathBuf,
    /// Run directory for config, metrics and checkpoints.
    #[arg(short, long)]
    out: PathBuf,
    /// Continue from `<out>/last.ckpt`.
    #[arg(long)]
    resume: bool,
    /// Stop before this 0-based epoch, leaving a run that `--resume` continues.
    #[arg(long, value_name = "EPOCH")]
    stop_at: Option<usize>,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// [config: pretrain.epochs]
    #[arg(long)]
    epochs: Option<usize>,
    /// [config: pretrain.batch_size]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Peak learning rate [config: pretrain.lr]
    #[arg(long)]
    lr: Option<f64>,
    /// Seed for split, order and views [config: pretrain.seed]
    #[arg(long)]
    seed: Option<u64>,
    /// e.g. nce, weighted, weighted+dissim:0.5 [config: pretrain.objective]
    #[arg(long)]
    objective: Option<Objective>,
    /// `all` or a lead number 1-12 [config: pretrain.lead_mode]
    #[arg(long)]
    lead_mode: Option<LeadMode>,
    /// Directory of recorded noise, `<category>.ecgc` [config: noise_dir]
    #[arg(long)]
    noise_dir: Option<PathBuf>,
}

#[derive(Args)]
struct DownstreamArgs {
    /// Pretrained checkpoint.
    #[arg(long, required_unless_present = "random_init")]
    checkpoint: Option<PathBuf>,
    /// Use a freshly initialized encoder instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    random_init: bool,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// Downstream container; relative paths also resolve against the data root.
    #[arg(long, default_value = "downstream.ecgc")]
    data: PathBuf,
    /// Output directory for metrics.csv and report.toml.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Comma-separated evaluation seeds [config: eval_seeds]
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// [config: downstream.lr]
    #[arg(long)]
    lr: Option<f64>,
    /// [config: downstream.epochs]
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    /// Pretraining container.
    #[arg(long, default_value = "pretrain.ecgc")]
    pretrain_data: PathBuf,
    /// Downstream container used for probing.
    #[arg(long, default_value = "downstream.ecgc")]
    data: PathBuf,
    /// Output directory: one subdirectory per variant plus ablation.csv.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Comma-separated objectives [config: ablation.variants]
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
    /// Sweep the alignment weight of weighted+dissim instead.
    #[arg(long, conflicts_with = "variants")]
    lambda_sweep: bool,
    /// Pretraining epochs per variant [config: ablation.epochs]
    #[arg(long)]
    epochs: Option<usize>,
    /// Comma-separated probe seeds [config: eval_seeds]
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[command(flatten)]
    encoder: EncoderArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random instances per check.
    #[arg(long, default_value_t = SuiteConfig::default().instances)]
    instances: usize,
    #[arg(long, default_value_t = SuiteConfig::default().seed)]
    seed: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = SuiteConfig::default().tolerance)]
    tolerance: f64,
    /// Encoder parameter coordinates probed per instance, 0 for all.
    #[arg(long, default_value_t = SuiteConfig::default().encoder_coords)]
    encoder_coords: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// CSV with a `label` column and `score` (binary), `score_0..score_{K-1}`
    /// (categorical) or `prediction` (regression) columns.
    predictions: PathBuf,
    /// binary, regression or categorical:K
    #[arg(long)]
    task: TaskKind,
    /// Metrics CSV; standard output when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// A `.ckpt` checkpoint or `.ecgc` container.
    path: PathBuf,
}

/// Collects `(config key, value)` pairs for flags that were given.
#[derive(Default)]
struct Overrides(Vec<(String, toml::Value)>);

impl Overrides {
    fn put<T: Serialize>(&mut self, key: &str, value: Option<T>) -> Result<()> {
        if let Some(v) = value {
            let v = toml::Value::try_from(v).map_err(|e| Error::config(format!("{key}: {e}")))?;
            self.0.push((key.to_string(), v));
        }
        Ok(())
    }

    fn encoder(&mut self, a: &EncoderArgs) -> Result<()> {
        self.put("encoder.preset", a.encoder.clone())?;
        self.put("encoder.seed", a.encoder_seed)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    let mut ov = Overrides::default();
    if cli.desk {
        ov.put("profile", Some("desk"))?;
    }
    for s in &cli.set {
        ov.0.push(parse_assignment(s)?);
    }
    // Flags come after --set so the more specific spelling wins.
    match &cli.command {
        Command::Score2(a) => {
            ov.put("pretrain.seed", a.seed)?;
            ov.put("pretrain.impute.deterministic", a.deterministic.then_some(true))?;
        }
        Command::GenData(a) => {
            ov.put("synthetic.n_subjects", a.subjects)?;
            ov.put("synthetic.downstream_n", a.downstream)?;
            ov.put("synthetic.seed", a.seed)?;
            ov.put("synthetic.coupling", a.coupling)?;
            ov.put("synthetic.task", a.task)?;
            ov.put("synthetic.duration_s", a.duration)?;
        }
        Command::Pretrain(a) => {
            ov.encoder(&a.encoder)?;
            ov.put("pretrain.epochs", a.epochs)?;
            ov.put("pretrain.batch_size", a.batch_size)?;
            ov.put("pretrain.lr", a.lr)?;
            ov.put("pretrain.seed", a.seed)?;
            ov.put("pretrain.objective", a.objective)?;
            ov.put("pretrain.lead_mode", a.lead_mode)?;
            ov.put("noise_dir", a.noise_dir.clone())?;
        }
        Command::Probe(a) | Command::Finetune(a) => {
            ov.encoder(&a.encoder)?;
            ov.put("eval_seeds", a.seeds.clone())?;
            ov.put("downstream.lr", a.lr)?;
            ov.put("downstream.epochs", a.epochs)?;
        }
        Command::Ablate(a) => {
            ov.encoder(&a.encoder)?;
            ov.put("ablation.variants", a.variants.clone())?;
            ov.put("ablation.variants", a.lambda_sweep.then(AblationConfig::lambda_sweep))?;
            ov.put("ablation.epochs", a.epochs)?;
            ov.put("eval_seeds", a.seeds.clone())?;
        }
        Command::Gradcheck(_) | Command::Eval(_) | Command::Inspect(_) => {}
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &ov.0)?;

    match cli.command {
        Command::Score2(a) => cmd_score2(&cfg, &a),
        Command::GenData(a) => cmd_gen_data(&cfg, &a),
        Command::Pretrain(a) => cmd_pretrain(&cfg, &a),
        Command::Probe(a) => cmd_downstream(&cfg, &a, false),
        Command::Finetune(a) => cmd_downstream(&cfg, &a, true),
        Command::Ablate(a) => cmd_ablate(&cfg, &a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Inspect(a) => cmd_inspect(&a),
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io_at(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io_at(path, e))
}

fn output_writer(path: Option<&Path>) -> Result<Box<dyn io::Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn cmd_score2(cfg: &RunConfig, a: &Score2Args) -> Result<i32> {
    let records = read_metadata_csv(open(&a.input)?)?;
    let ids: Vec<u64> = (0..records.len() as u64).collect();
    let scores = score_records(&records, &ids, cfg.pretrain.seed, &cfg.pretrain.impute)?;
    let echo = (!a.scores_only).then_some(records.as_slice());
    write_scores_csv(output_writer(a.output.as_deref())?, &scores, echo)?;
    Ok(exit::OK)
}

fn cmd_gen_data(cfg: &RunConfig, a: &GenDataArgs) -> Result<i32> {
    fs::create_dir_all(&a.out)?;
    let (pre, down) = generate(&cfg.synthetic)?;
    save_pretrain(&pre, &a.out.join("pretrain.ecgc"))?;
    save_downstream(&down, &a.out.join("downstream.ecgc"))?;
    let meta: Vec<_> = pre.records.iter().map(|r| r.metadata.clone()).collect();
    write_metadata_csv(create(&a.out.join("metadata.csv"))?, &meta)?;
    fs::write(a.out.join("run.toml"), cfg.to_toml()?)?;
    println!(
        "wrote {} pretraining and {} downstream ({}) subjects to {}",
        pre.len(),
        down.len(),
        down.task,
        a.out.display()
    );
    Ok(exit::OK)
}

fn noise_bank(cfg: &RunConfig) -> Result<NoiseBank> {
    match &cfg.noise_dir {
        Some(d) => load_noise_bank(&cfg.data_path(d)),
        None => Ok(NoiseBank::synthetic()),
    }
}

fn cmd_pretrain(cfg: &RunConfig, a: &PretrainArgs) -> Result<i32> {
    let data = load_pretrain(&cfg.data_path(&a.data))?;
    let bank = noise_bank(cfg)?;
    let run = RunDir::create(&a.out)?;
    let (encoder, resume) = if a.resume {
        let ck = Checkpoint::load(&run.last())?;
        let echo = toml::to_string(&cfg.pretrain).map_err(|e| Error::config(e.to_string()))?;
        if ck.run_config != echo {
            return Err(Error::config("pretraining settings differ from the run being resumed"));
        }
        let state = ck.state.clone().ok_or_else(|| Error::Malformed("last.ckpt has no training state".into()))?;
        log::info!("resuming at epoch {}", state.next_epoch + 1);
        (ck.encoder()?, Some(state))
    } else {
        (Encoder::build(&cfg.encoder.resolve()?, cfg.encoder.seed)?, None)
    };
    fs::write(run.file("run.toml"), cfg.to_toml()?)?;
    let ctl = RunControl { run_dir: Some(&run), resume, stop_before: a.stop_at };
    let out = pretrain(&data, encoder, &cfg.pretrain, &bank, ctl)?;
    let best = out.best_epoch.and_then(|e| out.history.iter().find(|h| h.epoch == e));
    match best {
        Some(b) => println!(
            "{} epochs, best validation loss {:.6} at epoch {}{}; checkpoints in {}",
            out.history.len(),
            b.val_loss,
            b.epoch + 1,
            if out.stopped_early { " (stopped early)" } else { "" },
            a.out.display()
        ),
        None => println!("{} epochs; checkpoints in {}", out.history.len(), a.out.display()),
    }
    Ok(exit::OK)
}

fn load_encoder(cfg: &RunConfig, a: &DownstreamArgs) -> Result<Encoder> {
    match &a.checkpoint {
        Some(p) => Checkpoint::load(p)?.encoder(),
        None => Encoder::build(&cfg.encoder.resolve()?, cfg.encoder.seed),
    }
}

#[derive(Serialize)]
struct DownstreamReport<'a> {
    mode: &'a str,
    task: String,
    metric: &'a str,
    median: f64,
    seeds: &'a [u64],
    values: Vec<f64>,
    encoder: String,
}

fn cmd_downstream(cfg: &RunConfig, a: &DownstreamArgs, tune: bool) -> Result<i32> {
    let set: DownstreamSet = load_downstream(&cfg.data_path(&a.data))?;
    let encoder = load_encoder(cfg, a)?;
    let task_name = set.task.to_string();
    let run = a.out.as_ref().map(RunDir::create).transpose()?;
    let features = if tune { None } else { Some(probe_features(&encoder, &set, &cfg.downstream)?) };
    let mut outcomes: Vec<DownstreamOutcome> = Vec::new();
    for &seed in &cfg.eval_seeds {
        let dcfg = DownstreamConfig { seed, ..cfg.downstream.clone() };
        let out = match &features {
            Some(f) => probe_on_features(f, &dcfg)?,
            None => finetune(encoder.clone(), &set, &dcfg)?,
        };
        let report = out.report(&task_name);
        println!("{report}");
        if let (Some(run), true) = (&run, tune) {
            let tuned = out.encoder.as_ref().ok_or_else(|| Error::Malformed("fine-tune returned no encoder".into()))?;
            let mut ck = Checkpoint::from_encoder(tuned, cfg.to_toml()?);
            ck.head = Some(out.head.clone());
            run.save_checkpoint(&format!("finetune_seed{seed}.ckpt"), &ck)?;
        }
        outcomes.push(out);
    }
    let values: Vec<f64> = outcomes.iter().map(|o| o.value).collect();
    let metric = outcomes.first().map_or("", |o| o.metric);
    let med = median(&values);
    println!("median {metric} over {} seeds: {med:.6}", values.len());
    if let Some(run) = &run {
        let rows: Vec<MetricReport> = outcomes.iter().map(|o| o.report(&task_name)).collect();
        write_metrics_csv(create(&run.file("metrics.csv"))?, &rows)?;
        let encoder_src = a.checkpoint.as_ref().map_or_else(|| "random-init".to_string(), |p| p.display().to_string());
        run.write_report(&DownstreamReport {
            mode: if tune { "finetune" } else { "probe" },
            task: task_name,
            metric,
            median: med,
            seeds: &cfg.eval_seeds,
            values,
            encoder: encoder_src,
        })?;
        fs::write(run.file("run.toml"), cfg.to_toml()?)?;
    }
    Ok(exit::OK)
}

fn cmd_ablate(cfg: &RunConfig, a: &AblateArgs) -> Result<i32> {
    let data = load_pretrain(&cfg.data_path(&a.pretrain_data))?;
    let task = load_downstream(&cfg.data_path(&a.data))?;
    let bank = noise_bank(cfg)?;
    let mut pretrain = cfg.pretrain.clone();
    if let Some(e) = cfg.ablation.epochs {
        pretrain.epochs = e;
    }
    let acfg = AblationConfig {
        encoder: cfg.encoder.resolve()?,
        encoder_seed: cfg.encoder.seed,
        pretrain,
        downstream: cfg.downstream.clone(),
        variants: cfg.ablation.variants.clone(),
        probe_seeds: cfg.eval_seeds.clone(),
    };
    let run = a.out.as_ref().map(RunDir::create).transpose()?;
    if let Some(r) = &run {
        fs::write(r.file("run.toml"), cfg.to_toml()?)?;
    }
    let table = ablate(&data, &task, &bank, &acfg, run.as_ref())?;
    print!("{}", table.render());
    Ok(exit::OK)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    let cfg = SuiteConfig {
        instances: a.instances,
        seed: a.seed,
        tolerance: a.tolerance,
        encoder_coords: a.encoder_coords,
        ..SuiteConfig::default()
    };
    let results = gradient_suite(&cfg)?;
    println!("{:<24}  {:>9}  {:>7}  {:>11}  result", "check", "instances", "coords", "max rel err");
    for r in &results {
        println!(
            "{:<24}  {:>9}  {:>7}  {:>11.3e}  {}",
            r.name,
            r.instances,
            r.checked,
            r.max_rel_err,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    Ok(if results.iter().all(|r| r.passed) { exit::OK } else { exit::GRADCHECK })
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Malformed(format!("predictions CSV has no {name:?} column")))
}

fn cell(rec: &csv::StringRecord, i: usize, row: usize) -> Result<f64> {
    let s = rec.get(i).unwrap_or("").trim();
    s.parse().map_err(|_| Error::Malformed(format!("row {row}: {s:?} is not a number")))
}

fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let mut rdr = csv::Reader::from_reader(open(&a.predictions)?);
    let headers = rdr.headers()?.clone();
    let label_col = column(&headers, "label")?;
    let score_cols: Vec<usize> = match a.task {
        TaskKind::Binary => vec![column(&headers, "score")?],
        TaskKind::Regression => vec![column(&headers, "prediction")?],
        TaskKind::Categorical(k) => (0..k).map(|c| column(&headers, &format!("score_{c}"))).collect::<Result<_>>()?,
    };
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for &c in &score_cols {
            scores.push(cell(&rec, c, i + 1)?);
        }
        labels.push(cell(&rec, label_col, i + 1)?);
    }
    let n = labels.len();
    let (metric, value) = match a.task {
        TaskKind::Binary => {
            let bin: Vec<bool> = labels
                .iter()
                .map(|&l| match l {
                    0.0 => Ok(false),
                    1.0 => Ok(true),
                    _ => Err(Error::LabelMismatch(format!("binary label {l}"))),
                })
                .collect::<Result<_>>()?;
            ("auroc", auroc(&scores, &bin)?)
        }
        TaskKind::Categorical(k) => {
            let cls: Vec<u16> = labels
                .iter()
                .map(|&l| {
                    if l.fract() == 0.0 && l >= 0.0 && l < f64::from(k) {
                        Ok(l as u16)
                    } else {
                        Err(Error::LabelMismatch(format!("class {l} outside 0..{k}")))
                    }
                })
                .collect::<Result<_>>()?;
            ("macro_auroc", auroc_macro_ovr(&scores, k as usize, &cls)?.value)
        }
        TaskKind::Regression => ("mae", mae(&scores, &labels)?),
    };
    let row = MetricReport { task: a.task.to_string(), metric: metric.into(), value, n, seed: 0 };
    write_metrics_csv(output_writer(a.output.as_deref())?, &[row])?;
    Ok(exit::OK)
}

fn cmd_inspect(a: &InspectArgs) -> Result<i32> {
    let mut magic = [0u8; 8];
    open(&a.path)?.read_exact(&mut magic).map_err(|_| Error::Truncated(format!("{} is too short", a.path.display())))?;
    let mut out = io::stdout().lock();
    if &magic == b"ECGCKPT\0" {
        let ck = Checkpoint::load(&a.path)?;
        let counts = ck.module_counts();
        writeln!(out, "checkpoint {}", a.path.display())?;
        writeln!(out, "  encoder seed {}, embedding dim {}", ck.seed, ck.encoder_config.output_dim())?;
        for (name, n) in &counts {
            writeln!(out, "  {name:<16} {n:>10}")?;
        }
        writeln!(out, "  {:<16} {:>10}", "total", counts.iter().map(|c| c.1).sum::<usize>())?;
        if let Some(s) = &ck.state {
            writeln!(out, "  resumable at epoch {} ({} epochs recorded)", s.next_epoch + 1, s.history.len())?;
        }
    } else {
        let s = inspect(&a.path)?;
        writeln!(out, "container {}", a.path.display())?;
        writeln!(out, "  kind {:?}, format v{}", s.kind, s.version)?;
        if let Some(t) = s.task {
            writeln!(out, "  task {t}, lead {}", s.lead)?;
        }
        writeln!(out, "  {} records at {} Hz", s.count, s.fs)?;
        writeln!(out, "  sha256 {}", s.sha256)?;
    }
    Ok(exit::OK)
}
