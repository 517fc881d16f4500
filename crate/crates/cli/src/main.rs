use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

use thn::datagen::{self, SynthSpec};
use thn::evaluation::mean_average_precision;
use thn::experiment::{self, PoolSizes};
use thn::retrieval::{CodeTable, HammingIndex};
use thn::training::train_with;
use thn::{Ablation, Error, Modality, Tower64, TrainConfig};

mod config;
mod manifest;

use config::{read_config, ConfigError};
use manifest::RunManifest;

const EXIT_OTHER: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "thn", version, about = "Cross-modal transitive hashing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-modality, two-domain dataset.
    Datagen(DatagenArgs),
    /// Train both towers on a generated dataset.
    Train(TrainArgs),
    /// Encode a feature file into a code file with one tower checkpoint.
    Encode(EncodeArgs),
    /// Score query codes against database codes.
    Evaluate(EvaluateArgs),
    /// Train and score every variant on one dataset.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct DatagenArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Flat key=value file with generator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    categories: Option<usize>,
    #[arg(long)]
    dim_x: Option<usize>,
    #[arg(long)]
    dim_y: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    n_aux_x: Option<usize>,
    #[arg(long)]
    n_aux_y: Option<usize>,
    #[arg(long)]
    n_query: Option<usize>,
    #[arg(long)]
    n_database: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    shift_translation: Option<f64>,
    #[arg(long)]
    shift_rotation: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    multi_label_prob: Option<f64>,
    #[arg(long)]
    pairs_per_item: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct TrainFlags {
    /// Flat key=value file with training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bits: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    /// `median` or a fixed positive bandwidth.
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    hash_lr_multiplier: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hidden widths of the modality-X tower, comma separated.
    #[arg(long)]
    hidden_x: Option<String>,
    #[arg(long)]
    hidden_y: Option<String>,
    /// One of full, ip, no-mmd, no-quant.
    #[arg(long)]
    ablation: Option<String>,
    /// Query items drawn into the training pool (default: all).
    #[arg(long)]
    n_hat: Option<usize>,
    /// Database items drawn into the training pool (default: all).
    #[arg(long)]
    m_hat: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory written by `datagen`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints, log and manifest.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Output code file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    query_codes: PathBuf,
    #[arg(long)]
    query_labels: PathBuf,
    #[arg(long)]
    db_codes: PathBuf,
    #[arg(long)]
    db_labels: PathBuf,
    /// Report file: header `map n_queries n_db b`, then PR points.
    #[arg(long)]
    out: PathBuf,
    /// Score AP over the top R items only.
    #[arg(long)]
    cutoff: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output table file.
    #[arg(long)]
    out: PathBuf,
    /// Bit widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "16")]
    bit_widths: Vec<usize>,
    /// Variants, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "full,ip,no-mmd,no-quant")]
    variants: Vec<String>,
    #[command(flatten)]
    flags: TrainFlags,
}

/// Failure of a subcommand, tagged with its exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(e) => Failure::Core(e),
            ConfigError::Usage(m) => Failure::Usage(m),
        }
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Core(Error::Io { .. } | Error::Parse { .. }) => EXIT_IO,
            Failure::Core(Error::Diverged { .. }) => EXIT_DIVERGED,
            Failure::Core(Error::AllCandidatesFailed(_)) => EXIT_DIVERGED,
            Failure::Core(_) => EXIT_OTHER,
        }
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = match &cli.command {
        Command::Datagen(_) => "datagen",
        Command::Train(_) => "train",
        Command::Encode(_) => "encode",
        Command::Evaluate(_) => "evaluate",
        Command::Ablate(_) => "ablate",
    };
    let out = match cli.command {
        Command::Datagen(a) => cmd_datagen(a),
        Command::Train(a) => cmd_train(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a),
    };
    match out {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => {
                    let mut cmd = Cli::command();
                    let usage = match cmd.find_subcommand_mut(name) {
                        Some(sub) => sub.render_usage(),
                        None => cmd.render_usage(),
                    };
                    eprintln!("error: {m}\n\n{usage}");
                    eprintln!("For more information, try '--help'.");
                }
                Failure::Core(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(f.exit_code())
        }
    }
}

fn create_dir(dir: &Path) -> CmdResult {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn cmd_datagen(a: DatagenArgs) -> CmdResult {
    let mut spec = SynthSpec::default();
    if let Some(path) = &a.config {
        for (line, k, v) in read_config(path)? {
            spec.set(&k, &v).map_err(|e| usage(format!("{}:{line}: {e}", path.display())))?;
        }
    }
    macro_rules! apply {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { spec.$f = v; } )* };
    }
    apply!(
        categories,
        dim_x,
        dim_y,
        latent_dim,
        n_aux_x,
        n_aux_y,
        n_query,
        n_database,
        separation,
        shift_translation,
        shift_rotation,
        noise,
        multi_label_prob,
        pairs_per_item,
        seed
    );
    spec.validate().map_err(|e| usage(e.to_string()))?;

    let data = datagen::generate::<f64>(&spec)?;
    datagen::save_dataset(&data, &a.out)?;
    let mut m = RunManifest::new("datagen", spec.seed);
    m.output("dir", &a.out);
    for line in spec.to_manifest().lines() {
        if let Some((k, v)) = line.split_once('=') {
            m.set(k, v);
        }
    }
    m.set("relations", data.relations.len());
    m.save(&a.out.join("manifest.txt"))?;
    eprintln!(
        "wrote {} auxiliary X, {} auxiliary Y, {} query, {} database items and {} relations to {}",
        data.aux_x.len(),
        data.aux_y.len(),
        data.query.len(),
        data.database.len(),
        data.relations.len(),
        a.out.display()
    );
    Ok(())
}

/// Defaults, then the config file, then flags.
fn resolve_train_config(f: &TrainFlags) -> Result<(TrainConfig, Option<usize>, Option<usize>), Failure> {
    let mut cfg = TrainConfig::default();
    let (mut n_hat, mut m_hat) = (None, None);
    let pool = |key: &str, v: &str| -> Result<usize, Failure> {
        v.trim().parse().map_err(|_| usage(format!("{key}: cannot parse '{v}'")))
    };
    if let Some(path) = &f.config {
        for (line, k, v) in read_config(path)? {
            let at = |e: String| usage(format!("{}:{line}: {e}", path.display()));
            match k.replace('-', "_").as_str() {
                "n_hat" => n_hat = Some(pool(&k, &v).map_err(|_| at(format!("n_hat: cannot parse '{v}'")))?),
                "m_hat" => m_hat = Some(pool(&k, &v).map_err(|_| at(format!("m_hat: cannot parse '{v}'")))?),
                _ => cfg.set(&k, &v).map_err(|e| at(e.to_string()))?,
            }
        }
    }
    let flags: [(&str, Option<String>); 13] = [
        ("bits", f.bits.map(|v| v.to_string())),
        ("lambda", f.lambda.map(|v| v.to_string())),
        ("mu", f.mu.map(|v| v.to_string())),
        ("gamma", f.gamma.clone()),
        ("learning_rate", f.learning_rate.map(|v| v.to_string())),
        ("momentum", f.momentum.map(|v| v.to_string())),
        ("hash_lr_multiplier", f.hash_lr_multiplier.map(|v| v.to_string())),
        ("batch_size", f.batch_size.map(|v| v.to_string())),
        ("epochs", f.epochs.map(|v| v.to_string())),
        ("seed", f.seed.map(|v| v.to_string())),
        ("hidden_x", f.hidden_x.clone()),
        ("hidden_y", f.hidden_y.clone()),
        ("ablation", f.ablation.clone()),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v).map_err(|e| usage(format!("--{}: {e}", k.replace('_', "-"))))?;
        }
    }
    n_hat = f.n_hat.or(n_hat);
    m_hat = f.m_hat.or(m_hat);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok((cfg, n_hat, m_hat))
}

fn pool_sizes(data: &datagen::SynthData<f64>, n_hat: Option<usize>, m_hat: Option<usize>) -> Result<PoolSizes, Failure> {
    let all = PoolSizes::all(data);
    let p = PoolSizes {
        n_hat: n_hat.unwrap_or(all.n_hat),
        m_hat: m_hat.unwrap_or(all.m_hat),
    };
    if p.n_hat > all.n_hat || p.m_hat > all.m_hat {
        return Err(usage(format!(
            "--n-hat/--m-hat ({}, {}) exceed the target sets ({}, {})",
            p.n_hat, p.m_hat, all.n_hat, all.m_hat
        )));
    }
    Ok(p)
}

fn record_config(m: &mut RunManifest, cfg: &TrainConfig, pools: PoolSizes) {
    for (k, v) in cfg.resolved().key_values() {
        m.set(k, v);
    }
    m.set("n_hat", pools.n_hat);
    m.set("m_hat", pools.m_hat);
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let (cfg, n_hat, m_hat) = resolve_train_config(&a.flags)?;
    let data = datagen::load_dataset::<f64>(&a.data)?;
    let pools = pool_sizes(&data, n_hat, m_hat)?;
    let sets = experiment::training_sets(&data, pools, cfg.seed)?;
    let trained = train_with(&sets, &cfg, |epoch, r| {
        eprintln!(
            "epoch {epoch}/{}: L={:.4} Q={:.4} Dq={:.5} Dd={:.5} C={:.4}",
            cfg.epochs, r.l, r.q, r.dq, r.dd, r.c
        );
    })?;
    create_dir(&a.out)?;
    trained.tower_x.save(&a.out.join("tower_x.ckpt"))?;
    trained.tower_y.save(&a.out.join("tower_y.ckpt"))?;
    trained.log.save(&a.out.join("train.log"))?;
    let mut m = RunManifest::new("train", cfg.seed);
    m.input("data", &a.data);
    m.output("dir", &a.out);
    record_config(&mut m, &cfg, pools);
    m.set("split", format!("{:016x}", experiment::split_fingerprint(&sets)));
    m.save(&a.out.join("manifest.txt"))?;
    Ok(())
}

fn sibling_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest");
    out.with_file_name(name)
}

fn cmd_encode(a: EncodeArgs) -> CmdResult {
    let tower = Tower64::load(&a.checkpoint)?;
    let ds = datagen::load_features::<f64>(&a.features, Modality::X, thn::Domain::Target)?;
    if tower.input_dim() != ds.dim() {
        return Err(Failure::Core(Error::Invalid(format!(
            "checkpoint {} expects input dimension {}, features {} have dimension {}",
            a.checkpoint.display(),
            tower.input_dim(),
            a.features.display(),
            ds.dim()
        ))));
    }
    let (_, codes) = experiment::encode(&tower, ds.features())?;
    codes.save(&a.out)?;
    let mut m = RunManifest::new("encode", 0);
    m.input("checkpoint", &a.checkpoint);
    m.input("features", &a.features);
    m.output("codes", &a.out);
    m.set("n", codes.len());
    m.set("bits", codes.bits());
    m.save(&sibling_manifest(&a.out))?;
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> CmdResult {
    let q = CodeTable::load(&a.query_codes)?;
    let d = CodeTable::load(&a.db_codes)?;
    let ql = datagen::load_labels(&a.query_labels)?;
    let dl = datagen::load_labels(&a.db_labels)?;
    if q.bits() != d.bits() {
        return Err(Failure::Core(Error::Invalid(format!(
            "query codes are {}-bit, database codes are {}-bit",
            q.bits(),
            d.bits()
        ))));
    }
    for (labels, codes, what) in [(&ql, &q, &a.query_labels), (&dl, &d, &a.db_labels)] {
        if labels.len() != codes.len() {
            return Err(Failure::Core(Error::Invalid(format!(
                "{} has {} label lines for {} codes",
                what.display(),
                labels.len(),
                codes.len()
            ))));
        }
    }
    let index = HammingIndex::new(d, Modality::Y);
    let report = mean_average_precision(&q, &ql, &index, &dl, a.cutoff)?;
    report.save(&a.out)?;
    let mut m = RunManifest::new("evaluate", 0);
    m.input("query_codes", &a.query_codes);
    m.input("query_labels", &a.query_labels);
    m.input("db_codes", &a.db_codes);
    m.input("db_labels", &a.db_labels);
    m.output("report", &a.out);
    m.set("cutoff", a.cutoff.map_or_else(|| "none".to_string(), |c| c.to_string()));
    m.set("map", report.map);
    m.save(&sibling_manifest(&a.out))?;
    println!("{}", report.map);
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> CmdResult {
    let (cfg, n_hat, m_hat) = resolve_train_config(&a.flags)?;
    let variants = a
        .variants
        .iter()
        .map(|v| v.parse::<Ablation>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| usage(e.to_string()))?;
    if variants.is_empty() || a.bit_widths.is_empty() || a.bit_widths.contains(&0) {
        return Err(usage("need at least one variant and positive bit widths"));
    }
    let data = datagen::load_dataset::<f64>(&a.data)?;
    let pools = pool_sizes(&data, n_hat, m_hat)?;
    let results = experiment::ablation_study(&data, &cfg, &variants, &a.bit_widths, pools, |r| {
        eprintln!(
            "{} b={}: x2y {:.4} y2x {:.4} ({:.1}s)",
            r.ablation, r.bits, r.x_to_y.map, r.y_to_x.map, r.seconds
        );
    })?;
    let table = experiment::format_table(&results);
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    std::fs::write(&a.out, &table).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    print!("{table}");
    let mut m = RunManifest::new("ablate", cfg.seed);
    m.input("data", &a.data);
    m.output("table", &a.out);
    record_config(&mut m, &cfg, pools);
    m.set("variants", variants.iter().map(|v| v.name()).collect::<Vec<_>>().join(","));
    m.set(
        "bit_widths",
        a.bit_widths.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
    );
    for r in &results {
        m.set(&format!("split.{}.{}", r.ablation, r.bits), format!("{:016x}", r.split));
    }
    m.save(&sibling_manifest(&a.out))?;
    Ok(())
}
