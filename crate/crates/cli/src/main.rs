//! `hbct` command-line driver.
//!
//! Exit codes: 0 on success, 2 on configuration or usage errors, 3 on
//! numerical or training failures, 1 on other I/O failures.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Args, FromArgMatches, Parser, Subcommand};
use hbct::config::ExperimentConfig;
use hbct::encoder::{train_new, train_old, TrainConfig};
use hbct::evaluation::{embed_split, CompatReport, EmbeddingSet};
use hbct::losses::AlignmentConfig;
use hbct::par::Exec;
use hbct::persist::{self, Checkpoint};
use hbct::report;
use hbct::scenarios::{self, METRICS};
use hbct::HbctError;

const OUTPUT_ROOT_ENV: &str = "HBCT_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(
    name = "hbct",
    version,
    about = "Hyperbolic backward-compatible training experiments"
)]
struct Cli {
    /// Config file of `key = value` lines applied before the flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Root directory that relative output paths resolve against.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV, value_name = "DIR")]
    output_root: Option<PathBuf>,

    /// Run seeds and queries on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(flatten)]
    overrides: ConfigFlags,

    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Generate a synthetic dataset file.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "dataset.bin")]
        out: PathBuf,
    },
    /// Train the old (generation 0) model on the scenario's old slice.
    TrainOld {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "old.ckpt")]
        out: PathBuf,
    },
    /// Train the next generation against a frozen old checkpoint.
    TrainNew {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        old: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train without alignment (lambda = 0).
        #[arg(long)]
        unaligned: bool,
        #[arg(long, default_value = "new.ckpt")]
        out: PathBuf,
    },
    /// Score self and cross retrieval of two checkpoints on the query/gallery splits.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        old: PathBuf,
        #[arg(long)]
        new: PathBuf,
        /// Unaligned reference model; enables the compatibility gain.
        #[arg(long)]
        star: Option<PathBuf>,
        /// Also write the embedding stores to this directory.
        #[arg(long, value_name = "DIR")]
        embeddings: Option<PathBuf>,
    },
    /// Run the configured scenario end to end over all seeds.
    Scenario,
    /// Run sequential updates and print the compatibility matrices.
    Matrix {
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run the scenario once per value of a config key.
    Sweep {
        #[arg(long)]
        key: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

/// One `--section-key VALUE` flag per config key, e.g. `--train-epochs 50`.
#[derive(Debug, Clone, Default)]
struct ConfigFlags {
    values: Vec<(&'static str, String)>,
}

fn flag_name(key: &str) -> String {
    key.replace(['.', '_'], "-")
}

impl FromArgMatches for ConfigFlags {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let values = ExperimentConfig::default()
            .entries()
            .into_iter()
            .filter_map(|(key, _)| m.get_one::<String>(key).map(|v| (key, v.clone())))
            .collect();
        Ok(Self { values })
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for ConfigFlags {
    fn augment_args(mut cmd: clap::Command) -> clap::Command {
        for (key, default) in ExperimentConfig::default().entries() {
            let long: &'static str = Box::leak(flag_name(key).into_boxed_str());
            cmd = cmd.arg(
                Arg::new(key)
                    .long(long)
                    .value_name("VALUE")
                    .global(true)
                    .help_heading("Config")
                    .help(format!("{key} (default {default})")),
            );
        }
        cmd
    }

    fn augment_args_for_update(cmd: clap::Command) -> clap::Command {
        Self::augment_args(cmd)
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Hbct(HbctError),
}

impl From<HbctError> for Failure {
    fn from(e: HbctError) -> Self {
        Failure::Hbct(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Hbct(e) if e.is_numerical() => 3,
            Failure::Hbct(HbctError::Io(_)) => 1,
            Failure::Hbct(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Hbct(e) => write!(f, "{e}"),
        }
    }
}

type Outcome = Result<(), Failure>;

struct Context {
    cfg: ExperimentConfig,
    root: PathBuf,
    exec: Exec,
}

impl Context {
    fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Failure::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    for (key, value) in &cli.overrides.values {
        cfg.set(key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_parent(path: &Path) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(HbctError::Io)?;
    }
    Ok(())
}

fn generate(ctx: &Context, seed: u64, out: &Path) -> Outcome {
    let ds = scenarios::seed_dataset(&ctx.cfg, seed)?;
    let path = ctx.resolve(out);
    ensure_parent(&path)?;
    persist::save_dataset(&path, &ds)?;
    println!(
        "wrote {} ({} classes, {} train, {} query, {} gallery)",
        path.display(),
        ds.num_classes,
        ds.train.len(),
        ds.query.len(),
        ds.gallery.len()
    );
    Ok(())
}

fn checkpoint_of(t: &hbct::encoder::Trained, cfg: &ExperimentConfig) -> Checkpoint {
    Checkpoint {
        model: t.model.clone(),
        head: Some(t.head.clone()),
        curvature: cfg.curvature,
        zeta: cfg.clip.zeta(t.model.generation()),
    }
}

fn report_training(name: &str, path: &Path, t: &hbct::encoder::Trained) {
    let last = t.epoch_losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "wrote {name} model {} (generation {}, final loss {last:.4})",
        path.display(),
        t.model.generation()
    );
}

fn train_old_verb(ctx: &Context, data: &Path, seed: u64, out: &Path) -> Outcome {
    let cfg = &ctx.cfg;
    let ds = persist::load_dataset(&ctx.resolve(data))?;
    let (old_slice, _) = scenarios::scenario_slices(cfg, &ds, seed);
    let (arch, _) = scenarios::archs(cfg);
    let train = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let t = train_old(
        &old_slice,
        ds.num_classes,
        arch,
        &cfg.manifold()?,
        &cfg.clip,
        &train,
    )?;
    let path = ctx.resolve(out);
    ensure_parent(&path)?;
    persist::save_checkpoint(&path, &checkpoint_of(&t, cfg))?;
    report_training("old", &path, &t);
    Ok(())
}

fn check_geometry(ckpt: &Checkpoint, cfg: &ExperimentConfig, path: &Path) -> Outcome {
    if ckpt.curvature != cfg.curvature || ckpt.model.output_dim() != cfg.embed_dim {
        return Err(Failure::Usage(format!(
            "{} was trained for curvature {} and dimension {}, config has {} and {}",
            path.display(),
            ckpt.curvature,
            ckpt.model.output_dim(),
            cfg.curvature,
            cfg.embed_dim
        )));
    }
    Ok(())
}

fn train_new_verb(
    ctx: &Context,
    data: &Path,
    old: &Path,
    seed: u64,
    unaligned: bool,
    out: &Path,
) -> Outcome {
    let cfg = &ctx.cfg;
    let ds = persist::load_dataset(&ctx.resolve(data))?;
    let old_path = ctx.resolve(old);
    let old = persist::load_checkpoint(&old_path)?;
    check_geometry(&old, cfg, &old_path)?;
    let (_, new_slice) = scenarios::scenario_slices(cfg, &ds, seed);
    let (_, arch) = scenarios::archs(cfg);
    let align = if unaligned {
        AlignmentConfig {
            lambda: 0.0,
            ..cfg.alignment
        }
    } else {
        cfg.alignment
    };
    let train = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let t = train_new(
        &new_slice,
        ds.num_classes,
        arch,
        &old.model,
        &align,
        &cfg.manifold()?,
        &cfg.clip,
        &train,
    )?;
    let path = ctx.resolve(out);
    ensure_parent(&path)?;
    persist::save_checkpoint(&path, &checkpoint_of(&t, cfg))?;
    report_training(if unaligned { "unaligned" } else { "new" }, &path, &t);
    Ok(())
}

struct Splits {
    query: EmbeddingSet,
    gallery: EmbeddingSet,
}

fn embed_checkpoint(
    ctx: &Context,
    path: &Path,
    ds: &hbct::data::Dataset,
) -> Result<Splits, Failure> {
    let ckpt = persist::load_checkpoint(path)?;
    check_geometry(&ckpt, &ctx.cfg, path)?;
    let mcfg = ctx.cfg.manifold()?;
    let clip = &ctx.cfg.clip;
    Ok(Splits {
        query: embed_split(
            &ckpt.model,
            &ds.query.features,
            &ds.query.labels,
            clip,
            &mcfg,
        )?,
        gallery: embed_split(
            &ckpt.model,
            &ds.gallery.features,
            &ds.gallery.labels,
            clip,
            &mcfg,
        )?,
    })
}

fn evaluate_verb(
    ctx: &Context,
    data: &Path,
    old: &Path,
    new: &Path,
    star: Option<&Path>,
    embeddings: Option<&Path>,
) -> Outcome {
    let ds = persist::load_dataset(&ctx.resolve(data))?;
    let eo = embed_checkpoint(ctx, &ctx.resolve(old), &ds)?;
    let en = embed_checkpoint(ctx, &ctx.resolve(new), &ds)?;
    let es = star
        .map(|p| embed_checkpoint(ctx, &ctx.resolve(p), &ds))
        .transpose()?;
    let mut out =
        String::from("metric     self    cross old_self star_self      p_com       p_up\n");
    for m in METRICS {
        let old_self = m.score(&eo.query, &eo.gallery, ctx.exec)?;
        let new_self = m.score(&en.query, &en.gallery, ctx.exec)?;
        let cross = m.score(&en.query, &eo.gallery, ctx.exec)?;
        match &es {
            Some(es) => {
                let star_self = m.score(&es.query, &es.gallery, ctx.exec)?;
                let r = CompatReport::new(&m.name(), new_self, cross, old_self, star_self);
                let opt =
                    |v: Option<f64>| v.map_or_else(|| "degenerate".into(), |x| format!("{x:.4}"));
                let _ = writeln!(
                    out,
                    "{:<6} {:>8.4} {:>8.4} {:>8.4} {:>9.4} {:>10} {:>10}",
                    r.metric,
                    r.self_value,
                    r.cross_value,
                    r.old_self_value,
                    r.star_self_value,
                    opt(r.p_com),
                    opt(r.p_up)
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "{:<6} {new_self:>8.4} {cross:>8.4} {old_self:>8.4} {:>9} {:>10} {:>10}",
                    m.name(),
                    "-",
                    "-",
                    "-"
                );
            }
        }
    }
    print!("{out}");
    if let Some(dir) = embeddings {
        let dir = ctx.resolve(dir);
        std::fs::create_dir_all(&dir).map_err(HbctError::Io)?;
        let mut sets = vec![("old", &eo), ("new", &en)];
        if let Some(es) = &es {
            sets.push(("star", es));
        }
        for (name, s) in sets {
            persist::save_embeddings(&dir.join(format!("{name}_query.emb")), &s.query)?;
            persist::save_embeddings(&dir.join(format!("{name}_gallery.emb")), &s.gallery)?;
        }
        println!("wrote embedding stores to {}", dir.display());
    }
    Ok(())
}

fn scenario_verb(
    ctx: &Context,
    cfg: &ExperimentConfig,
) -> Result<scenarios::ScenarioResult, Failure> {
    let result = scenarios::run_scenario_with(cfg, ctx.exec)?;
    let summary =
        std::fs::read_to_string(result.output_dir.join("summary.txt")).map_err(HbctError::Io)?;
    print!("{summary}");
    println!("results in {}", result.output_dir.display());
    Ok(result)
}

fn matrix_verb(ctx: &Context, steps: Option<usize>) -> Outcome {
    let mut cfg = ctx.cfg.clone();
    cfg.set("scenario.kind", "sequential")?;
    if let Some(s) = steps {
        cfg.set("scenario.steps", &s.to_string())?;
    }
    let result = scenario_verb(ctx, &cfg)?;
    for run in &result.runs {
        if let Some((aligned, plain)) = &run.matrices {
            println!(
                "\nseed {} aligned chain\n{}",
                run.seed,
                report::matrix_table(aligned)
            );
            println!(
                "seed {} unaligned chain\n{}",
                run.seed,
                report::matrix_table(plain)
            );
        }
    }
    Ok(())
}

fn sweep_verb(ctx: &Context, key: &str, values: &[String]) -> Outcome {
    let mut probe = ctx.cfg.clone();
    for v in values {
        probe.set(key, v)?;
    }
    let table = scenarios::sweep(&ctx.cfg, key, values)?;
    print!("{}", report::sweep_table(&table));
    println!("results in {}", ctx.cfg.output_dir.display());
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let mut cfg = load_config(&cli)?;
    let root = cli
        .output_root
        .clone()
        .unwrap_or_else(|| PathBuf::from("."));
    cfg.output_dir = root.join(&cfg.output_dir);
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };
    let ctx = Context { cfg, root, exec };
    match &cli.verb {
        Verb::Generate { seed, out } => generate(&ctx, *seed, out),
        Verb::TrainOld { data, seed, out } => train_old_verb(&ctx, data, *seed, out),
        Verb::TrainNew {
            data,
            old,
            seed,
            unaligned,
            out,
        } => train_new_verb(&ctx, data, old, *seed, *unaligned, out),
        Verb::Evaluate {
            data,
            old,
            new,
            star,
            embeddings,
        } => evaluate_verb(&ctx, data, old, new, star.as_deref(), embeddings.as_deref()),
        Verb::Scenario => scenario_verb(&ctx, &ctx.cfg).map(|_| ()),
        Verb::Matrix { steps } => matrix_verb(&ctx, *steps),
        Verb::Sweep { key, values } => sweep_verb(&ctx, key, values),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
