//! Update scenarios on synthetic data: train the old, unaligned and aligned
//! models, evaluate every retrieval pairing and write the artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::config::{ExperimentConfig, ScenarioKind};
use crate::data::{generate_dataset, Dataset, Samples, SyntheticDatasetSpec};
use crate::encoder::{train_new, train_old, Arch, Trained};
use crate::error::{HbctError, Result};
use crate::evaluation::{
    compatibility_matrix, embed_split, CompatMatrix, CompatReport, EmbeddingSet, Metric,
};
use crate::losses::AlignmentConfig;
use crate::manifold::{self, ManifoldConfig};
use crate::par::Exec;
use crate::persist::{save_checkpoint, save_embeddings, Checkpoint};
use crate::report;

/// Metrics reported for every run.
pub const METRICS: [Metric; 3] = [Metric::Cmc(1), Metric::Cmc(5), Metric::Map];

/// Old and new training slices of a two-model scenario.
pub fn scenario_slices(cfg: &ExperimentConfig, ds: &Dataset, seed: u64) -> (Samples, Samples) {
    let s = &cfg.scenario;
    let old_classes = old_class_count(cfg);
    match s.kind {
        ScenarioKind::ExtData => (
            ds.train.random_fraction(s.old_fraction, seed),
            ds.train.clone(),
        ),
        ScenarioKind::ExtClass | ScenarioKind::Both => {
            (ds.train.first_classes(old_classes), ds.train.clone())
        }
        ScenarioKind::NewArch | ScenarioKind::Sequential => (ds.train.clone(), ds.train.clone()),
    }
}

/// Classes the old model trains on.
pub fn old_class_count(cfg: &ExperimentConfig) -> usize {
    let n = cfg.dataset.num_classes;
    match cfg.scenario.kind {
        ScenarioKind::ExtClass | ScenarioKind::Both => {
            ((n as f64 * cfg.scenario.class_fraction).round() as usize).clamp(1, n)
        }
        ScenarioKind::Sequential => sequential_class_counts(n, cfg.scenario.steps)[0],
        _ => n,
    }
}

/// Classes seen by each generation of a sequential run.
pub fn sequential_class_counts(num_classes: usize, steps: usize) -> Vec<usize> {
    (1..=steps)
        .map(|i| ((num_classes * i) as f64 / steps as f64).round().max(1.0) as usize)
        .collect()
}

/// Old and new encoder architectures of a scenario. Data-only scenarios keep
/// the old architecture.
pub fn archs(cfg: &ExperimentConfig) -> (&Arch, &Arch) {
    let s = &cfg.scenario;
    match s.kind {
        ScenarioKind::ExtData | ScenarioKind::ExtClass => (&s.old_arch, &s.old_arch),
        _ => (&s.old_arch, &s.new_arch),
    }
}

/// Query and gallery embeddings of one model.
#[derive(Debug, Clone)]
pub struct Embedded {
    pub query: EmbeddingSet,
    pub gallery: EmbeddingSet,
}

/// Outcome of one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    /// Aligned model as the new model, one report per metric.
    pub hbct: Vec<CompatReport>,
    /// Unaligned model as the new model, one report per metric.
    pub baseline: Vec<CompatReport>,
    /// Old-model uncertainty of gallery items from classes it trained on.
    pub uncertainty_seen: Vec<f64>,
    /// Old-model uncertainty of gallery items from classes it never saw.
    pub uncertainty_unseen: Vec<f64>,
    /// Aligned-model uncertainty of all gallery items.
    pub uncertainty_new: Vec<f64>,
    /// Sequential runs: matrices of the aligned and unaligned chains.
    pub matrices: Option<(CompatMatrix, CompatMatrix)>,
}

impl SeedRun {
    pub fn report(&self, metric: &str) -> Option<&CompatReport> {
        self.hbct.iter().find(|r| r.metric == metric)
    }

    pub fn baseline_report(&self, metric: &str) -> Option<&CompatReport> {
        self.baseline.iter().find(|r| r.metric == metric)
    }
}

/// Median of the finite values; `None` when there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// Per-metric medians over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub metric: String,
    pub self_value: Option<f64>,
    pub cross_value: Option<f64>,
    pub old_self_value: Option<f64>,
    pub star_self_value: Option<f64>,
    pub star_cross_value: Option<f64>,
    pub p_com: Option<f64>,
    pub p_up: Option<f64>,
    pub baseline_p_com: Option<f64>,
    /// Seeds whose compatibility gain is undefined.
    pub degenerate_seeds: usize,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub kind: ScenarioKind,
    pub runs: Vec<SeedRun>,
    pub summary: Vec<MetricSummary>,
    pub output_dir: PathBuf,
}

impl ScenarioResult {
    pub fn summary_for(&self, metric: &str) -> Option<&MetricSummary> {
        self.summary.iter().find(|s| s.metric == metric)
    }
}

fn summarize(runs: &[SeedRun]) -> Vec<MetricSummary> {
    METRICS
        .iter()
        .map(|m| {
            let name = m.name();
            let h: Vec<&CompatReport> = runs.iter().filter_map(|r| r.report(&name)).collect();
            let b: Vec<&CompatReport> = runs
                .iter()
                .filter_map(|r| r.baseline_report(&name))
                .collect();
            MetricSummary {
                self_value: median(h.iter().map(|r| r.self_value)),
                cross_value: median(h.iter().map(|r| r.cross_value)),
                old_self_value: median(h.iter().map(|r| r.old_self_value)),
                star_self_value: median(h.iter().map(|r| r.star_self_value)),
                star_cross_value: median(b.iter().map(|r| r.cross_value)),
                p_com: median(h.iter().filter_map(|r| r.p_com)),
                p_up: median(h.iter().filter_map(|r| r.p_up)),
                baseline_p_com: median(b.iter().filter_map(|r| r.p_com)),
                degenerate_seeds: h.iter().filter(|r| r.p_com.is_none()).count(),
                metric: name,
            }
        })
        .collect()
}

fn embed_model(
    t: &Trained,
    ds: &Dataset,
    cfg: &ExperimentConfig,
    mcfg: &ManifoldConfig,
) -> Result<Embedded> {
    Ok(Embedded {
        query: embed_split(
            &t.model,
            &ds.query.features,
            &ds.query.labels,
            &cfg.clip,
            mcfg,
        )?,
        gallery: embed_split(
            &t.model,
            &ds.gallery.features,
            &ds.gallery.labels,
            &cfg.clip,
            mcfg,
        )?,
    })
}

fn score(metric: Metric, q: &EmbeddingSet, g: &EmbeddingSet) -> Result<f64> {
    metric.score(q, g, Exec::Sequential)
}

fn with_context(e: HbctError, seed: u64, what: &str) -> HbctError {
    match e {
        HbctError::TrainingFailure { step, reason } => HbctError::TrainingFailure {
            step,
            reason: format!("seed {seed}, {what}: {reason}"),
        },
        other => other,
    }
}

fn checkpoint(t: &Trained, cfg: &ExperimentConfig) -> Checkpoint {
    Checkpoint {
        model: t.model.clone(),
        head: Some(t.head.clone()),
        curvature: cfg.curvature,
        zeta: cfg.clip.zeta(t.model.generation()),
    }
}

fn save_model(
    dir: &Path,
    name: &str,
    t: &Trained,
    e: &Embedded,
    cfg: &ExperimentConfig,
) -> Result<()> {
    save_checkpoint(&dir.join(format!("{name}.ckpt")), &checkpoint(t, cfg))?;
    save_embeddings(&dir.join(format!("{name}_query.emb")), &e.query)?;
    save_embeddings(&dir.join(format!("{name}_gallery.emb")), &e.gallery)
}

/// Dataset of one seed.
pub fn seed_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    generate_dataset(&SyntheticDatasetSpec {
        seed,
        ..cfg.dataset.clone()
    })
}

/// Trains and evaluates one seed. Artifacts go to `dir` when given.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: Option<&Path>) -> Result<SeedRun> {
    if cfg.scenario.kind == ScenarioKind::Sequential {
        return run_sequential_seed(cfg, seed, dir);
    }
    let mcfg = cfg.manifold()?;
    let ds = seed_dataset(cfg, seed)?;
    let (old_slice, new_slice) = scenario_slices(cfg, &ds, seed);
    let (old_arch, new_arch) = archs(cfg);
    let train = crate::encoder::TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let n = ds.num_classes;
    let unaligned = AlignmentConfig {
        lambda: 0.0,
        ..cfg.alignment
    };

    let old = train_old(&old_slice, n, old_arch, &mcfg, &cfg.clip, &train)
        .map_err(|e| with_context(e, seed, "old model"))?;
    let star = train_new(
        &new_slice, n, new_arch, &old.model, &unaligned, &mcfg, &cfg.clip, &train,
    )
    .map_err(|e| with_context(e, seed, "unaligned model"))?;
    let new = train_new(
        &new_slice,
        n,
        new_arch,
        &old.model,
        &cfg.alignment,
        &mcfg,
        &cfg.clip,
        &train,
    )
    .map_err(|e| with_context(e, seed, "aligned model"))?;

    let eo = embed_model(&old, &ds, cfg, &mcfg)?;
    let es = embed_model(&star, &ds, cfg, &mcfg)?;
    let en = embed_model(&new, &ds, cfg, &mcfg)?;

    let mut hbct = Vec::new();
    let mut baseline = Vec::new();
    for m in METRICS {
        let old_self = score(m, &eo.query, &eo.gallery)?;
        let star_self = score(m, &es.query, &es.gallery)?;
        let new_self = score(m, &en.query, &en.gallery)?;
        let cross = score(m, &en.query, &eo.gallery)?;
        let star_cross = score(m, &es.query, &eo.gallery)?;
        let name = m.name();
        let r = CompatReport::new(&name, new_self, cross, old_self, star_self);
        if r.p_com.is_none() {
            warn!("seed {seed}: {name} of the unaligned and old models coincide; compatibility gain undefined");
        }
        hbct.push(r);
        baseline.push(CompatReport::new(
            &name, star_self, star_cross, old_self, star_self,
        ));
    }

    let seen = old_class_count(cfg);
    let (mut uncertainty_seen, mut uncertainty_unseen) = (Vec::new(), Vec::new());
    for (row, &label) in eo.gallery.rows().iter().zip(eo.gallery.labels()) {
        let u = row_uncertainty(row, &mcfg);
        if (label as usize) < seen {
            uncertainty_seen.push(u);
        } else {
            uncertainty_unseen.push(u);
        }
    }
    let uncertainty_new = en
        .gallery
        .rows()
        .iter()
        .map(|r| row_uncertainty(r, &mcfg))
        .collect();

    let run = SeedRun {
        seed,
        hbct,
        baseline,
        uncertainty_seen,
        uncertainty_unseen,
        uncertainty_new,
        matrices: None,
    };
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
        save_model(dir, "old", &old, &eo, cfg)?;
        save_model(dir, "star", &star, &es, cfg)?;
        save_model(dir, "new", &new, &en, cfg)?;
        report::write_seed_reports(dir, cfg, &run)?;
    }
    Ok(run)
}

fn row_uncertainty(row: &[f64], mcfg: &ManifoldConfig) -> f64 {
    let space: f64 = row[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    1.0 - space / (mcfg.sqrt_k() * row[0])
}

fn run_sequential_seed(cfg: &ExperimentConfig, seed: u64, dir: Option<&Path>) -> Result<SeedRun> {
    let mcfg = cfg.manifold()?;
    let ds = seed_dataset(cfg, seed)?;
    let train = crate::encoder::TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let n = ds.num_classes;
    let counts = sequential_class_counts(n, cfg.scenario.steps);
    let unaligned = AlignmentConfig {
        lambda: 0.0,
        ..cfg.alignment
    };
    let s = &cfg.scenario;

    let first = ds.train.first_classes(counts[0]);
    let gen0 = train_old(&first, n, &s.old_arch, &mcfg, &cfg.clip, &train)
        .map_err(|e| with_context(e, seed, "generation 0"))?;
    let mut aligned = vec![gen0.clone()];
    let mut plain = vec![gen0];
    for (g, &c) in counts.iter().enumerate().skip(1) {
        let slice = ds.train.first_classes(c);
        let what = format!("generation {g}");
        let a = train_new(
            &slice,
            n,
            &s.new_arch,
            &aligned[g - 1].model,
            &cfg.alignment,
            &mcfg,
            &cfg.clip,
            &train,
        )
        .map_err(|e| with_context(e, seed, &what))?;
        let p = train_new(
            &slice,
            n,
            &s.new_arch,
            &plain[g - 1].model,
            &unaligned,
            &mcfg,
            &cfg.clip,
            &train,
        )
        .map_err(|e| with_context(e, seed, &what))?;
        aligned.push(a);
        plain.push(p);
    }
    let ea: Vec<Embedded> = aligned
        .iter()
        .map(|t| embed_model(t, &ds, cfg, &mcfg))
        .collect::<Result<_>>()?;
    let ep: Vec<Embedded> = plain
        .iter()
        .map(|t| embed_model(t, &ds, cfg, &mcfg))
        .collect::<Result<_>>()?;

    let metric = Metric::Cmc(1);
    let anchors: Vec<f64> = ep
        .iter()
        .map(|e| score(metric, &e.query, &e.gallery))
        .collect::<Result<_>>()?;
    let split = |es: &[Embedded]| -> (Vec<EmbeddingSet>, Vec<EmbeddingSet>) {
        (
            es.iter().map(|e| e.query.clone()).collect(),
            es.iter().map(|e| e.gallery.clone()).collect(),
        )
    };
    let (qa, ga) = split(&ea);
    let (qp, gp) = split(&ep);
    let ma = compatibility_matrix(&qa, &ga, &anchors, metric, Exec::Sequential)?;
    let mp = compatibility_matrix(&qp, &gp, &anchors, metric, Exec::Sequential)?;

    // reports of the last update against its predecessor
    let last = counts.len() - 1;
    let mut hbct = Vec::new();
    let mut baseline = Vec::new();
    for m in METRICS {
        let name = m.name();
        let star_self = score(m, &ep[last].query, &ep[last].gallery)?;
        hbct.push(CompatReport::new(
            &name,
            score(m, &ea[last].query, &ea[last].gallery)?,
            score(m, &ea[last].query, &ea[last - 1].gallery)?,
            score(m, &ea[last - 1].query, &ea[last - 1].gallery)?,
            star_self,
        ));
        baseline.push(CompatReport::new(
            &name,
            star_self,
            score(m, &ep[last].query, &ep[last - 1].gallery)?,
            score(m, &ep[last - 1].query, &ep[last - 1].gallery)?,
            star_self,
        ));
    }
    let seen = counts[0];
    let (mut uncertainty_seen, mut uncertainty_unseen) = (Vec::new(), Vec::new());
    for (row, &label) in ea[0].gallery.rows().iter().zip(ea[0].gallery.labels()) {
        let u = row_uncertainty(row, &mcfg);
        if (label as usize) < seen {
            uncertainty_seen.push(u);
        } else {
            uncertainty_unseen.push(u);
        }
    }
    let run = SeedRun {
        seed,
        hbct,
        baseline,
        uncertainty_seen,
        uncertainty_unseen,
        uncertainty_new: ea[last]
            .gallery
            .rows()
            .iter()
            .map(|r| row_uncertainty(r, &mcfg))
            .collect(),
        matrices: Some((ma, mp)),
    };
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
        for g in 0..aligned.len() {
            save_model(dir, &format!("gen{g}_hbct"), &aligned[g], &ea[g], cfg)?;
            if g > 0 {
                save_model(dir, &format!("gen{g}_star"), &plain[g], &ep[g], cfg)?;
            }
        }
        report::write_seed_reports(dir, cfg, &run)?;
    }
    Ok(run)
}

/// Runs every seed (concurrently when parallel execution is enabled) and
/// writes per-seed directories plus a summary under the output directory.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<ScenarioResult> {
    run_scenario_with(cfg, Exec::default())
}

pub fn run_scenario_with(cfg: &ExperimentConfig, exec: Exec) -> Result<ScenarioResult> {
    cfg.validate()?;
    let root = cfg.output_dir.clone();
    fs::create_dir_all(&root)?;
    fs::write(root.join("config.txt"), cfg.to_text())?;
    info!(
        "running {} over {} seeds",
        cfg.scenario.kind.name(),
        cfg.seeds.len()
    );
    let runs = exec
        .map(&cfg.seeds, |&seed| {
            run_seed(cfg, seed, Some(&root.join(format!("seed-{seed}"))))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let result = ScenarioResult {
        kind: cfg.scenario.kind,
        summary: summarize(&runs),
        runs,
        output_dir: root.clone(),
    };
    report::write_summary(&root, cfg, &result)?;
    report::emit_plots(&report::scenario_plots(&result), &root.join("plots"))?;
    Ok(result)
}

/// One row of a hyperparameter sweep: medians of the CMC@1 report.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub self_value: Option<f64>,
    pub cross_value: Option<f64>,
    pub p_com: Option<f64>,
    pub p_up: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub key: String,
    pub rows: Vec<SweepRow>,
}

/// Runs the scenario once per value of `key`, each in its own directory.
pub fn sweep(cfg: &ExperimentConfig, key: &str, values: &[String]) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(HbctError::Config("a sweep needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let mut c = cfg.clone();
        c.set(key, value)?;
        c.output_dir = cfg.output_dir.join(format!("{}={}", key, value.trim()));
        let result = run_scenario(&c)?;
        let s = result
            .summary_for("cmc@1")
            .ok_or_else(|| HbctError::invalid("missing cmc@1 summary"))?;
        rows.push(SweepRow {
            value: value.trim().to_string(),
            self_value: s.self_value,
            cross_value: s.cross_value,
            p_com: s.p_com,
            p_up: s.p_up,
        });
    }
    let table = SweepTable {
        key: key.to_string(),
        rows,
    };
    report::write_sweep(&cfg.output_dir, &table)?;
    report::emit_plots(
        &[report::Plot::Sweep(table.clone())],
        &cfg.output_dir.join("plots"),
    )?;
    Ok(table)
}

/// Old-model gallery uncertainty of one seed split into seen and unseen
/// classes, without training the new models.
pub fn old_model_uncertainty(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mcfg = cfg.manifold()?;
    let ds = seed_dataset(cfg, seed)?;
    let (old_slice, _) = scenario_slices(cfg, &ds, seed);
    let train = crate::encoder::TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let old = train_old(
        &old_slice,
        ds.num_classes,
        &cfg.scenario.old_arch,
        &mcfg,
        &cfg.clip,
        &train,
    )?;
    let seen = old_class_count(cfg);
    let mut out = (Vec::new(), Vec::new());
    for (x, &y) in ds.gallery.features.iter().zip(&ds.gallery.labels) {
        let (_, h) = crate::encoder::embed(&old.model, x, &cfg.clip, &mcfg)?;
        let u = manifold::uncertainty(&h, &mcfg);
        if y < seen {
            out.0.push(u);
        } else {
            out.1.push(u);
        }
    }
    Ok(out)
}
