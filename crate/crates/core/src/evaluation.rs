//! Exact retrieval evaluation and compatibility metrics.
//!
//! Lorentz embeddings are ranked by geodesic distance and Euclidean ones by
//! cosine distance. Rankings are exhaustive scans with ties broken by gallery
//! index, so every metric is deterministic.

use log::warn;

use crate::encoder::{embed_all, ClipPolicy, EncoderModel};
use crate::error::{HbctError, Result};
use crate::manifold::{self, EuclideanEmbedding, LorentzPoint, ManifoldConfig};
use crate::par::{ordered_sum, Exec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Geometry {
    Lorentz,
    Euclidean,
}

impl Geometry {
    pub fn tag(self) -> u32 {
        match self {
            Geometry::Lorentz => 0,
            Geometry::Euclidean => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(Geometry::Lorentz),
            1 => Ok(Geometry::Euclidean),
            t => Err(HbctError::Format(format!("unknown geometry tag {t}"))),
        }
    }
}

/// Labelled embeddings of one split produced by one model generation.
///
/// Lorentz rows hold ambient coordinates `[time, space...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    geometry: Geometry,
    curvature: f64,
    generation: u32,
    dim: usize,
    rows: Vec<Vec<f64>>,
    labels: Vec<u32>,
}

impl EmbeddingSet {
    pub fn new(
        geometry: Geometry,
        curvature: f64,
        generation: u32,
        rows: Vec<Vec<f64>>,
        labels: Vec<u32>,
    ) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(HbctError::invalid(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let dim = rows.first().map_or(0, Vec::len);
        if rows
            .iter()
            .any(|r| r.len() != dim || r.iter().any(|v| !v.is_finite()))
        {
            return Err(HbctError::invalid(
                "rows must be finite and of equal length",
            ));
        }
        if geometry == Geometry::Lorentz && (curvature.is_nan() || curvature <= 0.0) {
            return Err(HbctError::invalid("Lorentz sets need a positive curvature"));
        }
        Ok(Self {
            geometry,
            curvature,
            generation,
            dim,
            rows,
            labels,
        })
    }

    pub fn from_lorentz(
        points: &[LorentzPoint],
        labels: &[usize],
        cfg: &ManifoldConfig,
        generation: u32,
    ) -> Result<Self> {
        let rows = points.iter().map(LorentzPoint::to_ambient).collect();
        Self::new(
            Geometry::Lorentz,
            cfg.curvature(),
            generation,
            rows,
            to_u32(labels),
        )
    }

    pub fn from_euclidean(
        points: &[EuclideanEmbedding],
        labels: &[usize],
        generation: u32,
    ) -> Result<Self> {
        let rows = points.iter().map(|p| p.values.clone()).collect();
        Self::new(Geometry::Euclidean, 0.0, generation, rows, to_u32(labels))
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    pub fn generation(&self) -> u32 {
        self.generation
    }

    /// Coordinates per row.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn query(&self, i: usize) -> Query<'_> {
        Query {
            geometry: self.geometry,
            curvature: self.curvature,
            coords: &self.rows[i],
        }
    }

    fn check_compatible(&self, other: &EmbeddingSet) -> Result<()> {
        if self.geometry != other.geometry {
            return Err(HbctError::invalid("query and gallery geometries differ"));
        }
        if self.dim != other.dim {
            return Err(HbctError::invalid("query and gallery dimensions differ"));
        }
        if self.geometry == Geometry::Lorentz && self.curvature != other.curvature {
            return Err(HbctError::invalid("query and gallery curvatures differ"));
        }
        Ok(())
    }
}

fn to_u32(labels: &[usize]) -> Vec<u32> {
    labels.iter().map(|&l| l as u32).collect()
}

/// A single query embedding.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub geometry: Geometry,
    pub curvature: f64,
    pub coords: &'a [f64],
}

/// `1 - cos(a, b)`; a zero vector is at distance 1 from everything.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot / (na.sqrt() * nb.sqrt())
}

fn distances(query: Query<'_>, gallery: &EmbeddingSet) -> Result<Vec<f64>> {
    if query.geometry != gallery.geometry {
        return Err(HbctError::invalid("query and gallery geometries differ"));
    }
    if query.coords.len() != gallery.dim {
        return Err(HbctError::invalid("query and gallery dimensions differ"));
    }
    match gallery.geometry {
        Geometry::Lorentz => {
            if query.curvature != gallery.curvature {
                return Err(HbctError::invalid("query and gallery curvatures differ"));
            }
            gallery
                .rows
                .iter()
                .map(|g| manifold::geodesic_distance_ambient(query.coords, g, gallery.curvature))
                .collect()
        }
        Geometry::Euclidean => Ok(gallery
            .rows
            .iter()
            .map(|g| cosine_distance(query.coords, g))
            .collect()),
    }
}

/// Gallery indices sorted by ascending distance, ties by ascending index.
/// `exclude` drops one gallery index (the query itself in self-retrieval).
pub fn retrieve_excluding(
    query: Query<'_>,
    gallery: &EmbeddingSet,
    exclude: Option<usize>,
) -> Result<Vec<usize>> {
    if gallery.is_empty() {
        return Err(HbctError::invalid("gallery is empty"));
    }
    let dist = distances(query, gallery)?;
    let mut order: Vec<usize> = (0..gallery.len()).filter(|&i| Some(i) != exclude).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    Ok(order)
}

pub fn retrieve(query: Query<'_>, gallery: &EmbeddingSet) -> Result<Vec<usize>> {
    retrieve_excluding(query, gallery, None)
}

/// Per-query outcome of a ranking.
#[derive(Debug, Clone, Copy, PartialEq)]
struct QueryOutcome {
    /// 0-based rank of the first same-label item.
    first_hit: Option<usize>,
    /// Average precision; `None` when the gallery holds no relevant item.
    average_precision: Option<f64>,
}

fn outcome(ranking: &[usize], gallery_labels: &[u32], label: u32) -> QueryOutcome {
    let mut first_hit = None;
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    for (r, &g) in ranking.iter().enumerate() {
        if gallery_labels[g] == label {
            hits += 1;
            precision_sum += hits as f64 / (r + 1) as f64;
            first_hit.get_or_insert(r);
        }
    }
    QueryOutcome {
        first_hit,
        average_precision: (hits > 0).then(|| precision_sum / hits as f64),
    }
}

fn outcomes(
    queries: &EmbeddingSet,
    gallery: &EmbeddingSet,
    exec: Exec,
) -> Result<Vec<QueryOutcome>> {
    queries.check_compatible(gallery)?;
    if gallery.is_empty() {
        return Err(HbctError::invalid("gallery is empty"));
    }
    // self-retrieval on the very same set: a query may not retrieve itself
    let same = std::ptr::eq(queries, gallery);
    let per_query = exec.map_range(queries.len(), |qi| {
        let exclude = same.then_some(qi);
        retrieve_excluding(queries.query(qi), gallery, exclude)
            .map(|ranking| outcome(&ranking, &gallery.labels, queries.labels[qi]))
    });
    per_query.into_iter().collect()
}

/// Retrieval metrics for one query/gallery pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalSummary {
    /// `cmc[k - 1]` is CMC@k.
    pub cmc: Vec<f64>,
    pub map: f64,
    /// Queries without any relevant gallery item (excluded from mAP).
    pub skipped_queries: usize,
}

impl RetrievalSummary {
    pub fn cmc_at(&self, k: usize) -> f64 {
        self.cmc[(k - 1).min(self.cmc.len() - 1)]
    }
}

/// CMC@1..=max_k and mAP from a single ranking per query.
pub fn evaluate(
    queries: &EmbeddingSet,
    gallery: &EmbeddingSet,
    max_k: usize,
    exec: Exec,
) -> Result<RetrievalSummary> {
    if max_k == 0 {
        return Err(HbctError::invalid("k must be at least 1"));
    }
    if queries.is_empty() {
        return Err(HbctError::invalid("no queries"));
    }
    let out = outcomes(queries, gallery, exec)?;
    let n = out.len() as f64;
    let cmc = (1..=max_k)
        .map(|k| {
            out.iter()
                .filter(|o| o.first_hit.is_some_and(|r| r < k))
                .count() as f64
                / n
        })
        .collect();
    let aps: Vec<f64> = out.iter().filter_map(|o| o.average_precision).collect();
    let skipped = out.len() - aps.len();
    if skipped > 0 {
        warn!("{skipped} queries have no relevant gallery item and are excluded from mAP");
    }
    let map = if aps.is_empty() {
        f64::NAN
    } else {
        ordered_sum(&aps) / aps.len() as f64
    };
    Ok(RetrievalSummary {
        cmc,
        map,
        skipped_queries: skipped,
    })
}

/// Fraction of queries with a same-label gallery item among the top `k`.
pub fn cmc_at_k(queries: &EmbeddingSet, gallery: &EmbeddingSet, k: usize) -> Result<f64> {
    Ok(evaluate(queries, gallery, k, Exec::default())?.cmc_at(k))
}

/// Mean over queries of the average precision of the full ranking.
pub fn mean_average_precision(queries: &EmbeddingSet, gallery: &EmbeddingSet) -> Result<f64> {
    let s = evaluate(queries, gallery, 1, Exec::default())?;
    if s.map.is_nan() {
        return Err(HbctError::invalid("no query has a relevant gallery item"));
    }
    Ok(s.map)
}

/// Normalized compatibility gain
/// `(new_cross - old_self) / (star_self - old_self)`.
pub fn p_com(new_cross: f64, old_self: f64, star_self: f64) -> Result<f64> {
    let denom = star_self - old_self;
    if denom.abs() <= 1e-12 {
        return Err(HbctError::DegenerateBaseline(format!(
            "unaligned model and old model score the same ({star_self})"
        )));
    }
    Ok((new_cross - old_self) / denom)
}

/// Relative self-retrieval change against the unaligned model,
/// `(new_self - star_self) / star_self`.
pub fn p_up(new_self: f64, star_self: f64) -> Result<f64> {
    if star_self.abs() <= 1e-12 {
        return Err(HbctError::DegenerateBaseline(
            "unaligned model scores zero".into(),
        ));
    }
    Ok((new_self - star_self) / star_self)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Cmc(usize),
    Map,
}

impl Metric {
    pub fn name(&self) -> String {
        match self {
            Metric::Cmc(k) => format!("cmc@{k}"),
            Metric::Map => "map".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "map" {
            return Ok(Metric::Map);
        }
        s.strip_prefix("cmc@")
            .and_then(|k| k.parse().ok())
            .filter(|&k| k > 0)
            .map(Metric::Cmc)
            .ok_or_else(|| HbctError::Config(format!("unknown metric {s:?}")))
    }

    pub fn score(&self, queries: &EmbeddingSet, gallery: &EmbeddingSet, exec: Exec) -> Result<f64> {
        match *self {
            Metric::Cmc(k) => Ok(evaluate(queries, gallery, k, exec)?.cmc_at(k)),
            Metric::Map => {
                let s = evaluate(queries, gallery, 1, exec)?;
                if s.map.is_nan() {
                    return Err(HbctError::invalid("no query has a relevant gallery item"));
                }
                Ok(s.map)
            }
        }
    }
}

/// Raw retrieval scores for one metric and the derived compatibility values.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatReport {
    pub metric: String,
    /// `M(new(Q); new(G))`
    pub self_value: f64,
    /// `M(new(Q); old(G))`
    pub cross_value: f64,
    /// `M(old(Q); old(G))`
    pub old_self_value: f64,
    /// `M(star(Q); star(G))`, the unaligned new model.
    pub star_self_value: f64,
    /// `None` when the baseline is degenerate.
    pub p_com: Option<f64>,
    pub p_up: Option<f64>,
}

impl CompatReport {
    pub fn new(
        metric: &str,
        self_value: f64,
        cross_value: f64,
        old_self_value: f64,
        star_self_value: f64,
    ) -> Self {
        Self {
            metric: metric.to_string(),
            self_value,
            cross_value,
            old_self_value,
            star_self_value,
            p_com: p_com(cross_value, old_self_value, star_self_value).ok(),
            p_up: p_up(self_value, star_self_value).ok(),
        }
    }
}

/// Embeds a split with one model generation.
pub fn embed_split(
    model: &EncoderModel,
    features: &[Vec<f64>],
    labels: &[usize],
    clip: &ClipPolicy,
    cfg: &ManifoldConfig,
) -> Result<EmbeddingSet> {
    let points: Vec<LorentzPoint> = embed_all(model, features, clip, cfg)?
        .into_iter()
        .map(|(_, h)| h)
        .collect();
    EmbeddingSet::from_lorentz(&points, labels, cfg, model.generation())
}

/// Compatibility matrix over a sequence of generations.
///
/// Entry `(i, j)` uses queries embedded by generation `i` and a gallery
/// embedded by generation `j`. With `M(i, j)` the metric and `S(i)` the
/// self score of the unaligned anchor for generation `i`:
///
/// * below the diagonal: `(M(i, j) - M(j, j)) / (S(i) - M(j, j))`,
/// * above the diagonal: `(M(i, j) - M(i, i)) / (S(j) - M(i, i))`,
/// * on the diagonal: `(M(i, i) - M(i-1, i-1)) / (S(i) - M(i-1, i-1))`, the
///   self-retrieval gain of update `i`, and 1 for the first generation.
///
/// Entries whose denominator vanishes are NaN and logged.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatMatrix {
    pub generations: Vec<u32>,
    pub raw: Vec<Vec<f64>>,
    pub anchors: Vec<f64>,
    pub p_com: Vec<Vec<f64>>,
}

pub fn compatibility_matrix(
    query_sets: &[EmbeddingSet],
    gallery_sets: &[EmbeddingSet],
    anchor_self: &[f64],
    metric: Metric,
    exec: Exec,
) -> Result<CompatMatrix> {
    let n = query_sets.len();
    if n < 2 {
        return Err(HbctError::invalid(
            "a compatibility matrix needs at least two generations",
        ));
    }
    if gallery_sets.len() != n || anchor_self.len() != n {
        return Err(HbctError::invalid(
            "one query set, gallery set and anchor per generation",
        ));
    }
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let scores = exec.map(&cells, |&(i, j)| {
        metric.score(&query_sets[i], &gallery_sets[j], Exec::Sequential)
    });
    let mut raw = vec![vec![0.0; n]; n];
    for (&(i, j), s) in cells.iter().zip(scores) {
        raw[i][j] = s?;
    }
    let gain = |cross: f64, base: f64, anchor: f64, i: usize, j: usize| -> Result<f64> {
        match p_com(cross, base, anchor) {
            Ok(v) => Ok(v),
            Err(HbctError::DegenerateBaseline(msg)) => {
                warn!("compatibility entry ({i}, {j}) undefined: {msg}");
                Ok(f64::NAN)
            }
            Err(e) => Err(e),
        }
    };
    let mut p = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            p[i][j] = if i > j {
                gain(raw[i][j], raw[j][j], anchor_self[i], i, j)?
            } else if i < j {
                gain(raw[i][j], raw[i][i], anchor_self[j], i, j)?
            } else if i == 0 {
                1.0
            } else {
                gain(raw[i][i], raw[i - 1][i - 1], anchor_self[i], i, j)?
            };
        }
    }
    Ok(CompatMatrix {
        generations: query_sets.iter().map(EmbeddingSet::generation).collect(),
        raw,
        anchors: anchor_self.to_vec(),
        p_com: p,
    })
}

impl CompatMatrix {
    /// Mean of the entries below the diagonal (new queries, older galleries).
    pub fn mean_sub_diagonal(&self) -> f64 {
        let vals: Vec<f64> = (0..self.p_com.len())
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| self.p_com[i][j])
            .collect();
        ordered_sum(&vals) / vals.len() as f64
    }
}
