//! Text reports, key/value files and SVG figures.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::evaluation::{CompatMatrix, CompatReport};
use crate::scenarios::{ScenarioResult, SeedRun, SweepTable};

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "degenerate".to_string(), |x| format!("{x:.4}"))
}

fn kv_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| format!("{x:?}"))
}

fn report_rows(out: &mut String, label: &str, reports: &[CompatReport]) {
    for r in reports {
        let _ = writeln!(
            out,
            "{:<9} {:<6} {:>8.4} {:>8.4} {:>8.4} {:>9.4} {:>10} {:>10}",
            label,
            r.metric,
            r.self_value,
            r.cross_value,
            r.old_self_value,
            r.star_self_value,
            fmt_opt(r.p_com),
            fmt_opt(r.p_up)
        );
    }
}

fn report_kv(out: &mut String, prefix: &str, reports: &[CompatReport]) {
    for r in reports {
        let p = format!("{prefix}.{}", r.metric);
        let _ = writeln!(out, "{p}.self = {:?}", r.self_value);
        let _ = writeln!(out, "{p}.cross = {:?}", r.cross_value);
        let _ = writeln!(out, "{p}.old_self = {:?}", r.old_self_value);
        let _ = writeln!(out, "{p}.star_self = {:?}", r.star_self_value);
        let _ = writeln!(out, "{p}.p_com = {}", kv_opt(r.p_com));
        let _ = writeln!(out, "{p}.p_up = {}", kv_opt(r.p_up));
    }
}

const TABLE_HEADER: &str =
    "model     metric     self    cross old_self star_self      p_com       p_up";

pub fn write_seed_reports(dir: &Path, cfg: &ExperimentConfig, run: &SeedRun) -> Result<()> {
    let mut txt = format!(
        "scenario {} seed {}\n\n{TABLE_HEADER}\n",
        cfg.scenario.kind.name(),
        run.seed
    );
    report_rows(&mut txt, "hbct", &run.hbct);
    report_rows(&mut txt, "baseline", &run.baseline);
    let mut kv = format!(
        "scenario = {}\nseed = {}\n",
        cfg.scenario.kind.name(),
        run.seed
    );
    report_kv(&mut kv, "hbct", &run.hbct);
    report_kv(&mut kv, "baseline", &run.baseline);
    if let Some((a, p)) = &run.matrices {
        txt.push_str("\naligned chain\n");
        txt.push_str(&matrix_table(a));
        txt.push_str("\nunaligned chain\n");
        txt.push_str(&matrix_table(p));
        fs::write(dir.join("matrix_hbct.txt"), matrix_table(a))?;
        fs::write(dir.join("matrix_baseline.txt"), matrix_table(p))?;
        for (name, m) in [("hbct", a), ("baseline", p)] {
            for (i, row) in m.p_com.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    let _ = writeln!(kv, "matrix.{name}.{i}.{j} = {v:?}");
                }
            }
        }
    }
    fs::write(dir.join("report.txt"), txt)?;
    fs::write(dir.join("report.kv"), kv)?;
    Ok(())
}

pub fn write_summary(dir: &Path, cfg: &ExperimentConfig, result: &ScenarioResult) -> Result<()> {
    let mut txt = format!(
        "scenario {} over {} seeds (medians)\n\nmetric     self    cross old_self star_self  star_cross      p_com       p_up  base_p_com  degenerate\n",
        cfg.scenario.kind.name(),
        result.runs.len()
    );
    let mut kv = format!(
        "scenario = {}\nseeds = {}\n",
        cfg.scenario.kind.name(),
        result.runs.len()
    );
    for s in &result.summary {
        let _ = writeln!(
            txt,
            "{:<6} {:>8} {:>8} {:>8} {:>9} {:>11} {:>10} {:>10} {:>11} {:>11}",
            s.metric,
            fmt_opt(s.self_value),
            fmt_opt(s.cross_value),
            fmt_opt(s.old_self_value),
            fmt_opt(s.star_self_value),
            fmt_opt(s.star_cross_value),
            fmt_opt(s.p_com),
            fmt_opt(s.p_up),
            fmt_opt(s.baseline_p_com),
            s.degenerate_seeds
        );
        let p = &s.metric;
        for (k, v) in [
            ("self", s.self_value),
            ("cross", s.cross_value),
            ("old_self", s.old_self_value),
            ("star_self", s.star_self_value),
            ("star_cross", s.star_cross_value),
            ("p_com", s.p_com),
            ("p_up", s.p_up),
            ("baseline_p_com", s.baseline_p_com),
        ] {
            let _ = writeln!(kv, "{p}.{k} = {}", kv_opt(v));
        }
        let _ = writeln!(kv, "{p}.degenerate_seeds = {}", s.degenerate_seeds);
    }
    fs::write(dir.join("summary.txt"), txt)?;
    fs::write(dir.join("summary.kv"), kv)?;
    Ok(())
}

pub fn write_sweep(dir: &Path, table: &SweepTable) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join(format!("sweep_{}.txt", table.key)),
        sweep_table(table),
    )?;
    Ok(())
}

/// N x N table with generation tags on rows (queries) and columns (gallery).
pub fn matrix_table(m: &CompatMatrix) -> String {
    let mut out = String::from("query\\gallery");
    for g in &m.generations {
        let _ = write!(out, " {:>9}", format!("g{g}"));
    }
    out.push('\n');
    for (i, row) in m.p_com.iter().enumerate() {
        let _ = write!(out, "{:<13}", format!("g{}", m.generations[i]));
        for v in row {
            let _ = write!(out, " {v:>9.4}");
        }
        out.push('\n');
    }
    out
}

pub fn sweep_table(t: &SweepTable) -> String {
    let mut out = format!(
        "{:<12} {:>8} {:>8} {:>10} {:>10}\n",
        t.key, "self", "cross", "p_com", "p_up"
    );
    for r in &t.rows {
        let _ = writeln!(
            out,
            "{:<12} {:>8} {:>8} {:>10} {:>10}",
            r.value,
            fmt_opt(r.self_value),
            fmt_opt(r.cross_value),
            fmt_opt(r.p_com),
            fmt_opt(r.p_up)
        );
    }
    out
}

/// Counts of `values` in `bins` equal-width bins over `[lo, hi]`; the last
/// bin is closed. Values outside the range are dropped.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        if !(v >= lo && v <= hi) {
            continue;
        }
        let b = if width > 0.0 {
            ((v - lo) / width) as usize
        } else {
            0
        };
        counts[b.min(bins - 1)] += 1;
    }
    counts
}

#[derive(Debug, Clone)]
pub enum Plot {
    Histogram {
        name: String,
        bins: usize,
        series: Vec<(String, Vec<f64>)>,
    },
    Matrix {
        name: String,
        matrix: CompatMatrix,
    },
    Sweep(SweepTable),
}

/// Figures for a scenario: uncertainty histograms of the first seed and the
/// compatibility matrices of the first sequential seed.
pub fn scenario_plots(result: &ScenarioResult) -> Vec<Plot> {
    let mut plots = Vec::new();
    let Some(run) = result.runs.first() else {
        return plots;
    };
    let mut series = vec![("old_seen".to_string(), run.uncertainty_seen.clone())];
    if !run.uncertainty_unseen.is_empty() {
        series.push(("old_unseen".into(), run.uncertainty_unseen.clone()));
    }
    series.push(("new".into(), run.uncertainty_new.clone()));
    plots.push(Plot::Histogram {
        name: format!("uncertainty_seed{}", run.seed),
        bins: 20,
        series,
    });
    if let Some((a, p)) = &run.matrices {
        plots.push(Plot::Matrix {
            name: format!("matrix_hbct_seed{}", run.seed),
            matrix: a.clone(),
        });
        plots.push(Plot::Matrix {
            name: format!("matrix_baseline_seed{}", run.seed),
            matrix: p.clone(),
        });
    }
    plots
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn svg_open(w: u32, h: u32) -> String {
    format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"monospace\" font-size=\"11\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n")
}

fn histogram_files(bins: usize, series: &[(String, Vec<f64>)]) -> (String, String) {
    let all = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let counts: Vec<Vec<usize>> = series
        .iter()
        .map(|(_, v)| histogram(v, lo, hi, bins))
        .collect();
    let width = (hi - lo) / bins as f64;

    let mut txt = String::from("bin_lo bin_hi");
    for (name, _) in series {
        let _ = write!(txt, " {name}");
    }
    txt.push('\n');
    for b in 0..bins {
        let _ = write!(
            txt,
            "{:.6} {:.6}",
            lo + b as f64 * width,
            lo + (b + 1) as f64 * width
        );
        for c in &counts {
            let _ = write!(txt, " {}", c[b]);
        }
        txt.push('\n');
    }

    let (w, h, pad) = (640.0, 320.0, 40.0);
    let peak = counts.iter().flatten().copied().max().unwrap_or(1).max(1) as f64;
    let bar = (w - 2.0 * pad) / (bins * series.len().max(1)) as f64;
    let mut svg = svg_open(w as u32, h as u32);
    for (s, c) in counts.iter().enumerate() {
        for (b, &n) in c.iter().enumerate() {
            let bh = (h - 2.0 * pad) * n as f64 / peak;
            let x = pad + (b * series.len() + s) as f64 * bar;
            let _ = writeln!(
                svg,
                "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{bar:.2}\" height=\"{bh:.2}\" fill=\"{}\"/>",
                h - pad - bh,
                COLORS[s % COLORS.len()]
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" fill=\"{}\">{}</text>",
            pad + 120.0 * s as f64,
            pad - 10.0,
            COLORS[s % COLORS.len()],
            series[s].0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{pad}\" y=\"{}\">{lo:.3}</text>",
        h - pad + 15.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{hi:.3}</text>",
        w - pad,
        h - pad + 15.0
    );
    svg.push_str("</svg>\n");
    (txt, svg)
}

fn matrix_svg(m: &CompatMatrix) -> String {
    let n = m.p_com.len();
    let cell = 60.0;
    let pad = 50.0;
    let size = (pad + cell * n as f64 + 10.0) as u32;
    let mut svg = svg_open(size, size);
    for (i, row) in m.p_com.iter().enumerate() {
        let _ = writeln!(
            svg,
            "<text x=\"10\" y=\"{:.1}\">g{}</text>",
            pad + cell * (i as f64 + 0.55),
            m.generations[i]
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"35\">g{}</text>",
            pad + cell * (i as f64 + 0.35),
            m.generations[i]
        );
        for (j, &v) in row.iter().enumerate() {
            let t = if v.is_finite() {
                v.clamp(0.0, 1.0)
            } else {
                0.0
            };
            let shade = (255.0 * (1.0 - t)).round() as u8;
            let _ = writeln!(
                svg,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},255)\" stroke=\"gray\"/>",
                pad + cell * j as f64,
                pad + cell * i as f64
            );
            let _ = writeln!(
                svg,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v:.2}</text>",
                pad + cell * (j as f64 + 0.5),
                pad + cell * (i as f64 + 0.55)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn sweep_svg(t: &SweepTable) -> String {
    let (w, h, pad) = (480.0, 320.0, 40.0);
    let mut svg = svg_open(w as u32, h as u32);
    let n = t.rows.len();
    let x_at = |i: usize| {
        if n > 1 {
            pad + (w - 2.0 * pad) * i as f64 / (n - 1) as f64
        } else {
            w / 2.0
        }
    };
    let y_at = |v: f64| h - pad - (h - 2.0 * pad) * v.clamp(0.0, 1.0);
    for (s, (name, get)) in [
        (
            "self",
            (|r: &crate::scenarios::SweepRow| r.self_value) as fn(&_) -> _,
        ),
        ("cross", |r: &crate::scenarios::SweepRow| r.cross_value),
    ]
    .into_iter()
    .enumerate()
    {
        let pts: Vec<String> = t
            .rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| get(r).map(|v| format!("{:.1},{:.1}", x_at(i), y_at(v))))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>",
            pts.join(" "),
            COLORS[s]
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"20\" fill=\"{}\">{name}</text>",
            pad + 80.0 * s as f64,
            COLORS[s]
        );
    }
    for (i, r) in t.rows.iter().enumerate() {
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            x_at(i),
            h - pad + 15.0,
            r.value
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
        w - pad,
        h - 5.0,
        t.key
    );
    svg.push_str("</svg>\n");
    svg
}

/// Writes each plot as a text table and an SVG. An empty plot list writes
/// nothing and only logs a warning.
pub fn emit_plots(plots: &[Plot], dir: &Path) -> Result<Vec<PathBuf>> {
    if plots.is_empty() {
        warn!("no reports to plot");
        return Ok(Vec::new());
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for plot in plots {
        let (name, txt, svg) = match plot {
            Plot::Histogram { name, bins, series } => {
                let (txt, svg) = histogram_files((*bins).max(1), series);
                (name.clone(), txt, svg)
            }
            Plot::Matrix { name, matrix } => {
                (name.clone(), matrix_table(matrix), matrix_svg(matrix))
            }
            Plot::Sweep(t) => (format!("sweep_{}", t.key), sweep_table(t), sweep_svg(t)),
        };
        for (ext, body) in [("txt", txt), ("svg", svg)] {
            let path = dir.join(format!("{name}.{ext}"));
            fs::write(&path, body)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_conserves_counts() {
        let v = [0.0, 0.1, 0.5, 0.99, 1.0, 1.0];
        let h = histogram(&v, 0.0, 1.0, 4);
        assert_eq!(h.iter().sum::<usize>(), v.len());
        assert_eq!(h, vec![2, 0, 1, 3]);
        assert_eq!(histogram(&[2.0, 2.0], 2.0, 2.0, 3).iter().sum::<usize>(), 2);
    }

    #[test]
    fn matrix_table_has_tags() {
        let m = CompatMatrix {
            generations: vec![0, 1],
            raw: vec![vec![0.5, 0.4], vec![0.45, 0.6]],
            anchors: vec![0.5, 0.7],
            p_com: vec![vec![1.0, -0.5], vec![0.25, 0.5]],
        };
        let t = matrix_table(&m);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("g0") && lines[0].contains("g1"));
        assert!(lines[2].starts_with("g1") && lines[2].contains("0.2500"));
    }

    #[test]
    fn empty_plot_set_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("plots");
        assert!(emit_plots(&[], &target).unwrap().is_empty());
        assert!(!target.exists());
    }

    #[test]
    fn histogram_files_written() {
        let dir = tempfile::tempdir().unwrap();
        let plot = Plot::Histogram {
            name: "u".into(),
            bins: 5,
            series: vec![("a".into(), vec![0.1, 0.2, 0.3]), ("b".into(), vec![0.9])],
        };
        let files = emit_plots(&[plot], dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        let txt = fs::read_to_string(dir.path().join("u.txt")).unwrap();
        let totals: Vec<usize> = (2..4)
            .map(|c| {
                txt.lines()
                    .skip(1)
                    .map(|l| l.split(' ').nth(c).unwrap().parse::<usize>().unwrap())
                    .sum()
            })
            .collect();
        assert_eq!(totals, vec![3, 1]);
        assert!(fs::read_to_string(dir.path().join("u.svg"))
            .unwrap()
            .starts_with("<svg"));
    }
}
