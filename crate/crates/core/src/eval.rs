//! Prediction metrics and report emission.
//!
//! EFE is computed as ADE over the full forecast horizon on tracker-derived
//! inputs. That definition is this crate's interpretation and is labelled as
//! such in JSONL output.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{named_substream, stream_rng};
use crate::traj::Trajectory;

pub const DEFAULT_ENTROPY_BINS: usize = 8;
pub const EFE_DEFINITION: &str =
    "interpretation: ADE over the full forecast horizon on tracker-derived inputs";
pub const CSV_HEADER: &str = "method,scenario,agent,ade_m,fde_m,efe_m";
/// Fraction of a data set used for training by [`split_60_40`].
pub const TRAIN_FRACTION: f64 = 0.6;

fn check_pair(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::validation(
            "positions",
            format!("prediction has {} steps, ground truth {}", pred.len(), gt.len()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::Empty("position sequence"));
    }
    Ok(())
}

/// Euclidean displacement at every step.
pub fn step_errors(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<Vec<f64>> {
    check_pair(pred, gt)?;
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p[0] - g[0]).hypot(p[1] - g[1]))
        .collect())
}

pub fn ade(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<f64> {
    let e = step_errors(pred, gt)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

pub fn fde(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<f64> {
    Ok(*step_errors(pred, gt)?.last().expect("nonempty"))
}

/// See the module docs for how this differs from [`ade`] in intent.
pub fn efe(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<f64> {
    ade(pred, gt)
}

/// Root mean squared displacement over all agents and steps.
pub fn rmse(pred: &Trajectory, gt: &Trajectory) -> Result<f64> {
    check_traj_pair(pred, gt)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..gt.k() {
        for e in step_errors(&pred.positions(i), &gt.positions(i))? {
            sum += e * e;
            n += 1;
        }
    }
    Ok((sum / n as f64).sqrt())
}

fn check_traj_pair(pred: &Trajectory, gt: &Trajectory) -> Result<()> {
    if pred.k() != gt.k() || pred.horizon() != gt.horizon() {
        return Err(Error::validation(
            "prediction",
            format!(
                "prediction is {} agents × {} steps, ground truth {} × {}",
                pred.k(),
                pred.horizon(),
                gt.k(),
                gt.horizon()
            ),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfSeries {
    pub thresholds: Vec<f64>,
    pub fractions: Vec<f64>,
}

/// Fraction of trajectories whose RMSE is at most each threshold.
pub fn rmse_cdf(errors: &[f64], thresholds: &[f64]) -> Result<CdfSeries> {
    if errors.is_empty() {
        return Err(Error::Empty("error list"));
    }
    if thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::validation("thresholds", "must be ascending"));
    }
    let n = errors.len() as f64;
    let fractions = thresholds
        .iter()
        .map(|&t| errors.iter().filter(|&&e| e <= t).count() as f64 / n)
        .collect();
    Ok(CdfSeries {
        thresholds: thresholds.to_vec(),
        fractions,
    })
}

/// `n` evenly spaced thresholds from 0 to `max`.
pub fn linear_thresholds(max: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![max];
    }
    (0..n).map(|j| max * j as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub bits: f64,
    /// Equal sectors of `(−π, π]`.
    pub bins: usize,
}

fn heading_bin(h: f64, bins: usize) -> usize {
    let width = 2.0 * PI / bins as f64;
    let j = ((h + PI) / width).ceil() as isize - 1;
    j.clamp(0, bins as isize - 1) as usize
}

/// Shannon entropy in bits of a heading histogram.
pub fn heading_entropy(headings: &[f64], bins: usize) -> Result<EntropyReport> {
    if headings.is_empty() {
        return Err(Error::Empty("heading list"));
    }
    if bins == 0 {
        return Err(Error::validation("bins", "must be >= 1"));
    }
    let mut counts = vec![0usize; bins];
    for &h in headings {
        counts[heading_bin(h, bins)] += 1;
    }
    let n = headings.len() as f64;
    let bits = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0);
    Ok(EntropyReport { bits, bins })
}

/// Pools the heading of every agent at every state of every trajectory.
pub fn trajectory_entropy(dataset: &[Trajectory], bins: usize) -> Result<EntropyReport> {
    let headings: Vec<f64> = dataset
        .iter()
        .flat_map(|t| t.states.iter())
        .flat_map(|s| s.agents.iter().map(|a| a.heading()))
        .collect();
    if headings.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    heading_entropy(&headings, bins)
}

/// Seeded shuffle of `0..n` split into 60% training and 40% validation
/// indices.
pub fn split_60_40(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(named_substream(seed, "split"), &[]));
    let n_train = (TRAIN_FRACTION * n as f64).round() as usize;
    let val = idx.split_off(n_train);
    (idx, val)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub agent: usize,
    pub ade: f64,
    pub fde: f64,
    pub efe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub scenario: String,
    pub agents: Vec<AgentMetrics>,
    pub ade: f64,
    pub fde: f64,
    pub efe: f64,
    /// One entry per evaluated trajectory.
    pub rmse: Vec<f64>,
}

/// Scores `preds[d]` against `gts[d]`. Per-agent values are averaged over
/// trajectories, aggregates over agents.
pub fn evaluate(method: &str, scenario: &str, preds: &[Trajectory], gts: &[Trajectory]) -> Result<MetricReport> {
    if preds.len() != gts.len() {
        return Err(Error::validation(
            "predictions",
            format!("{} predictions for {} trajectories", preds.len(), gts.len()),
        ));
    }
    let first = gts.first().ok_or(Error::Empty("evaluation set"))?;
    let k = first.k();
    let mut agents: Vec<AgentMetrics> = (0..k)
        .map(|agent| AgentMetrics {
            agent,
            ade: 0.0,
            fde: 0.0,
            efe: 0.0,
        })
        .collect();
    let mut rmses = Vec::with_capacity(gts.len());
    let n = gts.len() as f64;
    for (p, g) in preds.iter().zip(gts) {
        check_traj_pair(p, g)?;
        for m in agents.iter_mut() {
            let (pp, gp) = (p.positions(m.agent), g.positions(m.agent));
            m.ade += ade(&pp, &gp)? / n;
            m.fde += fde(&pp, &gp)? / n;
            m.efe += efe(&pp, &gp)? / n;
        }
        rmses.push(rmse(p, g)?);
    }
    let mean = |f: fn(&AgentMetrics) -> f64| agents.iter().map(f).sum::<f64>() / k as f64;
    Ok(MetricReport {
        method: method.to_owned(),
        scenario: scenario.to_owned(),
        ade: mean(|m| m.ade),
        fde: mean(|m| m.fde),
        efe: mean(|m| m.efe),
        agents,
        rmse: rmses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Jsonl,
    Svg,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "jsonl" => Ok(Self::Jsonl),
            "svg" => Ok(Self::Svg),
            other => Err(Error::validation("format", format!("unknown report format `{other}`"))),
        }
    }
}

/// Canvas and colours for SVG output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvgStyle {
    pub width: u32,
    pub height: u32,
    pub palette: Vec<String>,
    pub cdf_max_m: f64,
    pub cdf_points: usize,
}

impl Default for SvgStyle {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            palette: ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
                .map(String::from)
                .to_vec(),
            cdf_max_m: 2.0,
            cdf_points: 41,
        }
    }
}

impl SvgStyle {
    fn colour(&self, j: usize) -> &str {
        self.palette.get(j % self.palette.len().max(1)).map_or("#000000", String::as_str)
    }
}

/// CSV row as written by [`emit_report`]. `agent` is `None` for the
/// aggregate row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub method: String,
    pub scenario: String,
    pub agent: Option<usize>,
    pub ade: f64,
    pub fde: f64,
    pub efe: f64,
}

fn csv_field(s: &str) -> Result<&str> {
    if s.contains([',', '\n', '"']) {
        return Err(Error::validation("label", format!("`{s}` contains a CSV delimiter")));
    }
    Ok(s)
}

pub fn emit_report<W: Write>(mut w: W, reports: &[MetricReport], format: ReportFormat, style: &SvgStyle) -> Result<()> {
    match format {
        ReportFormat::Csv => {
            writeln!(w, "{CSV_HEADER}")?;
            for r in reports {
                let (m, s) = (csv_field(&r.method)?, csv_field(&r.scenario)?);
                for a in &r.agents {
                    writeln!(w, "{m},{s},{},{},{},{}", a.agent, a.ade, a.fde, a.efe)?;
                }
                writeln!(w, "{m},{s},all,{},{},{}", r.ade, r.fde, r.efe)?;
            }
        }
        ReportFormat::Jsonl => {
            for r in reports {
                let mut v = serde_json::to_value(r).map_err(std::io::Error::other)?;
                v["efe_definition"] = EFE_DEFINITION.into();
                serde_json::to_writer(&mut w, &v).map_err(std::io::Error::other)?;
                writeln!(w)?;
            }
        }
        ReportFormat::Svg => {
            let thresholds = linear_thresholds(style.cdf_max_m, style.cdf_points);
            let curves = reports
                .iter()
                .filter(|r| !r.rmse.is_empty())
                .map(|r| Ok((r.method.clone(), rmse_cdf(&r.rmse, &thresholds)?)))
                .collect::<Result<Vec<_>>>()?;
            w.write_all(svg_cdf(&curves, style).as_bytes())?;
        }
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(reader: R) -> Result<Vec<CsvRow>> {
    let mut lines = reader.lines().enumerate();
    let header = lines.next().map(|(_, h)| h).transpose()?;
    if header.as_deref().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::format("line 1", format!("expected header `{CSV_HEADER}`")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let loc = format!("line {}", n + 1);
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::format(&loc, format!("expected 6 fields, got {}", f.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::format(&loc, format!("bad number `{s}`: {e}")))
        };
        let agent = match f[2] {
            "all" => None,
            a => Some(a.parse().map_err(|_| Error::format(&loc, format!("bad agent `{a}`")))?),
        };
        rows.push(CsvRow {
            method: f[0].to_owned(),
            scenario: f[1].to_owned(),
            agent,
            ade: num(f[3])?,
            fde: num(f[4])?,
            efe: num(f[5])?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub method: String,
    pub ade: f64,
    pub fde: f64,
    pub scenarios: usize,
}

/// Averages aggregate rows per method over scenarios and sorts by ADE, then
/// FDE, then name.
pub fn compare(rows: &[CsvRow]) -> Vec<Ranking> {
    let mut acc: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.agent.is_none()) {
        let e = acc.entry(&r.method).or_default();
        e.0 += r.ade;
        e.1 += r.fde;
        e.2 += 1;
    }
    let mut out: Vec<Ranking> = acc
        .into_iter()
        .map(|(m, (a, f, n))| Ranking {
            method: m.to_owned(),
            ade: a / n as f64,
            fde: f / n as f64,
            scenarios: n,
        })
        .collect();
    out.sort_by(|a, b| {
        a.ade
            .total_cmp(&b.ade)
            .then(a.fde.total_cmp(&b.fde))
            .then_with(|| a.method.cmp(&b.method))
    });
    out
}

const MARGIN: f64 = 50.0;

fn svg_open(style: &SvgStyle) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"#ffffff\"/>\n",
        w = style.width,
        h = style.height
    )
}

fn polyline(points: &[(f64, f64)], colour: &str, dashed: bool, opacity: f64) -> String {
    let mut d = String::new();
    for (j, (x, y)) in points.iter().enumerate() {
        if j > 0 {
            d.push(' ');
        }
        let _ = write!(d, "{x:.2},{y:.2}");
    }
    let dash = if dashed { " stroke-dasharray=\"6,4\"" } else { "" };
    format!(
        "<polyline points=\"{d}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\" stroke-opacity=\"{opacity}\"{dash}/>\n"
    )
}

/// One CDF curve per labelled series, RMSE on the x axis.
pub fn svg_cdf(curves: &[(String, CdfSeries)], style: &SvgStyle) -> String {
    let (w, h) = (style.width as f64, style.height as f64);
    let xmax = curves
        .iter()
        .filter_map(|(_, c)| c.thresholds.last().copied())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let sx = |t: f64| MARGIN + (w - 2.0 * MARGIN) * t / xmax;
    let sy = |f: f64| h - MARGIN - (h - 2.0 * MARGIN) * f;
    let mut out = svg_open(style);
    let _ = writeln!(
        out,
        "<path d=\"M{:.2},{:.2} L{:.2},{:.2} L{:.2},{:.2}\" fill=\"none\" stroke=\"#000000\"/>",
        sx(0.0),
        sy(1.0),
        sx(0.0),
        sy(0.0),
        sx(xmax),
        sy(0.0)
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">RMSE threshold (m)</text>",
        w / 2.0,
        h - 15.0
    );
    for (j, (label, c)) in curves.iter().enumerate() {
        let pts: Vec<(f64, f64)> = c
            .thresholds
            .iter()
            .zip(&c.fractions)
            .map(|(&t, &f)| (sx(t), sy(f)))
            .collect();
        out.push_str(&polyline(&pts, style.colour(j), false, 1.0));
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"{}\">{}</text>",
            w - MARGIN - 100.0,
            MARGIN + 16.0 * j as f64,
            style.colour(j),
            xml_escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Demonstrations as faded solid lines, predictions dashed, one colour per
/// agent.
pub fn svg_overlay(demos: &[Trajectory], preds: &[Trajectory], style: &SvgStyle) -> String {
    let all = demos.iter().chain(preds);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for t in all {
        for s in &t.states {
            for a in &s.agents {
                x0 = x0.min(a.px);
                x1 = x1.max(a.px);
                y0 = y0.min(a.py);
                y1 = y1.max(a.py);
            }
        }
    }
    let mut out = svg_open(style);
    if x0 > x1 {
        out.push_str("</svg>\n");
        return out;
    }
    let (w, h) = (style.width as f64, style.height as f64);
    let scale = ((w - 2.0 * MARGIN) / (x1 - x0).max(1e-9)).min((h - 2.0 * MARGIN) / (y1 - y0).max(1e-9));
    let map = |px: f64, py: f64| (MARGIN + (px - x0) * scale, h - MARGIN - (py - y0) * scale);
    for (set, dashed, opacity) in [(demos, false, 0.35), (preds, true, 1.0)] {
        for t in set {
            for i in 0..t.k() {
                let pts: Vec<(f64, f64)> = t.positions(i).iter().map(|p| map(p[0], p[1])).collect();
                out.push_str(&polyline(&pts, style.colour(i), dashed, opacity));
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
