//! PSNR and SSIM on volumes, and per-method aggregation into a results table.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::upsampling::UpsampleMethod;
use crate::volume::Volume;

/// Peak intensity of normalized volumes.
pub const PEAK: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    /// Window side length; must be odd.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 7,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: PEAK,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.peak).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.peak).powi(2)
    }

    /// Normalized 1D Gaussian taps; the 3D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let w: Vec<f64> = (0..self.window)
            .map(|i| (-(i as f64 - r).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }
}

fn check_pair<T: Real>(a: &Volume<T>, b: &Volume<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "metric inputs differ in shape: {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `10 log10(peak^2 / mse)` in dB; identical volumes give `+inf`.
pub fn psnr<T: Real>(reference: &Volume<T>, test: &Volume<T>, peak: f64) -> Result<f64> {
    check_pair(reference, test)?;
    let mse = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a.f64() - b.f64()).powi(2))
        .sum::<f64>()
        / reference.data().len() as f64;
    Ok(psnr_from_mse(mse, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Valid-mode separable filtering of one channel along all three axes.
fn filter_valid(data: &[f64], dims: [usize; 3], taps: &[f64]) -> (Vec<f64>, [usize; 3]) {
    let k = taps.len();
    let mut cur = data.to_vec();
    let mut cd = dims;
    for axis in 0..3 {
        let mut nd = cd;
        nd[axis] = cd[axis] + 1 - k;
        let outer: usize = cd[..axis].iter().product();
        let inner: usize = cd[axis + 1..].iter().product();
        let mut next = vec![0.0; nd.iter().product()];
        for o in 0..outer {
            for t in 0..nd[axis] {
                let dst = (o * nd[axis] + t) * inner;
                for (j, &w) in taps.iter().enumerate() {
                    let src = (o * cd[axis] + t + j) * inner;
                    for i in 0..inner {
                        next[dst + i] += w * cur[src + i];
                    }
                }
            }
        }
        cur = next;
        cd = nd;
    }
    (cur, cd)
}

/// Mean SSIM over all window positions lying fully inside the volume,
/// averaged over channels.
pub fn ssim3d<T: Real>(
    reference: &Volume<T>,
    test: &Volume<T>,
    params: &SsimParams,
) -> Result<f64> {
    check_pair(reference, test)?;
    let s = reference.shape();
    if params.window % 2 == 0 || params.window == 0 {
        return Err(Error::Config(format!(
            "ssim window must be odd, got {}",
            params.window
        )));
    }
    if s.spatial().iter().any(|&n| n < params.window) {
        return Err(Error::Shape(format!(
            "ssim needs every spatial dim >= {}, got {s}",
            params.window
        )));
    }
    let taps = params.taps();
    let dims = s.spatial();
    let (c1, c2) = (params.c1(), params.c2());
    let mut total = 0.0;
    for c in 0..s.c {
        let x: Vec<f64> = reference
            .data()
            .iter()
            .skip(c)
            .step_by(s.c)
            .map(|v| v.f64())
            .collect();
        let y: Vec<f64> = test
            .data()
            .iter()
            .skip(c)
            .step_by(s.c)
            .map(|v| v.f64())
            .collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let (mx, _) = filter_valid(&x, dims, &taps);
        let (my, _) = filter_valid(&y, dims, &taps);
        let (sxx, _) = filter_valid(&xx, dims, &taps);
        let (syy, _) = filter_valid(&yy, dims, &taps);
        let (sxy, _) = filter_valid(&xy, dims, &taps);
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (a, b) = (mx[i], my[i]);
            let vx = sxx[i] - a * a;
            let vy = syy[i] - b * b;
            let cov = sxy[i] - a * b;
            sum +=
                ((2.0 * a * b + c1) * (2.0 * cov + c2)) / ((a * a + b * b + c1) * (vx + vy + c2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / s.c as f64)
}

/// A row of the results table: the cubic baseline or a trained network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Cubic,
    ResizeConv,
    Subpixel,
    SubpixelNn,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Cubic,
        Method::ResizeConv,
        Method::Subpixel,
        Method::SubpixelNn,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Cubic => "cubic",
            Method::ResizeConv => UpsampleMethod::ResizeConv.as_str(),
            Method::Subpixel => UpsampleMethod::Subpixel.as_str(),
            Method::SubpixelNn => UpsampleMethod::SubpixelNn.as_str(),
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            Method::Cubic => "Cubic Int.",
            Method::ResizeConv => UpsampleMethod::ResizeConv.display_name(),
            Method::Subpixel => UpsampleMethod::Subpixel.display_name(),
            Method::SubpixelNn => UpsampleMethod::SubpixelNn.display_name(),
        }
    }
}

impl From<UpsampleMethod> for Method {
    fn from(m: UpsampleMethod) -> Self {
        match m {
            UpsampleMethod::ResizeConv => Method::ResizeConv,
            UpsampleMethod::Subpixel => Method::Subpixel,
            UpsampleMethod::SubpixelNn => Method::SubpixelNn,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "cubic" {
            return Ok(Method::Cubic);
        }
        Ok(s.parse::<UpsampleMethod>()?.into())
    }
}

impl serde::Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> serde::Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// PSNR serialized as a number, or the string `"inf"` for identical volumes.
mod psnr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str("inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad psnr {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VolumeScore {
    pub volume_id: String,
    pub method: Method,
    pub factor: usize,
    #[serde(with = "psnr_serde")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Stats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    /// `None` for an empty sample. Values are sorted first so the result
    /// does not depend on input order.
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Stats {
            mean,
            std: var.sqrt(),
            min: v[0],
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MethodSummary {
    pub factor: usize,
    pub method: Method,
    pub count: usize,
    /// Volumes with infinite PSNR, left out of the PSNR statistics.
    pub excluded: usize,
    pub psnr: Option<Stats>,
    pub ssim: Stats,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub per_volume: Vec<VolumeScore>,
    pub aggregate: Vec<MethodSummary>,
}

pub fn aggregate(scores: Vec<VolumeScore>) -> Result<EvalReport> {
    let mut groups: BTreeMap<(usize, Method), Vec<&VolumeScore>> = BTreeMap::new();
    for s in &scores {
        if !s.ssim.is_finite() || s.psnr.is_nan() {
            return Err(Error::Config(format!(
                "non-finite score for {} / {}",
                s.volume_id, s.method
            )));
        }
        groups.entry((s.factor, s.method)).or_default().push(s);
    }
    let mut aggregate = Vec::with_capacity(groups.len());
    for ((factor, method), rows) in groups {
        let psnrs: Vec<f64> = rows
            .iter()
            .map(|r| r.psnr)
            .filter(|p| p.is_finite())
            .collect();
        let excluded = rows.len() - psnrs.len();
        if excluded > 0 {
            log::warn!("{method} x{factor}: {excluded} volume(s) with infinite PSNR left out of the aggregate");
        }
        let ssims: Vec<f64> = rows.iter().map(|r| r.ssim).collect();
        aggregate.push(MethodSummary {
            factor,
            method,
            count: rows.len(),
            excluded,
            psnr: Stats::of(&psnrs),
            ssim: Stats::of(&ssims).expect("group is non-empty"),
        });
    }
    Ok(EvalReport {
        per_volume: scores,
        aggregate,
    })
}

const SCORE_HEADER: [&str; 5] = ["volume_id", "method", "factor", "psnr", "ssim"];
const SUMMARY_HEADER: [&str; 11] = [
    "factor",
    "method",
    "count",
    "psnr_mean",
    "psnr_std",
    "psnr_min",
    "psnr_max",
    "ssim_mean",
    "ssim_std",
    "ssim_min",
    "ssim_max",
];

fn csv_err(e: csv::Error) -> Error {
    Error::Malformed {
        path: "<csv>".into(),
        reason: e.to_string(),
    }
}

impl EvalReport {
    /// Per-volume rows; shortest round-trip float formatting, so
    /// [`EvalReport::read_scores_csv`] recovers the report exactly.
    pub fn write_scores_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SCORE_HEADER).map_err(csv_err)?;
        for s in &self.per_volume {
            w.write_record([
                s.volume_id.clone(),
                s.method.to_string(),
                s.factor.to_string(),
                s.psnr.to_string(),
                s.ssim.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn read_scores_csv(input: impl Read) -> Result<EvalReport> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers().map_err(csv_err)?.clone();
        if header.iter().ne(SCORE_HEADER) {
            return Err(Error::Malformed {
                path: "<csv>".into(),
                reason: format!("unexpected header {header:?}"),
            });
        }
        let bad = |field: &str, v: &str| Error::Malformed {
            path: "<csv>".into(),
            reason: format!("bad {field} {v:?}"),
        };
        let mut scores = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            scores.push(VolumeScore {
                volume_id: rec[0].to_string(),
                method: rec[1].parse()?,
                factor: rec[2].parse().map_err(|_| bad("factor", &rec[2]))?,
                psnr: rec[3].parse().map_err(|_| bad("psnr", &rec[3]))?,
                ssim: rec[4].parse().map_err(|_| bad("ssim", &rec[4]))?,
            });
        }
        aggregate(scores)
    }

    /// One row per (factor, method) with mean/std/min/max of both metrics.
    pub fn write_summary_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SUMMARY_HEADER).map_err(csv_err)?;
        for m in &self.aggregate {
            let p = m
                .psnr
                .map_or([f64::NAN; 4], |s| [s.mean, s.std, s.min, s.max]);
            let s = m.ssim;
            let mut row = vec![
                m.factor.to_string(),
                m.method.to_string(),
                m.count.to_string(),
            ];
            row.extend(
                [p[0], p[1], p[2], p[3], s.mean, s.std, s.min, s.max]
                    .iter()
                    .map(|v| v.to_string()),
            );
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<EvalReport> {
        let r: EvalReport = serde_json::from_str(s).map_err(|e| Error::Malformed {
            path: "<json>".into(),
            reason: e.to_string(),
        })?;
        // aggregates are derived data; recompute rather than trust them
        aggregate(r.per_volume)
    }

    /// Plain-text table: Mean/Std/Min/Max rows, a PSNR and SSIM column
    /// per method, one block per scale factor.
    pub fn render_table(&self) -> String {
        render_table(&self.aggregate)
    }
}

pub fn render_table(summaries: &[MethodSummary]) -> String {
    let mut by_factor: BTreeMap<usize, Vec<&MethodSummary>> = BTreeMap::new();
    for m in summaries {
        by_factor.entry(m.factor).or_default().push(m);
    }
    let mut out = String::new();
    for (factor, mut ms) in by_factor {
        ms.sort_by_key(|m| m.method);
        let cell = 19;
        let _ = writeln!(out, "Upsample x{factor}");
        let _ = write!(out, "{:<6}", "");
        for m in &ms {
            let _ = write!(out, "| {:^cell$}", m.method.display_name());
        }
        out.push('\n');
        let _ = write!(out, "{:<6}", "");
        for _ in &ms {
            let _ = write!(out, "| {:>8} {:>9} ", "PSNR", "SSIM");
        }
        out.push('\n');
        let rows: [(&str, fn(&Stats) -> f64, usize); 4] = [
            ("Mean", |s| s.mean, 2),
            ("Std", |s| s.std, 4),
            ("Min", |s| s.min, 2),
            ("Max", |s| s.max, 2),
        ];
        for (label, pick, psnr_digits) in rows {
            let _ = write!(out, "{label:<6}");
            for m in &ms {
                let p = m.psnr.as_ref().map_or("n/a".to_string(), |s| {
                    format!("{:.*}", psnr_digits, pick(s))
                });
                let _ = write!(out, "| {:>8} {:>9.4} ", p, pick(&m.ssim));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
