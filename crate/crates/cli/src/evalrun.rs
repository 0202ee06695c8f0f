//! Directory evaluation: pool every image with every method and
//! kernel, score the round trip, and report CSV rows plus per-method
//! summaries.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use adapool::quality::{crop_to_multiple, IMAGE_MAX, POOL_SCALE};
use adapool::{backward, nearest_inflate, psnr, ssim, ActivationMap, GradMode, InflateMode, PoolGeometry};
use rayon::prelude::*;

use crate::error::{CliError, CliResult};
use crate::imageio::load_image;
use crate::methods::Method;

/// One row of the evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub image_id: String,
    pub method: String,
    pub kernel: usize,
    pub ssim: f64,
    pub psnr_db: f64,
    pub forward_us: u64,
    pub backward_us: u64,
    pub seed: Option<u64>,
}

pub const CSV_HEADER: &str = "image_id,method,kernel,ssim,psnr_db,forward_us,backward_us,seed";

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

impl EvalRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.image_id,
            self.method,
            self.kernel,
            fmt_f64(self.ssim),
            fmt_f64(self.psnr_db),
            self.forward_us,
            self.backward_us,
            self.seed.map_or(String::new(), |s| s.to_string())
        )
    }

    pub fn from_csv_row(row: &str) -> CliResult<Self> {
        let parts: Vec<&str> = row.split(',').collect();
        if parts.len() != 8 {
            return Err(CliError::Data(format!("bad record: {row:?}")));
        }
        let parse_f = |s: &str| -> CliResult<f64> {
            s.parse::<f64>().map_err(|_| CliError::Data(format!("bad float {s:?}")))
        };
        Ok(Self {
            image_id: parts[0].to_string(),
            method: parts[1].to_string(),
            kernel: parts[2].parse().map_err(|_| CliError::Data("bad kernel".into()))?,
            ssim: parse_f(parts[3])?,
            psnr_db: parse_f(parts[4])?,
            forward_us: parts[5].parse().map_err(|_| CliError::Data("bad forward_us".into()))?,
            backward_us: parts[6].parse().map_err(|_| CliError::Data("bad backward_us".into()))?,
            seed: if parts[7].is_empty() {
                None
            } else {
                Some(parts[7].parse().map_err(|_| CliError::Data("bad seed".into()))?)
            },
        })
    }
}

/// Per-method arithmetic means over all of its rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub rows: usize,
    pub mean_ssim: f64,
    pub mean_psnr_db: f64,
    pub mean_forward_us: f64,
    pub mean_backward_us: f64,
}

pub struct EvalConfig {
    pub methods: Vec<Method>,
    pub kernels: Vec<usize>,
    pub seed: u64,
    pub inflate: InflateMode,
}

/// Ensures the baseline anchor row is always present.
pub fn with_avg_anchor(mut methods: Vec<Method>) -> Vec<Method> {
    if !methods.iter().any(|m| m.name() == "avg") {
        methods.insert(0, Method::parse("avg", 0).expect("avg parses"));
    }
    methods
}

pub fn list_images(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("png" | "ppm")
            )
        })
        .collect();
    paths.sort();
    Ok(paths)
}

fn image_id(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// Evaluates one image against one (method, kernel) pair.
pub fn eval_one(
    id: &str,
    image: &ActivationMap,
    method: &Method,
    k: usize,
    inflate: InflateMode,
) -> CliResult<EvalRecord> {
    let cropped = crop_to_multiple(image, k).map_err(|e| CliError::Data(e.to_string()))?;
    let geom = PoolGeometry::uniform(2, k).map_err(|e| CliError::Data(e.to_string()))?;

    // Operators run at unit scale (see quality::POOL_SCALE); fitting
    // sees the image scale, and the restoration is scaled back before
    // scoring.
    let unit = cropped.scaled(1.0 / POOL_SCALE);
    let prepared = method.prepare(&cropped, &geom)?;
    let start = Instant::now();
    let saved = method.apply_prepared(&unit, &geom, &prepared)?;
    let forward_us = start.elapsed().as_micros() as u64;

    let backward_us = match method.grad_kind() {
        Some(kind) => {
            let ones = ActivationMap::new(
                saved.output.channels(),
                saved.output.spatial().to_vec(),
                vec![1.0; saved.output.data().len()],
            )
            .map_err(|e| CliError::Data(e.to_string()))?;
            let start = Instant::now();
            backward(kind, &ones, &saved, GradMode::PaperWeighted)
                .map_err(|e| CliError::Data(e.to_string()))?;
            start.elapsed().as_micros() as u64
        }
        None => 0,
    };

    let restored = match inflate {
        InflateMode::Nearest => nearest_inflate(&saved.output, &geom, cropped.spatial()),
        InflateMode::Bilinear => adapool::bilinear_inflate(&saved.output, cropped.spatial()),
    }
    .map_err(|e| CliError::Data(e.to_string()))?
    .scaled(POOL_SCALE);

    Ok(EvalRecord {
        image_id: id.to_string(),
        method: method.name(),
        kernel: k,
        ssim: ssim(&cropped, &restored, IMAGE_MAX).map_err(|e| CliError::Data(e.to_string()))?,
        psnr_db: psnr(&cropped, &restored, IMAGE_MAX).map_err(|e| CliError::Data(e.to_string()))?,
        forward_us,
        backward_us,
        seed: method.seed(),
    })
}

/// Runs the full grid over a directory. Unreadable images are skipped
/// with a warning; records come back sorted by (image, method, kernel).
pub fn eval_directory(dir: &Path, cfg: &EvalConfig) -> CliResult<(Vec<EvalRecord>, Vec<MethodSummary>)> {
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(CliError::Data(format!("no .png/.ppm images in {}", dir.display())));
    }
    let methods = with_avg_anchor(cfg.methods.clone());

    let loaded: Vec<(String, ActivationMap)> = paths
        .iter()
        .filter_map(|p| match load_image(p) {
            Ok(img) => Some((image_id(p), img)),
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", p.display());
                None
            }
        })
        .collect();
    if loaded.is_empty() {
        return Err(CliError::Data("no readable images".into()));
    }

    let mut records: Vec<EvalRecord> = loaded
        .par_iter()
        .map(|(id, image)| -> CliResult<Vec<EvalRecord>> {
            let mut rows = Vec::new();
            for method in &methods {
                for &k in &cfg.kernels {
                    rows.push(eval_one(id, image, method, k, cfg.inflate)?);
                }
            }
            Ok(rows)
        })
        .collect::<CliResult<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    records.sort_by(|a, b| {
        (&a.image_id, &a.method, a.kernel).cmp(&(&b.image_id, &b.method, b.kernel))
    });

    let summaries = summarize(&records);
    Ok((records, summaries))
}

pub fn summarize(records: &[EvalRecord]) -> Vec<MethodSummary> {
    let mut names: Vec<String> = records.iter().map(|r| r.method.clone()).collect();
    names.sort();
    names.dedup();
    names
        .into_iter()
        .map(|method| {
            let rows: Vec<&EvalRecord> = records.iter().filter(|r| r.method == method).collect();
            let n = rows.len() as f64;
            MethodSummary {
                method,
                rows: rows.len(),
                mean_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
                mean_psnr_db: rows.iter().map(|r| r.psnr_db).sum::<f64>() / n,
                mean_forward_us: rows.iter().map(|r| r.forward_us as f64).sum::<f64>() / n,
                mean_backward_us: rows.iter().map(|r| r.backward_us as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Full CSV report: header, data rows, then '#'-prefixed summary lines.
pub fn render_csv(records: &[EvalRecord], summaries: &[MethodSummary]) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    for s in summaries {
        let _ = writeln!(
            out,
            "# summary,method={},rows={},mean_ssim={},mean_psnr_db={},mean_forward_us={:.1},mean_backward_us={:.1}",
            s.method,
            s.rows,
            fmt_f64(s.mean_ssim),
            fmt_f64(s.mean_psnr_db),
            s.mean_forward_us,
            s.mean_backward_us
        );
    }
    out
}

/// Parses the data rows back (summary lines and the header are skipped).
pub fn parse_csv(text: &str) -> CliResult<Vec<EvalRecord>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(EvalRecord::from_csv_row)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip_through_csv() {
        let rec = EvalRecord {
            image_id: "img_00".into(),
            method: "ada:0.5".into(),
            kernel: 3,
            ssim: 0.73125,
            psnr_db: f64::INFINITY,
            forward_us: 1200,
            backward_us: 0,
            seed: Some(7),
        };
        let parsed = EvalRecord::from_csv_row(&rec.to_csv_row()).unwrap();
        assert_eq!(parsed.image_id, rec.image_id);
        assert_eq!(parsed.psnr_db, f64::INFINITY);
        assert_eq!(parsed.seed, Some(7));
        let no_seed = EvalRecord { seed: None, ..rec };
        assert_eq!(EvalRecord::from_csv_row(&no_seed.to_csv_row()).unwrap().seed, None);
    }

    #[test]
    fn summaries_are_arithmetic_means() {
        let rows = vec![
            EvalRecord {
                image_id: "a".into(),
                method: "avg".into(),
                kernel: 2,
                ssim: 0.5,
                psnr_db: 10.0,
                forward_us: 100,
                backward_us: 0,
                seed: None,
            },
            EvalRecord {
                image_id: "b".into(),
                method: "avg".into(),
                kernel: 2,
                ssim: 0.7,
                psnr_db: 30.0,
                forward_us: 300,
                backward_us: 0,
                seed: None,
            },
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].mean_ssim, 0.6);
        assert_eq!(s[0].mean_psnr_db, 20.0);
        assert_eq!(s[0].mean_forward_us, 200.0);
    }

    #[test]
    fn avg_anchor_is_inserted_once() {
        let ms = with_avg_anchor(Method::parse_list("max,em", 0).unwrap());
        assert_eq!(ms[0].name(), "avg");
        let ms2 = with_avg_anchor(ms.clone());
        assert_eq!(ms2.iter().filter(|m| m.name() == "avg").count(), 1);
    }
}
