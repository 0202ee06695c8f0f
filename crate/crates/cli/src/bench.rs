//! Latency benchmark: median forward/backward wall time per method
//! over identical random inputs, plus peak heap use.

use std::fmt::Write as _;
use std::time::Instant;

use adapool::{backward, ActivationMap, GradMode, PoolGeometry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alloc_track;
use crate::error::{CliError, CliResult};
use crate::methods::Method;

pub const WARMUP_RUNS: usize = 3;

#[derive(Debug, Clone)]
pub struct BenchRecord {
    pub method: String,
    pub kernel: usize,
    pub forward_us: u64,
    pub backward_us: u64,
    pub peak_bytes: usize,
    pub ratio_vs_avg: f64,
}

pub struct BenchConfig {
    pub channels: usize,
    pub spatial: Vec<usize>,
    pub methods: Vec<Method>,
    pub kernel: usize,
    pub repeats: usize,
    pub seed: u64,
}

fn median_us(mut samples: Vec<u64>) -> u64 {
    samples.sort_unstable();
    samples[samples.len() / 2]
}

pub fn run_bench(cfg: &BenchConfig) -> CliResult<Vec<BenchRecord>> {
    if cfg.repeats < 10 {
        return Err(CliError::Usage(format!(
            "bench needs at least 10 repeats, got {}",
            cfg.repeats
        )));
    }
    let mut methods = cfg.methods.clone();
    if !methods.iter().any(|m| m.name() == "avg") {
        methods.insert(0, Method::parse("avg", cfg.seed).expect("avg parses"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let len = cfg.channels * cfg.spatial.iter().product::<usize>();
    let data: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..255.0)).collect();
    let input = ActivationMap::new(cfg.channels, cfg.spatial.clone(), data)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let geom = PoolGeometry::uniform(cfg.spatial.len(), cfg.kernel)
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let mut records = Vec::with_capacity(methods.len());
    for method in &methods {
        let prepared = method.prepare(&input, &geom)?;
        alloc_track::reset_peak();
        for _ in 0..WARMUP_RUNS {
            method.apply_prepared(&input, &geom, &prepared)?;
        }
        let mut forward_samples = Vec::with_capacity(cfg.repeats);
        let mut last = None;
        for _ in 0..cfg.repeats {
            let start = Instant::now();
            let out = method.apply_prepared(&input, &geom, &prepared)?;
            forward_samples.push(start.elapsed().as_micros() as u64);
            last = Some(out);
        }
        let saved = last.expect("at least one repeat");

        let backward_us = match method.grad_kind() {
            Some(kind) => {
                let ones = ActivationMap::new(
                    saved.output.channels(),
                    saved.output.spatial().to_vec(),
                    vec![1.0; saved.output.data().len()],
                )
                .map_err(|e| CliError::Data(e.to_string()))?;
                for _ in 0..WARMUP_RUNS {
                    backward(kind, &ones, &saved, GradMode::PaperWeighted)
                        .map_err(|e| CliError::Data(e.to_string()))?;
                }
                let mut samples = Vec::with_capacity(cfg.repeats);
                for _ in 0..cfg.repeats {
                    let start = Instant::now();
                    backward(kind, &ones, &saved, GradMode::PaperWeighted)
                        .map_err(|e| CliError::Data(e.to_string()))?;
                    samples.push(start.elapsed().as_micros() as u64);
                }
                median_us(samples)
            }
            None => 0,
        };

        records.push(BenchRecord {
            method: method.name(),
            kernel: cfg.kernel,
            forward_us: median_us(forward_samples),
            backward_us,
            peak_bytes: alloc_track::peak_bytes(),
            ratio_vs_avg: 0.0,
        });
    }

    let avg_forward = records
        .iter()
        .find(|r| r.method == "avg")
        .map(|r| r.forward_us.max(1) as f64)
        .expect("avg is always benchmarked");
    for r in records.iter_mut() {
        r.ratio_vs_avg = r.forward_us as f64 / avg_forward;
    }
    Ok(records)
}

pub const BENCH_CSV_HEADER: &str = "method,kernel,forward_us,backward_us,peak_bytes,ratio_vs_avg";

pub fn render_csv(records: &[BenchRecord]) -> String {
    let mut out = String::new();
    out.push_str(BENCH_CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.3}",
            r.method, r.kernel, r.forward_us, r.backward_us, r.peak_bytes, r.ratio_vs_avg
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(methods: &str, repeats: usize) -> BenchConfig {
        BenchConfig {
            channels: 1,
            spatial: vec![16, 16],
            methods: Method::parse_list(methods, 0).unwrap(),
            kernel: 2,
            repeats,
            seed: 0,
        }
    }

    #[test]
    fn repeats_below_ten_are_a_usage_error() {
        let err = run_bench(&tiny_config("avg", 9)).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
    }

    #[test]
    fn avg_is_always_present_and_schema_is_stable() {
        let recs = run_bench(&tiny_config("em", 10)).unwrap();
        assert_eq!(recs[0].method, "avg");
        assert_eq!(recs[0].ratio_vs_avg, 1.0);
        assert_eq!(recs.len(), 2);
        let more = run_bench(&tiny_config("em", 30)).unwrap();
        assert_eq!(
            render_csv(&recs).lines().next(),
            render_csv(&more).lines().next()
        );
        assert!(recs.iter().all(|r| r.backward_us == 0 || r.method == "em"));
        assert!(recs[1].backward_us > 0);
    }
}
