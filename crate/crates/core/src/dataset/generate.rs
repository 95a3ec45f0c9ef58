use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use super::channels::encode_channels;
use super::shard::{Record, SampleMeta, ShardHeader, ShardWriter};
use crate::error::{Error, Result};
use crate::problem::{sample_problem, ProblemSpec, Scenario};
use crate::topopt::optimize;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub index: u64,
    /// s
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationSummary {
    pub written: usize,
    pub failed: usize,
    pub outcomes: Vec<SampleOutcome>,
}

fn run_one(spec: &ProblemSpec) -> Result<Record> {
    let res = optimize(spec)?;
    let tensor = encode_channels(spec, &res.physical)?;
    Ok(Record::Sample {
        meta: SampleMeta {
            index: spec.index,
            spec: spec.clone(),
            compliance: res.compliance,
            g1: res.g1,
            g2: res.g2,
            iterations: res.iterations,
            converged: res.converged,
        },
        tensor,
    })
}

/// Optimizes samples `0..count` of the run seeded with `seed` on `workers`
/// threads and streams them to `out` in index order. Failed samples are
/// written as tombstones. `adjust` may edit each sampled spec before it is
/// solved (for example to cap the iteration count).
pub fn generate<W, F>(
    scenario: Scenario,
    count: usize,
    seed: u64,
    workers: usize,
    out: W,
    adjust: F,
) -> Result<(GenerationSummary, W)>
where
    W: Write,
    F: Fn(&mut ProblemSpec) + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut writer = ShardWriter::new(out, ShardHeader::new(scenario, count))?;
    let mut summary = GenerationSummary::default();
    let chunk = 4 * workers.max(1);
    let mut start = 0usize;
    while start < count {
        let end = (start + chunk).min(count);
        let batch: Vec<(Record, SampleOutcome)> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|i| {
                    let t0 = Instant::now();
                    let mut spec = sample_problem(seed, i as u64, scenario);
                    adjust(&mut spec);
                    let result = run_one(&spec);
                    let seconds = t0.elapsed().as_secs_f64();
                    match result {
                        Ok(rec) => (
                            rec,
                            SampleOutcome {
                                index: i as u64,
                                seconds,
                                error: None,
                            },
                        ),
                        Err(e) => (
                            Record::Tombstone {
                                index: i as u64,
                                error: e.to_string(),
                            },
                            SampleOutcome {
                                index: i as u64,
                                seconds,
                                error: Some(e.to_string()),
                            },
                        ),
                    }
                })
                .collect()
        });
        for (record, outcome) in batch {
            writer.write_record(&record)?;
            match &outcome.error {
                None => {
                    summary.written += 1;
                    log::info!("sample {} done in {:.2} s", outcome.index, outcome.seconds);
                }
                Some(e) => {
                    summary.failed += 1;
                    log::warn!("sample {} failed: {e}", outcome.index);
                }
            }
            summary.outcomes.push(outcome);
        }
        start = end;
    }
    let out = writer.finish()?;
    Ok((summary, out))
}
