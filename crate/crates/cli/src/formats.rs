//! On-disk schemas and IO for every artifact the CLI reads or writes.
//!
//! Structured artifacts are JSON / JSONL (one record per line);
//! spreadsheet-friendly outputs (rankings, training traces) are CSV. All
//! maps are ordered, so serialization is deterministic and identical runs
//! produce byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use grouppref_core::aggregate::{GroupTargets, PairProbMatrix};
use grouppref_core::dataset::{GroupDataset, GroupId, Item, ItemId, OracleParams};
use grouppref_core::policy::{CategoricalPolicy, ContextHead, ContextId, TraceStep};
use grouppref_core::prefgen::{MaxDiffTrial, PairLabel};
use grouppref_core::rewardfit::{FitReport, ScoreParams};

use crate::error::{CliError, Result};

// ---------------------------------------------------------------------------
// items.jsonl + oracle.json
// ---------------------------------------------------------------------------

/// One line of `items.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemRecord {
    pub id: u64,
    pub group: u64,
    pub features: Vec<f64>,
    pub humor: f64,
}

/// The oracle sidecar (`oracle.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleFile {
    pub dimension: usize,
    pub groups: BTreeMap<u64, OracleEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleEntry {
    pub w: Vec<f64>,
    pub bias: f64,
}

pub fn write_dataset(
    dataset: &GroupDataset,
    items_path: &Path,
    oracle_path: &Path,
) -> Result<()> {
    let records: Vec<ItemRecord> = dataset
        .items()
        .map(|it| ItemRecord {
            id: it.id.0,
            group: it.group.0,
            features: it.features.clone(),
            humor: it.humor,
        })
        .collect();
    write_jsonl(items_path, &records)?;

    let oracle = OracleFile {
        dimension: dataset.dimension(),
        groups: dataset
            .oracles()
            .iter()
            .map(|(gid, o)| (gid.0, OracleEntry { w: o.weights.clone(), bias: o.bias }))
            .collect(),
    };
    write_json(oracle_path, &oracle)
}

pub fn read_dataset(items_path: &Path, oracle_path: &Path) -> Result<GroupDataset> {
    let records: Vec<ItemRecord> = read_jsonl(items_path)?;
    let oracle: OracleFile = read_json(oracle_path)?;

    let mut groups: BTreeMap<GroupId, Vec<Item>> = BTreeMap::new();
    for r in records {
        groups.entry(GroupId(r.group)).or_default().push(Item {
            id: ItemId(r.id),
            group: GroupId(r.group),
            features: r.features,
            humor: r.humor,
        });
    }
    let oracles: BTreeMap<GroupId, OracleParams> = oracle
        .groups
        .into_iter()
        .map(|(g, o)| (GroupId(g), OracleParams { weights: o.w, bias: o.bias }))
        .collect();
    GroupDataset::new(oracle.dimension, groups, oracles)
        .map_err(|e| CliError::check("load-dataset", e))
}

// ---------------------------------------------------------------------------
// pairs.jsonl
// ---------------------------------------------------------------------------

/// One line of `pairs.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub group: u64,
    pub i: u64,
    pub j: u64,
    pub y: u8,
}

pub fn write_pairs(path: &Path, labels: &[PairLabel]) -> Result<()> {
    let records: Vec<PairRecord> = labels
        .iter()
        .map(|l| PairRecord {
            group: l.group.0,
            i: l.i.0,
            j: l.j.0,
            y: u8::from(l.y),
        })
        .collect();
    write_jsonl(path, &records)
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairLabel>> {
    let records: Vec<PairRecord> = read_jsonl(path)?;
    records
        .into_iter()
        .map(|r| {
            if r.y > 1 {
                return Err(CliError::parse(path, format!("label y={} not in {{0,1}}", r.y)));
            }
            Ok(PairLabel {
                group: GroupId(r.group),
                i: ItemId(r.i),
                j: ItemId(r.j),
                y: r.y == 1,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// maxdiff.jsonl
// ---------------------------------------------------------------------------

/// One line of `maxdiff.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaxDiffRecord {
    pub group: u64,
    pub subset: Vec<u64>,
    pub best: u64,
    pub worst: u64,
}

pub fn write_maxdiff(path: &Path, trials: &[MaxDiffTrial]) -> Result<()> {
    let records: Vec<MaxDiffRecord> = trials
        .iter()
        .map(|t| MaxDiffRecord {
            group: t.group.0,
            subset: t.subset.iter().map(|id| id.0).collect(),
            best: t.best.0,
            worst: t.worst.0,
        })
        .collect();
    write_jsonl(path, &records)
}

pub fn read_maxdiff(path: &Path) -> Result<Vec<MaxDiffTrial>> {
    let records: Vec<MaxDiffRecord> = read_jsonl(path)?;
    Ok(records
        .into_iter()
        .map(|r| MaxDiffTrial {
            group: GroupId(r.group),
            subset: r.subset.into_iter().map(ItemId).collect(),
            best: ItemId(r.best),
            worst: ItemId(r.worst),
        })
        .collect())
}

// ---------------------------------------------------------------------------
// params.json
// ---------------------------------------------------------------------------

/// Fitted score head (`params.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub w: Vec<f64>,
    pub b: f64,
    pub report: FitReportEntry,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitReportEntry {
    pub iters: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub converged: bool,
}

pub fn write_params(path: &Path, params: &ScoreParams, report: &FitReport) -> Result<()> {
    write_json(
        path,
        &ParamsFile {
            w: params.weights.clone(),
            b: params.bias,
            report: FitReportEntry {
                iters: report.iterations,
                loss: report.final_loss,
                grad_norm: report.final_grad_norm,
                converged: report.converged,
            },
        },
    )
}

pub fn read_params(path: &Path) -> Result<ScoreParams> {
    let file: ParamsFile = read_json(path)?;
    Ok(ScoreParams { weights: file.w, bias: file.b })
}

// ---------------------------------------------------------------------------
// probs.json
// ---------------------------------------------------------------------------

/// Pairwise probability matrices (`probs.json`).
///
/// Entries are row-major with `null` for missing comparisons; supplying
/// only one direction of a pair is enough — the reverse is completed
/// antisymmetrically on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbsFile {
    pub groups: BTreeMap<u64, ProbsEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbsEntry {
    pub items: Vec<u64>,
    pub p: Vec<Vec<Option<f64>>>,
}

pub fn read_probs(path: &Path) -> Result<Vec<PairProbMatrix>> {
    let file: ProbsFile = read_json(path)?;
    file.groups
        .into_iter()
        .map(|(gid, entry)| {
            let n = entry.items.len();
            if entry.p.len() != n || entry.p.iter().any(|row| row.len() != n) {
                return Err(CliError::parse(
                    path,
                    format!("group {gid}: probability matrix is not {n}x{n}"),
                ));
            }
            let mut entries = Vec::new();
            for (i, row) in entry.p.iter().enumerate() {
                for (j, cell) in row.iter().enumerate() {
                    if let Some(p) = cell {
                        entries.push((i, j, *p));
                    }
                }
            }
            PairProbMatrix::from_entries(
                GroupId(gid),
                entry.items.iter().copied().map(ItemId).collect(),
                &entries,
            )
            .map_err(|e| CliError::check("load-probs", e))
        })
        .collect()
}

pub fn write_probs(path: &Path, matrices: &[PairProbMatrix]) -> Result<()> {
    let groups = matrices
        .iter()
        .map(|m| {
            let n = m.n();
            let p: Vec<Vec<Option<f64>>> = (0..n)
                .map(|i| (0..n).map(|j| if i == j { None } else { m.get(i, j) }).collect())
                .collect();
            (
                m.group().0,
                ProbsEntry { items: m.items().iter().map(|id| id.0).collect(), p },
            )
        })
        .collect();
    write_json(path, &ProbsFile { groups })
}

// ---------------------------------------------------------------------------
// ranking.csv
// ---------------------------------------------------------------------------

/// One row of `ranking.csv`. `rank` is 1-based within its group; for
/// MaxDiff aggregation the `ebc` column carries the best-worst score and
/// `q` is empty.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingRow {
    pub group: u64,
    pub item_id: u64,
    pub ebc: f64,
    pub q: Option<f64>,
    pub rank: usize,
}

pub fn write_ranking(path: &Path, rows: &[RankingRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_ranking(path: &Path) -> Result<Vec<RankingRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    reader
        .deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::parse(path, format!("{other:?}")),
    }
}

// ---------------------------------------------------------------------------
// targets.json
// ---------------------------------------------------------------------------

/// Listwise targets per context (`targets.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetsEntry {
    pub items: Vec<u64>,
    pub q: Vec<f64>,
}

pub fn write_targets(path: &Path, targets: &BTreeMap<ContextId, GroupTargets>) -> Result<()> {
    let map: BTreeMap<u64, TargetsEntry> = targets
        .iter()
        .map(|(ctx, t)| {
            (
                ctx.0,
                TargetsEntry {
                    items: t.items.iter().map(|id| id.0).collect(),
                    q: t.q.clone(),
                },
            )
        })
        .collect();
    write_json(path, &map)
}

pub fn read_targets(path: &Path) -> Result<BTreeMap<ContextId, GroupTargets>> {
    let map: BTreeMap<u64, TargetsEntry> = read_json(path)?;
    Ok(map
        .into_iter()
        .map(|(ctx, t)| {
            (
                ContextId(ctx),
                GroupTargets {
                    group: GroupId(ctx),
                    items: t.items.into_iter().map(ItemId).collect(),
                    q: t.q,
                },
            )
        })
        .collect())
}

// ---------------------------------------------------------------------------
// policy.json + humor.json
// ---------------------------------------------------------------------------

/// A tabular policy (`policy.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub contexts: BTreeMap<u64, PolicyEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEntry {
    pub captions: Vec<u64>,
    pub logits: Vec<f64>,
}

pub fn write_policy(path: &Path, policy: &CategoricalPolicy) -> Result<()> {
    let contexts = policy
        .contexts()
        .iter()
        .map(|(ctx, head)| {
            (
                ctx.0,
                PolicyEntry {
                    captions: head.captions.iter().map(|id| id.0).collect(),
                    logits: head.logits.clone(),
                },
            )
        })
        .collect();
    write_json(path, &PolicyFile { contexts })
}

pub fn read_policy(path: &Path) -> Result<CategoricalPolicy> {
    let file: PolicyFile = read_json(path)?;
    let contexts = file
        .contexts
        .into_iter()
        .map(|(ctx, entry)| {
            (
                ContextId(ctx),
                ContextHead {
                    captions: entry.captions.into_iter().map(ItemId).collect(),
                    logits: entry.logits,
                },
            )
        })
        .collect();
    CategoricalPolicy::new(contexts).map_err(|e| CliError::check("load-policy", e))
}

/// Quality table keyed `context -> caption -> value` (`humor.json`).
pub type HumorTable = BTreeMap<ContextId, BTreeMap<ItemId, f64>>;

pub fn write_humor(path: &Path, humor: &HumorTable) -> Result<()> {
    let map: BTreeMap<u64, BTreeMap<u64, f64>> = humor
        .iter()
        .map(|(ctx, t)| (ctx.0, t.iter().map(|(id, h)| (id.0, *h)).collect()))
        .collect();
    write_json(path, &map)
}

pub fn read_humor(path: &Path) -> Result<HumorTable> {
    let map: BTreeMap<u64, BTreeMap<u64, f64>> = read_json(path)?;
    Ok(map
        .into_iter()
        .map(|(ctx, t)| {
            (
                ContextId(ctx),
                t.into_iter().map(|(id, h)| (ItemId(id), h)).collect(),
            )
        })
        .collect())
}

// ---------------------------------------------------------------------------
// trace.csv
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub mean_kl: f64,
    pub expected_humor: f64,
}

pub fn write_trace(path: &Path, trace: &[TraceStep]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for step in trace {
        writer
            .serialize(TraceRow {
                step: step.step,
                loss: step.loss,
                mean_kl: step.mean_kl,
                expected_humor: step.expected_humor,
            })
            .map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))
}

// ---------------------------------------------------------------------------
// generic JSON / JSONL helpers
// ---------------------------------------------------------------------------

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::parse(path, e))?;
    body.push('\n');
    fs::write(path, body).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let body = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&body).map_err(|e| CliError::parse(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(|e| CliError::parse(path, e))?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| CliError::parse(path, format!("line {}: {e}", lineno + 1)))?;
        records.push(record);
    }
    Ok(records)
}
