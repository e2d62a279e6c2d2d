//! Hyperparameter sweeps over a base run configuration.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::config::SweepSection;
use crate::error::{Error, Result};
use crate::harness::{run_corpus, CorpusRun, DocumentCorpus, RunConfig};
use crate::metrics::{MetricsRow, QualityLatencyPoint};
use crate::models::Models;
use crate::policies::PolicyKind;

pub const DEFAULT_MAX_POINTS: usize = 10_000;

/// One swept parameter and its values.
#[derive(Debug, Clone, PartialEq)]
pub enum Axis {
    Tau(Vec<f64>),
    WaitK(Vec<usize>),
    Stride(Vec<usize>),
    Gamma(Vec<f64>),
    Continuations(Vec<usize>),
    ContinuationLen(Vec<usize>),
    TopK(Vec<usize>),
    SegmentSize(Vec<usize>),
}

impl Axis {
    fn name(&self) -> &'static str {
        match self {
            Axis::Tau(_) => "tau",
            Axis::WaitK(_) => "K",
            Axis::Stride(_) => "N",
            Axis::Gamma(_) => "gamma",
            Axis::Continuations(_) => "n",
            Axis::ContinuationLen(_) => "l",
            Axis::TopK(_) => "k",
            Axis::SegmentSize(_) => "segment_size",
        }
    }

    fn len(&self) -> usize {
        match self {
            Axis::Tau(v) | Axis::Gamma(v) => v.len(),
            Axis::WaitK(v)
            | Axis::Stride(v)
            | Axis::Continuations(v)
            | Axis::ContinuationLen(v)
            | Axis::TopK(v)
            | Axis::SegmentSize(v) => v.len(),
        }
    }

    fn needs_taf(&self) -> bool {
        matches!(
            self,
            Axis::Tau(_) | Axis::Continuations(_) | Axis::ContinuationLen(_) | Axis::TopK(_)
        )
    }

    fn apply(&self, i: usize, run: &mut RunConfig) {
        let taf = run.taf.as_mut();
        match self {
            Axis::Tau(v) => taf.expect("checked").tau = v[i],
            Axis::Continuations(v) => taf.expect("checked").n = v[i],
            Axis::ContinuationLen(v) => taf.expect("checked").l = v[i],
            Axis::TopK(v) => taf.expect("checked").k = v[i],
            Axis::WaitK(v) => run.policy.k = v[i],
            Axis::Stride(v) => run.policy.n = v[i],
            Axis::Gamma(v) => run.policy.gamma = v[i],
            Axis::SegmentSize(v) => run.policy.segment_size = v[i],
        }
    }
}

/// Cross product of parameter axes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepGrid {
    pub axes: Vec<Axis>,
    pub max_points: usize,
}

impl SweepGrid {
    pub fn from_section(s: &SweepSection) -> Self {
        let mut axes = Vec::new();
        if let Some(v) = &s.tau {
            axes.push(Axis::Tau(v.clone()));
        }
        if let Some(v) = &s.k_wait {
            axes.push(Axis::WaitK(v.clone()));
        }
        if let Some(v) = &s.n_stride {
            axes.push(Axis::Stride(v.clone()));
        }
        if let Some(v) = &s.gamma {
            axes.push(Axis::Gamma(v.clone()));
        }
        if let Some(v) = &s.n {
            axes.push(Axis::Continuations(v.clone()));
        }
        if let Some(v) = &s.l {
            axes.push(Axis::ContinuationLen(v.clone()));
        }
        if let Some(v) = &s.k {
            axes.push(Axis::TopK(v.clone()));
        }
        if let Some(v) = &s.segment_size {
            axes.push(Axis::SegmentSize(v.clone()));
        }
        SweepGrid {
            axes,
            max_points: s.max_points.unwrap_or(DEFAULT_MAX_POINTS),
        }
    }

    pub fn size(&self) -> usize {
        self.axes.iter().map(Axis::len).product()
    }

    /// One run configuration per grid point, in grid order.
    pub fn expand(&self, base: &RunConfig) -> Result<Vec<RunConfig>> {
        if self.axes.is_empty() || self.size() == 0 {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if self.size() > self.max_points {
            return Err(Error::Config(format!(
                "sweep grid has {} points, limit is {}",
                self.size(),
                self.max_points
            )));
        }
        if let Some(axis) = self.axes.iter().find(|a| a.needs_taf()) {
            if base.taf.is_none() {
                return Err(Error::Config(format!(
                    "sweeping {} needs an anticipating policy",
                    axis.name()
                )));
            }
        }
        let mut points = Vec::with_capacity(self.size());
        let mut index = vec![0usize; self.axes.len()];
        loop {
            let mut run = base.clone();
            for (axis, &i) in self.axes.iter().zip(&index) {
                axis.apply(i, &mut run);
            }
            if let (PolicyKind::Ralcp, Some(taf)) = (run.policy.kind, &run.taf) {
                run.policy.beam_width = taf.pool_size();
            }
            run.validate()?;
            points.push(run);

            let mut d = self.axes.len();
            loop {
                if d == 0 {
                    return Ok(points);
                }
                d -= 1;
                index[d] += 1;
                if index[d] < self.axes[d].len() {
                    break;
                }
                index[d] = 0;
            }
        }
    }
}

pub fn metrics_row(run: &RunConfig, point: &QualityLatencyPoint) -> MetricsRow {
    let taf = run.taf.as_ref();
    MetricsRow {
        config_id: point.config_id.clone(),
        policy: run.policy_name(),
        tau: taf.map(|t| t.tau),
        k_wait: run.policy.k,
        n_stride: run.policy.n,
        gamma: run.policy.gamma,
        n: taf.map(|t| t.n),
        l: taf.map(|t| t.l),
        k: taf.map(|t| t.k),
        bleu: point.bleu,
        al: point.al,
        laal: point.laal,
    }
}

fn cmp_opt_f64(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        _ => a.is_some().cmp(&b.is_some()),
    }
}

/// Canonical row order: policy, then parameters.
pub fn row_order(a: &MetricsRow, b: &MetricsRow) -> Ordering {
    a.policy
        .cmp(&b.policy)
        .then(a.k_wait.cmp(&b.k_wait))
        .then(a.n_stride.cmp(&b.n_stride))
        .then(a.gamma.total_cmp(&b.gamma))
        .then(cmp_opt_f64(a.tau, b.tau))
        .then(a.n.cmp(&b.n))
        .then(a.l.cmp(&b.l))
        .then(a.k.cmp(&b.k))
        .then(a.config_id.cmp(&b.config_id))
}

/// Rows not dominated by another row (at least as good in BLEU and LAAL,
/// strictly better in one), ordered by LAAL.
pub fn pareto_frontier(rows: &[MetricsRow]) -> Vec<MetricsRow> {
    let dominates = |q: &MetricsRow, p: &MetricsRow| {
        q.bleu >= p.bleu && q.laal <= p.laal && (q.bleu > p.bleu || q.laal < p.laal)
    };
    let mut front: Vec<MetricsRow> = rows
        .iter()
        .filter(|p| !rows.iter().any(|q| dominates(q, p)))
        .cloned()
        .collect();
    front.sort_by(|a, b| {
        a.laal
            .total_cmp(&b.laal)
            .then(b.bleu.total_cmp(&a.bleu))
            .then(row_order(a, b))
    });
    front
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    /// Sorted metrics rows with their runs.
    pub runs: Vec<(MetricsRow, CorpusRun)>,
}

impl SweepResult {
    pub fn rows(&self) -> Vec<MetricsRow> {
        self.runs.iter().map(|(r, _)| r.clone()).collect()
    }

    /// Trajectories of every grid point in row order.
    pub fn trajectories_jsonl(&self) -> String {
        self.runs
            .iter()
            .map(|(_, run)| run.trajectories_jsonl())
            .collect()
    }
}

/// Runs every grid point with at most `jobs` worker threads.
pub fn run_sweep(
    corpus: &DocumentCorpus,
    models: &Models,
    points: &[RunConfig],
    jobs: usize,
) -> Result<SweepResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    let mut runs = pool.install(|| {
        points
            .par_iter()
            .map(|run| {
                let out = run_corpus(corpus, models, run)?;
                Ok((metrics_row(run, &out.point), out))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    runs.sort_by(|a, b| row_order(&a.0, &b.0));
    Ok(SweepResult { runs })
}
