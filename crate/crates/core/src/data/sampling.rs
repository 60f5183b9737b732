//! Feature-space stratified sampling: embed each record with the model,
//! project to two dimensions, and draw a quota that covers the projected
//! space evenly. Selected subsets are pooled and split 8:1:1 per task.

use std::collections::{BTreeMap, BTreeSet};

use molsyn_autodiff::rng::stream;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::TaskRecord;
use crate::error::{CoreError, Result};
use crate::model::Transformer;
use crate::specialist::TaskKind;
use crate::tokenizer::Vocabulary;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reducer {
    /// Top-2 principal components.
    #[default]
    Pca,
}

impl Reducer {
    pub fn tag(self) -> &'static str {
        match self {
            Reducer::Pca => "pca",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplePlan {
    pub quotas: BTreeMap<TaskKind, usize>,
    #[serde(default)]
    pub reducer: Reducer,
    pub grid: usize,
    pub seed: u64,
}

impl SamplePlan {
    pub fn total(&self) -> usize {
        self.quotas.values().sum()
    }

    /// Quotas positive and, when given, summing to `target`.
    pub fn validate(&self, target: Option<usize>) -> Result<()> {
        if self.grid == 0 {
            return Err(CoreError::Config("grid resolution must be positive".into()));
        }
        if let Some((t, _)) = self.quotas.iter().find(|(_, &q)| q == 0) {
            return Err(CoreError::Config(format!("quota for {t} must be positive")));
        }
        if let Some(target) = target {
            if self.total() != target {
                return Err(CoreError::Config(format!(
                    "quotas sum to {} but the target size is {target}",
                    self.total()
                )));
            }
        }
        Ok(())
    }
}

/// One row per record: mean-pooled final hidden states over the input
/// tokens (truncated to the model's context).
pub fn embed_records(model: &Transformer, vocab: &Vocabulary, records: &[TaskRecord]) -> Result<Vec<Vec<f64>>> {
    records
        .iter()
        .map(|r| {
            let mut ids = vocab.encode(&r.input).ids;
            if ids.is_empty() {
                return Err(CoreError::Data(format!("record {} has no input tokens", r.id)));
            }
            ids.truncate(model.config.max_seq);
            model.embed(&ids, None)
        })
        .collect()
}

/// Projects rows onto their top two principal components. Each component's
/// sign is fixed so its largest-magnitude loading is positive.
pub fn reduce_2d(rows: &[Vec<f64>], reducer: Reducer) -> Result<Vec<[f64; 2]>> {
    let Reducer::Pca = reducer;
    let n = rows.len();
    if n < 3 {
        return Err(CoreError::Data(format!("need at least 3 rows to reduce, got {n}")));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(CoreError::Data("rows must share a positive width".into()));
    }
    let mut m = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    for j in 0..d {
        let mean = m.column(j).mean();
        m.column_mut(j).add_scalar_mut(-mean);
    }
    let scale = m.amax();
    if scale == 0.0 {
        return Err(CoreError::Data("rows have zero variance".into()));
    }
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut comps: Vec<Vec<f64>> = Vec::new();
    for &k in order.iter().take(2) {
        let mut c: Vec<f64> = v_t.row(k).iter().copied().collect();
        let lead = c.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            c.iter_mut().for_each(|x| *x = -*x);
        }
        comps.push(c);
    }
    let project = |i: usize, c: Option<&Vec<f64>>| c.map_or(0.0, |c| (0..d).map(|j| m[(i, j)] * c[j]).sum());
    Ok((0..n).map(|i| [project(i, comps.first()), project(i, comps.get(1))]).collect())
}

/// Grid cell of each point over the coordinates' bounding box.
pub fn grid_cells(coords: &[[f64; 2]], grid: usize) -> Vec<usize> {
    let bounds = |k: usize| {
        coords
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c[k]), hi.max(c[k])))
    };
    let (bx, by) = (bounds(0), bounds(1));
    let bin = |v: f64, (lo, hi): (f64, f64)| {
        if hi > lo {
            (((v - lo) / (hi - lo) * grid as f64) as usize).min(grid - 1)
        } else {
            0
        }
    };
    coords.iter().map(|c| bin(c[1], by) * grid + bin(c[0], bx)).collect()
}

/// Round-robin over non-empty grid cells, one seeded-uniform unseen point
/// per visit, until `quota` points are chosen. Returns sorted indices.
pub fn stratified_sample(coords: &[[f64; 2]], quota: usize, grid: usize, seed: u64) -> Result<Vec<usize>> {
    if quota > coords.len() {
        return Err(CoreError::Data(format!(
            "quota {quota} exceeds the {} available records",
            coords.len()
        )));
    }
    if grid == 0 {
        return Err(CoreError::Config("grid resolution must be positive".into()));
    }
    let mut cells: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, c) in grid_cells(coords, grid).into_iter().enumerate() {
        cells.entry(c).or_default().push(i);
    }
    let mut rng = stream(seed, "stratified_sample");
    let mut queues: Vec<Vec<usize>> = cells
        .into_values()
        .map(|mut v| {
            v.shuffle(&mut rng);
            v.reverse();
            v
        })
        .collect();
    let mut chosen = Vec::with_capacity(quota);
    while chosen.len() < quota {
        for q in queues.iter_mut() {
            if chosen.len() == quota {
                break;
            }
            if let Some(i) = q.pop() {
                chosen.push(i);
            }
        }
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Embeds, reduces and samples one task's records.
pub fn sample_task(
    model: &Transformer,
    vocab: &Vocabulary,
    records: &[TaskRecord],
    quota: usize,
    plan: &SamplePlan,
) -> Result<Vec<TaskRecord>> {
    if quota >= records.len() {
        return Ok(records.to_vec());
    }
    let coords = reduce_2d(&embed_records(model, vocab, records)?, plan.reducer)?;
    let task = records.first().map_or("", |r| r.task.name());
    let idx = stratified_sample(&coords, quota, plan.grid, plan.seed ^ fxhash(task))?;
    Ok(idx.into_iter().map(|i| records[i].clone()).collect())
}

fn fxhash(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<TaskRecord>,
    pub valid: Vec<TaskRecord>,
    pub test: Vec<TaskRecord>,
}

/// Largest-remainder apportionment of `n` over `weights`; ties go to the
/// earlier part.
pub fn apportion(n: usize, weights: &[usize]) -> Vec<usize> {
    let total: usize = weights.iter().sum();
    let mut counts: Vec<usize> = weights.iter().map(|w| n * w / total).collect();
    let mut rest: Vec<(usize, usize)> = weights.iter().enumerate().map(|(i, w)| (n * w % total, i)).collect();
    rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = n - counts.iter().sum::<usize>();
    for &(_, i) in rest.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// Pools the subsets, shuffles each task's records and splits them 8:1:1.
pub fn aggregate_and_split(subsets: &[Vec<TaskRecord>], seed: u64) -> Result<Splits> {
    let mut seen = BTreeSet::new();
    let mut dups = BTreeSet::new();
    for r in subsets.iter().flatten() {
        if !seen.insert(r.id.as_str()) {
            dups.insert(r.id.clone());
        }
    }
    if !dups.is_empty() {
        return Err(CoreError::Data(format!(
            "duplicate record ids: {}",
            dups.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let mut by_task: BTreeMap<TaskKind, Vec<TaskRecord>> = BTreeMap::new();
    for r in subsets.iter().flatten() {
        by_task.entry(r.task).or_default().push(r.clone());
    }
    let mut out = Splits::default();
    for (task, mut recs) in by_task {
        recs.shuffle(&mut stream(seed, &format!("split/{}", task.name())));
        let c = apportion(recs.len(), &[8, 1, 1]);
        let test = recs.split_off(c[0] + c[1]);
        let valid = recs.split_off(c[0]);
        out.train.extend(recs);
        out.valid.extend(valid);
        out.test.extend(test);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn recs(task: TaskKind, n: usize, prefix: &str) -> Vec<TaskRecord> {
        (0..n)
            .map(|i| TaskRecord::new(task, format!("C{i}"), "Yes", format!("{prefix}{i}")))
            .collect()
    }

    #[test]
    fn split_counts() {
        let s = aggregate_and_split(&[recs(TaskKind::Bbbp, 100, "a")], 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (80, 10, 10));
        let s = aggregate_and_split(&[recs(TaskKind::Bbbp, 10, "a")], 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (8, 1, 1));
        assert_eq!(apportion(7, &[8, 1, 1]), vec![5, 1, 1]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let a = recs(TaskKind::Bbbp, 3, "x");
        let err = aggregate_and_split(&[a.clone(), a], 0).unwrap_err().to_string();
        assert!(err.contains("x0") && err.contains("x2"));
    }

    #[test]
    fn pca_preserves_planar_distances() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 0.0], vec![-1.0, 0.5], vec![0.3, -0.2], vec![-0.3, -0.3]];
        let c = reduce_2d(&rows, Reducer::Pca).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let d0 = ((rows[i][0] - rows[j][0]).powi(2) + (rows[i][1] - rows[j][1]).powi(2)).sqrt();
                let d1 = ((c[i][0] - c[j][0]).powi(2) + (c[i][1] - c[j][1]).powi(2)).sqrt();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pca_collinear_and_degenerate() {
        let rows: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let c = reduce_2d(&rows, Reducer::Pca).unwrap();
        assert!(c.iter().all(|p| p[1].abs() < 1e-9));
        assert!(reduce_2d(&vec![vec![1.0, 2.0]; 4], Reducer::Pca).is_err());
        assert!(reduce_2d(&rows[..2], Reducer::Pca).is_err());
    }

    #[test]
    fn pca_sign_convention() {
        let rows: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![1.0, 0.1], vec![2.0, -0.1], vec![3.0, 0.0]];
        let c = reduce_2d(&rows, Reducer::Pca).unwrap();
        // First component is close to +x, so coordinates increase with x.
        assert!(c[0][0] < c[3][0]);
    }

    #[test]
    fn two_clusters_balanced() {
        let mut coords = Vec::new();
        for i in 0..900 {
            coords.push([(i % 30) as f64 * 0.001, (i / 30) as f64 * 0.001]);
        }
        for i in 0..100 {
            coords.push([10.0 + (i % 10) as f64 * 0.001, 10.0 + (i / 10) as f64 * 0.001]);
        }
        let s = stratified_sample(&coords, 100, 2, 3).unwrap();
        let big = s.iter().filter(|&&i| i < 900).count();
        assert_eq!(big, 50);
        assert_eq!(stratified_sample(&coords, 100, 2, 3).unwrap(), s);
        let other = stratified_sample(&coords, 100, 2, 4).unwrap();
        assert_ne!(other, s);
        assert_eq!(other.iter().filter(|&&i| i < 900).count(), 50);
        assert!(stratified_sample(&coords, 1001, 2, 3).is_err());
        assert_eq!(stratified_sample(&coords, 1000, 2, 3).unwrap().len(), 1000);
    }

    proptest! {
        #[test]
        fn split_partitions(n1 in 0usize..60, n2 in 0usize..60, seed in any::<u64>()) {
            let a = recs(TaskKind::Bbbp, n1, "a");
            let b = recs(TaskKind::Esol, n2, "b");
            let s = aggregate_and_split(&[a, b], seed).unwrap();
            let mut ids: Vec<String> = s.train.iter().chain(&s.valid).chain(&s.test).map(|r| r.id.clone()).collect();
            prop_assert_eq!(ids.len(), n1 + n2);
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), n1 + n2);
            for (task, n) in [(TaskKind::Bbbp, n1), (TaskKind::Esol, n2)] {
                let count = |v: &[TaskRecord]| v.iter().filter(|r| r.task == task).count() as f64;
                let nf = n as f64;
                prop_assert!((count(&s.train) - 0.8 * nf).abs() <= 1.0);
                prop_assert!((count(&s.valid) - 0.1 * nf).abs() <= 1.0);
                prop_assert!((count(&s.test) - 0.1 * nf).abs() <= 1.0);
            }
        }

        #[test]
        fn pca_first_axis_dominates(seed in 0u64..50) {
            use rand::Rng;
            let mut rng = stream(seed, "pca");
            let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..5).map(|_| rng.random::<f64>()).collect()).collect();
            let c = reduce_2d(&rows, Reducer::Pca).unwrap();
            let var = |k: usize| c.iter().map(|p| p[k] * p[k]).sum::<f64>();
            prop_assert!(var(0) >= var(1) - 1e-12);
        }
    }
}
