//! Before/after 2-D projections of specialist representations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{reduce_2d, Reducer, TaskRecord};
use crate::error::{CoreError, Result};
use crate::model::Checkpoint;
use crate::specialist::{Phase, RouterMode, SpecialistLayer, TaskKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub tasks: Vec<TaskKind>,
    pub before: Vec<[f64; 2]>,
    pub after: Vec<[f64; 2]>,
    /// Mean intra-task pairwise distance.
    pub dispersion_before: BTreeMap<TaskKind, f64>,
    pub dispersion_after: BTreeMap<TaskKind, f64>,
}

/// Mean pairwise distance between points of the same task.
pub fn dispersion(coords: &[[f64; 2]], tasks: &[TaskKind]) -> BTreeMap<TaskKind, f64> {
    let mut sums: BTreeMap<TaskKind, (f64, usize)> = BTreeMap::new();
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            if tasks[i] == tasks[j] {
                let d = ((coords[i][0] - coords[j][0]).powi(2) + (coords[i][1] - coords[j][1]).powi(2)).sqrt();
                let e = sums.entry(tasks[i]).or_default();
                e.0 += d;
                e.1 += 1;
            }
        }
    }
    sums.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect()
}

/// Both sets share one basis fitted on their union, so distances are
/// comparable across the two.
pub fn project_embeddings(before: &[Vec<f64>], after: &[Vec<f64>], tasks: &[TaskKind], reducer: Reducer) -> Result<Projection> {
    if before.len() != tasks.len() || after.len() != tasks.len() {
        return Err(CoreError::Data("embedding and task counts differ".into()));
    }
    let all: Vec<Vec<f64>> = before.iter().chain(after).cloned().collect();
    let coords = reduce_2d(&all, reducer)?;
    let (b, a) = coords.split_at(before.len());
    Ok(Projection {
        tasks: tasks.to_vec(),
        dispersion_before: dispersion(b, tasks),
        dispersion_after: dispersion(a, tasks),
        before: b.to_vec(),
        after: a.to_vec(),
    })
}

/// Embeds each record through its group's `phase` adapter (or the bare
/// base model if the checkpoint has none) under both checkpoints.
pub fn project_representations(
    before: &Checkpoint,
    after: &Checkpoint,
    records: &[TaskRecord],
    phase: Phase,
    reducer: Reducer,
) -> Result<Projection> {
    let embed = |ck: &Checkpoint| -> Result<Vec<Vec<f64>>> {
        let layer = SpecialistLayer::load(ck, RouterMode::Oracle)?;
        records
            .iter()
            .map(|r| {
                let mut ids = ck.vocab.encode(&r.input).ids;
                if ids.is_empty() {
                    return Err(CoreError::Data(format!("record {} has no input tokens", r.id)));
                }
                ids.truncate(ck.model.config.max_seq);
                ck.model.embed(&ids, layer.adapter(r.task.group(), phase).ok())
            })
            .collect()
    };
    let tasks: Vec<TaskKind> = records.iter().map(|r| r.task).collect();
    project_embeddings(&embed(before)?, &embed(after)?, &tasks, reducer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use molsyn_autodiff::rng::stream;
    use rand::Rng;

    fn clusters(spread: f64) -> (Vec<Vec<f64>>, Vec<TaskKind>) {
        let mut rng = stream(5, "clusters");
        let centres = [(TaskKind::Bbbp, [3.0, 0.0, 1.0, 0.0]), (TaskKind::Esol, [-3.0, 1.0, 0.0, 2.0])];
        let mut rows = Vec::new();
        let mut tasks = Vec::new();
        for (t, c) in centres {
            for _ in 0..20 {
                rows.push(c.iter().map(|x| x + spread * rng.random_range(-1.0..1.0)).collect());
                tasks.push(t);
            }
        }
        (rows, tasks)
    }

    #[test]
    fn shrunk_clusters_disperse_less() {
        let (before, tasks) = clusters(1.0);
        let (after, _) = clusters(0.3);
        let p = project_embeddings(&before, &after, &tasks, Reducer::Pca).unwrap();
        assert_eq!((p.before.len(), p.after.len()), (40, 40));
        for t in [TaskKind::Bbbp, TaskKind::Esol] {
            assert!(p.dispersion_after[&t] < p.dispersion_before[&t]);
        }
    }

    #[test]
    fn identical_inputs_identical_coords() {
        let (rows, tasks) = clusters(1.0);
        let p = project_embeddings(&rows, &rows, &tasks, Reducer::Pca).unwrap();
        assert_eq!(p.before, p.after);
        assert!(project_embeddings(&rows, &rows[1..], &tasks, Reducer::Pca).is_err());
    }
}
