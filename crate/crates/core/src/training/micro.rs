//! Micro-task suite: toy versions of the ten tasks that a small model can
//! learn in minutes. Molecules are short chains over C, N and O.

use molsyn_autodiff::rng::stream;
use rand::Rng;

use std::path::Path;

use crate::data::{write_jsonl, CotFlags, CotRecord, TaskRecord};
use crate::error::{CoreError, Result};
use crate::specialist::TaskKind;
use crate::training::{DataPaths, PipelineConfig, StageConfig, TrainableSet};

/// Micro tasks whose answer is a SMILES string or a reaction.
pub const SMILES_TASKS: [TaskKind; 4] = [
    TaskKind::IupacToSmiles,
    TaskKind::SmilesGeneration,
    TaskKind::ForwardReaction,
    TaskKind::Retrosynthesis,
];

const NUMBER_WORDS: [&str; 9] = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight"];
const ALKANES: [&str; 7] = ["", "meth", "eth", "prop", "but", "pent", "hex"];

fn atom_name(c: char) -> &'static str {
    match c {
        'C' => "carbon",
        'N' => "nitrogen",
        _ => "oxygen",
    }
}

/// Random chain of `min..=max` atoms, mostly carbon.
pub fn random_chain(rng: &mut impl Rng, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    (0..n)
        .map(|_| match rng.random_range(0..6) {
            0 => 'N',
            1 => 'O',
            _ => 'C',
        })
        .collect()
}

fn count(s: &str, c: char) -> usize {
    s.chars().filter(|&x| x == c).count()
}

fn caption(chain: &str) -> String {
    let n = NUMBER_WORDS[chain.len().min(8)];
    let (o, nn) = (chain.contains('O'), chain.contains('N'));
    let tail = match (o, nn) {
        (true, true) => "with oxygen and nitrogen",
        (true, false) => "with oxygen",
        (false, true) => "with nitrogen",
        (false, false) => "of carbon only",
    };
    format!("a chain of {n} atoms {tail}")
}

/// `(smiles, name)` for simple alkanes, alcohols and amines.
fn named_chain(rng: &mut impl Rng) -> (String, String) {
    let n = rng.random_range(1..ALKANES.len());
    let carbons = "C".repeat(n);
    match rng.random_range(0..3) {
        0 => (carbons, format!("{}ane", ALKANES[n])),
        1 => (format!("{carbons}O"), format!("{}anol", ALKANES[n])),
        _ => (format!("{carbons}N"), format!("{}anamine", ALKANES[n])),
    }
}

/// One `(input, output)` pair for `task`.
pub fn sample_pair(task: TaskKind, rng: &mut impl Rng) -> (String, String) {
    match task {
        TaskKind::MoleculeCaptioning => {
            let c = random_chain(rng, 2, 6);
            let cap = caption(&c);
            (c, cap)
        }
        TaskKind::SmilesToIupac => {
            let (s, name) = named_chain(rng);
            (s, name)
        }
        TaskKind::IupacToSmiles => {
            let (s, name) = named_chain(rng);
            (name, s)
        }
        TaskKind::SmilesGeneration => {
            let c = random_chain(rng, 2, 5);
            let words: Vec<&str> = c.chars().map(atom_name).collect();
            (words.join(" "), c)
        }
        TaskKind::ForwardReaction => {
            let a = random_chain(rng, 1, 3);
            let b = random_chain(rng, 1, 3);
            (format!("{a}.{b}"), format!("{a}{b}"))
        }
        TaskKind::Retrosynthesis => {
            let p = random_chain(rng, 2, 6);
            let k = p.len() / 2;
            (p.clone(), format!("{}.{}", &p[..k], &p[k..]))
        }
        TaskKind::Bbbp => {
            let c = random_chain(rng, 2, 6);
            let y = if c.contains('N') { "Yes" } else { "No" };
            (c, y.into())
        }
        TaskKind::ClinTox => {
            let c = random_chain(rng, 2, 6);
            let y = if c.ends_with('O') { "Yes" } else { "No" };
            (c, y.into())
        }
        TaskKind::Esol => {
            let c = random_chain(rng, 2, 6);
            let v = count(&c, 'O');
            (c, format!("{v}"))
        }
        TaskKind::Lipophilicity => {
            let c = random_chain(rng, 2, 6);
            let v = count(&c, 'C');
            (c, format!("{v}"))
        }
    }
}

/// Templated reasoning step for a task.
pub fn think_for(task: TaskKind) -> String {
    let step = match task {
        TaskKind::Bbbp => "check for nitrogen in the chain",
        TaskKind::ClinTox => "check the last atom of the chain",
        TaskKind::Esol => "count the oxygen atoms",
        TaskKind::Lipophilicity => "count the carbon atoms",
        TaskKind::MoleculeCaptioning => "describe the atoms of the chain",
        TaskKind::SmilesToIupac => "name the chain and its group",
        TaskKind::IupacToSmiles => "build the chain from the name",
        TaskKind::SmilesGeneration => "write each atom in order",
        TaskKind::ForwardReaction => "join the two parts",
        TaskKind::Retrosynthesis => "split the chain in half",
    };
    format!("we {step}")
}

pub fn records(task: TaskKind, n: usize, seed: u64) -> Vec<TaskRecord> {
    let mut rng = stream(seed, &format!("micro/{}", task.name()));
    (0..n)
        .map(|i| {
            let (input, output) = sample_pair(task, &mut rng);
            TaskRecord::new(task, input, output, format!("{}-{i}", task.name()))
        })
        .collect()
}

/// `per_task` records for each of the ten tasks.
pub fn suite(per_task: usize, seed: u64) -> Vec<TaskRecord> {
    TaskKind::ALL.iter().flat_map(|&t| records(t, per_task, seed)).collect()
}

pub fn cot_records(records: &[TaskRecord]) -> Vec<CotRecord> {
    records
        .iter()
        .map(|r| {
            let flags = CotFlags {
                annotated: true,
                ..CotFlags::default()
            };
            CotRecord::new(r, think_for(r.task), r.output.clone(), flags)
        })
        .collect()
}

/// Copy task: the answer repeats the input chain.
pub fn copy_records(n: usize, seed: u64) -> Vec<TaskRecord> {
    let mut rng = stream(seed, "micro/copy");
    (0..n)
        .map(|i| {
            let c = random_chain(&mut rng, 2, 6);
            TaskRecord::new(TaskKind::SmilesGeneration, c.clone(), c, format!("copy-{i}"))
        })
        .collect()
}

/// Writes instruction and CoT sets over all ten tasks plus an RL set of the
/// SMILES-output tasks, drawn with a different seed.
pub fn write_fixture(dir: &Path, per_task: usize, seed: u64) -> Result<DataPaths> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(format!("creating {}", dir.display()), e))?;
    let paths = DataPaths {
        instruction: dir.join("instruction.jsonl"),
        cot: dir.join("cot.jsonl"),
        rl: dir.join("rl.jsonl"),
    };
    let recs = suite(per_task, seed);
    write_jsonl(&paths.instruction, &recs)?;
    write_jsonl(&paths.cot, &cot_records(&recs))?;
    let rl: Vec<TaskRecord> = SMILES_TASKS
        .iter()
        .flat_map(|&t| records(t, per_task.div_ceil(2), seed.wrapping_add(1)))
        .collect();
    write_jsonl(&paths.rl, &rl)?;
    Ok(paths)
}

/// Settings that train the micro suite end to end in a few minutes on one
/// CPU core.
pub fn toy_config(data: DataPaths, seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(data);
    cfg.seed = seed;
    cfg.model.d_model = 64;
    cfg.model.n_layers = 2;
    cfg.model.n_heads = 4;
    cfg.model.d_ff = 256;
    cfg.model.max_seq = 96;
    cfg.model.lora_rank = 8;
    cfg.model.vocab_size = 256;
    let stage = |lr, batch_size, steps| StageConfig {
        lr,
        batch_size,
        steps,
        trainable: TrainableSet::Adapters,
    };
    cfg.pretrain = stage(3e-3, 8, 500);
    cfg.stage1 = stage(5e-3, 8, 1500);
    cfg.stage2 = stage(1e-2, 4, 1500);
    cfg.stage3 = stage(1e-3, 16, 200);
    cfg.rl.max_new = 40;
    cfg.rl.tau = 1.0;
    cfg.eval_samples = 200;
    cfg
}

/// Text the vocabulary should cover.
pub fn corpus_text() -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for t in TaskKind::ALL {
        out.push(think_for(t));
        for r in records(t, 40, 0) {
            out.push(r.input);
            out.push(r.output);
        }
    }
    out.push("Draft".into());
    out.extend(NUMBER_WORDS.iter().map(|s| s.to_string()));
    for stem in ALKANES.iter().skip(1) {
        for suffix in ["ane", "anol", "anamine"] {
            out.push(format!("{stem}{suffix}"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_are_valid() {
        for r in suite(30, 1) {
            r.check().unwrap();
        }
        for r in copy_records(20, 1) {
            r.check().unwrap();
            assert_eq!(r.input, r.output);
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(suite(5, 9), suite(5, 9));
        assert_ne!(suite(5, 9), suite(5, 10));
    }

    #[test]
    fn examples() {
        assert_eq!(caption("CCO"), "a chain of three atoms with oxygen");
        assert_eq!(think_for(TaskKind::Bbbp), "we check for nitrogen in the chain");
    }
}
