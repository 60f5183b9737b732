//! Candidate pipeline: generate a molecule, screen its properties, caption
//! it and propose a retrosynthesis, each through paired inference.

use serde::{Deserialize, Serialize};

use crate::rewards::parse_yes_no;
use crate::specialist::{paired_inference, Decoder, OutputFormat, TaskKind};

pub const SCREEN_TASKS: [TaskKind; 4] = [TaskKind::Bbbp, TaskKind::ClinTox, TaskKind::Esol, TaskKind::Lipophilicity];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    /// The prompt already was a valid SMILES, so nothing was generated.
    Provided,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoStage {
    pub task: TaskKind,
    pub status: StageStatus,
    pub input: String,
    pub draft: String,
    pub think: String,
    pub answer: String,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub prompt: String,
    pub molecule: Option<String>,
    pub stages: Vec<DemoStage>,
}

fn answer_ok(task: TaskKind, answer: &str) -> Result<(), String> {
    let a = answer.trim();
    let ok = match task.output_format() {
        OutputFormat::Smiles | OutputFormat::Reaction => molsyn_chem::is_valid_smiles(a),
        OutputFormat::YesNo => parse_yes_no(a).is_some(),
        OutputFormat::Float => a.parse::<f64>().is_ok_and(f64::is_finite),
        OutputFormat::Text => !a.is_empty(),
    };
    if ok {
        Ok(())
    } else {
        Err(format!("answer {a:?} is not a valid {:?} output", task.output_format()))
    }
}

fn stage(decoder: &dyn Decoder, task: TaskKind, input: &str) -> DemoStage {
    let mut s = DemoStage {
        task,
        status: StageStatus::Ok,
        input: input.to_string(),
        draft: String::new(),
        think: String::new(),
        answer: String::new(),
        error: None,
    };
    match paired_inference(decoder, task, input) {
        Ok(o) => {
            s.draft = o.draft_answer;
            s.think = o.think;
            s.answer = o.final_answer.trim().to_string();
            if let Err(e) = answer_ok(task, &s.answer) {
                s.status = StageStatus::Failed;
                s.error = Some(e);
            }
        }
        Err(e) => {
            s.status = StageStatus::Failed;
            s.error = Some(e.to_string());
        }
    }
    s
}

fn skipped(task: TaskKind) -> DemoStage {
    DemoStage {
        task,
        status: StageStatus::Skipped,
        input: String::new(),
        draft: String::new(),
        think: String::new(),
        answer: String::new(),
        error: Some("no valid molecule".into()),
    }
}

/// Runs every prompt through the pipeline. A failing stage is recorded and
/// never stops the other candidates; stages after a failed generation are
/// skipped.
pub fn run_demo(decoder: &dyn Decoder, prompts: &[String]) -> Vec<CandidateReport> {
    prompts
        .iter()
        .map(|p| {
            let p = p.trim();
            let gen = if molsyn_chem::is_valid_smiles(p) {
                DemoStage {
                    status: StageStatus::Provided,
                    answer: p.to_string(),
                    error: None,
                    ..skipped(TaskKind::SmilesGeneration)
                }
            } else {
                stage(decoder, TaskKind::SmilesGeneration, p)
            };
            let molecule = matches!(gen.status, StageStatus::Ok | StageStatus::Provided).then(|| gen.answer.clone());
            let mut stages = vec![gen];
            let rest = SCREEN_TASKS
                .iter()
                .copied()
                .chain([TaskKind::MoleculeCaptioning, TaskKind::Retrosynthesis]);
            for t in rest {
                stages.push(match &molecule {
                    Some(m) => stage(decoder, t, m),
                    None => skipped(t),
                });
            }
            CandidateReport {
                prompt: p.to_string(),
                molecule,
                stages,
            }
        })
        .collect()
}
