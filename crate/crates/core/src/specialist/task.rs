use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// The ten molecular tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    MoleculeCaptioning,
    SmilesGeneration,
    SmilesToIupac,
    IupacToSmiles,
    ForwardReaction,
    Retrosynthesis,
    #[serde(rename = "BBBP")]
    Bbbp,
    ClinTox,
    #[serde(rename = "ESOL")]
    Esol,
    Lipophilicity,
}

/// Shape of a task's answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Text,
    Smiles,
    Reaction,
    YesNo,
    Float,
}

impl TaskKind {
    pub const ALL: [TaskKind; 10] = [
        TaskKind::MoleculeCaptioning,
        TaskKind::SmilesGeneration,
        TaskKind::SmilesToIupac,
        TaskKind::IupacToSmiles,
        TaskKind::ForwardReaction,
        TaskKind::Retrosynthesis,
        TaskKind::Bbbp,
        TaskKind::ClinTox,
        TaskKind::Esol,
        TaskKind::Lipophilicity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::MoleculeCaptioning => "MoleculeCaptioning",
            TaskKind::SmilesGeneration => "SmilesGeneration",
            TaskKind::SmilesToIupac => "SmilesToIupac",
            TaskKind::IupacToSmiles => "IupacToSmiles",
            TaskKind::ForwardReaction => "ForwardReaction",
            TaskKind::Retrosynthesis => "Retrosynthesis",
            TaskKind::Bbbp => "BBBP",
            TaskKind::ClinTox => "ClinTox",
            TaskKind::Esol => "ESOL",
            TaskKind::Lipophilicity => "Lipophilicity",
        }
    }

    /// Tag token placed at the start of every prompt for this task.
    pub fn tag(self) -> String {
        format!("⟨task:{}⟩", self.name())
    }

    pub fn from_tag(tag: &str) -> Option<TaskKind> {
        let name = tag.strip_prefix("⟨task:")?.strip_suffix('⟩')?;
        name.parse().ok()
    }

    pub fn output_format(self) -> OutputFormat {
        match self {
            TaskKind::MoleculeCaptioning | TaskKind::SmilesToIupac => OutputFormat::Text,
            TaskKind::SmilesGeneration | TaskKind::IupacToSmiles => OutputFormat::Smiles,
            TaskKind::ForwardReaction | TaskKind::Retrosynthesis => OutputFormat::Reaction,
            TaskKind::Bbbp | TaskKind::ClinTox => OutputFormat::YesNo,
            TaskKind::Esol | TaskKind::Lipophilicity => OutputFormat::Float,
        }
    }

    /// Specialist group (1-8) that owns this task.
    pub fn group(self) -> GroupId {
        GroupId(match self {
            TaskKind::MoleculeCaptioning => 1,
            TaskKind::SmilesToIupac => 2,
            TaskKind::SmilesGeneration | TaskKind::IupacToSmiles => 3,
            TaskKind::ForwardReaction | TaskKind::Retrosynthesis => 4,
            TaskKind::Bbbp => 5,
            TaskKind::ClinTox => 6,
            TaskKind::Esol => 7,
            TaskKind::Lipophilicity => 8,
        })
    }
}

/// Maps a task to its specialist group.
pub fn assign_group(task: TaskKind) -> GroupId {
    task.group()
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| CoreError::Config(format!("unknown task {s:?}")))
    }
}

/// Specialist group number in `1..=8`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupId(u8);

impl GroupId {
    pub const COUNT: usize = 8;

    pub fn new(id: u8) -> Option<GroupId> {
        (1..=8).contains(&id).then_some(GroupId(id))
    }

    pub fn all() -> impl Iterator<Item = GroupId> {
        (1..=8).map(GroupId)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based position in routing weight vectors.
    pub fn index(self) -> usize {
        usize::from(self.0 - 1)
    }

    pub fn tasks(self) -> Vec<TaskKind> {
        TaskKind::ALL.into_iter().filter(|t| t.group() == self).collect()
    }

    pub fn output_format(self) -> OutputFormat {
        self.tasks()[0].output_format()
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "group{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_table() {
        let expect = [
            (TaskKind::MoleculeCaptioning, 1),
            (TaskKind::SmilesToIupac, 2),
            (TaskKind::SmilesGeneration, 3),
            (TaskKind::IupacToSmiles, 3),
            (TaskKind::ForwardReaction, 4),
            (TaskKind::Retrosynthesis, 4),
            (TaskKind::Bbbp, 5),
            (TaskKind::ClinTox, 6),
            (TaskKind::Esol, 7),
            (TaskKind::Lipophilicity, 8),
        ];
        for (task, g) in expect {
            assert_eq!(assign_group(task).get(), g, "{task}");
        }
        assert_ne!(assign_group(TaskKind::Bbbp), assign_group(TaskKind::ClinTox));
    }

    #[test]
    fn groups_partition_tasks() {
        let mut seen = Vec::new();
        for g in GroupId::all() {
            let tasks = g.tasks();
            assert!(!tasks.is_empty());
            let fmt = tasks[0].output_format();
            assert!(tasks.iter().all(|t| t.output_format() == fmt));
            seen.extend(tasks);
        }
        seen.sort();
        assert_eq!(seen, TaskKind::ALL.to_vec());
    }

    #[test]
    fn tags_round_trip() {
        for t in TaskKind::ALL {
            assert_eq!(TaskKind::from_tag(&t.tag()), Some(t));
            assert_eq!(t.name().parse::<TaskKind>().unwrap(), t);
        }
        assert!("Toxicity".parse::<TaskKind>().is_err());
        assert!(GroupId::new(0).is_none() && GroupId::new(9).is_none());
    }

    #[test]
    fn serde_names() {
        assert_eq!(serde_json::to_string(&TaskKind::Bbbp).unwrap(), "\"BBBP\"");
        let t: TaskKind = serde_json::from_str("\"ESOL\"").unwrap();
        assert_eq!(t, TaskKind::Esol);
    }
}
