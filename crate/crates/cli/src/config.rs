//! Flat TOML configuration for the `train` command.

use lens_core::calibration::{CalibrationConfig, NegativeScale};
use lens_core::simulator::{
    Algorithm, AnswerSpaceSpec, CorrectCount, DifficultyProfile, SyntheticTaskSpec, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

fn d_correct_min() -> usize {
    1
}
fn d_hard_fraction() -> f64 {
    0.0
}
fn d_group_size() -> usize {
    16
}
fn d_batch() -> usize {
    32
}
fn d_inner() -> usize {
    4
}
fn d_clip() -> f64 {
    0.2
}
fn d_alpha() -> f64 {
    0.25
}
fn d_one() -> f64 {
    1.0
}
fn d_std_eps() -> f64 {
    1e-8
}
fn d_floor() -> f64 {
    2.0
}
fn d_eval_interval() -> usize {
    100
}
fn d_eval_samples() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub num_questions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    #[serde(default = "d_correct_min")]
    pub correct_min: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct_max: Option<usize>,
    #[serde(default = "d_hard_fraction")]
    pub hard_fraction: f64,
    #[serde(default)]
    pub task_seed: u64,

    pub learning_rate: f64,
    pub steps: usize,
    #[serde(default = "d_group_size")]
    pub group_size: usize,
    #[serde(default = "d_batch")]
    pub questions_per_batch: usize,
    #[serde(default = "d_inner")]
    pub inner_updates: usize,
    #[serde(default = "d_clip")]
    pub clip_epsilon: f64,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_one")]
    pub temperature: f64,
    #[serde(default = "d_std_eps")]
    pub std_epsilon: f64,
    #[serde(default = "d_floor")]
    pub difficulty_floor_factor: f64,
    #[serde(default)]
    pub negative_scale: NegativeScale,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_eval_interval")]
    pub eval_interval: usize,
    #[serde(default = "d_eval_samples")]
    pub eval_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<Algorithm>,
}

pub const TEMPLATE: &str = "\
# task
num_questions = 200         # required
answers = 50                # tabular answers per question; or set vocab and max_len
# vocab = 4
# max_len = 3
correct_min = 1
correct_max = 2             # defaults to correct_min
hard_fraction = 0.0         # > 0 marks that fraction of questions as hard
task_seed = 0

# training
learning_rate = 4.0         # required
steps = 2000                # required
group_size = 16
questions_per_batch = 32
inner_updates = 4
clip_epsilon = 0.2
alpha = 0.25
temperature = 1.0
std_epsilon = 1e-8
difficulty_floor_factor = 2.0
negative_scale = \"one_over_g\"
seed = 0
eval_interval = 100
eval_samples = 16
# algorithm = \"lens\"       # lens, grpo, mixed_only, negative_only
";

impl TrainFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn task_spec(&self) -> Result<SyntheticTaskSpec, CliError> {
        let answers = match (self.answers, self.vocab, self.max_len) {
            (Some(answers), None, None) => AnswerSpaceSpec::Tabular { answers },
            (None, Some(vocab), Some(max_len)) => AnswerSpaceSpec::Sequence { vocab, max_len },
            _ => {
                return Err(CliError::Config(
                    "set either `answers` or both `vocab` and `max_len`".into(),
                ))
            }
        };
        let correct = match self.correct_max {
            None => CorrectCount::Fixed(self.correct_min),
            Some(max) if max == self.correct_min => CorrectCount::Fixed(max),
            Some(max) => CorrectCount::Range { min: self.correct_min, max },
        };
        let profile = if self.hard_fraction > 0.0 {
            DifficultyProfile::HardTail { fraction: self.hard_fraction }
        } else {
            DifficultyProfile::Uniform
        };
        let spec = SyntheticTaskSpec {
            num_questions: self.num_questions,
            answers,
            correct,
            profile,
            seed: self.task_seed,
        };
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            group_size: self.group_size,
            questions_per_batch: self.questions_per_batch,
            inner_updates: self.inner_updates,
            clip_epsilon: self.clip_epsilon,
            learning_rate: self.learning_rate,
            steps: self.steps,
            alpha: self.alpha,
            temperature: self.temperature,
            std_epsilon: self.std_epsilon,
            calibration: CalibrationConfig {
                difficulty_floor_factor: self.difficulty_floor_factor,
                negative_scale: self.negative_scale,
                ..Default::default()
            },
            seed: self.seed,
            eval_interval: self.eval_interval,
            eval_samples: self.eval_samples,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}
