use serde::{Deserialize, Serialize};

use super::EnvError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// All initial positions fixed.
    Normal,
    /// Food block placed at a seed-drawn offset every episode.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Reward per attack landing on food.
    pub r_food: f64,
    /// Attack on an empty (or out-of-map) cell.
    pub p_blank: f64,
    /// Received by an omnivore for every attack landing on it.
    pub p_attacked: f64,
    /// Added to every alive omnivore each step.
    pub p_step: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            r_food: 5.0,
            p_blank: -0.2,
            p_attacked: -2.0,
            p_step: -0.01,
        }
    }
}

/// Parameters of one Gather task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub task_kind: TaskKind,
    pub map_size: usize,
    pub n_omnivores: usize,
    pub n_food: usize,
    pub max_steps: usize,
    pub rewards: RewardConfig,
    pub hp_food: u32,
    pub hp_omnivore: u32,
    pub view_radius: usize,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            task_kind: TaskKind::Normal,
            map_size: 24,
            n_omnivores: 27,
            n_food: 87,
            max_steps: 100,
            rewards: RewardConfig::default(),
            hp_food: 2,
            hp_omnivore: 3,
            view_radius: 5,
            seed: 0,
        }
    }
}

/// Preset names shipped with the crate.
pub const PRESET_NAMES: [&str; 9] = [
    "normal-small",
    "normal-medium",
    "normal-large",
    "random-small",
    "random-medium",
    "random-large",
    "desk-random-12",
    "desk-normal-16",
    "desk-random-16",
];

fn preset_json(name: &str) -> Option<&'static str> {
    Some(match name {
        "normal-small" => include_str!("../../presets/normal-small.json"),
        "normal-medium" => include_str!("../../presets/normal-medium.json"),
        "normal-large" => include_str!("../../presets/normal-large.json"),
        "random-small" => include_str!("../../presets/random-small.json"),
        "random-medium" => include_str!("../../presets/random-medium.json"),
        "random-large" => include_str!("../../presets/random-large.json"),
        "desk-random-12" => include_str!("../../presets/desk-random-12.json"),
        "desk-normal-16" => include_str!("../../presets/desk-normal-16.json"),
        "desk-random-16" => include_str!("../../presets/desk-random-16.json"),
        _ => return None,
    })
}

impl TaskConfig {
    pub fn preset(name: &str) -> Result<Self, EnvError> {
        let text = preset_json(name).ok_or_else(|| EnvError::UnknownPreset(name.to_string()))?;
        let cfg: TaskConfig = serde_json::from_str(text)
            .map_err(|e| EnvError::Config(format!("preset {name}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// Side length of the square observation window.
    pub fn window(&self) -> usize {
        2 * self.view_radius + 1
    }

    /// Length of a flattened observation.
    pub fn obs_len(&self) -> usize {
        super::OBS_CHANNELS * self.window() * self.window()
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let mut problems = Vec::new();
        if self.map_size < 8 {
            problems.push(format!("map_size {} < 8", self.map_size));
        }
        if self.n_omnivores < 1 {
            problems.push("n_omnivores must be >= 1".to_string());
        }
        if self.n_food < 1 {
            problems.push("n_food must be >= 1".to_string());
        }
        if self.max_steps < 1 {
            problems.push("max_steps must be >= 1".to_string());
        }
        if self.hp_food < 2 {
            problems.push(format!("hp_food {} < 2", self.hp_food));
        }
        if self.hp_omnivore < 1 {
            problems.push("hp_omnivore must be >= 1".to_string());
        }
        if self.n_omnivores + self.n_food > self.map_size * self.map_size {
            problems.push(format!(
                "{} units exceed {} cells",
                self.n_omnivores + self.n_food,
                self.map_size * self.map_size
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(EnvError::Config(problems.join("; ")))
        }
    }
}
