use serde::{Deserialize, Serialize};

use super::DatasetError;

/// Upper bounds (inclusive) of proficiency levels 0 through 5. Scores above
/// the last cut-off are level 6.
pub const LEVEL_CUTOFFS: [f64; 6] = [358.0, 420.0, 482.0, 545.0, 607.0, 669.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Low,
    Medium,
    High,
}

impl Category {
    pub fn from_level(level: u8) -> Category {
        match level {
            0..=2 => Category::Low,
            3 | 4 => Category::Medium,
            _ => Category::High,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Low => "low",
            Category::Medium => "medium",
            Category::High => "high",
        }
    }

    pub fn parse(s: &str) -> Option<Category> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Some(Category::Low),
            "medium" => Some(Category::Medium),
            "high" => Some(Category::High),
            _ => None,
        }
    }
}

/// Proficiency label of one student. Level 0 is "below level 1".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelLabel {
    pub raw_score: f64,
    pub level: u8,
    pub category: Category,
}

/// Maps a mean plausible-value score to its proficiency level. Upper bounds
/// are closed, so a score exactly on a cut-off belongs to the lower level.
pub fn bin_levels(raw_score: f64) -> Result<LevelLabel, DatasetError> {
    if !raw_score.is_finite() {
        return Err(DatasetError::NonFiniteScore(raw_score));
    }
    let level = LEVEL_CUTOFFS
        .iter()
        .position(|&cut| raw_score <= cut)
        .unwrap_or(LEVEL_CUTOFFS.len()) as u8;
    Ok(LevelLabel {
        raw_score,
        level,
        category: Category::from_level(level),
    })
}
