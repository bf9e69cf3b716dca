use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssocUpdate {
    /// Message from `h_later − h_earlier`.
    Difference,
    /// Message from `[h_earlier ‖ h_later]`.
    Concat,
}

impl std::str::FromStr for AssocUpdate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "difference" => Ok(Self::Difference),
            "concat" => Ok(Self::Concat),
            other => Err(Error::Config(format!(
                "association update must be `difference` or `concat`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for AssocUpdate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Difference => "difference",
            Self::Concat => "concat",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub assoc_update: AssocUpdate,
    pub heads: usize,
    pub tp_classification: bool,
    /// Tracked object categories; the one-hot block has one slot per entry.
    pub categories: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_size: 64,
            assoc_update: AssocUpdate::Difference,
            heads: 1,
            tp_classification: true,
            categories: vec!["Car".into(), "Pedestrian".into(), "Cyclist".into()],
        }
    }
}

impl ModelConfig {
    /// Box (4) + score (1) + one-hot category.
    pub fn feature_width(&self) -> usize {
        5 + self.categories.len()
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(Error::Config("model.hidden_size must be >= 1".into()));
        }
        if self.heads == 0 {
            return Err(Error::Config("model.heads must be >= 1".into()));
        }
        if self.categories.is_empty() {
            return Err(Error::Config("model.categories must not be empty".into()));
        }
        Ok(())
    }
}
