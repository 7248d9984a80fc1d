//! Registry mapping generator categories to the composition model's classes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classes::CLASS_COUNT;
use crate::error::{CoreError, Result};

const BUILTIN: &str = include_str!("../data/categories.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryEntry {
    pub name: String,
    /// Trained generator checkpoint, if one exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub classes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryRegistry {
    pub categories: Vec<CategoryEntry>,
}

impl CategoryRegistry {
    pub fn new(categories: Vec<CategoryEntry>) -> Result<Self> {
        let mut owner = [None::<usize>; CLASS_COUNT];
        for (i, c) in categories.iter().enumerate() {
            for &class in &c.classes {
                if class >= CLASS_COUNT {
                    return Err(CoreError::Mapping(format!(
                        "{}: class {class} out of range",
                        c.name
                    )));
                }
                if let Some(prev) = owner[class] {
                    return Err(CoreError::Mapping(format!(
                        "class {class} claimed by both {} and {}",
                        categories[prev].name, c.name
                    )));
                }
                owner[class] = Some(i);
            }
        }
        Ok(Self { categories })
    }

    /// The 34-category table shipped with the crate (no checkpoints attached).
    pub fn builtin() -> Self {
        let r: CategoryRegistry = serde_json::from_str(BUILTIN).expect("built-in registry parses");
        Self::new(r.categories).expect("built-in registry is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r: CategoryRegistry = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if let Some(dir) = path.parent() {
            for c in &mut r.categories {
                if let Some(ck) = &c.checkpoint {
                    if ck.is_relative() {
                        c.checkpoint = Some(dir.join(ck));
                    }
                }
            }
        }
        Self::new(r.categories)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn category_for_class(&self, class_id: usize) -> Option<&CategoryEntry> {
        self.categories
            .iter()
            .find(|c| c.classes.contains(&class_id))
    }

    pub fn get(&self, name: &str) -> Option<&CategoryEntry> {
        self.categories.iter().find(|c| c.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut CategoryEntry> {
        self.categories.iter_mut().find(|c| c.name == name)
    }

    /// Classes without any generator category.
    pub fn unsupported_classes(&self) -> Vec<usize> {
        (0..CLASS_COUNT)
            .filter(|&c| self.category_for_class(c).is_none())
            .collect()
    }
}
