use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Instance class. Femur and tibia are the annotated COCO categories;
/// `Implant` is what the class-blind thresholding baseline reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Femur,
    Tibia,
    Implant,
}

impl Category {
    /// The annotated categories, in COCO id order.
    pub const ANNOTATED: [Category; 2] = [Category::Femur, Category::Tibia];

    pub fn coco_id(self) -> u64 {
        match self {
            Category::Femur => 1,
            Category::Tibia => 2,
            Category::Implant => 3,
        }
    }

    pub fn from_coco_id(id: u64) -> Option<Category> {
        match id {
            1 => Some(Category::Femur),
            2 => Some(Category::Tibia),
            3 => Some(Category::Implant),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Femur => "femur",
            Category::Tibia => "tibia",
            Category::Implant => "implant",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "femur" => Ok(Category::Femur),
            "tibia" => Ok(Category::Tibia),
            "implant" => Ok(Category::Implant),
            _ => Err(Error::Parse(format!("unknown category {s:?}"))),
        }
    }
}
