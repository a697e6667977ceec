use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const NUM_CLASSES: usize = 7;

fn normalize(name: &str) -> String {
    name.trim().to_lowercase().replace([' ', '-'], "_")
}

/// Cell types in canonical order; the index is used for every tie-break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellClass {
    Neutrophil,
    Multinuclear,
    MastCell,
    Macrophage,
    Lymphocyte,
    Erythrocyte,
    Eosinophil,
}

impl CellClass {
    pub const ALL: [CellClass; NUM_CLASSES] = [
        CellClass::Neutrophil,
        CellClass::Multinuclear,
        CellClass::MastCell,
        CellClass::Macrophage,
        CellClass::Lymphocyte,
        CellClass::Erythrocyte,
        CellClass::Eosinophil,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CellClass::Neutrophil => "neutrophil",
            CellClass::Multinuclear => "multinuclear",
            CellClass::MastCell => "mast_cell",
            CellClass::Macrophage => "macrophage",
            CellClass::Lymphocyte => "lymphocyte",
            CellClass::Erythrocyte => "erythrocyte",
            CellClass::Eosinophil => "eosinophil",
        }
    }
}

impl FromStr for CellClass {
    type Err = CoreError;

    /// Accepts canonical names plus common plural and spelling variants.
    fn from_str(s: &str) -> Result<Self> {
        let n = normalize(s);
        let class = match n.as_str() {
            "neutrophil" | "neutrophils" => CellClass::Neutrophil,
            "multinuclear" | "multinuclear_cell" | "multinuclear_cells" | "multinucleated" => CellClass::Multinuclear,
            "mast_cell" | "mast_cells" | "mastcell" | "mastzelle" => CellClass::MastCell,
            "macrophage" | "macrophages" => CellClass::Macrophage,
            "lymphocyte" | "lymphocytes" => CellClass::Lymphocyte,
            "erythrocyte" | "erythrocytes" => CellClass::Erythrocyte,
            "eosinophil" | "eosinophils" | "eosinophile" | "eosinophiles" => CellClass::Eosinophil,
            _ => return Err(CoreError::Invalid(format!("unknown cell class `{s}`"))),
        };
        Ok(class)
    }
}

impl fmt::Display for CellClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Flower types in canonical order; index `i` pairs with cell index `i` by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowerClass {
    Coltsfoot,
    Buttercup,
    Daisy,
    Windflower,
    Daffodil,
    Crocus,
    Sunflower,
}

impl FlowerClass {
    pub const ALL: [FlowerClass; NUM_CLASSES] = [
        FlowerClass::Coltsfoot,
        FlowerClass::Buttercup,
        FlowerClass::Daisy,
        FlowerClass::Windflower,
        FlowerClass::Daffodil,
        FlowerClass::Crocus,
        FlowerClass::Sunflower,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FlowerClass::Coltsfoot => "coltsfoot",
            FlowerClass::Buttercup => "buttercup",
            FlowerClass::Daisy => "daisy",
            FlowerClass::Windflower => "windflower",
            FlowerClass::Daffodil => "daffodil",
            FlowerClass::Crocus => "crocus",
            FlowerClass::Sunflower => "sunflower",
        }
    }
}

impl FromStr for FlowerClass {
    type Err = CoreError;

    /// Canonical names only (case-insensitive). Directory aliases live in
    /// [`crate::manifest::FlowerAliases`].
    fn from_str(s: &str) -> Result<Self> {
        let n = normalize(s);
        FlowerClass::ALL
            .into_iter()
            .find(|f| f.name() == n)
            .ok_or_else(|| CoreError::Invalid(format!("unknown flower class `{s}`")))
    }
}

impl fmt::Display for FlowerClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Bijection between the cell and flower classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(CellClass, FlowerClass)>", into = "Vec<(CellClass, FlowerClass)>")]
pub struct ClassPairMap {
    to_flower: [FlowerClass; NUM_CLASSES],
    to_cell: [CellClass; NUM_CLASSES],
}

impl Default for ClassPairMap {
    /// neutrophil↔coltsfoot, multinuclear↔buttercup, mast cell↔daisy,
    /// macrophage↔windflower, lymphocyte↔daffodil, erythrocyte↔crocus,
    /// eosinophil↔sunflower.
    fn default() -> Self {
        Self {
            to_flower: FlowerClass::ALL,
            to_cell: CellClass::ALL,
        }
    }
}

impl ClassPairMap {
    /// Build from explicit pairs; fails unless every class appears exactly once on both sides.
    pub fn new(pairs: &[(CellClass, FlowerClass)]) -> Result<Self> {
        if pairs.len() != NUM_CLASSES {
            return Err(CoreError::Invalid(format!(
                "class pair map needs {NUM_CLASSES} pairs, got {}",
                pairs.len()
            )));
        }
        let mut to_flower: [Option<FlowerClass>; NUM_CLASSES] = [None; NUM_CLASSES];
        let mut to_cell: [Option<CellClass>; NUM_CLASSES] = [None; NUM_CLASSES];
        for &(c, f) in pairs {
            if to_flower[c.index()].replace(f).is_some() {
                return Err(CoreError::Invalid(format!("cell class {c} paired twice")));
            }
            if to_cell[f.index()].replace(c).is_some() {
                return Err(CoreError::Invalid(format!("flower class {f} paired twice")));
            }
        }
        Ok(Self {
            to_flower: to_flower.map(|f| f.expect("all cells covered")),
            to_cell: to_cell.map(|c| c.expect("all flowers covered")),
        })
    }

    pub fn map_class(&self, c: CellClass) -> FlowerClass {
        self.to_flower[c.index()]
    }

    pub fn unmap_class(&self, f: FlowerClass) -> CellClass {
        self.to_cell[f.index()]
    }

    pub fn pairs(&self) -> Vec<(CellClass, FlowerClass)> {
        CellClass::ALL.iter().map(|&c| (c, self.map_class(c))).collect()
    }
}

impl TryFrom<Vec<(CellClass, FlowerClass)>> for ClassPairMap {
    type Error = CoreError;

    fn try_from(v: Vec<(CellClass, FlowerClass)>) -> Result<Self> {
        Self::new(&v)
    }
}

impl From<ClassPairMap> for Vec<(CellClass, FlowerClass)> {
    fn from(m: ClassPairMap) -> Self {
        m.pairs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_pairing() {
        let pm = ClassPairMap::default();
        assert_eq!(pm.map_class(CellClass::Macrophage), FlowerClass::Windflower);
        assert_eq!(pm.map_class(CellClass::Eosinophil), FlowerClass::Sunflower);
        assert_eq!(pm.map_class(CellClass::MastCell), FlowerClass::Daisy);
        assert_eq!(pm.map_class(CellClass::Lymphocyte), FlowerClass::Daffodil);
        assert_eq!(pm.map_class(CellClass::Neutrophil), FlowerClass::Coltsfoot);
        assert_eq!(pm.map_class(CellClass::Multinuclear), FlowerClass::Buttercup);
        assert_eq!(pm.map_class(CellClass::Erythrocyte), FlowerClass::Crocus);
    }

    #[test]
    fn round_trip_both_ways() {
        let pm = ClassPairMap::default();
        for c in CellClass::ALL {
            assert_eq!(pm.unmap_class(pm.map_class(c)), c);
        }
        for f in FlowerClass::ALL {
            assert_eq!(pm.map_class(pm.unmap_class(f)), f);
        }
    }

    #[test]
    fn rejects_non_bijective_pairs() {
        let mut pairs = ClassPairMap::default().pairs();
        pairs[1].1 = FlowerClass::Coltsfoot;
        assert!(ClassPairMap::new(&pairs).is_err());
        assert!(ClassPairMap::new(&pairs[..6]).is_err());
    }

    #[test]
    fn custom_map_serde_roundtrip() {
        let mut pairs = ClassPairMap::default().pairs();
        pairs.swap(0, 1);
        let (c0, f0) = pairs[0];
        let (c1, f1) = pairs[1];
        pairs[0] = (c0, f1);
        pairs[1] = (c1, f0);
        let pm = ClassPairMap::new(&pairs).unwrap();
        assert_eq!(pm.map_class(CellClass::Neutrophil), FlowerClass::Buttercup);
        let json = serde_json::to_string(&pm).unwrap();
        let back: ClassPairMap = serde_json::from_str(&json).unwrap();
        assert_eq!(back, pm);
    }

    #[test]
    fn parses_label_variants() {
        assert_eq!("Eosinophile".parse::<CellClass>().unwrap(), CellClass::Eosinophil);
        assert_eq!("mast cells".parse::<CellClass>().unwrap(), CellClass::MastCell);
        assert!("platelet".parse::<CellClass>().is_err());
        assert_eq!("Sunflower".parse::<FlowerClass>().unwrap(), FlowerClass::Sunflower);
    }
}
