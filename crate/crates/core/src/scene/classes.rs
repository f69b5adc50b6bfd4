use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ClassId = u8;

pub const EMPTY_NAME: &str = "empty";
pub const UNLABELED_NAME: &str = "unlabeled";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: ClassId,
    pub name: String,
    #[serde(default)]
    pub dynamic: bool,
    /// Lower tiers win voxel votes over higher tiers.
    #[serde(default = "default_tier")]
    pub priority_tier: u8,
    #[serde(default)]
    pub prompts: Vec<String>,
}

fn default_tier() -> u8 {
    1
}

/// Semantic vocabulary with the two reserved ids `empty` and `unlabeled`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassTable {
    entries: Vec<ClassEntry>,
    #[serde(skip)]
    empty: ClassId,
    #[serde(skip)]
    unlabeled: ClassId,
}

impl<'de> Deserialize<'de> for ClassTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            entries: Vec<ClassEntry>,
        }
        let raw = Raw::deserialize(d)?;
        ClassTable::new(raw.entries).map_err(serde::de::Error::custom)
    }
}

impl Default for ClassTable {
    fn default() -> Self {
        Self::occupancy_default()
    }
}

impl ClassTable {
    pub fn new(entries: Vec<ClassEntry>) -> Result<Self> {
        if entries.is_empty() || entries.len() > 255 {
            return Err(Error::Invalid(format!(
                "class table must have 1..=255 entries, got {}",
                entries.len()
            )));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.id as usize != i {
                return Err(Error::Invalid(format!(
                    "class ids must be dense 0..N-1; entry {i} has id {}",
                    e.id
                )));
            }
        }
        let find = |name: &str| -> Result<ClassId> {
            let mut hits = entries.iter().filter(|e| e.name == name);
            match (hits.next(), hits.next()) {
                (Some(e), None) => Ok(e.id),
                (None, _) => Err(Error::Invalid(format!("class table lacks reserved class {name:?}"))),
                _ => Err(Error::Invalid(format!("reserved class {name:?} appears twice"))),
            }
        };
        let empty = find(EMPTY_NAME)?;
        let unlabeled = find(UNLABELED_NAME)?;
        for reserved in [empty, unlabeled] {
            if entries[reserved as usize].dynamic {
                return Err(Error::Invalid("reserved classes cannot be dynamic".into()));
            }
        }
        Ok(Self {
            entries,
            empty,
            unlabeled,
        })
    }

    /// The fifteen-class driving vocabulary with its detector prompts,
    /// followed by `empty` (15) and `unlabeled` (16).
    pub fn occupancy_default() -> Self {
        // (name, dynamic, tier, prompts)
        const VOCAB: &[(&str, bool, u8, &[&str])] = &[
            ("barrier", false, 0, &["barricade", "barrier"]),
            ("bicycle", true, 0, &["bicycle"]),
            ("bus", true, 1, &["bus"]),
            ("car", true, 1, &["car", "sedan", "van"]),
            ("construction_vehicle", true, 1, &["excavator", "crane"]),
            ("motorcycle", true, 0, &["motorcycle", "scooter"]),
            ("pedestrian", true, 0, &["person", "pedestrian"]),
            ("traffic_cone", false, 0, &["traffic-cone"]),
            ("trailer", true, 1, &["trailer"]),
            ("truck", true, 1, &["lorry", "truck"]),
            ("driveable_surface", false, 1, &["highway", "street", "roadmarking"]),
            ("sidewalk", false, 1, &["sidewalk", "walkway"]),
            ("terrain", false, 1, &["turf", "grass", "sand"]),
            (
                "manmade",
                false,
                1,
                &["building", "wall", "fence", "pole", "sign", "light", "bridge", "billboard"],
            ),
            ("vegetation", false, 1, &["bush", "plants", "tree"]),
            (EMPTY_NAME, false, 1, &[]),
            (UNLABELED_NAME, false, 1, &[]),
        ];
        let entries = VOCAB
            .iter()
            .enumerate()
            .map(|(i, (name, dynamic, tier, prompts))| ClassEntry {
                id: i as ClassId,
                name: name.to_string(),
                dynamic: *dynamic,
                priority_tier: *tier,
                prompts: prompts.iter().map(|p| p.to_string()).collect(),
            })
            .collect();
        Self::new(entries).expect("built-in vocabulary is valid")
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn empty(&self) -> ClassId {
        self.empty
    }

    pub fn unlabeled(&self) -> ClassId {
        self.unlabeled
    }

    pub fn contains(&self, id: ClassId) -> bool {
        (id as usize) < self.entries.len()
    }

    pub fn get(&self, id: ClassId) -> Option<&ClassEntry> {
        self.entries.get(id as usize)
    }

    pub fn by_name(&self, name: &str) -> Option<ClassId> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.id)
    }

    pub fn is_dynamic(&self, id: ClassId) -> bool {
        self.get(id).is_some_and(|e| e.dynamic)
    }

    pub fn tier(&self, id: ClassId) -> u8 {
        self.get(id).map_or(u8::MAX, |e| e.priority_tier)
    }

    /// True for ids that label real semantic content (not reserved).
    pub fn is_semantic(&self, id: ClassId) -> bool {
        self.contains(id) && id != self.empty && id != self.unlabeled
    }

    pub fn semantic_ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.entries.iter().map(|e| e.id).filter(|&id| self.is_semantic(id))
    }

    pub fn name(&self, id: ClassId) -> &str {
        self.get(id).map_or("?", |e| e.name.as_str())
    }
}
