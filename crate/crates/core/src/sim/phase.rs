use std::fmt;

use serde::{Deserialize, Serialize};

use super::SimError;

/// Number of modelled movements (four approaches, straight and left each).
pub const NUM_MOVEMENTS: usize = 8;
/// Number of primary phases a standard four-approach intersection admits.
pub const NUM_PRIMARY_PHASES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Approach {
    North,
    South,
    East,
    West,
}

impl Approach {
    pub fn opposite(self) -> Approach {
        match self {
            Approach::North => Approach::South,
            Approach::South => Approach::North,
            Approach::East => Approach::West,
            Approach::West => Approach::East,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Turn {
    Straight,
    Left,
}

/// A permitted flow from one approach. Right turns are not represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Movement {
    pub approach: Approach,
    pub turn: Turn,
}

impl Movement {
    /// Fixed movement order used by every queue vector and observation.
    pub const ALL: [Movement; NUM_MOVEMENTS] = [
        Movement::new(Approach::North, Turn::Straight),
        Movement::new(Approach::North, Turn::Left),
        Movement::new(Approach::South, Turn::Straight),
        Movement::new(Approach::South, Turn::Left),
        Movement::new(Approach::East, Turn::Straight),
        Movement::new(Approach::East, Turn::Left),
        Movement::new(Approach::West, Turn::Straight),
        Movement::new(Approach::West, Turn::Left),
    ];

    pub const fn new(approach: Approach, turn: Turn) -> Self {
        Movement { approach, turn }
    }

    pub fn index(self) -> usize {
        let base = match self.approach {
            Approach::North => 0,
            Approach::South => 2,
            Approach::East => 4,
            Approach::West => 6,
        };
        base + match self.turn {
            Turn::Straight => 0,
            Turn::Left => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Movement> {
        Movement::ALL.get(index).copied()
    }

    /// Two movements may share a green iff they come from the same approach,
    /// or from opposite approaches with the same turn.
    pub fn conflicts_with(self, other: Movement) -> bool {
        if self == other || self.approach == other.approach {
            return false;
        }
        !(self.approach.opposite() == other.approach && self.turn == other.turn)
    }

    /// Short code such as `N-S` or `W-L`, also used in scenario files.
    pub fn code(self) -> &'static str {
        const CODES: [&str; NUM_MOVEMENTS] = ["N-S", "N-L", "S-S", "S-L", "E-S", "E-L", "W-S", "W-L"];
        CODES[self.index()]
    }

    pub fn parse(code: &str) -> Option<Movement> {
        let normalized = code.trim().to_ascii_uppercase().replace(['_', ' '], "-");
        let (approach, turn) = normalized.split_once('-')?;
        let approach = match approach {
            "N" | "NORTH" => Approach::North,
            "S" | "SOUTH" => Approach::South,
            "E" | "EAST" => Approach::East,
            "W" | "WEST" => Approach::West,
            _ => return None,
        };
        let turn = match turn {
            "S" | "STRAIGHT" | "T" | "THROUGH" => Turn::Straight,
            "L" | "LEFT" => Turn::Left,
            _ => return None,
        };
        Some(Movement::new(approach, turn))
    }
}

impl fmt::Display for Movement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl Serialize for Movement {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for Movement {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let code = String::deserialize(d)?;
        Movement::parse(&code)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown movement `{code}`")))
    }
}

/// One of the eight primary phases, identified by `0..8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Phase {
    pub id: usize,
    pub movements: [Movement; 2],
}

impl Phase {
    /// The primary phase set:
    /// 0 WE-straight, 1 NS-straight, 2 WE-left, 3 NS-left,
    /// 4 W straight+left, 5 E straight+left, 6 N straight+left, 7 S straight+left.
    pub const PRIMARY: [Phase; NUM_PRIMARY_PHASES] = {
        use Approach::*;
        use Turn::*;
        [
            Phase::new(0, Movement::new(West, Straight), Movement::new(East, Straight)),
            Phase::new(1, Movement::new(North, Straight), Movement::new(South, Straight)),
            Phase::new(2, Movement::new(West, Left), Movement::new(East, Left)),
            Phase::new(3, Movement::new(North, Left), Movement::new(South, Left)),
            Phase::new(4, Movement::new(West, Straight), Movement::new(West, Left)),
            Phase::new(5, Movement::new(East, Straight), Movement::new(East, Left)),
            Phase::new(6, Movement::new(North, Straight), Movement::new(North, Left)),
            Phase::new(7, Movement::new(South, Straight), Movement::new(South, Left)),
        ]
    };

    const fn new(id: usize, a: Movement, b: Movement) -> Phase {
        Phase { id, movements: [a, b] }
    }

    pub fn primary(id: usize) -> Option<Phase> {
        Phase::PRIMARY.get(id).copied()
    }

    pub fn contains(&self, movement: Movement) -> bool {
        self.movements.contains(&movement)
    }

    /// Per-movement green mask in the fixed movement order.
    pub fn green_mask(&self) -> [bool; NUM_MOVEMENTS] {
        let mut mask = [false; NUM_MOVEMENTS];
        for m in self.movements {
            mask[m.index()] = true;
        }
        mask
    }
}

/// The subset of primary phases an intersection cycles among.
///
/// Actions are indices into `phases`; the primary id of each entry is what
/// observations and model inputs encode, which keeps learned components
/// independent of the table size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseTable {
    name: String,
    phases: Vec<Phase>,
}

impl PhaseTable {
    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn phase(&self, action: usize) -> Result<&Phase, SimError> {
        self.phases.get(action).ok_or(SimError::InvalidAction {
            action,
            phases: self.phases.len(),
        })
    }

    /// Primary ids in table order; this is the serialized form.
    pub fn primary_ids(&self) -> Vec<usize> {
        self.phases.iter().map(|p| p.id).collect()
    }

    /// Table index of the given primary phase, if the table contains it.
    pub fn action_of_primary(&self, primary: usize) -> Option<usize> {
        self.phases.iter().position(|p| p.id == primary)
    }
}

/// Builds a phase table from primary phase ids.
///
/// Ids must be distinct, each in `0..8`, and the table must hold 4, 6 or 8 phases.
pub fn build_phase_table(setting: &[usize]) -> Result<PhaseTable, SimError> {
    if !matches!(setting.len(), 4 | 6 | 8) {
        return Err(SimError::PhaseTableLength(setting.len()));
    }
    let mut seen = [false; NUM_PRIMARY_PHASES];
    let mut phases = Vec::with_capacity(setting.len());
    for &id in setting {
        let phase = Phase::primary(id).ok_or(SimError::PhaseIdOutOfRange(id))?;
        if std::mem::replace(&mut seen[id], true) {
            return Err(SimError::DuplicatePhase(id));
        }
        phases.push(phase);
    }
    let name = setting.iter().map(|id| id.to_string()).collect::<Vec<_>>().join("");
    Ok(PhaseTable { name, phases })
}
