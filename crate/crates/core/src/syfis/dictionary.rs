use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SyfisError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MotionCategory {
    Forward,
    Left,
    Right,
    Up,
    Down,
    Stop,
}

impl MotionCategory {
    pub const ALL: [MotionCategory; 6] = [
        MotionCategory::Forward,
        MotionCategory::Left,
        MotionCategory::Right,
        MotionCategory::Up,
        MotionCategory::Down,
        MotionCategory::Stop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MotionCategory::Forward => "FORWARD",
            MotionCategory::Left => "LEFT",
            MotionCategory::Right => "RIGHT",
            MotionCategory::Up => "UP",
            MotionCategory::Down => "DOWN",
            MotionCategory::Stop => "STOP",
        }
    }
}

impl fmt::Display for MotionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Picks the motion category for a step.
///
/// STOP wins, then a vertical change beyond `threshold` (UP/DOWN by sign),
/// then a horizontal one (positive relative heading is RIGHT), else FORWARD.
pub fn select_motion_category(
    rel_heading: f64,
    rel_elevation: f64,
    is_stop: bool,
    threshold: f64,
) -> MotionCategory {
    if is_stop {
        MotionCategory::Stop
    } else if rel_elevation.abs() > threshold {
        if rel_elevation > 0.0 {
            MotionCategory::Up
        } else {
            MotionCategory::Down
        }
    } else if rel_heading.abs() > threshold {
        if rel_heading > 0.0 {
            MotionCategory::Right
        } else {
            MotionCategory::Left
        }
    } else {
        MotionCategory::Forward
    }
}

const BUILTIN: [(MotionCategory, [&str; 8]); 6] = [
    (
        MotionCategory::Forward,
        [
            "walk forward to",
            "go straight to",
            "continue forward to",
            "head straight toward",
            "move ahead to",
            "proceed forward to",
            "walk straight past",
            "keep going toward",
        ],
    ),
    (
        MotionCategory::Left,
        [
            "turn left to",
            "go left to",
            "make a left to",
            "veer left toward",
            "bear left to",
            "turn left toward",
            "head left to",
            "walk left into",
        ],
    ),
    (
        MotionCategory::Right,
        [
            "turn right to",
            "go right to",
            "make a right to",
            "veer right toward",
            "bear right to",
            "turn right toward",
            "head right to",
            "walk right into",
        ],
    ),
    (
        MotionCategory::Up,
        [
            "walk up to",
            "go up the stairs to",
            "climb up to",
            "head upstairs to",
            "ascend to",
            "take the stairs up to",
            "walk upstairs toward",
            "step up to",
        ],
    ),
    (
        MotionCategory::Down,
        [
            "walk down to",
            "go down the stairs to",
            "climb down to",
            "head downstairs to",
            "descend to",
            "take the stairs down to",
            "walk downstairs toward",
            "step down to",
        ],
    ),
    (
        MotionCategory::Stop,
        [
            "stop at",
            "wait by",
            "stop near",
            "halt at",
            "stand next to",
            "wait at",
            "stop in front of",
            "come to a stop at",
        ],
    ),
];

/// Verb phrases per motion category. Each phrase carries its own
/// preposition and is followed by `the <landmark>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MotionDictionary {
    phrases: BTreeMap<MotionCategory, Vec<String>>,
}

impl Default for MotionDictionary {
    fn default() -> Self {
        let phrases = BUILTIN
            .iter()
            .map(|(c, list)| (*c, list.iter().map(|s| s.to_string()).collect()))
            .collect();
        Self { phrases }
    }
}

impl MotionDictionary {
    pub fn new(phrases: BTreeMap<MotionCategory, Vec<String>>) -> Result<Self, SyfisError> {
        for c in MotionCategory::ALL {
            let list = phrases
                .get(&c)
                .ok_or_else(|| SyfisError::Dictionary(format!("category {c} is missing")))?;
            if list.len() < 3 {
                return Err(SyfisError::Dictionary(format!(
                    "category {c} needs at least 3 phrases, has {}",
                    list.len()
                )));
            }
            let normalized: BTreeSet<String> = list.iter().map(|p| normalize(p)).collect();
            if normalized.len() != list.len() {
                return Err(SyfisError::Dictionary(format!(
                    "category {c} has duplicate phrases"
                )));
            }
            if list.iter().any(|p| normalize(p).is_empty()) {
                return Err(SyfisError::Dictionary(format!(
                    "category {c} has an empty phrase"
                )));
            }
        }
        let phrases = phrases
            .into_iter()
            .map(|(c, list)| (c, list.iter().map(|p| normalize(p)).collect()))
            .collect();
        Ok(Self { phrases })
    }

    /// Reads an override file of the form `{"FORWARD": [...], ...}`.
    pub fn from_json_file(path: &Path) -> Result<Self, SyfisError> {
        let text = std::fs::read_to_string(path).map_err(|source| SyfisError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let map: BTreeMap<MotionCategory, Vec<String>> = serde_json::from_str(&text)
            .map_err(|e| SyfisError::Dictionary(format!("{}: {e}", path.display())))?;
        Self::new(map)
    }

    pub fn phrases(&self, category: MotionCategory) -> &[String] {
        self.phrases.get(&category).map_or(&[], Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (MotionCategory, &[String])> {
        self.phrases.iter().map(|(c, l)| (*c, l.as_slice()))
    }
}

/// Lower-cases and collapses whitespace.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_rule_examples() {
        use MotionCategory::*;
        assert_eq!(select_motion_category(45.0, 0.0, false, 30.0), Right);
        assert_eq!(select_motion_category(-45.0, 0.0, false, 30.0), Left);
        assert_eq!(select_motion_category(0.0, 35.0, false, 30.0), Up);
        assert_eq!(select_motion_category(170.0, -35.0, false, 30.0), Down);
        assert_eq!(select_motion_category(10.0, 5.0, false, 30.0), Forward);
        assert_eq!(select_motion_category(10.0, 5.0, true, 30.0), Stop);
        assert_eq!(select_motion_category(30.0, -30.0, false, 30.0), Forward);
    }

    #[test]
    fn builtin_dictionary_is_valid() {
        let d = MotionDictionary::default();
        let rebuilt = MotionDictionary::new(d.phrases.clone()).unwrap();
        assert_eq!(rebuilt, d);
        for c in MotionCategory::ALL {
            assert_eq!(d.phrases(c).len(), 8);
        }
    }

    #[test]
    fn override_validation() {
        let mut map = MotionDictionary::default().phrases;
        map.insert(
            MotionCategory::Up,
            vec!["go up".into(), "go up".into(), "climb".into()],
        );
        assert!(MotionDictionary::new(map.clone()).is_err());
        map.insert(MotionCategory::Up, vec!["go up".into(), "climb".into()]);
        assert!(MotionDictionary::new(map.clone()).is_err());
        map.remove(&MotionCategory::Up);
        assert!(MotionDictionary::new(map).is_err());
    }

    #[test]
    fn dictionary_json_uses_category_names() {
        let json = serde_json::to_string(&MotionDictionary::default()).unwrap();
        assert!(json.starts_with("{\"FORWARD\":[\"walk forward to\""));
        let back: BTreeMap<MotionCategory, Vec<String>> = serde_json::from_str(&json).unwrap();
        assert_eq!(
            MotionDictionary::new(back).unwrap(),
            MotionDictionary::default()
        );
    }
}
