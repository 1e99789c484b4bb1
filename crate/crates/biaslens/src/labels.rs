//! The seven bias categories and the binary label vector attached to each
//! article. The category order is canonical and every serialized artifact
//! (JSONL labels, stats rows, model files, reports) follows it.

use std::fmt;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// One bias category, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BiasLabel {
    Political,
    Gender,
    Entity,
    Racial,
    Religious,
    Regional,
    Sensational,
}

/// Number of bias categories.
pub const NUM_LABELS: usize = 7;

impl BiasLabel {
    /// All categories in canonical order.
    pub const ALL: [BiasLabel; NUM_LABELS] = [
        BiasLabel::Political,
        BiasLabel::Gender,
        BiasLabel::Entity,
        BiasLabel::Racial,
        BiasLabel::Religious,
        BiasLabel::Regional,
        BiasLabel::Sensational,
    ];

    /// Position in the canonical order.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Stable snake_case key used in serialized artifacts.
    pub fn key(self) -> &'static str {
        match self {
            BiasLabel::Political => "political",
            BiasLabel::Gender => "gender",
            BiasLabel::Entity => "entity",
            BiasLabel::Racial => "racial",
            BiasLabel::Religious => "religious",
            BiasLabel::Regional => "regional",
            BiasLabel::Sensational => "sensational",
        }
    }

    /// Human-readable name used in prompts and reports.
    pub fn display_name(self) -> &'static str {
        match self {
            BiasLabel::Political => "Political Bias",
            BiasLabel::Gender => "Gender Bias",
            BiasLabel::Entity => "Entity Bias",
            BiasLabel::Racial => "Racial Bias",
            BiasLabel::Religious => "Religious Bias",
            BiasLabel::Regional => "Regional Bias",
            BiasLabel::Sensational => "Sensational Bias",
        }
    }

    /// Look up a category by its snake_case key.
    pub fn from_key(key: &str) -> Option<BiasLabel> {
        BiasLabel::ALL.iter().copied().find(|l| l.key() == key)
    }

    /// Look up a category by index in canonical order.
    pub fn from_index(index: usize) -> Option<BiasLabel> {
        BiasLabel::ALL.get(index).copied()
    }
}

impl fmt::Display for BiasLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Binary flags for all seven categories, indexed in canonical order.
///
/// Serializes as an object with the seven snake_case keys mapped to 0/1
/// integers; deserialization requires exactly those keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct BiasVector {
    flags: [bool; NUM_LABELS],
}

impl BiasVector {
    /// All-negative vector.
    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn new(flags: [bool; NUM_LABELS]) -> Self {
        BiasVector { flags }
    }

    /// Build from the low seven bits of `mask`; bit `i` sets category `i`.
    pub fn from_mask(mask: u8) -> Self {
        let mut flags = [false; NUM_LABELS];
        for (i, f) in flags.iter_mut().enumerate() {
            *f = mask >> i & 1 == 1;
        }
        BiasVector { flags }
    }

    /// Inverse of [`BiasVector::from_mask`].
    pub fn to_mask(self) -> u8 {
        self.flags
            .iter()
            .enumerate()
            .fold(0u8, |m, (i, &f)| m | (f as u8) << i)
    }

    pub fn get(&self, label: BiasLabel) -> bool {
        self.flags[label.index()]
    }

    pub fn set(&mut self, label: BiasLabel, value: bool) {
        self.flags[label.index()] = value;
    }

    /// True when at least one category is flagged.
    pub fn any(&self) -> bool {
        self.flags.iter().any(|&f| f)
    }

    /// Number of flagged categories.
    pub fn count_positive(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// Flags in canonical order.
    pub fn as_array(&self) -> [bool; NUM_LABELS] {
        self.flags
    }

    /// (category, flag) pairs in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (BiasLabel, bool)> + '_ {
        BiasLabel::ALL
            .iter()
            .map(move |&l| (l, self.flags[l.index()]))
    }
}

impl Serialize for BiasVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(NUM_LABELS))?;
        for (label, flag) in self.iter() {
            map.serialize_entry(label.key(), &(flag as u8))?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for BiasVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct VecVisitor;

        impl<'de> Visitor<'de> for VecVisitor {
            type Value = BiasVector;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "an object mapping the {NUM_LABELS} bias keys to 0 or 1")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<BiasVector, A::Error> {
                let mut seen = [false; NUM_LABELS];
                let mut out = BiasVector::zeros();
                while let Some((key, value)) = map.next_entry::<String, u8>()? {
                    let label = BiasLabel::from_key(&key)
                        .ok_or_else(|| de::Error::custom(format!("unknown bias key `{key}`")))?;
                    if seen[label.index()] {
                        return Err(de::Error::custom(format!("duplicate bias key `{key}`")));
                    }
                    seen[label.index()] = true;
                    match value {
                        0 => out.set(label, false),
                        1 => out.set(label, true),
                        other => {
                            return Err(de::Error::custom(format!(
                                "bias key `{key}` must be 0 or 1, got {other}"
                            )))
                        }
                    }
                }
                if let Some(missing) = BiasLabel::ALL.iter().find(|l| !seen[l.index()]) {
                    return Err(de::Error::custom(format!(
                        "missing bias key `{}`",
                        missing.key()
                    )));
                }
                Ok(out)
            }
        }

        deserializer.deserialize_map(VecVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_is_stable() {
        let keys: Vec<_> = BiasLabel::ALL.iter().map(|l| l.key()).collect();
        assert_eq!(
            keys,
            [
                "political",
                "gender",
                "entity",
                "racial",
                "religious",
                "regional",
                "sensational"
            ]
        );
        for (i, label) in BiasLabel::ALL.iter().enumerate() {
            assert_eq!(label.index(), i);
            assert_eq!(BiasLabel::from_index(i), Some(*label));
        }
    }

    #[test]
    fn mask_round_trip() {
        for mask in 0u8..128 {
            assert_eq!(BiasVector::from_mask(mask).to_mask(), mask);
        }
    }

    #[test]
    fn serde_uses_canonical_keys_and_ints() {
        let mut v = BiasVector::zeros();
        v.set(BiasLabel::Political, true);
        v.set(BiasLabel::Sensational, true);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(
            json,
            r#"{"political":1,"gender":0,"entity":0,"racial":0,"religious":0,"regional":0,"sensational":1}"#
        );
        let back: BiasVector = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn serde_rejects_bad_shapes() {
        let missing =
            r#"{"political":1,"gender":0,"entity":0,"racial":0,"religious":0,"regional":0}"#;
        assert!(serde_json::from_str::<BiasVector>(missing).is_err());
        let unknown = r#"{"political":1,"gender":0,"entity":0,"racial":0,"religious":0,"regional":0,"sensational":0,"extra":1}"#;
        assert!(serde_json::from_str::<BiasVector>(unknown).is_err());
        let bad_value = r#"{"political":2,"gender":0,"entity":0,"racial":0,"religious":0,"regional":0,"sensational":0}"#;
        assert!(serde_json::from_str::<BiasVector>(bad_value).is_err());
    }
}
