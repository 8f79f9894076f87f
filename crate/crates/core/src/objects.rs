//! Object identifiers and object sets.
//!
//! Objects are single uppercase letters `A`..`E`. Sets are stored as a
//! bitmask, which keeps subset tests and exhaustive enumeration cheap.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Largest supported object count.
pub const MAX_OBJECTS: u8 = 5;

/// One detector object, `A` through `E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectId(u8);

impl ObjectId {
    pub fn new(index: u8) -> Option<Self> {
        (index < MAX_OBJECTS).then_some(Self(index))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn letter(self) -> char {
        (b'A' + self.0) as char
    }

    /// The first `count` objects in label order.
    pub fn first(count: u8) -> Vec<ObjectId> {
        (0..count.min(MAX_OBJECTS)).map(ObjectId).collect()
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown object `{0}` (expected a letter A-E)")]
pub struct ParseObjectError(pub String);

impl FromStr for ObjectId {
    type Err = ParseObjectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let mut chars = t.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => {
                let c = c.to_ascii_uppercase();
                if c.is_ascii_uppercase() {
                    ObjectId::new(c as u8 - b'A').ok_or_else(|| ParseObjectError(t.to_string()))
                } else {
                    Err(ParseObjectError(t.to_string()))
                }
            }
            _ => Err(ParseObjectError(t.to_string())),
        }
    }
}

impl Serialize for ObjectId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ObjectId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A set of objects. Serialized as a sorted list of letters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ObjectSet(u8);

impl ObjectSet {
    pub const EMPTY: ObjectSet = ObjectSet(0);

    pub fn from_bits(bits: u8) -> Self {
        Self(bits & ((1 << MAX_OBJECTS) - 1))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    /// The set `{A, .., count-th letter}`.
    pub fn universe(count: u8) -> Self {
        Self::from_bits(((1u16 << count.min(MAX_OBJECTS)) - 1) as u8)
    }

    pub fn insert(&mut self, id: ObjectId) {
        self.0 |= 1 << id.0;
    }

    pub fn remove(&mut self, id: ObjectId) {
        self.0 &= !(1 << id.0);
    }

    pub fn contains(self, id: ObjectId) -> bool {
        self.0 & (1 << id.0) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(self, other: ObjectSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn intersects(self, other: ObjectSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn union(self, other: ObjectSet) -> ObjectSet {
        ObjectSet(self.0 | other.0)
    }

    pub fn intersection(self, other: ObjectSet) -> ObjectSet {
        ObjectSet(self.0 & other.0)
    }

    pub fn difference(self, other: ObjectSet) -> ObjectSet {
        ObjectSet(self.0 & !other.0)
    }

    /// Members in label order.
    pub fn iter(self) -> impl Iterator<Item = ObjectId> {
        (0..MAX_OBJECTS)
            .filter(move |i| self.0 & (1 << i) != 0)
            .map(ObjectId)
    }

    pub fn to_vec(self) -> Vec<ObjectId> {
        self.iter().collect()
    }

    /// Every subset of `self`, ordered by size and then lexicographically.
    pub fn subsets(self) -> Vec<ObjectSet> {
        let mut out: Vec<ObjectSet> = (0..=u8::MAX >> (8 - MAX_OBJECTS))
            .map(ObjectSet)
            .filter(|s| s.is_subset(self))
            .collect();
        out.sort_by_key(|s| (s.len(), s.to_vec()));
        out
    }
}

impl FromIterator<ObjectId> for ObjectSet {
    fn from_iter<I: IntoIterator<Item = ObjectId>>(iter: I) -> Self {
        let mut s = ObjectSet::EMPTY;
        for id in iter {
            s.insert(id);
        }
        s
    }
}

impl fmt::Display for ObjectSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, id) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{id}")?;
        }
        write!(f, "}}")
    }
}

impl FromStr for ObjectSet {
    type Err = ParseObjectError;

    /// Accepts `A, B`, `{A,B}`, `A B`, `AB` or `none`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().trim_start_matches(['{', '[', '(']).trim_end_matches(['}', ']', ')']);
        if t.trim().is_empty() || t.trim().eq_ignore_ascii_case("none") {
            return Ok(ObjectSet::EMPTY);
        }
        let mut set = ObjectSet::EMPTY;
        for tok in t.split([',', ' ', ';']).filter(|x| !x.is_empty()) {
            if tok.len() > 1 && tok.chars().all(|c| c.is_ascii_alphabetic()) {
                for c in tok.chars() {
                    set.insert(c.to_string().parse()?);
                }
            } else {
                set.insert(tok.parse()?);
            }
        }
        Ok(set)
    }
}

impl Serialize for ObjectSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_vec().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ObjectSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let ids = Vec::<ObjectId>::deserialize(d)?;
        Ok(ids.into_iter().collect())
    }
}

/// Parse a list like `A, B, C` into ids, preserving order.
pub fn parse_id_list(s: &str) -> Result<Vec<ObjectId>, ParseObjectError> {
    s.split([',', ' '])
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(s: &str) -> ObjectSet {
        s.parse().unwrap()
    }

    #[test]
    fn parses_letters_and_sets() {
        assert_eq!("c".parse::<ObjectId>().unwrap().letter(), 'C');
        assert!("F".parse::<ObjectId>().is_err());
        assert!("AB".parse::<ObjectId>().is_err());
        assert_eq!(set("{A, B}"), set("A B"));
        assert_eq!(set("ab").len(), 2);
        assert!(set("none").is_empty());
        assert_eq!(set("C,D,E").to_string(), "{C,D,E}");
    }

    #[test]
    fn subset_enumeration_is_complete() {
        let all = ObjectSet::universe(5);
        let subs = all.subsets();
        assert_eq!(subs.len(), 32);
        assert_eq!(subs[0], ObjectSet::EMPTY);
        assert_eq!(subs[1], set("A"));
        assert_eq!(subs[31], all);
        assert_eq!(ObjectSet::universe(3).subsets().len(), 8);
    }

    #[test]
    fn serde_uses_letter_lists() {
        let json = serde_json::to_string(&set("B,A")).unwrap();
        assert_eq!(json, r#"["A","B"]"#);
        let back: ObjectSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, set("AB"));
    }
}
