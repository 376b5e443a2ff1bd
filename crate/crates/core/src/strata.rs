//! Stratum vocabulary: districts, age groups, genders and the population frame.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::triangle::TriangleError;

/// District key as it appears in snapshot exports (`IdLandkreis`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DistrictId(pub String);

impl DistrictId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DistrictId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeGroup {
    #[serde(rename = "00-04")]
    A00To04,
    #[serde(rename = "05-14")]
    A05To14,
    #[serde(rename = "15-34")]
    A15To34,
    #[serde(rename = "35-59")]
    A35To59,
    #[serde(rename = "60-79")]
    A60To79,
    #[serde(rename = "80+")]
    A80Plus,
}

impl AgeGroup {
    pub const ALL: [AgeGroup; 6] = [
        AgeGroup::A00To04,
        AgeGroup::A05To14,
        AgeGroup::A15To34,
        AgeGroup::A35To59,
        AgeGroup::A60To79,
        AgeGroup::A80Plus,
    ];

    /// Reference level for the age dummies.
    pub const REFERENCE: AgeGroup = AgeGroup::A35To59;

    pub fn label(self) -> &'static str {
        match self {
            AgeGroup::A00To04 => "00-04",
            AgeGroup::A05To14 => "05-14",
            AgeGroup::A15To34 => "15-34",
            AgeGroup::A35To59 => "35-59",
            AgeGroup::A60To79 => "60-79",
            AgeGroup::A80Plus => "80+",
        }
    }

    /// Label in the RKI export convention, e.g. `A60-A79`.
    pub fn rki_label(self) -> &'static str {
        match self {
            AgeGroup::A00To04 => "A00-A04",
            AgeGroup::A05To14 => "A05-A14",
            AgeGroup::A15To34 => "A15-A34",
            AgeGroup::A35To59 => "A35-A59",
            AgeGroup::A60To79 => "A60-A79",
            AgeGroup::A80Plus => "A80+",
        }
    }
}

impl fmt::Display for AgeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AgeGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        AgeGroup::ALL
            .into_iter()
            .find(|a| a.label() == s || a.rki_label() == s)
            .ok_or_else(|| format!("unknown age group '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::F, Gender::M];
    pub const REFERENCE: Gender = Gender::F;

    pub fn label(self) -> &'static str {
        match self {
            Gender::F => "F",
            Gender::M => "M",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "F" | "f" | "W" | "w" => Ok(Gender::F),
            "M" | "m" => Ok(Gender::M),
            other => Err(format!("unknown gender '{other}'")),
        }
    }
}

/// An (age group, gender) stratum within a district.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Group {
    pub age: AgeGroup,
    pub gender: Gender,
}

impl Group {
    pub fn new(age: AgeGroup, gender: Gender) -> Self {
        Self { age, gender }
    }

    /// All twelve strata in canonical order.
    pub fn all() -> Vec<Group> {
        AgeGroup::ALL
            .into_iter()
            .flat_map(|age| Gender::ALL.into_iter().map(move |gender| Group { age, gender }))
            .collect()
    }

    /// Column name used for the population columns of the frame CSV.
    pub fn population_column(self) -> String {
        format!("pop_{}_{}", self.age.label(), self.gender.label())
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.age, self.gender)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct District {
    pub id: DistrictId,
    pub name: String,
    pub lon: f64,
    pub lat: f64,
    pub population: BTreeMap<Group, u64>,
}

impl District {
    pub fn total_population(&self) -> u64 {
        self.population.values().sum()
    }
}

/// District metadata: names, centroids and stratified populations.
///
/// District order is the order of construction and defines the district index
/// `r` used by every triangle built against this frame. The group set is the
/// sorted union of groups carrying a population entry in any district.
#[derive(Debug, Clone)]
pub struct StratumFrame {
    districts: Vec<District>,
    index: HashMap<DistrictId, usize>,
    groups: Vec<Group>,
}

impl StratumFrame {
    pub fn new(districts: Vec<District>) -> Result<Self, TriangleError> {
        if districts.is_empty() {
            return Err(TriangleError::InvalidFrame("frame has no districts".into()));
        }
        let mut index = HashMap::with_capacity(districts.len());
        for (i, d) in districts.iter().enumerate() {
            if index.insert(d.id.clone(), i).is_some() {
                return Err(TriangleError::InvalidFrame(format!("duplicate district id {}", d.id)));
            }
            if !d.lon.is_finite() || !d.lat.is_finite() {
                return Err(TriangleError::InvalidFrame(format!(
                    "district {} has non-finite coordinates",
                    d.id
                )));
            }
        }
        let mut groups: Vec<Group> = districts
            .iter()
            .flat_map(|d| d.population.keys().copied())
            .collect();
        groups.sort();
        groups.dedup();
        if groups.is_empty() {
            return Err(TriangleError::InvalidFrame("frame has no population columns".into()));
        }
        Ok(Self { districts, index, groups })
    }

    pub fn districts(&self) -> &[District] {
        &self.districts
    }

    pub fn district(&self, r: usize) -> &District {
        &self.districts[r]
    }

    pub fn len(&self) -> usize {
        self.districts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.districts.is_empty()
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn district_index(&self, id: &DistrictId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn group_index(&self, group: Group) -> Option<usize> {
        self.groups.binary_search(&group).ok()
    }

    /// Population of stratum `(r, g)`, zero when the frame has no entry.
    pub fn population(&self, r: usize, g: usize) -> u64 {
        self.districts[r].population.get(&self.groups[g]).copied().unwrap_or(0)
    }

    pub fn total_population(&self, r: usize) -> u64 {
        self.districts[r].total_population()
    }

    pub fn coordinates(&self) -> Vec<(f64, f64)> {
        self.districts.iter().map(|d| (d.lon, d.lat)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_age_conventions() {
        assert_eq!("A60-A79".parse::<AgeGroup>().unwrap(), AgeGroup::A60To79);
        assert_eq!("60-79".parse::<AgeGroup>().unwrap(), AgeGroup::A60To79);
        assert_eq!("A80+".parse::<AgeGroup>().unwrap(), AgeGroup::A80Plus);
        assert!("unbekannt".parse::<AgeGroup>().is_err());
    }

    #[test]
    fn parses_gender_codes() {
        assert_eq!("W".parse::<Gender>().unwrap(), Gender::F);
        assert_eq!("M".parse::<Gender>().unwrap(), Gender::M);
        assert!("unbekannt".parse::<Gender>().is_err());
    }

    #[test]
    fn frame_rejects_duplicates() {
        let d = District {
            id: DistrictId::new("1"),
            name: "a".into(),
            lon: 0.0,
            lat: 0.0,
            population: [(Group::new(AgeGroup::A35To59, Gender::F), 10)].into_iter().collect(),
        };
        assert!(StratumFrame::new(vec![d.clone(), d]).is_err());
    }
}
