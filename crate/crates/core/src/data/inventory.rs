//! Tree inventory parsing and cleaning.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub id: String,
    /// Canonical (trimmed, whitespace-collapsed, title-cased) common name.
    pub species: String,
    pub latitude: f64,
    pub longitude: f64,
    /// Metres.
    pub height: Option<f64>,
    /// Metres.
    pub spread: Option<f64>,
    /// Diameter at breast height, centimetres.
    pub dbh: Option<f64>,
    pub maturity: Option<String>,
}

/// Header names for each field. Defaults follow the Camden open-data export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub id: String,
    pub species: String,
    pub latitude: String,
    pub longitude: String,
    pub height: String,
    pub spread: String,
    pub dbh: String,
    pub maturity: String,
    pub delimiter: char,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            id: "Identifier".into(),
            species: "Common Name".into(),
            latitude: "Latitude".into(),
            longitude: "Longitude".into(),
            height: "Height In Metres".into(),
            spread: "Spread In Metres".into(),
            dbh: "Diameter In Centimetres At Breast Height".into(),
            maturity: "Maturity".into(),
            delimiter: ',',
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    MissingLocation,
    VacantPlot,
    UnknownSpecies,
    MalformedNumber { column: String, value: String },
    CoordinatesOutOfRange,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::MissingLocation => f.write_str("missing location"),
            Self::VacantPlot => f.write_str("vacant plot"),
            Self::UnknownSpecies => f.write_str("unknown species"),
            Self::MalformedNumber { column, value } => write!(f, "malformed number {value:?} in {column}"),
            Self::CoordinatesOutOfRange => f.write_str("coordinates out of range"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based data row (the header is row 0).
    pub row: usize,
    pub id: Option<String>,
    #[serde(flatten)]
    pub reason: RejectReason,
}

#[derive(Clone, Debug, Default)]
pub struct ParsedInventory {
    pub records: Vec<TreeRecord>,
    pub rejections: Vec<Rejection>,
}

/// Trim, collapse internal whitespace and title-case each word.
pub fn canonical_species(raw: &str) -> String {
    raw.split_whitespace()
        .map(|word| {
            let mut chars = word.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().chain(chars.flat_map(char::to_lowercase)).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<String>>()
        .join(" ")
}

fn is_vacant(species: &str) -> bool {
    species.to_lowercase().contains("vacant")
}

fn is_unknown(species: &str) -> bool {
    let s = species.to_lowercase();
    s.is_empty()
        || s.starts_with("unknown")
        || matches!(s.as_str(), "not known" | "unidentified" | "n/a" | "na" | "none" | "-")
}

/// Parses a delimited inventory. Rows with missing coordinates, vacant-plot
/// markers, unknown species or malformed numeric cells are dropped and listed
/// in [`ParsedInventory::rejections`]. A row without an id column value gets
/// `row-<n>`.
pub fn parse_inventory(bytes: &[u8], columns: &ColumnMap) -> Result<ParsedInventory> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(u8::try_from(columns.delimiter).map_err(|_| Error::invalid("delimiter must be ASCII"))?)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let find = |name: &str| index.get(name).copied();

    let missing: Vec<String> = [&columns.species, &columns.latitude, &columns.longitude]
        .into_iter()
        .filter(|c| find(c).is_none())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingColumns(missing));
    }
    let species_col = find(&columns.species).unwrap();
    let lat_col = find(&columns.latitude).unwrap();
    let lon_col = find(&columns.longitude).unwrap();
    let id_col = find(&columns.id);
    let optional = [
        (find(&columns.height), &columns.height),
        (find(&columns.spread), &columns.spread),
        (find(&columns.dbh), &columns.dbh),
    ];
    let maturity_col = find(&columns.maturity);

    let mut out = ParsedInventory::default();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let cell = |c: Option<usize>| c.and_then(|c| row.get(c)).unwrap_or("");
        let id = Some(cell(id_col)).filter(|s| !s.is_empty()).map(str::to_owned);
        let mut reject = |reason| {
            out.rejections.push(Rejection { row: row_no, id: id.clone(), reason });
        };

        let (lat_raw, lon_raw) = (cell(Some(lat_col)), cell(Some(lon_col)));
        if lat_raw.is_empty() || lon_raw.is_empty() {
            reject(RejectReason::MissingLocation);
            continue;
        }
        let species = canonical_species(cell(Some(species_col)));
        if is_vacant(&species) {
            reject(RejectReason::VacantPlot);
            continue;
        }
        if is_unknown(&species) {
            reject(RejectReason::UnknownSpecies);
            continue;
        }

        let mut numbers = Vec::with_capacity(5);
        let mut malformed = None;
        for (col, name) in
            [(Some(lat_col), &columns.latitude), (Some(lon_col), &columns.longitude)].into_iter().chain(optional)
        {
            let raw = cell(col);
            if raw.is_empty() {
                numbers.push(None);
                continue;
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => numbers.push(Some(v)),
                _ => {
                    malformed = Some(RejectReason::MalformedNumber { column: name.clone(), value: raw.to_owned() });
                    break;
                }
            }
        }
        if let Some(reason) = malformed {
            reject(reason);
            continue;
        }
        let (latitude, longitude) = (numbers[0].unwrap(), numbers[1].unwrap());
        if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
            reject(RejectReason::CoordinatesOutOfRange);
            continue;
        }
        let maturity = Some(cell(maturity_col)).filter(|s| !s.is_empty()).map(str::to_owned);
        out.records.push(TreeRecord {
            id: id.unwrap_or_else(|| format!("row-{row_no}")),
            species,
            latitude,
            longitude,
            height: numbers[2],
            spread: numbers[3],
            dbh: numbers[4],
            maturity,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TopSpecies {
    pub records: Vec<TreeRecord>,
    /// Selected species with their frequencies, most frequent first.
    pub ranked: Vec<(String, usize)>,
    pub warning: Option<String>,
}

/// Keeps the records of the `k` most frequent species. Ties at equal frequency
/// go to the lexicographically smaller name.
pub fn select_top_species(records: &[TreeRecord], k: usize) -> Result<TopSpecies> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(&r.species).or_default() += 1;
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().map(|(s, n)| (s.to_owned(), n)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let warning = (ranked.len() < k)
        .then(|| format!("only {} distinct species available, fewer than the requested {k}", ranked.len()));
    ranked.truncate(k);
    let keep: Vec<&str> = ranked.iter().map(|(s, _)| s.as_str()).collect();
    let records = records.iter().filter(|r| keep.contains(&r.species.as_str())).cloned().collect();
    Ok(TopSpecies { records, ranked, warning })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "Identifier,Common Name,Latitude,Longitude,Height In Metres\n";

    fn parse(body: &str) -> ParsedInventory {
        parse_inventory(format!("{HEADER}{body}").as_bytes(), &ColumnMap::default()).unwrap()
    }

    #[test]
    fn canonicalizes_names() {
        assert_eq!(canonical_species("  london   PLANE "), "London Plane");
        assert_eq!(canonical_species("silver birch"), "Silver Birch");
    }

    #[test]
    fn five_row_fixture() {
        let parsed = parse(
            "1,Ash,51.54,-0.14,10\n\
             2,Sycamore,,-0.15,8\n\
             3,Vacant plot,51.55,-0.16,\n\
             4,london plane,51.56,-0.17,\n\
             5,Norway Maple,51.57,-0.18,12.5\n",
        );
        assert_eq!(parsed.records.len(), 3);
        assert_eq!(parsed.rejections.len(), 2);
        assert_eq!(parsed.rejections[0].reason, RejectReason::MissingLocation);
        assert_eq!(parsed.rejections[0].reason.to_string(), "missing location");
        assert_eq!(parsed.rejections[1].reason, RejectReason::VacantPlot);
        assert_eq!(parsed.records[1].species, "London Plane");
        assert_eq!(parsed.records[2].height, Some(12.5));
    }

    #[test]
    fn malformed_number_rejects_row_only() {
        let parsed = parse("1,Ash,51.5x,-0.14,\n2,Ash,51.5,-0.14,tall\n3,Ash,51.5,-0.14,\n");
        assert_eq!(parsed.records.len(), 1);
        assert!(
            matches!(parsed.rejections[1].reason, RejectReason::MalformedNumber { ref column, .. } if column == "Height In Metres")
        );
    }

    #[test]
    fn unknown_species_rejected() {
        let parsed = parse("1,Unknown,51.5,-0.1,\n2,,51.5,-0.1,\n3,Not Known,51.5,-0.1,\n");
        assert!(parsed.records.is_empty());
        assert!(parsed.rejections.iter().all(|r| r.reason == RejectReason::UnknownSpecies));
    }

    #[test]
    fn missing_columns_named() {
        let err = parse_inventory(b"Identifier,Common Name\n1,Ash\n", &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, Error::MissingColumns(ref c) if c == &["Latitude", "Longitude"]));
    }

    fn records(species: &[(&str, usize)]) -> Vec<TreeRecord> {
        species
            .iter()
            .flat_map(|&(s, n)| (0..n).map(move |i| (s, i)))
            .map(|(s, i)| TreeRecord {
                id: format!("{s}{i}"),
                species: s.into(),
                latitude: 51.5,
                longitude: -0.1,
                height: None,
                spread: None,
                dbh: None,
                maturity: None,
            })
            .collect()
    }

    #[test]
    fn top_species() {
        let top = select_top_species(&records(&[("A", 5), ("B", 3), ("C", 1)]), 2).unwrap();
        assert_eq!(top.ranked, vec![("A".into(), 5), ("B".into(), 3)]);
        assert_eq!(top.records.len(), 8);
        assert!(top.warning.is_none());
    }

    #[test]
    fn top_species_tie_break_and_shortfall() {
        let top = select_top_species(&records(&[("Zelkova", 2), ("Alder", 2), ("Beech", 4)]), 2).unwrap();
        assert_eq!(top.ranked, vec![("Beech".into(), 4), ("Alder".into(), 2)]);
        let all = select_top_species(&records(&[("A", 1)]), 3).unwrap();
        assert_eq!(all.records.len(), 1);
        assert!(all.warning.is_some());
    }
}
