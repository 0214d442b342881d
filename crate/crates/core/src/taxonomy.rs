//! Fine-grained car class knowledgebase.
//!
//! A [`ClassTable`] maps dense class ids to make, model, body type, price and
//! the other attributes that regional statistics are computed over. The table
//! is immutable once loaded.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Body-type vocabulary. Unknown labels collapse into [`BodyType::Other`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BodyType {
    Sedan,
    Coupe,
    Suv,
    Hatchback,
    Convertible,
    Wagon,
    Minivan,
    Van,
    ExtendedCabTruck,
    CrewCabTruck,
    RegularCabTruck,
    Other,
}

impl BodyType {
    pub const ALL: [BodyType; 12] = [
        BodyType::Sedan,
        BodyType::Coupe,
        BodyType::Suv,
        BodyType::Hatchback,
        BodyType::Convertible,
        BodyType::Wagon,
        BodyType::Minivan,
        BodyType::Van,
        BodyType::ExtendedCabTruck,
        BodyType::CrewCabTruck,
        BodyType::RegularCabTruck,
        BodyType::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BodyType::Sedan => "sedan",
            BodyType::Coupe => "coupe",
            BodyType::Suv => "suv",
            BodyType::Hatchback => "hatchback",
            BodyType::Convertible => "convertible",
            BodyType::Wagon => "wagon",
            BodyType::Minivan => "minivan",
            BodyType::Van => "van",
            BodyType::ExtendedCabTruck => "extended-cab-truck",
            BodyType::CrewCabTruck => "crew-cab-truck",
            BodyType::RegularCabTruck => "regular-cab-truck",
            BodyType::Other => "other",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Parses a label leniently; unrecognised labels map to `Other` with a warning.
    pub fn parse_lenient(raw: &str) -> BodyType {
        match raw.parse() {
            Ok(b) => b,
            Err(_) => {
                log::warn!("unknown body type `{raw}`, mapping to `other`");
                BodyType::Other
            }
        }
    }
}

impl FromStr for BodyType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String =
            s.trim().to_ascii_lowercase().chars().map(|c| if c == '_' || c == ' ' { '-' } else { c }).collect();
        let norm = norm.trim_end_matches("-truck");
        Ok(match norm {
            "sedan" => BodyType::Sedan,
            "coupe" => BodyType::Coupe,
            "suv" => BodyType::Suv,
            "hatchback" => BodyType::Hatchback,
            "convertible" => BodyType::Convertible,
            "wagon" => BodyType::Wagon,
            "minivan" => BodyType::Minivan,
            "van" => BodyType::Van,
            "extended-cab" => BodyType::ExtendedCabTruck,
            "crew-cab" => BodyType::CrewCabTruck,
            "regular-cab" => BodyType::RegularCabTruck,
            "other" => BodyType::Other,
            _ => return Err(Error::Validation(format!("unknown body type `{s}`"))),
        })
    }
}

impl fmt::Display for BodyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarClass {
    pub class_id: u32,
    pub make: String,
    pub model: String,
    pub submodel: String,
    pub year_start: i32,
    pub year_end: i32,
    pub trim: String,
    pub body_type: BodyType,
    /// `None` marks an unknown price; such classes are left out of averages.
    pub price_usd: Option<f64>,
    pub mpg: Option<f64>,
    pub country: String,
    pub is_foreign: bool,
}

impl CarClass {
    fn validate(&self) -> Result<()> {
        if let Some(p) = self.price_usd {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::Validation(format!("class {}: negative price {p}", self.class_id)));
            }
        }
        if let Some(m) = self.mpg {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Validation(format!("class {}: non-positive mpg {m}", self.class_id)));
            }
        }
        if self.year_start > self.year_end {
            return Err(Error::Validation(format!(
                "class {}: year range {}..{} is reversed",
                self.class_id, self.year_start, self.year_end
            )));
        }
        if self.is_foreign != is_foreign_country(&self.country) {
            return Err(Error::Validation(format!(
                "class {}: is_foreign={} contradicts country `{}`",
                self.class_id, self.is_foreign, self.country
            )));
        }
        Ok(())
    }
}

pub fn is_foreign_country(country: &str) -> bool {
    country.trim() != "USA"
}

/// A make in the built-in catalog. `price_tier` runs from 1 (economy) to 5 (exotic).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MakeInfo {
    pub name: &'static str,
    pub country: &'static str,
    pub price_tier: u8,
}

const fn mk(name: &'static str, country: &'static str, price_tier: u8) -> MakeInfo {
    MakeInfo { name, country, price_tier }
}

/// The 71 makes that get their own slot in the default feature schema.
pub const COMMON_MAKES: [MakeInfo; 71] = [
    mk("AMC", "USA", 1),
    mk("Acura", "Japan", 3),
    mk("Alfa Romeo", "Italy", 4),
    mk("Aston Martin", "UK", 5),
    mk("Audi", "Germany", 4),
    mk("BMW", "Germany", 4),
    mk("Bentley", "UK", 5),
    mk("Buick", "USA", 2),
    mk("Cadillac", "USA", 4),
    mk("Chevrolet", "USA", 2),
    mk("Chrysler", "USA", 2),
    mk("Citroen", "France", 2),
    mk("Daewoo", "Korea", 1),
    mk("Datsun", "Japan", 1),
    mk("DeLorean", "USA", 3),
    mk("Dodge", "USA", 2),
    mk("Eagle", "USA", 1),
    mk("FIAT", "Italy", 1),
    mk("Ferrari", "Italy", 5),
    mk("Fisker", "USA", 4),
    mk("Ford", "USA", 2),
    mk("GMC", "USA", 3),
    mk("Genesis", "Korea", 4),
    mk("Geo", "USA", 1),
    mk("Honda", "Japan", 2),
    mk("Hummer", "USA", 4),
    mk("Hyundai", "Korea", 1),
    mk("Infiniti", "Japan", 3),
    mk("Isuzu", "Japan", 1),
    mk("Jaguar", "UK", 4),
    mk("Jeep", "USA", 2),
    mk("Kia", "Korea", 1),
    mk("Lamborghini", "Italy", 5),
    mk("Lancia", "Italy", 2),
    mk("Land Rover", "UK", 4),
    mk("Lexus", "Japan", 4),
    mk("Lincoln", "USA", 3),
    mk("Lotus", "UK", 5),
    mk("Lucid", "USA", 5),
    mk("MG", "UK", 2),
    mk("MINI", "UK", 3),
    mk("Maserati", "Italy", 5),
    mk("Maybach", "Germany", 5),
    mk("Mazda", "Japan", 2),
    mk("McLaren", "UK", 5),
    mk("Mercedes-Benz", "Germany", 4),
    mk("Mercury", "USA", 1),
    mk("Mitsubishi", "Japan", 1),
    mk("Nissan", "Japan", 2),
    mk("Oldsmobile", "USA", 1),
    mk("Opel", "Germany", 2),
    mk("Peugeot", "France", 2),
    mk("Plymouth", "USA", 1),
    mk("Polestar", "Sweden", 4),
    mk("Pontiac", "USA", 1),
    mk("Porsche", "Germany", 5),
    mk("Ram", "USA", 3),
    mk("Renault", "France", 2),
    mk("Rivian", "USA", 5),
    mk("Rolls-Royce", "UK", 5),
    mk("Saab", "Sweden", 2),
    mk("Saturn", "USA", 1),
    mk("Scion", "Japan", 2),
    mk("Smart", "Germany", 2),
    mk("Subaru", "Japan", 2),
    mk("Suzuki", "Japan", 1),
    mk("Tesla", "USA", 5),
    mk("Toyota", "Japan", 2),
    mk("Triumph", "UK", 2),
    mk("Volkswagen", "Germany", 2),
    mk("Volvo", "Sweden", 3),
];

/// Attribute kinds that can be read off a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributeKind {
    Make,
    Model,
    Submodel,
    Year,
    Trim,
    BodyType,
    Price,
    Mpg,
    Country,
    Foreign,
}

impl AttributeKind {
    pub fn is_numeric(self) -> bool {
        matches!(self, AttributeKind::Price | AttributeKind::Mpg)
    }
}

impl FromStr for AttributeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "make" => AttributeKind::Make,
            "model" => AttributeKind::Model,
            "submodel" => AttributeKind::Submodel,
            "year" => AttributeKind::Year,
            "trim" => AttributeKind::Trim,
            "body-type" | "body_type" | "body" => AttributeKind::BodyType,
            "price" => AttributeKind::Price,
            "mpg" => AttributeKind::Mpg,
            "country" => AttributeKind::Country,
            "foreign" | "domestic-foreign" => AttributeKind::Foreign,
            other => return Err(Error::arg(format!("unknown attribute kind `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttributeValue {
    Text(String),
    Body(BodyType),
    /// Numeric attribute; `None` when the class carries no value.
    Number(Option<f64>),
    Foreign(bool),
}

impl AttributeValue {
    /// Category label used for histograms and confusion matrices.
    pub fn label(&self) -> String {
        match self {
            AttributeValue::Text(s) => s.clone(),
            AttributeValue::Body(b) => b.label().to_string(),
            AttributeValue::Number(Some(v)) => format!("{v}"),
            AttributeValue::Number(None) => "missing".to_string(),
            AttributeValue::Foreign(true) => "foreign".to_string(),
            AttributeValue::Foreign(false) => "domestic".to_string(),
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            AttributeValue::Number(v) => *v,
            _ => None,
        }
    }
}

const COLUMNS: [&str; 11] = [
    "make",
    "model",
    "submodel",
    "year_start",
    "year_end",
    "trim",
    "body_type",
    "price_usd",
    "mpg",
    "country",
    "is_foreign",
];

/// Immutable class table with precomputed make and country indexes.
#[derive(Debug, Clone, Default)]
pub struct ClassTable {
    classes: Vec<CarClass>,
    makes: Vec<String>,
    make_of: Vec<u32>,
    countries: Vec<String>,
    country_of: Vec<u32>,
}

impl ClassTable {
    /// Builds a table from classes with dense, unique ids (in any order).
    pub fn from_classes(mut classes: Vec<CarClass>) -> Result<Self> {
        classes.sort_by_key(|c| c.class_id);
        for (pos, class) in classes.iter().enumerate() {
            class.validate()?;
            if pos > 0 && classes[pos - 1].class_id == class.class_id {
                return Err(Error::Validation(format!("duplicate class_id {}", class.class_id)));
            }
            if class.class_id as usize != pos {
                return Err(Error::Validation(format!(
                    "class ids are not dense: expected {pos}, found {}",
                    class.class_id
                )));
            }
        }
        let (makes, make_of) = index_labels(classes.iter().map(|c| c.make.as_str()));
        let (countries, country_of) = index_labels(classes.iter().map(|c| c.country.as_str()));
        Ok(ClassTable { classes, makes, make_of, countries, country_of })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[CarClass] {
        &self.classes
    }

    pub fn get(&self, class_id: u32) -> Result<&CarClass> {
        self.classes.get(class_id as usize).ok_or(Error::UnknownClass(class_id))
    }

    pub fn contains(&self, class_id: u32) -> bool {
        (class_id as usize) < self.classes.len()
    }

    /// Sorted distinct makes.
    pub fn makes(&self) -> &[String] {
        &self.makes
    }

    /// Index into [`ClassTable::makes`] for a class.
    pub fn make_index(&self, class_id: u32) -> Result<usize> {
        self.make_of.get(class_id as usize).map(|&i| i as usize).ok_or(Error::UnknownClass(class_id))
    }

    pub fn countries(&self) -> &[String] {
        &self.countries
    }

    pub fn country_index(&self, class_id: u32) -> Result<usize> {
        self.country_of.get(class_id as usize).map(|&i| i as usize).ok_or(Error::UnknownClass(class_id))
    }

    pub fn attribute_of(&self, class_id: u32, kind: AttributeKind) -> Result<AttributeValue> {
        let c = self.get(class_id)?;
        Ok(match kind {
            AttributeKind::Make => AttributeValue::Text(c.make.clone()),
            AttributeKind::Model => AttributeValue::Text(c.model.clone()),
            AttributeKind::Submodel => AttributeValue::Text(c.submodel.clone()),
            AttributeKind::Year => AttributeValue::Text(format!("{}-{}", c.year_start, c.year_end)),
            AttributeKind::Trim => AttributeValue::Text(c.trim.clone()),
            AttributeKind::BodyType => AttributeValue::Body(c.body_type),
            AttributeKind::Price => AttributeValue::Number(c.price_usd),
            AttributeKind::Mpg => AttributeValue::Number(c.mpg),
            AttributeKind::Country => AttributeValue::Text(c.country.clone()),
            AttributeKind::Foreign => AttributeValue::Foreign(c.is_foreign),
        })
    }

    /// Category labels for `kind` in a stable order.
    ///
    /// Body types use the fixed vocabulary order; every other kind uses the
    /// sorted distinct labels present in the table.
    pub fn categories(&self, kind: AttributeKind) -> Vec<String> {
        match kind {
            AttributeKind::BodyType => BodyType::ALL.iter().map(|b| b.label().to_string()).collect(),
            AttributeKind::Foreign => vec!["domestic".into(), "foreign".into()],
            AttributeKind::Make => self.makes.clone(),
            AttributeKind::Country => self.countries.clone(),
            _ => {
                let mut labels: Vec<String> = (0..self.len() as u32)
                    .map(|id| self.attribute_of(id, kind).map(|v| v.label()))
                    .collect::<Result<_>>()
                    .unwrap_or_default();
                labels.sort();
                labels.dedup();
                labels
            }
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["class_id"];
        header.extend(COLUMNS);
        w.write_record(&header)?;
        for c in &self.classes {
            w.write_record([
                c.class_id.to_string(),
                c.make.clone(),
                c.model.clone(),
                c.submodel.clone(),
                c.year_start.to_string(),
                c.year_end.to_string(),
                c.trim.clone(),
                c.body_type.label().to_string(),
                c.price_usd.map(|v| v.to_string()).unwrap_or_default(),
                c.mpg.map(|v| v.to_string()).unwrap_or_default(),
                c.country.clone(),
                c.is_foreign.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn index_labels<'a>(labels: impl Iterator<Item = &'a str> + Clone) -> (Vec<String>, Vec<u32>) {
    let mut distinct: Vec<String> = labels.clone().map(str::to_string).collect();
    distinct.sort();
    distinct.dedup();
    let pos: HashMap<&str, u32> = distinct.iter().enumerate().map(|(i, s)| (s.as_str(), i as u32)).collect();
    let of = labels.map(|s| pos[s]).collect();
    (distinct, of)
}

/// Loads a taxonomy from delimited text with a header row.
///
/// `class_id` is optional; when the column or a field is absent the id is the
/// zero-based data-row position.
pub fn load_taxonomy<R: Read>(source: R) -> Result<ClassTable> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let id_col = col("class_id");
    let mut cols = [0usize; 11];
    for (slot, name) in cols.iter_mut().zip(COLUMNS) {
        *slot = col(name).ok_or_else(|| Error::Schema(name.to_string()))?;
    }

    let mut classes = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(row + 2);
        let field = |i: usize| record.get(cols[i]).unwrap_or("");
        let perr = |message: String| Error::Parse { line, message };

        let class_id = match id_col.map(|i| record.get(i).unwrap_or("")) {
            Some(s) if !s.is_empty() => s.parse::<u32>().map_err(|_| perr(format!("bad class_id `{s}`")))?,
            _ => row as u32,
        };
        let year = |i: usize| field(i).parse::<i32>().map_err(|_| perr(format!("bad {} `{}`", COLUMNS[i], field(i))));
        let optional_number = |i: usize| -> Result<Option<f64>> {
            let s = field(i);
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|_| perr(format!("bad {} `{s}`", COLUMNS[i])))
            }
        };
        let country = field(9).to_string();
        let is_foreign = match field(10).to_ascii_lowercase().as_str() {
            "" => is_foreign_country(&country),
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" => false,
            other => return Err(perr(format!("bad is_foreign `{other}`"))),
        };
        classes.push(CarClass {
            class_id,
            make: field(0).to_string(),
            model: field(1).to_string(),
            submodel: field(2).to_string(),
            year_start: year(3)?,
            year_end: year(4)?,
            trim: field(5).to_string(),
            body_type: BodyType::parse_lenient(field(6)),
            price_usd: optional_number(7)?,
            mpg: optional_number(8)?,
            country,
            is_foreign,
        });
    }
    ClassTable::from_classes(classes)
}

fn check_pairs(predictions: &[u32], truths: &[u32]) -> Result<()> {
    if predictions.len() != truths.len() {
        return Err(Error::arg(format!("prediction/truth length mismatch: {} vs {}", predictions.len(), truths.len())));
    }
    if predictions.is_empty() {
        return Err(Error::arg("empty prediction sequence"));
    }
    Ok(())
}

/// Fraction of positions whose predicted and true classes share the attribute value.
pub fn attribute_accuracy(predictions: &[u32], truths: &[u32], kind: AttributeKind, table: &ClassTable) -> Result<f64> {
    check_pairs(predictions, truths)?;
    let mut hits = 0usize;
    for (&p, &t) in predictions.iter().zip(truths) {
        if table.attribute_of(p, kind)? == table.attribute_of(t, kind)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / predictions.len() as f64)
}

/// Confusion counts and row-normalised rates; rows are true categories.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub rates: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn rate(&self, truth: &str, predicted: &str) -> Option<f64> {
        Some(self.rates[self.index_of(truth)?][self.index_of(predicted)?])
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion_matrix(
    predictions: &[u32],
    truths: &[u32],
    kind: AttributeKind,
    table: &ClassTable,
) -> Result<ConfusionMatrix> {
    check_pairs(predictions, truths)?;
    let labels = table.categories(kind);
    let pos: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let n = labels.len();
    let mut counts = vec![vec![0u64; n]; n];
    for (&p, &t) in predictions.iter().zip(truths) {
        let pl = table.attribute_of(p, kind)?.label();
        let tl = table.attribute_of(t, kind)?.label();
        counts[pos[tl.as_str()]][pos[pl.as_str()]] += 1;
    }
    let rates = counts
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            row.iter().map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 }).collect()
        })
        .collect();
    Ok(ConfusionMatrix { labels, counts, rates })
}
