//! Regional rollups of per-image class expectations.
//!
//! Accumulators keep one compensated sum per class, so merging shards in any
//! order agrees with a single pass to ~1e-15 relative. [`merge_shards`] fixes
//! the merge order (region id, then shard index) for bit-stable output.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::census::{expected_class_count_with, ClassExpectation, ExpectationOptions};
use crate::error::{Error, Result};
use crate::ingest::{DetectionRecord, GeoImage};
use crate::numeric::CompensatedSum;
use crate::taxonomy::{BodyType, ClassTable};

/// Region id used for detections whose image is missing from the metadata.
pub const UNASSIGNED: &str = "unassigned";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Grouping {
    City,
    Zip,
    /// One region per GPS point, keyed `lat:lon`.
    Point,
}

impl Grouping {
    pub fn key(self, image: &GeoImage) -> String {
        match self {
            Grouping::City => image.city_id.clone(),
            Grouping::Zip => image.zip_code.clone(),
            Grouping::Point => format!("{}:{}", image.lat, image.lon),
        }
    }
}

impl FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "city" => Ok(Grouping::City),
            "zip" => Ok(Grouping::Zip),
            "point" => Ok(Grouping::Point),
            other => Err(Error::arg(format!("unknown grouping `{other}` (expected city|zip|point)"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegionAccumulator {
    pub images: u64,
    expected_cars: CompensatedSum,
    classes: HashMap<u32, CompensatedSum>,
}

impl RegionAccumulator {
    pub fn add_image(&mut self, expectation: &ClassExpectation) {
        self.images += 1;
        self.add_expectation(expectation);
    }

    /// Adds boxes without counting an image (used when images were pre-registered).
    pub fn add_expectation(&mut self, expectation: &ClassExpectation) {
        self.expected_cars.add(expectation.expected_cars);
        for &(c, m) in &expectation.counts {
            self.classes.entry(c).or_default().add(m);
        }
    }

    pub fn merge(&mut self, other: &RegionAccumulator) {
        self.images += other.images;
        self.expected_cars.merge(&other.expected_cars);
        let mut ids: Vec<&u32> = other.classes.keys().collect();
        ids.sort_unstable();
        for c in ids {
            self.classes.entry(*c).or_default().merge(&other.classes[c]);
        }
    }

    pub fn expected_cars(&self) -> f64 {
        self.expected_cars.value()
    }

    pub fn finish(&self, region: &str, table: &ClassTable) -> Result<RegionStats> {
        let class_counts: BTreeMap<u32, f64> = self.classes.iter().map(|(&c, s)| (c, s.value())).collect();
        RegionStats::from_counts(region.to_string(), self.images, self.expected_cars(), class_counts, table)
    }
}

/// Per-region expected attribute statistics.
///
/// Shares (`pct_*`) are fractions of the region's class-probability mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionStats {
    pub region: String,
    pub image_count: u64,
    pub total_expected_cars: f64,
    pub class_counts: BTreeMap<u32, f64>,
    pub class_mass: f64,
    pub avg_price: Option<f64>,
    pub avg_mpg: Option<f64>,
    pub pct_foreign: Option<f64>,
    pub pct_by_make: BTreeMap<String, f64>,
    pub pct_by_body_type: BTreeMap<BodyType, f64>,
    pub cars_per_image: f64,
}

impl RegionStats {
    pub fn from_counts(
        region: String,
        image_count: u64,
        total_expected_cars: f64,
        class_counts: BTreeMap<u32, f64>,
        table: &ClassTable,
    ) -> Result<Self> {
        let mut mass = CompensatedSum::new();
        let (mut price_num, mut price_den) = (CompensatedSum::new(), CompensatedSum::new());
        let (mut mpg_num, mut mpg_den) = (CompensatedSum::new(), CompensatedSum::new());
        let mut foreign = CompensatedSum::new();
        let mut makes = vec![CompensatedSum::new(); table.makes().len()];
        let mut bodies = [CompensatedSum::new(); 12];
        for (&c, &m) in &class_counts {
            let class = table.get(c)?;
            mass.add(m);
            if let Some(p) = class.price_usd {
                price_num.add(m * p);
                price_den.add(m);
            }
            if let Some(g) = class.mpg {
                mpg_num.add(m * g);
                mpg_den.add(m);
            }
            if class.is_foreign {
                foreign.add(m);
            }
            makes[table.make_index(c)?].add(m);
            bodies[class.body_type.index()].add(m);
        }
        let class_mass = mass.value();
        let ratio = |num: &CompensatedSum, den: &CompensatedSum| {
            let d = den.value();
            (d > 0.0).then(|| num.value() / d)
        };
        let (pct_foreign, pct_by_make, pct_by_body_type) = if class_mass > 0.0 {
            (
                Some(foreign.value() / class_mass),
                table
                    .makes()
                    .iter()
                    .zip(&makes)
                    .filter(|(_, s)| s.value() > 0.0)
                    .map(|(name, s)| (name.clone(), s.value() / class_mass))
                    .collect(),
                BodyType::ALL
                    .iter()
                    .zip(&bodies)
                    .filter(|(_, s)| s.value() > 0.0)
                    .map(|(b, s)| (*b, s.value() / class_mass))
                    .collect(),
            )
        } else {
            (None, BTreeMap::new(), BTreeMap::new())
        };
        Ok(RegionStats {
            region,
            image_count,
            total_expected_cars,
            avg_price: ratio(&price_num, &price_den),
            avg_mpg: ratio(&mpg_num, &mpg_den),
            pct_foreign,
            pct_by_make,
            pct_by_body_type,
            cars_per_image: if image_count > 0 { total_expected_cars / image_count as f64 } else { 0.0 },
            class_counts,
            class_mass,
        })
    }

    pub fn make_share(&self, make: &str) -> f64 {
        self.pct_by_make.get(make).copied().unwrap_or(0.0)
    }

    pub fn body_share(&self, body: BodyType) -> f64 {
        self.pct_by_body_type.get(&body).copied().unwrap_or(0.0)
    }
}

/// Final rollup: regions sorted by id plus the bucket for unknown images.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionRollup {
    pub regions: Vec<RegionStats>,
    pub unassigned: Option<RegionStats>,
}

impl RegionRollup {
    pub fn get(&self, region: &str) -> Option<&RegionStats> {
        self.regions.binary_search_by(|r| r.region.as_str().cmp(region)).ok().map(|i| &self.regions[i])
    }
}

/// Streaming aggregator over images grouped by region.
pub struct Aggregator<'a> {
    table: &'a ClassTable,
    grouping: Grouping,
    options: ExpectationOptions,
    region_of: HashMap<&'a str, String>,
    regions: BTreeMap<String, RegionAccumulator>,
    unassigned: RegionAccumulator,
}

impl<'a> Aggregator<'a> {
    /// Registers every image in the metadata so that images without
    /// detections still count toward cars per image.
    pub fn new(table: &'a ClassTable, images: &'a [GeoImage], grouping: Grouping) -> Self {
        let mut regions: BTreeMap<String, RegionAccumulator> = BTreeMap::new();
        let mut region_of = HashMap::with_capacity(images.len());
        for im in images {
            let key = grouping.key(im);
            regions.entry(key.clone()).or_default().images += 1;
            region_of.insert(im.image_id.as_str(), key);
        }
        Aggregator {
            table,
            grouping,
            options: ExpectationOptions::default(),
            region_of,
            regions,
            unassigned: RegionAccumulator::default(),
        }
    }

    pub fn with_options(mut self, options: ExpectationOptions) -> Self {
        self.options = options;
        self
    }

    pub fn grouping(&self) -> Grouping {
        self.grouping
    }

    fn check_classes(&self, records: &[DetectionRecord]) -> Result<()> {
        for r in records {
            for cp in &r.class_probs {
                if !self.table.contains(cp.class_id) {
                    return Err(Error::UnknownClass(cp.class_id));
                }
            }
        }
        Ok(())
    }

    /// Adds one image's detections.
    pub fn add_image(&mut self, image_id: &str, records: &[DetectionRecord]) -> Result<()> {
        self.check_classes(records)?;
        let expectation = expected_class_count_with(records, self.options)?;
        self.add_expectation(image_id, &expectation);
        Ok(())
    }

    fn add_expectation(&mut self, image_id: &str, expectation: &ClassExpectation) {
        match self.region_of.get(image_id) {
            Some(region) => self.regions.get_mut(region).expect("registered region").add_expectation(expectation),
            None => self.unassigned.add_image(expectation),
        }
    }

    /// Consumes image groups, computing expectations in parallel batches and
    /// adding them in input order.
    pub fn consume<I>(&mut self, groups: I, batch_images: usize) -> Result<()>
    where
        I: Iterator<Item = Result<(String, Vec<DetectionRecord>)>>,
    {
        let batch_images = batch_images.max(1);
        let mut batch: Vec<(String, Vec<DetectionRecord>)> = Vec::with_capacity(batch_images);
        let mut groups = groups.peekable();
        while groups.peek().is_some() {
            batch.clear();
            for g in groups.by_ref().take(batch_images) {
                batch.push(g?);
            }
            let options = self.options;
            let expectations: Vec<ClassExpectation> = batch
                .par_iter()
                .map(|(_, recs)| {
                    self.check_classes(recs)?;
                    expected_class_count_with(recs, options)
                })
                .collect::<Result<_>>()?;
            for ((id, _), e) in batch.iter().zip(&expectations) {
                self.add_expectation(id, e);
            }
        }
        Ok(())
    }

    pub fn into_accumulators(self) -> (BTreeMap<String, RegionAccumulator>, RegionAccumulator) {
        (self.regions, self.unassigned)
    }

    pub fn finish(self) -> Result<RegionRollup> {
        let table = self.table;
        let (regions, unassigned) = self.into_accumulators();
        finish_accumulators(&regions, &unassigned, table)
    }
}

pub(crate) fn finish_accumulators(
    regions: &BTreeMap<String, RegionAccumulator>,
    unassigned: &RegionAccumulator,
    table: &ClassTable,
) -> Result<RegionRollup> {
    let stats = regions.iter().map(|(k, acc)| acc.finish(k, table)).collect::<Result<Vec<_>>>()?;
    let unassigned = if unassigned.images > 0 { Some(unassigned.finish(UNASSIGNED, table)?) } else { None };
    Ok(RegionRollup { regions: stats, unassigned })
}

/// Merges shard accumulators in ascending region id, then shard index.
pub fn merge_shards(shards: &[BTreeMap<String, RegionAccumulator>]) -> BTreeMap<String, RegionAccumulator> {
    let mut keys: Vec<&String> = shards.iter().flat_map(|s| s.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|k| {
            let mut acc = RegionAccumulator::default();
            for shard in shards {
                if let Some(a) = shard.get(k) {
                    acc.merge(a);
                }
            }
            (k.clone(), acc)
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes one row per region. Make columns cover every make in the table.
pub fn write_region_table<W: Write>(out: W, regions: &[RegionStats], table: &ClassTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "region",
        "image_count",
        "total_expected_cars",
        "cars_per_image",
        "class_mass",
        "avg_price",
        "avg_mpg",
        "pct_foreign",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(table.makes().iter().map(|m| format!("make:{m}")));
    header.extend(BodyType::ALL.iter().map(|b| format!("body:{}", b.label())));
    w.write_record(&header)?;
    for r in regions {
        let mut row = vec![
            r.region.clone(),
            r.image_count.to_string(),
            r.total_expected_cars.to_string(),
            r.cars_per_image.to_string(),
            r.class_mass.to_string(),
            fmt_opt(r.avg_price),
            fmt_opt(r.avg_mpg),
            fmt_opt(r.pct_foreign),
        ];
        row.extend(table.makes().iter().map(|m| r.make_share(m).to_string()));
        row.extend(BodyType::ALL.iter().map(|b| r.body_share(*b).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a region table back. Per-class counts are not part of the table and
/// come back empty.
pub fn read_region_table<R: Read>(source: R) -> Result<Vec<RegionStats>> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema(name.to_string()));
    let fixed = [
        col("region")?,
        col("image_count")?,
        col("total_expected_cars")?,
        col("cars_per_image")?,
        col("class_mass")?,
        col("avg_price")?,
        col("avg_mpg")?,
        col("pct_foreign")?,
    ];
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 2);
        let num = |idx: usize| -> Result<Option<f64>> {
            let s = rec.get(idx).unwrap_or("");
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>().map(Some).map_err(|_| Error::Parse { line, message: format!("bad number `{s}`") })
        };
        let mut pct_by_make = BTreeMap::new();
        let mut pct_by_body_type = BTreeMap::new();
        for (j, h) in headers.iter().enumerate() {
            if let Some(make) = h.strip_prefix("make:") {
                if let Some(v) = num(j)?.filter(|v| *v > 0.0) {
                    pct_by_make.insert(make.to_string(), v);
                }
            } else if let Some(body) = h.strip_prefix("body:") {
                if let Some(v) = num(j)?.filter(|v| *v > 0.0) {
                    pct_by_body_type.insert(body.parse::<BodyType>()?, v);
                }
            }
        }
        out.push(RegionStats {
            region: rec.get(fixed[0]).unwrap_or("").to_string(),
            image_count: num(fixed[1])?.unwrap_or(0.0) as u64,
            total_expected_cars: num(fixed[2])?.unwrap_or(0.0),
            cars_per_image: num(fixed[3])?.unwrap_or(0.0),
            class_mass: num(fixed[4])?.unwrap_or(0.0),
            avg_price: num(fixed[5])?,
            avg_mpg: num(fixed[6])?,
            pct_foreign: num(fixed[7])?,
            class_counts: BTreeMap::new(),
            pct_by_make,
            pct_by_body_type,
        });
    }
    Ok(out)
}

/// Writes `lat,lon,value` rows for point-grouped regions with a known value.
pub fn write_point_table<W: Write>(
    out: W,
    regions: &[RegionStats],
    value: impl Fn(&RegionStats) -> Option<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lat", "lon", "value"])?;
    for r in regions {
        let Some((lat, lon)) = r.region.split_once(':') else {
            return Err(Error::arg(format!("region `{}` is not a point key", r.region)));
        };
        if let Some(v) = value(r) {
            w.write_record([lat, lon, &v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
