//! Expected car counts per image and their regional rollups.
//!
//! For an image, the expected number of cars of class `c` is the sum over its
//! boxes of `P(car | box) * P(c | car, box)`. Region statistics sum those
//! expectations over every image in the region and derive attribute averages
//! and shares from the summed class counts.

pub mod aggregate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ClassProb, DetectionRecord};
use crate::numeric::CompensatedSum;
use crate::taxonomy::{AttributeKind, ClassTable};

pub use aggregate::{
    merge_shards, read_region_table, write_point_table, write_region_table, Aggregator, Grouping, RegionAccumulator,
    RegionRollup, RegionStats,
};

/// Keeps the `k` most probable classes of a full distribution.
///
/// Entries are not renormalised. Ties at the cutoff go to the smaller class id
/// and zero-probability classes are dropped.
pub fn truncate_topk(distribution: &[f64], k: usize) -> Result<Vec<ClassProb>> {
    if k == 0 {
        return Err(Error::arg("k must be positive"));
    }
    let total: f64 = distribution.iter().sum();
    if (total - 1.0).abs() > 1e-6 || distribution.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::arg(format!("input is not a probability distribution (sum {total})")));
    }
    let mut idx: Vec<usize> = (0..distribution.len()).filter(|&i| distribution[i] > 0.0).collect();
    let by_prob = |a: &usize, b: &usize| distribution[*b].total_cmp(&distribution[*a]).then(a.cmp(b));
    if idx.len() > k {
        idx.select_nth_unstable_by(k - 1, by_prob);
        idx.truncate(k);
    }
    idx.sort_by(by_prob);
    Ok(idx.into_iter().map(|i| ClassProb { class_id: i as u32, prob: distribution[i] }).collect())
}

/// Sparse expected class counts for one image (or any set of boxes).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassExpectation {
    /// `(class_id, expected count)` sorted by class id.
    pub counts: Vec<(u32, f64)>,
    /// Sum of car probabilities over the boxes.
    pub expected_cars: f64,
}

impl ClassExpectation {
    pub fn get(&self, class_id: u32) -> f64 {
        self.counts.binary_search_by_key(&class_id, |&(c, _)| c).map(|i| self.counts[i].1).unwrap_or(0.0)
    }

    /// Total class-probability mass; at most `expected_cars`.
    pub fn class_mass(&self) -> f64 {
        self.counts.iter().map(|&(_, m)| m).collect::<CompensatedSum>().value()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectationOptions {
    /// Rescale each truncated class distribution to sum to one. Off by default.
    pub renormalize: bool,
}

pub fn expected_class_count(detections: &[DetectionRecord]) -> Result<ClassExpectation> {
    expected_class_count_with(detections, ExpectationOptions::default())
}

pub fn expected_class_count_with(
    detections: &[DetectionRecord],
    options: ExpectationOptions,
) -> Result<ClassExpectation> {
    let mut terms: Vec<(u32, f64)> = Vec::with_capacity(detections.len() * 4);
    let mut expected_cars = 0.0;
    for d in detections {
        let p_car = d.car_probability.ok_or_else(|| Error::Uncalibrated(d.image_id.clone()))?;
        expected_cars += p_car;
        let scale = if options.renormalize {
            let mass: f64 = d.class_probs.iter().map(|cp| cp.prob).sum();
            if mass > 0.0 {
                1.0 / mass
            } else {
                0.0
            }
        } else {
            1.0
        };
        terms.extend(d.class_probs.iter().map(|cp| (cp.class_id, p_car * cp.prob * scale)));
    }
    // stable sort keeps box order within a class
    terms.sort_by_key(|&(c, _)| c);
    let mut counts: Vec<(u32, f64)> = Vec::with_capacity(terms.len());
    for (c, m) in terms {
        match counts.last_mut() {
            Some(last) if last.0 == c => last.1 += m,
            _ => counts.push((c, m)),
        }
    }
    Ok(ClassExpectation { counts, expected_cars })
}

/// Expectation of an attribute under a class expectation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum AttributeExpectation {
    /// Mass-weighted mean over classes with a known value; `None` if there are none.
    Mean(Option<f64>),
    /// Expected mass per category label.
    Histogram(BTreeMap<String, f64>),
}

impl AttributeExpectation {
    pub fn mean(&self) -> Option<f64> {
        match self {
            AttributeExpectation::Mean(m) => *m,
            AttributeExpectation::Histogram(_) => None,
        }
    }

    pub fn mass(&self, label: &str) -> f64 {
        match self {
            AttributeExpectation::Histogram(h) => h.get(label).copied().unwrap_or(0.0),
            AttributeExpectation::Mean(_) => 0.0,
        }
    }
}

pub fn expected_attribute(
    expectation: &ClassExpectation,
    table: &ClassTable,
    kind: AttributeKind,
) -> Result<AttributeExpectation> {
    if kind.is_numeric() {
        let mut num = CompensatedSum::new();
        let mut den = CompensatedSum::new();
        for &(c, m) in &expectation.counts {
            if let Some(v) = table.attribute_of(c, kind)?.as_number() {
                num.add(m * v);
                den.add(m);
            }
        }
        let den = den.value();
        Ok(AttributeExpectation::Mean((den > 0.0).then(|| num.value() / den)))
    } else {
        let mut hist: BTreeMap<String, CompensatedSum> = BTreeMap::new();
        for &(c, m) in &expectation.counts {
            hist.entry(table.attribute_of(c, kind)?.label()).or_default().add(m);
        }
        Ok(AttributeExpectation::Histogram(hist.into_iter().map(|(k, v)| (k, v.value())).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::BBox;
    use crate::taxonomy::{BodyType, CarClass};

    pub(crate) fn record(p_car: Option<f64>, probs: &[(u32, f64)]) -> DetectionRecord {
        DetectionRecord {
            image_id: "img".into(),
            bbox: BBox::new(10.0, 10.0, 4.0, 4.0).unwrap(),
            raw_score: 0.0,
            car_probability: p_car,
            class_probs: probs.iter().map(|&(class_id, prob)| ClassProb { class_id, prob }).collect(),
        }
    }

    pub(crate) fn table() -> ClassTable {
        let class = |id: u32, make: &str, price: f64, country: &str| CarClass {
            class_id: id,
            make: make.into(),
            model: "m".into(),
            submodel: "s".into(),
            year_start: 2000,
            year_end: 2001,
            trim: "t".into(),
            body_type: BodyType::Sedan,
            price_usd: Some(price),
            mpg: Some(25.0),
            country: country.into(),
            is_foreign: country != "USA",
        };
        ClassTable::from_classes(vec![
            class(0, "Hummer", 30_000.0, "USA"),
            class(1, "Honda", 10_000.0, "Japan"),
            class(2, "Honda", 20_000.0, "Japan"),
        ])
        .unwrap()
    }

    #[test]
    fn topk_examples() {
        let d = [0.5, 0.0, 0.3, 0.2];
        let t = truncate_topk(&d, 20).unwrap();
        assert_eq!(t.iter().map(|c| c.class_id).collect::<Vec<_>>(), vec![0, 2, 3]);
        let uniform = vec![1.0 / 2657.0; 2657];
        let t = truncate_topk(&uniform, 20).unwrap();
        assert_eq!(t.len(), 20);
        // ties go to the smallest ids
        assert_eq!(t.iter().map(|c| c.class_id).collect::<Vec<_>>(), (0..20).collect::<Vec<_>>());
        let kept: f64 = t.iter().map(|c| c.prob).sum();
        assert!((kept - 20.0 / 2657.0).abs() < 1e-12);
        assert!(truncate_topk(&d, 0).is_err());
        assert!(truncate_topk(&[0.5, 0.2], 3).is_err());
    }

    #[test]
    fn expectation_examples() {
        let e = expected_class_count(&[record(Some(1.0), &[(2, 1.0)])]).unwrap();
        assert_eq!(e.counts, vec![(2, 1.0)]);
        let two = [record(Some(0.5), &[(0, 0.6), (1, 0.4)]), record(Some(0.5), &[(0, 0.6), (1, 0.4)])];
        let e = expected_class_count(&two).unwrap();
        assert!((e.get(0) - 0.6).abs() < 1e-15);
        assert!((e.get(1) - 0.4).abs() < 1e-15);
        assert_eq!(e.expected_cars, 1.0);
        let empty = expected_class_count(&[]).unwrap();
        assert!(empty.is_empty());
        assert!(matches!(expected_class_count(&[record(None, &[(0, 1.0)])]), Err(Error::Uncalibrated(_))));
    }

    #[test]
    fn renormalize_knob() {
        let r = [record(Some(1.0), &[(0, 0.3), (1, 0.2)])];
        let e = expected_class_count_with(&r, ExpectationOptions { renormalize: true }).unwrap();
        assert!((e.get(0) - 0.6).abs() < 1e-15);
        assert!((e.class_mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn attribute_examples() {
        let t = table();
        let one = ClassExpectation { counts: vec![(0, 1.0)], expected_cars: 1.0 };
        assert_eq!(expected_attribute(&one, &t, AttributeKind::Price).unwrap().mean(), Some(30_000.0));
        let pair = ClassExpectation { counts: vec![(1, 1.0), (2, 1.0)], expected_cars: 2.0 };
        assert_eq!(expected_attribute(&pair, &t, AttributeKind::Price).unwrap().mean(), Some(15_000.0));
        let mix = ClassExpectation { counts: vec![(0, 0.6), (1, 0.4)], expected_cars: 1.0 };
        let h = expected_attribute(&mix, &t, AttributeKind::Make).unwrap();
        assert_eq!(h.mass("Hummer"), 0.6);
        assert_eq!(h.mass("Honda"), 0.4);
        let bad = ClassExpectation { counts: vec![(9, 1.0)], expected_cars: 1.0 };
        assert!(expected_attribute(&bad, &t, AttributeKind::Make).is_err());
    }
}
