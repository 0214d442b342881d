//! Delimited metadata tables: images, ground-truth boxes and region ground truth.

use std::io::{Read, Write};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{BBox, ImageDims};

/// One Street-View-style capture at a GPS point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoImage {
    pub image_id: String,
    pub lat: f64,
    pub lon: f64,
    pub rotation: u8,
    pub city_id: String,
    pub zip_code: String,
    pub width_px: u32,
    pub height_px: u32,
}

impl GeoImage {
    pub fn dims(&self) -> ImageDims {
        ImageDims::new(self.width_px, self.height_px)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::Validation(format!(
                "image {}: coordinates ({}, {}) out of range",
                self.image_id, self.lat, self.lon
            )));
        }
        if self.rotation >= 6 {
            return Err(Error::Validation(format!("image {}: rotation {} not in [0,6)", self.image_id, self.rotation)));
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::Validation(format!("image {}: zero size", self.image_id)));
        }
        Ok(())
    }
}

/// Annotated (or planted) car box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthBox {
    pub image_id: String,
    pub x_center: f64,
    pub y_center: f64,
    pub width: f64,
    pub height: f64,
    pub class_id: u32,
}

impl TruthBox {
    pub fn bbox(&self) -> BBox {
        BBox { x_center: self.x_center, y_center: self.y_center, width: self.width, height: self.height }
    }
}

/// Region-level ground truth. Attribute averages are optional and only
/// present for synthetic cities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRow {
    #[serde(alias = "zip_code", alias = "region_id")]
    pub region: String,
    pub median_income: f64,
    #[serde(default)]
    pub burglary_rate: Option<f64>,
    #[serde(default)]
    pub total_crime_rate: Option<f64>,
    #[serde(default)]
    pub avg_price: Option<f64>,
    #[serde(default)]
    pub avg_mpg: Option<f64>,
    #[serde(default)]
    pub pct_foreign: Option<f64>,
    #[serde(default)]
    pub cars_per_image: Option<f64>,
}

pub(crate) fn read_rows<T: DeserializeOwned, R: Read>(source: R) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize().enumerate() {
        let row: T = row.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(i + 2);
            Error::Parse { line, message: e.to_string() }
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub(crate) fn write_rows<T: Serialize, W: Write>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_images<R: Read>(source: R) -> Result<Vec<GeoImage>> {
    let images: Vec<GeoImage> = read_rows(source)?;
    for im in &images {
        im.validate()?;
    }
    Ok(images)
}

pub fn write_images<W: Write>(out: W, images: &[GeoImage]) -> Result<()> {
    write_rows(out, images)
}

pub fn read_truth_boxes<R: Read>(source: R) -> Result<Vec<TruthBox>> {
    read_rows(source)
}

pub fn write_truth_boxes<W: Write>(out: W, boxes: &[TruthBox]) -> Result<()> {
    write_rows(out, boxes)
}

pub fn read_ground_truth<R: Read>(source: R) -> Result<Vec<GroundTruthRow>> {
    read_rows(source)
}

pub fn write_ground_truth<W: Write>(out: W, rows: &[GroundTruthRow]) -> Result<()> {
    write_rows(out, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_validate_coordinates() {
        let src = "image_id,lat,lon,rotation,city_id,zip_code,width_px,height_px\na,91,0,0,c,z,10,10\n";
        assert!(read_images(src.as_bytes()).is_err());
        let src = "image_id,lat,lon,rotation,city_id,zip_code,width_px,height_px\na,41,-87,6,c,z,10,10\n";
        assert!(read_images(src.as_bytes()).is_err());
        let src = "image_id,lat,lon,rotation,city_id,zip_code,width_px,height_px\na,41,-87,5,c,60601,640,480\n";
        let ims = read_images(src.as_bytes()).unwrap();
        assert_eq!(ims[0].zip_code, "60601");
    }

    #[test]
    fn ground_truth_accepts_minimal_columns() {
        let src = "region_id,median_income,burglary_rate,total_crime_rate\n60601,52000,3.5,12\n";
        let rows = read_ground_truth(src.as_bytes()).unwrap();
        assert_eq!(rows[0].region, "60601");
        assert_eq!(rows[0].burglary_rate, Some(3.5));
        assert_eq!(rows[0].avg_price, None);
    }
}
