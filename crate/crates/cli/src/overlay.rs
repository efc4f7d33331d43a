//! Box and part overlays drawn onto RGB images.

use std::io::Cursor;

use anyhow::Result;
use image::{ImageFormat, Rgb, RgbImage};
use sgloc::geometry::BBox;

pub const PREDICTED: Rgb<u8> = Rgb([255, 255, 0]);
pub const GROUND_TRUTH: Rgb<u8> = Rgb([255, 0, 0]);
pub const PART: Rgb<u8> = Rgb([0, 255, 255]);

/// Outline thickness, drawn inward from the box edge.
const OUTLINE: i64 = 2;
/// Side of the square part marker.
const DOT: i64 = 3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overlay {
    pub predicted: Option<BBox>,
    pub ground_truth: Option<BBox>,
    pub parts: Vec<(f64, f64)>,
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && x < img.width() as i64 && y < img.height() as i64 {
        img.put_pixel(x as u32, y as u32, color);
    }
}

/// Box corners are rounded to the nearest pixel; anything outside the image
/// is clipped.
fn outline(img: &mut RgbImage, b: &BBox, color: Rgb<u8>) {
    let [x1, y1, x2, y2] = b.to_array().map(|v| v.round() as i64);
    let (w, h) = (img.width() as i64, img.height() as i64);
    for y in y1.max(0)..=y2.min(h - 1) {
        for x in x1.max(0)..=x2.min(w - 1) {
            if x - x1 < OUTLINE || x2 - x < OUTLINE || y - y1 < OUTLINE || y2 - y < OUTLINE {
                put(img, x, y, color);
            }
        }
    }
}

fn dot(img: &mut RgbImage, x: f64, y: f64, color: Rgb<u8>) {
    let (cx, cy) = (x.round() as i64, y.round() as i64);
    let r = DOT / 2;
    for dy in -r..=r {
        for dx in -r..=r {
            put(img, cx + dx, cy + dy, color);
        }
    }
}

/// Ground truth first, the prediction over it, parts on top.
pub fn draw(img: &mut RgbImage, overlay: &Overlay) {
    if let Some(b) = &overlay.ground_truth {
        outline(img, b, GROUND_TRUTH);
    }
    if let Some(b) = &overlay.predicted {
        outline(img, b, PREDICTED);
    }
    for &(x, y) in &overlay.parts {
        dot(img, x, y, PART);
    }
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    img.write_to(&mut Cursor::new(&mut buf), ImageFormat::Png)?;
    Ok(buf)
}
