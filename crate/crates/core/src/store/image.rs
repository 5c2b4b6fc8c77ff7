//! Screenshot preprocessing before encoding.

use std::path::Path;

use image::{imageops, DynamicImage, Rgba, RgbaImage};

use crate::error::{Error, Result};

pub const WHITE: Rgba<u8> = Rgba([255, 255, 255, 255]);

/// Decodes by content, so the file extension does not matter.
pub fn load_image(path: &Path) -> Result<DynamicImage> {
    let unsupported = |e: &dyn std::fmt::Display| {
        Error::UnsupportedImageFormat(format!("{}: {e}", path.display()))
    };
    image::ImageReader::open(path)
        .map_err(|e| unsupported(&e))?
        .with_guessed_format()
        .map_err(|e| unsupported(&e))?
        .decode()
        .map_err(|e| unsupported(&e))
}

/// Letterboxes `image` into an `S x S` canvas, `S = max(W, H)`, with the
/// content centered (rounded toward the top-left) and bands in `fill`.
pub fn pad_to_square(image: &RgbaImage, fill: Rgba<u8>) -> Result<RgbaImage> {
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::UnsupportedImageFormat(format!(
            "empty {w}x{h} image"
        )));
    }
    let side = w.max(h);
    if w == h {
        return Ok(image.clone());
    }
    let mut canvas = RgbaImage::from_pixel(side, side, fill);
    imageops::replace(
        &mut canvas,
        image,
        i64::from((side - w) / 2),
        i64::from((side - h) / 2),
    );
    Ok(canvas)
}

/// Axis-aligned placement of a screenshot inside a device template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inset {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Mockup hook: scales `screenshot` into `inset` and draws it onto a copy
/// of `template`. No templates ship with the engine.
pub fn composite_mockup(
    template: &RgbaImage,
    inset: Inset,
    screenshot: &RgbaImage,
) -> Result<RgbaImage> {
    let (tw, th) = template.dimensions();
    if inset.width == 0
        || inset.height == 0
        || inset.x + inset.width > tw
        || inset.y + inset.height > th
    {
        return Err(Error::InvalidArgument(format!(
            "inset {inset:?} does not fit a {tw}x{th} template"
        )));
    }
    let scaled = imageops::resize(
        screenshot,
        inset.width,
        inset.height,
        imageops::FilterType::Triangle,
    );
    let mut out = template.clone();
    imageops::overlay(&mut out, &scaled, i64::from(inset.x), i64::from(inset.y));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32) -> RgbaImage {
        RgbaImage::from_fn(w, h, |x, y| {
            Rgba([(x % 251) as u8, (y % 241) as u8, 7, 255])
        })
    }

    #[test]
    fn tall_image_gets_side_bands() {
        let src = gradient(100, 200);
        let out = pad_to_square(&src, WHITE).unwrap();
        assert_eq!(out.dimensions(), (200, 200));
        for y in 0..200 {
            for x in 0..50 {
                assert_eq!(*out.get_pixel(x, y), WHITE);
                assert_eq!(*out.get_pixel(150 + x, y), WHITE);
            }
            for x in 0..100 {
                assert_eq!(out.get_pixel(50 + x, y), src.get_pixel(x, y));
            }
        }
    }

    #[test]
    fn square_is_unchanged() {
        let src = gradient(200, 200);
        assert_eq!(pad_to_square(&src, WHITE).unwrap(), src);
    }

    #[test]
    fn minimal_column() {
        let src = gradient(1, 3);
        let out = pad_to_square(&src, WHITE).unwrap();
        assert_eq!(out.dimensions(), (3, 3));
        for y in 0..3 {
            assert_eq!(out.get_pixel(1, y), src.get_pixel(0, y));
            assert_eq!(*out.get_pixel(0, y), WHITE);
            assert_eq!(*out.get_pixel(2, y), WHITE);
        }
    }

    #[test]
    fn wide_image_gets_top_and_bottom_bands() {
        let out = pad_to_square(&gradient(5, 2), WHITE).unwrap();
        assert_eq!(out.dimensions(), (5, 5));
        assert_eq!(*out.get_pixel(0, 0), WHITE);
        assert_eq!(*out.get_pixel(0, 4), WHITE);
        assert_ne!(*out.get_pixel(0, 1), WHITE);
    }

    #[test]
    fn mockup_respects_inset() {
        let template = RgbaImage::from_pixel(10, 20, Rgba([0, 0, 0, 255]));
        let shot = RgbaImage::from_pixel(4, 8, Rgba([9, 9, 9, 255]));
        let inset = Inset {
            x: 2,
            y: 3,
            width: 6,
            height: 12,
        };
        let out = composite_mockup(&template, inset, &shot).unwrap();
        assert_eq!(*out.get_pixel(0, 0), Rgba([0, 0, 0, 255]));
        assert_eq!(*out.get_pixel(4, 8), Rgba([9, 9, 9, 255]));
        assert!(composite_mockup(
            &template,
            Inset {
                x: 8,
                y: 0,
                width: 6,
                height: 2
            },
            &shot
        )
        .is_err());
    }

    #[test]
    fn unreadable_file_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        std::fs::write(&p, b"not an image").unwrap();
        assert!(matches!(
            load_image(&p),
            Err(Error::UnsupportedImageFormat(_))
        ));
    }
}
