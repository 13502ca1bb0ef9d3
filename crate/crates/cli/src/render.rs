use std::path::Path;

use image::{Rgb, RgbImage};

use cryostack::labels::{LabelMask, BACKGROUND, CLEAN_ICE, DEBRIS, VEGETATION, WATER};

/// Class colours: background grey, clean ice pale blue, debris brown, water
/// blue, vegetation green. Ignored or unknown pixels are black.
pub fn class_colour(class: u8) -> [u8; 3] {
    match class {
        BACKGROUND => [128, 128, 128],
        CLEAN_ICE => [220, 235, 255],
        DEBRIS => [139, 90, 43],
        WATER => [30, 90, 200],
        VEGETATION => [40, 160, 60],
        _ => [0, 0, 0],
    }
}

pub fn render(mask: &LabelMask) -> RgbImage {
    let g = mask.geometry();
    RgbImage::from_fn(g.width as u32, g.height as u32, |x, y| {
        Rgb(class_colour(mask.get(y as usize, x as usize)))
    })
}

pub fn write_png(mask: &LabelMask, path: &Path) -> image::ImageResult<()> {
    render(mask).save_with_format(path, image::ImageFormat::Png)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cryostack::raster::GridGeometry;

    #[test]
    fn pixels_follow_palette() {
        let m = LabelMask::new(GridGeometry::unit(3, 2), vec![0, 1, 2, 3, 4, 255]).unwrap();
        let img = render(&m);
        assert_eq!(img.dimensions(), (3, 2));
        assert_eq!(img.get_pixel(2, 0).0, class_colour(DEBRIS));
        assert_eq!(img.get_pixel(0, 1).0, class_colour(WATER));
        assert_eq!(img.get_pixel(2, 1).0, [0, 0, 0]);
    }
}
