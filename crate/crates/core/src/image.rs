//! Stay-time trajectory images and their multi-day stacks.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::codec::{LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::traj::{segment_days, stay_time_grid, Trajectory};

/// Stay time at which a pixel saturates to white.
pub const DEFAULT_SATURATION_S: f64 = 3600.0;
/// Days per car-level stack.
pub const DEFAULT_DAYS: usize = 7;

const TIMG_MAGIC: &[u8; 4] = b"TIMG";
const TIMG_VERSION: u32 = 1;

/// Grayscale image with real-valued pixels in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryImage {
    pub pixels: Array2<f64>,
    /// Channel slot of this day within the observation window.
    pub day_index: usize,
}

impl TrajectoryImage {
    pub fn zeros(shape: (usize, usize), day_index: usize) -> Self {
        Self {
            pixels: Array2::zeros(shape),
            day_index,
        }
    }
}

/// `min(t / T, 1) · 255` per cell, kept as a real value.
pub fn render_image(stay: &Array2<f64>, saturation_s: f64, day_index: usize) -> Result<TrajectoryImage> {
    if !(saturation_s > 0.0 && saturation_s.is_finite()) {
        return Err(Error::Config(format!(
            "saturation time must be positive, got {saturation_s}"
        )));
    }
    Ok(TrajectoryImage {
        pixels: stay.mapv(|t| (t / saturation_s).min(1.0) * 255.0),
        day_index,
    })
}

pub fn normalize(img: &TrajectoryImage) -> Array2<f64> {
    img.pixels.mapv(|v| v / 255.0)
}

/// A car's per-day images as a fixed number of channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    pub vehicle_id: String,
    pub channels: Vec<TrajectoryImage>,
    /// `true` where the day had no fixes and the channel is a zero fill.
    pub missing: Vec<bool>,
}

impl ImageStack {
    pub fn days(&self) -> usize {
        self.channels.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.channels.first().map_or((0, 0), |c| c.pixels.dim())
    }

    pub fn present_days(&self) -> usize {
        self.missing.iter().filter(|&&m| !m).count()
    }

    /// Normalized pixels as a `(days, rows, cols)` tensor.
    pub fn normalized(&self) -> Array3<f64> {
        let (rows, cols) = self.shape();
        let mut out = Array3::zeros((self.days(), rows, cols));
        for (k, ch) in self.channels.iter().enumerate() {
            out.index_axis_mut(ndarray::Axis(0), k)
                .assign(&normalize(ch));
        }
        out
    }
}

/// Places each image at the channel named by its `day_index`; absent days
/// become zero channels and are flagged in the mask.
pub fn stack(
    vehicle_id: impl Into<String>,
    images: Vec<TrajectoryImage>,
    days: usize,
    shape: (usize, usize),
) -> Result<ImageStack> {
    if images.len() > days {
        return Err(Error::Config(format!(
            "{} day images exceed the {days}-day stack",
            images.len()
        )));
    }
    let mut channels: Vec<TrajectoryImage> =
        (0..days).map(|k| TrajectoryImage::zeros(shape, k)).collect();
    let mut missing = vec![true; days];
    for img in images {
        let k = img.day_index;
        if k >= days {
            return Err(Error::Config(format!("day {k} outside the {days}-day stack")));
        }
        if !missing[k] {
            return Err(Error::Config(format!("two images for day {k}")));
        }
        if img.pixels.dim() != shape {
            return Err(Error::Shape(format!(
                "image {:?} does not match grid {shape:?}",
                img.pixels.dim()
            )));
        }
        missing[k] = false;
        channels[k] = img;
    }
    Ok(ImageStack {
        vehicle_id: vehicle_id.into(),
        channels,
        missing,
    })
}

/// Renders a trajectory into a stack covering local days
/// `first_day .. first_day + days`; fixes outside that window are ignored.
pub fn trajectory_stack(
    t: &Trajectory,
    cfg: &FeatureConfig,
    first_day: i64,
    days: usize,
    saturation_s: f64,
) -> Result<ImageStack> {
    let mut images = Vec::new();
    for seg in segment_days(t, cfg.offset) {
        let slot = seg.local_day - first_day;
        if slot < 0 || slot >= days as i64 {
            continue;
        }
        let stay = stay_time_grid(&seg, &cfg.grid, cfg.gap_cap_s);
        images.push(render_image(&stay, saturation_s, slot as usize)?);
    }
    stack(t.vehicle_id.clone(), images, days, cfg.grid.shape())
}

/// Writes the `TIMG` tensor file: magic, version, rows, cols, days, then
/// `days·rows·cols` little-endian f32 pixel values in row-major order.
/// Pixels are stored on the `[0, 255]` scale.
pub fn write_timg<W: Write>(writer: W, stack: &ImageStack) -> Result<()> {
    let (rows, cols) = stack.shape();
    let mut w = LeWriter::new(writer);
    w.bytes(TIMG_MAGIC)?;
    w.u32(TIMG_VERSION)?;
    w.u32(rows as u32)?;
    w.u32(cols as u32)?;
    w.u32(stack.days() as u32)?;
    for ch in &stack.channels {
        for &v in ch.pixels.iter() {
            w.f32(v as f32)?;
        }
    }
    w.finish()?;
    Ok(())
}

/// Reads a `TIMG` file. The format carries no mask, so all-zero channels are
/// reported as missing.
pub fn read_timg<R: Read>(reader: R, vehicle_id: impl Into<String>) -> Result<ImageStack> {
    let mut r = LeReader::new(reader);
    let bad = |why: &str| Error::format("<timg>", why.to_string());
    if &r.array::<4>()? != TIMG_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u32()?;
    if version != TIMG_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let days = r.u32()? as usize;
    if rows * cols * days > 1 << 26 {
        return Err(bad("tensor too large"));
    }
    let mut channels = Vec::with_capacity(days);
    let mut missing = Vec::with_capacity(days);
    for k in 0..days {
        let mut px = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            px.push(r.f32()? as f64);
        }
        missing.push(px.iter().all(|&v| v == 0.0));
        channels.push(TrajectoryImage {
            pixels: Array2::from_shape_vec((rows, cols), px).expect("length checked"),
            day_index: k,
        });
    }
    r.expect_eof().map_err(|_| bad("trailing bytes"))?;
    Ok(ImageStack {
        vehicle_id: vehicle_id.into(),
        channels,
        missing,
    })
}

/// Saves one day as an 8-bit grayscale PNG, rounding half to even.
pub fn export_png(img: &TrajectoryImage, path: &Path) -> Result<()> {
    let (rows, cols) = img.pixels.dim();
    let buf = image::GrayImage::from_fn(cols as u32, rows as u32, |x, y| {
        let v = img.pixels[(y as usize, x as usize)].clamp(0.0, 255.0);
        image::Luma([v.round_ties_even() as u8])
    });
    buf.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn render_examples() {
        let stay = Array2::from_shape_vec((1, 4), vec![0.0, 3600.0, 7200.0, 1800.0]).unwrap();
        let img = render_image(&stay, 3600.0, 0).unwrap();
        assert_eq!(img.pixels.as_slice().unwrap(), &[0.0, 255.0, 255.0, 127.5]);
        assert!(matches!(render_image(&stay, 0.0, 0), Err(Error::Config(_))));
        assert!(matches!(render_image(&stay, -5.0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn normalize_examples() {
        let img = TrajectoryImage {
            pixels: Array2::from_shape_vec((1, 3), vec![255.0, 0.0, 127.5]).unwrap(),
            day_index: 0,
        };
        assert_eq!(normalize(&img).as_slice().unwrap(), &[1.0, 0.0, 0.5]);
    }

    fn day(k: usize, v: f64) -> TrajectoryImage {
        TrajectoryImage {
            pixels: Array2::from_elem((4, 4), v),
            day_index: k,
        }
    }

    #[test]
    fn stack_fills_and_masks() {
        let full = stack("v", (0..7).map(|k| day(k, k as f64)).collect(), 7, (4, 4)).unwrap();
        assert_eq!(full.days(), 7);
        assert!(full.missing.iter().all(|m| !m));
        for (k, ch) in full.channels.iter().enumerate() {
            assert_eq!(ch.pixels[(0, 0)], k as f64);
        }

        let partial = stack("v", [0, 1, 3, 4, 6].map(|k| day(k, 9.0)).to_vec(), 7, (4, 4)).unwrap();
        assert_eq!(partial.missing, vec![false, false, true, false, false, true, false]);
        assert_eq!(partial.channels[2].pixels.sum(), 0.0);

        let empty = stack("v", vec![], 7, (4, 4)).unwrap();
        assert!(empty.missing.iter().all(|&m| m));
        assert_eq!(empty.present_days(), 0);

        assert!(matches!(
            stack("v", (0..8).map(|k| day(k % 7, 1.0)).collect(), 7, (4, 4)),
            Err(Error::Config(_))
        ));
        assert!(stack("v", vec![day(1, 1.0), day(1, 2.0)], 7, (4, 4)).is_err());
    }

    #[test]
    fn timg_round_trip() {
        let s = stack("v", vec![day(0, 127.5), day(2, 255.0)], 3, (4, 4)).unwrap();
        let mut buf = Vec::new();
        write_timg(&mut buf, &s).unwrap();
        assert_eq!(&buf[..4], b"TIMG");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(buf.len(), 20 + 3 * 16 * 4);
        let back = read_timg(buf.as_slice(), "v").unwrap();
        assert_eq!(back, s);

        buf[0] = b'X';
        assert!(read_timg(buf.as_slice(), "v").is_err());
    }

    #[test]
    fn png_export() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("day.png");
        export_png(&day(0, 127.5), &path).unwrap();
        let back = image::open(&path).unwrap().to_luma8();
        assert_eq!(back.dimensions(), (4, 4));
        assert_eq!(back.get_pixel(0, 0)[0], 128);
    }

    proptest! {
        #[test]
        fn render_is_monotone_and_saturates(a in 0.0f64..10_000.0, b in 0.0f64..10_000.0, t in 1.0f64..7200.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let img = render_image(&Array2::from_shape_vec((1, 2), vec![lo, hi]).unwrap(), t, 0).unwrap();
            prop_assert!(img.pixels[(0, 0)] <= img.pixels[(0, 1)]);
            for (&stay, &px) in [lo, hi].iter().zip(img.pixels.iter()) {
                prop_assert!((0.0..=255.0).contains(&px));
                prop_assert_eq!(px == 255.0, stay >= t);
            }
        }

        #[test]
        fn normalized_render_is_scale_free(s in 0.0f64..5000.0, t in 1.0f64..5000.0, c in 0.5f64..8.0) {
            let one = render_image(&Array2::from_elem((1, 1), s), t, 0).unwrap();
            let scaled = render_image(&Array2::from_elem((1, 1), s * c), t * c, 0).unwrap();
            prop_assert!((normalize(&one)[(0, 0)] - normalize(&scaled)[(0, 0)]).abs() < 1e-12);
        }
    }
}
