//! PNG rendering of one slice or a maximum intensity projection, with
//! instance boundaries drawn in a fixed per-id colour.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use image::{Rgb, RgbImage};

use voxtrack_core::io;
use voxtrack_core::{InstanceLabeling, VoxelGrid};

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    img: PathBuf,
    /// Ground-truth labeling to overlay.
    #[arg(long, conflicts_with = "pred")]
    lbl: Option<PathBuf>,
    /// Predicted labeling to overlay.
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    t: usize,
    #[arg(long, required_unless_present = "mip", conflicts_with = "mip")]
    z: Option<usize>,
    /// Project the maximum over z instead of showing one slice.
    #[arg(long)]
    mip: bool,
    #[arg(long)]
    out: PathBuf,
}

/// Colour of instance `id`, bright enough to stand out on grey.
pub fn palette(id: u32) -> [u8; 3] {
    // splitmix64 finalizer
    let mut z = (id as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    [0, 1, 2].map(|k| 96 + ((z >> (8 * k)) as u8 % 160))
}

/// Intensities and ids of the requested plane, row-major `y·x`.
fn plane(
    grid: &VoxelGrid,
    labels: Option<&InstanceLabeling>,
    t: usize,
    z: Option<usize>,
) -> (Vec<f32>, Vec<u32>) {
    let d = grid.dims();
    let n = d.slice_len();
    match z {
        Some(z) => (
            grid.slice(t, z).to_vec(),
            labels.map_or_else(|| vec![0; n], |l| l.slice(t, z).to_vec()),
        ),
        None => {
            let mut values = vec![0.0f32; n];
            let mut ids = vec![0u32; n];
            for z in 0..d.z {
                for (v, s) in values.iter_mut().zip(grid.slice(t, z)) {
                    *v = v.max(*s);
                }
                if let Some(l) = labels {
                    for (id, s) in ids.iter_mut().zip(l.slice(t, z)) {
                        if *id == 0 {
                            *id = *s;
                        }
                    }
                }
            }
            (values, ids)
        }
    }
}

pub fn draw(values: &[f32], ids: &[u32], height: usize, width: usize) -> RgbImage {
    let at = |y: usize, x: usize| ids[y * width + x];
    RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let id = at(y, x);
        let boundary = id != 0
            && (y == 0
                || x == 0
                || y + 1 == height
                || x + 1 == width
                || at(y - 1, x) != id
                || at(y + 1, x) != id
                || at(y, x - 1) != id
                || at(y, x + 1) != id);
        if boundary {
            Rgb(palette(id))
        } else {
            let g = (values[y * width + x].clamp(0.0, 1.0) * 255.0).round() as u8;
            Rgb([g, g, g])
        }
    })
}

pub fn run(args: &RenderArgs) -> Result<()> {
    let grid = io::read_volume(&args.img)?;
    let d = grid.dims();
    if args.t >= d.t {
        bail!("frame {} out of range for {} frames", args.t, d.t);
    }
    if let Some(z) = args.z.filter(|z| *z >= d.z) {
        bail!("slice {z} out of range for {} slices", d.z);
    }
    let labels = match args.lbl.as_ref().or(args.pred.as_ref()) {
        Some(p) => {
            let l = io::read_labeling(p)?;
            if l.dims() != d {
                bail!("labeling {} does not match image {d}", l.dims());
            }
            Some(l)
        }
        None => None,
    };
    let z = if args.mip { None } else { args.z };
    let (values, ids) = plane(&grid, labels.as_ref(), args.t, z);
    draw(&values, &ids, d.y, d.x)
        .save_with_format(&args.out, image::ImageFormat::Png)
        .with_context(|| format!("writing {}", args.out.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use voxtrack_core::Dims;

    #[test]
    fn palette_is_bright_and_stable() {
        for id in 1..200 {
            let c = palette(id);
            assert!(c.iter().all(|v| *v >= 96));
            assert_eq!(c, palette(id));
        }
        assert_ne!(palette(1), palette(2));
    }

    #[test]
    fn mip_takes_max_and_first_label() {
        let dims = Dims::new(1, 3, 1, 2).unwrap();
        let grid = VoxelGrid::new(dims, vec![0.1, 0.0, 0.9, 0.2, 0.3, 0.4]).unwrap();
        let lab = InstanceLabeling::new(dims, vec![0, 0, 5, 0, 7, 8]).unwrap();
        let (v, ids) = plane(&grid, Some(&lab), 0, None);
        assert_eq!(v, vec![0.9, 0.4]);
        assert_eq!(ids, vec![5, 8]);
    }

    #[test]
    fn interior_pixels_stay_grey() {
        let ids = vec![1; 9];
        let img = draw(&[0.5; 9], &ids, 3, 3);
        assert_eq!(img.get_pixel(1, 1), &Rgb([128, 128, 128]));
        assert_eq!(img.get_pixel(0, 0), &Rgb(palette(1)));
    }
}
