use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use brainmap::volgrid::BrainVolume;
use clap::ValueEnum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// One binary PGM (P5, 8-bit) per slice along `axis`, intensities min-max
/// scaled over the whole volume. Slices are written with the first in-plane
/// axis horizontal: z-slices are nx wide and ny tall.
pub fn render_slices(volume: &BrainVolume, axis: Axis, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let [nx, ny, nz] = volume.dims();
    let (lo, hi) = (volume.min(), volume.max());
    let range = hi - lo;
    let level = |v: f32| -> u8 {
        if range > 0.0 && range.is_finite() {
            (((v - lo) / range) * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    };
    let (count, w, h) = match axis {
        Axis::X => (nx, ny, nz),
        Axis::Y => (ny, nx, nz),
        Axis::Z => (nz, nx, ny),
    };
    let digits = count.saturating_sub(1).to_string().len().max(3);
    let mut paths = Vec::with_capacity(count);
    for s in 0..count {
        let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
        for r in 0..h {
            for c in 0..w {
                let (x, y, z) = match axis {
                    Axis::X => (s, c, r),
                    Axis::Y => (c, s, r),
                    Axis::Z => (c, r, s),
                };
                bytes.push(level(volume.get(x, y, z)));
            }
        }
        let path = out_dir.join(format!("slice_{s:0digits$}.pgm"));
        std::fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use brainmap::volgrid::{synthesize_target, GridSpec, PeakCoordinate};

    fn header(bytes: &[u8]) -> (usize, usize, usize) {
        let end = bytes.iter().enumerate().filter(|(_, &b)| b == b'\n').nth(2).unwrap().0;
        let text = std::str::from_utf8(&bytes[..end]).unwrap();
        let mut f = text.split_whitespace();
        assert_eq!(f.next(), Some("P5"));
        let w: usize = f.next().unwrap().parse().unwrap();
        let h: usize = f.next().unwrap().parse().unwrap();
        assert_eq!(f.next(), Some("255"));
        (w, h, format!("P5\n{w} {h}\n255\n").len())
    }

    #[test]
    fn z_axis_default_grid() {
        let dir = tempfile::tempdir().unwrap();
        let g = GridSpec::default();
        let v = synthesize_target(&g, &[PeakCoordinate::new(0.0, 0.0, 0.0)], 9.0).unwrap();
        let files = render_slices(&v, Axis::Z, dir.path()).unwrap();
        assert_eq!(files.len(), 40);
        assert!(files[0].ends_with("slice_000.pgm"));
        let mut peak = 0u8;
        for f in &files {
            let b = std::fs::read(f).unwrap();
            let (w, h, off) = header(&b);
            assert_eq!((w, h), (40, 48));
            assert_eq!(b.len(), off + 40 * 48);
            peak = peak.max(*b[off..].iter().max().unwrap());
        }
        assert_eq!(peak, 255);
    }

    #[test]
    fn zero_volume_is_black() {
        let dir = tempfile::tempdir().unwrap();
        let g = GridSpec::new([3, 4, 5], [4.0; 3], [0.0; 3]).unwrap();
        let v = BrainVolume::zeros(g);
        for (axis, n, wh) in [(Axis::X, 3, (4, 5)), (Axis::Y, 4, (3, 5)), (Axis::Z, 5, (3, 4))] {
            let files = render_slices(&v, axis, &dir.path().join(format!("{axis:?}"))).unwrap();
            assert_eq!(files.len(), n);
            for f in files {
                let b = std::fs::read(f).unwrap();
                let (w, h, off) = header(&b);
                assert_eq!((w, h), wh);
                assert!(b[off..].iter().all(|&p| p == 0));
            }
        }
    }

    #[test]
    fn pixel_layout_follows_axes() {
        let dir = tempfile::tempdir().unwrap();
        let g = GridSpec::new([3, 2, 2], [4.0; 3], [0.0; 3]).unwrap();
        let mut v = BrainVolume::zeros(g);
        let i = g.linear_index(2, 1, 0);
        v.data_mut()[i] = 1.0;
        let files = render_slices(&v, Axis::Z, dir.path()).unwrap();
        let b = std::fs::read(&files[0]).unwrap();
        let (_, _, off) = header(&b);
        assert_eq!(&b[off..], &[0, 0, 0, 0, 0, 255]);
    }
}
