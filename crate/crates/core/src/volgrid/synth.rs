use super::{BrainVolume, GridSpec, PeakCoordinate, VolumeError};

pub const DEFAULT_FWHM_MM: f64 = 9.0;

/// Standard deviation of a Gaussian with the given full width at half maximum.
pub fn fwhm_to_sigma(fwhm_mm: f64) -> f64 {
    fwhm_mm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

/// Unnormalized isotropic kernel, 1.0 at the centre.
#[inline]
pub fn gaussian_kernel(distance_mm: f64, fwhm_mm: f64) -> f64 {
    let sigma = fwhm_to_sigma(fwhm_mm);
    (-distance_mm * distance_mm / (2.0 * sigma * sigma)).exp()
}

/// Places a Gaussian sphere at every peak, sums them and rescales to a maximum
/// of exactly 1.0. Peaks outside the grid still contribute their tails.
pub fn synthesize_target(
    grid: &GridSpec,
    coords: &[PeakCoordinate],
    fwhm_mm: f64,
) -> Result<BrainVolume, VolumeError> {
    grid.validate()?;
    if !(fwhm_mm.is_finite() && fwhm_mm > 0.0) {
        return Err(VolumeError::InvalidArgument(format!(
            "fwhm must be positive, got {fwhm_mm}"
        )));
    }
    if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
        return Err(VolumeError::InvalidArgument(format!(
            "non-finite peak coordinate {:?}",
            bad.as_array()
        )));
    }
    let sigma = fwhm_to_sigma(fwhm_mm);
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let [nx, ny, nz] = grid.dims;

    // Separable per-axis factors: exp(-(dx²+dy²+dz²)/2σ²) = ex·ey·ez.
    let axis_factors = |c: f64, axis: usize, n: usize| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let d = grid.origin_mm[axis] + i as f64 * grid.voxel_size_mm[axis] - c;
                (-d * d * inv_two_var).exp()
            })
            .collect::<Vec<_>>()
    };

    let mut raw = vec![0.0f64; grid.voxel_count()];
    for c in coords {
        let ex = axis_factors(c.x_mm, 0, nx);
        let ey = axis_factors(c.y_mm, 1, ny);
        let ez = axis_factors(c.z_mm, 2, nz);
        for (z, &fz) in ez.iter().enumerate() {
            if fz == 0.0 {
                continue;
            }
            for (y, &fy) in ey.iter().enumerate() {
                let fyz = fy * fz;
                if fyz == 0.0 {
                    continue;
                }
                let row = &mut raw[nx * (y + ny * z)..nx * (y + ny * z + 1)];
                for (r, &fx) in row.iter_mut().zip(&ex) {
                    *r += fx * fyz;
                }
            }
        }
    }

    let max = raw.iter().copied().fold(0.0f64, f64::max);
    let data = if max > 0.0 {
        raw.iter().map(|&v| (v / max) as f32).collect()
    } else {
        vec![0.0; raw.len()]
    };
    BrainVolume::from_data(*grid, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_grid() -> GridSpec {
        GridSpec::new([12, 10, 8], [3.0, 3.0, 3.0], [-15.0, -12.0, -9.0]).unwrap()
    }

    /// Direct per-voxel evaluation, no separability.
    fn brute_force(grid: &GridSpec, coords: &[PeakCoordinate], fwhm: f64) -> Vec<f64> {
        let [nx, ny, nz] = grid.dims;
        let mut out = vec![0.0; grid.voxel_count()];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let p = grid.voxel_center_mm(x, y, z);
                    out[grid.linear_index(x, y, z)] = coords
                        .iter()
                        .map(|c| {
                            let c = c.as_array();
                            let d2: f64 = (0..3).map(|a| (p[a] - c[a]).powi(2)).sum();
                            gaussian_kernel(d2.sqrt(), fwhm)
                        })
                        .sum();
                }
            }
        }
        let m = out.iter().copied().fold(0.0, f64::max);
        out.iter().map(|v| v / m).collect()
    }

    #[test]
    fn kernel_half_maximum_at_half_fwhm() {
        for fwhm in [9.0, 4.0, 12.5] {
            let v = gaussian_kernel(fwhm / 2.0, fwhm);
            assert!((v - 0.5).abs() < 1e-9, "fwhm {fwhm}: {v}");
        }
        assert_eq!(gaussian_kernel(0.0, 9.0), 1.0);
    }

    #[test]
    fn sigma_for_nine_mm() {
        assert!((fwhm_to_sigma(9.0) - 3.821_948_101_296).abs() < 1e-9);
    }

    #[test]
    fn empty_coordinates_give_zero_volume() {
        let v = synthesize_target(&GridSpec::default(), &[], 9.0).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn peak_on_voxel_centre_is_one() {
        let g = GridSpec::default();
        let c = PeakCoordinate::new(2.0, -18.0, 8.0);
        let idx = g.world_to_voxel(c).unwrap();
        assert_eq!(idx, [20.0, 23.0, 20.0]);
        let v = synthesize_target(&g, &[c], 9.0).unwrap();
        assert_eq!(v.get(20, 23, 20), 1.0);
        assert_eq!(v.max(), 1.0);
        assert!(v.min() >= 0.0);
    }

    #[test]
    fn distant_peaks_are_independent() {
        let g = GridSpec::default();
        let a = PeakCoordinate::new(-50.0, -18.0, 8.0);
        let b = PeakCoordinate::new(50.0, -18.0, 8.0);
        let v = synthesize_target(&g, &[a, b], 9.0).unwrap();
        // overlap at 100 mm: exp(-100²/(2σ²)) underflows far below 1e-6
        assert!(gaussian_kernel(100.0, 9.0) < 1e-100);
        let ia = g.world_to_voxel(a).unwrap();
        let ib = g.world_to_voxel(b).unwrap();
        let pa = v.get(ia[0] as usize, ia[1] as usize, ia[2] as usize);
        let pb = v.get(ib[0] as usize, ib[1] as usize, ib[2] as usize);
        assert!((pa - 1.0).abs() < 1e-6 && (pb - 1.0).abs() < 1e-6, "{pa} {pb}");
    }

    #[test]
    fn out_of_grid_peak_contributes_tail() {
        let g = small_grid();
        // 6 mm left of the first voxel centre
        let v = synthesize_target(&g, &[PeakCoordinate::new(-21.0, 0.0, 0.0)], 9.0).unwrap();
        assert_eq!(v.max(), 1.0);
        assert!(v.data().iter().any(|&x| x > 0.0));
    }

    #[test]
    fn matches_brute_force() {
        let g = small_grid();
        let coords = [
            PeakCoordinate::new(1.3, -2.2, 0.4),
            PeakCoordinate::new(-7.0, 5.5, -3.0),
            PeakCoordinate::new(30.0, 0.0, 0.0),
        ];
        let fast = synthesize_target(&g, &coords, 9.0).unwrap();
        let slow = brute_force(&g, &coords, 9.0);
        for (a, b) in fast.data().iter().zip(&slow) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_fwhm() {
        let g = small_grid();
        assert!(synthesize_target(&g, &[], 0.0).is_err());
        assert!(synthesize_target(&g, &[], -1.0).is_err());
        assert!(synthesize_target(&g, &[], f64::NAN).is_err());
    }

    fn coord_strategy() -> impl Strategy<Value = PeakCoordinate> {
        (-20.0..20.0f64, -20.0..20.0f64, -20.0..20.0f64)
            .prop_map(|(x, y, z)| PeakCoordinate::new(x, y, z))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn nonempty_input_has_unit_max(coords in prop::collection::vec(coord_strategy(), 1..5)) {
            let v = synthesize_target(&small_grid(), &coords, 9.0).unwrap();
            prop_assert_eq!(v.max(), 1.0);
            prop_assert!(v.min() >= 0.0);
        }

        #[test]
        fn permuting_axes_permutes_volume(coords in prop::collection::vec(coord_strategy(), 1..4)) {
            // cube grid so a z<->x swap maps the grid onto itself
            let g = GridSpec::new([7, 7, 7], [3.0; 3], [-9.0; 3]).unwrap();
            let swapped: Vec<_> = coords
                .iter()
                .map(|c| PeakCoordinate::new(c.z_mm, c.y_mm, c.x_mm))
                .collect();
            let a = synthesize_target(&g, &coords, 9.0).unwrap();
            let b = synthesize_target(&g, &swapped, 9.0).unwrap();
            for z in 0..7 {
                for y in 0..7 {
                    for x in 0..7 {
                        prop_assert!((a.get(x, y, z) - b.get(z, y, x)).abs() <= 1e-6);
                    }
                }
            }
        }

        #[test]
        fn shift_by_one_voxel_shifts_volume(coords in prop::collection::vec(coord_strategy(), 1..4)) {
            let g = small_grid();
            let shifted: Vec<_> = coords
                .iter()
                .map(|c| PeakCoordinate::new(c.x_mm + g.voxel_size_mm[0], c.y_mm, c.z_mm))
                .collect();
            let a = synthesize_target(&g, &coords, 9.0).unwrap();
            let b = synthesize_target(&g, &shifted, 9.0).unwrap();
            // normalization differs when the max moves across the boundary; compare shape
            let [nx, ny, nz] = g.dims;
            let mut ratio = None;
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx - 1 {
                        let va = a.get(x, y, z) as f64;
                        let vb = b.get(x + 1, y, z) as f64;
                        if va > 1e-3 {
                            let r = vb / va;
                            match ratio {
                                None => ratio = Some(r),
                                Some(r0) => prop_assert!((r - r0).abs() < 1e-4 * r0.max(1.0)),
                            }
                        }
                    }
                }
            }
        }
    }
}
