//! Symmetric decreasing rearrangement, majorization and the ASU test on
//! grid densities.
//!
//! On a grid of spacing `h` the ball `{|x| < m h}` holds the `2m - 1`
//! central cells, so the mass a rearranged density puts in that ball is `h`
//! times the sum of its `2m - 1` largest values. `xi` majorizes `pi` when
//! this concentration mass is at least that of `pi` for every radius,
//! i.e. `xi` is the more concentrated density.

use super::GridDensity;
use crate::Result;

fn sorted_descending(f: &GridDensity) -> Vec<f64> {
    let mut v = f.values().to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Cell values sorted in decreasing order and laid out from the centre
/// outwards at offsets `0, +h, -h, +2h, -2h, ...`.
pub fn symmetric_decreasing_rearrangement(f: &GridDensity) -> GridDensity {
    let sorted = sorted_descending(f);
    let c = f.center_index();
    let mut out = vec![0.0; f.n_points()];
    for (rank, v) in sorted.into_iter().enumerate() {
        let step = rank.div_ceil(2);
        let idx = if rank % 2 == 1 { c + step } else { c - step };
        out[idx] = v;
    }
    GridDensity::new(f.half_width(), out).expect("rearrangement of a valid density")
}

/// Mass of the rearranged density inside `{|x| < m h}` for `m = 1..=c+1`.
pub fn concentration_profile(f: &GridDensity) -> Vec<f64> {
    let sorted = sorted_descending(f);
    let h = f.h();
    let mut out = Vec::with_capacity(f.center_index() + 1);
    let mut acc = 0.0;
    for (rank, v) in sorted.iter().enumerate() {
        acc += v;
        if rank % 2 == 0 {
            out.push(acc * h);
        }
    }
    out
}

/// `xi` majorizes `pi` with tolerance `1e-9`.
pub fn majorizes(xi: &GridDensity, pi: &GridDensity) -> Result<bool> {
    majorizes_within(xi, pi, 1e-9)
}

/// For every grid radius, the central mass of the rearranged `xi` is at
/// least that of the rearranged `pi` minus `tol`.
pub fn majorizes_within(xi: &GridDensity, pi: &GridDensity, tol: f64) -> Result<bool> {
    xi.same_grid(pi)?;
    let a = concentration_profile(xi);
    let b = concentration_profile(pi);
    Ok(a.iter().zip(&b).all(|(x, p)| *x >= *p - tol))
}

/// Symmetric about `center` and nonincreasing away from it, both up to `tol`.
/// Points beyond the grid count as zero.
///
/// # Panics
///
/// If `center` is not a grid point.
pub fn is_asu(f: &GridDensity, center: f64, tol: f64) -> bool {
    let h = f.h();
    let offset = center / h;
    let j0 = offset.round();
    assert!((offset - j0).abs() < 1e-9, "ASU centre {center} is not a grid point");
    let j0 = j0 as isize;
    let reach = f.n_points() as isize;
    let mut prev_right = f.value_at_offset(j0);
    let mut prev_left = prev_right;
    for x in 1..=reach {
        let right = f.value_at_offset(j0 + x);
        let left = f.value_at_offset(j0 - x);
        if (right - left).abs() > tol || right > prev_right + tol || left > prev_left + tol {
            return false;
        }
        prev_right = right;
        prev_left = left;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::expected_distortion_grid;
    use crate::Error;
    use crate::models::{DistortionFn, NoiseSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(half: f64, n: usize, w: f64) -> GridDensity {
        GridDensity::from_fn(half, n, |e| if e.abs() <= w + 1e-12 { 1.0 } else { 0.0 }).unwrap().normalized().unwrap()
    }

    fn random_density(rng: &mut ChaCha8Rng, half: f64, n: usize) -> GridDensity {
        GridDensity::new(half, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap().normalized().unwrap()
    }

    #[test]
    fn asu_input_is_fixed_point() {
        let g = GridDensity::from_noise(5.0, 101, &NoiseSpec::gaussian(1.0)).unwrap();
        let r = symmetric_decreasing_rearrangement(&g);
        for (a, b) in r.values().iter().zip(g.values()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn shifted_dirac_moves_to_centre() {
        let mut v = vec![0.0; 21];
        v[15] = 10.0;
        let g = GridDensity::new(1.0, v).unwrap();
        let r = symmetric_decreasing_rearrangement(&g);
        assert_eq!(r.values()[10], 10.0);
        assert_eq!(r.values().iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn random_density_matches_sort_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let g = random_density(&mut rng, 2.0, 41);
            let r = symmetric_decreasing_rearrangement(&g);
            // independent construction: walk outward, right before left
            let mut sorted = g.values().to_vec();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let mut expect = vec![0.0; 41];
            let mut it = sorted.into_iter();
            expect[20] = it.next().unwrap();
            for step in 1..=20 {
                expect[20 + step] = it.next().unwrap();
                expect[20 - step] = it.next().unwrap();
            }
            assert_eq!(r.values(), &expect[..]);
            let mut a = r.values().to_vec();
            let mut b = g.values().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b);
            assert_eq!(symmetric_decreasing_rearrangement(&r), r);
        }
    }

    #[test]
    fn majorization_examples() {
        let n = 201;
        let delta = GridDensity::dirac(4.0, n).unwrap();
        let wide = uniform(4.0, n, 3.0);
        assert!(majorizes(&wide, &wide).unwrap());
        assert!(majorizes(&delta, &wide).unwrap());
        assert!(!majorizes(&wide, &delta).unwrap());
        let narrow = uniform(4.0, n, 1.0);
        let broad = uniform(4.0, n, 2.0);
        assert!(majorizes(&narrow, &broad).unwrap());
        assert!(!majorizes(&broad, &narrow).unwrap());
    }

    #[test]
    fn majorization_grid_mismatch() {
        let a = GridDensity::dirac(4.0, 201).unwrap();
        let b = GridDensity::dirac(4.0, 101).unwrap();
        assert!(matches!(majorizes(&a, &b), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn asu_checks() {
        let g = GridDensity::from_noise(5.0, 101, &NoiseSpec::gaussian(1.0)).unwrap();
        assert!(is_asu(&g, 0.0, 1e-12));
        let mut shifted = vec![0.0; 101];
        shifted[1..].copy_from_slice(&g.values()[..100]);
        let s = GridDensity::new(5.0, shifted).unwrap();
        assert!(!is_asu(&s, 0.0, 1e-12));
        assert!(is_asu(&s, s.h(), 1e-5));
    }

    #[test]
    fn asu_minimiser_is_centre() {
        let g = GridDensity::from_noise(15.0, 301, &NoiseSpec::laplace(0.7)).unwrap();
        for d in [DistortionFn::Squared, DistortionFn::Absolute, DistortionFn::EvenPower { p: 4.0 }] {
            assert_eq!(expected_distortion_grid(&g, &d).1, 0.0);
        }
    }
}
