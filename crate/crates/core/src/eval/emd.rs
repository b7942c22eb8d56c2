//! One-dimensional earth mover's (1-Wasserstein) distance.

use crate::error::{Error, Result};

fn check(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::contract(format!("{name} is empty")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain(format!("{name} has non-finite values")));
    }
    Ok(())
}

/// Distance between two weighted point sets on the line, computed as the
/// integral of `|F_a - F_b|` over the merged support. Weights are normalized
/// to unit mass per side.
pub fn emd_weighted(pos_a: &[f64], w_a: &[f64], pos_b: &[f64], w_b: &[f64]) -> Result<f64> {
    check("first sample", pos_a)?;
    check("second sample", pos_b)?;
    if pos_a.len() != w_a.len() || pos_b.len() != w_b.len() {
        return Err(Error::contract("one weight per position required"));
    }
    let (ma, mb): (f64, f64) = (w_a.iter().sum(), w_b.iter().sum());
    if w_a.iter().chain(w_b).any(|w| !(*w >= 0.0)) || !(ma > 0.0) || !(mb > 0.0) {
        return Err(Error::domain("weights must be non-negative with positive total"));
    }
    // (position, signed mass): a adds to F_a - F_b, b subtracts.
    let mut ev: Vec<(f64, f64)> = pos_a
        .iter()
        .zip(w_a)
        .map(|(&p, &w)| (p, w / ma))
        .chain(pos_b.iter().zip(w_b).map(|(&p, &w)| (p, -w / mb)))
        .collect();
    ev.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut diff = 0.0;
    let mut total = 0.0;
    for k in 0..ev.len() - 1 {
        diff += ev[k].1;
        let gap = ev[k + 1].0 - ev[k].0;
        if gap > 0.0 {
            total += diff.abs() * gap;
        }
    }
    Ok(total)
}

/// Distance between the empirical distributions of two samples.
pub fn emd_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    emd_weighted(a, &vec![1.0; a.len()], b, &vec![1.0; b.len()])
}

/// Distance between two histogram-like profiles over common bin centers,
/// each treated as a distribution along the axis.
pub fn profile_emd(centers: &[f64], a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != centers.len() || b.len() != centers.len() {
        return Err(Error::contract("profiles must share the bin centers"));
    }
    emd_weighted(centers, a, centers, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn sorted_pairing(a: &[f64], b: &[f64]) -> f64 {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
    }

    #[test]
    fn fixtures() {
        assert_eq!(emd_1d(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(emd_1d(&[0.0], &[3.0]).unwrap(), 3.0);
        assert_eq!(emd_1d(&[0.0, 1.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!(emd_1d(&[], &[1.0]).is_err());
        assert!(emd_1d(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn equal_sizes_match_sorted_pairing() {
        let mut r = rng::seeded(1);
        for _ in 0..200 {
            let n = r.random_range(1..30);
            let a: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..8.0)).collect();
            let want = sorted_pairing(&a, &b);
            assert!((emd_1d(&a, &b).unwrap() - want).abs() < 1e-12 * want.max(1.0));
        }
    }

    #[test]
    fn unequal_sizes_match_replicated_pairing() {
        // Replicating each sample to a common size leaves the distribution unchanged.
        let a = [0.0, 1.0, 5.0];
        let b = [2.0, 3.0];
        let ra: Vec<f64> = a.iter().flat_map(|&x| [x, x]).collect();
        let rb: Vec<f64> = b.iter().flat_map(|&x| [x, x, x]).collect();
        assert!((emd_1d(&a, &b).unwrap() - sorted_pairing(&ra, &rb)).abs() < 1e-12);
    }

    #[test]
    fn profile_distance() {
        let c = [0.5, 1.5, 2.5];
        assert_eq!(profile_emd(&c, &[1.0, 0.0, 0.0], &[0.0, 0.0, 2.0]).unwrap(), 2.0);
        assert_eq!(profile_emd(&c, &[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 0.0);
        assert!(profile_emd(&c, &[0.0; 3], &[1.0; 3]).is_err());
    }
}
